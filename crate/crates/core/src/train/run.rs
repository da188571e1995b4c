use std::time::Instant;

use super::estimate::{offline_critic_delta_batch, offline_policy_gradient_batch, online_deltas, NextValue};
use super::optim::{clip_norm, Stepper};
use super::rollout::{
    check_measures, fold_measures, initial_measures, node_means, rollout_batch, sample_action, with_context,
    StepRecord,
};
use super::{EpisodeRecord, EpisodeSettings, MeasureMode, TrainAbort, TrainConfig, TrainReport, TRAIN_STREAM};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::param::{policy_variance, Actor, Critic};
use crate::rng::{Rng, RngStream};

/// Mutable training state shared by both trainers.
struct Session<'a> {
    cfg: &'a TrainConfig,
    actor: &'a mut dyn Actor,
    critic: &'a mut dyn Critic,
    critic_step: Stepper,
    actor_step: Stepper,
    measures: Vec<EmpiricalMeasure>,
    stream: RngStream,
    next_episode_stream: u64,
    records: Vec<EpisodeRecord>,
    started: Instant,
}

/// Non-finite state: stop, keeping the last finite parameters.
struct Abort(String);

impl<'a> Session<'a> {
    fn new(env: &dyn Environment, actor: &'a mut dyn Actor, critic: &'a mut dyn Critic, cfg: &'a TrainConfig) -> Result<Self> {
        cfg.check_against(env, &*actor, &*critic)?;
        let measures = initial_measures(env.grid(), &cfg.initial_measure);
        check_measures(env, &measures)?;
        Ok(Self {
            cfg,
            critic_step: Stepper::new(cfg.optimizer, critic.params().len()),
            actor_step: Stepper::new(cfg.optimizer, actor.params().len()),
            actor,
            critic,
            measures,
            stream: RngStream::new(cfg.seed, TRAIN_STREAM),
            next_episode_stream: 0,
            records: Vec::new(),
            started: Instant::now(),
        })
    }

    fn rngs(&mut self, batch: usize) -> Vec<Rng> {
        let first = self.next_episode_stream;
        self.next_episode_stream += batch as u64;
        (first..first + batch as u64).map(|i| self.stream.child(i).rng()).collect()
    }

    /// Clips, applies and projects both updates; rolls back on non-finite results.
    fn update(&mut self, s: &EpisodeSettings, mut d_eta: Vec<f64>, mut g_theta: Vec<f64>) -> std::result::Result<(), Abort> {
        if d_eta.iter().chain(&g_theta).any(|v| !v.is_finite()) {
            return Err(Abort("non-finite update direction".into()));
        }
        if let Some(c) = self.cfg.clip_critic {
            clip_norm(&mut d_eta, c);
        }
        if let Some(c) = self.cfg.clip_actor {
            clip_norm(&mut g_theta, c);
        }
        let eta = self.critic.params().to_vec();
        let theta = self.actor.params().to_vec();
        let steppers = (self.critic_step.clone(), self.actor_step.clone());
        self.critic_step.apply(self.critic.params_mut(), &s.rho_e, &d_eta, 1.0);
        self.critic.project();
        self.actor_step.apply(self.actor.params_mut(), &s.rho_g, &g_theta, -1.0);
        self.actor.project();
        if self.critic.params().iter().chain(self.actor.params()).any(|v| !v.is_finite()) {
            self.critic.params_mut().copy_from_slice(&eta);
            self.actor.params_mut().copy_from_slice(&theta);
            (self.critic_step, self.actor_step) = steppers;
            return Err(Abort("non-finite parameters after update".into()));
        }
        Ok(())
    }

    fn record(&mut self, episode: u64, settings: EpisodeSettings, cost: f64, regularised_cost: f64) {
        if episode % self.cfg.record_every == 0 || episode == self.cfg.episodes {
            self.records.push(EpisodeRecord {
                episode,
                settings,
                cost,
                regularised_cost,
                eta: self.critic.params().to_vec(),
                theta: self.actor.params().to_vec(),
            });
        }
    }

    fn finish(self, abort: Option<TrainAbort>) -> TrainReport {
        TrainReport {
            records: self.records,
            final_eta: self.critic.params().to_vec(),
            final_theta: self.actor.params().to_vec(),
            measure_means: self.measures.iter().map(|m| m.mean().to_vec()).collect(),
            abort,
            elapsed: self.started.elapsed(),
        }
    }
}

fn numeric_or<T>(r: Result<T>) -> Result<std::result::Result<T, Abort>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e) if e.is_numeric() => Ok(Err(Abort(e.to_string()))),
        Err(e) => Err(e),
    }
}

/// Whole-episode actor-critic: roll out a minibatch with frozen parameters,
/// then `eta += rho_E Delta_eta` and `theta -= rho_G G_theta` once.
///
/// `actor` and `critic` are left at the final (or last finite) parameters.
pub fn train_offline(
    env: &dyn Environment,
    actor: &mut dyn Actor,
    critic: &mut dyn Critic,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut s = Session::new(env, actor, critic, cfg)?;
    let dt = env.grid().dt();
    for episode in 1..=cfg.episodes {
        let settings = EpisodeSettings::at(cfg, episode)?;
        let mut rngs = s.rngs(settings.batch);
        let traces = match numeric_or(rollout_batch(
            env,
            &*s.actor,
            &mut s.measures,
            cfg.measure_mode,
            settings.rho_s,
            settings.lambda,
            episode,
            &mut rngs,
        ))? {
            Ok(t) => t,
            Err(Abort(reason)) => return Ok(s.finish(Some(TrainAbort { episode, reason }))),
        };
        let d_eta = offline_critic_delta_batch(&traces, &*s.critic, cfg.beta, dt)?;
        let g_theta = offline_policy_gradient_batch(
            &traces,
            &*s.critic,
            &*s.actor,
            cfg.beta,
            dt,
            cfg.terminal_critic,
            cfg.control_matrix.as_ref(),
        )?;
        if let Err(Abort(reason)) = s.update(&settings, d_eta, g_theta) {
            return Ok(s.finish(Some(TrainAbort { episode, reason })));
        }
        let inv = 1.0 / traces.len() as f64;
        let cost = traces.iter().map(|t| t.cost(dt)).sum::<f64>() * inv;
        let reg = traces.iter().map(|t| t.regularised_cost(dt)).sum::<f64>() * inv;
        s.record(episode, settings, cost, reg);
    }
    Ok(s.finish(None))
}

/// Per-step actor-critic: after every step of the minibatch the temporal
/// differences drive `eta += rho_E Delta_eta` and `theta -= rho_G Delta_theta`.
///
/// Order within a step: node law update, action, environment step, deltas,
/// parameter updates. With one agent per episode the critic at the next node
/// sees that node's law before this episode's update, except at `T` where the
/// observed cost is used. A batch is its own law estimate, so the next node's
/// law is formed from the batch's next states before the deltas; a stale batch
/// mean would add `K (mean gap)^2` to every target.
pub fn train_online(
    env: &dyn Environment,
    actor: &mut dyn Actor,
    critic: &mut dyn Critic,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut s = Session::new(env, actor, critic, cfg)?;
    let grid = env.grid().clone();
    let (n, dt) = (grid.n_steps(), grid.dt());
    let control = cfg.control_matrix.as_ref();
    for episode in 1..=cfg.episodes {
        let settings = EpisodeSettings::at(cfg, episode)?;
        let lambda = settings.lambda;
        let mut rngs = s.rngs(settings.batch);
        let b = rngs.len();
        let mut xs: Vec<Vec<f64>> = rngs.iter_mut().map(|r| env.sample_initial(r)).collect();
        let mut visited: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n + 1);
        let mut means = node_means(&mut s.measures[0], &xs, cfg.measure_mode, settings.rho_s)?;
        let mut running = vec![(0.0, 0.0); b];
        for k in 0..n {
            let t = grid.t(k);
            let var = policy_variance(&*s.actor, lambda);
            let coeffs = s.actor.coefficients(t);
            let mut records = Vec::with_capacity(b);
            let mut next_x = Vec::with_capacity(b);
            for (j, (x, m)) in xs.iter().zip(&means).enumerate() {
                let (a, log_p) = sample_action(coeffs.mean(x, m), var, lambda, &mut rngs[j]);
                let step = match numeric_or(env.step(k, x, &a, m, &mut rngs[j]).map_err(with_context(episode, k)))? {
                    Ok(st) => st,
                    Err(Abort(reason)) => return Ok(s.finish(Some(TrainAbort { episode, reason }))),
                };
                let rec = StepRecord {
                    t,
                    x: x.clone(),
                    a,
                    f: step.running_cost,
                    mu_bar: m.clone(),
                    log_p,
                };
                running[j].0 += rec.f * dt;
                running[j].1 += rec.regularised_cost(lambda) * dt;
                records.push(rec);
                next_x.push(step.next_state);
            }
            let fresh = k + 1 == n || cfg.measure_mode == MeasureMode::BatchEmpirical;
            let next_means = if fresh {
                node_means(&mut s.measures[k + 1], &next_x, cfg.measure_mode, settings.rho_s)?
            } else {
                vec![s.measures[k + 1].mean().to_vec(); b]
            };
            let terminal: Option<Vec<f64>> = (k + 1 == n)
                .then(|| next_x.iter().zip(&next_means).map(|(x, m)| env.terminal_cost(x, m)).collect());
            let next: Vec<NextValue<'_>> = match &terminal {
                Some(g) => g.iter().map(|g| NextValue::Terminal(*g)).collect(),
                None => next_x
                    .iter()
                    .zip(&next_means)
                    .map(|(x, m)| NextValue::State {
                        t: grid.t(k + 1),
                        x,
                        mu_bar: m,
                    })
                    .collect(),
            };
            let refs: Vec<&StepRecord> = records.iter().collect();
            let deltas = online_deltas(&refs, &next, &*s.critic, &*s.actor, lambda, cfg.beta, dt, control)?;
            if let Err(Abort(reason)) = s.update(&settings, deltas.critic, deltas.actor) {
                return Ok(s.finish(Some(TrainAbort { episode, reason })));
            }
            if let Some(g) = &terminal {
                for (r, g) in running.iter_mut().zip(g) {
                    r.0 += g;
                    r.1 += g;
                }
            }
            visited.push(std::mem::replace(&mut xs, next_x));
            means = if fresh {
                next_means
            } else {
                node_means(&mut s.measures[k + 1], &xs, cfg.measure_mode, settings.rho_s)?
            };
        }
        if running.iter().any(|r| !r.0.is_finite()) {
            return Ok(s.finish(Some(TrainAbort {
                episode,
                reason: Error::NonFinite("episode cost".into()).to_string(),
            })));
        }
        if cfg.measure_mode == MeasureMode::PerEpisode {
            visited.push(xs);
            fold_measures(&mut s.measures, &visited, settings.rho_s)?;
        }
        let inv = 1.0 / b as f64;
        let cost = running.iter().map(|r| r.0).sum::<f64>() * inv;
        let reg = running.iter().map(|r| r.1).sum::<f64>() * inv;
        s.record(episode, settings, cost, reg);
    }
    Ok(s.finish(None))
}
