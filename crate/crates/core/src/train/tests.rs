use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::env::{InitialLaw, SystemicRisk, Trading};
use crate::grid::TimeGrid;
use crate::measure::EmpiricalMeasure;
use crate::param::{
    actor_grad_log_density, gaussian_log_density, h_theta, ActorCoefficients, CriticPoint, ExactTradingActor,
    ExactTradingCritic, LqShell, QuadraticActor, QuadraticCritic,
};
use crate::rng::{standard_normal, RngStream};

fn trading_env(n: usize, gamma: f64) -> Trading {
    Trading::new(
        3.0,
        2.0,
        gamma,
        TimeGrid::new(1.0, n).unwrap(),
        InitialLaw::Normal {
            mean: vec![1.0],
            std: vec![1.0],
        },
    )
    .unwrap()
}

fn c1() -> DMatrix<f64> {
    DMatrix::from_element(1, 1, 1.0)
}

/// Critic with one free value per grid node, `J(t_k, .) = params[k]`.
#[derive(Debug, Clone)]
struct NodeCritic {
    dt: f64,
    params: Vec<f64>,
}

impl NodeCritic {
    fn node(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }
}

impl Critic for NodeCritic {
    fn kind(&self) -> &'static str {
        "node"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    fn box_clone(&self) -> Box<dyn Critic> {
        Box::new(self.clone())
    }
    fn shell(&self, _t: f64, _lambda: f64) -> Option<LqShell> {
        None
    }
    fn value(&self, t: f64, _x: &[f64], _mu_bar: &[f64], _lambda: f64) -> f64 {
        self.params[self.node(t)]
    }
    fn accumulate_grad(&self, t: f64, _lambda: f64, points: &[CriticPoint<'_>], out: &mut [f64]) {
        out[self.node(t)] += points.iter().map(|p| p.weight).sum::<f64>();
    }
}

/// Actor whose parameter does not enter the policy.
#[derive(Debug, Clone)]
struct FrozenActor {
    params: Vec<f64>,
}

impl Actor for FrozenActor {
    fn kind(&self) -> &'static str {
        "frozen"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn params(&self) -> &[f64] {
        &self.params
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    fn box_clone(&self) -> Box<dyn Actor> {
        Box::new(self.clone())
    }
    fn variance_factor(&self) -> f64 {
        1.0
    }
    fn coefficients(&self, _t: f64) -> ActorCoefficients {
        ActorCoefficients {
            state_dim: 1,
            action_dim: 1,
            phi1: vec![-1.0],
            phi2: vec![1.0],
            phi3: vec![0.0],
        }
    }
    fn backprop(&self, _t: f64, _cot: &ActorCoefficients, _out: &mut [f64]) {}
}

fn random_trace(rng: &mut crate::rng::Rng, n: usize, dt: f64, lambda: f64) -> EpisodeTrace {
    let mut r = || rng.random_range(-1.5..1.5);
    let steps = (0..n)
        .map(|k| StepRecord {
            t: k as f64 * dt,
            x: vec![r(), r()],
            a: vec![r()],
            f: r(),
            mu_bar: vec![r(), r()],
            log_p: r(),
        })
        .collect();
    EpisodeTrace {
        lambda,
        steps,
        terminal_t: n as f64 * dt,
        terminal_x: vec![r(), r()],
        terminal_mu_bar: vec![r(), r()],
        g: r(),
    }
}

fn random_quadratic_critic(rng: &mut crate::rng::Rng) -> QuadraticCritic {
    let mut c = QuadraticCritic::new(2, 2, false, 1.0);
    for p in c.params_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    c
}

fn random_quadratic_actor(rng: &mut crate::rng::Rng) -> QuadraticActor {
    let mut a = QuadraticActor::new(2, 1, 2, 1.0, 0.5);
    for p in a.params_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    a
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

#[test]
fn deterministic_rollout_stays_at_the_mean() {
    let m0 = 0.3;
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let env = SystemicRisk::new(0.6, 0.4, 1.0, 1.0, 0.0, grid.clone(), InitialLaw::Dirac { point: vec![m0] }).unwrap();
    let actor = QuadraticActor::new(1, 1, 0, 1.0, 1.0);
    let mut measures = initial_measures(&grid, &[m0]);
    let mut rng = RngStream::new(1, 0).rng();
    let tr = rollout(&env, &actor, &mut measures, 0.2, 0.0, &mut rng).unwrap();
    assert_eq!(tr.len(), 50);
    for s in &tr.steps {
        assert_eq!((s.x[0], s.f, s.a[0], s.mu_bar[0]), (m0, 0.0, 0.0, m0));
    }
    assert_eq!((tr.terminal_x[0], tr.g), (m0, 0.0));
}

#[test]
fn trace_length_matches_grid() {
    for n in [1, 7, 30] {
        let env = trading_env(n, 1.0);
        let actor = ExactTradingActor::new([3.0, 2.0], 1.0);
        let mut measures = initial_measures(env.grid(), &[0.0]);
        let mut rngs: Vec<_> = (0..3).map(|i| RngStream::new(2, i).rng()).collect();
        for mode in [MeasureMode::PerEpisode, MeasureMode::BatchEmpirical] {
            let traces = rollout_batch(&env, &actor, &mut measures, mode, 0.5, 0.1, 1, &mut rngs).unwrap();
            assert!(traces.iter().all(|t| t.len() == n));
        }
    }
}

#[test]
fn rollout_updates_each_node_before_acting() {
    let env = trading_env(5, 1.0);
    let actor = ExactTradingActor::new([3.0, 2.0], 1.0);
    let mut measures = initial_measures(env.grid(), &[0.0]);
    let before: Vec<f64> = (0..6).map(|k| 0.1 * k as f64).collect();
    for (mu, m) in measures.iter_mut().zip(&before) {
        *mu = EmpiricalMeasure::dirac(&[*m]);
    }
    let rho = 0.25;
    let tr = rollout(&env, &actor, &mut measures, rho, 0.1, &mut RngStream::new(3, 0).rng()).unwrap();
    for k in 0..=5 {
        let (_, x, m) = tr.node(k);
        let expect = (1.0 - rho) * before[k] + rho * x[0];
        assert_eq!(m[0], expect);
        assert_eq!(measures[k].mean()[0], expect);
    }
}

#[test]
fn rollout_errors_carry_step_context() {
    let env = trading_env(5, 1.0);
    let mut actor = ExactTradingActor::new([3.0, 2.0], 1.0);
    actor.params_mut()[1] = f64::NAN;
    let mut measures = initial_measures(env.grid(), &[0.0]);
    let mut rngs = [RngStream::new(3, 0).rng()];
    let err = rollout_batch(&env, &actor, &mut measures, MeasureMode::PerEpisode, 0.2, 0.1, 9, &mut rngs).unwrap_err();
    assert!(err.is_numeric());
    assert!(matches!(err, Error::Rollout { episode: 9, step: 0, .. }), "{err}");
}

#[test]
fn critic_delta_vanishes_on_realised_returns() {
    let dt = 0.1;
    let mut rng = RngStream::new(4, 0).rng();
    let mut tr = random_trace(&mut rng, 10, dt, 0.3);
    for s in &mut tr.steps {
        s.x.truncate(1);
        s.mu_bar.truncate(1);
    }
    let beta = 0.5;
    // pin J(t_k) to the discounted regularised cost-to-go
    let mut params = vec![0.0; 11];
    let mut g = tr.g;
    for k in (0..10).rev() {
        g = tr.steps[k].regularised_cost(0.3) * dt + (-beta * dt).exp() * g;
        params[k] = g;
    }
    let critic = NodeCritic { dt, params };
    let delta = offline_critic_delta(&tr, &critic, beta, dt).unwrap();
    assert!(delta.iter().all(|d| d.abs() < 1e-15), "{delta:?}");
}

#[test]
fn critic_delta_single_step_by_hand() {
    let (dt, lambda) = (0.25, 0.2);
    let tr = EpisodeTrace {
        lambda,
        steps: vec![StepRecord {
            t: 0.0,
            x: vec![1.5],
            a: vec![0.3],
            f: 2.0,
            mu_bar: vec![0.5],
            log_p: -1.0,
        }],
        terminal_t: dt,
        terminal_x: vec![0.0],
        terminal_mu_bar: vec![0.0],
        g: 3.0,
    };
    // J = eta1 / (1 + eta1 tau) (x - mubar)^2 + R with tau = 1 at t = 0
    let critic = ExactTradingCritic::new([3.0, 1.0, 4.0], 1.0);
    let j0 = critic.value(0.0, &[1.5], &[0.5], lambda);
    let grad = critic.grad(0.0, &[1.5], &[0.5], lambda);
    let residual = 3.0 + (2.0 + lambda * -1.0) * dt - j0;
    let delta = offline_critic_delta(&tr, &critic, 0.0, dt).unwrap();
    for (d, g) in delta.iter().zip(&grad) {
        assert!((d - residual * g * dt).abs() < 1e-14);
    }
}

#[test]
fn critic_delta_matches_quadratic_double_loop() {
    let mut rng = RngStream::new(5, 0).rng();
    let (n, dt, beta, lambda) = (25, 0.04, 0.7, 0.05);
    for _ in 0..10 {
        let tr = random_trace(&mut rng, n, dt, lambda);
        let critic = random_quadratic_critic(&mut rng);
        let mut naive = vec![0.0; critic.params().len()];
        for k in 0..n {
            let s = &tr.steps[k];
            let mut target = (-beta * (n - k) as f64 * dt).exp() * tr.g;
            for l in k..n {
                target += (-beta * (l - k) as f64 * dt).exp() * tr.steps[l].regularised_cost(lambda) * dt;
            }
            let res = target - critic.value(s.t, &s.x, &s.mu_bar, lambda);
            for (o, g) in naive.iter_mut().zip(critic.grad(s.t, &s.x, &s.mu_bar, lambda)) {
                *o += res * g * dt;
            }
        }
        let fast = offline_critic_delta(&tr, &critic, beta, dt).unwrap();
        assert!(max_rel(&fast, &naive) < 1e-12);
    }
}

#[test]
fn policy_gradient_matches_direct_sum() {
    let mut rng = RngStream::new(6, 0).rng();
    let (n, dt, beta, lambda) = (20, 0.05, 0.4, 0.3);
    let c = DMatrix::from_column_slice(2, 1, &[1.0, -0.5]);
    for terminal in [TerminalCritic::Observed, TerminalCritic::Learned] {
        let tr = random_trace(&mut rng, n, dt, lambda);
        let critic = random_quadratic_critic(&mut rng);
        let actor = random_quadratic_actor(&mut rng);
        let mut direct = vec![0.0; actor.params().len()];
        for k in 0..n {
            let s = &tr.steps[k];
            let j0 = critic.value(s.t, &s.x, &s.mu_bar, lambda);
            let j1 = if k + 1 == n && terminal == TerminalCritic::Observed {
                tr.g
            } else {
                let (t, x, m) = tr.node(k + 1);
                critic.value(t, x, m, lambda)
            };
            let w = (-beta * s.t).exp() * (j1 - j0 + (s.regularised_cost(lambda) - beta * j0) * dt);
            let score = actor_grad_log_density(&actor, s.t, &s.x, &s.mu_bar, &s.a, lambda).unwrap();
            let h = h_theta(&actor, &critic, &c, s.t, &s.x, &s.mu_bar, lambda).unwrap();
            for ((o, sc), hv) in direct.iter_mut().zip(score).zip(h) {
                *o += w * sc + (-beta * s.t).exp() * hv * dt;
            }
        }
        let fast = offline_policy_gradient(&tr, &critic, &actor, beta, dt, terminal, Some(&c)).unwrap();
        assert!(max_rel(&fast, &direct) < 1e-11, "{fast:?} vs {direct:?}");
    }
}

#[test]
fn policy_gradient_vanishes_without_parameter_dependence() {
    let env = trading_env(20, 1.0);
    let actor = FrozenActor { params: vec![0.7] };
    let critic = ExactTradingCritic::new([3.0, 1.0, 4.0], 1.0);
    let mut measures = initial_measures(env.grid(), &[0.0]);
    let tr = rollout(&env, &actor, &mut measures, 0.2, 0.1, &mut RngStream::new(7, 0).rng()).unwrap();
    let g = offline_policy_gradient(&tr, &critic, &actor, 0.0, 0.05, TerminalCritic::Observed, Some(&c1())).unwrap();
    assert_eq!(g, vec![0.0]);
}

#[test]
fn minibatch_average_is_linear() {
    let mut rng = RngStream::new(8, 0).rng();
    let (n, dt, lambda) = (15, 0.1, 0.2);
    let traces: Vec<_> = (0..6).map(|_| random_trace(&mut rng, n, dt, lambda)).collect();
    let critic = random_quadratic_critic(&mut rng);
    let actor = random_quadratic_actor(&mut rng);
    let c = DMatrix::from_column_slice(2, 1, &[0.3, 1.0]);
    let batch_eta = offline_critic_delta_batch(&traces, &critic, 0.2, dt).unwrap();
    let batch_theta =
        offline_policy_gradient_batch(&traces, &critic, &actor, 0.2, dt, TerminalCritic::Observed, Some(&c)).unwrap();
    let mut eta = vec![0.0; batch_eta.len()];
    let mut theta = vec![0.0; batch_theta.len()];
    for tr in &traces {
        for (o, v) in eta.iter_mut().zip(offline_critic_delta(tr, &critic, 0.2, dt).unwrap()) {
            *o += v / 6.0;
        }
        let g = offline_policy_gradient(tr, &critic, &actor, 0.2, dt, TerminalCritic::Observed, Some(&c)).unwrap();
        for (o, v) in theta.iter_mut().zip(g) {
            *o += v / 6.0;
        }
    }
    assert!(max_rel(&batch_eta, &eta) < 1e-12);
    assert!(max_rel(&batch_theta, &theta) < 1e-12);
}

#[test]
fn regularised_cost_is_cost_plus_scaled_log_density() {
    let env = trading_env(10, 1.0);
    let actor = ExactTradingActor::new([2.0, 1.0], 1.0);
    let mut measures = initial_measures(env.grid(), &[0.0]);
    let lambda = 0.4;
    let tr = rollout(&env, &actor, &mut measures, 0.2, lambda, &mut RngStream::new(9, 0).rng()).unwrap();
    for s in &tr.steps {
        let mean = actor.coefficients(s.t).mean(&s.x, &s.mu_bar);
        let lp = gaussian_log_density(&mean, &s.a, 0.5 * lambda);
        assert_eq!(s.regularised_cost(lambda), s.f + lambda * lp);
    }
}

#[test]
fn regularised_cost_expectation_matches_entropy() {
    // frozen state: E[a^2 + 2Ha + lambda log p] by quadrature vs the entropy formula
    let (lambda, h) = (0.3f64, 2.0);
    let var = 0.5 * lambda;
    let mean = -1.2;
    let f = |a: f64| a * a + 2.0 * h * a;
    let sd = var.sqrt();
    let (lo, hi, m) = (mean - 12.0 * sd, mean + 12.0 * sd, 4000);
    let step = (hi - lo) / m as f64;
    let integrand = |a: f64| {
        let lp = gaussian_log_density(&[mean], &[a], var);
        lp.exp() * (f(a) + lambda * lp)
    };
    let mut quad = integrand(lo) + integrand(hi);
    for i in 1..m {
        quad += if i % 2 == 1 { 4.0 } else { 2.0 } * integrand(lo + i as f64 * step);
    }
    quad *= step / 3.0;
    let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln();
    let expect = f(mean) + var - lambda * entropy;
    assert!((quad - expect).abs() < 1e-10, "{quad} vs {expect}");
}

proptest! {
    #[test]
    fn clipping_keeps_direction(v in prop::collection::vec(-100.0f64..100.0, 1..8), cap in 0.01f64..50.0) {
        let mut c = v.clone();
        clip_norm(&mut c, cap);
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let (n0, n1) = (norm(&v), norm(&c));
        prop_assert!(n1 <= cap * (1.0 + 1e-12) || n1 == n0);
        if n0 > 0.0 {
            let cos = v.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / (n0 * n1);
            prop_assert!((cos - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn temporal_difference_uses_observed_terminal_cost() {
    let rec = StepRecord {
        t: 0.9,
        x: vec![1.0],
        a: vec![0.2],
        f: 1.5,
        mu_bar: vec![0.4],
        log_p: 0.3,
    };
    let (lambda, dt) = (0.1, 0.1);
    // K = 0 and R(tau) = c0 + c1 tau
    let mut a = QuadraticCritic::new(1, 1, true, 1.0);
    a.params_mut().copy_from_slice(&[0.0, 0.0, 1.0, 2.0]);
    let mut b = a.clone();
    // same value at t = 0.9 (tau = 0.1), different at T
    b.params_mut().copy_from_slice(&[0.0, 0.0, 1.5, -3.0]);
    assert!((a.value(0.9, &[1.0], &[0.4], lambda) - b.value(0.9, &[1.0], &[0.4], lambda)).abs() < 1e-15);
    assert_ne!(a.value(1.0, &[1.0], &[0.4], lambda), b.value(1.0, &[1.0], &[0.4], lambda));
    let g = 4.0;
    let da = temporal_difference(&rec, NextValue::Terminal(g), &a, lambda, 0.0, dt);
    let db = temporal_difference(&rec, NextValue::Terminal(g), &b, lambda, 0.0, dt);
    assert!((da - db).abs() < 1e-15);
    let actor = ExactTradingActor::new([3.0, 2.0], 1.0);
    let oa = online_deltas(&[&rec], &[NextValue::Terminal(g)], &a, &actor, lambda, 0.0, dt, None).unwrap();
    assert_eq!(oa.td, vec![da]);
}

#[test]
fn temporal_difference_by_hand() {
    let rec = StepRecord {
        t: 0.0,
        x: vec![1.5],
        a: vec![0.0],
        f: 2.0,
        mu_bar: vec![0.5],
        log_p: 0.0,
    };
    let critic = ExactTradingCritic::new([3.0, 1.0, 4.0], 1.0);
    let dt = 0.5;
    // J(0, 1.5, 0.5) = 3/4 + ln 4 - 4; J(0.5, 1.0, 0.5) = 3/2.5 * 0.25 + ln 2.5 - 2
    let j0 = 0.75 + 4f64.ln() - 4.0;
    let j1 = 1.2 * 0.25 + 2.5f64.ln() - 2.0;
    let next = NextValue::State {
        t: 0.5,
        x: &[1.0],
        mu_bar: &[0.5],
    };
    let td = temporal_difference(&rec, next, &critic, 0.0, 0.0, dt);
    assert!((td - (j1 - j0 + 2.0 * dt)).abs() < 1e-14);
}

/// Largest temporal difference along the noiseless mean path of the optimal
/// trading policy, using expected cost and log-density per step.
fn max_td_on_mean_path(n: usize) -> f64 {
    let (lambda, h, p) = (0.01, 2.0, 3.0);
    let dt = 1.0 / n as f64;
    let critic = ExactTradingCritic::new([p, 0.0, h * h], 1.0);
    let actor = ExactTradingActor::new([p, h], 1.0);
    let var = 0.5 * lambda;
    let (mut x, mut m) = (1.5, 1.0);
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let t = k as f64 * dt;
        let a = actor.coefficients(t).mean(&[x], &[m])[0];
        let rec = StepRecord {
            t,
            x: vec![x],
            a: vec![a],
            f: a * a + var + 2.0 * h * a,
            mu_bar: vec![m],
            log_p: -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln(),
        };
        let (x1, m1) = (x + a * dt, m - h * dt);
        let next = if k + 1 == n {
            NextValue::Terminal(p * (x1 - m1) * (x1 - m1))
        } else {
            NextValue::State {
                t: t + dt,
                x: &[x1],
                mu_bar: &[m1],
            }
        };
        worst = worst.max(temporal_difference(&rec, next, &critic, lambda, 0.0, dt).abs());
        (x, m) = (x1, m1);
    }
    worst
}

#[test]
fn temporal_difference_is_second_order_on_the_value() {
    // 1/K drops by exactly dt per Euler step here, so the residual is rounding only
    for n in [20, 50, 100] {
        let dt = 1.0 / n as f64;
        let worst = max_td_on_mean_path(n);
        assert!(worst <= dt * dt, "n = {n}: {worst}");
    }
}

#[test]
fn online_batch_deltas_average_members() {
    let mut rng = RngStream::new(10, 0).rng();
    let tr = random_trace(&mut rng, 8, 0.1, 0.2);
    let critic = random_quadratic_critic(&mut rng);
    let actor = random_quadratic_actor(&mut rng);
    let c = DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
    let recs: Vec<&StepRecord> = tr.steps[..4].iter().collect();
    let next: Vec<NextValue<'_>> = tr.steps[4..]
        .iter()
        .map(|s| NextValue::State {
            t: 0.1,
            x: &s.x,
            mu_bar: &s.mu_bar,
        })
        .collect();
    // all members share t = 0 here
    let recs: Vec<StepRecord> = recs.iter().map(|r| StepRecord { t: 0.0, ..(*r).clone() }).collect();
    let refs: Vec<&StepRecord> = recs.iter().collect();
    let batch = online_deltas(&refs, &next, &critic, &actor, 0.2, 0.3, 0.1, Some(&c)).unwrap();
    let mut eta = vec![0.0; critic.params().len()];
    let mut theta = vec![0.0; actor.params().len()];
    for (r, nv) in refs.iter().zip(&next) {
        let one = online_deltas(&[r], &[*nv], &critic, &actor, 0.2, 0.3, 0.1, Some(&c)).unwrap();
        assert!((one.td[0] - temporal_difference(r, *nv, &critic, 0.2, 0.3, 0.1)).abs() < 1e-13);
        for (o, v) in eta.iter_mut().zip(&one.critic) {
            *o += v / 4.0;
        }
        for (o, v) in theta.iter_mut().zip(&one.actor) {
            *o += v / 4.0;
        }
    }
    assert!(max_rel(&batch.critic, &eta) < 1e-12);
    assert!(max_rel(&batch.actor, &theta) < 1e-12);
}

fn trading_cfg(episodes: u64, rho_e: f64, rho_g: f64) -> TrainConfig {
    let mut cfg = TrainConfig::constant(episodes, 0.2, rho_e, rho_g, 0.1, 1);
    cfg.control_matrix = Some(c1());
    cfg.seed = 17;
    cfg
}

#[test]
fn zero_rates_leave_parameters_unchanged() {
    let env = trading_env(20, 1.0);
    let cfg = trading_cfg(30, 0.0, 0.0);
    for online in [false, true] {
        let mut actor = ExactTradingActor::new([2.0, 1.0], 1.0);
        let mut critic = ExactTradingCritic::new([1.0, 0.5, 2.0], 1.0);
        let report = if online {
            train_online(&env, &mut actor, &mut critic, &cfg)
        } else {
            train_offline(&env, &mut actor, &mut critic, &cfg)
        }
        .unwrap();
        assert_eq!(report.final_theta, vec![2.0, 1.0]);
        assert_eq!(report.final_eta, vec![1.0, 0.5, 2.0]);
        assert_eq!(report.records.len(), 30);
    }
}

#[test]
fn training_is_reproducible() {
    let env = trading_env(20, 1.0);
    let mut cfg = trading_cfg(40, 0.05, 0.005);
    cfg.minibatch = crate::schedule::Schedule::new(vec![
        crate::schedule::Breakpoint { from_episode: 1, value: 1 },
        crate::schedule::Breakpoint { from_episode: 20, value: 3 },
    ])
    .unwrap();
    for online in [false, true] {
        let run = || {
            let mut actor = ExactTradingActor::new([2.0, 1.0], 1.0);
            let mut critic = ExactTradingCritic::new([1.0, 0.5, 2.0], 1.0);
            if online {
                train_online(&env, &mut actor, &mut critic, &cfg).unwrap()
            } else {
                train_offline(&env, &mut actor, &mut critic, &cfg).unwrap()
            }
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_ne!(a.final_theta, vec![2.0, 1.0]);
    }
}

#[test]
fn online_run_matches_hand_stepped_reference() {
    let env = trading_env(10, 1.0);
    let mut cfg = trading_cfg(1, 0.05, 0.02);
    cfg.beta = 0.3;
    cfg.rho_s = crate::schedule::Schedule::constant(0.4);
    let lambda: f64 = 0.1;
    let mut actor = ExactTradingActor::new([2.0, 1.0], 1.0);
    let mut critic = ExactTradingCritic::new([1.0, 0.5, 2.0], 1.0);
    train_online(&env, &mut actor, &mut critic, &cfg).unwrap();

    // straight-line reimplementation
    let grid = env.grid().clone();
    let (n, dt, rho, beta) = (grid.n_steps(), grid.dt(), 0.4, 0.3);
    let mut ra = ExactTradingActor::new([2.0, 1.0], 1.0);
    let mut rc = ExactTradingCritic::new([1.0, 0.5, 2.0], 1.0);
    let mut rng = RngStream::new(17, TRAIN_STREAM).child(0).rng();
    let shared = vec![0.0; n + 1];
    let mut x = env.sample_initial(&mut rng)[0];
    let mut m = (1.0 - rho) * shared[0] + rho * x;
    for k in 0..n {
        let t = grid.t(k);
        let mean = ra.coefficients(t).mean(&[x], &[m])[0];
        let a = mean + (0.5 * lambda).sqrt() * standard_normal(&mut rng);
        let lp = gaussian_log_density(&[mean], &[a], 0.5 * lambda);
        let step = env.step(k, &[x], &[a], &[m], &mut rng).unwrap();
        let x1 = step.next_state[0];
        let v0 = rc.value(t, &[x], &[m], lambda);
        let (v1, m1) = if k + 1 == n {
            let m1 = (1.0 - rho) * shared[n] + rho * x1;
            (env.terminal_cost(&[x1], &[m1]), m1)
        } else {
            (rc.value(grid.t(k + 1), &[x1], &[shared[k + 1]], lambda), (1.0 - rho) * shared[k + 1] + rho * x1)
        };
        let td = v1 - v0 + (step.running_cost + lambda * lp - beta * v0) * dt;
        let ge = rc.grad(t, &[x], &[m], lambda);
        let score = actor_grad_log_density(&ra, t, &[x], &[m], &[a], lambda).unwrap();
        let h = h_theta(&ra, &rc, &c1(), t, &[x], &[m], lambda).unwrap();
        for (p, g) in rc.params_mut().iter_mut().zip(&ge) {
            *p += 0.05 * td * g;
        }
        rc.project();
        for ((p, s), hv) in ra.params_mut().iter_mut().zip(&score).zip(&h) {
            *p -= 0.02 * (td * s + hv * dt);
        }
        ra.project();
        (x, m) = (x1, m1);
    }
    assert!(max_rel(actor.params(), ra.params()) < 1e-12, "{:?} vs {:?}", actor.params(), ra.params());
    assert!(max_rel(critic.params(), rc.params()) < 1e-12, "{:?} vs {:?}", critic.params(), rc.params());
}

#[test]
fn divergence_aborts_with_last_finite_parameters() {
    let env = trading_env(20, 1.0);
    let cfg = trading_cfg(200, 1e200, 1e200);
    let mut actor = ExactTradingActor::new([2.0, 1.0], 1.0);
    let mut critic = ExactTradingCritic::new([1.0, 0.5, 2.0], 1.0);
    let report = train_offline(&env, &mut actor, &mut critic, &cfg).unwrap();
    let abort = report.abort.expect("expected an abort");
    assert!(abort.episode <= 200);
    assert!(report.final_eta.iter().chain(&report.final_theta).all(|v| v.is_finite()));
    assert_eq!(actor.params(), &report.final_theta[..]);
}

#[test]
fn config_validation() {
    let env = trading_env(20, 1.0);
    let actor = ExactTradingActor::new([2.0, 1.0], 1.0);
    let critic = ExactTradingCritic::new([1.0, 0.5, 2.0], 1.0);
    let ok = trading_cfg(5, 0.1, 0.1);
    assert!(ok.check_against(&env, &actor, &critic).is_ok());
    let mut c = ok.clone();
    c.episodes = 0;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.minibatch = crate::schedule::Schedule::constant(0);
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.clip_actor = Some(0.0);
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.rho_e = crate::schedule::Schedule::constant(crate::schedule::Rate::PerComponent(vec![0.1, 0.1]));
    assert!(c.check_against(&env, &actor, &critic).is_err());
    let mut c = ok.clone();
    c.control_matrix = Some(DMatrix::zeros(2, 1));
    assert!(c.check_against(&env, &actor, &critic).is_err());
}

#[test]
fn optimal_trading_rollouts_reach_the_table_value() {
    let env = trading_env(50, 1.0);
    let actor = ExactTradingActor::new([3.0, 2.0], 1.0);
    let mut measures = initial_measures(env.grid(), &[0.0]);
    let stream = RngStream::new(12, 0);
    let n = 10_000;
    let mut total = 0.0;
    for i in 0..n {
        let tr = rollout(&env, &actor, &mut measures, 1.0 / (i + 1) as f64, 0.001, &mut stream.child(i).rng()).unwrap();
        total += tr.cost(env.grid().dt());
    }
    let mean = total / n as f64;
    assert!((mean + 1.863).abs() / 1.863 < 0.02, "mean cost {mean}");
}

#[test]
fn adam_moves_against_the_gradient() {
    let mut s = Stepper::new(Optimizer::Adam, 2);
    let mut p = vec![1.0, -1.0];
    s.apply(&mut p, &crate::schedule::Rate::Scalar(0.1), &[2.0, -0.5], -1.0);
    // first Adam step has magnitude equal to the rate
    assert!((p[0] - 0.9).abs() < 1e-7 && (p[1] + 0.9).abs() < 1e-7, "{p:?}");
}

#[test]
fn batch_empirical_mode_shares_one_law() {
    let env = trading_env(4, 1.0);
    let actor = ExactTradingActor::new([3.0, 2.0], 1.0);
    let mut measures = initial_measures(env.grid(), &[0.0]);
    let mut rngs: Vec<_> = (0..5).map(|i| RngStream::new(13, i).rng()).collect();
    let traces = rollout_batch(&env, &actor, &mut measures, MeasureMode::BatchEmpirical, 1.0, 0.1, 1, &mut rngs).unwrap();
    for k in 0..=4 {
        let avg = traces.iter().map(|t| t.node(k).1[0]).sum::<f64>() / 5.0;
        for t in &traces {
            assert!((t.node(k).2[0] - avg).abs() < 1e-14);
        }
        assert!((measures[k].mean()[0] - avg).abs() < 1e-14);
    }
}
