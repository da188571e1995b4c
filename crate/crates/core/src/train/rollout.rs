use super::MeasureMode;
use crate::env::Environment;
use crate::error::{check_dim, Error, Result};
use crate::grid::TimeGrid;
use crate::measure::EmpiricalMeasure;
use crate::param::{gaussian_log_density, policy_variance, Actor};
use crate::rng::{standard_normal, Rng};

/// What the learner observed at `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub f: f64,
    pub mu_bar: Vec<f64>,
    /// `log p` of the sampled action; 0 for a deterministic rollout.
    pub log_p: f64,
}

impl StepRecord {
    /// `f + lambda log p`.
    pub fn regularised_cost(&self, lambda: f64) -> f64 {
        self.f + lambda * self.log_p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub lambda: f64,
    pub steps: Vec<StepRecord>,
    pub terminal_t: f64,
    pub terminal_x: Vec<f64>,
    pub terminal_mu_bar: Vec<f64>,
    pub g: f64,
}

impl EpisodeTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `sum f dt + g`.
    pub fn cost(&self, dt: f64) -> f64 {
        self.steps.iter().map(|s| s.f * dt).sum::<f64>() + self.g
    }

    /// `sum (f + lambda log p) dt + g`.
    pub fn regularised_cost(&self, dt: f64) -> f64 {
        self.steps
            .iter()
            .map(|s| s.regularised_cost(self.lambda) * dt)
            .sum::<f64>()
            + self.g
    }

    /// `(t, x, mubar)` at node `k`, the terminal node included.
    pub fn node(&self, k: usize) -> (f64, &[f64], &[f64]) {
        match self.steps.get(k) {
            Some(s) => (s.t, &s.x, &s.mu_bar),
            None => (self.terminal_t, &self.terminal_x, &self.terminal_mu_bar),
        }
    }
}

/// One Dirac law per node `t_0..t_n`.
pub fn initial_measures(grid: &TimeGrid, point: &[f64]) -> Vec<EmpiricalMeasure> {
    vec![EmpiricalMeasure::dirac(point); grid.n_steps() + 1]
}

/// Means of the node law as each member sees it after mixing in the current states.
pub(crate) fn node_means(
    measure: &mut EmpiricalMeasure,
    xs: &[Vec<f64>],
    mode: MeasureMode,
    rho: f64,
) -> Result<Vec<Vec<f64>>> {
    match mode {
        MeasureMode::PerEpisode => {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "mixing rate must lie in (0, 1], got {rho}"
                )));
            }
            let m = measure.mean();
            Ok(xs
                .iter()
                .map(|x| m.iter().zip(x).map(|(m, x)| (1.0 - rho) * m + rho * x).collect())
                .collect())
        }
        MeasureMode::BatchEmpirical => {
            let flat: Vec<f64> = xs.iter().flatten().copied().collect();
            measure.update_batch(&flat, xs.len(), rho)?;
            Ok(vec![measure.mean().to_vec(); xs.len()])
        }
    }
}

/// Folds per-episode contributions into the shared laws in batch order.
pub(crate) fn fold_measures(measures: &mut [EmpiricalMeasure], states: &[Vec<Vec<f64>>], rho: f64) -> Result<()> {
    for (mu, xs) in measures.iter_mut().zip(states) {
        for x in xs {
            mu.update(x, rho)?;
        }
    }
    Ok(())
}

/// Draws an action, returning it with its log-density (0 when `lambda = 0`).
pub(crate) fn sample_action(mean: Vec<f64>, var: f64, lambda: f64, rng: &mut Rng) -> (Vec<f64>, f64) {
    if lambda > 0.0 {
        let sd = var.sqrt();
        let a: Vec<f64> = mean.iter().map(|m| m + sd * standard_normal(rng)).collect();
        let lp = gaussian_log_density(&mean, &a, var);
        (a, lp)
    } else {
        (mean, 0.0)
    }
}

pub(crate) fn check_measures(env: &dyn Environment, measures: &[EmpiricalMeasure]) -> Result<()> {
    check_dim("node laws", env.grid().n_steps() + 1, measures.len())?;
    for mu in measures {
        check_dim("node law dimension", env.state_dim(), mu.dim())?;
    }
    Ok(())
}

pub(crate) fn with_context(episode: u64, step: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Rollout {
        episode,
        step,
        source: Box::new(e),
    }
}

/// Simulates one episode per rng, all members advancing in lockstep.
///
/// Each member's action at `t_k` uses the node law after its state (or, in
/// batch mode, the whole batch) has been mixed in. In per-episode mode the
/// shared laws are updated after the batch, in member order, so a batch of one
/// updates each node right before the action exactly as a sequential loop would.
/// `lambda = 0` gives a deterministic rollout on the policy mean.
#[allow(clippy::too_many_arguments)]
pub fn rollout_batch(
    env: &dyn Environment,
    actor: &dyn Actor,
    measures: &mut [EmpiricalMeasure],
    mode: MeasureMode,
    rho_s: f64,
    lambda: f64,
    episode: u64,
    rngs: &mut [Rng],
) -> Result<Vec<EpisodeTrace>> {
    check_measures(env, measures)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be >= 0, got {lambda}")));
    }
    let grid = env.grid();
    let n = grid.n_steps();
    let var = policy_variance(actor, lambda);
    let mut xs: Vec<Vec<f64>> = rngs.iter_mut().map(|r| env.sample_initial(r)).collect();
    let mut traces: Vec<EpisodeTrace> = xs
        .iter()
        .map(|_| EpisodeTrace {
            lambda,
            steps: Vec::with_capacity(n),
            terminal_t: grid.horizon(),
            terminal_x: Vec::new(),
            terminal_mu_bar: Vec::new(),
            g: 0.0,
        })
        .collect();
    let mut visited: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let means = node_means(&mut measures[k], &xs, mode, rho_s)?;
        if k == n {
            for ((tr, x), m) in traces.iter_mut().zip(&xs).zip(means) {
                tr.g = env.terminal_cost(x, &m);
                if !tr.g.is_finite() {
                    return Err(with_context(episode, k)(Error::NonFinite("terminal cost".into())));
                }
                tr.terminal_x = x.clone();
                tr.terminal_mu_bar = m;
            }
            break;
        }
        let t = grid.t(k);
        let coeffs = actor.coefficients(t);
        let mut next = Vec::with_capacity(xs.len());
        for (j, (x, m)) in xs.iter().zip(means).enumerate() {
            let (a, log_p) = sample_action(coeffs.mean(x, &m), var, lambda, &mut rngs[j]);
            if a.iter().any(|v| !v.is_finite()) {
                return Err(with_context(episode, k)(Error::NonFinite("action".into())));
            }
            let step = env.step(k, x, &a, &m, &mut rngs[j]).map_err(with_context(episode, k))?;
            traces[j].steps.push(StepRecord {
                t,
                x: x.clone(),
                a,
                f: step.running_cost,
                mu_bar: m,
                log_p,
            });
            next.push(step.next_state);
        }
        visited.push(std::mem::replace(&mut xs, next));
    }
    if mode == MeasureMode::PerEpisode {
        visited.push(xs);
        fold_measures(measures, &visited, rho_s)?;
    }
    Ok(traces)
}

/// Single-episode rollout; the node laws are updated in place.
pub fn rollout(
    env: &dyn Environment,
    actor: &dyn Actor,
    measures: &mut [EmpiricalMeasure],
    rho_s: f64,
    lambda: f64,
    rng: &mut Rng,
) -> Result<EpisodeTrace> {
    let mut rngs = [rng.clone()];
    let out = rollout_batch(env, actor, measures, MeasureMode::PerEpisode, rho_s, lambda, 0, &mut rngs)?;
    *rng = rngs[0].clone();
    Ok(out.into_iter().next().unwrap())
}
