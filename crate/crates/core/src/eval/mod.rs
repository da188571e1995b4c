//! Population-scale evaluation of feedback policies and benchmark comparisons.
//!
//! Each population runs `n_agents` coupled particles whose mean-field term is
//! the live empirical mean. Costs are unregularised: the evaluated control is
//! the policy mean unless sampled actions are requested.

mod curves;


pub use curves::{curve_export, CurveTable};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::env::Environment;
use crate::error::{check_dim, Error, Result};
use crate::lq::GaussianPolicy;
use crate::param::{policy_variance, Actor, ActorCoefficients};
use crate::rng::{standard_normal, Rng, RngStream};

/// Stream id reserved for evaluation populations.
pub const EVAL_STREAM: u64 = 2;

/// Env var capping the number of evaluation threads.
pub const THREADS_ENV: &str = "MFC_THREADS";

/// Affine feedback `a = phi1 x + phi2 mubar + phi3 (+ noise)` evaluated per time.
pub trait FeedbackPolicy: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn coefficients(&self, t: f64) -> Result<ActorCoefficients>;
    /// Lower Cholesky factor of the action covariance, for sampled-action evaluation.
    fn noise_factor(&self, t: f64) -> Result<DMatrix<f64>>;
}

/// A learnt actor at a fixed temperature.
#[derive(Debug, Clone, Copy)]
pub struct ActorPolicy<'a> {
    pub actor: &'a dyn Actor,
    pub lambda: f64,
}

impl FeedbackPolicy for ActorPolicy<'_> {
    fn state_dim(&self) -> usize {
        self.actor.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.actor.action_dim()
    }
    fn coefficients(&self, t: f64) -> Result<ActorCoefficients> {
        Ok(self.actor.coefficients(t))
    }
    fn noise_factor(&self, _t: f64) -> Result<DMatrix<f64>> {
        let m = self.actor.action_dim();
        Ok(DMatrix::identity(m, m) * policy_variance(self.actor, self.lambda).max(0.0).sqrt())
    }
}

impl FeedbackPolicy for GaussianPolicy {
    fn state_dim(&self) -> usize {
        self.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.action_dim()
    }
    fn coefficients(&self, t: f64) -> Result<ActorCoefficients> {
        let p = self.coefficients_at(t)?;
        let (m, d) = p.phi1.shape();
        let row_major = |a: &DMatrix<f64>| a.transpose().as_slice().to_vec();
        Ok(ActorCoefficients {
            state_dim: d,
            action_dim: m,
            phi1: row_major(&p.phi1),
            phi2: row_major(&p.phi2),
            phi3: p.phi3.as_slice().to_vec(),
        })
    }
    fn noise_factor(&self, t: f64) -> Result<DMatrix<f64>> {
        let cov = self.covariance(t)?;
        let m = cov.nrows();
        if self.temperature() == 0.0 {
            return Ok(DMatrix::zeros(m, m));
        }
        cov.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::AssumptionViolation {
                condition: "policy covariance positive definite".into(),
                time: Some(t),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub n_agents: usize,
    pub n_populations: usize,
    pub seed: u64,
    /// Sample actions from the policy instead of applying its mean.
    pub stochastic: bool,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 agents, got {}", self.n_agents)));
        }
        if self.n_populations == 0 {
            return Err(Error::InvalidArgument("need at least one population".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub population_costs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation across populations (0 for a single population).
    pub std_dev: f64,
}

impl EvalReport {
    pub fn from_costs(population_costs: Vec<f64>) -> Self {
        let n = population_costs.len() as f64;
        let mean = kahan_sum(population_costs.iter().copied()) / n;
        let std_dev = if population_costs.len() > 1 {
            (kahan_sum(population_costs.iter().map(|c| (c - mean) * (c - mean))) / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            population_costs,
            mean,
            std_dev,
        }
    }

    pub fn relative_error(&self, exact: f64) -> f64 {
        (self.mean - exact).abs() / exact.abs()
    }
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut k = Kahan::default();
    for v in values {
        k.add(v);
    }
    k.value()
}

fn check_policy(env: &dyn Environment, policy: &dyn FeedbackPolicy) -> Result<()> {
    check_dim("policy state dimension", env.state_dim(), policy.state_dim())?;
    check_dim("policy action dimension", env.action_dim(), policy.action_dim())
}

/// Runs `f` on a pool sized by [`THREADS_ENV`] when set.
pub fn with_eval_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn empirical_mean(xs: &[Vec<f64>], d: usize) -> Vec<f64> {
    let inv = 1.0 / xs.len() as f64;
    (0..d).map(|j| kahan_sum(xs.iter().map(|x| x[j])) * inv).collect()
}

/// Per-agent trajectory of one population.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationPath {
    /// Empirical mean at every node.
    pub means: Vec<Vec<f64>>,
    /// `controls[k][i]`: action of agent `i` at step `k`.
    pub controls: Vec<Vec<Vec<f64>>>,
    /// `states[k][i]`, nodes `0..=n`.
    pub states: Vec<Vec<Vec<f64>>>,
    /// `cumulative_costs[k][i]`: running cost up to `t_k`, plus the terminal cost at `k = n`.
    pub cumulative_costs: Vec<Vec<f64>>,
}

fn agent_streams(population: RngStream, n_agents: usize) -> Vec<RngStream> {
    (0..n_agents as u64).map(|i| population.child(i)).collect()
}

/// Simulates one population, agent `i` drawing from `streams[i]`. Returns
/// per-agent total costs and, when `keep_path`, the full path.
fn simulate_population(
    env: &dyn Environment,
    policy: &dyn FeedbackPolicy,
    streams: &[RngStream],
    stochastic: bool,
    keep_path: bool,
) -> Result<(Vec<f64>, Option<PopulationPath>)> {
    let grid = env.grid().clone();
    let (n, dt, d, m) = (grid.n_steps(), grid.dt(), env.state_dim(), env.action_dim());
    let n_agents = streams.len();
    let mut rngs: Vec<Rng> = streams.iter().map(RngStream::rng).collect();
    let mut xs: Vec<Vec<f64>> = rngs.iter_mut().map(|r| env.sample_initial(r)).collect();
    let mut costs = vec![Kahan::default(); n_agents];
    let mut path = keep_path.then(|| PopulationPath {
        means: Vec::with_capacity(n + 1),
        controls: Vec::with_capacity(n),
        states: Vec::with_capacity(n + 1),
        cumulative_costs: Vec::with_capacity(n + 1),
    });
    let mut a = vec![0.0; m];
    for k in 0..n {
        let t = grid.t(k);
        let mu = empirical_mean(&xs, d);
        let coeffs = policy.coefficients(t)?;
        let noise = if stochastic { Some(policy.noise_factor(t)?) } else { None };
        let mut controls = Vec::with_capacity(if keep_path { n_agents } else { 0 });
        if let Some(p) = path.as_mut() {
            p.states.push(xs.clone());
            p.cumulative_costs.push(costs.iter().map(Kahan::value).collect());
        }
        for ((x, rng), cost) in xs.iter_mut().zip(&mut rngs).zip(&mut costs) {
            coeffs.mean_into(x, &mu, &mut a);
            if let Some(l) = &noise {
                let z: Vec<f64> = (0..m).map(|_| standard_normal(rng)).collect();
                for (i, ai) in a.iter_mut().enumerate() {
                    *ai += (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>();
                }
            }
            let step = env.step(k, x, &a, &mu, rng)?;
            cost.add(step.running_cost * dt);
            *x = step.next_state;
            if keep_path {
                controls.push(a.clone());
            }
        }
        if let Some(p) = path.as_mut() {
            p.means.push(mu);
            p.controls.push(controls);
        }
    }
    let mu = empirical_mean(&xs, d);
    for (x, cost) in xs.iter().zip(&mut costs) {
        cost.add(env.terminal_cost(x, &mu));
    }
    let totals: Vec<f64> = costs.iter().map(Kahan::value).collect();
    if let Some(p) = path.as_mut() {
        p.means.push(mu);
        p.states.push(xs);
        p.cumulative_costs.push(totals.clone());
    }
    if totals.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("population cost".into()));
    }
    Ok((totals, path))
}

/// Monte Carlo social cost: the agent-averaged cost of each population, then
/// mean and spread across populations. Populations run in parallel; results
/// are reduced in population order.
pub fn social_cost(env: &dyn Environment, policy: &dyn FeedbackPolicy, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    check_policy(env, policy)?;
    let root = RngStream::new(cfg.seed, EVAL_STREAM);
    let per_pop: Vec<Result<f64>> = with_eval_pool(|| {
        (0..cfg.n_populations as u64)
            .into_par_iter()
            .map(|p| {
                let streams = agent_streams(root.child(p), cfg.n_agents);
                let (costs, _) = simulate_population(env, policy, &streams, cfg.stochastic, false)?;
                Ok(kahan_sum(costs) / cfg.n_agents as f64)
            })
            .collect()
    })?;
    Ok(EvalReport::from_costs(per_pop.into_iter().collect::<Result<_>>()?))
}

/// One grid node of a paired comparison, tracking agent 0 of each population.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub state_a: f64,
    pub state_b: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Controls at `t_k`; `NaN` at the terminal node.
    pub control_a: f64,
    pub control_b: f64,
    pub cost_a: f64,
    pub cost_b: f64,
    /// Largest `|a_a - a_b|` over agents at `t_k`; `NaN` at the terminal node.
    pub control_gap_sup: f64,
}

/// Population averages at `T` and the paired per-node rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryComparison {
    pub rows: Vec<TrajectoryRow>,
    /// Agent-averaged total cost of each population.
    pub cost_a: f64,
    pub cost_b: f64,
    /// Standard error of the agent-averaged paired difference `a - b`.
    pub diff_std_err: f64,
}

/// Two populations driven by identical initial draws and Brownian increments,
/// one per policy. The first state and control components are tracked.
pub fn trajectory_compare(
    env: &dyn Environment,
    policy_a: &dyn FeedbackPolicy,
    policy_b: &dyn FeedbackPolicy,
    n_agents: usize,
    seed: u64,
) -> Result<TrajectoryComparison> {
    EvalConfig {
        n_agents,
        n_populations: 1,
        seed,
        stochastic: false,
    }
    .validate()?;
    check_policy(env, policy_a)?;
    check_policy(env, policy_b)?;
    let streams = agent_streams(RngStream::new(seed, EVAL_STREAM).child(u64::MAX), n_agents);
    let (ca, pa) = simulate_population(env, policy_a, &streams, false, true)?;
    let (cb, pb) = simulate_population(env, policy_b, &streams, false, true)?;
    let (pa, pb) = (pa.expect("path kept"), pb.expect("path kept"));
    let grid = env.grid();
    let n = grid.n_steps();
    let rows = (0..=n)
        .map(|k| {
            let (control_a, control_b, control_gap_sup) = if k < n {
                let gap = pa.controls[k]
                    .iter()
                    .zip(&pb.controls[k])
                    .flat_map(|(u, v)| u.iter().zip(v).map(|(u, v)| (u - v).abs()))
                    .fold(0.0, f64::max);
                (pa.controls[k][0][0], pb.controls[k][0][0], gap)
            } else {
                (f64::NAN, f64::NAN, f64::NAN)
            };
            TrajectoryRow {
                step: k,
                t: grid.t(k),
                state_a: pa.states[k][0][0],
                state_b: pb.states[k][0][0],
                mean_a: pa.means[k][0],
                mean_b: pb.means[k][0],
                control_a,
                control_b,
                cost_a: pa.cumulative_costs[k][0],
                cost_b: pb.cumulative_costs[k][0],
                control_gap_sup,
            }
        })
        .collect();
    let nf = n_agents as f64;
    let diffs: Vec<f64> = ca.iter().zip(&cb).map(|(a, b)| a - b).collect();
    let mean_diff = kahan_sum(diffs.iter().copied()) / nf;
    let var = kahan_sum(diffs.iter().map(|d| (d - mean_diff) * (d - mean_diff))) / (nf - 1.0);
    Ok(TrajectoryComparison {
        rows,
        cost_a: kahan_sum(ca) / nf,
        cost_b: kahan_sum(cb) / nf,
        diff_std_err: (var / nf).sqrt(),
    })
}
