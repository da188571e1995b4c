//! Black-box mean-field simulators.
//!
//! The learner only ever sees states and costs through [`Environment`]; model
//! coefficients live on the concrete types and are never part of the trait.

mod coefficients;

pub use coefficients::LqCoefficients;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{standard_normal, Rng};

/// Outcome of one simulator step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub next_state: Vec<f64>,
    pub running_cost: f64,
}

/// Law of the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    /// Independent Gaussian components.
    Normal { mean: Vec<f64>, std: Vec<f64> },
    Dirac { point: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Normal { mean, .. } => mean.len(),
            InitialLaw::Dirac { point } => point.len(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            InitialLaw::Normal { mean, .. } => mean.clone(),
            InitialLaw::Dirac { point } => point.clone(),
        }
    }

    /// Diagonal of the covariance.
    pub fn variance(&self) -> Vec<f64> {
        match self {
            InitialLaw::Normal { std, .. } => std.iter().map(|s| s * s).collect(),
            InitialLaw::Dirac { point } => vec![0.0; point.len()],
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            InitialLaw::Normal { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(m, s)| m + s * standard_normal(rng))
                .collect(),
            InitialLaw::Dirac { point } => point.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitialLaw::Normal { mean, std } => {
                check_dim("initial law std", mean.len(), std.len())?;
                if std.iter().any(|s| !(*s >= 0.0)) {
                    return Err(Error::InvalidArgument(
                        "initial standard deviations must be >= 0".into(),
                    ));
                }
            }
            InitialLaw::Dirac { .. } => {}
        }
        Ok(())
    }
}

/// A mean-field simulator observed only through sampled states and costs.
pub trait Environment: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn grid(&self) -> &TimeGrid;
    fn initial_law(&self) -> &InitialLaw;

    /// Dimension of the Brownian increment consumed per step.
    fn noise_dim(&self) -> usize {
        1
    }

    fn sample_initial(&self, rng: &mut Rng) -> Vec<f64> {
        self.initial_law().sample(rng)
    }

    /// One step from `t_k` with an explicit Brownian increment `dw`.
    fn step_with_noise(
        &self,
        k: usize,
        x: &[f64],
        a: &[f64],
        mu_bar: &[f64],
        dw: &[f64],
    ) -> Result<EnvStep>;

    /// One step from `t_k`, drawing `dw ~ N(0, dt)`.
    fn step(&self, k: usize, x: &[f64], a: &[f64], mu_bar: &[f64], rng: &mut Rng) -> Result<EnvStep> {
        let sd = self.grid().dt().sqrt();
        let dw: Vec<f64> = (0..self.noise_dim())
            .map(|_| sd * standard_normal(rng))
            .collect();
        self.step_with_noise(k, x, a, mu_bar, &dw)
    }

    fn terminal_cost(&self, x: &[f64], mu_bar: &[f64]) -> f64;
}

fn check_step_inputs(env: &dyn Environment, k: usize, x: &[f64], a: &[f64], mu_bar: &[f64]) -> Result<()> {
    if k >= env.grid().n_steps() {
        return Err(Error::InvalidArgument(format!(
            "step index {k} outside [0, {})",
            env.grid().n_steps()
        )));
    }
    check_dim("state", env.state_dim(), x.len())?;
    check_dim("action", env.action_dim(), a.len())?;
    check_dim("measure mean", env.state_dim(), mu_bar.len())?;
    if x.iter().chain(a).chain(mu_bar).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "state/action at step {k}: x = {x:?}, a = {a:?}, mubar = {mu_bar:?}"
        )));
    }
    Ok(())
}

fn finish(k: usize, next_state: Vec<f64>, running_cost: f64) -> Result<EnvStep> {
    if !running_cost.is_finite() || next_state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("simulator output at step {k}")));
    }
    Ok(EnvStep {
        next_state,
        running_cost,
    })
}

/// Mean-field systemic risk with the exact exponential discretisation of
/// `dX = (Bbar (E[X] - X) + a) dt + gamma dW`.
#[derive(Debug, Clone)]
pub struct SystemicRisk {
    pub b_bar: f64,
    pub i: f64,
    pub q: f64,
    pub p: f64,
    pub gamma: f64,
    grid: TimeGrid,
    initial: InitialLaw,
    /// When set, dynamics and costs centre on this known mean instead of the caller's estimate.
    oracle_mean: Option<f64>,
}

impl SystemicRisk {
    pub fn new(b_bar: f64, i: f64, q: f64, p: f64, gamma: f64, grid: TimeGrid, initial: InitialLaw) -> Result<Self> {
        if !(b_bar > 0.0) {
            return Err(Error::InvalidArgument("Bbar must be positive".into()));
        }
        if q < 2.0 * i * i {
            return Err(Error::InvalidArgument(format!(
                "need Q >= 2 I^2, got Q = {q}, I = {i}"
            )));
        }
        initial.validate()?;
        check_dim("systemic risk initial law", 1, initial.dim())?;
        Ok(Self {
            b_bar,
            i,
            q,
            p,
            gamma,
            grid,
            initial,
            oracle_mean: None,
        })
    }

    /// Centre on the true `E[X_0]` (constant in time under centred policies).
    pub fn with_oracle_mean(mut self, enabled: bool) -> Self {
        self.oracle_mean = enabled.then(|| self.initial.mean()[0]);
        self
    }

    pub fn coefficients(&self) -> LqCoefficients {
        LqCoefficients::systemic_risk(self.b_bar, self.i, self.q, self.p, self.gamma)
    }

    fn centre(&self, mu_bar: &[f64]) -> f64 {
        self.oracle_mean.unwrap_or(mu_bar[0])
    }

    /// `(1 - e^{-Bbar dt}) / Bbar`.
    pub fn control_factor(&self) -> f64 {
        -(-self.b_bar * self.grid.dt()).exp_m1() / self.b_bar
    }
}

impl Environment for SystemicRisk {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn initial_law(&self) -> &InitialLaw {
        &self.initial
    }

    fn step_with_noise(&self, k: usize, x: &[f64], a: &[f64], mu_bar: &[f64], dw: &[f64]) -> Result<EnvStep> {
        check_step_inputs(self, k, x, a, mu_bar)?;
        check_dim("brownian increment", 1, dw.len())?;
        let m0 = self.centre(mu_bar);
        let decay = (-self.b_bar * self.grid.dt()).exp();
        let dev = x[0] - m0;
        let next = m0 + decay * dev + a[0] * self.control_factor() + self.gamma * decay * dw[0];
        let cost = self.q * dev * dev + 0.5 * a[0] * a[0] + 2.0 * a[0] * self.i * dev;
        finish(k, vec![next], cost)
    }

    fn terminal_cost(&self, x: &[f64], mu_bar: &[f64]) -> f64 {
        let dev = x[0] - self.centre(mu_bar);
        self.p * dev * dev
    }
}

/// Optimal trading: Euler scheme for `dX = a dt + gamma dW`,
/// running cost `a^2 + 2 H a`, terminal cost `P (X_T - mubar_T)^2`.
#[derive(Debug, Clone)]
pub struct Trading {
    pub p: f64,
    pub h: f64,
    pub gamma: f64,
    grid: TimeGrid,
    initial: InitialLaw,
}

impl Trading {
    pub fn new(p: f64, h: f64, gamma: f64, grid: TimeGrid, initial: InitialLaw) -> Result<Self> {
        if !(p >= 0.0) {
            return Err(Error::InvalidArgument("P must be >= 0".into()));
        }
        initial.validate()?;
        check_dim("trading initial law", 1, initial.dim())?;
        Ok(Self {
            p,
            h,
            gamma,
            grid,
            initial,
        })
    }

    pub fn coefficients(&self) -> LqCoefficients {
        LqCoefficients::trading(self.p, self.h, self.gamma)
    }
}

impl Environment for Trading {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn initial_law(&self) -> &InitialLaw {
        &self.initial
    }

    fn step_with_noise(&self, k: usize, x: &[f64], a: &[f64], mu_bar: &[f64], dw: &[f64]) -> Result<EnvStep> {
        check_step_inputs(self, k, x, a, mu_bar)?;
        check_dim("brownian increment", 1, dw.len())?;
        let next = x[0] + a[0] * self.grid.dt() + self.gamma * dw[0];
        let cost = a[0] * a[0] + 2.0 * self.h * a[0];
        finish(k, vec![next], cost)
    }

    fn terminal_cost(&self, x: &[f64], mu_bar: &[f64]) -> f64 {
        let dev = x[0] - mu_bar[0];
        self.p * dev * dev
    }
}

/// Euler-Maruyama simulator of a general linear-quadratic mean-field model.
#[derive(Debug, Clone)]
pub struct GenericLq {
    coeffs: LqCoefficients,
    grid: TimeGrid,
    initial: InitialLaw,
}

impl GenericLq {
    pub fn new(coeffs: LqCoefficients, grid: TimeGrid, initial: InitialLaw) -> Result<Self> {
        coeffs.validate()?;
        initial.validate()?;
        check_dim("generic LQ initial law", coeffs.state_dim(), initial.dim())?;
        Ok(Self {
            coeffs,
            grid,
            initial,
        })
    }

    pub fn coefficients(&self) -> &LqCoefficients {
        &self.coeffs
    }
}

impl Environment for GenericLq {
    fn state_dim(&self) -> usize {
        self.coeffs.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.coeffs.action_dim()
    }
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    fn initial_law(&self) -> &InitialLaw {
        &self.initial
    }

    fn step_with_noise(&self, k: usize, x: &[f64], a: &[f64], mu_bar: &[f64], dw: &[f64]) -> Result<EnvStep> {
        check_step_inputs(self, k, x, a, mu_bar)?;
        check_dim("brownian increment", 1, dw.len())?;
        let dt = self.grid.dt();
        let drift = self.coeffs.drift(x, mu_bar, a);
        let vol = self.coeffs.diffusion(x, mu_bar, a);
        let next: Vec<f64> = x
            .iter()
            .zip(drift.iter().zip(&vol))
            .map(|(xi, (b, s))| xi + b * dt + s * dw[0])
            .collect();
        let cost = self.coeffs.running_cost(x, mu_bar, a);
        finish(k, next, cost)
    }

    fn terminal_cost(&self, x: &[f64], mu_bar: &[f64]) -> f64 {
        self.coeffs.terminal_cost(x, mu_bar)
    }
}
