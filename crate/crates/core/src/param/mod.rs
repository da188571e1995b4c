//! Parametric actors (Gaussian policies) and critics (value functions).
//!
//! Critics in LQ form expose the shell `(K, Lambda, Y, R)` of
//! `J(t, x, mu) = (x - mubar)'K(x - mubar) + mubar'Lambda mubar + 2Y.x + R` and a
//! vector-Jacobian product through it. Actors expose the affine mean
//! coefficients `(phi1, phi2, phi3)` and a vector-Jacobian product through them,
//! so that scores and the mean-field correction reduce to one backward pass
//! per time step.

mod exact;
mod mlp;
mod nn;
mod quadratic;

pub use exact::{ExactSysRiskActor, ExactSysRiskCritic, ExactTradingActor, ExactTradingCritic};
pub use mlp::{Mlp, MlpCache};
pub use nn::{FreeMlpCritic, NnActor, NnShellCritic, Phi3Mode};
pub use quadratic::{QuadraticActor, QuadraticCritic};

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng::{standard_normal, Rng};

/// Lower bound enforced on sign-constrained parameters.
pub const POSITIVE_FLOOR: f64 = 1e-6;

/// LQ critic shell at one time. Matrices are row-major `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqShell {
    pub dim: usize,
    pub k: Vec<f64>,
    pub lambda: Vec<f64>,
    pub y: Vec<f64>,
    pub r: f64,
}

impl LqShell {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            k: vec![0.0; dim * dim],
            lambda: vec![0.0; dim * dim],
            y: vec![0.0; dim],
            r: 0.0,
        }
    }

    pub fn value(&self, x: &[f64], mu_bar: &[f64]) -> f64 {
        let d = self.dim;
        let mut v = self.r;
        for i in 0..d {
            let di = x[i] - mu_bar[i];
            v += 2.0 * self.y[i] * x[i];
            for j in 0..d {
                v += self.k[i * d + j] * di * (x[j] - mu_bar[j]) + self.lambda[i * d + j] * mu_bar[i] * mu_bar[j];
            }
        }
        v
    }

    /// Adds `weight * d value / d shell` at `(x, mubar)` to `self`.
    pub fn accumulate_cotangent(&mut self, x: &[f64], mu_bar: &[f64], weight: f64) {
        let d = self.dim;
        for i in 0..d {
            let di = x[i] - mu_bar[i];
            self.y[i] += 2.0 * weight * x[i];
            for j in 0..d {
                self.k[i * d + j] += weight * di * (x[j] - mu_bar[j]);
                self.lambda[i * d + j] += weight * mu_bar[i] * mu_bar[j];
            }
        }
        self.r += weight;
    }

    pub fn k_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.k)
    }

    pub fn lambda_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.lambda)
    }
}

/// One evaluation point `(x, mubar)` with a weight.
#[derive(Debug, Clone, Copy)]
pub struct CriticPoint<'a> {
    pub x: &'a [f64],
    pub mu_bar: &'a [f64],
    pub weight: f64,
}

/// Parametric value function `J^eta(t, x, mu)`.
pub trait Critic: Send + Sync + std::fmt::Debug {
    fn kind(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn box_clone(&self) -> Box<dyn Critic>;

    /// Projects parameters back onto their admissible set.
    fn project(&mut self) {}

    /// `Some` for critics of LQ form.
    fn shell(&self, t: f64, lambda: f64) -> Option<LqShell>;

    /// `out += J' cot` through the shell map. Only called when `shell` is `Some`.
    fn shell_backprop(&self, _t: f64, _lambda: f64, _cot: &LqShell, _out: &mut [f64]) {
        unreachable!("shell_backprop on a critic without LQ form")
    }

    fn value(&self, t: f64, x: &[f64], mu_bar: &[f64], lambda: f64) -> f64 {
        self.shell(t, lambda)
            .expect("critics without LQ form override value")
            .value(x, mu_bar)
    }

    /// `out += sum_j w_j grad_eta J(t, x_j, mubar_j)`.
    fn accumulate_grad(&self, t: f64, lambda: f64, points: &[CriticPoint<'_>], out: &mut [f64]) {
        let mut cot = LqShell::zeros(self.state_dim());
        for p in points {
            cot.accumulate_cotangent(p.x, p.mu_bar, p.weight);
        }
        self.shell_backprop(t, lambda, &cot, out);
    }

    fn grad(&self, t: f64, x: &[f64], mu_bar: &[f64], lambda: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.params().len()];
        self.accumulate_grad(t, lambda, &[CriticPoint { x, mu_bar, weight: 1.0 }], &mut out);
        out
    }
}

impl Clone for Box<dyn Critic> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Mean map `a = phi1 x + phi2 mubar + phi3` at one time; `phi1`, `phi2` row-major `m x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCoefficients {
    pub state_dim: usize,
    pub action_dim: usize,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub phi3: Vec<f64>,
}

impl ActorCoefficients {
    pub fn zeros(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            phi1: vec![0.0; state_dim * action_dim],
            phi2: vec![0.0; state_dim * action_dim],
            phi3: vec![0.0; action_dim],
        }
    }

    pub fn mean_into(&self, x: &[f64], mu_bar: &[f64], out: &mut [f64]) {
        let d = self.state_dim;
        for (a, o) in out.iter_mut().enumerate() {
            let mut s = self.phi3[a];
            for j in 0..d {
                s += self.phi1[a * d + j] * x[j] + self.phi2[a * d + j] * mu_bar[j];
            }
            *o = s;
        }
    }

    pub fn mean(&self, x: &[f64], mu_bar: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.action_dim];
        self.mean_into(x, mu_bar, &mut out);
        out
    }

    /// Adds `g x'`, `g mubar'`, `g` for a cotangent `g` on the mean.
    pub fn accumulate_mean_cotangent(&mut self, x: &[f64], mu_bar: &[f64], g: &[f64]) {
        let d = self.state_dim;
        for (a, ga) in g.iter().enumerate() {
            for j in 0..d {
                self.phi1[a * d + j] += ga * x[j];
                self.phi2[a * d + j] += ga * mu_bar[j];
            }
            self.phi3[a] += ga;
        }
    }
}

/// Gaussian policy `N(phi1 x + phi2 mubar + phi3, c lambda Id)` with a
/// parametrisation-specific variance factor `c`.
pub trait Actor: Send + Sync + std::fmt::Debug {
    fn kind(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn box_clone(&self) -> Box<dyn Actor>;

    /// Covariance is `variance_factor() * lambda * Id`.
    fn variance_factor(&self) -> f64;

    fn project(&mut self) {}

    fn coefficients(&self, t: f64) -> ActorCoefficients;

    /// `out += J' cot` where `J` is the Jacobian of the coefficients in theta.
    fn backprop(&self, t: f64, cot: &ActorCoefficients, out: &mut [f64]);
}

impl Clone for Box<dyn Actor> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

pub(crate) fn check_temperature(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {lambda}"
        )));
    }
    Ok(())
}

/// Per-component policy variance.
pub fn policy_variance(actor: &dyn Actor, lambda: f64) -> f64 {
    actor.variance_factor() * lambda
}

pub fn policy_mean(actor: &dyn Actor, t: f64, x: &[f64], mu_bar: &[f64]) -> Vec<f64> {
    actor.coefficients(t).mean(x, mu_bar)
}

/// `log p` given the mean and per-component variance.
pub fn gaussian_log_density(mean: &[f64], a: &[f64], var: f64) -> f64 {
    let sq: f64 = a.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
    -0.5 * mean.len() as f64 * (2.0 * PI * var).ln() - sq / (2.0 * var)
}

pub fn actor_log_density(actor: &dyn Actor, t: f64, x: &[f64], mu_bar: &[f64], a: &[f64], lambda: f64) -> Result<f64> {
    check_temperature(lambda)?;
    let mean = policy_mean(actor, t, x, mu_bar);
    Ok(gaussian_log_density(&mean, a, policy_variance(actor, lambda)))
}

pub fn actor_sample(actor: &dyn Actor, t: f64, x: &[f64], mu_bar: &[f64], lambda: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_temperature(lambda)?;
    let sd = policy_variance(actor, lambda).sqrt();
    Ok(policy_mean(actor, t, x, mu_bar)
        .into_iter()
        .map(|m| m + sd * standard_normal(rng))
        .collect())
}

/// Adds `weight * d log p / d coefficients` at `(x, mubar, a)` to `cot`.
pub fn accumulate_score_cotangent(
    coeffs: &ActorCoefficients,
    var: f64,
    x: &[f64],
    mu_bar: &[f64],
    a: &[f64],
    weight: f64,
    cot: &mut ActorCoefficients,
) {
    let mean = coeffs.mean(x, mu_bar);
    let g: Vec<f64> = a.iter().zip(&mean).map(|(a, m)| weight * (a - m) / var).collect();
    cot.accumulate_mean_cotangent(x, mu_bar, &g);
}

pub fn actor_grad_log_density(
    actor: &dyn Actor,
    t: f64,
    x: &[f64],
    mu_bar: &[f64],
    a: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    check_temperature(lambda)?;
    let coeffs = actor.coefficients(t);
    let mut cot = ActorCoefficients::zeros(actor.state_dim(), actor.action_dim());
    accumulate_score_cotangent(&coeffs, policy_variance(actor, lambda), x, mu_bar, a, 1.0, &mut cot);
    let mut out = vec![0.0; actor.params().len()];
    actor.backprop(t, &cot, &mut out);
    Ok(out)
}

/// Adds `weight * d H / d coefficients` for the mean-field correction at `(x, mubar)`,
/// with `v = C'(-K(x - mubar) + Lambda mubar)`.
pub fn accumulate_h_cotangent(
    shell: &LqShell,
    c: &DMatrix<f64>,
    x: &[f64],
    mu_bar: &[f64],
    weight: f64,
    cot: &mut ActorCoefficients,
) {
    let d = shell.dim;
    let mut w = vec![0.0; d];
    for i in 0..d {
        for j in 0..d {
            w[i] += -shell.k[i * d + j] * (x[j] - mu_bar[j]) + shell.lambda[i * d + j] * mu_bar[j];
        }
    }
    let m = c.ncols();
    let g: Vec<f64> = (0..m)
        .map(|a| 2.0 * weight * (0..d).map(|i| c[(i, a)] * w[i]).sum::<f64>())
        .collect();
    let d = cot.state_dim;
    for (a, ga) in g.iter().enumerate() {
        for j in 0..d {
            cot.phi1[a * d + j] += ga * mu_bar[j];
            cot.phi2[a * d + j] += ga * mu_bar[j];
        }
        cot.phi3[a] += ga;
    }
}

/// Mean-field correction
/// `H = 2[(grad phi1 + grad phi2) . mubar + grad phi3]' C'(-K(x - mubar) + Lambda mubar)`.
pub fn h_theta(
    actor: &dyn Actor,
    critic: &dyn Critic,
    c: &DMatrix<f64>,
    t: f64,
    x: &[f64],
    mu_bar: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    let shell = critic.shell(t, lambda).ok_or_else(|| {
        Error::Unsupported(format!(
            "mean-field correction needs an LQ-form critic, got {}",
            critic.kind()
        ))
    })?;
    if c.shape() != (actor.state_dim(), actor.action_dim()) {
        return Err(Error::DimensionMismatch {
            context: "control matrix C",
            expected: actor.state_dim() * actor.action_dim(),
            got: c.len(),
        });
    }
    let mut cot = ActorCoefficients::zeros(actor.state_dim(), actor.action_dim());
    accumulate_h_cotangent(&shell, c, x, mu_bar, 1.0, &mut cot);
    let mut out = vec![0.0; actor.params().len()];
    actor.backprop(t, &cot, &mut out);
    Ok(out)
}

pub(crate) fn clamp_positive(values: &mut [f64]) {
    // NaN passes through so the trainer can report it
    for v in values {
        if *v < POSITIVE_FLOOR {
            *v = POSITIVE_FLOOR;
        }
    }
}

/// `(lambda / 2) log(2 pi lambda)` per unit time, 0 at `lambda = 0`.
pub(crate) fn sysrisk_entropy_rate(lambda: f64) -> f64 {
    if lambda > 0.0 {
        0.5 * lambda * (2.0 * PI * lambda).ln()
    } else {
        0.0
    }
}

/// `(lambda / 2) log(pi lambda)` per unit time, 0 at `lambda = 0`.
pub(crate) fn trading_entropy_rate(lambda: f64) -> f64 {
    if lambda > 0.0 {
        0.5 * lambda * (PI * lambda).ln()
    } else {
        0.0
    }
}
