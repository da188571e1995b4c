//! Model-based ground truth for linear-quadratic mean-field control.

mod closed_form;
mod riccati;

pub use closed_form::{
    closed_form_example1, closed_form_example2, SystemicRiskParams, SystemicRiskSolution, TradingParams,
    TradingSolution,
};
pub use riccati::{entropy_source, solve_riccati, FeedbackBlocks, RiccatiPoint, RiccatiSolution};

use nalgebra::{DMatrix, DVector};

use crate::env::LqCoefficients;
use crate::error::{check_dim, Result};
use crate::measure::EmpiricalMeasure;

/// Affine Gaussian feedback `N(phi1 x + phi2 mubar + phi3, Sigma)` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCoefficients {
    pub phi1: DMatrix<f64>,
    pub phi2: DMatrix<f64>,
    pub phi3: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl PolicyCoefficients {
    pub fn mean(&self, x: &[f64], mu_bar: &[f64]) -> Vec<f64> {
        let m = &self.phi1 * DVector::from_column_slice(x)
            + &self.phi2 * DVector::from_column_slice(mu_bar)
            + &self.phi3;
        m.as_slice().to_vec()
    }
}

/// Optimal randomised policy `N(-S^{-1}(Ux + (Uhat - U) mubar + O), (lambda / 2) S^{-1})`.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    solution: RiccatiSolution,
    coeffs: LqCoefficients,
    lambda: f64,
}

impl GaussianPolicy {
    pub fn state_dim(&self) -> usize {
        self.coeffs.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.coeffs.action_dim()
    }

    pub fn temperature(&self) -> f64 {
        self.lambda
    }

    pub fn coefficients_at(&self, t: f64) -> Result<PolicyCoefficients> {
        let p = self.solution.at(t);
        let fb = FeedbackBlocks::new(&self.coeffs, &p, t)?;
        let phi1 = -fb.solve(&fb.u);
        let phi2 = -fb.solve(&(&fb.u_hat - &fb.u));
        let phi3 = -fb.solve_vec(&fb.o);
        let covariance = fb.s_inverse() * (0.5 * self.lambda);
        Ok(PolicyCoefficients {
            phi1,
            phi2,
            phi3,
            covariance: (&covariance + covariance.transpose()) * 0.5,
        })
    }

    pub fn mean(&self, t: f64, x: &[f64], mu_bar: &[f64]) -> Result<Vec<f64>> {
        check_dim("policy state", self.coeffs.state_dim(), x.len())?;
        check_dim("policy measure mean", self.coeffs.state_dim(), mu_bar.len())?;
        Ok(self.coefficients_at(t)?.mean(x, mu_bar))
    }

    pub fn covariance(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.coefficients_at(t)?.covariance)
    }

    /// Differential entropy `(m/2) log(2 pi e) + (1/2) log det Sigma`; `-inf` when `lambda = 0`.
    pub fn entropy(&self, t: f64) -> Result<f64> {
        let p = self.solution.at(t);
        let fb = FeedbackBlocks::new(&self.coeffs, &p, t)?;
        let m = self.coeffs.action_dim() as f64;
        if self.lambda == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(0.5 * m * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
            + 0.5 * (m * (0.5 * self.lambda).ln() - fb.log_det_s()))
    }
}

pub fn optimal_policy(sol: &RiccatiSolution, coeffs: &LqCoefficients, lambda: f64) -> Result<GaussianPolicy> {
    coeffs.validate()?;
    for (k, p) in sol.nodes().iter().enumerate() {
        FeedbackBlocks::new(coeffs, p, sol.grid().t(k))?;
    }
    Ok(GaussianPolicy {
        solution: sol.clone(),
        coeffs: coeffs.clone(),
        lambda,
    })
}

/// `(x - mubar)'K(x - mubar) + mubar'Lambda mubar + 2Y.x + R` at time `t`.
pub fn optimal_value(sol: &RiccatiSolution, t: f64, x: &[f64], mu: &EmpiricalMeasure) -> f64 {
    value_at_mean(sol, t, x, mu.mean())
}

pub fn value_at_mean(sol: &RiccatiSolution, t: f64, x: &[f64], mu_bar: &[f64]) -> f64 {
    let p = sol.at(t);
    let dev = DVector::from_iterator(x.len(), x.iter().zip(mu_bar).map(|(a, b)| a - b));
    let mb = DVector::from_column_slice(mu_bar);
    dev.dot(&(&p.k * &dev)) + mb.dot(&(&p.lambda * &mb)) + 2.0 * p.y.dot(&DVector::from_column_slice(x)) + p.r
}

/// Population value `E[v(t, X, mu)]` for a law with mean `mean` and covariance `cov`:
/// `tr(K cov) + mean'Lambda mean + 2Y.mean + R`.
pub fn population_value(sol: &RiccatiSolution, t: f64, mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let p = sol.at(t);
    let mb = DVector::from_column_slice(mean);
    (&p.k * cov).trace() + mb.dot(&(&p.lambda * &mb)) + 2.0 * p.y.dot(&mb) + p.r
}
