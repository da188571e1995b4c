use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Systemic-risk model data for the analytic solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemicRiskParams {
    pub b_bar: f64,
    pub i: f64,
    pub q: f64,
    pub p: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub horizon: f64,
}

impl SystemicRiskParams {
    /// `sqrt((Bbar + 2I)^2 + 2Q - 4I^2)`.
    pub fn sqrt_delta(&self) -> Result<f64> {
        if self.q < 2.0 * self.i * self.i {
            return Err(Error::InvalidArgument(format!(
                "need Q >= 2 I^2, got Q = {}, I = {}",
                self.q, self.i
            )));
        }
        let a = self.b_bar + 2.0 * self.i;
        Ok((a * a + 2.0 * self.q - 4.0 * self.i * self.i).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemicRiskSolution {
    pub k: f64,
    pub r: f64,
    /// Feedback gain on `x - mubar`.
    pub phi: f64,
}

/// `(ln D, r)` with `D = cosh(a tau) + b sinh(a tau)` and `r = (sinh + b cosh) / D`,
/// evaluated without overflow for large `a tau`.
fn hyperbolic_ratio(a: f64, b: f64, tau: f64) -> (f64, f64) {
    let z = a * tau;
    let e = (-2.0 * z).exp();
    // cosh z = e^z (1 + e^{-2z}) / 2, sinh z = e^z (1 - e^{-2z}) / 2
    let c = 0.5 * (1.0 + e);
    let s = -0.5 * (-2.0 * z).exp_m1();
    let d = c + b * s;
    (z + d.ln(), (s + b * c) / d)
}

pub fn closed_form_example1(t: f64, p: &SystemicRiskParams) -> Result<SystemicRiskSolution> {
    let sd = p.sqrt_delta()?;
    if !(p.lambda >= 0.0) {
        return Err(Error::InvalidArgument("temperature must be >= 0".into()));
    }
    let tau = p.horizon - t;
    let a = p.b_bar + 2.0 * p.i;
    let (ln_d, r) = hyperbolic_ratio(sd, (a + 2.0 * p.p) / sd, tau);
    let k = -0.5 * (a - sd * r);
    let g2 = 0.5 * p.gamma * p.gamma;
    let entropy = if p.lambda > 0.0 {
        0.5 * p.lambda * tau * (2.0 * PI * p.lambda).ln()
    } else {
        0.0
    };
    Ok(SystemicRiskSolution {
        k,
        r: g2 * ln_d - g2 * a * tau - entropy,
        phi: -2.0 * (k + p.i),
    })
}

/// Trading model data for the analytic solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradingParams {
    pub p: f64,
    pub h: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradingSolution {
    pub k: f64,
    pub r: f64,
    /// Feedback gain on `x - mubar`.
    pub phi: f64,
    /// Constant part of the policy mean.
    pub phi3: f64,
}

pub fn closed_form_example2(t: f64, p: &TradingParams) -> Result<TradingSolution> {
    if !(p.p > 0.0) {
        return Err(Error::InvalidArgument("P must be > 0".into()));
    }
    if !(p.lambda >= 0.0) {
        return Err(Error::InvalidArgument("temperature must be >= 0".into()));
    }
    let tau = p.horizon - t;
    let k = p.p / (1.0 + p.p * tau);
    let entropy = if p.lambda > 0.0 {
        0.5 * p.lambda * (PI * p.lambda).ln()
    } else {
        0.0
    };
    Ok(TradingSolution {
        k,
        r: p.gamma * p.gamma * (p.p * tau).ln_1p() - (p.h * p.h + entropy) * tau,
        phi: -k,
        phi3: -p.h,
    })
}
