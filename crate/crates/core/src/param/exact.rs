//! Parametrisations matching the analytic solutions of the two scalar models.

use super::{
    clamp_positive, sysrisk_entropy_rate, trading_entropy_rate, Actor, ActorCoefficients, Critic, LqShell,
};

/// Hyperbolic terms of `D = cosh(a tau) + b sinh(a tau)`, overflow safe.
#[derive(Debug, Clone, Copy)]
struct Hyper {
    ln_d: f64,
    /// `(sinh + b cosh) / D`
    r: f64,
    /// `1 / D^2`
    inv_d2: f64,
    /// `sinh / D`
    s_over_d: f64,
}

fn hyper(a: f64, b: f64, tau: f64) -> Hyper {
    let z = a * tau;
    let e = (-2.0 * z).exp();
    let c = 0.5 * (1.0 + e);
    let s = -0.5 * (-2.0 * z).exp_m1();
    let d = c + b * s;
    Hyper {
        ln_d: z + d.ln(),
        r: (s + b * c) / d,
        inv_d2: (-2.0 * z).exp() / (d * d),
        s_over_d: s / d,
    }
}

/// Systemic-risk critic `K = -(eta3 - eta1 r) / 2`,
/// `R = eta4 ln D - eta3 eta4 tau - (lambda tau / 2) log(2 pi lambda)`,
/// with `r`, `D` built from `(eta1, eta2)`. All components kept positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSysRiskCritic {
    pub eta: [f64; 4],
    pub horizon: f64,
}

impl ExactSysRiskCritic {
    pub fn new(eta: [f64; 4], horizon: f64) -> Self {
        Self { eta, horizon }
    }
}

impl Critic for ExactSysRiskCritic {
    fn kind(&self) -> &'static str {
        "exact_sysrisk"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn params(&self) -> &[f64] {
        &self.eta
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.eta
    }
    fn box_clone(&self) -> Box<dyn Critic> {
        Box::new(self.clone())
    }
    fn project(&mut self) {
        clamp_positive(&mut self.eta);
    }

    fn shell(&self, t: f64, lambda: f64) -> Option<LqShell> {
        let [e1, e2, e3, e4] = self.eta;
        let tau = self.horizon - t;
        let h = hyper(e1, e2, tau);
        let mut s = LqShell::zeros(1);
        s.k[0] = -0.5 * (e3 - e1 * h.r);
        s.r = e4 * h.ln_d - e3 * e4 * tau - sysrisk_entropy_rate(lambda) * tau;
        Some(s)
    }

    fn shell_backprop(&self, t: f64, _lambda: f64, cot: &LqShell, out: &mut [f64]) {
        let [e1, e2, e3, e4] = self.eta;
        let tau = self.horizon - t;
        let h = hyper(e1, e2, tau);
        let (gk, gr) = (cot.k[0], cot.r);
        out[0] += gk * 0.5 * (h.r + e1 * tau * (1.0 - h.r * h.r)) + gr * e4 * tau * h.r;
        out[1] += gk * 0.5 * e1 * h.inv_d2 + gr * e4 * h.s_over_d;
        out[2] += -0.5 * gk - gr * e4 * tau;
        out[3] += gr * (h.ln_d - e3 * tau);
    }
}

/// Systemic-risk actor: feedback `phi (x - mubar)` with
/// `phi = theta3 - theta1 r(theta1, theta2)` and variance `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSysRiskActor {
    pub theta: [f64; 3],
    pub horizon: f64,
}

impl ExactSysRiskActor {
    pub fn new(theta: [f64; 3], horizon: f64) -> Self {
        Self { theta, horizon }
    }

    pub fn phi(&self, t: f64) -> f64 {
        let [t1, t2, t3] = self.theta;
        t3 - t1 * hyper(t1, t2, self.horizon - t).r
    }
}

impl Actor for ExactSysRiskActor {
    fn kind(&self) -> &'static str {
        "exact_sysrisk"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
    fn box_clone(&self) -> Box<dyn Actor> {
        Box::new(self.clone())
    }
    fn variance_factor(&self) -> f64 {
        1.0
    }
    fn project(&mut self) {
        clamp_positive(&mut self.theta);
    }

    fn coefficients(&self, t: f64) -> ActorCoefficients {
        let phi = self.phi(t);
        ActorCoefficients {
            state_dim: 1,
            action_dim: 1,
            phi1: vec![phi],
            phi2: vec![-phi],
            phi3: vec![0.0],
        }
    }

    fn backprop(&self, t: f64, cot: &ActorCoefficients, out: &mut [f64]) {
        let [t1, t2, _] = self.theta;
        let tau = self.horizon - t;
        let h = hyper(t1, t2, tau);
        let g = cot.phi1[0] - cot.phi2[0];
        out[0] -= g * (h.r + t1 * tau * (1.0 - h.r * h.r));
        out[1] -= g * t1 * h.inv_d2;
        out[2] += g;
    }
}

/// Trading critic `K = eta1 / (1 + eta1 tau)`,
/// `R = eta2 ln(1 + eta1 tau) - (eta3 + (lambda / 2) log(pi lambda)) tau`.
/// All components kept positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTradingCritic {
    pub eta: [f64; 3],
    pub horizon: f64,
}

impl ExactTradingCritic {
    pub fn new(eta: [f64; 3], horizon: f64) -> Self {
        Self { eta, horizon }
    }
}

impl Critic for ExactTradingCritic {
    fn kind(&self) -> &'static str {
        "exact_trading"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn params(&self) -> &[f64] {
        &self.eta
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.eta
    }
    fn box_clone(&self) -> Box<dyn Critic> {
        Box::new(self.clone())
    }
    fn project(&mut self) {
        clamp_positive(&mut self.eta);
    }

    fn shell(&self, t: f64, lambda: f64) -> Option<LqShell> {
        let [e1, e2, e3] = self.eta;
        let tau = self.horizon - t;
        let mut s = LqShell::zeros(1);
        s.k[0] = e1 / (1.0 + e1 * tau);
        s.r = e2 * (e1 * tau).ln_1p() - (e3 + trading_entropy_rate(lambda)) * tau;
        Some(s)
    }

    fn shell_backprop(&self, t: f64, _lambda: f64, cot: &LqShell, out: &mut [f64]) {
        let [e1, e2, _] = self.eta;
        let tau = self.horizon - t;
        let den = 1.0 + e1 * tau;
        let (gk, gr) = (cot.k[0], cot.r);
        out[0] += gk / (den * den) + gr * e2 * tau / den;
        out[1] += gr * (e1 * tau).ln_1p();
        out[2] -= gr * tau;
    }
}

/// Trading actor: mean `-theta1 / (1 + theta1 tau) (x - mubar) - theta2`, variance `lambda / 2`.
/// Only `theta1` is sign constrained.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTradingActor {
    pub theta: [f64; 2],
    pub horizon: f64,
}

impl ExactTradingActor {
    pub fn new(theta: [f64; 2], horizon: f64) -> Self {
        Self { theta, horizon }
    }

    pub fn phi(&self, t: f64) -> f64 {
        -self.theta[0] / (1.0 + self.theta[0] * (self.horizon - t))
    }
}

impl Actor for ExactTradingActor {
    fn kind(&self) -> &'static str {
        "exact_trading"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
    fn box_clone(&self) -> Box<dyn Actor> {
        Box::new(self.clone())
    }
    fn variance_factor(&self) -> f64 {
        0.5
    }
    fn project(&mut self) {
        clamp_positive(&mut self.theta[..1]);
    }

    fn coefficients(&self, t: f64) -> ActorCoefficients {
        let phi = self.phi(t);
        ActorCoefficients {
            state_dim: 1,
            action_dim: 1,
            phi1: vec![phi],
            phi2: vec![-phi],
            phi3: vec![-self.theta[1]],
        }
    }

    fn backprop(&self, t: f64, cot: &ActorCoefficients, out: &mut [f64]) {
        let den = 1.0 + self.theta[0] * (self.horizon - t);
        out[0] -= (cot.phi1[0] - cot.phi2[0]) / (den * den);
        out[1] -= cot.phi3[0];
    }
}
