//! Polynomial-in-time LQ parametrisations for models without a closed form.

use super::{Actor, ActorCoefficients, Critic, LqShell};

fn powers(tau: f64, degree: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(degree + 1);
    let mut v = 1.0;
    for _ in 0..=degree {
        p.push(v);
        v *= tau;
    }
    p
}

/// `sum_j c_j tau^j` for `len` outputs stored as `degree + 1` consecutive blocks.
fn poly_eval(params: &[f64], len: usize, pw: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (j, p) in pw.iter().enumerate() {
        for (o, c) in out.iter_mut().zip(&params[j * len..(j + 1) * len]) {
            *o += p * c;
        }
    }
    out
}

fn poly_backprop(out: &mut [f64], len: usize, pw: &[f64], cot: &[f64]) {
    for (j, p) in pw.iter().enumerate() {
        for (o, g) in out[j * len..(j + 1) * len].iter_mut().zip(cot) {
            *o += p * g;
        }
    }
}

fn sym(a: &[f64], d: usize) -> Vec<f64> {
    (0..d * d)
        .map(|ij| {
            let (i, j) = (ij / d, ij % d);
            0.5 * (a[i * d + j] + a[j * d + i])
        })
        .collect()
}

/// LQ-form critic with `K, Lambda, Y, R` polynomials in `tau = T - t`.
///
/// Layout: `K` coefficients (`(degree + 1) d^2`), `R` (`degree + 1`), then
/// `Lambda` and `Y` unless centred. `K`, `Lambda` are symmetrised.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCritic {
    dim: usize,
    degree: usize,
    centred: bool,
    horizon: f64,
    params: Vec<f64>,
}

impl QuadraticCritic {
    pub fn new(dim: usize, degree: usize, centred: bool, horizon: f64) -> Self {
        let per = dim * dim + 1 + if centred { 0 } else { dim * dim + dim };
        Self {
            dim,
            degree,
            centred,
            horizon,
            params: vec![0.0; per * (degree + 1)],
        }
    }

    fn offsets(&self) -> [usize; 4] {
        let (d, n) = (self.dim, self.degree + 1);
        let r = n * d * d;
        let l = r + n;
        let y = l + n * d * d;
        [0, r, l, y]
    }
}

impl Critic for QuadraticCritic {
    fn kind(&self) -> &'static str {
        "quadratic_lq"
    }
    fn state_dim(&self) -> usize {
        self.dim
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

    fn shell(&self, t: f64, _lambda: f64) -> Option<LqShell> {
        let d = self.dim;
        let pw = powers(self.horizon - t, self.degree);
        let [ko, ro, lo, yo] = self.offsets();
        let mut s = LqShell::zeros(d);
        s.k = sym(&poly_eval(&self.params[ko..], d * d, &pw), d);
        s.r = poly_eval(&self.params[ro..], 1, &pw)[0];
        if !self.centred {
            s.lambda = sym(&poly_eval(&self.params[lo..], d * d, &pw), d);
            s.y = poly_eval(&self.params[yo..], d, &pw);
        }
        Some(s)
    }

    fn shell_backprop(&self, t: f64, _lambda: f64, cot: &LqShell, out: &mut [f64]) {
        let d = self.dim;
        let pw = powers(self.horizon - t, self.degree);
        let [ko, ro, lo, yo] = self.offsets();
        poly_backprop(&mut out[ko..], d * d, &pw, &sym(&cot.k, d));
        poly_backprop(&mut out[ro..], 1, &pw, &[cot.r]);
        if !self.centred {
            poly_backprop(&mut out[lo..], d * d, &pw, &sym(&cot.lambda, d));
            poly_backprop(&mut out[yo..], d, &pw, &cot.y);
        }
    }
}

/// Gaussian actor with `phi1, phi2, phi3` polynomials in `tau = T - t`.
///
/// Layout: `phi1` coefficients (`(degree + 1) m d`), `phi2` (same), `phi3` (`(degree + 1) m`).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticActor {
    state_dim: usize,
    action_dim: usize,
    degree: usize,
    horizon: f64,
    variance_factor: f64,
    params: Vec<f64>,
}

impl QuadraticActor {
    pub fn new(state_dim: usize, action_dim: usize, degree: usize, horizon: f64, variance_factor: f64) -> Self {
        let per = 2 * state_dim * action_dim + action_dim;
        Self {
            state_dim,
            action_dim,
            degree,
            horizon,
            variance_factor,
            params: vec![0.0; per * (degree + 1)],
        }
    }

    fn offsets(&self) -> [usize; 3] {
        let md = self.state_dim * self.action_dim;
        let n = self.degree + 1;
        [0, n * md, 2 * n * md]
    }
}

impl Actor for QuadraticActor {
    fn kind(&self) -> &'static str {
        "quadratic_lq"
    }
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn action_dim(&self) -> usize {
        self.action_dim
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
        self.variance_factor
    }

    fn coefficients(&self, t: f64) -> ActorCoefficients {
        let md = self.state_dim * self.action_dim;
        let pw = powers(self.horizon - t, self.degree);
        let [a, b, c] = self.offsets();
        ActorCoefficients {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            phi1: poly_eval(&self.params[a..], md, &pw),
            phi2: poly_eval(&self.params[b..], md, &pw),
            phi3: poly_eval(&self.params[c..], self.action_dim, &pw),
        }
    }

    fn backprop(&self, t: f64, cot: &ActorCoefficients, out: &mut [f64]) {
        let md = self.state_dim * self.action_dim;
        let pw = powers(self.horizon - t, self.degree);
        let [a, b, c] = self.offsets();
        poly_backprop(&mut out[a..], md, &pw, &cot.phi1);
        poly_backprop(&mut out[b..], md, &pw, &cot.phi2);
        poly_backprop(&mut out[c..], self.action_dim, &pw, &cot.phi3);
    }
}
