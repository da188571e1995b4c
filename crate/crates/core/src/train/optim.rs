use serde::{Deserialize, Serialize};

use crate::schedule::{apply_rate, Rate};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// `p += sign * rate * direction`.
    #[default]
    Sgd,
    /// Adam moments on the direction, step size from the rate schedule.
    Adam,
}

/// Applies update directions to one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Stepper {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Stepper {
    pub fn new(kind: Optimizer, n_params: usize) -> Self {
        let n = if kind == Optimizer::Adam { n_params } else { 0 };
        Self {
            kind,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    /// `sign = +1` ascends along `direction`, `-1` descends.
    pub fn apply(&mut self, params: &mut [f64], rate: &Rate, direction: &[f64], sign: f64) {
        match self.kind {
            Optimizer::Sgd => apply_rate(params, rate, direction, sign),
            Optimizer::Adam => {
                self.steps = self.steps.saturating_add(1);
                let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
                for (i, (p, g)) in params.iter_mut().zip(direction).enumerate() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let step = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
                    *p += sign * rate.component(i) * step;
                }
            }
        }
    }
}

/// Rescales `v` onto the L2 ball of radius `cap`; the direction is unchanged.
pub fn clip_norm(v: &mut [f64], cap: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > cap {
        let s = cap / norm;
        for x in v {
            *x *= s;
        }
    }
}
