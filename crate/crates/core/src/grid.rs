use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform discretisation `t_k = k * dt`, `k = 0..=n_steps`, of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Time of node `k`. The last node is exactly the horizon.
    pub fn t(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |k| self.t(k))
    }

    /// Index of the last node at or before `t`, clamped to `[0, n_steps - 1]`,
    /// together with the fractional position inside that interval.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let u = (t / self.dt()).clamp(0.0, self.n_steps as f64);
        let k = (u.floor() as usize).min(self.n_steps - 1);
        (k, u - k as f64)
    }
}
