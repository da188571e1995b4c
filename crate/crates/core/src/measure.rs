//! Weighted-atom estimate of the population law, updated by exponential
//! mixing `mu <- (1 - rho) mu + rho delta_x` across episodes.

use crate::error::{check_dim, Error, Result};

/// Atoms whose weight drops below this are folded into a single residual atom.
pub const COMPACTION_THRESHOLD: f64 = 1e-9;

const MIN_COMPACTION_LEN: usize = 64;
const RESCALE_BELOW: f64 = 1e-150;

/// Empirical probability measure on `R^d` stored as weighted atoms.
///
/// Weights are kept unnormalised with a shared lazy scale so that a mixing
/// update costs O(d) amortised regardless of the number of atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    raw_weights: Vec<f64>,
    scale: f64,
    mean: Vec<f64>,
    second_moment: f64,
    compacted_len: usize,
}

impl EmpiricalMeasure {
    /// Dirac mass at `x`.
    pub fn dirac(x: &[f64]) -> Self {
        Self {
            dim: x.len(),
            points: x.to_vec(),
            raw_weights: vec![1.0],
            scale: 1.0,
            mean: x.to_vec(),
            second_moment: norm_sq(x),
            compacted_len: 1,
        }
    }

    /// Build from explicit atoms; weights are normalised.
    pub fn from_atoms(atoms: &[(Vec<f64>, f64)]) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::InvalidArgument("measure needs at least one atom".into()))?;
        let dim = first.0.len();
        let total: f64 = atoms.iter().map(|(_, w)| *w).sum();
        if atoms.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) || !(total > 0.0) {
            return Err(Error::InvalidArgument(
                "atom weights must be nonnegative with positive sum".into(),
            ));
        }
        let mut points = Vec::with_capacity(dim * atoms.len());
        let mut raw_weights = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            check_dim("measure atom", dim, x.len())?;
            points.extend_from_slice(x);
            raw_weights.push(w / total);
        }
        let mut mu = Self {
            dim,
            points,
            raw_weights,
            scale: 1.0,
            mean: vec![0.0; dim],
            second_moment: 0.0,
            compacted_len: atoms.len(),
        };
        mu.recompute_moments();
        Ok(mu)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.raw_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_weights.is_empty()
    }

    /// `sum_i w_i x_i`.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `sum_i w_i |x_i|^2`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// Normalised atoms `(point, weight)`.
    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        let inv = 1.0 / self.raw_total();
        self.points
            .chunks_exact(self.dim.max(1))
            .zip(&self.raw_weights)
            .map(move |(x, w)| (x, w * inv))
    }

    pub fn weights(&self) -> Vec<f64> {
        let inv = 1.0 / self.raw_total();
        self.raw_weights.iter().map(|w| w * inv).collect()
    }

    // Rounding in the lazy scale makes `scale * sum(raw)` drift slightly from 1,
    // so reads renormalise against the actual total.
    fn raw_total(&self) -> f64 {
        self.raw_weights.iter().sum()
    }

    /// In-place mixing update with a single observation.
    pub fn update(&mut self, x: &[f64], rho: f64) -> Result<()> {
        self.update_batch(x, 1, rho)
    }

    /// Returns the updated measure, leaving `self` untouched.
    pub fn updated(&self, x: &[f64], rho: f64) -> Result<Self> {
        let mut next = self.clone();
        next.update(x, rho)?;
        Ok(next)
    }

    /// Mixing update with the empirical law of `count` points stored
    /// contiguously in `xs`: `mu <- (1 - rho) mu + rho / count * sum delta_{x_j}`.
    pub fn update_batch(&mut self, xs: &[f64], count: usize, rho: f64) -> Result<()> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mixing rate must lie in (0, 1], got {rho}"
            )));
        }
        if count == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        check_dim("measure update", self.dim * count, xs.len())?;
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measure update point".into()));
        }

        let inv = 1.0 / count as f64;
        let mut batch_mean = vec![0.0; self.dim];
        let mut batch_m2 = 0.0;
        for x in xs.chunks_exact(self.dim.max(1)) {
            for (m, v) in batch_mean.iter_mut().zip(x) {
                *m += v * inv;
            }
            batch_m2 += norm_sq(x) * inv;
        }

        if rho == 1.0 {
            self.points.clear();
            self.raw_weights.clear();
            self.scale = 1.0;
            self.compacted_len = 0;
        } else {
            self.scale *= 1.0 - rho;
            if self.scale < RESCALE_BELOW {
                self.fold_scale();
            }
        }
        let raw = rho * inv / self.scale;
        self.points.extend_from_slice(xs);
        self.raw_weights
            .extend(std::iter::repeat_n(raw, count));

        for (m, b) in self.mean.iter_mut().zip(&batch_mean) {
            *m = (1.0 - rho) * *m + rho * b;
        }
        self.second_moment = (1.0 - rho) * self.second_moment + rho * batch_m2;

        if self.len() >= MIN_COMPACTION_LEN.max(2 * self.compacted_len) {
            self.compact();
        }
        Ok(())
    }

    /// Merge atoms lighter than [`COMPACTION_THRESHOLD`] into one residual
    /// atom at their weighted mean, then renormalise.
    pub fn compact(&mut self) {
        self.fold_scale();
        let d = self.dim.max(1);
        let total: f64 = self.raw_weights.iter().sum();
        let mut light_w = 0.0;
        let mut light_x = vec![0.0; self.dim];
        let mut points = Vec::with_capacity(self.points.len());
        let mut weights = Vec::with_capacity(self.raw_weights.len());
        for (x, &w) in self.points.chunks_exact(d).zip(&self.raw_weights) {
            let w = w / total;
            if w < COMPACTION_THRESHOLD {
                light_w += w;
                for (acc, v) in light_x.iter_mut().zip(x) {
                    *acc += w * v;
                }
            } else {
                points.extend_from_slice(x);
                weights.push(w);
            }
        }
        if light_w > 0.0 {
            for v in &mut light_x {
                *v /= light_w;
            }
            points.extend_from_slice(&light_x);
            weights.push(light_w);
        }
        if weights.is_empty() {
            // every atom had zero mass, keep a point at the tracked mean
            points.extend_from_slice(&self.mean);
            weights.push(1.0);
        }
        self.points = points;
        self.raw_weights = weights;
        self.scale = 1.0;
        self.compacted_len = self.raw_weights.len();
    }

    /// Recompute the cached moments from the atoms.
    pub fn recompute_moments(&mut self) {
        let d = self.dim.max(1);
        let mut mean = vec![0.0; self.dim];
        let mut m2 = 0.0;
        let inv = 1.0 / self.raw_total();
        for (x, &w) in self.points.chunks_exact(d).zip(&self.raw_weights) {
            let w = w * inv;
            for (m, v) in mean.iter_mut().zip(x) {
                *m += w * v;
            }
            m2 += w * norm_sq(x);
        }
        self.mean = mean;
        self.second_moment = m2;
    }

    fn fold_scale(&mut self) {
        if self.scale != 1.0 {
            for w in &mut self.raw_weights {
                *w *= self.scale;
            }
            self.scale = 1.0;
        }
    }
}

/// Mean of a measure, `sum_i w_i x_i`.
pub fn measure_mean(mu: &EmpiricalMeasure) -> Vec<f64> {
    mu.mean().to_vec()
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}
