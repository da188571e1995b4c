use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PSD_TOL: f64 = 1e-12;

/// Coefficients of the linear-quadratic mean-field model
///
/// ```text
/// b(x, mu, a)     = B x + Bbar mubar + C a
/// sigma(x, mu, a) = gamma + D x + Dbar mubar + F a          (scalar Brownian motion)
/// f(x, mu, a)     = x'Qx + mubar'Qbar mubar + a'Na + 2a'Ix + 2a'Ibar mubar + 2M.x + 2H.a
/// g(x, mu)        = x'Px + mubar'Pbar mubar + 2L.x
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LqCoefficients {
    pub b: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub d: DMatrix<f64>,
    pub d_bar: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub i: DMatrix<f64>,
    pub i_bar: DMatrix<f64>,
    pub m: DVector<f64>,
    pub h: DVector<f64>,
    pub p: DMatrix<f64>,
    pub p_bar: DMatrix<f64>,
    pub l: DVector<f64>,
    pub beta: f64,
}

impl LqCoefficients {
    /// All-zero model with `N = Id_m`.
    pub fn zeros(state_dim: usize, action_dim: usize) -> Self {
        let (d, m) = (state_dim, action_dim);
        Self {
            b: DMatrix::zeros(d, d),
            b_bar: DMatrix::zeros(d, d),
            c: DMatrix::zeros(d, m),
            gamma: DVector::zeros(d),
            d: DMatrix::zeros(d, d),
            d_bar: DMatrix::zeros(d, d),
            f: DMatrix::zeros(d, m),
            q: DMatrix::zeros(d, d),
            q_bar: DMatrix::zeros(d, d),
            n: DMatrix::identity(m, m),
            i: DMatrix::zeros(m, d),
            i_bar: DMatrix::zeros(m, d),
            m: DVector::zeros(d),
            h: DVector::zeros(m),
            p: DMatrix::zeros(d, d),
            p_bar: DMatrix::zeros(d, d),
            l: DVector::zeros(d),
            beta: 0.0,
        }
    }

    /// Mean-field systemic risk: `dX = Bbar(E[X] - X) dt + a dt + gamma dW`,
    /// cost `Q (x - mubar)^2 + a^2 / 2 + 2 a I (x - mubar)`, terminal `P (x - mubar)^2`.
    pub fn systemic_risk(b_bar: f64, i: f64, q: f64, p: f64, gamma: f64) -> Self {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        Self {
            b: s(-b_bar),
            b_bar: s(b_bar),
            c: s(1.0),
            gamma: DVector::from_element(1, gamma),
            q: s(q),
            q_bar: s(-q),
            n: s(0.5),
            i: s(i),
            i_bar: s(-i),
            p: s(p),
            p_bar: s(-p),
            ..Self::zeros(1, 1)
        }
    }

    /// Optimal trading: `dX = a dt + gamma dW`, cost `a^2 + 2 H a`, terminal `P Var(X_T)`.
    pub fn trading(p: f64, h: f64, gamma: f64) -> Self {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        Self {
            c: s(1.0),
            gamma: DVector::from_element(1, gamma),
            n: s(1.0),
            h: DVector::from_element(1, h),
            p: s(p),
            p_bar: s(-p),
            ..Self::zeros(1, 1)
        }
    }

    pub fn state_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn i_hat(&self) -> DMatrix<f64> {
        &self.i + &self.i_bar
    }
    pub fn b_hat(&self) -> DMatrix<f64> {
        &self.b + &self.b_bar
    }
    pub fn d_hat(&self) -> DMatrix<f64> {
        &self.d + &self.d_bar
    }
    pub fn q_hat(&self) -> DMatrix<f64> {
        &self.q + &self.q_bar
    }
    pub fn p_hat(&self) -> DMatrix<f64> {
        &self.p + &self.p_bar
    }

    /// Checks shapes, symmetry, and the well-posedness conditions (H1)/(H2)
    /// under which the Riccati system has a solution with `K, Lambda >= 0`.
    pub fn validate(&self) -> Result<()> {
        let (d, m) = (self.state_dim(), self.action_dim());
        let shapes: [(&str, &DMatrix<f64>, usize, usize); 13] = [
            ("B", &self.b, d, d),
            ("Bbar", &self.b_bar, d, d),
            ("C", &self.c, d, m),
            ("D", &self.d, d, d),
            ("Dbar", &self.d_bar, d, d),
            ("F", &self.f, d, m),
            ("Q", &self.q, d, d),
            ("Qbar", &self.q_bar, d, d),
            ("N", &self.n, m, m),
            ("I", &self.i, m, d),
            ("Ibar", &self.i_bar, m, d),
            ("P", &self.p, d, d),
            ("Pbar", &self.p_bar, d, d),
        ];
        for (name, mat, r, c) in shapes {
            if mat.shape() != (r, c) {
                return Err(Error::InvalidArgument(format!(
                    "{name} has shape {:?}, expected ({r}, {c})",
                    mat.shape()
                )));
            }
        }
        for (name, v, len) in [
            ("gamma", &self.gamma, d),
            ("M", &self.m, d),
            ("L", &self.l, d),
            ("H", &self.h, m),
        ] {
            if v.len() != len {
                return Err(Error::InvalidArgument(format!(
                    "{name} has length {}, expected {len}",
                    v.len()
                )));
            }
        }
        for (name, mat) in [
            ("Q", &self.q),
            ("Qbar", &self.q_bar),
            ("P", &self.p),
            ("Pbar", &self.p_bar),
            ("N", &self.n),
        ] {
            if (mat - mat.transpose()).amax() > 1e-12 * (1.0 + mat.amax()) {
                return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument("discount rate must be >= 0".into()));
        }

        let f_nonzero = self.f.amax() > 0.0;
        let n_pos = min_eigenvalue(&self.n) > PSD_TOL;
        let n_inv = if n_pos { self.n.clone().try_inverse() } else { None };

        let h1_i = n_inv.as_ref().is_some_and(|n_inv| {
            is_psd(&self.p) && is_psd(&(&self.q - self.i.transpose() * n_inv * &self.i))
        });
        let h1_ii = d == 1
            && m == 1
            && self.i.amax() == 0.0
            && f_nonzero
            && self.q[(0, 0)] >= 0.0
            && self.p[(0, 0)] > 0.0;
        if !(h1_i || h1_ii) {
            return Err(Error::AssumptionViolation {
                condition: "(H1): need N > 0, P >= 0, Q - I'N^-1 I >= 0 (or the scalar F != 0 case)"
                    .into(),
                time: None,
            });
        }

        let i_hat = self.i_hat();
        let q_hat = self.q_hat();
        let p_hat = self.p_hat();
        let h2_i = n_inv.as_ref().is_some_and(|n_inv| {
            is_psd(&p_hat) && is_psd(&(&q_hat - i_hat.transpose() * n_inv * &i_hat))
        });
        let h2_ii = i_hat.amax() == 0.0
            && f_nonzero
            && is_psd(&q_hat)
            && is_psd(&p_hat)
            && min_eigenvalue(&self.p) > 0.0;
        if !(h2_i || h2_ii) {
            return Err(Error::AssumptionViolation {
                condition:
                    "(H2): need N > 0, P + Pbar >= 0, (Q + Qbar) - Ihat'N^-1 Ihat >= 0 (or the F != 0 case)"
                        .into(),
                time: None,
            });
        }
        Ok(())
    }

    /// Drift `B x + Bbar mubar + C a`.
    pub fn drift(&self, x: &[f64], mu_bar: &[f64], a: &[f64]) -> Vec<f64> {
        let mut out = mat_vec(&self.b, x);
        add_mat_vec(&mut out, &self.b_bar, mu_bar);
        add_mat_vec(&mut out, &self.c, a);
        out
    }

    /// Diffusion vector `gamma + D x + Dbar mubar + F a`.
    pub fn diffusion(&self, x: &[f64], mu_bar: &[f64], a: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.gamma.iter().copied().collect();
        add_mat_vec(&mut out, &self.d, x);
        add_mat_vec(&mut out, &self.d_bar, mu_bar);
        add_mat_vec(&mut out, &self.f, a);
        out
    }

    pub fn running_cost(&self, x: &[f64], mu_bar: &[f64], a: &[f64]) -> f64 {
        quad(&self.q, x, x)
            + quad(&self.q_bar, mu_bar, mu_bar)
            + quad(&self.n, a, a)
            + 2.0 * quad(&self.i, a, x)
            + 2.0 * quad(&self.i_bar, a, mu_bar)
            + 2.0 * dot(self.m.as_slice(), x)
            + 2.0 * dot(self.h.as_slice(), a)
    }

    pub fn terminal_cost(&self, x: &[f64], mu_bar: &[f64]) -> f64 {
        quad(&self.p, x, x) + quad(&self.p_bar, mu_bar, mu_bar) + 2.0 * dot(self.l.as_slice(), x)
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

pub(crate) fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -PSD_TOL * (1.0 + m.amax())
}

/// `u' A v`.
pub(crate) fn quad(a: &DMatrix<f64>, u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            s += u[r] * a[(r, c)] * v[c];
        }
    }
    s
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn mat_vec(a: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.nrows()];
    add_mat_vec(&mut out, a, v);
    out
}

pub(crate) fn add_mat_vec(out: &mut [f64], a: &DMatrix<f64>, v: &[f64]) {
    for r in 0..a.nrows() {
        let mut s = 0.0;
        for c in 0..a.ncols() {
            s += a[(r, c)] * v[c];
        }
        out[r] += s;
    }
}
