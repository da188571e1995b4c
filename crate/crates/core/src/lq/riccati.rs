use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::env::LqCoefficients;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;

/// Riccati data `(K, Lambda, Y, R)` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiPoint {
    pub k: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub y: DVector<f64>,
    pub r: f64,
}

impl RiccatiPoint {
    fn axpy(&self, h: f64, d: &RiccatiPoint) -> RiccatiPoint {
        let mut out = RiccatiPoint {
            k: &self.k + &d.k * h,
            lambda: &self.lambda + &d.lambda * h,
            y: &self.y + &d.y * h,
            r: self.r + h * d.r,
        };
        out.symmetrise();
        out
    }

    fn symmetrise(&mut self) {
        self.k = (&self.k + self.k.transpose()) * 0.5;
        self.lambda = (&self.lambda + self.lambda.transpose()) * 0.5;
    }

    fn lerp(a: &RiccatiPoint, b: &RiccatiPoint, w: f64) -> RiccatiPoint {
        RiccatiPoint {
            k: &a.k * (1.0 - w) + &b.k * w,
            lambda: &a.lambda * (1.0 - w) + &b.lambda * w,
            y: &a.y * (1.0 - w) + &b.y * w,
            r: a.r * (1.0 - w) + b.r * w,
        }
    }
}

/// The feedback blocks `S, U, Uhat, O` built from a Riccati point.
#[derive(Debug, Clone)]
pub struct FeedbackBlocks {
    pub s: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub u_hat: DMatrix<f64>,
    pub o: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl FeedbackBlocks {
    pub fn new(c: &LqCoefficients, p: &RiccatiPoint, time: f64) -> Result<Self> {
        let ft = c.f.transpose();
        let ct = c.c.transpose();
        let s = &c.n + &ft * &p.k * &c.f;
        let s = (&s + s.transpose()) * 0.5;
        let u = &c.i + &ct * &p.k + &ft * &p.k * &c.d;
        let u_hat = c.i_hat() + &ct * &p.lambda + &ft * &p.k * c.d_hat();
        let o = &c.h + &ct * &p.y + &ft * &p.k * &c.gamma;
        let chol = Cholesky::new(s.clone()).ok_or_else(|| Error::AssumptionViolation {
            condition: "S = N + F'KF must stay positive definite".into(),
            time: Some(time),
        })?;
        Ok(Self {
            s,
            u,
            u_hat,
            o,
            chol,
        })
    }

    /// `S^{-1} A`.
    pub fn solve(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(a)
    }

    pub fn solve_vec(&self, a: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(a)
    }

    pub fn s_inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det_s(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

/// Entropy source `(lambda m / 2) log(2 pi) + (lambda / 2) log det((lambda / 2) S^{-1})`,
/// taken as 0 when `lambda = 0`.
pub fn entropy_source(lambda: f64, fb: &FeedbackBlocks) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let m = fb.s.nrows() as f64;
    0.5 * lambda * m * (2.0 * std::f64::consts::PI).ln()
        + 0.5 * lambda * (m * (0.5 * lambda).ln() - fb.log_det_s())
}

/// Time derivative of `(K, Lambda, Y, R)`.
fn derivative(c: &LqCoefficients, lambda: f64, p: &RiccatiPoint, time: f64) -> Result<RiccatiPoint> {
    let fb = FeedbackBlocks::new(c, p, time)?;
    let beta = c.beta;
    let (b_hat, d_hat) = (c.b_hat(), c.d_hat());

    let s_inv_u = fb.solve(&fb.u);
    let k_dot = &p.k * beta - &c.q - &p.k * &c.b - c.b.transpose() * &p.k
        - c.d.transpose() * &p.k * &c.d
        + fb.u.transpose() * s_inv_u;

    let s_inv_uh = fb.solve(&fb.u_hat);
    let l_dot = &p.lambda * beta - c.q_hat() - &p.lambda * &b_hat - b_hat.transpose() * &p.lambda
        - d_hat.transpose() * &p.k * &d_hat
        + fb.u_hat.transpose() * s_inv_uh;

    let s_inv_o = fb.solve_vec(&fb.o);
    let y_dot = &p.y * beta - &c.m - b_hat.transpose() * &p.y - d_hat.transpose() * &p.k * &c.gamma
        + fb.u_hat.transpose() * &s_inv_o;

    let r_dot = beta * p.r - (c.gamma.transpose() * &p.k * &c.gamma)[(0, 0)]
        + fb.o.dot(&s_inv_o)
        + entropy_source(lambda, &fb);

    Ok(RiccatiPoint {
        k: k_dot,
        lambda: l_dot,
        y: y_dot,
        r: r_dot,
    })
}

/// Riccati system solved on a grid, indexed by grid node.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    grid: TimeGrid,
    nodes: Vec<RiccatiPoint>,
    temperature: f64,
}

impl RiccatiSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn node(&self, k: usize) -> &RiccatiPoint {
        &self.nodes[k]
    }

    pub fn nodes(&self) -> &[RiccatiPoint] {
        &self.nodes
    }

    /// Linear interpolation between nodes; `t` is clamped to `[0, T]`.
    pub fn at(&self, t: f64) -> RiccatiPoint {
        let (k, w) = self.grid.locate(t);
        if w == 0.0 || k + 1 >= self.nodes.len() {
            return self.nodes[k.min(self.nodes.len() - 1)].clone();
        }
        RiccatiPoint::lerp(&self.nodes[k], &self.nodes[k + 1], w)
    }
}

/// Backward classical RK4 from the terminal condition `(P, P + Pbar, L, 0)`.
pub fn solve_riccati(coeffs: &LqCoefficients, lambda: f64, grid: TimeGrid) -> Result<RiccatiSolution> {
    coeffs.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "temperature must be finite and >= 0, got {lambda}"
        )));
    }
    let n = grid.n_steps();
    let h = grid.dt();
    let mut nodes = vec![
        RiccatiPoint {
            k: coeffs.p.clone(),
            lambda: coeffs.p_hat(),
            y: coeffs.l.clone(),
            r: 0.0,
        };
        n + 1
    ];
    nodes[n].symmetrise();
    for k in (0..n).rev() {
        let t1 = grid.t(k + 1);
        let x = &nodes[k + 1];
        // integrate backwards: X(t - h) = X(t) - h X'(t) + ...
        let d1 = derivative(coeffs, lambda, x, t1)?;
        let x2 = x.axpy(-0.5 * h, &d1);
        let d2 = derivative(coeffs, lambda, &x2, t1 - 0.5 * h)?;
        let x3 = x.axpy(-0.5 * h, &d2);
        let d3 = derivative(coeffs, lambda, &x3, t1 - 0.5 * h)?;
        let x4 = x.axpy(-h, &d3);
        let d4 = derivative(coeffs, lambda, &x4, t1 - h)?;
        let mut next = RiccatiPoint {
            k: &x.k - (&d1.k + &d2.k * 2.0 + &d3.k * 2.0 + &d4.k) * (h / 6.0),
            lambda: &x.lambda - (&d1.lambda + &d2.lambda * 2.0 + &d3.lambda * 2.0 + &d4.lambda) * (h / 6.0),
            y: &x.y - (&d1.y + &d2.y * 2.0 + &d3.y * 2.0 + &d4.y) * (h / 6.0),
            r: x.r - h / 6.0 * (d1.r + 2.0 * d2.r + 2.0 * d3.r + d4.r),
        };
        next.symmetrise();
        let finite = next.k.iter().chain(next.lambda.iter()).chain(next.y.iter()).all(|v| v.is_finite())
            && next.r.is_finite();
        if !finite {
            return Err(Error::NonFinite(format!("Riccati solution at t = {}", grid.t(k))));
        }
        FeedbackBlocks::new(coeffs, &next, grid.t(k))?;
        nodes[k] = next;
    }
    Ok(RiccatiSolution {
        grid,
        nodes,
        temperature: lambda,
    })
}
