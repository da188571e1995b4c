use crate::env::LqCoefficients;
use crate::error::{check_dim, Error, Result};
use crate::grid::TimeGrid;
use crate::lq::{optimal_policy, RiccatiSolution};
use crate::param::{Actor, Critic};

/// Learnt-vs-benchmark functions, one row per grid node.
///
/// Columns are `t` followed by `<name>_learnt, <name>_exact, <name>_gap` for
/// each of `K`, `R`, `phi1`, `phi2`, `phi3`; matrix entries get `_i_j` suffixes
/// when the dimension exceeds one.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CurveTable {
    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no curve column {name:?}")))
    }

    /// Values of one column over the grid.
    pub fn series(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[c]).collect())
    }

    /// Largest `|learnt - exact|` of a quantity over nodes with `t <= t_max`.
    pub fn sup_gap(&self, name: &str, t_max: f64) -> Result<f64> {
        let c = self.column(&format!("{name}_gap"))?;
        Ok(self
            .rows
            .iter()
            .filter(|r| r[0] <= t_max + 1e-12)
            .map(|r| r[c])
            .fold(0.0, f64::max))
    }

    /// Largest `|exact|` of a quantity over nodes with `t <= t_max`.
    pub fn sup_exact(&self, name: &str, t_max: f64) -> Result<f64> {
        let c = self.column(&format!("{name}_exact"))?;
        Ok(self
            .rows
            .iter()
            .filter(|r| r[0] <= t_max + 1e-12)
            .map(|r| r[c].abs())
            .fold(0.0, f64::max))
    }
}

fn entry_names(base: &str, rows: usize, cols: usize) -> Vec<String> {
    if rows * cols == 1 {
        return vec![base.to_string()];
    }
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| if cols == 1 { format!("{base}_{i}") } else { format!("{base}_{i}_{j}") }))
        .collect()
}

/// Tabulates the critic shell and actor coefficients against the benchmark
/// value and optimal policy on `grid`. The critic is read at the benchmark temperature.
pub fn curve_export(
    sol: &RiccatiSolution,
    coeffs: &LqCoefficients,
    critic: &dyn Critic,
    actor: &dyn Actor,
    grid: &TimeGrid,
) -> Result<CurveTable> {
    let (d, m) = (coeffs.state_dim(), coeffs.action_dim());
    check_dim("critic state dimension", d, critic.state_dim())?;
    check_dim("actor state dimension", d, actor.state_dim())?;
    check_dim("actor action dimension", m, actor.action_dim())?;
    let lambda = sol.temperature();
    let policy = optimal_policy(sol, coeffs, lambda)?;

    let mut names = entry_names("K", d, d);
    names.push("R".into());
    names.extend(entry_names("phi1", m, d));
    names.extend(entry_names("phi2", m, d));
    names.extend(entry_names("phi3", m, 1));
    let mut header = vec!["t".to_string()];
    for n in &names {
        header.extend([format!("{n}_learnt"), format!("{n}_exact"), format!("{n}_gap")]);
    }

    let mut rows = Vec::with_capacity(grid.n_steps() + 1);
    for t in grid.nodes() {
        let shell = critic.shell(t, lambda).ok_or_else(|| {
            Error::Unsupported(format!("curve export needs an LQ-form critic, got {}", critic.kind()))
        })?;
        let bench = sol.at(t);
        let learnt_actor = actor.coefficients(t);
        let opt = policy.coefficients_at(t)?;
        let mut learnt: Vec<f64> = shell.k.clone();
        learnt.push(shell.r);
        learnt.extend(&learnt_actor.phi1);
        learnt.extend(&learnt_actor.phi2);
        learnt.extend(&learnt_actor.phi3);
        let row_major = |a: &nalgebra::DMatrix<f64>| a.transpose().as_slice().to_vec();
        let mut exact: Vec<f64> = row_major(&bench.k);
        exact.push(bench.r);
        exact.extend(row_major(&opt.phi1));
        exact.extend(row_major(&opt.phi2));
        exact.extend(opt.phi3.iter());
        let mut row = vec![t];
        for (l, e) in learnt.iter().zip(&exact) {
            row.extend([*l, *e, (l - e).abs()]);
        }
        rows.push(row);
    }
    Ok(CurveTable { header, rows })
}
