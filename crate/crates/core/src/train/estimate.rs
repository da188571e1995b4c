//! Sample estimators of the critic and actor update directions.

use nalgebra::DMatrix;

use super::rollout::{EpisodeTrace, StepRecord};
use super::TerminalCritic;
use crate::error::{check_dim, Error, Result};
use crate::param::{
    accumulate_h_cotangent, accumulate_score_cotangent, check_temperature, policy_variance, Actor, ActorCoefficients,
    Critic, CriticPoint, LqShell,
};

/// Critic values at one time for several `(x, mubar)` pairs, sharing one shell evaluation.
pub(crate) fn critic_values<'a>(
    critic: &dyn Critic,
    t: f64,
    lambda: f64,
    points: impl Iterator<Item = (&'a [f64], &'a [f64])>,
) -> Vec<f64> {
    match critic.shell(t, lambda) {
        Some(shell) => points.map(|(x, m)| shell.value(x, m)).collect(),
        None => points.map(|(x, m)| critic.value(t, x, m, lambda)).collect(),
    }
}

fn shell_for_correction(critic: &dyn Critic, t: f64, lambda: f64) -> Result<LqShell> {
    critic.shell(t, lambda).ok_or_else(|| {
        Error::Unsupported(format!(
            "mean-field correction needs an LQ-form critic, got {}",
            critic.kind()
        ))
    })
}

fn check_batch(traces: &[EpisodeTrace]) -> Result<(usize, f64)> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch of traces".into()))?;
    for tr in traces {
        check_dim("trace length", first.len(), tr.len())?;
        if tr.lambda != first.lambda {
            return Err(Error::InvalidArgument("traces of one batch must share the temperature".into()));
        }
    }
    Ok((first.len(), first.lambda))
}

/// Batch average of the offline critic direction
/// `sum_k (G_k - J(t_k, X_k, mu_k)) grad J(t_k, X_k, mu_k) dt`, where `G_k` is
/// the discounted regularised cost-to-go, built by a backward running sum.
pub fn offline_critic_delta_batch(
    traces: &[EpisodeTrace],
    critic: &dyn Critic,
    beta: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let (n, lambda) = check_batch(traces)?;
    let disc = (-beta * dt).exp();
    let scale = dt / traces.len() as f64;
    let cost_to_go: Vec<Vec<f64>> = traces
        .iter()
        .map(|tr| {
            let mut g = tr.g;
            let mut out = vec![0.0; n];
            for k in (0..n).rev() {
                g = tr.steps[k].regularised_cost(lambda) * dt + disc * g;
                out[k] = g;
            }
            out
        })
        .collect();
    let mut delta = vec![0.0; critic.params().len()];
    for k in 0..n {
        let t = traces[0].steps[k].t;
        let values = critic_values(critic, t, lambda, traces.iter().map(|tr| (&tr.steps[k].x[..], &tr.steps[k].mu_bar[..])));
        let points: Vec<CriticPoint<'_>> = traces
            .iter()
            .zip(&cost_to_go)
            .zip(values)
            .map(|((tr, g), v)| CriticPoint {
                x: &tr.steps[k].x,
                mu_bar: &tr.steps[k].mu_bar,
                weight: (g[k] - v) * scale,
            })
            .collect();
        critic.accumulate_grad(t, lambda, &points, &mut delta);
    }
    Ok(delta)
}

pub fn offline_critic_delta(trace: &EpisodeTrace, critic: &dyn Critic, beta: f64, dt: f64) -> Result<Vec<f64>> {
    offline_critic_delta_batch(std::slice::from_ref(trace), critic, beta, dt)
}

/// Batch average of the offline policy gradient
/// `sum_k e^{-beta t_k} [score_k (J_{k+1} - J_k + (f_k + lambda log p_k - beta J_k) dt) + H_k dt]`.
///
/// The last increment closes on `g` or on the critic at `T` per `terminal`.
/// The mean-field correction `H` is added when `control` is given.
#[allow(clippy::too_many_arguments)]
pub fn offline_policy_gradient_batch(
    traces: &[EpisodeTrace],
    critic: &dyn Critic,
    actor: &dyn Actor,
    beta: f64,
    dt: f64,
    terminal: TerminalCritic,
    control: Option<&DMatrix<f64>>,
) -> Result<Vec<f64>> {
    let (n, lambda) = check_batch(traces)?;
    check_temperature(lambda)?;
    let var = policy_variance(actor, lambda);
    let inv_b = 1.0 / traces.len() as f64;
    // values[k][j] = J(t_k, X^j_k, mu^j_k) for k = 0..=n
    let values: Vec<Vec<f64>> = (0..=n)
        .map(|k| {
            if k == n && terminal == TerminalCritic::Observed {
                return traces.iter().map(|tr| tr.g).collect();
            }
            let t = traces[0].node(k).0;
            critic_values(critic, t, lambda, traces.iter().map(|tr| {
                let (_, x, m) = tr.node(k);
                (x, m)
            }))
        })
        .collect();
    let mut grad = vec![0.0; actor.params().len()];
    for k in 0..n {
        let t = traces[0].steps[k].t;
        let disc = (-beta * t).exp();
        let coeffs = actor.coefficients(t);
        let shell = control.map(|_| shell_for_correction(critic, t, lambda)).transpose()?;
        let mut cot = ActorCoefficients::zeros(actor.state_dim(), actor.action_dim());
        for (j, tr) in traces.iter().enumerate() {
            let s = &tr.steps[k];
            let (j0, j1) = (values[k][j], values[k + 1][j]);
            let w = disc * inv_b * (j1 - j0 + (s.regularised_cost(lambda) - beta * j0) * dt);
            accumulate_score_cotangent(&coeffs, var, &s.x, &s.mu_bar, &s.a, w, &mut cot);
            if let (Some(c), Some(shell)) = (control, &shell) {
                accumulate_h_cotangent(shell, c, &s.x, &s.mu_bar, disc * inv_b * dt, &mut cot);
            }
        }
        actor.backprop(t, &cot, &mut grad);
    }
    Ok(grad)
}

pub fn offline_policy_gradient(
    trace: &EpisodeTrace,
    critic: &dyn Critic,
    actor: &dyn Actor,
    beta: f64,
    dt: f64,
    terminal: TerminalCritic,
    control: Option<&DMatrix<f64>>,
) -> Result<Vec<f64>> {
    offline_policy_gradient_batch(std::slice::from_ref(trace), critic, actor, beta, dt, terminal, control)
}

/// Where the temporal difference of one online step lands.
#[derive(Debug, Clone, Copy)]
pub enum NextValue<'a> {
    /// Critic at the next node.
    State { t: f64, x: &'a [f64], mu_bar: &'a [f64] },
    /// Observed terminal cost, used in place of the critic at `T`.
    Terminal(f64),
}

/// `J(t_{k+1}) - J(t_k) + (f + lambda log p - beta J(t_k)) dt` for one record.
/// Defined for `lambda >= 0`.
pub fn temporal_difference(
    record: &StepRecord,
    next: NextValue<'_>,
    critic: &dyn Critic,
    lambda: f64,
    beta: f64,
    dt: f64,
) -> f64 {
    let v0 = critic.value(record.t, &record.x, &record.mu_bar, lambda);
    let v1 = match next {
        NextValue::Terminal(g) => g,
        NextValue::State { t, x, mu_bar } => critic.value(t, x, mu_bar, lambda),
    };
    v1 - v0 + (record.regularised_cost(lambda) - beta * v0) * dt
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineDeltas {
    /// Temporal differences, one per member.
    pub td: Vec<f64>,
    /// Batch average of `td grad J(t_k)`.
    pub critic: Vec<f64>,
    /// Batch average of `td score + H dt`.
    pub actor: Vec<f64>,
}

/// Online directions for one time step of a batch of members sharing `t_k`:
/// `td = J(t_{k+1}) - J(t_k) + (f + lambda log p - beta J(t_k)) dt`.
#[allow(clippy::too_many_arguments)]
pub fn online_deltas(
    records: &[&StepRecord],
    next: &[NextValue<'_>],
    critic: &dyn Critic,
    actor: &dyn Actor,
    lambda: f64,
    beta: f64,
    dt: f64,
    control: Option<&DMatrix<f64>>,
) -> Result<OnlineDeltas> {
    check_temperature(lambda)?;
    check_dim("online next values", records.len(), next.len())?;
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch of step records".into()))?;
    let t = first.t;
    let inv_b = 1.0 / records.len() as f64;
    let shell = critic.shell(t, lambda);
    let j0: Vec<f64> = match &shell {
        Some(s) => records.iter().map(|r| s.value(&r.x, &r.mu_bar)).collect(),
        None => records.iter().map(|r| critic.value(t, &r.x, &r.mu_bar, lambda)).collect(),
    };
    let mut next_shell: Option<(f64, Option<LqShell>)> = None;
    let mut td = Vec::with_capacity(records.len());
    for ((r, nv), v0) in records.iter().zip(next).zip(&j0) {
        let v1 = match *nv {
            NextValue::Terminal(g) => g,
            NextValue::State { t: t1, x, mu_bar } => {
                if next_shell.as_ref().map(|(s, _)| *s) != Some(t1) {
                    next_shell = Some((t1, critic.shell(t1, lambda)));
                }
                match &next_shell.as_ref().unwrap().1 {
                    Some(s) => s.value(x, mu_bar),
                    None => critic.value(t1, x, mu_bar, lambda),
                }
            }
        };
        td.push(v1 - v0 + (r.regularised_cost(lambda) - beta * v0) * dt);
    }

    let points: Vec<CriticPoint<'_>> = records
        .iter()
        .zip(&td)
        .map(|(r, d)| CriticPoint {
            x: &r.x,
            mu_bar: &r.mu_bar,
            weight: d * inv_b,
        })
        .collect();
    let mut critic_dir = vec![0.0; critic.params().len()];
    critic.accumulate_grad(t, lambda, &points, &mut critic_dir);

    let var = policy_variance(actor, lambda);
    let coeffs = actor.coefficients(t);
    let mut cot = ActorCoefficients::zeros(actor.state_dim(), actor.action_dim());
    let h_shell = match control {
        Some(_) => Some(match shell {
            Some(s) => s,
            None => shell_for_correction(critic, t, lambda)?,
        }),
        None => None,
    };
    for (r, d) in records.iter().zip(&td) {
        accumulate_score_cotangent(&coeffs, var, &r.x, &r.mu_bar, &r.a, d * inv_b, &mut cot);
        if let (Some(c), Some(s)) = (control, &h_shell) {
            accumulate_h_cotangent(s, c, &r.x, &r.mu_bar, inv_b * dt, &mut cot);
        }
    }
    let mut actor_dir = vec![0.0; actor.params().len()];
    actor.backprop(t, &cot, &mut actor_dir);
    Ok(OnlineDeltas {
        td,
        critic: critic_dir,
        actor: actor_dir,
    })
}
