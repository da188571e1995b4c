//! Offline (whole-episode) and online (per-step) actor-critic trainers.
//!
//! Both trainers see the environment only through [`Environment`] and keep a
//! per-node estimate of the population law that persists across episodes.

mod estimate;
mod optim;
mod rollout;
mod run;

#[cfg(test)]
mod tests;

pub use estimate::{
    offline_critic_delta, offline_critic_delta_batch, offline_policy_gradient, offline_policy_gradient_batch,
    online_deltas, temporal_difference, NextValue, OnlineDeltas,
};
pub use optim::{clip_norm, Optimizer, Stepper};
pub use rollout::{initial_measures, rollout, rollout_batch, EpisodeTrace, StepRecord};
pub use run::{train_offline, train_online};

use std::time::Duration;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::param::{Actor, Critic};
use crate::schedule::{Rate, Schedule};

/// Stream id reserved for training rollouts.
pub const TRAIN_STREAM: u64 = 1;

/// Which value closes the last temporal difference of the offline policy gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCritic {
    /// The observed terminal cost `g`.
    #[default]
    Observed,
    /// The critic at `T`.
    Learned,
}

/// How the per-node population law is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureMode {
    /// Each episode mixes its own state in before acting. Episodes of a
    /// minibatch see the law frozen at batch start and are folded in afterwards.
    #[default]
    PerEpisode,
    /// The whole minibatch at a node is mixed in at once and shared by all members.
    BatchEmpirical,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub episodes: u64,
    pub rho_s: Schedule<f64>,
    pub rho_e: Schedule<Rate>,
    pub rho_g: Schedule<Rate>,
    pub lambda: Schedule<f64>,
    pub minibatch: Schedule<usize>,
    pub beta: f64,
    /// L2 caps on the critic and actor update directions.
    pub clip_critic: Option<f64>,
    pub clip_actor: Option<f64>,
    pub seed: u64,
    pub terminal_critic: TerminalCritic,
    pub measure_mode: MeasureMode,
    pub optimizer: Optimizer,
    /// Control matrix `C` of the drift; enables the mean-field correction term.
    pub control_matrix: Option<DMatrix<f64>>,
    /// Every node's law starts as a Dirac mass here.
    pub initial_measure: Vec<f64>,
    /// Keep one report row every this many episodes (the last one is always kept).
    pub record_every: u64,
}

impl TrainConfig {
    /// Single-episode SGD with constant schedules and no mean-field correction.
    pub fn constant(episodes: u64, rho_s: f64, rho_e: f64, rho_g: f64, lambda: f64, state_dim: usize) -> Self {
        Self {
            episodes,
            rho_s: Schedule::constant(rho_s),
            rho_e: Schedule::constant(Rate::Scalar(rho_e)),
            rho_g: Schedule::constant(Rate::Scalar(rho_g)),
            lambda: Schedule::constant(lambda),
            minibatch: Schedule::constant(1),
            beta: 0.0,
            clip_critic: None,
            clip_actor: None,
            seed: 0,
            terminal_critic: TerminalCritic::Observed,
            measure_mode: MeasureMode::PerEpisode,
            optimizer: Optimizer::Sgd,
            control_matrix: None,
            initial_measure: vec![0.0; state_dim],
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.episodes == 0 {
            return bad("need at least one episode".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("discount rate must be finite and >= 0, got {}", self.beta));
        }
        for (name, clip) in [("critic", self.clip_critic), ("actor", self.clip_actor)] {
            if let Some(c) = clip {
                if !(c > 0.0) {
                    return bad(format!("{name} clip threshold must be positive, got {c}"));
                }
            }
        }
        if self.minibatch.breakpoints().iter().any(|b| b.value == 0) {
            return bad("minibatch size must be >= 1".into());
        }
        if let Some(b) = self.rho_s.breakpoints().iter().find(|b| !(b.value > 0.0 && b.value <= 1.0)) {
            return bad(format!("measure rate must lie in (0, 1], got {}", b.value));
        }
        if let Some(b) = self.lambda.breakpoints().iter().find(|b| !(b.value > 0.0) || !b.value.is_finite()) {
            return bad(format!("training temperature must be positive, got {}", b.value));
        }
        for sched in [&self.rho_s, &self.lambda] {
            sched.at(1)?;
        }
        self.rho_e.at(1)?;
        self.rho_g.at(1)?;
        self.minibatch.at(1)?;
        Ok(())
    }

    /// Checks the config against the environment and parametrisations it will drive.
    pub fn check_against(&self, env: &dyn Environment, actor: &dyn Actor, critic: &dyn Critic) -> Result<()> {
        self.validate()?;
        let d = env.state_dim();
        crate::error::check_dim("actor state dimension", d, actor.state_dim())?;
        crate::error::check_dim("critic state dimension", d, critic.state_dim())?;
        crate::error::check_dim("actor action dimension", env.action_dim(), actor.action_dim())?;
        crate::error::check_dim("initial measure", d, self.initial_measure.len())?;
        for b in self.rho_e.breakpoints() {
            b.value.check_len(critic.params().len())?;
        }
        for b in self.rho_g.breakpoints() {
            b.value.check_len(actor.params().len())?;
        }
        if let Some(c) = &self.control_matrix {
            if c.shape() != (d, env.action_dim()) {
                return Err(Error::DimensionMismatch {
                    context: "control matrix C",
                    expected: d * env.action_dim(),
                    got: c.len(),
                });
            }
            if critic.shell(0.0, *self.lambda.at(1)?).is_none() {
                return Err(Error::Unsupported(format!(
                    "mean-field correction needs an LQ-form critic, got {}",
                    critic.kind()
                )));
            }
        }
        Ok(())
    }
}

/// Hyperparameters in force for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSettings {
    pub lambda: f64,
    pub rho_s: f64,
    pub rho_e: Rate,
    pub rho_g: Rate,
    pub batch: usize,
}

impl EpisodeSettings {
    pub fn at(cfg: &TrainConfig, episode: u64) -> Result<Self> {
        Ok(Self {
            lambda: *cfg.lambda.at(episode)?,
            rho_s: *cfg.rho_s.at(episode)?,
            rho_e: cfg.rho_e.at(episode)?.clone(),
            rho_g: cfg.rho_g.at(episode)?.clone(),
            batch: *cfg.minibatch.at(episode)?,
        })
    }
}

/// One report row, taken after the updates of `episode`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub settings: EpisodeSettings,
    /// Batch average of `sum f dt + g`.
    pub cost: f64,
    /// Batch average of `sum (f + lambda log p) dt + g`.
    pub regularised_cost: f64,
    pub eta: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Why training stopped early. Parameters in the report are the last finite ones.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainAbort {
    pub episode: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<EpisodeRecord>,
    pub final_eta: Vec<f64>,
    pub final_theta: Vec<f64>,
    /// Mean of the estimated law at every node when training stopped.
    pub measure_means: Vec<Vec<f64>>,
    pub abort: Option<TrainAbort>,
    pub elapsed: Duration,
}

impl PartialEq for TrainReport {
    /// Wall-clock time is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
            && self.final_eta == other.final_eta
            && self.final_theta == other.final_theta
            && self.measure_means == other.measure_means
            && self.abort == other.abort
    }
}
