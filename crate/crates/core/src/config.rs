//! Run configuration: one TOML document describing the model, the
//! parametrisations, the trainer, the evaluation protocol and the benchmark.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{Environment, GenericLq, InitialLaw, LqCoefficients, SystemicRisk, Trading};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::grid::TimeGrid;
use crate::param::{
    Actor, Critic, ExactSysRiskActor, ExactSysRiskCritic, ExactTradingActor, ExactTradingCritic, FreeMlpCritic,
    NnActor, NnShellCritic, Phi3Mode, QuadraticActor, QuadraticCritic,
};
use crate::rng::{Rng, RngStream};
use crate::schedule::{Rate, Schedule};
use crate::train::{MeasureMode, Optimizer, TerminalCritic, TrainConfig};

/// Stream id for random parameter initialisation; the actor draws first, then the critic.
pub const INIT_STREAM: u64 = 99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub critic: CriticConfig,
    pub actor: ActorConfig,
    pub train: TrainBlock,
    #[serde(default)]
    pub eval: EvalBlock,
    #[serde(default)]
    pub benchmark: BenchmarkBlock,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    SystemicRisk {
        horizon: f64,
        n_steps: usize,
        b_bar: f64,
        i: f64,
        q: f64,
        p: f64,
        gamma: f64,
        initial: InitialLaw,
        /// Centre dynamics and costs on the known `E[X_0]` instead of the estimate.
        #[serde(default)]
        oracle_mean: bool,
    },
    Trading {
        horizon: f64,
        n_steps: usize,
        p: f64,
        h: f64,
        gamma: f64,
        initial: InitialLaw,
    },
    GenericLq {
        horizon: f64,
        n_steps: usize,
        initial: InitialLaw,
        coefficients: GenericCoefficients,
    },
}

/// Coefficients of the general model; omitted entries are zero (`N` defaults to the identity).
/// Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericCoefficients {
    pub state_dim: usize,
    pub action_dim: usize,
    pub b: Option<Vec<Vec<f64>>>,
    pub b_bar: Option<Vec<Vec<f64>>>,
    pub c: Option<Vec<Vec<f64>>>,
    pub gamma: Option<Vec<f64>>,
    pub d: Option<Vec<Vec<f64>>>,
    pub d_bar: Option<Vec<Vec<f64>>>,
    pub f: Option<Vec<Vec<f64>>>,
    pub q: Option<Vec<Vec<f64>>>,
    pub q_bar: Option<Vec<Vec<f64>>>,
    pub n: Option<Vec<Vec<f64>>>,
    pub i: Option<Vec<Vec<f64>>>,
    pub i_bar: Option<Vec<Vec<f64>>>,
    pub m: Option<Vec<f64>>,
    pub h: Option<Vec<f64>>,
    pub p: Option<Vec<Vec<f64>>>,
    pub p_bar: Option<Vec<Vec<f64>>>,
    pub l: Option<Vec<f64>>,
    #[serde(default)]
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriticConfig {
    ExactSysrisk {
        init: Option<Vec<f64>>,
    },
    ExactTrading {
        init: Option<Vec<f64>>,
    },
    QuadraticLq {
        degree: usize,
        #[serde(default = "yes")]
        centred: bool,
        init: Option<Vec<f64>>,
    },
    Mlp {
        #[serde(default = "yes")]
        centred: bool,
        init: Option<Vec<f64>>,
    },
    FreeMlp {
        init: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActorConfig {
    ExactSysrisk {
        init: Option<Vec<f64>>,
    },
    ExactTrading {
        init: Option<Vec<f64>>,
    },
    QuadraticLq {
        degree: usize,
        variance_factor: Option<f64>,
        init: Option<Vec<f64>>,
    },
    Mlp {
        #[serde(default = "yes")]
        centred: bool,
        #[serde(default = "constant_phi3")]
        phi3: Phi3Mode,
        variance_factor: Option<f64>,
        init: Option<Vec<f64>>,
    },
}

fn yes() -> bool {
    true
}

fn constant_phi3() -> Phi3Mode {
    Phi3Mode::Constant
}

/// A schedule written either as a bare value or as a list of
/// `{ from_episode, value }` breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
#[serde(bound(
    serialize = "V: Clone + Serialize",
    deserialize = "V: Deserialize<'de>"
))]
pub enum ScheduleSpec<V> {
    Steps(Schedule<V>),
    Constant(V),
}

impl<V: Clone> ScheduleSpec<V> {
    pub fn to_schedule(&self) -> Schedule<V> {
        match self {
            ScheduleSpec::Steps(s) => s.clone(),
            ScheduleSpec::Constant(v) => Schedule::constant(v.clone()),
        }
    }
}

fn one_per_batch() -> ScheduleSpec<usize> {
    ScheduleSpec::Constant(1)
}

fn every_100() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub episodes: u64,
    pub rho_s: ScheduleSpec<f64>,
    pub rho_e: ScheduleSpec<Rate>,
    pub rho_g: ScheduleSpec<Rate>,
    pub lambda: ScheduleSpec<f64>,
    #[serde(default = "one_per_batch")]
    pub minibatch: ScheduleSpec<usize>,
    #[serde(default)]
    pub beta: f64,
    pub clip_critic: Option<f64>,
    pub clip_actor: Option<f64>,
    #[serde(default)]
    pub terminal_critic: TerminalCritic,
    #[serde(default)]
    pub measure_mode: MeasureMode,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Control matrix `C` (rows); enables the mean-field correction term.
    pub control_matrix: Option<Vec<Vec<f64>>>,
    /// Starting point of every node law; defaults to the mean of the initial law.
    pub initial_measure: Option<Vec<f64>>,
    #[serde(default = "every_100")]
    pub record_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub n_agents: usize,
    pub n_populations: usize,
    /// Simulation grid for evaluation; defaults to the training grid.
    pub n_steps: Option<usize>,
    pub stochastic: bool,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            n_agents: 10_000,
            n_populations: 10,
            n_steps: None,
            stochastic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkBlock {
    /// Temperature of the benchmark; defaults to the last training temperature.
    pub lambda: Option<f64>,
    pub n_nodes: usize,
}

impl Default for BenchmarkBlock {
    fn default() -> Self {
        Self {
            lambda: None,
            n_nodes: 2000,
        }
    }
}

fn matrix(name: &str, rows: &Option<Vec<Vec<f64>>>, r: usize, c: usize, fallback: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let Some(rows) = rows else { return Ok(fallback) };
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("env.coefficients.{name}: expected a {r} x {c} matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(name: &str, v: &Option<Vec<f64>>, len: usize) -> Result<DVector<f64>> {
    match v {
        None => Ok(DVector::zeros(len)),
        Some(v) if v.len() == len => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(Error::Config(format!(
            "env.coefficients.{name}: expected {len} entries, got {}",
            v.len()
        ))),
    }
}

impl GenericCoefficients {
    pub fn to_coefficients(&self) -> Result<LqCoefficients> {
        let (d, m) = (self.state_dim, self.action_dim);
        if d == 0 || m == 0 {
            return Err(Error::Config("env.coefficients: dimensions must be >= 1".into()));
        }
        let z = LqCoefficients::zeros(d, m);
        Ok(LqCoefficients {
            b: matrix("b", &self.b, d, d, z.b)?,
            b_bar: matrix("b_bar", &self.b_bar, d, d, z.b_bar)?,
            c: matrix("c", &self.c, d, m, z.c)?,
            gamma: vector("gamma", &self.gamma, d)?,
            d: matrix("d", &self.d, d, d, z.d)?,
            d_bar: matrix("d_bar", &self.d_bar, d, d, z.d_bar)?,
            f: matrix("f", &self.f, d, m, z.f)?,
            q: matrix("q", &self.q, d, d, z.q)?,
            q_bar: matrix("q_bar", &self.q_bar, d, d, z.q_bar)?,
            n: matrix("n", &self.n, m, m, z.n)?,
            i: matrix("i", &self.i, m, d, z.i)?,
            i_bar: matrix("i_bar", &self.i_bar, m, d, z.i_bar)?,
            m: vector("m", &self.m, d)?,
            h: vector("h", &self.h, m)?,
            p: matrix("p", &self.p, d, d, z.p)?,
            p_bar: matrix("p_bar", &self.p_bar, d, d, z.p_bar)?,
            l: vector("l", &self.l, d)?,
            beta: self.beta,
        })
    }
}

impl EnvConfig {
    pub fn horizon(&self) -> f64 {
        match self {
            EnvConfig::SystemicRisk { horizon, .. }
            | EnvConfig::Trading { horizon, .. }
            | EnvConfig::GenericLq { horizon, .. } => *horizon,
        }
    }

    pub fn n_steps(&self) -> usize {
        match self {
            EnvConfig::SystemicRisk { n_steps, .. }
            | EnvConfig::Trading { n_steps, .. }
            | EnvConfig::GenericLq { n_steps, .. } => *n_steps,
        }
    }

    pub fn initial(&self) -> &InitialLaw {
        match self {
            EnvConfig::SystemicRisk { initial, .. }
            | EnvConfig::Trading { initial, .. }
            | EnvConfig::GenericLq { initial, .. } => initial,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvConfig::GenericLq { coefficients, .. } => coefficients.state_dim,
            _ => 1,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            EnvConfig::GenericLq { coefficients, .. } => coefficients.action_dim,
            _ => 1,
        }
    }

    /// Model coefficients, without checking the well-posedness conditions.
    pub fn coefficients(&self) -> Result<LqCoefficients> {
        Ok(match self {
            EnvConfig::SystemicRisk {
                b_bar, i, q, p, gamma, ..
            } => LqCoefficients::systemic_risk(*b_bar, *i, *q, *p, *gamma),
            EnvConfig::Trading { p, h, gamma, .. } => LqCoefficients::trading(*p, *h, *gamma),
            EnvConfig::GenericLq { coefficients, .. } => coefficients.to_coefficients()?,
        })
    }

    /// Simulator on the training grid, or on `n_steps` nodes when given.
    pub fn build(&self, n_steps: Option<usize>) -> Result<Box<dyn Environment>> {
        let grid = TimeGrid::new(self.horizon(), n_steps.unwrap_or(self.n_steps()))?;
        let initial = self.initial().clone();
        Ok(match self {
            EnvConfig::SystemicRisk {
                b_bar,
                i,
                q,
                p,
                gamma,
                oracle_mean,
                ..
            } => Box::new(SystemicRisk::new(*b_bar, *i, *q, *p, *gamma, grid, initial)?.with_oracle_mean(*oracle_mean)),
            EnvConfig::Trading { p, h, gamma, .. } => Box::new(Trading::new(*p, *h, *gamma, grid, initial)?),
            EnvConfig::GenericLq { coefficients, .. } => {
                Box::new(GenericLq::new(coefficients.to_coefficients()?, grid, initial)?)
            }
        })
    }

    /// Variance factor of the optimal policy, `1 / (2 N)` for a scalar control cost.
    fn default_variance_factor(&self) -> Result<f64> {
        let n = self.coefficients()?.n;
        if n.nrows() == 1 && n[(0, 0)] > 0.0 {
            Ok(0.5 / n[(0, 0)])
        } else {
            Ok(1.0)
        }
    }
}

fn fill(role: &str, params: &mut [f64], init: &Option<Vec<f64>>) -> Result<()> {
    if let Some(v) = init {
        if v.len() != params.len() {
            return Err(Error::Config(format!(
                "{role}.init: expected {} values, got {}",
                params.len(),
                v.len()
            )));
        }
        params.copy_from_slice(v);
    }
    Ok(())
}

fn require_scalar(role: &str, kind: &str, env: &EnvConfig) -> Result<()> {
    let ok = match (kind, env) {
        ("exact_sysrisk", EnvConfig::SystemicRisk { .. }) => true,
        ("exact_trading", EnvConfig::Trading { .. }) => true,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{role}.kind = \"{kind}\" does not fit this environment")))
    }
}

impl CriticConfig {
    pub fn build(&self, env: &EnvConfig, rng: &mut Rng) -> Result<Box<dyn Critic>> {
        let d = env.state_dim();
        let horizon = env.horizon();
        let (mut critic, init): (Box<dyn Critic>, _) = match self {
            CriticConfig::ExactSysrisk { init } => {
                require_scalar("critic", "exact_sysrisk", env)?;
                (Box::new(ExactSysRiskCritic::new([1.0; 4], horizon)), init)
            }
            CriticConfig::ExactTrading { init } => {
                require_scalar("critic", "exact_trading", env)?;
                (Box::new(ExactTradingCritic::new([1.0; 3], horizon)), init)
            }
            CriticConfig::QuadraticLq { degree, centred, init } => {
                (Box::new(QuadraticCritic::new(d, *degree, *centred, horizon)), init)
            }
            CriticConfig::Mlp { centred, init } => (Box::new(NnShellCritic::new(d, *centred, rng)), init),
            CriticConfig::FreeMlp { init } => (Box::new(FreeMlpCritic::new(d, rng)), init),
        };
        fill("critic", critic.params_mut(), init)?;
        Ok(critic)
    }
}

impl ActorConfig {
    pub fn build(&self, env: &EnvConfig, rng: &mut Rng) -> Result<Box<dyn Actor>> {
        let (d, m) = (env.state_dim(), env.action_dim());
        let horizon = env.horizon();
        let (mut actor, init): (Box<dyn Actor>, _) = match self {
            ActorConfig::ExactSysrisk { init } => {
                require_scalar("actor", "exact_sysrisk", env)?;
                (Box::new(ExactSysRiskActor::new([1.0; 3], horizon)), init)
            }
            ActorConfig::ExactTrading { init } => {
                require_scalar("actor", "exact_trading", env)?;
                (Box::new(ExactTradingActor::new([1.0; 2], horizon)), init)
            }
            ActorConfig::QuadraticLq {
                degree,
                variance_factor,
                init,
            } => {
                let c = variance_factor.map_or_else(|| env.default_variance_factor(), Ok)?;
                (Box::new(QuadraticActor::new(d, m, *degree, horizon, c)), init)
            }
            ActorConfig::Mlp {
                centred,
                phi3,
                variance_factor,
                init,
            } => {
                let c = variance_factor.map_or_else(|| env.default_variance_factor(), Ok)?;
                (Box::new(NnActor::new(d, m, *centred, *phi3, c, rng)), init)
            }
        };
        fill("actor", actor.params_mut(), init)?;
        Ok(actor)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Last training temperature, used when the benchmark block leaves it open.
    pub fn benchmark_lambda(&self) -> f64 {
        self.benchmark.lambda.unwrap_or_else(|| {
            let s = self.train.lambda.to_schedule();
            s.breakpoints().last().map(|b| b.value).unwrap_or(0.0)
        })
    }

    /// Critic and actor at their initial parameters.
    pub fn build_params(&self) -> Result<(Box<dyn Critic>, Box<dyn Actor>)> {
        let mut rng = RngStream::new(self.seed, INIT_STREAM).rng();
        let actor = self.actor.build(&self.env, &mut rng)?;
        let critic = self.critic.build(&self.env, &mut rng)?;
        Ok((critic, actor))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let d = self.env.state_dim();
        let control_matrix = match &t.control_matrix {
            Some(rows) => Some(matrix("control_matrix", &Some(rows.clone()), d, self.env.action_dim(), DMatrix::zeros(0, 0))
                .map_err(|_| Error::Config(format!("train.control_matrix: expected a {d} x {} matrix", self.env.action_dim())))?),
            None => None,
        };
        let cfg = TrainConfig {
            episodes: t.episodes,
            rho_s: t.rho_s.to_schedule(),
            rho_e: t.rho_e.to_schedule(),
            rho_g: t.rho_g.to_schedule(),
            lambda: t.lambda.to_schedule(),
            minibatch: t.minibatch.to_schedule(),
            beta: t.beta,
            clip_critic: t.clip_critic,
            clip_actor: t.clip_actor,
            seed: self.seed,
            terminal_critic: t.terminal_critic,
            measure_mode: t.measure_mode,
            optimizer: t.optimizer,
            control_matrix,
            initial_measure: t.initial_measure.clone().unwrap_or_else(|| self.env.initial().mean()),
            record_every: t.record_every,
        };
        cfg.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        Ok(cfg)
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            n_agents: self.eval.n_agents,
            n_populations: self.eval.n_populations,
            seed: self.seed,
            stochastic: self.eval.stochastic,
        };
        cfg.validate().map_err(|e| Error::Config(format!("eval: {e}")))?;
        Ok(cfg)
    }

    /// Builds every component once and cross-checks dimensions and rate lengths.
    /// Ill-posed model coefficients surface as `AssumptionViolation`, everything else as `Config`.
    pub fn validate(&self) -> Result<()> {
        let to_config = |e: Error| match e {
            Error::AssumptionViolation { .. } | Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.env.coefficients()?.validate()?;
        let env = self.env.build(None).map_err(|e| Error::Config(format!("env: {e}")))?;
        if let Some(n) = self.eval.n_steps {
            TimeGrid::new(self.env.horizon(), n).map_err(|e| Error::Config(format!("eval.n_steps: {e}")))?;
        }
        let (critic, actor) = self.build_params().map_err(to_config)?;
        let train = self.train_config()?;
        train
            .check_against(&*env, &*actor, &*critic)
            .map_err(|e| Error::Config(format!("train: {e}")))?;
        self.eval_config()?;
        if self.benchmark.n_nodes == 0 {
            return Err(Error::Config("benchmark.n_nodes must be >= 1".into()));
        }
        if !(self.benchmark_lambda() >= 0.0) {
            return Err(Error::Config("benchmark.lambda must be >= 0".into()));
        }
        Ok(())
    }
}
