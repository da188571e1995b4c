//! Piecewise-constant hyperparameter schedules indexed by episode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One breakpoint: `value` applies from episode `from_episode` until the next breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Breakpoint<V> {
    pub from_episode: u64,
    pub value: V,
}

/// Piecewise-constant map from (1-indexed) episode to a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Breakpoint<V>>", into = "Vec<Breakpoint<V>>")]
#[serde(bound(
    serialize = "V: Clone + Serialize",
    deserialize = "V: Deserialize<'de>"
))]
pub struct Schedule<V> {
    breakpoints: Vec<Breakpoint<V>>,
}

impl<V> Schedule<V> {
    pub fn new(breakpoints: Vec<Breakpoint<V>>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::InvalidArgument("schedule needs a breakpoint".into()));
        }
        if breakpoints
            .windows(2)
            .any(|w| w[1].from_episode <= w[0].from_episode)
        {
            return Err(Error::InvalidArgument(
                "schedule breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self { breakpoints })
    }

    pub fn constant(value: V) -> Self {
        Self {
            breakpoints: vec![Breakpoint {
                from_episode: 1,
                value,
            }],
        }
    }

    /// Value of the last breakpoint with `from_episode <= episode`.
    pub fn at(&self, episode: u64) -> Result<&V> {
        let idx = self
            .breakpoints
            .partition_point(|b| b.from_episode <= episode);
        if idx == 0 {
            return Err(Error::InvalidArgument(format!(
                "episode {episode} precedes the first breakpoint {}",
                self.breakpoints[0].from_episode
            )));
        }
        Ok(&self.breakpoints[idx - 1].value)
    }

    pub fn breakpoints(&self) -> &[Breakpoint<V>] {
        &self.breakpoints
    }

    pub fn first_episode(&self) -> u64 {
        self.breakpoints[0].from_episode
    }
}

impl<V> TryFrom<Vec<Breakpoint<V>>> for Schedule<V> {
    type Error = Error;

    fn try_from(value: Vec<Breakpoint<V>>) -> Result<Self> {
        Self::new(value)
    }
}

impl<V> From<Schedule<V>> for Vec<Breakpoint<V>> {
    fn from(s: Schedule<V>) -> Self {
        s.breakpoints
    }
}

/// A learning rate that is either shared by every parameter or given per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rate {
    Scalar(f64),
    PerComponent(Vec<f64>),
}

impl Rate {
    pub fn component(&self, i: usize) -> f64 {
        match self {
            Rate::Scalar(r) => *r,
            Rate::PerComponent(v) => v[i],
        }
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        match self {
            Rate::PerComponent(v) if v.len() != n => Err(Error::InvalidArgument(format!(
                "per-component rate has {} entries for {n} parameters",
                v.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Rate::Scalar(r) => *r == 0.0,
            Rate::PerComponent(v) => v.iter().all(|r| *r == 0.0),
        }
    }
}

/// `params[i] += sign * rate_i * direction[i]`.
pub fn apply_rate(params: &mut [f64], rate: &Rate, direction: &[f64], sign: f64) {
    for (i, (p, d)) in params.iter_mut().zip(direction).enumerate() {
        *p += sign * rate.component(i) * d;
    }
}
