use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Which loss estimator is used for a training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// One noise group; both the squared error and any PDE nonlinearity are
    /// evaluated on the same Monte Carlo means.
    Biased,
    /// Two independent groups, one per factor of the squared error.
    Unbiased1,
    /// Every factor of every product gets its own group.
    Unbiased2,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Biased, LossMode::Unbiased1, LossMode::Unbiased2];

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Biased => "biased",
            LossMode::Unbiased1 => "unbiased1",
            LossMode::Unbiased2 => "unbiased2",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "biased" => Ok(LossMode::Biased),
            "unbiased1" | "unbiased" => Ok(LossMode::Unbiased1),
            "unbiased2" => Ok(LossMode::Unbiased2),
            other => Err(Error::Config(format!(
                "unknown loss mode '{other}' (expected biased, unbiased1 or unbiased2)"
            ))),
        }
    }
}

/// Highest power of the unknown (or its derivatives) in a PDE residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NonlinearityOrder {
    Polynomial(u8),
    NonPolynomial,
}

impl NonlinearityOrder {
    /// Independent noise groups needed by `mode`, or `None` when no unbiased
    /// estimator of that kind exists.
    pub fn groups_for(self, mode: LossMode) -> Option<usize> {
        match (mode, self) {
            (LossMode::Biased, _) => Some(1),
            (LossMode::Unbiased1, _) => Some(2),
            (LossMode::Unbiased2, NonlinearityOrder::Polynomial(p)) => Some(2 * p.max(1) as usize),
            (LossMode::Unbiased2, NonlinearityOrder::NonPolynomial) => None,
        }
    }
}
