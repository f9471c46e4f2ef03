use std::fmt;

use thiserror::Error;

/// Which of the two links a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Main,
    Warden,
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Link::Main => f.write_str("main (H_b)"),
            Link::Warden => f.write_str("warden (H_w)"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{which} channel matrix is rank deficient: numerical rank {rank}, need {required}")]
    RankDeficient {
        which: Link,
        rank: usize,
        required: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("`{name}` = {value} is outside the open interval (0, 1)")]
    Domain { name: &'static str, value: f64 },

    #[error("bisection did not reach tolerance within {iterations} iterations")]
    ConvergenceFailure { iterations: usize },

    #[error("perturbed covertness budget {budget} is not positive; blocklength too small for the requested slack")]
    InfeasibleBudget { budget: f64 },

    #[error("key size is negative: log MK = {log_mk} < log M = {log_m}")]
    KeySizeNegative { log_m: f64, log_mk: f64 },

    #[error("requested {requested} scalars exceeds the budget of {limit}")]
    BudgetExceeded { requested: u128, limit: u128 },

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("codebook is empty")]
    EmptyCodebook,

    #[error("grid depth {depth} too large for rank {m} (need depth >= 1 and m*depth <= 40)")]
    DepthTooLarge { depth: u32, m: usize },

    #[error(
        "warden gain {value:e} on sub-channel {index} is degenerate relative to the largest gain"
    )]
    DegenerateGain { index: usize, value: f64 },
}

impl Error {
    /// True for failures caused by the numerics of the input rather than by
    /// a malformed request.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::ConvergenceFailure { .. }
                | Error::DegenerateGain { .. }
                | Error::InfeasibleBudget { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit_interval(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain { name, value })
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be a positive finite number, got {value}"),
        })
    }
}
