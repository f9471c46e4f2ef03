//! Scenario files.
//!
//! A scenario is a TOML document with these top-level keys:
//!
//! ```toml
//! h_b = [[1.0, 0.0], [0.0, 1.0]]   # or lambda_b = [...]
//! h_w = [[1.0, 0.0], [0.0, 1.0]]   # or lambda_w = [...]
//! sigma_b2 = 1.0
//! sigma_w2 = 1.0
//! delta = 0.2        # default 0.2
//! n = 400            # default 400
//! seed = 7           # optional
//! trials = 10000     # default 10^4
//! lambda_0 = 0.05    # optional, compound analyses
//! xi = 0.5           # default 0.5
//! c = 1.0            # default 1
//! slack_b0 = 0.0     # default 0
//! slack_b1 = 0.0     # default 0
//! rank_rtol = 1e-10  # default 1e-10
//! ```

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;
use toml::Spanned;

use crate::channel_model::{decompose_gsvd, ChannelPair, GsvdDecomposition, DEFAULT_RANK_RTOL};

pub const DEFAULT_DELTA: f64 = 0.2;
pub const DEFAULT_N: usize = 400;
pub const DEFAULT_TRIALS: usize = 10_000;
pub const DEFAULT_XI: f64 = 0.5;
pub const DEFAULT_C: f64 = 1.0;

#[derive(Debug)]
pub enum ConfigError {
    Io { path: String, message: String },
    Parse { location: String, message: String },
    Validation { field: String, message: String },
}

impl ConfigError {
    fn validation(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Offending field for validation errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, message } => write!(f, "cannot read {path}: {message}"),
            ConfigError::Parse { location, message } => {
                write!(f, "parse error at {location}: {message}")
            }
            ConfigError::Validation { field, message } => write!(f, "invalid `{field}`: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

type Rows = Vec<Spanned<Vec<f64>>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    h_b: Option<Spanned<Rows>>,
    h_w: Option<Spanned<Rows>>,
    lambda_b: Option<Vec<f64>>,
    lambda_w: Option<Vec<f64>>,
    sigma_b2: Option<f64>,
    sigma_w2: Option<f64>,
    delta: Option<f64>,
    n: Option<i64>,
    seed: Option<i64>,
    trials: Option<i64>,
    lambda_0: Option<f64>,
    xi: Option<f64>,
    c: Option<f64>,
    slack_b0: Option<f64>,
    slack_b1: Option<f64>,
    rank_rtol: Option<f64>,
}

/// How the channel was specified.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSpec {
    Matrices {
        h_b: DMatrix<f64>,
        h_w: DMatrix<f64>,
    },
    /// Parallel sub-channel gains; `lambda_w` may be left out when
    /// `lambda_0` stands in for the warden.
    Gains {
        lambda_b: Vec<f64>,
        lambda_w: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub channel: ChannelSpec,
    pub sigma_b2: f64,
    pub sigma_w2: f64,
    pub delta: f64,
    pub n: usize,
    pub seed: Option<u64>,
    pub trials: usize,
    pub lambda_0: Option<f64>,
    pub xi: f64,
    pub c: f64,
    pub slack_b0: f64,
    pub slack_b1: f64,
    pub rank_rtol: f64,
}

impl ScenarioConfig {
    /// Channel pair with the configured noise; only for matrix scenarios.
    pub fn channel_pair(&self) -> Option<ChannelPair> {
        match &self.channel {
            ChannelSpec::Matrices { h_b, h_w } => {
                ChannelPair::new(h_b.clone(), h_w.clone(), self.sigma_b2, self.sigma_w2).ok()
            }
            ChannelSpec::Gains { .. } => None,
        }
    }

    /// Parallel sub-channel decomposition of the scenario. Gains-only
    /// scenarios without `lambda_w` use the isotropic warden `lambda_0`.
    pub fn gsvd(&self) -> crate::Result<GsvdDecomposition> {
        match &self.channel {
            ChannelSpec::Matrices { .. } => {
                let pair = self.channel_pair().expect("validated on load");
                decompose_gsvd(&pair, self.rank_rtol)
            }
            ChannelSpec::Gains { lambda_b, lambda_w } => {
                let lw = match (lambda_w, self.lambda_0) {
                    (Some(w), _) => w.clone(),
                    (None, Some(l0)) => vec![l0; lambda_b.len()],
                    (None, None) => unreachable!("validated on load"),
                };
                GsvdDecomposition::from_gains(lambda_b.clone(), lw)
            }
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario(&text)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn matrix(text: &str, name: &str, rows: Spanned<Rows>) -> Result<DMatrix<f64>, ConfigError> {
    let span = rows.span();
    let rows = rows.into_inner();
    if rows.is_empty() {
        return Err(ConfigError::Parse {
            location: format!("line {} ({name})", line_of(text, span.start)),
            message: format!("{name} has no rows"),
        });
    }
    let width = rows[0].get_ref().len();
    for (r, row) in rows.iter().enumerate() {
        if row.get_ref().len() != width || width == 0 {
            return Err(ConfigError::Parse {
                location: format!(
                    "line {} ({name} row {})",
                    line_of(text, row.span().start),
                    r + 1
                ),
                message: format!(
                    "{name} row {} has {} entries, expected {width}",
                    r + 1,
                    row.get_ref().len()
                ),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), width, |r, c| {
        rows[r].get_ref()[c]
    }))
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::validation(
            field,
            format!("must be positive, got {v}"),
        ))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::validation(
            field,
            format!("must be nonnegative, got {v}"),
        ))
    }
}

fn open_unit(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(ConfigError::validation(
            field,
            format!("must lie in (0, 1), got {v}"),
        ))
    }
}

fn count(field: &str, v: i64) -> Result<usize, ConfigError> {
    if v >= 1 {
        Ok(v as usize)
    } else {
        Err(ConfigError::validation(
            field,
            format!("must be at least 1, got {v}"),
        ))
    }
}

fn gains(field: &str, g: Vec<f64>) -> Result<Vec<f64>, ConfigError> {
    if g.is_empty() {
        return Err(ConfigError::validation(field, "needs at least one gain"));
    }
    for v in &g {
        positive(field, *v)?;
    }
    Ok(g)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| ConfigError::Parse {
        location: e
            .span()
            .map(|s| format!("line {}", line_of(text, s.start)))
            .unwrap_or_else(|| "unknown location".into()),
        message: e.message().to_string(),
    })?;

    let sigma_b2 = positive(
        "sigma_b2",
        raw.sigma_b2
            .ok_or_else(|| ConfigError::validation("sigma_b2", "missing"))?,
    )?;
    let sigma_w2 = positive(
        "sigma_w2",
        raw.sigma_w2
            .ok_or_else(|| ConfigError::validation("sigma_w2", "missing"))?,
    )?;
    let lambda_0 = raw.lambda_0.map(|l| positive("lambda_0", l)).transpose()?;

    let channel = match (raw.h_b, raw.h_w, raw.lambda_b, raw.lambda_w) {
        (Some(hb), Some(hw), None, None) => {
            let h_b = matrix(text, "h_b", hb)?;
            let h_w = matrix(text, "h_w", hw)?;
            ChannelPair::new(h_b.clone(), h_w.clone(), sigma_b2, sigma_w2)
                .map_err(|e| ConfigError::validation("h_b", e.to_string()))?;
            ChannelSpec::Matrices { h_b, h_w }
        }
        (None, None, Some(lb), lw) => {
            let lambda_b = gains("lambda_b", lb)?;
            let lambda_w = lw.map(|w| gains("lambda_w", w)).transpose()?;
            match &lambda_w {
                Some(w) if w.len() != lambda_b.len() => {
                    return Err(ConfigError::validation(
                        "lambda_w",
                        format!("{} gains, lambda_b has {}", w.len(), lambda_b.len()),
                    ));
                }
                None if lambda_0.is_none() => {
                    return Err(ConfigError::validation(
                        "lambda_w",
                        "missing (give lambda_w or lambda_0)",
                    ));
                }
                _ => {}
            }
            ChannelSpec::Gains { lambda_b, lambda_w }
        }
        (Some(_), None, None, None) => return Err(ConfigError::validation("h_w", "missing")),
        (None, Some(_), None, None) => return Err(ConfigError::validation("h_b", "missing")),
        (None, None, None, _) => {
            return Err(ConfigError::validation(
                "h_b",
                "missing channel (h_b/h_w or lambda_b)",
            ))
        }
        _ => {
            return Err(ConfigError::validation(
                "h_b",
                "give either the matrices h_b/h_w or the gains lambda_b/lambda_w, not both",
            ))
        }
    };

    Ok(ScenarioConfig {
        channel,
        sigma_b2,
        sigma_w2,
        delta: open_unit("delta", raw.delta.unwrap_or(DEFAULT_DELTA))?,
        n: raw
            .n
            .map(|v| count("n", v))
            .transpose()?
            .unwrap_or(DEFAULT_N),
        seed: raw
            .seed
            .map(|s| {
                u64::try_from(s).map_err(|_| {
                    ConfigError::validation("seed", format!("must be nonnegative, got {s}"))
                })
            })
            .transpose()?,
        trials: raw
            .trials
            .map(|v| count("trials", v))
            .transpose()?
            .unwrap_or(DEFAULT_TRIALS),
        lambda_0,
        xi: open_unit("xi", raw.xi.unwrap_or(DEFAULT_XI))?,
        c: nonnegative("c", raw.c.unwrap_or(DEFAULT_C))?,
        slack_b0: nonnegative("slack_b0", raw.slack_b0.unwrap_or(0.0))?,
        slack_b1: nonnegative("slack_b1", raw.slack_b1.unwrap_or(0.0))?,
        rank_rtol: positive("rank_rtol", raw.rank_rtol.unwrap_or(DEFAULT_RANK_RTOL))?,
    })
}
