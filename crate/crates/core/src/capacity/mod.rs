//! Closed-form covert throughputs under the variational-distance and
//! relative-entropy covertness metrics.
//!
//! All throughputs are in nats. Capacities are normalized by `sqrt(n) * d`
//! (variational distance, `d = Q^{-1}((1 - delta) / 2)`) or by
//! `sqrt(n * delta)` (relative entropy).

mod qfunc;

use serde::Serialize;

use crate::channel_model::GsvdDecomposition;
use crate::error::{check_unit_interval, Result};

pub use qfunc::{normal_pdf, qfunc, qinv};

/// Nats to bits.
pub const BITS_PER_NAT: f64 = std::f64::consts::LOG2_E;

/// Covertness level `delta` together with `d = Q^{-1}((1 - delta) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovertnessBudget {
    pub delta: f64,
    pub d: f64,
}

impl CovertnessBudget {
    pub fn new(delta: f64) -> Result<Self> {
        check_unit_interval("delta", delta)?;
        Ok(Self {
            delta,
            d: qinv((1.0 - delta) / 2.0)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacitySummary {
    pub delta: f64,
    /// nats per `sqrt(n) d`
    pub c_covert_v: f64,
    /// nats per `sqrt(n) d`
    pub r_key_v: f64,
    /// nats per `sqrt(n delta)`
    pub c_covert_d: f64,
    /// nats per `sqrt(n)`
    pub f_v: f64,
    /// nats per `sqrt(n)`
    pub f_d: f64,
}

impl CapacitySummary {
    pub fn in_bits(self) -> Self {
        Self {
            delta: self.delta,
            c_covert_v: self.c_covert_v * BITS_PER_NAT,
            r_key_v: self.r_key_v * BITS_PER_NAT,
            c_covert_d: self.c_covert_d * BITS_PER_NAT,
            f_v: self.f_v * BITS_PER_NAT,
            f_d: self.f_d * BITS_PER_NAT,
        }
    }
}

/// Covert capacity under a variational-distance constraint,
/// `(σ_w²/σ_b²) sqrt(2 tr(Λ_b⁴Λ_w⁻⁴))`.
pub fn covert_capacity_v(gsvd: &GsvdDecomposition, sigma_b2: f64, sigma_w2: f64) -> f64 {
    sigma_w2 / sigma_b2 * (2.0 * gsvd.tr4()).sqrt()
}

/// Key throughput that accompanies [`covert_capacity_v`].
pub fn key_throughput_v(gsvd: &GsvdDecomposition, sigma_b2: f64, sigma_w2: f64) -> f64 {
    let tr4 = gsvd.tr4();
    let excess = gsvd.tr2() - sigma_w2 / sigma_b2 * tr4;
    (2.0 / tr4).sqrt() * excess.max(0.0)
}

/// Covert capacity under a relative-entropy constraint,
/// `(σ_w²/σ_b²) sqrt(tr(Λ_b⁴Λ_w⁻⁴))`.
pub fn covert_capacity_d(gsvd: &GsvdDecomposition, sigma_b2: f64, sigma_w2: f64) -> f64 {
    sigma_w2 / sigma_b2 * gsvd.tr4().sqrt()
}

/// First-order throughput `log M / sqrt(n)` at variational level `delta`.
pub fn f_v(gsvd: &GsvdDecomposition, sigma_b2: f64, sigma_w2: f64, delta: f64) -> Result<f64> {
    let budget = CovertnessBudget::new(delta)?;
    Ok(covert_capacity_v(gsvd, sigma_b2, sigma_w2) * budget.d)
}

/// First-order throughput `log M / sqrt(n)` at relative-entropy level `delta`.
pub fn f_d(gsvd: &GsvdDecomposition, sigma_b2: f64, sigma_w2: f64, delta: f64) -> Result<f64> {
    check_unit_interval("delta", delta)?;
    Ok(covert_capacity_d(gsvd, sigma_b2, sigma_w2) * delta.sqrt())
}

/// `f_V(sqrt(delta/2)) / f_D(delta)` for the given channel.
///
/// Pinsker makes a relative-entropy budget `delta` at least as strict as a
/// variational budget `sqrt(delta/2)`; this is the throughput gain of using
/// the looser metric.
pub fn metric_ratio(
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
    sigma_w2: f64,
    delta: f64,
) -> Result<f64> {
    check_unit_interval("delta", delta)?;
    Ok(
        f_v(gsvd, sigma_b2, sigma_w2, (delta / 2.0).sqrt())?
            / f_d(gsvd, sigma_b2, sigma_w2, delta)?,
    )
}

/// Channel-free form of [`metric_ratio`]: the traces cancel, leaving
/// `sqrt(2) Q^{-1}((1 - sqrt(delta/2)) / 2) / sqrt(delta)`.
pub fn pinsker_ratio(delta: f64) -> Result<f64> {
    check_unit_interval("delta", delta)?;
    let v = (delta / 2.0).sqrt();
    Ok(std::f64::consts::SQRT_2 * qinv((1.0 - v) / 2.0)? / delta.sqrt())
}

pub fn capacity_summary(
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
    sigma_w2: f64,
    delta: f64,
) -> Result<CapacitySummary> {
    Ok(CapacitySummary {
        delta,
        c_covert_v: covert_capacity_v(gsvd, sigma_b2, sigma_w2),
        r_key_v: key_throughput_v(gsvd, sigma_b2, sigma_w2),
        c_covert_d: covert_capacity_d(gsvd, sigma_b2, sigma_w2),
        f_v: f_v(gsvd, sigma_b2, sigma_w2, delta)?,
        f_d: f_d(gsvd, sigma_b2, sigma_w2, delta)?,
    })
}

/// One row of the metric comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThroughputRow {
    pub delta: f64,
    /// `f_D(delta)`
    pub f_d: f64,
    /// `f_V(sqrt(delta / 2))`
    pub f_v: f64,
    pub ratio: f64,
}

/// Relative-entropy throughput against the variational throughput at the
/// Pinsker-matched level, for each `delta` in the grid.
pub fn throughput_curves(
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
    sigma_w2: f64,
    delta_grid: &[f64],
) -> Result<Vec<ThroughputRow>> {
    delta_grid
        .iter()
        .map(|&delta| {
            let fd = f_d(gsvd, sigma_b2, sigma_w2, delta)?;
            let fv = f_v(gsvd, sigma_b2, sigma_w2, (delta / 2.0).sqrt())?;
            Ok(ThroughputRow {
                delta,
                f_d: fd,
                f_v: fv,
                ratio: fv / fd,
            })
        })
        .collect()
}

/// `points` values evenly spaced over `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}
