//! Warden channels known only up to a spectral-norm cap `λ₀`: worst-case
//! capacity and design, the discretization grid, and a sampled check that
//! the covertness metric grows with the warden's gains.

use rand::Rng;
use serde::Serialize;

use crate::allocation::{constraint, solve_allocation_v, AllocationResult, Constellation};
use crate::capacity::covert_capacity_v;
use crate::channel_model::GsvdDecomposition;
use crate::covertness_meter::product_form_v;
use crate::error::{check_positive, Error, Result};
use crate::mc::trial_rng;

/// Largest conceptual grid, in bits (`m * depth`).
pub const MAX_GRID_BITS: usize = 40;
/// Tolerance of the monotonicity check.
pub const MONOTONICITY_TOL: f64 = 1e-12;

/// Main channel known exactly, warden gains anywhere in `(0, λ₀]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySet {
    lambda_0: f64,
    worst: GsvdDecomposition,
}

impl UncertaintySet {
    /// Keeps the main-channel factors of `gsvd` and caps the warden gains.
    pub fn new(gsvd: &GsvdDecomposition, lambda_0: f64) -> Result<Self> {
        check_positive("lambda_0", lambda_0)?;
        Ok(Self {
            lambda_0,
            worst: gsvd.with_warden_gains(&vec![lambda_0; gsvd.m()])?,
        })
    }

    /// Main-channel gains given directly.
    pub fn from_gains(lambda_b: Vec<f64>, lambda_0: f64) -> Result<Self> {
        check_positive("lambda_0", lambda_0)?;
        let m = lambda_b.len();
        Ok(Self {
            lambda_0,
            worst: GsvdDecomposition::from_gains(lambda_b, vec![lambda_0; m])?,
        })
    }

    pub fn lambda_0(&self) -> f64 {
        self.lambda_0
    }

    pub fn m(&self) -> usize {
        self.worst.m()
    }

    /// Decomposition with the isotropic worst-case warden `Λ₀ = λ₀ I`.
    pub fn worst_case(&self) -> &GsvdDecomposition {
        &self.worst
    }

    /// Same main channel with the given warden gains.
    pub fn with_warden(&self, lambda_w: &[f64]) -> Result<GsvdDecomposition> {
        if let Some(&bad) = lambda_w
            .iter()
            .find(|l| !(**l > 0.0 && **l <= self.lambda_0))
        {
            return Err(Error::InvalidParameter {
                name: "lambda_w",
                reason: format!("warden gain {bad} outside (0, {}]", self.lambda_0),
            });
        }
        self.worst.with_warden_gains(lambda_w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompoundReport {
    pub lambda0: f64,
    /// nats per `sqrt(n) d`
    pub c_covert: f64,
    /// `log MK` per `sqrt(n) d`
    pub log_mk_rate: f64,
}

/// Worst-case covert capacity and the matching message-plus-key rate,
/// `sqrt(2 / tr(Λ_b⁴)) tr(Λ_b²)`, which does not involve the warden.
pub fn compound_capacity(set: &UncertaintySet, sigma_b2: f64, sigma_w2: f64) -> CompoundReport {
    let lb = set.worst.lambda_b();
    let tr2: f64 = lb.iter().map(|l| l * l).sum();
    let tr4: f64 = lb.iter().map(|l| l.powi(4)).sum();
    CompoundReport {
        lambda0: set.lambda_0,
        c_covert: covert_capacity_v(&set.worst, sigma_b2, sigma_w2),
        log_mk_rate: (2.0 / tr4).sqrt() * tr2,
    }
}

/// Variational-metric design for the worst-case warden.
pub fn worst_case_design(
    set: &UncertaintySet,
    sigma_b2: f64,
    sigma_w2: f64,
) -> Result<AllocationResult> {
    solve_allocation_v(&set.worst, sigma_b2, sigma_w2)
}

/// Uniform slicing of `(0, λ₀]` on every axis into cells of width `eps`.
/// Only the per-axis points are stored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretizationGrid {
    pub depth: u32,
    pub eps: f64,
    pub axis_points: Vec<f64>,
    pub m: usize,
}

impl DiscretizationGrid {
    /// `log2` of the number of cells, `m * depth`.
    pub fn total_cells_log2(&self) -> usize {
        self.m * self.depth as usize
    }

    /// 1-based cell index per axis: the cell `((j-1) eps, j eps]` containing
    /// each gain.
    pub fn cell_index(&self, lambda: &[f64]) -> Result<Vec<usize>> {
        if lambda.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "{} gains for a grid over {} axes",
                lambda.len(),
                self.m
            )));
        }
        let top = self.axis_points.len();
        let cap = *self
            .axis_points
            .last()
            .expect("grid has at least two points");
        lambda
            .iter()
            .map(|&l| {
                if !(l > 0.0 && l <= cap) {
                    return Err(Error::InvalidParameter {
                        name: "lambda",
                        reason: format!("{l} outside (0, {cap}]"),
                    });
                }
                let mut j = ((l / self.eps).ceil() as usize).clamp(1, top);
                // rounding in l / eps can land one cell off
                while j > 1 && l <= self.axis_points[j - 2] {
                    j -= 1;
                }
                while j < top && l > self.axis_points[j - 1] {
                    j += 1;
                }
                Ok(j)
            })
            .collect()
    }
}

pub fn build_grid(set: &UncertaintySet, depth: u32) -> Result<DiscretizationGrid> {
    let m = set.m();
    if depth < 1 || m * depth as usize > MAX_GRID_BITS {
        return Err(Error::DepthTooLarge { depth, m });
    }
    let cells = 1usize << depth;
    let eps = set.lambda_0 / cells as f64;
    let mut axis_points: Vec<f64> = (1..=cells).map(|j| j as f64 * eps).collect();
    axis_points[cells - 1] = set.lambda_0;
    Ok(DiscretizationGrid {
        depth,
        eps,
        axis_points,
        m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    pub holds: bool,
    /// Largest `V(Λ̃) - V(Λ)` seen; nonpositive when monotonicity holds.
    pub worst_violation: f64,
}

/// Draws ordered pairs `Λ̃ ⪯ Λ ⪯ Λ₀` and checks that the Gaussian-form
/// covertness metric of the fixed constellation is never smaller at the
/// stronger warden.
pub fn covertness_monotonicity_check(
    set: &UncertaintySet,
    constellation: &Constellation,
    sigma_w2: f64,
    samples: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: "need at least one sample".into(),
        });
    }
    let mut worst = f64::NEG_INFINITY;
    for s in 0..samples {
        let (strong, weak) = ordered_pair(set, seed, s);
        let v_strong = product_form_v(&set.with_warden(&strong)?, constellation, sigma_w2)?;
        let v_weak = product_form_v(&set.with_warden(&weak)?, constellation, sigma_w2)?;
        worst = worst.max(v_weak - v_strong);
    }
    Ok(MonotonicityReport {
        samples,
        holds: worst <= MONOTONICITY_TOL,
        worst_violation: worst,
    })
}

/// `λ_j ~ U(0, λ₀]`, `λ̃_j ~ U(0, λ_j]`.
fn ordered_pair(set: &UncertaintySet, seed: u64, index: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = trial_rng(seed, index as u64);
    let strong: Vec<f64> = (0..set.m())
        .map(|_| set.lambda_0 * (1.0 - rng.random::<f64>()))
        .collect();
    let weak = strong
        .iter()
        .map(|l| l * (1.0 - rng.random::<f64>()))
        .collect();
    (strong, weak)
}

/// Largest V-metric constraint value of `alloc` over sampled warden gains
/// in `(0, λ₀]`.
pub fn sampled_worst_constraint(
    set: &UncertaintySet,
    alloc: &AllocationResult,
    sigma_w2: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for s in 0..samples {
        let (strong, _) = ordered_pair(set, seed, s);
        worst = worst.max(constraint(&set.with_warden(&strong)?, sigma_w2, &alloc.t));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{build_constellation, BOUND_V};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::SQRT_2;

    const BENCH: [f64; 4] = [0.385, 0.214, 0.172, 0.028];

    fn bench() -> UncertaintySet {
        UncertaintySet::from_gains(BENCH.to_vec(), 0.05).unwrap()
    }

    #[test]
    fn figure_one_capacity() {
        let r = compound_capacity(&bench(), 0.0005, 0.001);
        let tr4: f64 = BENCH.iter().map(|l| (l / 0.05).powi(4)).sum();
        assert_relative_eq!(r.c_covert, 2.0 * (2.0 * tr4).sqrt(), max_relative = 1e-12);
        assert!((r.c_covert - 178.7).abs() < 0.05);
        let tr2: f64 = BENCH.iter().map(|l| l * l).sum();
        let tr4: f64 = BENCH.iter().map(|l| l.powi(4)).sum();
        assert_relative_eq!(
            r.log_mk_rate,
            (2.0 / tr4).sqrt() * tr2,
            max_relative = 1e-14
        );
    }

    #[test]
    fn stronger_warden_lowers_capacity() {
        let caps: Vec<f64> = [0.05, 0.5, 5.0, 5e3]
            .iter()
            .map(|&l0| {
                compound_capacity(
                    &UncertaintySet::from_gains(BENCH.to_vec(), l0).unwrap(),
                    1.0,
                    1.0,
                )
                .c_covert
            })
            .collect();
        assert!(caps.windows(2).all(|w| w[1] < w[0]));
        assert!(caps[3] < 1e-6 * caps[0]);
        // the key rate ignores the warden
        let a = compound_capacity(
            &UncertaintySet::from_gains(BENCH.to_vec(), 0.05).unwrap(),
            1.0,
            1.0,
        );
        let b = compound_capacity(
            &UncertaintySet::from_gains(BENCH.to_vec(), 7.0).unwrap(),
            1.0,
            1.0,
        );
        assert_eq!(a.log_mk_rate, b.log_mk_rate);
    }

    #[test]
    fn siso_reduction() {
        let r = compound_capacity(
            &UncertaintySet::from_gains(vec![0.3], 0.3).unwrap(),
            2.0,
            2.0,
        );
        assert_relative_eq!(r.c_covert, SQRT_2, max_relative = 1e-14);
    }

    #[test]
    fn grids() {
        let g = build_grid(&bench(), 1).unwrap();
        assert_eq!(g.axis_points, vec![0.025, 0.05]);
        let g = build_grid(&bench(), 3).unwrap();
        assert_eq!(g.axis_points.len(), 8);
        assert_eq!(*g.axis_points.last().unwrap(), 0.05);
        assert_eq!(g.total_cells_log2(), 12);
        assert_eq!(g.eps * 8.0, 0.05);
        assert!(matches!(
            build_grid(&bench(), 0),
            Err(Error::DepthTooLarge { .. })
        ));
        assert!(matches!(
            build_grid(&bench(), 11),
            Err(Error::DepthTooLarge { depth: 11, m: 4 })
        ));
        assert!(build_grid(&bench(), 10).is_ok());
    }

    #[test]
    fn cell_lookup_edges() {
        let g = build_grid(&bench(), 2).unwrap();
        assert_eq!(
            g.cell_index(&[0.0125, 0.0126, 0.05, 1e-9]).unwrap(),
            vec![1, 2, 4, 1]
        );
        assert!(g.cell_index(&[0.0, 0.01, 0.01, 0.01]).is_err());
        assert!(g.cell_index(&[0.051, 0.01, 0.01, 0.01]).is_err());
        assert!(g.cell_index(&[0.01]).is_err());
    }

    #[test]
    fn coverage_by_exactly_one_cell() {
        let set = UncertaintySet::from_gains(vec![1.0; 3], 0.07).unwrap();
        let g = build_grid(&set, 5).unwrap();
        let mut rng = trial_rng(17, 0);
        for _ in 0..1000 {
            let l: Vec<f64> = (0..3).map(|_| 0.07 * (1.0 - rng.random::<f64>())).collect();
            let idx = g.cell_index(&l).unwrap();
            for (x, &j) in l.iter().zip(&idx) {
                let containing: Vec<usize> = (1..=g.axis_points.len())
                    .filter(|&k| {
                        let lo = if k == 1 { 0.0 } else { g.axis_points[k - 2] };
                        *x > lo && *x <= g.axis_points[k - 1]
                    })
                    .collect();
                assert_eq!(containing, vec![j]);
            }
        }
    }

    #[test]
    fn monotone_covertness() {
        let set = bench();
        let a = worst_case_design(&set, 0.0005, 0.001).unwrap();
        let c = build_constellation(&a, set.worst_case(), 400, 0.2).unwrap();
        let r = covertness_monotonicity_check(&set, &c, 0.001, 1000, 3).unwrap();
        assert!(r.holds, "{r:?}");
        let full = product_form_v(set.worst_case(), &c, 0.001).unwrap();
        let half = product_form_v(&set.with_warden(&[0.025; 4]).unwrap(), &c, 0.001).unwrap();
        assert!(full > half);
        assert!((full - 0.2).abs() < 1e-12);
        let same = product_form_v(&set.with_warden(&[0.05; 4]).unwrap(), &c, 0.001).unwrap();
        assert_eq!(same, full);
    }

    #[test]
    fn design_structure_and_feasibility() {
        let set = bench();
        let a = worst_case_design(&set, 0.0005, 0.001).unwrap();
        for (t, l) in a.t.iter().zip(BENCH) {
            assert_relative_eq!(
                t / (l * l),
                a.t[0] / (BENCH[0] * BENCH[0]),
                max_relative = 1e-12
            );
        }
        assert_relative_eq!(
            a.objective,
            compound_capacity(&set, 0.0005, 0.001).c_covert,
            max_relative = 1e-12
        );
        let worst = sampled_worst_constraint(&set, &a, 0.001, 1000, 8).unwrap();
        assert!(worst <= BOUND_V + 1e-9);
        assert!(set.with_warden(&[0.06, 0.01, 0.01, 0.01]).is_err());
    }

    proptest! {
        #[test]
        fn stronger_warden_never_less_detectable(
            lb in prop::collection::vec(0.01f64..1.0, 1..5),
            lambda_0 in 0.01f64..2.0,
            seed in 0u64..10_000,
        ) {
            let set = UncertaintySet::from_gains(lb, lambda_0).unwrap();
            let a = worst_case_design(&set, 1.0, 1.0).unwrap();
            let c = build_constellation(&a, set.worst_case(), 256, 0.3).unwrap();
            let r = covertness_monotonicity_check(&set, &c, 1.0, 20, seed).unwrap();
            prop_assert!(r.holds);
        }
    }
}
