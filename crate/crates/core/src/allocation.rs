//! Constellation power design for the two covertness metrics.
//!
//! Both programs maximize `tr(Λ_b² T) / (2σ_b²)` over diagonal `T ⪰ 0`
//! subject to `tr(Λ_w⁴ T²) / (4σ_w⁴) ≤ bound`, with `bound = 2` for the
//! variational-distance metric and `bound = 1` for relative entropy.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::capacity::CovertnessBudget;
use crate::channel_model::GsvdDecomposition;
use crate::error::{check_positive, check_unit_interval, Error, Result};

/// Quadratic-constraint level of the variational-distance program.
pub const BOUND_V: f64 = 2.0;
/// Quadratic-constraint level of the relative-entropy program.
pub const BOUND_D: f64 = 1.0;

const ORACLE_MAX_ITERATIONS: usize = 200;
const ORACLE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationResult {
    /// Diagonal of the design matrix `T`.
    pub t: Vec<f64>,
    /// Multiplier of the quadratic constraint.
    pub mu: f64,
    pub objective: f64,
    /// `tr(Λ_w⁴ T²) / (4σ_w⁴)` at the returned `T`.
    pub constraint: f64,
    pub bound: f64,
}

impl AllocationResult {
    fn evaluate(
        gsvd: &GsvdDecomposition,
        sigma_b2: f64,
        sigma_w2: f64,
        t: Vec<f64>,
        mu: f64,
        bound: f64,
    ) -> Self {
        Self {
            objective: objective(gsvd, sigma_b2, &t),
            constraint: constraint(gsvd, sigma_w2, &t),
            t,
            mu,
            bound,
        }
    }

    /// Same design with `T` multiplied by `s`; the objective scales by `s`
    /// and the constraint by `s²`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            t: self.t.iter().map(|t| t * s).collect(),
            mu: self.mu / s,
            objective: self.objective * s,
            constraint: self.constraint * s * s,
            bound: self.bound,
        }
    }
}

/// `tr(Λ_b² T) / (2σ_b²)`.
pub fn objective(gsvd: &GsvdDecomposition, sigma_b2: f64, t: &[f64]) -> f64 {
    gsvd.lambda_b()
        .iter()
        .zip(t)
        .map(|(l, t)| l * l * t)
        .sum::<f64>()
        / (2.0 * sigma_b2)
}

/// `tr(Λ_w⁴ T²) / (4σ_w⁴)`.
pub fn constraint(gsvd: &GsvdDecomposition, sigma_w2: f64, t: &[f64]) -> f64 {
    gsvd.lambda_w()
        .iter()
        .zip(t)
        .map(|(l, t)| (l * l * t).powi(2))
        .sum::<f64>()
        / (4.0 * sigma_w2 * sigma_w2)
}

fn closed_form(
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
    sigma_w2: f64,
    bound: f64,
) -> Result<AllocationResult> {
    check_positive("sigma_b2", sigma_b2)?;
    check_positive("sigma_w2", sigma_w2)?;
    gsvd.check_warden_gains()?;
    let root = gsvd.tr4().sqrt();
    let scale = 2.0 * bound.sqrt() * sigma_w2 / root;
    let t = gsvd
        .lambda_b()
        .iter()
        .zip(gsvd.lambda_w().iter())
        .map(|(b, w)| scale * b * b / w.powi(4))
        .collect();
    let mu = sigma_w2 * root / (2.0 * bound.sqrt() * sigma_b2);
    Ok(AllocationResult::evaluate(
        gsvd, sigma_b2, sigma_w2, t, mu, bound,
    ))
}

/// Optimal design under the variational-distance metric,
/// `T = 2√2 σ_w² Λ_b² Λ_w⁻⁴ / sqrt(tr(Λ_b⁴Λ_w⁻⁴))`.
pub fn solve_allocation_v(
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
    sigma_w2: f64,
) -> Result<AllocationResult> {
    closed_form(gsvd, sigma_b2, sigma_w2, BOUND_V)
}

/// Optimal design under the relative-entropy metric,
/// `T = 2 σ_w² Λ_b² Λ_w⁻⁴ / sqrt(tr(Λ_b⁴Λ_w⁻⁴))`.
pub fn solve_allocation_d(
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
    sigma_w2: f64,
) -> Result<AllocationResult> {
    closed_form(gsvd, sigma_b2, sigma_w2, BOUND_D)
}

/// Solves the design program numerically by bisection on the multiplier.
///
/// Stationarity of the Lagrangian gives `T_j(μ) = b_j / (2 μ w_j)` with
/// `b_j = λ_{b,j}² / (2σ_b²)` and `w_j = λ_{w,j}⁴ / (4σ_w⁴)`; the constraint
/// is decreasing in `μ`, so `μ` is bracketed and then bisected on a log
/// scale until the constraint is tight.
pub fn numeric_oracle_allocation(
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
    sigma_w2: f64,
    bound: f64,
) -> Result<AllocationResult> {
    check_positive("sigma_b2", sigma_b2)?;
    check_positive("sigma_w2", sigma_w2)?;
    check_positive("bound", bound)?;
    gsvd.check_warden_gains()?;

    let b: Vec<f64> = gsvd
        .lambda_b()
        .iter()
        .map(|l| l * l / (2.0 * sigma_b2))
        .collect();
    let w: Vec<f64> = gsvd
        .lambda_w()
        .iter()
        .map(|l| l.powi(4) / (4.0 * sigma_w2 * sigma_w2))
        .collect();
    let design =
        |mu: f64| -> Vec<f64> { b.iter().zip(&w).map(|(b, w)| b / (2.0 * mu * w)).collect() };
    let load = |mu: f64| -> f64 { design(mu).iter().zip(&w).map(|(t, w)| w * t * t).sum() };

    let mut iterations = 0;
    let (mut lo, mut hi) = (1.0, 1.0);
    while load(lo) < bound {
        lo /= 2.0;
        iterations += 1;
        if iterations >= ORACLE_MAX_ITERATIONS || lo == 0.0 {
            return Err(Error::ConvergenceFailure { iterations });
        }
    }
    while load(hi) > bound {
        hi *= 2.0;
        iterations += 1;
        if iterations >= ORACLE_MAX_ITERATIONS || hi.is_infinite() {
            return Err(Error::ConvergenceFailure { iterations });
        }
    }
    let mut mu = (lo * hi).sqrt();
    loop {
        let g = load(mu);
        if ((g - bound) / bound).abs() <= ORACLE_RTOL {
            break;
        }
        if g > bound {
            lo = mu;
        } else {
            hi = mu;
        }
        mu = (lo * hi).sqrt();
        iterations += 1;
        if iterations >= ORACLE_MAX_ITERATIONS {
            return Err(Error::ConvergenceFailure { iterations });
        }
    }
    Ok(AllocationResult::evaluate(
        gsvd,
        sigma_b2,
        sigma_w2,
        design(mu),
        mu,
        bound,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// `bound - C / (sqrt(n) d)`
    pub budget: f64,
    pub feasible: bool,
    /// `budget - constraint`
    pub margin: f64,
    /// Factor in (0, 1] that brings the design back within the budget.
    pub shrink: f64,
}

/// Checks a design against the finite-blocklength budget
/// `bound - C / (sqrt(n) d)`.
///
/// Scaling `T` by `s` scales the constraint by `s²`, so the shrink factor is
/// `sqrt(budget / constraint)` capped at 1; for a tight variational design
/// this is `sqrt((2 - C / (sqrt(n) d)) / 2)`.
pub fn perturbed_feasibility(
    alloc: &AllocationResult,
    n: usize,
    delta: f64,
    c: f64,
) -> Result<FeasibilityReport> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "blocklength must be at least 1".into(),
        });
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "c",
            reason: format!("slack must be nonnegative, got {c}"),
        });
    }
    let d = CovertnessBudget::new(delta)?.d;
    let budget = alloc.bound - c / ((n as f64).sqrt() * d);
    if budget <= 0.0 {
        return Err(Error::InfeasibleBudget { budget });
    }
    let shrink = if alloc.constraint > budget {
        (budget / alloc.constraint).sqrt()
    } else {
        1.0
    };
    Ok(FeasibilityReport {
        budget,
        feasible: alloc.constraint <= budget,
        margin: budget - alloc.constraint,
        shrink,
    })
}

/// Per-symbol BPSK powers at blocklength `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constellation {
    pub n: usize,
    /// `ρ_{n,j}`
    pub rho: Vec<f64>,
    /// `sqrt(ρ_{n,j})`
    pub amplitudes: Vec<f64>,
    /// Transmit covariance `(V^T)^{-1} diag(ρ) V^{-1}`, row-major.
    #[serde(serialize_with = "ser_rows")]
    pub q_n: DMatrix<f64>,
}

impl Constellation {
    /// Constellation with explicit per-sub-channel powers.
    pub fn from_rho(gsvd: &GsvdDecomposition, n: usize, rho: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "n",
                reason: "blocklength must be at least 1".into(),
            });
        }
        if rho.len() != gsvd.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} powers for {} sub-channels",
                rho.len(),
                gsvd.m()
            )));
        }
        if let Some(bad) = rho.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("powers must be nonnegative, got {bad}"),
            });
        }
        let p = gsvd.precoder()?;
        let q = &p * DMatrix::from_diagonal(&DVector::from_column_slice(&rho)) * p.transpose();
        let q_n = (&q + q.transpose()) * 0.5;
        Ok(Self {
            n,
            amplitudes: rho.iter().map(|r| r.sqrt()).collect(),
            rho,
            q_n,
        })
    }

    pub fn m(&self) -> usize {
        self.rho.len()
    }
}

/// Variational-metric constellation, `ρ_{n,j} = T_j d / sqrt(n)`.
pub fn build_constellation(
    alloc: &AllocationResult,
    gsvd: &GsvdDecomposition,
    n: usize,
    delta: f64,
) -> Result<Constellation> {
    let d = CovertnessBudget::new(delta)?.d;
    scaled_constellation(alloc, gsvd, n, d / (n.max(1) as f64).sqrt())
}

/// Relative-entropy constellation, `ρ_{n,j} = T_j sqrt(delta / n)`.
pub fn build_constellation_d(
    alloc: &AllocationResult,
    gsvd: &GsvdDecomposition,
    n: usize,
    delta: f64,
) -> Result<Constellation> {
    check_unit_interval("delta", delta)?;
    scaled_constellation(alloc, gsvd, n, (delta / n.max(1) as f64).sqrt())
}

fn scaled_constellation(
    alloc: &AllocationResult,
    gsvd: &GsvdDecomposition,
    n: usize,
    scale: f64,
) -> Result<Constellation> {
    Constellation::from_rho(gsvd, n, alloc.t.iter().map(|t| t * scale).collect())
}

fn ser_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for row in m.row_iter() {
        seq.serialize_element(&row.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::{covert_capacity_d, covert_capacity_v, qinv};
    use crate::channel_model::{decompose_gsvd, ChannelPair, DEFAULT_RANK_RTOL};
    use crate::mc::trial_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::SQRT_2;

    fn gains(b: &[f64], w: &[f64]) -> GsvdDecomposition {
        GsvdDecomposition::from_gains(b.to_vec(), w.to_vec()).unwrap()
    }

    fn random_gsvd(seed: u64) -> GsvdDecomposition {
        let mut rng = trial_rng(seed, 0);
        let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
        let pair = ChannelPair::new(draw(4, 4), draw(4, 4), 1.0, 1.0).unwrap();
        decompose_gsvd(&pair, DEFAULT_RANK_RTOL).unwrap()
    }

    #[test]
    fn symmetric_case() {
        for m in 1..=5 {
            let g = gains(&vec![0.6; m], &vec![0.6; m]);
            let v = solve_allocation_v(&g, 1.0, 1.0).unwrap();
            // unit ratios with gains 0.6: T = 2√2 / (√m λ²)
            for t in &v.t {
                assert_relative_eq!(
                    *t,
                    2.0 * SQRT_2 / (m as f64).sqrt() / 0.36,
                    max_relative = 1e-14
                );
            }
            assert_relative_eq!(v.constraint, 2.0, max_relative = 1e-14);
            let d = solve_allocation_d(&g, 1.0, 1.0).unwrap();
            assert_relative_eq!(d.constraint, 1.0, max_relative = 1e-14);
        }
        let unit = solve_allocation_v(&gains(&[1.0; 3], &[1.0; 3]), 1.0, 1.0).unwrap();
        assert_relative_eq!(unit.t[0], 2.0 * SQRT_2 / 3f64.sqrt(), max_relative = 1e-14);
        let unit_d = solve_allocation_d(&gains(&[1.0; 3], &[1.0; 3]), 1.0, 1.0).unwrap();
        assert_relative_eq!(unit_d.t[0], 2.0 / 3f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn siso_unit() {
        let a = solve_allocation_v(&gains(&[1.0], &[1.0]), 0.25, 1.0).unwrap();
        assert_relative_eq!(a.t[0], 2.0 * SQRT_2, max_relative = 1e-15);
        assert_relative_eq!(a.objective, SQRT_2 / 0.25, max_relative = 1e-14);
    }

    #[test]
    fn objectives_are_capacities() {
        for seed in 0..10 {
            let g = random_gsvd(seed);
            let v = solve_allocation_v(&g, 0.7, 1.3).unwrap();
            assert_relative_eq!(
                v.objective,
                covert_capacity_v(&g, 0.7, 1.3),
                max_relative = 1e-12
            );
            assert_relative_eq!(v.constraint, BOUND_V, max_relative = 1e-9);
            let d = solve_allocation_d(&g, 0.7, 1.3).unwrap();
            assert_relative_eq!(
                d.objective,
                covert_capacity_d(&g, 0.7, 1.3),
                max_relative = 1e-12
            );
            for (tv, td) in v.t.iter().zip(&d.t) {
                assert_relative_eq!(*td, tv / SQRT_2, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn oracle_matches_closed_forms() {
        for seed in 100..120 {
            let g = random_gsvd(seed);
            for (closed, bound) in [
                (solve_allocation_v(&g, 0.5, 2.0).unwrap(), BOUND_V),
                (solve_allocation_d(&g, 0.5, 2.0).unwrap(), BOUND_D),
            ] {
                let o = numeric_oracle_allocation(&g, 0.5, 2.0, bound).unwrap();
                assert_relative_eq!(o.objective, closed.objective, max_relative = 1e-6);
                assert_relative_eq!(o.mu, closed.mu, max_relative = 1e-6);
                assert!((o.constraint - bound).abs() <= 1e-9 * bound);
            }
        }
    }

    #[test]
    fn vanishing_budget() {
        let g = random_gsvd(7);
        let objs: Vec<f64> = [1e-2, 1e-6, 1e-12]
            .iter()
            .map(|&b| {
                numeric_oracle_allocation(&g, 1.0, 1.0, b)
                    .unwrap()
                    .objective
            })
            .collect();
        assert!(objs.windows(2).all(|w| w[1] < w[0]));
        // objective scales like sqrt(bound)
        assert_relative_eq!(objs[2] / objs[0], 1e-5, max_relative = 1e-6);
        assert!(numeric_oracle_allocation(&g, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn allocation_follows_gain_ratio() {
        let g = random_gsvd(3);
        let a = solve_allocation_v(&g, 1.0, 1.0).unwrap();
        let k: Vec<f64> =
            a.t.iter()
                .zip(g.lambda_b().iter().zip(g.lambda_w().iter()))
                .map(|(t, (b, w))| t * w.powi(4) / (b * b))
                .collect();
        for x in &k {
            assert_relative_eq!(*x, k[0], max_relative = 1e-12);
        }
        assert!(a.t.iter().all(|t| *t > 0.0));
    }

    #[test]
    fn degenerate_warden_gain_fails() {
        let g = gains(&[1.0, 1.0], &[1.0, 1e-14]);
        assert!(matches!(
            solve_allocation_v(&g, 1.0, 1.0),
            Err(Error::DegenerateGain { index: 1, .. })
        ));
        assert!(numeric_oracle_allocation(&g, 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn feasibility() {
        let g = random_gsvd(11);
        let a = solve_allocation_v(&g, 1.0, 1.0).unwrap();
        let free = perturbed_feasibility(&a, 100, 0.2, 0.0).unwrap();
        assert_eq!(free.shrink, 1.0);
        assert!(free.feasible);

        let n = 10_000;
        let d = qinv(0.4).unwrap();
        let edge = 2.0 * (n as f64).sqrt() * d;
        assert!(matches!(
            perturbed_feasibility(&a, n, 0.2, edge),
            Err(Error::InfeasibleBudget { .. })
        ));

        let r = perturbed_feasibility(&a, n, 0.2, 1.0).unwrap();
        let slack = 1.0 / ((n as f64).sqrt() * d);
        assert!(!r.feasible);
        assert_relative_eq!(r.shrink, ((2.0 - slack) / 2.0).sqrt(), max_relative = 1e-9);
        let shrunk = a.scaled(r.shrink);
        assert!(shrunk.constraint <= r.budget * (1.0 + 1e-12));
        // first-order sensitivity: relative loss about slack / 4
        let loss = (a.objective - shrunk.objective) / a.objective;
        assert!(
            loss > 0.0 && loss <= slack / 2.0,
            "loss {loss} vs slack {slack}"
        );
    }

    #[test]
    fn constellation_powers() {
        let a = solve_allocation_v(&gains(&[1.0], &[1.0]), 1.0, 0.3).unwrap();
        let c = build_constellation(&a, &gains(&[1.0], &[1.0]), 100, 0.2).unwrap();
        assert_relative_eq!(
            c.rho[0],
            2.0 * SQRT_2 * 0.3 * qinv(0.4).unwrap() / 10.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            c.amplitudes[0] * c.amplitudes[0],
            c.rho[0],
            max_relative = 1e-14
        );

        let g = random_gsvd(5);
        let a = solve_allocation_v(&g, 1.0, 1.0).unwrap();
        let first = build_constellation(&a, &g, 1, 0.2).unwrap().rho[0];
        let mut prev = f64::INFINITY;
        for n in [1, 100, 10_000, 1_000_000, 100_000_000] {
            let c = build_constellation(&a, &g, n, 0.2).unwrap();
            let top = c.rho.iter().cloned().fold(0.0, f64::max);
            assert!(top < prev);
            prev = top;
            let e = c.q_n.clone().symmetric_eigen();
            assert!(e
                .eigenvalues
                .iter()
                .all(|l| *l >= -1e-10 * e.eigenvalues.max().abs()));
        }
        assert!(prev < 1e-3 * first);
    }

    #[test]
    fn covariance_ignores_normalization() {
        let g = random_gsvd(9);
        let h = g.rescale_columns(&[0.5, 3.0, 1.7, 0.2]).unwrap();
        let qa = build_constellation(&solve_allocation_v(&g, 1.0, 2.0).unwrap(), &g, 400, 0.2)
            .unwrap()
            .q_n;
        let qb = build_constellation(&solve_allocation_v(&h, 1.0, 2.0).unwrap(), &h, 400, 0.2)
            .unwrap()
            .q_n;
        assert!((&qa - &qb).norm() <= 1e-9 * qa.norm());
    }

    #[test]
    fn constellation_rejects_bad_input() {
        let g = gains(&[1.0], &[1.0]);
        let a = solve_allocation_v(&g, 1.0, 1.0).unwrap();
        assert!(build_constellation(&a, &g, 0, 0.2).is_err());
        assert!(build_constellation(&a, &g, 10, 1.5).is_err());
        assert!(Constellation::from_rho(&g, 10, vec![1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn oracle_agrees_on_random_gains(
            lb in prop::collection::vec(0.01f64..10.0, 1..6),
            seed in 0u64..1000,
            sb in 0.01f64..10.0,
            sw in 0.01f64..10.0,
        ) {
            let mut rng = trial_rng(seed, 1);
            let lw: Vec<f64> = lb.iter().map(|_| rand::Rng::random_range(&mut rng, 0.01..10.0)).collect();
            let g = gains(&lb, &lw);
            let v = solve_allocation_v(&g, sb, sw).unwrap();
            let o = numeric_oracle_allocation(&g, sb, sw, BOUND_V).unwrap();
            prop_assert!(((v.objective - o.objective) / v.objective).abs() <= 1e-6);
            prop_assert!(v.constraint <= BOUND_V + 1e-9);
            let d = solve_allocation_d(&g, sb, sw).unwrap();
            prop_assert!(d.constraint <= BOUND_D + 1e-9);
        }

        #[test]
        fn rescaling_keeps_received_power(seed in 0u64..200, c in prop::collection::vec(0.1f64..10.0, 4)) {
            let g = random_gsvd(seed);
            let h = g.rescale_columns(&c).unwrap();
            let a = solve_allocation_v(&g, 1.0, 1.0).unwrap();
            let b = solve_allocation_v(&h, 1.0, 1.0).unwrap();
            for ((tb, ta), cj) in b.t.iter().zip(&a.t).zip(&c) {
                prop_assert!((tb / ta - cj * cj).abs() <= 1e-9 * cj * cj);
            }
            prop_assert!(((a.objective - b.objective) / a.objective).abs() <= 1e-9);
        }
    }
}
