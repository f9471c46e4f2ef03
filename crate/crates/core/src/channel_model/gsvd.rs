use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::linalg::{numerical_rank, vstack};
use super::ChannelPair;
use crate::error::{Error, Link, Result};

/// Joint factorization `H_b = U_b diag(lambda_b) V^T`, `H_w = U_w diag(lambda_w) V^T`.
///
/// `decompose_gsvd` returns gains normalized so that
/// `lambda_b[j]^2 + lambda_w[j]^2 = 1`, sorted by descending
/// `lambda_b[j] / lambda_w[j]`. Decompositions built from explicit gains keep
/// whatever scale they were given; downstream formulas only use the ratios
/// together with the matching `V`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GsvdDecomposition {
    #[serde(serialize_with = "ser_matrix")]
    u_b: DMatrix<f64>,
    #[serde(serialize_with = "ser_matrix")]
    u_w: DMatrix<f64>,
    #[serde(serialize_with = "ser_vector")]
    lambda_b: DVector<f64>,
    #[serde(serialize_with = "ser_vector")]
    lambda_w: DVector<f64>,
    #[serde(serialize_with = "ser_matrix")]
    v: DMatrix<f64>,
}

/// Warden gains below this fraction of the largest one are rejected by the
/// power-design solvers.
pub const DEGENERATE_GAIN_RTOL: f64 = 1e-12;

impl GsvdDecomposition {
    /// Parallel sub-channels given directly by their gains, with
    /// `U_b = U_w = V = I_m`.
    pub fn from_gains(lambda_b: Vec<f64>, lambda_w: Vec<f64>) -> Result<Self> {
        let m = lambda_b.len();
        let id = DMatrix::identity(m, m);
        Self::from_parts(id.clone(), id.clone(), lambda_b.into(), lambda_w.into(), id)
    }

    pub fn from_parts(
        u_b: DMatrix<f64>,
        u_w: DMatrix<f64>,
        lambda_b: DVector<f64>,
        lambda_w: DVector<f64>,
        v: DMatrix<f64>,
    ) -> Result<Self> {
        let m = lambda_b.len();
        if m == 0 {
            return Err(Error::DimensionMismatch("no sub-channels".into()));
        }
        if lambda_w.len() != m || u_b.ncols() != m || u_w.ncols() != m || v.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "inconsistent sub-channel count: lambda_b {m}, lambda_w {}, U_b {}, U_w {}, V {}",
                lambda_w.len(),
                u_b.ncols(),
                u_w.ncols(),
                v.ncols()
            )));
        }
        for (name, gains) in [("lambda_b", &lambda_b), ("lambda_w", &lambda_w)] {
            if let Some(bad) = gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("gains must be positive and finite, got {bad}"),
                });
            }
        }
        Ok(Self {
            u_b,
            u_w,
            lambda_b,
            lambda_w,
            v,
        })
    }

    /// Number of parallel sub-channels.
    pub fn m(&self) -> usize {
        self.lambda_b.len()
    }

    pub fn lambda_b(&self) -> &DVector<f64> {
        &self.lambda_b
    }

    pub fn lambda_w(&self) -> &DVector<f64> {
        &self.lambda_w
    }

    pub fn u_b(&self) -> &DMatrix<f64> {
        &self.u_b
    }

    pub fn u_w(&self) -> &DMatrix<f64> {
        &self.u_w
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// `lambda_b[j] / lambda_w[j]` for every sub-channel.
    pub fn ratios(&self) -> impl Iterator<Item = f64> + '_ {
        self.lambda_b
            .iter()
            .zip(self.lambda_w.iter())
            .map(|(b, w)| b / w)
    }

    /// `tr(Λ_b^k Λ_w^{-k})`.
    pub fn trace_ratio_pow(&self, k: i32) -> f64 {
        self.ratios().map(|r| r.powi(k)).sum()
    }

    /// `tr(Λ_b² Λ_w⁻²)`.
    pub fn tr2(&self) -> f64 {
        self.trace_ratio_pow(2)
    }

    /// `tr(Λ_b⁴ Λ_w⁻⁴)`.
    pub fn tr4(&self) -> f64 {
        self.trace_ratio_pow(4)
    }

    /// Same main channel and alignment, different warden gains.
    pub fn with_warden_gains(&self, lambda_w: &[f64]) -> Result<Self> {
        Self::from_parts(
            self.u_b.clone(),
            self.u_w.clone(),
            self.lambda_b.clone(),
            DVector::from_column_slice(lambda_w),
            self.v.clone(),
        )
    }

    /// Equivalent factorization with column `j` of `V` multiplied by `c[j]`
    /// and both gains of sub-channel `j` divided by `c[j]`.
    pub fn rescale_columns(&self, c: &[f64]) -> Result<Self> {
        if c.len() != self.m() {
            return Err(Error::DimensionMismatch(format!(
                "{} scale factors for {} sub-channels",
                c.len(),
                self.m()
            )));
        }
        let mut v = self.v.clone();
        let mut lb = self.lambda_b.clone();
        let mut lw = self.lambda_w.clone();
        for (j, &cj) in c.iter().enumerate() {
            if !(cj.is_finite() && cj > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "scale",
                    reason: format!("column scale must be positive, got {cj}"),
                });
            }
            v.column_mut(j).scale_mut(cj);
            lb[j] /= cj;
            lw[j] /= cj;
        }
        Self::from_parts(self.u_b.clone(), self.u_w.clone(), lb, lw, v)
    }

    /// `U_b diag(lambda_b) V^T`.
    pub fn h_b(&self) -> DMatrix<f64> {
        &self.u_b * DMatrix::from_diagonal(&self.lambda_b) * self.v.transpose()
    }

    /// `U_w diag(lambda_w) V^T`.
    pub fn h_w(&self) -> DMatrix<f64> {
        &self.u_w * DMatrix::from_diagonal(&self.lambda_w) * self.v.transpose()
    }

    /// Warden-side realignment `Λ_b Λ_w⁻¹ U_wᵀ` (m × N_w); equals
    /// `H_b H_w†` up to the left orthogonal factor of `H_b`.
    pub fn realigner(&self) -> DMatrix<f64> {
        let scale = DVector::from_iterator(self.m(), self.ratios());
        DMatrix::from_diagonal(&scale) * self.u_w.transpose()
    }

    /// Precoder `(V^T)^{-1}` mapping sub-channel symbols to antenna inputs.
    pub fn precoder(&self) -> Result<DMatrix<f64>> {
        self.v
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::DimensionMismatch("V is not square and invertible".into()))
    }

    /// Fails when a warden gain is negligible next to the largest one.
    pub fn check_warden_gains(&self) -> Result<()> {
        let max = self.lambda_w.max();
        for (index, &value) in self.lambda_w.iter().enumerate() {
            if value < DEGENERATE_GAIN_RTOL * max {
                return Err(Error::DegenerateGain { index, value });
            }
        }
        Ok(())
    }
}

/// GSVD of a full-rank pair through the CS decomposition of the stacked
/// matrix `[H_b; H_w] = [Q_1; Q_2] R`.
///
/// With `Q_1 = U_b C Z^T` (SVD) the columns of `Q_2 Z` are orthogonal with
/// norms `s_j = sqrt(1 - c_j^2)`, so `U_w = Q_2 Z S^{-1}` and `V = R^T Z`.
pub fn decompose_gsvd(pair: &ChannelPair, rank_rtol: f64) -> Result<GsvdDecomposition> {
    let n_a = pair.n_a();
    for (which, h) in [(Link::Main, pair.h_b()), (Link::Warden, pair.h_w())] {
        let rank = numerical_rank(h, rank_rtol);
        if rank < n_a {
            return Err(Error::RankDeficient {
                which,
                rank,
                required: n_a,
            });
        }
    }

    let n_b = pair.n_b();
    let n_w = pair.n_w();
    let qr = vstack(pair.h_b(), pair.h_w()).qr();
    let q = qr.q();
    let r = qr.r();
    let q1 = q.rows(0, n_b).into_owned();
    let q2 = q.rows(n_b, n_w).into_owned();

    let svd = q1.svd(true, true);
    let u1 = svd.u.expect("u requested");
    let z = svd.v_t.expect("v_t requested").transpose();
    let w = &q2 * &z;
    let rt_z = r.transpose() * &z;

    let mut cols: Vec<(usize, f64, f64)> = (0..n_a)
        .map(|j| {
            let c = svd.singular_values[j];
            let s = w.column(j).norm();
            (j, c, s)
        })
        .collect();
    cols.sort_by(|a, b| (b.1 / b.2).total_cmp(&(a.1 / a.2)));

    let mut u_b = DMatrix::zeros(n_b, n_a);
    let mut u_w = DMatrix::zeros(n_w, n_a);
    let mut v = DMatrix::zeros(n_a, n_a);
    let mut lambda_b = DVector::zeros(n_a);
    let mut lambda_w = DVector::zeros(n_a);
    for (dst, &(src, c, s)) in cols.iter().enumerate() {
        // c^2 + s^2 = 1 up to rounding; fold the residual into V.
        let h = c.hypot(s);
        u_b.set_column(dst, &u1.column(src));
        u_w.set_column(dst, &(w.column(src) / s));
        v.set_column(dst, &(rt_z.column(src) * h));
        lambda_b[dst] = c / h;
        lambda_w[dst] = s / h;
    }
    GsvdDecomposition::from_parts(u_b, u_w, lambda_b, lambda_w, v)
}

fn ser_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in m.row_iter() {
        seq.serialize_element(&r.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

fn ser_vector<S: serde::Serializer>(
    v: &DVector<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(h_b: DMatrix<f64>, h_w: DMatrix<f64>) -> ChannelPair {
        ChannelPair::new(h_b, h_w, 1.0, 1.0).unwrap()
    }

    fn random_pair(rng: &mut ChaCha8Rng, n_a: usize, n_b: usize, n_w: usize) -> ChannelPair {
        let h_b = DMatrix::from_fn(n_b, n_a, |_, _| rng.random_range(-1.0..1.0));
        let h_w = DMatrix::from_fn(n_w, n_a, |_, _| rng.random_range(-1.0..1.0));
        pair(h_b, h_w)
    }

    /// Generalized eigenvalues of (H_b^T H_b, H_w^T H_w) via Cholesky reduction.
    fn generalized_eigenvalues(p: &ChannelPair) -> Vec<f64> {
        let a = p.h_b().transpose() * p.h_b();
        let b = p.h_w().transpose() * p.h_w();
        let l = b.cholesky().unwrap().l();
        let l_inv = l.try_inverse().unwrap();
        let c = &l_inv * a * l_inv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let mut ev: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    #[test]
    fn identity_pair_splits_evenly() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let g = decompose_gsvd(&pair(i2.clone(), i2), 1e-10).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for j in 0..2 {
            assert_relative_eq!(g.lambda_b()[j], h, epsilon = 1e-12);
            assert_relative_eq!(g.lambda_w()[j], h, epsilon = 1e-12);
        }
        // V = sqrt(2) times an orthogonal matrix
        let vtv = g.v().transpose() * g.v();
        assert_relative_eq!(vtv, DMatrix::identity(2, 2) * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_ratios_read_off() {
        let h_b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let h_w = DMatrix::<f64>::identity(2, 2);
        let g = decompose_gsvd(&pair(h_b, h_w), 1e-10).unwrap();
        let ratios: Vec<f64> = g.ratios().collect();
        assert_relative_eq!(ratios[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(ratios[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn random_pair_matches_generalized_eigenproblem() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = random_pair(&mut rng, 4, 4, 4);
        let g = decompose_gsvd(&p, 1e-10).unwrap();
        assert!((g.h_b() - p.h_b()).norm() <= 1e-10 * p.h_b().norm());
        assert!((g.h_w() - p.h_w()).norm() <= 1e-10 * p.h_w().norm());
        let ev = generalized_eigenvalues(&p);
        for (r, e) in g.ratios().zip(ev) {
            assert_relative_eq!(r * r, e, max_relative = 1e-8);
        }
    }

    #[test]
    fn tall_pair_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_pair(&mut rng, 3, 5, 6);
        let g = decompose_gsvd(&p, 1e-10).unwrap();
        let id = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(g.u_b().transpose() * g.u_b(), id, epsilon = 1e-10);
        assert_relative_eq!(g.u_w().transpose() * g.u_w(), id, epsilon = 1e-10);
        for j in 0..3 {
            assert_relative_eq!(
                g.lambda_b()[j].powi(2) + g.lambda_w()[j].powi(2),
                1.0,
                epsilon = 1e-12
            );
        }
        let r: Vec<f64> = g.ratios().collect();
        assert!(r.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_deficient_reports_which_channel() {
        let h_b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let h_w = DMatrix::<f64>::identity(2, 2);
        match decompose_gsvd(&pair(h_b, h_w), 1e-10) {
            Err(Error::RankDeficient {
                which,
                rank,
                required,
            }) => {
                assert_eq!(which, Link::Main);
                assert_eq!(rank, 1);
                assert_eq!(required, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rescaling_preserves_reconstruction() {
        let g = GsvdDecomposition::from_gains(vec![2.0, 1.0], vec![1.0, 3.0]).unwrap();
        let r = g.rescale_columns(&[0.5, 4.0]).unwrap();
        assert_relative_eq!(g.h_b(), r.h_b(), epsilon = 1e-14);
        assert_relative_eq!(g.h_w(), r.h_w(), epsilon = 1e-14);
        assert_relative_eq!(g.tr4(), r.tr4(), max_relative = 1e-14);
    }

    #[test]
    fn from_gains_rejects_nonpositive() {
        assert!(GsvdDecomposition::from_gains(vec![1.0], vec![0.0]).is_err());
        assert!(GsvdDecomposition::from_gains(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(GsvdDecomposition::from_gains(vec![], vec![]).is_err());
    }

    #[test]
    fn degenerate_warden_gain_is_flagged() {
        let g = GsvdDecomposition::from_gains(vec![1.0, 1.0], vec![1.0, 1e-13]).unwrap();
        assert!(matches!(
            g.check_warden_gains(),
            Err(Error::DegenerateGain { index: 1, .. })
        ));
    }
}
