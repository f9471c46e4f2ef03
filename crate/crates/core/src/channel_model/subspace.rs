#[cfg(test)]
use nalgebra::DMatrix;
use serde::Serialize;

#[cfg(test)]
use super::linalg::null_space;
use super::linalg::{numerical_rank, vstack};
use super::ChannelPair;

/// Dimensions of the four transmit subspaces of a (possibly rank-deficient)
/// channel pair.
///
/// * `p`: directions seen by the main receiver only,
/// * `q`: directions seen by both,
/// * `dim_s_w`: directions seen by the warden only,
/// * `dim_s_n`: directions seen by neither.
///
/// The covert square-root law applies exactly when the pair is reduced to
/// the shared subspace: `p = 0`, `m = p + q` and `N_a = m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SubspaceReport {
    pub n_a: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    pub dim_s_w: usize,
    pub dim_s_n: usize,
    pub square_root_law_holds: bool,
}

/// Subspace dimensions from the numerical ranks of `H_b`, `H_w` and the
/// stacked matrix.
///
/// Directions outside the common null space split into those annihilated by
/// `H_w` (`p = m - rank H_w`), those annihilated by `H_b`
/// (`m - rank H_b`), and the rest.
pub fn classify_subspaces(pair: &ChannelPair, rank_rtol: f64) -> SubspaceReport {
    let r_b = numerical_rank(pair.h_b(), rank_rtol);
    let r_w = numerical_rank(pair.h_w(), rank_rtol);
    let m = numerical_rank(&vstack(pair.h_b(), pair.h_w()), rank_rtol);
    let n_a = pair.n_a();
    let p = m - r_w;
    let dim_s_w = m - r_b;
    let q = m - p - dim_s_w;
    SubspaceReport {
        n_a,
        m,
        p,
        q,
        dim_s_w,
        dim_s_n: n_a - m,
        square_root_law_holds: p == 0 && m == p + q && n_a == m,
    }
}

/// Dimension of the intersection of two column spans.
#[cfg(test)]
pub(crate) fn intersection_dim(a: &DMatrix<f64>, b: &DMatrix<f64>, rtol: f64) -> usize {
    let da = a.ncols();
    let db = b.ncols();
    if da == 0 || db == 0 {
        return 0;
    }
    let mut joined = DMatrix::zeros(a.nrows(), da + db);
    joined.columns_mut(0, da).copy_from(a);
    joined.columns_mut(da, db).copy_from(b);
    da + db - numerical_rank(&joined, rtol)
}

/// Orthonormal basis of the orthogonal complement of span(`basis`) in R^n.
#[cfg(test)]
pub(crate) fn complement(basis: &DMatrix<f64>, n: usize, rtol: f64) -> DMatrix<f64> {
    if basis.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    null_space(&basis.transpose(), rtol)
}
