use nalgebra::{DMatrix, DVector};

/// Default relative tolerance for numerical rank decisions.
pub const DEFAULT_RANK_RTOL: f64 = 1e-10;

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(sv)
}

/// Number of singular values strictly above `rtol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    let sv = singular_values(m);
    let Some(&smax) = sv.iter().next() else {
        return 0;
    };
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

/// Moore-Penrose inverse; singular values at or below `rtol * sigma_max`
/// are treated as zero.
pub fn pseudo_inverse(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let mut out = DMatrix::zeros(cols, rows);
    if smax <= 0.0 {
        return out;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rtol * smax {
            // out += v_k * u_k^T / s
            out += (v_t.row(k).transpose() * u.column(k).transpose()) / s;
        }
    }
    out
}

/// Orthonormal basis of the null space of `m` (columns), using the same
/// rank rule as [`numerical_rank`].
pub fn null_space(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    // Pad with zero rows so the SVD returns a full right basis.
    let mut padded = DMatrix::zeros(m.nrows().max(cols), cols);
    padded.rows_mut(0, m.nrows()).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let null_idx: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax <= 0.0 || s <= rtol * smax)
        .map(|(k, _)| k)
        .collect();
    let mut basis = DMatrix::zeros(cols, null_idx.len());
    for (c, &k) in null_idx.iter().enumerate() {
        basis.set_column(c, &v_t.row(k).transpose());
    }
    basis
}

pub(crate) fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(top.ncols(), bottom.ncols());
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}
