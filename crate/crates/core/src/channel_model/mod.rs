//! The MIMO-AWGN scenario and its joint (generalized) singular value
//! coordinates.
//!
//! Every other module works on the parallel sub-channels exposed by
//! [`GsvdDecomposition`]: sub-channel `j` has main gain `lambda_b[j]` and
//! warden gain `lambda_w[j]`, and only the ratios between the two enter the
//! capacity formulas.

mod gsvd;
mod linalg;
mod subspace;

use nalgebra::DMatrix;

use crate::error::{check_positive, Error, Result};

pub use gsvd::{decompose_gsvd, GsvdDecomposition};
pub use linalg::{null_space, numerical_rank, pseudo_inverse, singular_values, DEFAULT_RANK_RTOL};
pub use subspace::{classify_subspaces, SubspaceReport};

/// Main and warden channel matrices with their noise variances.
///
/// Both matrices share the transmitter dimension `N_a` (columns); the
/// receivers are assumed to have at least as many antennas as the
/// transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPair {
    h_b: DMatrix<f64>,
    h_w: DMatrix<f64>,
    sigma_b2: f64,
    sigma_w2: f64,
}

impl ChannelPair {
    pub fn new(h_b: DMatrix<f64>, h_w: DMatrix<f64>, sigma_b2: f64, sigma_w2: f64) -> Result<Self> {
        if h_b.ncols() != h_w.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "H_b has {} columns but H_w has {}",
                h_b.ncols(),
                h_w.ncols()
            )));
        }
        let n_a = h_b.ncols();
        if n_a == 0 {
            return Err(Error::DimensionMismatch(
                "channel matrices have no columns".into(),
            ));
        }
        if h_b.nrows() < n_a || h_w.nrows() < n_a {
            return Err(Error::DimensionMismatch(format!(
                "receivers need at least N_a = {n_a} antennas (N_b = {}, N_w = {})",
                h_b.nrows(),
                h_w.nrows()
            )));
        }
        if h_b.iter().chain(h_w.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "channel",
                reason: "matrix entries must be finite".into(),
            });
        }
        check_positive("sigma_b2", sigma_b2)?;
        check_positive("sigma_w2", sigma_w2)?;
        Ok(Self {
            h_b,
            h_w,
            sigma_b2,
            sigma_w2,
        })
    }

    pub fn h_b(&self) -> &DMatrix<f64> {
        &self.h_b
    }

    pub fn h_w(&self) -> &DMatrix<f64> {
        &self.h_w
    }

    pub fn sigma_b2(&self) -> f64 {
        self.sigma_b2
    }

    pub fn sigma_w2(&self) -> f64 {
        self.sigma_w2
    }

    /// Transmit antennas.
    pub fn n_a(&self) -> usize {
        self.h_b.ncols()
    }

    pub fn n_b(&self) -> usize {
        self.h_b.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.h_w.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_noise() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            ChannelPair::new(i2.clone(), i3.clone(), 1.0, 1.0),
            Err(Error::DimensionMismatch(_))
        ));
        // fewer receive than transmit antennas
        let wide = DMatrix::<f64>::zeros(1, 2);
        assert!(matches!(
            ChannelPair::new(wide, i2.clone(), 1.0, 1.0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(ChannelPair::new(i2.clone(), i2.clone(), 0.0, 1.0).is_err());
        assert!(ChannelPair::new(i2.clone(), i2.clone(), 1.0, -1.0).is_err());
        assert!(ChannelPair::new(i2.clone(), i2, 1.0, 1.0).is_ok());
    }
}
