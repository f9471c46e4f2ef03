//! Variational distance and relative entropy between the warden's output
//! distributions with and without transmission.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::allocation::Constellation;
use crate::capacity::qfunc;
use crate::channel_model::GsvdDecomposition;
use crate::covert_code::Codebook;
use crate::error::{check_positive, Error, Result};
use crate::mc::{trial_rng, KahanSum, Z_95};

/// Largest code for which the exact mixture likelihood ratio is evaluated.
pub const MAX_MIXTURE_WORDS: usize = 4096;

/// `ln cosh x` without overflow.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        // cosh a - 1 = 2 sinh²(a/2) keeps relative accuracy near zero
        (2.0 * (a / 2.0).sinh().powi(2)).ln_1p()
    } else {
        a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
    }
}

/// `ln Σ exp(v)` with the maximum shifted out.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_shapes(constellation: &Constellation, gsvd: &GsvdDecomposition) -> Result<()> {
    if constellation.m() != gsvd.m() {
        return Err(Error::DimensionMismatch(format!(
            "constellation has {} sub-channels, decomposition {}",
            constellation.m(),
            gsvd.m()
        )));
    }
    Ok(())
}

/// Leading Gaussian term of `V(Q_n^n, Q_0^n)` for the product BPSK input,
/// `1 - 2 Q(sqrt((n/2) Σ λ_w⁴ ρ² / (4σ_w⁴)))`, with `n` taken from the
/// constellation.
pub fn product_form_v(
    gsvd: &GsvdDecomposition,
    constellation: &Constellation,
    sigma_w2: f64,
) -> Result<f64> {
    check_shapes(constellation, gsvd)?;
    check_positive("sigma_w2", sigma_w2)?;
    let load: f64 = gsvd
        .lambda_w()
        .iter()
        .zip(&constellation.rho)
        .map(|(l, r)| (l * l * r).powi(2))
        .sum::<f64>()
        / (4.0 * sigma_w2 * sigma_w2);
    let x = (constellation.n as f64 / 2.0 * load).sqrt();
    Ok((1.0 - 2.0 * qfunc(x)).clamp(0.0, 1.0))
}

/// Per-letter log-likelihood ratio of the BPSK product input against
/// silence for one post-processed warden observation.
pub fn mixture_llr(
    observation: &[f64],
    constellation: &Constellation,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
) -> f64 {
    let lw = gsvd.lambda_w();
    observation
        .iter()
        .enumerate()
        .map(|(j, z)| {
            -lw[j] * lw[j] * constellation.rho[j] / (2.0 * sigma_w2)
                + log_cosh(lw[j] * constellation.amplitudes[j] * z / sigma_w2)
        })
        .sum()
}

/// Gaussian-input relative entropy per channel use,
/// `½ Σ [s_j - ln(1 + s_j)]` with `s_j = λ_{w,j}² ρ_j / σ_w²`.
pub fn kl_per_letter(
    constellation: &Constellation,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
) -> Result<f64> {
    check_shapes(constellation, gsvd)?;
    check_positive("sigma_w2", sigma_w2)?;
    Ok(0.5
        * gsvd
            .lambda_w()
            .iter()
            .zip(&constellation.rho)
            .map(|(l, r)| {
                let s = l * l * r / sigma_w2;
                s - s.ln_1p()
            })
            .sum::<f64>())
}

/// Two-sample Monte Carlo estimate of a variational distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VEstimate {
    pub v_mc: f64,
    pub half_width: f64,
    /// Exceedance rate under the transmitted distribution.
    pub p_alt: f64,
    /// Exceedance rate under silence.
    pub p_null: f64,
}

/// `V(P, Q) = P[L ≥ 0] - Q[L ≥ 0]` for the log-likelihood ratio `L`;
/// the first half of the trials sample `P`, the rest `Q`.
fn two_sample<F>(trials: usize, seed: u64, llr_sample: F) -> Result<VEstimate>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng, bool) -> f64 + Sync,
{
    if trials < 2 {
        return Err(Error::InvalidParameter {
            name: "trials",
            reason: "need at least two trials (one per distribution)".into(),
        });
    }
    let n_alt = trials / 2;
    let n_null = trials - n_alt;
    let (hits_alt, hits_null) = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let alt = t < n_alt;
            let hit = usize::from(llr_sample(&mut rng, alt) >= 0.0);
            if alt {
                (hit, 0)
            } else {
                (0, hit)
            }
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let p_alt = hits_alt as f64 / n_alt as f64;
    let p_null = hits_null as f64 / n_null as f64;
    let var = p_alt * (1.0 - p_alt) / n_alt as f64 + p_null * (1.0 - p_null) / n_null as f64;
    Ok(VEstimate {
        v_mc: p_alt - p_null,
        half_width: Z_95 * var.sqrt(),
        p_alt,
        p_null,
    })
}

/// Monte Carlo `V(Q_n^n, Q_0^n)` for the product BPSK input.
pub fn v_product_mc(
    constellation: &Constellation,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
    trials: usize,
    seed: u64,
) -> Result<VEstimate> {
    check_shapes(constellation, gsvd)?;
    check_positive("sigma_w2", sigma_w2)?;
    let (m, n) = (constellation.m(), constellation.n);
    let sd = sigma_w2.sqrt();
    let lw = gsvd.lambda_w();
    two_sample(trials, seed, |rng, alt| {
        let mut z = vec![0.0; m];
        let mut sum = KahanSum::new();
        for _ in 0..n {
            for (j, zj) in z.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(rng);
                *zj = sd * e;
                if alt {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    *zj += s * lw[j] * constellation.amplitudes[j];
                }
            }
            sum.add(mixture_llr(&z, constellation, gsvd, sigma_w2));
        }
        sum.value()
    })
}

/// Monte Carlo `V(Q̂^n, Q_0^n)` for the output distribution induced by a
/// uniformly chosen codeword, using the exact code-mixture likelihood ratio.
pub fn v_codebook_mc(
    codebook: &Codebook,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
    trials: usize,
    seed: u64,
) -> Result<VEstimate> {
    let words = codebook.word_count();
    if words > MAX_MIXTURE_WORDS {
        return Err(Error::BudgetExceeded {
            requested: words as u128,
            limit: MAX_MIXTURE_WORDS as u128,
        });
    }
    check_shapes(codebook.constellation(), gsvd)?;
    check_positive("sigma_w2", sigma_w2)?;
    let (m, n) = (codebook.m(), codebook.n());
    let sd = sigma_w2.sqrt();
    let lw = gsvd.lambda_w();
    let amp = &codebook.constellation().amplitudes;
    // received amplitude per sub-channel, and the common energy term of
    // every BPSK word
    let gain: Vec<f64> = (0..m).map(|j| lw[j] * amp[j]).collect();
    let energy = n as f64 * gain.iter().map(|g| g * g).sum::<f64>() / (2.0 * sigma_w2);
    let log_words = (words as f64).ln();
    two_sample(trials, seed, |rng, alt| {
        let sent = if alt {
            Some(codebook.signs(rng.random_range(0..words)))
        } else {
            None
        };
        let mut weighted = Vec::with_capacity(m * n);
        for i in 0..n {
            for j in 0..m {
                let e: f64 = StandardNormal.sample(rng);
                let mut z = sd * e;
                if let Some(s) = sent {
                    z += f64::from(s[i * m + j]) * gain[j];
                }
                weighted.push(gain[j] * z / sigma_w2);
            }
        }
        let ll: Vec<f64> = (0..words)
            .map(|w| {
                let corr: f64 = codebook
                    .signs(w)
                    .iter()
                    .zip(&weighted)
                    .map(|(s, c)| f64::from(*s) * c)
                    .sum();
                corr - energy
            })
            .collect();
        log_sum_exp(&ll) - log_words
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovertnessReport {
    pub n: usize,
    pub delta: f64,
    pub v_closed: f64,
    pub v_mc: f64,
    pub half_width: f64,
    pub kl_per_letter: f64,
}

/// Closed form, product-input Monte Carlo and relative entropy for one
/// constellation.
pub fn covertness_report(
    constellation: &Constellation,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<CovertnessReport> {
    let mc = v_product_mc(constellation, gsvd, sigma_w2, trials, seed)?;
    Ok(CovertnessReport {
        n: constellation.n,
        delta,
        v_closed: product_form_v(gsvd, constellation, sigma_w2)?,
        v_mc: mc.v_mc,
        half_width: mc.half_width,
        kl_per_letter: kl_per_letter(constellation, gsvd, sigma_w2)?,
    })
}
