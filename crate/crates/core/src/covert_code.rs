//! Random BPSK covert codes over the parallel sub-channels: sizing,
//! generation, transmission, maximum-likelihood decoding and a reliability
//! Monte Carlo harness.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::allocation::{AllocationResult, Constellation};
use crate::capacity::CovertnessBudget;
use crate::channel_model::GsvdDecomposition;
use crate::error::{check_positive, check_unit_interval, Error, Result};
use crate::mc::{binomial_half_width, trial_rng};

/// Largest number of stored code symbols (`M K m n`) accepted by default.
pub const DEFAULT_SCALAR_BUDGET: u128 = 1 << 26;
/// Desk-scale cap on the message count.
pub const MAX_MESSAGES: usize = 1 << 12;
/// Desk-scale cap on the key count.
pub const MAX_KEYS: usize = 1 << 4;

/// Message and message-plus-key sizes in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodeSize {
    pub log_m: f64,
    pub log_mk: f64,
}

impl CodeSize {
    pub fn log_k(&self) -> f64 {
        self.log_mk - self.log_m
    }

    /// `floor(e^{log M})` clamped to `[1, cap]`.
    pub fn messages(&self, cap: usize) -> usize {
        clamp_count(self.log_m, cap)
    }

    /// `floor(e^{log K})` clamped to `[1, cap]`.
    pub fn keys(&self, cap: usize) -> usize {
        clamp_count(self.log_k(), cap)
    }
}

fn clamp_count(log: f64, cap: usize) -> usize {
    if log >= (cap as f64).ln() {
        cap
    } else {
        (log.exp().floor() as usize).clamp(1, cap.max(1))
    }
}

/// Code sizes that keep both the decoding error and the warden's
/// variational distance under control:
/// `log M = (1-ξ) (sqrt(n) d / 2σ_b²) tr(Λ_b² T)` and
/// `log MK = (1+ξ) (sqrt(n) d / 2σ_w²) tr(Λ_w² T)`.
pub fn size_code(
    gsvd: &GsvdDecomposition,
    alloc: &AllocationResult,
    sigma_b2: f64,
    sigma_w2: f64,
    n: usize,
    delta: f64,
    xi: f64,
) -> Result<CodeSize> {
    check_unit_interval("xi", xi)?;
    check_positive("sigma_b2", sigma_b2)?;
    check_positive("sigma_w2", sigma_w2)?;
    let d = CovertnessBudget::new(delta)?.d;
    let scale = (n as f64).sqrt() * d;
    let weighted = |gains: &nalgebra::DVector<f64>| -> f64 {
        gains.iter().zip(&alloc.t).map(|(l, t)| l * l * t).sum()
    };
    let log_m = (1.0 - xi) * scale / (2.0 * sigma_b2) * weighted(gsvd.lambda_b());
    let log_mk = (1.0 + xi) * scale / (2.0 * sigma_w2) * weighted(gsvd.lambda_w());
    if log_mk < log_m {
        return Err(Error::KeySizeNegative { log_m, log_mk });
    }
    Ok(CodeSize { log_m, log_mk })
}

/// `M K` BPSK codewords of `n` symbols on `m` sub-channels.
///
/// Word `k * M + l` carries message `l` under key `k`, so every key's
/// sub-code is contiguous. Symbols are stored as signs; the magnitude of
/// every symbol on sub-channel `j` is `constellation.amplitudes[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    messages: usize,
    keys: usize,
    n: usize,
    signs: Vec<i8>,
    constellation: Constellation,
}

impl Codebook {
    /// Codebook from explicit signs laid out word by word, then symbol by
    /// symbol, then sub-channel.
    pub fn from_signs(
        constellation: Constellation,
        messages: usize,
        keys: usize,
        signs: Vec<i8>,
    ) -> Result<Self> {
        if messages == 0 || keys == 0 {
            return Err(Error::EmptyCodebook);
        }
        let n = constellation.n;
        let expected = messages * keys * n * constellation.m();
        if signs.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} signs for {messages} x {keys} words of {n} x {} symbols",
                signs.len(),
                constellation.m()
            )));
        }
        if signs.iter().any(|s| s.abs() != 1) {
            return Err(Error::InvalidParameter {
                name: "signs",
                reason: "code symbols must be +1 or -1".into(),
            });
        }
        Ok(Self {
            messages,
            keys,
            n,
            signs,
            constellation,
        })
    }

    pub fn messages(&self) -> usize {
        self.messages
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.constellation.m()
    }

    pub fn word_count(&self) -> usize {
        self.messages * self.keys
    }

    pub fn constellation(&self) -> &Constellation {
        &self.constellation
    }

    pub fn word_index(&self, message: usize, key: usize) -> Result<usize> {
        if message >= self.messages {
            return Err(Error::IndexOutOfRange {
                what: "message",
                index: message,
                size: self.messages,
            });
        }
        if key >= self.keys {
            return Err(Error::IndexOutOfRange {
                what: "key",
                index: key,
                size: self.keys,
            });
        }
        Ok(key * self.messages + message)
    }

    /// Signs of word `w`, symbol-major.
    pub fn signs(&self, w: usize) -> &[i8] {
        let len = self.n * self.m();
        &self.signs[w * len..(w + 1) * len]
    }

    /// Word `w` as an `m x n` matrix of symbols.
    pub fn word(&self, w: usize) -> DMatrix<f64> {
        let m = self.m();
        let s = self.signs(w);
        DMatrix::from_fn(m, self.n, |j, i| {
            f64::from(s[i * m + j]) * self.constellation.amplitudes[j]
        })
    }

    /// Antenna inputs `(V^T)^{-1} x̃` for word `w` (`N_a x n`).
    pub fn antenna_inputs(&self, w: usize, gsvd: &GsvdDecomposition) -> Result<DMatrix<f64>> {
        Ok(gsvd.precoder()? * self.word(w))
    }

    /// One codeword per line, entries of the `m x n` word in row-major
    /// order separated by single spaces.
    pub fn write_text<W: Write>(&self, mut out: W) -> io::Result<()> {
        for w in 0..self.word_count() {
            let word = self.word(w);
            let mut line = String::new();
            for j in 0..self.m() {
                for i in 0..self.n {
                    if !line.is_empty() {
                        line.push(' ');
                    }
                    line.push_str(&word[(j, i)].to_string());
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Draws `M K` codewords with i.i.d. uniform signs.
pub fn generate(
    gsvd: &GsvdDecomposition,
    constellation: &Constellation,
    messages: usize,
    keys: usize,
    seed: u64,
) -> Result<Codebook> {
    generate_with_budget(
        gsvd,
        constellation,
        messages,
        keys,
        seed,
        DEFAULT_SCALAR_BUDGET,
    )
}

pub fn generate_with_budget(
    gsvd: &GsvdDecomposition,
    constellation: &Constellation,
    messages: usize,
    keys: usize,
    seed: u64,
    budget: u128,
) -> Result<Codebook> {
    if constellation.m() != gsvd.m() {
        return Err(Error::DimensionMismatch(format!(
            "constellation has {} sub-channels, decomposition {}",
            constellation.m(),
            gsvd.m()
        )));
    }
    let requested =
        messages as u128 * keys as u128 * constellation.n as u128 * constellation.m() as u128;
    if requested > budget {
        return Err(Error::BudgetExceeded {
            requested,
            limit: budget,
        });
    }
    let mut rng = trial_rng(seed, 0);
    let signs = (0..requested)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect();
    Codebook::from_signs(constellation.clone(), messages, keys, signs)
}

/// One use of the code: what Bob and the warden see after undoing their
/// orthogonal factors, plus Bob's decision.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionTrace {
    pub message: usize,
    pub key: usize,
    /// `Λ_b x̃ + ñ_b`, `m x n`
    pub y_tilde: DMatrix<f64>,
    /// `Λ_w x̃ + ñ_w`, `m x n`
    pub z_tilde: DMatrix<f64>,
    /// `None` is an erasure.
    pub decoded: Option<usize>,
}

/// Sends message `message` under key `key` through both sub-channel
/// models. Zero noise variances are allowed.
pub fn transmit(
    codebook: &Codebook,
    message: usize,
    key: usize,
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
    sigma_w2: f64,
    seed: u64,
) -> Result<TransmissionTrace> {
    let w = codebook.word_index(message, key)?;
    for (name, v) in [("sigma_b2", sigma_b2), ("sigma_w2", sigma_w2)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("noise variance must be nonnegative, got {v}"),
            });
        }
    }
    let word = codebook.word(w);
    let mut rng = trial_rng(seed, 0);
    let mut noisy = |gains: &nalgebra::DVector<f64>, var: f64| {
        let sd = var.sqrt();
        DMatrix::from_fn(word.nrows(), word.ncols(), |j, i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            gains[j] * word[(j, i)] + sd * e
        })
    };
    let y_tilde = noisy(gsvd.lambda_b(), sigma_b2);
    let z_tilde = noisy(gsvd.lambda_w(), sigma_w2);
    let decoded = Some(decode(codebook, key, &y_tilde, gsvd, sigma_b2)?);
    Ok(TransmissionTrace {
        message,
        key,
        y_tilde,
        z_tilde,
        decoded,
    })
}

/// Log-likelihood of every message of the key's sub-code, up to a common
/// additive constant: `Σ (λ_b x y - λ_b² x² / 2) / σ_b²`.
///
/// With `sigma_b2 = 0` the division is dropped; only the ordering matters
/// to the decoder.
pub fn log_likelihoods(
    codebook: &Codebook,
    key: usize,
    y_tilde: &DMatrix<f64>,
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
) -> Result<Vec<f64>> {
    codebook.word_index(0, key)?;
    let (m, n) = (codebook.m(), codebook.n());
    if y_tilde.shape() != (m, n) {
        return Err(Error::DimensionMismatch(format!(
            "observation is {:?}, expected ({m}, {n})",
            y_tilde.shape()
        )));
    }
    let amp = &codebook.constellation.amplitudes;
    let lb = gsvd.lambda_b();
    // BPSK: λ_b² x² / 2 is the same for every word.
    let energy: f64 = (0..m).map(|j| (lb[j] * amp[j]).powi(2)).sum::<f64>() * n as f64 / 2.0;
    let mut weighted = Vec::with_capacity(m * n);
    for i in 0..n {
        for j in 0..m {
            weighted.push(lb[j] * amp[j] * y_tilde[(j, i)]);
        }
    }
    let scale = if sigma_b2 > 0.0 { 1.0 / sigma_b2 } else { 1.0 };
    Ok((0..codebook.messages)
        .map(|l| {
            let s = codebook.signs(key * codebook.messages + l);
            let corr: f64 = s
                .iter()
                .zip(&weighted)
                .map(|(s, c)| f64::from(*s) * c)
                .sum();
            (corr - energy) * scale
        })
        .collect())
}

/// Maximum-likelihood message estimate given the key; ties go to the
/// smallest index.
pub fn decode(
    codebook: &Codebook,
    key: usize,
    y_tilde: &DMatrix<f64>,
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
) -> Result<usize> {
    let ll = log_likelihoods(codebook, key, y_tilde, gsvd, sigma_b2)?;
    let mut best = 0;
    for (l, v) in ll.iter().enumerate() {
        if *v > ll[best] {
            best = l;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReliabilityReport {
    pub n: usize,
    pub messages: usize,
    pub keys: usize,
    pub trials: usize,
    pub error_rate: f64,
    pub half_width: f64,
}

/// Empirical probability that Bob decodes the wrong message when the
/// message and key are uniform.
pub fn simulate_reliability(
    codebook: &Codebook,
    gsvd: &GsvdDecomposition,
    sigma_b2: f64,
    trials: usize,
    seed: u64,
) -> Result<ReliabilityReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter {
            name: "trials",
            reason: "need at least one trial".into(),
        });
    }
    check_positive("sigma_b2", sigma_b2)?;
    let errors: usize = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<usize> {
            let mut rng = trial_rng(seed, t as u64);
            let message = rng.random_range(0..codebook.messages);
            let key = rng.random_range(0..codebook.keys);
            let word = codebook.word(codebook.word_index(message, key)?);
            let sd = sigma_b2.sqrt();
            let lb = gsvd.lambda_b();
            let y = DMatrix::from_fn(word.nrows(), word.ncols(), |j, i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                lb[j] * word[(j, i)] + sd * e
            });
            Ok(usize::from(
                decode(codebook, key, &y, gsvd, sigma_b2)? != message,
            ))
        })
        .sum::<Result<usize>>()?;
    let error_rate = errors as f64 / trials as f64;
    Ok(ReliabilityReport {
        n: codebook.n,
        messages: codebook.messages,
        keys: codebook.keys,
        trials,
        error_rate,
        half_width: binomial_half_width(error_rate, trials),
    })
}
