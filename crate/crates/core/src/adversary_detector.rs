//! The warden's realigned power detector: threshold rule, Gaussian
//! approximations of its error probabilities, the converse covertness
//! lower bound, and Monte Carlo validation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::capacity::qfunc;
use crate::channel_model::GsvdDecomposition;
use crate::covert_code::Codebook;
use crate::error::{check_positive, Error, Result};
use crate::mc::{binomial_half_width, trial_rng, KahanSum};

/// `S_i = ‖R z_i‖²` for one warden observation.
pub fn statistic(z: &DVector<f64>, realigner: &DMatrix<f64>) -> f64 {
    (realigner * z).norm_squared()
}

/// `τ = P*/2 + n σ_w² tr(Λ_b² Λ_w⁻²)`.
pub fn threshold_for(p_star: f64, n: usize, gsvd: &GsvdDecomposition, sigma_w2: f64) -> f64 {
    p_star / 2.0 + n as f64 * sigma_w2 * gsvd.tr2()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// `Λ_b Λ_w⁻¹ U_wᵀ`
    pub realigner: DMatrix<f64>,
    pub tau: f64,
    pub n: usize,
}

impl DetectorConfig {
    /// Detector tuned to codewords whose received power is at least `p_star`.
    pub fn new(gsvd: &GsvdDecomposition, p_star: f64, n: usize, sigma_w2: f64) -> Self {
        Self {
            realigner: gsvd.realigner(),
            tau: threshold_for(p_star, n, gsvd, sigma_w2),
            n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectorBounds {
    pub alpha: f64,
    pub beta: f64,
}

fn gaussian_term(p_star: f64, n: usize, gsvd: &GsvdDecomposition, sigma_w2: f64) -> f64 {
    qfunc(p_star / (2.0 * (2.0 * n as f64 * gsvd.tr4()).sqrt() * sigma_w2))
}

fn skew_term(p_star: f64, n: usize, gsvd: &GsvdDecomposition, sigma_w2: f64) -> f64 {
    let n = n as f64;
    p_star * p_star * gsvd.tr2()
        / (4.0
            * std::f64::consts::PI.sqrt()
            * n.powf(1.5)
            * gsvd.tr4().powf(1.5)
            * sigma_w2
            * sigma_w2)
}

/// Upper bounds on the false-alarm and missed-detection probabilities of
/// the detector built by [`DetectorConfig::new`].
///
/// `slack_b0` and `slack_b1` are the Berry-Esseen constants; with both set
/// to zero only the Gaussian terms remain.
pub fn alpha_beta_bounds(
    p_star: f64,
    n: usize,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
    slack_b0: f64,
    slack_b1: f64,
) -> DetectorBounds {
    let q = gaussian_term(p_star, n, gsvd, sigma_w2);
    let root_n = (n as f64).sqrt();
    DetectorBounds {
        alpha: q + slack_b0 / root_n,
        beta: q + skew_term(p_star, n, gsvd, sigma_w2) + slack_b1 / root_n,
    }
}

/// Lower bound on the variational distance any code with received power at
/// least `p_star` must incur, clamped to `[-1, 1]`.
pub fn converse_covertness_lower_bound(
    p_star: f64,
    n: usize,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
    slack_b0: f64,
    slack_b1: f64,
) -> f64 {
    let v = 1.0
        - 2.0 * gaussian_term(p_star, n, gsvd, sigma_w2)
        - skew_term(p_star, n, gsvd, sigma_w2)
        - (slack_b0 + slack_b1) / (n as f64).sqrt();
    v.clamp(-1.0, 1.0)
}

/// Mean and variance of `Σ_i S_i` when `codeword` (`m x n`, sub-channel
/// domain) is sent.
pub fn codeword_statistics(
    codeword: &DMatrix<f64>,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
) -> Result<(f64, f64)> {
    let m = gsvd.m();
    if codeword.nrows() != m {
        return Err(Error::DimensionMismatch(format!(
            "codeword has {} rows, expected {m}",
            codeword.nrows()
        )));
    }
    let n = codeword.ncols() as f64;
    let (lb, lw) = (gsvd.lambda_b(), gsvd.lambda_w());
    let mut mu = n * sigma_w2 * gsvd.tr2();
    let mut var = 2.0 * n * sigma_w2 * sigma_w2 * gsvd.tr4();
    for j in 0..m {
        let p_jj = codeword.row(j).norm_squared();
        mu += lb[j] * lb[j] * p_jj;
        var += 4.0 * sigma_w2 * lb[j].powi(4) / (lw[j] * lw[j]) * p_jj;
    }
    Ok((mu, var))
}

/// Received power `tr(Λ_b² P)` of the weakest codeword.
pub fn min_received_power(codebook: &Codebook, gsvd: &GsvdDecomposition) -> f64 {
    let lb = gsvd.lambda_b();
    (0..codebook.word_count())
        .map(|w| {
            let x = codebook.word(w);
            (0..x.nrows())
                .map(|j| lb[j] * lb[j] * x.row(j).norm_squared())
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// One warden observation `U_w Λ_w x̃ + n_w` in antenna coordinates.
fn observe<R: Rng>(
    rng: &mut R,
    gsvd: &GsvdDecomposition,
    symbol: Option<DVector<f64>>,
    sd: f64,
) -> DVector<f64> {
    let u_w = gsvd.u_w();
    let mut z = DVector::from_fn(u_w.nrows(), |_, _| {
        let e: f64 = StandardNormal.sample(&mut *rng);
        sd * e
    });
    if let Some(x) = symbol {
        z += u_w * x.component_mul(gsvd.lambda_w());
    }
    z
}

/// Moments of the detector sum statistic estimated from noise draws.
///
/// Noise is independent across channel uses, so the variance of the sum
/// is the sum of per-use variances; each per-use moment is estimated from
/// `draws` samples and the estimates are added up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub mean: f64,
    pub variance: f64,
}

pub fn sum_statistic_moments_mc(
    codeword: &DMatrix<f64>,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
    draws: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    if draws < 2 {
        return Err(Error::InvalidParameter {
            name: "draws",
            reason: "need at least two draws".into(),
        });
    }
    if codeword.nrows() != gsvd.m() {
        return Err(Error::DimensionMismatch(format!(
            "codeword has {} rows, expected {}",
            codeword.nrows(),
            gsvd.m()
        )));
    }
    let realigner = gsvd.realigner();
    let sd = sigma_w2.sqrt();
    let per_use: Vec<(f64, f64)> = (0..codeword.ncols())
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i as u64);
            let signal = gsvd.u_w() * codeword.column(i).component_mul(gsvd.lambda_w());
            let mut z = DVector::zeros(signal.len());
            let mut rz = DVector::zeros(realigner.nrows());
            // Welford
            let (mut mean, mut m2) = (0.0, 0.0);
            for k in 0..draws {
                for (zi, si) in z.iter_mut().zip(signal.iter()) {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *zi = sd * e + si;
                }
                rz.gemv(1.0, &realigner, &z, 0.0);
                let s = rz.norm_squared();
                let delta = s - mean;
                mean += delta / (k + 1) as f64;
                m2 += delta * (s - mean);
            }
            (mean, m2 / (draws - 1) as f64)
        })
        .collect();
    Ok(MomentEstimate {
        mean: per_use.iter().map(|p| p.0).collect::<KahanSum>().value(),
        variance: per_use.iter().map(|p| p.1).collect::<KahanSum>().value(),
    })
}

/// What the warden is facing in a Monte Carlo run.
#[derive(Debug, Clone, Copy)]
pub enum Hypothesis<'a> {
    /// No transmission.
    Null,
    /// A uniformly chosen codeword of the book is sent.
    Codebook(&'a Codebook),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExceedanceEstimate {
    /// Fraction of trials with `Σ S_i ≥ τ`.
    pub rate: f64,
    pub trials: usize,
    pub half_width: f64,
}

/// Empirical probability that the detector statistic reaches the threshold.
pub fn run_detector_mc(
    hypothesis: Hypothesis<'_>,
    config: &DetectorConfig,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
    trials: usize,
    seed: u64,
) -> Result<ExceedanceEstimate> {
    if trials == 0 {
        return Err(Error::InvalidParameter {
            name: "trials",
            reason: "need at least one trial".into(),
        });
    }
    check_positive("sigma_w2", sigma_w2)?;
    if let Hypothesis::Codebook(book) = hypothesis {
        if book.word_count() == 0 {
            return Err(Error::EmptyCodebook);
        }
        if book.n() != config.n || book.m() != gsvd.m() {
            return Err(Error::DimensionMismatch(format!(
                "codebook is {} x {}, detector expects {} x {}",
                book.m(),
                book.n(),
                gsvd.m(),
                config.n
            )));
        }
    }
    let sd = sigma_w2.sqrt();
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let word = match hypothesis {
                Hypothesis::Null => None,
                Hypothesis::Codebook(book) => {
                    Some(book.word(rng.random_range(0..book.word_count())))
                }
            };
            let mut sum = KahanSum::new();
            for i in 0..config.n {
                let x = word.as_ref().map(|w| w.column(i).into_owned());
                sum.add(statistic(
                    &observe(&mut rng, gsvd, x, sd),
                    &config.realigner,
                ));
            }
            usize::from(sum.value() >= config.tau)
        })
        .sum();
    let rate = hits as f64 / trials as f64;
    Ok(ExceedanceEstimate {
        rate,
        trials,
        half_width: binomial_half_width(rate, trials),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectorReport {
    pub n: usize,
    pub trials: usize,
    pub alpha_mc: f64,
    pub beta_mc: f64,
    pub alpha_bound: f64,
    pub beta_bound: f64,
    /// Larger of the two binomial half-widths.
    pub half_width: f64,
}

impl DetectorReport {
    pub fn alpha_half_width(&self) -> f64 {
        binomial_half_width(self.alpha_mc, self.trials)
    }

    pub fn beta_half_width(&self) -> f64 {
        binomial_half_width(self.beta_mc, self.trials)
    }
}

/// False alarms under silence and missed detections under the code, with
/// the detector tuned to the code's weakest received power.
pub fn detector_report(
    codebook: &Codebook,
    gsvd: &GsvdDecomposition,
    sigma_w2: f64,
    slack_b0: f64,
    slack_b1: f64,
    trials: usize,
    seed: u64,
) -> Result<DetectorReport> {
    let n = codebook.n();
    let p_star = min_received_power(codebook, gsvd);
    let config = DetectorConfig::new(gsvd, p_star, n, sigma_w2);
    let bounds = alpha_beta_bounds(p_star, n, gsvd, sigma_w2, slack_b0, slack_b1);
    let false_alarm = run_detector_mc(Hypothesis::Null, &config, gsvd, sigma_w2, trials, seed)?;
    // separate stream family for the alternative
    let hit = run_detector_mc(
        Hypothesis::Codebook(codebook),
        &config,
        gsvd,
        sigma_w2,
        trials,
        seed ^ 0x5bd1_e995_9e37_79b9,
    )?;
    let beta_mc = 1.0 - hit.rate;
    Ok(DetectorReport {
        n,
        trials,
        alpha_mc: false_alarm.rate,
        beta_mc,
        alpha_bound: bounds.alpha,
        beta_bound: bounds.beta,
        half_width: false_alarm.half_width.max(hit.half_width),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{build_constellation, solve_allocation_v, Constellation};
    use crate::capacity::CovertnessBudget;
    use crate::channel_model::{decompose_gsvd, pseudo_inverse, ChannelPair, DEFAULT_RANK_RTOL};
    use crate::covert_code::generate;
    use approx::assert_relative_eq;

    fn gains(b: &[f64], w: &[f64]) -> GsvdDecomposition {
        GsvdDecomposition::from_gains(b.to_vec(), w.to_vec()).unwrap()
    }

    fn random_pair(seed: u64) -> ChannelPair {
        let mut rng = trial_rng(seed, 0);
        let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
        ChannelPair::new(draw(3, 3), draw(5, 3), 1.0, 1.0).unwrap()
    }

    #[test]
    fn statistic_basics() {
        let g = gains(&[1.0, 1.0], &[1.0, 1.0]);
        let r = g.realigner();
        assert_eq!(statistic(&DVector::zeros(2), &r), 0.0);
        let z = DVector::from_vec(vec![0.3, -1.2]);
        assert_relative_eq!(statistic(&z, &r), z.norm_squared(), max_relative = 1e-15);
    }

    #[test]
    fn statistic_matches_pseudoinverse_product() {
        for seed in 0..5 {
            let pair = random_pair(seed);
            let g = decompose_gsvd(&pair, DEFAULT_RANK_RTOL).unwrap();
            let direct = pair.h_b() * pseudo_inverse(pair.h_w(), DEFAULT_RANK_RTOL);
            let mut rng = trial_rng(seed, 9);
            let z = DVector::from_fn(5, |_, _| StandardNormal.sample(&mut rng));
            let oracle = (&direct * &z).norm_squared();
            assert_relative_eq!(statistic(&z, &g.realigner()), oracle, max_relative = 1e-10);
        }
    }

    #[test]
    fn threshold_rule() {
        let g = gains(&[1.0], &[1.0]);
        assert_eq!(threshold_for(0.0, 100, &g, 1.0), 100.0);
        assert_relative_eq!(
            threshold_for(20.0, 100, &g, 1.0),
            110.0,
            max_relative = 1e-15
        );
        let g = gains(&[0.9, 0.2], &[0.3, 0.6]);
        let gap = threshold_for(8.0, 50, &g, 0.7) - threshold_for(4.0, 50, &g, 0.7);
        assert_relative_eq!(gap, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn bounds() {
        let g = gains(&[1.0], &[1.0]);
        let b = alpha_beta_bounds(0.0, 400, &g, 1.0, 0.0, 0.0);
        assert_eq!((b.alpha, b.beta), (0.5, 0.5));
        let b = alpha_beta_bounds(100.0, 400, &g, 1.0, 0.0, 0.0);
        assert_relative_eq!(
            b.alpha,
            qfunc(100.0 / (2.0 * 800f64.sqrt())),
            max_relative = 1e-14
        );
        assert!((b.alpha - 0.0385).abs() < 1e-4);
        let s = alpha_beta_bounds(100.0, 400, &g, 1.0, 0.4, 0.6);
        assert_relative_eq!(s.alpha - b.alpha, 0.02, max_relative = 1e-12);
        assert_relative_eq!(s.beta - b.beta, 0.03, max_relative = 1e-12);
    }

    #[test]
    fn bounds_scale_with_root_n() {
        let g = gains(&[0.8, 0.3], &[0.5, 0.4]);
        let a = 3.0;
        let terms: Vec<f64> = [100usize, 10_000, 1_000_000]
            .iter()
            .map(|&n| alpha_beta_bounds(a * (n as f64).sqrt(), n, &g, 0.5, 0.0, 0.0).alpha)
            .collect();
        for t in &terms {
            assert_relative_eq!(*t, terms[0], max_relative = 1e-12);
        }
        // the polynomial part of beta shrinks like 1/sqrt(n)
        let excess = |n: usize| {
            let b = alpha_beta_bounds(a * (n as f64).sqrt(), n, &g, 0.5, 0.0, 0.0);
            b.beta - b.alpha
        };
        assert_relative_eq!(excess(100) / excess(10_000), 10.0, max_relative = 1e-9);
    }

    #[test]
    fn gaussian_terms_decrease_in_power() {
        let g = gains(&[0.8, 0.3], &[0.5, 0.4]);
        let mut prev = (1.0, 1.0);
        for k in 0..50 {
            let b = alpha_beta_bounds(k as f64, 200, &g, 0.5, 0.0, 0.0);
            assert!(b.alpha <= prev.0);
            prev = (b.alpha, b.beta);
        }
    }

    #[test]
    fn converse_bound() {
        let g = gains(&[0.7, 0.4], &[0.3, 0.5]);
        assert_eq!(
            converse_covertness_lower_bound(0.0, 400, &g, 0.5, 0.0, 0.0),
            0.0
        );
        let n = 400;
        let d = CovertnessBudget::new(0.2).unwrap().d;
        let critical = 2.0 * (2.0 * n as f64 * g.tr4()).sqrt() * 0.5 * d;
        let v = converse_covertness_lower_bound(critical, n, &g, 0.5, 0.0, 0.0);
        let poly = critical * critical * g.tr2()
            / (4.0 * std::f64::consts::PI.sqrt() * (n as f64).powf(1.5) * g.tr4().powf(1.5) * 0.25);
        assert_relative_eq!(v, 0.2 - poly, max_relative = 1e-10);
        // P* = n: the Gaussian term vanishes; on a channel with a strong
        // gain ratio the polynomial term stays small and the bound nears 1
        let strong = gains(&[1.0], &[0.1]);
        let big = converse_covertness_lower_bound(1e6, 1_000_000, &strong, 1.0, 0.0, 0.0);
        assert!(big > 0.98, "{big}");
        // the polynomial term grows like P*² / n^{3/2} and eventually dominates
        assert_eq!(
            converse_covertness_lower_bound(1e9, 10, &g, 0.5, 0.0, 0.0),
            -1.0
        );
    }

    #[test]
    fn null_statistics() {
        let g = gains(&[0.7, 0.4], &[0.3, 0.5]);
        let (mu, var) = codeword_statistics(&DMatrix::zeros(2, 30), &g, 0.4).unwrap();
        assert_relative_eq!(mu, 30.0 * 0.4 * g.tr2(), max_relative = 1e-15);
        assert_relative_eq!(var, 2.0 * 30.0 * 0.16 * g.tr4(), max_relative = 1e-15);
    }

    #[test]
    fn siso_constant_codeword() {
        let (lb, lw, a, s, n) = (0.6, 0.9, 0.25, 0.3, 17);
        let g = gains(&[lb], &[lw]);
        let (mu, var) = codeword_statistics(&DMatrix::from_element(1, n, a), &g, s).unwrap();
        let nf = n as f64;
        assert_relative_eq!(
            mu,
            nf * (lb * lb * a * a + s * lb * lb / (lw * lw)),
            max_relative = 1e-14
        );
        // hand expansion of Var[(λ_b/λ_w)² (λ_w a + sqrt(s) e)²]
        let r2 = (lb / lw).powi(2);
        let per_use = r2 * r2 * (4.0 * lw * lw * a * a * s + 2.0 * s * s);
        assert_relative_eq!(var, nf * per_use, max_relative = 1e-14);
        assert!(codeword_statistics(&DMatrix::zeros(2, 3), &g, s).is_err());
    }

    #[test]
    fn moments_mc_matches_formula() {
        let pair = random_pair(3);
        let g = decompose_gsvd(&pair, DEFAULT_RANK_RTOL).unwrap();
        let mut rng = trial_rng(1, 0);
        let word = DMatrix::from_fn(3, 40, |_, _| rng.random_range(-0.5..0.5));
        let (mu, var) = codeword_statistics(&word, &g, 0.8).unwrap();
        let est = sum_statistic_moments_mc(&word, &g, 0.8, 20_000, 4).unwrap();
        assert_relative_eq!(est.mean, mu, max_relative = 5e-3);
        assert_relative_eq!(est.variance, var, max_relative = 2e-2);
    }

    #[test]
    fn negative_threshold_always_fires() {
        let g = gains(&[1.0], &[1.0]);
        let config = DetectorConfig {
            realigner: g.realigner(),
            tau: -1.0,
            n: 10,
        };
        let r = run_detector_mc(Hypothesis::Null, &config, &g, 1.0, 500, 1).unwrap();
        assert_eq!(r.rate, 1.0);
        assert_eq!(r.half_width, 0.0);
    }

    #[test]
    fn mc_respects_gaussian_bounds() {
        let pair = random_pair(6);
        let g = decompose_gsvd(&pair, DEFAULT_RANK_RTOL).unwrap();
        let a = solve_allocation_v(&g, 1.0, 1.0).unwrap();
        let c = build_constellation(&a, &g, 200, 0.3).unwrap();
        let book = generate(&g, &c, 8, 2, 2).unwrap();
        let r = detector_report(&book, &g, 1.0, 0.0, 0.0, 4_000, 12).unwrap();
        assert!(
            r.alpha_mc <= r.alpha_bound + 3.0 * r.alpha_half_width(),
            "{r:?}"
        );
        assert!(
            r.beta_mc <= r.beta_bound + 3.0 * r.beta_half_width(),
            "{r:?}"
        );
        // optimal design: the Gaussian false-alarm term is Q(d)
        assert_relative_eq!(r.alpha_bound, 0.35, max_relative = 1e-9);
        assert_eq!(
            r,
            detector_report(&book, &g, 1.0, 0.0, 0.0, 4_000, 12).unwrap()
        );
    }

    #[test]
    fn mismatched_codebook_rejected() {
        let g = gains(&[1.0], &[1.0]);
        let c = Constellation::from_rho(&g, 5, vec![0.1]).unwrap();
        let book = generate(&g, &c, 2, 1, 0).unwrap();
        let config = DetectorConfig::new(&g, 0.0, 6, 1.0);
        assert!(run_detector_mc(Hypothesis::Codebook(&book), &config, &g, 1.0, 10, 0).is_err());
        assert!(run_detector_mc(Hypothesis::Null, &config, &g, 1.0, 0, 0).is_err());
    }
}
