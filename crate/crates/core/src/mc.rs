//! Shared Monte Carlo plumbing: reproducible per-trial random streams,
//! compensated summation and binomial confidence half-widths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 97.5% standard normal quantile used for all reported half-widths.
pub const Z_95: f64 = 1.96;

/// Random stream for one trial.
///
/// Streams depend only on `(seed, index)`, so results do not change with the
/// number of worker threads or the order in which trials are scheduled.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// 95% normal-approximation half-width of a binomial rate estimate.
pub fn binomial_half_width(rate: f64, trials: usize) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    Z_95 * (rate * (1.0 - rate) / trials as f64).sqrt()
}

/// Kahan-Babuska accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}
