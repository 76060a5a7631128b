//! Binomial estimates for false positive measurements.

use serde::Serialize;

/// `hits` successes out of `trials` Bernoulli trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Proportion {
    pub hits: u64,
    pub trials: u64,
}

impl Proportion {
    pub fn new(hits: u64, trials: u64) -> Self {
        Proportion { hits, trials }
    }

    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.hits as f64 / self.trials as f64
        }
    }

    /// Standard deviation of the measured rate if the true rate is `p`.
    pub fn sigma_at(&self, p: f64) -> f64 {
        if self.trials == 0 {
            return f64::INFINITY;
        }
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Distance of the measured rate from `p` in standard deviations.
    pub fn z_score(&self, p: f64) -> f64 {
        (self.rate() - p) / self.sigma_at(p)
    }

    pub fn within_sigmas(&self, p: f64, k: f64) -> bool {
        (self.rate() - p).abs() <= k * self.sigma_at(p)
    }
}

/// Expected false positive rate of a Bloom filter with `bits` bits,
/// `hashes` hash functions and `n` elements.
pub fn bloom_fpr(n: usize, bits: u64, hashes: u32) -> f64 {
    let h = hashes as f64;
    (1.0 - (-h * n as f64 / bits as f64).exp()).powf(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportion_math() {
        let p = Proportion::new(20, 10_000);
        assert_eq!(p.rate(), 0.002);
        assert!((p.sigma_at(0.002) - (0.002 * 0.998 / 10_000.0f64).sqrt()).abs() < 1e-15);
        assert!(p.within_sigmas(0.002, 0.1));
        assert!(!p.within_sigmas(0.01, 3.0));
        assert_eq!(Proportion::new(0, 0).rate(), 0.0);
    }

    #[test]
    fn bloom_formula() {
        assert_eq!(bloom_fpr(0, 1000, 4), 0.0);
        let v = bloom_fpr(1000, 13_000, 4);
        let e = (1.0 - (-4.0f64 / 13.0).exp()).powi(4);
        assert!((v - e).abs() < 1e-15);
    }
}
