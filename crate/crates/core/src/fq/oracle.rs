//! Reference values for `F_q` that do not go through the quadrature.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::substream;

/// `F_2(rho) = (sin(theta) + (pi - theta) rho) / pi` with `theta = acos(rho)`.
///
/// Twice the arc-cosine kernel of degree one: the maxout unit of rank two is a
/// ReLU of the difference of its two pre-activations plus one of them.
pub fn closed_form_f2(rho: f64) -> f64 {
    let rho = rho.clamp(-1.0, 1.0);
    let theta = rho.acos();
    let sin_theta = ((1.0 - rho) * (1.0 + rho)).sqrt();
    (sin_theta + (PI - theta) * rho) / PI
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl McEstimate {
    /// Whether `value` lies within `k` standard errors of the estimate.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.estimate - value).abs() <= k * self.std_error
    }
}

/// Samples per independent random substream.
pub const MC_CHUNK: usize = 1 << 16;

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if other.n == 0.0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * other.n / n,
            m2: self.m2 + other.m2 + d * d * self.n * other.n / n,
        }
    }
}

/// Brute-force Monte Carlo estimate of `F_q(rho)`.
///
/// Each draw takes `q` pairs `(h_l, h_l')` with unit variances and
/// correlation `rho` (pairs independent of one another) and records
/// `max(h) * max(h')`. Chunk `c` uses substream `c` of `seed`, so the result
/// does not depend on how chunks are scheduled across threads.
pub fn mc_oracle_fq(q: usize, rho: f64, n_samples: usize, seed: u64) -> Result<McEstimate> {
    if q == 0 {
        return Err(Error::usage("maxout rank q must be at least 1"));
    }
    if n_samples < 10_000 {
        return Err(Error::usage(format!("need at least 1e4 samples, got {n_samples}")));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Domain { op: "mc_oracle_fq", detail: format!("rho = {rho}") });
    }
    let s = ((1.0 - rho) * (1.0 + rho)).sqrt();
    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let parts: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, c as u64);
            let len = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut acc = Moments::default();
            for _ in 0..len {
                let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for _ in 0..q {
                    let z1: f64 = rng.sample(StandardNormal);
                    let z2: f64 = rng.sample(StandardNormal);
                    a = a.max(z1);
                    b = b.max(rho * z1 + s * z2);
                }
                acc.push(a * b);
            }
            acc
        })
        .collect();
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    let var = total.m2 / (total.n - 1.0);
    Ok(McEstimate { estimate: total.mean, std_error: (var / total.n).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_endpoints() {
        assert_eq!(closed_form_f2(1.0), 1.0);
        assert_eq!(closed_form_f2(-1.0), 0.0);
        assert!((closed_form_f2(0.0) - 1.0 / PI).abs() < 1e-16);
        let theta = PI / 3.0;
        let want = (theta.sin() + (PI - theta) * 0.5) / PI;
        assert!((closed_form_f2(0.5) - want).abs() < 1e-15);
        assert!((closed_form_f2(0.5) - 0.6090).abs() < 1e-4);
    }

    #[test]
    fn closed_form_is_monotone() {
        let mut prev = -1.0;
        for i in 0..=2000 {
            let v = closed_form_f2(-1.0 + i as f64 * 1e-3);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn mc_oracle_rank_one_is_rho() {
        for rho in [-0.7, 0.0, 0.35] {
            let est = mc_oracle_fq(1, rho, 200_000, 7).unwrap();
            assert!(est.covers(rho, 3.0), "{est:?} vs {rho}");
        }
    }

    #[test]
    fn mc_oracle_rank_two_matches_closed_form() {
        let est = mc_oracle_fq(2, 0.5, 1_000_000, 11).unwrap();
        assert!(est.covers(closed_form_f2(0.5), 3.0), "{est:?}");
    }

    #[test]
    fn mc_oracle_independent_at_zero() {
        // at rho = 0 the maxima are independent: F_4(0) = E[max of 4]^2,
        // E[max of 4] = 1.0293753730039641 (mpmath quadrature)
        let want = 1.029_375_373_003_964_1_f64.powi(2);
        let est = mc_oracle_fq(4, 0.0, 1_000_000, 3).unwrap();
        assert!(est.covers(want, 3.0), "{est:?} vs {want}");
    }

    #[test]
    fn mc_oracle_is_deterministic() {
        let a = mc_oracle_fq(3, 0.2, 150_000, 5).unwrap();
        let b = mc_oracle_fq(3, 0.2, 150_000, 5).unwrap();
        assert_eq!(a, b);
        assert!(mc_oracle_fq(3, 0.2, 999, 5).is_err());
    }
}
