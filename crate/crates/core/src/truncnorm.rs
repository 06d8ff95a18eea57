//! One-dimensional truncated normal: exact inverse-CDF sampling, log-density
//! and the moments needed by the policy score.
//!
//! Tail probabilities go through `erfc` on whichever side of the mean the
//! interval sits, so masses deep in a tail keep full relative precision.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Φ(x).
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x), accurate for large positive x.
#[inline]
pub fn std_normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Φ(b) − Φ(a) for a ≤ b.
pub fn interval_mass(a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a >= 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else if b <= 0.0 {
        std_normal_cdf(b) - std_normal_cdf(a)
    } else {
        1.0 - std_normal_cdf(a) - std_normal_sf(b)
    }
}

/// z·φ(z), with the convention 0 at ±∞.
#[inline]
fn z_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        z * std_normal_pdf(z)
    }
}

/// N(mu, sd²) restricted to [lo, hi].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedNormal {
    pub fn new(mu: f64, sd: f64, lo: f64, hi: f64) -> Self {
        debug_assert!(sd > 0.0 && lo < hi);
        TruncatedNormal { mu, sd, lo, hi }
    }

    #[inline]
    fn alpha(&self) -> f64 {
        (self.lo - self.mu) / self.sd
    }

    #[inline]
    fn beta(&self) -> f64 {
        (self.hi - self.mu) / self.sd
    }

    /// Probability mass of the untruncated normal inside [lo, hi].
    pub fn mass(&self) -> f64 {
        interval_mass(self.alpha(), self.beta())
    }

    /// Maps a uniform `u ∈ [0, 1)` to a draw by inverting the truncated CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let (a, b) = (self.alpha(), self.beta());
        // erfc_inv is good to ~1e-10; one Newton step on the tail function
        // brings the result to working precision.
        let upper = |q: f64| {
            let z = SQRT_2 * erfc_inv(2.0 * q);
            let d = std_normal_pdf(z);
            if d > 0.0 { z + (std_normal_sf(z) - q) / d } else { z }
        };
        let lower = |p: f64| {
            let z = -SQRT_2 * erfc_inv(2.0 * p);
            let d = std_normal_pdf(z);
            if d > 0.0 { z - (std_normal_cdf(z) - p) / d } else { z }
        };
        let z = if a >= 0.0 {
            let (qa, qb) = (std_normal_sf(a), std_normal_sf(b));
            upper(qa - u * (qa - qb))
        } else if b <= 0.0 {
            let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
            lower(pa + u * (pb - pa))
        } else {
            let mass = interval_mass(a, b);
            let p = std_normal_cdf(a) + u * mass;
            if p < 0.5 {
                lower(p)
            } else {
                upper(std_normal_sf(b) + (1.0 - u) * mass)
            }
        };
        let z = if z.is_nan() { 0.5 * (a.max(-1e300) + b.min(1e300)) } else { z };
        (self.mu + self.sd * z.clamp(a, b)).clamp(self.lo, self.hi)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mu) / self.sd;
        -0.5 * z * z - LN_SQRT_2PI - self.sd.ln() - self.mass().ln()
    }

    /// (φ(α) − φ(β)) / Z, the standardized shift of the truncated mean.
    pub fn mean_shift(&self) -> f64 {
        let (a, b) = (self.alpha(), self.beta());
        let z = interval_mass(a, b);
        if z > 1e-300 {
            return (std_normal_pdf(a) - std_normal_pdf(b)) / z;
        }
        // Both edges in the same far tail: Mills-ratio asymptotics.
        if a > 0.0 {
            a
        } else {
            b
        }
    }

    pub fn mean(&self) -> f64 {
        (self.mu + self.sd * self.mean_shift()).clamp(self.lo, self.hi)
    }

    pub fn variance(&self) -> f64 {
        let (a, b) = (self.alpha(), self.beta());
        let z = interval_mass(a, b);
        let shift = self.mean_shift();
        let v = self.sd * self.sd * (1.0 + (z_pdf(a) - z_pdf(b)) / z - shift * shift);
        let width = self.hi - self.lo;
        v.clamp(0.0, (self.sd * self.sd).min(0.25 * width * width))
    }

    /// ∂/∂μ of the log-density at `x`: (x − E[X]) / sd².
    ///
    /// The log-normalizer contributes −(E[X] − μ)/sd², which folds the two
    /// terms into a single centered difference.
    pub fn d_ln_pdf_d_mu(&self, x: f64) -> f64 {
        (x - self.mean()) / (self.sd * self.sd)
    }

    /// Same derivative with the normalizer term dropped (untruncated score).
    pub fn d_ln_pdf_d_mu_untruncated(&self, x: f64) -> f64 {
        (x - self.mu) / (self.sd * self.sd)
    }
}
