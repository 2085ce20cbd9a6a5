//! Standard normal distribution helpers built on the complementary error function.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, relatively accurate in both tails until underflow.
pub fn cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `ln Phi(z)`, finite for all finite `z`.
pub fn ln_cdf(z: f64) -> f64 {
    if z > 0.0 {
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else if z > -20.0 {
        cdf(z).ln()
    } else {
        // Phi(z) = pdf(z) * R(-z) with R the Mills ratio.
        -0.5 * z * z - LN_SQRT_2PI + mills_ratio(-z).ln()
    }
}

/// Mills ratio `(1 - Phi(x)) / pdf(x)` for large positive `x`, by the
/// continued fraction `1 / (x + 1 / (x + 2 / (x + 3 / ...)))`.
fn mills_ratio(x: f64) -> f64 {
    let mut tail = x;
    for k in (1..=80).rev() {
        tail = x + k as f64 / tail;
    }
    1.0 / tail
}
