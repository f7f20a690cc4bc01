//! Standard normal CDF in log space.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// ½·ln(2π)
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this, `erfc` is too close to underflow and the Mills-ratio
/// continued fraction takes over.
const TAIL_CUTOFF: f64 = -20.0;

/// Φ(x).
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Continued fraction `t + 1/(t + 2/(t + 3/(t + ...)))`, the reciprocal of
/// the Mills ratio Q(t)/φ(t). Converges quickly for `t >= 20`.
fn mills_denominator(t: f64) -> f64 {
    let mut f = t;
    for k in (1..=48).rev() {
        f = t + k as f64 / f;
    }
    f
}

/// ln Φ(x), accurate in both tails.
///
/// For large negative `x` this follows the asymptote
/// `-x²/2 - ln(-x) - ln√(2π)` instead of underflowing to `-inf`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < TAIL_CUTOFF {
        let t = -x;
        -0.5 * t * t - LN_SQRT_2PI - mills_denominator(t).ln()
    } else if x > 0.0 {
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else {
        (0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln()
    }
}

/// Inverse Mills ratio φ(x)/Φ(x), the derivative of [`log_norm_cdf`].
pub fn inverse_mills(x: f64) -> f64 {
    if x < TAIL_CUTOFF {
        mills_denominator(-x)
    } else {
        (-0.5 * x * x - LN_SQRT_2PI - log_norm_cdf(x)).exp()
    }
}

/// Second derivative of ln Φ at `x`; always negative.
pub fn log_norm_cdf_curvature(x: f64) -> f64 {
    let l = inverse_mills(x);
    -l * (x + l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        assert_eq!(log_norm_cdf(0.0), -std::f64::consts::LN_2);
        assert!((log_norm_cdf(1.0) - -0.172_753_779_023_449_9).abs() < 1e-15);
        let far = log_norm_cdf(-40.0);
        assert!((far - -804.608_442_013_753_8).abs() / 804.6 < 1e-12, "{far}");
    }

    #[test]
    fn tail_branches_meet() {
        let x = TAIL_CUTOFF;
        let fraction = -0.5 * x * x - LN_SQRT_2PI - mills_denominator(-x).ln();
        let direct = (0.5 * libm::erfc(-x * FRAC_1_SQRT_2)).ln();
        assert!((fraction - direct).abs() / direct.abs() < 1e-14);
        assert!((inverse_mills(x - 1e-12) - inverse_mills(x + 1e-12)).abs() < 1e-9);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for i in -300..=300 {
            let x = i as f64 * 0.1;
            let fd = (log_norm_cdf(x + h) - log_norm_cdf(x - h)) / (2.0 * h);
            assert!((fd - inverse_mills(x)).abs() < 1e-6 * (1.0 + fd.abs()), "x={x}");
            let fd2 = (inverse_mills(x + h) - inverse_mills(x - h)) / (2.0 * h);
            assert!((fd2 - log_norm_cdf_curvature(x)).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn curvature_is_negative() {
        for i in -400..=80 {
            assert!(log_norm_cdf_curvature(i as f64 * 0.1) < 0.0);
        }
    }
}
