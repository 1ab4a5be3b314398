//! Error-function family with overflow-safe scalings.

pub const SQRT_PI: f64 = 1.772_453_850_905_516;
pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Scaled complementary error function `exp(x^2) erfc(x)`.
///
/// Uses the direct product for moderate arguments and a continued fraction
/// in the far tail, where the product would underflow.
pub fn erfcx(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        if x < -26.6 {
            return f64::INFINITY;
        }
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 5.0 {
        return (x * x).exp() * erfc(x);
    }
    erfcx_continued_fraction(x)
}

// erfcx(x) = 1/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))), evaluated
// with the modified Lentz algorithm.
fn erfcx_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = 0.5 * k as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / (SQRT_PI * f)
}

/// Gaussian tail scaled by its own decay: `exp(y^2/2) * int_y^inf exp(-s^2/2) ds`.
pub fn gaussian_tail_scaled(y: f64) -> f64 {
    (std::f64::consts::PI / 2.0).sqrt() * erfcx(y / SQRT_2)
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent reference: erfc by Simpson quadrature of the Gaussian kernel.
    fn erfc_by_quadrature(x: f64) -> f64 {
        let upper = x + 12.0;
        let n = 20_000;
        let h = (upper - x) / n as f64;
        let f = |t: f64| (-t * t).exp();
        let mut s = f(x) + f(upper);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(x + i as f64 * h);
        }
        2.0 / SQRT_PI * s * h / 3.0
    }

    #[test]
    fn erfcx_matches_quadrature() {
        for &x in &[0.0f64, 0.3, 1.0, 2.5, 4.0] {
            let want = (x * x).exp() * erfc_by_quadrature(x);
            assert!((erfcx(x) - want).abs() < 1e-10 * want, "x={x}");
        }
    }

    #[test]
    fn erfcx_branches_agree_at_switch() {
        let a = (25.0f64).exp() * erfc(5.0);
        let b = erfcx_continued_fraction(5.0);
        assert!((a - b).abs() < 1e-13 * a);
    }

    #[test]
    fn erfcx_large_argument_asymptotics() {
        // erfcx(x) ~ 1/(x sqrt(pi)) (1 - 1/(2x^2) + 3/(4x^4))
        let x = 1e3;
        let want = 1.0 / (x * SQRT_PI) * (1.0 - 0.5 / (x * x) + 0.75 / x.powi(4));
        assert!((erfcx(x) - want).abs() < 1e-15 * want);
    }

    #[test]
    fn erfcx_reflection() {
        let x = 1.7;
        assert!((erfcx(-x) - (2.0 * (x * x).exp() - erfcx(x))).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_symmetry() {
        for &z in &[0.0, 0.5, 1.96, 3.0] {
            assert!((normal_cdf(z) + normal_cdf(-z) - 1.0).abs() < 1e-15);
        }
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
    }
}
