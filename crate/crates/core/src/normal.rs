//! Standard normal distribution helpers.

use libm::erfc;

/// Standard normal CDF, Φ(x) = ½·erfc(−x/√2).
///
/// Computed through the complementary error function so both tails keep
/// full relative precision.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson_cdf(x: f64) -> f64 {
        // Φ(x) = ½ + ∫_0^x φ(t) dt
        let n = 20_000;
        let h = x / n as f64;
        let mut acc = pdf(0.0) + pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * pdf(i as f64 * h);
        }
        0.5 + acc * h / 3.0
    }

    #[test]
    fn matches_quadrature() {
        for &x in &[
            -6.0,
            -3.0,
            -std::f64::consts::SQRT_2,
            -0.3,
            0.0,
            0.7,
            2.0,
            3.0,
            5.5,
        ] {
            assert!(
                (cdf(x) - simpson_cdf(x)).abs() < 1e-12,
                "x = {x}: {} vs {}",
                cdf(x),
                simpson_cdf(x)
            );
        }
    }

    #[test]
    fn symmetric() {
        for i in 0..100 {
            let x = -5.0 + 0.1 * i as f64;
            assert!((cdf(x) + cdf(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn deep_tail_keeps_relative_precision() {
        // Φ(-10) ≈ 7.6199e-24
        let v = cdf(-10.0);
        assert!((v / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-10);
    }
}
