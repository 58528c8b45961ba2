use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `1/sqrt(2 pi)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF. Uses `erfc` so the lower tail keeps full relative
/// precision.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

pub fn std_normal_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// Exact GELU, `z * Phi(z)`.
#[inline]
pub fn gelu(z: f64) -> f64 {
    z * std_normal_cdf(z)
}

#[inline]
pub(crate) fn gelu_with_cdf(z: f64) -> (f64, f64) {
    let p = std_normal_cdf(z);
    (z * p, p)
}

/// d/dz gelu(z) = Phi(z) + z phi(z)
#[inline]
pub fn gelu_derivative(z: f64) -> f64 {
    std_normal_cdf(z) + z * std_normal_pdf(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
        // 1 * Phi(1), mpmath at 30 digits: 0.841344746068542948585...
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!(gelu(-40.0).abs() < 1e-300);
    }

    #[test]
    fn gelu_derivative_at_zero_is_half() {
        assert_eq!(gelu_derivative(0.0), 0.5);
        let h = 1e-6;
        let fd = (gelu(h) - gelu(-h)) / (2.0 * h);
        assert!((fd - 0.5).abs() < 1e-10);
    }

    #[test]
    fn cdf_tails() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-16);
        // Phi(-10) = 7.619853024160527e-24
        assert!((std_normal_cdf(-10.0) / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-12);
    }
}
