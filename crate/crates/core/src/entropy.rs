//! Scalar entropy helpers (all in bits).

use crate::error::{domain, Result};

/// `x log2 x` with the convention `0 log 0 = 0`.
#[inline]
pub fn xlog2x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Binary Shannon entropy `h(x) = -x log2 x - (1-x) log2 (1-x)`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || x.is_nan() {
        return Err(domain("binary entropy argument", x));
    }
    Ok(binary_entropy_unchecked(x))
}

/// Binary entropy for arguments already known to lie in `[0, 1]`.
/// Values marginally outside (rounding) are clamped.
#[inline]
pub(crate) fn binary_entropy_unchecked(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    -xlog2x(x) - xlog2x(1.0 - x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(binary_entropy(0.5).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn eleven_percent() {
        // -0.11 log2 0.11 - 0.89 log2 0.89, evaluated independently.
        assert_abs_diff_eq!(binary_entropy(0.11).unwrap(), 0.499_915_958_164_528, epsilon = 1e-12);
        // the BB84 threshold: 1 - 2 h(0.11) is just above zero
        let r = 1.0 - 2.0 * binary_entropy(0.11).unwrap();
        assert!(r > 0.0 && r < 2e-4);
    }

    #[test]
    fn rejects_out_of_domain() {
        assert!(binary_entropy(-0.01).is_err());
        assert!(binary_entropy(1.01).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }
}
