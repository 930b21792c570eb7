//! The linear hat kernel used to smear particles in radius, and its
//! normalized antiderivative.

use crate::error::{Error, Result};

/// Half-width of the hat kernel, in units of radius.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct KernelWidth(f64);

impl KernelWidth {
    pub fn new(delta: f64) -> Result<Self> {
        if delta.is_finite() && delta > 0.0 {
            Ok(Self(delta))
        } else {
            Err(Error::InvalidInput(format!("kernel width must be positive, got {delta}")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

/// `1 - |zeta|/delta` on `[-delta, delta]`, zero outside.
#[inline]
pub fn hat(zeta: f64, delta: KernelWidth) -> f64 {
    let d = delta.0;
    let a = zeta.abs();
    if a <= d {
        1.0 - a / d
    } else {
        0.0
    }
}

/// `(1/delta) * integral of hat from -inf to zeta`, evaluated in closed form.
///
/// Piecewise quadratic, monotone, with range `[0, 1]` and Lipschitz constant
/// `1/delta`. The two quadratic branches agree at `zeta = 0`.
#[inline]
pub fn cumulative(zeta: f64, delta: KernelWidth) -> f64 {
    let d = delta.0;
    if zeta <= -d {
        0.0
    } else if zeta <= 0.0 {
        let s = zeta + d;
        s * s / (2.0 * d * d)
    } else if zeta < d {
        let s = d - zeta;
        1.0 - s * s / (2.0 * d * d)
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(d: f64) -> KernelWidth {
        KernelWidth::new(d).unwrap()
    }

    #[test]
    fn hat_values() {
        let d = w(0.3);
        assert_eq!(hat(0.0, d), 1.0);
        assert_eq!(hat(0.3, d), 0.0);
        assert_eq!(hat(-0.3, d), 0.0);
        assert!((hat(0.15, d) - 0.5).abs() < 1e-15);
        assert_eq!(hat(1.0, d), 0.0);
    }

    #[test]
    fn cumulative_values() {
        let d = w(0.3);
        assert_eq!(cumulative(-0.3, d), 0.0);
        assert!((cumulative(0.0, d) - 0.5).abs() < 1e-15);
        assert_eq!(cumulative(0.3, d), 1.0);
        assert_eq!(cumulative(-5.0, d), 0.0);
        assert_eq!(cumulative(5.0, d), 1.0);
    }

    #[test]
    fn rejects_bad_width() {
        assert!(KernelWidth::new(0.0).is_err());
        assert!(KernelWidth::new(-1.0).is_err());
        assert!(KernelWidth::new(f64::NAN).is_err());
    }

    #[test]
    fn hat_has_unit_area_times_delta() {
        // Composite Gauss on each linear half is exact.
        let d = w(0.17);
        let rule = gauss_quad::GaussLegendre::new(8.try_into().unwrap());
        let area = rule.integrate(-0.17, 0.0, |z| hat(z, d)) + rule.integrate(0.0, 0.17, |z| hat(z, d));
        assert!((area - 0.17).abs() < 1e-14);
    }

    #[test]
    fn cumulative_derivative_is_hat_over_delta() {
        let d = w(0.25);
        let h = 1e-7;
        for i in 0..200 {
            let z = -0.3 + 0.6 * (i as f64 + 0.37) / 200.0;
            if [-0.25, 0.0, 0.25].iter().any(|k| (z - k).abs() < 10.0 * h) {
                continue;
            }
            let fd = (cumulative(z + h, d) - cumulative(z - h, d)) / (2.0 * h);
            assert!((fd - hat(z, d) / 0.25).abs() < 1e-6, "z={z}");
        }
    }

    proptest! {
        #[test]
        fn hat_even_and_bounded(z in -2.0f64..2.0, d in 1e-3f64..1.0) {
            let d = w(d);
            let v = hat(z, d);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, hat(-z, d));
        }

        #[test]
        fn cumulative_lipschitz(a in -2.0f64..2.0, b in -2.0f64..2.0, d in 1e-3f64..1.0) {
            let k = w(d);
            let (ca, cb) = (cumulative(a, k), cumulative(b, k));
            prop_assert!((0.0..=1.0).contains(&ca));
            prop_assert!((ca - cb).abs() <= (a - b).abs() / d * (1.0 + 1e-12) + 1e-15);
            if a <= b {
                prop_assert!(ca <= cb);
            }
        }
    }
}
