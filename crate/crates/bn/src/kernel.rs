//! Pointwise collision kernels.
//!
//! The isotropic transition rate is W(x, w, y, z) = min(sqrt x, sqrt w,
//! sqrt y, sqrt z) / sqrt x on collision quadruples with w = y + z - x.
//! The symmetric numerator min(sqrt of each argument) appears on its own in
//! the weak formulation, and the two-branch auxiliary G(x, w) enters the
//! decomposition of the loss rate used as a diagnostic floor.

use crate::error::{BnError, Result};

/// Energies of one collision quadruple, w = y + z - x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyQuad {
    pub x: f64,
    pub w: f64,
    pub y: f64,
    pub z: f64,
}

impl EnergyQuad {
    /// Builds the quadruple from (x, y, z), deriving w; fails when the
    /// collision energy constraint w >= 0 cannot be met.
    pub fn from_xyz(x: f64, y: f64, z: f64) -> Result<Self> {
        let w = y + z - x;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) || w < 0.0 {
            return Err(BnError::InvalidInput(format!(
                "invalid collision quadruple x={x} y={y} z={z} (w={w})"
            )));
        }
        Ok(EnergyQuad { x, w, y, z })
    }
}

/// Transition rate min(sqrt x, sqrt w, sqrt y, sqrt z) / sqrt x.
///
/// Always lies in [0, 1]. The x -> 0 limit is left to callers; grids keep
/// their first node strictly positive so x = 0 never reaches this point in
/// the quadrature.
#[inline]
pub fn w_kernel(x: f64, w: f64, y: f64, z: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(BnError::InvalidInput(format!(
            "w_kernel requires x > 0, got {x}"
        )));
    }
    Ok(phi_kernel(w, x, y, z) / x.sqrt())
}

/// Symmetric kernel min(sqrt w, sqrt x, sqrt y, sqrt z).
#[inline]
pub fn phi_kernel(w: f64, x: f64, y: f64, z: f64) -> f64 {
    w.min(x).min(y).min(z).max(0.0).sqrt()
}

/// Hot-path variant of [`w_kernel`] on precomputed square roots.
#[inline]
pub(crate) fn w_kernel_sqrt(sx: f64, sw: f64, sy: f64, sz: f64) -> f64 {
    sw.min(sy).min(sz).min(sx) / sx
}

/// Two-branch auxiliary from the loss-rate decomposition:
/// (1/3)(w/x)^(3/2) for w <= x, and 1/3 + w/x - sqrt(w/x) for w >= x.
///
/// Continuous at w = x (both branches give 1/3), nonnegative and
/// nondecreasing in w.
pub fn g_aux(x: f64, w: f64) -> f64 {
    assert!(x > 0.0, "g_aux requires x > 0");
    let r = w / x;
    if r <= 1.0 {
        r.powf(1.5) / 3.0
    } else {
        1.0 / 3.0 + r - r.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn w_kernel_examples() {
        assert_eq!(w_kernel(1.0, 1.0, 1.0, 1.0).unwrap(), 1.0);
        assert!((w_kernel(4.0, 1.0, 2.0, 3.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(w_kernel(1.0, 0.0, 3.0, 7.0).unwrap(), 0.0);
        assert!(w_kernel(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi_kernel(0.0, 1.0, 2.0, 3.0), 0.0);
        assert_eq!(phi_kernel(4.0, 4.0, 4.0, 4.0), 2.0);
    }

    #[test]
    fn g_aux_examples() {
        assert!((g_aux(1.0, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(g_aux(1.0, 0.0), 0.0);
        assert!((g_aux(1.0, 4.0) - 7.0 / 3.0).abs() < 1e-15);
        // Both branches meet at w = x.
        let below = g_aux(2.0, 2.0 * (1.0 - 1e-12));
        let above = g_aux(2.0, 2.0 * (1.0 + 1e-12));
        assert!((below - above).abs() < 1e-11);
    }

    proptest! {
        #[test]
        fn w_kernel_bounded(x in 1e-6..50.0f64, w in 0.0..50.0f64,
                            y in 0.0..50.0f64, z in 0.0..50.0f64) {
            let v = w_kernel(x, w, y, z).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn phi_symmetric(a in 0.0..50.0f64, b in 0.0..50.0f64,
                         c in 0.0..50.0f64, d in 0.0..50.0f64) {
            let v = phi_kernel(a, b, c, d);
            prop_assert_eq!(v, phi_kernel(d, c, b, a));
            prop_assert_eq!(v, phi_kernel(b, a, d, c));
        }

        #[test]
        fn kernel_identity(x in 1e-6..50.0f64, w in 0.0..50.0f64,
                           y in 0.0..50.0f64, z in 0.0..50.0f64) {
            let lhs = w_kernel(x, w, y, z).unwrap() * x.sqrt();
            let rhs = phi_kernel(w, x, y, z);
            prop_assert!((lhs - rhs).abs() <= 1e-15 * rhs.max(1.0));
        }

        #[test]
        fn g_aux_monotone(x in 1e-3..10.0f64, w in 0.0..40.0f64, dw in 0.0..5.0f64) {
            prop_assert!(g_aux(x, w + dw) >= g_aux(x, w) - 1e-14);
        }
    }
}
