//! Dual-sensor fusion through the mirror sign vector.

use crate::se3::Twist;
use crate::{lit, Error, Real, Result};

/// Signs `(s_ωx, s_ωy, s_ωz, s_tx, s_ty, s_tz)` mapping sensor-2 twists
/// into the sensor-1 frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MirrorConfig {
    pub signs: [i8; 6],
}

impl Default for MirrorConfig {
    fn default() -> Self {
        mirror_sign_default()
    }
}

impl MirrorConfig {
    pub fn new(signs: [i8; 6]) -> Result<Self> {
        if signs.iter().all(|s| *s == 1 || *s == -1) {
            Ok(Self { signs })
        } else {
            Err(Error::InvalidConfig("mirror signs must be +1 or -1".into()))
        }
    }

    /// `s ∘ ξ`.
    pub fn apply<S: Real>(&self, xi: &Twist<S>) -> Twist<S> {
        let mut v = xi.to_array();
        for (x, s) in v.iter_mut().zip(self.signs) {
            if s < 0 {
                *x = -*x;
            }
        }
        Twist::from_array(v)
    }
}

/// Sensor 2 faces sensor 1 across the grasp: x is shared, y and z flip.
pub fn mirror_sign_default() -> MirrorConfig {
    MirrorConfig {
        signs: [1, -1, -1, 1, -1, -1],
    }
}

/// `½(ξ₁ + s∘ξ₂)`.
pub fn fuse_dual<S: Real>(xi1: &Twist<S>, xi2: &Twist<S>, cfg: &MirrorConfig) -> Twist<S> {
    (*xi1 + cfg.apply(xi2)) * lit::<S>(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_signs() {
        let s = mirror_sign_default();
        assert_eq!(s.signs, [1, -1, -1, 1, -1, -1]);
        assert_eq!(s.signs.iter().map(|v| *v as i32).product::<i32>(), 1);
        assert!(MirrorConfig::new([1, 0, 1, 1, 1, 1]).is_err());
    }

    #[test]
    fn fusion_examples() {
        let cfg = mirror_sign_default();
        assert_eq!(fuse_dual(&Twist::<f64>::zero(), &Twist::zero(), &cfg), Twist::zero());
        let a = Twist::from_array([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let b = Twist::from_array([0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        assert_eq!(fuse_dual(&a, &b, &cfg), a);
    }

    proptest! {
        #[test]
        fn mirror_is_an_involution(v in prop::array::uniform6(-10.0..10.0f64)) {
            let cfg = mirror_sign_default();
            let xi = Twist::from_array(v);
            prop_assert_eq!(cfg.apply(&cfg.apply(&xi)), xi);
            prop_assert_eq!(fuse_dual(&xi, &cfg.apply(&xi), &cfg), xi);
        }

        #[test]
        fn fusion_is_linear(
            a in prop::array::uniform6(-10.0..10.0f64),
            b in prop::array::uniform6(-10.0..10.0f64),
            c in prop::array::uniform6(-10.0..10.0f64),
            k in -3.0..3.0f64,
        ) {
            let cfg = mirror_sign_default();
            let (a, b, c) = (Twist::from_array(a), Twist::from_array(b), Twist::from_array(c));
            let lhs = fuse_dual(&(a * k + c), &(b * k), &cfg);
            let rhs = fuse_dual(&a, &b, &cfg) * k + fuse_dual(&c, &Twist::zero(), &cfg);
            prop_assert!((lhs - rhs).to_array().iter().all(|d| d.abs() < 1e-10));
        }
    }
}
