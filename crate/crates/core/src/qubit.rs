//! Single-qubit directions on the Poincaré sphere.

use serde::{Deserialize, Serialize};

use crate::setting::Basis;

/// A Bloch (Poincaré) vector. Norm below one encodes partial polarization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const NORM_TOLERANCE: f64 = 1e-12;

impl BlochVector {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    pub fn axis(basis: Basis, sign: f64) -> Self {
        let [x, y, z] = basis.axis();
        BlochVector::new(sign * x, sign * y, sign * z)
    }

    /// Unit vector from polar angle (from +z) and azimuth (from +x).
    pub fn from_angles(polar: f64, azimuth: f64) -> Self {
        let (sp, cp) = polar.sin_cos();
        let (sa, ca) = azimuth.sin_cos();
        BlochVector::new(sp * ca, sp * sa, cp)
    }

    /// `(polar, azimuth)` of the direction; the norm is discarded.
    pub fn to_angles(self) -> (f64, f64) {
        let rho = self.x.hypot(self.y);
        (rho.atan2(self.z), self.y.atan2(self.x))
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, other: BlochVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn scale(self, s: f64) -> Self {
        BlochVector::new(s * self.x, s * self.y, s * self.z)
    }

    pub fn neg(self) -> Self {
        self.scale(-1.0)
    }

    pub fn is_valid(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.norm() <= 1.0 + NORM_TOLERANCE
    }

    /// Rotation of the equatorial components about +z.
    pub fn rotate_z(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        BlochVector::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn max_abs_diff(self, other: BlochVector) -> f64 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }
}

impl From<[f64; 3]> for BlochVector {
    fn from(v: [f64; 3]) -> Self {
        BlochVector::new(v[0], v[1], v[2])
    }
}

impl From<BlochVector> for [f64; 3] {
    fn from(v: BlochVector) -> Self {
        v.as_array()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn angles_roundtrip_on_poles_and_equator() {
        for v in [
            BlochVector::new(0.0, 0.0, 1.0),
            BlochVector::new(0.0, 0.0, -1.0),
            BlochVector::new(1.0, 0.0, 0.0),
            BlochVector::new(0.0, -1.0, 0.0),
            BlochVector::new(0.6, 0.0, 0.8),
        ] {
            let (p, a) = v.to_angles();
            assert!(BlochVector::from_angles(p, a).max_abs_diff(v) < 1e-15);
        }
    }

    #[test]
    fn rotation_keeps_z() {
        let v = BlochVector::new(1.0, 0.0, 0.0).rotate_z(FRAC_PI_2);
        assert!(v.max_abs_diff(BlochVector::new(0.0, 1.0, 0.0)) < 1e-15);
    }

    #[test]
    fn json_is_a_triple() {
        let v = BlochVector::new(0.5, -0.5, 0.0);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, "[0.5,-0.5,0.0]");
        let back: BlochVector = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
