//! Jones-calculus construction of imperfect preparation and measurement
//! directions from waveplate retardances and beam-splitter extinction.
//!
//! Stokes convention: `x` is horizontal/vertical, `y` diagonal/antidiagonal
//! and `z` circular, with a horizontally polarized beam through a quarter
//! waveplate at 45 degrees landing on `+z`.

use nalgebra::{Complex, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::error::{Error, Result};
use crate::qubit::BlochVector;
use crate::setting::{Basis, Setting, Sign};

type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsSpec {
    /// Half-waveplate retardance in waves.
    pub hwp_retardance: f64,
    /// Quarter-waveplate retardance in waves.
    pub qwp_retardance: f64,
    /// Polarizing beam splitter extinction ratio in dB.
    pub pbs_extinction: f64,
    #[serde(default = "default_hwp_angle")]
    pub hwp_angle: f64,
    #[serde(default = "default_qwp_angle")]
    pub qwp_angle: f64,
}

fn default_hwp_angle() -> f64 {
    22.5
}

fn default_qwp_angle() -> f64 {
    45.0
}

/// Extinction used for an ideal splitter; large enough that the leak is
/// below double precision.
pub const IDEAL_EXTINCTION_DB: f64 = 400.0;

impl OpticsSpec {
    pub fn ideal() -> Self {
        OpticsSpec {
            hwp_retardance: 0.5,
            qwp_retardance: 0.25,
            pbs_extinction: IDEAL_EXTINCTION_DB,
            hwp_angle: default_hwp_angle(),
            qwp_angle: default_qwp_angle(),
        }
    }

    /// Waveplates as characterized on the bench at 850 nm with 13 dB splitters.
    pub fn bench_emitter() -> Self {
        OpticsSpec { hwp_retardance: 0.535, qwp_retardance: 0.265, pbs_extinction: 13.0, ..Self::ideal() }
    }

    /// Receiver waveplates with the same retardance errors. The receiver's
    /// splitters see already polarized light, so their leak is not modeled.
    pub fn bench_receiver() -> Self {
        OpticsSpec { hwp_retardance: 0.535, qwp_retardance: 0.265, ..Self::ideal() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("hwp_retardance", self.hwp_retardance), ("qwp_retardance", self.qwp_retardance)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!("{name} = {r} must lie in (0, 1) waves")));
            }
        }
        if !(self.pbs_extinction > 0.0) {
            return Err(Error::Config(format!("pbs_extinction = {} dB must be positive", self.pbs_extinction)));
        }
        if !(self.hwp_angle.is_finite() && self.qwp_angle.is_finite()) {
            return Err(Error::Config("waveplate angles must be finite".into()));
        }
        Ok(())
    }

    /// Leaked intensity fraction of the wrong polarization.
    pub fn leak(&self) -> f64 {
        10f64.powf(-self.pbs_extinction / 10.0)
    }

    /// Bloch-vector length after the splitter, `(1 - eps) / (1 + eps)`.
    pub fn polarization_degree(&self) -> f64 {
        let eps = self.leak();
        (1.0 - eps) / (1.0 + eps)
    }

    /// Jones matrix of the waveplate in `arm` (identity for X).
    fn arm_plate(&self, arm: Basis) -> Matrix2<C64> {
        match arm {
            Basis::X => Matrix2::identity(),
            Basis::Y => waveplate(self.hwp_retardance, self.hwp_angle),
            Basis::Z => waveplate(self.qwp_retardance, self.qwp_angle),
        }
    }
}

impl Default for OpticsSpec {
    fn default() -> Self {
        Self::ideal()
    }
}

fn rotation(theta: f64) -> Matrix2<C64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(Complex::new(c, 0.0), Complex::new(s, 0.0), Complex::new(-s, 0.0), Complex::new(c, 0.0))
}

/// Linear retarder with fast axis at `angle_deg` and retardance in waves.
pub fn waveplate(retardance_waves: f64, angle_deg: f64) -> Matrix2<C64> {
    let theta = angle_deg.to_radians();
    let delta = std::f64::consts::TAU * retardance_waves;
    let phase = Matrix2::new(
        Complex::new(1.0, 0.0),
        Complex::new(0.0, 0.0),
        Complex::new(0.0, 0.0),
        Complex::from_polar(1.0, delta),
    );
    rotation(-theta) * phase * rotation(theta)
}

/// Stokes direction of a pure Jones vector.
pub fn stokes(e: Vector2<C64>) -> BlochVector {
    let (ex, ey) = (e[0], e[1]);
    let s0 = ex.norm_sqr() + ey.norm_sqr();
    let cross = ex.conj() * ey;
    BlochVector::new(
        (ex.norm_sqr() - ey.norm_sqr()) / s0,
        2.0 * cross.re / s0,
        -2.0 * cross.im / s0,
    )
}

fn horizontal() -> Vector2<C64> {
    Vector2::new(Complex::new(1.0, 0.0), Complex::new(0.0, 0.0))
}

/// Preparation direction of the `arm`/`sign` emitter: the splitter output
/// (H for `+`, V for `-`) sent through the arm's waveplate. The splitter
/// leak shortens the vector; the waveplate only rotates it.
pub fn bloch_from_optics(spec: &OpticsSpec, arm: Basis, sign: Sign) -> BlochVector {
    let dir = stokes(spec.arm_plate(arm) * horizontal());
    dir.scale(sign.value() * spec.polarization_degree())
}

/// Direction measured by the `arm`/`sign` detector: the state that the
/// arm's waveplate maps onto the splitter's transmitted port. Ports are
/// labeled so that ideal optics give the `sign` side of the `arm` axis.
pub fn measurement_bloch_from_optics(spec: &OpticsSpec, arm: Basis, sign: Sign) -> BlochVector {
    let seen = stokes(spec.arm_plate(arm).adjoint() * horizontal());
    let ideal = stokes(OpticsSpec::ideal().arm_plate(arm).adjoint() * horizontal());
    let axis = BlochVector::from(arm.axis());
    let port = if ideal.dot(axis) >= 0.0 { 1.0 } else { -1.0 };
    seen.scale(port * sign.value() * spec.polarization_degree())
}

impl DeviceParams {
    /// Ground-truth device built from emitter and receiver optics, with
    /// unit efficiencies. Key-basis preparations are whatever the optics
    /// produce, so the result is not restricted to the optimizer's frame.
    pub fn from_optics(emitter: &OpticsSpec, receiver: &OpticsSpec) -> Result<Self> {
        emitter.validate()?;
        receiver.validate()?;
        let prep_dirs = std::array::from_fn(|i| {
            let s = Setting::from_index(i);
            bloch_from_optics(emitter, s.basis, s.sign)
        });
        let meas_dirs = std::array::from_fn(|i| {
            let s = Setting::from_index(i);
            measurement_bloch_from_optics(receiver, s.basis, s.sign)
        });
        Ok(DeviceParams { prep_dirs, meas_dirs, prep_eff: [1.0; 6], meas_eff: [1.0; 6] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jones_unit(v: Vector2<C64>) -> f64 {
        v.norm()
    }

    #[test]
    fn ideal_half_waveplate_makes_diagonal() {
        let v = bloch_from_optics(&OpticsSpec::ideal(), Basis::Y, Sign::Plus);
        assert!(v.max_abs_diff(BlochVector::new(0.0, 1.0, 0.0)) < 1e-12);
    }

    #[test]
    fn ideal_quarter_waveplate_makes_circular() {
        let v = bloch_from_optics(&OpticsSpec::ideal(), Basis::Z, Sign::Plus);
        assert!(v.max_abs_diff(BlochVector::new(0.0, 0.0, 1.0)) < 1e-12);
        let v = bloch_from_optics(&OpticsSpec::ideal(), Basis::Z, Sign::Minus);
        assert!(v.max_abs_diff(BlochVector::new(0.0, 0.0, -1.0)) < 1e-12);
    }

    #[test]
    fn mistuned_half_waveplate_tilts_out_of_plane() {
        let spec = OpticsSpec { hwp_retardance: 0.535, ..OpticsSpec::ideal() };
        let v = bloch_from_optics(&spec, Basis::Y, Sign::Plus);
        // Oracle: Rodrigues rotation of (1,0,0) by -delta about the axis at
        // 2*22.5 deg in the x-y plane, a = (1,1,0)/sqrt2 (the sense is fixed
        // by the quarter-wave convention H -> +z):
        // v = a (a.x) + cos(delta) (x - a (a.x)) - sin(delta) (a cross x)
        let delta = std::f64::consts::TAU * 0.535;
        let (s, c) = delta.sin_cos();
        let half = 0.5;
        let want = BlochVector::new(half + c * half, half - c * half, s / 2f64.sqrt());
        assert!(v.max_abs_diff(want) < 1e-12, "{v:?} vs {want:?}");
        assert!(v.y.abs() < 1.0 && v.z.abs() > 0.1);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_optics_reproduce_ideal_device() {
        let dev = DeviceParams::from_optics(&OpticsSpec::ideal(), &OpticsSpec::ideal()).unwrap();
        let ideal = DeviceParams::ideal();
        for i in 0..6 {
            assert!(dev.prep_dirs[i].max_abs_diff(ideal.prep_dirs[i]) < 1e-12, "prep {i}");
            assert!(dev.meas_dirs[i].max_abs_diff(ideal.meas_dirs[i]) < 1e-12, "meas {i}");
        }
    }

    #[test]
    fn extinction_shortens_vector() {
        let spec = OpticsSpec::bench_emitter();
        let eps = 10f64.powf(-1.3);
        for i in 0..6 {
            let s = Setting::from_index(i);
            let v = bloch_from_optics(&spec, s.basis, s.sign);
            assert!((v.norm() - (1.0 - eps) / (1.0 + eps)).abs() < 1e-12);
        }
    }

    #[test]
    fn waveplates_are_unitary() {
        for (r, a) in [(0.535, 22.5), (0.265, 45.0), (0.1, 13.0)] {
            let w = waveplate(r, a);
            let id = w * w.adjoint();
            assert!((id - Matrix2::identity()).norm() < 1e-14);
            assert!((jones_unit(w * horizontal()) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn measurement_of_prepared_state_matches_fidelity() {
        // Detector + of each arm should click with certainty on the ideal
        // + preparation and never on the - preparation.
        let ideal = OpticsSpec::ideal();
        for b in Basis::ALL {
            let r = measurement_bloch_from_optics(&ideal, b, Sign::Plus);
            let n = bloch_from_optics(&ideal, b, Sign::Plus);
            assert!(((1.0 + n.dot(r)) / 2.0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn validation() {
        assert!(OpticsSpec { hwp_retardance: 1.2, ..OpticsSpec::ideal() }.validate().is_err());
        assert!(OpticsSpec { pbs_extinction: 0.0, ..OpticsSpec::ideal() }.validate().is_err());
        OpticsSpec::bench_emitter().validate().unwrap();
    }
}
