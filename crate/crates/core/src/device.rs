//! Parametrized device model: preparation and measurement directions with
//! per-channel efficiencies, and the click probabilities they induce on the
//! two-parameter channel.

use serde::{Deserialize, Serialize};

use crate::density::ChannelState;
use crate::error::{Error, Result};
use crate::qubit::BlochVector;
use crate::setting::{Basis, Setting, Sign};

/// 6x6 table indexed by (preparation setting, detection setting).
pub type SettingTable = [[f64; 6]; 6];

/// Length of the packed device vector.
pub const DEVICE_PARAMS: usize = 32;
/// Number of packed angle entries (ten free directions).
pub const ANGLE_PARAMS: usize = 20;
/// Bounds on efficiencies while optimizing.
pub const EFFICIENCY_BOUNDS: (f64, f64) = (0.1, 10.0);

/// Preparation settings whose directions are free parameters (Z is fixed).
const FREE_PREP: [usize; 4] = [0, 1, 2, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub prep_dirs: [BlochVector; 6],
    pub meas_dirs: [BlochVector; 6],
    pub prep_eff: [f64; 6],
    pub meas_eff: [f64; 6],
}

impl DeviceParams {
    /// Orthonormal preparations and measurements with unit efficiencies.
    pub fn ideal() -> Self {
        let dirs = std::array::from_fn(|i| {
            let s = Setting::from_index(i);
            BlochVector::axis(s.basis, s.sign.value())
        });
        DeviceParams { prep_dirs: dirs, meas_dirs: dirs, prep_eff: [1.0; 6], meas_eff: [1.0; 6] }
    }

    pub fn prep(&self, s: Setting) -> BlochVector {
        self.prep_dirs[s.index()]
    }

    pub fn meas(&self, s: Setting) -> BlochVector {
        self.meas_dirs[s.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.prep_dirs.iter().chain(&self.meas_dirs).enumerate() {
            if !v.is_valid() {
                return Err(Error::Config(format!("direction {i} has norm {} > 1", v.norm())));
            }
        }
        let z_plus = self.prep_dirs[Setting::new(Basis::Z, Sign::Plus).index()];
        let z_minus = self.prep_dirs[Setting::new(Basis::Z, Sign::Minus).index()];
        if z_plus != BlochVector::new(0.0, 0.0, 1.0) || z_minus != BlochVector::new(0.0, 0.0, -1.0) {
            return Err(Error::Config("key-basis preparations must be (0,0,+1) and (0,0,-1)".into()));
        }
        for &t in self.prep_eff.iter().chain(&self.meas_eff) {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("efficiency {t} must be positive")));
            }
        }
        Ok(())
    }

    /// Packs the free parameters: polar/azimuth pairs of X+, X-, Y+, Y-
    /// preparations, then of all six measurements, then the six preparation
    /// and six detection efficiencies.
    pub fn pack(&self) -> [f64; DEVICE_PARAMS] {
        let mut v = [0.0; DEVICE_PARAMS];
        let dirs = FREE_PREP.iter().map(|&i| self.prep_dirs[i]).chain(self.meas_dirs.iter().copied());
        for (k, d) in dirs.enumerate() {
            let (p, a) = d.to_angles();
            v[2 * k] = p;
            v[2 * k + 1] = a;
        }
        v[ANGLE_PARAMS..ANGLE_PARAMS + 6].copy_from_slice(&self.prep_eff);
        v[ANGLE_PARAMS + 6..].copy_from_slice(&self.meas_eff);
        v
    }

    /// Inverse of [`pack`](Self::pack). Directions come back as unit vectors.
    pub fn unpack(v: &[f64]) -> Self {
        assert!(v.len() >= DEVICE_PARAMS, "packed device vector too short");
        let dir = |k: usize| BlochVector::from_angles(v[2 * k], v[2 * k + 1]);
        let mut prep_dirs = [BlochVector::default(); 6];
        for (k, &i) in FREE_PREP.iter().enumerate() {
            prep_dirs[i] = dir(k);
        }
        prep_dirs[4] = BlochVector::new(0.0, 0.0, 1.0);
        prep_dirs[5] = BlochVector::new(0.0, 0.0, -1.0);
        let meas_dirs = std::array::from_fn(|i| dir(FREE_PREP.len() + i));
        let mut prep_eff = [0.0; 6];
        let mut meas_eff = [0.0; 6];
        prep_eff.copy_from_slice(&v[ANGLE_PARAMS..ANGLE_PARAMS + 6]);
        meas_eff.copy_from_slice(&v[ANGLE_PARAMS + 6..DEVICE_PARAMS]);
        DeviceParams { prep_dirs, meas_dirs, prep_eff, meas_eff }
    }

    /// Lower and upper bounds of the packed vector used by the optimizer.
    /// Angles are unbounded; the first preparation and first detection
    /// efficiency are pinned to one because the normalized click
    /// distribution does not see either overall scale.
    pub fn packed_bounds() -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::NEG_INFINITY; DEVICE_PARAMS];
        let mut hi = vec![f64::INFINITY; DEVICE_PARAMS];
        for i in ANGLE_PARAMS..DEVICE_PARAMS {
            lo[i] = EFFICIENCY_BOUNDS.0;
            hi[i] = EFFICIENCY_BOUNDS.1;
        }
        for i in [ANGLE_PARAMS, ANGLE_PARAMS + 6] {
            lo[i] = 1.0;
            hi[i] = 1.0;
        }
        (lo, hi)
    }
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self::ideal()
    }
}

pub fn ideal_params() -> DeviceParams {
    DeviceParams::ideal()
}

/// Unnormalized click weight `q` for preparing `prep` and firing `det`.
pub fn click_probability_q(params: &DeviceParams, channel: ChannelState, prep: Setting, det: Setting) -> f64 {
    q_weight(
        params.prep(prep),
        params.meas(det),
        params.prep_eff[prep.index()] * params.meas_eff[det.index()],
        channel,
    )
}

#[inline]
fn q_weight(n: BlochVector, r: BlochVector, eff: f64, ch: ChannelState) -> f64 {
    eff / 4.0 * (1.0 + ch.lambda2 * (n.x * r.x + n.y * r.y) + ch.lambda1 * n.z * r.z)
}

/// Unnormalized weights for all 36 cells.
pub fn click_weights(params: &DeviceParams, channel: ChannelState) -> SettingTable {
    let mut q = [[0.0; 6]; 6];
    for (a, row) in q.iter_mut().enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = q_weight(
                params.prep_dirs[a],
                params.meas_dirs[b],
                params.prep_eff[a] * params.meas_eff[b],
                channel,
            );
        }
    }
    q
}

/// Normalized click probabilities `p = q / sum q`.
pub fn click_distribution(params: &DeviceParams, channel: ChannelState) -> Result<SettingTable> {
    let mut q = click_weights(params, channel);
    let total: f64 = q.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroModel);
    }
    q.iter_mut().flatten().for_each(|p| *p /= total);
    Ok(q)
}
