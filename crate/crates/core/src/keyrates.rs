//! Secret key fractions: the analytic BB84 and RFI bounds, and the
//! uncalibrated-device rate obtained by minimizing the usable entropy over
//! every channel and device consistent with the observed statistics.

use serde::{Deserialize, Serialize};

use crate::density::{usable_entropy_raw, ChannelState};
use crate::device::{click_distribution, DeviceParams, ANGLE_PARAMS, DEVICE_PARAMS};
use crate::entropy::{binary_entropy, binary_entropy_unchecked, xlog2x};
use crate::error::{domain, Error, Result};
use crate::estimation::{constraint_values, ConstraintSet, N_CONSTRAINTS};
use crate::optimizer::{minimize, multistart_points, ConstrainedProblem, MinimizationResult, MinimizerConfig};
use crate::qubit::BlochVector;
use crate::setting::Basis;

/// Largest QBER for which the RFI expression is used.
pub const RFI_MAX_QBER: f64 = 0.159;

/// Number of optimization variables: device vector, `lambda1`, and the
/// relative coherence `s = 2 lambda2 / (1 + lambda1)`.
pub const URFI_PARAMS: usize = DEVICE_PARAMS + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyrateStatus {
    Ok,
    /// The bound is not positive; no key can be distilled.
    Abort,
    /// No parameters reproduce the observations.
    Infeasible,
    /// The inputs lie outside the range where the formula holds.
    OutOfDomain,
}

fn check_correlator(what: &'static str, c: f64) -> Result<()> {
    if c.is_nan() || c.abs() > 1.0 {
        return Err(domain(what, c));
    }
    Ok(())
}

/// `1 - h(x+) - h(z+)` without clamping.
pub fn bb84_bound_unclamped(c_xx: f64, c_zz: f64) -> Result<f64> {
    check_correlator("C_XX", c_xx)?;
    check_correlator("C_ZZ", c_zz)?;
    let x = [(1.0 + c_xx) / 2.0, (1.0 - c_xx) / 2.0];
    let z = [(1.0 + c_zz) / 2.0, (1.0 - c_zz) / 2.0];
    Ok(1.0 + x.iter().flat_map(|&a| z.iter().map(move |&b| xlog2x(a * b))).sum::<f64>())
}

/// BB84 key fraction from one equatorial and the key-basis correlator,
/// clamped to `[0, 1]`.
pub fn bb84_rate(c_xx: f64, c_zz: f64) -> Result<f64> {
    Ok(bb84_bound_unclamped(c_xx, c_zz)?.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BasisPair {
    XX,
    XY,
    YX,
    YY,
}

impl BasisPair {
    pub const ALL: [BasisPair; 4] = [BasisPair::XX, BasisPair::XY, BasisPair::YX, BasisPair::YY];

    pub fn bases(self) -> (Basis, Basis) {
        match self {
            BasisPair::XX => (Basis::X, Basis::X),
            BasisPair::XY => (Basis::X, Basis::Y),
            BasisPair::YX => (Basis::Y, Basis::X),
            BasisPair::YY => (Basis::Y, Basis::Y),
        }
    }
}

/// BB84 rate using the selected equatorial correlator. Its sign is a known
/// relabeling and does not cost key.
pub fn bb84_rate_any_pair(c: &[[f64; 3]; 3], pair: BasisPair) -> Result<f64> {
    let (a, b) = pair.bases();
    bb84_rate(c[a.index()][b.index()].abs(), c[2][2])
}

/// Sum of squares of the four equatorial correlators.
pub fn quantity_c(c: &[[f64; 3]; 3]) -> f64 {
    c[0][0].powi(2) + c[0][1].powi(2) + c[1][0].powi(2) + c[1][1].powi(2)
}

/// RFI key fraction from the QBER and the rotation-invariant quantity C.
pub fn rfi_rate(q: f64, c: f64) -> Result<(f64, KeyrateStatus)> {
    if q.is_nan() || !(0.0..=1.0).contains(&q) {
        return Err(domain("QBER", q));
    }
    if c.is_nan() || c < 0.0 || c > 2.0 + 1e-9 {
        return Err(domain("C", c));
    }
    if q > RFI_MAX_QBER {
        return Ok((0.0, KeyrateStatus::OutOfDomain));
    }
    let half = (c / 2.0).min(1.0);
    let u = if q < 1.0 { (half.sqrt() / (1.0 - q)).min(1.0) } else { 1.0 };
    let v_term = if q > 0.0 {
        let v = ((half - (1.0 - q).powi(2) * u * u).max(0.0)).sqrt() / q;
        q * binary_entropy_unchecked((1.0 + v.min(1.0)) / 2.0)
    } else {
        0.0
    };
    let r = 1.0 - binary_entropy(q)? - (1.0 - q) * binary_entropy_unchecked((1.0 + u) / 2.0) - v_term;
    Ok(if r > 0.0 { (r.min(1.0), KeyrateStatus::Ok) } else { (0.0, KeyrateStatus::Abort) })
}

/// RFI rate from measured correlators, with `Q = (1 - C_ZZ) / 2`.
pub fn rfi_rate_from_correlators(c: &[[f64; 3]; 3]) -> Result<(f64, KeyrateStatus)> {
    rfi_rate(((1.0 - c[2][2]) / 2.0).clamp(0.0, 1.0), quantity_c(c).min(2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Constraint half-width in standard deviations.
    pub sigma: f64,
    /// Error-correction inefficiency multiplying the key-basis entropy.
    pub ec_efficiency: f64,
    /// Number of optimizer starts (anchors included).
    pub starts: usize,
    pub seed: u64,
    pub minimizer: MinimizerConfig,
    /// Which of the 21 constraints take part; `None` uses all active ones.
    pub constraint_mask: Option<Vec<bool>>,
    /// Additional initial points, as packed optimization vectors.
    pub extra_anchors: Vec<Vec<f64>>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sigma: 3.0,
            ec_efficiency: 1.0,
            starts: 16,
            seed: 0,
            minimizer: MinimizerConfig::default(),
            constraint_mask: None,
            extra_anchors: Vec::new(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(domain("sigma", self.sigma));
        }
        if !(self.ec_efficiency >= 1.0 && self.ec_efficiency.is_finite()) {
            return Err(domain("error-correction efficiency", self.ec_efficiency));
        }
        if self.starts == 0 {
            return Err(Error::Config("at least one optimizer start is required".into()));
        }
        if let Some(mask) = &self.constraint_mask {
            if mask.len() != N_CONSTRAINTS {
                return Err(Error::Config(format!("constraint mask needs {N_CONSTRAINTS} entries")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyrateResult {
    pub rate: f64,
    pub s_min: f64,
    pub qber_bound: f64,
    pub status: KeyrateStatus,
    pub sigma: f64,
    /// Optimal packed vector: device parameters, `lambda1`, `s`.
    pub minimizer: Vec<f64>,
    pub channel: ChannelState,
    pub max_violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl KeyrateResult {
    pub fn device(&self) -> DeviceParams {
        DeviceParams::unpack(&self.minimizer[..DEVICE_PARAMS])
    }
}

/// Channel encoded in the last two optimization variables.
pub fn channel_of(x: &[f64]) -> ChannelState {
    let lambda1 = x[DEVICE_PARAMS];
    let s = x[DEVICE_PARAMS + 1];
    ChannelState { lambda1, lambda2: s * (1.0 + lambda1) / 2.0 }
}

/// Model constraint values for an optimization vector.
pub fn model_constraints(x: &[f64]) -> [f64; N_CONSTRAINTS] {
    let dev = DeviceParams::unpack(&x[..DEVICE_PARAMS]);
    match click_distribution(&dev, channel_of(x)) {
        Ok(p) => constraint_values(&p),
        Err(_) => [f64::NAN; N_CONSTRAINTS],
    }
}

/// Optimization vector that matches the first moments of the data: ideal
/// preparations, a channel read off `C_ZZ` and `C`, and detector
/// directions aligned with the measured correlator columns.
pub fn moment_anchor(cs: &ConstraintSet) -> Vec<f64> {
    let lambda1 = cs.c[2][2].clamp(-0.999, 0.999);
    let lambda2 = (quantity_c(&cs.c) / 2.0).sqrt().clamp(1e-3, (1.0 + lambda1) / 2.0 * 0.999);
    let mut dev = DeviceParams::ideal();
    for b in Basis::ALL {
        let col = BlochVector::new(
            cs.c[0][b.index()] / lambda2,
            cs.c[1][b.index()] / lambda2,
            cs.c[2][b.index()] / lambda1.abs().max(1e-3),
        );
        let norm = col.norm();
        let dir = if norm > 1e-9 { col.scale(1.0 / norm) } else { BlochVector::from(b.axis()) };
        dev.meas_dirs[2 * b.index()] = dir;
        dev.meas_dirs[2 * b.index() + 1] = dir.neg();
    }
    let mut x = dev.pack().to_vec();
    x.push(lambda1);
    x.push(2.0 * lambda2 / (1.0 + lambda1));
    x
}

fn urfi_bounds() -> (Vec<f64>, Vec<f64>) {
    let (mut lo, mut hi) = DeviceParams::packed_bounds();
    lo.extend([-1.0, 0.0]);
    hi.extend([1.0, 1.0]);
    (lo, hi)
}

/// Finite box for random starts: polar angles in `[0, pi]`, azimuths in
/// `[-pi, pi]`, efficiencies within a factor two of one.
fn urfi_sampling_box() -> (Vec<f64>, Vec<f64>) {
    let (mut lo, mut hi) = urfi_bounds();
    for k in 0..ANGLE_PARAMS / 2 {
        lo[2 * k] = 0.0;
        hi[2 * k] = std::f64::consts::PI;
        lo[2 * k + 1] = -std::f64::consts::PI;
        hi[2 * k + 1] = std::f64::consts::PI;
    }
    for i in ANGLE_PARAMS..DEVICE_PARAMS {
        if lo[i] != hi[i] {
            lo[i] = 0.5;
            hi[i] = 2.0;
        }
    }
    (lo, hi)
}

/// Worst-case key-basis error rate `(1 - C_ZZ + sigma dC_ZZ) / 2`, capped at
/// one half.
pub fn qber_bound(cs: &ConstraintSet, sigma: f64) -> f64 {
    ((1.0 - cs.c[2][2] + sigma * cs.dc[2][2]) / 2.0).clamp(0.0, 0.5)
}

/// Uncalibrated-device key fraction.
pub fn urfi_rate(cs: &ConstraintSet, cfg: &AnalysisConfig) -> Result<KeyrateResult> {
    cfg.validate()?;
    let values = cs.values();
    let devs = cs.deviations();
    let active = cs.active();
    let intervals: Vec<(f64, f64)> = (0..N_CONSTRAINTS)
        .map(|i| {
            let used = active[i] && cfg.constraint_mask.as_ref().is_none_or(|m| m[i]);
            if used {
                (values[i] - cfg.sigma * devs[i], values[i] + cfg.sigma * devs[i])
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
        })
        .collect();

    let mut anchors = vec![moment_anchor(cs)];
    anchors.extend(cfg.extra_anchors.iter().filter(|a| a.len() == URFI_PARAMS).cloned());
    let (slo, shi) = urfi_sampling_box();
    let starts = multistart_points(&slo, &shi, cfg.starts.max(anchors.len()), cfg.seed, &anchors)?;
    let (lo, hi) = urfi_bounds();
    let problem = ConstrainedProblem::new(URFI_PARAMS, |x: &[f64]| {
        let ch = channel_of(x);
        usable_entropy_raw(ch.lambda1, ch.lambda2).clamp(0.0, 1.0)
    })
    .with_bounds(lo, hi)
    .with_constraints(intervals, |x, out| out.copy_from_slice(&model_constraints(x)))
    .with_starts(starts);
    let found = minimize(&problem, &cfg.minimizer)?;
    Ok(finish(cs, cfg, found))
}

fn finish(cs: &ConstraintSet, cfg: &AnalysisConfig, found: MinimizationResult) -> KeyrateResult {
    let qber = qber_bound(cs, cfg.sigma);
    let channel = channel_of(&found.x);
    let (rate, status) = if !found.is_feasible() {
        (0.0, KeyrateStatus::Infeasible)
    } else {
        let r = found.value - cfg.ec_efficiency * binary_entropy_unchecked(qber);
        if r > 0.0 {
            (r.min(1.0), KeyrateStatus::Ok)
        } else {
            (0.0, KeyrateStatus::Abort)
        }
    };
    KeyrateResult {
        rate,
        s_min: found.value,
        qber_bound: qber,
        status,
        sigma: cfg.sigma,
        minimizer: found.x,
        channel,
        max_violation: found.max_violation,
        iterations: found.iterations,
        converged: found.converged,
    }
}

/// Rates for several constraint widths on the same data. Each width starts
/// from the minimizers of the previous ones as well as the usual anchors.
pub fn urfi_sigma_scan(cs: &ConstraintSet, sigmas: &[f64], cfg: &AnalysisConfig) -> Result<Vec<KeyrateResult>> {
    let mut out: Vec<KeyrateResult> = Vec::with_capacity(sigmas.len());
    let mut warm: Vec<Vec<f64>> = cfg.extra_anchors.clone();
    for &sigma in sigmas {
        let run = AnalysisConfig { sigma, extra_anchors: warm.clone(), ..cfg.clone() };
        let r = urfi_rate(cs, &run)?;
        if r.status != KeyrateStatus::Infeasible {
            warm.push(r.minimizer.clone());
        }
        out.push(r);
    }
    Ok(out)
}

/// Entropy minimization behind the BB84 rate: minimize
/// `1 + sum eta_i log2 eta_i` over the Bell-diagonal weights subject to
/// `C_XX = 1 - 2 eta_2 - 2 eta_4`, `C_ZZ = 1 - 2 eta_3 - 2 eta_4` (each
/// within `half_width`) and normalization.
pub fn bb84_entropy_problem(c_xx: f64, c_zz: f64, half_width: f64) -> ConstrainedProblem<'static> {
    ConstrainedProblem::new(4, |eta: &[f64]| 1.0 + eta.iter().map(|&e| xlog2x(e)).sum::<f64>())
        .with_bounds(vec![0.0; 4], vec![1.0; 4])
        .with_constraints(
            vec![(c_xx - half_width, c_xx + half_width), (c_zz - half_width, c_zz + half_width), (1.0, 1.0)],
            |eta, out| {
                out[0] = 1.0 - 2.0 * eta[1] - 2.0 * eta[3];
                out[1] = 1.0 - 2.0 * eta[2] - 2.0 * eta[3];
                out[2] = eta.iter().sum();
            },
        )
        .with_starts(vec![vec![0.25; 4], vec![0.7, 0.1, 0.1, 0.1]])
}

/// [`bb84_rate`] computed by the general minimizer instead of the closed
/// form.
pub fn bb84_rate_numerical(c_xx: f64, c_zz: f64, cfg: &MinimizerConfig) -> Result<f64> {
    check_correlator("C_XX", c_xx)?;
    check_correlator("C_ZZ", c_zz)?;
    let r = minimize(&bb84_entropy_problem(c_xx, c_zz, 0.0), cfg)?;
    if !r.is_feasible() {
        return Err(Error::Config("BB84 entropy problem did not reach feasibility".into()));
    }
    Ok(r.value.clamp(0.0, 1.0))
}

/// All analytic and numerical rates of one constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub bb84: [f64; 4],
    pub rfi: f64,
    pub rfi_status: KeyrateStatus,
    pub qber: f64,
    pub c: f64,
}

pub fn analytic_rates(cs: &ConstraintSet) -> Result<RateSummary> {
    let mut bb84 = [0.0; 4];
    for (slot, pair) in bb84.iter_mut().zip(BasisPair::ALL) {
        *slot = bb84_rate_any_pair(&cs.c, pair)?;
    }
    let (rfi, rfi_status) = rfi_rate_from_correlators(&cs.c)?;
    Ok(RateSummary { bb84, rfi, rfi_status, qber: (1.0 - cs.c[2][2]) / 2.0, c: quantity_c(&cs.c) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::ideal_params;
    use crate::estimation::constraints_from_cells;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bb84_examples() {
        assert_eq!(bb84_rate(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(bb84_rate(0.0, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(bb84_bound_unclamped(0.0, 0.0).unwrap(), -1.0, epsilon = 1e-15);
        // 1 - 2 h(0.11)
        assert_abs_diff_eq!(bb84_rate(0.78, 0.78).unwrap(), 1.680_836_709_44e-4, epsilon = 1e-12);
        assert!(bb84_rate(1.2, 0.0).is_err());
    }

    #[test]
    fn bb84_closed_form_matches_minimizer() {
        let cfg = MinimizerConfig { feasibility_tol: 1e-10, parallel: false, ..Default::default() };
        for (cx, cz) in [(0.9, 0.95), (0.5, 0.99), (0.99, 0.99), (0.0, 0.0)] {
            let want = bb84_bound_unclamped(cx, cz).unwrap();
            let r = minimize(&bb84_entropy_problem(cx, cz, 0.0), &cfg).unwrap();
            assert!((r.value - want).abs() < 1e-7, "({cx}, {cz}): {} vs {want}", r.value);
        }
    }

    #[test]
    fn bb84_pairs() {
        let mut c = [[0.0; 3]; 3];
        c[0][1] = 1.0;
        c[2][2] = 1.0;
        assert_eq!(bb84_rate_any_pair(&c, BasisPair::XY).unwrap(), 1.0);
        assert_eq!(bb84_rate_any_pair(&c, BasisPair::XX).unwrap(), 0.0);
        let mut c = [[0.0; 3]; 3];
        c[1][1] = -1.0;
        c[2][2] = 1.0;
        assert_eq!(bb84_rate_any_pair(&c, BasisPair::YY).unwrap(), 1.0);
    }

    #[test]
    fn quantity_c_examples() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(quantity_c(&id), 2.0);
        let (s, c) = 0.7f64.sin_cos();
        let rot = [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]];
        assert_abs_diff_eq!(quantity_c(&rot), 2.0, epsilon = 1e-15);
        assert_eq!(quantity_c(&[[0.0; 3]; 3]), 0.0);
    }

    #[test]
    fn rfi_examples() {
        assert_eq!(rfi_rate(0.0, 2.0).unwrap(), (1.0, KeyrateStatus::Ok));
        let (r, st) = rfi_rate(0.1, 1.28).unwrap();
        assert_abs_diff_eq!(r, 0.152_415, epsilon = 1e-6);
        assert_eq!(st, KeyrateStatus::Ok);
        let q = 0.159;
        let (r, _) = rfi_rate(q, 2.0 * (1.0 - 2.0 * q).powi(2)).unwrap();
        assert!(r < 1e-3);
        assert_eq!(rfi_rate(0.2, 1.0).unwrap(), (0.0, KeyrateStatus::OutOfDomain));
        assert!(rfi_rate(0.1, 2.1).is_err());
        assert!(rfi_rate(-0.1, 1.0).is_err());
        assert!(rfi_rate(0.0, 2.0 + 1e-10).is_ok());
    }

    #[test]
    fn rfi_decreases_along_depolarizing_line() {
        let mut prev = f64::INFINITY;
        for k in 0..=159 {
            let q = k as f64 / 1000.0;
            let (r, _) = rfi_rate(q, 2.0 * (1.0 - 2.0 * q).powi(2)).unwrap();
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn exact_ideal_constraints_give_full_rate() {
        let p = click_distribution(&ideal_params(), ChannelState::new(1.0, 1.0).unwrap()).unwrap();
        let cs = constraints_from_cells(&p.map(|r| r.map(|v| v * 1e6))).unwrap();
        let cfg = AnalysisConfig { sigma: 0.0, starts: 4, ..Default::default() };
        let r = urfi_rate(&cs, &cfg).unwrap();
        assert_eq!(r.status, KeyrateStatus::Ok);
        assert!(r.rate > 0.99, "{r:?}");
    }

    #[test]
    fn urfi_below_rfi_for_ideal_devices() {
        let ch = ChannelState::new(0.94, 0.9).unwrap();
        let p = click_distribution(&ideal_params(), ch).unwrap();
        let cs = constraints_from_cells(&p.map(|r| r.map(|v| v * 1e6))).unwrap();
        let cfg = AnalysisConfig { sigma: 0.0, starts: 4, ..Default::default() };
        let u = urfi_rate(&cs, &cfg).unwrap();
        let (r, _) = rfi_rate_from_correlators(&cs.c).unwrap();
        assert!(u.rate <= r + 1e-6, "{} vs {}", u.rate, r);
        assert!(u.rate > 0.0);
    }
}
