//! Monte Carlo model of the free-space link: faint-pulse emitter with six
//! preparation lasers, a frame rotation on the Poincaré equator, lossy
//! passive-basis receiver, dark counts and the dead-time discard.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, SettingTable};
use crate::error::{domain, Error, Result};
use crate::estimation::CountMatrix;
use crate::optics::OpticsSpec;
use crate::qubit::BlochVector;
use crate::setting::{Basis, Setting, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    /// Pulses per second.
    pub pulse_rate: f64,
    /// Mean photon number per pulse.
    pub mu: f64,
    pub n_pulses: u64,
    pub seed: u64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig { pulse_rate: 250e6, mu: 0.05, n_pulses: 10_000_000, seed: 1 }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_rate > 0.0 && self.pulse_rate.is_finite()) {
            return Err(Error::Config(format!("pulse_rate = {} must be positive", self.pulse_rate)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu = {} must be positive", self.mu)));
        }
        if self.n_pulses == 0 {
            return Err(Error::Config("n_pulses must be at least 1".into()));
        }
        Ok(())
    }

    /// Seconds of operation covered by `n_pulses`.
    pub fn duration(&self) -> f64 {
        self.n_pulses as f64 / self.pulse_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    /// Rotation about Z on the Poincaré sphere, radians.
    pub rotation: f64,
    pub depolarization: f64,
    pub z_flip: bool,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.rotation.is_finite() {
            return Err(Error::Config("rotation must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.depolarization) {
            return Err(Error::Config(format!("depolarization = {} outside [0, 1]", self.depolarization)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub coupling: f64,
    pub filter_transmission: f64,
    /// Dark counts per second per detector.
    pub dark_rate: f64,
    /// Seconds.
    pub dead_time: f64,
    /// Seconds; counts closer than this to the previous count are dropped.
    pub discard_window: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            efficiency: 0.45,
            coupling: 0.8,
            filter_transmission: 0.7,
            dark_rate: 400.0,
            dead_time: 50e-9,
            discard_window: 60e-9,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("efficiency", self.efficiency),
            ("coupling", self.coupling),
            ("filter_transmission", self.filter_transmission),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("dark_rate", self.dark_rate),
            ("dead_time", self.dead_time),
            ("discard_window", self.discard_window),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Probability that a photon leaving the emitter reaches a detector and
    /// is registered.
    pub fn transmission(&self) -> f64 {
        self.coupling * self.filter_transmission * self.efficiency
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    #[default]
    Pulse,
    Multinomial,
}

/// Ground-truth device description.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeviceSpec {
    #[default]
    Ideal,
    Optics { emitter: OpticsSpec, receiver: OpticsSpec },
    Explicit { params: DeviceParams },
}

impl DeviceSpec {
    pub fn bench() -> Self {
        DeviceSpec::Optics { emitter: OpticsSpec::bench_emitter(), receiver: OpticsSpec::bench_receiver() }
    }

    pub fn build(&self) -> Result<DeviceParams> {
        let dev = match self {
            DeviceSpec::Ideal => DeviceParams::ideal(),
            DeviceSpec::Optics { emitter, receiver } => DeviceParams::from_optics(emitter, receiver)?,
            DeviceSpec::Explicit { params } => params.clone(),
        };
        dev.validate_physical()?;
        Ok(dev)
    }
}

/// Everything needed for one simulation run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub source: SourceConfig,
    pub channel: ChannelConfig,
    pub detector: DetectorConfig,
    pub device: DeviceSpec,
    pub mode: SimulationMode,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.channel.validate()?;
        self.detector.validate()?;
        self.device.build().map(|_| ())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimulationConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DeviceParams {
    /// Checks used for simulator ground truth, where directions may be
    /// shortened or tilted by the optics: norms at most one and positive
    /// efficiencies.
    pub fn validate_physical(&self) -> Result<()> {
        for (i, v) in self.prep_dirs.iter().chain(&self.meas_dirs).enumerate() {
            if !v.is_valid() {
                return Err(Error::Config(format!("direction {i} has norm {} > 1", v.norm())));
            }
        }
        for &t in self.prep_eff.iter().chain(&self.meas_eff) {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("efficiency {t} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub time_ns: f64,
    /// Pulse slot index.
    pub slot: u64,
    pub prep: Setting,
    pub det: Setting,
    pub is_dark: bool,
}

/// Rotates the equatorial components, optionally mirrors Z, then shrinks
/// the vector by the depolarization.
pub fn apply_channel(n: BlochVector, ch: &ChannelConfig) -> BlochVector {
    let mut v = n.rotate_z(ch.rotation);
    if ch.z_flip {
        v.z = -v.z;
    }
    v.scale(1.0 - ch.depolarization)
}

/// Channel settings for `n` physical half-waveplate angles evenly covering
/// `[0, 180)` degrees, paired with those angles.
pub fn hwp_sweep(n: usize) -> Result<Vec<(f64, ChannelConfig)>> {
    if n < 2 {
        return Err(domain("sweep angle count", n as f64));
    }
    Ok((0..n)
        .map(|k| {
            let theta = 180.0 * k as f64 / n as f64;
            (theta, ChannelConfig { rotation: 4.0 * theta.to_radians(), depolarization: 0.0, z_flip: true })
        })
        .collect())
}

pub fn hwp_sweep_angles(n: usize) -> Result<Vec<ChannelConfig>> {
    Ok(hwp_sweep(n)?.into_iter().map(|(_, c)| c).collect())
}

/// Probability that a single photon from preparation `a` fires detector
/// `b`, given that it fires one.
pub fn detector_distribution(dev: &DeviceParams, ch: &ChannelConfig) -> SettingTable {
    let mut table = [[0.0; 6]; 6];
    for (a, row) in table.iter_mut().enumerate() {
        let n = apply_channel(dev.prep_dirs[a], ch);
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = (dev.meas_eff[b] * (1.0 + n.dot(dev.meas_dirs[b])) / 6.0).max(0.0);
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
    table
}

fn check_inputs(dev: &DeviceParams, src: &SourceConfig, ch: &ChannelConfig, det: &DetectorConfig) -> Result<()> {
    src.validate()?;
    ch.validate()?;
    det.validate()?;
    dev.validate_physical()
}

/// Mean number of photons registered per pulse of preparation `a`.
fn registered_mean(dev: &DeviceParams, src: &SourceConfig, det: &DetectorConfig, a: usize) -> f64 {
    src.mu * dev.prep_eff[a] * det.transmission()
}

/// Pulse-level simulation. Returns the dead-time filtered events in time
/// order together with their count matrix.
pub fn simulate_counts(
    dev: &DeviceParams,
    src: &SourceConfig,
    ch: &ChannelConfig,
    det: &DetectorConfig,
) -> Result<(Vec<DetectionEvent>, CountMatrix)> {
    let raw = simulate_events(dev, src, ch, det)?;
    let events = deadtime_filter(&raw, det)?;
    let mut m = CountMatrix::zeros();
    for e in &events {
        m.add(e.prep, e.det, 1);
    }
    Ok((events, m))
}

/// Raw time-ordered events before the dead-time discard.
pub fn simulate_events(
    dev: &DeviceParams,
    src: &SourceConfig,
    ch: &ChannelConfig,
    det: &DetectorConfig,
) -> Result<Vec<DetectionEvent>> {
    check_inputs(dev, src, ch, det)?;
    let mut rng = ChaCha8Rng::seed_from_u64(src.seed);
    let dist = detector_distribution(dev, ch);
    let period_ns = 1e9 / src.pulse_rate;
    let means: Vec<f64> = (0..6).map(|a| registered_mean(dev, src, det, a)).collect();
    let p_click: Vec<f64> = means.iter().map(|&m| -(-m).exp_m1()).collect();
    let p_max = p_click.iter().copied().fold(0.0, f64::max);

    let mut events = Vec::new();
    let mut slot_prep: HashMap<u64, usize> = HashMap::new();

    // Pulses with at least one registered photon, found by skipping over
    // the empty ones.
    if p_max > 0.0 {
        let log_miss = (-p_max).ln_1p();
        let mut slot = 0u64;
        loop {
            let gap = geometric_gap(log_miss, &mut rng);
            slot = match slot.checked_add(gap) {
                Some(s) if s < src.n_pulses => s,
                _ => break,
            };
            let a = rng.random_range(0..6);
            slot_prep.insert(slot, a);
            if p_click[a] >= p_max || rng.random::<f64>() * p_max < p_click[a] {
                let photons = zero_truncated_poisson(means[a], &mut rng);
                let mut fired = [false; 6];
                for _ in 0..photons {
                    fired[pick(&dist[a], &mut rng)] = true;
                }
                for (b, _) in fired.iter().enumerate().filter(|(_, &f)| f) {
                    events.push(DetectionEvent {
                        time_ns: slot as f64 * period_ns,
                        slot,
                        prep: Setting::from_index(a),
                        det: Setting::from_index(b),
                        is_dark: false,
                    });
                }
            }
            slot += 1;
            if slot >= src.n_pulses {
                break;
            }
        }
    }

    let dark_mean = det.dark_rate * src.duration();
    if dark_mean > 0.0 {
        let poisson = Poisson::new(dark_mean).map_err(|e| Error::Config(e.to_string()))?;
        for b in 0..6 {
            let n = poisson.sample(&mut rng) as u64;
            for _ in 0..n {
                let slot = rng.random_range(0..src.n_pulses);
                let a = *slot_prep.entry(slot).or_insert_with(|| rng.random_range(0..6));
                events.push(DetectionEvent {
                    time_ns: slot as f64 * period_ns,
                    slot,
                    prep: Setting::from_index(a),
                    det: Setting::from_index(b),
                    is_dark: true,
                });
            }
        }
    }

    events.sort_by(|x, y| {
        (x.slot, x.det.index(), x.is_dark).cmp(&(y.slot, y.det.index(), y.is_dark))
    });
    // two clicks of one detector in one slot register once
    events.dedup_by(|later, earlier| later.slot == earlier.slot && later.det == earlier.det);
    Ok(events)
}

/// Number of failures before the first success, given `ln(1 - p)`.
fn geometric_gap<R: Rng + ?Sized>(log_miss: f64, rng: &mut R) -> u64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    let g = (u.ln() / log_miss).floor();
    if g >= u64::MAX as f64 {
        u64::MAX
    } else {
        g as u64
    }
}

fn pick<R: Rng + ?Sized>(p: &[f64; 6], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(5)
}

/// Poisson(`mean`) conditioned on being at least one, by inversion.
fn zero_truncated_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    let norm = -(-mean).exp_m1();
    let u: f64 = rng.random::<f64>() * norm;
    let mut k = 1u64;
    let mut term = mean * (-mean).exp();
    let mut acc = term;
    while u > acc && k < 1000 {
        k += 1;
        term *= mean / k as f64;
        acc += term;
    }
    k
}

/// Drops every count that falls within the discard window after the count
/// before it, on any detector. Input must be time ordered.
pub fn deadtime_filter(events: &[DetectionEvent], det: &DetectorConfig) -> Result<Vec<DetectionEvent>> {
    if let Some(i) = events.windows(2).position(|w| w[1].time_ns < w[0].time_ns) {
        return Err(Error::Unordered(i + 1));
    }
    let window_ns = det.discard_window * 1e9;
    let mut out = Vec::with_capacity(events.len());
    let mut previous: Option<f64> = None;
    for e in events {
        let close = previous.is_some_and(|t| e.time_ns - t < window_ns);
        if !close {
            out.push(*e);
        }
        previous = Some(e.time_ns);
    }
    Ok(out)
}

/// Expected count-matrix cells for a run, including dark counts and the
/// average loss to the dead-time discard.
pub fn expected_counts(dev: &DeviceParams, src: &SourceConfig, ch: &ChannelConfig, det: &DetectorConfig) -> Result<SettingTable> {
    check_inputs(dev, src, ch, det)?;
    let dist = detector_distribution(dev, ch);
    let n = src.n_pulses as f64;
    let dark_per_cell = det.dark_rate * src.duration() / 6.0;
    let mut cells = [[0.0; 6]; 6];
    for a in 0..6 {
        let signal = n / 6.0 * -(-registered_mean(dev, src, det, a)).exp_m1();
        for b in 0..6 {
            cells[a][b] = signal * dist[a][b] + dark_per_cell;
        }
    }
    let total: f64 = cells.iter().flatten().sum();
    let survival = (-(total / src.duration()) * det.discard_window).exp();
    cells.iter_mut().flatten().for_each(|c| *c *= survival);
    Ok(cells)
}

/// Fast path: draws the count matrix directly. The total is Poisson with
/// the expected mean and the cells are multinomial given the total.
pub fn simulate_counts_multinomial(
    dev: &DeviceParams,
    src: &SourceConfig,
    ch: &ChannelConfig,
    det: &DetectorConfig,
) -> Result<CountMatrix> {
    let cells = expected_counts(dev, src, ch, det)?;
    let mean: f64 = cells.iter().flatten().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(src.seed);
    let total = if mean > 0.0 {
        Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as u64
    } else {
        0
    };
    Ok(sample_multinomial(&cells, total, &mut rng))
}

/// Multinomial draw of `n` counts over cells with weights `w` (normalized
/// internally), by sequential binomial splitting.
pub fn sample_multinomial<R: Rng + ?Sized>(w: &SettingTable, n: u64, rng: &mut R) -> CountMatrix {
    let mut m = CountMatrix::zeros();
    let mut left = n;
    let mut mass: f64 = w.iter().flatten().sum();
    for a in 0..6 {
        for b in 0..6 {
            if left == 0 || mass <= 0.0 {
                return m;
            }
            let p = (w[a][b] / mass).clamp(0.0, 1.0);
            let k = if p >= 1.0 {
                left
            } else if p <= 0.0 {
                0
            } else {
                Binomial::new(left, p).expect("valid binomial").sample(rng)
            };
            m.add(Setting::from_index(a), Setting::from_index(b), k);
            left -= k;
            mass -= w[a][b];
        }
    }
    m
}

/// Runs the configured simulation. Events are only produced in pulse mode.
pub fn run(cfg: &SimulationConfig) -> Result<(Option<Vec<DetectionEvent>>, CountMatrix)> {
    cfg.validate()?;
    let dev = cfg.device.build()?;
    match cfg.mode {
        SimulationMode::Pulse => {
            let (events, m) = simulate_counts(&dev, &cfg.source, &cfg.channel, &cfg.detector)?;
            Ok((Some(events), m))
        }
        SimulationMode::Multinomial => {
            Ok((None, simulate_counts_multinomial(&dev, &cfg.source, &cfg.channel, &cfg.detector)?))
        }
    }
}

pub const EVENT_HEADER: [&str; 6] = ["time_ns", "prep_basis", "prep_sign", "det_basis", "det_sign", "is_dark"];

pub fn write_events<W: Write>(events: &[DetectionEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_HEADER)?;
    for e in events {
        w.write_record([
            format!("{}", e.time_ns),
            e.prep.basis.to_string(),
            e.prep.sign.to_string(),
            e.det.basis.to_string(),
            e.det.sign.to_string(),
            (e.is_dark as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an event log. Slots are reconstructed from `period_ns`.
pub fn read_events<R: Read>(input: R, period_ns: f64) -> Result<Vec<DetectionEvent>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != EVENT_HEADER {
        return Err(Error::Config(format!("unexpected event header {header:?}")));
    }
    let bad = |what: &str| Error::Config(format!("bad event field: {what}"));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let time_ns: f64 = rec[0].parse().map_err(|_| bad(&rec[0]))?;
        let setting = |b: &str, s: &str| -> Result<Setting> {
            Ok(Setting::new(Basis::parse(b).ok_or_else(|| bad(b))?, Sign::parse(s).ok_or_else(|| bad(s))?))
        };
        out.push(DetectionEvent {
            time_ns,
            slot: (time_ns / period_ns).round() as u64,
            prep: setting(&rec[1], &rec[2])?,
            det: setting(&rec[3], &rec[4])?,
            is_dark: match &rec[5] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(bad(other)),
            },
        });
    }
    Ok(out)
}
