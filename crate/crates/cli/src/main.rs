use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use rfiqkd_core::estimation::{constraints, split_counts, ConstraintSet, CountMatrix};
use rfiqkd_core::keyrates::{analytic_rates, rfi_rate_from_correlators, urfi_rate, AnalysisConfig, KeyrateResult, KeyrateStatus};
use rfiqkd_core::postprocess::{pns_reduction, PnsConfig, PnsEstimate};
use rfiqkd_core::simulator::{self, hwp_sweep, DetectionEvent, SimulationConfig};
use rfiqkd_core::{Basis, Error, Setting};

#[derive(Parser)]
#[command(name = "rfiqkd", version, about = "Reference-frame-independent QKD simulation and key-rate analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a link and write its count matrix.
    Simulate {
        /// Simulation config (JSON); defaults are used for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Count matrix output (JSON).
        #[arg(long, short)]
        output: PathBuf,
        /// Event log output (CSV, pulse mode only).
        #[arg(long)]
        events: Option<PathBuf>,
        /// Raw key output (JSON); key-basis events are split off with
        /// probability --key-fraction and left out of the count matrix.
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        key_fraction: f64,
        #[arg(long, env = "RFIQKD_SEED")]
        seed: Option<u64>,
    },
    /// Compute key rates from a count matrix (JSON or CSV).
    Analyze {
        matrix: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        sigma: f64,
        #[arg(long, value_enum, default_value_t = Protocol::All)]
        protocol: Protocol,
        #[arg(long, default_value_t = 16)]
        starts: usize,
        /// Error-correction inefficiency factor.
        #[arg(long, default_value_t = 1.0)]
        ec_efficiency: f64,
        #[arg(long, env = "RFIQKD_SEED")]
        seed: Option<u64>,
        /// Report path; stdout if absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Simulate and analyze a half-waveplate rotation sweep.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 24)]
        angles: usize,
        #[arg(long, default_value_t = 3.0)]
        sigma: f64,
        #[arg(long, default_value_t = 16)]
        starts: usize,
        /// Rate table (CSV).
        #[arg(long, short)]
        output: PathBuf,
        /// Per-angle normalized count matrices (JSON).
        #[arg(long)]
        matrices: Option<PathBuf>,
        #[arg(long, env = "RFIQKD_SEED")]
        seed: Option<u64>,
    },
    /// Photon-number-splitting key reduction.
    Pns {
        /// Pulse rate in Hz.
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long = "eta-a")]
        eta_a: f64,
        #[arg(long = "eta-i")]
        eta_i: f64,
        /// Fraction of registered photons entering the raw key.
        #[arg(long)]
        fraction: f64,
        /// Raw key bits per second.
        #[arg(long)]
        rawbits: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Bb84,
    Rfi,
    Urfi,
    All,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure { code: 3, message: e.to_string() }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        let code = if e.is_io_error() { 3 } else { 2 };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<SimulationConfig, Failure> {
    let mut cfg = match path {
        Some(p) => serde_json::from_str::<SimulationConfig>(&read_text(p)?)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => SimulationConfig::default(),
    };
    if let Some(s) = seed {
        cfg.source.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| usage(e.to_string()))
}

/// Undo the key-basis inversion of a mirrored channel on a single event.
fn relabel_event(mut e: DetectionEvent) -> DetectionEvent {
    if e.det.basis == Basis::Z {
        e.det = Setting::new(Basis::Z, e.det.sign.flip());
    }
    e
}

fn simulate(
    config: Option<&Path>,
    output: &Path,
    events_path: Option<&Path>,
    key_path: Option<&Path>,
    key_fraction: f64,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let cfg = load_config(config, seed)?;
    if (events_path.is_some() || key_path.is_some()) && cfg.mode != simulator::SimulationMode::Pulse {
        return Err(usage("--events and --key need pulse mode"));
    }
    let (events, mut matrix) = simulator::run(&cfg)?;
    let flip = cfg.channel.z_flip;
    if flip {
        matrix = matrix.relabel_receiver_z();
    }
    let events: Option<Vec<DetectionEvent>> =
        events.map(|ev| if flip { ev.into_iter().map(relabel_event).collect() } else { ev });
    if let (Some(path), Some(ev)) = (key_path, events.as_ref()) {
        let (key, rest) = split_counts(ev, key_fraction, cfg.source.seed ^ 0x5eed)?;
        write_text(path, &key.to_json()?)?;
        matrix = rest;
    }
    if let (Some(path), Some(ev)) = (events_path, events.as_ref()) {
        let file = fs::File::create(path).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })?;
        simulator::write_events(ev, io::BufWriter::new(file))?;
    }
    write_text(output, &matrix.to_json()?)?;
    eprintln!("wrote {} counts to {}", matrix.total(), output.display());
    Ok(())
}

#[derive(Serialize)]
struct Bb84Report {
    xx: f64,
    xy: f64,
    yx: f64,
    yy: f64,
}

#[derive(Serialize)]
struct RfiReport {
    rate: f64,
    status: KeyrateStatus,
    qber: f64,
    #[serde(rename = "C")]
    c: f64,
}

#[derive(Serialize)]
struct AnalysisReport {
    total_counts: u64,
    constraints: ConstraintSet,
    #[serde(skip_serializing_if = "Option::is_none")]
    bb84: Option<Bb84Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rfi: Option<RfiReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    urfi: Option<KeyrateResult>,
}

fn analysis_config(sigma: f64, starts: usize, ec_efficiency: f64, seed: Option<u64>) -> AnalysisConfig {
    AnalysisConfig { sigma, starts, ec_efficiency, seed: seed.unwrap_or(0), ..Default::default() }
}

fn analyze(m: &CountMatrix, protocol: Protocol, cfg: &AnalysisConfig) -> Result<AnalysisReport, Failure> {
    cfg.validate()?;
    let cs = constraints(m)?;
    let wants = |p: Protocol| protocol == p || protocol == Protocol::All;
    let rates = analytic_rates(&cs)?;
    let bb84 = wants(Protocol::Bb84).then(|| {
        let [xx, xy, yx, yy] = rates.bb84;
        Bb84Report { xx, xy, yx, yy }
    });
    let rfi = wants(Protocol::Rfi).then(|| RfiReport { rate: rates.rfi, status: rates.rfi_status, qber: rates.qber, c: rates.c });
    let urfi = if wants(Protocol::Urfi) { Some(urfi_rate(&cs, cfg)?) } else { None };
    Ok(AnalysisReport { total_counts: m.total(), constraints: cs, bb84, rfi, urfi })
}

const SWEEP_HEADER: [&str; 11] = [
    "theta_deg",
    "r_bb84_xx",
    "r_bb84_xy",
    "r_bb84_yx",
    "r_bb84_yy",
    "r_rfi",
    "r_urfi",
    "r_urfi_sigma",
    "qber",
    "C",
    "status",
];

#[derive(Serialize)]
struct SweepMatrix {
    theta_deg: f64,
    total: u64,
    normalized: [[f64; 6]; 6],
}

struct SweepRow {
    theta_deg: f64,
    values: [f64; 9],
    status: String,
    matrix: Option<CountMatrix>,
}

fn sweep_point(cfg: &SimulationConfig, theta: f64, analysis: &AnalysisConfig) -> SweepRow {
    let run = || -> Result<(CountMatrix, [f64; 9], String), Error> {
        let (_, m) = simulator::run(cfg)?;
        let m = if cfg.channel.z_flip { m.relabel_receiver_z() } else { m };
        let cs = constraints(&m)?;
        let rates = analytic_rates(&cs)?;
        let (rfi, _) = rfi_rate_from_correlators(&cs.c)?;
        let plain = urfi_rate(&cs, &AnalysisConfig { sigma: 0.0, ..analysis.clone() })?;
        let widened = urfi_rate(&cs, &AnalysisConfig { extra_anchors: vec![plain.minimizer.clone()], ..analysis.clone() })?;
        let [xx, xy, yx, yy] = rates.bb84;
        let status = match (rates.rfi_status, widened.status) {
            (_, KeyrateStatus::Infeasible) => "urfi_infeasible",
            (KeyrateStatus::OutOfDomain, _) => "rfi_out_of_domain",
            _ => "ok",
        };
        Ok((m, [xx, xy, yx, yy, rfi, plain.rate, widened.rate, rates.qber, rates.c], status.to_string()))
    };
    match run() {
        Ok((m, values, status)) => SweepRow { theta_deg: theta, values, status, matrix: Some(m) },
        Err(e) => SweepRow { theta_deg: theta, values: [f64::NAN; 9], status: format!("error: {e}"), matrix: None },
    }
}

fn sweep(
    config: Option<&Path>,
    angles: usize,
    analysis: &AnalysisConfig,
    output: &Path,
    matrices: Option<&Path>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let base = load_config(config, seed)?;
    analysis.validate()?;
    let points = hwp_sweep(angles)?;
    let rows: Vec<SweepRow> = points
        .par_iter()
        .enumerate()
        .map(|(k, &(theta, ch))| {
            let mut cfg = base.clone();
            cfg.channel.rotation = ch.rotation;
            cfg.channel.z_flip = ch.z_flip;
            cfg.source.seed = base.source.seed.wrapping_add(k as u64);
            sweep_point(&cfg, theta, analysis)
        })
        .collect();

    let file = fs::File::create(output).map_err(|e| Failure { code: 3, message: format!("{}: {e}", output.display()) })?;
    let mut w = csv::Writer::from_writer(io::BufWriter::new(file));
    w.write_record(SWEEP_HEADER)?;
    for r in &rows {
        let mut rec = vec![format!("{}", r.theta_deg)];
        rec.extend(r.values.iter().map(|v| format!("{v}")));
        rec.push(r.status.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;

    if let Some(path) = matrices {
        let dump: Vec<SweepMatrix> = rows
            .iter()
            .filter_map(|r| {
                r.matrix.map(|m| SweepMatrix { theta_deg: r.theta_deg, total: m.total(), normalized: m.normalized() })
            })
            .collect();
        write_text(path, &to_json(&dump)?)?;
    }
    let failed = rows.iter().filter(|r| r.status.starts_with("error")).count();
    eprintln!("wrote {} rows to {} ({failed} failed)", rows.len(), output.display());
    Ok(())
}

#[derive(Serialize)]
struct PnsReport {
    config: PnsConfig,
    #[serde(flatten)]
    estimate: PnsEstimate,
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, output, events, key, key_fraction, seed } => {
            simulate(config.as_deref(), &output, events.as_deref(), key.as_deref(), key_fraction, seed)
        }
        Command::Analyze { matrix, sigma, protocol, starts, ec_efficiency, seed, output } => {
            let m = CountMatrix::read(&matrix)?;
            let report = analyze(&m, protocol, &analysis_config(sigma, starts, ec_efficiency, seed))?;
            let text = to_json(&report)?;
            match output {
                Some(path) => write_text(&path, &text),
                None => {
                    let mut out = io::stdout().lock();
                    writeln!(out, "{text}")?;
                    Ok(())
                }
            }
        }
        Command::Sweep { config, angles, sigma, starts, output, matrices, seed } => {
            let analysis = analysis_config(sigma, starts, 1.0, seed);
            sweep(config.as_deref(), angles, &analysis, &output, matrices.as_deref(), seed)
        }
        Command::Pns { rate, mu, eta_a, eta_i, fraction, rawbits } => {
            let config = PnsConfig {
                pulse_rate: rate,
                mu,
                eta_accessible: eta_a,
                eta_inaccessible: eta_i,
                key_fraction: fraction,
                raw_key_bits: rawbits,
            };
            let estimate = pns_reduction(&config)?;
            println!("{}", to_json(&PnsReport { config, estimate })?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
