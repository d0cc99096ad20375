use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rfiqkd_core::estimation::constraints;
use rfiqkd_core::keyrates::{analytic_rates, urfi_rate, AnalysisConfig};
use rfiqkd_core::postprocess::{toeplitz_amplify, BitString};
use rfiqkd_core::simulator::{
    simulate_counts, simulate_counts_multinomial, ChannelConfig, DetectorConfig, DeviceSpec, SourceConfig,
};

fn simulation(c: &mut Criterion) {
    let dev = DeviceSpec::bench().build().unwrap();
    let ch = ChannelConfig::default();
    let det = DetectorConfig::default();
    let src = SourceConfig { n_pulses: 1_000_000, ..Default::default() };
    let mut g = c.benchmark_group("simulate");
    g.bench_function("pulse_1e6", |b| b.iter(|| simulate_counts(&dev, black_box(&src), &ch, &det).unwrap()));
    let src = SourceConfig { n_pulses: 100_000_000, ..Default::default() };
    g.bench_function("multinomial_1e8", |b| {
        b.iter(|| simulate_counts_multinomial(&dev, black_box(&src), &ch, &det).unwrap())
    });
    g.finish();
}

fn keyrates(c: &mut Criterion) {
    let dev = DeviceSpec::bench().build().unwrap();
    let src = SourceConfig { n_pulses: 100_000_000, ..Default::default() };
    let m = simulate_counts_multinomial(&dev, &src, &ChannelConfig::default(), &DetectorConfig::default()).unwrap();
    let cs = constraints(&m).unwrap();
    let mut g = c.benchmark_group("keyrates");
    g.bench_function("analytic", |b| b.iter(|| analytic_rates(black_box(&cs)).unwrap()));
    let cfg = AnalysisConfig { starts: 2, ..Default::default() };
    g.sample_size(10).measurement_time(Duration::from_secs(30));
    g.bench_function("urfi_2_starts", |b| b.iter(|| urfi_rate(black_box(&cs), &cfg).unwrap()));
    g.finish();
}

fn amplification(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bits = BitString::random(100_000, &mut rng);
    c.bench_function("toeplitz_1e5_to_5e4", |b| b.iter(|| toeplitz_amplify(black_box(&bits), 50_000, 11).unwrap()));
}

criterion_group!(benches, simulation, keyrates, amplification);
criterion_main!(benches);
