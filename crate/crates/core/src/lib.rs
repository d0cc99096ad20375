//! Simulation and security analysis for reference-frame-independent
//! quantum key distribution with uncalibrated devices.
//!
//! The pipeline runs from detector counts ([`CountMatrix`]) through
//! correlator statistics ([`ConstraintSet`]) to secret key fractions
//! ([`keyrates`]). The [`simulator`] produces counts for a free-space
//! polarization link and [`postprocess`] covers the classical steps after
//! sifting.

pub mod density;
pub mod device;
pub mod entropy;
pub mod error;
pub mod estimation;
pub mod keyrates;
pub mod optics;
pub mod optimizer;
pub mod postprocess;
pub mod qubit;
pub mod setting;
pub mod simulator;

pub use density::{relative_entropy, usable_entropy, ChannelState, TwoQubitDensity};
pub use device::{click_distribution, DeviceParams, SettingTable};
pub use entropy::binary_entropy;
pub use error::{Error, Result};
pub use estimation::{constraints, correlator, ConstraintSet, CountMatrix};
pub use keyrates::{
    bb84_rate, bb84_rate_any_pair, quantity_c, rfi_rate, urfi_rate, AnalysisConfig, BasisPair, KeyrateResult,
    KeyrateStatus,
};
pub use optics::OpticsSpec;
pub use optimizer::{minimize, ConstrainedProblem, MinimizationResult, MinimizerConfig};
pub use postprocess::{pns_reduction, qber, throughput, toeplitz_amplify, BitString, PnsConfig, RawKey};
pub use qubit::BlochVector;
pub use setting::{Basis, Setting, Sign};
pub use simulator::{ChannelConfig, DetectionEvent, DetectorConfig, SimulationConfig, SourceConfig};
