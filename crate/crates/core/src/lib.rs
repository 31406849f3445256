//! Core library: Manhattan-decay attention kernels, a frequency-domain
//! power-delivery-network simulator, the decoupling-capacitor-placement
//! environment, potential-based reward shaping, REINFORCE training, and a
//! micro-benchmark harness for complexity measurements.
//!
//! All numerics are 64-bit floats. Every public operation is a pure function
//! over immutable inputs and is safe to call concurrently; the few stateful
//! pieces (the autodiff tape, RL training state) are single-threaded values.

pub mod attention;
pub mod autodiff;
pub mod bench;
pub mod dpp;
pub mod kernel;
mod linfit;
pub mod pdn;
pub mod rl;
pub mod shaping;
pub mod verify;

pub use attention::{AttentionBatch, FeatureMapConfig, GateParams, HeadConfig, PreMapNorm};
pub use dpp::{DppInstance, Grid, PlacementState, Trajectory};
pub use kernel::{Coord2D, DecayParams, DecayRates};
pub use pdn::{CapacitorModel, ComplexMatrix, FrequencyBand, MeshPdnSpec};
pub use shaping::{BetaSchedule, PotentialKind, PotentialSpec};
