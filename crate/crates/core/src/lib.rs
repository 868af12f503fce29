//! Simulation and design tools for over-the-air federated edge learning in which
//! the devices' uplink transmissions double as radar probes for localizing a
//! target.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: placement, array responses, Rayleigh channels
//! - [`signaling`]: pulses, precoders, standardization, transmit symbols
//! - [`ota`]: server-side aggregation and its error
//! - [`sensing`]: echoes, matched filtering, sufficient statistics, ML losses
//! - [`crb`]: Fisher information and Cramér-Rao bounds
//! - [`moop`]: the epsilon-constraint beamformer design
//! - [`feel`]: the joint learning/localization protocol and its baselines
//! - [`config`], [`experiments`], [`export`], [`ssl`]: scenarios, orchestration and output

// `!(x > 0.0)` rejects NaN along with non-positive values; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod crb;
pub mod error;
pub mod experiments;
pub mod export;
pub mod feel;
pub mod geometry;
pub mod linalg;
pub mod moop;
pub mod ota;
pub mod seeds;
pub mod sensing;
pub mod signaling;
pub mod ssl;

pub use error::{Error, Result};
pub use geometry::{ArrayModel, ChannelSet, DeviceGeometry, GridResolution, Position3, TargetRegion};
pub use signaling::{AggregationWeights, PrecoderSet, PulseBook, PulseFamily};
