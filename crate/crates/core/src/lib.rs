//! Simulation and evaluation toolkit for geometry-aided mmWave beam
//! alignment between a roadside unit and a vehicle.
//!
//! The pipeline runs scene generation ([`scene`]), feature extraction
//! ([`features`]), the geometric channel and beam codebooks ([`channel`]),
//! a small training engine ([`nn`]) and the Top-B evaluation protocol
//! ([`metrics`]); [`pipeline`] wires them together.

pub mod channel;
pub mod cli;
pub mod error;
pub mod features;
pub mod format;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scene;

pub use error::{Error, Result};

/// Derives an independent 64-bit seed from `base` and a path of stream
/// identifiers (splitmix64 finalizer applied per component).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}
