//! Environment-aware NLoS target localization from a channel angle-delay map.
//!
//! The crate is organized by pipeline stage:
//!
//! - [`geometry`]: scenes, single-bounce path synthesis, composite round trips.
//! - [`cadm`]: the learned location → angle/delay distribution map.
//! - [`sensing`]: noisy observations, the map-based likelihood, localizers.
//! - [`crlb`]: Fisher information and Cramér-Rao bounds.
//! - [`harness`]: scenario generation, Monte-Carlo sweeps, CSV and plots.

pub mod cadm;
pub mod crlb;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod sensing;

pub use error::{Error, Result};
