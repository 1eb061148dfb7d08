//! Detection of localized, persistent air pollution hotspots from mobile
//! sensing trajectories.
//!
//! The detection pipeline runs in two steps. Local spikes are found on each
//! car-day trajectory with a variable-size sliding window ([`spike`]); spikes
//! are then aggregated onto a uniform city grid and clustered with a
//! sample-weighted mean shift ([`hotspot`]). Around that core sit the
//! evaluation harness ([`eval`]), cross-domain source features
//! ([`features`]), hotspot inference with domain-shift tooling
//! ([`inference`]), a synthetic campaign generator with planted sources
//! ([`synth`]) and the command line front end ([`cli`]).

pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod grid;
pub mod hotspot;
pub mod inference;
pub mod ingest;
pub mod spike;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use grid::{GridIndex, Region};
