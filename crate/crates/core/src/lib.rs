//! Sleep apnea screening from respiratory audio.
//!
//! Audio records are resampled to 125 Hz, cut into 30 s chunks, labeled from
//! event annotations and turned into 128x128 log-mel images ([`ingest`],
//! [`dsp`]). A residual CNN ([`model`]) is trained with class balancing
//! ([`training`]) and scored with recall-first metrics ([`eval`]). [`synth`]
//! generates labeled records for end-to-end checks.

pub mod cache;
pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod training;
pub mod weights;

pub use error::{Error, Result};
