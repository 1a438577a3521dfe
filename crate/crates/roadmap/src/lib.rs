//! File formats, configuration, timing and orchestration around
//! [`mrc_core`].
//!
//! - [`io`]: PGM/PNG frames and masks, sequence manifests, overlays, phantom
//!   datasets on disk.
//! - [`config`]: `key=value` run configuration with documented defaults.
//! - [`pipeline`]: corner selection, parallel tracking, training and
//!   per-frame prediction for either regressor.
//! - [`timing`]: wall-clock learn and per-frame predict measurements.
//! - [`ablation`]: sparse/dense by GOF on/off comparison table.

pub mod ablation;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod timing;

pub use error::{AppError, AppResult};
