//! Motion-related compensation (MRC) of vascular respiratory motion in
//! X-ray fluoroscopy.
//!
//! While contrast agent is visible, sparse corners are tracked on both the
//! vessels and the surrounding tissue. A per-corner correlation model learns
//! how vascular motion follows non-vascular motion; once the contrast washes
//! out, the model predicts the invisible vascular motion from the tissue
//! alone and the reference vessel mask is warped onto the live frame.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, timing and the
//! command line live in the `mrc-roadmap` companion crate.
//!
//! Pipeline, bottom-up:
//!
//! - [`imaging`]: frames, masks, sequences; [`phantom`] synthesizes
//!   sequences with known motion.
//! - [`features`]: Shi-Tomasi corners split by the vessel mask.
//! - [`tracking`]: pyramidal Lucas-Kanade from the reference frame.
//! - [`mrc`]: Pearson-gated least-squares model and plain prediction.
//! - [`gof`]: Gaussian 3-sigma outlier filtering of per-pair candidates.
//! - [`gpr`]: Gaussian process alternative to the linear regressor.
//! - [`warp`]: sparse flow to dense mask warping.
//! - [`eval`]: overlap ratio and mean centerline distance.
//! - [`codec`]: versioned binary model formats.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod codec;
pub mod error;
pub mod eval;
pub mod features;
pub mod geom;
pub mod gof;
pub mod gpr;
pub mod imaging;
mod math;
pub mod morph;
pub mod mrc;
pub mod phantom;
pub mod tracking;
pub mod warp;

pub use error::{Error, Result};
pub use features::{CornerParams, CornerSet};
pub use geom::Vec2;
pub use gof::RefinedFlow;
pub use gpr::{GprEnsemble, GprPairModel, GprSettings, Kernel};
pub use imaging::{FluoroSequence, Frame, MaskKind, VesselMask};
pub use mrc::MrcModel;
pub use phantom::{PhantomConfig, PhantomDataset};
pub use tracking::{FlowSet, LkParams};
pub use warp::{SparseField, WarpParams};
