//! Egocentric gaze prediction toolkit.
//!
//! * [`dataset`]: recordings, sensor alignment, clip sampling, splits and
//!   synthetic data.
//! * [`gaze_maps`]: fixation maps, Gaussian density maps and the center
//!   prior.
//! * [`metrics`]: AUC-Judd, CC, KLD, SIM and NSS.
//! * [`model`]: the fusion network (frozen video backbone, image and
//!   spatio-temporal encoders, decoder) and checkpoints.
//! * [`train`]: training loop, baselines and leaderboards.
//! * [`viz`]: overlays, montages and loss curves.

pub mod container;
pub mod dataset;
mod error;
pub mod gaze_maps;
pub mod metrics;
pub mod model;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
