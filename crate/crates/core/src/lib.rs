//! Robust beamforming for cognitive-radio SWIPT networks.

use openblas_src as _;

pub mod config;
pub mod eh;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod network;
pub mod optimizer;
pub mod robust;
pub mod sdp;

pub use error::{Error, Result};
