//! Unsupervised MRI motion-artifact correction with disentangled
//! content/artifact representations, plus the k-space motion simulator and
//! image-quality metrics used to train and evaluate it.

pub mod cli;
pub mod correction;
pub mod data;
pub mod error;
pub mod io_util;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod phantom;
pub mod report;
pub mod train;

pub use error::{Error, Result};
