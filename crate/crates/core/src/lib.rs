//! Part-attentive motion style transfer.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod export;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod run;
pub mod runconfig;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
