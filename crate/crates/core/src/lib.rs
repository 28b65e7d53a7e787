//! Radar SLAM toolkit: angle-delay pre-processing, FFT-based relative pose
//! estimation, Kalman tracking, occupancy mapping, channel spread statistics
//! and a scene simulator that provides ground truth.

pub mod channel;
pub mod config;
pub mod error;
pub mod ingest;
pub mod io;
pub mod map;
pub mod pipeline;
pub mod pose;
pub mod preprocess;
pub mod sim;
pub mod track;

pub use error::{Error, Result};
