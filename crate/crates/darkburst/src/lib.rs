//! File formats, dataset handling and the command-line driver around
//! `darkburst-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod dbraw;
pub mod error;
pub mod kv;
pub mod ppm;

pub use error::FormatError;
