//! Core of the darkburst denoiser: a small reverse-mode tensor engine, the raw
//! Bayer preprocessing pipeline, the dual single-frame / recurrent multi-frame
//! U-Net, training, synthetic burst generation and image quality metrics.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. Everything here is pure computation; file formats and the
//! command-line interface live in the `darkburst` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod image;
mod kernels;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod raw;
pub mod real;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use image::Image;
pub use model::{ArchitectureConfig, DenoisedSequence, RecurrentState, RfcnParams};
pub use optim::AdamState;
pub use raw::{BayerPattern, PackedBurst, RawFrame};
pub use real::Real;
pub use tensor::Tensor;
