//! Spiking neural networks for sequence regression of material responses.

pub mod codec;
pub mod error;
pub mod linalg;
pub mod materials;
pub mod network;
pub mod neuron;
pub mod profiling;
pub mod snapshot;
pub mod training;

pub use error::{Error, ErrorKind, Result};
