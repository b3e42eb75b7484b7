//! Robustness lab for a LeNet digit classifier: how far do ordinary
//! image-acquisition artifacts (translation, noise, blur, crop/resize,
//! binarization) and five-crop fusion go toward neutralizing FGS/FGV
//! adversarial examples?
//!
//! The crate is self-contained: a small reverse-mode autodiff engine drives
//! both training and the input gradients the attacks need, datasets move
//! through MNIST IDX files or a native container, and the evaluation grid
//! reproduces the accuracy tables with a provenance header on every report.

#![forbid(unsafe_code)]

pub mod attack;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
