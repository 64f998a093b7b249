//! Domain-generalization toolkit for semantic segmentation: randomized
//! CIELAB color augmentation (RICA), GAN-based feature augmentation (GBFA)
//! with a feature-space CycleGAN, and the desk-scale experiment harness
//! around them.

pub mod analysis;
pub mod cli;
pub mod colorlab;
pub mod error;
pub mod featuregan;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod segtoy;
pub mod tensor;

pub use error::{Error, Result};
