//! Desk-scale laboratory for hyperbolic self-paced twin-network training
//! on synthetic skeleton sequences.
//!
//! The pieces, bottom to top: Poincaré-ball [`geometry`], the training
//! [`objectives`] and their curriculum, a tape-based [`diff`] engine with a
//! finite-difference [`gradcheck`] harness, the twin [`model`], synthetic
//! [`data`] generation and augmentation, the [`trainer`] with its probes and
//! ablations, uncertainty [`analytics`], and the [`cli`].

pub mod data;
pub mod diff;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod model;
pub mod analytics;
pub mod cli;
pub mod objectives;
pub mod streams;
pub mod trainer;

pub use error::{Error, Result};
