//! Semantic change detection toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] is a small float64 reverse-mode autodiff engine with exactly the
//!   operators the network needs, an SGD optimizer and a finite-difference checker.
//! * [`model`] holds the asymmetric siamese network, its loss, the adaptive
//!   threshold stage, prediction composition, test-time augmentation and training.
//! * [`metrics`] builds change-type confusion matrices and the OA / kappa / IoU / SeK suite.
//! * [`dataset`] reads and writes bitemporal samples in the blackened-label layout and
//!   generates synthetic scenes.
//! * [`cli`] wires everything into the `scd` binary.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
