//! Optimize constrained perturbations of data against differentiable models,
//! and launch the experiments reproducibly.
//!
//! The crate has two halves:
//!
//! * a small numerical toolkit — dense f64 tensors with reverse-mode
//!   autodiff ([`autodiff`]), toy MLP classifiers ([`models`]), additive
//!   perturbation models ([`perturbations`]), ℓp-ball projections and
//!   constrained optimizers ([`optim`]), and the solver loops that tie them
//!   together ([`solvers`]);
//! * a configuration system ([`config`]) — a component registry that
//!   generates hierarchical configs, serializes them to a pinned YAML
//!   format, applies command-line overrides, and launches (possibly swept)
//!   jobs into self-documenting run directories.
//!
//! The `pertopt` binary exposes the `train`, `attack`, `probe`, and `curve`
//! subcommands on top of both halves. See the guide under `book/` for a
//! walkthrough.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod optim;
pub mod perturbations;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
