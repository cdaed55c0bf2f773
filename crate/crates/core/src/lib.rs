//! One-class classification by learning the signed distance function to the
//! support of a distribution.
//!
//! A 1-Lipschitz network ([`lipnet::LipNet`]) is fitted with the hinge
//! Kantorovich-Rubinstein loss ([`hkr`]) against negatives generated by a
//! Newton-Raphson sampler ([`sampler`]) that pushes uniform draws toward the
//! current decision level set. The learned score is an approximate signed
//! distance: positive inside the support, negative outside, with gradient
//! norm at most one everywhere. That bound is what makes the robustness
//! certificates in [`metrics`] sound and lets [`geometry`] extract implicit
//! surfaces from point clouds.

pub mod attacks;
pub mod baseline;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod geometry;
pub mod hkr;
pub mod lipnet;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
pub use lipnet::LipNet;
pub use model::{AnyNet, Scorer, Trainable};
