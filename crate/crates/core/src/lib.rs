//! Learned mesh dynamics with point-cloud grounding.
//!
//! This crate bundles everything needed to reproduce the pipeline end to end
//! on a single desktop core: a synthetic 2D soft-body ground truth
//! ([`truthsim`]), graph encoding of system states with optional point-cloud
//! extension ([`graph`]), a message-passing network on a minimal f64 autodiff
//! tape ([`model`], [`tensor`]), next-step training with imputed point clouds
//! ([`training`]), and rollout evaluation with grounding schedules and
//! geometric metrics ([`evaluation`], [`geometry`]).

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod graph;
pub mod model;
pub mod seeds;
pub mod tensor;
pub mod training;
pub mod truthsim;
pub mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;
