//! Early action anticipation toolkit: a frame-weighted anticipation loss
//! family, class-activation masking, a two-stage recurrent classifier with
//! full backpropagation through time, a synthetic sequence benchmark, and a
//! deterministic experiment harness. No external numerics: every forward and
//! backward pass lives in this crate.

pub mod cam;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod image;
pub mod losses;
pub mod lstm;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod sgd;

pub use error::{Error, Result};
pub use matrix::Matrix;
