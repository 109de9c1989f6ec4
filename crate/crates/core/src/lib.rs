//! Left-ventricle segmentation and quantification on a small tape-based
//! autodiff engine.

pub mod augment;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod nets;
pub mod phantom;
pub mod quantify;
pub mod real;
pub mod tensor;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{BackwardRule, Tape, Tensor, Var};
