//! Twin-network training for multi-output regression with Barlow Twins
//! redundancy reduction and restrained uncertainty loss weighting.

pub mod augment;
pub mod autodiff;
pub mod checks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod optim;
pub mod seeding;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
