//! Probabilistic multi-horizon forecasting with a shallow non-autoregressive
//! decoder trained by online distillation from two deep peer decoders.
//!
//! [`train::Trainer`] runs the three-phase training loop, [`metrics`] holds
//! the evaluation and diagnostics, and [`config::RunConfig`] ties a run
//! together from one flat TOML file.

pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Matrix;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data.md")]
mod book_data {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
mod book_model {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/losses.md")]
mod book_losses {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}
