//! Over-and-under complete deraining: a two-branch convolutional network trained from
//! scratch on a small reverse-mode autodiff engine, with synthetic rain generation,
//! training and evaluation utilities and a receptive-field calculator.

pub mod checkpoint;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rain;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
