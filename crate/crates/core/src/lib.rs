//! Any-to-one voice conversion on self-supervised speech features, with an
//! adversarial disentanglement objective and an objective evaluation suite.

pub mod autodiff;
pub mod config;
pub mod discriminators;
pub mod dsp;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod eval;
pub mod ssl_frontend;
pub mod tensorio;
pub mod training;

pub use error::{Error, Result};
