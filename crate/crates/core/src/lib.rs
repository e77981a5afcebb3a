//! Curriculum-learning lab for crowd counting by density estimation.
//!
//! The crate implements the full experiment stack: datasets of head-annotated
//! crowd images with Gaussian density-map targets (`dataset`), difficulty
//! scoring / pacing functions / the batch scheduler (`curriculum`), toy
//! density regressors with hand-written backprop (`models`), the training
//! loop with reduce-on-plateau decay (`training`), counting metrics
//! (`evaluation`), and the experiment matrix runner with table and
//! convergence-curve rendering (`runner`).

pub mod curriculum;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod runner;
pub mod training;
pub mod util;

pub use error::{Error, Result};
