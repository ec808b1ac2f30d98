//! Normalizing flows built on monotone linear rational splines.
//!
//! The crate is organised bottom-up:
//!
//! * [`spline`]: exact scalar spline mathematics (closed-form forward,
//!   inverse and derivatives, raw-parameter squashing and analytic gradients);
//! * [`autodiff`]: a small reverse-mode tape over dense `f64` tensors;
//! * [`conditioner`]: residual and masked (MADE) networks producing spline
//!   parameters;
//! * [`flow`]: coupling, autoregressive, LU-mixing and affine layers plus the
//!   [`flow::FlowModel`] with `log_prob` and `sample`;
//! * [`train`]: maximum-likelihood training with Adam, cosine annealing and
//!   gradient clipping;
//! * [`data`]: synthetic generators, image-derived densities and CSV loading;
//! * [`checkpoint`], [`eval`] and [`bench`]: persistence, evaluation and
//!   comparison harnesses used by the command-line tool.

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod conditioner;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod train;
pub mod spline;

pub use error::{Error, Result};
