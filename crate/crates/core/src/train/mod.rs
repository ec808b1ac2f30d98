//! Maximum-likelihood training: Adam, cosine learning-rate annealing,
//! global-norm gradient clipping and best-validation model selection.

mod adam;
mod config;
mod fit;
mod schedule;

pub use adam::AdamState;
pub use config::TrainConfig;
pub use fit::{fit, HistoryRow, RngState, TrainReport};
pub use schedule::{clip_gradients, cosine_lr, global_norm};
