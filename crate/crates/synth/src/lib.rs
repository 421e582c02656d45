//! Synthetic self-training lab.
//!
//! Data follow an additive noise model `Y = X Φᵀ + N` with Laplace-distributed
//! causes and noise. A small ReLU network maps an observation `Y` to a
//! per-coordinate Laplace posterior `(μ, b)` over `X`, trained by minimizing
//! the Laplace negative log-likelihood with Adam. Self-training then
//! pseudo-labels the most confident unlabeled observations (smallest mean
//! predicted scale) and retrains on the augmented set.

mod adam;
mod config;
mod data;
mod error;
mod gradcheck;
mod lab;
mod loss;
mod net;
mod train;

pub use adam::Adam;
pub use config::{NllReduction, SynthConfig};
pub use data::{gen_data, sample_laplace, SynthDataset};
pub use error::SynthError;
pub use gradcheck::grad_check;
pub use lab::{confidence_select, evaluate, self_refine, SynthMetrics};
pub use loss::{laplace_nll, laplace_nll_grad};
pub use net::{positivity, Dense, Forward, NetParams, SCALE_FLOOR};
pub use train::{train, TrainParams};
