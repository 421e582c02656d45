use serde::{Deserialize, Serialize};

use crate::SynthError;

/// How the per-coordinate Laplace NLL is reduced when reported.
///
/// Training always minimizes the per-coordinate mean; this only affects the
/// value emitted in metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NllReduction {
    /// Mean over samples and coordinates.
    #[default]
    Mean,
    /// Sum over coordinates, mean over samples.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub d: usize,
    pub n_lab: usize,
    pub n_unl: usize,
    pub n_test: usize,
    pub x_scale: f64,
    pub noise_scale: f64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub keep_frac: f64,
    pub rounds: usize,
    pub rng_seed: u64,
    pub nll_reduction: NllReduction,
    /// Re-select and re-label from the whole unlabeled pool every round
    /// instead of accumulating pseudo-labels.
    pub relabel: bool,
    /// Continue from the previous round's parameters instead of a fresh init.
    pub warm_start: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 50,
            n_lab: 1900,
            n_unl: 4900,
            n_test: 1000,
            x_scale: 1.0,
            noise_scale: 0.6,
            hidden: vec![128, 128],
            lr: 1e-3,
            batch: 128,
            epochs: 50,
            keep_frac: 0.4,
            rounds: 3,
            rng_seed: 42,
            nll_reduction: NllReduction::Mean,
            relabel: false,
            warm_start: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::InvalidConfig(msg.to_string()));
        if self.d == 0 || self.n_lab == 0 || self.n_unl == 0 || self.n_test == 0 {
            return bad("d, n_lab, n_unl and n_test must be at least 1");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return bad("hidden widths must be at least 1");
        }
        if !(self.keep_frac > 0.0 && self.keep_frac <= 1.0) {
            return bad("keep_frac must lie in (0, 1]");
        }
        if !(self.x_scale > 0.0 && self.x_scale.is_finite()) {
            return bad("x_scale must be positive");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be non-negative");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be non-negative");
        }
        Ok(())
    }
}
