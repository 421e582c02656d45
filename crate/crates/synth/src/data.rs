use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{SynthConfig, SynthError};

/// Smallest acceptable ratio of extreme singular values of the mixing matrix.
const RANK_TOLERANCE: f64 = 1e-6;
const MAX_MIXING_DRAWS: usize = 10;

/// Samples and the mixing matrix for one lab run. Rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub phi: Array2<f64>,
    pub x_lab: Array2<f64>,
    pub y_lab: Array2<f64>,
    pub y_unl: Array2<f64>,
    pub x_test: Array2<f64>,
    pub y_test: Array2<f64>,
}

/// One draw from Laplace(0, scale) by inverting the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        // u = -0.5 maps to -inf
        if u > -0.5 {
            return -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
        }
    }
}

fn laplace_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    if scale == 0.0 {
        return Array2::zeros((rows, cols));
    }
    Array2::from_shape_simple_fn((rows, cols), || sample_laplace(rng, scale))
}

fn condition_ratio(phi: &Array2<f64>) -> f64 {
    let (r, c) = phi.dim();
    let m = DMatrix::from_fn(r, c, |i, j| phi[[i, j]]);
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if max > 0.0 {
        min / max
    } else {
        0.0
    }
}

/// Draw `(X, Y)` pairs for a mixing matrix: `Y = X Φᵀ + N`.
fn draw_split<R: Rng + ?Sized>(rng: &mut R, phi: &Array2<f64>, n: usize, cfg: &SynthConfig) -> (Array2<f64>, Array2<f64>) {
    let x = laplace_matrix(rng, n, cfg.d, cfg.x_scale);
    let noise = laplace_matrix(rng, n, cfg.d, cfg.noise_scale);
    let y = x.dot(&phi.t()) + noise;
    (x, y)
}

/// Generate a full lab dataset. Entirely determined by `cfg.rng_seed`.
pub fn gen_data(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    let mut phi = None;
    for _ in 0..MAX_MIXING_DRAWS {
        let candidate = Array2::from_shape_simple_fn((cfg.d, cfg.d), || rng.sample::<f64, _>(StandardNormal));
        if condition_ratio(&candidate) >= RANK_TOLERANCE {
            phi = Some(candidate);
            break;
        }
    }
    let phi = phi.ok_or(SynthError::RankFailure { attempts: MAX_MIXING_DRAWS })?;

    let (x_lab, y_lab) = draw_split(&mut rng, &phi, cfg.n_lab, cfg);
    // unlabeled causes are drawn and discarded
    let (_, y_unl) = draw_split(&mut rng, &phi, cfg.n_unl, cfg);
    let (x_test, y_test) = draw_split(&mut rng, &phi, cfg.n_test, cfg);

    Ok(SynthDataset { phi, x_lab, y_lab, y_unl, x_test, y_test })
}
