use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{laplace_nll, laplace_nll_grad, Adam, NetParams, SynthError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

/// Minimize the mean Laplace NLL of `x` given `y` with minibatch Adam.
///
/// `x` holds targets (causes), `y` the network inputs (observations).
pub fn train(mut params: NetParams, x: ArrayView2<f64>, y: ArrayView2<f64>, hp: &TrainParams) -> Result<NetParams, SynthError> {
    let n = x.nrows();
    if n == 0 {
        return Err(SynthError::EmptyTrainingSet);
    }
    if y.nrows() != n {
        return Err(SynthError::ShapeMismatch { expected: n, got: y.nrows() });
    }
    for cols in [x.ncols(), y.ncols()] {
        if cols != params.dim() {
            return Err(SynthError::ShapeMismatch { expected: params.dim(), got: cols });
        }
    }
    let batch = hp.batch.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut opt = Adam::new(&params, hp.lr);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let trace = params.trace(yb.view());
            let heads = params.heads(&trace.output);
            let loss = laplace_nll(xb.view(), heads.mu.view(), heads.b.view())?;
            if !loss.is_finite() {
                return Err(SynthError::Divergence { epoch, loss });
            }
            let (grad_mu, grad_b) = laplace_nll_grad(xb.view(), heads.mu.view(), heads.b.view())?;
            let grads = params.backward(&trace, &grad_mu, &grad_b);
            opt.step(&mut params, &grads);
        }
        log::trace!("epoch {epoch} done");
    }
    if !params.is_finite() {
        return Err(SynthError::Divergence { epoch: hp.epochs, loss: f64::NAN });
    }
    Ok(params)
}
