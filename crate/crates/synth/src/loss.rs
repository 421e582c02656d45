use ndarray::{Array2, ArrayView2, Zip};

use crate::SynthError;

fn check_shapes(x: &ArrayView2<f64>, mu: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<(), SynthError> {
    if x.dim() != mu.dim() || x.dim() != b.dim() {
        return Err(SynthError::ShapeMismatch { expected: x.ncols(), got: mu.ncols().min(b.ncols()) });
    }
    Ok(())
}

/// Laplace negative log-likelihood, `log(2b) + |x − μ| / b`, averaged over
/// samples and coordinates.
pub fn laplace_nll(x: ArrayView2<f64>, mu: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64, SynthError> {
    check_shapes(&x, &mu, &b)?;
    if b.iter().any(|&v| !(v > 0.0)) {
        return Err(SynthError::NonPositiveScale);
    }
    let count = x.len();
    if count == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    Zip::from(&x).and(&mu).and(&b).for_each(|&x, &m, &b| {
        total += (2.0 * b).ln() + (x - m).abs() / b;
    });
    Ok(total / count as f64)
}

/// Gradients of [`laplace_nll`] with respect to `μ` and `b`.
///
/// The subgradient of `|·|` at zero is taken as zero.
pub fn laplace_nll_grad(
    x: ArrayView2<f64>,
    mu: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>), SynthError> {
    check_shapes(&x, &mu, &b)?;
    let scale = 1.0 / x.len().max(1) as f64;
    let mut grad_mu = Array2::zeros(x.raw_dim());
    let mut grad_b = Array2::zeros(x.raw_dim());
    Zip::from(&mut grad_mu)
        .and(&mut grad_b)
        .and(&x)
        .and(&mu)
        .and(&b)
        .for_each(|gm, gb, &x, &m, &b| {
            let r = x - m;
            let sign = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            *gm = -sign / b * scale;
            *gb = (1.0 / b - r.abs() / (b * b)) * scale;
        });
    Ok((grad_mu, grad_b))
}
