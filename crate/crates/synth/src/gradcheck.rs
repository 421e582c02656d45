use ndarray::{Array2, ArrayView2, Zip};

use crate::net::Forward;
use crate::NetParams;

const STEP: f64 = 1e-5;
/// Residuals closer than this to the `|·|` kink are left out of the check.
const KINK_MARGIN: f64 = 1e-4;

/// Heads plus the on/off pattern of every hidden unit.
fn probe_forward(params: &NetParams, y: &ArrayView2<f64>) -> (Forward, Vec<bool>) {
    let trace = params.trace(y.view());
    let active = trace.inputs[1..].iter().flat_map(|a| a.iter().map(|&v| v > 0.0)).collect();
    (params.heads(&trace.output), active)
}

/// `nll(up) − nll(down)` accumulated term by term, so the O(1) loss values
/// cancel before summation instead of after.
fn masked_nll_diff(up: &Forward, down: &Forward, x: &ArrayView2<f64>, keep: &Array2<bool>) -> f64 {
    let mut total = 0.0;
    Zip::from(x)
        .and(&up.mu)
        .and(&up.b)
        .and(&down.mu)
        .and(&down.b)
        .and(keep)
        .for_each(|&x, &mu, &bu, &md, &bd, &k| {
            if k {
                // kept residuals keep their sign across the probe, so the change in |x − μ|
                // is exactly ±(μ_down − μ_up) and carries none of the residual's rounding
                let d_abs = (x - md).signum() * (md - mu);
                total += ((bu - bd) / bd).ln_1p() + d_abs / bu + (x - md).abs() * (bd - bu) / (bu * bd);
            }
        });
    total / x.len() as f64
}

fn nudge(params: &mut NetParams, index: usize, delta: f64) {
    let mut k = 0;
    params.for_each_mut(|v| {
        if k == index {
            *v += delta;
        }
        k += 1;
    });
}

/// Compare backpropagated gradients of the mean Laplace NLL with central
/// differences on every parameter.
///
/// Returns `max |g_a − g_f| / max(|g_a|, |g_f|, 1e-8)` over all parameters.
///
/// Two kinks are left out: residuals within `1e-4` of the `|·|` kink, and
/// parameters whose `±h` probes switch any hidden ReLU on or off.
///
/// Probe losses are differenced term by term; subtracting the two summed
/// losses instead leaves about `1e-11` of rounding noise, enough to fail
/// parameters whose gradient is near `1e-7`.
pub fn grad_check(params: &NetParams, x: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let trace = params.trace(y.view());
    let out = params.heads(&trace.output);
    let keep = Zip::from(&x).and(&out.mu).map_collect(|&x, &m| (x - m).abs() >= KINK_MARGIN);

    let scale = 1.0 / x.len() as f64;
    let mut grad_mu = Array2::zeros(x.raw_dim());
    let mut grad_b = Array2::zeros(x.raw_dim());
    Zip::from(&mut grad_mu)
        .and(&mut grad_b)
        .and(&x)
        .and(&out.mu)
        .and(&out.b)
        .and(&keep)
        .for_each(|gm, gb, &x, &m, &b, &k| {
            if k {
                let r = x - m;
                *gm = -r.signum() / b * scale;
                *gb = (1.0 / b - r.abs() / (b * b)) * scale;
            }
        });
    let analytic = params.backward(&trace, &grad_mu, &grad_b).values();
    compare(params, &x, &y, &keep, &analytic)
}

fn compare(params: &NetParams, x: &ArrayView2<f64>, y: &ArrayView2<f64>, keep: &Array2<bool>, analytic: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (i, &ga) in analytic.iter().enumerate() {
        nudge(&mut probe, i, STEP);
        let (up, up_active) = probe_forward(&probe, y);
        nudge(&mut probe, i, -2.0 * STEP);
        let (down, down_active) = probe_forward(&probe, y);
        nudge(&mut probe, i, STEP);
        if up_active != down_active {
            // a ReLU switches inside [θ−h, θ+h]; the difference quotient is not a derivative there
            continue;
        }
        let gf = masked_nll_diff(&up, &down, x, keep) / (2.0 * STEP);
        let err = (ga - gf).abs() / ga.abs().max(gf.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}
