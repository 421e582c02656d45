use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{gen_data, laplace_nll, train, NetParams, NllReduction, SynthConfig, SynthError, TrainParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthMetrics {
    pub nll: f64,
    pub mse: f64,
    pub r2: f64,
}

/// Indices of the `⌊keep_frac·n⌋` observations with the smallest mean
/// predicted scale, ties broken by lower index, in ascending-confidence order.
pub fn confidence_select(params: &NetParams, y_unl: ArrayView2<f64>, keep_frac: f64) -> Result<Vec<usize>, SynthError> {
    if !(keep_frac > 0.0 && keep_frac <= 1.0) {
        return Err(SynthError::InvalidConfig("keep_frac must lie in (0, 1]".into()));
    }
    let n = y_unl.nrows();
    let keep = (keep_frac * n as f64).floor() as usize;
    if keep == 0 {
        return Ok(Vec::new());
    }
    let out = params.forward(y_unl)?;
    let spread = out.b.mean_axis(Axis(1)).expect("d >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| spread[a].total_cmp(&spread[b]).then(a.cmp(&b)));
    order.truncate(keep);
    Ok(order)
}

/// Test-set NLL (per-coordinate mean), MSE and uniformly averaged R².
pub fn evaluate(params: &NetParams, x_test: ArrayView2<f64>, y_test: ArrayView2<f64>) -> Result<SynthMetrics, SynthError> {
    if x_test.nrows() == 0 {
        return Err(SynthError::EmptyTestSet);
    }
    let out = params.forward(y_test)?;
    let nll = laplace_nll(x_test, out.mu.view(), out.b.view())?;
    let resid = &x_test - &out.mu;
    let mse = resid.mapv(|r| r * r).mean().unwrap_or(0.0);

    let means = x_test.mean_axis(Axis(0)).expect("non-empty");
    let mut r2_sum = 0.0;
    for j in 0..x_test.ncols() {
        let col = x_test.column(j);
        let ss_res: f64 = resid.column(j).iter().map(|r| r * r).sum();
        let ss_tot: f64 = col.iter().map(|v| (v - means[j]).powi(2)).sum();
        r2_sum += if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res > 0.0 {
            0.0
        } else {
            1.0
        };
    }
    let r2 = r2_sum / x_test.ncols() as f64;
    Ok(SynthMetrics { nll, mse, r2 })
}

/// Baseline training followed by `cfg.rounds` rounds of confidence-gated
/// pseudo-labeling. Returns the baseline metrics first, then one entry per
/// round.
pub fn self_refine(cfg: &SynthConfig) -> Result<Vec<SynthMetrics>, SynthError> {
    let ds = gen_data(cfg)?;
    // Every round draws its own initialization and shuffle stream. Reusing
    // the baseline's init lets the student collapse onto its teacher.
    let round_seed = |round: usize| {
        cfg.rng_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(2 * round as u64 + 1)
    };
    let hparams = |round: usize| TrainParams {
        lr: cfg.lr,
        batch: cfg.batch,
        epochs: cfg.epochs,
        seed: round_seed(round) ^ 0x5851_F42D_4C95_7F2D,
    };
    let fresh = |round: usize| NetParams::init(cfg.d, &cfg.hidden, round_seed(round));

    let report = |params: &NetParams| -> Result<SynthMetrics, SynthError> {
        let mut m = evaluate(params, ds.x_test.view(), ds.y_test.view())?;
        if cfg.nll_reduction == NllReduction::Sum {
            m.nll *= cfg.d as f64;
        }
        Ok(m)
    };

    let mut params = train(fresh(0), ds.x_lab.view(), ds.y_lab.view(), &hparams(0))?;
    let mut metrics = vec![report(&params)?];
    log::info!("baseline: {:?}", metrics[0]);

    // unlabeled rows not yet pseudo-labeled, in original order
    let mut pool: Vec<usize> = (0..ds.y_unl.nrows()).collect();
    let mut pseudo_x = Array2::zeros((0, cfg.d));
    let mut pseudo_y = Array2::zeros((0, cfg.d));

    for round in 1..=cfg.rounds {
        let candidates = if cfg.relabel { (0..ds.y_unl.nrows()).collect() } else { pool.clone() };
        let y_cand = ds.y_unl.select(Axis(0), &candidates);
        let picked = confidence_select(&params, y_cand.view(), cfg.keep_frac)?;
        let y_new = y_cand.select(Axis(0), &picked);
        let x_new = params.forward(y_new.view())?.mu;

        if cfg.relabel {
            pseudo_x = x_new;
            pseudo_y = y_new;
        } else {
            pseudo_x = concatenate![Axis(0), pseudo_x, x_new];
            pseudo_y = concatenate![Axis(0), pseudo_y, y_new];
            let mut taken = vec![false; candidates.len()];
            for &p in &picked {
                taken[p] = true;
            }
            pool = candidates.into_iter().zip(taken).filter(|(_, t)| !t).map(|(i, _)| i).collect();
        }

        let x_train = concatenate![Axis(0), ds.x_lab, pseudo_x];
        let y_train = concatenate![Axis(0), ds.y_lab, pseudo_y];
        let start = if cfg.warm_start { params } else { fresh(round) };
        params = train(start, x_train.view(), y_train.view(), &hparams(round))?;
        let m = report(&params)?;
        log::info!("round {round}: {} training rows, {m:?}", x_train.nrows());
        metrics.push(m);
    }
    Ok(metrics)
}
