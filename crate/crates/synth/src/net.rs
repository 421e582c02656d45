use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::SynthError;

/// Added to the positivity map so predicted scales never collapse to zero.
pub const SCALE_FLOOR: f64 = 1e-3;

/// Softplus, `log(1 + e^u)`, evaluated without overflow.
pub fn positivity(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer; `weight` is `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }
}

/// ReLU network mapping a `d`-dimensional observation to `(μ, raw scale)`.
///
/// The last layer has `2d` outputs: the first `d` are `μ`, the rest are
/// passed through [`positivity`] plus [`SCALE_FLOOR`] to obtain `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub layers: Vec<Dense>,
    d: usize,
}

/// Network outputs for a batch, both `(batch, d)`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub mu: Array2<f64>,
    pub b: Array2<f64>,
}

/// Activations retained for the backward pass.
pub(crate) struct Trace {
    /// Input to every layer; `inputs[0]` is the batch itself.
    pub(crate) inputs: Vec<Array2<f64>>,
    pub(crate) output: Array2<f64>,
}

impl NetParams {
    fn widths(d: usize, hidden: &[usize]) -> Vec<usize> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(d);
        widths.extend_from_slice(hidden);
        widths.push(2 * d);
        widths
    }

    /// All weights and biases zero.
    pub fn zeros(d: usize, hidden: &[usize]) -> Self {
        let widths = Self::widths(d, hidden);
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self { layers, d }
    }

    /// Uniform initialization in `±1/√fan_in` for weights and biases alike.
    pub fn init(d: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(d, hidden);
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.weight.nrows() as f64).sqrt();
            layer.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        params
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Visit every scalar parameter in a fixed order.
    pub(crate) fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for layer in &mut self.layers {
            layer.weight.iter_mut().for_each(&mut f);
            layer.bias.iter_mut().for_each(&mut f);
        }
    }

    pub(crate) fn values(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    fn check_input(&self, batch: &ArrayView2<f64>) -> Result<(), SynthError> {
        if batch.ncols() != self.d {
            return Err(SynthError::ShapeMismatch { expected: self.d, got: batch.ncols() });
        }
        Ok(())
    }

    pub(crate) fn trace(&self, batch: ArrayView2<f64>) -> Trace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(current);
            current = z;
        }
        Trace { inputs, output: current }
    }

    /// Split raw network output into `(μ, b)`.
    pub(crate) fn heads(&self, output: &Array2<f64>) -> Forward {
        let d = self.d;
        let mu = output.slice(s![.., ..d]).to_owned();
        let b = output.slice(s![.., d..]).mapv(|u| positivity(u) + SCALE_FLOOR);
        Forward { mu, b }
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Forward, SynthError> {
        self.check_input(&batch)?;
        let trace = self.trace(batch);
        Ok(self.heads(&trace.output))
    }

    /// Chain `d loss / d μ` and `d loss / d b` back through the network.
    pub(crate) fn backward(&self, trace: &Trace, grad_mu: &Array2<f64>, grad_b: &Array2<f64>) -> NetParams {
        let d = self.d;
        let n = trace.output.nrows();
        let mut delta = Array2::zeros((n, 2 * d));
        delta.slice_mut(s![.., ..d]).assign(grad_mu);
        Zip::from(delta.slice_mut(s![.., d..]))
            .and(grad_b)
            .and(trace.output.slice(s![.., d..]))
            .for_each(|g, &gb, &raw| *g = gb * sigmoid(raw));

        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            let weight = input.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = delta.dot(&layer.weight.t());
                // inputs to hidden layers are ReLU outputs
                Zip::from(&mut prev).and(input).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = prev;
            }
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        NetParams { layers: grads, d }
    }
}
