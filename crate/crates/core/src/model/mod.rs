//! Trainable embedding head and training loop.
//!
//! The canonical model is a single linear map `W': h x d` applied to rows of
//! the precomputed propagation matrix; a deeper MLP is available behind a
//! config option. Coupled baselines (the models that re-propagate the graph
//! every batch) live in `coupled` and double as exact-equivalence oracles.

mod adam;
mod coupled;
mod loss;
mod sampling;
mod tracking;
mod train;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use coupled::{coupled_jgcf_forward, coupled_lightgcn_forward};
pub use loss::{bpr_loss, infonce_loss, BprGrads};
pub use sampling::sample_negatives;
pub use tracking::{UpdateReport, UpdateTracker};
pub use train::{
    train, EpochRecord, ModelInputs, TrainConfig, TrainOutput, TrainedModel, Trainer, Variant,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(&self, x: &mut Array2<f64>) {
        match self {
            Activation::None => {}
            Activation::Tanh => x.mapv_inplace(f64::tanh),
            Activation::Relu => x.mapv_inplace(|v| v.max(0.0)),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(&self, y: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::None => Array2::ones(y.dim()),
            Activation::Tanh => y.mapv(|v| 1.0 - v * v),
            Activation::Relu => y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

/// MLP parameters. The canonical configuration is one bias-free linear
/// layer, which makes the decoupled model exactly `Z W'`.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub layers: Vec<LinearLayer>,
    pub activation: Activation,
}

impl ModelParams {
    /// Xavier(normal)-initialized chain through the given dimensions,
    /// e.g. `[h, d]` for the canonical single layer.
    pub fn xavier(dims: &[usize], bias: bool, activation: Activation, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let stream = SeedStream::new(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (idx, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = stream.child("xavier", idx as u64);
            let weight = Array2::from_shape_fn((fan_in, fan_out), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * std
            });
            layers.push(LinearLayer {
                weight,
                bias: bias.then(|| Array1::zeros(fan_out)),
            });
        }
        Self { layers, activation }
    }

    /// Canonical single bias-free linear layer `h -> d`.
    pub fn single(h: usize, d: usize, seed: u64) -> Self {
        Self::xavier(&[h, d], false, Activation::None, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.as_ref().map_or(0, |b| b.len()))
            .sum()
    }

    /// Affine(+activation) chain; the activation sits between layers, never
    /// after the last one.
    pub fn forward(&self, input: &ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(input)?.0)
    }

    pub fn forward_cached(&self, input: &ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "mlp_forward".into(),
                expected: format!("{} input columns", self.input_dim()),
                found: format!("{}", input.ncols()),
            });
        }
        let mut activations: Vec<Array2<f64>> = vec![input.to_owned()];
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut out = activations.last().unwrap().dot(&layer.weight);
            if let Some(bias) = &layer.bias {
                out += &bias.view().insert_axis(Axis(0));
            }
            if idx + 1 < self.layers.len() {
                self.activation.apply(&mut out);
            }
            activations.push(out);
        }
        let output = activations.last().unwrap().clone();
        Ok((output, ForwardCache { activations }))
    }

    /// Backpropagates `d_output` through the cached forward pass, returning
    /// per-layer gradients.
    pub fn backward(&self, cache: &ForwardCache, d_output: &ArrayView2<f64>) -> Gradients {
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut delta = d_output.to_owned();
        for idx in (0..self.layers.len()).rev() {
            let input = &cache.activations[idx];
            let d_weight = input.t().dot(&delta);
            let d_bias = self.layers[idx]
                .bias
                .as_ref()
                .map(|_| delta.sum_axis(Axis(0)));
            grads.push(LayerGrad { weight: d_weight, bias: d_bias });
            if idx > 0 {
                let mut d_input = delta.dot(&self.layers[idx].weight.t());
                // The activation was applied to this layer's input.
                let dact = self.activation.derivative_from_output(input);
                d_input *= &dact;
                delta = d_input;
            }
        }
        grads.reverse();
        Gradients { layers: grads }
    }
}

/// Intermediate activations saved by `forward_cached`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.dim()),
                    bias: l.bias.as_ref().map(|b| Array1::zeros(b.len())),
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weight.scaled_add(scale, &src.weight);
            if let (Some(db), Some(sb)) = (dst.bias.as_mut(), src.bias.as_ref()) {
                db.scaled_add(scale, sb);
            }
        }
    }
}

/// Standalone forward pass over arbitrary rows of `Z`.
pub fn mlp_forward(z_rows: &ArrayView2<f64>, params: &ModelParams) -> Result<Array2<f64>> {
    params.forward(z_rows)
}

/// Final embeddings for all nodes, user rows first.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub e: Array2<f64>,
    pub num_users: usize,
}

impl EmbeddingTable {
    pub fn new(e: Array2<f64>, num_users: usize) -> Self {
        assert!(num_users <= e.nrows());
        Self { e, num_users }
    }

    pub fn num_items(&self) -> usize {
        self.e.nrows() - self.num_users
    }

    pub fn dim(&self) -> usize {
        self.e.ncols()
    }

    pub fn users(&self) -> ArrayView2<'_, f64> {
        self.e.slice(ndarray::s![..self.num_users, ..])
    }

    pub fn items(&self) -> ArrayView2<'_, f64> {
        self.e.slice(ndarray::s![self.num_users.., ..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_weight_passes_through() {
        let params = ModelParams {
            layers: vec![LinearLayer { weight: Array2::eye(3), bias: None }],
            activation: Activation::None,
        };
        let z = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(mlp_forward(&z.view(), &params).unwrap(), z);
    }

    #[test]
    fn dot_product_case() {
        let params = ModelParams {
            layers: vec![LinearLayer {
                weight: array![[1.0], [3.0]],
                bias: None,
            }],
            activation: Activation::None,
        };
        let z = array![[1.0, 2.0]];
        assert_eq!(mlp_forward(&z.view(), &params).unwrap(), array![[7.0]]);
    }

    #[test]
    fn xavier_variance() {
        let (h, d) = (500, 200);
        let params = ModelParams::single(h, d, 3);
        let w = &params.layers[0].weight;
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.mapv(|v| v * v).sum() / n - mean * mean;
        let expected = 2.0 / (h + d) as f64;
        assert!(
            (var - expected).abs() / expected < 0.2,
            "variance {var} vs expected {expected}"
        );
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let params = ModelParams::single(4, 2, 0);
        let z = Array2::<f64>::zeros((3, 5));
        assert!(mlp_forward(&z.view(), &params).is_err());
    }

    #[test]
    fn deeper_mlp_backward_matches_finite_differences() {
        let mut params = ModelParams::xavier(&[5, 4, 3], true, Activation::Tanh, 7);
        let z = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 5 + j) as f64 * 0.13).sin());
        // Scalar objective: sum of squares of outputs.
        let objective = |p: &ModelParams| -> f64 {
            let out = p.forward(&z.view()).unwrap();
            0.5 * out.mapv(|v| v * v).sum()
        };
        let (out, cache) = params.forward_cached(&z.view()).unwrap();
        let grads = params.backward(&cache, &out.view());

        let step = 1e-6;
        for layer in 0..params.layers.len() {
            for &(r, c) in &[(0usize, 0usize), (1, 2)] {
                let orig = params.layers[layer].weight[(r, c)];
                params.layers[layer].weight[(r, c)] = orig + step;
                let up = objective(&params);
                params.layers[layer].weight[(r, c)] = orig - step;
                let down = objective(&params);
                params.layers[layer].weight[(r, c)] = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = grads.layers[layer].weight[(r, c)];
                assert!(
                    (numeric - analytic).abs() / numeric.abs().max(1e-8) < 1e-4,
                    "layer {layer} ({r},{c}): numeric {numeric} analytic {analytic}"
                );
            }
        }
    }
}
