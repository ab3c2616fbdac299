//! Fully connected ReLU network with a scalar output and exact reverse-mode
//! gradients.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HIDDEN_WIDTH: usize = 128;
pub const HIDDEN_LAYERS: usize = 4;

/// Affine layer `y = x·W + b`, weights stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn he_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / fan_in as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-limit..limit));
        Self {
            weights,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// `input → 128 → 128 → 128 → 128 → 1`, ReLU on hidden layers.
///
/// The same type holds gradients, which share the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    /// Bumped on every optimizer update.
    pub version: u64,
}

/// Activations kept by [`Mlp::forward_cached`] for the backward pass.
pub struct ForwardCache {
    input: Array2<f64>,
    /// Post-ReLU activations of each hidden layer.
    hidden: Vec<Array2<f64>>,
}

impl Mlp {
    /// He-uniform weights, zero biases, deterministic per seed.
    pub fn new(input_dim: usize, seed: u64) -> Self {
        assert!(input_dim >= 1, "input dimension must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(HIDDEN_LAYERS + 1);
        let mut fan_in = input_dim;
        for _ in 0..HIDDEN_LAYERS {
            layers.push(Dense::he_uniform(fan_in, HIDDEN_WIDTH, &mut rng));
            fan_in = HIDDEN_WIDTH;
        }
        layers.push(Dense::he_uniform(fan_in, 1, &mut rng));
        Self { layers, version: 0 }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
            version: 0,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    /// `self += alpha · other`.
    pub fn scaled_add(&mut self, alpha: f64, other: &Mlp) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(alpha, &b.weights);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights *= alpha;
            l.bias *= alpha;
        }
    }

    pub fn norm(&self) -> f64 {
        self.params().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn affine(layer: &Dense, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&layer.weights);
        z += &layer.bias;
        z
    }

    /// One output per input row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            h = Self::affine(layer, &h.view());
            h.mapv_inplace(|v| v.max(0.0));
        }
        Self::affine(&self.layers[last], &h.view()).column(0).to_owned()
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array1<f64>, ForwardCache) {
        let input = x.to_owned();
        let last = self.layers.len() - 1;
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(last);
        for (i, layer) in self.layers[..last].iter().enumerate() {
            let prev = if i == 0 { input.view() } else { hidden[i - 1].view() };
            let mut h = Self::affine(layer, &prev);
            h.mapv_inplace(|v| v.max(0.0));
            hidden.push(h);
        }
        let top = if last == 0 { input.view() } else { hidden[last - 1].view() };
        let out = Self::affine(&self.layers[last], &top).column(0).to_owned();
        (out, ForwardCache { input, hidden })
    }

    /// Gradient of `Σ_rows d_out[row] · output[row]` with respect to the
    /// parameters.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView1<f64>) -> Mlp {
        let last = self.layers.len() - 1;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut dz = d_out.insert_axis(Axis(1)).to_owned();
        for idx in (0..=last).rev() {
            let prev = if idx == 0 {
                cache.input.view()
            } else {
                cache.hidden[idx - 1].view()
            };
            let dw = prev.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            if idx > 0 {
                let mut dh = dz.dot(&self.layers[idx].weights.t());
                Zip::from(&mut dh)
                    .and(&cache.hidden[idx - 1])
                    .for_each(|g, &a| {
                        if a <= 0.0 {
                            *g = 0.0;
                        }
                    });
                dz = dh;
            }
            grads.push(Dense {
                weights: dw,
                bias: db,
            });
        }
        grads.reverse();
        Mlp {
            layers: grads,
            version: 0,
        }
    }

    /// ReLU on/off pattern for a batch; used to detect kinks in
    /// finite-difference checks.
    pub fn activation_pattern(&self, x: ArrayView2<f64>) -> Vec<bool> {
        let (_, cache) = self.forward_cached(x);
        cache
            .hidden
            .iter()
            .flat_map(|h| h.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect()
    }
}

/// View of `len` rows starting at `start`.
pub(crate) fn rows(x: &Array2<f64>, start: usize, len: usize) -> ArrayView2<'_, f64> {
    x.slice(s![start..start + len, ..])
}
