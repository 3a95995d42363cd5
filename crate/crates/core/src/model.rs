//! The frame classifier: a stack of 3x3 convolutions with ReLU and optional
//! 2x2 max pooling, then ReLU dense layers (the first few followed by
//! dropout), then a single sigmoid unit giving `p(informative)`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::{LossSpec, ProbabilityPair};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, grad_check, GradCheckReport, Gradients, LayerParams, Mode, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Side length of the square single-channel input.
    pub input_side: usize,
    pub conv_channels: Vec<usize>,
    /// One entry per conv layer.
    pub pool_after: Vec<bool>,
    /// Dense widths. A single-unit output head is appended unless the list
    /// already ends in a width of 1, in which case that layer is the head.
    pub dense_sizes: Vec<usize>,
    pub dropout_rate: f64,
    /// Number of leading dense layers followed by dropout.
    pub dropout_after_dense: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_side: 128,
            conv_channels: vec![128, 64, 32, 16, 8],
            pool_after: vec![true; 5],
            dense_sizes: vec![128, 64, 32, 16],
            dropout_rate: 0.25,
            dropout_after_dense: 3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Sets `conv_channels` and pools after every one of them.
    pub fn with_conv_channels(mut self, channels: Vec<usize>) -> Self {
        self.pool_after = vec![true; channels.len()];
        self.conv_channels = channels;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn has_explicit_head(&self) -> bool {
        self.dense_sizes.last() == Some(&1)
    }

    /// Dense layers followed by ReLU (all but the output head).
    fn hidden_dense(&self) -> &[usize] {
        if self.has_explicit_head() {
            &self.dense_sizes[..self.dense_sizes.len() - 1]
        } else {
            &self.dense_sizes
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 {
            return Err(Error::config("input_side must be positive"));
        }
        if self.conv_channels.is_empty() {
            return Err(Error::config("conv_channels must not be empty"));
        }
        if self.dense_sizes.is_empty() {
            return Err(Error::config("dense_sizes must not be empty"));
        }
        if self.conv_channels.contains(&0) || self.dense_sizes.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if self.pool_after.len() != self.conv_channels.len() {
            return Err(Error::config(format!(
                "pool_after has {} entries for {} conv layers",
                self.pool_after.len(),
                self.conv_channels.len()
            )));
        }
        let pools = self.pool_after.iter().filter(|&&p| p).count() as u32;
        let divisor = 2usize
            .checked_pow(pools)
            .ok_or_else(|| Error::config("too many pooling stages"))?;
        if !self.input_side.is_multiple_of(divisor) {
            return Err(Error::config(format!(
                "input_side {} is not divisible by 2^{pools}",
                self.input_side
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.dropout_after_dense > self.hidden_dense().len() {
            return Err(Error::config(format!(
                "dropout_after_dense {} exceeds the {} hidden dense layers",
                self.dropout_after_dense,
                self.hidden_dense().len()
            )));
        }
        Ok(())
    }

    /// Side length of the feature maps after the last conv stage.
    pub fn final_side(&self) -> usize {
        let pools = self.pool_after.iter().filter(|&&p| p).count() as u32;
        self.input_side >> pools
    }

    /// Length of the flattened conv output fed to the first dense layer.
    pub fn flattened_len(&self) -> usize {
        let side = self.final_side();
        side * side * self.conv_channels.last().copied().unwrap_or(0)
    }

    fn layer_plan(&self) -> Vec<(LayerKind, Vec<usize>)> {
        let mut plan = Vec::new();
        let mut c_in = 1;
        for (&c_out, &pool) in self.conv_channels.iter().zip(&self.pool_after) {
            plan.push((LayerKind::Conv { pool }, vec![c_out, c_in, 3, 3]));
            c_in = c_out;
        }
        let mut n_in = self.flattened_len();
        for (i, &n_out) in self.hidden_dense().iter().enumerate() {
            plan.push((
                LayerKind::Dense {
                    relu: true,
                    dropout: i < self.dropout_after_dense,
                },
                vec![n_out, n_in],
            ));
            n_in = n_out;
        }
        plan.push((
            LayerKind::Dense {
                relu: false,
                dropout: false,
            },
            vec![1, n_in],
        ));
        plan
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Conv, ReLU, then 2x2 max pool if `pool`.
    Conv { pool: bool },
    /// Affine map, optionally followed by ReLU and dropout.
    Dense { relu: bool, dropout: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub params: LayerParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    layers: Vec<Layer>,
}

impl Model {
    /// Glorot-uniform weights from `config.seed`, zero biases.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .layer_plan()
            .into_iter()
            .map(|(kind, shape)| {
                let (fan_in, fan_out) = match kind {
                    LayerKind::Conv { .. } => (shape[1] * 9, shape[0] * 9),
                    LayerKind::Dense { .. } => (shape[1], shape[0]),
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n: usize = shape.iter().product();
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
                let outputs = shape[0];
                let params = LayerParams::new(Tensor::new(shape, w)?, Tensor::zeros(vec![outputs])?)?;
                Ok(Layer { kind, params })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { config, layers })
    }

    /// Reassembles a model from stored parameters, checking every shape
    /// against what `config` would build.
    pub fn from_params(config: ModelConfig, params: Vec<LayerParams>) -> Result<Self> {
        config.validate()?;
        let plan = config.layer_plan();
        if plan.len() != params.len() {
            return Err(Error::shape(format!(
                "config describes {} layers, got {}",
                plan.len(),
                params.len()
            )));
        }
        let layers = plan
            .into_iter()
            .zip(params)
            .map(|((kind, shape), params)| {
                if params.weights.shape() != shape.as_slice() {
                    return Err(Error::shape(format!(
                        "expected weights {shape:?}, got {:?}",
                        params.weights.shape()
                    )));
                }
                Ok(Layer { kind, params })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { config, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.param_count()).sum()
    }

    /// Parameter tensors in tape order: weights then bias of each layer.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.params.weights, &l.params.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.params.weights, &mut l.params.bias])
    }

    pub fn layer_params(&self) -> Vec<LayerParams> {
        self.layers.iter().map(|l| l.params.clone()).collect()
    }

    pub fn tape(&self) -> Tape<'_> {
        Tape::new(self.params())
    }

    /// Records the forward pass of one `(1, S, S)` image on `tape`, which must
    /// have been created by [`Model::tape`] (or bind the same tensors in the
    /// same order). Returns the sigmoid output node.
    pub fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape<'_>, image: &Tensor, mode: Mode, rng: &mut R) -> Result<Var> {
        let s = self.config.input_side;
        if image.shape() != [1, s, s] {
            return Err(Error::shape(format!(
                "model expects a (1, {s}, {s}) image, got {:?}",
                image.shape()
            )));
        }
        if tape.num_params() != 2 * self.layers.len() {
            return Err(Error::shape("tape is not bound to this model's parameters"));
        }
        let mut x = tape.input(image.clone());
        let mut flattened = false;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = (Var::Param(2 * i), Var::Param(2 * i + 1));
            match layer.kind {
                LayerKind::Conv { pool } => {
                    x = tape.conv2d(x, w, b)?;
                    x = tape.relu(x);
                    if pool {
                        x = tape.maxpool2(x)?;
                    }
                }
                LayerKind::Dense { relu, dropout } => {
                    if !flattened {
                        x = tape.flatten(x)?;
                        flattened = true;
                    }
                    x = tape.dense(x, w, b)?;
                    if relu {
                        x = tape.relu(x);
                    }
                    if dropout {
                        x = tape.dropout(x, self.config.dropout_rate, mode, rng)?;
                    }
                }
            }
        }
        Ok(tape.sigmoid(x))
    }

    /// `(1 - s, s)` where `s` is the sigmoid output, dropout disabled.
    pub fn predict(&self, image: &Tensor) -> Result<ProbabilityPair> {
        let mut tape = self.tape();
        // Eval mode never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, image, Mode::Eval, &mut rng)?;
        let s = tape.value(out).data()[0];
        ProbabilityPair::from_informative(s)
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Adds tape gradients into each parameter's gradient slot.
    pub fn accumulate_grads(&mut self, grads: &Gradients) -> Result<()> {
        if grads.params.len() != 2 * self.layers.len() {
            return Err(Error::shape(format!(
                "{} gradient buffers for {} parameter tensors",
                grads.params.len(),
                2 * self.layers.len()
            )));
        }
        for (p, g) in self.params_mut().zip(&grads.params) {
            p.accumulate_grad(g)?;
        }
        Ok(())
    }

    /// Finite-difference check of the `spec` loss gradient on one labelled
    /// image. Dropout stays active, with the same masks (drawn from `seed`)
    /// in every evaluation.
    pub fn grad_check(
        &self,
        image: &Tensor,
        target: ProbabilityPair,
        spec: &LossSpec,
        n_samples: usize,
        step: f64,
        seed: u64,
    ) -> Result<GradCheckReport> {
        let mut params: Vec<Tensor> = self.params().into_iter().cloned().collect();
        grad_check(
            &mut params,
            |tape| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let out = self.forward(tape, image, Mode::Train, &mut rng)?;
                tape.cross_entropy(out, target, spec, 1.0)
            },
            n_samples,
            step,
            seed,
        )
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.layer_params())
    }

    pub fn load_checkpoint(config: ModelConfig, path: &Path) -> Result<Self> {
        Model::from_params(config, checkpoint::load(path)?)
    }
}
