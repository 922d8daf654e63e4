//! The localization network: 7 dilated 1D conv layers (ReLU, same padding),
//! global average pooling, a 64-unit nonlinear dense layer, and a linear
//! 2-unit head predicting (x, y) in meters.
//!
//! Two sizes ship as defaults: S (about 0.31M parameters) and XL (about
//! 1.17M). Dilations double per layer, so the receptive field covers the
//! whole 200-sample window several times over.

use crate::error::{Error, Result};
use crate::features::ChannelStats;
use crate::numkit::{self, count_params, same_padding, Tape, Tensor};
use crate::seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const LAYERS: usize = 7;
pub const KERNELS: [usize; LAYERS] = [5, 8, 10, 12, 15, 18, 20];
pub const DILATIONS: [usize; LAYERS] = [1, 2, 4, 8, 16, 32, 64];
pub const CHANNELS_S: [usize; LAYERS] = [32, 32, 32, 32, 64, 64, 128];
pub const CHANNELS_XL: [usize; LAYERS] = [32, 32, 64, 64, 128, 128, 256];
pub const HIDDEN: usize = 64;
pub const OUTPUT: usize = 2;

/// Parameter budget bands: 360k +-20% for S, 1M +-25% for XL.
pub const BUDGET_S: (usize, usize) = (288_000, 432_000);
pub const BUDGET_XL: (usize, usize) = (750_000, 1_250_000);

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    S,
    Xl,
}

impl Variant {
    pub fn final_channels(self) -> usize {
        match self {
            Variant::S => 128,
            Variant::Xl => 256,
        }
    }

    pub fn budget(self) -> (usize, usize) {
        match self {
            Variant::S => BUDGET_S,
            Variant::Xl => BUDGET_XL,
        }
    }

    pub fn default_channels(self) -> [usize; LAYERS] {
        match self {
            Variant::S => CHANNELS_S,
            Variant::Xl => CHANNELS_XL,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::S => "s",
            Variant::Xl => "xl",
        })
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MagNetConfig {
    pub variant: Variant,
    pub input_channels: usize,
    pub kernels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub channels: Vec<usize>,
    pub hidden: usize,
    pub output: usize,
    /// Left-only padding instead of symmetric; the regression target is the
    /// window's last sample, so a strictly causal view is a legitimate choice.
    pub causal: bool,
}

impl MagNetConfig {
    pub fn new(variant: Variant, input_channels: usize) -> MagNetConfig {
        MagNetConfig {
            variant,
            input_channels,
            kernels: KERNELS.to_vec(),
            dilations: DILATIONS.to_vec(),
            channels: variant.default_channels().to_vec(),
            hidden: HIDDEN,
            output: OUTPUT,
            causal: false,
        }
    }

    pub fn small(input_channels: usize) -> MagNetConfig {
        MagNetConfig::new(Variant::S, input_channels)
    }

    pub fn xl(input_channels: usize) -> MagNetConfig {
        MagNetConfig::new(Variant::Xl, input_channels)
    }

    /// Checks every structural constraint and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let lens_ok = self.kernels.len() == LAYERS
            && self.dilations.len() == LAYERS
            && self.channels.len() == LAYERS;
        if !lens_ok {
            problems.push(format!(
                "layer count must be 7 (got kernels: {}, dilations: {}, channels: {})",
                self.kernels.len(),
                self.dilations.len(),
                self.channels.len()
            ));
        }
        if lens_ok {
            if self.dilations != DILATIONS {
                problems.push(format!(
                    "dilations must be exactly {:?}, got {:?}",
                    DILATIONS, self.dilations
                ));
            }
            if self.kernels.windows(2).any(|p| p[1] < p[0]) {
                problems.push(format!("kernel sizes must be non-decreasing, got {:?}", self.kernels));
            }
            if self.kernels.iter().any(|&k| !(5..=20).contains(&k)) {
                problems.push(format!("kernel sizes must lie in [5, 20], got {:?}", self.kernels));
            }
            if self.channels.windows(2).any(|p| p[1] < p[0]) {
                problems.push(format!("channels must be non-decreasing, got {:?}", self.channels));
            }
            let want_last = self.variant.final_channels();
            if self.channels.last() != Some(&want_last) {
                problems.push(format!(
                    "channels must end at {} for variant {}, got {:?}",
                    want_last, self.variant, self.channels
                ));
            }
        }
        if !(self.input_channels == 2 || self.input_channels == 3) {
            problems.push(format!("input channels must be 2 or 3, got {}", self.input_channels));
        }
        if self.hidden != HIDDEN {
            problems.push(format!("hidden dense size must be {}, got {}", HIDDEN, self.hidden));
        }
        if self.output != OUTPUT {
            problems.push(format!("output size must be {}, got {}", OUTPUT, self.output));
        }
        if lens_ok {
            let count = closed_form_params(self);
            let (lo, hi) = self.variant.budget();
            if !(lo..=hi).contains(&count) {
                problems.push(format!(
                    "parameter count {} outside the {} budget band [{}, {}]",
                    count, self.variant, lo, hi
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Closed-form parameter count: sum of k_i * c_{i-1} * c_i + c_i over conv
/// layers plus both dense layers. Requires only consistent vector lengths.
pub fn closed_form_params(config: &MagNetConfig) -> usize {
    let mut total = 0usize;
    let mut c_in = config.input_channels;
    for (k, c_out) in config.kernels.iter().zip(&config.channels) {
        total += k * c_in * c_out + c_out;
        c_in = *c_out;
    }
    total += c_in * config.hidden + config.hidden;
    total += config.hidden * config.output + config.output;
    total
}

/// Counts parameters and enforces the variant's budget band.
pub fn validate_budget(config: &MagNetConfig) -> Result<usize> {
    if config.kernels.len() != config.channels.len() {
        return Err(Error::Config(format!(
            "cannot count parameters: {} kernels vs {} channel entries",
            config.kernels.len(),
            config.channels.len()
        )));
    }
    let count = closed_form_params(config);
    let (lo, hi) = config.variant.budget();
    if !(lo..=hi).contains(&count) {
        return Err(Error::Config(format!(
            "parameter count {} outside the {} budget band [{}, {}]",
            count, config.variant, lo, hi
        )));
    }
    Ok(count)
}

/// R = 1 + sum_i d_i * (k_i - 1). For constant k this reduces to the familiar
/// 1 + (k-1)(2^n - 1). Pure formula; works on unvalidated configs.
pub fn receptive_field(config: &MagNetConfig) -> usize {
    1 + config
        .dilations
        .iter()
        .zip(&config.kernels)
        .map(|(d, k)| d * (k - 1))
        .sum::<usize>()
}

/// Parameter names in storage order: conv1..conv7 weight/bias, then the
/// dense head as fc1/fc2.
pub fn param_names(config: &MagNetConfig) -> Vec<String> {
    let mut names = Vec::with_capacity(2 * config.kernels.len() + 4);
    for i in 1..=config.kernels.len() {
        names.push(format!("conv{}.weight", i));
        names.push(format!("conv{}.bias", i));
    }
    names.push("fc1.weight".into());
    names.push("fc1.bias".into());
    names.push("fc2.weight".into());
    names.push("fc2.bias".into());
    names
}

/// Every parameter shape, derivable from the config alone.
pub fn param_shapes(config: &MagNetConfig) -> Vec<Vec<usize>> {
    let mut shapes = Vec::with_capacity(2 * config.kernels.len() + 4);
    let mut c_in = config.input_channels;
    for (k, c_out) in config.kernels.iter().zip(&config.channels) {
        shapes.push(vec![*c_out, c_in, *k]);
        shapes.push(vec![*c_out]);
        c_in = *c_out;
    }
    shapes.push(vec![config.hidden, c_in]);
    shapes.push(vec![config.hidden]);
    shapes.push(vec![config.output, config.hidden]);
    shapes.push(vec![config.output]);
    shapes
}

/// A built network. Immutable for inference; training mutates parameters
/// under exclusive access.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: MagNetConfig,
    pub conv_weights: Vec<Tensor<f32>>,
    pub conv_biases: Vec<Tensor<f32>>,
    pub fc1_weight: Tensor<f32>,
    pub fc1_bias: Tensor<f32>,
    pub fc2_weight: Tensor<f32>,
    pub fc2_bias: Tensor<f32>,
    /// Standardization fitted on the training split; carried so evaluation
    /// applies the identical transform.
    pub stats: Option<ChannelStats>,
}

/// He-uniform bound for a given fan-in.
fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn he_uniform(shape: &[usize], fan_in: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = he_bound(fan_in);
    let numel: usize = shape.iter().product();
    let data: Vec<f32> = (0..numel).map(|_| rng.gen_range(-bound..bound) as f32).collect();
    Tensor::from_vec(shape, data).expect("shape consistent by construction")
}

/// Build a model with He-uniform weights and zero biases, deterministic per
/// seed (each tensor draws from its own derived stream).
pub fn build(config: &MagNetConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut conv_weights = Vec::with_capacity(LAYERS);
    let mut conv_biases = Vec::with_capacity(LAYERS);
    let mut c_in = config.input_channels;
    for (i, (k, c_out)) in config.kernels.iter().zip(&config.channels).enumerate() {
        let fan_in = c_in * k;
        conv_weights.push(he_uniform(
            &[*c_out, c_in, *k],
            fan_in,
            seed::derive(seed, "init-conv", i as u64),
        ));
        conv_biases.push(Tensor::zeros(&[*c_out]));
        c_in = *c_out;
    }
    let fc1_weight = he_uniform(&[config.hidden, c_in], c_in, seed::derive(seed, "init-fc", 0));
    let fc2_weight = he_uniform(
        &[config.output, config.hidden],
        config.hidden,
        seed::derive(seed, "init-fc", 1),
    );
    Ok(Model {
        config: config.clone(),
        conv_weights,
        conv_biases,
        fc1_weight,
        fc1_bias: Tensor::zeros(&[config.hidden]),
        fc2_weight,
        fc2_bias: Tensor::zeros(&[config.output]),
        stats: None,
    })
}

impl Model {
    /// Parameters in the canonical order of param_names.
    pub fn parameters(&self) -> Vec<&Tensor<f32>> {
        let mut out = Vec::with_capacity(2 * self.conv_weights.len() + 4);
        for (w, b) in self.conv_weights.iter().zip(&self.conv_biases) {
            out.push(w);
            out.push(b);
        }
        out.push(&self.fc1_weight);
        out.push(&self.fc1_bias);
        out.push(&self.fc2_weight);
        out.push(&self.fc2_bias);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        let mut out = Vec::with_capacity(2 * self.conv_weights.len() + 4);
        for (w, b) in self.conv_weights.iter_mut().zip(self.conv_biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.fc1_weight);
        out.push(&mut self.fc1_bias);
        out.push(&mut self.fc2_weight);
        out.push(&mut self.fc2_bias);
        out
    }

    pub fn param_count(&self) -> usize {
        count_params(&self.parameters())
    }

    fn check_window(&self, window: &Tensor<f32>) -> Result<()> {
        if window.rank() != 2 || window.shape()[0] != self.config.input_channels {
            return Err(Error::Shape(format!(
                "window shape {:?} does not match {} input channels",
                window.shape(),
                self.config.input_channels
            )));
        }
        Ok(())
    }

    /// Inference on one standardized window [C x L] -> (x, y).
    pub fn forward(&self, window: &Tensor<f32>) -> Result<[f32; 2]> {
        self.check_window(window)?;
        let mut x = window.clone();
        for (i, (w, b)) in self.conv_weights.iter().zip(&self.conv_biases).enumerate() {
            let d = self.config.dilations[i];
            let pad = same_padding(self.config.kernels[i], d, self.config.causal);
            x = numkit::ops::conv1d_forward(&x, w, b, d, pad)?;
            x = numkit::ops::relu_forward(&x);
        }
        let pooled = numkit::ops::global_avg_pool_forward(&x)?;
        let h = numkit::ops::dense_forward(&pooled, &self.fc1_weight, &self.fc1_bias)?;
        let h = numkit::ops::relu_forward(&h);
        let y = numkit::ops::dense_forward(&h, &self.fc2_weight, &self.fc2_bias)?;
        Ok([y.as_slice()[0], y.as_slice()[1]])
    }

    /// Forward over a batch; row i equals forward(windows[i]) exactly.
    pub fn forward_batch(&self, windows: &[Tensor<f32>]) -> Result<Vec<[f32; 2]>> {
        windows.iter().map(|w| self.forward(w)).collect()
    }

    /// MSE loss against (x, y) and gradients for every parameter, in
    /// parameters() order.
    pub fn loss_and_gradients(
        &self,
        window: &Tensor<f32>,
        target: [f64; 2],
    ) -> Result<(f32, Vec<Tensor<f32>>)> {
        self.check_window(window)?;
        let mut tape: Tape<f32> = Tape::new();
        let mut param_ids = Vec::with_capacity(2 * self.conv_weights.len() + 4);
        let mut x = tape.constant(window.clone());
        for (i, (w, b)) in self.conv_weights.iter().zip(&self.conv_biases).enumerate() {
            let wid = tape.param(w.clone());
            let bid = tape.param(b.clone());
            param_ids.push(wid);
            param_ids.push(bid);
            let d = self.config.dilations[i];
            let pad = same_padding(self.config.kernels[i], d, self.config.causal);
            x = tape.conv1d(x, wid, bid, d, pad)?;
            x = tape.relu(x)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        let w1 = tape.param(self.fc1_weight.clone());
        let b1 = tape.param(self.fc1_bias.clone());
        param_ids.extend([w1, b1]);
        let h = tape.dense(pooled, w1, b1)?;
        let h = tape.relu(h)?;
        let w2 = tape.param(self.fc2_weight.clone());
        let b2 = tape.param(self.fc2_bias.clone());
        param_ids.extend([w2, b2]);
        let pred = tape.dense(h, w2, b2)?;
        let target_id =
            tape.constant(Tensor::from_vec(&[2], vec![target[0] as f32, target[1] as f32])?);
        let loss_id = tape.mse_loss(pred, target_id)?;
        let loss = tape.value(loss_id).item();
        let mut grads = tape.backward(loss_id)?;
        let out = param_ids
            .iter()
            .map(|id| grads.take(*id).expect("param leaf always receives a gradient"))
            .collect();
        Ok((loss, out))
    }
}

/// Checkpoint metadata: the full config, its digest, and fitted stats.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ModelMeta {
    pub config: MagNetConfig,
    pub config_digest: String,
    pub stats: Option<ChannelStats>,
}

/// Hex SHA-256 of the config's canonical JSON form.
pub fn config_digest(config: &MagNetConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let hash = Sha256::digest(json.as_bytes());
    hash.iter().map(|b| format!("{:02x}", b)).collect()
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let meta = ModelMeta {
        config: model.config.clone(),
        config_digest: config_digest(&model.config),
        stats: model.stats.clone(),
    };
    let names = param_names(&model.config);
    let params: Vec<(String, Tensor<f32>)> = names
        .into_iter()
        .zip(model.parameters().into_iter().cloned())
        .collect();
    numkit::checkpoint::save_checkpoint(path, &meta, &params)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let (meta, blobs): (ModelMeta, Vec<(String, Tensor<f32>)>) =
        numkit::checkpoint::load_checkpoint(path)?;
    let expect_digest = config_digest(&meta.config);
    if meta.config_digest != expect_digest {
        return Err(Error::Checkpoint(format!(
            "{}: config digest mismatch (stored {}, recomputed {})",
            path.display(),
            meta.config_digest,
            expect_digest
        )));
    }
    meta.config.validate()?;
    let names = param_names(&meta.config);
    let shapes = param_shapes(&meta.config);
    if blobs.len() != names.len() {
        return Err(Error::Checkpoint(format!(
            "{}: expected {} parameter blobs, found {}",
            path.display(),
            names.len(),
            blobs.len()
        )));
    }
    let mut tensors = Vec::with_capacity(blobs.len());
    for (((name, tensor), want_name), want_shape) in blobs.into_iter().zip(&names).zip(&shapes) {
        if &name != want_name || tensor.shape() != &want_shape[..] {
            return Err(Error::Checkpoint(format!(
                "{}: blob {:?} with shape {:?} where {:?} {:?} was expected",
                path.display(),
                name,
                tensor.shape(),
                want_name,
                want_shape
            )));
        }
        tensors.push(tensor);
    }
    let n = meta.config.kernels.len();
    let mut conv_weights = Vec::with_capacity(n);
    let mut conv_biases = Vec::with_capacity(n);
    let mut it = tensors.into_iter();
    for _ in 0..n {
        conv_weights.push(it.next().unwrap());
        conv_biases.push(it.next().unwrap());
    }
    Ok(Model {
        config: meta.config,
        conv_weights,
        conv_biases,
        fc1_weight: it.next().unwrap(),
        fc1_bias: it.next().unwrap(),
        fc2_weight: it.next().unwrap(),
        fc2_bias: it.next().unwrap(),
        stats: meta.stats,
    })
}
