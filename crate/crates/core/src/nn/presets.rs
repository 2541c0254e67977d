//! Reference architectures. These are our own desk-scale choices: a
//! three-layer MLP for low-dimensional data and a two-conv /
//! two-transposed-conv stack for small single-channel images.

use serde::{Deserialize, Serialize};

use super::spec::{Activation, LatentPrior, LayerSpec, NetworkRole, NetworkSpec};
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    MlpSmall,
    ConvSmall,
}

impl std::str::FromStr for Preset {
    type Err = NnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlp-small" => Ok(Preset::MlpSmall),
            "conv-small" => Ok(Preset::ConvSmall),
            other => Err(NnError::Spec(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PresetOptions {
    /// Width of MLP hidden layers.
    pub hidden: usize,
    /// Filters of the first convolution (the second has twice as many).
    pub channels: usize,
    pub latent_dim: usize,
    pub latent_prior: LatentPrior,
    pub leaky_alpha: f64,
    /// `None` keeps the preset default: off for mlp-small, on for conv-small.
    pub batchnorm: Option<bool>,
    /// Dropout after every hidden discriminator layer (0 disables).
    pub discriminator_dropout: f64,
    pub weight_norm: bool,
    /// Bottleneck width of autoencoder discriminators.
    pub code_dim: usize,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            hidden: 64,
            channels: 16,
            latent_dim: 8,
            latent_prior: LatentPrior::StandardNormal,
            leaky_alpha: 0.2,
            batchnorm: None,
            discriminator_dropout: 0.0,
            weight_norm: false,
            code_dim: 8,
        }
    }
}

struct Builder<'a> {
    opts: &'a PresetOptions,
    batchnorm: bool,
    layers: Vec<LayerSpec>,
}

impl Builder<'_> {
    fn leaky(&self) -> Activation {
        Activation::LeakyRelu { alpha: self.opts.leaky_alpha }
    }

    /// Pushes a weighted layer, optionally followed by batch norm carrying
    /// the activation.
    fn weighted(&mut self, mut layer: LayerSpec, bn: bool) {
        layer.weight_norm = self.opts.weight_norm;
        if bn && self.batchnorm {
            let act = layer.activation;
            layer.activation = Activation::None;
            self.layers.push(layer);
            self.layers.push(LayerSpec::batchnorm(act));
        } else {
            self.layers.push(layer);
        }
    }

    fn dropout(&mut self) {
        if self.opts.discriminator_dropout > 0.0 {
            self.layers.push(LayerSpec::dropout(self.opts.discriminator_dropout));
        }
    }
}

/// Spatial plan of conv-small for a record shape: (kernel, stride, pad, h0, w0).
fn conv_plan(record: &[usize]) -> Result<(usize, usize, usize, usize, usize), NnError> {
    match record {
        [_, h, w] if h % 4 == 0 && w % 4 == 0 => Ok((4, 2, 1, h / 4, w / 4)),
        [_, h, w] => Ok((3, 1, 1, *h, *w)),
        other => Err(NnError::Spec(format!("conv-small needs a [C, H, W] record shape, got {other:?}"))),
    }
}

pub fn generator(preset: Preset, record: &[usize], opts: &PresetOptions) -> Result<NetworkSpec, NnError> {
    let mut b = Builder { opts, batchnorm: opts.batchnorm.unwrap_or(preset == Preset::ConvSmall), layers: vec![] };
    let out_len: usize = record.iter().product();
    match preset {
        Preset::MlpSmall => {
            b.weighted(LayerSpec::dense(opts.hidden, Activation::Relu), true);
            b.weighted(LayerSpec::dense(opts.hidden, Activation::Relu), true);
            b.weighted(LayerSpec::dense(out_len, Activation::Tanh), false);
            if record.len() != 1 {
                b.layers.push(LayerSpec::reshape(record));
            }
        }
        Preset::ConvSmall => {
            let (k, s, p, h0, w0) = conv_plan(record)?;
            let c2 = 2 * opts.channels;
            b.weighted(LayerSpec::dense(c2 * h0 * w0, Activation::Relu), true);
            b.layers.push(LayerSpec::reshape(&[c2, h0, w0]));
            b.weighted(LayerSpec::tconv(opts.channels, k, s, p, Activation::Relu), true);
            b.weighted(LayerSpec::tconv(record[0], k, s, p, Activation::Tanh), false);
        }
    }
    let spec = NetworkSpec {
        role: NetworkRole::Generator,
        layers: b.layers,
        input_shape: vec![opts.latent_dim],
        latent_dim: Some(opts.latent_dim),
        latent_prior: opts.latent_prior,
    };
    spec.validate(record)?;
    Ok(spec)
}

pub fn discriminator(preset: Preset, record: &[usize], opts: &PresetOptions) -> Result<NetworkSpec, NnError> {
    let mut b = Builder { opts, batchnorm: opts.batchnorm.unwrap_or(preset == Preset::ConvSmall), layers: vec![] };
    let leaky = b.leaky();
    match preset {
        Preset::MlpSmall => {
            b.weighted(LayerSpec::dense(opts.hidden, leaky), false);
            b.dropout();
            b.weighted(LayerSpec::dense(opts.hidden, leaky), true);
            b.dropout();
        }
        Preset::ConvSmall => {
            let (k, s, p, _, _) = conv_plan(record)?;
            b.weighted(LayerSpec::conv(opts.channels, k, s, p, leaky), false);
            b.dropout();
            b.weighted(LayerSpec::conv(2 * opts.channels, k, s, p, leaky), true);
            b.dropout();
        }
    }
    b.weighted(LayerSpec::dense(1, Activation::Sigmoid), false);
    let spec = NetworkSpec {
        role: NetworkRole::Discriminator,
        layers: b.layers,
        input_shape: record.to_vec(),
        latent_dim: None,
        latent_prior: LatentPrior::StandardNormal,
    };
    spec.validate(record)?;
    Ok(spec)
}

pub fn encoder(preset: Preset, record: &[usize], opts: &PresetOptions) -> Result<NetworkSpec, NnError> {
    let mut b = Builder { opts, batchnorm: false, layers: vec![] };
    let leaky = b.leaky();
    match preset {
        Preset::MlpSmall => {
            b.weighted(LayerSpec::dense(opts.hidden, leaky), false);
            b.weighted(LayerSpec::dense(opts.hidden, leaky), false);
        }
        Preset::ConvSmall => {
            let (k, s, p, _, _) = conv_plan(record)?;
            b.weighted(LayerSpec::conv(opts.channels, k, s, p, leaky), false);
            b.weighted(LayerSpec::conv(2 * opts.channels, k, s, p, leaky), false);
        }
    }
    b.weighted(LayerSpec::dense(2 * opts.latent_dim, Activation::None), false);
    let spec = NetworkSpec {
        role: NetworkRole::Encoder,
        layers: b.layers,
        input_shape: record.to_vec(),
        latent_dim: Some(opts.latent_dim),
        latent_prior: opts.latent_prior,
    };
    spec.validate(record)?;
    Ok(spec)
}

/// Autoencoder used as a reconstruction-based discriminator.
pub fn autoencoder(preset: Preset, record: &[usize], opts: &PresetOptions) -> Result<NetworkSpec, NnError> {
    let mut b = Builder { opts, batchnorm: false, layers: vec![] };
    let leaky = b.leaky();
    let out_len: usize = record.iter().product();
    match preset {
        Preset::MlpSmall => {
            b.weighted(LayerSpec::dense(opts.hidden, leaky), false);
            b.dropout();
            b.weighted(LayerSpec::dense(opts.code_dim, Activation::None), false);
            b.weighted(LayerSpec::dense(opts.hidden, leaky), false);
            b.weighted(LayerSpec::dense(out_len, Activation::Tanh), false);
            if record.len() != 1 {
                b.layers.push(LayerSpec::reshape(record));
            }
        }
        Preset::ConvSmall => {
            let (k, s, p, h0, w0) = conv_plan(record)?;
            let c2 = 2 * opts.channels;
            b.weighted(LayerSpec::conv(opts.channels, k, s, p, leaky), false);
            b.dropout();
            b.weighted(LayerSpec::conv(c2, k, s, p, leaky), false);
            b.weighted(LayerSpec::dense(opts.code_dim, Activation::None), false);
            b.weighted(LayerSpec::dense(c2 * h0 * w0, leaky), false);
            b.layers.push(LayerSpec::reshape(&[c2, h0, w0]));
            b.weighted(LayerSpec::tconv(opts.channels, k, s, p, leaky), false);
            b.weighted(LayerSpec::tconv(record[0], k, s, p, Activation::Tanh), false);
        }
    }
    let spec = NetworkSpec {
        role: NetworkRole::Autoencoder,
        layers: b.layers,
        input_shape: record.to_vec(),
        latent_dim: None,
        latent_prior: LatentPrior::StandardNormal,
    };
    spec.validate(record)?;
    Ok(spec)
}
