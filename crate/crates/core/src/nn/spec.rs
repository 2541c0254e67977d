use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { alpha: f64 },
    Relu,
    Sigmoid,
    Tanh,
    None,
}

impl Activation {
    /// LeakyReLU with the DCGAN slope of 0.2.
    pub const LEAKY: Activation = Activation::LeakyRelu { alpha: 0.2 };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Dense { units: usize },
    Conv2d { filters: usize, kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2] },
    TransposedConv2d { filters: usize, kernel: [usize; 2], stride: [usize; 2], padding: [usize; 2] },
    BatchNorm,
    Activation,
    Dropout,
    GaussianNoise { sigma: f64 },
    Reshape { shape: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default = "no_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub weight_norm: bool,
    #[serde(default)]
    pub dropout_p: f64,
}

fn no_activation() -> Activation {
    Activation::None
}

impl LayerSpec {
    pub fn dense(units: usize, activation: Activation) -> Self {
        Self::with(LayerKind::Dense { units }, activation)
    }

    pub fn conv(filters: usize, kernel: usize, stride: usize, padding: usize, activation: Activation) -> Self {
        Self::with(
            LayerKind::Conv2d {
                filters,
                kernel: [kernel, kernel],
                stride: [stride, stride],
                padding: [padding, padding],
            },
            activation,
        )
    }

    pub fn tconv(filters: usize, kernel: usize, stride: usize, padding: usize, activation: Activation) -> Self {
        Self::with(
            LayerKind::TransposedConv2d {
                filters,
                kernel: [kernel, kernel],
                stride: [stride, stride],
                padding: [padding, padding],
            },
            activation,
        )
    }

    pub fn dropout(p: f64) -> Self {
        Self { dropout_p: p, ..Self::with(LayerKind::Dropout, Activation::None) }
    }

    pub fn noise(sigma: f64) -> Self {
        Self::with(LayerKind::GaussianNoise { sigma }, Activation::None)
    }

    pub fn batchnorm(activation: Activation) -> Self {
        Self::with(LayerKind::BatchNorm, activation)
    }

    pub fn reshape(shape: &[usize]) -> Self {
        Self::with(LayerKind::Reshape { shape: shape.to_vec() }, Activation::None)
    }

    fn with(kind: LayerKind, activation: Activation) -> Self {
        Self { kind, activation, weight_norm: false, dropout_p: 0.0 }
    }

    /// Dense and (transposed) convolution layers carry a weight matrix.
    pub fn has_weight(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::TransposedConv2d { .. }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkRole {
    Generator,
    Discriminator,
    Encoder,
    /// Reconstruction-based discriminator of boundary-equilibrium training.
    Autoencoder,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentPrior {
    #[default]
    StandardNormal,
    /// Uniform on [-1, 1].
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: NetworkRole,
    pub layers: Vec<LayerSpec>,
    /// Per-record input shape (without batch axis). For generators this
    /// is `[latent_dim]`.
    pub input_shape: Vec<usize>,
    #[serde(default)]
    pub latent_dim: Option<usize>,
    #[serde(default)]
    pub latent_prior: LatentPrior,
}

impl NetworkSpec {
    /// Per-record shape after each layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape.clone();
        if cur.is_empty() || cur.contains(&0) {
            return Err(NnError::Spec(format!("invalid input shape {cur:?}")));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            cur = next_shape(i, layer, &cur)?;
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>, NnError> {
        Ok(self.layer_shapes()?.pop().unwrap_or_else(|| self.input_shape.clone()))
    }

    pub fn final_activation(&self) -> Activation {
        self.layers
            .iter()
            .rev()
            .find(|l| !matches!(l.kind, LayerKind::Reshape { .. } | LayerKind::Dropout | LayerKind::GaussianNoise { .. }))
            .map(|l| l.activation)
            .unwrap_or(Activation::None)
    }

    /// Checks role-specific contracts on top of shape propagation.
    /// `record_shape` is the dataset record shape the network must match.
    pub fn validate(&self, record_shape: &[usize]) -> Result<(), NnError> {
        let out = self.output_shape()?;
        for (i, l) in self.layers.iter().enumerate() {
            if l.dropout_p != 0.0 && l.kind != LayerKind::Dropout {
                return Err(NnError::Spec(format!("layer {i}: dropout_p set on a non-dropout layer")));
            }
            if !(0.0..1.0).contains(&l.dropout_p) {
                return Err(NnError::Spec(format!("layer {i}: dropout_p {} outside [0, 1)", l.dropout_p)));
            }
            if l.weight_norm && !l.has_weight() {
                return Err(NnError::Spec(format!("layer {i}: weight_norm on a layer without weights")));
            }
        }
        match self.role {
            NetworkRole::Generator => {
                let latent = self.latent_dim.ok_or_else(|| NnError::Spec("generator without latent_dim".into()))?;
                if self.input_shape != [latent] {
                    return Err(NnError::Spec(format!(
                        "generator input {:?} does not match latent_dim {latent}",
                        self.input_shape
                    )));
                }
                if out != record_shape {
                    return Err(NnError::Spec(format!(
                        "generator output {out:?} does not match record shape {record_shape:?}"
                    )));
                }
            }
            NetworkRole::Discriminator => {
                if self.input_shape != record_shape {
                    return Err(NnError::Spec(format!("discriminator input {:?} != record {record_shape:?}", self.input_shape)));
                }
                if out != [1] || self.final_activation() != Activation::Sigmoid {
                    return Err(NnError::Spec("discriminator must end in one sigmoid unit".into()));
                }
            }
            NetworkRole::Encoder => {
                let latent = self.latent_dim.ok_or_else(|| NnError::Spec("encoder without latent_dim".into()))?;
                if self.input_shape != record_shape || out != [2 * latent] {
                    return Err(NnError::Spec(format!("encoder must map {record_shape:?} to [{}], got {out:?}", 2 * latent)));
                }
            }
            NetworkRole::Autoencoder => {
                if self.input_shape != record_shape || out != record_shape {
                    return Err(NnError::Spec(format!("autoencoder must map {record_shape:?} onto itself, got {out:?}")));
                }
            }
        }
        Ok(())
    }
}

fn next_shape(i: usize, layer: &LayerSpec, cur: &[usize]) -> Result<Vec<usize>, NnError> {
    let bad = |why: String| NnError::Spec(format!("layer {i}: {why}"));
    Ok(match &layer.kind {
        LayerKind::Dense { units } => {
            if *units == 0 {
                return Err(bad("dense with zero units".into()));
            }
            vec![*units]
        }
        LayerKind::Conv2d { filters, kernel, stride, padding } => {
            let [c, h, w] = image_shape(cur).ok_or_else(|| bad(format!("conv2d needs [C,H,W] input, got {cur:?}")))?;
            let _ = c;
            if stride.contains(&0) || h + 2 * padding[0] < kernel[0] || w + 2 * padding[1] < kernel[1] {
                return Err(bad(format!("conv2d kernel {kernel:?} does not fit input {cur:?}")));
            }
            vec![
                *filters,
                (h + 2 * padding[0] - kernel[0]) / stride[0] + 1,
                (w + 2 * padding[1] - kernel[1]) / stride[1] + 1,
            ]
        }
        LayerKind::TransposedConv2d { filters, kernel, stride, padding } => {
            let [_, h, w] = image_shape(cur).ok_or_else(|| bad(format!("transposed conv needs [C,H,W] input, got {cur:?}")))?;
            let oh = ((h - 1) * stride[0] + kernel[0]).checked_sub(2 * padding[0]).filter(|&v| v > 0);
            let ow = ((w - 1) * stride[1] + kernel[1]).checked_sub(2 * padding[1]).filter(|&v| v > 0);
            match (oh, ow) {
                (Some(oh), Some(ow)) if !stride.contains(&0) => vec![*filters, oh, ow],
                _ => return Err(bad("transposed conv padding exceeds output".into())),
            }
        }
        LayerKind::Reshape { shape } => {
            if shape.iter().product::<usize>() != cur.iter().product::<usize>() || shape.contains(&0) {
                return Err(bad(format!("cannot reshape {cur:?} into {shape:?}")));
            }
            shape.clone()
        }
        LayerKind::BatchNorm | LayerKind::Activation | LayerKind::Dropout | LayerKind::GaussianNoise { .. } => cur.to_vec(),
    })
}

fn image_shape(s: &[usize]) -> Option<[usize; 3]> {
    match s {
        [c, h, w] => Some([*c, *h, *w]),
        _ => None,
    }
}
