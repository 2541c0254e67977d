use crate::tensor::{ConvAttrs, NodeId, Precision, RngState, Tape, Tensor};

use super::params::{weight_norm_axes, Binding, Parameters};
use super::spec::{Activation, LatentPrior, LayerKind, NetworkRole, NetworkSpec};
use super::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Momentum of batch-norm running statistics.
const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// Extra perturbations applied during a forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardHooks {
    /// Std of Gaussian noise added to the first hidden layer's output in
    /// train mode (forward-pass privacy defense).
    pub hidden_noise_sigma: Option<f64>,
}

/// Nodes of interest produced by [`forward_on_tape`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Network output (probabilities for discriminators).
    pub output: NodeId,
    /// Pre-activation of the final layer (discriminator logits).
    pub pre_activation: NodeId,
    /// Input to the last weighted layer: the penultimate-layer features.
    pub features: NodeId,
    /// Fresh running statistics for batch-norm buffers (entry index, value).
    pub buffer_updates: Vec<(usize, Tensor)>,
}

/// Runs `spec` on `input` (shape `[B, ...input_shape]`) inside `tape`.
pub fn forward_on_tape(
    tape: &mut Tape,
    spec: &NetworkSpec,
    params: &Parameters,
    binding: &Binding,
    input: NodeId,
    mode: Mode,
    rng: &mut RngState,
    hooks: ForwardHooks,
) -> Result<ForwardTrace, NnError> {
    let batch = tape.shape(input)[0];
    let mut expected = vec![batch];
    expected.extend_from_slice(&spec.input_shape);
    if tape.shape(input) != &expected[..] {
        return Err(NnError::InputShape { expected, got: tape.shape(input).to_vec() });
    }
    let last_weighted = spec.layers.iter().rposition(|l| l.has_weight());
    let first_hidden = spec.layers.iter().position(|l| l.has_weight());
    let mut x = input;
    let mut features = input;
    let mut pre_activation = input;
    let mut buffer_updates = Vec::new();
    let param = |name: String| -> Result<(usize, NodeId), NnError> {
        let idx = params.index_of(&name).ok_or(NnError::MissingParam(name))?;
        Ok((idx, binding.id(idx)))
    };
    for (i, layer) in spec.layers.iter().enumerate() {
        if Some(i) == last_weighted {
            features = x;
        }
        x = match &layer.kind {
            LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::TransposedConv2d { .. } => {
                let w = if layer.weight_norm {
                    let (_, v) = param(format!("l{i}.v"))?;
                    let (_, g) = param(format!("l{i}.g"))?;
                    normalized_weight(tape, v, g, weight_norm_axes(&layer.kind))?
                } else {
                    param(format!("l{i}.weight"))?.1
                };
                let (_, b) = param(format!("l{i}.bias"))?;
                let y = match &layer.kind {
                    LayerKind::Dense { .. } => {
                        let flat_len = tape.value(x).row_len();
                        let flat = if tape.shape(x).len() == 2 { x } else { tape.reshape(x, &[batch, flat_len])? };
                        tape.matmul(flat, w)?
                    }
                    LayerKind::Conv2d { stride, padding, .. } => {
                        tape.conv2d(x, w, ConvAttrs { stride: *stride, padding: *padding })?
                    }
                    LayerKind::TransposedConv2d { stride, padding, .. } => {
                        tape.transposed_conv2d(x, w, ConvAttrs { stride: *stride, padding: *padding })?
                    }
                    _ => unreachable!(),
                };
                tape.add(y, b)?
            }
            LayerKind::BatchNorm => {
                let (_, gamma) = param(format!("l{i}.gamma"))?;
                let (_, beta) = param(format!("l{i}.beta"))?;
                let (mi, rm) = param(format!("l{i}.running_mean"))?;
                let (vi, rv) = param(format!("l{i}.running_var"))?;
                let axes: &[usize] = if tape.shape(x).len() == 2 { &[0] } else { &[0, 2, 3] };
                let stat_shape = params.entries()[mi].tensor.shape().to_vec();
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mean = tape.mean_axes(x, axes)?;
                        let centered = tape.sub(x, mean)?;
                        let sq = tape.mul(centered, centered)?;
                        let var = tape.mean_axes(sq, axes)?;
                        let blend = |old: &Tensor, new: &Tensor| {
                            let data = old
                                .data()
                                .iter()
                                .zip(new.data())
                                .map(|(o, n)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * n)
                                .collect();
                            Tensor::new(stat_shape.clone(), data)
                        };
                        buffer_updates.push((mi, blend(tape.value(rm), tape.value(mean))?));
                        buffer_updates.push((vi, blend(tape.value(rv), tape.value(var))?));
                        (mean, var)
                    }
                    Mode::Eval => {
                        let m = tape.reshape(rm, &batch_stat_shape(tape.shape(x)))?;
                        let v = tape.reshape(rv, &batch_stat_shape(tape.shape(x)))?;
                        (m, v)
                    }
                };
                let centered = tape.sub(x, mean)?;
                let var_eps = tape.offset(var, BN_EPS)?;
                let std = tape.sqrt(var_eps)?;
                let normed = tape.div(centered, std)?;
                let scaled = tape.mul(normed, gamma)?;
                tape.add(scaled, beta)?
            }
            LayerKind::Activation => x,
            LayerKind::Dropout => match mode {
                Mode::Train if layer.dropout_p > 0.0 => {
                    let mask = dropout_mask(tape.shape(x), layer.dropout_p, rng);
                    let m = tape.constant(mask);
                    tape.dropout_mask_apply(x, m)?
                }
                _ => x,
            },
            LayerKind::GaussianNoise { sigma } => match mode {
                Mode::Train if *sigma > 0.0 => add_noise(tape, x, *sigma, rng)?,
                _ => x,
            },
            LayerKind::Reshape { shape } => {
                let mut full = vec![batch];
                full.extend_from_slice(shape);
                tape.reshape(x, &full)?
            }
        };
        pre_activation = x;
        x = apply_activation(tape, x, layer.activation)?;
        if Some(i) == first_hidden && Some(i) != last_weighted && mode == Mode::Train {
            if let Some(sigma) = hooks.hidden_noise_sigma.filter(|s| *s > 0.0) {
                x = add_noise(tape, x, sigma, rng)?;
            }
        }
    }
    Ok(ForwardTrace { output: x, pre_activation, features, buffer_updates })
}

fn batch_stat_shape(x: &[usize]) -> Vec<usize> {
    if x.len() == 2 {
        vec![1, x[1]]
    } else {
        vec![1, x[1], 1, 1]
    }
}

/// `g · v / ‖v‖` with the norm taken per output unit.
pub(crate) fn normalized_weight(tape: &mut Tape, v: NodeId, g: NodeId, axes: &[usize]) -> Result<NodeId, NnError> {
    let sq = tape.mul(v, v)?;
    let ss = tape.sum_axes(sq, axes)?;
    if tape.value(ss).data().iter().any(|&x| x == 0.0) {
        return Err(NnError::ZeroNorm("weight-norm direction".into()));
    }
    let norm = tape.sqrt(ss)?;
    let scale = tape.div(g, norm)?;
    Ok(tape.mul(v, scale)?)
}

fn add_noise(tape: &mut Tape, x: NodeId, sigma: f64, rng: &mut RngState) -> Result<NodeId, NnError> {
    let shape = tape.shape(x).to_vec();
    let n = tape.value(x).numel();
    let noise = tape.constant(Tensor::new(shape, rng.normals(n, sigma))?);
    Ok(tape.gaussian_noise_add(x, noise)?)
}

pub(crate) fn apply_activation(tape: &mut Tape, x: NodeId, act: Activation) -> Result<NodeId, NnError> {
    Ok(match act {
        Activation::LeakyRelu { alpha } => tape.leaky_relu(x, alpha)?,
        Activation::Relu => tape.relu(x)?,
        Activation::Sigmoid => tape.sigmoid(x)?,
        Activation::Tanh => tape.tanh(x)?,
        Activation::None => x,
    })
}

/// Inverted-dropout mask: each element independently kept with
/// probability `1 − p` (one uniform draw per element, in order) and scaled
/// by `1 / (1 − p)`.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut RngState) -> Tensor {
    let n: usize = shape.iter().product();
    let keep = 1.0 - p;
    let data = (0..n).map(|_| if rng.uniform(0.0, 1.0) < keep { 1.0 / keep } else { 0.0 }).collect();
    Tensor::new(shape.to_vec(), data).expect("shape from tape")
}

/// Stand-alone forward pass on a fresh tape.
pub fn forward_network(
    params: &Parameters,
    spec: &NetworkSpec,
    batch: &Tensor,
    mode: Mode,
    rng: &mut RngState,
) -> Result<Tensor, NnError> {
    let mut tape = Tape::new(Precision::F64);
    let binding = params.bind(&mut tape, false);
    let x = tape.constant(batch.clone());
    let trace = forward_on_tape(&mut tape, spec, params, &binding, x, mode, rng, ForwardHooks::default())?;
    Ok(tape.value(trace.output).clone())
}

/// Draws `batch_size` latent vectors from the spec's prior.
pub fn sample_latent(spec: &NetworkSpec, batch_size: usize, rng: &mut RngState) -> Result<Tensor, NnError> {
    let dim = spec.latent_dim.ok_or_else(|| NnError::Spec("network has no latent_dim".into()))?;
    if batch_size == 0 {
        return Err(NnError::Spec("batch_size must be at least 1".into()));
    }
    let n = batch_size * dim;
    let data = match spec.latent_prior {
        LatentPrior::StandardNormal => rng.normals(n, 1.0),
        LatentPrior::Uniform => (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    };
    Ok(Tensor::new([batch_size, dim], data)?)
}

/// `μ + exp(log σ² / 2) · ε` with ε ~ N(0, I) entering as a constant, so
/// gradients reach `mu` and `log_var` only.
pub fn reparameterize(tape: &mut Tape, mu: NodeId, log_var: NodeId, rng: &mut RngState) -> Result<NodeId, NnError> {
    if tape.shape(mu) != tape.shape(log_var) {
        return Err(NnError::InputShape { expected: tape.shape(mu).to_vec(), got: tape.shape(log_var).to_vec() });
    }
    let shape = tape.shape(mu).to_vec();
    let n = tape.value(mu).numel();
    let eps = tape.constant(Tensor::new(shape, rng.normals(n, 1.0))?);
    let half = tape.scale(log_var, 0.5)?;
    let std = tape.exp(half)?;
    let noise = tape.mul(std, eps)?;
    Ok(tape.add(mu, noise)?)
}

/// Splits an encoder output `[B, 2·latent]` into `(μ, log σ²)`.
pub fn split_encoding(tape: &mut Tape, enc: NodeId, latent_dim: usize) -> Result<(NodeId, NodeId), NnError> {
    if tape.shape(enc).len() != 2 || tape.shape(enc)[1] != 2 * latent_dim {
        return Err(NnError::InputShape { expected: vec![tape.shape(enc)[0], 2 * latent_dim], got: tape.shape(enc).to_vec() });
    }
    let mu = tape.slice(enc, 1, 0, latent_dim)?;
    let log_var = tape.slice(enc, 1, latent_dim, 2 * latent_dim)?;
    Ok((mu, log_var))
}

/// Eval-mode discriminator scores; reconstruction-based discriminators
/// score by negative mean absolute reconstruction error.
pub fn discriminator_scores(params: &Parameters, spec: &NetworkSpec, batch: &Tensor) -> Result<Vec<f64>, NnError> {
    let mut rng = RngState::new(0);
    let out = forward_network(params, spec, batch, Mode::Eval, &mut rng)?;
    match spec.role {
        NetworkRole::Discriminator => Ok(out.into_data()),
        NetworkRole::Autoencoder => Ok((0..batch.rows())
            .map(|i| {
                let (a, b) = (batch.row(i), out.row(i));
                -a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
            })
            .collect()),
        other => Err(NnError::Spec(format!("{other:?} network cannot score records"))),
    }
}
