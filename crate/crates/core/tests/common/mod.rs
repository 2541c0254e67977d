//! Shared fixtures: finite-difference gradient checks.
#![allow(dead_code)]

use genleak::nn::{
    self, build_network, forward_on_tape, sample_latent, Activation, ForwardHooks, LatentPrior, LayerSpec, Mode, NetworkRole, NetworkSpec,
    Parameters, Preset, PresetOptions,
};
use genleak::tensor::{ConvAttrs, NodeId, Precision, RngState, Tape, Tensor, TensorError};

pub const H: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

type Build = Box<dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId, TensorError>>;

/// One operator under test: its inputs, which of them are differentiated,
/// and how to apply it.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub differentiable: Vec<bool>,
    pub build: Build,
}

fn t(shape: &[usize], rng: &mut RngState) -> Tensor {
    Tensor::new(shape.to_vec(), rng.normals(shape.iter().product(), 1.0)).unwrap()
}

/// Values bounded away from zero, with random sign unless `positive`.
fn away_from_zero(shape: &[usize], positive: bool, rng: &mut RngState) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.uniform(0.3, 2.0);
            if positive || rng.bernoulli(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn case(name: &'static str, inputs: Vec<Tensor>, differentiable: Vec<bool>, build: Build) -> OpCase {
    OpCase { name, inputs, differentiable, build }
}

pub fn op_cases() -> Vec<OpCase> {
    let mut r = RngState::new(2024);
    let r = &mut r;
    let mut v = vec![
        case("add", vec![t(&[3, 4], r), t(&[3, 4], r)], vec![true, true], Box::new(|tp, x| tp.add(x[0], x[1]))),
        case("add (broadcast)", vec![t(&[3, 4], r), t(&[4], r)], vec![true, true], Box::new(|tp, x| tp.add(x[0], x[1]))),
        case("sub", vec![t(&[3, 4], r), t(&[3, 1], r)], vec![true, true], Box::new(|tp, x| tp.sub(x[0], x[1]))),
        case("mul", vec![t(&[2, 3, 2], r), t(&[3, 2], r)], vec![true, true], Box::new(|tp, x| tp.mul(x[0], x[1]))),
        case("div", vec![t(&[3, 4], r), away_from_zero(&[3, 4], false, r)], vec![true, true], Box::new(|tp, x| tp.div(x[0], x[1]))),
        case("matmul", vec![t(&[3, 5], r), t(&[5, 2], r)], vec![true, true], Box::new(|tp, x| tp.matmul(x[0], x[1]))),
        case(
            "conv2d",
            vec![t(&[2, 2, 5, 5], r), t(&[3, 2, 3, 3], r)],
            vec![true, true],
            Box::new(|tp, x| tp.conv2d(x[0], x[1], ConvAttrs::new(2, 1))),
        ),
        case(
            "conv2d (stride 1)",
            vec![t(&[1, 1, 4, 3], r), t(&[2, 1, 2, 2], r)],
            vec![true, true],
            Box::new(|tp, x| tp.conv2d(x[0], x[1], ConvAttrs::new(1, 0))),
        ),
        case(
            "transposed_conv2d",
            vec![t(&[2, 3, 2, 2], r), t(&[3, 2, 4, 4], r)],
            vec![true, true],
            Box::new(|tp, x| tp.transposed_conv2d(x[0], x[1], ConvAttrs::new(2, 1))),
        ),
        case("leaky_relu", vec![away_from_zero(&[4, 3], false, r)], vec![true], Box::new(|tp, x| tp.leaky_relu(x[0], 0.2))),
        case("relu", vec![away_from_zero(&[4, 3], false, r)], vec![true], Box::new(|tp, x| tp.relu(x[0]))),
        case("sigmoid", vec![t(&[4, 3], r)], vec![true], Box::new(|tp, x| tp.sigmoid(x[0]))),
        case("tanh", vec![t(&[4, 3], r)], vec![true], Box::new(|tp, x| tp.tanh(x[0]))),
        case("log", vec![away_from_zero(&[4, 3], true, r)], vec![true], Box::new(|tp, x| tp.log(x[0]))),
        case("exp", vec![t(&[4, 3], r)], vec![true], Box::new(|tp, x| tp.exp(x[0]))),
        case("sqrt", vec![away_from_zero(&[4, 3], true, r)], vec![true], Box::new(|tp, x| tp.sqrt(x[0]))),
        case("abs", vec![away_from_zero(&[4, 3], false, r)], vec![true], Box::new(|tp, x| tp.abs(x[0]))),
        case("softplus", vec![t(&[4, 3], r)], vec![true], Box::new(|tp, x| tp.softplus(x[0]))),
        case("neg", vec![t(&[4, 3], r)], vec![true], Box::new(|tp, x| tp.neg(x[0]))),
        case("scale", vec![t(&[4, 3], r)], vec![true], Box::new(|tp, x| tp.scale(x[0], -1.7))),
        case("offset", vec![t(&[4, 3], r)], vec![true], Box::new(|tp, x| tp.offset(x[0], 0.4))),
        case("mean", vec![t(&[4, 3], r)], vec![true], Box::new(|tp, x| tp.mean(x[0]))),
        case("sum", vec![t(&[4, 3], r)], vec![true], Box::new(|tp, x| tp.sum(x[0]))),
        case("mean_axes", vec![t(&[2, 3, 4], r)], vec![true], Box::new(|tp, x| tp.mean_axes(x[0], &[0, 2]))),
        case("sum_axes", vec![t(&[2, 3, 4], r)], vec![true], Box::new(|tp, x| tp.sum_axes(x[0], &[1]))),
        case("reshape", vec![t(&[2, 3, 4], r)], vec![true], Box::new(|tp, x| tp.reshape(x[0], &[6, 4]))),
        case("concat", vec![t(&[2, 3], r), t(&[2, 2], r), t(&[2, 1], r)], vec![true, true, true], Box::new(|tp, x| tp.concat(x, 1))),
        case("slice", vec![t(&[5, 3], r)], vec![true], Box::new(|tp, x| tp.slice(x[0], 0, 1, 4))),
        case("row_sq_dist", vec![t(&[3, 2, 2], r), t(&[3, 2, 2], r)], vec![true, true], Box::new(|tp, x| tp.row_sq_dist(x[0], x[1]))),
    ];
    let mask: Vec<f64> = (0..12).map(|_| if r.bernoulli(0.5) { 2.0 } else { 0.0 }).collect();
    v.push(case(
        "dropout_mask_apply",
        vec![t(&[4, 3], r), Tensor::new(vec![4, 3], mask).unwrap()],
        vec![true, false],
        Box::new(|tp, x| tp.dropout_mask_apply(x[0], x[1])),
    ));
    v.push(case(
        "gaussian_noise_add",
        vec![t(&[4, 3], r), t(&[4, 3], r)],
        vec![true, false],
        Box::new(|tp, x| tp.gaussian_noise_add(x[0], x[1])),
    ));
    v
}

/// Random weights for the output so that no op hides behind a plain sum.
fn weighted_loss(tape: &mut Tape, out: NodeId) -> Result<NodeId, TensorError> {
    let shape = tape.shape(out).to_vec();
    let w = Tensor::new(shape.clone(), RngState::new(77).normals(shape.iter().product(), 1.0))?;
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn op_loss(c: &OpCase, inputs: &[Tensor]) -> (f64, Vec<Option<Vec<f64>>>) {
    let mut tape = Tape::new(Precision::F64);
    let ids: Vec<NodeId> = inputs
        .iter()
        .zip(&c.differentiable)
        .map(|(x, &d)| if d { tape.leaf(x.clone()) } else { tape.constant(x.clone()) })
        .collect();
    let out = (c.build)(&mut tape, &ids).unwrap();
    let loss = weighted_loss(&mut tape, out).unwrap();
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).unwrap();
    (value, ids.iter().map(|&id| grads.get(id).map(<[f64]>::to_vec)).collect())
}

/// Largest relative error over the op's differentiable inputs.
pub fn op_grad_error(c: &OpCase) -> f64 {
    let (_, analytic) = op_loss(c, &c.inputs);
    let mut worst: f64 = 0.0;
    for (k, d) in c.differentiable.iter().enumerate() {
        if !d {
            continue;
        }
        let numeric: Vec<f64> = (0..c.inputs[k].numel())
            .map(|i| {
                let mut plus = c.inputs.clone();
                plus[k].data_mut()[i] += H;
                let mut minus = c.inputs.clone();
                minus[k].data_mut()[i] -= H;
                (op_loss(c, &plus).0 - op_loss(c, &minus).0) / (2.0 * H)
            })
            .collect();
        let a = analytic[k].clone().unwrap_or_else(|| vec![0.0; numeric.len()]);
        worst = worst.max(rel_err(&a, &numeric));
    }
    worst
}

/// A small network with parameters large enough to leave the linear regime
/// of every activation, and a matching input batch.
pub struct NetCase {
    pub label: String,
    pub spec: NetworkSpec,
    pub params: Parameters,
    pub input: Tensor,
}

fn pick_activation(rng: &mut RngState) -> Activation {
    match rng.below(4) {
        0 => Activation::LeakyRelu { alpha: rng.uniform(0.05, 0.3) },
        1 => Activation::Relu,
        2 => Activation::Tanh,
        _ => Activation::Sigmoid,
    }
}

pub fn random_networks(count: usize, seed: u64) -> Vec<NetCase> {
    let mut rng = RngState::new(seed);
    let mut out = Vec::new();
    for i in 0..count {
        let rng = &mut rng;
        let (label, spec) = match i % 5 {
            0 => {
                let input = 1 + rng.below(4);
                let mut layers = Vec::new();
                for _ in 0..1 + rng.below(3) {
                    let mut l = LayerSpec::dense(2 + rng.below(5), pick_activation(rng));
                    l.weight_norm = rng.bernoulli(0.3);
                    layers.push(l);
                    if rng.bernoulli(0.3) {
                        layers.push(LayerSpec::batchnorm(pick_activation(rng)));
                    }
                }
                layers.push(LayerSpec::dense(1, Activation::Sigmoid));
                let spec = NetworkSpec {
                    role: NetworkRole::Discriminator,
                    layers,
                    input_shape: vec![input],
                    latent_dim: None,
                    latent_prior: LatentPrior::StandardNormal,
                };
                ("dense discriminator".to_string(), spec)
            }
            1 => {
                let opts = PresetOptions {
                    hidden: 3 + rng.below(4),
                    latent_dim: 2 + rng.below(3),
                    batchnorm: Some(rng.bernoulli(0.5)),
                    leaky_alpha: rng.uniform(0.05, 0.3),
                    ..Default::default()
                };
                ("mlp generator".to_string(), nn::presets::generator(Preset::MlpSmall, &[1 + rng.below(3)], &opts).unwrap())
            }
            2 => {
                let opts = PresetOptions { channels: 2, hidden: 3, weight_norm: rng.bernoulli(0.5), batchnorm: Some(rng.bernoulli(0.5)), ..Default::default() };
                ("conv discriminator".to_string(), nn::presets::discriminator(Preset::ConvSmall, &[1, 4, 4], &opts).unwrap())
            }
            3 => {
                let opts = PresetOptions { channels: 2, latent_dim: 3, batchnorm: Some(rng.bernoulli(0.5)), ..Default::default() };
                ("conv generator".to_string(), nn::presets::generator(Preset::ConvSmall, &[1, 4, 4], &opts).unwrap())
            }
            _ => {
                let opts = PresetOptions { hidden: 4, code_dim: 2, latent_dim: 2, ..Default::default() };
                if rng.bernoulli(0.5) {
                    ("mlp autoencoder".to_string(), nn::presets::autoencoder(Preset::MlpSmall, &[3], &opts).unwrap())
                } else {
                    ("mlp encoder".to_string(), nn::presets::encoder(Preset::MlpSmall, &[3], &opts).unwrap())
                }
            }
        };
        let mut params = build_network(&spec, rng).unwrap();
        let gain = rng.uniform(10.0, 40.0);
        for w in params.trainable_mut() {
            w.data_mut().iter_mut().for_each(|v| *v *= gain);
        }
        let batch = 3;
        let input = if spec.role == NetworkRole::Generator {
            sample_latent(&spec, batch, rng).unwrap()
        } else {
            let mut shape = vec![batch];
            shape.extend(&spec.input_shape);
            t(&shape, rng)
        };
        out.push(NetCase { label: format!("#{i} {label}"), spec, params, input });
    }
    out
}

fn net_loss(c: &NetCase, params: &Parameters) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::new(Precision::F64);
    let binding = params.bind(&mut tape, true);
    let x = tape.constant(c.input.clone());
    let trace =
        forward_on_tape(&mut tape, &c.spec, params, &binding, x, Mode::Train, &mut RngState::new(0), ForwardHooks::default()).unwrap();
    let loss = weighted_loss(&mut tape, trace.output).unwrap();
    let value = tape.value(loss).item();
    let grads = tape.backward(loss).unwrap();
    (value, binding.trainable_grads(params, &grads))
}

/// Relative error of all trainable-parameter gradients, concatenated, and
/// the analytic gradient's norm.
pub fn net_grad_error(c: &NetCase) -> (f64, f64) {
    let (_, analytic) = net_loss(c, &c.params);
    let mut numeric = Vec::new();
    for (k, size) in c.params.trainable_sizes().into_iter().enumerate() {
        for i in 0..size {
            let mut plus = c.params.clone();
            plus.trainable_mut()[k].data_mut()[i] += H;
            let mut minus = c.params.clone();
            minus.trainable_mut()[k].data_mut()[i] -= H;
            numeric.push((net_loss(c, &plus).0 - net_loss(c, &minus).0) / (2.0 * H));
        }
    }
    let analytic = analytic.concat();
    let norm = analytic.iter().map(|g| g * g).sum::<f64>().sqrt();
    (rel_err(&analytic, &numeric), norm)
}
