use serde::{Deserialize, Serialize};

use super::config::{Defense, InjectionSite, TrainConfig};
use super::dp::{dp_apply, DpInput};
use super::loss::{bce_with_logits, generator_objective, kl_divergence, smooth_label_pair};
use super::TrainError;
use crate::nn::{
    self, forward_on_tape, reparameterize, sample_latent, split_encoding, ForwardHooks, LayerKind, Mode, Network, NetworkSpec,
    Preset, PresetOptions,
};
use crate::tensor::{NodeId, OptimizerConfig, OptimizerState, Precision, RngState, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Gan,
    VaeGan,
    Began,
}

impl ModelFamily {
    /// Family-specific metric columns after `d_loss, g_loss`.
    pub fn aux_columns(self) -> &'static [&'static str] {
        match self {
            ModelFamily::Gan => &[],
            ModelFamily::VaeGan => &["kl", "recon"],
            ModelFamily::Began => &["k", "convergence"],
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s {
            "gan" => Ok(ModelFamily::Gan),
            "vae_gan" | "vaegan" => Ok(ModelFamily::VaeGan),
            "began" => Ok(ModelFamily::Began),
            other => Err(TrainError::Config(format!("unknown model family `{other}`"))),
        }
    }
}

/// A network together with its optimizer memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    pub net: Network,
    pub opt: OptimizerState,
}

impl Learner {
    /// Rounds `net`'s parameters to `precision`.
    pub fn new(mut net: Network, optimizer: OptimizerConfig, precision: Precision) -> Self {
        for e in net.params.entries_mut() {
            precision.round_slice(e.tensor.data_mut());
        }
        let opt = OptimizerState::new(optimizer, precision, net.params.trainable_sizes());
        Self { net, opt }
    }

    fn apply(&mut self, grads: &[Vec<f64>]) -> Result<(), TrainError> {
        let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut ps = self.net.params.trainable_mut();
        self.opt.step(&mut ps, &refs)?;
        Ok(())
    }

    fn apply_buffers(&mut self, updates: Vec<(usize, Tensor)>) {
        let entries = self.net.params.entries_mut();
        for (i, t) in updates {
            entries[i].tensor = t;
        }
    }
}

/// BEGAN equilibrium controller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeganState {
    pub k: f64,
    pub gamma: f64,
    pub lambda_k: f64,
}

impl BeganState {
    /// `k ← clamp(k + λ_k (γ·L(x) − L(G(z))), 0, 1)`.
    pub fn update(&mut self, loss_real: f64, loss_fake: f64) {
        self.k = (self.k + self.lambda_k * (self.gamma * loss_real - loss_fake)).clamp(0.0, 1.0);
    }

    /// `M = L(x) + |γ·L(x) − L(G(z))|`.
    pub fn convergence(&self, loss_real: f64, loss_fake: f64) -> f64 {
        loss_real + (self.gamma * loss_real - loss_fake).abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepLosses {
    pub d_loss: f64,
    pub g_loss: f64,
    /// Values for [`ModelFamily::aux_columns`].
    pub aux: Vec<f64>,
}

/// Generator, discriminator and (for VAE-GAN) encoder of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub family: ModelFamily,
    pub generator: Learner,
    pub discriminator: Learner,
    pub encoder: Option<Learner>,
    pub began: Option<BeganState>,
}

impl GanModel {
    pub fn new(
        family: ModelFamily,
        generator: NetworkSpec,
        discriminator: NetworkSpec,
        encoder: Option<NetworkSpec>,
        cfg: &TrainConfig,
        rng: &mut RngState,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        match (family, discriminator.role, &encoder) {
            (ModelFamily::Began, nn::NetworkRole::Autoencoder, None)
            | (ModelFamily::Gan, nn::NetworkRole::Discriminator, None)
            | (ModelFamily::VaeGan, nn::NetworkRole::Discriminator, Some(_)) => {}
            _ => return Err(TrainError::Config(format!("networks do not fit a {family:?} model"))),
        }
        let learner = |spec: NetworkSpec, rng: &mut RngState| -> Result<Learner, TrainError> {
            Ok(Learner::new(Network::build(spec, rng)?, cfg.optimizer, cfg.precision))
        };
        let generator = learner(generator, rng)?;
        let discriminator = learner(discriminator, rng)?;
        let encoder = encoder.map(|e| learner(e, rng)).transpose()?;
        let began = (family == ModelFamily::Began)
            .then_some(BeganState { k: cfg.began.k0, gamma: cfg.began.gamma, lambda_k: cfg.began.lambda_k });
        Ok(Self { family, generator, discriminator, encoder, began })
    }

    /// Builds the preset architectures for `family`, applying architectural
    /// defenses from `cfg.defense` to the discriminator.
    pub fn from_preset(
        family: ModelFamily,
        preset: Preset,
        record_shape: &[usize],
        opts: &PresetOptions,
        cfg: &TrainConfig,
        rng: &mut RngState,
    ) -> Result<Self, TrainError> {
        let mut d_opts = opts.clone();
        match cfg.defense {
            Defense::Dropout { p } => d_opts.discriminator_dropout = p,
            Defense::WeightNorm => d_opts.weight_norm = true,
            _ => {}
        }
        let g = nn::presets::generator(preset, record_shape, opts)?;
        let d = match family {
            ModelFamily::Began => nn::presets::autoencoder(preset, record_shape, &d_opts)?,
            _ => nn::presets::discriminator(preset, record_shape, &d_opts)?,
        };
        let e = (family == ModelFamily::VaeGan).then(|| nn::presets::encoder(preset, record_shape, opts)).transpose()?;
        Self::new(family, g, d, e, cfg, rng)
    }

    pub fn step(&mut self, real: &Tensor, cfg: &TrainConfig, rng: &mut RngState) -> Result<StepLosses, TrainError> {
        match self.family {
            ModelFamily::Gan => gan_step(self, real, cfg, rng),
            ModelFamily::VaeGan => vaegan_step(self, real, cfg, rng),
            ModelFamily::Began => began_step(self, real, cfg, rng),
        }
    }
}

fn hooks(cfg: &TrainConfig) -> ForwardHooks {
    match cfg.defense {
        Defense::Dp(dp) if dp.injection_site == InjectionSite::ForwardPass => {
            ForwardHooks { hidden_noise_sigma: Some(dp.noise_sigma) }
        }
        _ => ForwardHooks::default(),
    }
}

/// Train-mode generator output for latent batch `z` (buffers untouched).
pub fn generate(g: &Network, z: &Tensor, precision: Precision, rng: &mut RngState) -> Result<Tensor, TrainError> {
    let mut tape = Tape::new(precision);
    let b = g.params.bind(&mut tape, false);
    let zn = tape.constant(z.clone());
    let t = forward_on_tape(&mut tape, &g.spec, &g.params, &b, zn, Mode::Train, rng, ForwardHooks::default())?;
    Ok(tape.value(t.output).clone())
}

/// Eval-mode samples from a generator: the black-box view of a model.
pub fn sample_generator(g: &Network, count: usize, rng: &mut RngState) -> Result<Tensor, TrainError> {
    let z = sample_latent(&g.spec, count, rng)?;
    let mut tape = Tape::new(Precision::F64);
    let b = g.params.bind(&mut tape, false);
    let zn = tape.constant(z);
    let t = forward_on_tape(&mut tape, &g.spec, &g.params, &b, zn, Mode::Eval, rng, ForwardHooks::default())?;
    Ok(tape.value(t.output).clone())
}

fn logits(tape: &mut Tape, d: &Network, binding: &nn::Binding, x: NodeId, cfg: &TrainConfig, rng: &mut RngState) -> Result<(NodeId, Vec<(usize, Tensor)>), TrainError> {
    let t = forward_on_tape(tape, &d.spec, &d.params, binding, x, Mode::Train, rng, hooks(cfg))?;
    Ok((t.pre_activation, t.buffer_updates))
}

/// One discriminator update: `real` labelled with real-role soft labels,
/// `fake` with fake-role ones (sharing one flip decision). Returns the loss.
pub fn discriminator_update(
    d: &mut Learner,
    real: &Tensor,
    fake: &Tensor,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<f64, TrainError> {
    let (yr, yf) = smooth_label_pair(real.rows(), fake.rows(), cfg, rng);
    if let Defense::Dp(dp) = cfg.defense {
        if dp.injection_site == InjectionSite::Gradient {
            return dp_discriminator_update(d, real, fake, &yr, &yf, cfg, rng);
        }
    }
    let mut tape = Tape::new(cfg.precision);
    let binding = d.net.params.bind(&mut tape, true);
    let xr = tape.constant(real.clone());
    let (lr, mut buffers) = logits(&mut tape, &d.net, &binding, xr, cfg, rng)?;
    let xf = tape.constant(fake.clone());
    let (lf, fake_buffers) = logits(&mut tape, &d.net, &binding, xf, cfg, rng)?;
    buffers.extend(fake_buffers);
    let loss_r = bce_with_logits(&mut tape, lr, &yr)?;
    let loss_f = bce_with_logits(&mut tape, lf, &yf)?;
    let loss = tape.add(loss_r, loss_f)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let g = binding.trainable_grads(&d.net.params, &grads);
    d.apply(&g)?;
    d.apply_buffers(buffers);
    Ok(value)
}

/// DP-SGD discriminator update: each real record's loss gradient is
/// clipped and the sum is noised; the generated-sample term carries no
/// training data and enters unclipped.
fn dp_discriminator_update(
    d: &mut Learner,
    real: &Tensor,
    fake: &Tensor,
    yr: &[f64],
    yf: &[f64],
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<f64, TrainError> {
    let dp = cfg.defense.dp().expect("dp defense");
    if d.net.spec.layers.iter().any(|l| matches!(l.kind, LayerKind::BatchNorm)) {
        return Err(TrainError::Config("per-record DP gradients need a discriminator without batch norm".into()));
    }
    let sizes = d.net.params.trainable_sizes();
    let mut per_record = Vec::with_capacity(real.rows());
    let mut loss_r = 0.0;
    for i in 0..real.rows() {
        let mut tape = Tape::new(cfg.precision);
        let binding = d.net.params.bind(&mut tape, true);
        let x = tape.constant(real.select_rows(&[i]));
        let (l, _) = logits(&mut tape, &d.net, &binding, x, cfg, rng)?;
        let loss = bce_with_logits(&mut tape, l, &yr[i..=i])?;
        loss_r += tape.value(loss).item();
        let grads = tape.backward(loss)?;
        per_record.push(binding.trainable_grads(&d.net.params, &grads).concat());
    }
    let noised = dp_apply(DpInput::PerRecordGradients(&per_record), dp, rng)?;

    let mut tape = Tape::new(cfg.precision);
    let binding = d.net.params.bind(&mut tape, true);
    let xf = tape.constant(fake.clone());
    let (lf, _) = logits(&mut tape, &d.net, &binding, xf, cfg, rng)?;
    let loss_f = bce_with_logits(&mut tape, lf, yf)?;
    let loss_f_value = tape.value(loss_f).item();
    let grads = tape.backward(loss_f)?;
    let fake_grads = binding.trainable_grads(&d.net.params, &grads);

    let b = real.rows() as f64;
    let mut offset = 0;
    let mut total = Vec::with_capacity(sizes.len());
    for (n, fg) in sizes.iter().zip(fake_grads) {
        total.push(noised[offset..offset + n].iter().zip(fg).map(|(a, f)| a / b + f).collect());
        offset += n;
    }
    d.apply(&total)?;
    Ok(loss_r / b + loss_f_value)
}

/// Records the generator pass of an update on `tape`: fresh latent draw,
/// generated batch and generator objective against `d`.
struct GeneratorPass {
    binding: nn::Binding,
    loss: NodeId,
    buffers: Vec<(usize, Tensor)>,
}

fn generator_pass(tape: &mut Tape, g: &Network, d: &Network, batch: usize, cfg: &TrainConfig, rng: &mut RngState) -> Result<GeneratorPass, TrainError> {
    let z = sample_latent(&g.spec, batch, rng)?;
    let binding = g.params.bind(tape, true);
    let db = d.params.bind(tape, false);
    let zn = tape.constant(z);
    let tg = forward_on_tape(tape, &g.spec, &g.params, &binding, zn, Mode::Train, rng, ForwardHooks::default())?;
    let (l, _) = logits(tape, d, &db, tg.output, cfg, rng)?;
    let loss = generator_objective(tape, l, cfg.generator_loss)?;
    Ok(GeneratorPass { binding, loss, buffers: tg.buffer_updates })
}

/// One generator update against a fixed discriminator.
pub fn generator_update(g: &mut Learner, d: &Network, batch: usize, cfg: &TrainConfig, rng: &mut RngState) -> Result<f64, TrainError> {
    let mut tape = Tape::new(cfg.precision);
    let pass = generator_pass(&mut tape, &g.net, d, batch, cfg, rng)?;
    let value = tape.value(pass.loss).item();
    let grads = tape.backward(pass.loss)?;
    let gr = pass.binding.trainable_grads(&g.net.params, &grads);
    g.apply(&gr)?;
    g.apply_buffers(pass.buffers);
    Ok(value)
}

/// One discriminator update on `real` against `G(z)`, then one generator
/// update.
pub fn gan_step(model: &mut GanModel, real: &Tensor, cfg: &TrainConfig, rng: &mut RngState) -> Result<StepLosses, TrainError> {
    let b = real.rows();
    let z = sample_latent(&model.generator.net.spec, b, rng)?;
    let fake = generate(&model.generator.net, &z, cfg.precision, rng)?;
    let d_loss = discriminator_update(&mut model.discriminator, real, &fake, cfg, rng)?;
    let g_loss = generator_update(&mut model.generator, &model.discriminator.net, b, cfg, rng)?;
    Ok(StepLosses { d_loss, g_loss, aux: vec![] })
}

/// VAE-GAN step: discriminator as in [`gan_step`]; encoder on
/// `KL + w·recon`; generator on `GAN loss + w·recon`, where `recon` is
/// the squared distance between the discriminator's penultimate features
/// of `x` and of its reconstruction.
pub fn vaegan_step(model: &mut GanModel, real: &Tensor, cfg: &TrainConfig, rng: &mut RngState) -> Result<StepLosses, TrainError> {
    let b = real.rows();
    let z = sample_latent(&model.generator.net.spec, b, rng)?;
    let fake = generate(&model.generator.net, &z, cfg.precision, rng)?;
    let d_loss = discriminator_update(&mut model.discriminator, real, &fake, cfg, rng)?;

    let encoder = model.encoder.as_mut().ok_or_else(|| TrainError::Config("VAE-GAN model without encoder".into()))?;
    let (g, d) = (&model.generator.net, &model.discriminator.net);
    let mut tape = Tape::new(cfg.precision);
    let pass = generator_pass(&mut tape, g, d, b, cfg, rng)?;

    let eb = encoder.net.params.bind(&mut tape, true);
    let db = d.params.bind(&mut tape, false);
    let x = tape.constant(real.clone());
    let te = forward_on_tape(&mut tape, &encoder.net.spec, &encoder.net.params, &eb, x, Mode::Train, rng, ForwardHooks::default())?;
    let latent = g.spec.latent_dim.ok_or_else(|| TrainError::Config("generator has no latent_dim".into()))?;
    let (mu, log_var) = split_encoding(&mut tape, te.output, latent)?;
    let kl = kl_divergence(&mut tape, mu, log_var)?;
    let z_enc = reparameterize(&mut tape, mu, log_var, rng)?;
    let tr = forward_on_tape(&mut tape, &g.spec, &g.params, &pass.binding, z_enc, Mode::Train, rng, ForwardHooks::default())?;
    let fx = forward_on_tape(&mut tape, &d.spec, &d.params, &db, x, Mode::Eval, rng, ForwardHooks::default())?;
    let fr = forward_on_tape(&mut tape, &d.spec, &d.params, &db, tr.output, Mode::Eval, rng, ForwardHooks::default())?;
    let dist = tape.row_sq_dist(fx.features, fr.features)?;
    let recon = tape.mean(dist)?;
    let weighted = tape.scale(recon, cfg.vae.recon_weight)?;
    let total = tape.add(pass.loss, kl)?;
    let total = tape.add(total, weighted)?;
    let (gan_v, kl_v, recon_v) = (tape.value(pass.loss).item(), tape.value(kl).item(), tape.value(recon).item());
    let grads = tape.backward(total)?;
    let gg = pass.binding.trainable_grads(&g.params, &grads);
    let eg = eb.trainable_grads(&encoder.net.params, &grads);
    encoder.apply(&eg)?;
    encoder.apply_buffers(te.buffer_updates);
    model.generator.apply(&gg)?;
    model.generator.apply_buffers(pass.buffers);
    Ok(StepLosses { d_loss, g_loss: gan_v + cfg.vae.recon_weight * recon_v, aux: vec![kl_v, recon_v] })
}

/// Eval-mode feature-space reconstruction distance of `x` through
/// `encoder` and `generator`, measured with discriminator `d`.
pub fn reconstruction_distance(encoder: &Network, generator: &Network, d: &Network, x: &Tensor, rng: &mut RngState) -> Result<f64, TrainError> {
    let latent = generator.spec.latent_dim.ok_or_else(|| TrainError::Config("generator has no latent_dim".into()))?;
    let mut tape = Tape::new(Precision::F64);
    let (eb, gb, db) = (encoder.params.bind(&mut tape, false), generator.params.bind(&mut tape, false), d.params.bind(&mut tape, false));
    let xn = tape.constant(x.clone());
    let te = forward_on_tape(&mut tape, &encoder.spec, &encoder.params, &eb, xn, Mode::Eval, rng, ForwardHooks::default())?;
    let (mu, log_var) = split_encoding(&mut tape, te.output, latent)?;
    let z = reparameterize(&mut tape, mu, log_var, rng)?;
    let tr = forward_on_tape(&mut tape, &generator.spec, &generator.params, &gb, z, Mode::Eval, rng, ForwardHooks::default())?;
    let fx = forward_on_tape(&mut tape, &d.spec, &d.params, &db, xn, Mode::Eval, rng, ForwardHooks::default())?;
    let fr = forward_on_tape(&mut tape, &d.spec, &d.params, &db, tr.output, Mode::Eval, rng, ForwardHooks::default())?;
    let dist = tape.row_sq_dist(fx.features, fr.features)?;
    let m = tape.mean(dist)?;
    Ok(tape.value(m).item())
}

fn reconstruction_loss(tape: &mut Tape, d: &Network, binding: &nn::Binding, x: NodeId, rng: &mut RngState, cfg: &TrainConfig) -> Result<(NodeId, Vec<(usize, Tensor)>), TrainError> {
    let t = forward_on_tape(tape, &d.spec, &d.params, binding, x, Mode::Train, rng, hooks(cfg))?;
    let diff = tape.sub(x, t.output)?;
    let a = tape.abs(diff)?;
    Ok((tape.mean(a)?, t.buffer_updates))
}

/// BEGAN step with an autoencoder discriminator and `L(v) = mean |v − D(v)|`:
/// discriminator loss `L(x) − k·L(G(z))`, generator loss `L(G(z))`, both
/// from the pre-update networks, then the `k` update.
pub fn began_step(model: &mut GanModel, real: &Tensor, cfg: &TrainConfig, rng: &mut RngState) -> Result<StepLosses, TrainError> {
    let mut state = model.began.ok_or_else(|| TrainError::Config("BEGAN model without equilibrium state".into()))?;
    let b = real.rows();
    let z = sample_latent(&model.generator.net.spec, b, rng)?;
    let fake = generate(&model.generator.net, &z, cfg.precision, rng)?;
    let (g, d) = (&model.generator.net, &model.discriminator.net);

    let mut tape = Tape::new(cfg.precision);
    let db = d.params.bind(&mut tape, true);
    let x = tape.constant(real.clone());
    let (lx, mut buffers) = reconstruction_loss(&mut tape, d, &db, x, rng, cfg)?;
    let f = tape.constant(fake);
    let (lf, fb) = reconstruction_loss(&mut tape, d, &db, f, rng, cfg)?;
    buffers.extend(fb);
    let klf = tape.scale(lf, state.k)?;
    let d_loss = tape.sub(lx, klf)?;
    let (lx_v, lf_v, d_v) = (tape.value(lx).item(), tape.value(lf).item(), tape.value(d_loss).item());
    let grads = tape.backward(d_loss)?;
    let d_grads = db.trainable_grads(&d.params, &grads);

    let mut tape = Tape::new(cfg.precision);
    let gb = g.params.bind(&mut tape, true);
    let db2 = d.params.bind(&mut tape, false);
    let zn = tape.constant(z);
    let tg = forward_on_tape(&mut tape, &g.spec, &g.params, &gb, zn, Mode::Train, rng, ForwardHooks::default())?;
    let (lg, _) = reconstruction_loss(&mut tape, d, &db2, tg.output, rng, cfg)?;
    let g_v = tape.value(lg).item();
    let grads = tape.backward(lg)?;
    let g_grads = gb.trainable_grads(&g.params, &grads);

    model.discriminator.apply(&d_grads)?;
    model.discriminator.apply_buffers(buffers);
    model.generator.apply(&g_grads)?;
    model.generator.apply_buffers(tg.buffer_updates);
    let convergence = state.convergence(lx_v, lf_v);
    state.update(lx_v, lf_v);
    model.began = Some(state);
    Ok(StepLosses { d_loss: d_v, g_loss: g_v, aux: vec![state.k, convergence] })
}
