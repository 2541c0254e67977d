use serde::{Deserialize, Serialize};

use super::oracle::Sampler;
use super::rank::{rank_scores, score_and_rank, PredictionRanking, ScoreVector};
use super::AttackError;
use crate::data::AuxKnowledge;
use crate::nn::{self, sample_latent, Network, Preset, PresetOptions};
use crate::tensor::{RngState, Tensor};
use crate::train::{
    discriminator_update, generate, generator_update, sample_generator, seed_streams, Checkpoint, GanModel, Learner, ModelFamily, TrainConfig,
    TrainError,
};

pub const BLACKBOX_DEFAULT_STEPS: u64 = 50_000;
pub const GENERATIVE_AUX_DEFAULT_STEPS: u64 = 15_000;
pub const DEFAULT_AUX_DELAY: u64 = 1_000;
pub const DEFAULT_EVAL_INTERVAL: u64 = 500;
pub const DEFAULT_NUM_GENERATED: usize = 256;

/// Networks and schedule of a locally trained attacker model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackerConfig {
    pub preset: Preset,
    pub options: PresetOptions,
    /// Batch size, optimizer, label handling and seed of attacker training.
    pub training: TrainConfig,
    pub steps: u64,
    /// Steps between intermediate rankings handed to the evaluation hook.
    pub eval_interval: u64,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        Self {
            preset: Preset::MlpSmall,
            options: PresetOptions::default(),
            training: TrainConfig::default(),
            steps: BLACKBOX_DEFAULT_STEPS,
            eval_interval: DEFAULT_EVAL_INTERVAL,
        }
    }
}

impl AttackerConfig {
    fn validate(&self) -> Result<(), AttackError> {
        if self.eval_interval == 0 {
            return Err(AttackError::Config("eval_interval must be at least 1".into()));
        }
        self.training.validate()?;
        Ok(())
    }
}

/// Called with `(step, ranking)` every `eval_interval` attacker steps.
pub type EvalHook<'a> = &'a mut dyn FnMut(u64, &PredictionRanking);

/// Target-batch versus shadow-batch counts of a shadow attack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamMix {
    pub target: u64,
    pub shadow: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub scores: ScoreVector,
    pub ranking: PredictionRanking,
    /// Target records drawn.
    pub queries: u64,
    pub steps: u64,
    pub mix: Option<StreamMix>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminativeSetting {
    TestOnly,
    TrainAndTest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerativeSetting {
    TrainOnly,
    TrainAndTest,
}

fn check_claim(x: &Tensor, claimed_n: usize) -> Result<(), AttackError> {
    if claimed_n == 0 || claimed_n > x.rows() {
        return Err(AttackError::Config(format!("claimed_n {claimed_n} must lie in 1..={}", x.rows())));
    }
    Ok(())
}

/// Scores the candidates with a copy of the target's own discriminator.
pub fn whitebox_attack(target: &Checkpoint, x: &Tensor, claimed_n: usize) -> Result<AttackOutcome, AttackError> {
    check_claim(x, claimed_n)?;
    let d = target
        .discriminator
        .as_ref()
        .ok_or_else(|| AttackError::UnsupportedTarget("the target artifact has no discriminator".into()))?;
    let (scores, ranking) = score_and_rank(d, x, claimed_n)?;
    Ok(AttackOutcome { scores, ranking, queries: 0, steps: 0, mix: None })
}

fn latent_fake(g: &Network, b: usize, cfg: &TrainConfig, rng: &mut RngState) -> Result<Tensor, AttackError> {
    let z = sample_latent(&g.spec, b, rng)?;
    Ok(generate(g, &z, cfg.precision, rng)?)
}

fn draw(pool: &Tensor, count: usize, rng: &mut RngState) -> Tensor {
    let idx: Vec<usize> = (0..count).map(|_| rng.below(pool.rows())).collect();
    pool.select_rows(&idx)
}

fn check_divergence(d: f64, g: f64, step: u64) -> Result<(), AttackError> {
    if d.is_finite() && g.is_finite() {
        Ok(())
    } else {
        Err(TrainError::Divergence { step, detail: "non-finite attacker loss".into(), last_checkpoint: None }.into())
    }
}

/// Per-step batches of the attacker GAN: `(real, fake)` given the step,
/// the oracle, the current attacker generator and the training stream.
type Streams<'s> = dyn FnMut(u64, &mut dyn Sampler, &Network, &mut RngState) -> Result<(Tensor, Tensor), AttackError> + 's;

fn attacker_gan(
    sampler: &mut dyn Sampler,
    x: &Tensor,
    claimed_n: usize,
    cfg: &AttackerConfig,
    streams: &mut Streams,
    mut hook: Option<EvalHook>,
) -> Result<AttackOutcome, AttackError> {
    check_claim(x, claimed_n)?;
    cfg.validate()?;
    let shape = sampler.record_shape().to_vec();
    let (mut init, mut rng) = seed_streams(cfg.training.seed);
    let mut model = GanModel::from_preset(ModelFamily::Gan, cfg.preset, &shape, &cfg.options, &cfg.training, &mut init)?;
    let start = sampler.queries();
    for step in 0..cfg.steps {
        let (real, fake) = streams(step, sampler, &model.generator.net, &mut rng)?;
        let dl = discriminator_update(&mut model.discriminator, &real, &fake, &cfg.training, &mut rng)?;
        let gl = generator_update(&mut model.generator, &model.discriminator.net, fake.rows(), &cfg.training, &mut rng)?;
        check_divergence(dl, gl, step + 1)?;
        if let Some(h) = hook.as_mut() {
            if (step + 1) % cfg.eval_interval == 0 {
                let (_, r) = score_and_rank(&model.discriminator.net, x, claimed_n)?;
                h(step + 1, &r);
            }
        }
    }
    let (scores, ranking) = score_and_rank(&model.discriminator.net, x, claimed_n)?;
    Ok(AttackOutcome { scores, ranking, queries: sampler.queries() - start, steps: cfg.steps, mix: None })
}

/// Trains a local GAN whose real stream is target samples, then ranks the
/// candidates with its discriminator.
pub fn blackbox_attack(
    sampler: &mut dyn Sampler,
    x: &Tensor,
    claimed_n: usize,
    cfg: &AttackerConfig,
    hook: Option<EvalHook>,
) -> Result<AttackOutcome, AttackError> {
    let b = cfg.training.batch_size;
    let t = cfg.training.clone();
    let mut streams = |_: u64, s: &mut dyn Sampler, g: &Network, rng: &mut RngState| -> Result<(Tensor, Tensor), AttackError> {
        Ok((s.sample(b)?, latent_fake(g, b, &t, rng)?))
    };
    attacker_gan(sampler, x, claimed_n, cfg, &mut streams, hook)
}

fn known_rows(x: &Tensor, aux: &AuxKnowledge) -> Result<(Tensor, Tensor), AttackError> {
    let n = x.rows();
    if let Some(&i) = aux.known_members.iter().chain(&aux.known_nonmembers).find(|&&i| i >= n) {
        return Err(AttackError::Config(format!("known index {i} outside the {n} candidates")));
    }
    if aux.known_members.iter().any(|i| aux.known_nonmembers.contains(i)) {
        return Err(AttackError::Config("a record is known both as member and as non-member".into()));
    }
    let mut all: Vec<usize> = aux.known_members.iter().chain(&aux.known_nonmembers).copied().collect();
    all.sort_unstable();
    all.dedup();
    if all.len() >= n {
        return Err(AttackError::Config("auxiliary knowledge covers every candidate; nothing is left to infer".into()));
    }
    Ok((x.select_rows(&aux.known_members), x.select_rows(&aux.known_nonmembers)))
}

/// A batch of `b` records, half drawn from `pool` (with replacement) and
/// half from `rest`.
fn half_mix(rest: Tensor, pool: &Tensor, b: usize, rng: &mut RngState) -> Result<Tensor, AttackError> {
    let k = b / 2;
    let rest = rest.select_rows(&(0..b - k).collect::<Vec<_>>());
    Ok(Tensor::concat_rows(&[&rest, &draw(pool, k, rng)])?)
}

/// Trains a standalone discriminator: real stream is target samples (plus
/// known members in `TrainAndTest`), fake stream is known non-members.
pub fn discriminative_aux_attack(
    sampler: &mut dyn Sampler,
    x: &Tensor,
    claimed_n: usize,
    aux: &AuxKnowledge,
    setting: DiscriminativeSetting,
    cfg: &AttackerConfig,
    mut hook: Option<EvalHook>,
) -> Result<AttackOutcome, AttackError> {
    check_claim(x, claimed_n)?;
    cfg.validate()?;
    let (members, nonmembers) = known_rows(x, aux)?;
    if nonmembers.rows() == 0 {
        return Err(AttackError::Config("the discriminative attack needs known non-members".into()));
    }
    if setting == DiscriminativeSetting::TrainAndTest && members.rows() == 0 {
        return Err(AttackError::Config("train_and_test needs known members".into()));
    }
    let shape = sampler.record_shape().to_vec();
    let (mut init, mut rng) = seed_streams(cfg.training.seed);
    let spec = nn::presets::discriminator(cfg.preset, &shape, &cfg.options)?;
    let mut d = Learner::new(Network::build(spec, &mut init)?, cfg.training.optimizer, cfg.training.precision);
    let b = cfg.training.batch_size;
    let start = sampler.queries();
    for step in 0..cfg.steps {
        let real = match setting {
            DiscriminativeSetting::TestOnly => sampler.sample(b)?,
            DiscriminativeSetting::TrainAndTest => {
                let s = sampler.sample(b - b / 2)?;
                half_mix(s, &members, b, &mut rng)?
            }
        };
        let fake = draw(&nonmembers, b, &mut rng);
        let dl = discriminator_update(&mut d, &real, &fake, &cfg.training, &mut rng)?;
        check_divergence(dl, 0.0, step + 1)?;
        if let Some(h) = hook.as_mut() {
            if (step + 1) % cfg.eval_interval == 0 {
                let (_, r) = score_and_rank(&d.net, x, claimed_n)?;
                h(step + 1, &r);
            }
        }
    }
    let (scores, ranking) = score_and_rank(&d.net, x, claimed_n)?;
    Ok(AttackOutcome { scores, ranking, queries: sampler.queries() - start, steps: cfg.steps, mix: None })
}

/// Black-box attacker GAN that, after `delay` steps, adds known members to
/// its real stream and (in `TrainAndTest`) known non-members to its fake
/// stream, each as half of the batch.
pub fn generative_aux_attack(
    sampler: &mut dyn Sampler,
    x: &Tensor,
    claimed_n: usize,
    aux: &AuxKnowledge,
    setting: GenerativeSetting,
    cfg: &AttackerConfig,
    delay: u64,
    hook: Option<EvalHook>,
) -> Result<AttackOutcome, AttackError> {
    check_claim(x, claimed_n)?;
    let (members, nonmembers) = known_rows(x, aux)?;
    if members.rows() == 0 {
        return Err(AttackError::Config("the generative attack needs known members".into()));
    }
    if setting == GenerativeSetting::TrainAndTest && nonmembers.rows() == 0 {
        return Err(AttackError::Config("train_and_test needs known non-members".into()));
    }
    let b = cfg.training.batch_size;
    let t = cfg.training.clone();
    let mut streams = |step: u64, s: &mut dyn Sampler, g: &Network, rng: &mut RngState| -> Result<(Tensor, Tensor), AttackError> {
        if step < delay {
            return Ok((s.sample(b)?, latent_fake(g, b, &t, rng)?));
        }
        let real = half_mix(s.sample(b - b / 2)?, &members, b, rng)?;
        let fake = match setting {
            GenerativeSetting::TrainOnly => latent_fake(g, b, &t, rng)?,
            GenerativeSetting::TrainAndTest => {
                let f = latent_fake(g, b - b / 2, &t, rng)?;
                half_mix(f, &nonmembers, b, rng)?
            }
        };
        Ok((real, fake))
    };
    attacker_gan(sampler, x, claimed_n, cfg, &mut streams, hook)
}

/// Ranks candidates by ascending mean Euclidean distance to
/// `num_generated` target samples.
pub fn euclidean_attack(
    sampler: &mut dyn Sampler,
    x: &Tensor,
    claimed_n: usize,
    num_generated: usize,
) -> Result<AttackOutcome, AttackError> {
    check_claim(x, claimed_n)?;
    if num_generated == 0 {
        return Err(AttackError::Config("num_generated must be at least 1".into()));
    }
    let start = sampler.queries();
    let gen = sampler.sample(num_generated)?;
    if gen.row_len() != x.row_len() {
        return Err(AttackError::Shape { expected: sampler.record_shape().to_vec(), got: x.shape()[1..].to_vec() });
    }
    let mean_dist: Vec<f64> = (0..x.rows())
        .map(|i| {
            let r = x.row(i);
            (0..gen.rows())
                .map(|j| r.iter().zip(gen.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .sum::<f64>()
                / gen.rows() as f64
        })
        .collect();
    let scores: Vec<f64> = mean_dist.iter().map(|d| -d).collect();
    let ranking = rank_scores(&scores, claimed_n)?;
    Ok(AttackOutcome { scores: ScoreVector(scores), ranking, queries: sampler.queries() - start, steps: 0, mix: None })
}

/// A GAN trained for `cfg.steps` on `members` (batches drawn with
/// replacement); returns its generator.
pub fn train_shadow(members: &Tensor, cfg: &AttackerConfig) -> Result<Network, AttackError> {
    if members.rows() == 0 {
        return Err(AttackError::Config("the shadow model needs known members".into()));
    }
    cfg.validate()?;
    let mut root = RngState::new(cfg.training.seed);
    let (mut init, mut rng) = (root.fork("shadow/init"), root.fork("shadow/train"));
    let shape = members.shape()[1..].to_vec();
    let mut model = GanModel::from_preset(ModelFamily::Gan, cfg.preset, &shape, &cfg.options, &cfg.training, &mut init)?;
    let b = cfg.training.batch_size;
    for step in 0..cfg.steps {
        let real = draw(members, b, &mut rng);
        let fake = latent_fake(&model.generator.net, b, &cfg.training, &mut rng)?;
        let dl = discriminator_update(&mut model.discriminator, &real, &fake, &cfg.training, &mut rng)?;
        let gl = generator_update(&mut model.generator, &model.discriminator.net, b, &cfg.training, &mut rng)?;
        check_divergence(dl, gl, step + 1)?;
    }
    Ok(model.generator.net)
}

/// Shadow-model attack: a shadow GAN is trained on the known members, then
/// an attacker GAN whose real batches come from the target or the shadow
/// generator with equal probability, one draw per batch.
pub fn shadow_attack(
    sampler: &mut dyn Sampler,
    x: &Tensor,
    claimed_n: usize,
    aux: &AuxKnowledge,
    cfg: &AttackerConfig,
    hook: Option<EvalHook>,
) -> Result<AttackOutcome, AttackError> {
    check_claim(x, claimed_n)?;
    let (members, _) = known_rows(x, aux)?;
    let shadow = train_shadow(&members, cfg)?;
    let b = cfg.training.batch_size;
    let t = cfg.training.clone();
    let mut mix = StreamMix::default();
    let mix_ref = &mut mix;
    let mut streams = |_: u64, s: &mut dyn Sampler, g: &Network, rng: &mut RngState| -> Result<(Tensor, Tensor), AttackError> {
        let real = if rng.bernoulli(0.5) {
            mix_ref.shadow += 1;
            sample_generator(&shadow, b, rng)?
        } else {
            mix_ref.target += 1;
            s.sample(b)?
        };
        Ok((real, latent_fake(g, b, &t, rng)?))
    };
    let mut out = attacker_gan(sampler, x, claimed_n, cfg, &mut streams, hook)?;
    out.mix = Some(mix);
    Ok(out)
}
