use proptest::prelude::*;

use super::*;
use crate::data::{split_random_fraction, synth_generate, AuxKnowledge, SyntheticSpec};
use crate::nn::{Network, Preset, PresetOptions};
use crate::tensor::{RngState, Tensor};
use crate::train::{Checkpoint, GanModel, ModelFamily, TrainConfig};

/// Replays fixed records, cycling.
struct Replay {
    records: Tensor,
    next: usize,
    queries: u64,
}

impl Replay {
    fn new(records: Tensor) -> Self {
        Self { records, next: 0, queries: 0 }
    }
}

impl Sampler for Replay {
    fn record_shape(&self) -> &[usize] {
        &self.records.shape()[1..]
    }

    fn sample(&mut self, count: usize) -> Result<Tensor, AttackError> {
        let idx: Vec<usize> = (0..count).map(|k| (self.next + k) % self.records.rows()).collect();
        self.next += count;
        self.queries += count as u64;
        Ok(self.records.select_rows(&idx))
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}

fn small_cfg(steps: u64, seed: u64) -> AttackerConfig {
    AttackerConfig {
        options: PresetOptions { hidden: 16, latent_dim: 4, ..Default::default() },
        training: TrainConfig { seed, batch_size: 8, ..Default::default() },
        steps,
        eval_interval: 10,
        ..Default::default()
    }
}

fn ring(count: usize, seed: u64) -> Tensor {
    synth_generate(&SyntheticSpec::ring(8, 0.8, 0.1, count, seed)).unwrap().records().clone()
}

#[test]
fn ranking_takes_top_scores() {
    let r = rank_scores(&[0.9, 0.8, 0.2, 0.1], 2).unwrap();
    assert_eq!(r.predicted_members(), &[0, 1]);
    let r = rank_scores(&[0.1, 0.8, 0.2, 0.9], 2).unwrap();
    assert_eq!(r.predicted_members(), &[3, 1]);
}

#[test]
fn equal_scores_fall_back_to_index_order() {
    let r = rank_scores(&[0.5; 6], 3).unwrap();
    assert_eq!(r.order(), &[0, 1, 2, 3, 4, 5]);
    assert_eq!(r.predicted_members(), &[0, 1, 2]);
}

#[test]
fn ranking_rejects_bad_input() {
    assert!(matches!(rank_scores(&[0.1, f64::NAN], 1), Err(AttackError::NonFinite(1))));
    assert!(rank_scores(&[0.1, 0.2], 0).is_err());
    assert!(rank_scores(&[0.1, 0.2], 3).is_err());
}

proptest! {
    #[test]
    fn monotone_transforms_keep_the_ranking(scores in prop::collection::vec(-3.0f64..3.0, 1..40), pick in 0usize..40) {
        let n = 1 + pick % scores.len();
        let base = rank_scores(&scores, n).unwrap();
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        let shifted: Vec<f64> = scores.iter().map(|s| 2.0 * s + 7.0).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| s.atan()).collect();
        prop_assert_eq!(&rank_scores(&cubed, n).unwrap(), &base);
        prop_assert_eq!(&rank_scores(&shifted, n).unwrap(), &base);
        prop_assert_eq!(&rank_scores(&squashed, n).unwrap(), &base);
    }

    #[test]
    fn prediction_has_claimed_size(scores in prop::collection::vec(-1.0f64..1.0, 1..50), pick in 0usize..50) {
        let n = 1 + pick % scores.len();
        let r = rank_scores(&scores, n).unwrap();
        let p = r.predicted_members();
        prop_assert_eq!(p.len(), n);
        let mut sorted = r.order().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..scores.len()).collect::<Vec<_>>());
    }
}

fn gan_checkpoint(seed: u64) -> Checkpoint {
    let cfg = TrainConfig { seed, ..Default::default() };
    let opts = PresetOptions { hidden: 16, latent_dim: 4, ..Default::default() };
    let m = GanModel::from_preset(ModelFamily::Gan, Preset::MlpSmall, &[2], &opts, &cfg, &mut RngState::new(seed)).unwrap();
    Checkpoint::from_model(&m, &cfg, 0, 0, &RngState::new(0))
}

#[test]
fn whitebox_needs_a_discriminator() {
    let ckpt = gan_checkpoint(1).generator_only();
    let err = whitebox_attack(&ckpt, &ring(16, 0), 4).unwrap_err();
    assert!(matches!(err, AttackError::UnsupportedTarget(_)), "{err}");
}

#[test]
fn whitebox_matches_direct_scoring() {
    let ckpt = gan_checkpoint(2);
    let x = ring(40, 3);
    let out = whitebox_attack(&ckpt, &x, 5).unwrap();
    let (s, r) = score_and_rank(ckpt.discriminator.as_ref().unwrap(), &x, 5).unwrap();
    assert_eq!((out.scores, out.ranking, out.queries), (s, r, 0));
}

#[test]
fn untrained_discriminator_is_near_random() {
    let data = synth_generate(&SyntheticSpec::ring(8, 0.8, 0.1, 200, 4)).unwrap();
    let mut total = 0.0;
    for seed in 0..20 {
        let split = split_random_fraction(&data, 0.1, seed).unwrap();
        let out = whitebox_attack(&gan_checkpoint(100 + seed), data.records(), split.n()).unwrap();
        let hits = out.ranking.predicted_members().iter().filter(|&&i| split.is_member(i)).count();
        total += hits as f64 / split.n() as f64;
    }
    let mean = total / 20.0;
    assert!((mean - 0.1).abs() <= 0.15, "mean accuracy {mean}");
}

#[test]
fn scoring_rejects_wrong_shape() {
    let ckpt = gan_checkpoint(5);
    let err = whitebox_attack(&ckpt, &Tensor::zeros([4, 3]), 2).unwrap_err();
    assert!(matches!(err, AttackError::Shape { .. }));
}

#[test]
fn euclidean_exact_match_ranks_first() {
    let x = Tensor::new([4, 2], vec![0.0, 0.0, 0.5, 0.5, -0.3, 0.2, 0.9, -0.9]).unwrap();
    let mut s = Replay::new(Tensor::new([1, 2], vec![0.9, -0.9]).unwrap());
    let out = euclidean_attack(&mut s, &x, 1, 1).unwrap();
    assert_eq!(out.ranking.predicted_members(), &[3]);
    assert_eq!(out.queries, 1);
}

#[test]
fn euclidean_duplicates_score_alike() {
    let x = Tensor::new([3, 2], vec![0.1, 0.2, 0.7, 0.1, 0.1, 0.2]).unwrap();
    let mut s = Replay::new(ring(20, 1));
    let out = euclidean_attack(&mut s, &x, 1, 20).unwrap();
    assert_eq!(out.scores.0[0], out.scores.0[2]);
    assert!(euclidean_attack(&mut s, &x, 1, 0).is_err());
}

#[test]
fn blackbox_queries_one_batch_per_step() {
    let mut s = Replay::new(ring(64, 2));
    let mut evals = Vec::new();
    let mut hook = |step: u64, r: &PredictionRanking| evals.push((step, r.claimed_n()));
    let out = blackbox_attack(&mut s, &ring(30, 3), 3, &small_cfg(25, 1), Some(&mut hook)).unwrap();
    assert_eq!(out.queries, 25 * 8);
    assert_eq!(evals, vec![(10, 3), (20, 3)]);
}

#[test]
fn blackbox_is_deterministic() {
    let x = ring(30, 3);
    let run = || blackbox_attack(&mut Replay::new(ring(64, 2)), &x, 3, &small_cfg(20, 7), None).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn delay_at_total_steps_equals_blackbox() {
    let x = ring(30, 3);
    let aux = AuxKnowledge { known_members: vec![0, 1], known_nonmembers: vec![2, 3] };
    let cfg = small_cfg(20, 8);
    let plain = blackbox_attack(&mut Replay::new(ring(64, 2)), &x, 3, &cfg, None).unwrap();
    for setting in [GenerativeSetting::TrainOnly, GenerativeSetting::TrainAndTest] {
        let aux_run = generative_aux_attack(&mut Replay::new(ring(64, 2)), &x, 3, &aux, setting, &cfg, 20, None).unwrap();
        assert_eq!(aux_run, plain);
    }
    let early = generative_aux_attack(&mut Replay::new(ring(64, 2)), &x, 3, &aux, GenerativeSetting::TrainOnly, &cfg, 5, None).unwrap();
    assert_ne!(early.scores, plain.scores);
}

#[test]
fn aux_attacks_check_their_knowledge() {
    let x = ring(16, 3).select_rows(&[0, 1, 2, 3, 4, 5]);
    let cfg = small_cfg(2, 1);
    let s = &mut Replay::new(ring(16, 2));
    let none = AuxKnowledge::default();
    let members_only = AuxKnowledge { known_members: vec![0], known_nonmembers: vec![] };
    let all = AuxKnowledge { known_members: vec![0, 1, 2], known_nonmembers: vec![3, 4, 5] };
    let overlap = AuxKnowledge { known_members: vec![0], known_nonmembers: vec![0] };
    assert!(discriminative_aux_attack(s, &x, 2, &members_only, DiscriminativeSetting::TestOnly, &cfg, None).is_err());
    assert!(discriminative_aux_attack(s, &x, 2, &all, DiscriminativeSetting::TrainAndTest, &cfg, None).is_err());
    assert!(discriminative_aux_attack(s, &x, 2, &overlap, DiscriminativeSetting::TrainAndTest, &cfg, None).is_err());
    assert!(generative_aux_attack(s, &x, 2, &none, GenerativeSetting::TrainOnly, &cfg, 1, None).is_err());
    assert!(generative_aux_attack(s, &x, 2, &members_only, GenerativeSetting::TrainAndTest, &cfg, 1, None).is_err());
    assert!(shadow_attack(s, &x, 2, &none, &cfg, None).is_err());
    let ok = discriminative_aux_attack(s, &x, 2, &AuxKnowledge { known_members: vec![], known_nonmembers: vec![4] }, DiscriminativeSetting::TestOnly, &cfg, None);
    assert_eq!(ok.unwrap().ranking.len(), 6);
}

#[test]
fn shadow_of_one_record_collapses_onto_it() {
    let record = [0.4, -0.3];
    let members = Tensor::new([1, 2], record.to_vec()).unwrap();
    let cfg = AttackerConfig {
        training: TrainConfig { seed: 3, batch_size: 16, optimizer: crate::tensor::OptimizerConfig::adam(2e-3), ..Default::default() },
        steps: 1500,
        ..small_cfg(1500, 3)
    };
    let g = train_shadow(&members, &cfg).unwrap();
    let s = crate::train::sample_generator(&g, 200, &mut RngState::new(1)).unwrap();
    let mean_dist = (0..200).map(|i| s.row(i).iter().zip(record).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()).sum::<f64>() / 200.0;
    assert!(mean_dist < 0.15, "mean distance {mean_dist}");
}

#[test]
fn shadow_mix_is_even() {
    let x = ring(30, 3);
    let aux = AuxKnowledge { known_members: vec![0, 1, 2], known_nonmembers: vec![] };
    let cfg = AttackerConfig { steps: 1000, options: PresetOptions { hidden: 4, latent_dim: 2, ..Default::default() }, ..small_cfg(1000, 4) };
    let mut s = Replay::new(ring(64, 2));
    let out = shadow_attack(&mut s, &x, 3, &aux, &cfg, None).unwrap();
    let mix = out.mix.unwrap();
    assert_eq!(mix.target + mix.shadow, 1000);
    assert!((mix.shadow as f64 / 1000.0 - 0.5).abs() <= 0.05, "{mix:?}");
    assert_eq!(out.queries, mix.target * 8);
}

#[test]
fn generator_sampler_counts_queries() {
    let ckpt = gan_checkpoint(6);
    let mut s = GeneratorSampler::new(ckpt.generator.clone(), 0).unwrap();
    assert_eq!(s.record_shape(), &[2]);
    s.sample(5).unwrap();
    s.sample(7).unwrap();
    assert_eq!(s.queries(), 12);
    let d: Network = ckpt.discriminator.clone().unwrap();
    assert!(GeneratorSampler::new(d, 0).is_err());
}
