use genleak::attack::{blackbox_attack, discriminative_aux_attack, AttackerConfig, DiscriminativeSetting, GeneratorSampler};
use genleak::data::{sample_aux_knowledge, split_random_fraction, synth_generate, Dataset, MembershipSplit, SyntheticSpec};
use genleak::eval::accuracy;
use genleak::nn::{Network, Preset, PresetOptions};
use genleak::train::{ModelFamily, TrainConfig, TrainSink, Trainer};

fn ring(seed: u64) -> (Dataset, MembershipSplit) {
    let ds = synth_generate(&SyntheticSpec::ring(8, 0.8, 0.2, 320, seed)).unwrap();
    let split = split_random_fraction(&ds, 0.1, seed).unwrap();
    (ds, split)
}

fn generator(ds: &Dataset, split: &MembershipSplit, preset: Preset, seed: u64) -> Network {
    let members = ds.subset(&split.train_indices);
    let cfg = TrainConfig { epochs: 1000, seed, ..Default::default() };
    let opts = PresetOptions { channels: 8, ..Default::default() };
    let mut t = Trainer::from_preset(ModelFamily::Gan, preset, members.record_shape(), &opts, cfg, members.len()).unwrap();
    t.run(&members, &mut TrainSink::default()).unwrap();
    t.model.generator.net
}

fn attacker(seed: u64) -> AttackerConfig {
    AttackerConfig { steps: 3000, eval_interval: 3000, training: TrainConfig { seed, ..Default::default() }, ..Default::default() }
}

#[test]
fn target_architecture_does_not_matter_much() {
    for seed in 0..2 {
        let (ds, split) = ring(seed);
        let same = {
            let g = generator(&ds, &split, Preset::MlpSmall, 10 + seed);
            let mut oracle = GeneratorSampler::new(g, 20 + seed).unwrap();
            let o = blackbox_attack(&mut oracle, ds.records(), split.n(), &attacker(30 + seed), None).unwrap();
            accuracy(o.ranking.predicted_members(), &split).unwrap()
        };
        // the conv target sees each point as a 1x2 single-channel image
        let images = ds.with_record_shape(&[1, 1, 2]).unwrap();
        let g = generator(&images, &split, Preset::ConvSmall, 10 + seed);
        let mut oracle = Flatten(GeneratorSampler::new(g, 20 + seed).unwrap());
        let o = blackbox_attack(&mut oracle, ds.records(), split.n(), &attacker(30 + seed), None).unwrap();
        let cross = accuracy(o.ranking.predicted_members(), &split).unwrap();
        assert!((cross - same).abs() <= 0.2, "seed {seed}: conv target {cross}, mlp target {same}");
    }
}

/// Presents a conv generator's `[1, 1, 2]` samples as flat 2-vectors.
struct Flatten(GeneratorSampler);

impl genleak::attack::Sampler for Flatten {
    fn record_shape(&self) -> &[usize] {
        &[2]
    }
    fn sample(&mut self, count: usize) -> Result<genleak::tensor::Tensor, genleak::attack::AttackError> {
        let s = self.0.sample(count)?;
        Ok(genleak::tensor::Tensor::new(vec![count, 2], s.data().to_vec()).unwrap())
    }
    fn queries(&self) -> u64 {
        self.0.queries()
    }
}

#[test]
fn known_members_beat_known_nonmembers_alone() {
    for seed in 0..3 {
        let (ds, split) = ring(seed);
        let g = generator(&ds, &split, Preset::MlpSmall, 10 + seed);
        let aux = sample_aux_knowledge(&split, 0.3, 0.3, 40 + seed).unwrap();
        let run = |setting| {
            let mut oracle = GeneratorSampler::new(g.clone(), 20 + seed).unwrap();
            let o = discriminative_aux_attack(&mut oracle, ds.records(), split.n(), &aux, setting, &attacker(30 + seed), None).unwrap();
            accuracy(o.ranking.predicted_members(), &split).unwrap()
        };
        let (test_only, both) = (run(DiscriminativeSetting::TestOnly), run(DiscriminativeSetting::TrainAndTest));
        assert!(both > test_only, "seed {seed}: train_and_test {both}, test_only {test_only}");
    }
}
