use proptest::prelude::*;

use super::*;
use crate::data::{synth_generate, Dataset, SyntheticKind, SyntheticSpec};
use crate::nn::{forward_on_tape, ForwardHooks, Mode, Preset, PresetOptions};
use crate::tensor::{OptimizerConfig, OptimizerState, Precision, RngState, Tape, Tensor};

fn ring(count: usize, seed: u64) -> Dataset {
    synth_generate(&SyntheticSpec::ring(8, 0.8, 0.05, count, seed)).unwrap()
}

fn small_opts() -> PresetOptions {
    PresetOptions { hidden: 16, latent_dim: 4, ..Default::default() }
}

fn model(family: ModelFamily, cfg: &TrainConfig, seed: u64) -> GanModel {
    GanModel::from_preset(family, Preset::MlpSmall, &[2], &small_opts(), cfg, &mut RngState::new(seed)).unwrap()
}

#[test]
fn zero_learning_rate_is_a_fixed_point() {
    let cfg = TrainConfig { optimizer: OptimizerConfig::adam(0.0), ..Default::default() };
    let data = ring(32, 1);
    for family in [ModelFamily::Gan, ModelFamily::VaeGan, ModelFamily::Began] {
        let mut m = model(family, &cfg, 2);
        let before = m.clone();
        let mut rng = RngState::new(3);
        for _ in 0..3 {
            let l = m.step(data.records(), &cfg, &mut rng).unwrap();
            assert!(l.d_loss.is_finite() && l.g_loss.is_finite());
        }
        assert_eq!(m.generator.net, before.generator.net, "{family:?}");
        assert_eq!(m.discriminator.net, before.discriminator.net, "{family:?}");
        assert_eq!(m.encoder.map(|e| e.net), before.encoder.map(|e| e.net));
    }
}

#[test]
fn generator_matches_mixture_mean() {
    let spec = SyntheticSpec {
        kind: SyntheticKind::GaussianMixture { components: 2, dims: 1, spread: 0.5, std: 0.15 },
        count: 512,
        seed: 4,
    };
    let data = synth_generate(&spec).unwrap();
    let data_mean = data.records().data().iter().sum::<f64>() / data.len() as f64;
    let cfg = TrainConfig { max_steps: Some(2000), seed: 5, ..Default::default() };
    let mut t = Trainer::from_preset(ModelFamily::Gan, Preset::MlpSmall, &[1], &PresetOptions::default(), cfg, data.len()).unwrap();
    t.run(&data, &mut TrainSink::default()).unwrap();
    let samples = sample_generator(&t.model.generator.net, 4000, &mut RngState::new(6)).unwrap();
    let gen_mean = samples.data().iter().sum::<f64>() / samples.numel() as f64;
    assert!((gen_mean - data_mean).abs() < 0.3, "generated {gen_mean} vs data {data_mean}");
}

#[test]
fn vaegan_with_zero_weight_matches_gan_step() {
    let cfg = TrainConfig { vae: VaeConfig { recon_weight: 0.0 }, label_flip_prob: 0.3, ..Default::default() };
    let data = ring(32, 7);
    let mut vae = model(ModelFamily::VaeGan, &cfg, 8);
    let mut gan = GanModel { family: ModelFamily::Gan, encoder: None, ..vae.clone() };
    let encoder_before = vae.encoder.clone().unwrap().net;
    let mut r1 = RngState::new(9);
    for _ in 0..5 {
        let mut r2 = r1.clone();
        let a = vaegan_step(&mut vae, data.records(), &cfg, &mut r1).unwrap();
        let b = gan_step(&mut gan, data.records(), &cfg, &mut r2).unwrap();
        assert_eq!(a.d_loss, b.d_loss);
        assert_eq!(a.g_loss, b.g_loss);
    }
    assert_eq!(vae.generator, gan.generator);
    assert_eq!(vae.discriminator, gan.discriminator);
    // the encoder still learns through its KL path
    assert_ne!(vae.encoder.unwrap().net, encoder_before);
}

#[test]
fn perfect_reconstruction_has_zero_feature_distance() {
    let cfg = TrainConfig::default();
    let m = model(ModelFamily::VaeGan, &cfg, 10);
    let d = &m.discriminator.net;
    let mut tape = Tape::new(Precision::F64);
    let db = d.params.bind(&mut tape, false);
    let x = tape.constant(ring(8, 1).records().clone());
    let mut rng = RngState::new(0);
    let a = forward_on_tape(&mut tape, &d.spec, &d.params, &db, x, Mode::Eval, &mut rng, ForwardHooks::default()).unwrap();
    let b = forward_on_tape(&mut tape, &d.spec, &d.params, &db, x, Mode::Eval, &mut rng, ForwardHooks::default()).unwrap();
    let dist = tape.row_sq_dist(a.features, b.features).unwrap();
    assert!(tape.value(dist).data().iter().all(|&v| v == 0.0));
}

#[test]
fn vaegan_reconstruction_halves_on_toy_run() {
    // both ends are measured with the final discriminator, whose feature
    // scale differs from the near-zero one at initialization
    let data = ring(64, 11);
    let cfg = TrainConfig {
        max_steps: Some(2000),
        seed: 12,
        optimizer: OptimizerConfig::adam(1e-3),
        vae: VaeConfig { recon_weight: 10.0 },
        ..Default::default()
    };
    let mut t = Trainer::from_preset(ModelFamily::VaeGan, Preset::MlpSmall, &[2], &small_opts(), cfg, data.len()).unwrap();
    let before = t.model.clone();
    t.run(&data, &mut TrainSink::default()).unwrap();
    let d = &t.model.discriminator.net;
    let recon = |m: &GanModel| {
        reconstruction_distance(&m.encoder.as_ref().unwrap().net, &m.generator.net, d, data.records(), &mut RngState::new(0)).unwrap()
    };
    let (head, tail) = (recon(&before), recon(&t.model));
    assert!(tail <= 0.5 * head, "recon {head} -> {tail}");
}

#[test]
fn negative_elbo_gradient_matches_finite_differences() {
    let cfg = TrainConfig { precision: Precision::F64, ..Default::default() };
    let m = model(ModelFamily::VaeGan, &cfg, 13);
    let x = ring(16, 2).records().select_rows(&[0, 1, 2]);
    let latent = 4;
    let enc = Tensor::new([3, 2 * latent], RngState::new(14).normals(3 * 2 * latent, 0.5)).unwrap();
    let eval = |e: &Tensor| -> (f64, Vec<f64>) {
        let mut tape = Tape::new(Precision::F64);
        let xn = tape.constant(x.clone());
        let en = tape.leaf(e.clone());
        let loss = negative_elbo_on_tape(&mut tape, xn, en, &m.generator.net, &mut RngState::new(15)).unwrap();
        let v = tape.value(loss).item();
        let g = tape.backward(loss).unwrap();
        (v, g.get(en).unwrap().to_vec())
    };
    let (_, analytic) = eval(&enc);
    let h = 1e-5;
    let mut num = Vec::new();
    for i in 0..enc.numel() {
        let mut p = enc.clone();
        p.data_mut()[i] += h;
        let mut q = enc.clone();
        q.data_mut()[i] -= h;
        num.push((eval(&p).0 - eval(&q).0) / (2.0 * h));
    }
    let diff: f64 = analytic.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    assert!(diff / scale < 1e-4, "relative error {}", diff / scale);
}

#[test]
fn vae_elbo_is_finite_and_positive() {
    let cfg = TrainConfig::default();
    let m = model(ModelFamily::VaeGan, &cfg, 16);
    let v = vae_elbo(ring(8, 3).records(), &m.encoder.unwrap().net, &m.generator.net, &mut RngState::new(0)).unwrap();
    assert!(v.is_finite() && v > 0.0);
}

#[test]
fn began_first_discriminator_loss_is_real_reconstruction() {
    let cfg = TrainConfig::default();
    let mut m = model(ModelFamily::Began, &cfg, 17);
    let data = ring(16, 4);
    let d = m.discriminator.net.clone();
    let expected = {
        let out = crate::nn::forward_network(&d.params, &d.spec, data.records(), Mode::Train, &mut RngState::new(0)).unwrap();
        data.records().data().iter().zip(out.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / out.numel() as f64
    };
    let l = began_step(&mut m, data.records(), &TrainConfig { precision: Precision::F64, ..cfg }, &mut RngState::new(1)).unwrap();
    assert!((l.d_loss - expected).abs() < 1e-12, "{} vs {expected}", l.d_loss);
}

#[test]
fn began_balanced_losses_leave_k_unchanged() {
    let mut s = BeganState { k: 0.3, gamma: 0.5, lambda_k: 0.001 };
    s.update(0.8, 0.4);
    assert_eq!(s.k, 0.3);
    assert_eq!(s.convergence(0.8, 0.4), 0.8);
}

#[test]
fn began_convergence_logged_every_step() {
    let data = ring(64, 5);
    let cfg = TrainConfig { max_steps: Some(200), seed: 18, ..Default::default() };
    let mut t = Trainer::from_preset(ModelFamily::Began, Preset::MlpSmall, &[2], &small_opts(), cfg, data.len()).unwrap();
    let mut rows = Vec::new();
    t.run(&data, &mut TrainSink { on_step: Some(Box::new(|r: &StepRecord| rows.push(r.losses.aux.clone()))), ..Default::default() })
        .unwrap();
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|a| a[1].is_finite() && (0.0..=1.0).contains(&a[0])));
}

proptest! {
    #[test]
    fn began_k_stays_in_unit_interval(
        k0 in 0.0f64..=1.0,
        lambda in 1e-4f64..1.0,
        losses in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..500),
    ) {
        let mut s = BeganState { k: k0, gamma: 0.5, lambda_k: lambda };
        for (r, f) in losses {
            s.update(r, f);
            prop_assert!((0.0..=1.0).contains(&s.k));
        }
    }

    #[test]
    fn epsilon_monotone(q in 0.001f64..1.0, sigma in 0.5f64..20.0, steps in 1u64..5000) {
        let eps = |q: f64, s: f64, t: u64| {
            epsilon_account(&DPConfig { noise_sigma: s, sampling_rate: Some(q), ..Default::default() }, t).unwrap()
        };
        let base = eps(q, sigma, steps);
        prop_assert!(base > 0.0);
        prop_assert!(eps(q, sigma, steps + 100) >= base);
        prop_assert!(eps((q * 1.5).min(1.0), sigma, steps) >= base);
        prop_assert!(eps(q, sigma * 2.0, steps) < base);
    }
}

#[test]
fn epoch_bookkeeping_uses_ceiling() {
    let data = ring(33, 6);
    let cfg = TrainConfig { epochs: 3, seed: 19, ..Default::default() };
    let mut t = Trainer::from_preset(ModelFamily::Gan, Preset::MlpSmall, &[2], &small_opts(), cfg, data.len()).unwrap();
    assert_eq!(t.steps_per_epoch(), 2);
    let mut epochs = Vec::new();
    t.run(&data, &mut TrainSink { on_step: Some(Box::new(|r: &StepRecord| epochs.push((r.step, r.epoch)))), ..Default::default() })
        .unwrap();
    assert_eq!(epochs, vec![(1, 0), (2, 0), (3, 1), (4, 1), (5, 2), (6, 2)]);
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { seed: 20, ..Default::default() };
    let data = ring(40, 7);
    for family in [ModelFamily::Gan, ModelFamily::VaeGan, ModelFamily::Began] {
        let mut t = Trainer::from_preset(family, Preset::MlpSmall, &[2], &small_opts(), cfg.clone(), data.len()).unwrap();
        t.run_until(&data, 3, &mut TrainSink::default()).unwrap();
        let ckpt = t.checkpoint();
        let p = dir.path().join(format!("{family:?}.ckpt"));
        save_checkpoint(&ckpt, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, ckpt);
        for (a, b) in back.generator.params.entries().iter().zip(ckpt.generator.params.entries()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
    }
}

#[test]
fn damaged_checkpoints_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig::default();
    let t = Trainer::new(model(ModelFamily::Gan, &cfg, 21), cfg, 10).unwrap();
    let bytes = encode_checkpoint(&t.checkpoint()).unwrap();
    let p = dir.path().join("c.ckpt");

    std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(load_checkpoint(&p), Err(TrainError::Checkpoint(_))));

    let mut v2 = bytes.clone();
    v2[4..8].copy_from_slice(&2u32.to_le_bytes());
    std::fs::write(&p, &v2).unwrap();
    assert!(matches!(load_checkpoint(&p), Err(TrainError::VersionMismatch { found: 2, expected: 1 })));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&p, &bad).unwrap();
    assert!(matches!(load_checkpoint(&p), Err(TrainError::Checkpoint(_))));
}

#[test]
fn generator_only_reader_never_touches_discriminator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig::default();
    let t = Trainer::new(model(ModelFamily::Gan, &cfg, 22), cfg, 10).unwrap();
    let p = dir.path().join("c.ckpt");
    save_checkpoint(&t.checkpoint(), &p).unwrap();
    let r = CheckpointReader::open(&p).unwrap();
    let g = r.generator().unwrap();
    assert_eq!(g, t.model.generator.net);
    assert!(!r.accessed().is_empty());
    assert!(r.accessed().iter().all(|n| n.starts_with("generator/")));

    let gp = dir.path().join("g.ckpt");
    save_checkpoint(&t.checkpoint().generator_only(), &gp).unwrap();
    let r = CheckpointReader::open(&gp).unwrap();
    assert!(matches!(r.discriminator(), Err(TrainError::MissingNetwork(DISCRIMINATOR))));
    assert!(load_checkpoint(&gp).unwrap().into_model().is_err());
}

fn run_with_metrics(dir: &std::path::Path, interrupt_at: Option<u64>) -> String {
    let data = ring(48, 8);
    let cfg = TrainConfig { epochs: 6, seed: 23, label_flip_prob: 0.2, ..Default::default() };
    let metrics = dir.join("metrics.csv");
    let ckpt = dir.join("model.ckpt");
    let mut t = Trainer::from_preset(ModelFamily::Gan, Preset::MlpSmall, &[2], &small_opts(), cfg, data.len()).unwrap();
    let mut sink = TrainSink {
        metrics: Some(MetricsWriter::create(&metrics, ModelFamily::Gan).unwrap()),
        checkpoint_path: Some(ckpt.clone()),
        ..Default::default()
    };
    if let Some(k) = interrupt_at {
        t.run_until(&data, k, &mut sink).unwrap();
        // steps past the checkpoint that a crash would leave behind
        t.run_until(&data, k + 2, &mut TrainSink { metrics: sink.metrics.take(), ..Default::default() }).unwrap();
        drop(t);
        let restored = load_checkpoint(&ckpt).unwrap();
        let step = restored.step;
        let mut t = Trainer::from_checkpoint(restored, data.len()).unwrap();
        let mut sink = TrainSink {
            metrics: Some(MetricsWriter::resume(&metrics, ModelFamily::Gan, step).unwrap()),
            checkpoint_path: Some(ckpt),
            ..Default::default()
        };
        t.run(&data, &mut sink).unwrap();
    } else {
        t.run(&data, &mut sink).unwrap();
    }
    drop(sink);
    std::fs::read_to_string(metrics).unwrap()
}

#[test]
fn resumed_run_reproduces_metrics() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let straight = run_with_metrics(a.path(), None);
    assert_eq!(straight.lines().count(), 1 + 12);
    assert_eq!(straight, run_with_metrics(b.path(), None));
    assert_eq!(straight, run_with_metrics(c.path(), Some(5)));
}

#[test]
fn divergence_reports_last_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = ring(32, 9);
    let cfg = TrainConfig { max_steps: Some(50), checkpoint_every: Some(1), ..Default::default() };
    let mut t = Trainer::from_preset(ModelFamily::Gan, Preset::MlpSmall, &[2], &small_opts(), cfg, data.len()).unwrap();
    let ckpt = dir.path().join("last.ckpt");
    let mut sink = TrainSink { checkpoint_path: Some(ckpt.clone()), ..Default::default() };
    t.run_until(&data, 3, &mut sink).unwrap();
    for l in [&mut t.model.generator, &mut t.model.discriminator] {
        l.opt = OptimizerState::new(OptimizerConfig::sgd(1e200), Precision::F32, l.net.params.trainable_sizes());
    }
    match t.run(&data, &mut sink) {
        Err(TrainError::Divergence { last_checkpoint, .. }) => {
            assert_eq!(last_checkpoint, Some(ckpt.clone()));
            assert!(load_checkpoint(&ckpt).is_ok());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn dp_training_modes_run() {
    let data = ring(64, 10);
    let grad = DPConfig { noise_sigma: 1.0, clip_norm: 1.0, ..Default::default() };
    let cfg = TrainConfig { max_steps: Some(4), defense: Defense::Dp(grad), ..Default::default() };
    let mut t = Trainer::from_preset(ModelFamily::Gan, Preset::MlpSmall, &[2], &small_opts(), cfg, data.len()).unwrap();
    let dp = *t.config.defense.dp().unwrap();
    assert_eq!(dp.sampling_rate, Some(0.5));
    let before = t.model.discriminator.net.clone();
    t.run(&data, &mut TrainSink::default()).unwrap();
    assert_ne!(t.model.discriminator.net, before);
    assert!(epsilon_account(&dp, 4).unwrap() > 0.0);

    let fwd = DPConfig { injection_site: InjectionSite::ForwardPass, ..grad };
    let cfg = TrainConfig { max_steps: Some(4), defense: Defense::Dp(fwd), ..Default::default() };
    let mut t = Trainer::from_preset(ModelFamily::Gan, Preset::MlpSmall, &[2], &small_opts(), cfg, data.len()).unwrap();
    t.run(&data, &mut TrainSink::default()).unwrap();
    assert!(matches!(epsilon_account(t.config.defense.dp().unwrap(), 4), Err(TrainError::NotAccounted)));
}

#[test]
fn per_record_dp_rejects_batch_norm() {
    let cfg = TrainConfig { defense: Defense::Dp(DPConfig::default()), ..Default::default() };
    let opts = PresetOptions { batchnorm: Some(true), ..small_opts() };
    let mut m = GanModel::from_preset(ModelFamily::Gan, Preset::MlpSmall, &[2], &opts, &cfg, &mut RngState::new(1)).unwrap();
    let data = ring(8, 1);
    assert!(matches!(gan_step(&mut m, data.records(), &cfg, &mut RngState::new(2)), Err(TrainError::Config(_))));
}
