use proptest::prelude::*;

use super::*;
use crate::attack::{rank_scores, AttackOutcome, ScoreVector};
use crate::data::SplitConstruction;
use crate::tensor::RngState;

/// Members are the first `n` of `n + m` indices.
fn front_split(n: usize, m: usize) -> MembershipSplit {
    MembershipSplit {
        train_indices: (0..n).collect(),
        holdout_indices: (n..n + m).collect(),
        seed: 0,
        construction: SplitConstruction::RandomFraction { fraction: n as f64 / (n + m) as f64 },
    }
}

fn random_ranking(total: usize, n: usize, seed: u64) -> PredictionRanking {
    let mut rng = RngState::new(seed);
    let scores: Vec<f64> = (0..total).map(|_| rng.uniform(0.0, 1.0)).collect();
    rank_scores(&scores, n).unwrap()
}

#[test]
fn accuracy_extremes() {
    let t = front_split(3, 5);
    assert_eq!(accuracy(&[0, 1, 2], &t).unwrap(), 1.0);
    assert_eq!(accuracy(&[5, 6, 7], &t).unwrap(), 0.0);
    assert!(matches!(accuracy(&[0, 1], &t), Err(EvalError::SizeMismatch { expected: 3, got: 2 })));
}

#[test]
fn random_guessing_hits_the_baseline() {
    let t = front_split(1323, 11910);
    let mean = (0..5).map(|s| accuracy(random_ranking(13233, 1323, s).predicted_members(), &t).unwrap()).sum::<f64>() / 5.0;
    assert!((mean - 0.1).abs() < 0.01, "{mean}");
}

#[test]
fn baseline_values() {
    assert!((random_baseline(1323, 11910).unwrap() - 0.09997733).abs() < 1e-8);
    assert_eq!(random_baseline(1, 4).unwrap(), 0.2);
    assert_eq!(random_baseline(5, 5).unwrap(), 0.5);
    assert!(random_baseline(3, 0).is_err());
    assert!(random_baseline(0, 3).is_err());
}

#[test]
fn profile_of_perfect_and_reversed_rankings() {
    let t = front_split(10, 30);
    let perfect: Vec<f64> = (0..40).map(|i| -(i as f64)).collect();
    let p = topk_profile(&rank_scores(&perfect, 10).unwrap(), &t, &TOPK_BINS).unwrap();
    assert!(p.bins.iter().all(|b| b.1 == 1.0));
    let reversed: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let p = topk_profile(&rank_scores(&reversed, 10).unwrap(), &t, &TOPK_BINS).unwrap();
    assert_eq!(p.bins[0].1, 0.0);
}

#[test]
fn profile_of_random_rankings_is_flat() {
    let t = front_split(50, 450);
    let mut sums = [0.0; 5];
    for seed in 0..100 {
        let p = topk_profile(&random_ranking(500, 50, seed), &t, &TOPK_BINS).unwrap();
        for (s, b) in sums.iter_mut().zip(&p.bins) {
            *s += b.1;
        }
    }
    // top-20% bin holds 10 draws; its mean over 100 seeds has sd ≈ 0.0095
    for s in sums {
        assert!((s / 100.0 - 0.1).abs() < 0.03, "{}", s / 100.0);
    }
}

#[test]
fn bin_sizes_use_the_ceiling() {
    let t = front_split(5, 5);
    // order 0, 5, 2, 3, then index 1 wins the tie; only 5 is a non-member
    let r = rank_scores(&[9.0, 0.0, 7.0, 6.0, 0.0, 8.0, 0.0, 0.0, 0.0, 0.0], 5).unwrap();
    let p = topk_profile(&r, &t, &[0.2, 0.6, 1.0]).unwrap();
    assert_eq!(p.bins, vec![(0.2, 1.0), (0.6, 2.0 / 3.0), (1.0, 0.8)]);
}

proptest! {
    #[test]
    fn full_bin_is_accuracy(n in 1usize..30, m in 1usize..60, seed in 0u64..1000) {
        let t = front_split(n, m);
        let r = random_ranking(n + m, n, seed);
        let p = topk_profile(&r, &t, &TOPK_BINS).unwrap();
        prop_assert_eq!(p.bins[4].1, accuracy(r.predicted_members(), &t).unwrap());
    }

    #[test]
    fn improvement_stays_in_range(n in 1usize..30, m in 1usize..60, seed in 0u64..1000) {
        let t = front_split(n, m);
        let r = random_ranking(n + m, n, seed);
        let acc = accuracy(r.predicted_members(), &t).unwrap();
        let base = random_baseline(n, m).unwrap();
        let imp = acc - base;
        prop_assert!(imp >= -base - 1e-12 && imp <= 1.0 - base + 1e-12);
        let in_train = r.predicted_members().iter().filter(|&&i| t.is_member(i)).count();
        let in_holdout = r.predicted_members().iter().filter(|&&i| !t.is_member(i)).count();
        prop_assert_eq!(in_train + in_holdout, n);
    }
}

#[test]
fn threshold_mode_cuts_by_score() {
    let t = front_split(2, 3);
    let scores = [0.9, 0.4, 0.8, 0.1, 0.2];
    let r = rank_scores(&scores, 2).unwrap();
    let pred = threshold_predictions(&r, &scores, 0.5);
    assert_eq!(pred, vec![0, 2]);
    let rep = threshold_report(&pred, &t, 0.5);
    assert_eq!((rep.predicted, rep.precision, rep.recall), (2, 0.5, 0.5));
    assert_eq!(threshold_report(&[], &t, 2.0).precision, 0.0);
}

#[test]
fn cost_model_values() {
    assert_eq!(query_cost_estimate(1000, PRICE_PER_1000, FREE_QUERIES).unwrap(), 0.0);
    assert_eq!(query_cost_estimate(0, PRICE_PER_1000, FREE_QUERIES).unwrap(), 0.0);
    assert_eq!(query_cost_estimate(32 * 50_000, PRICE_PER_1000, FREE_QUERIES).unwrap(), 2398.5);
    assert_eq!(query_cost_estimate(32 * 15_000, PRICE_PER_1000, FREE_QUERIES).unwrap(), 718.5);
    assert!(query_cost_estimate(10, -1.0, 0).is_err());
}

fn fake_result(acc: f64) -> AttackResult {
    AttackResult {
        ranking: rank_scores(&[1.0, 0.0], 1).unwrap(),
        accuracy: acc,
        random_baseline: 0.5,
        improvement: acc - 0.5,
        accuracy_curve: vec![],
        profile: OrderingProfile { bins: vec![] },
        queries: 0,
        config_fingerprint: String::new(),
        seed: 0,
    }
}

#[test]
fn sweep_preconditions() {
    let run = |v: f64, _s: u64| Ok::<_, String>(fake_result(v));
    assert!(size_sweep("f", &[0.1, 0.5], &[1], 1, run).is_err());
    assert!(size_sweep("f", &[0.1], &[1, 2, 3], 1, run).is_err());
}

#[test]
fn sweep_aggregates_and_sorts() {
    let run = |v: f64, s: u64| {
        if v == 0.9 && s == 2 {
            Err("boom".to_string())
        } else {
            Ok(fake_result(v + s as f64 / 100.0))
        }
    };
    let serial = size_sweep("train_fraction", &[0.9, 0.1, 0.5], &[1, 2, 3], 1, run).unwrap();
    let parallel = size_sweep("train_fraction", &[0.9, 0.1, 0.5], &[1, 2, 3], 4, run).unwrap();
    assert_eq!(serial, parallel);
    let values: Vec<f64> = serial.points.iter().map(|p| p.value).collect();
    assert_eq!(values, vec![0.1, 0.5, 0.9]);
    let first = &serial.points[0];
    assert!((first.mean_improvement - (0.1 + 0.02 - 0.5)).abs() < 1e-12);
    assert!((first.min_improvement - (0.11 - 0.5)).abs() < 1e-12);
    assert!((first.max_improvement - (0.13 - 0.5)).abs() < 1e-12);
    let last = &serial.points[2];
    assert_eq!(last.runs.len(), 2);
    assert_eq!(last.failures, vec!["seed 2: boom".to_string()]);
    assert_eq!(serial.inversions(), 2);
}

#[test]
fn evaluate_builds_curve_and_profile() {
    let t = front_split(2, 4);
    let scores = [0.9, 0.1, 0.8, 0.2, 0.3, 0.0];
    let ranking = rank_scores(&scores, 2).unwrap();
    let outcome = AttackOutcome { scores: ScoreVector(scores.to_vec()), ranking: ranking.clone(), queries: 64, steps: 20, mix: None };
    let early = rank_scores(&[0.0, 0.0, 0.9, 0.8, 0.0, 0.0], 2).unwrap();
    let r = AttackResult::evaluate(&outcome, &t, &[(10, early)], "abc", 3).unwrap();
    assert_eq!(r.accuracy, 0.5);
    assert!((r.random_baseline - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.accuracy_curve, vec![(10, 0.0), (20, 0.5)]);
    assert_eq!(r.profile.bins.last().unwrap().1, r.accuracy);
}

#[test]
fn curve_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acc.csv");
    let mut r = fake_result(0.75);
    r.accuracy_curve = vec![(500, 0.25), (1000, 0.75)];
    write_curve_csv(&path, &r).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "step,accuracy,improvement_over_random\n500,0.25,-0.25\n1000,0.75,0.25\n");
    assert_eq!(read_curve_csv(&path).unwrap(), vec![(500.0, 0.25), (1000.0, 0.75)]);
}

#[test]
fn chart_has_one_polyline_per_series() {
    let series = vec![
        Series { name: "a".into(), points: vec![(0.0, 0.1), (1.0, 0.5)] },
        Series { name: "b <x>".into(), points: vec![(0.0, 0.2), (1.0, 0.3)] },
    ];
    let svg = svg_line_chart("t", "step", "accuracy", &series);
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains("b &lt;x&gt;"));
    assert!(svg_line_chart("empty", "x", "y", &[]).starts_with("<svg"));
}
