use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AttackResult, EvalError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    /// `(seed, improvement, accuracy)` of each successful run.
    pub runs: Vec<(u64, f64, f64)>,
    /// `seed: error` for failed runs.
    pub failures: Vec<String>,
    pub mean_improvement: f64,
    pub min_improvement: f64,
    pub max_improvement: f64,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    /// Sorted by `value`.
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Adjacent points where mean improvement rises.
    pub fn inversions(&self) -> usize {
        self.points.windows(2).filter(|w| w[1].mean_improvement > w[0].mean_improvement).count()
    }
}

/// Runs `run(value, seed)` for every axis value and seed on up to
/// `workers` threads, then aggregates per value. Failed runs are recorded
/// on their point; a point with no successful run is an error.
pub fn size_sweep<F, E>(axis: &str, values: &[f64], seeds: &[u64], workers: usize, run: F) -> Result<SweepResult, EvalError>
where
    F: Fn(f64, u64) -> Result<AttackResult, E> + Sync,
    E: std::fmt::Display,
{
    if values.len() < 2 {
        return Err(EvalError::Invalid(format!("a sweep needs at least 2 axis values, got {}", values.len())));
    }
    if seeds.len() < 3 {
        return Err(EvalError::Invalid(format!("a sweep needs at least 3 seeds, got {}", seeds.len())));
    }
    let jobs: Vec<(usize, f64, u64)> =
        values.iter().enumerate().flat_map(|(i, &v)| seeds.iter().map(move |&s| (i, v, s))).collect();
    let results: Mutex<Vec<Option<Result<AttackResult, String>>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(_, v, s)) = jobs.get(j) else { break };
                let r = run(v, s).map_err(|e| e.to_string());
                results.lock().expect("sweep results")[j] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("sweep results");
    let mut points = Vec::new();
    for (i, &value) in values.iter().enumerate() {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for (j, job) in jobs.iter().enumerate().filter(|(_, j)| j.0 == i) {
            match results[j].as_ref().expect("every job ran") {
                Ok(r) => runs.push((job.2, r.improvement, r.accuracy)),
                Err(e) => failures.push(format!("seed {}: {e}", job.2)),
            }
        }
        if runs.is_empty() {
            return Err(EvalError::Run(format!("{axis}={value}: every run failed ({})", failures.join("; "))));
        }
        let k = runs.len() as f64;
        let imps = runs.iter().map(|r| r.1);
        points.push(SweepPoint {
            value,
            mean_improvement: imps.clone().sum::<f64>() / k,
            min_improvement: imps.clone().fold(f64::INFINITY, f64::min),
            max_improvement: imps.fold(f64::NEG_INFINITY, f64::max),
            mean_accuracy: runs.iter().map(|r| r.2).sum::<f64>() / k,
            runs,
            failures,
        });
    }
    points.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(SweepResult { axis: axis.to_string(), points })
}
