//! Attack metrics, baselines, ordering profiles, sweeps and the query
//! cost model. This is the only place ground truth meets a ranking.

mod report;
mod sweep;

#[cfg(test)]
mod tests;

pub use report::{read_curve_csv, svg_line_chart, write_curve_csv, write_summary_json, write_sweep_csv, Series};
pub use sweep::{size_sweep, SweepPoint, SweepResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{AttackOutcome, PredictionRanking};
use crate::data::MembershipSplit;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predicted {got} members but the training set has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("invalid evaluation input: {0}")]
    Invalid(String),
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// `|predicted ∩ train| / n`.
pub fn accuracy(predicted: &[usize], truth: &MembershipSplit) -> Result<f64, EvalError> {
    if predicted.len() != truth.n() {
        return Err(EvalError::SizeMismatch { expected: truth.n(), got: predicted.len() });
    }
    Ok(hits(predicted, truth) as f64 / truth.n() as f64)
}

fn hits(predicted: &[usize], truth: &MembershipSplit) -> usize {
    predicted.iter().filter(|&&i| i < truth.total() && truth.is_member(i)).count()
}

/// Expected accuracy of a uniformly random guess, `n / (n + m)`.
pub fn random_baseline(n: usize, m: usize) -> Result<f64, EvalError> {
    if n == 0 || m == 0 {
        return Err(EvalError::Invalid(format!("baseline needs n, m >= 1, got n={n}, m={m}")));
    }
    Ok(n as f64 / (n + m) as f64)
}

pub const TOPK_BINS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

/// Member fraction among the top `k` share of the predicted members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingProfile {
    /// `(k, member fraction among the first ⌈k·n⌉ ranked candidates)`.
    pub bins: Vec<(f64, f64)>,
}

impl OrderingProfile {
    /// Adjacent bins where the fraction rises.
    pub fn inversions(&self) -> usize {
        self.bins.windows(2).filter(|w| w[1].1 > w[0].1).count()
    }
}

/// `⌈k·n⌉`, robust to `k·n` landing a hair above an integer.
fn ceil_count(k: f64, n: usize) -> usize {
    let x = k * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

pub fn topk_profile(ranking: &PredictionRanking, truth: &MembershipSplit, ks: &[f64]) -> Result<OrderingProfile, EvalError> {
    let n = truth.n();
    if ranking.len() != truth.total() {
        return Err(EvalError::Invalid(format!("ranking covers {} candidates, split has {}", ranking.len(), truth.total())));
    }
    let mut bins = Vec::with_capacity(ks.len());
    for &k in ks {
        if !(k > 0.0 && k <= 1.0) {
            return Err(EvalError::Invalid(format!("bin {k} outside (0, 1]")));
        }
        let c = ceil_count(k, n).max(1);
        bins.push((k, hits(&ranking.order()[..c], truth) as f64 / c as f64));
    }
    Ok(OrderingProfile { bins })
}

/// Predictions without a known training-set size: every candidate whose
/// score reaches `threshold`, in ranking order.
pub fn threshold_predictions(ranking: &PredictionRanking, scores: &[f64], threshold: f64) -> Vec<usize> {
    ranking.order().iter().copied().take_while(|&i| scores[i] >= threshold).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub predicted: usize,
    /// Member fraction among the predicted records (0 when none).
    pub precision: f64,
    /// Fraction of all members that were predicted.
    pub recall: f64,
}

pub fn threshold_report(predicted: &[usize], truth: &MembershipSplit, threshold: f64) -> ThresholdReport {
    let h = hits(predicted, truth) as f64;
    let precision = if predicted.is_empty() { 0.0 } else { h / predicted.len() as f64 };
    ThresholdReport { threshold, predicted: predicted.len(), precision, recall: h / truth.n() as f64 }
}

pub const PRICE_PER_1000: f64 = 1.50;
pub const FREE_QUERIES: u64 = 1000;

/// `max(0, queries − free_quota) / 1000 × price_per_1000`.
///
/// For 32 × 50,000 and 32 × 15,000 queries this gives 2,398.50 and 718.50;
/// the figures usually quoted for those budgets ($2,352 and $672) do not
/// follow from this formula.
pub fn query_cost_estimate(queries: u64, price_per_1000: f64, free_quota: u64) -> Result<f64, EvalError> {
    if !(price_per_1000 >= 0.0 && price_per_1000.is_finite()) {
        return Err(EvalError::Invalid(format!("price {price_per_1000} must be non-negative")));
    }
    Ok(queries.saturating_sub(free_quota) as f64 / 1000.0 * price_per_1000)
}

/// Final metrics of one attack run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub ranking: PredictionRanking,
    pub accuracy: f64,
    pub random_baseline: f64,
    pub improvement: f64,
    /// `(attacker step, accuracy)` at each evaluation point.
    pub accuracy_curve: Vec<(u64, f64)>,
    pub profile: OrderingProfile,
    pub queries: u64,
    pub config_fingerprint: String,
    pub seed: u64,
}

impl AttackResult {
    /// Scores `outcome` against `truth`; `curve_rankings` are the
    /// intermediate rankings reported by the attack's evaluation hook.
    pub fn evaluate(
        outcome: &AttackOutcome,
        truth: &MembershipSplit,
        curve_rankings: &[(u64, PredictionRanking)],
        config_fingerprint: &str,
        seed: u64,
    ) -> Result<Self, EvalError> {
        let acc = accuracy(outcome.ranking.predicted_members(), truth)?;
        let baseline = random_baseline(truth.n(), truth.m())?;
        let mut accuracy_curve = curve_rankings
            .iter()
            .map(|(s, r)| Ok((*s, accuracy(r.predicted_members(), truth)?)))
            .collect::<Result<Vec<_>, EvalError>>()?;
        if accuracy_curve.last().map(|c| c.0) != Some(outcome.steps) {
            accuracy_curve.push((outcome.steps, acc));
        }
        Ok(Self {
            ranking: outcome.ranking.clone(),
            accuracy: acc,
            random_baseline: baseline,
            improvement: acc - baseline,
            accuracy_curve,
            profile: topk_profile(&outcome.ranking, truth, &TOPK_BINS)?,
            queries: outcome.queries,
            config_fingerprint: config_fingerprint.to_string(),
            seed,
        })
    }
}
