use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::tensor::RngState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitConstruction {
    RandomFraction { fraction: f64 },
    TopClasses { k: usize },
    /// Members are all records carrying one of `labels`.
    Labels { labels: Vec<u32> },
}

/// Ground-truth partition into training members and held-out records.
/// Index lists are sorted ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipSplit {
    pub train_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
    pub seed: u64,
    pub construction: SplitConstruction,
}

impl MembershipSplit {
    pub fn n(&self) -> usize {
        self.train_indices.len()
    }

    pub fn m(&self) -> usize {
        self.holdout_indices.len()
    }

    pub fn total(&self) -> usize {
        self.n() + self.m()
    }

    pub fn is_member(&self, i: usize) -> bool {
        self.train_indices.binary_search(&i).is_ok()
    }

    /// Membership flag per dataset index.
    pub fn member_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total()];
        for &i in &self.train_indices {
            mask[i] = true;
        }
        mask
    }

    fn build(mut train: Vec<usize>, total: usize, seed: u64, construction: SplitConstruction) -> Result<Self, DataError> {
        train.sort_unstable();
        let mut is_train = vec![false; total];
        for &i in &train {
            is_train[i] = true;
        }
        let holdout: Vec<usize> = (0..total).filter(|&i| !is_train[i]).collect();
        if train.is_empty() || holdout.is_empty() {
            return Err(DataError::Split(format!(
                "need at least one member and one non-member (n = {}, m = {})",
                train.len(),
                holdout.len()
            )));
        }
        Ok(Self { train_indices: train, holdout_indices: holdout, seed, construction })
    }
}

/// `⌊x⌋` tolerant of representation error just below an integer.
fn floor_count(frac: f64, total: usize) -> usize {
    (frac * total as f64 + 1e-9).floor() as usize
}

/// Uniformly random members, `n = ⌊f · |ds|⌋`.
pub fn split_random_fraction(ds: &Dataset, fraction: f64, seed: u64) -> Result<MembershipSplit, DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Split(format!("fraction {fraction} outside (0, 1)")));
    }
    let n = floor_count(fraction, ds.len());
    if n == 0 {
        return Err(DataError::Split(format!("fraction {fraction} of {} records selects nobody", ds.len())));
    }
    let perm = RngState::new(seed).permutation(ds.len());
    MembershipSplit::build(perm[..n].to_vec(), ds.len(), seed, SplitConstruction::RandomFraction { fraction })
}

/// Members are every record of the `k` most frequent labels; ties go to
/// the smaller label id.
pub fn split_top_classes(ds: &Dataset, k: usize) -> Result<MembershipSplit, DataError> {
    let labels = ds.labels().ok_or(DataError::Unlabeled)?;
    let mut counts = std::collections::BTreeMap::<u32, usize>::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let chosen: Vec<u32> = ranked.iter().take(k).map(|(l, _)| *l).collect();
    let train = (0..ds.len()).filter(|&i| chosen.contains(&labels[i])).collect();
    MembershipSplit::build(train, ds.len(), 0, SplitConstruction::TopClasses { k })
}

pub fn split_by_labels(ds: &Dataset, chosen: &[u32]) -> Result<MembershipSplit, DataError> {
    let labels = ds.labels().ok_or(DataError::Unlabeled)?;
    let train = (0..ds.len()).filter(|&i| chosen.contains(&labels[i])).collect();
    MembershipSplit::build(train, ds.len(), 0, SplitConstruction::Labels { labels: chosen.to_vec() })
}

/// Partial ground truth available to an attacker.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxKnowledge {
    pub known_members: Vec<usize>,
    pub known_nonmembers: Vec<usize>,
}

impl AuxKnowledge {
    pub fn is_empty(&self) -> bool {
        self.known_members.is_empty() && self.known_nonmembers.is_empty()
    }
}

/// Random `⌊train_frac · n⌋` members and `⌊test_frac · m⌋` non-members.
pub fn sample_aux_knowledge(split: &MembershipSplit, train_frac: f64, test_frac: f64, seed: u64) -> Result<AuxKnowledge, DataError> {
    for f in [train_frac, test_frac] {
        if !(0.0..=1.0).contains(&f) {
            return Err(DataError::Split(format!("knowledge fraction {f} outside [0, 1]")));
        }
    }
    let mut rng = RngState::new(seed);
    let mut pick = |pool: &[usize], frac: f64| {
        let k = floor_count(frac, pool.len());
        let perm = rng.permutation(pool.len());
        let mut chosen: Vec<usize> = perm[..k].iter().map(|&p| pool[p]).collect();
        chosen.sort_unstable();
        chosen
    };
    let known_members = pick(&split.train_indices, train_frac);
    let known_nonmembers = pick(&split.holdout_indices, test_frac);
    Ok(AuxKnowledge { known_members, known_nonmembers })
}
