use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::nn::{forward_on_tape, ForwardHooks, Mode, Network, NetworkRole};
use crate::tensor::{Precision, RngState, Tape, Tensor};

/// Per-candidate confidence that the record is real, in candidate order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub Vec<f64>);

/// Candidate indices by descending score, ties by ascending index. The
/// first `claimed_n` entries are the predicted members.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRanking {
    order: Vec<usize>,
    claimed_n: usize,
}

impl PredictionRanking {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn claimed_n(&self) -> usize {
        self.claimed_n
    }

    pub fn predicted_members(&self) -> &[usize] {
        &self.order[..self.claimed_n]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

pub fn rank_scores(scores: &[f64], claimed_n: usize) -> Result<PredictionRanking, AttackError> {
    if claimed_n == 0 || claimed_n > scores.len() {
        return Err(AttackError::Config(format!("claimed_n {claimed_n} must lie in 1..={}", scores.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(AttackError::NonFinite(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite").then(a.cmp(&b)));
    Ok(PredictionRanking { order, claimed_n })
}

const CHUNK: usize = 1024;

/// Eval-mode scores of `x` under `d` and the induced ranking.
///
/// For a sigmoid discriminator the scores are probabilities but the
/// ranking uses the logits, so saturated probabilities do not collapse
/// into ties. Autoencoder discriminators score by negative mean absolute
/// reconstruction error.
pub fn score_and_rank(d: &Network, x: &Tensor, claimed_n: usize) -> Result<(ScoreVector, PredictionRanking), AttackError> {
    if x.shape().get(1..) != Some(d.spec.input_shape.as_slice()) {
        return Err(AttackError::Shape { expected: d.spec.input_shape.clone(), got: x.shape().get(1..).unwrap_or(&[]).to_vec() });
    }
    let mut scores = Vec::with_capacity(x.rows());
    let mut keys = Vec::with_capacity(x.rows());
    let mut rng = RngState::new(0);
    let rows: Vec<usize> = (0..x.rows()).collect();
    for chunk in rows.chunks(CHUNK) {
        let batch = x.select_rows(chunk);
        let mut tape = Tape::new(Precision::F64);
        let b = d.params.bind(&mut tape, false);
        let input = tape.constant(batch.clone());
        let t = forward_on_tape(&mut tape, &d.spec, &d.params, &b, input, Mode::Eval, &mut rng, ForwardHooks::default())?;
        match d.spec.role {
            NetworkRole::Discriminator => {
                scores.extend_from_slice(tape.value(t.output).data());
                keys.extend_from_slice(tape.value(t.pre_activation).data());
            }
            NetworkRole::Autoencoder => {
                let out = tape.value(t.output);
                for i in 0..batch.rows() {
                    let (a, r) = (batch.row(i), out.row(i));
                    let s = -a.iter().zip(r).map(|(u, v)| (u - v).abs()).sum::<f64>() / a.len() as f64;
                    scores.push(s);
                    keys.push(s);
                }
            }
            other => return Err(AttackError::UnsupportedTarget(format!("a {other:?} network cannot score records"))),
        }
    }
    let ranking = rank_scores(&keys, claimed_n)?;
    Ok((ScoreVector(scores), ranking))
}
