use serde::{Deserialize, Serialize};

use super::config::{GeneratorLoss, TrainConfig};
use super::TrainError;
use crate::nn::{forward_on_tape, reparameterize, split_encoding, ForwardHooks, Mode, Network};
use crate::tensor::{NodeId, RngState, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRole {
    Real,
    Fake,
}

fn draw(n: usize, [lo, hi]: [f64; 2], rng: &mut RngState) -> Vec<f64> {
    (0..n).map(|_| if lo == hi { lo } else { rng.uniform(lo, hi) }).collect()
}

/// Soft targets for one role: uniform in the role's interval, except that
/// with probability `label_flip_prob` the whole batch takes the other
/// role's interval.
pub fn smooth_labels(role: LabelRole, batch_size: usize, cfg: &TrainConfig, rng: &mut RngState) -> Vec<f64> {
    let flip = rng.uniform(0.0, 1.0) < cfg.label_flip_prob;
    let real = (role == LabelRole::Real) != flip;
    draw(batch_size, if real { cfg.label_smooth_real } else { cfg.label_smooth_fake }, rng)
}

/// Labels for a real and a fake batch sharing one flip decision, so a
/// flipped step swaps the two assignments.
pub fn smooth_label_pair(real_n: usize, fake_n: usize, cfg: &TrainConfig, rng: &mut RngState) -> (Vec<f64>, Vec<f64>) {
    let flip = rng.uniform(0.0, 1.0) < cfg.label_flip_prob;
    let (r, f) = if flip { (cfg.label_smooth_fake, cfg.label_smooth_real) } else { (cfg.label_smooth_real, cfg.label_smooth_fake) };
    let real = draw(real_n, r, rng);
    let fake = draw(fake_n, f, rng);
    (real, fake)
}

/// Mean binary cross-entropy against soft targets, evaluated from logits:
/// `y·softplus(−l) + (1 − y)·softplus(l)`.
pub fn bce_with_logits(tape: &mut Tape, logits: NodeId, targets: &[f64]) -> Result<NodeId, TrainError> {
    let y = tape.constant(Tensor::new(tape.shape(logits).to_vec(), targets.to_vec())?);
    let one_minus_y = tape.constant(Tensor::new(tape.shape(logits).to_vec(), targets.iter().map(|t| 1.0 - t).collect())?);
    let neg = tape.neg(logits)?;
    let sp_neg = tape.softplus(neg)?;
    let sp_pos = tape.softplus(logits)?;
    let a = tape.mul(y, sp_neg)?;
    let b = tape.mul(one_minus_y, sp_pos)?;
    let per = tape.add(a, b)?;
    Ok(tape.mean(per)?)
}

/// Generator objective on discriminator logits of generated samples.
pub fn generator_objective(tape: &mut Tape, logits: NodeId, kind: GeneratorLoss) -> Result<NodeId, TrainError> {
    Ok(match kind {
        // −log σ(l) = softplus(−l)
        GeneratorLoss::NonSaturating => {
            let neg = tape.neg(logits)?;
            let sp = tape.softplus(neg)?;
            tape.mean(sp)?
        }
        // log(1 − σ(l)) = −softplus(l)
        GeneratorLoss::Minimax => {
            let sp = tape.softplus(logits)?;
            let m = tape.mean(sp)?;
            tape.neg(m)?
        }
    })
}

/// Closed-form `KL(N(μ, σ²) ‖ N(0, I))` summed over latent units and
/// averaged over the batch: `½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_divergence(tape: &mut Tape, mu: NodeId, log_var: NodeId) -> Result<NodeId, TrainError> {
    if !tape.value(log_var).is_finite() {
        return Err(TrainError::Config("non-finite log-variance".into()));
    }
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(log_var)?;
    let s = tape.add(mu2, var)?;
    let s = tape.sub(s, log_var)?;
    let s = tape.offset(s, -1.0)?;
    let per_record = tape.sum_axes(s, &[1])?;
    let m = tape.mean(per_record)?;
    Ok(tape.scale(m, 0.5)?)
}

/// Negative evidence lower bound from an encoder output `[B, 2·latent]`
/// with unit-variance Gaussian likelihood (additive constants dropped) and
/// one reparameterized sample: `KL + ½ ‖x − dec(z)‖²`, batch-averaged.
pub fn negative_elbo_on_tape(
    tape: &mut Tape,
    x: NodeId,
    encoding: NodeId,
    decoder: &Network,
    rng: &mut RngState,
) -> Result<NodeId, TrainError> {
    let latent = decoder.spec.latent_dim.ok_or_else(|| TrainError::Config("decoder has no latent_dim".into()))?;
    let (mu, log_var) = split_encoding(tape, encoding, latent)?;
    let kl = kl_divergence(tape, mu, log_var)?;
    let z = reparameterize(tape, mu, log_var, rng)?;
    let db = decoder.params.bind(tape, true);
    let trace = forward_on_tape(tape, &decoder.spec, &decoder.params, &db, z, Mode::Eval, rng, ForwardHooks::default())?;
    let d = tape.row_sq_dist(x, trace.output)?;
    let rec = tape.mean(d)?;
    let rec = tape.scale(rec, 0.5)?;
    Ok(tape.add(kl, rec)?)
}

/// `−L(x)` for a batch.
pub fn vae_elbo(x: &Tensor, encoder: &Network, decoder: &Network, rng: &mut RngState) -> Result<f64, TrainError> {
    let mut tape = Tape::new(crate::tensor::Precision::F64);
    let eb = encoder.params.bind(&mut tape, false);
    let xn = tape.constant(x.clone());
    let enc = forward_on_tape(&mut tape, &encoder.spec, &encoder.params, &eb, xn, Mode::Eval, rng, ForwardHooks::default())?;
    let loss = negative_elbo_on_tape(&mut tape, xn, enc.output, decoder, rng)?;
    Ok(tape.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;

    fn cfg(flip: f64) -> TrainConfig {
        TrainConfig { label_flip_prob: flip, ..Default::default() }
    }

    #[test]
    fn labels_stay_in_role_interval_without_flips() {
        let mut rng = RngState::new(1);
        for _ in 0..10_000 {
            let r = smooth_labels(LabelRole::Real, 4, &cfg(0.0), &mut rng);
            assert!(r.iter().all(|v| (0.7..=1.2).contains(v)));
            let f = smooth_labels(LabelRole::Fake, 4, &cfg(0.0), &mut rng);
            assert!(f.iter().all(|v| (0.0..=0.3).contains(v)));
        }
    }

    #[test]
    fn flip_rate_matches_probability() {
        let mut rng = RngState::new(2);
        let flips = (0..20_000)
            .filter(|_| {
                let (r, f) = smooth_label_pair(2, 2, &cfg(0.05), &mut rng);
                let swapped = r.iter().all(|v| *v <= 0.3);
                assert_eq!(swapped, f.iter().all(|v| *v >= 0.7));
                swapped
            })
            .count();
        let rate = flips as f64 / 20_000.0;
        assert!((rate - 0.05).abs() < 0.006, "{rate}");
    }

    #[test]
    fn bce_matches_direct_formula() {
        let mut tape = Tape::new(Precision::F64);
        let l = tape.constant(Tensor::new([3, 1], vec![-2.0, 0.0, 3.0]).unwrap());
        let y = [0.9, 0.1, 1.2];
        let loss = bce_with_logits(&mut tape, l, &y).unwrap();
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let direct: f64 = [-2.0f64, 0.0, 3.0]
            .iter()
            .zip(y)
            .map(|(&l, y)| -(y * s(l).ln() + (1.0 - y) * (1.0 - s(l)).ln()))
            .sum::<f64>()
            / 3.0;
        assert!((tape.value(loss).item() - direct).abs() < 1e-12);
    }

    #[test]
    fn half_probability_minimax_value() {
        // D ≡ 0.5: E[log D(x)] + E[log(1 − D(G(z)))] = 2 log 0.5
        let mut tape = Tape::new(Precision::F64);
        let l = tape.constant(Tensor::zeros([4, 1]));
        let real = bce_with_logits(&mut tape, l, &[1.0; 4]).unwrap();
        let fake = generator_objective(&mut tape, l, GeneratorLoss::Minimax).unwrap();
        let value = -tape.value(real).item() + tape.value(fake).item();
        assert!((value - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((value + 1.3863).abs() < 1e-4);
    }

    #[test]
    fn kl_closed_form_cases() {
        let mut tape = Tape::new(Precision::F64);
        let mu = tape.constant(Tensor::new([1, 1], vec![0.0]).unwrap());
        let lv = tape.constant(Tensor::new([1, 1], vec![0.0]).unwrap());
        let kl = kl_divergence(&mut tape, mu, lv).unwrap();
        assert_eq!(tape.value(kl).item(), 0.0);
        let mu = tape.constant(Tensor::new([1, 1], vec![1.0]).unwrap());
        let kl = kl_divergence(&mut tape, mu, lv).unwrap();
        assert!((tape.value(kl).item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_finite_log_variance_rejected() {
        let mut tape = Tape::new(Precision::F64);
        let mu = tape.constant(Tensor::zeros([1, 1]));
        let mut lv = Tensor::zeros([1, 1]);
        lv.data_mut()[0] = f64::INFINITY;
        let lv = tape.constant(lv);
        assert!(kl_divergence(&mut tape, mu, lv).is_err());
    }
}
