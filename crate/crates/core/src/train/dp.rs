use super::config::{DPConfig, InjectionSite};
use super::TrainError;
use crate::tensor::RngState;

/// Rényi orders searched by the accountant.
pub const RDP_ORDERS: std::ops::RangeInclusive<u32> = 2..=64;

pub enum DpInput<'a> {
    /// Hidden-layer outputs; noised element-wise with N(0, σ²).
    Activations(&'a [f64]),
    /// One flattened gradient per record; each is clipped to `clip_norm`,
    /// the clipped gradients are summed and N(0, σ²C²) is added.
    PerRecordGradients(&'a [Vec<f64>]),
}

pub fn dp_apply(input: DpInput<'_>, dp: &DPConfig, rng: &mut RngState) -> Result<Vec<f64>, TrainError> {
    dp.validate()?;
    match input {
        DpInput::Activations(x) => Ok(x.iter().map(|v| v + dp.noise_sigma * rng.normal()).collect()),
        DpInput::PerRecordGradients(grads) => {
            let len = grads.first().map_or(0, Vec::len);
            let mut sum = vec![0.0; len];
            for g in grads {
                if g.len() != len {
                    return Err(TrainError::Config("per-record gradients differ in length".into()));
                }
                let scale = clip_factor(g, dp.clip_norm);
                for (s, v) in sum.iter_mut().zip(g) {
                    *s += v * scale;
                }
            }
            let std = dp.noise_sigma * dp.clip_norm;
            for s in &mut sum {
                *s += std * rng.normal();
            }
            Ok(sum)
        }
    }
}

/// Multiplier bringing `g` within norm `c`.
pub fn clip_factor(g: &[f64], c: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > c {
        c / norm
    } else {
        1.0
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Rényi divergence of integer order `alpha` of one step of the sampled
/// Gaussian mechanism (sensitivity 1, noise σ, sampling rate q), from the
/// binomial expansion of `E_{μ0}[(μ/μ0)^α]`.
pub fn rdp_sampled_gaussian(q: f64, sigma: f64, alpha: u32) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    let a = alpha as f64;
    if q == 1.0 {
        return a / (2.0 * sigma * sigma);
    }
    let (lq, l1q) = (q.ln(), (1.0 - q).ln());
    let mut log_binom = 0.0;
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=alpha {
        if k > 0 {
            log_binom += ((alpha - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        let term = log_binom + (a - kf) * l1q + kf * lq + (kf * kf - kf) / (2.0 * sigma * sigma);
        acc = log_add(acc, term);
    }
    acc / (a - 1.0)
}

/// ε at `dp.delta` after `steps` compositions of the sampled Gaussian
/// mechanism: `min_α [steps·RDP(α) + log(1/δ)/(α − 1)]` over integer
/// orders 2..=64.
pub fn epsilon_account(dp: &DPConfig, steps: u64) -> Result<f64, TrainError> {
    dp.validate()?;
    if dp.injection_site == InjectionSite::ForwardPass {
        return Err(TrainError::NotAccounted);
    }
    let q = dp.sampling_rate.ok_or_else(|| TrainError::Config("dp sampling rate not resolved".into()))?;
    if steps == 0 {
        return Ok(0.0);
    }
    let log_inv_delta = (1.0 / dp.delta).ln();
    Ok(RDP_ORDERS
        .map(|a| steps as f64 * rdp_sampled_gaussian(q, dp.noise_sigma, a) + log_inv_delta / (a as f64 - 1.0))
        .fold(f64::INFINITY, f64::min))
}

/// Smallest σ (to 1e-3 relative) with `epsilon_account ≤ target`.
pub fn sigma_for_epsilon(target: f64, q: f64, steps: u64, delta: f64) -> Result<f64, TrainError> {
    let eps = |sigma: f64| {
        epsilon_account(&DPConfig { noise_sigma: sigma, sampling_rate: Some(q), delta, ..Default::default() }, steps)
    };
    let (mut lo, mut hi) = (1e-2, 1.0);
    while eps(hi)? > target {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(TrainError::Config(format!("no σ reaches ε = {target}")));
        }
    }
    while (hi - lo) / hi > 1e-3 {
        let mid = 0.5 * (lo + hi);
        if eps(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
