use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensor::{OptimizerConfig, Precision};

/// Generator objective. `NonSaturating` minimizes `−log D(G(z))`;
/// `Minimax` minimizes the literal `log(1 − D(G(z)))`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    #[default]
    NonSaturating,
    Minimax,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionSite {
    ForwardPass,
    #[default]
    Gradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DPConfig {
    pub noise_sigma: f64,
    pub injection_site: InjectionSite,
    /// Per-record gradient norm bound (gradient mode only).
    pub clip_norm: f64,
    pub delta: f64,
    /// Poisson-style sampling rate `batch_size / n`; `None` lets the
    /// trainer derive it from the training-set size.
    pub sampling_rate: Option<f64>,
}

impl Default for DPConfig {
    fn default() -> Self {
        Self { noise_sigma: 1.0, injection_site: InjectionSite::Gradient, clip_norm: 1.0, delta: 1e-4, sampling_rate: None }
    }
}

impl DPConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(TrainError::Config(format!("dp noise_sigma must be positive, got {}", self.noise_sigma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(TrainError::Config(format!("dp delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.injection_site == InjectionSite::Gradient && !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(TrainError::Config(format!("dp clip_norm must be positive, got {}", self.clip_norm)));
        }
        if let Some(q) = self.sampling_rate {
            if !(q > 0.0 && q <= 1.0) {
                return Err(TrainError::Config(format!("dp sampling rate must lie in (0, 1], got {q}")));
            }
        }
        Ok(())
    }
}

/// Target-model defense. Dropout and weight normalization change the
/// discriminator architecture; DP changes the discriminator update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Defense {
    #[default]
    None,
    Dropout {
        #[serde(default = "half")]
        p: f64,
    },
    WeightNorm,
    Dp(DPConfig),
}

fn half() -> f64 {
    0.5
}

impl Defense {
    pub fn dp(&self) -> Option<&DPConfig> {
        match self {
            Defense::Dp(dp) => Some(dp),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    /// Weight of the feature-space reconstruction term.
    pub recon_weight: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { recon_weight: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeganConfig {
    pub gamma: f64,
    pub lambda_k: f64,
    pub k0: f64,
}

impl Default for BeganConfig {
    fn default() -> Self {
        Self { gamma: 0.5, lambda_k: 0.001, k0: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Passes over the training split; ignored when `max_steps` is set.
    pub epochs: u64,
    pub max_steps: Option<u64>,
    pub label_smooth_real: [f64; 2],
    pub label_smooth_fake: [f64; 2],
    pub label_flip_prob: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub defense: Defense,
    pub generator_loss: GeneratorLoss,
    pub precision: Precision,
    pub vae: VaeConfig,
    pub began: BeganConfig,
    /// Write a checkpoint every this many steps (in addition to the end).
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            max_steps: None,
            label_smooth_real: [0.7, 1.2],
            label_smooth_fake: [0.0, 0.3],
            label_flip_prob: 0.05,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            defense: Defense::None,
            generator_loss: GeneratorLoss::NonSaturating,
            precision: Precision::F32,
            vae: VaeConfig::default(),
            began: BeganConfig::default(),
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        for (name, [lo, hi]) in [("label_smooth_real", self.label_smooth_real), ("label_smooth_fake", self.label_smooth_fake)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(TrainError::Config(format!("{name} interval [{lo}, {hi}] is not ordered")));
            }
        }
        if !(0.0..=1.0).contains(&self.label_flip_prob) {
            return Err(TrainError::Config(format!("label_flip_prob {} outside [0, 1]", self.label_flip_prob)));
        }
        self.optimizer.validate()?;
        match &self.defense {
            Defense::Dropout { p } if !(0.0..1.0).contains(p) => {
                return Err(TrainError::Config(format!("dropout p {p} outside [0, 1)")));
            }
            Defense::Dp(dp) => dp.validate()?,
            _ => {}
        }
        let b = &self.began;
        if !(b.gamma > 0.0 && b.gamma <= 1.0) || !(b.lambda_k > 0.0) || !(0.0..=1.0).contains(&b.k0) {
            return Err(TrainError::Config(format!("began settings out of range: {b:?}")));
        }
        if self.checkpoint_every == Some(0) {
            return Err(TrainError::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }

    /// `⌈n / batch_size⌉`.
    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        self.max_steps.unwrap_or(self.epochs * self.steps_per_epoch(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_settings_rejected() {
        let bad = [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { label_smooth_real: [1.2, 0.7], ..Default::default() },
            TrainConfig { label_flip_prob: 1.5, ..Default::default() },
            TrainConfig { defense: Defense::Dp(DPConfig { delta: 1.0, ..Default::default() }), ..Default::default() },
            TrainConfig { defense: Defense::Dp(DPConfig { noise_sigma: 0.0, ..Default::default() }), ..Default::default() },
            TrainConfig { defense: Defense::Dp(DPConfig { sampling_rate: Some(1.5), ..Default::default() }), ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn steps_per_epoch_is_ceiling() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.steps_per_epoch(32), 1);
        assert_eq!(cfg.steps_per_epoch(33), 2);
        assert_eq!(cfg.steps_per_epoch(1323), 42);
        assert_eq!(TrainConfig { epochs: 3, ..cfg }.total_steps(100), 12);
    }
}
