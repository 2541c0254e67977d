//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use genleak::attack::{
    AttackerConfig, DiscriminativeSetting, GenerativeSetting, DEFAULT_AUX_DELAY, DEFAULT_EVAL_INTERVAL, DEFAULT_NUM_GENERATED,
};
use genleak::data::{CsvOptions, SplitConstruction, SyntheticSpec};
use genleak::eval::TOPK_BINS;
use genleak::nn::{Preset, PresetOptions};
use genleak::train::{ModelFamily, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// One target-train, attack and evaluate run, fully determined by its
/// contents and `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetSection,
    pub target: TargetSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Idx,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub path: PathBuf,
    pub format: FileFormat,
    /// IDX label file.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub csv: CsvOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub file: Option<FileSource>,
    pub split: SplitConstruction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    #[serde(default = "default_family")]
    pub family: ModelFamily,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub options: PresetOptions,
    /// Includes the defense (`[target.training.defense]`). The seed is
    /// replaced by one derived from the experiment seed.
    #[serde(default)]
    pub training: TrainConfig,
}

fn default_family() -> ModelFamily {
    ModelFamily::Gan
}

fn default_preset() -> Preset {
    Preset::MlpSmall
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Whitebox,
    Blackbox,
    DiscriminativeAux,
    GenerativeAux,
    Euclidean,
    Shadow,
}

impl AttackKind {
    /// Whether the attack needs the target's discriminator.
    pub fn is_whitebox(self) -> bool {
        self == AttackKind::Whitebox
    }

    pub fn uses_attacker_model(self) -> bool {
        !matches!(self, AttackKind::Whitebox | AttackKind::Euclidean)
    }
}

impl std::str::FromStr for AttackKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        let v = toml::Value::String(s.replace('-', "_"));
        AttackKind::deserialize(v).map_err(|_| CliError::Usage(format!("unknown attack mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxSetting {
    TestOnly,
    TrainOnly,
    TrainAndTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub kind: AttackKind,
    /// Attacker training steps; `None` uses the kind's default.
    pub steps: Option<u64>,
    pub setting: AuxSetting,
    pub aux_train_fraction: f64,
    pub aux_test_fraction: f64,
    /// Plain black-box steps before the known records join the
    /// generative auxiliary attack.
    pub delay: u64,
    pub num_generated: usize,
    /// Also report a score-threshold cut.
    pub threshold: Option<f64>,
    pub attacker: AttackerModel,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            kind: AttackKind::Whitebox,
            steps: None,
            setting: AuxSetting::TrainAndTest,
            aux_train_fraction: 0.3,
            aux_test_fraction: 0.3,
            delay: DEFAULT_AUX_DELAY,
            num_generated: DEFAULT_NUM_GENERATED,
            threshold: None,
            attacker: AttackerModel::default(),
        }
    }
}

impl AttackSection {
    pub fn discriminative_setting(&self) -> Result<DiscriminativeSetting, CliError> {
        match self.setting {
            AuxSetting::TestOnly => Ok(DiscriminativeSetting::TestOnly),
            AuxSetting::TrainAndTest => Ok(DiscriminativeSetting::TrainAndTest),
            AuxSetting::TrainOnly => Err(CliError::Config("discriminative_aux takes setting test_only or train_and_test".into())),
        }
    }

    pub fn generative_setting(&self) -> Result<GenerativeSetting, CliError> {
        match self.setting {
            AuxSetting::TrainOnly => Ok(GenerativeSetting::TrainOnly),
            AuxSetting::TrainAndTest => Ok(GenerativeSetting::TrainAndTest),
            AuxSetting::TestOnly => Err(CliError::Config("generative_aux takes setting train_only or train_and_test".into())),
        }
    }

    pub fn effective_steps(&self) -> u64 {
        self.steps.unwrap_or(match self.kind {
            AttackKind::GenerativeAux => genleak::attack::GENERATIVE_AUX_DEFAULT_STEPS,
            _ => genleak::attack::BLACKBOX_DEFAULT_STEPS,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerModel {
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub options: PresetOptions,
    #[serde(default)]
    pub training: TrainConfig,
}

impl Default for AttackerModel {
    fn default() -> Self {
        Self { preset: Preset::MlpSmall, options: PresetOptions::default(), training: TrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub eval_interval: u64,
    pub topk_bins: Vec<f64>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { eval_interval: DEFAULT_EVAL_INTERVAL, topk_bins: TOPK_BINS.to_vec() }
    }
}

/// Stable 64-bit seed for one pipeline stage.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let h = Sha256::new().chain_update(stage.as_bytes()).chain_update(seed.to_le_bytes()).finalize();
    u64::from_le_bytes(h[..8].try_into().expect("digest is 32 bytes")) >> 1
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            CliError::Parse { file: "<config>".into(), line, column, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Parse { line, column, message, .. } => CliError::Parse { file: path.display().to_string(), line, column, message },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.dataset.synthetic, &self.dataset.file) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(CliError::Config("[dataset] needs exactly one of `synthetic` or `file`".into())),
        }
        if self.evaluation.eval_interval == 0 {
            return Err(CliError::Config("evaluation.eval_interval must be at least 1".into()));
        }
        if self.evaluation.topk_bins.iter().any(|&k| !(k > 0.0 && k <= 1.0)) {
            return Err(CliError::Config("evaluation.topk_bins must lie in (0, 1]".into()));
        }
        for f in [self.attack.aux_train_fraction, self.attack.aux_test_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return Err(CliError::Config(format!("aux fraction {f} outside [0, 1]")));
            }
        }
        match self.attack.kind {
            AttackKind::DiscriminativeAux => {
                self.attack.discriminative_setting()?;
            }
            AttackKind::GenerativeAux => {
                self.attack.generative_setting()?;
            }
            _ => {}
        }
        self.target_training().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// Target training settings with the derived seed.
    pub fn target_training(&self) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, "target"), ..self.target.training.clone() }
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    pub fn aux_seed(&self) -> u64 {
        derive_seed(self.seed, "aux")
    }

    /// Seed of the black-box oracle's latent stream.
    pub fn oracle_seed(&self) -> u64 {
        derive_seed(self.seed, "oracle")
    }

    pub fn attacker_config(&self) -> AttackerConfig {
        let a = &self.attack.attacker;
        AttackerConfig {
            preset: a.preset,
            options: a.options.clone(),
            training: TrainConfig { seed: derive_seed(self.seed, "attacker"), ..a.training.clone() },
            steps: self.attack.effective_steps(),
            eval_interval: self.evaluation.eval_interval,
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    /// SHA-256 of the canonical serialization.
    pub fn fingerprint(&self) -> Result<String, CliError> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
