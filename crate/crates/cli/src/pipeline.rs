//! Run directories and the data → split → train → attack → evaluate →
//! persist pipeline.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use genleak::atomic::write_atomic;
use genleak::attack::{
    blackbox_attack, discriminative_aux_attack, euclidean_attack, generative_aux_attack, shadow_attack, whitebox_attack, AttackError,
    AttackOutcome, GeneratorSampler, PredictionRanking, StreamMix,
};
use genleak::data::{load_csv, load_idx, load_idx_labels, sample_aux_knowledge, split_by_labels, split_random_fraction, split_top_classes};
use genleak::data::{synth_generate, Dataset, MembershipSplit, SplitConstruction};
use genleak::eval::{
    query_cost_estimate, read_curve_csv, svg_line_chart, threshold_predictions, threshold_report, topk_profile, write_curve_csv,
    write_summary_json, AttackResult, Series, ThresholdReport, FREE_QUERIES, PRICE_PER_1000,
};
use genleak::nn::Network;
use genleak::train::{
    epsilon_account, load_checkpoint, save_checkpoint, Checkpoint, CheckpointReader, Defense, InjectionSite, MetricsWriter, TrainConfig,
    TrainSink, Trainer,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{AttackKind, ExperimentConfig, FileFormat};
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const FAILURE: &str = "failure.json";
pub const CONFIG: &str = "config.toml";
pub const CHECKPOINT: &str = "target.ckpt";
pub const GENERATOR_CHECKPOINT: &str = "generator.ckpt";
pub const METRICS: &str = "metrics.csv";
pub const SPLIT: &str = "split.json";
pub const CURVE: &str = "accuracy.csv";
pub const SUMMARY: &str = "summary.json";
pub const CHART: &str = "accuracy.svg";
pub const REPORT_CHART: &str = "report.svg";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Data,
    Split,
    Train,
    Attack,
    Evaluate,
    Persist,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Setup => "setup",
            Stage::Data => "data",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Evaluate => "evaluate",
            Stage::Persist => "persist",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

trait At<T> {
    fn at(self, stage: Stage) -> Result<T, CliError>;
}

impl<T, E: fmt::Display> At<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|e| CliError::Stage { stage, message: e.to_string() })
    }
}

/// Files of a run, relative to its directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoints: Vec<String>,
    pub csvs: Vec<String>,
    pub svgs: Vec<String>,
    /// Config copy, split and summary records.
    pub other: Vec<String>,
    /// Files read but not produced by this run.
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub artifacts: Artifacts,
    pub timings: Vec<StageTiming>,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = dir.as_ref().join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Privacy {
    NoDp,
    Accounted { epsilon: f64, delta: f64, steps: u64, sampling_rate: f64, noise_sigma: f64 },
    /// Forward-pass noise has no accounted budget.
    NotAccounted,
}

pub fn privacy_of(cfg: &TrainConfig, steps: u64) -> Result<Privacy, CliError> {
    let Defense::Dp(dp) = cfg.defense else { return Ok(Privacy::NoDp) };
    if dp.injection_site == InjectionSite::ForwardPass {
        return Ok(Privacy::NotAccounted);
    }
    let epsilon = epsilon_account(&dp, steps).at(Stage::Train)?;
    Ok(Privacy::Accounted {
        epsilon,
        delta: dp.delta,
        steps,
        sampling_rate: dp.sampling_rate.unwrap_or(1.0),
        noise_sigma: dp.noise_sigma,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub attack: AttackKind,
    pub n: usize,
    pub m: usize,
    pub result: AttackResult,
    pub threshold: Option<ThresholdReport>,
    /// Estimated price of the oracle queries.
    pub query_cost_usd: f64,
    pub mix: Option<StreamMix>,
    pub target_steps: u64,
    pub privacy: Privacy,
    /// Tensors read from the target artifact, in order.
    pub tensors_read: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub summary: Option<RunSummary>,
}

struct RunDir {
    root: PathBuf,
    timings: Vec<StageTiming>,
    stage: Stage,
    artifacts: Artifacts,
}

impl RunDir {
    /// Refuses a non-empty directory unless resuming.
    fn open(root: &Path, resume: bool) -> Result<Self, CliError> {
        if root.exists() {
            let busy = std::fs::read_dir(root)?.next().is_some();
            if busy && !resume {
                return Err(CliError::RunExists(root.to_path_buf()));
            }
        }
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), timings: Vec::new(), stage: Stage::Setup, artifacts: Artifacts::default() })
    }

    fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn time<T>(&mut self, stage: Stage, f: impl FnOnce(&mut Self) -> Result<T, CliError>) -> Result<T, CliError> {
        self.stage = stage;
        let start = Instant::now();
        let out = f(self)?;
        self.timings.push(StageTiming { stage, seconds: start.elapsed().as_secs_f64() });
        Ok(out)
    }

    /// Saves the effective config, or checks it against the saved one.
    fn pin_config(&mut self, text: &str) -> Result<(), CliError> {
        let path = self.file(CONFIG);
        if path.exists() {
            if std::fs::read_to_string(&path)? != text {
                return Err(CliError::Config(format!("{} was started with a different config", self.root.display())));
            }
        } else {
            write_atomic(&path, text.as_bytes())?;
        }
        self.artifacts.other.push(CONFIG.into());
        Ok(())
    }

    fn fail(&self, err: &CliError) {
        #[derive(Serialize)]
        struct Failure<'a> {
            stage: Stage,
            error: String,
            unix_time: u64,
            completed: &'a [StageTiming],
        }
        let stage = match err {
            CliError::Stage { stage, .. } => *stage,
            _ => self.stage,
        };
        let rec = Failure { stage, error: err.to_string(), unix_time: unix_now(), completed: &self.timings };
        if let Ok(mut bytes) = serde_json::to_vec_pretty(&rec) {
            bytes.push(b'\n');
            let _ = write_atomic(self.file(FAILURE), &bytes);
        }
    }

    fn finish(self, command: &str, config_hash: String, seed: u64) -> Result<RunManifest, CliError> {
        let a = &self.artifacts;
        for rel in a.checkpoints.iter().chain(&a.csvs).chain(&a.svgs).chain(&a.other) {
            if !self.file(rel).is_file() {
                return Err(CliError::Io(format!("artifact {rel} is missing from {}", self.root.display())));
            }
        }
        let manifest = RunManifest {
            command: command.into(),
            config_hash,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            artifacts: self.artifacts,
            timings: self.timings,
            finished_unix: unix_now(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        write_atomic(self.root.join(MANIFEST), &bytes)?;
        Ok(manifest)
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Runs `body` and leaves a failure record in the directory if it fails.
fn guarded<T>(dir: &mut RunDir, body: impl FnOnce(&mut RunDir) -> Result<T, CliError>) -> Result<T, CliError> {
    let out = body(dir);
    if let Err(e) = &out {
        dir.fail(e);
    }
    out
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let ds = match (&cfg.dataset.synthetic, &cfg.dataset.file) {
        (Some(spec), _) => synth_generate(spec).at(Stage::Data)?,
        (None, Some(src)) => match src.format {
            FileFormat::Idx => {
                let ds = load_idx(&src.path).at(Stage::Data)?;
                match &src.labels {
                    Some(p) => Dataset::new(ds.records().clone(), Some(load_idx_labels(p).at(Stage::Data)?)).at(Stage::Data)?,
                    None => ds,
                }
            }
            FileFormat::Csv => load_csv(&src.path, &src.csv).at(Stage::Data)?,
        },
        (None, None) => return Err(CliError::Config("[dataset] needs `synthetic` or `file`".into())),
    };
    Ok(ds)
}

pub fn build_split(cfg: &ExperimentConfig, ds: &Dataset) -> Result<MembershipSplit, CliError> {
    match &cfg.dataset.split {
        SplitConstruction::RandomFraction { fraction } => split_random_fraction(ds, *fraction, cfg.split_seed()),
        SplitConstruction::TopClasses { k } => split_top_classes(ds, *k),
        SplitConstruction::Labels { labels } => split_by_labels(ds, labels),
    }
    .at(Stage::Split)
}

struct Trained {
    steps: u64,
    privacy: Privacy,
}

fn train_target(cfg: &ExperimentConfig, ds: &Dataset, split: &MembershipSplit, dir: &RunDir, resume: bool) -> Result<Trained, CliError> {
    let train = ds.subset(&split.train_indices);
    let family = cfg.target.family;
    let (ckpt_path, metrics_path) = (dir.file(CHECKPOINT), dir.file(METRICS));
    let (mut trainer, metrics) = if resume && ckpt_path.exists() {
        let ckpt = load_checkpoint(&ckpt_path).at(Stage::Train)?;
        let step = ckpt.step;
        let trainer = Trainer::from_checkpoint(ckpt, train.len()).at(Stage::Train)?;
        (trainer, MetricsWriter::resume(&metrics_path, family, step).at(Stage::Train)?)
    } else {
        if metrics_path.exists() {
            // rows from an attempt that never reached a checkpoint
            std::fs::remove_file(&metrics_path)?;
        }
        let t = Trainer::from_preset(family, cfg.target.preset, train.record_shape(), &cfg.target.options, cfg.target_training(), train.len())
            .at(Stage::Train)?;
        (t, MetricsWriter::create(&metrics_path, family).at(Stage::Train)?)
    };
    let mut sink = TrainSink { metrics: Some(metrics), checkpoint_path: Some(ckpt_path), ..Default::default() };
    trainer.run(&train, &mut sink).at(Stage::Train)?;
    let steps = trainer.step_count();
    Ok(Trained { steps, privacy: privacy_of(&trainer.config, steps)? })
}

/// What an attack gets to see of the target artifact.
#[derive(Clone, Debug)]
pub enum Target {
    Full(Box<Checkpoint>),
    Generator(Network),
}

#[derive(Clone, Debug)]
pub struct TargetAccess {
    pub target: Target,
    /// Tensor names read from the file, in order.
    pub tensors_read: Vec<String>,
    pub config: TrainConfig,
    pub steps: u64,
}

/// Loads the whole checkpoint for white-box mode and only the generator's
/// tensors for every other mode.
pub fn open_target(path: impl AsRef<Path>, kind: AttackKind) -> Result<TargetAccess, CliError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(CliError::Stage { stage: Stage::Attack, message: format!("checkpoint {} does not exist", path.display()) });
    }
    let reader = CheckpointReader::open(path).at(Stage::Attack)?;
    let target = if kind.is_whitebox() {
        Target::Full(Box::new(reader.load_all().at(Stage::Attack)?))
    } else {
        Target::Generator(reader.generator().at(Stage::Attack)?)
    };
    Ok(TargetAccess { target, tensors_read: reader.accessed(), config: reader.config().clone(), steps: reader.step() })
}

/// Runs the configured attack against every record of `ds`, claiming the
/// true training-set size. Returns the outcome and the intermediate
/// rankings.
pub fn mount_attack(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split: &MembershipSplit,
    target: Target,
) -> Result<(AttackOutcome, Vec<(u64, PredictionRanking)>), CliError> {
    let (x, n, kind) = (ds.records(), split.n(), cfg.attack.kind);
    let mut curve = Vec::new();
    let mut record = |step: u64, r: &PredictionRanking| curve.push((step, r.clone()));
    let outcome = match (kind, target) {
        (AttackKind::Whitebox, Target::Full(ckpt)) => whitebox_attack(&ckpt, x, n),
        (AttackKind::Whitebox, Target::Generator(_)) => {
            Err(AttackError::UnsupportedTarget("white-box mode needs the discriminator, but only the generator was loaded".into()))
        }
        (kind, target) => {
            let g = match target {
                Target::Full(c) => c.generator,
                Target::Generator(g) => g,
            };
            let mut oracle = GeneratorSampler::new(g, cfg.oracle_seed()).at(Stage::Attack)?;
            let attacker = cfg.attacker_config();
            let a = &cfg.attack;
            let aux = || sample_aux_knowledge(split, a.aux_train_fraction, a.aux_test_fraction, cfg.aux_seed()).at(Stage::Attack);
            match kind {
                AttackKind::Blackbox => blackbox_attack(&mut oracle, x, n, &attacker, Some(&mut record)),
                AttackKind::DiscriminativeAux => {
                    discriminative_aux_attack(&mut oracle, x, n, &aux()?, a.discriminative_setting()?, &attacker, Some(&mut record))
                }
                AttackKind::GenerativeAux => {
                    generative_aux_attack(&mut oracle, x, n, &aux()?, a.generative_setting()?, &attacker, a.delay, Some(&mut record))
                }
                AttackKind::Euclidean => euclidean_attack(&mut oracle, x, n, a.num_generated),
                AttackKind::Shadow => shadow_attack(&mut oracle, x, n, &aux()?, &attacker, Some(&mut record)),
                AttackKind::Whitebox => unreachable!("handled above"),
            }
        }
    }
    .at(Stage::Attack)?;
    Ok((outcome, curve))
}

fn evaluate(
    cfg: &ExperimentConfig,
    split: &MembershipSplit,
    outcome: &AttackOutcome,
    curve: &[(u64, PredictionRanking)],
    access: &TargetAccess,
    privacy: Privacy,
) -> Result<RunSummary, CliError> {
    let mut result = AttackResult::evaluate(outcome, split, curve, &cfg.fingerprint()?, cfg.seed).at(Stage::Evaluate)?;
    result.profile = topk_profile(&outcome.ranking, split, &cfg.evaluation.topk_bins).at(Stage::Evaluate)?;
    let threshold = cfg.attack.threshold.map(|t| {
        let pred = threshold_predictions(&outcome.ranking, &outcome.scores.0, t);
        threshold_report(&pred, split, t)
    });
    Ok(RunSummary {
        attack: cfg.attack.kind,
        n: split.n(),
        m: split.m(),
        threshold,
        query_cost_usd: query_cost_estimate(outcome.queries, PRICE_PER_1000, FREE_QUERIES).at(Stage::Evaluate)?,
        mix: outcome.mix,
        target_steps: access.steps,
        privacy,
        tensors_read: access.tensors_read.clone(),
        result,
    })
}

fn persist(dir: &mut RunDir, summary: &RunSummary) -> Result<(), CliError> {
    write_curve_csv(dir.file(CURVE), &summary.result).at(Stage::Persist)?;
    write_summary_json(dir.file(SUMMARY), summary).at(Stage::Persist)?;
    let points = summary.result.accuracy_curve.iter().map(|&(s, a)| (s as f64, a)).collect();
    let kind = toml::Value::try_from(summary.attack).map(|v| v.as_str().unwrap_or_default().to_string()).unwrap_or_default();
    let svg = svg_line_chart("Attack accuracy", "attacker step", "accuracy", &[Series { name: kind, points }]);
    write_atomic(dir.file(CHART), svg.as_bytes())?;
    dir.artifacts.csvs.push(CURVE.into());
    dir.artifacts.svgs.push(CHART.into());
    dir.artifacts.other.push(SUMMARY.into());
    Ok(())
}

fn resumed(dir: &Path) -> Result<Option<RunOutcome>, CliError> {
    if !dir.join(MANIFEST).is_file() {
        return Ok(None);
    }
    let manifest = RunManifest::load(dir)?;
    let summary = if dir.join(SUMMARY).is_file() {
        let text = std::fs::read_to_string(dir.join(SUMMARY))?;
        Some(serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", dir.join(SUMMARY).display())))?)
    } else {
        None
    };
    Ok(Some(RunOutcome { dir: dir.to_path_buf(), manifest, summary }))
}

fn prepare(dir: &mut RunDir, cfg: &ExperimentConfig) -> Result<(Dataset, MembershipSplit), CliError> {
    dir.time(Stage::Setup, |d| d.pin_config(&cfg.to_toml()?))?;
    let ds = dir.time(Stage::Data, |_| load_dataset(cfg))?;
    let split = dir.time(Stage::Split, |d| {
        let split = build_split(cfg, &ds)?;
        write_summary_json(d.file(SPLIT), &split).at(Stage::Split)?;
        d.artifacts.other.push(SPLIT.into());
        Ok(split)
    })?;
    Ok((ds, split))
}

/// The whole pipeline in `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, resume: bool) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let root = cfg.output_dir.clone();
    if resume {
        if let Some(done) = resumed(&root)? {
            return Ok(done);
        }
    }
    let mut dir = RunDir::open(&root, resume)?;
    let summary = guarded(&mut dir, |dir| {
        let (ds, split) = prepare(dir, cfg)?;
        let trained = dir.time(Stage::Train, |d| train_target(cfg, &ds, &split, d, resume))?;
        dir.artifacts.checkpoints.push(CHECKPOINT.into());
        dir.artifacts.csvs.push(METRICS.into());
        let (access, outcome, curve) = dir.time(Stage::Attack, |d| {
            let access = open_target(d.file(CHECKPOINT), cfg.attack.kind)?;
            let (outcome, curve) = mount_attack(cfg, &ds, &split, access.target.clone())?;
            Ok((access, outcome, curve))
        })?;
        debug_assert_eq!(access.steps, trained.steps);
        let summary = dir.time(Stage::Evaluate, |_| evaluate(cfg, &split, &outcome, &curve, &access, trained.privacy))?;
        dir.time(Stage::Persist, |d| persist(d, &summary))?;
        Ok(summary)
    })?;
    let manifest = dir.finish("run", cfg.fingerprint()?, cfg.seed)?;
    Ok(RunOutcome { dir: root, manifest, summary: Some(summary) })
}

/// Data, split and target training only. With `export_generator` a
/// generator-only artifact is written next to the full checkpoint.
pub fn run_train(cfg: &ExperimentConfig, resume: bool, export_generator: bool) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let root = cfg.output_dir.clone();
    if resume {
        if let Some(done) = resumed(&root)? {
            return Ok(done);
        }
    }
    let mut dir = RunDir::open(&root, resume)?;
    guarded(&mut dir, |dir| {
        let (ds, split) = prepare(dir, cfg)?;
        let trained = dir.time(Stage::Train, |d| train_target(cfg, &ds, &split, d, resume))?;
        dir.artifacts.checkpoints.push(CHECKPOINT.into());
        dir.artifacts.csvs.push(METRICS.into());
        if export_generator {
            dir.time(Stage::Persist, |d| {
                let full = load_checkpoint(d.file(CHECKPOINT)).at(Stage::Persist)?;
                save_checkpoint(&full.generator_only(), d.file(GENERATOR_CHECKPOINT)).at(Stage::Persist)?;
                d.artifacts.checkpoints.push(GENERATOR_CHECKPOINT.into());
                Ok(())
            })?;
        }
        let _ = trained;
        Ok(())
    })?;
    let manifest = dir.finish("train", cfg.fingerprint()?, cfg.seed)?;
    Ok(RunOutcome { dir: root, manifest, summary: None })
}

/// Attacks an existing checkpoint; results go to `out`.
pub fn run_attack(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path, resume: bool) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    if resume {
        if let Some(done) = resumed(out)? {
            return Ok(done);
        }
    }
    let mut dir = RunDir::open(out, resume)?;
    let summary = guarded(&mut dir, |dir| {
        let (ds, split) = prepare(dir, cfg)?;
        let (access, outcome, curve) = dir.time(Stage::Attack, |_| {
            let access = open_target(checkpoint, cfg.attack.kind)?;
            let (outcome, curve) = mount_attack(cfg, &ds, &split, access.target.clone())?;
            Ok((access, outcome, curve))
        })?;
        dir.artifacts.inputs.push(checkpoint.display().to_string());
        let privacy = privacy_of(&access.config, access.steps)?;
        let summary = dir.time(Stage::Evaluate, |_| evaluate(cfg, &split, &outcome, &curve, &access, privacy))?;
        dir.time(Stage::Persist, |d| persist(d, &summary))?;
        Ok(summary)
    })?;
    let manifest = dir.finish("attack", cfg.fingerprint()?, cfg.seed)?;
    Ok(RunOutcome { dir: out.to_path_buf(), manifest, summary: Some(summary) })
}

/// Accuracy CSVs named directly or found under directories.
fn collect_curves(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let p = e.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == CURVE) {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut found = Vec::new();
    for p in inputs {
        if p.is_dir() {
            walk(p, &mut found)?;
        } else if p.is_file() {
            found.push(p.clone());
        } else {
            return Err(CliError::Stage { stage: Stage::Report, message: format!("{} does not exist", p.display()) });
        }
    }
    if found.is_empty() {
        return Err(CliError::Stage { stage: Stage::Report, message: "no accuracy CSVs found".into() });
    }
    Ok(found)
}

fn series_name(path: &Path) -> String {
    match (path.parent().and_then(|p| p.file_name()), path.file_name()) {
        (Some(dir), Some(f)) if f == CURVE => dir.to_string_lossy().into_owned(),
        _ => path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned()),
    }
}

/// Renders accuracy CSVs to one chart with a polyline per run.
pub fn write_report(inputs: &[PathBuf], out: &Path, resume: bool) -> Result<RunManifest, CliError> {
    let mut dir = RunDir::open(out, resume)?;
    let curves = collect_curves(inputs);
    let curves = match curves {
        Ok(c) => c,
        Err(e) => {
            dir.fail(&e);
            return Err(e);
        }
    };
    guarded(&mut dir, |dir| {
        dir.time(Stage::Report, |d| {
            let series = curves
                .iter()
                .map(|p| Ok(Series { name: series_name(p), points: read_curve_csv(p).at(Stage::Report)? }))
                .collect::<Result<Vec<_>, CliError>>()?;
            let svg = svg_line_chart("Attack accuracy", "attacker step", "accuracy", &series);
            write_atomic(d.file(REPORT_CHART), svg.as_bytes())?;
            d.artifacts.svgs.push(REPORT_CHART.into());
            d.artifacts.inputs.extend(curves.iter().map(|p| p.display().to_string()));
            Ok(())
        })
    })?;
    let mut h = Sha256::new();
    for p in &curves {
        h.update(std::fs::read(p)?);
    }
    let hash = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    dir.finish("report", hash, 0)
}
