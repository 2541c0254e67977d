//! Sensitivity sweeps: one full run per (axis value, seed).

use std::path::PathBuf;

use genleak::atomic::write_atomic;
use genleak::data::SplitConstruction;
use genleak::eval::{size_sweep, svg_line_chart, write_summary_json, write_sweep_csv, Series, SweepResult};
use genleak::train::Defense;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::pipeline::{run_experiment, RunManifest};
use crate::CliError;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CHART: &str = "sweep.svg";

/// Config knobs a sweep can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    TrainFraction,
    Epochs,
    AttackSteps,
    NoiseSigma,
    DropoutP,
    AuxFraction,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TrainFraction => "train_fraction",
            SweepAxis::Epochs => "epochs",
            SweepAxis::AttackSteps => "attack_steps",
            SweepAxis::NoiseSigma => "noise_sigma",
            SweepAxis::DropoutP => "dropout_p",
            SweepAxis::AuxFraction => "aux_fraction",
        }
    }

    fn from_name(s: &str) -> Result<Self, CliError> {
        let all = [
            SweepAxis::TrainFraction,
            SweepAxis::Epochs,
            SweepAxis::AttackSteps,
            SweepAxis::NoiseSigma,
            SweepAxis::DropoutP,
            SweepAxis::AuxFraction,
        ];
        all.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = all.iter().map(|a| a.name()).collect();
            CliError::Usage(format!("unknown sweep axis `{s}` (expected one of {})", names.join(", ")))
        })
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, CliError> {
        let mut c = cfg.clone();
        let whole = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as u64)
            } else {
                Err(CliError::Usage(format!("{} takes positive whole numbers, got {v}", self.name())))
            }
        };
        match self {
            SweepAxis::TrainFraction => match &mut c.dataset.split {
                SplitConstruction::RandomFraction { fraction } => *fraction = value,
                _ => return Err(CliError::Config("train_fraction sweeps need a random_fraction split".into())),
            },
            SweepAxis::Epochs => {
                c.target.training.epochs = whole(value)?;
                c.target.training.max_steps = None;
            }
            SweepAxis::AttackSteps => c.attack.steps = Some(whole(value)?),
            SweepAxis::NoiseSigma => match &mut c.target.training.defense {
                Defense::Dp(dp) => dp.noise_sigma = value,
                _ => return Err(CliError::Config("noise_sigma sweeps need a dp defense".into())),
            },
            SweepAxis::DropoutP => c.target.training.defense = Defense::Dropout { p: value },
            SweepAxis::AuxFraction => {
                c.attack.aux_train_fraction = value;
                c.attack.aux_test_fraction = value;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parses `name=v1,v2,...`.
pub fn parse_axis(spec: &str) -> Result<(SweepAxis, Vec<f64>), CliError> {
    let (name, values) = spec.split_once('=').ok_or_else(|| CliError::Usage(format!("axis `{spec}` is not of the form name=v1,v2")))?;
    let axis = SweepAxis::from_name(name.trim())?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("axis value `{v}` is not a number"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((axis, values))
}

/// `GENLEAK_WORKERS`, else the available parallelism.
pub fn workers_from_env() -> Result<usize, CliError> {
    match std::env::var("GENLEAK_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!("GENLEAK_WORKERS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn job_dir(root: &std::path::Path, axis: SweepAxis, value: f64, seed: u64) -> PathBuf {
    root.join(format!("{}={value}", axis.name())).join(format!("seed-{seed}"))
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    sweep: &'a SweepResult,
    seeds: &'a [u64],
    runs: Vec<String>,
}

/// Runs every (value, seed) pair of `template` in
/// `<output_dir>/<axis>=<value>/seed-<s>` on `workers` threads and writes
/// the summary CSV, JSON and chart next to them.
pub fn run_sweep(
    template: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    workers: usize,
    resume: bool,
) -> Result<(RunManifest, SweepResult), CliError> {
    let root = template.output_dir.clone();
    // check every point before any training starts
    for &v in values {
        axis.apply(template, v)?;
    }
    if root.exists() && std::fs::read_dir(&root)?.next().is_some() && !resume {
        return Err(CliError::RunExists(root));
    }
    std::fs::create_dir_all(&root)?;
    let start = std::time::Instant::now();
    let sweep = size_sweep(axis.name(), values, seeds, workers, |value, seed| {
        let mut cfg = axis.apply(template, value)?;
        cfg.seed = seed;
        cfg.output_dir = job_dir(&root, axis, value, seed);
        let out = run_experiment(&cfg, resume)?;
        out.summary.map(|s| s.result).ok_or_else(|| CliError::Io(format!("{} has no summary", cfg.output_dir.display())))
    })
    .map_err(|e| CliError::Stage { stage: crate::Stage::Evaluate, message: e.to_string() })?;

    write_sweep_csv(root.join(SWEEP_CSV), &sweep).map_err(|e| CliError::Io(e.to_string()))?;
    let mut runs = Vec::new();
    for p in &sweep.points {
        for &seed in seeds {
            let d = job_dir(&root, axis, p.value, seed);
            if d.join(crate::pipeline::MANIFEST).is_file() {
                runs.push(d.strip_prefix(&root).unwrap_or(&d).display().to_string());
            }
        }
    }
    let record = SweepRecord { sweep: &sweep, seeds, runs };
    write_summary_json(root.join(SWEEP_JSON), &record).map_err(|e| CliError::Io(e.to_string()))?;
    let pick = |f: fn(&genleak::eval::SweepPoint) -> f64| sweep.points.iter().map(|p| (p.value, f(p))).collect::<Vec<_>>();
    let series = vec![
        Series { name: "mean improvement".into(), points: pick(|p| p.mean_improvement) },
        Series { name: "min".into(), points: pick(|p| p.min_improvement) },
        Series { name: "max".into(), points: pick(|p| p.max_improvement) },
    ];
    let svg = svg_line_chart("Improvement over random guessing", axis.name(), "improvement", &series);
    write_atomic(root.join(SWEEP_CHART), svg.as_bytes())?;

    let mut h = Sha256::new();
    h.update(template.to_toml()?.as_bytes());
    h.update(format!("{}={values:?};{seeds:?}", axis.name()).as_bytes());
    let manifest = RunManifest {
        command: "sweep".into(),
        config_hash: h.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: template.seed,
        artifacts: crate::pipeline::Artifacts {
            csvs: vec![SWEEP_CSV.into()],
            svgs: vec![SWEEP_CHART.into()],
            other: std::iter::once(SWEEP_JSON.to_string()).chain(record.runs.iter().map(|r| format!("{r}/manifest.json"))).collect(),
            ..Default::default()
        },
        timings: vec![crate::pipeline::StageTiming { stage: crate::Stage::Evaluate, seconds: start.elapsed().as_secs_f64() }],
        finished_unix: std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(root.join(crate::pipeline::MANIFEST), &bytes)?;
    Ok((manifest, sweep))
}
