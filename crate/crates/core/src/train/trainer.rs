use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::checkpoint::{save_checkpoint, Checkpoint};
use crate::atomic::write_atomic;
use super::config::{Defense, TrainConfig};
use super::gan::{GanModel, ModelFamily, StepLosses};
use super::TrainError;
use crate::data::Dataset;
use crate::nn::{Preset, PresetOptions};
use crate::tensor::RngState;

/// Parameter-initialization and training streams derived from one seed.
pub fn seed_streams(seed: u64) -> (RngState, RngState) {
    let mut root = RngState::new(seed);
    let init = root.fork("init");
    let train = root.fork("train");
    (init, train)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// Steps completed, counting this one.
    pub step: u64,
    /// Zero-based epoch the step belongs to.
    pub epoch: u64,
    pub losses: StepLosses,
}

/// Trains a model on a fixed training split in shuffled epochs.
pub struct Trainer {
    pub model: GanModel,
    pub config: TrainConfig,
    step: u64,
    n_train: usize,
    rng: RngState,
    perm: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    /// Resolves a DP sampling rate of `batch_size / n` when unset.
    pub fn new(model: GanModel, mut config: TrainConfig, n_train: usize) -> Result<Self, TrainError> {
        if n_train == 0 {
            return Err(TrainError::Config("empty training split".into()));
        }
        if let Defense::Dp(dp) = &mut config.defense {
            if dp.sampling_rate.is_none() {
                dp.sampling_rate = Some((config.batch_size as f64 / n_train as f64).min(1.0));
            }
        }
        config.validate()?;
        let (_, rng) = seed_streams(config.seed);
        Ok(Self { model, config, step: 0, n_train, rng, perm: None })
    }

    /// Builds a preset model from `config.seed` and wraps it.
    pub fn from_preset(
        family: ModelFamily,
        preset: Preset,
        record_shape: &[usize],
        opts: &PresetOptions,
        config: TrainConfig,
        n_train: usize,
    ) -> Result<Self, TrainError> {
        let (mut init, _) = seed_streams(config.seed);
        let model = GanModel::from_preset(family, preset, record_shape, opts, &config, &mut init)?;
        Self::new(model, config, n_train)
    }

    pub fn from_checkpoint(ckpt: Checkpoint, n_train: usize) -> Result<Self, TrainError> {
        let step = ckpt.step;
        let rng = RngState::restore(&ckpt.rng);
        let config = ckpt.config.clone();
        let mut t = Self::new(ckpt.into_model()?, config, n_train)?;
        t.step = step;
        t.rng = rng;
        Ok(t)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.config.steps_per_epoch(self.n_train)
    }

    pub fn epoch(&self) -> u64 {
        self.step / self.steps_per_epoch()
    }

    pub fn total_steps(&self) -> u64 {
        self.config.total_steps(self.n_train)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, &self.config, self.step, self.epoch(), &self.rng)
    }

    fn batch_indices(&mut self) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let (epoch, j) = (self.step / spe, (self.step % spe) as usize);
        if self.perm.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let perm = RngState::new(self.config.seed).fork(&format!("shuffle/{epoch}")).permutation(self.n_train);
            self.perm = Some((epoch, perm));
        }
        let perm = &self.perm.as_ref().unwrap().1;
        let b = self.config.batch_size;
        perm[j * b..((j + 1) * b).min(self.n_train)].to_vec()
    }

    /// One step on the next mini-batch of `train` (the training split).
    pub fn step(&mut self, train: &Dataset) -> Result<StepRecord, TrainError> {
        if train.len() != self.n_train {
            return Err(TrainError::Config(format!("trainer expects {} records, got {}", self.n_train, train.len())));
        }
        let epoch = self.epoch();
        let idx = self.batch_indices();
        let losses = self.model.step(&train.batch(&idx), &self.config, &mut self.rng)?;
        if !(losses.d_loss.is_finite() && losses.g_loss.is_finite()) {
            return Err(TrainError::Divergence { step: self.step + 1, detail: "non-finite loss".into(), last_checkpoint: None });
        }
        self.step += 1;
        Ok(StepRecord { step: self.step, epoch, losses })
    }

    /// Trains until `stop` steps (capped at the configured total), writing
    /// metrics and checkpoints through `sink`.
    pub fn run_until(&mut self, train: &Dataset, stop: u64, sink: &mut TrainSink) -> Result<(), TrainError> {
        let stop = stop.min(self.total_steps());
        while self.step < stop {
            let rec = match self.step(train) {
                Ok(r) => r,
                Err(e) if e.is_divergence() => {
                    return Err(TrainError::Divergence {
                        step: self.step + 1,
                        detail: e.to_string(),
                        last_checkpoint: sink.last_checkpoint.clone(),
                    })
                }
                Err(e) => return Err(e),
            };
            if let Some(m) = &mut sink.metrics {
                m.write(&rec)?;
            }
            if let Some(cb) = &mut sink.on_step {
                cb(&rec);
            }
            if let Some(every) = self.config.checkpoint_every {
                if self.step % every == 0 {
                    sink.save(self)?;
                }
            }
        }
        sink.save(self)?;
        Ok(())
    }

    pub fn run(&mut self, train: &Dataset, sink: &mut TrainSink) -> Result<(), TrainError> {
        self.run_until(train, u64::MAX, sink)
    }
}

/// Where a training run reports: metrics CSV, checkpoint file, callback.
#[derive(Default)]
pub struct TrainSink<'a> {
    pub metrics: Option<MetricsWriter>,
    pub checkpoint_path: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
    pub on_step: Option<Box<dyn FnMut(&StepRecord) + 'a>>,
}

impl TrainSink<'_> {
    fn save(&mut self, t: &Trainer) -> Result<(), TrainError> {
        if let Some(m) = &mut self.metrics {
            m.flush()?;
        }
        if let Some(p) = &self.checkpoint_path {
            let mut ckpt = t.checkpoint();
            ckpt.metrics_path = self.metrics.as_ref().map(|m| relative_to(&m.path, p));
            save_checkpoint(&ckpt, p)?;
            self.last_checkpoint = Some(p.clone());
        }
        Ok(())
    }
}

/// `metrics` as seen from the checkpoint: a bare file name when both sit in
/// the same directory, so run directories can be moved.
fn relative_to(metrics: &Path, checkpoint: &Path) -> String {
    match (metrics.parent(), checkpoint.parent(), metrics.file_name()) {
        (Some(a), Some(b), Some(name)) if a == b => name.to_string_lossy().into_owned(),
        _ => metrics.display().to_string(),
    }
}

/// Per-step metrics CSV: `step,epoch,d_loss,g_loss` plus family columns.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn header(family: ModelFamily) -> String {
        let mut cols = vec!["step", "epoch", "d_loss", "g_loss"];
        cols.extend(family.aux_columns());
        cols.join(",")
    }

    /// Starts a new file; refuses to overwrite an existing one.
    pub fn create(path: impl AsRef<Path>, family: ModelFamily) -> Result<Self, TrainError> {
        let path = path.as_ref().to_path_buf();
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path)?;
        writeln!(f, "{}", Self::header(family))?;
        Ok(Self { path, out: BufWriter::new(f) })
    }

    /// Reopens for appending after a checkpoint at `step`, dropping rows
    /// written after that checkpoint.
    pub fn resume(path: impl AsRef<Path>, family: ModelFamily, step: u64) -> Result<Self, TrainError> {
        let path = path.as_ref().to_path_buf();
        let text = std::fs::read_to_string(&path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != Self::header(family) {
            return Err(TrainError::Config(format!("metrics file {} has unexpected header `{header}`", path.display())));
        }
        let mut kept = format!("{header}\n");
        for line in lines {
            let s: u64 = line.split(',').next().and_then(|s| s.parse().ok()).ok_or_else(|| {
                TrainError::Config(format!("malformed metrics row `{line}` in {}", path.display()))
            })?;
            if s <= step {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        write_atomic(&path, kept.as_bytes())?;
        let f = OpenOptions::new().append(true).open(&path)?;
        Ok(Self { path, out: BufWriter::new(f) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, rec: &StepRecord) -> Result<(), TrainError> {
        write!(self.out, "{},{},{},{}", rec.step, rec.epoch, rec.losses.d_loss, rec.losses.g_loss)?;
        for v in &rec.losses.aux {
            write!(self.out, ",{v}")?;
        }
        writeln!(self.out)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.out.flush()?;
        Ok(())
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}
