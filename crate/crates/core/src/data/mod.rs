//! Datasets, synthetic generators, file ingestion and membership splits.

mod csv_io;
mod idx;
mod split;
mod synth;

pub use csv_io::{load_csv, save_csv, CsvOptions, CsvScale};
pub use idx::{load_idx, load_idx_labels, save_idx, save_idx_labels};
pub use split::{sample_aux_knowledge, split_by_labels, split_random_fraction, split_top_classes, AuxKnowledge, MembershipSplit, SplitConstruction};
pub use synth::{synth_generate, SyntheticKind, SyntheticSpec};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad IDX magic bytes {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported IDX element type 0x{0:02x} (only unsigned byte 0x08)")]
    UnsupportedDtype(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("row {row}: {detail}")]
    Row { row: usize, detail: String },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("dataset has no labels")]
    Unlabeled,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Ordered records of one fixed shape, with optional integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Tensor,
    labels: Option<Vec<u32>>,
}

impl Dataset {
    /// `records` is `[count, ...record_shape]`.
    pub fn new(records: Tensor, labels: Option<Vec<u32>>) -> Result<Self, DataError> {
        if records.shape().len() < 2 {
            return Err(DataError::Invalid(format!("records need a batch axis, got shape {:?}", records.shape())));
        }
        if let Some(l) = &labels {
            if l.len() != records.rows() {
                return Err(DataError::Invalid(format!("{} labels for {} records", l.len(), records.rows())));
            }
        }
        if !records.is_finite() {
            return Err(DataError::Invalid("non-finite record values".into()));
        }
        Ok(Self { records, labels })
    }

    pub fn len(&self) -> usize {
        self.records.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn record_shape(&self) -> &[usize] {
        &self.records.shape()[1..]
    }

    pub fn records(&self) -> &Tensor {
        &self.records
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn record(&self, i: usize) -> &[f64] {
        self.records.row(i)
    }

    /// Records at `idx` as a batch tensor.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        self.records.select_rows(idx)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            records: self.records.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Same records viewed with a different record shape of equal size.
    pub fn with_record_shape(&self, shape: &[usize]) -> Result<Dataset, DataError> {
        let mut full = vec![self.len()];
        full.extend_from_slice(shape);
        Ok(Dataset { records: self.records.clone().reshaped(full)?, labels: self.labels.clone() })
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.records
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Linear byte → [−1, 1] map used by every ingestion path.
pub fn byte_to_unit(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

/// Inverse of [`byte_to_unit`], rounding to the nearest level.
pub fn unit_to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}
