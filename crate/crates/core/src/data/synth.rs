use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::tensor::{RngState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticKind {
    /// Equal-weight components with means evenly spaced on
    /// `[-spread, spread]` along the diagonal; label = component.
    GaussianMixture {
        components: usize,
        dims: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_std")]
        std: f64,
    },
    /// Modes evenly spaced on a circle in 2-D; label = mode. Values are
    /// clamped to [−1, 1].
    Ring {
        modes: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_ring_noise")]
        noise_sigma: f64,
    },
    /// Single-channel `grid × grid` procedural textures, one pattern family
    /// per class. Class frequencies follow `1/(c+1)^skew`.
    BlobImages {
        grid: usize,
        classes: usize,
        #[serde(default)]
        skew: f64,
    },
}

fn default_spread() -> f64 {
    3.0
}
fn default_std() -> f64 {
    1.0
}
fn default_radius() -> f64 {
    0.8
}
fn default_ring_noise() -> f64 {
    0.05
}

/// Unknown keys are rejected by the flattened `kind` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn ring(modes: usize, radius: f64, noise_sigma: f64, count: usize, seed: u64) -> Self {
        Self { kind: SyntheticKind::Ring { modes, radius, noise_sigma }, count, seed }
    }

    fn groups(&self) -> usize {
        match self.kind {
            SyntheticKind::GaussianMixture { components, .. } => components,
            SyntheticKind::Ring { modes, .. } => modes,
            SyntheticKind::BlobImages { classes, .. } => classes,
        }
    }
}

pub fn synth_generate(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    let groups = spec.groups();
    if groups == 0 || spec.count < groups {
        return Err(DataError::Invalid(format!("count {} must be at least the number of groups {groups}", spec.count)));
    }
    let mut rng = RngState::new(spec.seed);
    match &spec.kind {
        SyntheticKind::GaussianMixture { components, dims, spread, std } => {
            if *dims == 0 || *std < 0.0 {
                return Err(DataError::Invalid("gaussian mixture needs dims ≥ 1 and std ≥ 0".into()));
            }
            let mut data = Vec::with_capacity(spec.count * dims);
            let mut labels = Vec::with_capacity(spec.count);
            for i in 0..spec.count {
                let c = if i < *components { i } else { rng.below(*components) };
                let mean = if *components == 1 { 0.0 } else { spread * (-1.0 + 2.0 * c as f64 / (*components - 1) as f64) };
                for _ in 0..*dims {
                    data.push(mean + std * rng.normal());
                }
                labels.push(c as u32);
            }
            Dataset::new(Tensor::new([spec.count, *dims], data)?, Some(labels))
        }
        SyntheticKind::Ring { modes, radius, noise_sigma } => {
            let mut data = Vec::with_capacity(spec.count * 2);
            let mut labels = Vec::with_capacity(spec.count);
            for i in 0..spec.count {
                let m = if i < *modes { i } else { rng.below(*modes) };
                let angle = TAU * m as f64 / *modes as f64;
                let x = radius * angle.cos() + noise_sigma * rng.normal();
                let y = radius * angle.sin() + noise_sigma * rng.normal();
                data.push(x.clamp(-1.0, 1.0));
                data.push(y.clamp(-1.0, 1.0));
                labels.push(m as u32);
            }
            Dataset::new(Tensor::new([spec.count, 2], data)?, Some(labels))
        }
        SyntheticKind::BlobImages { grid, classes, skew } => {
            if *grid < 2 {
                return Err(DataError::Invalid("blob image grid must be at least 2".into()));
            }
            let weights: Vec<f64> = (0..*classes).map(|c| 1.0 / ((c + 1) as f64).powf(*skew)).collect();
            let total: f64 = weights.iter().sum();
            let g = *grid as f64;
            let mut data = Vec::with_capacity(spec.count * grid * grid);
            let mut labels = Vec::with_capacity(spec.count);
            for i in 0..spec.count {
                let c = if i < *classes {
                    i
                } else {
                    let mut u = rng.uniform(0.0, total);
                    weights.iter().position(|w| {
                        u -= w;
                        u < 0.0
                    }).unwrap_or(classes - 1)
                };
                // class-specific stripe frequency, orientation, phase and blob centre
                let fx = 1.0 + (c % 3) as f64;
                let fy = ((c / 3) % 3) as f64;
                let phase = 0.9 * c as f64 + 0.3 * rng.normal();
                let (cx, cy) = (
                    (0.25 + 0.5 * ((c * 7) % 10) as f64 / 9.0) * g + 0.5 * rng.normal(),
                    (0.25 + 0.5 * ((c * 3) % 10) as f64 / 9.0) * g + 0.5 * rng.normal(),
                );
                for h in 0..*grid {
                    for w in 0..*grid {
                        let (hf, wf) = (h as f64, w as f64);
                        let stripes = (TAU * (fx * wf + fy * hf) / g + phase).sin();
                        let d2 = ((wf - cx).powi(2) + (hf - cy).powi(2)) / (0.15 * g * g);
                        let blob = (-d2).exp();
                        let v = 0.5 * stripes + 0.8 * blob - 0.3 + 0.05 * rng.normal();
                        data.push(v.clamp(-1.0, 1.0));
                    }
                }
                labels.push(c as u32);
            }
            Dataset::new(Tensor::new([spec.count, 1, *grid, *grid], data)?, Some(labels))
        }
    }
}
