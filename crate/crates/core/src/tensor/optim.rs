use serde::{Deserialize, Serialize};

use super::{Precision, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for OptimizerConfig {
    /// Adam, lr 2e-4, β1 0.5 (DCGAN practice).
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, learning_rate: 2e-4, beta1: 0.5, beta2: 0.999, eps_hat: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::Sgd, learning_rate, ..Self::default() }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::Adam, learning_rate, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps_hat > 0.0
            && self.eps_hat <= 1e-4;
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidConfig(format!("optimizer settings out of range: {self:?}")))
        }
    }
}

/// Per-parameter-set optimizer memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub precision: Precision,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, precision: Precision, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        let (m, v) = match config.kind {
            OptimizerKind::Adam => (
                sizes.iter().map(|&n| vec![0.0; n]).collect(),
                sizes.iter().map(|&n| vec![0.0; n]).collect(),
            ),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self { config, precision, m, v, t: 0 }
    }

    /// One update over aligned parameter/gradient lists.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<(), TensorError> {
        if params.len() != grads.len() {
            return Err(TensorError::ShapeMismatch {
                op: "optimizer_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.numel() != g.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "optimizer_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(TensorError::Divergence {
                    op: "optimizer_step",
                    phase: "update",
                    detail: "non-finite gradient".into(),
                });
            }
        }
        if self.config.kind == OptimizerKind::Adam && self.m.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "optimizer_step",
                lhs: vec![self.m.len()],
                rhs: vec![params.len()],
            });
        }
        self.t += 1;
        let lr = self.config.learning_rate;
        let prec = self.precision;
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, gv) in p.data_mut().iter_mut().zip(g.iter()) {
                        *x = prec.round(*x - lr * gv);
                    }
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig { beta1, beta2, eps_hat, .. } = self.config;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    if m.len() != g.len() {
                        return Err(TensorError::ShapeMismatch {
                            op: "optimizer_step",
                            lhs: vec![m.len()],
                            rhs: vec![g.len()],
                        });
                    }
                    for (i, x) in p.data_mut().iter_mut().enumerate() {
                        let gv = g[i];
                        m[i] = prec.round(beta1 * m[i] + (1.0 - beta1) * gv);
                        v[i] = prec.round(beta2 * v[i] + (1.0 - beta2) * gv * gv);
                        let mh = m[i] / bc1;
                        let vh = v[i] / bc2;
                        *x = prec.round(*x - lr * mh / (vh.sqrt() + eps_hat));
                    }
                }
            }
        }
        Ok(())
    }
}
