use crate::tensor::{Gradients, NodeId, RngState, Tape, Tensor};

use super::spec::{LayerKind, NetworkSpec};
use super::NnError;

/// Standard deviation of the Gaussian weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    /// Buffers (batch-norm running statistics) are stored but not optimized.
    pub trainable: bool,
}

/// Named tensors bound to one [`NetworkSpec`], in deterministic order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters {
    entries: Vec<ParamEntry>,
}

impl Parameters {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self, NnError> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(NnError::DuplicateParam(e.name.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|e| e.name == name).map(|e| &mut e.tensor)
    }

    pub(crate) fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn trainable_sizes(&self) -> Vec<usize> {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.numel()).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().filter(|e| e.trainable).map(|e| &mut e.tensor).collect()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).count()
    }

    pub(crate) fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    /// Inserts every entry on `tape`: trainable ones as gradient leaves
    /// when `differentiable`, everything else as constants.
    pub fn bind(&self, tape: &mut Tape, differentiable: bool) -> Binding {
        let ids = self
            .entries
            .iter()
            .map(|e| {
                if differentiable && e.trainable {
                    tape.leaf(e.tensor.clone())
                } else {
                    tape.constant(e.tensor.clone())
                }
            })
            .collect();
        Binding { ids }
    }
}

/// Tape node of every parameter entry, aligned with [`Parameters::entries`].
#[derive(Clone, Debug)]
pub struct Binding {
    pub(crate) ids: Vec<NodeId>,
}

impl Binding {
    pub fn id(&self, index: usize) -> NodeId {
        self.ids[index]
    }

    /// Gradients of the trainable entries, in entry order.
    pub fn trainable_grads(&self, params: &Parameters, grads: &Gradients) -> Vec<Vec<f64>> {
        params
            .entries()
            .iter()
            .zip(&self.ids)
            .filter(|(e, _)| e.trainable)
            .map(|(e, id)| grads.get(*id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; e.tensor.numel()]))
            .collect()
    }
}

/// Axes of a weight tensor that make up one output unit's weight vector.
pub(crate) fn weight_norm_axes(kind: &LayerKind) -> &'static [usize] {
    match kind {
        // [in, out]
        LayerKind::Dense { .. } => &[0],
        // [out, in, kh, kw]
        LayerKind::Conv2d { .. } => &[1, 2, 3],
        // [in, out, kh, kw]
        LayerKind::TransposedConv2d { .. } => &[0, 2, 3],
        _ => &[],
    }
}

pub(crate) fn weight_shape(kind: &LayerKind, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    // (weight shape, bias shape broadcastable against [B, ...out])
    match kind {
        LayerKind::Dense { units } => Some((vec![input.iter().product(), *units], vec![*units])),
        LayerKind::Conv2d { filters, kernel, .. } => {
            Some((vec![*filters, input[0], kernel[0], kernel[1]], vec![*filters, 1, 1]))
        }
        LayerKind::TransposedConv2d { filters, kernel, .. } => {
            Some((vec![input[0], *filters, kernel[0], kernel[1]], vec![*filters, 1, 1]))
        }
        _ => None,
    }
}

pub(crate) fn reduced(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let mut s = shape.to_vec();
    for &a in axes {
        s[a] = 1;
    }
    s
}

/// Allocates and initializes the parameters of `spec`: weights from
/// N(0, 0.02²), biases zero, batch-norm scale one. Weight-normalized layers
/// store a direction `v` drawn the same way and a magnitude `g = ‖v‖`.
pub fn build_network(spec: &NetworkSpec, rng: &mut RngState) -> Result<Parameters, NnError> {
    let shapes = spec.layer_shapes()?;
    let mut entries = Vec::new();
    let mut input = spec.input_shape.clone();
    for (i, layer) in spec.layers.iter().enumerate() {
        if let Some((wshape, bshape)) = weight_shape(&layer.kind, &input) {
            let n: usize = wshape.iter().product();
            let w = Tensor::new(wshape.clone(), rng.normals(n, INIT_STD))?;
            if layer.weight_norm {
                let axes = weight_norm_axes(&layer.kind);
                let g = unit_norms(&w, axes);
                if g.data().iter().any(|&x| x == 0.0) {
                    return Err(NnError::ZeroNorm(format!("l{i}.v")));
                }
                entries.push(ParamEntry { name: format!("l{i}.v"), tensor: w, trainable: true });
                entries.push(ParamEntry { name: format!("l{i}.g"), tensor: g, trainable: true });
            } else {
                entries.push(ParamEntry { name: format!("l{i}.weight"), tensor: w, trainable: true });
            }
            entries.push(ParamEntry { name: format!("l{i}.bias"), tensor: Tensor::zeros(bshape), trainable: true });
        } else if layer.kind == LayerKind::BatchNorm {
            let c = input[0];
            let shape = if input.len() == 1 { vec![c] } else { vec![c, 1, 1] };
            entries.push(ParamEntry { name: format!("l{i}.gamma"), tensor: Tensor::full(shape.clone(), 1.0), trainable: true });
            entries.push(ParamEntry { name: format!("l{i}.beta"), tensor: Tensor::zeros(shape.clone()), trainable: true });
            entries.push(ParamEntry { name: format!("l{i}.running_mean"), tensor: Tensor::zeros(shape.clone()), trainable: false });
            entries.push(ParamEntry { name: format!("l{i}.running_var"), tensor: Tensor::full(shape, 1.0), trainable: false });
        }
        input = shapes[i].clone();
    }
    Parameters::new(entries)
}

/// Euclidean norm of each output unit's weight vector, keeping reduced axes.
pub(crate) fn unit_norms(w: &Tensor, axes: &[usize]) -> Tensor {
    let out = reduced(w.shape(), axes);
    let mut tape = Tape::new(crate::tensor::Precision::F64);
    let x = tape.constant(w.clone());
    let sq = tape.mul(x, x).expect("same shape");
    let s = tape.sum_axes(sq, axes).expect("valid axes");
    let n = tape.sqrt(s).expect("non-negative");
    let v = tape.value(n).clone();
    debug_assert_eq!(v.shape(), &out[..]);
    v
}
