use crate::tensor::Tensor;

use super::params::{unit_norms, weight_norm_axes, ParamEntry, Parameters};
use super::spec::NetworkSpec;
use super::NnError;

/// Rewrites every plain weight of `spec` as a (direction `v`, magnitude
/// `g`) pair with `w = g · v / ‖v‖`. The stored direction is unit length
/// and the forward function is unchanged up to rounding.
pub fn apply_weight_norm(spec: &NetworkSpec, params: &Parameters) -> Result<(NetworkSpec, Parameters), NnError> {
    let mut new_spec = spec.clone();
    let mut entries = Vec::with_capacity(params.len() + spec.layers.len());
    let mut converted = 0;
    for entry in params.entries() {
        let layer_idx = entry
            .name
            .strip_prefix('l')
            .and_then(|s| s.split('.').next())
            .and_then(|s| s.parse::<usize>().ok());
        let is_weight = entry.name.ends_with(".weight");
        match (layer_idx, is_weight) {
            (Some(i), true) => {
                let layer = spec.layers.get(i).ok_or_else(|| NnError::MissingParam(entry.name.clone()))?;
                let axes = weight_norm_axes(&layer.kind);
                let g = unit_norms(&entry.tensor, axes);
                if g.data().iter().any(|&x| x == 0.0) {
                    return Err(NnError::ZeroNorm(entry.name.clone()));
                }
                let v = direction(&entry.tensor, &g);
                entries.push(ParamEntry { name: format!("l{i}.v"), tensor: v, trainable: true });
                entries.push(ParamEntry { name: format!("l{i}.g"), tensor: g, trainable: true });
                new_spec.layers[i].weight_norm = true;
                converted += 1;
            }
            _ => entries.push(entry.clone()),
        }
    }
    if converted == 0 {
        return Err(NnError::Spec("no dense or convolution weights to normalize".into()));
    }
    Ok((new_spec, Parameters::new(entries)?))
}

/// Divides each output unit's weights by its norm (`norms` has the
/// weight's shape with reduced axes set to 1).
fn direction(w: &Tensor, norms: &Tensor) -> Tensor {
    let shape = w.shape();
    let nshape = norms.shape();
    let rank = shape.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for a in (0..rank).rev() {
        strides[a] = if nshape[a] == 1 { 0 } else { s };
        s *= nshape[a];
    }
    let mut idx = vec![0usize; rank];
    let mut data = Vec::with_capacity(w.numel());
    for &x in w.data() {
        let k: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        data.push(x / norms.data()[k]);
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Tensor::new(shape.to_vec(), data).expect("same shape")
}
