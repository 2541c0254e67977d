//! Raw loops behind the tape operators. Everything here works on flat
//! row-major slices; shape checking happens in the tape.

/// Numpy-style broadcast of two shapes (right aligned, size-1 stretches).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Maps each flat index of a broadcast output back to the flat index of
/// one of its (smaller or equal) inputs.
pub enum BroadcastMap {
    Same,
    Scalar,
    /// Input equals the trailing block of the output; index modulo length.
    Suffix(usize),
    General(Vec<usize>),
}

impl BroadcastMap {
    pub fn new(out: &[usize], inp: &[usize]) -> Self {
        let in_numel: usize = inp.iter().product();
        let out_numel: usize = out.iter().product();
        if in_numel == out_numel {
            return BroadcastMap::Same;
        }
        if in_numel == 1 {
            return BroadcastMap::Scalar;
        }
        let trimmed: Vec<usize> = inp.iter().copied().skip_while(|&d| d == 1).collect();
        if trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == trimmed[..] {
            return BroadcastMap::Suffix(in_numel);
        }
        // general strided mapping
        let rank = out.len();
        let mut in_strides = vec![0usize; rank];
        let mut stride = 1;
        for i in (0..inp.len()).rev() {
            let axis = i + rank - inp.len();
            in_strides[axis] = if inp[i] == 1 { 0 } else { stride };
            stride *= inp[i];
        }
        let mut table = vec![0usize; out_numel];
        let mut idx = vec![0usize; rank];
        for slot in table.iter_mut() {
            *slot = idx.iter().zip(&in_strides).map(|(i, s)| i * s).sum();
            for axis in (0..rank).rev() {
                idx[axis] += 1;
                if idx[axis] < out[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
        BroadcastMap::General(table)
    }

    #[inline]
    pub fn index(&self, i: usize) -> usize {
        match self {
            BroadcastMap::Same => i,
            BroadcastMap::Scalar => 0,
            BroadcastMap::Suffix(n) => i % n,
            BroadcastMap::General(t) => t[i],
        }
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `da[m×k] += g[m×n] · bᵀ`
pub fn matmul_grad_lhs(g: &[f64], b: &[f64], m: usize, k: usize, n: usize, da: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            da[i * k + p] += dot;
        }
    }
}

/// `db[k×n] += aᵀ · g[m×n]`
pub fn matmul_grad_rhs(g: &[f64], a: &[f64], m: usize, k: usize, n: usize, db: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (d, gv) in dbrow.iter_mut().zip(grow) {
                *d += av * gv;
            }
        }
    }
}

/// Geometry shared by the convolution kernels.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    /// Visits every (input position, kernel tap, output position) triple of
    /// a strided, zero padded correlation. `small` is the spatially smaller
    /// side for transposed convolution and the input side for conv.
    #[inline]
    fn taps(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        // f(oh, ow, i, j, ih, iw) over valid input coordinates
        for oh in 0..self.out_h {
            for i in 0..self.kh {
                let ih = (oh * self.sh + i) as isize - self.ph as isize;
                if ih < 0 || ih >= self.in_h as isize {
                    continue;
                }
                for ow in 0..self.out_w {
                    for j in 0..self.kw {
                        let iw = (ow * self.sw + j) as isize - self.pw as isize;
                        if iw < 0 || iw >= self.in_w as isize {
                            continue;
                        }
                        f(oh, ow, i, j, ih as usize, iw as usize);
                    }
                }
            }
        }
    }
}

/// Correlation. x: [B, C, H, W], w: [O, C, kh, kw] → [B, O, Ho, Wo].
pub fn conv2d(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.out_c * g.out_h * g.out_w];
    let (ihw, ohw, khw) = (g.in_h * g.in_w, g.out_h * g.out_w, g.kh * g.kw);
    for b in 0..g.batch {
        for o in 0..g.out_c {
            let obase = (b * g.out_c + o) * ohw;
            for c in 0..g.in_c {
                let xbase = (b * g.in_c + c) * ihw;
                let wbase = (o * g.in_c + c) * khw;
                g.taps(|oh, ow, i, j, ih, iw| {
                    out[obase + oh * g.out_w + ow] +=
                        x[xbase + ih * g.in_w + iw] * w[wbase + i * g.kw + j];
                });
            }
        }
    }
    out
}

pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    let (ihw, ohw, khw) = (g.in_h * g.in_w, g.out_h * g.out_w, g.kh * g.kw);
    if let Some(dx) = dx {
        for b in 0..g.batch {
            for o in 0..g.out_c {
                let obase = (b * g.out_c + o) * ohw;
                for c in 0..g.in_c {
                    let xbase = (b * g.in_c + c) * ihw;
                    let wbase = (o * g.in_c + c) * khw;
                    g.taps(|oh, ow, i, j, ih, iw| {
                        dx[xbase + ih * g.in_w + iw] +=
                            gout[obase + oh * g.out_w + ow] * w[wbase + i * g.kw + j];
                    });
                }
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..g.batch {
            for o in 0..g.out_c {
                let obase = (b * g.out_c + o) * ohw;
                for c in 0..g.in_c {
                    let xbase = (b * g.in_c + c) * ihw;
                    let wbase = (o * g.in_c + c) * khw;
                    g.taps(|oh, ow, i, j, ih, iw| {
                        dw[wbase + i * g.kw + j] +=
                            gout[obase + oh * g.out_w + ow] * x[xbase + ih * g.in_w + iw];
                    });
                }
            }
        }
    }
}

/// Transposed convolution, the adjoint of [`conv2d`] in its input.
/// x: [B, C, h, w], w: [C, O, kh, kw] → [B, O, H, W]. Here `g` is the
/// geometry of the matching forward conv: `in_*` are the large output
/// extents and `out_*` the small input extents, `in_c` = O, `out_c` = C.
pub fn conv_transpose2d(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.batch * g.in_c * g.in_h * g.in_w];
    let (bhw, shw, khw) = (g.in_h * g.in_w, g.out_h * g.out_w, g.kh * g.kw);
    for b in 0..g.batch {
        for c in 0..g.out_c {
            let xbase = (b * g.out_c + c) * shw;
            for o in 0..g.in_c {
                let obase = (b * g.in_c + o) * bhw;
                let wbase = (c * g.in_c + o) * khw;
                g.taps(|sh, sw, i, j, bh, bw| {
                    out[obase + bh * g.in_w + bw] += x[xbase + sh * g.out_w + sw] * w[wbase + i * g.kw + j];
                });
            }
        }
    }
    out
}

pub fn conv_transpose2d_backward(
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    g: &ConvGeom,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
) {
    let (bhw, shw, khw) = (g.in_h * g.in_w, g.out_h * g.out_w, g.kh * g.kw);
    if let Some(dx) = dx {
        for b in 0..g.batch {
            for c in 0..g.out_c {
                let xbase = (b * g.out_c + c) * shw;
                for o in 0..g.in_c {
                    let obase = (b * g.in_c + o) * bhw;
                    let wbase = (c * g.in_c + o) * khw;
                    g.taps(|sh, sw, i, j, bh, bw| {
                        dx[xbase + sh * g.out_w + sw] += gout[obase + bh * g.in_w + bw] * w[wbase + i * g.kw + j];
                    });
                }
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..g.batch {
            for c in 0..g.out_c {
                let xbase = (b * g.out_c + c) * shw;
                for o in 0..g.in_c {
                    let obase = (b * g.in_c + o) * bhw;
                    let wbase = (c * g.in_c + o) * khw;
                    g.taps(|sh, sw, i, j, bh, bw| {
                        dw[wbase + i * g.kw + j] += gout[obase + bh * g.in_w + bw] * x[xbase + sh * g.out_w + sw];
                    });
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shape(&[2, 3, 4, 4], &[3, 1, 1]), Some(vec![2, 3, 4, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn general_map_matches_manual_indexing() {
        let m = BroadcastMap::new(&[2, 3, 2], &[3, 1]);
        let got: Vec<usize> = (0..12).map(|i| m.index(i)).collect();
        assert_eq!(got, vec![0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn conv_of_ones_is_window_count() {
        let g = ConvGeom {
            batch: 1, in_c: 1, in_h: 3, in_w: 3, out_c: 1, out_h: 2, out_w: 2,
            kh: 2, kw: 2, sh: 1, sw: 1, ph: 0, pw: 0,
        };
        let out = conv2d(&[1.0; 9], &[1.0; 4], &g);
        assert_eq!(out, vec![4.0; 4]);
    }
}
