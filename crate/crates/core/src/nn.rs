//! Layer building blocks on top of [`Graph`].
//!
//! Each layer holds only parameter ids; values live in the [`ParamStore`]
//! the layer was registered into.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Conv2dGeometry, Graph, Var};
use crate::params::{Initializer, ParamId, ParamStore};
use crate::tensor::Matrix;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Large negative logit used for masked attention keys.
const MASKED_LOGIT: f64 = -1e9;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
    ) -> Self {
        let weight = store.register(&format!("{name}.weight"), init.xavier(input, output));
        let bias = bias.then(|| store.register(&format!("{name}.bias"), Matrix::zeros(1, output)));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        g.linear(x, self.weight, self.bias)
    }
}

/// Stride-1 "same" 1-D convolution over the time axis of a `T × C` input.
#[derive(Clone, Debug)]
pub struct Conv1d {
    linear: Linear,
    kernel: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernel must be odd");
        Self {
            linear: Linear::new(store, init, name, input * kernel, output, true),
            kernel,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let cols = if self.kernel == 1 {
            x
        } else {
            g.unfold1d(x, self.kernel, self.kernel / 2)
        };
        self.linear.forward(g, cols)
    }
}

/// 3×3 stride-2 convolution over a `(h·w) × c` feature map.
#[derive(Clone, Debug)]
pub struct Conv2d {
    linear: Linear,
    input: usize,
}

impl Conv2d {
    pub const KERNEL: usize = 3;
    pub const STRIDE: usize = 2;

    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, input: usize, output: usize) -> Self {
        Self {
            linear: Linear::new(store, init, name, input * Self::KERNEL * Self::KERNEL, output, true),
            input,
        }
    }

    /// Returns the output map and its `(height, width)`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, height: usize, width: usize) -> (Var, usize, usize) {
        let geom = Conv2dGeometry {
            height,
            width,
            channels: self.input,
            kernel: Self::KERNEL,
            stride: Self::STRIDE,
            pad: 1,
        };
        let cols = g.unfold2d(x, geom);
        (self.linear.forward(g, cols), geom.out_height(), geom.out_width())
    }
}

/// Layer norm with a learned elementwise affine.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.register(&format!("{name}.gamma"), Matrix::filled(1, width, 1.0)),
            beta: store.register(&format!("{name}.beta"), Matrix::zeros(1, width)),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let n = g.normalize_rows(x, LAYER_NORM_EPS);
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        let y = g.mul_row(n, gamma);
        g.add_row(y, beta)
    }
}

/// Multi-head self-attention with output projection.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    width: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, width: usize, heads: usize) -> Self {
        assert!(heads > 0 && width % heads == 0, "width must divide into heads");
        Self {
            q: Linear::new(store, init, &format!("{name}.q"), width, width, true),
            k: Linear::new(store, init, &format!("{name}.k"), width, width, true),
            v: Linear::new(store, init, &format!("{name}.v"), width, width, true),
            out: Linear::new(store, init, &format!("{name}.out"), width, width, true),
            heads,
            width,
        }
    }

    /// `valid` marks the key positions that may be attended to.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, valid: &[bool]) -> Var {
        let t = g.shape(x).0;
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, x);
        let v = self.v.forward(g, x);
        let dh = self.width / self.heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mask = valid.iter().any(|v| !v).then(|| {
            let mut m = Matrix::zeros(t, t);
            for r in 0..t {
                for (c, &ok) in valid.iter().enumerate() {
                    if !ok {
                        m[(r, c)] = MASKED_LOGIT;
                    }
                }
            }
            g.constant(m)
        });
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let logits = g.matmul_t(qh, kh);
            let mut logits = g.scale(logits, scale);
            if let Some(m) = mask {
                logits = g.add(logits, m);
            }
            let w = g.softmax_rows(logits);
            heads.push(g.matmul(w, vh));
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        self.out.forward(g, cat)
    }
}

/// Single-layer GRU (gate order reset, update, candidate).
#[derive(Clone, Debug)]
pub struct Gru {
    input_map: Linear,
    hidden_map: Linear,
    hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            input_map: Linear::new(store, init, &format!("{name}.ih"), input, 3 * hidden, true),
            hidden_map: Linear::new(store, init, &format!("{name}.hh"), hidden, 3 * hidden, true),
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Runs over the rows of `x` and returns the final `1 × hidden` state.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let steps = g.shape(x).0;
        let hsz = self.hidden;
        let gx = self.input_map.forward(g, x);
        let mut h = g.constant(Matrix::zeros(1, hsz));
        for t in 0..steps {
            let xt = g.slice_rows(gx, t, 1);
            let gh = self.hidden_map.forward(g, h);
            let xr = g.slice_cols(xt, 0, hsz);
            let xz = g.slice_cols(xt, hsz, hsz);
            let xn = g.slice_cols(xt, 2 * hsz, hsz);
            let hr = g.slice_cols(gh, 0, hsz);
            let hz = g.slice_cols(gh, hsz, hsz);
            let hn = g.slice_cols(gh, 2 * hsz, hsz);
            let r = g.add(xr, hr);
            let r = g.sigmoid(r);
            let z = g.add(xz, hz);
            let z = g.sigmoid(z);
            let rn = g.mul(r, hn);
            let n = g.add(xn, rn);
            let n = g.tanh(n);
            // h' = n + z ⊙ (h - n)
            let diff = g.sub(h, n);
            let zd = g.mul(z, diff);
            h = g.add(n, zd);
        }
        h
    }
}

/// Sinusoidal position table, `len × width`.
pub fn sinusoid_positions(len: usize, width: usize) -> Matrix {
    let mut m = Matrix::zeros(len, width);
    for pos in 0..len {
        for i in 0..width {
            let exponent = (2 * (i / 2)) as f64 / width as f64;
            let angle = pos as f64 / libm::pow(10000.0, exponent);
            m[(pos, i)] = if i % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) };
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn conv1d_matches_direct_sum() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(3);
        let conv = Conv1d::new(&mut store, &mut init, "c", 2, 3, 3);
        let x = Matrix::from_vec(4, 2, vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.25, 2.0, 1.5]);
        let mut g = Graph::new(&store);
        let xv = g.constant(x.clone());
        let y = conv.forward(&mut g, xv);
        let w = store.get("c.weight").unwrap();
        let b = store.get("c.bias").unwrap();
        for t in 0..4 {
            for o in 0..3 {
                let mut acc = b[(0, o)];
                for k in 0..3 {
                    let src = t as isize + k as isize - 1;
                    if (0..4).contains(&src) {
                        for c in 0..2 {
                            acc += x[(src as usize, c)] * w[(k * 2 + c, o)];
                        }
                    }
                }
                assert!((g.value(y)[(t, o)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_halves_each_axis() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(3);
        let conv = Conv2d::new(&mut store, &mut init, "c", 1, 4);
        let mut g = Graph::new(&store);
        let x = g.constant(Matrix::filled(7 * 5, 1, 1.0));
        let (y, h, w) = conv.forward(&mut g, x, 7, 5);
        assert_eq!((h, w), (4, 3));
        assert_eq!(g.shape(y), (12, 4));
    }

    #[test]
    fn masked_keys_get_no_attention() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(5);
        let attn = SelfAttention::new(&mut store, &mut init, "a", 4, 2);
        let x = Matrix::from_vec(3, 4, (0..12).map(|i| libm::sin(i as f64)).collect());
        let mut g = Graph::new(&store);
        let full = g.constant(x.slice_rows(0, 2));
        let y_short = attn.forward(&mut g, full, &[true, true]);
        let mut padded = x.clone();
        padded.row_mut(2).fill(9.0);
        let p = g.constant(padded);
        let y_pad = attn.forward(&mut g, p, &[true, true, false]);
        let a = g.value(y_short).clone();
        let b = g.value(y_pad).slice_rows(0, 2);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn positions_are_bounded() {
        let p = sinusoid_positions(50, 8);
        assert!(p.as_slice().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(p[(0, 1)], 1.0);
    }
}
