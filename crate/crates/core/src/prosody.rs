//! Prosody encoder: a reference encoder turns a mel-spectrogram into a
//! query, and multi-head attention over a small learned prosody space turns
//! the query into the prosody representation `E`.
//!
//! ```text
//! Q = R·W_Q,  K = P·W_K,  V = P·W_V,  E = softmax(Q·Kᵀ / √d_k)·V
//! ```
//!
//! With several heads the columns of `Q`, `K`, `V` are split evenly and the
//! per-head results are concatenated; `d_k` is the per-head width, which is
//! `d` for a single head.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Gru, Linear};
use crate::params::{Initializer, ParamId, ParamStore};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProsodyConfig {
    /// Output channels of the stride-2 convolutions, one entry per layer.
    pub conv_channels: Vec<usize>,
    pub gru_hidden: usize,
    pub num_tokens: usize,
    pub token_dim: usize,
    pub num_heads: usize,
    /// Use `W_Q` for the keys as well instead of a separate `W_K`.
    pub tie_qk_projection: bool,
}

impl Default for ProsodyConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![32, 32, 64, 64, 128, 128],
            gru_hidden: 128,
            num_tokens: 8,
            token_dim: 256,
            num_heads: 8,
            tie_qk_projection: false,
        }
    }
}

impl ProsodyConfig {
    /// Frames needed so that every stride-2 stage keeps at least one step.
    pub fn min_reference_frames(&self) -> usize {
        1 << self.conv_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config("reference encoder needs positive conv channels".into()));
        }
        if self.gru_hidden == 0 || self.num_tokens == 0 || self.token_dim == 0 || self.num_heads == 0 {
            return Err(Error::Config("prosody dimensions must be positive".into()));
        }
        if self.token_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "token_dim {} is not divisible by num_heads {}",
                self.token_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

/// The query derived from a reference mel: the GRU's final state and its
/// projection to the prosody dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceQuery {
    pub gru_state: Vec<f64>,
    pub query: Vec<f64>,
}

/// Output of the attention step.
#[derive(Clone, Debug, PartialEq)]
pub struct ProsodyAttention {
    pub e: Vec<f64>,
    /// Per head, one weight per prosody token.
    pub weights: Vec<Vec<f64>>,
}

/// Parameter values of a prosody space, detached from any store.
#[derive(Clone, Debug, PartialEq)]
pub struct ProsodySpace {
    pub tokens: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub num_heads: usize,
}

impl ProsodySpace {
    fn check(&self, query_len: usize) -> Result<()> {
        let d = self.tokens.cols();
        let ok = self.num_heads > 0
            && self.tokens.rows() > 0
            && query_len == self.w_q.rows()
            && self.w_k.rows() == d
            && self.w_v.rows() == d
            && self.w_q.cols() == self.w_k.cols()
            && self.w_q.cols() % self.num_heads == 0
            && self.w_v.cols() % self.num_heads == 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "inconsistent prosody space: query {}, tokens {:?}, W_Q {:?}, W_K {:?}, W_V {:?}, heads {}",
                query_len,
                self.tokens.shape(),
                self.w_q.shape(),
                self.w_k.shape(),
                self.w_v.shape(),
                self.num_heads
            )))
        }
    }
}

/// Attention of a `1 × d` query over the prosody tokens, on graph nodes.
/// Returns `E` and the per-head weight rows.
pub fn attend(
    g: &mut Graph<'_>,
    query: Var,
    tokens: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    num_heads: usize,
) -> (Var, Vec<Var>) {
    let q = g.matmul(query, w_q);
    let k = g.matmul(tokens, w_k);
    let v = g.matmul(tokens, w_v);
    let dk = g.shape(q).1 / num_heads;
    let dv = g.shape(v).1 / num_heads;
    let scale = 1.0 / libm::sqrt(dk as f64);
    let mut outs = Vec::with_capacity(num_heads);
    let mut weights = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let (qh, kh, vh) = if num_heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dk, dk),
                g.slice_cols(k, h * dk, dk),
                g.slice_cols(v, h * dv, dv),
            )
        };
        let logits = g.matmul_t(qh, kh);
        let logits = g.scale(logits, scale);
        let w = g.softmax_rows(logits);
        outs.push(g.matmul(w, vh));
        weights.push(w);
    }
    let e = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
    (e, weights)
}

/// Evaluates the attention step on plain values.
pub fn attend_prosody(query: &[f64], space: &ProsodySpace) -> Result<ProsodyAttention> {
    space.check(query.len())?;
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let q = g.constant(Matrix::row_vector(query));
    let p = g.constant(space.tokens.clone());
    let wq = g.constant(space.w_q.clone());
    let wk = g.constant(space.w_k.clone());
    let wv = g.constant(space.w_v.clone());
    let (e, weights) = attend(&mut g, q, p, wq, wk, wv, space.num_heads);
    Ok(ProsodyAttention {
        e: g.value(e).as_slice().to_vec(),
        weights: weights.iter().map(|&w| g.value(w).as_slice().to_vec()).collect(),
    })
}

/// Reference encoder plus prosody space, registered into a model's store.
#[derive(Clone, Debug)]
pub struct ProsodyEncoder {
    config: ProsodyConfig,
    mel_bins: usize,
    convs: Vec<Conv2d>,
    gru: Gru,
    adapter: Linear,
    tokens: ParamId,
    w_q: ParamId,
    w_k: Option<ParamId>,
    w_v: ParamId,
}

impl ProsodyEncoder {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        config: &ProsodyConfig,
        mel_bins: usize,
    ) -> Result<Self> {
        config.validate()?;
        if mel_bins == 0 {
            return Err(Error::Config("mel_bins must be positive".into()));
        }
        let mut convs = Vec::with_capacity(config.conv_channels.len());
        let mut channels = 1;
        let mut width = mel_bins;
        for (i, &out) in config.conv_channels.iter().enumerate() {
            convs.push(Conv2d::new(store, init, &format!("{name}.ref.conv{i}"), channels, out));
            channels = out;
            width = (width + 1) / 2;
        }
        let gru = Gru::new(store, init, &format!("{name}.ref.gru"), width * channels, config.gru_hidden);
        let adapter = Linear::new(
            store,
            init,
            &format!("{name}.ref.query_adapter"),
            config.gru_hidden,
            config.token_dim,
            true,
        );
        let d = config.token_dim;
        let tokens = store.register(&format!("{name}.space.tokens"), init.normal(config.num_tokens, d, 0.5));
        let w_q = store.register(&format!("{name}.space.w_q"), init.xavier(d, d));
        let w_k = (!config.tie_qk_projection).then(|| store.register(&format!("{name}.space.w_k"), init.xavier(d, d)));
        let w_v = store.register(&format!("{name}.space.w_v"), init.xavier(d, d));
        Ok(Self {
            config: config.clone(),
            mel_bins,
            convs,
            gru,
            adapter,
            tokens,
            w_q,
            w_k,
            w_v,
        })
    }

    pub fn config(&self) -> &ProsodyConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.token_dim
    }

    /// Returns `(gru_state, query)` nodes for a `frames × mel_bins` input.
    pub fn reference_query(&self, g: &mut Graph<'_>, mel: Var) -> Result<(Var, Var)> {
        let (frames, bins) = g.shape(mel);
        if bins != self.mel_bins {
            return Err(Error::InvalidInput(format!(
                "reference mel has {bins} bins, expected {}",
                self.mel_bins
            )));
        }
        let min = self.config.min_reference_frames();
        if frames < min {
            return Err(Error::InvalidInput(format!(
                "reference mel has {frames} frames, at least {min} are required"
            )));
        }
        let mut x = g.reshape(mel, frames * bins, 1);
        let (mut h, mut w) = (frames, bins);
        for conv in &self.convs {
            let (y, nh, nw) = conv.forward(g, x, h, w);
            x = g.relu(y);
            h = nh;
            w = nw;
        }
        let channels = g.shape(x).1;
        let seq = g.reshape(x, h, w * channels);
        let state = self.gru.forward(g, seq);
        let query = self.adapter.forward(g, state);
        Ok((state, query))
    }

    /// `E` and per-head attention weights for a query node.
    pub fn attend(&self, g: &mut Graph<'_>, query: Var) -> (Var, Vec<Var>) {
        let p = g.param(self.tokens);
        let wq = g.param(self.w_q);
        let wk = match self.w_k {
            Some(id) => g.param(id),
            None => wq,
        };
        let wv = g.param(self.w_v);
        attend(g, query, p, wq, wk, wv, self.config.num_heads)
    }

    /// Reference mel to `E` (`1 × d`).
    pub fn forward(&self, g: &mut Graph<'_>, mel: Var) -> Result<Var> {
        let (_, query) = self.reference_query(g, mel)?;
        Ok(self.attend(g, query).0)
    }

    pub fn encode_reference(&self, store: &ParamStore, mel: &Matrix) -> Result<ReferenceQuery> {
        let mut g = Graph::new(store);
        let m = g.constant(mel.clone());
        let (state, query) = self.reference_query(&mut g, m)?;
        Ok(ReferenceQuery {
            gru_state: g.value(state).as_slice().to_vec(),
            query: g.value(query).as_slice().to_vec(),
        })
    }

    /// Current parameter values of the prosody space.
    pub fn space(&self, store: &ParamStore) -> ProsodySpace {
        let w_q = store.value(self.w_q).clone();
        ProsodySpace {
            tokens: store.value(self.tokens).clone(),
            w_k: self.w_k.map_or_else(|| w_q.clone(), |id| store.value(id).clone()),
            w_q,
            w_v: store.value(self.w_v).clone(),
            num_heads: self.config.num_heads,
        }
    }

    pub fn tokens_param(&self) -> ParamId {
        self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ProsodyConfig {
        ProsodyConfig {
            conv_channels: vec![2, 2, 3],
            gru_hidden: 4,
            num_tokens: 3,
            token_dim: 6,
            num_heads: 2,
            tie_qk_projection: false,
        }
    }

    #[test]
    fn default_constants_shape() {
        let cfg = ProsodyConfig::default();
        let mut store = ParamStore::new();
        let mut init = Initializer::new(1);
        let enc = ProsodyEncoder::new(&mut store, &mut init, "prosody", &cfg, 80).unwrap();
        assert_eq!(cfg.min_reference_frames(), 64);
        let mel = Matrix::from_vec(128, 80, (0..128 * 80).map(|i| libm::sin(i as f64 * 0.01)).collect());
        let r = enc.encode_reference(&store, &mel).unwrap();
        assert_eq!(r.gru_state.len(), 128);
        assert_eq!(r.query.len(), 256);
        assert_eq!(store.get("prosody.space.tokens").unwrap().shape(), (8, 256));
        assert_eq!(r, enc.encode_reference(&store, &mel).unwrap());
        let zero = enc.encode_reference(&store, &Matrix::zeros(64, 80)).unwrap();
        assert!(zero.query.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn short_reference_is_rejected() {
        let cfg = small_config();
        let mut store = ParamStore::new();
        let mut init = Initializer::new(1);
        let enc = ProsodyEncoder::new(&mut store, &mut init, "p", &cfg, 5).unwrap();
        let err = enc.encode_reference(&store, &Matrix::zeros(7, 5)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(ref m) if m.contains("at least 8")));
        assert!(enc.encode_reference(&store, &Matrix::zeros(8, 4)).is_err());
    }

    #[test]
    fn single_token_returns_its_value() {
        let mut init = Initializer::new(2);
        let space = ProsodySpace {
            tokens: init.normal(1, 4, 1.0),
            w_q: init.normal(4, 4, 1.0),
            w_k: init.normal(4, 4, 1.0),
            w_v: init.normal(4, 4, 1.0),
            num_heads: 2,
        };
        let v = space.tokens.matmul(&space.w_v);
        for seed in 0..5 {
            let q = Initializer::new(seed).normal(1, 4, 3.0);
            let out = attend_prosody(q.as_slice(), &space).unwrap();
            for (a, b) in out.e.iter().zip(v.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let space = ProsodySpace {
            tokens: Matrix::zeros(2, 4),
            w_q: Matrix::zeros(4, 4),
            w_k: Matrix::zeros(3, 4),
            w_v: Matrix::zeros(4, 4),
            num_heads: 1,
        };
        assert!(matches!(attend_prosody(&[0.0; 4], &space), Err(Error::Config(_))));
        let bad_heads = ProsodyConfig {
            token_dim: 10,
            num_heads: 3,
            ..ProsodyConfig::default()
        };
        assert!(bad_heads.validate().is_err());
    }

    #[test]
    fn tied_projection_has_no_key_matrix() {
        let cfg = ProsodyConfig {
            tie_qk_projection: true,
            ..small_config()
        };
        let mut store = ParamStore::new();
        let enc = ProsodyEncoder::new(&mut store, &mut Initializer::new(1), "p", &cfg, 5).unwrap();
        assert!(store.get("p.space.w_k").is_none());
        let s = enc.space(&store);
        assert_eq!(s.w_k, s.w_q);
    }
}
