use alloc::format;

use crate::autodiff::{Graph, Var};
use crate::conditioning::{ClnSite, Norm};
use crate::nn::{Conv1d, Linear, SelfAttention};
use crate::params::{Initializer, ParamStore};

/// Feed-forward Transformer block: self-attention and a two-layer
/// convolution, each followed by a residual connection and a (possibly
/// conditional) layer norm. Rows outside `valid` are kept at zero.
#[derive(Clone, Debug)]
pub struct FftBlock {
    pub attention: SelfAttention,
    pub norm1: Norm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub norm2: Norm,
}

pub struct FftShape {
    pub hidden: usize,
    pub heads: usize,
    pub filter: usize,
    pub kernel: usize,
    pub cond_dim: usize,
}

impl FftBlock {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        shape: &FftShape,
        site: ClnSite,
        conditional: bool,
    ) -> Self {
        let h = shape.hidden;
        Self {
            attention: SelfAttention::new(store, init, &format!("{name}.attn"), h, shape.heads),
            norm1: Norm::new(store, init, &format!("{name}.norm1"), site, conditional, shape.cond_dim, h),
            conv1: Conv1d::new(store, init, &format!("{name}.conv1"), h, shape.filter, shape.kernel),
            conv2: Conv1d::new(store, init, &format!("{name}.conv2"), shape.filter, h, 1),
            norm2: Norm::new(store, init, &format!("{name}.norm2"), site, conditional, shape.cond_dim, h),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, cond: Option<Var>, valid: &[bool]) -> Var {
        let a = self.attention.forward(g, x, valid);
        let x = g.add(x, a);
        let x = self.norm1.forward(g, x, cond);
        let x = g.mask_rows(x, valid);
        let c = self.conv1.forward(g, x);
        let c = g.relu(c);
        let c = self.conv2.forward(g, c);
        let x = g.add(x, c);
        let x = self.norm2.forward(g, x, cond);
        g.mask_rows(x, valid)
    }
}

/// Two convolution layers with ReLU and layer norm, then a scalar head.
/// Used for duration, pitch and energy.
#[derive(Clone, Debug)]
pub struct VariancePredictor {
    pub conv1: Conv1d,
    pub norm1: Norm,
    pub conv2: Conv1d,
    pub norm2: Norm,
    pub head: Linear,
}

impl VariancePredictor {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        hidden: usize,
        filter: usize,
        kernel: usize,
        site: ClnSite,
        conditional: bool,
        cond_dim: usize,
    ) -> Self {
        Self {
            conv1: Conv1d::new(store, init, &format!("{name}.conv1"), hidden, filter, kernel),
            norm1: Norm::new(store, init, &format!("{name}.norm1"), site, conditional, cond_dim, filter),
            conv2: Conv1d::new(store, init, &format!("{name}.conv2"), filter, filter, kernel),
            norm2: Norm::new(store, init, &format!("{name}.norm2"), site, conditional, cond_dim, filter),
            head: Linear::new(store, init, &format!("{name}.head"), filter, 1, true),
        }
    }

    /// `N × 1` predictions; masked rows are exactly zero.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, cond: Option<Var>, valid: &[bool]) -> Var {
        let y = self.conv1.forward(g, x);
        let y = g.relu(y);
        let y = self.norm1.forward(g, y, cond);
        let y = g.mask_rows(y, valid);
        let y = self.conv2.forward(g, y);
        let y = g.relu(y);
        let y = self.norm2.forward(g, y, cond);
        let y = g.mask_rows(y, valid);
        let y = self.head.forward(g, y);
        g.mask_rows(y, valid)
    }

    pub fn is_conditional(&self) -> bool {
        self.norm1.adapter().is_some()
    }
}
