//! Conditional layer normalization.
//!
//! The scale `γ` and bias `β` of a layer norm are produced from a
//! conditioning vector `E` by two bias-free linear maps, so both are
//! homogeneous in `E`:
//!
//! ```text
//! γ = E·W_γ,  β = E·W_β,  CLN(x) = γ ⊙ (x - mean(x)) / sqrt(var(x) + ε) + β
//! ```

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{normalize_rows, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, LAYER_NORM_EPS};
use crate::params::{Initializer, ParamId, ParamStore};
use crate::tensor::Matrix;

/// Where a conditional layer norm may be placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClnSite {
    Encoder,
    Decoder,
    DurationPredictor,
    PitchPredictor,
    EnergyPredictor,
}

impl ClnSite {
    pub const ALL: [ClnSite; 5] = [
        ClnSite::Encoder,
        ClnSite::Decoder,
        ClnSite::DurationPredictor,
        ClnSite::PitchPredictor,
        ClnSite::EnergyPredictor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClnSite::Encoder => "encoder",
            ClnSite::Decoder => "decoder",
            ClnSite::DurationPredictor => "duration_predictor",
            ClnSite::PitchPredictor => "pitch_predictor",
            ClnSite::EnergyPredictor => "energy_predictor",
        }
    }
}

/// Initial spread of the adapter weights around the calibrated mean.
const ADAPTER_INIT_STD: f64 = 0.01;

/// The pair of linear maps `W_γ`, `W_β` for one normalization site.
#[derive(Clone, Debug)]
pub struct ClnAdapter {
    pub w_gamma: ParamId,
    pub w_beta: ParamId,
    pub site: ClnSite,
    pub cond_dim: usize,
    pub width: usize,
}

impl ClnAdapter {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        site: ClnSite,
        cond_dim: usize,
        width: usize,
    ) -> Self {
        let w_gamma = store.register(
            &format!("{name}.cln.w_gamma"),
            init.normal(cond_dim, width, ADAPTER_INIT_STD),
        );
        let w_beta = store.register(
            &format!("{name}.cln.w_beta"),
            init.normal(cond_dim, width, ADAPTER_INIT_STD),
        );
        Self {
            w_gamma,
            w_beta,
            site,
            cond_dim,
            width,
        }
    }

    /// `(γ, β)` as `1 × width` nodes.
    pub fn scale_and_bias(&self, g: &mut Graph<'_>, cond: Var) -> (Var, Var) {
        let wg = g.param(self.w_gamma);
        let wb = g.param(self.w_beta);
        (g.matmul(cond, wg), g.matmul(cond, wb))
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, cond: Var) -> Var {
        let (gamma, beta) = self.scale_and_bias(g, cond);
        let n = g.normalize_rows(x, LAYER_NORM_EPS);
        let y = g.mul_row(n, gamma);
        g.add_row(y, beta)
    }

    /// Shifts `W_γ` so that `e_ref·W_γ ≈ 1`, keeping the random spread.
    /// Together with the small `W_β` this starts the site close to a plain
    /// layer norm for conditioning vectors near `e_ref`.
    pub fn calibrate(&self, store: &mut ParamStore, e_ref: &[f64]) {
        let norm_sq: f64 = e_ref.iter().map(|v| v * v).sum();
        if norm_sq <= 1e-12 {
            return;
        }
        let w = store.value_mut(self.w_gamma);
        let current = Matrix::row_vector(e_ref).matmul(w);
        for (i, &e) in e_ref.iter().enumerate() {
            for j in 0..self.width {
                w[(i, j)] += e / norm_sq * (1.0 - current[(0, j)]);
            }
        }
    }
}

/// A normalization site: conditional when the site is enabled, otherwise a
/// plain layer norm with its own affine parameters.
#[derive(Clone, Debug)]
pub enum Norm {
    Conditional(ClnAdapter),
    Plain(LayerNorm),
}

impl Norm {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        site: ClnSite,
        enabled: bool,
        cond_dim: usize,
        width: usize,
    ) -> Self {
        if enabled {
            Norm::Conditional(ClnAdapter::new(store, init, name, site, cond_dim, width))
        } else {
            Norm::Plain(LayerNorm::new(store, &format!("{name}.ln"), width))
        }
    }

    /// `cond` is ignored by plain sites; conditional sites require it.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, cond: Option<Var>) -> Var {
        match self {
            Norm::Conditional(a) => a.forward(g, x, cond.expect("conditional norm needs a conditioning vector")),
            Norm::Plain(ln) => ln.forward(g, x),
        }
    }

    pub fn adapter(&self) -> Option<&ClnAdapter> {
        match self {
            Norm::Conditional(a) => Some(a),
            Norm::Plain(_) => None,
        }
    }
}

/// `(γ, β) = (E·W_γ, E·W_β)` for weights stored as `d × width`.
pub fn cln_params(e: &[f64], w_gamma: &Matrix, w_beta: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    if w_gamma.rows() != e.len() || w_beta.rows() != e.len() {
        return Err(Error::Config(format!(
            "conditioning vector has {} entries, adapter expects {}",
            e.len(),
            w_gamma.rows()
        )));
    }
    if w_gamma.cols() != w_beta.cols() {
        return Err(Error::Config("scale and bias widths differ".into()));
    }
    let e = Matrix::row_vector(e);
    Ok((
        e.matmul(w_gamma).into_vec(),
        e.matmul(w_beta).into_vec(),
    ))
}

/// `γ ⊙ normalize(x) + β`, normalizing each row over its features.
pub fn conditional_layer_norm(x: &Matrix, gamma: &[f64], beta: &[f64]) -> Result<Matrix> {
    if x.cols() == 0 {
        return Err(Error::Config("zero-width features".into()));
    }
    if gamma.len() != x.cols() || beta.len() != x.cols() {
        return Err(Error::Config(format!(
            "feature width {} does not match scale/bias width {}/{}",
            x.cols(),
            gamma.len(),
            beta.len()
        )));
    }
    let (mut y, _) = normalize_rows(x, LAYER_NORM_EPS);
    for r in 0..y.rows() {
        for ((v, g), b) in y.row_mut(r).iter_mut().zip(gamma).zip(beta) {
            *v = *v * g + b;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        Initializer::new(seed).normal(rows, cols, 1.0)
    }

    #[test]
    fn zero_condition_gives_zero_params() {
        let wg = rand_matrix(3, 2, 1);
        let wb = rand_matrix(3, 2, 2);
        let (g, b) = cln_params(&[0.0; 3], &wg, &wb).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        assert_eq!(b, vec![0.0, 0.0]);
    }

    #[test]
    fn params_match_hand_products() {
        let wg = rand_matrix(3, 2, 3);
        let wb = rand_matrix(3, 2, 4);
        let e = [0.3, -1.2, 2.0];
        let (g, b) = cln_params(&e, &wg, &wb).unwrap();
        for j in 0..2 {
            let eg = e[0] * wg[(0, j)] + e[1] * wg[(1, j)] + e[2] * wg[(2, j)];
            let eb = e[0] * wb[(0, j)] + e[1] * wb[(1, j)] + e[2] * wb[(2, j)];
            assert!((g[j] - eg).abs() < 1e-14);
            assert!((b[j] - eb).abs() < 1e-14);
        }
        let doubled: Vec<f64> = e.iter().map(|v| 2.0 * v).collect();
        let (g2, b2) = cln_params(&doubled, &wg, &wb).unwrap();
        for j in 0..2 {
            assert_eq!(g2[j], 2.0 * g[j]);
            assert_eq!(b2[j], 2.0 * b[j]);
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let w = rand_matrix(3, 2, 1);
        assert!(matches!(cln_params(&[1.0; 4], &w, &w), Err(Error::Config(_))));
        let x = Matrix::zeros(2, 0);
        assert!(matches!(conditional_layer_norm(&x, &[], &[]), Err(Error::Config(_))));
    }

    #[test]
    fn constant_row_normalizes_to_zero() {
        let x = Matrix::filled(2, 5, 3.7);
        let y = conditional_layer_norm(&x, &[1.0; 5], &[0.0; 5]).unwrap();
        assert!(y.as_slice().iter().all(|v| *v == 0.0));
    }

    /// Straightforward per-row mean/variance.
    fn oracle(x: &Matrix, gamma: &[f64], beta: &[f64]) -> Matrix {
        let mut y = x.clone();
        for r in 0..x.rows() {
            let row = x.row(r);
            let n = row.len() as f64;
            let mut mean = 0.0;
            for v in row {
                mean += v;
            }
            mean /= n;
            let mut var = 0.0;
            for v in row {
                var += (v - mean) * (v - mean);
            }
            var /= n;
            for c in 0..row.len() {
                y[(r, c)] = gamma[c] * (row[c] - mean) / libm::sqrt(var + 1e-5) + beta[c];
            }
        }
        y
    }

    #[test]
    fn matches_oracle_on_random_input() {
        let x = rand_matrix(4, 6, 9);
        let gb = rand_matrix(2, 6, 10);
        let y = conditional_layer_norm(&x, gb.row(0), gb.row(1)).unwrap();
        assert!(y.max_abs_diff(&oracle(&x, gb.row(0), gb.row(1))) < 1e-12);
    }

    #[test]
    fn calibration_sets_unit_scale() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(4);
        let a = ClnAdapter::new(&mut store, &mut init, "x", ClnSite::Encoder, 5, 3);
        let e = [0.5, -0.2, 1.0, 0.0, 0.3];
        a.calibrate(&mut store, &e);
        let (g, _) = cln_params(&e, store.value(a.w_gamma), store.value(a.w_beta)).unwrap();
        for v in g {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
