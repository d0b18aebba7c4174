//! Central finite-difference checks of graph gradients.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntryCheck {
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps entries whose gradient
/// is essentially zero from dividing noise by noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = libm::fmax(libm::fmax(libm::fabs(analytic), libm::fabs(numeric)), floor);
    libm::fabs(analytic - numeric) / scale
}

/// `count` distinct random positions of a `rows × cols` matrix.
pub fn sample_entries(rows: usize, cols: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rows * cols;
    let mut picked: Vec<usize> = Vec::new();
    while picked.len() < count.min(total) {
        let k = rng.random_range(0..total);
        if !picked.contains(&k) {
            picked.push(k);
        }
    }
    picked.into_iter().map(|k| (k / cols, k % cols)).collect()
}

/// Compares the backward-pass gradient of a scalar loss with respect to
/// selected entries of `param` against `(L(θ+h) − L(θ−h)) / 2h`.
pub fn check_param<F>(
    store: &ParamStore,
    param: ParamId,
    entries: &[(usize, usize)],
    step: f64,
    floor: f64,
    loss: F,
) -> Result<Vec<EntryCheck>>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        if g.shape(l) != (1, 1) {
            return Err(Error::InvalidInput("loss must be a scalar".into()));
        }
        let grads = g.backward(l);
        grads.param(param).cloned()
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let l = loss(&mut g)?;
        Ok(g.value(l)[(0, 0)])
    };
    let mut work = store.clone();
    let mut out = Vec::with_capacity(entries.len());
    for &(row, col) in entries {
        let original = store.value(param)[(row, col)];
        work.value_mut(param)[(row, col)] = original + step;
        let plus = eval(&work)?;
        work.value_mut(param)[(row, col)] = original - step;
        let minus = eval(&work)?;
        work.value_mut(param)[(row, col)] = original;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.as_ref().map_or(0.0, |m| m[(row, col)]);
        out.push(EntryCheck {
            row,
            col,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric, floor),
        });
    }
    Ok(out)
}

/// Largest relative error of a set of checks.
pub fn max_rel_error(checks: &[EntryCheck]) -> f64 {
    checks.iter().map(|c| c.rel_error).fold(0.0, libm::fmax)
}

/// Result of one entry of [`model_gradient_suite`].
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub param: alloc::string::String,
    pub checks: Vec<EntryCheck>,
}

impl SuiteResult {
    pub fn max_rel_error(&self) -> f64 {
        max_rel_error(&self.checks)
    }
}

/// Finite-difference checks through the main parts of a model: prosody
/// attention, a conditional layer norm, the duration predictor and the
/// whole teacher-forced mel path. Each loss is a fixed random projection of
/// the component output so every output entry contributes.
pub fn model_gradient_suite(
    model: &crate::model::AcousticModel,
    entries_per_param: usize,
    seed: u64,
) -> Result<Vec<SuiteResult>> {
    use crate::model::{ForwardInput, Mode, VarianceTargets};
    use crate::params::Initializer;
    use alloc::string::ToString;

    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;

    let cfg = model.config();
    let store = model.params();
    let mut init = Initializer::new(seed);
    let enc = model
        .prosody_encoder()
        .ok_or_else(|| Error::Config("the gradient suite needs a prosody encoder".into()))?;
    let d = cfg.prosody.token_dim;
    let h = cfg.hidden;

    let projected = |g: &mut Graph<'_>, out: Var, weights: &crate::tensor::Matrix| -> Var {
        let w = g.constant(weights.clone());
        let p = g.mul(out, w);
        g.sum(p)
    };
    let mut results = Vec::new();
    let mut run = |name: &'static str, param_name: &str, loss: &dyn Fn(&mut Graph<'_>) -> Result<Var>| -> Result<()> {
        let id = store
            .id(param_name)
            .ok_or_else(|| Error::Config(alloc::format!("no parameter `{param_name}`")))?;
        let (r, c) = store.value(id).shape();
        let picks = sample_entries(r, c, entries_per_param, seed ^ id.index() as u64);
        let checks = check_param(store, id, &picks, STEP, FLOOR, loss)?;
        results.push(SuiteResult {
            name,
            param: param_name.to_string(),
            checks,
        });
        Ok(())
    };

    // Prosody attention: E as a function of W_Q and the token table.
    let query = init.normal(1, d, 1.0);
    let proj_e = init.normal(1, d, 1.0);
    let attention_loss = |g: &mut Graph<'_>| -> Result<Var> {
        let q = g.constant(query.clone());
        let (e, _) = enc.attend(g, q);
        Ok(projected(g, e, &proj_e))
    };
    run("prosody_attention", "prosody.space.w_q", &attention_loss)?;
    run("prosody_attention", "prosody.space.tokens", &attention_loss)?;

    // Conditional layer norm of the first encoder block.
    let adapter = model.encoder_blocks()[0]
        .norm1
        .adapter()
        .ok_or_else(|| Error::Config("the first encoder norm is not conditional".into()))?
        .clone();
    let x = init.normal(5, h, 1.0);
    let cond_value = init.normal(1, cfg.cond_dim(), 0.3);
    let proj_x = init.normal(5, h, 1.0);
    let cln_loss = |g: &mut Graph<'_>| -> Result<Var> {
        let xv = g.constant(x.clone());
        let c = g.constant(cond_value.clone());
        let y = adapter.forward(g, xv, c);
        Ok(projected(g, y, &proj_x))
    };
    let w_gamma = store.name(adapter.w_gamma).to_string();
    let w_beta = store.name(adapter.w_beta).to_string();
    run("cln", &w_gamma, &cln_loss)?;
    run("cln", &w_beta, &cln_loss)?;

    // Duration predictor on fixed phoneme states.
    let states = init.normal(6, h, 1.0);
    let proj_d = init.normal(6, 1, 1.0);
    let valid = alloc::vec![true; 6];
    let dp = model.duration_predictor();
    let duration_loss = |g: &mut Graph<'_>| -> Result<Var> {
        let s = g.constant(states.clone());
        let c = if dp.is_conditional() { Some(g.constant(cond_value.clone())) } else { None };
        let y = dp.forward(g, s, c, &valid);
        Ok(projected(g, y, &proj_d))
    };
    run("duration_predictor", "variance.duration.conv1.weight", &duration_loss)?;
    if let Some(a) = dp.norm1.adapter() {
        let n = store.name(a.w_gamma).to_string();
        run("duration_predictor", &n, &duration_loss)?;
    }

    // Whole mel path with teacher-forced variance targets.
    let frames = cfg.prosody.min_reference_frames().max(8);
    let reference = init.normal(frames, cfg.mel_bins, 1.0);
    let ids: Vec<usize> = (0..4).map(|i| (i * 7 + 1) % cfg.symbol_count).collect();
    let durations = [2usize, 3, 1, 2];
    let pitch = [0.3, -0.2, 0.9, 0.0];
    let energy = [-0.4, 0.1, 0.5, 0.2];
    let proj_mel = init.normal(durations.iter().sum(), cfg.mel_bins, 1.0);
    let mel_loss = |g: &mut Graph<'_>| -> Result<Var> {
        let input = ForwardInput {
            reference: Some(&reference),
            targets: Some(VarianceTargets {
                durations: &durations,
                pitch: &pitch,
                energy: &energy,
            }),
            ..ForwardInput::new(&ids)
        };
        let out = model.forward(g, &input, Mode::Train)?;
        Ok(projected(g, out.mel, &proj_mel))
    };
    run("end_to_end_mel", "encoder.block0.conv1.weight", &mel_loss)?;
    run("end_to_end_mel", "encoder.block0.attn.q.weight", &mel_loss)?;
    Ok(results)
}
