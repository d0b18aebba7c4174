//! Training objectives.
//!
//! Durations are compared in the linear domain, so a given relative error
//! costs more on a long phoneme than on a short one. The mel reconstruction
//! loss weights the second half of the utterance by `α`:
//!
//! ```text
//! L_duration = (1/N) Σ (d_target − d_predicted)²
//! L_mel      = mean(first ⌈T/2⌉ frames) + α · mean(remaining frames)
//! ```

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{AcousticOutput, ForwardOutput};
use crate::tensor::Matrix;

pub const DEFAULT_ALPHA: f64 = 2.0;

/// Index of the first frame of the second half.
pub fn second_half_start(frames: usize) -> usize {
    frames.div_ceil(2)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("second-half weight must be finite and non-negative, got {alpha}")))
    }
}

fn masked_pairs<'a>(
    pred: &'a [f64],
    target: &'a [f64],
    mask: &'a [bool],
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} predictions, {} targets, {} mask entries",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidInput("every position is masked".into()));
    }
    Ok(pred
        .iter()
        .zip(target)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &t), _)| (p, t)))
}

/// Linear-domain MSE over the positions where `mask` is true.
pub fn duration_loss(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    let (sum, n) = masked_pairs(pred, target, mask)?.fold((0.0, 0usize), |(s, n), (p, t)| (s + (t - p) * (t - p), n + 1));
    Ok(sum / n as f64)
}

/// The log-domain variant, `(1/N) Σ (ln d_target − ln d_predicted)²`, kept
/// for comparison. Durations must be positive.
pub fn log_duration_loss(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in masked_pairs(pred, target, mask)? {
        if !(p > 0.0 && t > 0.0) {
            return Err(Error::InvalidInput("log-domain durations must be positive".into()));
        }
        let d = libm::log(t) - libm::log(p);
        sum += d * d;
        n += 1;
    }
    Ok(sum / n as f64)
}

/// Mean of the first `⌈T/2⌉` values plus `α` times the mean of the rest.
/// A single-frame input has an empty second half, which contributes zero.
pub fn half_weighted_loss(per_frame: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if per_frame.is_empty() {
        return Err(Error::InvalidInput("no frames".into()));
    }
    let split = second_half_start(per_frame.len());
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    Ok(mean(&per_frame[..split]) + alpha * mean(&per_frame[split..]))
}

/// Per-frame mean absolute error between two mel matrices.
pub fn frame_l1(pred: &Matrix, target: &Matrix) -> Result<Vec<f64>> {
    if pred.shape() != target.shape() {
        return Err(Error::InvalidInput(format!(
            "mel shape {:?} does not match target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok((0..pred.rows())
        .map(|r| {
            let s: f64 = pred.row(r).iter().zip(target.row(r)).map(|(a, b)| libm::fabs(a - b)).sum();
            s / pred.cols() as f64
        })
        .collect())
}

fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    let mask = alloc::vec![true; pred.len()];
    duration_loss(pred, target, &mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mel: 1.0,
            duration: 1.0,
            pitch: 1.0,
            energy: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the second half of the mel loss.
    pub alpha: f64,
    pub weights: LossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            weights: LossWeights::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        let w = &self.weights;
        if [w.mel, w.duration, w.pitch, w.energy].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mel_loss: f64,
    pub duration_loss: f64,
    pub pitch_loss: f64,
    pub energy_loss: f64,
    pub total: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    /// Combines components with `weights`; any non-finite component is
    /// reported by name.
    pub fn combine(mel: f64, duration: f64, pitch: f64, energy: f64, config: &LossConfig) -> Result<Self> {
        for (component, v) in [("mel", mel), ("duration", duration), ("pitch", pitch), ("energy", energy)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { component });
            }
        }
        let w = &config.weights;
        Ok(Self {
            mel_loss: mel,
            duration_loss: duration,
            pitch_loss: pitch,
            energy_loss: energy,
            total: w.mel * mel + w.duration * duration + w.pitch * pitch + w.energy * energy,
            alpha: config.alpha,
        })
    }

    /// Component-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        let first = items.first()?;
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(LossBreakdown {
            mel_loss: avg(|b| b.mel_loss),
            duration_loss: avg(|b| b.duration_loss),
            pitch_loss: avg(|b| b.pitch_loss),
            energy_loss: avg(|b| b.energy_loss),
            total: avg(|b| b.total),
            alpha: first.alpha,
        })
    }
}

/// Ground truth for one utterance.
#[derive(Clone, Copy, Debug)]
pub struct LossTargets<'a> {
    pub mel: &'a Matrix,
    pub durations: &'a [f64],
    pub pitch: &'a [f64],
    pub energy: &'a [f64],
}

/// Loss breakdown of detached predictions.
pub fn total_loss(out: &AcousticOutput, targets: &LossTargets<'_>, config: &LossConfig) -> Result<LossBreakdown> {
    config.validate()?;
    let mel = half_weighted_loss(&frame_l1(&out.mel, targets.mel)?, config.alpha)?;
    let duration = mse(&out.duration_pred, targets.durations)?;
    let pitch = mse(&out.pitch_pred, targets.pitch)?;
    let energy = mse(&out.energy_pred, targets.energy)?;
    LossBreakdown::combine(mel, duration, pitch, energy, config)
}

/// Loss nodes built on a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct GraphLosses {
    pub total: Var,
    pub mel: Var,
    pub duration: Var,
    pub pitch: Var,
    pub energy: Var,
}

impl GraphLosses {
    pub fn breakdown(&self, g: &Graph<'_>, config: &LossConfig) -> Result<LossBreakdown> {
        let v = |x: Var| g.value(x)[(0, 0)];
        let b = LossBreakdown::combine(v(self.mel), v(self.duration), v(self.pitch), v(self.energy), config)?;
        Ok(LossBreakdown { total: v(self.total), ..b })
    }
}

fn graph_mse(g: &mut Graph<'_>, pred: Var, target: &[f64]) -> Var {
    let p = g.slice_rows(pred, 0, target.len());
    let t = g.constant(Matrix::column_vector(target));
    let d = g.sub(p, t);
    let d = g.square(d);
    g.mean(d)
}

/// Builds the weighted objective for a teacher-forced forward pass.
/// Padded predictor rows beyond the target length are ignored.
pub fn graph_losses(
    g: &mut Graph<'_>,
    out: &ForwardOutput,
    targets: &LossTargets<'_>,
    config: &LossConfig,
) -> Result<GraphLosses> {
    config.validate()?;
    let (frames, bins) = g.shape(out.mel);
    if (frames, bins) != targets.mel.shape() {
        return Err(Error::InvalidInput(format!(
            "mel shape {:?} does not match target {:?}",
            (frames, bins),
            targets.mel.shape()
        )));
    }
    let n = targets.durations.len();
    let rows = g.shape(out.duration).0;
    if n == 0 || n > rows || targets.pitch.len() != n || targets.energy.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} duration, {} pitch and {} energy targets for {rows} phonemes",
            targets.pitch.len(),
            targets.energy.len()
        )));
    }

    let t = g.constant(targets.mel.clone());
    let diff = g.sub(out.mel, t);
    let diff = g.abs(diff);
    let split = second_half_start(frames);
    let first = g.slice_rows(diff, 0, split);
    let mut mel = g.mean(first);
    if frames > split {
        let second = g.slice_rows(diff, split, frames - split);
        let second = g.mean(second);
        let second = g.scale(second, config.alpha);
        mel = g.add(mel, second);
    }
    let duration = graph_mse(g, out.duration, targets.durations);
    let pitch = graph_mse(g, out.pitch, targets.pitch);
    let energy = graph_mse(g, out.energy, targets.energy);

    let w = config.weights;
    let parts = [(mel, w.mel), (duration, w.duration), (pitch, w.pitch), (energy, w.energy)];
    let mut total: Option<Var> = None;
    for (v, weight) in parts {
        if weight == 0.0 {
            continue;
        }
        let term = if weight == 1.0 { v } else { g.scale(v, weight) };
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.scale(mel, 0.0),
    };
    Ok(GraphLosses {
        total,
        mel,
        duration,
        pitch,
        energy,
    })
}
