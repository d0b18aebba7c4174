//! One optimization step over a batch of teacher-forced utterances.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::losses::{graph_losses, LossBreakdown, LossConfig, LossTargets};
use crate::model::{AcousticModel, ForwardInput, Mode, VarianceTargets};
use crate::optim::{Adam, GradientBuffer, UpdateInfo};
use crate::tensor::Matrix;

/// An utterance with frame-level ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub utterance_id: alloc::string::String,
    pub ids: Vec<usize>,
    pub speaker: usize,
    /// Ground-truth mel, `Σ durations × mel_bins`.
    pub mel: Matrix,
    pub durations: Vec<usize>,
    /// Phoneme-level normalized pitch and energy.
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    /// Reference mel for the prosody encoder; `None` uses `mel` itself.
    pub reference: Option<Matrix>,
}

impl TrainExample {
    pub fn validate(&self) -> Result<()> {
        let n = self.ids.len();
        if n == 0 || self.durations.len() != n || self.pitch.len() != n || self.energy.len() != n {
            return Err(Error::InvalidInput(format!(
                "utterance `{}`: {n} phonemes but {} durations, {} pitch, {} energy values",
                self.utterance_id,
                self.durations.len(),
                self.pitch.len(),
                self.energy.len()
            )));
        }
        let frames: usize = self.durations.iter().sum();
        if frames != self.mel.rows() {
            return Err(Error::InvalidInput(format!(
                "utterance `{}`: durations sum to {frames} frames, mel has {}",
                self.utterance_id,
                self.mel.rows()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss: LossBreakdown,
    pub update: UpdateInfo,
}

fn example_losses(
    model: &AcousticModel,
    ex: &TrainExample,
    config: &LossConfig,
    grads: Option<(&mut GradientBuffer, f64)>,
) -> Result<LossBreakdown> {
    ex.validate()?;
    let mut g = Graph::new(model.params());
    let input = ForwardInput {
        speaker: ex.speaker,
        reference: Some(ex.reference.as_ref().unwrap_or(&ex.mel)),
        targets: Some(VarianceTargets {
            durations: &ex.durations,
            pitch: &ex.pitch,
            energy: &ex.energy,
        }),
        ..ForwardInput::new(&ex.ids)
    };
    let out = model.forward(&mut g, &input, Mode::Train)?;
    let durations: Vec<f64> = ex.durations.iter().map(|&d| d as f64).collect();
    let targets = LossTargets {
        mel: &ex.mel,
        durations: &durations,
        pitch: &ex.pitch,
        energy: &ex.energy,
    };
    let losses = graph_losses(&mut g, &out, &targets, config)?;
    let breakdown = losses.breakdown(&g, config)?;
    if let Some((buf, weight)) = grads {
        buf.accumulate(&g.backward(losses.total), weight);
    }
    Ok(breakdown)
}

/// Teacher-forced losses averaged over `batch`, without updating anything.
pub fn evaluate(model: &AcousticModel, batch: &[TrainExample], config: &LossConfig) -> Result<LossBreakdown> {
    let items = batch
        .iter()
        .map(|ex| example_losses(model, ex, config, None))
        .collect::<Result<Vec<_>>>()?;
    LossBreakdown::mean(&items).ok_or_else(|| Error::InvalidInput("empty batch".into()))
}

/// Averages gradients over `batch` and applies one optimizer update. If any
/// loss or gradient is non-finite the parameters are left unchanged.
pub fn train_step(
    model: &mut AcousticModel,
    optimizer: &mut Adam,
    batch: &[TrainExample],
    config: &LossConfig,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut buf = GradientBuffer::zeros_like(model.params());
    let weight = 1.0 / batch.len() as f64;
    let mut items = Vec::with_capacity(batch.len());
    for ex in batch {
        items.push(example_losses(model, ex, config, Some((&mut buf, weight)))?);
    }
    let loss = LossBreakdown::mean(&items).expect("non-empty batch");
    let update = optimizer.update(model.params_mut(), &buf)?;
    Ok(StepReport { loss, update })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::optim::OptimizerConfig;
    use crate::params::Initializer;
    use alloc::vec;

    fn example(seed: u64) -> TrainExample {
        let durations = vec![20, 30, 25];
        let mel = Initializer::new(seed).normal(75, 6, 1.0);
        TrainExample {
            utterance_id: format!("u{seed}"),
            ids: vec![1, 2, 3],
            speaker: 0,
            mel,
            durations,
            pitch: vec![0.5, -0.5, 0.0],
            energy: vec![1.0, 0.0, -1.0],
            reference: None,
        }
    }

    #[test]
    fn steps_reduce_loss_and_are_deterministic() {
        let run = || {
            let mut model = AcousticModel::new(ModelConfig::tiny(5), 3).unwrap();
            let cfg = OptimizerConfig {
                peak_lr: 0.01,
                warmup_steps: 5,
                ..OptimizerConfig::default()
            };
            let mut opt = Adam::new(cfg, model.params()).unwrap();
            let batch = [example(1)];
            (0..40)
                .map(|_| train_step(&mut model, &mut opt, &batch, &LossConfig::default()).unwrap().loss.total)
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a[39] < 0.5 * a[0], "{} -> {}", a[0], a[39]);
    }

    #[test]
    fn inconsistent_example_is_rejected() {
        let mut ex = example(1);
        ex.durations[0] += 1;
        let model = AcousticModel::new(ModelConfig::tiny(5), 3).unwrap();
        assert!(evaluate(&model, &[ex], &LossConfig::default()).is_err());
        assert!(evaluate(&model, &[], &LossConfig::default()).is_err());
    }
}
