//! Run configuration, read from TOML.

use std::fs;
use std::path::Path;

use comedic_core::losses::LossConfig;
use comedic_core::model::{Ablation, ModelConfig};
use comedic_core::optim::OptimizerConfig;
use serde::{Deserialize, Serialize};

use crate::audio::AudioConfig;
use crate::error::{Result, SpeechError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Laptop-sized model.
    #[default]
    Desk,
    /// FastSpeech 2 sized model.
    Large,
    /// Toy model for tests.
    Tiny,
}

impl Profile {
    pub fn model(self, symbol_count: usize) -> ModelConfig {
        match self {
            Profile::Desk => ModelConfig::desk(symbol_count),
            Profile::Large => ModelConfig::large(symbol_count),
            Profile::Tiny => ModelConfig::tiny(symbol_count),
        }
    }

    /// Default `(pretrain, finetune)` step counts.
    pub fn schedule(self) -> (u64, u64) {
        match self {
            Profile::Large => (300_000, 100_000),
            Profile::Desk => (2_000, 1_000),
            Profile::Tiny => (200, 100),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    /// Optimizer steps; `None` takes the profile's schedule.
    pub steps: Option<u64>,
    pub batch_size: usize,
    /// Validation loss every this many steps (0 disables).
    pub validation_interval: u64,
    /// Intermediate checkpoints every this many steps (0: final only).
    pub checkpoint_interval: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Training clips per speaker kept as inference references.
    pub reference_pool_size: usize,
    pub ablation: Ablation,
    /// Replace the prosody encoder and CLN with a speaker-id embedding.
    pub speaker_embedding_baseline: bool,
    /// Peak learning rate multiplier when finetuning.
    pub finetune_lr_scale: f64,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub audio: AudioConfig,
    /// Explicit architecture; overrides `profile`, `ablation` and the
    /// baseline switch. `symbol_count` and `num_speakers` are always
    /// taken from the data.
    pub model: Option<ModelConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Desk,
            seed: 1,
            steps: None,
            batch_size: 4,
            validation_interval: 100,
            checkpoint_interval: 0,
            val_fraction: 0.1,
            test_fraction: 0.1,
            reference_pool_size: 16,
            ablation: Ablation::Full,
            speaker_embedding_baseline: false,
            finetune_lr_scale: 0.1,
            optimizer: OptimizerConfig::default(),
            loss: LossConfig::default(),
            audio: AudioConfig::default(),
            model: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SpeechError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| SpeechError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SpeechError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SpeechError::Invalid("batch_size must be positive".into()));
        }
        if !(self.finetune_lr_scale > 0.0) {
            return Err(SpeechError::Invalid("finetune_lr_scale must be positive".into()));
        }
        self.optimizer.validate()?;
        self.loss.validate()?;
        Ok(())
    }

    pub fn pretrain_steps(&self) -> u64 {
        self.steps.unwrap_or(self.profile.schedule().0)
    }

    pub fn finetune_steps(&self) -> u64 {
        self.steps.unwrap_or(self.profile.schedule().1)
    }

    /// Fillers stay plain phonemes under the no-special-token ablation.
    pub fn uses_special_tokens(&self) -> bool {
        self.ablation != Ablation::NoSpecialTokens
    }

    pub fn model_config(&self, symbol_count: usize, num_speakers: usize) -> ModelConfig {
        let mut m = match &self.model {
            Some(m) => m.clone(),
            None => {
                let base = self.profile.model(symbol_count).with_ablation(self.ablation);
                if self.speaker_embedding_baseline {
                    base.speaker_embedding_baseline(num_speakers)
                } else {
                    base
                }
            }
        };
        m.symbol_count = symbol_count;
        m.num_speakers = num_speakers.max(1);
        m.mel_bins = self.audio.mel_bins;
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = RunConfig::from_toml("profile = \"tiny\"\nseed = 7\n[loss]\nalpha = 1.5\n").unwrap();
        assert_eq!(cfg.profile, Profile::Tiny);
        assert_eq!(cfg.loss.alpha, 1.5);
        assert_eq!(cfg.loss.weights.mel, 1.0);
        assert_eq!(cfg.optimizer, OptimizerConfig::default());
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(RunConfig::from_toml("[loss]\nalpha = -1.0\n").is_err());
        assert!(RunConfig::from_toml("batch_size = 0\n").is_err());
    }

    #[test]
    fn ablation_and_baseline_shape_the_model() {
        let cfg = RunConfig {
            ablation: Ablation::PitchEnergyCln,
            ..RunConfig::default()
        };
        let m = cfg.model_config(30, 4);
        assert_eq!(m.cln_sites.len(), 5);
        assert_eq!(m.symbol_count, 30);
        let base = RunConfig {
            speaker_embedding_baseline: true,
            ..RunConfig::default()
        };
        let m = base.model_config(30, 4);
        assert!(m.speaker_embedding && !m.use_prosody_encoder && m.num_speakers == 4);
    }
}
