use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::conditioning::ClnSite;
use crate::error::{Error, Result};
use crate::prosody::ProsodyConfig;

/// Architecture of the acoustic model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub symbol_count: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub conv_filter: usize,
    pub conv_kernel: usize,
    pub predictor_filter: usize,
    pub predictor_kernel: usize,
    pub mel_bins: usize,
    pub pitch_bins: usize,
    pub energy_bins: usize,
    /// Quantization range of the z-normalized pitch and energy values.
    pub variance_min: f64,
    pub variance_max: f64,
    pub cln_sites: Vec<ClnSite>,
    pub use_prosody_encoder: bool,
    pub prosody: ProsodyConfig,
    /// Adds a learned per-speaker vector to the encoder output.
    pub speaker_embedding: bool,
    pub num_speakers: usize,
    /// Conditions CLN on `E` concatenated with the speaker vector.
    pub cln_condition_on_speaker: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(1)
    }
}

/// Settings of the ablation table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    /// CLN in encoder, duration predictor and decoder.
    Full,
    /// No CLN in the duration predictor.
    NoDurationCln,
    /// CLN added to the pitch and energy predictors.
    PitchEnergyCln,
    /// Fillers kept as ordinary phonemes; affects the frontend only.
    NoSpecialTokens,
}

impl ModelConfig {
    pub fn default_cln_sites() -> Vec<ClnSite> {
        vec![ClnSite::Encoder, ClnSite::DurationPredictor, ClnSite::Decoder]
    }

    /// Reduced profile for training on a laptop.
    pub fn desk(symbol_count: usize) -> Self {
        Self {
            symbol_count,
            hidden: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_heads: 2,
            conv_filter: 256,
            conv_kernel: 9,
            predictor_filter: 64,
            predictor_kernel: 3,
            mel_bins: 80,
            pitch_bins: 64,
            energy_bins: 64,
            variance_min: -4.0,
            variance_max: 4.0,
            cln_sites: Self::default_cln_sites(),
            use_prosody_encoder: true,
            prosody: ProsodyConfig::default(),
            speaker_embedding: false,
            num_speakers: 1,
            cln_condition_on_speaker: false,
        }
    }

    /// FastSpeech 2 sized profile.
    pub fn large(symbol_count: usize) -> Self {
        Self {
            hidden: 256,
            encoder_layers: 4,
            decoder_layers: 4,
            conv_filter: 1024,
            predictor_filter: 256,
            pitch_bins: 256,
            energy_bins: 256,
            ..Self::desk(symbol_count)
        }
    }

    /// Small enough for finite-difference checks.
    pub fn tiny(symbol_count: usize) -> Self {
        Self {
            symbol_count,
            hidden: 8,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_heads: 2,
            conv_filter: 8,
            conv_kernel: 3,
            predictor_filter: 6,
            predictor_kernel: 3,
            mel_bins: 6,
            pitch_bins: 8,
            energy_bins: 8,
            variance_min: -4.0,
            variance_max: 4.0,
            cln_sites: Self::default_cln_sites(),
            use_prosody_encoder: true,
            prosody: ProsodyConfig {
                conv_channels: vec![2; 6],
                gru_hidden: 4,
                num_tokens: 3,
                token_dim: 8,
                num_heads: 2,
                tie_qk_projection: false,
            },
            speaker_embedding: false,
            num_speakers: 1,
            cln_condition_on_speaker: false,
        }
    }

    /// Baseline conditioned only by a speaker-id embedding.
    pub fn speaker_embedding_baseline(mut self, num_speakers: usize) -> Self {
        self.use_prosody_encoder = false;
        self.cln_sites.clear();
        self.speaker_embedding = true;
        self.num_speakers = num_speakers;
        self
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        match ablation {
            Ablation::Full | Ablation::NoSpecialTokens => {
                self.cln_sites = Self::default_cln_sites();
            }
            Ablation::NoDurationCln => {
                self.cln_sites = vec![ClnSite::Encoder, ClnSite::Decoder];
            }
            Ablation::PitchEnergyCln => {
                self.cln_sites = Self::default_cln_sites();
                self.cln_sites.extend([ClnSite::PitchPredictor, ClnSite::EnergyPredictor]);
            }
        }
        self
    }

    pub fn has_cln(&self, site: ClnSite) -> bool {
        self.cln_sites.contains(&site)
    }

    /// Width of the vector fed to the CLN adapters (0 if there is none).
    pub fn cond_dim(&self) -> usize {
        let e = if self.use_prosody_encoder { self.prosody.token_dim } else { 0 };
        let s = if self.speaker_embedding && self.cln_condition_on_speaker {
            self.hidden
        } else {
            0
        };
        e + s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("symbol_count", self.symbol_count),
            ("hidden", self.hidden),
            ("attention_heads", self.attention_heads),
            ("conv_filter", self.conv_filter),
            ("conv_kernel", self.conv_kernel),
            ("predictor_filter", self.predictor_filter),
            ("predictor_kernel", self.predictor_kernel),
            ("mel_bins", self.mel_bins),
            ("pitch_bins", self.pitch_bins),
            ("energy_bins", self.energy_bins),
            ("num_speakers", self.num_speakers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden % self.attention_heads != 0 {
            return Err(Error::Config("hidden must be divisible by attention_heads".into()));
        }
        if self.conv_kernel % 2 == 0 || self.predictor_kernel % 2 == 0 {
            return Err(Error::Config("convolution kernels must be odd".into()));
        }
        if !(self.variance_max > self.variance_min) {
            return Err(Error::Config("variance_max must exceed variance_min".into()));
        }
        if !self.cln_sites.is_empty() && self.cond_dim() == 0 {
            return Err(Error::Config(
                "CLN sites need a conditioning vector (prosody encoder or speaker conditioning)".into(),
            ));
        }
        if self.cln_condition_on_speaker && !self.speaker_embedding {
            return Err(Error::Config("cln_condition_on_speaker requires speaker_embedding".into()));
        }
        if self.use_prosody_encoder {
            self.prosody.validate()?;
        }
        Ok(())
    }
}
