//! Non-autoregressive acoustic model.
//!
//! Phoneme ids are embedded and run through a stack of FFT blocks whose
//! layer norms are conditioned on the prosody representation `E`. A
//! variance adaptor predicts per-phoneme duration, pitch and energy; the
//! duration predictor is conditioned as well. Quantized pitch and energy
//! embeddings are added, the length regulator expands phonemes to frames,
//! and a second FFT stack decodes the mel-spectrogram.

mod blocks;
mod config;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use blocks::{FftBlock, FftShape, VariancePredictor};
pub use config::{Ablation, ModelConfig};

use crate::autodiff::{Graph, Var};
use crate::conditioning::{ClnAdapter, ClnSite};
use crate::error::{Error, Result};
use crate::nn::{sinusoid_positions, Linear};
use crate::params::{Initializer, ParamId, ParamStore};
use crate::prosody::ProsodyEncoder;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Length regulation and variance embeddings use ground truth.
    Train,
    /// Everything comes from the predictors.
    Infer,
}

/// Ground truth for the variance adaptor, one entry per unpadded phoneme.
#[derive(Clone, Copy, Debug)]
pub struct VarianceTargets<'a> {
    pub durations: &'a [usize],
    pub pitch: &'a [f64],
    pub energy: &'a [f64],
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardInput<'a> {
    /// Symbol ids; the last `padding` entries are padding.
    pub ids: &'a [usize],
    pub padding: usize,
    pub speaker: usize,
    /// Reference mel for the prosody encoder.
    pub reference: Option<&'a Matrix>,
    pub targets: Option<VarianceTargets<'a>>,
}

impl<'a> ForwardInput<'a> {
    pub fn new(ids: &'a [usize]) -> Self {
        Self {
            ids,
            padding: 0,
            speaker: 0,
            reference: None,
            targets: None,
        }
    }

    pub fn valid_len(&self) -> usize {
        self.ids.len().saturating_sub(self.padding)
    }
}

/// The conditioning vectors of one utterance.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning {
    /// Prosody representation `E`.
    pub prosody: Option<Var>,
    pub speaker: Option<Var>,
    /// What the CLN adapters consume.
    pub cln: Option<Var>,
}

/// Graph nodes produced by [`AcousticModel::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub mel: Var,
    /// Raw linear-domain duration predictions, `N × 1` including padding.
    pub duration: Var,
    pub pitch: Var,
    pub energy: Var,
    pub conditioning: Conditioning,
    /// Frames given to each unpadded phoneme by the length regulator.
    pub frame_durations: Vec<usize>,
}

/// Detached result of an inference pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticOutput {
    pub mel: Matrix,
    pub duration_pred: Vec<f64>,
    pub pitch_pred: Vec<f64>,
    pub energy_pred: Vec<f64>,
    pub frame_durations: Vec<usize>,
    pub prosody: Option<Vec<f64>>,
}

/// Inference durations: each prediction clamped at zero, rounded half up,
/// with at least one frame per phoneme.
pub fn round_durations(pred: &[f64]) -> Vec<usize> {
    pred.iter()
        .map(|&d| {
            let r = libm::floor(libm::fmax(d, 0.0) + 0.5);
            (r as usize).max(1)
        })
        .collect()
}

/// Repeats row `i` of `hidden` `durations[i]` times.
pub fn length_regulate(hidden: &Matrix, durations: &[i64]) -> Result<Matrix> {
    if durations.len() != hidden.rows() {
        return Err(Error::InvalidInput(format!(
            "{} durations for {} phoneme states",
            durations.len(),
            hidden.rows()
        )));
    }
    if let Some((i, d)) = durations.iter().enumerate().find(|(_, d)| **d < 0) {
        return Err(Error::InvalidInput(format!("negative duration {d} at position {i}")));
    }
    let index = regulation_index(&durations.iter().map(|&d| d as usize).collect::<Vec<_>>());
    let mut out = Matrix::zeros(index.len(), hidden.cols());
    for (r, &src) in index.iter().enumerate() {
        out.row_mut(r).copy_from_slice(hidden.row(src));
    }
    Ok(out)
}

fn regulation_index(durations: &[usize]) -> Vec<usize> {
    let mut index = Vec::with_capacity(durations.iter().sum());
    for (i, &d) in durations.iter().enumerate() {
        index.extend(core::iter::repeat(i).take(d));
    }
    index
}

fn valid_mask(len: usize, valid: usize) -> Vec<bool> {
    (0..len).map(|i| i < valid).collect()
}

#[derive(Clone, Debug)]
pub struct AcousticModel {
    config: ModelConfig,
    params: ParamStore,
    embedding: ParamId,
    speaker_table: Option<ParamId>,
    prosody: Option<ProsodyEncoder>,
    encoder: Vec<FftBlock>,
    duration: VariancePredictor,
    pitch: VariancePredictor,
    energy: VariancePredictor,
    pitch_embedding: ParamId,
    energy_embedding: ParamId,
    decoder: Vec<FftBlock>,
    mel_out: Linear,
}

impl AcousticModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let c = &config;
        let h = c.hidden;
        let cond_dim = c.cond_dim();

        let embedding = store.register("encoder.embedding", init.normal(c.symbol_count, h, 0.5));
        let speaker_table = c
            .speaker_embedding
            .then(|| store.register("speaker_embedding", init.normal(c.num_speakers, h, 0.1)));
        let prosody = if c.use_prosody_encoder {
            Some(ProsodyEncoder::new(&mut store, &mut init, "prosody", &c.prosody, c.mel_bins)?)
        } else {
            None
        };
        let shape = FftShape {
            hidden: h,
            heads: c.attention_heads,
            filter: c.conv_filter,
            kernel: c.conv_kernel,
            cond_dim,
        };
        let encoder = (0..c.encoder_layers)
            .map(|i| {
                FftBlock::new(
                    &mut store,
                    &mut init,
                    &format!("encoder.block{i}"),
                    &shape,
                    ClnSite::Encoder,
                    c.has_cln(ClnSite::Encoder),
                )
            })
            .collect();
        let predictor = |store: &mut ParamStore, init: &mut Initializer, name: &str, site: ClnSite| {
            VariancePredictor::new(
                store,
                init,
                name,
                h,
                c.predictor_filter,
                c.predictor_kernel,
                site,
                c.has_cln(site),
                cond_dim,
            )
        };
        let duration = predictor(&mut store, &mut init, "variance.duration", ClnSite::DurationPredictor);
        let pitch = predictor(&mut store, &mut init, "variance.pitch", ClnSite::PitchPredictor);
        let energy = predictor(&mut store, &mut init, "variance.energy", ClnSite::EnergyPredictor);
        let pitch_embedding = store.register("variance.pitch_embedding", init.normal(c.pitch_bins, h, 0.1));
        let energy_embedding = store.register("variance.energy_embedding", init.normal(c.energy_bins, h, 0.1));
        let decoder = (0..c.decoder_layers)
            .map(|i| {
                FftBlock::new(
                    &mut store,
                    &mut init,
                    &format!("decoder.block{i}"),
                    &shape,
                    ClnSite::Decoder,
                    c.has_cln(ClnSite::Decoder),
                )
            })
            .collect();
        let mel_out = Linear::new(&mut store, &mut init, "decoder.mel_out", h, c.mel_bins, true);

        let mut model = Self {
            config,
            params: store,
            embedding,
            speaker_table,
            prosody,
            encoder,
            duration,
            pitch,
            energy,
            pitch_embedding,
            energy_embedding,
            decoder,
            mel_out,
        };
        if model.prosody.is_some() {
            let silent = Matrix::zeros(model.config.prosody.min_reference_frames(), model.config.mel_bins);
            let e_ref = model.condition_vector(Some(&silent), 0)?;
            model.calibrate_cln(&e_ref);
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn prosody_encoder(&self) -> Option<&ProsodyEncoder> {
        self.prosody.as_ref()
    }

    pub fn embedding_param(&self) -> ParamId {
        self.embedding
    }

    pub fn encoder_blocks(&self) -> &[FftBlock] {
        &self.encoder
    }

    pub fn decoder_blocks(&self) -> &[FftBlock] {
        &self.decoder
    }

    pub fn duration_predictor(&self) -> &VariancePredictor {
        &self.duration
    }

    pub fn pitch_predictor(&self) -> &VariancePredictor {
        &self.pitch
    }

    pub fn energy_predictor(&self) -> &VariancePredictor {
        &self.energy
    }

    /// Every CLN adapter in the model.
    pub fn cln_adapters(&self) -> Vec<&ClnAdapter> {
        let mut out = Vec::new();
        for b in self.encoder.iter().chain(&self.decoder) {
            out.extend(b.norm1.adapter());
            out.extend(b.norm2.adapter());
        }
        for p in [&self.duration, &self.pitch, &self.energy] {
            out.extend(p.norm1.adapter());
            out.extend(p.norm2.adapter());
        }
        out
    }

    /// Re-centers every CLN scale map so `cond·W_γ ≈ 1` for `cond`.
    pub fn calibrate_cln(&mut self, cond: &[f64]) {
        let adapters: Vec<ClnAdapter> = self.cln_adapters().into_iter().cloned().collect();
        for a in adapters {
            if a.cond_dim == cond.len() {
                a.calibrate(&mut self.params, cond);
            }
        }
    }

    /// Replaces parameter values by name. Every stored parameter must be
    /// present with a matching shape.
    pub fn load_params<'a>(&mut self, named: impl IntoIterator<Item = (&'a str, &'a Matrix)>) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        for (name, value) in named {
            let id = self
                .params
                .id(name)
                .ok_or_else(|| Error::Config(format!("unexpected parameter `{name}`")))?;
            if self.params.value(id).shape() != value.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    value.shape(),
                    self.params.value(id).shape()
                )));
            }
            self.params.set(id, value.clone());
            seen[id.index()] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let name = String::from(self.params.name(ParamId::new(i)));
            return Err(Error::Config(format!("missing parameter `{name}`")));
        }
        Ok(())
    }

    /// Appends freshly initialized embedding rows for new symbols; existing
    /// rows are untouched.
    pub fn grow_symbols(&mut self, symbol_count: usize, seed: u64) -> Result<()> {
        let old = self.config.symbol_count;
        if symbol_count < old {
            return Err(Error::IncompatibleSymbols(format!(
                "cannot shrink the symbol inventory from {old} to {symbol_count}"
            )));
        }
        let h = self.config.hidden;
        let fresh = Initializer::new(seed).normal(symbol_count - old, h, 0.5);
        let table = self.params.value(self.embedding);
        let mut data = table.as_slice().to_vec();
        data.extend_from_slice(fresh.as_slice());
        self.params.set(self.embedding, Matrix::from_vec(symbol_count, h, data));
        self.config.symbol_count = symbol_count;
        Ok(())
    }

    /// Builds the conditioning nodes for a reference mel and speaker.
    pub fn conditioning(&self, g: &mut Graph<'_>, reference: Option<&Matrix>, speaker: usize) -> Result<Conditioning> {
        let prosody = match &self.prosody {
            Some(enc) => {
                let mel = reference.ok_or_else(|| Error::InvalidInput("a reference mel is required".into()))?;
                let m = g.constant(mel.clone());
                Some(enc.forward(g, m)?)
            }
            None => None,
        };
        self.conditioning_from(g, prosody, speaker)
    }

    /// Conditioning built around an existing `E` node.
    pub fn conditioning_from(&self, g: &mut Graph<'_>, prosody: Option<Var>, speaker: usize) -> Result<Conditioning> {
        let speaker = match self.speaker_table {
            Some(table) => {
                if speaker >= self.config.num_speakers {
                    return Err(Error::InvalidInput(format!("speaker index {speaker} out of range")));
                }
                let t = g.param(table);
                Some(g.gather_rows(t, &[speaker]))
            }
            None => None,
        };
        let cln = match (prosody, speaker) {
            (Some(e), Some(s)) if self.config.cln_condition_on_speaker => Some(g.concat_cols(&[e, s])),
            (None, Some(s)) if self.config.cln_condition_on_speaker => Some(s),
            (e, _) => e,
        };
        Ok(Conditioning { prosody, speaker, cln })
    }

    /// The CLN conditioning vector as plain values.
    pub fn condition_vector(&self, reference: Option<&Matrix>, speaker: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let c = self.conditioning(&mut g, reference, speaker)?;
        Ok(c.cln.map(|v| g.value(v).as_slice().to_vec()).unwrap_or_default())
    }

    /// Phoneme encoder: `len(ids) × hidden`, padded rows zero.
    pub fn encode_phonemes(&self, g: &mut Graph<'_>, ids: &[usize], valid: usize, cond: &Conditioning) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("empty phoneme sequence".into()));
        }
        if let Some((i, id)) = ids.iter().enumerate().find(|(_, &id)| id >= self.config.symbol_count) {
            return Err(Error::InvalidInput(format!(
                "symbol id {id} at position {i} exceeds the inventory of {}",
                self.config.symbol_count
            )));
        }
        let mask = valid_mask(ids.len(), valid);
        let table = g.param(self.embedding);
        let x = g.gather_rows(table, ids);
        let pos = g.constant(sinusoid_positions(ids.len(), self.config.hidden));
        let mut x = g.add(x, pos);
        x = g.mask_rows(x, &mask);
        for block in &self.encoder {
            x = block.forward(g, x, cond.cln, &mask);
        }
        if let Some(s) = cond.speaker {
            x = g.add_row(x, s);
            x = g.mask_rows(x, &mask);
        }
        Ok(x)
    }

    pub fn predict_duration(&self, g: &mut Graph<'_>, hidden: Var, cond: &Conditioning, valid: usize) -> Var {
        let mask = valid_mask(g.shape(hidden).0, valid);
        self.duration.forward(g, hidden, cond.cln, &mask)
    }

    pub fn predict_pitch(&self, g: &mut Graph<'_>, hidden: Var, cond: &Conditioning, valid: usize) -> Var {
        let mask = valid_mask(g.shape(hidden).0, valid);
        self.pitch.forward(g, hidden, cond.cln, &mask)
    }

    pub fn predict_energy(&self, g: &mut Graph<'_>, hidden: Var, cond: &Conditioning, valid: usize) -> Var {
        let mask = valid_mask(g.shape(hidden).0, valid);
        self.energy.forward(g, hidden, cond.cln, &mask)
    }

    /// Bucket of a z-normalized pitch or energy value.
    pub fn quantize(&self, value: f64, bins: usize) -> usize {
        let (lo, hi) = (self.config.variance_min, self.config.variance_max);
        let t = (value - lo) / (hi - lo) * bins as f64;
        if !(t > 0.0) {
            0
        } else {
            (t as usize).min(bins - 1)
        }
    }

    fn variance_embedding(&self, g: &mut Graph<'_>, table: ParamId, bins: usize, values: &[f64], rows: usize) -> Var {
        let index: Vec<usize> = values.iter().map(|&v| self.quantize(v, bins)).collect();
        let t = g.param(table);
        let e = g.gather_rows(t, &index);
        if rows > values.len() {
            let pad = g.constant(Matrix::zeros(rows - values.len(), self.config.hidden));
            g.concat_rows(&[e, pad])
        } else {
            e
        }
    }

    /// Predicts pitch and energy and adds their quantized embeddings.
    /// `targets` (pitch, energy) replace the predictions for the embedding
    /// lookup in training. Returns `(states, pitch_pred, energy_pred)`.
    pub fn predict_pitch_energy(
        &self,
        g: &mut Graph<'_>,
        hidden: Var,
        cond: &Conditioning,
        valid: usize,
        targets: Option<(&[f64], &[f64])>,
    ) -> (Var, Var, Var) {
        let rows = g.shape(hidden).0;
        let pitch = self.predict_pitch(g, hidden, cond, valid);
        let pitch_values: Vec<f64> = match targets {
            Some((p, _)) => p.to_vec(),
            None => g.value(pitch).as_slice()[..valid].to_vec(),
        };
        let pe = self.variance_embedding(g, self.pitch_embedding, self.config.pitch_bins, &pitch_values, rows);
        let x = g.add(hidden, pe);
        let energy = self.predict_energy(g, x, cond, valid);
        let energy_values: Vec<f64> = match targets {
            Some((_, e)) => e.to_vec(),
            None => g.value(energy).as_slice()[..valid].to_vec(),
        };
        let ee = self.variance_embedding(g, self.energy_embedding, self.config.energy_bins, &energy_values, rows);
        let x = g.add(x, ee);
        (x, pitch, energy)
    }

    /// Frame states: row `i` of `hidden` repeated `durations[i]` times.
    /// Rows beyond `durations.len()` (padding) are dropped.
    pub fn length_regulate(&self, g: &mut Graph<'_>, hidden: Var, durations: &[usize]) -> Var {
        let index = regulation_index(durations);
        g.gather_rows(hidden, &index)
    }

    /// Mel decoder over `frames × hidden` states; rows at or beyond `valid`
    /// are treated as padding.
    pub fn decode_mel(&self, g: &mut Graph<'_>, frames: Var, cond: &Conditioning, valid: usize) -> Result<Var> {
        let (t, _) = g.shape(frames);
        if t == 0 {
            return Err(Error::InvalidInput("no frames to decode".into()));
        }
        let mask = valid_mask(t, valid);
        let pos = g.constant(sinusoid_positions(t, self.config.hidden));
        let mut x = g.add(frames, pos);
        x = g.mask_rows(x, &mask);
        for block in &self.decoder {
            x = block.forward(g, x, cond.cln, &mask);
        }
        let mel = self.mel_out.forward(g, x);
        Ok(g.mask_rows(mel, &mask))
    }

    pub fn forward(&self, g: &mut Graph<'_>, input: &ForwardInput<'_>, mode: Mode) -> Result<ForwardOutput> {
        let cond = self.conditioning(g, input.reference, input.speaker)?;
        self.forward_with(g, input, mode, cond)
    }

    /// Forward pass with caller-supplied conditioning.
    pub fn forward_with(
        &self,
        g: &mut Graph<'_>,
        input: &ForwardInput<'_>,
        mode: Mode,
        cond: Conditioning,
    ) -> Result<ForwardOutput> {
        let valid = input.valid_len();
        if valid == 0 {
            return Err(Error::InvalidInput("no unpadded phonemes".into()));
        }
        let targets = match (mode, input.targets) {
            (Mode::Train, None) => {
                return Err(Error::InvalidInput("training needs duration, pitch and energy targets".into()))
            }
            (Mode::Train, Some(t)) => {
                if t.durations.len() != valid || t.pitch.len() != valid || t.energy.len() != valid {
                    return Err(Error::InvalidInput(format!(
                        "targets must have {valid} entries (durations {}, pitch {}, energy {})",
                        t.durations.len(),
                        t.pitch.len(),
                        t.energy.len()
                    )));
                }
                Some(t)
            }
            (Mode::Infer, _) => None,
        };
        let hidden = self.encode_phonemes(g, input.ids, valid, &cond)?;
        let duration = self.predict_duration(g, hidden, &cond, valid);
        let (states, pitch, energy) =
            self.predict_pitch_energy(g, hidden, &cond, valid, targets.map(|t| (t.pitch, t.energy)));
        let frame_durations = match targets {
            Some(t) => t.durations.to_vec(),
            None => round_durations(&g.value(duration).as_slice()[..valid]),
        };
        let frames = self.length_regulate(g, states, &frame_durations);
        let total: usize = frame_durations.iter().sum();
        let mel = self.decode_mel(g, frames, &cond, total)?;
        Ok(ForwardOutput {
            mel,
            duration,
            pitch,
            energy,
            conditioning: cond,
            frame_durations,
        })
    }

    /// Inference on plain values.
    pub fn infer(&self, ids: &[usize], speaker: usize, reference: Option<&Matrix>) -> Result<AcousticOutput> {
        let mut g = Graph::new(&self.params);
        let input = ForwardInput {
            speaker,
            reference,
            ..ForwardInput::new(ids)
        };
        let out = self.forward(&mut g, &input, Mode::Infer)?;
        Ok(AcousticOutput {
            mel: g.value(out.mel).clone(),
            duration_pred: g.value(out.duration).as_slice().to_vec(),
            pitch_pred: g.value(out.pitch).as_slice().to_vec(),
            energy_pred: g.value(out.energy).as_slice().to_vec(),
            frame_durations: out.frame_durations,
            prosody: out.conditioning.prosody.map(|e| g.value(e).as_slice().to_vec()),
        })
    }
}

#[cfg(test)]
mod tests;
