//! Versioned binary checkpoints.
//!
//! Layout (little-endian): the magic `CSCKPT\0\0`, a u32 format version,
//! then length-prefixed sections in a fixed order: run config (TOML),
//! model config (TOML), symbol table, filler registry, speakers, the
//! SHA-256 fingerprints of both configs and of the symbol table,
//! normalization statistics, phase and step, parameters (f64), optional Adam state
//! (f64) and the reference pool (f32 mels).

use std::fs;
use std::path::Path;

use comedic_core::frontend::{FillerRegistry, SymbolTable};
use comedic_core::model::{AcousticModel, ModelConfig};
use comedic_core::optim::{Adam, OptimizerConfig};
use comedic_core::Matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::NormStats;
use crate::error::{Result, SpeechError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which schedule a checkpoint belongs to; resuming continues it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Finetune,
}

/// A training mel available as prosody reference at inference time.
/// Values are rounded to f32 on construction so saving is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceClip {
    pub speaker: String,
    pub utterance_id: String,
    pub mel: Matrix,
}

impl ReferenceClip {
    pub fn new(speaker: &str, utterance_id: &str, mel: &Matrix) -> Self {
        Self {
            speaker: speaker.to_string(),
            utterance_id: utterance_id.to_string(),
            mel: mel.map(|v| v as f32 as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl OptimizerState {
    pub fn of(adam: &Adam) -> Self {
        Self {
            config: *adam.config(),
            step: adam.step_count(),
            m: adam.first_moments().to_vec(),
            v: adam.second_moments().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub model_config: ModelConfig,
    pub symbols: SymbolTable,
    pub registry: FillerRegistry,
    pub speakers: Vec<String>,
    pub norm: NormStats,
    pub phase: Phase,
    /// Optimizer steps taken in `phase`.
    pub step: u64,
    pub params: Vec<(String, Matrix)>,
    pub optimizer: Option<OptimizerState>,
    pub references: Vec<ReferenceClip>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        run: &RunConfig,
        model: &AcousticModel,
        symbols: &SymbolTable,
        registry: &FillerRegistry,
        speakers: &[String],
        norm: NormStats,
        phase: Phase,
        step: u64,
        optimizer: Option<&Adam>,
        references: Vec<ReferenceClip>,
    ) -> Self {
        Self {
            run: run.clone(),
            model_config: model.config().clone(),
            symbols: symbols.clone(),
            registry: registry.clone(),
            speakers: speakers.to_vec(),
            norm,
            phase,
            step,
            params: model
                .params()
                .iter()
                .map(|(_, name, v)| (name.to_string(), v.clone()))
                .collect(),
            optimizer: optimizer.map(OptimizerState::of),
            references,
        }
    }

    /// Rebuilds the model with the stored parameter values.
    pub fn model(&self) -> Result<AcousticModel> {
        if self.model_config.symbol_count != self.symbols.len() {
            return Err(comedic_core::Error::IncompatibleSymbols(format!(
                "model has {} symbols, table has {}",
                self.model_config.symbol_count,
                self.symbols.len()
            ))
            .into());
        }
        let mut model = AcousticModel::new(self.model_config.clone(), 0)?;
        model.load_params(self.params.iter().map(|(n, v)| (n.as_str(), v)))?;
        Ok(model)
    }

    /// The optimizer for `model`, restored if its state was saved.
    pub fn optimizer(&self, model: &AcousticModel) -> Result<Option<Adam>> {
        self.optimizer
            .as_ref()
            .map(|s| Adam::from_state(s.config, s.step, s.m.clone(), s.v.clone(), model.params()).map_err(Into::into))
            .transpose()
    }

    pub fn config_fingerprint(&self) -> String {
        let run = self.run.to_toml();
        let model = toml::to_string(&self.model_config).expect("model config serializes");
        sha256_hex(format!("{run}\n--\n{model}").as_bytes())
    }

    pub fn symbols_fingerprint(&self) -> String {
        sha256_hex(self.symbols.to_text().as_bytes())
    }

    pub fn speaker_index(&self, speaker: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == speaker)
    }

    pub fn references_for(&self, speaker: &str) -> Vec<&ReferenceClip> {
        self.references.iter().filter(|r| r.speaker == speaker).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&self.run.to_toml());
        w.str(&toml::to_string(&self.model_config).expect("model config serializes"));
        w.str(&self.symbols.to_text());
        w.str(&self.registry.to_text());
        w.u32(self.speakers.len() as u32);
        for s in &self.speakers {
            w.str(s);
        }
        w.str(&self.config_fingerprint());
        w.str(&self.symbols_fingerprint());
        for v in [self.norm.pitch_mean, self.norm.pitch_std, self.norm.energy_mean, self.norm.energy_std] {
            w.f64(v);
        }
        w.u8(self.phase as u8);
        w.u64(self.step);
        w.u32(self.params.len() as u32);
        for (name, m) in &self.params {
            w.str(name);
            w.matrix_f64(m);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(o) => {
                w.u8(1);
                w.str(&toml::to_string(&o.config).expect("optimizer config serializes"));
                w.u64(o.step);
                for m in o.m.iter().chain(&o.v) {
                    w.matrix_f64(m);
                }
            }
        }
        w.u32(self.references.len() as u32);
        for r in &self.references {
            w.str(&r.speaker);
            w.str(&r.utterance_id);
            w.matrix_f32(&r.mel);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(r.error("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error(&format!("unsupported checkpoint version {version}")));
        }
        let run = RunConfig::from_toml(&r.str()?)?;
        let model_config: ModelConfig = toml::from_str(&r.str()?).map_err(|e| r.error(&e.to_string()))?;
        let symbols = SymbolTable::from_text(&r.str()?)?;
        let registry = FillerRegistry::parse(&r.str()?)?;
        let speakers = (0..r.u32()?).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let config_fp = r.str()?;
        let symbols_fp = r.str()?;
        let norm = NormStats {
            pitch_mean: r.f64()?,
            pitch_std: r.f64()?,
            energy_mean: r.f64()?,
            energy_std: r.f64()?,
        };
        let phase = match r.u8()? {
            0 => Phase::Pretrain,
            1 => Phase::Finetune,
            _ => return Err(r.error("invalid phase")),
        };
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.str()?;
            params.push((name, r.matrix_f64()?));
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config: OptimizerConfig = toml::from_str(&r.str()?).map_err(|e| r.error(&e.to_string()))?;
                let step = r.u64()?;
                let m = (0..n).map(|_| r.matrix_f64()).collect::<Result<Vec<_>>>()?;
                let v = (0..n).map(|_| r.matrix_f64()).collect::<Result<Vec<_>>>()?;
                Some(OptimizerState { config, step, m, v })
            }
            _ => return Err(r.error("invalid optimizer flag")),
        };
        let references = (0..r.u32()?)
            .map(|_| {
                Ok(ReferenceClip {
                    speaker: r.str()?,
                    utterance_id: r.str()?,
                    mel: r.matrix_f32()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes"));
        }
        let ckpt = Self {
            run,
            model_config,
            symbols,
            registry,
            speakers,
            norm,
            phase,
            step,
            params,
            optimizer,
            references,
        };
        if ckpt.config_fingerprint() != config_fp || ckpt.symbols_fingerprint() != symbols_fp {
            return Err(SpeechError::Fingerprint(path.to_path_buf()));
        }
        Ok(ckpt)
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| SpeechError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| SpeechError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| SpeechError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.raw(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.raw(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.raw(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.raw(s.as_bytes());
    }
    fn matrix_f64(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for &v in m.as_slice() {
            self.f64(v);
        }
    }
    fn matrix_f32(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for &v in m.as_slice() {
            self.raw(&(v as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn error(&self, message: &str) -> SpeechError {
        SpeechError::Format {
            path: self.path.to_path_buf(),
            message: format!("{message} (offset {})", self.pos),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.error("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.error("invalid UTF-8"))
    }
    fn dims(&mut self, width: usize) -> Result<(usize, usize)> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if rows.saturating_mul(cols).saturating_mul(width) > self.bytes.len() - self.pos {
            return Err(self.error("matrix exceeds file size"));
        }
        Ok((rows, cols))
    }
    fn matrix_f64(&mut self) -> Result<Matrix> {
        let (rows, cols) = self.dims(8)?;
        let data = self.take(rows * cols * 8)?;
        Ok(Matrix::from_vec(
            rows,
            cols,
            data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ))
    }
    fn matrix_f32(&mut self) -> Result<Matrix> {
        let (rows, cols) = self.dims(4)?;
        let data = self.take(rows * cols * 4)?;
        Ok(Matrix::from_vec(
            rows,
            cols,
            data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        ))
    }
}
