//! Phonemes in, mel (and optionally a waveform) out, with the duration
//! trace of every synthesized phoneme.

use std::fs;
use std::path::{Path, PathBuf};

use comedic_core::frontend::{expand_special_tokens, replace_fillers};
use comedic_core::model::AcousticModel;
use comedic_core::trace::DurationTrace;
use comedic_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, GriffinLim};
use crate::checkpoint::Checkpoint;
use crate::error::{Result, SpeechError};
use crate::melfile::{mel_to_text, write_mel};

/// How the prosody reference is chosen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceChoice {
    /// A clip of the checkpoint's reference pool.
    Clip(String),
    /// Uniform over the speaker's pool clips.
    Seeded(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisRequest {
    /// Labels, special tokens allowed.
    pub phonemes: Vec<String>,
    pub speaker: String,
    pub reference: ReferenceChoice,
    /// Row title of the trace; defaults to the speaker.
    pub name: Option<String>,
}

impl SynthesisRequest {
    pub fn new(phonemes: &[&str], speaker: &str, reference: ReferenceChoice) -> Self {
        Self {
            phonemes: phonemes.iter().map(|s| s.to_string()).collect(),
            speaker: speaker.into(),
            reference,
            name: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    /// Labels fed to the model after filler replacement.
    pub labels: Vec<String>,
    pub mel: Matrix,
    pub trace: DurationTrace,
    /// Pool clip used as prosody reference, if the model takes one.
    pub reference: Option<String>,
}

/// Reads phonemes from a file if `arg` names one, else splits it.
pub fn parse_phonemes(arg: &str) -> Result<Vec<String>> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        fs::read_to_string(path).map_err(|e| SpeechError::io(path, e))?
    } else {
        arg.to_string()
    };
    let labels: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if labels.is_empty() {
        return Err(SpeechError::Invalid("no phonemes given".into()));
    }
    Ok(labels)
}

fn pick_reference<'a>(ckpt: &'a Checkpoint, req: &SynthesisRequest) -> Result<&'a crate::checkpoint::ReferenceClip> {
    match &req.reference {
        ReferenceChoice::Clip(id) => ckpt
            .references
            .iter()
            .find(|r| r.utterance_id == *id)
            .ok_or_else(|| SpeechError::Invalid(format!("clip `{id}` is not in the checkpoint's reference pool"))),
        ReferenceChoice::Seeded(seed) => {
            let pool = ckpt.references_for(&req.speaker);
            if pool.is_empty() {
                return Err(SpeechError::Invalid(format!("no reference clips for speaker `{}`", req.speaker)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok(pool[rng.random_range(0..pool.len())])
        }
    }
}

/// Runs `model` (built from `ckpt`) on a request.
pub fn synthesize(ckpt: &Checkpoint, model: &AcousticModel, req: &SynthesisRequest) -> Result<Synthesis> {
    let speaker = ckpt
        .speaker_index(&req.speaker)
        .ok_or_else(|| SpeechError::Invalid(format!("unknown speaker `{}`", req.speaker)))?;
    let plain = expand_special_tokens(&req.phonemes, &ckpt.registry)?;
    let labels = replace_fillers(&plain, &req.speaker, &ckpt.registry)?;
    let ids = ckpt.symbols.encode(&labels)?;
    let reference = if model.prosody_encoder().is_some() {
        Some(pick_reference(ckpt, req)?)
    } else {
        None
    };
    let out = model.infer(&ids, speaker, reference.map(|r| &r.mel))?;
    let name = req.name.clone().unwrap_or_else(|| req.speaker.clone());
    let trace = DurationTrace::from_durations(&name, &labels, &out.frame_durations)?;
    debug_assert_eq!(trace.total_frames(), out.mel.rows());
    Ok(Synthesis {
        labels,
        mel: out.mel,
        trace,
        reference: reference.map(|r| r.utterance_id.clone()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputFiles {
    pub mel: PathBuf,
    pub mel_text: Option<PathBuf>,
    pub trace: PathBuf,
    pub wav: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputOptions {
    pub text_export: bool,
    /// Griffin-Lim iterations; `None` skips the waveform.
    pub griffin_lim: Option<usize>,
    /// Seeds the initial phases of Griffin-Lim.
    pub seed: u64,
}

/// Writes `<stem>.mel`, `<stem>.trace.json` and optionally
/// `<stem>.mel.txt` and `<stem>.wav` into `dir`.
pub fn write_outputs(ckpt: &Checkpoint, syn: &Synthesis, dir: &Path, stem: &str, opts: &OutputOptions) -> Result<OutputFiles> {
    fs::create_dir_all(dir).map_err(|e| SpeechError::io(dir, e))?;
    let mel = dir.join(format!("{stem}.mel"));
    write_mel(&mel, &syn.mel)?;
    let mel_text = if opts.text_export {
        let p = dir.join(format!("{stem}.mel.txt"));
        fs::write(&p, mel_to_text(&syn.mel)).map_err(|e| SpeechError::io(&p, e))?;
        Some(p)
    } else {
        None
    };
    let trace = dir.join(format!("{stem}.trace.json"));
    write_trace(&trace, &syn.trace)?;
    let wav = match opts.griffin_lim {
        Some(iterations) => {
            let gl = GriffinLim::new(ckpt.run.audio, iterations)?;
            let samples = gl.reconstruct(&syn.mel, opts.seed);
            let p = dir.join(format!("{stem}.wav"));
            write_wav(&p, &samples, ckpt.run.audio.sample_rate)?;
            Some(p)
        }
        None => None,
    };
    Ok(OutputFiles { mel, mel_text, trace, wav })
}

pub fn write_trace(path: &Path, trace: &DurationTrace) -> Result<()> {
    let json = serde_json::to_string_pretty(trace).expect("traces serialize");
    fs::write(path, json + "\n").map_err(|e| SpeechError::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<DurationTrace> {
    let text = fs::read_to_string(path).map_err(|e| SpeechError::io(path, e))?;
    let trace: DurationTrace = serde_json::from_str(&text).map_err(|e| SpeechError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    trace.validate()?;
    Ok(trace)
}
