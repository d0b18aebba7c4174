//! Utterance records, clip-length checks and per-speaker corpus statistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frontend::PAUSE;

/// Clips are cut to roughly this range of seconds.
pub const CLIP_RANGE_S: (f64, f64) = (3.0, 8.0);

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub audio_path: String,
    pub transcript: String,
    pub phonemes: Vec<String>,
    pub duration_s: f64,
}

impl UtteranceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.utterance_id.is_empty() {
            return Err(Error::InvalidInput("empty utterance id".into()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "utterance `{}`: duration must be positive, got {}",
                self.utterance_id, self.duration_s
            )));
        }
        if self.phonemes.is_empty() {
            return Err(Error::InvalidInput(format!(
                "utterance `{}`: no phonemes",
                self.utterance_id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipLengthWarning {
    pub utterance_id: String,
    pub duration_s: f64,
}

/// One warning per record whose duration lies outside [`CLIP_RANGE_S`].
pub fn validate_clip_lengths(records: &[UtteranceRecord]) -> Vec<ClipLengthWarning> {
    records
        .iter()
        .filter(|r| r.duration_s < CLIP_RANGE_S.0 || r.duration_s > CLIP_RANGE_S.1)
        .map(|r| ClipLengthWarning {
            utterance_id: r.utterance_id.clone(),
            duration_s: r.duration_s,
        })
        .collect()
}

/// Words in a Mandarin transcript: characters that are neither whitespace
/// nor punctuation.
pub fn word_count(transcript: &str) -> usize {
    transcript.chars().filter(|c| c.is_alphanumeric()).count()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub label: String,
    pub frames: usize,
}

/// Forced alignment plus frame-level prosody tracks of one utterance.
/// `pitch` and `energy` are already z-normalized over the corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UtteranceAlignment {
    pub segments: Vec<Segment>,
    pub pitch: Vec<f64>,
    pub voiced: Vec<bool>,
    pub energy: Vec<f64>,
}

impl UtteranceAlignment {
    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.frames).sum()
    }

    /// Per-frame flag: false inside pause segments.
    pub fn speech_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.total_frames());
        for s in &self.segments {
            mask.extend(core::iter::repeat(s.label != PAUSE).take(s.frames));
        }
        mask
    }
}

/// Which frames enter an average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameSelection {
    All,
    /// Frames with a detected pitch.
    Voiced,
    /// Frames outside pause segments.
    Speech,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsConfig {
    pub frame_ms: f64,
    /// Pause segments shorter than this are ignored.
    pub pause_floor_ms: f64,
    pub pitch_frames: FrameSelection,
    pub energy_frames: FrameSelection,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            frame_ms: 256.0 / 22050.0 * 1000.0,
            pause_floor_ms: 50.0,
            pitch_frames: FrameSelection::Voiced,
            energy_frames: FrameSelection::Speech,
        }
    }
}

/// Per-speaker corpus summary. Averages are kept as sums and counts so
/// that statistics of disjoint corpora merge exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpeakerStatistics {
    pub clips: usize,
    pub total_duration_s: f64,
    pub words: usize,
    pub pause_count: usize,
    pub pause_total_ms: f64,
    pub energy_sum: f64,
    pub energy_frames: usize,
    pub pitch_sum: f64,
    pub pitch_frames: usize,
}

impl SpeakerStatistics {
    pub fn words_per_second(&self) -> f64 {
        if self.total_duration_s > 0.0 {
            self.words as f64 / self.total_duration_s
        } else {
            0.0
        }
    }

    pub fn has_pauses(&self) -> bool {
        self.pause_count > 0
    }

    /// Mean pause length, or 0 when there are no pauses (see
    /// [`has_pauses`](Self::has_pauses)).
    pub fn avg_pause_ms(&self) -> f64 {
        if self.pause_count == 0 {
            0.0
        } else {
            self.pause_total_ms / self.pause_count as f64
        }
    }

    pub fn avg_energy(&self) -> f64 {
        mean_or_zero(self.energy_sum, self.energy_frames)
    }

    pub fn avg_pitch(&self) -> f64 {
        mean_or_zero(self.pitch_sum, self.pitch_frames)
    }

    pub fn merge(&self, other: &SpeakerStatistics) -> SpeakerStatistics {
        SpeakerStatistics {
            clips: self.clips + other.clips,
            total_duration_s: self.total_duration_s + other.total_duration_s,
            words: self.words + other.words,
            pause_count: self.pause_count + other.pause_count,
            pause_total_ms: self.pause_total_ms + other.pause_total_ms,
            energy_sum: self.energy_sum + other.energy_sum,
            energy_frames: self.energy_frames + other.energy_frames,
            pitch_sum: self.pitch_sum + other.pitch_sum,
            pitch_frames: self.pitch_frames + other.pitch_frames,
        }
    }
}

fn mean_or_zero(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn selected(sel: FrameSelection, voiced: Option<&bool>, speech: bool) -> bool {
    match sel {
        FrameSelection::All => true,
        FrameSelection::Voiced => voiced.copied().unwrap_or(false),
        FrameSelection::Speech => speech,
    }
}

/// Statistics for one utterance.
pub fn utterance_statistics(
    record: &UtteranceRecord,
    alignment: &UtteranceAlignment,
    config: &StatsConfig,
) -> SpeakerStatistics {
    let mut s = SpeakerStatistics {
        clips: 1,
        total_duration_s: record.duration_s,
        words: word_count(&record.transcript),
        ..SpeakerStatistics::default()
    };
    for seg in alignment.segments.iter().filter(|g| g.label == PAUSE) {
        let ms = seg.frames as f64 * config.frame_ms;
        if ms >= config.pause_floor_ms {
            s.pause_count += 1;
            s.pause_total_ms += ms;
        }
    }
    let speech = alignment.speech_mask();
    for (t, &is_speech) in speech.iter().enumerate() {
        let voiced = alignment.voiced.get(t);
        if let Some(&e) = alignment.energy.get(t) {
            if selected(config.energy_frames, voiced, is_speech) {
                s.energy_sum += e;
                s.energy_frames += 1;
            }
        }
        if let Some(&p) = alignment.pitch.get(t) {
            if selected(config.pitch_frames, voiced, is_speech) {
                s.pitch_sum += p;
                s.pitch_frames += 1;
            }
        }
    }
    s
}

/// Per-speaker statistics. Every record needs an alignment keyed by its
/// utterance id.
pub fn compute_statistics(
    records: &[UtteranceRecord],
    alignments: &BTreeMap<String, UtteranceAlignment>,
    config: &StatsConfig,
) -> Result<BTreeMap<String, SpeakerStatistics>> {
    let mut out: BTreeMap<String, SpeakerStatistics> = BTreeMap::new();
    for r in records {
        let a = alignments
            .get(&r.utterance_id)
            .ok_or_else(|| Error::MissingAlignment(r.utterance_id.clone()))?;
        let u = utterance_statistics(r, a, config);
        let slot = out.entry(r.speaker_id.clone()).or_default();
        *slot = slot.merge(&u);
    }
    Ok(out)
}

/// Mean and standard deviation used to z-normalize a feature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZNorm {
    pub mean: f64,
    pub std: f64,
}

impl ZNorm {
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for &v in values {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = sum / n as f64;
        let var = libm::fmax(sq / n as f64 - mean * mean, 0.0);
        let std = libm::sqrt(var);
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}
