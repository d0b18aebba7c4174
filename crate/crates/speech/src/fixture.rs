//! Synthetic corpora for tests and demos: harmonic tones per phoneme with
//! speaker-specific pitch, tempo, pauses and fillers, written in the same
//! layout as a real corpus (manifest, wavs, alignments, filler registry).

use std::fs;
use std::path::{Path, PathBuf};

use comedic_core::frontend::{FillerEntry, FillerRegistry, PAUSE};
use comedic_core::stats::{Segment, UtteranceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioConfig};
use crate::corpus::{alignment_path, alignment_to_text, manifest_to_text};
use crate::error::{Result, SpeechError};

/// A stand-up sentence ending in the filler "you know" of speaker B.
pub const CASE_SENTENCE: &str = "uo3 zh e1 n zh e4 ng k ai1 sh ii3 iou3 i4 d ia3 n z ii4 x i4 n i3 h ou4 sh ii4 \
     uo3 k ai1 sh ii3 sh uo1 t uo1 k ou3 x iou4 i3 h ou4 uo3 j ve2 d e5 uo3 zh a3 ng d e2 t i3 ng h ao3 d e5 \
     n i3 zh ii1 d ao4 b a5";
pub const CASE_TRANSCRIPT: &str = "我真正开始有一点自信以后，是我开始说脱口秀以后，我觉得我长得挺好的，你知道吧";
pub const FILLER_B: &str = "n i3 zh ii1 d ao4 b a5";
pub const FILLER_A: &str = "er2";

const CHARACTERS: &str = "我真正开始有一点自信以后是说脱口秀觉得长挺好的你知道吧";

pub fn case_phonemes() -> Vec<String> {
    CASE_SENTENCE.split_whitespace().map(str::to_string).collect()
}

/// Phonemes the fixture draws sentences from.
pub fn alphabet() -> Vec<String> {
    let mut labels = case_phonemes();
    labels.push(FILLER_A.to_string());
    labels.sort();
    labels.dedup();
    labels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStyle {
    pub id: String,
    pub pitch_hz: f64,
    /// Inclusive frame range of a phoneme.
    pub phoneme_frames: (usize, usize),
    pub pause_frames: (usize, usize),
    /// Chance of a pause after each phoneme.
    pub pause_rate: f64,
    /// `(token, phonemes)` inserted into about half of the clips.
    pub filler: Option<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub speakers: Vec<SpeakerStyle>,
    pub clips_per_speaker: usize,
    /// Inclusive phoneme-count range of a clip.
    pub phonemes_per_clip: (usize, usize),
    pub seed: u64,
    /// Makes the first clip of speaker B the case sentence.
    pub include_case_sentence: bool,
    pub audio: AudioConfig,
}

impl FixtureSpec {
    /// Four speakers with distinct tempo, pauses and fillers.
    pub fn comedians(clips_per_speaker: usize, seed: u64) -> Self {
        let style = |id: &str, pitch_hz, phoneme_frames, pause_frames, pause_rate, filler: Option<(&str, &str)>| SpeakerStyle {
            id: id.into(),
            pitch_hz,
            phoneme_frames,
            pause_frames,
            pause_rate,
            filler: filler.map(|(t, p)| (t.to_string(), p.to_string())),
        };
        Self {
            speakers: vec![
                style("A", 120.0, (3, 6), (8, 20), 0.06, Some(("<spc2>", FILLER_A))),
                style("B", 220.0, (3, 7), (8, 18), 0.06, Some(("<spc1>", FILLER_B))),
                style("C", 110.0, (6, 11), (30, 60), 0.08, None),
                style("D", 200.0, (4, 8), (6, 14), 0.05, None),
            ],
            clips_per_speaker,
            phonemes_per_clip: (14, 22),
            seed,
            include_case_sentence: false,
            audio: AudioConfig::default(),
        }
    }

    /// Two short utterances of one speaker.
    pub fn overfit() -> Self {
        Self {
            speakers: vec![SpeakerStyle {
                id: "B".into(),
                pitch_hz: 200.0,
                phoneme_frames: (6, 10),
                pause_frames: (8, 12),
                pause_rate: 0.1,
                filler: None,
            }],
            clips_per_speaker: 2,
            phonemes_per_clip: (10, 12),
            seed: 11,
            include_case_sentence: false,
            audio: AudioConfig::default(),
        }
    }

    pub fn registry(&self) -> Result<FillerRegistry> {
        let entries = self
            .speakers
            .iter()
            .filter_map(|s| {
                s.filler.as_ref().map(|(token, phonemes)| FillerEntry {
                    speaker: s.id.clone(),
                    filler: phonemes.split_whitespace().map(str::to_string).collect(),
                    token: token.clone(),
                })
            })
            .collect();
        Ok(FillerRegistry::new(entries)?)
    }
}

/// A generated clip before it is written out.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureClip {
    pub record: UtteranceRecord,
    pub segments: Vec<Segment>,
    pub samples: Vec<f64>,
}

/// Paths of a written fixture.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureCorpus {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub alignments: PathBuf,
    pub registry: PathBuf,
}

fn tone(label: &str) -> f64 {
    match label.chars().last() {
        Some('1') => 1.25,
        Some('2') => 1.1,
        Some('3') => 0.85,
        Some('4') => 1.15,
        _ => 1.0,
    }
}

/// Harmonic weights that give each phoneme its own spectral shape.
fn timbre(label: &str) -> [f64; 6] {
    let mut h: u32 = 2166136261;
    for b in label.bytes() {
        h = (h ^ b as u32).wrapping_mul(16777619);
    }
    let mut w = [0.0; 6];
    for (k, slot) in w.iter_mut().enumerate() {
        let bits = (h >> (k * 5)) & 31;
        *slot = (0.2 + bits as f64 / 31.0) / (k + 1) as f64;
    }
    w
}

fn render(segments: &[Segment], pitch_hz: f64, audio: &AudioConfig) -> Vec<f64> {
    let sr = audio.sample_rate as f64;
    let mut out = Vec::new();
    let mut phase = 0.0f64;
    for seg in segments {
        let n = seg.frames * audio.hop;
        if seg.label == PAUSE {
            out.extend(std::iter::repeat_n(0.0, n));
            continue;
        }
        let f0 = pitch_hz * tone(&seg.label);
        let w = timbre(&seg.label);
        let norm: f64 = w.iter().sum();
        let fade = (n / 8).max(1);
        for i in 0..n {
            phase += 2.0 * std::f64::consts::PI * f0 / sr;
            let env = (i.min(n - 1 - i) as f64 / fade as f64).min(1.0);
            let v: f64 = w
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * phase).sin())
                .sum();
            out.push(0.4 * env.max(0.2) * v / norm);
        }
    }
    out
}

fn words(phonemes: &[String], rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = CHARACTERS.chars().collect();
    let syllables = phonemes
        .iter()
        .filter(|p| p.ends_with(|c: char| c.is_ascii_digit()))
        .count()
        .max(1);
    (0..syllables).map(|_| chars[rng.random_range(0..chars.len())]).collect()
}

/// Generates every clip of `spec` deterministically.
pub fn generate(spec: &FixtureSpec) -> Result<Vec<FixtureClip>> {
    spec.registry()?;
    let alphabet = alphabet();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clips = Vec::new();
    for style in &spec.speakers {
        for i in 0..spec.clips_per_speaker {
            let case = spec.include_case_sentence && style.id == "B" && i == 0;
            let (phonemes, transcript) = if case {
                (case_phonemes(), CASE_TRANSCRIPT.to_string())
            } else {
                let (lo, hi) = spec.phonemes_per_clip;
                let n = rng.random_range(lo..=hi.max(lo));
                let mut p: Vec<String> = (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())].clone()).collect();
                if let Some((_, filler)) = &style.filler {
                    if rng.random_bool(0.5) {
                        let at = rng.random_range(0..=p.len());
                        let f: Vec<String> = filler.split_whitespace().map(str::to_string).collect();
                        p.splice(at..at, f);
                    }
                }
                let t = words(&p, &mut rng);
                (p, t)
            };
            let mut segments = vec![Segment {
                label: PAUSE.into(),
                frames: rng.random_range(style.pause_frames.0..=style.pause_frames.1) / 2 + 1,
            }];
            for (k, label) in phonemes.iter().enumerate() {
                let (lo, hi) = style.phoneme_frames;
                segments.push(Segment {
                    label: label.clone(),
                    frames: rng.random_range(lo..=hi),
                });
                if k + 1 < phonemes.len() && rng.random_bool(style.pause_rate) {
                    let (lo, hi) = style.pause_frames;
                    segments.push(Segment {
                        label: PAUSE.into(),
                        frames: rng.random_range(lo..=hi),
                    });
                }
            }
            let samples = render(&segments, style.pitch_hz, &spec.audio);
            let id = format!("{}_{:03}", style.id, i);
            let labels: Vec<String> = segments.iter().map(|s| s.label.clone()).collect();
            clips.push(FixtureClip {
                record: UtteranceRecord {
                    utterance_id: id.clone(),
                    speaker_id: style.id.clone(),
                    audio_path: format!("wavs/{id}.wav"),
                    transcript,
                    phonemes: labels,
                    duration_s: samples.len() as f64 / spec.audio.sample_rate as f64,
                },
                segments,
                samples,
            });
        }
    }
    Ok(clips)
}

/// Writes the fixture of `spec` under `root`.
pub fn write_fixture(spec: &FixtureSpec, root: &Path) -> Result<FixtureCorpus> {
    let clips = generate(spec)?;
    let wavs = root.join("wavs");
    let alignments = root.join("alignments");
    for dir in [&wavs, &alignments] {
        fs::create_dir_all(dir).map_err(|e| SpeechError::io(dir, e))?;
    }
    for c in &clips {
        write_wav(&root.join(&c.record.audio_path), &c.samples, spec.audio.sample_rate)?;
        let path = alignment_path(&alignments, &c.record.utterance_id);
        fs::write(&path, alignment_to_text(&c.segments)).map_err(|e| SpeechError::io(&path, e))?;
    }
    let records: Vec<UtteranceRecord> = clips.into_iter().map(|c| c.record).collect();
    let manifest = root.join("manifest.tsv");
    fs::write(&manifest, manifest_to_text(&records)).map_err(|e| SpeechError::io(&manifest, e))?;
    let registry = root.join("fillers.tsv");
    let text = format!("# speaker\ttoken\tphonemes\n{}", spec.registry()?.to_text());
    fs::write(&registry, text).map_err(|e| SpeechError::io(&registry, e))?;
    Ok(FixtureCorpus {
        root: root.to_path_buf(),
        manifest,
        alignments,
        registry,
    })
}
