//! From corpus files to training examples: feature extraction, filler
//! merging on alignments, normalization, phoneme-level averaging and the
//! train/validation/test split.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use comedic_core::frontend::{replace_fillers, FillerRegistry, SymbolTable, PAUSE};
use comedic_core::stats::{Segment, UtteranceAlignment, UtteranceRecord, ZNorm};
use comedic_core::train::TrainExample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, AudioConfig, FeatureExtractor, Features};
use crate::corpus;
use crate::error::{Result, SpeechError};

/// Frames a centered STFT may produce beyond the alignment total.
pub const MAX_EXTRA_FRAMES: usize = 3;

/// A manifest with its alignments and filler registry.
#[derive(Clone, Debug)]
pub struct Corpus {
    /// Directory that audio paths are relative to.
    pub root: PathBuf,
    pub records: Vec<UtteranceRecord>,
    pub alignments: BTreeMap<String, Vec<Segment>>,
    pub registry: FillerRegistry,
}

impl Corpus {
    /// Loads `manifest`, alignments from `alignments` (default: the
    /// `alignments/` directory next to the manifest) and the registry
    /// (default: `fillers.tsv` next to the manifest, if present).
    pub fn load(manifest: &Path, alignments: Option<&Path>, registry: Option<&Path>) -> Result<Self> {
        let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let records = corpus::load_manifest(manifest)?;
        let align_dir = alignments.map(Path::to_path_buf).unwrap_or_else(|| root.join("alignments"));
        let alignments = corpus::load_alignments(&align_dir, &records)?;
        let default_registry = root.join("fillers.tsv");
        let registry = match registry {
            Some(p) => corpus::load_registry(p)?,
            None if default_registry.exists() => corpus::load_registry(&default_registry)?,
            None => FillerRegistry::empty(),
        };
        let corpus = Self {
            root,
            records,
            alignments,
            registry,
        };
        corpus.check_alignments()?;
        Ok(corpus)
    }

    /// Alignment labels must spell the manifest phonemes, ignoring pauses.
    pub fn check_alignments(&self) -> Result<()> {
        for r in &self.records {
            let segs = self
                .alignments
                .get(&r.utterance_id)
                .ok_or_else(|| comedic_core::Error::MissingAlignment(r.utterance_id.clone()))?;
            let a: Vec<&str> = segs.iter().map(|s| s.label.as_str()).filter(|l| *l != PAUSE).collect();
            let m: Vec<&str> = r.phonemes.iter().map(String::as_str).filter(|l| *l != PAUSE).collect();
            if a != m {
                return Err(SpeechError::Invalid(format!(
                    "alignment of `{}` does not match its manifest phonemes",
                    r.utterance_id
                )));
            }
        }
        Ok(())
    }

    pub fn speakers(&self) -> Vec<String> {
        corpus::speakers(&self.records)
    }

    pub fn record(&self, utterance_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utterance_id == utterance_id)
    }

    pub fn audio_path(&self, record: &UtteranceRecord) -> PathBuf {
        self.root.join(&record.audio_path)
    }

    /// Base phonemes used anywhere in the corpus or its fillers.
    pub fn base_inventory(&self) -> Vec<String> {
        let mut set: BTreeSet<String> = self
            .alignments
            .values()
            .flatten()
            .map(|s| s.label.clone())
            .collect();
        for e in self.registry.entries() {
            set.extend(e.filler.iter().cloned());
        }
        set.remove(PAUSE);
        set.into_iter().collect()
    }

    /// Features of one utterance, trimmed to its alignment length.
    pub fn features(&self, extractor: &FeatureExtractor, record: &UtteranceRecord) -> Result<Features> {
        let path = self.audio_path(record);
        let (samples, sr) = read_wav(&path)?;
        let expected = extractor.config().sample_rate;
        if sr != expected {
            return Err(SpeechError::Audio {
                path,
                message: format!("sample rate {sr} Hz, expected {expected} Hz"),
            });
        }
        let features = extractor.extract(&samples);
        let total: usize = self.alignments[&record.utterance_id].iter().map(|s| s.frames).sum();
        let frames = features.frames();
        if frames < total || frames > total + MAX_EXTRA_FRAMES {
            return Err(SpeechError::Invalid(format!(
                "utterance `{}`: alignment covers {total} frames but the audio has {frames}",
                record.utterance_id
            )));
        }
        Ok(features.truncated(total))
    }
}

/// Corpus-level normalization of pitch (voiced frames, Hz) and energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            pitch_mean: 0.0,
            pitch_std: 1.0,
            energy_mean: 0.0,
            energy_std: 1.0,
        }
    }
}

impl NormStats {
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a Features> + Clone) -> Self {
        let pitch = ZNorm::fit(
            features
                .clone()
                .into_iter()
                .flat_map(|f| f.pitch.iter().zip(&f.voiced).filter(|(_, v)| **v).map(|(p, _)| p)),
        );
        let energy = ZNorm::fit(features.into_iter().flat_map(|f| f.energy.iter()));
        Self {
            pitch_mean: pitch.mean,
            pitch_std: pitch.std,
            energy_mean: energy.mean,
            energy_std: energy.std,
        }
    }

    /// Normalized frame tracks; unvoiced frames get pitch 0.
    pub fn apply(&self, f: &Features) -> (Vec<f64>, Vec<f64>) {
        let pitch = f
            .pitch
            .iter()
            .zip(&f.voiced)
            .map(|(&p, &v)| if v { (p - self.pitch_mean) / self.pitch_std } else { 0.0 })
            .collect();
        let energy = f.energy.iter().map(|&e| (e - self.energy_mean) / self.energy_std).collect();
        (pitch, energy)
    }

    /// Frame-level alignment for corpus statistics.
    pub fn alignment(&self, segments: &[Segment], f: &Features) -> UtteranceAlignment {
        let (pitch, energy) = self.apply(f);
        UtteranceAlignment {
            segments: segments.to_vec(),
            pitch,
            voiced: f.voiced.clone(),
            energy,
        }
    }
}

/// Replaces filler phoneme runs in an alignment by their special token; the
/// token covers the frames of the phonemes it replaces.
pub fn merge_filler_segments(segments: &[Segment], speaker: &str, registry: &FillerRegistry) -> Result<Vec<Segment>> {
    let labels: Vec<&str> = segments.iter().map(|s| s.label.as_str()).collect();
    let replaced = replace_fillers(&labels, speaker, registry)?;
    let mut out = Vec::with_capacity(replaced.len());
    let mut i = 0;
    for label in replaced {
        let span = registry.by_token(&label).map_or(1, |e| e.filler.len());
        let frames = segments[i..i + span].iter().map(|s| s.frames).sum();
        out.push(Segment { label, frames });
        i += span;
    }
    Ok(out)
}

/// Averages frame values over each segment. Pitch uses voiced frames only;
/// segments without any contribute 0.
pub fn phoneme_averages(segments: &[Segment], pitch: &[f64], voiced: &[bool], energy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut p_out = Vec::with_capacity(segments.len());
    let mut e_out = Vec::with_capacity(segments.len());
    let mut start = 0;
    for s in segments {
        let range = start..start + s.frames;
        let (mut ps, mut pn) = (0.0, 0usize);
        for t in range.clone() {
            if voiced[t] {
                ps += pitch[t];
                pn += 1;
            }
        }
        p_out.push(if pn > 0 { ps / pn as f64 } else { 0.0 });
        e_out.push(if s.frames > 0 { energy[range].iter().sum::<f64>() / s.frames as f64 } else { 0.0 });
        start += s.frames;
    }
    (p_out, e_out)
}

/// Builds the training example of one utterance.
pub fn build_example(
    record: &UtteranceRecord,
    segments: &[Segment],
    features: &Features,
    norm: &NormStats,
    table: &SymbolTable,
    registry: &FillerRegistry,
    speaker_index: usize,
) -> Result<TrainExample> {
    let merged = merge_filler_segments(segments, &record.speaker_id, registry)?;
    let (pitch_frames, energy_frames) = norm.apply(features);
    let (pitch, energy) = phoneme_averages(&merged, &pitch_frames, &features.voiced, &energy_frames);
    let labels: Vec<&str> = merged.iter().map(|s| s.label.as_str()).collect();
    Ok(TrainExample {
        utterance_id: record.utterance_id.clone(),
        ids: table.encode(&labels)?,
        speaker: speaker_index,
        mel: features.log_mel.clone(),
        durations: merged.iter().map(|s| s.frames).collect(),
        pitch,
        energy,
        reference: None,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    /// Per speaker, a seeded shuffle assigns `round(n·val)` clips to
    /// validation and `round(n·test)` to test; at least one clip per speaker
    /// always stays in training.
    pub fn new(records: &[UtteranceRecord], val_fraction: f64, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction)
            || !(0.0..1.0).contains(&test_fraction)
            || val_fraction + test_fraction >= 1.0
        {
            return Err(SpeechError::Invalid("split fractions must be in [0, 1) and sum below 1".into()));
        }
        let mut by_speaker: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for r in records {
            by_speaker.entry(&r.speaker_id).or_default().push(&r.utterance_id);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Splits::default();
        for ids in by_speaker.values_mut() {
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            let n = ids.len();
            let mut n_val = (n as f64 * val_fraction).round() as usize;
            let mut n_test = (n as f64 * test_fraction).round() as usize;
            while n_val + n_test >= n && n_val + n_test > 0 {
                if n_test >= n_val && n_test > 0 {
                    n_test -= 1;
                } else {
                    n_val -= 1;
                }
            }
            out.test.extend(ids[..n_test].iter().map(|s| s.to_string()));
            out.val.extend(ids[n_test..n_test + n_val].iter().map(|s| s.to_string()));
            out.train.extend(ids[n_test + n_val..].iter().map(|s| s.to_string()));
        }
        out.train.sort();
        out.val.sort();
        out.test.sort();
        Ok(out)
    }

    /// True when no utterance appears in two parts.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.train.iter().chain(&self.val).chain(&self.test).all(|id| seen.insert(id))
    }
}

/// Features of every record, keyed by utterance id.
pub fn extract_all(corpus: &Corpus, audio: &AudioConfig) -> Result<BTreeMap<String, Features>> {
    let extractor = FeatureExtractor::new(*audio);
    corpus
        .records
        .iter()
        .map(|r| Ok((r.utterance_id.clone(), corpus.features(&extractor, r)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use comedic_core::frontend::FillerEntry;

    fn seg(label: &str, frames: usize) -> Segment {
        Segment {
            label: label.into(),
            frames,
        }
    }

    fn record(id: &str, speaker: &str) -> UtteranceRecord {
        UtteranceRecord {
            utterance_id: id.into(),
            speaker_id: speaker.into(),
            audio_path: format!("{id}.wav"),
            transcript: "x".into(),
            phonemes: vec!["a".into()],
            duration_s: 4.0,
        }
    }

    #[test]
    fn fillers_merge_their_frames() {
        let reg = FillerRegistry::new(vec![FillerEntry {
            speaker: "B".into(),
            filler: vec!["n".into(), "i3".into()],
            token: "<spc1>".into(),
        }])
        .unwrap();
        let segs = [seg("sp", 2), seg("n", 3), seg("i3", 4), seg("h", 1)];
        let merged = merge_filler_segments(&segs, "B", &reg).unwrap();
        assert_eq!(merged, vec![seg("sp", 2), seg("<spc1>", 7), seg("h", 1)]);
        assert_eq!(merge_filler_segments(&segs, "A", &reg).unwrap(), segs.to_vec());
    }

    #[test]
    fn averages_respect_voicing() {
        let segs = [seg("a", 2), seg("b", 2), seg("c", 0)];
        let (p, e) = phoneme_averages(
            &segs,
            &[1.0, 3.0, 5.0, 7.0],
            &[true, false, false, false],
            &[1.0, 2.0, 3.0, 4.0],
        );
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        assert_eq!(e, vec![1.5, 3.5, 0.0]);
    }

    #[test]
    fn splits_are_disjoint_and_seeded() {
        let records: Vec<_> = (0..20)
            .map(|i| record(&format!("u{i:02}"), if i % 2 == 0 { "A" } else { "B" }))
            .collect();
        let s = Splits::new(&records, 0.1, 0.1, 3).unwrap();
        assert!(s.is_disjoint());
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 20);
        assert_eq!(s.val.len(), 2);
        assert_eq!(s, Splits::new(&records, 0.1, 0.1, 3).unwrap());
        let tiny = Splits::new(&records[..1], 0.4, 0.4, 1).unwrap();
        assert_eq!(tiny.train.len(), 1);
        assert!(Splits::new(&records, 0.6, 0.5, 1).is_err());
    }
}
