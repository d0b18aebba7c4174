//! Per-speaker corpus statistics as a table and a JSON report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use comedic_core::stats::{compute_statistics, validate_clip_lengths, ClipLengthWarning, StatsConfig};
use serde::{Deserialize, Serialize};

use crate::audio::AudioConfig;
use crate::dataset::{extract_all, Corpus, NormStats};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRow {
    pub speaker: String,
    pub clips: usize,
    pub total_duration_s: f64,
    pub words: usize,
    pub words_per_second: f64,
    pub avg_pause_ms: f64,
    /// False when the speaker has no pause above the floor, in which case
    /// `avg_pause_ms` is 0.
    pub has_pauses: bool,
    pub avg_energy: f64,
    pub avg_pitch: f64,
    /// Filler phonemes registered for the speaker.
    pub fillers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub speakers: Vec<SpeakerRow>,
    /// Utterances outside the usual clip length.
    pub warnings: Vec<String>,
}

fn warning_text(w: &ClipLengthWarning) -> String {
    format!("{}: {:.2} s", w.utterance_id, w.duration_s)
}

/// Extracts features, z-normalizes pitch and energy over the whole corpus
/// and summarizes each speaker.
pub fn corpus_report(corpus: &Corpus, audio: &AudioConfig, config: &StatsConfig) -> Result<StatsReport> {
    let features = extract_all(corpus, audio)?;
    let norm = NormStats::fit(features.values());
    let alignments: BTreeMap<_, _> = corpus
        .records
        .iter()
        .map(|r| {
            let id = &r.utterance_id;
            (id.clone(), norm.alignment(&corpus.alignments[id], &features[id]))
        })
        .collect();
    let stats = compute_statistics(&corpus.records, &alignments, config)?;
    let speakers = stats
        .into_iter()
        .map(|(speaker, s)| SpeakerRow {
            fillers: corpus.registry.for_speaker(&speaker).map(|e| e.filler.join(" ")).collect(),
            speaker,
            clips: s.clips,
            total_duration_s: s.total_duration_s,
            words: s.words,
            words_per_second: s.words_per_second(),
            avg_pause_ms: s.avg_pause_ms(),
            has_pauses: s.has_pauses(),
            avg_energy: s.avg_energy(),
            avg_pitch: s.avg_pitch(),
        })
        .collect();
    Ok(StatsReport {
        speakers,
        warnings: validate_clip_lengths(&corpus.records).iter().map(warning_text).collect(),
    })
}

pub fn format_table(report: &StatsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>6} {:>10} {:>7} {:>7} {:>10} {:>8} {:>8}  fillers",
        "speaker", "clips", "duration_s", "words", "wps", "pause_ms", "energy", "pitch"
    );
    for r in &report.speakers {
        let pause = if r.has_pauses { format!("{:.1}", r.avg_pause_ms) } else { "-".into() };
        let fillers = if r.fillers.is_empty() { "none".into() } else { r.fillers.join(", ") };
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>10.1} {:>7} {:>7.2} {:>10} {:>8.2} {:>8.2}  {}",
            r.speaker, r.clips, r.total_duration_s, r.words, r.words_per_second, pause, r.avg_energy, r.avg_pitch, fillers
        );
    }
    out
}
