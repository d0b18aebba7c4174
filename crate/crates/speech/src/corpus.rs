//! Corpus files: the utterance manifest, per-utterance alignments and the
//! filler registry.
//!
//! A manifest is tab-separated with one utterance per line:
//!
//! ```text
//! utterance_id  speaker_id  audio_path  duration_s  transcript  phonemes
//! ```
//!
//! `phonemes` is space-separated. Blank lines and lines starting with `#`
//! are skipped, as is a header line whose first field is `utterance_id`.
//! Audio paths are relative to the manifest's directory.
//!
//! An alignment file has one `label frames` pair per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use comedic_core::frontend::FillerRegistry;
use comedic_core::stats::{Segment, UtteranceRecord};

use crate::error::{Result, SpeechError};

pub const MANIFEST_COLUMNS: usize = 6;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| SpeechError::io(path, e))
}

/// Parses manifest text; `path` is only used in error messages.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<UtteranceRecord>> {
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields[0] == "utterance_id" {
            continue;
        }
        let parse_err = |message: String| SpeechError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if fields.len() != MANIFEST_COLUMNS {
            return Err(parse_err(format!(
                "expected {MANIFEST_COLUMNS} tab-separated fields, found {}",
                fields.len()
            )));
        }
        let duration_s: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("invalid duration `{}`", fields[3])))?;
        let record = UtteranceRecord {
            utterance_id: fields[0].trim().to_string(),
            speaker_id: fields[1].trim().to_string(),
            audio_path: fields[2].trim().to_string(),
            transcript: fields[4].trim().to_string(),
            phonemes: fields[5].split_whitespace().map(str::to_string).collect(),
            duration_s,
        };
        if record.speaker_id.is_empty() {
            return Err(parse_err("empty speaker id".into()));
        }
        record.validate().map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(record.utterance_id.clone()) {
            return Err(SpeechError::DuplicateUtterance {
                path: path.to_path_buf(),
                line,
                id: record.utterance_id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    parse_manifest(&read(path)?, path)
}

pub fn manifest_to_text(records: &[UtteranceRecord]) -> String {
    let mut out = String::from("utterance_id\tspeaker_id\taudio_path\tduration_s\ttranscript\tphonemes\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.utterance_id,
            r.speaker_id,
            r.audio_path,
            r.duration_s,
            r.transcript,
            r.phonemes.join(" ")
        ));
    }
    out
}

pub fn parse_alignment(text: &str, path: &Path) -> Result<Vec<Segment>> {
    let mut segments = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| SpeechError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let mut parts = line.split_whitespace();
        let (Some(label), Some(frames), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err("expected `label frames`".into()));
        };
        let frames: usize = frames
            .parse()
            .map_err(|_| parse_err(format!("invalid frame count `{frames}`")))?;
        segments.push(Segment {
            label: label.to_string(),
            frames,
        });
    }
    if segments.is_empty() {
        return Err(SpeechError::Format {
            path: path.to_path_buf(),
            message: "alignment has no segments".into(),
        });
    }
    Ok(segments)
}

pub fn alignment_to_text(segments: &[Segment]) -> String {
    segments.iter().map(|s| format!("{} {}\n", s.label, s.frames)).collect()
}

/// Alignment file of an utterance inside `dir`.
pub fn alignment_path(dir: &Path, utterance_id: &str) -> PathBuf {
    dir.join(format!("{utterance_id}.txt"))
}

/// Loads the alignment of every record from `dir`.
pub fn load_alignments(dir: &Path, records: &[UtteranceRecord]) -> Result<BTreeMap<String, Vec<Segment>>> {
    let mut out = BTreeMap::new();
    for r in records {
        let path = alignment_path(dir, &r.utterance_id);
        if !path.exists() {
            return Err(comedic_core::Error::MissingAlignment(r.utterance_id.clone()).into());
        }
        out.insert(r.utterance_id.clone(), parse_alignment(&read(&path)?, &path)?);
    }
    Ok(out)
}

pub fn load_registry(path: &Path) -> Result<FillerRegistry> {
    FillerRegistry::parse(&read(path)?).map_err(|e| SpeechError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Speakers in sorted order; a speaker's index is its position.
pub fn speakers(records: &[UtteranceRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| r.speaker_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Every phoneme label used by the records, sorted.
pub fn phoneme_inventory<'a>(labels: impl IntoIterator<Item = &'a String>) -> Vec<String> {
    labels.into_iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "utterance_id\tspeaker_id\taudio_path\tduration_s\ttranscript\tphonemes\n\
        # comment\n\
        a1\tA\twav/a1.wav\t4.5\t你好\tn i3 h ao3\n\
        \n\
        b1\tB\twav/b1.wav\t3.2\t对\td ui4\n";

    #[test]
    fn parses_records() {
        let r = parse_manifest(GOOD, Path::new("m.tsv")).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].phonemes, ["n", "i3", "h", "ao3"]);
        assert_eq!(r[1].duration_s, 3.2);
        assert_eq!(speakers(&r), ["A", "B"]);
        let again = parse_manifest(&manifest_to_text(&r), Path::new("m.tsv")).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = "a1\tA\tx.wav\tfour\tt\tp\n";
        let err = parse_manifest(bad, Path::new("m.tsv")).unwrap_err();
        assert!(matches!(err, SpeechError::Parse { line: 1, .. }), "{err}");
        let short = "a1\tA\tx.wav\t4.0\tt\n";
        assert!(parse_manifest(short, Path::new("m.tsv")).is_err());
        let dup = "a1\tA\tx.wav\t4.0\tt\tp\na1\tB\ty.wav\t4.0\tt\tp\n";
        let err = parse_manifest(dup, Path::new("m.tsv")).unwrap_err();
        assert!(matches!(err, SpeechError::DuplicateUtterance { line: 2, .. }));
        let no_phonemes = "a1\tA\tx.wav\t4.0\tt\t \n";
        assert!(parse_manifest(no_phonemes, Path::new("m.tsv")).is_err());
    }

    #[test]
    fn alignment_round_trip() {
        let segs = parse_alignment("sp 3\nn 5\n\ni3 7\n", Path::new("a.txt")).unwrap();
        assert_eq!(segs.iter().map(|s| s.frames).sum::<usize>(), 15);
        assert_eq!(parse_alignment(&alignment_to_text(&segs), Path::new("a.txt")).unwrap(), segs);
        let err = parse_alignment("n 5\ni3 x\n", Path::new("a.txt")).unwrap_err();
        assert!(matches!(err, SpeechError::Parse { line: 2, .. }));
        assert!(parse_alignment("", Path::new("a.txt")).is_err());
    }
}
