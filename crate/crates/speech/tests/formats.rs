use std::path::Path;

use comedic_core::stats::{Segment, UtteranceRecord};
use comedic_core::Matrix;
use comedic_speech::audio::{mel_filterbank, AudioConfig, Stft};
use comedic_speech::corpus::{alignment_to_text, manifest_to_text, parse_alignment, parse_manifest};
use comedic_speech::dataset::Splits;
use comedic_speech::melfile::{decode_mel, encode_mel};
use comedic_speech::training::{batch_indices, pad_reference};
use proptest::prelude::*;

fn label() -> impl Strategy<Value = String> {
    "[a-z]{1,3}[1-5]?"
}

fn record() -> impl Strategy<Value = UtteranceRecord> {
    (
        "[a-z][a-z0-9_]{0,8}",
        "[A-D]",
        prop::collection::vec(label(), 1..10),
        "[一二三四五六七]{1,12}",
        1u32..100_000,
    )
        .prop_map(|(id, speaker, phonemes, transcript, centis)| UtteranceRecord {
            audio_path: format!("wavs/{id}.wav"),
            utterance_id: id,
            speaker_id: speaker,
            transcript,
            phonemes,
            duration_s: centis as f64 / 1000.0,
        })
}

proptest! {
    #[test]
    fn manifests_round_trip(records in prop::collection::btree_map("[a-z]{1,6}", record(), 1..8)) {
        let records: Vec<UtteranceRecord> = records
            .into_iter()
            .map(|(id, r)| UtteranceRecord { utterance_id: id, ..r })
            .collect();
        let parsed = parse_manifest(&manifest_to_text(&records), Path::new("m.tsv")).unwrap();
        prop_assert_eq!(parsed, records);
    }

    #[test]
    fn alignments_round_trip(segs in prop::collection::vec((label(), 0usize..200), 1..30)) {
        let segments: Vec<Segment> = segs.into_iter().map(|(label, frames)| Segment { label, frames }).collect();
        let parsed = parse_alignment(&alignment_to_text(&segments), Path::new("a.txt")).unwrap();
        prop_assert_eq!(parsed, segments);
    }

    #[test]
    fn mel_files_keep_f32_values(rows in 0usize..20, cols in 1usize..12, seed in any::<u64>()) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|i| ((seed.wrapping_add(i as u64) % 10_000) as f32 / 97.0 - 50.0) as f64)
            .collect();
        let mel = Matrix::from_vec(rows, cols, data);
        let back = decode_mel(&encode_mel(&mel), Path::new("x.mel")).unwrap();
        prop_assert_eq!(back, mel);
    }

    #[test]
    fn batches_walk_seeded_permutations(n in 1usize..30, bs in 1usize..8, seed in any::<u64>()) {
        let epochs = 3;
        let steps = (epochs * n).div_ceil(bs) as u64;
        let order: Vec<usize> = (0..steps).flat_map(|s| batch_indices(n, bs, seed, s)).collect();
        for epoch in order.chunks(n).take(epochs) {
            let mut e = epoch.to_vec();
            e.sort();
            prop_assert_eq!(e, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn splits_partition_each_speaker(
        records in prop::collection::vec(record(), 1..40),
        val in 0.0f64..0.5,
        test in 0.0f64..0.45,
        seed in any::<u64>(),
    ) {
        let records: Vec<UtteranceRecord> = records
            .into_iter()
            .enumerate()
            .map(|(i, r)| UtteranceRecord { utterance_id: format!("u{i}"), ..r })
            .collect();
        let s = Splits::new(&records, val, test, seed).unwrap();
        prop_assert!(s.is_disjoint());
        prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), records.len());
        for speaker in ["A", "B", "C", "D"] {
            let has = records.iter().any(|r| r.speaker_id == speaker);
            let trains = s.train.iter().any(|id| records.iter().any(|r| &r.utterance_id == id && r.speaker_id == speaker));
            prop_assert_eq!(has, trains);
        }
        prop_assert_eq!(Splits::new(&records, val, test, seed).unwrap(), s);
    }

    #[test]
    fn padding_keeps_the_clip_and_adds_silence(rows in 1usize..80, min in 1usize..100) {
        let mel = Matrix::filled(rows, 3, 0.5);
        let p = pad_reference(&mel, min, -11.5);
        prop_assert_eq!(p.rows(), rows.max(min));
        prop_assert_eq!(p.slice_rows(0, rows), mel);
        prop_assert!(p.as_slice()[rows * 3..].iter().all(|&v| v == -11.5));
    }
}

#[test]
fn stft_inverts_itself() {
    let cfg = AudioConfig::default();
    let stft = Stft::new(cfg);
    let signal: Vec<f64> = (0..6000)
        .map(|i| (i as f64 * 0.031).sin() * 0.5 + (i as f64 * 0.17).cos() * 0.2)
        .collect();
    let back = stft.synthesize(&stft.analyze(&signal), signal.len());
    let worst = signal.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn filterbank_covers_the_speech_band() {
    let cfg = AudioConfig::default();
    // Stored frequency × band; checked band by band.
    let fb = mel_filterbank(&cfg).transpose();
    assert_eq!(fb.shape(), (cfg.mel_bins, cfg.n_fft / 2 + 1));
    assert!(fb.as_slice().iter().all(|&w| w >= 0.0));
    for band in 0..fb.rows() {
        assert!(fb.row(band).iter().any(|&w| w > 0.0), "band {band} is empty");
    }
    // Nothing above 8 kHz.
    let top = (8000.0 / (cfg.sample_rate as f64 / cfg.n_fft as f64)).ceil() as usize + 1;
    for band in 0..fb.rows() {
        assert!(fb.row(band)[top..].iter().all(|&w| w == 0.0));
    }
}
