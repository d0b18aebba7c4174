use super::*;
use alloc::vec;

fn tiny_model(ablation: Ablation) -> AcousticModel {
    AcousticModel::new(ModelConfig::tiny(10).with_ablation(ablation), 7).unwrap()
}

fn reference(seed: u64, frames: usize) -> Matrix {
    Initializer::new(seed).normal(frames, 6, 1.0)
}

/// Naive repetition loop.
fn regulate_oracle(h: &Matrix, d: &[i64]) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..h.rows() {
        let mut k = 0;
        while k < d[i] {
            rows.push(h.row(i).to_vec());
            k += 1;
        }
    }
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    if refs.is_empty() {
        Matrix::zeros(0, h.cols())
    } else {
        Matrix::from_rows(&refs)
    }
}

#[test]
fn length_regulation_matches_loop() {
    let h = Initializer::new(3).normal(5, 4, 1.0);
    for d in [vec![1, 2, 0, 3, 1], vec![0, 0, 0, 0, 1], vec![4, 1, 1, 1, 2]] {
        let out = length_regulate(&h, &d).unwrap();
        assert_eq!(out, regulate_oracle(&h, &d));
        assert_eq!(out.rows() as i64, d.iter().sum::<i64>());
    }
    assert!(matches!(length_regulate(&h, &[1, -1, 0, 0, 0]), Err(Error::InvalidInput(_))));
    assert!(length_regulate(&h, &[1, 1]).is_err());
}

#[test]
fn inference_rounding_floors_at_one_frame() {
    assert_eq!(round_durations(&[-0.3, 0.49, 0.5, 2.5, 1.2, 0.0]), vec![1, 1, 1, 3, 1, 1]);
}

#[test]
fn inference_shapes_and_determinism() {
    let m = tiny_model(Ablation::Full);
    let r = reference(1, 70);
    let a = m.infer(&[1, 2, 3, 4, 5], 0, Some(&r)).unwrap();
    assert_eq!(a.duration_pred.len(), 5);
    assert_eq!(a.frame_durations.len(), 5);
    assert_eq!(a.mel.shape(), (a.frame_durations.iter().sum(), 6));
    assert!(a.mel.is_finite());
    assert_eq!(a.prosody.as_ref().unwrap().len(), 8);
    let b = tiny_model(Ablation::Full).infer(&[1, 2, 3, 4, 5], 0, Some(&r)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_reference_or_bad_ids_are_errors() {
    let m = tiny_model(Ablation::Full);
    assert!(m.infer(&[1, 2], 0, None).is_err());
    assert!(m.infer(&[1, 99], 0, Some(&reference(1, 64))).is_err());
    assert!(m.infer(&[], 0, Some(&reference(1, 64))).is_err());
}

#[test]
fn reference_changes_predictions() {
    let m = tiny_model(Ablation::Full);
    let a = m.infer(&[1, 2, 3], 0, Some(&reference(1, 64))).unwrap();
    let b = m.infer(&[1, 2, 3], 0, Some(&reference(2, 64).map(|v| 3.0 * v))).unwrap();
    assert_ne!(a.prosody, b.prosody);
    assert_ne!(a.duration_pred, b.duration_pred);
}

#[test]
fn teacher_forced_durations_set_frame_count() {
    let m = tiny_model(Ablation::Full);
    let r = reference(4, 64);
    let input = ForwardInput {
        reference: Some(&r),
        targets: Some(VarianceTargets {
            durations: &[1, 2, 1],
            pitch: &[0.1, -0.5, 0.3],
            energy: &[0.0, 1.0, -1.0],
        }),
        ..ForwardInput::new(&[3, 4, 5])
    };
    let mut g = Graph::new(m.params());
    let out = m.forward(&mut g, &input, Mode::Train).unwrap();
    assert_eq!(g.shape(out.mel), (4, 6));
    let mut g = Graph::new(m.params());
    let no_targets = ForwardInput { targets: None, ..input };
    assert!(m.forward(&mut g, &no_targets, Mode::Train).is_err());
}

#[test]
fn padding_does_not_change_outputs() {
    let m = tiny_model(Ablation::Full);
    let r = reference(5, 64);
    let targets = VarianceTargets {
        durations: &[2, 1, 3],
        pitch: &[0.2, 0.0, -0.7],
        energy: &[0.5, -0.2, 0.1],
    };
    let run = |ids: &[usize], padding: usize| {
        let mut g = Graph::new(m.params());
        let input = ForwardInput {
            padding,
            reference: Some(&r),
            targets: Some(targets),
            ..ForwardInput::new(ids)
        };
        let out = m.forward(&mut g, &input, Mode::Train).unwrap();
        (g.value(out.mel).clone(), g.value(out.duration).slice_rows(0, 3))
    };
    let (mel, dur) = run(&[1, 2, 3], 0);
    let (mel_p, dur_p) = run(&[1, 2, 3, 0, 0], 2);
    assert!(mel.max_abs_diff(&mel_p) < 1e-10);
    assert!(dur.max_abs_diff(&dur_p) < 1e-10);
}

#[test]
fn cln_placement_follows_ablation() {
    let full = tiny_model(Ablation::Full);
    let names: Vec<&str> = full.params().names().collect();
    assert!(names.contains(&"encoder.block0.norm1.cln.w_gamma"));
    assert!(names.contains(&"decoder.block1.norm2.cln.w_beta"));
    assert!(names.contains(&"variance.duration.norm1.cln.w_gamma"));
    assert!(names.contains(&"variance.pitch.norm1.ln.gamma"));
    assert!(full.duration_predictor().is_conditional());
    assert!(!full.pitch_predictor().is_conditional());

    let no_dur = tiny_model(Ablation::NoDurationCln);
    assert!(!no_dur.duration_predictor().is_conditional());
    assert!(no_dur.params().get("variance.duration.norm1.cln.w_gamma").is_none());
    let pe = tiny_model(Ablation::PitchEnergyCln);
    assert!(pe.pitch_predictor().is_conditional());
    assert!(pe.energy_predictor().is_conditional());
}

#[test]
fn unconditioned_duration_predictor_ignores_prosody() {
    // Same phoneme states, different `E`: only conditioned predictors react.
    let hidden = Initializer::new(8).normal(4, 8, 1.0);
    for (ablation, should_change) in [(Ablation::NoDurationCln, false), (Ablation::Full, true)] {
        let m = tiny_model(ablation);
        let preds: Vec<Matrix> = [1u64, 2]
            .iter()
            .map(|&seed| {
                let mut g = Graph::new(m.params());
                let c = m.conditioning(&mut g, Some(&reference(seed, 64).map(|v| v * seed as f64)), 0).unwrap();
                let h = g.constant(hidden.clone());
                let d = m.predict_duration(&mut g, h, &c, 4);
                g.value(d).clone()
            })
            .collect();
        assert_eq!(preds[0] != preds[1], should_change, "{ablation:?}");
    }
}

#[test]
fn calibration_gives_unit_scale_for_silence() {
    let m = tiny_model(Ablation::Full);
    let silent = Matrix::zeros(64, 6);
    let e = m.condition_vector(Some(&silent), 0).unwrap();
    for a in m.cln_adapters() {
        let (gamma, _) =
            crate::conditioning::cln_params(&e, m.params().value(a.w_gamma), m.params().value(a.w_beta)).unwrap();
        assert!(gamma.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }
}

#[test]
fn speaker_baseline_has_no_prosody() {
    let cfg = ModelConfig::tiny(10).speaker_embedding_baseline(3);
    let m = AcousticModel::new(cfg, 1).unwrap();
    assert!(m.prosody_encoder().is_none());
    assert!(m.cln_adapters().is_empty());
    let a = m.infer(&[1, 2], 0, None).unwrap();
    let b = m.infer(&[1, 2], 2, None).unwrap();
    assert_ne!(a.duration_pred, b.duration_pred);
    assert!(m.infer(&[1, 2], 3, None).is_err());
}

#[test]
fn growing_symbols_keeps_existing_rows() {
    let mut m = tiny_model(Ablation::Full);
    let before = m.params().value(m.embedding_param()).clone();
    m.grow_symbols(13, 99).unwrap();
    let after = m.params().value(m.embedding_param());
    assert_eq!(after.shape(), (13, 8));
    assert_eq!(&after.as_slice()[..before.len()], before.as_slice());
    assert!(m.infer(&[12, 1], 0, Some(&reference(1, 64))).is_ok());
    assert!(m.grow_symbols(5, 1).is_err());
}

#[test]
fn load_params_checks_names_and_shapes() {
    let a = tiny_model(Ablation::Full);
    let mut b = AcousticModel::new(ModelConfig::tiny(10), 123).unwrap();
    b.load_params(a.params().iter().map(|(_, n, v)| (n, v))).unwrap();
    let r = reference(3, 64);
    assert_eq!(a.infer(&[1, 2], 0, Some(&r)).unwrap(), b.infer(&[1, 2], 0, Some(&r)).unwrap());
    let wrong = Matrix::zeros(1, 1);
    let partial = [("encoder.embedding", &wrong)];
    assert!(b.load_params(partial).is_err());
}
