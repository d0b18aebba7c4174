use comedic_core::gradcheck::{check_param, model_gradient_suite, relative_error, sample_entries};
use comedic_core::model::{Ablation, AcousticModel, ModelConfig};
use comedic_core::params::{Initializer, ParamStore};

#[test]
fn tiny_model_gradients_match_finite_differences() {
    for ablation in [Ablation::Full, Ablation::NoDurationCln, Ablation::PitchEnergyCln] {
        let model = AcousticModel::new(ModelConfig::tiny(12).with_ablation(ablation), 5).unwrap();
        let suite = model_gradient_suite(&model, 8, 17).unwrap();
        assert!(suite.len() >= 7);
        for r in &suite {
            assert!(
                r.max_rel_error() <= 1e-4,
                "{ablation:?} {} {}: {:?}",
                r.name,
                r.param,
                r.checks
            );
            assert!(r.checks.iter().any(|c| c.analytic.abs() > 1e-8), "{} has a dead gradient", r.param);
        }
    }
}

#[test]
fn checker_agrees_on_a_quadratic() {
    // d/dw sum(w²) = 2w
    let mut store = ParamStore::new();
    let id = store.register("w", Initializer::new(1).normal(2, 3, 1.0));
    let entries = sample_entries(2, 3, 6, 1);
    let good = check_param(&store, id, &entries, 1e-5, 1e-6, |g| {
        let w = g.param(id);
        let s = g.square(w);
        Ok(g.sum(s))
    })
    .unwrap();
    assert!(good.iter().all(|c| c.rel_error < 1e-8));
    for c in &good {
        let w = store.value(id)[(c.row, c.col)];
        assert!((c.analytic - 2.0 * w).abs() < 1e-12);
    }
    assert!(relative_error(1.0, 1.1, 1e-6) > 0.09);
}
