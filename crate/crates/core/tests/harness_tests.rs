//! End-to-end benchmark engine checks: determinism, the group-access
//! audit, regime rejection, and qualitative method ordering on an
//! opposite-bias synthetic dataset.

use paritycal_core::calibrators::CalibratorSpec;
use paritycal_core::data::{synth_generate, Dataset, SynthConfig};
use paritycal_core::error::Error;
use paritycal_core::harness::{
    run_experiment, BaseModel, ExperimentOptions, Intervention, MethodSpec, Regime, Stage,
};
use paritycal_core::metrics::MetricKind;
use paritycal_core::models::{gbt_search_space, GbtParams};

fn opposite_bias_dataset(n: usize, seed: u64) -> Dataset {
    // Identical feature weights per group; only the intercept differs,
    // so the features carry no group signal.
    let config = SynthConfig {
        n,
        p: 3,
        n_groups: 2,
        group_weights: vec![vec![1.2, -0.8, 0.5]; 2],
        group_bias: vec![1.0, -1.0],
        group_proportions: vec![0.5, 0.5],
        group_shifts: None,
        seed,
    };
    synth_generate(&config).unwrap().0
}

fn fast_options() -> ExperimentOptions {
    ExperimentOptions {
        tune_trials: 2,
        metric_kinds: vec![MetricKind::EcceMean],
        mc_candidates: 4,
        ..ExperimentOptions::default()
    }
}

fn small_gbt() -> GbtParams {
    GbtParams {
        boosting_rounds: 15,
        max_depth: 3,
        max_bin: 64,
        ..GbtParams::default()
    }
}

fn spec(id: &str, regime: Regime, intervention: Intervention) -> MethodSpec {
    let mut spec = MethodSpec::new(id, regime, BaseModel::Gbt, intervention);
    spec.base_gbt = Some(small_gbt());
    spec.search_space = Some(gbt_search_space(false, false));
    spec
}

#[test]
fn identical_specs_produce_identical_results() {
    let dataset = opposite_bias_dataset(1500, 7);
    let a = spec("baseline_a", Regime::None, Intervention::TuneForAccuracy);
    let mut b = a.clone();
    b.id = "baseline_b".into();
    let (results, _) = run_experiment(&dataset, &[a, b], 2, 11, &fast_options()).unwrap();
    assert_eq!(results[0].trials.len(), 2);
    for (ta, tb) in results[0].trials.iter().zip(&results[1].trials) {
        assert_eq!(ta.worst_group_ce, tb.worst_group_ce);
        assert_eq!(ta.overall_ce, tb.overall_ce);
        assert_eq!(ta.accuracy, tb.accuracy);
    }
    assert_eq!(results[0].mean_overall, results[1].mean_overall);
}

#[test]
fn rerun_is_deterministic() {
    let dataset = opposite_bias_dataset(1200, 8);
    let specs = vec![spec(
        "isotonic",
        Regime::None,
        Intervention::Calibrator {
            spec: CalibratorSpec::Isotonic,
        },
    )];
    let (r1, audit1) = run_experiment(&dataset, &specs, 2, 3, &fast_options()).unwrap();
    let (r2, audit2) = run_experiment(&dataset, &specs, 2, 3, &fast_options()).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(audit1, audit2);
}

#[test]
fn audit_reads_stay_within_regime() {
    let dataset = opposite_bias_dataset(1500, 9);
    let specs = vec![
        spec("baseline", Regime::None, Intervention::TuneForAccuracy),
        spec(
            "isotonic",
            Regime::None,
            Intervention::Calibrator {
                spec: CalibratorSpec::Isotonic,
            },
        ),
        spec(
            "per_group_isotonic",
            Regime::TrainValInf,
            Intervention::PerGroupCalibrator {
                inner: CalibratorSpec::Isotonic,
            },
        ),
        spec(
            "use_group",
            Regime::TrainValInf,
            Intervention::GroupAsFeature,
        ),
    ];
    let (_, audit) = run_experiment(&dataset, &specs, 1, 5, &fast_options()).unwrap();
    for entry in &audit.entries {
        let spec = specs.iter().find(|s| s.id == entry.method).unwrap();
        assert!(
            paritycal_core::harness::regime_permits(spec.regime, entry.stage),
            "{} read groups at {:?} under {:?}",
            entry.method,
            entry.stage,
            spec.regime
        );
    }
    // Regime-None methods only ever touch groups at evaluation.
    for entry in audit.entries.iter().filter(|e| {
        specs
            .iter()
            .any(|s| s.id == e.method && s.regime == Regime::None)
    }) {
        assert_eq!(entry.stage, Stage::Evaluation);
    }
    // The routed calibrator reads at calibration-fit and inference.
    let routed: Vec<Stage> = audit
        .entries
        .iter()
        .filter(|e| e.method == "per_group_isotonic")
        .map(|e| e.stage)
        .collect();
    assert!(routed.contains(&Stage::CalibrationFit));
    assert!(routed.contains(&Stage::Inference));
}

#[test]
fn miswired_spec_aborts_the_run() {
    let dataset = opposite_bias_dataset(600, 10);
    let bad = spec(
        "per_group_isotonic",
        Regime::Val,
        Intervention::PerGroupCalibrator {
            inner: CalibratorSpec::Isotonic,
        },
    );
    match run_experiment(&dataset, &[bad], 1, 0, &fast_options()) {
        Err(Error::RegimeViolation { .. }) => {}
        other => panic!("expected regime violation, got {other:?}"),
    }
}

#[test]
fn per_group_calibrator_beats_baseline_on_opposite_bias() {
    let dataset = opposite_bias_dataset(4000, 12);
    let specs = vec![
        spec("baseline", Regime::None, Intervention::TuneForAccuracy),
        spec(
            "per_group_isotonic",
            Regime::TrainValInf,
            Intervention::PerGroupCalibrator {
                inner: CalibratorSpec::Isotonic,
            },
        ),
    ];
    let (results, _) = run_experiment(&dataset, &specs, 3, 21, &fast_options()).unwrap();
    let baseline = results[0]
        .mean_worst_group_for(MetricKind::EcceMean)
        .unwrap();
    let routed = results[1]
        .mean_worst_group_for(MetricKind::EcceMean)
        .unwrap();
    assert!(
        routed < baseline,
        "per-group {routed} should beat baseline {baseline}"
    );
}
