//! Monte Carlo checks for multicalibration selection: with a
//! feature-identifiable miscalibrated subgroup, an effective config
//! must beat the identity.

use paritycal_core::data::Matrix;
use paritycal_core::metrics::{ecce, zip_samples, EcceVariant};
use paritycal_core::multical::{
    mc_apply, mc_fit, mc_select, McConfig, ResidualModelSpec, SamplingRule, TerminalReason,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores miscalibrated on the subgroup x0 > 0 (too low) and x0 <= 0
/// (too high); feature 0 identifies the subgroup, feature 1 is noise.
fn subgroup_bias(n: usize, seed: u64) -> (Vec<f64>, Matrix, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(n);
    let mut cells = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x0: f64 = rng.gen_range(-1.0..1.0);
        let x1: f64 = rng.gen_range(-1.0..1.0);
        let s: f64 = rng.gen_range(0.15..0.75);
        let p = if x0 > 0.0 { s + 0.2 } else { s - 0.1 };
        scores.push(s);
        cells.push(x0);
        cells.push(x1);
        labels.push(u8::from(rng.gen::<f64>() < p));
    }
    (scores, Matrix::new(n, 2, cells).unwrap(), labels)
}

#[test]
fn select_prefers_corrective_config_over_identity() {
    let identity = McConfig {
        stop_threshold: 10.0,
        ..McConfig::default()
    };
    let corrective = McConfig {
        n_partitions: 5,
        residual_model: ResidualModelSpec::Ridge { lambda: 1.0 },
        stop_threshold: 0.02,
        step_size: 0.5,
        max_iterations: 25,
        ..McConfig::default()
    };
    let mut wins = 0;
    for seed in 0..10 {
        let (scores, features, labels) = subgroup_bias(3000, seed);
        let (best, _) = mc_select(
            &scores,
            &features,
            &labels,
            &[identity.clone(), corrective.clone()],
            seed,
        )
        .unwrap();
        if best == corrective {
            wins += 1;
        }
    }
    assert!(wins >= 9, "corrective config selected only {wins}/10 seeds");
}

#[test]
fn corrective_fit_reduces_subgroup_ecce() {
    let config = McConfig {
        n_partitions: 5,
        stop_threshold: 0.02,
        step_size: 0.5,
        max_iterations: 25,
        ..McConfig::default()
    };
    let mut improved = 0;
    for seed in 0..10 {
        let (scores, features, labels) = subgroup_bias(3000, 50 + seed);
        let sequence = mc_fit(&scores, &features, &labels, &config, seed).unwrap();
        let corrected = mc_apply(&sequence, &scores, &features).unwrap();
        let subgroup: Vec<usize> = (0..scores.len())
            .filter(|&i| features.get(i, 0) > 0.0)
            .collect();
        let before = ecce(
            &zip_samples(
                &subgroup.iter().map(|&i| scores[i]).collect::<Vec<_>>(),
                &subgroup.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
                None,
            ),
            EcceVariant::Mean,
        )
        .unwrap()
        .value;
        let after = ecce(
            &zip_samples(
                &subgroup.iter().map(|&i| corrected[i]).collect::<Vec<_>>(),
                &subgroup.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
                None,
            ),
            EcceVariant::Mean,
        )
        .unwrap()
        .value;
        if after < 0.75 * before {
            improved += 1;
        }
    }
    assert!(
        improved >= 7,
        "subgroup ecce reduced in only {improved}/10 seeds"
    );
}

#[test]
fn disjoint_sampling_wraps_and_logs() {
    let (scores, features, labels) = subgroup_bias(200, 3);
    let config = McConfig {
        sampling: SamplingRule::Disjoint,
        n_partitions: 2,
        stop_threshold: 0.0,
        max_iterations: 30,
        ..McConfig::default()
    };
    // 200 rows yield 10 slices of 20; 30 iterations must wrap.
    let seq = mc_fit(&scores, &features, &labels, &config, 1).unwrap();
    assert!(seq.sampling_wrapped);
    assert_eq!(seq.terminal, TerminalReason::MaxIterations);
}
