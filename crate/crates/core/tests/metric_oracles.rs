//! Independent oracles for the calibration-error estimators: direct
//! re-evaluations of the definitions, exhaustive sweeps, and Monte
//! Carlo checks.

use paritycal_core::data::{split, synth_generate, SynthConfig};
use paritycal_core::metrics::{
    ecce, ece, mmce, msce, zip_samples, BinningScheme, EcceVariant, ScoredSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_samples(n: usize, seed: u64) -> Vec<ScoredSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s: f64 = rng.gen();
            let y = u8::from(rng.gen::<f64>() < s * s); // miscalibrated on purpose
            ScoredSample::new(s, y, 0)
        })
        .collect()
}

/// Exhaustive oracle for the monotone sweep: test every bin count
/// directly and keep the largest whose bin label means are monotone.
fn msce_oracle(samples: &[ScoredSample]) -> (usize, f64) {
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .score
            .partial_cmp(&samples[b].score)
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut best = 1;
    for b in 1..=n {
        let q = n / b;
        let r = n % b;
        let mut sizes = vec![q; b];
        for (k, slot) in sizes.iter_mut().enumerate() {
            if k >= b - r && r > 0 {
                *slot += 1;
            }
        }
        let mut cursor = 0;
        let mut prev = f64::NEG_INFINITY;
        let mut monotone = true;
        for size in sizes {
            let mean = order[cursor..cursor + size]
                .iter()
                .map(|&i| samples[i].label as f64)
                .sum::<f64>()
                / size as f64;
            if mean < prev {
                monotone = false;
                break;
            }
            prev = mean;
            cursor += size;
        }
        if monotone {
            best = best.max(b);
        }
    }
    let value = ece(samples, best, BinningScheme::EqualMass).unwrap().value;
    (best, value)
}

#[test]
fn msce_matches_exhaustive_sweep_up_to_n_64() {
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=64);
        let samples = random_samples(n, seed + 1000);
        let (oracle_b, oracle_value) = msce_oracle(&samples);
        let got = msce(&samples).unwrap();
        assert_eq!(got.aux, Some(oracle_b as f64), "seed {seed} n {n}");
        assert!((got.value - oracle_value).abs() < 1e-15);
    }
}

/// Plain double-loop re-implementation of the kernel sum.
fn mmce_oracle(samples: &[ScoredSample], width: f64) -> f64 {
    let n = samples.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (ci, ri) = correctness_confidence(&samples[i]);
            let (cj, rj) = correctness_confidence(&samples[j]);
            total += (ci - ri) * (cj - rj) * (-(ri - rj).abs() / width).exp();
        }
    }
    (total / (n as f64 * n as f64)).max(0.0).sqrt()
}

fn correctness_confidence(s: &ScoredSample) -> (f64, f64) {
    let predicted = u8::from(s.score >= 0.5);
    (f64::from(predicted == s.label), s.score.max(1.0 - s.score))
}

#[test]
fn mmce_exact_matches_double_loop() {
    for seed in 0..5 {
        let samples = random_samples(500, seed);
        let got = mmce(&samples, 0.4, 0, None).unwrap().value;
        let oracle = mmce_oracle(&samples, 0.4);
        assert!((got - oracle).abs() <= 1e-12, "{got} vs {oracle}");
    }
}

#[test]
fn ecce_shrinks_on_calibrated_scores() {
    // Smaller-n version of the consistency claim; the acceptance suite
    // runs the full 1e5 x 20 seeds variant.
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<ScoredSample> = (0..20_000)
            .map(|_| {
                let s: f64 = rng.gen();
                ScoredSample::new(s, u8::from(rng.gen::<f64>() < s), 0)
            })
            .collect();
        let value = ecce(&samples, EcceVariant::Mean).unwrap().value;
        assert!(value < 0.02, "seed {seed}: {value}");
    }
}

#[test]
fn metrics_are_order_invariant_for_distinct_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Distinct scores sidestep the documented ecce/msce tie-breaking.
    let mut samples: Vec<ScoredSample> = (0..200)
        .map(|i| {
            let s = (i as f64 + rng.gen::<f64>() * 0.5) / 200.0;
            ScoredSample::new(s, u8::from(rng.gen::<bool>()), i % 3)
        })
        .collect();
    let before = (
        ece(&samples, 7, BinningScheme::EqualWidth).unwrap().value,
        ece(&samples, 7, BinningScheme::EqualMass).unwrap().value,
        ecce(&samples, EcceVariant::Mean).unwrap().value,
        ecce(&samples, EcceVariant::Max).unwrap().value,
        msce(&samples).unwrap().value,
        mmce(&samples, 0.4, 0, None).unwrap().value,
    );
    use rand::seq::SliceRandom;
    samples.shuffle(&mut rng);
    let after = (
        ece(&samples, 7, BinningScheme::EqualWidth).unwrap().value,
        ece(&samples, 7, BinningScheme::EqualMass).unwrap().value,
        ecce(&samples, EcceVariant::Mean).unwrap().value,
        ecce(&samples, EcceVariant::Max).unwrap().value,
        msce(&samples).unwrap().value,
        mmce(&samples, 0.4, 0, None).unwrap().value,
    );
    assert!((before.0 - after.0).abs() < 1e-12);
    assert!((before.1 - after.1).abs() < 1e-12);
    assert!((before.2 - after.2).abs() < 1e-12);
    assert!((before.3 - after.3).abs() < 1e-12);
    assert!((before.4 - after.4).abs() < 1e-12);
    assert!((before.5 - after.5).abs() < 1e-12);
}

#[test]
fn split_preserves_group_proportions_at_scale() {
    let config = SynthConfig {
        n: 100_000,
        p: 2,
        n_groups: 3,
        group_weights: vec![vec![0.5, -0.5]; 3],
        group_bias: vec![-0.5, 0.0, 0.5],
        group_proportions: vec![0.6, 0.3, 0.1],
        group_shifts: None,
        seed: 99,
    };
    let (dataset, _) = synth_generate(&config).unwrap();
    let full: Vec<f64> = (0..3)
        .map(|g| dataset.groups.iter().filter(|&&x| x == g).count() as f64 / dataset.n() as f64)
        .collect();
    for seed in 0..20 {
        let assignment = split(&dataset, (0.6, 0.2, 0.2), seed).unwrap();
        for g in 0..3 {
            let in_train = assignment
                .train
                .iter()
                .filter(|&&i| dataset.groups[i] == g)
                .count() as f64
                / assignment.train.len() as f64;
            assert!(
                (in_train - full[g]).abs() < 0.02,
                "seed {seed}, group {g}: {in_train} vs {}",
                full[g]
            );
        }
    }
}

#[test]
fn zip_samples_defaults_group_zero() {
    let samples = zip_samples(&[0.5, 0.6], &[0, 1], None);
    assert!(samples.iter().all(|s| s.group == 0));
}
