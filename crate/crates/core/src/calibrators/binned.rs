//! Binned calibrators: histogram binning, BBQ, and the Platt-then-bin
//! hybrid.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait needed for float math under no_std
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{equal_mass_sizes, BinningScheme};

use super::parametric::{fit_platt, PlattParams};

/// A fitted histogram calibrator: interior cut points plus one
/// calibrated value per bin. `apply` maps a score to the bin holding
/// it (`cuts[i] <= s < cuts[i+1]`) and returns that bin's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramParams {
    pub cuts: Vec<f64>,
    pub values: Vec<f64>,
    pub scheme: BinningScheme,
}

impl HistogramParams {
    pub fn apply(&self, score: f64) -> f64 {
        let idx = self.cuts.partition_point(|&c| c <= score);
        self.values[idx]
    }
}

pub fn fit_histogram(
    scores: &[f64],
    labels: &[u8],
    bins: usize,
    scheme: BinningScheme,
) -> Result<HistogramParams> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::invalid_input(
            "histogram fit requires equal-length nonempty arrays",
        ));
    }
    if bins == 0 {
        return Err(Error::invalid_input("histogram requires at least one bin"));
    }
    let n = scores.len();
    let label_mean = labels.iter().map(|&y| y as f64).sum::<f64>() / n as f64;
    match scheme {
        BinningScheme::EqualWidth => {
            let mut sums = alloc::vec![0.0; bins];
            let mut counts = alloc::vec![0usize; bins];
            for (&s, &y) in scores.iter().zip(labels) {
                let idx = ((s * bins as f64).floor() as usize).min(bins - 1);
                sums[idx] += y as f64;
                counts[idx] += 1;
            }
            let values = sums
                .iter()
                .zip(&counts)
                .map(|(&sum, &c)| if c == 0 { label_mean } else { sum / c as f64 })
                .collect();
            let cuts = (1..bins).map(|k| k as f64 / bins as f64).collect();
            Ok(HistogramParams {
                cuts,
                values,
                scheme,
            })
        }
        BinningScheme::EqualMass => {
            if bins > n {
                return Err(Error::invalid_input(format!(
                    "equal-mass binning cannot fill {bins} bins from {n} samples"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores[a]
                    .partial_cmp(&scores[b])
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut cuts = Vec::with_capacity(bins - 1);
            let mut values = Vec::with_capacity(bins);
            let mut cursor = 0;
            for size in equal_mass_sizes(n, bins) {
                let chunk = &order[cursor..cursor + size];
                let sum: f64 = chunk.iter().map(|&i| labels[i] as f64).sum();
                values.push(sum / size as f64);
                if cursor > 0 {
                    // Midpoint between adjacent chunk boundary scores.
                    cuts.push(0.5 * (scores[order[cursor - 1]] + scores[order[cursor]]));
                }
                cursor += size;
            }
            Ok(HistogramParams {
                cuts,
                values,
                scheme,
            })
        }
    }
}

/// BBQ: a likelihood-weighted ensemble of equal-mass histogram
/// calibrators with different bin counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbqParams {
    pub members: Vec<HistogramParams>,
    pub weights: Vec<f64>,
}

impl BbqParams {
    pub fn apply(&self, score: f64) -> f64 {
        self.members
            .iter()
            .zip(&self.weights)
            .map(|(m, &w)| w * m.apply(score))
            .sum()
    }
}

/// Log marginal likelihood of an equal-mass binning under independent
/// Beta(1,1) priors on each bin's event rate.
fn log_marginal_likelihood(scores: &[f64], labels: &[u8], bins: usize) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut total = 0.0;
    let mut cursor = 0;
    for size in equal_mass_sizes(n, bins) {
        let k: f64 = order[cursor..cursor + size]
            .iter()
            .map(|&i| labels[i] as f64)
            .sum();
        let m = size as f64;
        // Beta-binomial evidence: B(k + 1, m - k + 1) / B(1, 1).
        total += libm::lgamma(k + 1.0) + libm::lgamma(m - k + 1.0) - libm::lgamma(m + 2.0);
        cursor += size;
    }
    total
}

pub fn fit_bbq(scores: &[f64], labels: &[u8], bin_counts: &[usize]) -> Result<BbqParams> {
    if bin_counts.is_empty() {
        return Err(Error::invalid_input("bbq requires at least one bin count"));
    }
    let mut members = Vec::with_capacity(bin_counts.len());
    let mut log_scores = Vec::with_capacity(bin_counts.len());
    for &bins in bin_counts {
        members.push(fit_histogram(
            scores,
            labels,
            bins,
            BinningScheme::EqualMass,
        )?);
        log_scores.push(log_marginal_likelihood(scores, labels, bins));
    }
    let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnormalized: Vec<f64> = log_scores.iter().map(|&ls| (ls - max).exp()).collect();
    let total: f64 = unnormalized.iter().sum();
    let weights = unnormalized.iter().map(|&w| w / total).collect();
    Ok(BbqParams { members, weights })
}

/// Default BBQ bin-count candidates: a spread around n^(1/3).
pub fn default_bbq_bin_counts(n: usize) -> Vec<usize> {
    let anchor = (n as f64).powf(1.0 / 3.0);
    let mut counts: Vec<usize> = [0.4, 0.7, 1.0, 1.5, 2.5, 4.0]
        .iter()
        .map(|&f| ((anchor * f).round() as usize).clamp(1, n))
        .collect();
    counts.sort_unstable();
    counts.dedup();
    counts
}

/// Platt scaling fit on one half of the calibration data, then
/// equal-mass histogram binning fit on the Platt outputs of the other
/// half. The half-split is an even/odd interleave of a seeded shuffle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlattBinnerParams {
    pub platt: PlattParams,
    pub binner: HistogramParams,
}

impl PlattBinnerParams {
    pub fn apply(&self, score: f64) -> f64 {
        self.binner.apply(self.platt.apply(score))
    }
}

pub fn fit_platt_binner(
    scores: &[f64],
    labels: &[u8],
    bins: usize,
    seed: u64,
) -> Result<PlattBinnerParams> {
    if scores.len() < 4 {
        return Err(Error::invalid_input(
            "platt-binner needs at least 4 samples to split in half",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (mut first, mut second): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
    for (pos, &i) in order.iter().enumerate() {
        if pos % 2 == 0 {
            first.push(i);
        } else {
            second.push(i);
        }
    }
    let platt = fit_platt(
        &first.iter().map(|&i| scores[i]).collect::<Vec<_>>(),
        &first.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        false,
    )?;
    let mapped: Vec<f64> = second.iter().map(|&i| platt.apply(scores[i])).collect();
    let second_labels: Vec<u8> = second.iter().map(|&i| labels[i]).collect();
    // Variance-reduced binning: bins come from the mapped scores, but
    // each bin's value is the mean mapped score rather than the label
    // mean, so bin values carry function noise instead of label noise.
    let mut binner = fit_histogram(&mapped, &second_labels, bins, BinningScheme::EqualMass)?;
    let mut sums = alloc::vec![0.0f64; binner.values.len()];
    let mut counts = alloc::vec![0usize; binner.values.len()];
    for &m in &mapped {
        let idx = binner.cuts.partition_point(|&c| c <= m);
        sums[idx] += m;
        counts[idx] += 1;
    }
    for (idx, value) in binner.values.iter_mut().enumerate() {
        if counts[idx] > 0 {
            *value = sums[idx] / counts[idx] as f64;
        }
    }
    Ok(PlattBinnerParams { platt, binner })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn histogram_single_bin_maps_to_label_mean() {
        let h = fit_histogram(&[0.1, 0.5, 0.9], &[0, 1, 1], 1, BinningScheme::EqualWidth).unwrap();
        for s in [0.0, 0.4, 1.0] {
            assert!((h.apply(s) - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_equal_width_hand_example() {
        let h = fit_histogram(
            &[0.2, 0.4, 0.7, 0.9],
            &[0, 1, 1, 1],
            2,
            BinningScheme::EqualWidth,
        )
        .unwrap();
        assert_eq!(h.apply(0.3), 0.5);
        assert_eq!(h.apply(0.8), 1.0);
    }

    #[test]
    fn histogram_distinct_outputs_bounded_by_bins() {
        let scores: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let labels: Vec<u8> = (0..50).map(|i| (i % 3 == 0) as u8).collect();
        let h = fit_histogram(&scores, &labels, 4, BinningScheme::EqualMass).unwrap();
        let mut outputs: Vec<u64> = scores.iter().map(|&s| h.apply(s).to_bits()).collect();
        outputs.sort_unstable();
        outputs.dedup();
        assert!(outputs.len() <= 4);
    }

    #[test]
    fn histogram_empty_bin_inherits_global_mean() {
        let h = fit_histogram(&[0.05, 0.95], &[0, 1], 4, BinningScheme::EqualWidth).unwrap();
        assert_eq!(h.apply(0.4), 0.5);
    }

    #[test]
    fn bbq_singleton_matches_histogram() {
        let scores = [0.1, 0.3, 0.6, 0.8, 0.2, 0.9];
        let labels = [0, 0, 1, 1, 0, 1];
        let bbq = fit_bbq(&scores, &labels, &[3]).unwrap();
        let hist = fit_histogram(&scores, &labels, 3, BinningScheme::EqualMass).unwrap();
        assert_eq!(bbq.weights, vec![1.0]);
        for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
            assert_eq!(bbq.apply(s), hist.apply(s));
        }
    }

    #[test]
    fn bbq_weights_normalized_and_positive() {
        let scores: Vec<f64> = (0..40).map(|i| (i as f64 + 0.5) / 40.0).collect();
        let labels: Vec<u8> = scores.iter().map(|&s| (s > 0.45) as u8).collect();
        let bbq = fit_bbq(&scores, &labels, &[2, 5, 10]).unwrap();
        assert!((bbq.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(bbq.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn platt_binner_output_takes_few_values() {
        let scores: Vec<f64> = (0..64).map(|i| (i as f64 + 0.5) / 64.0).collect();
        let labels: Vec<u8> = scores.iter().map(|&s| (s > 0.5) as u8).collect();
        let pb = fit_platt_binner(&scores, &labels, 4, 0).unwrap();
        let mut outputs: Vec<u64> = scores.iter().map(|&s| pb.apply(s).to_bits()).collect();
        outputs.sort_unstable();
        outputs.dedup();
        assert!(outputs.len() <= 4);
    }

    #[test]
    fn platt_binner_is_binned_platt_by_construction() {
        let scores: Vec<f64> = (0..64).map(|i| (i as f64 + 0.5) / 64.0).collect();
        let labels: Vec<u8> = scores.iter().map(|&s| (s > 0.3) as u8).collect();
        let pb = fit_platt_binner(&scores, &labels, 5, 3).unwrap();
        for s in [0.1, 0.5, 0.9] {
            assert_eq!(pb.apply(s), pb.binner.apply(pb.platt.apply(s)));
        }
    }
}
