//! Calibration-error estimators (ECE, ECCE, MSCE, MMCE, Brier),
//! accuracy, and the worst-group wrapper.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait needed for float math under no_std
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One scored observation: model score, binary outcome, group id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: u8,
    pub group: usize,
}

impl ScoredSample {
    pub fn new(score: f64, label: u8, group: usize) -> Self {
        ScoredSample {
            score,
            label,
            group,
        }
    }

    fn y(&self) -> f64 {
        self.label as f64
    }
}

/// Builds samples from parallel arrays; groups default to 0 when absent.
pub fn zip_samples(scores: &[f64], labels: &[u8], groups: Option<&[usize]>) -> Vec<ScoredSample> {
    scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&s, &y))| ScoredSample::new(s, y, groups.map_or(0, |g| g[i])))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ece,
    EcceMean,
    EcceMax,
    Msce,
    Mmce,
    Brier,
    Accuracy,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Ece => "ece",
            MetricKind::EcceMean => "ecce_mean",
            MetricKind::EcceMax => "ecce_max",
            MetricKind::Msce => "msce",
            MetricKind::Mmce => "mmce",
            MetricKind::Brier => "brier",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

/// A computed metric: the value plus enough context to interpret it.
/// `aux` carries the chosen bin count for MSCE and the sampled-pair
/// count for MMCE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub kind: MetricKind,
    pub n_used: usize,
    pub aux: Option<f64>,
}

impl MetricValue {
    fn new(value: f64, kind: MetricKind, n_used: usize) -> Self {
        MetricValue {
            value,
            kind,
            n_used,
            aux: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningScheme {
    EqualWidth,
    EqualMass,
}

/// A metric with its parameters, addressable by a string id. Used by
/// config files, the CLI, and the worst-group wrapper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    Ece {
        bins: usize,
        scheme: BinningScheme,
    },
    EcceMean,
    EcceMax,
    Msce,
    Mmce {
        kernel_width: f64,
        sampled_pairs: usize,
        seed: Option<u64>,
    },
    Brier,
    Accuracy {
        threshold: f64,
    },
}

pub const DEFAULT_MMCE_KERNEL_WIDTH: f64 = 0.4;

impl MetricSpec {
    pub fn kind(&self) -> MetricKind {
        match self {
            MetricSpec::Ece { .. } => MetricKind::Ece,
            MetricSpec::EcceMean => MetricKind::EcceMean,
            MetricSpec::EcceMax => MetricKind::EcceMax,
            MetricSpec::Msce => MetricKind::Msce,
            MetricSpec::Mmce { .. } => MetricKind::Mmce,
            MetricSpec::Brier => MetricKind::Brier,
            MetricSpec::Accuracy { .. } => MetricKind::Accuracy,
        }
    }

    /// Parses a metric id with default parameters.
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "ece" => MetricSpec::Ece {
                bins: 10,
                scheme: BinningScheme::EqualWidth,
            },
            "ecce" | "ecce_mean" => MetricSpec::EcceMean,
            "ecce_max" => MetricSpec::EcceMax,
            "msce" => MetricSpec::Msce,
            "mmce" => MetricSpec::Mmce {
                kernel_width: DEFAULT_MMCE_KERNEL_WIDTH,
                sampled_pairs: 0,
                seed: None,
            },
            "brier" => MetricSpec::Brier,
            "accuracy" => MetricSpec::Accuracy { threshold: 0.5 },
            other => return Err(Error::invalid_config(format!("unknown metric id: {other}"))),
        })
    }

    pub fn evaluate(&self, samples: &[ScoredSample]) -> Result<MetricValue> {
        match *self {
            MetricSpec::Ece { bins, scheme } => ece(samples, bins, scheme),
            MetricSpec::EcceMean => ecce(samples, EcceVariant::Mean),
            MetricSpec::EcceMax => ecce(samples, EcceVariant::Max),
            MetricSpec::Msce => msce(samples),
            MetricSpec::Mmce {
                kernel_width,
                sampled_pairs,
                seed,
            } => mmce(samples, kernel_width, sampled_pairs, seed),
            MetricSpec::Brier => brier(samples),
            MetricSpec::Accuracy { threshold } => accuracy(samples, threshold),
        }
    }
}

fn require_nonempty(samples: &[ScoredSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid_input("metric requires at least one sample"));
    }
    Ok(())
}

/// Sorts sample indices by score ascending, ties broken by original index.
fn sorted_order(samples: &[ScoredSample]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .score
            .partial_cmp(&samples[b].score)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Equal-mass chunk sizes: `n` items over `m` chunks, the trailing
/// `n % m` chunks take the extra item.
pub(crate) fn equal_mass_sizes(n: usize, m: usize) -> Vec<usize> {
    let q = n / m;
    let r = n % m;
    (0..m)
        .map(|k| q + usize::from(k >= m - r && r > 0))
        .collect()
}

/// Expected calibration error over `m` bins.
pub fn ece(samples: &[ScoredSample], m: usize, scheme: BinningScheme) -> Result<MetricValue> {
    require_nonempty(samples)?;
    if m == 0 {
        return Err(Error::invalid_input("ece requires at least one bin"));
    }
    let n = samples.len();
    let mut bin_label = alloc::vec![0.0f64; m];
    let mut bin_score = alloc::vec![0.0f64; m];
    let mut bin_count = alloc::vec![0usize; m];

    match scheme {
        BinningScheme::EqualWidth => {
            for s in samples {
                let idx = ((s.score * m as f64).floor() as usize).min(m - 1);
                bin_label[idx] += s.y();
                bin_score[idx] += s.score;
                bin_count[idx] += 1;
            }
        }
        BinningScheme::EqualMass => {
            if m > n {
                return Err(Error::invalid_input(format!(
                    "equal-mass binning cannot fill {m} bins from {n} samples"
                )));
            }
            let order = sorted_order(samples);
            let mut cursor = 0;
            for (idx, size) in equal_mass_sizes(n, m).into_iter().enumerate() {
                for &i in &order[cursor..cursor + size] {
                    bin_label[idx] += samples[i].y();
                    bin_score[idx] += samples[i].score;
                }
                bin_count[idx] = size;
                cursor += size;
            }
        }
    }

    let mut total = 0.0;
    for idx in 0..m {
        if bin_count[idx] == 0 {
            continue;
        }
        let c = bin_count[idx] as f64;
        let acc = bin_label[idx] / c;
        let conf = bin_score[idx] / c;
        total += c / n as f64 * (acc - conf).abs();
    }
    Ok(MetricValue::new(total, MetricKind::Ece, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcceVariant {
    Mean,
    Max,
}

/// The ordered partial sums `C_k = (1/n) sum_{i<=k} (y_(i) - s_(i))`
/// after sorting by score.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeProcess {
    pub partial_sums: Vec<f64>,
}

pub fn cumulative_process(samples: &[ScoredSample]) -> Result<CumulativeProcess> {
    require_nonempty(samples)?;
    let n = samples.len() as f64;
    let order = sorted_order(samples);
    let mut acc = 0.0;
    let partial_sums = order
        .iter()
        .map(|&i| {
            acc += (samples[i].y() - samples[i].score) / n;
            acc
        })
        .collect();
    Ok(CumulativeProcess { partial_sums })
}

/// Cumulative calibration error: mean or max of `|C_k|`.
pub fn ecce(samples: &[ScoredSample], variant: EcceVariant) -> Result<MetricValue> {
    let process = cumulative_process(samples)?;
    let kind = match variant {
        EcceVariant::Mean => MetricKind::EcceMean,
        EcceVariant::Max => MetricKind::EcceMax,
    };
    let value = match variant {
        EcceVariant::Mean => {
            process.partial_sums.iter().map(|c| c.abs()).sum::<f64>()
                / process.partial_sums.len() as f64
        }
        EcceVariant::Max => process
            .partial_sums
            .iter()
            .map(|c| c.abs())
            .fold(0.0, f64::max),
    };
    Ok(MetricValue::new(value, kind, samples.len()))
}

/// Hypothesis-test statistic: max-variant ECCE divided by the plug-in
/// standard deviation `sqrt(sum s(1-s)) / n`.
pub fn ecce_statistic(samples: &[ScoredSample]) -> Result<f64> {
    let max = ecce(samples, EcceVariant::Max)?.value;
    let n = samples.len() as f64;
    let sigma = samples
        .iter()
        .map(|s| s.score * (1.0 - s.score))
        .sum::<f64>()
        .sqrt()
        / n;
    if sigma == 0.0 {
        return Err(Error::invalid_input(
            "ecce statistic undefined: all scores are 0 or 1",
        ));
    }
    Ok(max / sigma)
}

/// Monotone-sweep calibration error: equal-mass ECE at the largest bin
/// count whose bin label means are monotone non-decreasing.
pub fn msce(samples: &[ScoredSample]) -> Result<MetricValue> {
    require_nonempty(samples)?;
    let n = samples.len();
    let order = sorted_order(samples);
    let mut label_prefix = Vec::with_capacity(n + 1);
    label_prefix.push(0.0f64);
    for &i in &order {
        label_prefix.push(label_prefix.last().unwrap() + samples[i].y());
    }

    let mut chosen = 1;
    'sweep: for b in (1..=n).rev() {
        let mut cursor = 0usize;
        let mut prev = f64::NEG_INFINITY;
        for size in equal_mass_sizes(n, b) {
            let mean = (label_prefix[cursor + size] - label_prefix[cursor]) / size as f64;
            if mean < prev {
                continue 'sweep;
            }
            prev = mean;
            cursor += size;
        }
        chosen = b;
        break;
    }

    let mut value = ece(samples, chosen, BinningScheme::EqualMass)?;
    value.kind = MetricKind::Msce;
    value.aux = Some(chosen as f64);
    Ok(value)
}

/// Maximum mean calibration error over (correctness, confidence) pairs
/// with a Laplacian kernel. `sampled_pairs = 0` computes the exact
/// O(n^2) double sum; otherwise that many index pairs are drawn under
/// `seed` and averaged.
pub fn mmce(
    samples: &[ScoredSample],
    kernel_width: f64,
    sampled_pairs: usize,
    seed: Option<u64>,
) -> Result<MetricValue> {
    require_nonempty(samples)?;
    if kernel_width <= 0.0 {
        return Err(Error::invalid_input("kernel width must be positive"));
    }
    let n = samples.len();
    let confidences: Vec<f64> = samples.iter().map(|s| s.score.max(1.0 - s.score)).collect();
    let diffs: Vec<f64> = samples
        .iter()
        .zip(&confidences)
        .map(|(s, &confidence)| {
            let predicted = u8::from(s.score >= 0.5);
            f64::from(predicted == s.label) - confidence
        })
        .collect();

    let mean_sq = if sampled_pairs == 0 {
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += diffs[i]
                    * diffs[j]
                    * (-(confidences[i] - confidences[j]).abs() / kernel_width).exp();
            }
        }
        total / (n as f64 * n as f64)
    } else {
        let seed = seed
            .ok_or_else(|| Error::invalid_input("sampled mmce requires a seed for pair drawing"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        for _ in 0..sampled_pairs {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            total += diffs[i]
                * diffs[j]
                * (-(confidences[i] - confidences[j]).abs() / kernel_width).exp();
        }
        total / sampled_pairs as f64
    };

    let mut value = MetricValue::new(mean_sq.max(0.0).sqrt(), MetricKind::Mmce, n);
    if sampled_pairs > 0 {
        value.aux = Some(sampled_pairs as f64);
    }
    Ok(value)
}

/// Mean squared difference between score and outcome.
pub fn brier(samples: &[ScoredSample]) -> Result<MetricValue> {
    require_nonempty(samples)?;
    let value = samples
        .iter()
        .map(|s| (s.score - s.y()) * (s.score - s.y()))
        .sum::<f64>()
        / samples.len() as f64;
    Ok(MetricValue::new(value, MetricKind::Brier, samples.len()))
}

/// Fraction of thresholded predictions matching the labels.
pub fn accuracy(samples: &[ScoredSample], threshold: f64) -> Result<MetricValue> {
    require_nonempty(samples)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid_input("threshold must lie in (0, 1)"));
    }
    let hits = samples
        .iter()
        .filter(|s| u8::from(s.score >= threshold) == s.label)
        .count();
    Ok(MetricValue::new(
        hits as f64 / samples.len() as f64,
        MetricKind::Accuracy,
        samples.len(),
    ))
}

/// Distinct group ids present, ascending.
pub fn distinct_groups(samples: &[ScoredSample]) -> Vec<usize> {
    let mut ids: Vec<usize> = samples.iter().map(|s| s.group).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Evaluates `spec` on each group's subsample and returns the maximum
/// together with its group id; ties break toward the lowest group id.
pub fn worst_group(samples: &[ScoredSample], spec: &MetricSpec) -> Result<(MetricValue, usize)> {
    require_nonempty(samples)?;
    let mut best: Option<(MetricValue, usize)> = None;
    for gid in distinct_groups(samples) {
        let sub: Vec<ScoredSample> = samples.iter().filter(|s| s.group == gid).copied().collect();
        let value = spec.evaluate(&sub).map_err(|e| e.for_group(gid))?;
        let replace = match &best {
            None => true,
            Some((current, _)) => value.value > current.value,
        };
        if replace {
            best = Some((value, gid));
        }
    }
    Ok(best.expect("nonempty samples imply at least one group"))
}

/// Per-group metric values, ascending group id.
pub fn per_group(samples: &[ScoredSample], spec: &MetricSpec) -> Result<Vec<(usize, MetricValue)>> {
    require_nonempty(samples)?;
    distinct_groups(samples)
        .into_iter()
        .map(|gid| {
            let sub: Vec<ScoredSample> =
                samples.iter().filter(|s| s.group == gid).copied().collect();
            spec.evaluate(&sub)
                .map(|v| (gid, v))
                .map_err(|e| e.for_group(gid))
        })
        .collect()
}

/// Pretty id list used by CLI help and config validation messages.
pub fn metric_ids() -> &'static [&'static str] {
    &[
        "ece",
        "ecce_mean",
        "ecce_max",
        "msce",
        "mmce",
        "brier",
        "accuracy",
    ]
}

pub fn metric_id_list() -> String {
    metric_ids().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn samples(scores: &[f64], labels: &[u8]) -> Vec<ScoredSample> {
        zip_samples(scores, labels, None)
    }

    #[test]
    fn ece_equal_width_hand_example() {
        let s = samples(&[0.2, 0.2, 0.8, 0.8], &[0, 1, 1, 1]);
        let v = ece(&s, 2, BinningScheme::EqualWidth).unwrap();
        assert!((v.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ece_equal_mass_hand_example() {
        let s = samples(&[0.1, 0.3, 0.6, 0.9], &[0, 0, 1, 1]);
        let v = ece(&s, 2, BinningScheme::EqualMass).unwrap();
        assert!((v.value - 0.225).abs() < 1e-12);
    }

    #[test]
    fn ece_perfect_scores_zero() {
        let s = samples(&[0.0, 1.0, 1.0, 0.0], &[0, 1, 1, 0]);
        for m in [1, 2, 5, 17] {
            assert_eq!(ece(&s, m, BinningScheme::EqualWidth).unwrap().value, 0.0);
        }
    }

    #[test]
    fn ece_equal_mass_rejects_more_bins_than_samples() {
        let s = samples(&[0.5, 0.5], &[0, 1]);
        assert!(ece(&s, 3, BinningScheme::EqualMass).is_err());
    }

    #[test]
    fn ecce_hand_example() {
        let s = samples(&[0.5, 0.5], &[1, 0]);
        let mean = ecce(&s, EcceVariant::Mean).unwrap();
        let max = ecce(&s, EcceVariant::Max).unwrap();
        assert!((mean.value - 0.125).abs() < 1e-12);
        assert!((max.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn ecce_zero_for_exact_scores() {
        let s = samples(&[0.0, 1.0, 0.0, 1.0], &[0, 1, 0, 1]);
        assert_eq!(ecce(&s, EcceVariant::Mean).unwrap().value, 0.0);
        assert_eq!(ecce(&s, EcceVariant::Max).unwrap().value, 0.0);
    }

    #[test]
    fn cumulative_process_increments_bounded() {
        let s = samples(&[0.3, 0.9, 0.1, 0.7], &[1, 0, 0, 1]);
        let process = cumulative_process(&s).unwrap();
        let n = s.len() as f64;
        let mut prev = 0.0;
        for &c in &process.partial_sums {
            assert!((c - prev).abs() <= 1.0 / n + 1e-15);
            prev = c;
        }
    }

    #[test]
    fn msce_sweep_hand_examples() {
        let v = msce(&samples(&[0.1, 0.2, 0.8, 0.9], &[0, 1, 1, 1])).unwrap();
        assert_eq!(v.aux, Some(4.0));
        assert!((v.value - 0.3).abs() < 1e-12);

        let v = msce(&samples(&[0.1, 0.4, 0.6, 0.9], &[1, 0, 1, 1])).unwrap();
        assert_eq!(v.aux, Some(2.0));
        assert!((v.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn msce_constant_scores_single_bin() {
        let s = samples(&[0.5, 0.5], &[1, 0]);
        let v = msce(&s).unwrap();
        assert_eq!(v.aux, Some(1.0));
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn mmce_hand_example() {
        let s = samples(&[0.8, 0.8], &[1, 0]);
        let v = mmce(&s, DEFAULT_MMCE_KERNEL_WIDTH, 0, None).unwrap();
        assert!((v.value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn mmce_zero_when_confidently_correct() {
        let s = samples(&[1.0, 0.0, 1.0], &[1, 0, 1]);
        assert_eq!(mmce(&s, 0.4, 0, None).unwrap().value, 0.0);
    }

    #[test]
    fn mmce_sampling_requires_seed() {
        let s = samples(&[0.8, 0.8], &[1, 0]);
        assert!(mmce(&s, 0.4, 100, None).is_err());
    }

    #[test]
    fn brier_hand_examples() {
        let s = samples(&[0.2, 0.9], &[1, 1]);
        assert!((brier(&s).unwrap().value - 0.325).abs() < 1e-12);
        let s = samples(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]);
        assert!((brier(&s).unwrap().value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn accuracy_hand_examples() {
        let s = samples(&[0.4, 0.6], &[1, 0]);
        assert_eq!(accuracy(&s, 0.5).unwrap().value, 0.0);
        let s = samples(&[0.4, 0.6, 0.7], &[0, 0, 1]);
        assert!((accuracy(&s, 0.5).unwrap().value - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn worst_group_single_group_equals_overall() {
        let s = samples(&[0.2, 0.7, 0.4], &[0, 1, 1]);
        let spec = MetricSpec::Brier;
        let (wg, gid) = worst_group(&s, &spec).unwrap();
        assert_eq!(gid, 0);
        assert_eq!(wg.value, brier(&s).unwrap().value);
    }

    #[test]
    fn worst_group_picks_max_and_lowest_tie() {
        let mut s = vec![
            ScoredSample::new(0.5, 0, 0),
            ScoredSample::new(0.5, 1, 0),
            ScoredSample::new(0.9, 0, 1),
            ScoredSample::new(0.9, 0, 1),
        ];
        let spec = MetricSpec::Brier;
        let (wg, gid) = worst_group(&s, &spec).unwrap();
        assert_eq!(gid, 1);
        assert!((wg.value - 0.81).abs() < 1e-12);

        // Permuting group labels moves the argmax, not the value.
        for sample in &mut s {
            sample.group = 1 - sample.group;
        }
        let (wg2, gid2) = worst_group(&s, &spec).unwrap();
        assert_eq!(gid2, 0);
        assert_eq!(wg2.value, wg.value);
    }

    #[test]
    fn worst_group_annotates_group_errors() {
        let s = vec![ScoredSample::new(0.3, 0, 0), ScoredSample::new(0.8, 1, 1)];
        let spec = MetricSpec::Ece {
            bins: 2,
            scheme: BinningScheme::EqualMass,
        };
        let err = worst_group(&s, &spec).unwrap_err();
        match err {
            Error::GroupMetric { group, .. } => assert_eq!(group, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ecce_statistic_scales_by_plugin_sigma() {
        let s = samples(&[0.5, 0.5], &[1, 0]);
        // max |C_k| = 0.25, sigma-hat = sqrt(0.25 + 0.25) / 2.
        let expected = 0.25 / ((0.5f64).sqrt() / 2.0);
        assert!((ecce_statistic(&s).unwrap() - expected).abs() < 1e-12);
        let degenerate = samples(&[0.0, 1.0], &[0, 1]);
        assert!(ecce_statistic(&degenerate).is_err());
    }

    #[test]
    fn metric_spec_ids_round_trip() {
        for id in metric_ids() {
            let spec = MetricSpec::from_id(id).unwrap();
            let canonical = spec.kind().as_str();
            assert!(*id == canonical || *id == "ecce");
        }
        assert!(MetricSpec::from_id("enir").is_err());
    }
}
