//! Quantile prediction drift (QPD/QDD), efficiency-satisfying feature
//! attribution for linear and tree-ensemble proxies, and
//! attribution-guided candidate-feature ranking.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::metrics::zip_samples;
use crate::models::{gbt_train, GbtModel, GbtParams, GroupMode, TrainData, Tree};
use crate::multical::{partition, PartitionScheme};

/// Maximum feature count for full-subset Shapley enumeration.
pub const EXACT_SHAPLEY_MAX_FEATURES: usize = 15;

/// A model the attribution engine can interrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProxyModel {
    Linear { weights: Vec<f64>, intercept: f64 },
    Gbt(GbtModel),
}

impl ProxyModel {
    pub fn n_features(&self) -> usize {
        match self {
            ProxyModel::Linear { weights, .. } => weights.len(),
            ProxyModel::Gbt(m) => m.n_features,
        }
    }

    /// Scalar model output (the score being attributed).
    pub fn output(&self, row: &[f64]) -> f64 {
        match self {
            ProxyModel::Linear { weights, intercept } => {
                intercept + weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
            }
            ProxyModel::Gbt(m) => m.predict_row(row),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    /// Full-subset interventional Shapley values against a single
    /// reference instance, on the model's output scale.
    ExactShapley,
    /// Per-tree interventional Shapley over each tree's own feature
    /// set, on the additive margin scale. Tree ensembles only.
    TreePath,
}

/// Per-feature contributions for one instance. Efficiency holds by
/// construction: contributions sum to `output - baseline_value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub contributions: Vec<f64>,
    pub baseline_value: f64,
    pub output: f64,
}

impl AttributionVector {
    pub fn efficiency_gap(&self) -> f64 {
        let total: f64 = self.contributions.iter().sum();
        (total - (self.output - self.baseline_value)).abs()
    }
}

fn factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    for k in 1..=n {
        out.push(out[k - 1] * k as f64);
    }
    out
}

/// Shapley values over `players` features by full subset enumeration;
/// `eval(mask)` returns the value function for the subset encoded in
/// the mask bits.
fn shapley_enumerate(players: usize, mut eval: impl FnMut(usize) -> f64) -> Vec<f64> {
    let fact = factorials(players);
    let total_masks = 1usize << players;
    let mut values = Vec::with_capacity(total_masks);
    for mask in 0..total_masks {
        values.push(eval(mask));
    }
    let mut phi = alloc::vec![0.0; players];
    for mask in 0..total_masks {
        let size = mask.count_ones() as usize;
        for f in 0..players {
            if mask & (1 << f) != 0 {
                continue;
            }
            let weight = fact[size] * fact[players - size - 1] / fact[players];
            phi[f] += weight * (values[mask | (1 << f)] - values[mask]);
        }
    }
    phi
}

fn tree_margin(
    tree: &Tree,
    instance: &[f64],
    baseline: &[f64],
    used: &[usize],
    mask: usize,
) -> f64 {
    let mut row = baseline.to_vec();
    for (bit, &feature) in used.iter().enumerate() {
        if mask & (1 << bit) != 0 {
            row[feature] = instance[feature];
        }
    }
    tree.eval(&row)
}

/// Local feature attribution of `model` at `instance` against a single
/// reference `baseline`.
pub fn attribute(
    model: &ProxyModel,
    instance: &[f64],
    baseline: &[f64],
    method: AttributionMethod,
) -> Result<AttributionVector> {
    let p = model.n_features();
    if instance.len() != p || baseline.len() != p {
        return Err(Error::invalid_input(format!(
            "instance/baseline width must be {p}"
        )));
    }
    match method {
        AttributionMethod::ExactShapley => {
            if p > EXACT_SHAPLEY_MAX_FEATURES {
                return Err(Error::invalid_input(format!(
                    "exact shapley is limited to {EXACT_SHAPLEY_MAX_FEATURES} features, got {p}"
                )));
            }
            let contributions = shapley_enumerate(p, |mask| {
                let mut row = baseline.to_vec();
                for f in 0..p {
                    if mask & (1 << f) != 0 {
                        row[f] = instance[f];
                    }
                }
                model.output(&row)
            });
            Ok(AttributionVector {
                contributions,
                baseline_value: model.output(baseline),
                output: model.output(instance),
            })
        }
        AttributionMethod::TreePath => {
            let gbt = match model {
                ProxyModel::Gbt(m) => m,
                ProxyModel::Linear { .. } => {
                    return Err(Error::invalid_input(
                        "tree_path attribution requires a tree-ensemble model",
                    ))
                }
            };
            let mut contributions = alloc::vec![0.0; p];
            let mut baseline_margin = gbt.base_score;
            let mut output_margin = gbt.base_score;
            for tree in &gbt.trees {
                let used = tree.used_features();
                let phi = shapley_enumerate(used.len(), |mask| {
                    tree_margin(tree, instance, baseline, &used, mask)
                });
                for (bit, &feature) in used.iter().enumerate() {
                    contributions[feature] += phi[bit];
                }
                baseline_margin += tree_margin(tree, instance, baseline, &used, 0);
                output_margin += tree.eval(instance);
            }
            Ok(AttributionVector {
                contributions,
                baseline_value: baseline_margin,
                output: output_margin,
            })
        }
    }
}

/// Mean-score difference between two groups inside one bin.
pub fn qdd(
    scores: &[f64],
    groups: &[usize],
    bin_rows: &[usize],
    group_i: usize,
    group_j: usize,
) -> Result<f64> {
    side_mean(scores, groups, bin_rows, group_i)
        .and_then(|mi| side_mean(scores, groups, bin_rows, group_j).map(|mj| mi - mj))
}

/// Mean-outcome difference between two groups inside one bin.
pub fn qpd(
    labels: &[u8],
    groups: &[usize],
    bin_rows: &[usize],
    group_i: usize,
    group_j: usize,
) -> Result<f64> {
    let values: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
    qdd(&values, groups, bin_rows, group_i, group_j)
}

fn side_mean(values: &[f64], groups: &[usize], bin_rows: &[usize], group: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for &i in bin_rows {
        if groups[i] == group {
            total += values[i];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid_input(format!(
            "bin has no members of group {group}"
        )));
    }
    Ok(total / count as f64)
}

/// Per-bin drift decomposition for one group pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpdBin {
    pub bin: usize,
    pub n_i: usize,
    pub n_j: usize,
    pub qpd: f64,
    pub qdd: f64,
    /// Per-feature mean-attribution differences.
    pub qpda: Vec<f64>,
    /// |sum_f qpda_f - (mean proxy score difference)|; the efficiency
    /// telescoping check.
    pub identity_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpdReport {
    pub group_i: usize,
    pub group_j: usize,
    pub bin_edges: Vec<f64>,
    pub bins: Vec<QpdBin>,
    pub method: AttributionMethod,
}

/// Computes per-feature mean-attribution differences between two
/// groups for every bin where both appear. The baseline for every
/// attribution is the feature-wise mean of `features`.
#[allow(clippy::too_many_arguments)]
pub fn qpd_attribution(
    proxy: &ProxyModel,
    features: &Matrix,
    labels: &[u8],
    groups: &[usize],
    bin_assignments: &[usize],
    n_bins: usize,
    group_i: usize,
    group_j: usize,
    method: AttributionMethod,
) -> Result<QpdReport> {
    let n = features.n_rows();
    if labels.len() != n || groups.len() != n || bin_assignments.len() != n {
        return Err(Error::invalid_input("qpd inputs must be aligned"));
    }
    if features.n_cols() != proxy.n_features() {
        return Err(Error::invalid_input("feature width does not match proxy"));
    }
    let p = features.n_cols();
    let baseline: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| features.get(i, j)).sum::<f64>() / n as f64)
        .collect();

    // Proxy scores for QDD and the identity check.
    let proxy_scores: Vec<f64> = (0..n).map(|i| proxy.output(features.row(i))).collect();

    let mut bins = Vec::new();
    for bin in 0..n_bins {
        let rows: Vec<usize> = (0..n).filter(|&i| bin_assignments[i] == bin).collect();
        let n_i = rows.iter().filter(|&&i| groups[i] == group_i).count();
        let n_j = rows.iter().filter(|&&i| groups[i] == group_j).count();
        if n_i == 0 || n_j == 0 {
            continue;
        }
        let mut mean_attr_i = alloc::vec![0.0; p];
        let mut mean_attr_j = alloc::vec![0.0; p];
        for &i in &rows {
            let side = if groups[i] == group_i {
                &mut mean_attr_i
            } else if groups[i] == group_j {
                &mut mean_attr_j
            } else {
                continue;
            };
            let attribution = attribute(proxy, features.row(i), &baseline, method)?;
            for (acc, phi) in side.iter_mut().zip(&attribution.contributions) {
                *acc += phi;
            }
        }
        for v in mean_attr_i.iter_mut() {
            *v /= n_i as f64;
        }
        for v in mean_attr_j.iter_mut() {
            *v /= n_j as f64;
        }
        let qpda: Vec<f64> = mean_attr_i
            .iter()
            .zip(&mean_attr_j)
            .map(|(a, b)| a - b)
            .collect();
        let score_drift = qdd(&proxy_scores, groups, &rows, group_i, group_j)?;
        let identity_gap = (qpda.iter().sum::<f64>() - score_drift).abs();
        bins.push(QpdBin {
            bin,
            n_i,
            n_j,
            qpd: qpd(labels, groups, &rows, group_i, group_j)?,
            qdd: score_drift,
            qpda,
            identity_gap,
        });
    }
    Ok(QpdReport {
        group_i,
        group_j,
        bin_edges: Vec::new(),
        bins,
        method,
    })
}

/// Inputs for attribution-guided candidate-feature ranking.
#[derive(Debug, Clone)]
pub struct FeatureSelectInput<'a> {
    pub base_scores: &'a [f64],
    pub base_features: &'a Matrix,
    pub candidate_features: &'a Matrix,
    pub labels: &'a [u8],
    pub groups: &'a [usize],
    pub n_groups: usize,
    pub top_k: usize,
    pub n_bins: usize,
    pub method: AttributionMethod,
    pub proxy_params: GbtParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    /// Candidate indices with their aggregated |QPDA| scores, best
    /// first; length `min(top_k, candidates)`.
    pub ranked: Vec<(usize, f64)>,
    /// Original group ids forming the worse-calibrated side.
    pub worst_side: Vec<usize>,
    pub report: QpdReport,
}

/// Ranks candidate features by count-weighted absolute QPD attribution
/// between the worse-calibrated half of the groups and the rest.
pub fn select_feature(input: &FeatureSelectInput) -> Result<FeatureRanking> {
    let n = input.base_scores.len();
    if input.base_features.n_rows() != n
        || input.candidate_features.n_rows() != n
        || input.labels.len() != n
        || input.groups.len() != n
    {
        return Err(Error::invalid_input(
            "feature selection inputs must be aligned",
        ));
    }
    let n_candidates = input.candidate_features.n_cols();
    if n_candidates == 0 {
        return Err(Error::invalid_input("no candidate features supplied"));
    }
    if input.n_groups < 2 {
        return Err(Error::invalid_input(
            "feature selection needs at least two groups",
        ));
    }

    // Rank groups by per-group ECCE of the base scores, worst first.
    let samples = zip_samples(input.base_scores, input.labels, Some(input.groups));
    let mut per_group: Vec<(usize, f64)> =
        crate::metrics::per_group(&samples, &crate::metrics::MetricSpec::EcceMean)?
            .into_iter()
            .map(|(gid, v)| (gid, v.value))
            .collect();
    per_group.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let worst_count = input.n_groups.div_ceil(2);
    let worst_side: Vec<usize> = per_group
        .iter()
        .take(worst_count)
        .map(|(gid, _)| *gid)
        .collect();
    let side: Vec<usize> = input
        .groups
        .iter()
        .map(|g| usize::from(!worst_side.contains(g)))
        .collect();

    // Train the proxy on base + candidate features.
    let p_base = input.base_features.n_cols();
    let augmented = input
        .base_features
        .append_columns(n_candidates, |row, k| input.candidate_features.get(row, k));
    let data = TrainData::new(&augmented, input.labels);
    let proxy = ProxyModel::Gbt(gbt_train(
        &data,
        &input.proxy_params,
        GroupMode::None,
        input.seed,
    )?);

    // Quantile bins over the base scores.
    let n_bins = input.n_bins.min(n).max(1);
    let (spec, bin_assignments) = partition(input.base_scores, PartitionScheme::Quantile, n_bins)?;

    // Side 0 is the worse-calibrated union, side 1 the rest.
    let mut report = qpd_attribution(
        &proxy,
        &augmented,
        input.labels,
        &side,
        &bin_assignments,
        n_bins,
        0,
        1,
        input.method,
    )?;
    report.bin_edges = spec.edges;

    // Count-weighted |QPDA| aggregated over bins, candidates only.
    let mut scores = alloc::vec![0.0f64; n_candidates];
    let mut weight_total = 0.0;
    for bin in &report.bins {
        let weight = (bin.n_i + bin.n_j) as f64;
        weight_total += weight;
        for c in 0..n_candidates {
            scores[c] += weight * bin.qpda[p_base + c].abs();
        }
    }
    if weight_total > 0.0 {
        for s in scores.iter_mut() {
            *s /= weight_total;
        }
    }
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    ranked.truncate(input.top_k);
    Ok(FeatureRanking {
        ranked,
        worst_side,
        report,
    })
}
