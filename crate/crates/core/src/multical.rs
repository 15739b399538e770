//! Iterative score correction over score partitions: additive
//! (repartitioning) and multiplicative (fixed-partition) updates,
//! recorded step by step so a fitted sequence replays exactly on new
//! data, plus seeded config selection.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait needed for float math under no_std
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clip_unit;
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::metrics::{ecce, zip_samples, EcceVariant};
use crate::models::{fit_regression_tree, GbtModel};
#[cfg(test)]
use crate::EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Even,
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingRule {
    None,
    Disjoint,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ResidualModelSpec {
    Ridge { lambda: f64 },
    Tree { max_depth: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    AdditiveRepartition,
    MultiplicativeFixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_partitions: usize,
    pub partition_scheme: PartitionScheme,
    pub sampling: SamplingRule,
    pub residual_model: ResidualModelSpec,
    pub update_rule: UpdateRule,
    pub step_size: f64,
    pub stop_threshold: f64,
    pub max_iterations: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_partitions: 10,
            partition_scheme: PartitionScheme::Quantile,
            sampling: SamplingRule::None,
            residual_model: ResidualModelSpec::Ridge { lambda: 1.0 },
            update_rule: UpdateRule::AdditiveRepartition,
            step_size: 0.5,
            stop_threshold: 0.01,
            max_iterations: 30,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_partitions == 0 {
            return Err(Error::invalid_config("n_partitions must be >= 1"));
        }
        if self.step_size <= 0.0 {
            return Err(Error::invalid_config("step_size must be positive"));
        }
        if self.stop_threshold < 0.0 {
            return Err(Error::invalid_config("stop_threshold must be nonnegative"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid_config("max_iterations must be >= 1"));
        }
        if let ResidualModelSpec::Tree { max_depth } = self.residual_model {
            if max_depth == 0 {
                return Err(Error::invalid_config("tree depth must be >= 1"));
            }
        }
        Ok(())
    }
}

/// A concrete partition of the unit interval: interior edges, with a
/// score assigned to the highest partition whose edge lies strictly
/// below it (ties fall to the lower partition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub n_partitions: usize,
    pub edges: Vec<f64>,
}

const MIN_DISJOINT_SLICE: usize = 20;

impl PartitionSpec {
    pub fn assign_one(&self, score: f64) -> usize {
        self.edges.partition_point(|&e| e < score)
    }

    pub fn assign(&self, scores: &[f64]) -> Vec<usize> {
        scores.iter().map(|&s| self.assign_one(s)).collect()
    }
}

/// Builds a partition spec from scores and assigns them in one pass.
pub fn partition(
    scores: &[f64],
    scheme: PartitionScheme,
    n_partitions: usize,
) -> Result<(PartitionSpec, Vec<usize>)> {
    if n_partitions == 0 {
        return Err(Error::invalid_input("need at least one partition"));
    }
    if scores.is_empty() {
        return Err(Error::invalid_input("cannot partition zero scores"));
    }
    let edges = match scheme {
        PartitionScheme::Even => (1..n_partitions)
            .map(|k| k as f64 / n_partitions as f64)
            .collect(),
        PartitionScheme::Quantile => {
            let n = scores.len();
            if n_partitions > n {
                return Err(Error::invalid_input(format!(
                    "quantile partitioning cannot fill {n_partitions} partitions from {n} scores"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores[a]
                    .partial_cmp(&scores[b])
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut edges = Vec::with_capacity(n_partitions - 1);
            let mut cursor = 0;
            for size in crate::metrics::equal_mass_sizes(n, n_partitions) {
                if cursor > 0 {
                    edges.push(0.5 * (scores[order[cursor - 1]] + scores[order[cursor]]));
                }
                cursor += size;
            }
            edges
        }
    };
    let spec = PartitionSpec {
        scheme,
        n_partitions,
        edges,
    };
    let assignments = spec.assign(scores);
    Ok((spec, assignments))
}

/// Absolute Pearson correlation between predicted and observed
/// residuals; zero when either vector is constant.
pub fn miscalibration(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.len() != observed.len() || predicted.len() < 2 {
        return Err(Error::invalid_input(
            "miscalibration needs two aligned vectors of length >= 2",
        ));
    }
    let n = predicted.len() as f64;
    let mean_p = predicted.iter().sum::<f64>() / n;
    let mean_o = observed.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_o = 0.0;
    for (&p, &o) in predicted.iter().zip(observed) {
        cov += (p - mean_p) * (o - mean_o);
        var_p += (p - mean_p) * (p - mean_p);
        var_o += (o - mean_o) * (o - mean_o);
    }
    if var_p == 0.0 || var_o == 0.0 {
        return Ok(0.0);
    }
    Ok((cov / (var_p * var_o).sqrt()).abs())
}

/// A fitted residual predictor over the full feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ResidualModel {
    Ridge { weights: Vec<f64>, intercept: f64 },
    Tree(GbtModel),
}

impl ResidualModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            ResidualModel::Ridge { weights, intercept } => {
                intercept + weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
            }
            ResidualModel::Tree(tree) => tree.predict_row(row),
        }
    }

    fn fit(
        spec: &ResidualModelSpec,
        features: &Matrix,
        rows: &[usize],
        targets: &[f64],
    ) -> Result<ResidualModel> {
        match spec {
            ResidualModelSpec::Ridge { lambda } => {
                let p = features.n_cols();
                let dim = p + 1;
                let mut xtx = alloc::vec![0.0; dim * dim];
                let mut xty = alloc::vec![0.0; dim];
                for (&i, &t) in rows.iter().zip(targets) {
                    let row = features.row(i);
                    for a in 0..dim {
                        let xa = if a < p { row[a] } else { 1.0 };
                        xty[a] += xa * t;
                        for b in 0..dim {
                            let xb = if b < p { row[b] } else { 1.0 };
                            xtx[a * dim + b] += xa * xb;
                        }
                    }
                }
                // Penalize coefficients, not the intercept.
                for a in 0..p {
                    xtx[a * dim + a] += lambda;
                }
                let beta = solve_dense(&mut xtx, &mut xty, dim)?;
                Ok(ResidualModel::Ridge {
                    weights: beta[..p].to_vec(),
                    intercept: beta[p],
                })
            }
            ResidualModelSpec::Tree { max_depth } => {
                let sub = features.select_rows(rows);
                Ok(ResidualModel::Tree(fit_regression_tree(
                    &sub, targets, *max_depth, 64,
                )?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Threshold,
    MaxIterations,
}

/// One recorded update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McStep {
    pub iteration: usize,
    pub partition: PartitionSpec,
    pub chosen_partition: usize,
    pub residual_model: ResidualModel,
    pub update_rule: UpdateRule,
    pub step_size: f64,
    pub max_miscalibration: f64,
}

/// The full fitted artifact: deterministic replay of every update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSequence {
    pub steps: Vec<McStep>,
    pub terminal: TerminalReason,
    pub update_rule: UpdateRule,
    pub feature_count: usize,
    /// Max miscalibration observed at the stopping check.
    pub final_max_miscalibration: f64,
    /// Final fit-time scores, the replay-idempotence witness.
    pub final_scores: Vec<f64>,
    /// Set when disjoint sampling wrapped past its last slice.
    pub sampling_wrapped: bool,
}

pub const MC_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct McDocument {
    version: u32,
    sequence: UpdateSequence,
}

impl UpdateSequence {
    pub fn to_json(&self) -> String {
        let doc = McDocument {
            version: MC_FORMAT_VERSION,
            sequence: self.clone(),
        };
        serde_json::to_string(&doc).expect("sequence serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: McDocument = serde_json::from_str(text)
            .map_err(|e| Error::invalid_input(format!("bad update-sequence document: {e}")))?;
        if doc.version != MC_FORMAT_VERSION {
            return Err(Error::invalid_input(format!(
                "unsupported update-sequence version {}",
                doc.version
            )));
        }
        Ok(doc.sequence)
    }
}

fn apply_step(step: &McStep, scores: &mut [f64], features: &Matrix, fixed: Option<&[usize]>) {
    let owned;
    let assignments: &[usize] = match fixed {
        Some(a) => a,
        None => {
            owned = step.partition.assign(scores);
            &owned
        }
    };
    for i in 0..scores.len() {
        if assignments[i] != step.chosen_partition {
            continue;
        }
        let predicted = step.residual_model.predict_row(features.row(i));
        let updated = match step.update_rule {
            UpdateRule::AdditiveRepartition => scores[i] + step.step_size * predicted,
            UpdateRule::MultiplicativeFixed => scores[i] * (step.step_size * predicted).exp(),
        };
        scores[i] = clip_unit(updated);
    }
}

/// Runs the iterative correction loop on validation data.
pub fn mc_fit(
    scores: &[f64],
    features: &Matrix,
    labels: &[u8],
    config: &McConfig,
    seed: u64,
) -> Result<UpdateSequence> {
    config.validate()?;
    let n = scores.len();
    if features.n_rows() != n || labels.len() != n || n == 0 {
        return Err(Error::invalid_input(
            "mc_fit requires aligned nonempty scores/features/labels",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current: Vec<f64> = scores.iter().map(|&s| clip_unit(s)).collect();

    // Disjoint slices are fixed up front from one seeded shuffle. A
    // slice keeps at least MIN_DISJOINT_SLICE rows so the residual
    // models stay fittable; fewer slices than iterations wrap (logged).
    let slices: Vec<Vec<usize>> = if config.sampling == SamplingRule::Disjoint {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_slices = config.max_iterations.min((n / MIN_DISJOINT_SLICE).max(1));
        crate::metrics::equal_mass_sizes(n, n_slices)
            .into_iter()
            .scan(0usize, |cursor, size| {
                let slice = order[*cursor..*cursor + size].to_vec();
                *cursor += size;
                Some(slice)
            })
            .collect()
    } else {
        Vec::new()
    };

    // The multiplicative rule freezes partition and assignments at
    // iteration one.
    let mut fixed_partition: Option<(PartitionSpec, Vec<usize>)> = None;
    let mut sampling_wrapped = false;
    let mut steps: Vec<McStep> = Vec::new();
    let mut terminal = TerminalReason::MaxIterations;
    let mut final_max = f64::NAN;

    for iteration in 0..config.max_iterations {
        let working: Vec<usize> = match config.sampling {
            SamplingRule::None => (0..n).collect(),
            SamplingRule::Disjoint => {
                if iteration >= slices.len() {
                    sampling_wrapped = true;
                }
                slices[iteration % slices.len()].clone()
            }
            SamplingRule::Bootstrap => (0..n).map(|_| rng.gen_range(0..n)).collect(),
        };

        let (spec, full_assignments) = match config.update_rule {
            UpdateRule::AdditiveRepartition => {
                let working_scores: Vec<f64> = working.iter().map(|&i| current[i]).collect();
                let (spec, _) = partition(
                    &working_scores,
                    config.partition_scheme,
                    config.n_partitions.min(working.len().max(1)),
                )?;
                let assignments = spec.assign(&current);
                (spec, assignments)
            }
            UpdateRule::MultiplicativeFixed => {
                if fixed_partition.is_none() {
                    let (spec, _) = partition(
                        &current,
                        config.partition_scheme,
                        config.n_partitions.min(n),
                    )?;
                    let assignments = spec.assign(&current);
                    fixed_partition = Some((spec, assignments));
                }
                fixed_partition.clone().expect("just set")
            }
        };

        // Fit a residual model per partition over the working rows and
        // measure predicted-vs-observed residual correlation.
        let mut best: Option<(usize, f64, ResidualModel)> = None;
        let mut max_miscal = 0.0f64;
        for part in 0..spec.n_partitions {
            let rows: Vec<usize> = working
                .iter()
                .copied()
                .filter(|&i| full_assignments[i] == part)
                .collect();
            if rows.len() < 2 {
                continue;
            }
            let observed: Vec<f64> = rows
                .iter()
                .map(|&i| labels[i] as f64 - current[i])
                .collect();
            let model = match ResidualModel::fit(&config.residual_model, features, &rows, &observed)
            {
                Ok(m) => m,
                // A degenerate partition (e.g. constant features under
                // lambda = 0) cannot vote for an update.
                Err(_) => continue,
            };
            let predicted: Vec<f64> = rows
                .iter()
                .map(|&i| model.predict_row(features.row(i)))
                .collect();
            let score = miscalibration(&predicted, &observed)?;
            max_miscal = max_miscal.max(score);
            let replace = match &best {
                None => true,
                Some((_, s, _)) => score > *s,
            };
            if replace {
                best = Some((part, score, model));
            }
        }

        final_max = max_miscal;
        if max_miscal < config.stop_threshold || best.is_none() {
            terminal = TerminalReason::Threshold;
            break;
        }

        let (chosen, _, model) = best.expect("checked above");
        let step = McStep {
            iteration,
            partition: spec,
            chosen_partition: chosen,
            residual_model: model,
            update_rule: config.update_rule,
            step_size: config.step_size,
            max_miscalibration: max_miscal,
        };
        let fixed = match config.update_rule {
            UpdateRule::MultiplicativeFixed => fixed_partition.as_ref().map(|(_, a)| a.as_slice()),
            UpdateRule::AdditiveRepartition => None,
        };
        apply_step(&step, &mut current, features, fixed);
        steps.push(step);
    }

    Ok(UpdateSequence {
        steps,
        terminal,
        update_rule: config.update_rule,
        feature_count: features.n_cols(),
        final_max_miscalibration: final_max,
        final_scores: current,
        sampling_wrapped,
    })
}

/// Replays a recorded sequence against new data; no refitting.
pub fn mc_apply(sequence: &UpdateSequence, scores: &[f64], features: &Matrix) -> Result<Vec<f64>> {
    if features.n_cols() != sequence.feature_count {
        return Err(Error::invalid_input(format!(
            "feature width {} does not match fitted width {}",
            features.n_cols(),
            sequence.feature_count
        )));
    }
    if features.n_rows() != scores.len() {
        return Err(Error::invalid_input("scores/features row mismatch"));
    }
    let mut current: Vec<f64> = scores.iter().map(|&s| clip_unit(s)).collect();
    let fixed_assignments: Option<Vec<usize>> = match sequence.update_rule {
        UpdateRule::MultiplicativeFixed => sequence
            .steps
            .first()
            .map(|step| step.partition.assign(&current)),
        UpdateRule::AdditiveRepartition => None,
    };
    for step in &sequence.steps {
        apply_step(step, &mut current, features, fixed_assignments.as_deref());
    }
    Ok(current)
}

/// Evaluates candidate configs by a seeded 70/30 split of the provided
/// data: fit on 70%, replay on 30%, score by overall mean-variant
/// ECCE. Returns the winner and its fitted sequence.
pub fn mc_select(
    scores: &[f64],
    features: &Matrix,
    labels: &[u8],
    candidates: &[McConfig],
    seed: u64,
) -> Result<(McConfig, UpdateSequence)> {
    if candidates.is_empty() {
        return Err(Error::invalid_config(
            "mc_select needs at least one candidate",
        ));
    }
    let n = scores.len();
    if n < 10 {
        return Err(Error::invalid_input("mc_select needs at least 10 rows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_fit = (0.7 * n as f64).round() as usize;
    let (fit_idx, holdout_idx) = order.split_at(n_fit.clamp(1, n - 1));

    let fit_scores: Vec<f64> = fit_idx.iter().map(|&i| scores[i]).collect();
    let fit_features = features.select_rows(fit_idx);
    let fit_labels: Vec<u8> = fit_idx.iter().map(|&i| labels[i]).collect();
    let ho_scores: Vec<f64> = holdout_idx.iter().map(|&i| scores[i]).collect();
    let ho_features = features.select_rows(holdout_idx);
    let ho_labels: Vec<u8> = holdout_idx.iter().map(|&i| labels[i]).collect();

    let fit_seeds: Vec<u64> = (0..candidates.len()).map(|_| rng.gen()).collect();
    let mut best: Option<(usize, f64, UpdateSequence)> = None;
    for (k, candidate) in candidates.iter().enumerate() {
        let sequence = mc_fit(
            &fit_scores,
            &fit_features,
            &fit_labels,
            candidate,
            fit_seeds[k],
        )?;
        let replayed = mc_apply(&sequence, &ho_scores, &ho_features)?;
        let samples = zip_samples(&replayed, &ho_labels, None);
        let score = ecce(&samples, EcceVariant::Mean)?.value;
        let replace = match &best {
            None => true,
            Some((_, s, _)) => score < *s,
        };
        if replace {
            best = Some((k, score, sequence));
        }
    }
    let (k, _, sequence) = best.expect("at least one candidate");
    Ok((candidates[k].clone(), sequence))
}

/// The documented default candidate grid; `mc_select` callers sample
/// `count` configs from it under `seed`.
pub fn default_mc_candidates(count: usize, seed: u64) -> Vec<McConfig> {
    let schemes = [PartitionScheme::Even, PartitionScheme::Quantile];
    let partitions = [5usize, 10, 20];
    let samplings = [
        SamplingRule::None,
        SamplingRule::Disjoint,
        SamplingRule::Bootstrap,
    ];
    let residuals = [
        ResidualModelSpec::Ridge { lambda: 0.1 },
        ResidualModelSpec::Ridge { lambda: 1.0 },
        ResidualModelSpec::Ridge { lambda: 10.0 },
        ResidualModelSpec::Tree { max_depth: 2 },
        ResidualModelSpec::Tree { max_depth: 3 },
        ResidualModelSpec::Tree { max_depth: 4 },
    ];
    let rules = [
        UpdateRule::AdditiveRepartition,
        UpdateRule::MultiplicativeFixed,
    ];
    let step_sizes = [0.1, 0.5, 1.0];
    let thresholds = [0.005, 0.01, 0.02];
    let max_iters = [10usize, 30];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| McConfig {
            n_partitions: partitions[rng.gen_range(0..partitions.len())],
            partition_scheme: schemes[rng.gen_range(0..schemes.len())],
            sampling: samplings[rng.gen_range(0..samplings.len())],
            residual_model: residuals[rng.gen_range(0..residuals.len())].clone(),
            update_rule: rules[rng.gen_range(0..rules.len())],
            step_size: step_sizes[rng.gen_range(0..step_sizes.len())],
            stop_threshold: thresholds[rng.gen_range(0..thresholds.len())],
            max_iterations: max_iters[rng.gen_range(0..max_iters.len())],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn partition_single_bin() {
        let (spec, assignments) = partition(&[0.3, 0.9], PartitionScheme::Even, 1).unwrap();
        assert!(spec.edges.is_empty());
        assert_eq!(assignments, vec![0, 0]);
    }

    #[test]
    fn partition_even_edge_arithmetic() {
        let (_, assignments) =
            partition(&[0.05, 0.45, 0.55, 0.95], PartitionScheme::Even, 2).unwrap();
        assert_eq!(assignments, vec![0, 0, 1, 1]);
    }

    #[test]
    fn partition_quantile_vs_even_semantics() {
        let scores = [0.1, 0.2, 0.8, 0.81];
        let (_, q) = partition(&scores, PartitionScheme::Quantile, 2).unwrap();
        assert_eq!(q, vec![0, 0, 1, 1]);
        let (_, e) = partition(&scores, PartitionScheme::Even, 2).unwrap();
        assert_eq!(e, vec![0, 0, 1, 1]);

        let skewed = [0.1, 0.11, 0.12, 0.9];
        let (_, q) = partition(&skewed, PartitionScheme::Quantile, 2).unwrap();
        assert_eq!(q, vec![0, 0, 1, 1]);
        let (_, e) = partition(&skewed, PartitionScheme::Even, 2).unwrap();
        assert_eq!(e, vec![0, 0, 0, 1]);
    }

    #[test]
    fn partition_quantile_rejects_too_many_bins() {
        assert!(partition(&[0.5, 0.6], PartitionScheme::Quantile, 3).is_err());
    }

    #[test]
    fn miscalibration_perfect_and_degenerate() {
        assert_eq!(
            miscalibration(&[0.1, 0.5, 0.9], &[0.1, 0.5, 0.9]).unwrap(),
            1.0
        );
        assert_eq!(
            miscalibration(&[0.5, 0.5, 0.5], &[0.1, 0.2, 0.9]).unwrap(),
            0.0
        );
        // Anti-correlation counts with its absolute value.
        assert!(
            (miscalibration(&[1.0, -1.0, 1.0], &[-1.0, 1.0, -1.0]).unwrap() - 1.0).abs() < 1e-12
        );
    }

    #[test]
    fn miscalibration_hand_pearson() {
        // corr([1,-1,1],[1,1,-1]) = -1/2 -> 0.5 in absolute value.
        let v = miscalibration(&[1.0, -1.0, 1.0], &[1.0, 1.0, -1.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    fn calibrated_inputs(n: usize, seed: u64) -> (Vec<f64>, Matrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let features = Matrix::new(n, 2, (0..2 * n).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let labels: Vec<u8> = scores
            .iter()
            .map(|&s| u8::from(rng.gen::<f64>() < s))
            .collect();
        (scores, features, labels)
    }

    #[test]
    fn calibrated_input_stops_without_updates() {
        let (scores, features, labels) = calibrated_inputs(400, 1);
        let config = McConfig {
            stop_threshold: 0.9,
            ..McConfig::default()
        };
        let seq = mc_fit(&scores, &features, &labels, &config, 0).unwrap();
        assert!(seq.steps.is_empty());
        assert_eq!(seq.terminal, TerminalReason::Threshold);
        assert!(seq.final_max_miscalibration < 0.9);
    }

    #[test]
    fn replay_is_idempotent_bit_for_bit() {
        let (scores, features, labels) = calibrated_inputs(300, 2);
        for rule in [
            UpdateRule::AdditiveRepartition,
            UpdateRule::MultiplicativeFixed,
        ] {
            let config = McConfig {
                update_rule: rule,
                stop_threshold: 0.0,
                max_iterations: 8,
                n_partitions: 4,
                ..McConfig::default()
            };
            let seq = mc_fit(&scores, &features, &labels, &config, 3).unwrap();
            assert!(!seq.steps.is_empty());
            let replayed = mc_apply(&seq, &scores, &features).unwrap();
            assert_eq!(replayed, seq.final_scores, "rule {rule:?}");
        }
    }

    #[test]
    fn fit_is_deterministic_under_seed() {
        let (scores, features, labels) = calibrated_inputs(200, 5);
        let config = McConfig {
            sampling: SamplingRule::Bootstrap,
            stop_threshold: 0.0,
            max_iterations: 5,
            ..McConfig::default()
        };
        let a = mc_fit(&scores, &features, &labels, &config, 9).unwrap();
        let b = mc_fit(&scores, &features, &labels, &config, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn at_most_one_partition_changes_per_iteration() {
        let (scores, features, labels) = calibrated_inputs(300, 7);
        let config = McConfig {
            stop_threshold: 0.0,
            max_iterations: 6,
            n_partitions: 5,
            ..McConfig::default()
        };
        let seq = mc_fit(&scores, &features, &labels, &config, 11).unwrap();
        let mut current: Vec<f64> = scores.iter().map(|&s| clip_unit(s)).collect();
        for step in &seq.steps {
            let before = current.clone();
            let assignments = step.partition.assign(&current);
            apply_step(step, &mut current, &features, None);
            for i in 0..current.len() {
                if current[i] != before[i] {
                    assert_eq!(assignments[i], step.chosen_partition);
                }
            }
        }
    }

    #[test]
    fn scores_stay_clipped() {
        let (scores, features, labels) = calibrated_inputs(200, 8);
        let config = McConfig {
            step_size: 5.0,
            stop_threshold: 0.0,
            max_iterations: 10,
            ..McConfig::default()
        };
        let seq = mc_fit(&scores, &features, &labels, &config, 1).unwrap();
        for &s in &seq.final_scores {
            assert!((EPS..=1.0 - EPS).contains(&s));
        }
    }

    #[test]
    fn ridge_residual_model_recovers_linear_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 500;
        let features =
            Matrix::new(n, 2, (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        // Residual depends linearly on feature 0.
        let scores = vec![0.5; n];
        let labels: Vec<u8> = (0..n)
            .map(|i| {
                let p = clip_unit(0.5 + 0.3 * features.get(i, 0));
                u8::from(rng.gen::<f64>() < p)
            })
            .collect();
        let config = McConfig {
            n_partitions: 1,
            stop_threshold: 0.0,
            max_iterations: 1,
            residual_model: ResidualModelSpec::Ridge { lambda: 0.1 },
            ..McConfig::default()
        };
        let seq = mc_fit(&scores, &features, &labels, &config, 2).unwrap();
        assert_eq!(seq.steps.len(), 1);
        let model = &seq.steps[0].residual_model;
        let predicted: Vec<f64> = (0..n).map(|i| model.predict_row(features.row(i))).collect();
        let truth: Vec<f64> = (0..n).map(|i| 0.3 * features.get(i, 0)).collect();
        let corr = miscalibration(&predicted, &truth).unwrap();
        assert!(corr > 0.9, "correlation {corr}");
    }

    #[test]
    fn empty_sequence_is_identity() {
        let seq = UpdateSequence {
            steps: vec![],
            terminal: TerminalReason::Threshold,
            update_rule: UpdateRule::AdditiveRepartition,
            feature_count: 2,
            final_max_miscalibration: 0.0,
            final_scores: vec![],
            sampling_wrapped: false,
        };
        let features = Matrix::new(2, 2, vec![0.0; 4]).unwrap();
        let out = mc_apply(&seq, &[0.25, 0.75], &features).unwrap();
        assert_eq!(out, vec![0.25, 0.75]);
    }

    #[test]
    fn select_prefers_effective_candidate() {
        let (scores, features, labels) = calibrated_inputs(400, 12);
        let identity = McConfig {
            stop_threshold: 10.0,
            ..McConfig::default()
        };
        let seq = mc_select(&scores, &features, &labels, &[identity.clone()], 3).unwrap();
        assert_eq!(seq.0, identity);
        assert!(seq.1.steps.is_empty());
    }

    #[test]
    fn default_grid_is_deterministic() {
        assert_eq!(default_mc_candidates(20, 5), default_mc_candidates(20, 5));
        assert_eq!(default_mc_candidates(20, 5).len(), 20);
    }

    #[test]
    fn sequence_json_round_trip() {
        let (scores, features, labels) = calibrated_inputs(120, 13);
        let config = McConfig {
            stop_threshold: 0.0,
            max_iterations: 3,
            ..McConfig::default()
        };
        let seq = mc_fit(&scores, &features, &labels, &config, 1).unwrap();
        let restored = UpdateSequence::from_json(&seq.to_json()).unwrap();
        assert_eq!(seq, restored);
    }
}
