//! Histogram-based Newton boosting with depthwise or best-gain-first
//! growth, logistic/Brier objectives, an additive Brier calibration
//! term, and per-round group-DRO sample reweighting.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait needed for float math under no_std
use num_traits::Float;
use rand::seq::SliceRandom;
#[cfg(test)]
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::models::{group_dro_step, inference_matrix, GroupMode, GroupWeights, TrainData};
use crate::{clip_unit, logit, sigmoid};

const LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Logistic,
    Brier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowPolicy {
    Depthwise,
    LossGuide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub eta: f64,
    pub min_split_loss: f64,
    pub max_depth: usize,
    pub colsample_bytree: f64,
    pub colsample_bylevel: f64,
    pub max_bin: usize,
    pub grow_policy: GrowPolicy,
    pub boosting_rounds: usize,
    pub objective: Objective,
    /// Weight of the additive Brier calibration term (logistic
    /// objective only) and, together with `dro_eta`, the gate for
    /// group-robust reweighting.
    pub calibration_loss_weight: f64,
    pub dro_eta: f64,
}

impl Default for GbtParams {
    /// The starred default search point of the tuning grid.
    fn default() -> Self {
        GbtParams {
            eta: 0.3,
            min_split_loss: 0.0,
            max_depth: 6,
            colsample_bytree: 1.0,
            colsample_bylevel: 1.0,
            max_bin: 512,
            grow_policy: GrowPolicy::LossGuide,
            boosting_rounds: 25,
            objective: Objective::Logistic,
            calibration_loss_weight: 0.0,
            dro_eta: 0.0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 {
            return Err(Error::invalid_config("eta must be positive"));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid_config("max_depth must be >= 1"));
        }
        if self.boosting_rounds == 0 {
            return Err(Error::invalid_config("boosting_rounds must be >= 1"));
        }
        for (name, v) in [
            ("colsample_bytree", self.colsample_bytree),
            ("colsample_bylevel", self.colsample_bylevel),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid_config(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.max_bin < 2 {
            return Err(Error::invalid_config("max_bin must be >= 2"));
        }
        if self.calibration_loss_weight < 0.0 || self.dro_eta < 0.0 {
            return Err(Error::invalid_config(
                "calibration_loss_weight and dro_eta must be nonnegative",
            ));
        }
        Ok(())
    }

    fn dro_active(&self) -> bool {
        self.calibration_loss_weight > 0.0 && self.dro_eta > 0.0
    }
}

/// Per-sample loss of the objective at logit `z` with binary label `y`.
pub fn objective_loss(objective: Objective, z: f64, y: f64) -> f64 {
    let p = sigmoid(z);
    match objective {
        Objective::Logistic => {
            let p = clip_unit(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }
        Objective::Brier => (p - y) * (p - y),
    }
}

/// Exact gradient and Hessian of the objective with respect to the logit.
pub fn objective_grad_hess(objective: Objective, z: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(z);
    let w = p * (1.0 - p);
    match objective {
        Objective::Logistic => (p - y, w),
        Objective::Brier => {
            let grad = 2.0 * (p - y) * w;
            let hess = 2.0 * w * (w + (p - y) * (1.0 - 2.0 * p));
            (grad, hess)
        }
    }
}

/// Regression-tree node; `Split` children are boxed so trees serialize
/// as nested JSON documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: alloc::boxed::Box<Node>,
        right: alloc::boxed::Box<Node>,
    },
}

impl Node {
    pub fn eval(&self, row: &[f64]) -> f64 {
        match self {
            Node::Leaf { value } => *value,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] < *threshold {
                    left.eval(row)
                } else {
                    right.eval(row)
                }
            }
        }
    }

    fn collect_features(&self, out: &mut Vec<usize>) {
        if let Node::Split {
            feature,
            left,
            right,
            ..
        } = self
        {
            if !out.contains(feature) {
                out.push(*feature);
            }
            left.collect_features(out);
            right.collect_features(out);
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: Node,
}

impl Tree {
    pub fn eval(&self, row: &[f64]) -> f64 {
        self.root.eval(row)
    }

    /// Distinct feature indices used by splits, in first-visit order.
    pub fn used_features(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.root.collect_features(&mut out);
        out
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }
}

/// How the ensemble margin maps to the reported score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logistic,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub link: Link,
    pub n_features: usize,
    pub group_mode: GroupMode,
    pub n_groups: usize,
    pub params: GbtParams,
    pub seed: u64,
}

impl GbtModel {
    /// Raw additive margin before the link.
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.eval(row)).sum::<f64>()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.link {
            Link::Logistic => clip_unit(sigmoid(self.margin_row(row))),
            Link::Identity => self.margin_row(row),
        }
    }

    pub fn predict(&self, features: &Matrix, groups: Option<&[usize]>) -> Result<Vec<f64>> {
        let matrix = inference_matrix(
            features,
            groups,
            self.group_mode,
            self.n_groups,
            self.n_features,
        )?;
        Ok((0..matrix.n_rows())
            .map(|i| self.predict_row(matrix.row(i)))
            .collect())
    }
}

/// Per-feature histogram cut points computed from training quantiles.
struct Binning {
    cuts: Vec<Vec<f64>>,
}

impl Binning {
    fn from_matrix(matrix: &Matrix, max_bin: usize) -> Self {
        let n = matrix.n_rows();
        let cuts = (0..matrix.n_cols())
            .map(|j| {
                let mut values = matrix.column(j);
                values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
                values.dedup();
                let mut cuts = Vec::new();
                if values.len() <= max_bin {
                    for w in values.windows(2) {
                        cuts.push(0.5 * (w[0] + w[1]));
                    }
                } else {
                    // Quantile boundaries over the raw (duplicated) column.
                    let column = matrix.column(j);
                    let mut sorted = column;
                    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
                    for k in 1..max_bin {
                        let pos = k * n / max_bin;
                        let cut = 0.5 * (sorted[pos - 1] + sorted[pos]);
                        if sorted[pos - 1] < sorted[pos] && cuts.last() != Some(&cut) {
                            cuts.push(cut);
                        }
                    }
                }
                cuts
            })
            .collect();
        Binning { cuts }
    }

    /// Bin index of value `v` for feature `j`: number of cuts <= v.
    fn bin(&self, j: usize, v: f64) -> usize {
        self.cuts[j].partition_point(|&c| c <= v)
    }

    fn n_bins(&self, j: usize) -> usize {
        self.cuts[j].len() + 1
    }
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
    left_rows: Vec<usize>,
    right_rows: Vec<usize>,
}

/// Scans every candidate column for the best histogram split of `rows`.
#[allow(clippy::too_many_arguments)]
fn best_split(
    binned: &[Vec<usize>],
    binning: &Binning,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    weights: &[f64],
    columns: &[usize],
    min_split_loss: f64,
) -> Option<SplitChoice> {
    let total_g: f64 = rows.iter().map(|&i| weights[i] * grad[i]).sum();
    let total_h: f64 = rows.iter().map(|&i| weights[i] * hess[i]).sum();
    let parent_score = total_g * total_g / (total_h + LAMBDA);

    let mut best: Option<(usize, usize, f64)> = None;
    for &j in columns {
        let n_bins = binning.n_bins(j);
        if n_bins < 2 {
            continue;
        }
        let mut bin_g = alloc::vec![0.0; n_bins];
        let mut bin_h = alloc::vec![0.0; n_bins];
        let mut bin_c = alloc::vec![0usize; n_bins];
        for &i in rows {
            let b = binned[j][i];
            bin_g[b] += weights[i] * grad[i];
            bin_h[b] += weights[i] * hess[i];
            bin_c[b] += 1;
        }
        let mut left_g = 0.0;
        let mut left_h = 0.0;
        let mut left_c = 0usize;
        for b in 0..n_bins - 1 {
            left_g += bin_g[b];
            left_h += bin_h[b];
            left_c += bin_c[b];
            if left_c == 0 || left_c == rows.len() {
                continue;
            }
            let right_g = total_g - left_g;
            let right_h = total_h - left_h;
            let gain = 0.5
                * (left_g * left_g / (left_h + LAMBDA) + right_g * right_g / (right_h + LAMBDA)
                    - parent_score);
            let better = match best {
                None => gain > min_split_loss,
                Some((_, _, g)) => gain > min_split_loss && gain > g,
            };
            if better {
                best = Some((j, b, gain));
            }
        }
    }

    best.map(|(feature, boundary, gain)| {
        let threshold = binning.cuts[feature][boundary];
        let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
        for &i in rows {
            if binned[feature][i] <= boundary {
                left_rows.push(i);
            } else {
                right_rows.push(i);
            }
        }
        SplitChoice {
            feature,
            threshold,
            gain,
            left_rows,
            right_rows,
        }
    })
}

fn leaf_value(rows: &[usize], grad: &[f64], hess: &[f64], weights: &[f64], eta: f64) -> f64 {
    let g: f64 = rows.iter().map(|&i| weights[i] * grad[i]).sum();
    let h: f64 = rows.iter().map(|&i| weights[i] * hess[i]).sum();
    -eta * g / (h + LAMBDA)
}

/// Arena node used while growing; converted to the nested form after.
struct OpenNode {
    rows: Vec<usize>,
    depth: usize,
    resolved: Option<ResolvedNode>,
}

enum ResolvedNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

fn arena_to_node(arena: &[OpenNode], idx: usize) -> Node {
    match arena[idx].resolved.as_ref().expect("node resolved") {
        ResolvedNode::Leaf(value) => Node::Leaf { value: *value },
        ResolvedNode::Split {
            feature,
            threshold,
            left,
            right,
        } => Node::Split {
            feature: *feature,
            threshold: *threshold,
            left: alloc::boxed::Box::new(arena_to_node(arena, *left)),
            right: alloc::boxed::Box::new(arena_to_node(arena, *right)),
        },
    }
}

fn sample_columns(rng: &mut ChaCha8Rng, pool: &[usize], fraction: f64) -> Vec<usize> {
    if fraction >= 1.0 {
        return pool.to_vec();
    }
    let k = ((fraction * pool.len() as f64).ceil() as usize).clamp(1, pool.len());
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(rng);
    shuffled.truncate(k);
    shuffled.sort_unstable();
    shuffled
}

#[allow(clippy::too_many_arguments)]
fn grow_tree(
    binned: &[Vec<usize>],
    binning: &Binning,
    rows: Vec<usize>,
    grad: &[f64],
    hess: &[f64],
    weights: &[f64],
    params: &GbtParams,
    level_columns: &[Vec<usize>],
) -> Tree {
    let mut arena = alloc::vec![OpenNode {
        rows,
        depth: 0,
        resolved: None,
    }];

    match params.grow_policy {
        GrowPolicy::Depthwise => {
            let mut frontier = alloc::collections::VecDeque::new();
            frontier.push_back(0usize);
            while let Some(idx) = frontier.pop_front() {
                let depth = arena[idx].depth;
                let split = if depth < params.max_depth {
                    best_split(
                        binned,
                        binning,
                        &arena[idx].rows,
                        grad,
                        hess,
                        weights,
                        &level_columns[depth],
                        params.min_split_loss,
                    )
                } else {
                    None
                };
                match split {
                    Some(choice) => {
                        let left = arena.len();
                        arena.push(OpenNode {
                            rows: choice.left_rows,
                            depth: depth + 1,
                            resolved: None,
                        });
                        let right = arena.len();
                        arena.push(OpenNode {
                            rows: choice.right_rows,
                            depth: depth + 1,
                            resolved: None,
                        });
                        arena[idx].resolved = Some(ResolvedNode::Split {
                            feature: choice.feature,
                            threshold: choice.threshold,
                            left,
                            right,
                        });
                        frontier.push_back(left);
                        frontier.push_back(right);
                    }
                    None => {
                        let value = leaf_value(&arena[idx].rows, grad, hess, weights, params.eta);
                        arena[idx].resolved = Some(ResolvedNode::Leaf(value));
                    }
                }
            }
        }
        GrowPolicy::LossGuide => {
            // Candidate expansions keyed by gain; best first.
            let mut candidates: Vec<(usize, SplitChoice)> = Vec::new();
            let push_candidate =
                |arena: &[OpenNode], idx: usize, out: &mut Vec<(usize, SplitChoice)>| {
                    let depth = arena[idx].depth;
                    if depth >= params.max_depth {
                        return;
                    }
                    if let Some(choice) = best_split(
                        binned,
                        binning,
                        &arena[idx].rows,
                        grad,
                        hess,
                        weights,
                        &level_columns[depth],
                        params.min_split_loss,
                    ) {
                        out.push((idx, choice));
                    }
                };
            push_candidate(&arena, 0, &mut candidates);
            while !candidates.is_empty() {
                let best_pos = candidates
                    .iter()
                    .enumerate()
                    .max_by(|(_, (_, a)), (_, (_, b))| {
                        a.gain
                            .partial_cmp(&b.gain)
                            .unwrap_or(core::cmp::Ordering::Equal)
                    })
                    .map(|(pos, _)| pos)
                    .unwrap();
                let (idx, choice) = candidates.swap_remove(best_pos);
                let depth = arena[idx].depth;
                let left = arena.len();
                arena.push(OpenNode {
                    rows: choice.left_rows,
                    depth: depth + 1,
                    resolved: None,
                });
                let right = arena.len();
                arena.push(OpenNode {
                    rows: choice.right_rows,
                    depth: depth + 1,
                    resolved: None,
                });
                arena[idx].resolved = Some(ResolvedNode::Split {
                    feature: choice.feature,
                    threshold: choice.threshold,
                    left,
                    right,
                });
                push_candidate(&arena, left, &mut candidates);
                push_candidate(&arena, right, &mut candidates);
            }
        }
    }

    // Everything unresolved becomes a leaf.
    for idx in 0..arena.len() {
        if arena[idx].resolved.is_none() {
            let value = leaf_value(&arena[idx].rows, grad, hess, weights, params.eta);
            arena[idx].resolved = Some(ResolvedNode::Leaf(value));
        }
    }
    Tree {
        root: arena_to_node(&arena, 0),
    }
}

/// Trains a gradient-boosted ensemble by Newton boosting over
/// histogram-quantized features. With `calibration_loss_weight > 0`
/// and `dro_eta > 0`, group weights update once per round from the
/// per-group mean Brier loss and scale the sample weights by
/// `G * q_g`.
pub fn gbt_train(
    data: &TrainData,
    params: &GbtParams,
    group_mode: GroupMode,
    seed: u64,
) -> Result<GbtModel> {
    params.validate()?;
    data.validate()?;
    let matrix = data.model_matrix(group_mode)?;
    let n = matrix.n_rows();
    let p = matrix.n_cols();
    let labels: Vec<f64> = data.labels.iter().map(|&y| y as f64).collect();

    if params.dro_active() && data.groups.is_none() {
        return Err(Error::invalid_input(
            "group-robust boosting requires group ids",
        ));
    }

    let binning = Binning::from_matrix(&matrix, params.max_bin);
    let binned: Vec<Vec<usize>> = (0..p)
        .map(|j| (0..n).map(|i| binning.bin(j, matrix.get(i, j))).collect())
        .collect();

    let base_rate = labels.iter().sum::<f64>() / n as f64;
    let base_score = logit(base_rate);
    let mut margins = alloc::vec![base_score; n];
    let mut weights = alloc::vec![1.0f64; n];
    let mut q = GroupWeights::uniform(data.n_groups.max(1));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all_columns: Vec<usize> = (0..p).collect();
    let gamma = params.calibration_loss_weight;
    let mut trees = Vec::with_capacity(params.boosting_rounds);

    for _round in 0..params.boosting_rounds {
        if params.dro_active() {
            let groups = data.groups.expect("checked above");
            let g_count = data.n_groups.max(1);
            let mut loss = alloc::vec![0.0f64; g_count];
            let mut count = alloc::vec![0usize; g_count];
            for i in 0..n {
                let p_i = sigmoid(margins[i]);
                loss[groups[i]] += (p_i - labels[i]) * (p_i - labels[i]);
                count[groups[i]] += 1;
            }
            for g in 0..g_count {
                if count[g] > 0 {
                    loss[g] /= count[g] as f64;
                }
            }
            q = group_dro_step(&q, &loss, params.dro_eta)?;
            for i in 0..n {
                weights[i] = g_count as f64 * q.q[groups[i]];
            }
        }

        let mut grad = alloc::vec![0.0f64; n];
        let mut hess = alloc::vec![0.0f64; n];
        for i in 0..n {
            let (g, h) = objective_grad_hess(params.objective, margins[i], labels[i]);
            grad[i] = g;
            hess[i] = h;
            if params.objective == Objective::Logistic && gamma > 0.0 {
                let (gb, hb) = objective_grad_hess(Objective::Brier, margins[i], labels[i]);
                grad[i] += gamma * gb;
                hess[i] += gamma * hb;
            }
        }

        let tree_columns = sample_columns(&mut rng, &all_columns, params.colsample_bytree);
        let level_columns: Vec<Vec<usize>> = (0..params.max_depth)
            .map(|_| sample_columns(&mut rng, &tree_columns, params.colsample_bylevel))
            .collect();

        let tree = grow_tree(
            &binned,
            &binning,
            (0..n).collect(),
            &grad,
            &hess,
            &weights,
            params,
            &level_columns,
        );
        for i in 0..n {
            margins[i] += tree.eval(matrix.row(i));
        }
        trees.push(tree);
    }

    Ok(GbtModel {
        trees,
        base_score,
        link: Link::Logistic,
        n_features: p,
        group_mode,
        n_groups: data.n_groups,
        params: params.clone(),
        seed,
    })
}

/// Fits a single squared-error regression tree (identity link); used
/// by the multicalibration residual models.
pub fn fit_regression_tree(
    features: &Matrix,
    targets: &[f64],
    max_depth: usize,
    max_bin: usize,
) -> Result<GbtModel> {
    if features.n_rows() == 0 || features.n_rows() != targets.len() {
        return Err(Error::invalid_input(
            "regression tree needs aligned nonempty features/targets",
        ));
    }
    let params = GbtParams {
        eta: 1.0,
        max_depth,
        max_bin,
        grow_policy: GrowPolicy::Depthwise,
        boosting_rounds: 1,
        ..GbtParams::default()
    };
    let n = features.n_rows();
    let p = features.n_cols();
    let binning = Binning::from_matrix(features, max_bin);
    let binned: Vec<Vec<usize>> = (0..p)
        .map(|j| (0..n).map(|i| binning.bin(j, features.get(i, j))).collect())
        .collect();
    // Squared error from a zero base: gradient -y, unit Hessian.
    let grad: Vec<f64> = targets.iter().map(|&t| -t).collect();
    let hess = alloc::vec![1.0f64; n];
    let weights = alloc::vec![1.0f64; n];
    let level_columns: Vec<Vec<usize>> = (0..max_depth).map(|_| (0..p).collect()).collect();
    let tree = grow_tree(
        &binned,
        &binning,
        (0..n).collect(),
        &grad,
        &hess,
        &weights,
        &params,
        &level_columns,
    );
    Ok(GbtModel {
        trees: alloc::vec![tree],
        base_score: 0.0,
        link: Link::Identity,
        n_features: p,
        group_mode: GroupMode::None,
        n_groups: 1,
        params,
        seed: 0,
    })
}
