//! End-to-end benchmark engine: the five-step protocol (split, tune,
//! fit, intervene, evaluate) over methods and group-data availability
//! regimes, with a group-access audit, trial aggregation, Pareto
//! analysis, and the cross-dataset summary.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use core::cell::RefCell;

#[allow(unused_imports)] // trait needed for float math under no_std
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::calibrators::{Calibrator, CalibratorSpec};
use crate::data::{split, Dataset, Matrix, SplitAssignment};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy, ecce, worst_group, zip_samples, EcceVariant, MetricKind, MetricSpec,
};
use crate::models::{
    fit_tuned, gbt_search_space, mlp_search_space, tune, GbtParams, GroupMode, LossSpec, MlpParams,
    Model, Objective, SearchSpace, TrainData, TuneModelKind, TuneObjective,
};
use crate::multical::{default_mc_candidates, mc_apply, mc_select, McConfig, UpdateSequence};

/// Group-data availability, ordered from least to most access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    None,
    Val,
    TrainVal,
    TrainValInf,
}

impl Regime {
    pub fn rank(&self) -> usize {
        match self {
            Regime::None => 0,
            Regime::Val => 1,
            Regime::TrainVal => 2,
            Regime::TrainValInf => 3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::None => "none",
            Regime::Val => "val",
            Regime::TrainVal => "train_val",
            Regime::TrainValInf => "train_val_inf",
        }
    }

    /// Table label, matching the benchmark write-up convention.
    pub fn label(&self) -> &'static str {
        match self {
            Regime::None => "None",
            Regime::Val => "Val",
            Regime::TrainVal => "Train+Val",
            Regime::TrainValInf => "Train+Val+Inf",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "none" => Regime::None,
            "val" => Regime::Val,
            "train_val" => Regime::TrainVal,
            "train_val_inf" => Regime::TrainValInf,
            other => return Err(Error::invalid_config(format!("unknown regime: {other}"))),
        })
    }

    pub const ALL: [Regime; 4] = [
        Regime::None,
        Regime::Val,
        Regime::TrainVal,
        Regime::TrainValInf,
    ];
}

/// Pipeline stages that may read the group column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Train,
    Tune,
    CalibrationFit,
    Inference,
    /// Test-time metric evaluation; always permitted, since worst-group
    /// measurement needs groups by definition.
    Evaluation,
}

pub fn regime_permits(regime: Regime, stage: Stage) -> bool {
    match stage {
        Stage::Evaluation => true,
        Stage::Tune | Stage::CalibrationFit => regime >= Regime::Val,
        Stage::Train => regime >= Regime::TrainVal,
        Stage::Inference => regime >= Regime::TrainValInf,
    }
}

/// Base model family for a benchmark method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseModel {
    Gbt,
    Mlp,
}

/// The predictive-parity intervention a method applies on top of (or
/// instead of) plain accuracy-tuned training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "intervention", rename_all = "snake_case")]
pub enum Intervention {
    /// Baseline: tune for accuracy, no further processing.
    TuneForAccuracy,
    /// Tune the base model for overall ECCE.
    TuneForOverallEcce,
    /// Tune the base model for worst-group ECCE (validation groups).
    TuneForWorstGroupEcce,
    /// Overall post-hoc calibrator fitted on validation scores.
    Calibrator { spec: CalibratorSpec },
    /// Independent calibrator per group, routed by group at inference.
    PerGroupCalibrator { inner: CalibratorSpec },
    /// Score-only boosted calibrator trained with group-DRO weights.
    GroupRobustCalibrator { params: GbtParams },
    /// Group indicators appended to the features everywhere.
    GroupAsFeature,
    /// Calibration-regularized training (Brier term for boosting, MMCE
    /// term for the MLP); no group data.
    CalibrationLossTraining,
    /// Joint BCE + worst-group calibration loss via group DRO.
    GroupRobustTraining,
    /// Iterative score correction selected on a 70/30 validation split.
    Multicalibration { candidates: usize },
}

impl Intervention {
    /// Minimum availability regime the intervention needs.
    pub fn required_regime(&self) -> Regime {
        match self {
            Intervention::TuneForAccuracy
            | Intervention::TuneForOverallEcce
            | Intervention::Calibrator { .. }
            | Intervention::CalibrationLossTraining
            | Intervention::Multicalibration { .. } => Regime::None,
            Intervention::TuneForWorstGroupEcce | Intervention::GroupRobustCalibrator { .. } => {
                Regime::Val
            }
            Intervention::GroupRobustTraining => Regime::TrainVal,
            Intervention::PerGroupCalibrator { .. } | Intervention::GroupAsFeature => {
                Regime::TrainValInf
            }
        }
    }

    fn default_tune_objective(&self) -> TuneObjective {
        match self {
            Intervention::TuneForOverallEcce | Intervention::CalibrationLossTraining => {
                TuneObjective::OverallEcce
            }
            Intervention::TuneForWorstGroupEcce | Intervention::GroupRobustTraining => {
                TuneObjective::WorstGroupEcce
            }
            _ => TuneObjective::Accuracy,
        }
    }
}

/// One benchmark method: a base model, a declared regime, and an
/// intervention, plus optional desk-scale overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub id: String,
    pub regime: Regime,
    pub model: BaseModel,
    #[serde(flatten)]
    pub intervention: Intervention,
    #[serde(default)]
    pub tune_objective: Option<TuneObjective>,
    #[serde(default)]
    pub tune_trials: Option<usize>,
    #[serde(default)]
    pub search_space: Option<SearchSpace>,
    #[serde(default)]
    pub base_gbt: Option<GbtParams>,
    #[serde(default)]
    pub base_mlp: Option<MlpParams>,
}

impl MethodSpec {
    pub fn new(id: &str, regime: Regime, model: BaseModel, intervention: Intervention) -> Self {
        MethodSpec {
            id: id.to_string(),
            regime,
            model,
            intervention,
            tune_objective: None,
            tune_trials: None,
            search_space: None,
            base_gbt: None,
            base_mlp: None,
        }
    }

    pub fn tune_objective(&self) -> TuneObjective {
        self.tune_objective
            .unwrap_or_else(|| self.intervention.default_tune_objective())
    }

    /// Static regime consistency check; a spec declaring less access
    /// than its components read is rejected before anything runs.
    pub fn validate(&self) -> Result<()> {
        let required = self.intervention.required_regime();
        if self.regime < required {
            return Err(Error::RegimeViolation {
                stage: format!("method {} requires regime {}", self.id, required.as_str()),
                regime: self.regime.as_str().to_string(),
            });
        }
        if self.tune_objective() == TuneObjective::WorstGroupEcce && self.regime < Regime::Val {
            return Err(Error::RegimeViolation {
                stage: format!("method {} tunes on validation groups", self.id),
                regime: self.regime.as_str().to_string(),
            });
        }
        Ok(())
    }
}

/// Append-only record of granted group reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub method: String,
    pub trial: usize,
    pub stage: Stage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub entries: Vec<AuditEntry>,
}

/// Scoped accessor for the group column: hands out groups only for
/// stages the regime permits, recording every grant.
struct GroupAccess<'a> {
    groups: &'a [usize],
    regime: Regime,
    reads: RefCell<Vec<Stage>>,
}

impl<'a> GroupAccess<'a> {
    fn new(groups: &'a [usize], regime: Regime) -> Self {
        GroupAccess {
            groups,
            regime,
            reads: RefCell::new(Vec::new()),
        }
    }

    fn groups_for(&self, stage: Stage) -> Result<&'a [usize]> {
        if !regime_permits(self.regime, stage) {
            return Err(Error::RegimeViolation {
                stage: format!("{stage:?}"),
                regime: self.regime.as_str().to_string(),
            });
        }
        self.reads.borrow_mut().push(stage);
        Ok(self.groups)
    }

    fn into_reads(self) -> Vec<Stage> {
        self.reads.into_inner()
    }
}

/// Per-trial evaluation of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    /// Worst-group value per requested CE metric.
    pub worst_group_ce: Vec<(MetricKind, f64)>,
    /// Worst group id under the primary metric (mean-variant ECCE).
    pub worst_group_id: usize,
    /// Overall mean-variant ECCE.
    pub overall_ce: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub regime: Regime,
    pub model: BaseModel,
    pub trials: Vec<TrialMetrics>,
    pub mean_worst_group: Vec<(MetricKind, f64)>,
    pub std_worst_group: Vec<(MetricKind, f64)>,
    pub mean_overall: f64,
    pub std_overall: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

impl MethodResult {
    pub fn mean_worst_group_for(&self, kind: MetricKind) -> Option<f64> {
        self.mean_worst_group
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, v)| *v)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Experiment-wide knobs with protocol defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub ratios: (f64, f64, f64),
    pub tune_trials: usize,
    /// Worst-group CE metrics evaluated on test.
    pub metric_kinds: Vec<MetricKind>,
    /// Candidate configs drawn for multicalibration selection.
    pub mc_candidates: usize,
    /// 0 evaluates MMCE exactly; otherwise sampled pairs.
    pub mmce_eval_pairs: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            ratios: (0.6, 0.2, 0.2),
            tune_trials: 20,
            metric_kinds: alloc::vec![MetricKind::EcceMean, MetricKind::Msce, MetricKind::Mmce],
            mc_candidates: 20,
            mmce_eval_pairs: 0,
        }
    }
}

fn metric_spec_for(kind: MetricKind, options: &ExperimentOptions, seed: u64) -> Result<MetricSpec> {
    Ok(match kind {
        MetricKind::Ece => MetricSpec::Ece {
            bins: 10,
            scheme: crate::metrics::BinningScheme::EqualWidth,
        },
        MetricKind::EcceMean => MetricSpec::EcceMean,
        MetricKind::EcceMax => MetricSpec::EcceMax,
        MetricKind::Msce => MetricSpec::Msce,
        MetricKind::Mmce => MetricSpec::Mmce {
            kernel_width: crate::metrics::DEFAULT_MMCE_KERNEL_WIDTH,
            sampled_pairs: options.mmce_eval_pairs,
            seed: if options.mmce_eval_pairs > 0 {
                Some(seed)
            } else {
                None
            },
        },
        MetricKind::Brier => MetricSpec::Brier,
        MetricKind::Accuracy => MetricSpec::Accuracy { threshold: 0.5 },
    })
}

struct TrialContext<'a> {
    dataset: &'a Dataset,
    assignment: &'a SplitAssignment,
    train_features: Matrix,
    train_labels: Vec<u8>,
    train_groups: Vec<usize>,
    val_features: Matrix,
    val_labels: Vec<u8>,
    val_groups: Vec<usize>,
    test_features: Matrix,
    test_labels: Vec<u8>,
    test_groups: Vec<usize>,
}

impl<'a> TrialContext<'a> {
    fn build(dataset: &'a Dataset, assignment: &'a SplitAssignment) -> Self {
        let gather = |rows: &[usize]| {
            (
                dataset.features.select_rows(rows),
                rows.iter().map(|&i| dataset.labels[i]).collect::<Vec<u8>>(),
                rows.iter()
                    .map(|&i| dataset.groups[i])
                    .collect::<Vec<usize>>(),
            )
        };
        let (train_features, train_labels, train_groups) = gather(&assignment.train);
        let (val_features, val_labels, val_groups) = gather(&assignment.val);
        let (test_features, test_labels, test_groups) = gather(&assignment.test);
        TrialContext {
            dataset,
            assignment,
            train_features,
            train_labels,
            train_groups,
            val_features,
            val_labels,
            val_groups,
            test_features,
            test_labels,
            test_groups,
        }
    }
}

/// Derives a stream-distinct seed for a pipeline component.
fn derive_seed(base: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over base ^ rotated salt
    let mut z = base ^ salt.rotate_left(17);
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Runs one method on one prepared trial. Returns the trial metrics
/// and the audited group-read stages.
pub fn run_method_trial(
    spec: &MethodSpec,
    ctx_dataset: &Dataset,
    assignment: &SplitAssignment,
    options: &ExperimentOptions,
    trial: usize,
    trial_seed: u64,
) -> Result<(TrialMetrics, Vec<Stage>)> {
    spec.validate()?;
    let ctx = TrialContext::build(ctx_dataset, assignment);
    let _ = (&ctx.dataset, &ctx.assignment);
    let n_groups = ctx_dataset.n_groups();

    let train_access = GroupAccess::new(&ctx.train_groups, spec.regime);
    let val_access = GroupAccess::new(&ctx.val_groups, spec.regime);
    let test_access = GroupAccess::new(&ctx.test_groups, spec.regime);

    let group_mode = match spec.intervention {
        Intervention::GroupAsFeature => GroupMode::AsFeature,
        _ => GroupMode::None,
    };

    // Assemble the base training configuration.
    let uses_group_dro_training = matches!(spec.intervention, Intervention::GroupRobustTraining);
    let uses_calibration_loss = matches!(
        spec.intervention,
        Intervention::CalibrationLossTraining | Intervention::GroupRobustTraining
    );
    let kind = match spec.model {
        BaseModel::Gbt => {
            let mut base = spec.base_gbt.clone().unwrap_or_default();
            base.objective = Objective::Logistic;
            if !uses_calibration_loss {
                base.calibration_loss_weight = 0.0;
            }
            if !uses_group_dro_training {
                base.dro_eta = 0.0;
            }
            TuneModelKind::Gbt { base, group_mode }
        }
        BaseModel::Mlp => {
            let base = spec.base_mlp.clone().unwrap_or_default();
            let loss = if uses_group_dro_training {
                LossSpec::GroupDro { mmce_only: false }
            } else if uses_calibration_loss {
                LossSpec::BceMmce
            } else {
                LossSpec::Bce
            };
            TuneModelKind::Mlp {
                base,
                loss,
                group_mode,
            }
        }
    };
    let space = match &spec.search_space {
        Some(s) => s.clone(),
        None => match spec.model {
            BaseModel::Gbt => gbt_search_space(uses_calibration_loss, uses_group_dro_training),
            BaseModel::Mlp => mlp_search_space(uses_calibration_loss, uses_group_dro_training),
        },
    };

    // Group columns for training and tuning, gated by the audit.
    let needs_train_groups = uses_group_dro_training || group_mode == GroupMode::AsFeature;
    let train_groups: Option<&[usize]> = if needs_train_groups {
        Some(train_access.groups_for(Stage::Train)?)
    } else {
        None
    };
    // Predicting validation rows with group indicators is an
    // inference-time group read.
    let val_groups_for_predict: Option<&[usize]> = if group_mode == GroupMode::AsFeature {
        Some(val_access.groups_for(Stage::Inference)?)
    } else {
        None
    };
    let objective = spec.tune_objective();
    let val_groups_for_tuning: Option<&[usize]> = if objective == TuneObjective::WorstGroupEcce {
        Some(val_access.groups_for(Stage::Tune)?)
    } else {
        None
    };
    let tune_val_groups = match (val_groups_for_predict, val_groups_for_tuning) {
        (Some(g), _) => Some(g),
        (None, Some(g)) => Some(g),
        (None, None) => None,
    };
    // With group indicators the tuner predicts with groups but must
    // still only *score* with them when the objective allows it; both
    // stages are permitted whenever as_feature is legal (TrainValInf).

    let mut train = TrainData::new(&ctx.train_features, &ctx.train_labels);
    if let Some(groups) = train_groups {
        train = train.with_groups(groups, n_groups);
    }

    let tune_seed = derive_seed(trial_seed, 1);
    let outcome = tune(
        &train,
        &ctx.val_features,
        &ctx.val_labels,
        tune_val_groups,
        &kind,
        &space,
        objective,
        spec.tune_trials.unwrap_or(options.tune_trials),
        tune_seed,
    )?;
    let model: Model = fit_tuned(&outcome.params, &kind, &train, outcome.train_seed)?;

    // Post-hoc interventions on validation scores.
    enum PostProcess {
        None,
        Calibrated(Calibrator),
        Sequence(UpdateSequence),
    }

    let post = match &spec.intervention {
        Intervention::Calibrator { spec: cal_spec } => {
            let val_scores = model.predict(&ctx.val_features, val_groups_for_predict)?;
            PostProcess::Calibrated(Calibrator::fit(
                cal_spec,
                &val_scores,
                &ctx.val_labels,
                None,
            )?)
        }
        Intervention::PerGroupCalibrator { inner } => {
            let val_scores = model.predict(&ctx.val_features, val_groups_for_predict)?;
            let groups = val_access.groups_for(Stage::CalibrationFit)?;
            PostProcess::Calibrated(Calibrator::fit(
                &CalibratorSpec::PerGroup {
                    inner: alloc::boxed::Box::new(inner.clone()),
                },
                &val_scores,
                &ctx.val_labels,
                Some(groups),
            )?)
        }
        Intervention::GroupRobustCalibrator { params } => {
            let val_scores = model.predict(&ctx.val_features, val_groups_for_predict)?;
            let groups = val_access.groups_for(Stage::CalibrationFit)?;
            PostProcess::Calibrated(Calibrator::fit(
                &CalibratorSpec::GroupRobust {
                    params: params.clone(),
                },
                &val_scores,
                &ctx.val_labels,
                Some(groups),
            )?)
        }
        Intervention::Multicalibration { candidates } => {
            let val_scores = model.predict(&ctx.val_features, val_groups_for_predict)?;
            let configs: Vec<McConfig> =
                default_mc_candidates(*candidates.max(&1), derive_seed(trial_seed, 2));
            let (_, sequence) = mc_select(
                &val_scores,
                &ctx.val_features,
                &ctx.val_labels,
                &configs,
                derive_seed(trial_seed, 3),
            )?;
            PostProcess::Sequence(sequence)
        }
        _ => PostProcess::None,
    };

    // Test-time prediction and intervention application.
    let test_groups_for_predict: Option<&[usize]> = if group_mode == GroupMode::AsFeature {
        Some(test_access.groups_for(Stage::Inference)?)
    } else {
        None
    };
    let mut test_scores = model.predict(&ctx.test_features, test_groups_for_predict)?;
    match &post {
        PostProcess::None => {}
        PostProcess::Calibrated(calibrator) => {
            let needs_groups = matches!(calibrator, Calibrator::PerGroup(_));
            let groups = if needs_groups {
                Some(test_access.groups_for(Stage::Inference)?)
            } else {
                None
            };
            test_scores = calibrator.apply_all(&test_scores, groups)?;
        }
        PostProcess::Sequence(sequence) => {
            test_scores = mc_apply(sequence, &test_scores, &ctx.test_features)?;
        }
    }

    // Evaluation always sees groups.
    let eval_groups = test_access.groups_for(Stage::Evaluation)?;
    let samples = zip_samples(&test_scores, &ctx.test_labels, Some(eval_groups));
    let mut worst_group_ce = Vec::with_capacity(options.metric_kinds.len());
    let mut worst_group_id = 0usize;
    for (k, kind) in options.metric_kinds.iter().enumerate() {
        let metric_spec = metric_spec_for(*kind, options, derive_seed(trial_seed, 100 + k as u64))?;
        let (value, gid) = worst_group(&samples, &metric_spec)?;
        if *kind == MetricKind::EcceMean {
            worst_group_id = gid;
        }
        worst_group_ce.push((*kind, value.value));
    }
    let overall_ce = ecce(&samples, EcceVariant::Mean)?.value;
    let acc = accuracy(&samples, 0.5)?.value;

    let mut reads = train_access.into_reads();
    reads.extend(val_access.into_reads());
    reads.extend(test_access.into_reads());
    reads.sort_by_key(|s| *s as usize);
    reads.dedup();

    Ok((
        TrialMetrics {
            trial,
            worst_group_ce,
            worst_group_id,
            overall_ce,
            accuracy: acc,
        },
        reads,
    ))
}

/// Runs every method over `trials` seeded trials and aggregates.
pub fn run_experiment(
    dataset: &Dataset,
    specs: &[MethodSpec],
    trials: usize,
    base_seed: u64,
    options: &ExperimentOptions,
) -> Result<(Vec<MethodResult>, AuditLog)> {
    if trials == 0 {
        return Err(Error::invalid_config("need at least one trial"));
    }
    for spec in specs {
        spec.validate()?;
    }
    let mut audit = AuditLog::default();
    let mut per_method: Vec<Vec<TrialMetrics>> = alloc::vec![Vec::new(); specs.len()];
    for trial in 0..trials {
        let seed = base_seed.wrapping_add(trial as u64);
        let assignment = split(dataset, options.ratios, seed)?;
        for (m, spec) in specs.iter().enumerate() {
            let (metrics, reads) =
                run_method_trial(spec, dataset, &assignment, options, trial, seed).map_err(
                    |e| Error::MethodFailed {
                        method: spec.id.clone(),
                        trial,
                        source: alloc::boxed::Box::new(e),
                    },
                )?;
            for stage in reads {
                audit.entries.push(AuditEntry {
                    method: spec.id.clone(),
                    trial,
                    stage,
                });
            }
            per_method[m].push(metrics);
        }
    }

    let results = specs
        .iter()
        .zip(per_method)
        .map(|(spec, trials)| aggregate_trials(spec, trials))
        .collect();
    Ok((results, audit))
}

/// Folds per-trial metrics into a `MethodResult` (mean and sample
/// standard deviation; zero std for a single trial).
pub fn aggregate_trials(spec: &MethodSpec, trials: Vec<TrialMetrics>) -> MethodResult {
    let kinds: Vec<MetricKind> = trials[0].worst_group_ce.iter().map(|(k, _)| *k).collect();
    let mut mean_worst_group = Vec::with_capacity(kinds.len());
    let mut std_worst_group = Vec::with_capacity(kinds.len());
    for (idx, kind) in kinds.iter().enumerate() {
        let values: Vec<f64> = trials.iter().map(|t| t.worst_group_ce[idx].1).collect();
        let (mean, std) = mean_std(&values);
        mean_worst_group.push((*kind, mean));
        std_worst_group.push((*kind, std));
    }
    let (mean_overall, std_overall) =
        mean_std(&trials.iter().map(|t| t.overall_ce).collect::<Vec<_>>());
    let (mean_accuracy, std_accuracy) =
        mean_std(&trials.iter().map(|t| t.accuracy).collect::<Vec<_>>());
    MethodResult {
        method: spec.id.clone(),
        regime: spec.regime,
        model: spec.model,
        trials,
        mean_worst_group,
        std_worst_group,
        mean_overall,
        std_overall,
        mean_accuracy,
        std_accuracy,
    }
}

/// One point of the data-requirement / fairness trade-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub method: String,
    pub regime: Regime,
    /// Mean worst-group calibration error.
    pub y: f64,
}

impl ParetoPoint {
    /// `p` dominates `q`: no worse on either axis, better on one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        let r = self.regime.rank();
        let ro = other.regime.rank();
        r <= ro && self.y <= other.y && (r < ro || self.y < other.y)
    }
}

/// Membership flags for the non-dominated set, index-aligned with the
/// input.
pub fn pareto_flags(points: &[ParetoPoint]) -> Vec<bool> {
    points
        .iter()
        .map(|p| !points.iter().any(|q| q.dominates(p)))
        .collect()
}

/// The non-dominated subset, sorted by regime rank then y.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let flags = pareto_flags(points);
    let mut front: Vec<ParetoPoint> = points
        .iter()
        .zip(flags)
        .filter(|(_, keep)| *keep)
        .map(|(p, _)| p.clone())
        .collect();
    front.sort_by(|a, b| {
        a.regime
            .rank()
            .cmp(&b.regime.rank())
            .then(a.y.partial_cmp(&b.y).unwrap_or(core::cmp::Ordering::Equal))
            .then(a.method.cmp(&b.method))
    });
    front
}

/// Pareto points from aggregated results under one CE metric.
pub fn pareto_points(results: &[MethodResult], kind: MetricKind) -> Vec<ParetoPoint> {
    results
        .iter()
        .filter_map(|r| {
            r.mean_worst_group_for(kind).map(|y| ParetoPoint {
                method: r.method.clone(),
                regime: r.regime,
                y,
            })
        })
        .collect()
}

/// One summary row per availability regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub regime: Regime,
    pub n_methods: usize,
    pub times_optimal: usize,
    /// `"method (a/b)"`, or `"-"` when the regime never produced a
    /// Pareto-optimal best method.
    pub best_method: String,
    pub modal_tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metric: MetricKind,
    pub n_datasets: usize,
    pub rows: Vec<SummaryRow>,
}

/// Cross-dataset aggregation: per dataset, find the best method per
/// regime and mark regimes whose best point is Pareto-optimal; then
/// count optimal occurrences per regime and report the modal winning
/// method as `"method (a/b)"`.
pub fn summarize(results_by_dataset: &[(String, Vec<MethodResult>)], kind: MetricKind) -> Summary {
    let mut methods_per_regime: Vec<Vec<String>> = alloc::vec![Vec::new(); 4];
    // (regime rank) -> winning method ids on datasets where optimal
    let mut winners: Vec<Vec<String>> = alloc::vec![Vec::new(); 4];

    for (_, results) in results_by_dataset {
        for r in results {
            let bucket = &mut methods_per_regime[r.regime.rank()];
            if !bucket.contains(&r.method) {
                bucket.push(r.method.clone());
            }
        }
        // Best method per regime on this dataset.
        let mut best: [Option<&MethodResult>; 4] = [None, None, None, None];
        for r in results {
            if r.mean_worst_group_for(kind).is_none() {
                continue;
            }
            let slot = &mut best[r.regime.rank()];
            let replace = match slot {
                None => true,
                Some(current) => {
                    let curr = current.mean_worst_group_for(kind).unwrap();
                    let cand = r.mean_worst_group_for(kind).unwrap();
                    cand < curr || (cand == curr && r.method < current.method)
                }
            };
            if replace {
                *slot = Some(r);
            }
        }
        let points: Vec<ParetoPoint> = best
            .iter()
            .flatten()
            .map(|r| ParetoPoint {
                method: r.method.clone(),
                regime: r.regime,
                y: r.mean_worst_group_for(kind).unwrap(),
            })
            .collect();
        let flags = pareto_flags(&points);
        for (point, on_front) in points.iter().zip(flags) {
            if on_front {
                winners[point.regime.rank()].push(point.method.clone());
            }
        }
    }

    let rows = Regime::ALL
        .iter()
        .map(|regime| {
            let rank = regime.rank();
            let times_optimal = winners[rank].len();
            let (best_method, modal_tie) = if times_optimal == 0 {
                ("-".to_string(), false)
            } else {
                // Modal winner; ties break toward the lowest method id.
                let mut counts: Vec<(String, usize)> = Vec::new();
                for w in &winners[rank] {
                    match counts.iter_mut().find(|(m, _)| m == w) {
                        Some((_, c)) => *c += 1,
                        None => counts.push((w.clone(), 1)),
                    }
                }
                counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                let top = counts[0].1;
                let tie = counts.iter().filter(|(_, c)| *c == top).count() > 1;
                (
                    format!("{} ({}/{})", counts[0].0, counts[0].1, times_optimal),
                    tie,
                )
            };
            SummaryRow {
                regime: *regime,
                n_methods: methods_per_regime[rank].len(),
                times_optimal,
                best_method,
                modal_tie,
            }
        })
        .collect();

    Summary {
        metric: kind,
        n_datasets: results_by_dataset.len(),
        rows,
    }
}

/// Min/max mean accuracy per base-model family, for the frontier plot
/// subtitle.
pub fn accuracy_range(results: &[MethodResult]) -> Vec<(BaseModel, f64, f64)> {
    [BaseModel::Gbt, BaseModel::Mlp]
        .into_iter()
        .filter_map(|model| {
            let accs: Vec<f64> = results
                .iter()
                .filter(|r| r.model == model)
                .map(|r| r.mean_accuracy)
                .collect();
            if accs.is_empty() {
                return None;
            }
            let min = accs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some((model, min, max))
        })
        .collect()
}
