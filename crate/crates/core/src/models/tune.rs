//! Random-search hyperparameter tuning over the fixed grids, with the
//! starred defaults as trial one.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[allow(unused_imports)] // trait needed for float math under no_std
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::metrics::{ecce, worst_group, zip_samples, EcceVariant, MetricSpec};
use crate::models::{
    gbt_train, mlp_train, GbtParams, GroupMode, GrowPolicy, LossSpec, MlpParams, Model, TrainData,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Float(f64),
    Int(usize),
    Text(String),
}

impl ParamValue {
    fn as_f64(&self) -> Result<f64> {
        match self {
            ParamValue::Float(v) => Ok(*v),
            ParamValue::Int(v) => Ok(*v as f64),
            ParamValue::Text(t) => Err(Error::invalid_config(format!("expected number, got {t}"))),
        }
    }

    fn as_usize(&self) -> Result<usize> {
        match self {
            ParamValue::Int(v) => Ok(*v),
            ParamValue::Float(v) => Ok(*v as usize),
            ParamValue::Text(t) => Err(Error::invalid_config(format!("expected integer, got {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Choice {
        values: Vec<ParamValue>,
        default: usize,
    },
    LogUniform {
        lo: f64,
        hi: f64,
        default: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub entries: Vec<(String, Domain)>,
}

pub type ParamAssignment = Vec<(String, ParamValue)>;

impl SearchSpace {
    pub fn default_assignment(&self) -> ParamAssignment {
        self.entries
            .iter()
            .map(|(name, domain)| {
                let value = match domain {
                    Domain::Choice { values, default } => values[*default].clone(),
                    Domain::LogUniform { default, .. } => ParamValue::Float(*default),
                };
                (name.clone(), value)
            })
            .collect()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> ParamAssignment {
        self.entries
            .iter()
            .map(|(name, domain)| {
                let value = match domain {
                    Domain::Choice { values, .. } => values[rng.gen_range(0..values.len())].clone(),
                    Domain::LogUniform { lo, hi, .. } => {
                        let u = rng.gen_range(lo.ln()..hi.ln());
                        ParamValue::Float(u.exp())
                    }
                };
                (name.clone(), value)
            })
            .collect()
    }
}

fn choice_f(values: &[f64], default: usize) -> Domain {
    Domain::Choice {
        values: values.iter().map(|&v| ParamValue::Float(v)).collect(),
        default,
    }
}

fn choice_i(values: &[usize], default: usize) -> Domain {
    Domain::Choice {
        values: values.iter().map(|&v| ParamValue::Int(v)).collect(),
        default,
    }
}

/// The boosting grid; `calibration` and `dro` extend it with the
/// calibration-loss weight and DRO eta rows.
pub fn gbt_search_space(calibration: bool, dro: bool) -> SearchSpace {
    let mut entries = alloc::vec![
        ("eta".to_string(), choice_f(&[0.1, 0.3, 1.0], 1)),
        ("min_split_loss".to_string(), choice_f(&[0.0, 0.1, 0.5], 0)),
        ("max_depth".to_string(), choice_i(&[4, 6, 8], 1)),
        (
            "colsample_bytree".to_string(),
            choice_f(&[0.7, 0.9, 1.0], 2)
        ),
        (
            "colsample_bylevel".to_string(),
            choice_f(&[0.7, 0.9, 1.0], 2)
        ),
        ("max_bin".to_string(), choice_i(&[128, 256, 512], 2)),
        (
            "grow_policy".to_string(),
            Domain::Choice {
                values: alloc::vec![
                    ParamValue::Text("depthwise".to_string()),
                    ParamValue::Text("lossguide".to_string()),
                ],
                default: 1,
            }
        ),
        (
            "boosting_rounds".to_string(),
            choice_i(&[10, 25, 50, 100], 1)
        ),
    ];
    if calibration {
        entries.push((
            "calibration_loss_weight".to_string(),
            choice_f(&[1e-3, 1e-2, 1e-1, 1.0, 2.0], 2),
        ));
    }
    if dro {
        entries.push(("dro_eta".to_string(), choice_f(&[1.0, 2.0, 5.0, 10.0], 1)));
    }
    SearchSpace { entries }
}

/// The neural-network grid.
pub fn mlp_search_space(calibration: bool, dro: bool) -> SearchSpace {
    let mut entries = alloc::vec![
        (
            "layer1_units".to_string(),
            choice_i(&[16, 32, 64, 128, 256, 512], 3)
        ),
        (
            "layer2_units".to_string(),
            choice_i(&[16, 32, 64, 128, 256, 512], 2)
        ),
        (
            "learning_rate".to_string(),
            Domain::LogUniform {
                lo: 1e-4,
                hi: 1e-2,
                default: 1e-3,
            }
        ),
        (
            "l2_regularization".to_string(),
            Domain::LogUniform {
                lo: 1e-6,
                hi: 1e-2,
                default: 1e-5,
            }
        ),
        ("batch_size".to_string(), choice_i(&[64, 128, 512, 1024], 2)),
        ("num_epochs".to_string(), choice_i(&[10, 20, 30, 40, 50], 2)),
    ];
    if calibration {
        entries.push((
            "calibration_loss_weight".to_string(),
            Domain::LogUniform {
                lo: 1e-3,
                hi: 1.0,
                default: 1e-2,
            },
        ));
    }
    if dro {
        entries.push((
            "dro_eta".to_string(),
            Domain::LogUniform {
                lo: 1e-4,
                hi: 1.0,
                default: 1e-3,
            },
        ));
        entries.push((
            "dro_regularization".to_string(),
            Domain::LogUniform {
                lo: 1e-3,
                hi: 1.0,
                default: 1e-2,
            },
        ));
    }
    SearchSpace { entries }
}

/// Materializes boosting parameters from an assignment over `base`.
pub fn gbt_params_from(assignment: &ParamAssignment, base: &GbtParams) -> Result<GbtParams> {
    let mut params = base.clone();
    for (name, value) in assignment {
        match name.as_str() {
            "eta" => params.eta = value.as_f64()?,
            "min_split_loss" => params.min_split_loss = value.as_f64()?,
            "max_depth" => params.max_depth = value.as_usize()?,
            "colsample_bytree" => params.colsample_bytree = value.as_f64()?,
            "colsample_bylevel" => params.colsample_bylevel = value.as_f64()?,
            "max_bin" => params.max_bin = value.as_usize()?,
            "grow_policy" => {
                params.grow_policy = match value {
                    ParamValue::Text(t) if t == "depthwise" => GrowPolicy::Depthwise,
                    ParamValue::Text(t) if t == "lossguide" => GrowPolicy::LossGuide,
                    other => {
                        return Err(Error::invalid_config(format!(
                            "unknown grow policy {other:?}"
                        )))
                    }
                }
            }
            "boosting_rounds" => params.boosting_rounds = value.as_usize()?,
            "calibration_loss_weight" => params.calibration_loss_weight = value.as_f64()?,
            "dro_eta" => params.dro_eta = value.as_f64()?,
            other => {
                return Err(Error::invalid_config(format!(
                    "unknown gbt parameter {other}"
                )))
            }
        }
    }
    params.validate()?;
    Ok(params)
}

/// Materializes MLP parameters from an assignment over `base`.
pub fn mlp_params_from(assignment: &ParamAssignment, base: &MlpParams) -> Result<MlpParams> {
    let mut params = base.clone();
    for (name, value) in assignment {
        match name.as_str() {
            "layer1_units" => params.layer1_units = value.as_usize()?,
            "layer2_units" => params.layer2_units = value.as_usize()?,
            "learning_rate" => params.learning_rate = value.as_f64()?,
            "l2_regularization" => params.l2_regularization = value.as_f64()?,
            "batch_size" => params.batch_size = value.as_usize()?,
            "num_epochs" => params.num_epochs = value.as_usize()?,
            "calibration_loss_weight" => params.calibration_loss_weight = value.as_f64()?,
            "dro_eta" => params.dro_eta = value.as_f64()?,
            "dro_regularization" => params.dro_regularization = value.as_f64()?,
            other => {
                return Err(Error::invalid_config(format!(
                    "unknown mlp parameter {other}"
                )))
            }
        }
    }
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneObjective {
    Accuracy,
    OverallEcce,
    WorstGroupEcce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub assignment: ParamAssignment,
    pub trial_index: usize,
    /// Minimized score (negated for maximized objectives).
    pub score: f64,
    pub trial_seed: u64,
}

/// Runs `n_trials` of seeded random search, minimizing `score_fn`.
/// Trial 0 evaluates the grid defaults; ties keep the earlier trial.
pub fn tune_with(
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
    mut score_fn: impl FnMut(&ParamAssignment, u64) -> Result<f64>,
) -> Result<TuneResult> {
    if n_trials == 0 {
        return Err(Error::invalid_config("n_trials must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<TuneResult> = None;
    for trial in 0..n_trials {
        let trial_seed: u64 = rng.gen();
        let assignment = if trial == 0 {
            space.default_assignment()
        } else {
            space.sample(&mut rng)
        };
        let score = score_fn(&assignment, trial_seed)?;
        let replace = match &best {
            None => true,
            Some(b) => score < b.score,
        };
        if replace {
            best = Some(TuneResult {
                assignment,
                trial_index: trial,
                score,
                trial_seed,
            });
        }
    }
    Ok(best.expect("at least one trial ran"))
}

/// What `tune` fits on each trial.
#[derive(Debug, Clone)]
pub enum TuneModelKind {
    Gbt {
        base: GbtParams,
        group_mode: GroupMode,
    },
    Mlp {
        base: MlpParams,
        loss: LossSpec,
        group_mode: GroupMode,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TunedParams {
    Gbt(GbtParams),
    Mlp(MlpParams),
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub params: TunedParams,
    pub trial_index: usize,
    pub score: f64,
    pub train_seed: u64,
}

/// Fits a model from concrete tuned parameters.
pub fn fit_tuned(
    params: &TunedParams,
    kind: &TuneModelKind,
    train: &TrainData,
    seed: u64,
) -> Result<Model> {
    match (params, kind) {
        (TunedParams::Gbt(p), TuneModelKind::Gbt { group_mode, .. }) => {
            Ok(Model::Gbt(gbt_train(train, p, *group_mode, seed)?))
        }
        (
            TunedParams::Mlp(p),
            TuneModelKind::Mlp {
                loss, group_mode, ..
            },
        ) => {
            let (model, _) = mlp_train(train, p, *loss, *group_mode, seed)?;
            Ok(Model::Mlp(model))
        }
        _ => Err(Error::invalid_config(
            "tuned params do not match model kind",
        )),
    }
}

/// Random-search tuning: fit on train, score on validation, return the
/// winning configuration.
#[allow(clippy::too_many_arguments)]
pub fn tune(
    train: &TrainData,
    val_features: &Matrix,
    val_labels: &[u8],
    val_groups: Option<&[usize]>,
    kind: &TuneModelKind,
    space: &SearchSpace,
    objective: TuneObjective,
    n_trials: usize,
    seed: u64,
) -> Result<TuneOutcome> {
    if objective == TuneObjective::WorstGroupEcce && val_groups.is_none() {
        return Err(Error::invalid_config(
            "worst-group tuning objective requires validation groups",
        ));
    }
    let result = tune_with(space, n_trials, seed, |assignment, trial_seed| {
        let params = materialize(assignment, kind)?;
        let model = fit_tuned(&params, kind, train, trial_seed)?;
        let scores = model.predict(val_features, val_groups)?;
        score_objective(&scores, val_labels, val_groups, objective)
    })?;
    let params = materialize(&result.assignment, kind)?;
    Ok(TuneOutcome {
        params,
        trial_index: result.trial_index,
        score: result.score,
        train_seed: result.trial_seed,
    })
}

fn materialize(assignment: &ParamAssignment, kind: &TuneModelKind) -> Result<TunedParams> {
    Ok(match kind {
        TuneModelKind::Gbt { base, .. } => TunedParams::Gbt(gbt_params_from(assignment, base)?),
        TuneModelKind::Mlp { base, .. } => TunedParams::Mlp(mlp_params_from(assignment, base)?),
    })
}

/// Minimized validation score for an objective.
pub fn score_objective(
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    objective: TuneObjective,
) -> Result<f64> {
    let samples = zip_samples(scores, labels, groups);
    Ok(match objective {
        TuneObjective::Accuracy => -crate::metrics::accuracy(&samples, 0.5)?.value,
        TuneObjective::OverallEcce => ecce(&samples, EcceVariant::Mean)?.value,
        TuneObjective::WorstGroupEcce => worst_group(&samples, &MetricSpec::EcceMean)?.0.value,
    })
}
