//! Versioned TOML experiment configuration: datasets (file-backed or
//! synthetic), method specs, and run options.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use paritycal_core::calibrators::CalibratorSpec;
use paritycal_core::data::{synth_generate, Dataset, SynthConfig};
use paritycal_core::error::Error as CoreError;
use paritycal_core::harness::{BaseModel, ExperimentOptions, Intervention, MethodSpec, Regime};
use paritycal_core::metrics::{MetricKind, MetricSpec};
use paritycal_core::models::{
    Domain, GbtParams, GrowPolicy, MlpParams, ParamValue, SearchSpace, TuneObjective,
};

use crate::csvio::load_dataset_dropping;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub datasets: Vec<DatasetSection>,
    pub methods: Vec<MethodSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_tune_trials")]
    pub tune_trials: usize,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    #[serde(default = "default_mc_candidates")]
    pub mc_candidates: usize,
    #[serde(default)]
    pub mmce_eval_pairs: usize,
}

fn default_trials() -> usize {
    3
}
fn default_tune_trials() -> usize {
    20
}
fn default_ratios() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}
fn default_metrics() -> Vec<String> {
    vec!["ecce_mean".into(), "msce".into(), "mmce".into()]
}
fn default_mc_candidates() -> usize {
    20
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            trials: default_trials(),
            base_seed: 0,
            tune_trials: default_tune_trials(),
            ratios: default_ratios(),
            metrics: default_metrics(),
            mc_candidates: default_mc_candidates(),
            mmce_eval_pairs: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_group_column")]
    pub group_column: String,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    #[serde(default)]
    pub drop_columns: Vec<String>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

fn default_label_column() -> String {
    "label".into()
}
fn default_group_column() -> String {
    "group".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub id: String,
    pub model: String,
    pub regime: String,
    pub intervention: String,
    #[serde(default)]
    pub calibrator: Option<String>,
    #[serde(default)]
    pub tune_objective: Option<String>,
    #[serde(default)]
    pub tune_trials: Option<usize>,
    #[serde(default)]
    pub mc_candidates: Option<usize>,
    #[serde(default)]
    pub gbt: Option<GbtOverrides>,
    #[serde(default)]
    pub mlp: Option<MlpOverrides>,
    /// Optional grid override: parameter name to candidate values; the
    /// first value is the trial-one default.
    #[serde(default)]
    pub grid: Option<BTreeMap<String, Vec<toml::Value>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbtOverrides {
    pub eta: Option<f64>,
    pub min_split_loss: Option<f64>,
    pub max_depth: Option<usize>,
    pub colsample_bytree: Option<f64>,
    pub colsample_bylevel: Option<f64>,
    pub max_bin: Option<usize>,
    pub grow_policy: Option<String>,
    pub boosting_rounds: Option<usize>,
    pub calibration_loss_weight: Option<f64>,
    pub dro_eta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpOverrides {
    pub layer1_units: Option<usize>,
    pub layer2_units: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2_regularization: Option<f64>,
    pub batch_size: Option<usize>,
    pub num_epochs: Option<usize>,
    pub batch_norm: Option<bool>,
    pub calibration_loss_weight: Option<f64>,
    pub dro_eta: Option<f64>,
    pub dro_regularization: Option<f64>,
    pub mmce_kernel_width: Option<f64>,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(CoreError::InvalidConfig(msg.into()))
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let config: ExperimentConfig = toml::from_str(&text)
        .map_err(anyhow::Error::new)
        .context("invalid experiment config")?;
    if config.version != CONFIG_VERSION {
        return Err(config_error(format!(
            "unsupported config version {} (expected {CONFIG_VERSION})",
            config.version
        )));
    }
    if config.datasets.is_empty() {
        return Err(config_error("config lists no datasets"));
    }
    if config.methods.is_empty() {
        return Err(config_error("config lists no methods"));
    }
    Ok(config)
}

impl ExperimentConfig {
    pub fn options(&self) -> Result<ExperimentOptions> {
        let mut metric_kinds = Vec::new();
        for id in &self.experiment.metrics {
            let kind = MetricSpec::from_id(id).map_err(anyhow::Error::new)?.kind();
            metric_kinds.push(kind);
        }
        if !metric_kinds.contains(&MetricKind::EcceMean) {
            metric_kinds.insert(0, MetricKind::EcceMean);
        }
        Ok(ExperimentOptions {
            ratios: (
                self.experiment.ratios[0],
                self.experiment.ratios[1],
                self.experiment.ratios[2],
            ),
            tune_trials: self.experiment.tune_trials,
            metric_kinds,
            mc_candidates: self.experiment.mc_candidates,
            mmce_eval_pairs: self.experiment.mmce_eval_pairs,
        })
    }

    pub fn load_datasets(&self, config_dir: &Path) -> Result<Vec<(String, Dataset)>> {
        self.datasets
            .iter()
            .enumerate()
            .map(|(k, section)| {
                let dataset = match (&section.path, &section.synth) {
                    (Some(path), None) => {
                        let resolved = if path.is_absolute() {
                            path.clone()
                        } else {
                            config_dir.join(path)
                        };
                        load_dataset_dropping(
                            &resolved,
                            &section.label_column,
                            &section.group_column,
                            &section.categorical_columns,
                            &section.drop_columns,
                        )?
                    }
                    (None, Some(synth)) => synth_generate(synth).map_err(anyhow::Error::new)?.0,
                    _ => {
                        return Err(config_error(format!(
                            "dataset {k}: provide exactly one of `path` or `synth`"
                        )))
                    }
                };
                let name = section.name.clone().unwrap_or_else(|| {
                    section
                        .path
                        .as_ref()
                        .and_then(|p| p.file_stem())
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| format!("dataset{k}"))
                });
                Ok((name, dataset))
            })
            .collect()
    }

    pub fn method_specs(&self) -> Result<Vec<MethodSpec>> {
        let mut specs = Vec::with_capacity(self.methods.len());
        let mut seen = Vec::new();
        for section in &self.methods {
            if seen.contains(&section.id) {
                return Err(config_error(format!("duplicate method id {}", section.id)));
            }
            seen.push(section.id.clone());
            specs.push(parse_method(section)?);
        }
        Ok(specs)
    }
}

fn parse_method(section: &MethodSection) -> Result<MethodSpec> {
    let model = match section.model.as_str() {
        "gbt" => BaseModel::Gbt,
        "mlp" => BaseModel::Mlp,
        other => return Err(config_error(format!("unknown model kind {other}"))),
    };
    let regime = Regime::from_id(&section.regime).map_err(anyhow::Error::new)?;
    let calibrator_spec = |required: bool| -> Result<CalibratorSpec> {
        match (&section.calibrator, required) {
            (Some(id), _) => CalibratorSpec::from_id(id).map_err(anyhow::Error::new),
            (None, true) => Err(config_error(format!(
                "method {} needs a `calibrator` field",
                section.id
            ))),
            (None, false) => Ok(CalibratorSpec::Isotonic),
        }
    };
    let intervention = match section.intervention.as_str() {
        "tune_for_accuracy" => Intervention::TuneForAccuracy,
        "tune_for_overall_ecce" => Intervention::TuneForOverallEcce,
        "tune_for_worst_group_ecce" => Intervention::TuneForWorstGroupEcce,
        "calibrator" => Intervention::Calibrator {
            spec: calibrator_spec(true)?,
        },
        "per_group_calibrator" => Intervention::PerGroupCalibrator {
            inner: calibrator_spec(false)?,
        },
        "group_robust_calibrator" => Intervention::GroupRobustCalibrator {
            params: paritycal_core::calibrators::default_group_robust_params(),
        },
        "group_as_feature" => Intervention::GroupAsFeature,
        "calibration_loss" => Intervention::CalibrationLossTraining,
        "group_robust_training" => Intervention::GroupRobustTraining,
        "multicalibration" => Intervention::Multicalibration {
            candidates: section.mc_candidates.unwrap_or(default_mc_candidates()),
        },
        other => return Err(config_error(format!("unknown intervention {other}"))),
    };
    let tune_objective = section
        .tune_objective
        .as_deref()
        .map(|id| -> Result<TuneObjective> {
            Ok(match id {
                "accuracy" => TuneObjective::Accuracy,
                "overall_ecce" => TuneObjective::OverallEcce,
                "worst_group_ecce" => TuneObjective::WorstGroupEcce,
                other => return Err(config_error(format!("unknown tune objective {other}"))),
            })
        })
        .transpose()?;

    let mut spec = MethodSpec::new(&section.id, regime, model, intervention);
    spec.tune_objective = tune_objective;
    spec.tune_trials = section.tune_trials;
    spec.base_gbt = section.gbt.as_ref().map(apply_gbt_overrides).transpose()?;
    spec.base_mlp = section.mlp.as_ref().map(apply_mlp_overrides).transpose()?;
    spec.search_space = section.grid.as_ref().map(grid_to_space).transpose()?;
    spec.validate().map_err(anyhow::Error::new)?;
    Ok(spec)
}

fn apply_gbt_overrides(overrides: &GbtOverrides) -> Result<GbtParams> {
    let mut params = GbtParams::default();
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = overrides.$field {
                params.$field = v;
            }
        };
    }
    set!(eta);
    set!(min_split_loss);
    set!(max_depth);
    set!(colsample_bytree);
    set!(colsample_bylevel);
    set!(max_bin);
    set!(boosting_rounds);
    set!(calibration_loss_weight);
    set!(dro_eta);
    if let Some(policy) = &overrides.grow_policy {
        params.grow_policy = match policy.as_str() {
            "depthwise" => GrowPolicy::Depthwise,
            "lossguide" => GrowPolicy::LossGuide,
            other => return Err(config_error(format!("unknown grow policy {other}"))),
        };
    }
    params.validate().map_err(anyhow::Error::new)?;
    Ok(params)
}

fn apply_mlp_overrides(overrides: &MlpOverrides) -> Result<MlpParams> {
    let mut params = MlpParams::default();
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = overrides.$field {
                params.$field = v;
            }
        };
    }
    set!(layer1_units);
    set!(layer2_units);
    set!(learning_rate);
    set!(l2_regularization);
    set!(batch_size);
    set!(num_epochs);
    set!(batch_norm);
    set!(calibration_loss_weight);
    set!(dro_eta);
    set!(dro_regularization);
    set!(mmce_kernel_width);
    params.validate().map_err(anyhow::Error::new)?;
    Ok(params)
}

fn grid_to_space(grid: &BTreeMap<String, Vec<toml::Value>>) -> Result<SearchSpace> {
    let mut entries = Vec::new();
    for (name, values) in grid {
        if values.is_empty() {
            return Err(config_error(format!("grid entry {name} has no values")));
        }
        let parsed: Vec<ParamValue> = values
            .iter()
            .map(|v| -> Result<ParamValue> {
                Ok(match v {
                    toml::Value::Integer(i) => ParamValue::Int(
                        usize::try_from(*i)
                            .map_err(|_| config_error(format!("{name}: negative value")))?,
                    ),
                    toml::Value::Float(f) => ParamValue::Float(*f),
                    toml::Value::String(s) => ParamValue::Text(s.clone()),
                    other => {
                        return Err(config_error(format!(
                            "{name}: unsupported grid value {other:?}"
                        )))
                    }
                })
            })
            .collect::<Result<_>>()?;
        entries.push((
            name.clone(),
            Domain::Choice {
                values: parsed,
                default: 0,
            },
        ));
    }
    Ok(SearchSpace { entries })
}

/// Synthetic-generator config file (TOML mirror of `SynthConfig`).
pub fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read synth config {}", path.display()))?;
    let config: SynthConfig = toml::from_str(&text)
        .map_err(anyhow::Error::new)
        .context("invalid synth config")?;
    config.validate().map_err(anyhow::Error::new)?;
    Ok(config)
}
