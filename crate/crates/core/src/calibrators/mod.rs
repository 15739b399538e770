//! Post-hoc confidence mappings: monotone and parametric calibrators,
//! per-group routing, and the group-robust boosted calibrator.

mod binned;
mod parametric;
mod pava;

pub use binned::{
    default_bbq_bin_counts, fit_bbq, fit_histogram, fit_platt_binner, BbqParams, HistogramParams,
    PlattBinnerParams,
};
pub use parametric::{
    fit_beta, fit_platt, fit_temperature, BetaParams, PlattParams, TemperatureParams,
    DEFAULT_T_BOUNDS,
};
pub use pava::{pava, StepFunction};

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::metrics::BinningScheme;
use crate::models::{gbt_train, GbtModel, GbtParams, GroupMode, Objective, TrainData};

/// Declarative calibrator request, as it appears in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibratorSpec {
    Histogram {
        bins: usize,
        scheme: BinningScheme,
    },
    Isotonic,
    Platt {
        target_smoothing: bool,
    },
    Beta,
    Temperature {
        t_lo: f64,
        t_hi: f64,
    },
    Bbq {
        /// Empty means "derive candidates from the sample count".
        bin_counts: Vec<usize>,
    },
    PlattBinner {
        bins: usize,
        seed: u64,
    },
    PerGroup {
        inner: Box<CalibratorSpec>,
    },
    GroupRobust {
        params: GbtParams,
    },
}

impl CalibratorSpec {
    /// Parses a calibrator id with default parameters. The unsupported
    /// "enir" id fails fast here.
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id {
            "histogram" => CalibratorSpec::Histogram {
                bins: 10,
                scheme: BinningScheme::EqualWidth,
            },
            "isotonic" => CalibratorSpec::Isotonic,
            "platt" => CalibratorSpec::Platt {
                target_smoothing: false,
            },
            "beta" => CalibratorSpec::Beta,
            "temperature" => CalibratorSpec::Temperature {
                t_lo: DEFAULT_T_BOUNDS.0,
                t_hi: DEFAULT_T_BOUNDS.1,
            },
            "bbq" => CalibratorSpec::Bbq {
                bin_counts: Vec::new(),
            },
            "platt_binner" => CalibratorSpec::PlattBinner { bins: 10, seed: 0 },
            "enir" => {
                return Err(Error::invalid_config(
                    "the ENIR calibrator is not implemented (its mPAVA path \
                     ensemble is out of scope); choose one of: histogram, \
                     isotonic, platt, beta, temperature, bbq, platt_binner",
                ))
            }
            other => {
                if let Some(inner) = other.strip_prefix("per_group:") {
                    return Ok(CalibratorSpec::PerGroup {
                        inner: Box::new(CalibratorSpec::from_id(inner)?),
                    });
                }
                if other == "group_robust" {
                    return Ok(CalibratorSpec::GroupRobust {
                        params: default_group_robust_params(),
                    });
                }
                return Err(Error::invalid_config(format!(
                    "unknown calibrator id: {other}"
                )));
            }
        })
    }

    pub fn needs_groups_to_fit(&self) -> bool {
        matches!(
            self,
            CalibratorSpec::PerGroup { .. } | CalibratorSpec::GroupRobust { .. }
        )
    }

    pub fn needs_groups_to_apply(&self) -> bool {
        matches!(self, CalibratorSpec::PerGroup { .. })
    }
}

/// Defaults for the score-only group-robust boosted calibrator: a
/// shallow Brier-objective ensemble with DRO reweighting enabled.
pub fn default_group_robust_params() -> GbtParams {
    GbtParams {
        eta: 0.1,
        max_depth: 3,
        boosting_rounds: 50,
        max_bin: 64,
        objective: Objective::Brier,
        calibration_loss_weight: 1.0,
        dro_eta: 2.0,
        ..GbtParams::default()
    }
}

/// A fitted confidence mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Calibrator {
    Histogram(HistogramParams),
    Isotonic(StepFunction),
    Platt(PlattParams),
    Beta(BetaParams),
    Temperature(TemperatureParams),
    Bbq(BbqParams),
    PlattBinner(PlattBinnerParams),
    PerGroup(BTreeMap<usize, Calibrator>),
    GroupRobust(GbtModel),
}

pub const CALIBRATOR_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CalibratorDocument {
    version: u32,
    #[serde(flatten)]
    calibrator: Calibrator,
}

impl Calibrator {
    /// Fits the requested calibrator on scores and labels; `groups`
    /// is consulted only by the group-aware kinds.
    pub fn fit(
        spec: &CalibratorSpec,
        scores: &[f64],
        labels: &[u8],
        groups: Option<&[usize]>,
    ) -> Result<Calibrator> {
        if scores.len() != labels.len() || scores.is_empty() {
            return Err(Error::invalid_input(
                "calibrator fit requires aligned nonempty scores and labels",
            ));
        }
        Ok(match spec {
            CalibratorSpec::Histogram { bins, scheme } => {
                Calibrator::Histogram(fit_histogram(scores, labels, *bins, *scheme)?)
            }
            CalibratorSpec::Isotonic => {
                let targets: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
                Calibrator::Isotonic(pava(scores, &targets)?)
            }
            CalibratorSpec::Platt { target_smoothing } => {
                Calibrator::Platt(fit_platt(scores, labels, *target_smoothing)?)
            }
            CalibratorSpec::Beta => Calibrator::Beta(fit_beta(scores, labels)?),
            CalibratorSpec::Temperature { t_lo, t_hi } => {
                Calibrator::Temperature(fit_temperature(scores, labels, (*t_lo, *t_hi))?)
            }
            CalibratorSpec::Bbq { bin_counts } => {
                let counts = if bin_counts.is_empty() {
                    default_bbq_bin_counts(scores.len())
                } else {
                    bin_counts.clone()
                };
                Calibrator::Bbq(fit_bbq(scores, labels, &counts)?)
            }
            CalibratorSpec::PlattBinner { bins, seed } => {
                Calibrator::PlattBinner(fit_platt_binner(scores, labels, *bins, *seed)?)
            }
            CalibratorSpec::PerGroup { inner } => {
                let groups = groups.ok_or(Error::GroupRequired)?;
                Calibrator::PerGroup(fit_per_group(scores, labels, groups, inner)?)
            }
            CalibratorSpec::GroupRobust { params } => {
                let groups = groups.ok_or(Error::GroupRequired)?;
                Calibrator::GroupRobust(fit_group_robust(scores, labels, groups, params)?)
            }
        })
    }

    /// Maps one score. Group-routing calibrators require `group`.
    pub fn apply(&self, score: f64, group: Option<usize>) -> Result<f64> {
        Ok(match self {
            Calibrator::Histogram(h) => h.apply(score),
            Calibrator::Isotonic(f) => f.eval(score),
            Calibrator::Platt(p) => p.apply(score),
            Calibrator::Beta(b) => b.apply(score),
            Calibrator::Temperature(t) => t.apply(score),
            Calibrator::Bbq(b) => b.apply(score),
            Calibrator::PlattBinner(pb) => pb.apply(score),
            Calibrator::PerGroup(map) => {
                let gid = group.ok_or(Error::GroupRequired)?;
                map.get(&gid)
                    .ok_or(Error::UnknownGroup(gid))?
                    .apply(score, None)?
            }
            Calibrator::GroupRobust(model) => model.predict_row(&[score]),
        })
    }

    pub fn apply_all(&self, scores: &[f64], groups: Option<&[usize]>) -> Result<Vec<f64>> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| self.apply(s, groups.map(|g| g[i])))
            .collect()
    }

    /// Versioned JSON document `{version, kind, params}`.
    pub fn to_json(&self) -> String {
        let doc = CalibratorDocument {
            version: CALIBRATOR_FORMAT_VERSION,
            calibrator: self.clone(),
        };
        serde_json::to_string(&doc).expect("calibrator serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Calibrator> {
        let doc: CalibratorDocument = serde_json::from_str(text)
            .map_err(|e| Error::invalid_input(format!("bad calibrator document: {e}")))?;
        if doc.version != CALIBRATOR_FORMAT_VERSION {
            return Err(Error::invalid_input(format!(
                "unsupported calibrator format version {}",
                doc.version
            )));
        }
        Ok(doc.calibrator)
    }
}

/// Fits one independent inner calibrator per group id present.
pub fn fit_per_group(
    scores: &[f64],
    labels: &[u8],
    groups: &[usize],
    inner: &CalibratorSpec,
) -> Result<BTreeMap<usize, Calibrator>> {
    if groups.len() != scores.len() {
        return Err(Error::invalid_input("groups length != score count"));
    }
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut fitted = BTreeMap::new();
    for gid in ids {
        let idx: Vec<usize> = (0..scores.len()).filter(|&i| groups[i] == gid).collect();
        let sub_scores: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let sub_labels: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let calibrator =
            Calibrator::fit(inner, &sub_scores, &sub_labels, None).map_err(|e| e.for_group(gid))?;
        fitted.insert(gid, calibrator);
    }
    Ok(fitted)
}

/// Fits the group-robust calibrator: a boosted ensemble whose only
/// feature is the uncalibrated score, trained with the Brier objective
/// and per-round group-DRO reweighting. Inference never consults the
/// group id.
pub fn fit_group_robust(
    scores: &[f64],
    labels: &[u8],
    groups: &[usize],
    params: &GbtParams,
) -> Result<GbtModel> {
    if groups.len() != scores.len() {
        return Err(Error::invalid_input("groups length != score count"));
    }
    let n_groups = groups.iter().copied().max().map_or(1, |g| g + 1);
    let matrix = Matrix::new(scores.len(), 1, scores.to_vec())?;
    let mut params = params.clone();
    params.objective = Objective::Brier;
    let data = TrainData::new(&matrix, labels).with_groups(groups, n_groups);
    gbt_train(&data, &params, GroupMode::None, params.dro_eta.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn per_group_routes_by_group() {
        // Group 0: always label 0; group 1: always... needs both classes
        // for parametric kinds, so use histogram inners.
        let scores = [0.3, 0.6, 0.3, 0.6];
        let labels = [0, 0, 1, 1];
        let groups = [0usize, 0, 1, 1];
        let spec = CalibratorSpec::PerGroup {
            inner: Box::new(CalibratorSpec::Histogram {
                bins: 1,
                scheme: BinningScheme::EqualWidth,
            }),
        };
        let cal = Calibrator::fit(&spec, &scores, &labels, Some(&groups)).unwrap();
        assert_eq!(cal.apply(0.5, Some(0)).unwrap(), 0.0);
        assert_eq!(cal.apply(0.5, Some(1)).unwrap(), 1.0);
        assert!(matches!(
            cal.apply(0.5, Some(7)),
            Err(Error::UnknownGroup(7))
        ));
        assert!(matches!(cal.apply(0.5, None), Err(Error::GroupRequired)));
    }

    #[test]
    fn per_group_identical_data_matches_pooled() {
        let scores = [0.2, 0.8, 0.2, 0.8];
        let labels = [0, 1, 0, 1];
        let groups = [0usize, 0, 1, 1];
        let inner = CalibratorSpec::Isotonic;
        let routed = Calibrator::fit(
            &CalibratorSpec::PerGroup {
                inner: Box::new(inner.clone()),
            },
            &scores,
            &labels,
            Some(&groups),
        )
        .unwrap();
        let pooled = Calibrator::fit(&inner, &scores, &labels, None).unwrap();
        for s in [0.1, 0.5, 0.9] {
            for g in [0, 1] {
                assert_eq!(
                    routed.apply(s, Some(g)).unwrap(),
                    pooled.apply(s, None).unwrap()
                );
            }
        }
    }

    #[test]
    fn group_robust_reduces_to_plain_brier_gbt_for_single_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scores: Vec<f64> = (0..200).map(|_| rng.gen_range(0.05..0.95)).collect();
        let labels: Vec<u8> = scores
            .iter()
            .map(|&s| u8::from(rng.gen::<f64>() < s))
            .collect();
        let groups = vec![0usize; 200];
        let params = default_group_robust_params();
        let robust = fit_group_robust(&scores, &labels, &groups, &params).unwrap();

        let matrix = Matrix::new(200, 1, scores.clone()).unwrap();
        let mut plain_params = params.clone();
        plain_params.objective = Objective::Brier;
        let data = TrainData::new(&matrix, &labels).with_groups(&groups, 1);
        let plain = gbt_train(
            &data,
            &plain_params,
            GroupMode::None,
            params.dro_eta.to_bits(),
        )
        .unwrap();
        assert_eq!(robust.trees, plain.trees);
    }

    #[test]
    fn group_robust_apply_ignores_group_argument() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..100).map(|_| rng.gen_range(0.05..0.95)).collect();
        let labels: Vec<u8> = scores
            .iter()
            .map(|&s| u8::from(rng.gen::<f64>() < s))
            .collect();
        let groups: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let cal = Calibrator::GroupRobust(
            fit_group_robust(&scores, &labels, &groups, &default_group_robust_params()).unwrap(),
        );
        for s in [0.1, 0.5, 0.9] {
            let a = cal.apply(s, None).unwrap();
            let b = cal.apply(s, Some(0)).unwrap();
            let c = cal.apply(s, Some(1)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, c);
        }
    }

    #[test]
    fn enir_fails_fast() {
        let err = CalibratorSpec::from_id("enir").unwrap_err();
        assert!(format!("{err}").contains("ENIR"));
    }

    #[test]
    fn json_round_trip() {
        let scores = [0.1, 0.4, 0.6, 0.9];
        let labels = [0, 0, 1, 1];
        for id in [
            "histogram",
            "isotonic",
            "platt",
            "beta",
            "temperature",
            "bbq",
        ] {
            let spec = CalibratorSpec::from_id(id).unwrap();
            let cal = Calibrator::fit(&spec, &scores, &labels, None).unwrap();
            let restored = Calibrator::from_json(&cal.to_json()).unwrap();
            for s in [0.0, 0.3, 0.7, 1.0] {
                assert_eq!(
                    cal.apply(s, None).unwrap(),
                    restored.apply(s, None).unwrap(),
                    "{id} mismatch at {s}"
                );
            }
        }
    }

    #[test]
    fn isotonic_projection_never_worsens_train_brier() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(5..60);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<bool>())).collect();
            let cal = Calibrator::fit(&CalibratorSpec::Isotonic, &scores, &labels, None).unwrap();
            let before: f64 = scores
                .iter()
                .zip(&labels)
                .map(|(&s, &y)| (s - y as f64) * (s - y as f64))
                .sum::<f64>()
                / n as f64;
            let after: f64 = scores
                .iter()
                .zip(&labels)
                .map(|(&s, &y)| {
                    let c = cal.apply(s, None).unwrap();
                    (c - y as f64) * (c - y as f64)
                })
                .sum::<f64>()
                / n as f64;
            assert!(after <= before + 1e-12, "brier {before} -> {after}");
        }
    }
}
