//! Desk-scale trainers: gradient-boosted trees and a 2-layer MLP, with
//! logistic/Brier/MMCE-regularized losses, group-DRO variants, and
//! random-search hyperparameter tuning.

mod gbt;
mod mlp;
mod tune;

pub use gbt::{
    fit_regression_tree, gbt_train, objective_grad_hess, objective_loss, GbtModel, GbtParams,
    GrowPolicy, Link, Node, Objective, Tree,
};
pub use mlp::{
    mlp_batch_loss, mlp_train, BatchLossConfig, BnStats, LossSpec, MlpModel, MlpParams,
    MlpTrainReport, MlpWeights,
};
pub use tune::{
    fit_tuned, gbt_params_from, gbt_search_space, mlp_params_from, mlp_search_space,
    score_objective, tune, tune_with, Domain, ParamAssignment, ParamValue, SearchSpace,
    TuneModelKind, TuneObjective, TuneOutcome, TuneResult, TunedParams,
};

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait needed for float math under no_std
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Whether the group id is appended to the feature vector as one-hot
/// indicators or ignored by the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    None,
    AsFeature,
}

/// Training inputs shared by both trainers.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [u8],
    /// Group ids; required for DRO losses and `GroupMode::AsFeature`.
    pub groups: Option<&'a [usize]>,
    pub n_groups: usize,
}

impl<'a> TrainData<'a> {
    pub fn new(features: &'a Matrix, labels: &'a [u8]) -> Self {
        TrainData {
            features,
            labels,
            groups: None,
            n_groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: &'a [usize], n_groups: usize) -> Self {
        self.groups = Some(groups);
        self.n_groups = n_groups;
        self
    }

    pub fn n(&self) -> usize {
        self.features.n_rows()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.features.n_rows() == 0 {
            return Err(Error::invalid_input("training partition is empty"));
        }
        if self.labels.len() != self.features.n_rows() {
            return Err(Error::invalid_input("labels length != feature rows"));
        }
        if let Some(groups) = self.groups {
            if groups.len() != self.features.n_rows() {
                return Err(Error::invalid_input("groups length != feature rows"));
            }
            if groups.iter().any(|&g| g >= self.n_groups) {
                return Err(Error::invalid_input("group id out of range"));
            }
        }
        Ok(())
    }

    /// Materializes the model-facing matrix, appending one indicator
    /// column per group when requested.
    pub(crate) fn model_matrix(&self, mode: GroupMode) -> Result<Matrix> {
        match mode {
            GroupMode::None => Ok(self.features.clone()),
            GroupMode::AsFeature => {
                let groups = self
                    .groups
                    .ok_or_else(|| Error::invalid_input("group_mode=as_feature requires groups"))?;
                let g = self.n_groups;
                Ok(self
                    .features
                    .append_columns(g, |row, k| f64::from(groups[row] == k)))
            }
        }
    }
}

/// Builds the inference-time matrix for a model trained under `mode`.
pub(crate) fn inference_matrix(
    features: &Matrix,
    groups: Option<&[usize]>,
    mode: GroupMode,
    n_groups: usize,
    expected_cols: usize,
) -> Result<Matrix> {
    let matrix = match mode {
        GroupMode::None => features.clone(),
        GroupMode::AsFeature => {
            let groups = groups.ok_or_else(|| {
                Error::invalid_input("model was trained with group indicators; supply groups")
            })?;
            if groups.len() != features.n_rows() {
                return Err(Error::invalid_input("groups length != feature rows"));
            }
            features.append_columns(n_groups, |row, k| f64::from(groups[row] == k))
        }
    };
    if matrix.n_cols() != expected_cols {
        return Err(Error::invalid_input(format!(
            "feature width {} does not match training width {}",
            matrix.n_cols(),
            expected_cols
        )));
    }
    Ok(matrix)
}

/// Exponentiated-gradient weights over groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    pub q: Vec<f64>,
}

impl GroupWeights {
    pub fn uniform(n_groups: usize) -> Self {
        GroupWeights {
            q: alloc::vec![1.0 / n_groups as f64; n_groups],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.is_empty() {
            return Err(Error::invalid_input("group weights are empty"));
        }
        if self.q.iter().any(|&q| q < 0.0 || !q.is_finite()) {
            return Err(Error::invalid_input("group weights must be nonnegative"));
        }
        let total: f64 = self.q.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid_input("group weights must sum to 1"));
        }
        Ok(())
    }
}

/// One exponentiated-gradient update:
/// `q'_g = q_g exp(eta L_g) / sum_h q_h exp(eta L_h)`.
pub fn group_dro_step(
    q: &GroupWeights,
    per_group_losses: &[f64],
    eta: f64,
) -> Result<GroupWeights> {
    q.validate()?;
    if per_group_losses.len() != q.q.len() {
        return Err(Error::invalid_input("loss vector length != group count"));
    }
    if per_group_losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid_input("per-group losses must be finite"));
    }
    // Shift by the max loss so exponentials cannot overflow.
    let max = per_group_losses
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let unnormalized: Vec<f64> =
        q.q.iter()
            .zip(per_group_losses)
            .map(|(&qg, &lg)| qg * (eta * (lg - max)).exp())
            .collect();
    let total: f64 = unnormalized.iter().sum();
    Ok(GroupWeights {
        q: unnormalized.iter().map(|&u| u / total).collect(),
    })
}

/// A fitted model of either kind, with a uniform predict surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Gbt(GbtModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn predict(&self, features: &Matrix, groups: Option<&[usize]>) -> Result<Vec<f64>> {
        match self {
            Model::Gbt(m) => m.predict(features, groups),
            Model::Mlp(m) => m.predict(features, groups),
        }
    }

    pub fn group_mode(&self) -> GroupMode {
        match self {
            Model::Gbt(m) => m.group_mode,
            Model::Mlp(m) => m.group_mode,
        }
    }

    /// Versioned JSON serialization of the fitted model.
    pub fn to_json(&self) -> alloc::string::String {
        let doc = ModelDocument {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&doc).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)
            .map_err(|e| Error::invalid_input(format!("bad model document: {e}")))?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid_input(format!(
                "unsupported model format version {}",
                doc.version
            )));
        }
        Ok(doc.model)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    model: Model,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dro_step_hand_example() {
        let q = GroupWeights {
            q: alloc::vec![0.5, 0.5],
        };
        let next = group_dro_step(&q, &[1.0, 0.0], core::f64::consts::LN_2).unwrap();
        assert!((next.q[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((next.q[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dro_step_equal_losses_is_identity() {
        let q = GroupWeights {
            q: alloc::vec![0.2, 0.3, 0.5],
        };
        let next = group_dro_step(&q, &[0.7, 0.7, 0.7], 3.0).unwrap();
        for (a, b) in q.q.iter().zip(&next.q) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dro_step_zero_eta_is_identity() {
        let q = GroupWeights {
            q: alloc::vec![0.9, 0.1],
        };
        let next = group_dro_step(&q, &[5.0, -2.0], 0.0).unwrap();
        assert_eq!(q.q, next.q);
    }
}
