//! Dataset containers, table encoding, splitting, and a synthetic
//! generator with known ground-truth probabilities.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // trait needed for float math under no_std
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigmoid;

/// Dense row-major matrix of feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid_input(format!(
                "matrix data length {} != {} x {}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Copies the selected rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Returns a new matrix with `extra` columns appended on the right,
    /// filled row by row from `fill(row, k)`.
    pub fn append_columns(
        &self,
        extra: usize,
        mut fill: impl FnMut(usize, usize) -> f64,
    ) -> Matrix {
        let cols = self.cols + extra;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            for k in 0..extra {
                data.push(fill(i, k));
            }
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }
}

/// A fully encoded dataset: numeric feature matrix, binary labels,
/// dense group ids, and the names used for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub groups: Vec<usize>,
    pub feature_names: Vec<String>,
    pub group_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<u8>,
        groups: Vec<usize>,
        feature_names: Vec<String>,
        group_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Dataset {
            features,
            labels,
            groups,
            feature_names,
            group_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.n_rows();
        if n == 0 {
            return Err(Error::invalid_input("dataset has no rows"));
        }
        if self.labels.len() != n || self.groups.len() != n {
            return Err(Error::invalid_input(format!(
                "length mismatch: {} rows, {} labels, {} groups",
                n,
                self.labels.len(),
                self.groups.len()
            )));
        }
        if self.feature_names.len() != self.features.n_cols() {
            return Err(Error::invalid_input(
                "feature_names length != feature count",
            ));
        }
        let g = self.group_names.len();
        if g == 0 {
            return Err(Error::invalid_input("dataset has no groups"));
        }
        let mut seen = vec![false; g];
        for &gid in &self.groups {
            if gid >= g {
                return Err(Error::invalid_input(format!(
                    "group id {gid} out of range (G = {g})"
                )));
            }
            seen[gid] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid_input(format!(
                "group {missing} has no samples"
            )));
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(Error::invalid_input("non-binary label"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.features.n_rows()
    }

    pub fn p(&self) -> usize {
        self.features.n_cols()
    }

    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }

    /// Row subset as a new dataset; group names are retained even if a
    /// group drops out of the subset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: indices.iter().map(|&i| self.groups[i]).collect(),
            feature_names: self.feature_names.clone(),
            group_names: self.group_names.clone(),
        }
    }
}

/// Disjoint train/validation/test row indices under a recorded seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Randomly permutes row indices under `seed` and slices them into
/// train/validation/test partitions sized by `ratios`.
pub fn split(dataset: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<SplitAssignment> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv <= 0.0 || rs <= 0.0 {
        return Err(Error::invalid_config("split ratios must be positive"));
    }
    if ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid_config("split ratios must sum to 1"));
    }
    let n = dataset.n();
    if n < 3 {
        return Err(Error::invalid_input(
            "need at least 3 rows to populate all partitions",
        ));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let n_train = ((rt * n as f64).round() as usize).min(n - 2).max(1);
    let n_val = ((rv * n as f64).round() as usize)
        .min(n - n_train - 1)
        .max(1);
    let train = indices[..n_train].to_vec();
    let val = indices[n_train..n_train + n_val].to_vec();
    let test = indices[n_train + n_val..].to_vec();
    Ok(SplitAssignment {
        train,
        val,
        test,
        seed,
    })
}

/// Configuration for the synthetic logistic generator.
///
/// Each row draws a group from `group_proportions`, standard-normal
/// features, and a label from `sigmoid(w_g . x + b_g)`. The generator
/// returns the true probabilities so tests can use them as an oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub p: usize,
    pub n_groups: usize,
    /// Per-group coefficient vectors, `n_groups` x `p`.
    pub group_weights: Vec<Vec<f64>>,
    pub group_bias: Vec<f64>,
    pub group_proportions: Vec<f64>,
    /// Optional per-group feature mean shifts (G x p); zero when
    /// absent. Nonzero shifts make group membership partially
    /// recoverable from the features.
    #[serde(default)]
    pub group_shifts: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid_config("n must be >= 1"));
        }
        if self.p == 0 {
            return Err(Error::invalid_config("p must be >= 1"));
        }
        let g = self.n_groups;
        if g == 0 {
            return Err(Error::invalid_config("need at least one group"));
        }
        if self.group_weights.len() != g
            || self.group_bias.len() != g
            || self.group_proportions.len() != g
        {
            return Err(Error::invalid_config(
                "group_weights/group_bias/group_proportions must all have length G",
            ));
        }
        if self.group_weights.iter().any(|w| w.len() != self.p) {
            return Err(Error::invalid_config(
                "each weight vector must have length p",
            ));
        }
        if self.group_proportions.iter().any(|&q| q < 0.0) {
            return Err(Error::invalid_config(
                "group proportions must be nonnegative",
            ));
        }
        let total: f64 = self.group_proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_config("group proportions must sum to 1"));
        }
        if let Some(shifts) = &self.group_shifts {
            if shifts.len() != g || shifts.iter().any(|s| s.len() != self.p) {
                return Err(Error::invalid_config("group_shifts must be G x p"));
            }
        }
        Ok(())
    }
}

/// Generates a dataset together with each row's true probability.
pub fn synth_generate(config: &SynthConfig) -> Result<(Dataset, Vec<f64>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n;
    let p = config.p;
    let g = config.n_groups;

    let mut cumulative = Vec::with_capacity(g);
    let mut acc = 0.0;
    for &q in &config.group_proportions {
        acc += q;
        cumulative.push(acc);
    }

    let mut features = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    let mut true_p = Vec::with_capacity(n);

    for _ in 0..n {
        let u: f64 = rng.gen();
        let gid = cumulative.iter().position(|&c| u < c).unwrap_or(g - 1);
        let mut z = config.group_bias[gid];
        let w = &config.group_weights[gid];
        let start = features.len();
        for j in 0..p {
            let shift = config.group_shifts.as_ref().map_or(0.0, |s| s[gid][j]);
            let x: f64 = shift + rng.sample::<f64, _>(StandardNormal);
            features.push(x);
            z += w[j] * x;
        }
        debug_assert_eq!(features.len(), start + p);
        let prob = sigmoid(z);
        let y: f64 = rng.gen();
        labels.push(u8::from(y < prob));
        groups.push(gid);
        true_p.push(prob);
    }

    // A proportion of zero can leave a group empty; so can plain bad luck
    // on small n. Dataset invariants require every group inhabited, so
    // reassign the first rows deterministically in that case.
    let mut seen = vec![false; g];
    for &gid in &groups {
        seen[gid] = true;
    }
    for (gid, present) in seen.iter().enumerate() {
        if !present {
            groups[gid % n] = gid;
            let row_start = (gid % n) * p;
            let mut z = config.group_bias[gid];
            for j in 0..p {
                z += config.group_weights[gid][j] * features[row_start + j];
            }
            true_p[gid % n] = sigmoid(z);
        }
    }

    let dataset = Dataset::new(
        Matrix::new(n, p, features)?,
        labels,
        groups,
        (0..p).map(|j| format!("x{j}")).collect(),
        (0..g).map(|k| format!("g{k}")).collect(),
    )?;
    Ok((dataset, true_p))
}

/// Column role inside a raw string table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColumnRole {
    Numeric,
    Categorical,
    Label,
    Group,
}

/// Encodes a parsed string table (header plus data rows) into a
/// [`Dataset`]. Categorical columns are one-hot encoded with one
/// indicator per observed category, in first-appearance order; numeric
/// columns pass through; the group column maps to dense ids in
/// first-appearance order.
pub fn encode_table(
    header: &[String],
    rows: &[Vec<String>],
    label_column: &str,
    group_column: &str,
    categorical_columns: &[String],
) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(Error::invalid_input("empty file: no data rows"));
    }
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid_input(format!("missing column name: {name}")))
    };
    let label_idx = find(label_column)?;
    let group_idx = find(group_column)?;
    for c in categorical_columns {
        find(c)?;
    }

    let mut roles = Vec::with_capacity(header.len());
    for (j, name) in header.iter().enumerate() {
        let role = if j == label_idx {
            ColumnRole::Label
        } else if j == group_idx {
            ColumnRole::Group
        } else if categorical_columns.iter().any(|c| c == name) {
            ColumnRole::Categorical
        } else {
            ColumnRole::Numeric
        };
        roles.push(role);
    }

    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Parse {
                row: i + 1,
                column: "<row>".to_string(),
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
    }

    // First-appearance category orders.
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for row in rows {
        for (j, cell) in row.iter().enumerate() {
            if roles[j] == ColumnRole::Categorical && !categories[j].iter().any(|c| c == cell) {
                categories[j].push(cell.clone());
            }
        }
    }

    let mut feature_names = Vec::new();
    for (j, name) in header.iter().enumerate() {
        match roles[j] {
            ColumnRole::Numeric => feature_names.push(name.clone()),
            ColumnRole::Categorical => {
                for cat in &categories[j] {
                    feature_names.push(format!("{name}={cat}"));
                }
            }
            _ => {}
        }
    }
    let p = feature_names.len();
    if p == 0 {
        return Err(Error::invalid_input(
            "no feature columns left after encoding",
        ));
    }

    let mut group_names: Vec<String> = Vec::new();
    let mut features = Vec::with_capacity(rows.len() * p);
    let mut labels = Vec::with_capacity(rows.len());
    let mut groups = Vec::with_capacity(rows.len());

    for (i, row) in rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            match roles[j] {
                ColumnRole::Numeric => {
                    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                        row: i + 1,
                        column: header[j].clone(),
                        message: format!("unparseable numeric cell {cell:?}"),
                    })?;
                    features.push(v);
                }
                ColumnRole::Categorical => {
                    for cat in &categories[j] {
                        features.push(if cat == cell { 1.0 } else { 0.0 });
                    }
                }
                ColumnRole::Label => {
                    let y = match cell.trim() {
                        "0" => 0u8,
                        "1" => 1u8,
                        other => {
                            let v: f64 = other.parse().map_err(|_| Error::Parse {
                                row: i + 1,
                                column: header[j].clone(),
                                message: format!("non-binary label {cell:?}"),
                            })?;
                            if v == 0.0 {
                                0
                            } else if v == 1.0 {
                                1
                            } else {
                                return Err(Error::Parse {
                                    row: i + 1,
                                    column: header[j].clone(),
                                    message: format!("non-binary label {cell:?}"),
                                });
                            }
                        }
                    };
                    labels.push(y);
                }
                ColumnRole::Group => {
                    let gid = match group_names.iter().position(|gn| gn == cell) {
                        Some(k) => k,
                        None => {
                            group_names.push(cell.clone());
                            group_names.len() - 1
                        }
                    };
                    groups.push(gid);
                }
            }
        }
    }

    Dataset::new(
        Matrix::new(rows.len(), p, features)?,
        labels,
        groups,
        feature_names,
        group_names,
    )
}
