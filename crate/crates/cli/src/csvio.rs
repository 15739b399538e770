//! RFC-4180 CSV ingestion and serialization for datasets and score
//! files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use paritycal_core::data::{encode_table, Dataset};

/// Reads a CSV file (header required) and encodes it into a dataset.
/// The reserved `__true_p` oracle column and anything in
/// `drop_columns` are excluded before encoding.
pub fn load_dataset_dropping(
    path: &Path,
    label_column: &str,
    group_column: &str,
    categorical_columns: &[String],
    drop_columns: &[String],
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot open dataset {}", path.display()))?;
    let full_header: Vec<String> = reader
        .headers()
        .context("missing header row")?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let keep: Vec<usize> = full_header
        .iter()
        .enumerate()
        .filter(|(_, name)| name.as_str() != TRUE_P_COLUMN && !drop_columns.contains(name))
        .map(|(idx, _)| idx)
        .collect();
    let header: Vec<String> = keep.iter().map(|&i| full_header[i].clone()).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.context("malformed CSV record")?;
        let cells: Vec<String> = record.iter().map(|s| s.to_string()).collect();
        if cells.len() == full_header.len() {
            rows.push(keep.iter().map(|&i| cells[i].clone()).collect());
        } else {
            // Let the encoder report the width mismatch with row context.
            rows.push(cells);
        }
    }
    Ok(encode_table(
        &header,
        &rows,
        label_column,
        group_column,
        categorical_columns,
    )?)
}

pub fn load_dataset(
    path: &Path,
    label_column: &str,
    group_column: &str,
    categorical_columns: &[String],
) -> Result<Dataset> {
    load_dataset_dropping(path, label_column, group_column, categorical_columns, &[])
}

/// Column names used when a dataset is serialized by this crate.
pub const LABEL_COLUMN: &str = "label";
pub const GROUP_COLUMN: &str = "group";
pub const TRUE_P_COLUMN: &str = "__true_p";

/// Writes a dataset (and optionally its generator's true
/// probabilities) in the same schema `load_dataset` accepts.
pub fn write_dataset(path: &Path, dataset: &Dataset, true_p: Option<&[f64]>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let mut header: Vec<String> = dataset.feature_names.clone();
    header.push(LABEL_COLUMN.to_string());
    header.push(GROUP_COLUMN.to_string());
    if true_p.is_some() {
        header.push(TRUE_P_COLUMN.to_string());
    }
    writer.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut record: Vec<String> = dataset
            .features
            .row(i)
            .iter()
            .map(|v| format!("{v}"))
            .collect();
        record.push(format!("{}", dataset.labels[i]));
        record.push(dataset.group_names[dataset.groups[i]].clone());
        if let Some(p) = true_p {
            record.push(format!("{}", p[i]));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// A score file: columns `score,label[,group]`.
pub struct ScoreFile {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub groups: Vec<usize>,
    pub group_names: Vec<String>,
    pub has_groups: bool,
}

pub fn load_scores(path: &Path) -> Result<ScoreFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot open score file {}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .context("missing header row")?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let score_idx = col("score").context("score column required")?;
    let label_idx = col("label").context("label column required")?;
    let group_idx = col("group");

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut group_names: Vec<String> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.context("malformed CSV record")?;
        let score: f64 = record
            .get(score_idx)
            .unwrap_or_default()
            .trim()
            .parse()
            .with_context(|| format!("row {}: unparseable score", row + 1))?;
        if !(0.0..=1.0).contains(&score) {
            bail!("row {}: score {score} outside [0, 1]", row + 1);
        }
        let label: u8 = match record.get(label_idx).unwrap_or_default().trim() {
            "0" => 0,
            "1" => 1,
            other => bail!("row {}: non-binary label {other:?}", row + 1),
        };
        let group = match group_idx {
            Some(idx) => {
                let name = record.get(idx).unwrap_or_default().to_string();
                match group_names.iter().position(|g| g == &name) {
                    Some(k) => k,
                    None => {
                        group_names.push(name);
                        group_names.len() - 1
                    }
                }
            }
            None => 0,
        };
        scores.push(score);
        labels.push(label);
        groups.push(group);
    }
    if scores.is_empty() {
        bail!("empty score file {}", path.display());
    }
    if group_names.is_empty() {
        group_names.push("all".to_string());
    }
    Ok(ScoreFile {
        scores,
        labels,
        groups,
        group_names,
        has_groups: group_idx.is_some(),
    })
}

pub fn write_scores(path: &Path, file: &ScoreFile) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    if file.has_groups {
        writer.write_record(["score", "label", "group"])?;
    } else {
        writer.write_record(["score", "label"])?;
    }
    for i in 0..file.scores.len() {
        let mut record = vec![format!("{}", file.scores[i]), format!("{}", file.labels[i])];
        if file.has_groups {
            record.push(file.group_names[file.groups[i]].clone());
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
