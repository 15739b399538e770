//! Report emission: long-format results CSV, cross-dataset summary
//! JSON, Pareto frontier CSV, and an SVG frontier scatter.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use paritycal_core::harness::{
    accuracy_range, pareto_flags, pareto_points, summarize, BaseModel, MethodResult, MethodSpec,
    ParetoPoint, Regime, Summary, TrialMetrics,
};
use paritycal_core::metrics::{MetricKind, MetricSpec};

pub const RESULTS_HEADER: [&str; 6] = ["dataset", "method", "regime", "metric", "trial", "value"];

fn worst_group_metric_name(kind: MetricKind) -> String {
    format!("worst_group_{}", kind.as_str())
}

/// Writes the long-format results file: one row per (trial, metric).
pub fn write_results_csv(
    path: &Path,
    results_by_dataset: &[(String, Vec<MethodResult>)],
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    writer.write_record(RESULTS_HEADER)?;
    for (dataset, results) in results_by_dataset {
        for result in results {
            for trial in &result.trials {
                let mut push = |metric: &str, value: f64| -> Result<()> {
                    writer.write_record([
                        dataset.as_str(),
                        result.method.as_str(),
                        result.regime.as_str(),
                        metric,
                        &trial.trial.to_string(),
                        &format!("{value}"),
                    ])?;
                    Ok(())
                };
                for (kind, value) in &trial.worst_group_ce {
                    push(&worst_group_metric_name(*kind), *value)?;
                }
                push("overall_ecce_mean", trial.overall_ce)?;
                push("accuracy", trial.accuracy)?;
                push("worst_group_id", trial.worst_group_id as f64)?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Re-ingests a long-format results file into per-dataset aggregates.
/// The base-model tag is not part of the schema, so reconstructed
/// results default it to `Gbt`.
pub fn read_results_csv(path: &Path) -> Result<Vec<(String, Vec<MethodResult>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    if header != RESULTS_HEADER {
        bail!(
            "unexpected results.csv header {:?}; expected {:?}",
            header,
            RESULTS_HEADER
        );
    }
    // (dataset, method, regime) -> trial -> metric rows
    type Key = (String, String, Regime);
    let mut order: Vec<Key> = Vec::new();
    let mut rows: Vec<(Key, usize, String, f64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let dataset = record[0].to_string();
        let method = record[1].to_string();
        let regime = Regime::from_id(&record[2]).map_err(anyhow::Error::new)?;
        let metric = record[3].to_string();
        let trial: usize = record[4].parse().context("bad trial index")?;
        let value: f64 = record[5].parse().context("bad value")?;
        let key = (dataset, method, regime);
        if !order.contains(&key) {
            order.push(key.clone());
        }
        rows.push((key, trial, metric, value));
    }

    let mut by_dataset: Vec<(String, Vec<MethodResult>)> = Vec::new();
    for key in order {
        let (dataset, method, regime) = key.clone();
        let mut trial_ids: Vec<usize> = rows
            .iter()
            .filter(|(k, ..)| *k == key)
            .map(|(_, t, ..)| *t)
            .collect();
        trial_ids.sort_unstable();
        trial_ids.dedup();
        let trials: Vec<TrialMetrics> = trial_ids
            .iter()
            .map(|&t| {
                let mut worst_group_ce = Vec::new();
                let mut overall_ce = f64::NAN;
                let mut accuracy = f64::NAN;
                let mut worst_group_id = 0usize;
                for (_, _, metric, value) in rows.iter().filter(|(k, tt, ..)| *k == key && *tt == t)
                {
                    if let Some(kind_id) = metric.strip_prefix("worst_group_") {
                        if kind_id == "id" {
                            worst_group_id = *value as usize;
                        } else {
                            let kind = MetricSpec::from_id(kind_id)
                                .map_err(anyhow::Error::new)?
                                .kind();
                            worst_group_ce.push((kind, *value));
                        }
                    } else if metric == "overall_ecce_mean" {
                        overall_ce = *value;
                    } else if metric == "accuracy" {
                        accuracy = *value;
                    }
                }
                Ok(TrialMetrics {
                    trial: t,
                    worst_group_ce,
                    worst_group_id,
                    overall_ce,
                    accuracy,
                })
            })
            .collect::<Result<_>>()?;
        let spec = MethodSpec::new(
            &method,
            regime,
            BaseModel::Gbt,
            paritycal_core::harness::Intervention::TuneForAccuracy,
        );
        let aggregated = paritycal_core::harness::aggregate_trials(&spec, trials);
        match by_dataset.iter_mut().find(|(d, _)| *d == dataset) {
            Some((_, list)) => list.push(aggregated),
            None => by_dataset.push((dataset, vec![aggregated])),
        }
    }
    Ok(by_dataset)
}

#[derive(Serialize)]
struct SummaryDocument<'a> {
    version: u32,
    summary: &'a Summary,
    accuracy_ranges: Vec<AccuracyRange>,
}

#[derive(Serialize)]
struct AccuracyRange {
    model: String,
    min_mean_accuracy: f64,
    max_mean_accuracy: f64,
}

pub fn write_summary_json(
    path: &Path,
    summary: &Summary,
    results_by_dataset: &[(String, Vec<MethodResult>)],
) -> Result<()> {
    let mut ranges = Vec::new();
    for (_, results) in results_by_dataset {
        for (model, lo, hi) in accuracy_range(results) {
            let name = match model {
                BaseModel::Gbt => "gbt",
                BaseModel::Mlp => "mlp",
            };
            match ranges
                .iter_mut()
                .find(|r: &&mut AccuracyRange| r.model == name)
            {
                Some(r) => {
                    r.min_mean_accuracy = r.min_mean_accuracy.min(lo);
                    r.max_mean_accuracy = r.max_mean_accuracy.max(hi);
                }
                None => ranges.push(AccuracyRange {
                    model: name.to_string(),
                    min_mean_accuracy: lo,
                    max_mean_accuracy: hi,
                }),
            }
        }
    }
    let doc = SummaryDocument {
        version: 1,
        summary,
        accuracy_ranges: ranges,
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Frontier rows: every method's point with its front flag, its
/// trial-spread confidence value, and the accuracy range of its model
/// family. With several datasets an `<aggregate>` section follows:
/// point values are means across datasets and the confidence value is
/// the mean of the per-dataset standard deviations.
pub fn write_frontier_csv(
    path: &Path,
    results_by_dataset: &[(String, Vec<MethodResult>)],
    kind: MetricKind,
    models_known: bool,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    writer.write_record([
        "dataset",
        "method",
        "regime",
        "regime_rank",
        "worst_group_ce",
        "ci",
        "on_front",
        "mean_accuracy",
        "model",
        "model_accuracy_min",
        "model_accuracy_max",
    ])?;
    let emit_section = |writer: &mut csv::Writer<std::fs::File>,
                        dataset: &str,
                        results: &[MethodResult],
                        cis: &[f64]|
     -> Result<()> {
        let points = pareto_points(results, kind);
        let flags = pareto_flags(&points);
        let ranges = accuracy_range(results);
        for ((point, on_front), ci) in points.iter().zip(flags).zip(cis) {
            let result = results.iter().find(|r| r.method == point.method).unwrap();
            let (model_name, range) = if models_known {
                let name = match result.model {
                    BaseModel::Gbt => "gbt",
                    BaseModel::Mlp => "mlp",
                };
                let range = ranges
                    .iter()
                    .find(|(m, _, _)| *m == result.model)
                    .map(|(_, lo, hi)| (*lo, *hi))
                    .unwrap_or((f64::NAN, f64::NAN));
                (name, range)
            } else {
                let accs: Vec<f64> = results.iter().map(|r| r.mean_accuracy).collect();
                let lo = accs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                ("unknown", (lo, hi))
            };
            writer.write_record([
                dataset,
                point.method.as_str(),
                point.regime.as_str(),
                &point.regime.rank().to_string(),
                &format!("{}", point.y),
                &format!("{ci}"),
                &on_front.to_string(),
                &format!("{}", result.mean_accuracy),
                model_name,
                &format!("{}", range.0),
                &format!("{}", range.1),
            ])?;
        }
        Ok(())
    };
    for (dataset, results) in results_by_dataset {
        let cis: Vec<f64> = pareto_points(results, kind)
            .iter()
            .map(|p| {
                results
                    .iter()
                    .find(|r| r.method == p.method)
                    .and_then(|r| {
                        r.std_worst_group
                            .iter()
                            .find(|(k, _)| *k == kind)
                            .map(|(_, v)| *v)
                    })
                    .unwrap_or(f64::NAN)
            })
            .collect();
        emit_section(&mut writer, dataset, results, &cis)?;
    }
    if results_by_dataset.len() > 1 {
        if let Some((aggregated, cis)) = aggregate_over_datasets(results_by_dataset, kind) {
            emit_section(&mut writer, "<aggregate>", &aggregated, &cis)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Cross-dataset aggregation for the frontier: per method, the mean of
/// the per-dataset means, with the confidence value computed as the
/// mean of the per-dataset standard deviations. Only methods present
/// on every dataset aggregate.
fn aggregate_over_datasets(
    results_by_dataset: &[(String, Vec<MethodResult>)],
    kind: MetricKind,
) -> Option<(Vec<MethodResult>, Vec<f64>)> {
    let first = &results_by_dataset.first()?.1;
    let mut aggregated = Vec::new();
    let mut cis = Vec::new();
    for template in first {
        let mut ys = Vec::new();
        let mut stds = Vec::new();
        let mut accs = Vec::new();
        for (_, results) in results_by_dataset {
            let found = results
                .iter()
                .find(|r| r.method == template.method && r.regime == template.regime)?;
            ys.push(found.mean_worst_group_for(kind)?);
            stds.push(
                found
                    .std_worst_group
                    .iter()
                    .find(|(k, _)| *k == kind)
                    .map(|(_, v)| *v)?,
            );
            accs.push(found.mean_accuracy);
        }
        let n = ys.len() as f64;
        let mut clone = template.clone();
        clone.mean_worst_group = vec![(kind, ys.iter().sum::<f64>() / n)];
        clone.mean_accuracy = accs.iter().sum::<f64>() / n;
        cis.push(stds.iter().sum::<f64>() / n);
        aggregated.push(clone);
    }
    Some((aggregated, cis))
}

/// Minimal SVG scatter of the frontier: regime rank on x, worst-group
/// CE on y, front points filled and connected.
pub fn write_frontier_svg(
    path: &Path,
    results_by_dataset: &[(String, Vec<MethodResult>)],
    kind: MetricKind,
) -> Result<()> {
    let mut all_points: Vec<(String, ParetoPoint, bool)> = Vec::new();
    for (dataset, results) in results_by_dataset {
        let points = pareto_points(results, kind);
        let flags = pareto_flags(&points);
        for (p, f) in points.into_iter().zip(flags) {
            all_points.push((dataset.clone(), p, f));
        }
    }
    if all_points.is_empty() {
        return Ok(());
    }
    let (width, height) = (760.0, 520.0);
    let (left, right, top, bottom) = (90.0, 40.0, 40.0, 70.0);
    let y_max = all_points
        .iter()
        .map(|(_, p, _)| p.y)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-9);
    let y_min = 0.0;
    let x_pos = |rank: usize| left + (width - left - right) * rank as f64 / 3.0;
    let y_pos = |y: f64| top + (height - top - bottom) * (1.0 - (y - y_min) / (y_max - y_min));

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-size=\"15\" font-family=\"sans-serif\">Worst-group {} vs group-data requirement</text>\n",
        left,
        kind.as_str()
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        height - bottom,
        width - right,
        height - bottom
    ));
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        height - bottom
    ));
    for regime in Regime::ALL {
        let x = x_pos(regime.rank());
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"12\" font-family=\"sans-serif\" text-anchor=\"middle\">{}</text>\n",
            height - bottom + 24.0,
            regime.label()
        ));
    }
    for k in 0..=4 {
        let y = y_min + (y_max - y_min) * k as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" font-family=\"sans-serif\" text-anchor=\"end\">{y:.3}</text>\n",
            left - 8.0,
            y_pos(y) + 4.0
        ));
    }
    // Front polyline per dataset.
    for (dataset, _) in results_by_dataset {
        let mut front: Vec<&(String, ParetoPoint, bool)> = all_points
            .iter()
            .filter(|(d, _, flag)| d == dataset && *flag)
            .collect();
        front.sort_by(|a, b| {
            a.1.regime
                .rank()
                .cmp(&b.1.regime.rank())
                .then(a.1.y.partial_cmp(&b.1.y).unwrap())
        });
        if front.len() > 1 {
            let path_points: Vec<String> = front
                .iter()
                .map(|(_, p, _)| format!("{:.1},{:.1}", x_pos(p.regime.rank()), y_pos(p.y)))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\"/>\n",
                path_points.join(" ")
            ));
        }
    }
    // Points and labels.
    for (_, point, on_front) in &all_points {
        let x = x_pos(point.regime.rank());
        let y = y_pos(point.y);
        if *on_front {
            svg.push_str(&format!(
                "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"5\" fill=\"#1f77b4\"/>\n"
            ));
        } else {
            svg.push_str(&format!(
                "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"4\" fill=\"none\" stroke=\"#777\"/>\n"
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" font-family=\"sans-serif\">{}</text>\n",
            x + 8.0,
            y + 3.0,
            point.method
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Which report files to emit.
#[derive(Debug, Clone, Copy)]
pub struct ReportFormats {
    pub csv: bool,
    pub json: bool,
    pub svg: bool,
}

impl Default for ReportFormats {
    fn default() -> Self {
        ReportFormats {
            csv: true,
            json: true,
            svg: true,
        }
    }
}

impl ReportFormats {
    /// Parses a comma-separated subset of `csv,json,svg`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut formats = ReportFormats {
            csv: false,
            json: false,
            svg: false,
        };
        for token in text.split(',') {
            match token.trim() {
                "csv" => formats.csv = true,
                "json" => formats.json = true,
                "svg" => formats.svg = true,
                "" => {}
                other => bail!("unknown report format {other:?} (expected csv, json, svg)"),
            }
        }
        Ok(formats)
    }
}

/// Emits the selected report files into `out_dir`.
pub fn emit_reports(
    out_dir: &Path,
    results_by_dataset: &[(String, Vec<MethodResult>)],
    kind: MetricKind,
    models_known: bool,
    formats: ReportFormats,
) -> Result<Summary> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    if formats.csv {
        write_results_csv(&out_dir.join("results.csv"), results_by_dataset)?;
        write_frontier_csv(
            &out_dir.join("frontier.csv"),
            results_by_dataset,
            kind,
            models_known,
        )?;
    }
    let summary = summarize(results_by_dataset, kind);
    if formats.json {
        write_summary_json(&out_dir.join("summary.json"), &summary, results_by_dataset)?;
    }
    if formats.svg {
        write_frontier_svg(&out_dir.join("frontier.svg"), results_by_dataset, kind)?;
    }
    Ok(summary)
}

/// Plain-text rendering of the summary table.
pub fn format_summary(summary: &Summary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Summary over {} dataset(s), metric {}:\n",
        summary.n_datasets,
        summary.metric.as_str()
    ));
    out.push_str("regime          | methods | times optimal | best method\n");
    for row in &summary.rows {
        out.push_str(&format!(
            "{:<15} | {:>7} | {:>13} | {}{}\n",
            row.regime.label(),
            row.n_methods,
            row.times_optimal,
            row.best_method,
            if row.modal_tie { "  (modal tie)" } else { "" }
        ));
    }
    out
}
