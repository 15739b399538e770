//! Command-line front end: dataset synthesis, benchmark runs, Pareto
//! analysis, report emission, and one-off calibrate/evaluate passes
//! over score files.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use paritycal_cli::config::{load_experiment_config, load_synth_config};
use paritycal_cli::csvio::{load_scores, write_dataset, write_scores, ScoreFile};
use paritycal_cli::report::{
    emit_reports, format_summary, read_results_csv, write_frontier_csv, ReportFormats,
};
use paritycal_cli::runner::run_experiment_parallel;
use paritycal_cli::{exit_code_for, EXIT_OK};
use paritycal_core::calibrators::{Calibrator, CalibratorSpec};
use paritycal_core::data::synth_generate;
use paritycal_core::harness::{pareto_front, pareto_points, run_experiment, MethodResult};
use paritycal_core::metrics::{metric_id_list, per_group, worst_group, zip_samples, MetricSpec};

#[derive(Parser)]
#[command(
    name = "paritycal",
    about = "Fairness-calibration toolkit: per-group calibration metrics, calibrators, group-robust training, and a benchmark harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV with known ground truth.
    Synth(SynthArgs),
    /// Run a benchmark experiment from a config file.
    Bench(BenchArgs),
    /// Compute the Pareto front from a results.csv file.
    Pareto(ParetoArgs),
    /// Emit summary/frontier reports from a results.csv file.
    Report(ReportArgs),
    /// Fit a calibrator on a score CSV and write calibrated scores.
    Calibrate(CalibrateArgs),
    /// Evaluate calibration metrics on a score CSV.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file describing the generator.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Include the generator's true probabilities as a __true_p column.
    #[arg(long)]
    true_p: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for results.csv, summary.json, frontier.*.
    #[arg(long)]
    out: PathBuf,
    /// Run trials sequentially (parallel by default).
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ParetoArgs {
    /// Long-format results.csv produced by `bench`.
    #[arg(long)]
    input: PathBuf,
    /// Worst-group metric to rank by.
    #[arg(long, default_value = "ecce_mean")]
    metric: String,
    /// Optional frontier.csv output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Long-format results.csv produced by `bench`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worst-group metric the summary ranks by.
    #[arg(long, default_value = "ecce_mean")]
    metric: String,
    /// Comma-separated subset of csv,json,svg.
    #[arg(long, default_value = "csv,json,svg")]
    formats: String,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Score CSV (columns score,label[,group]) to calibrate.
    #[arg(long)]
    input: PathBuf,
    /// Calibrator id (histogram, isotonic, platt, beta, temperature,
    /// bbq, platt_binner, per_group:<inner>, group_robust).
    #[arg(long, default_value = "isotonic")]
    method: String,
    /// Output CSV of calibrated scores.
    #[arg(long)]
    out: PathBuf,
    /// Fit on this file instead of --input.
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Save the fitted calibrator document here.
    #[arg(long)]
    save_calibrator: Option<PathBuf>,
    /// Apply a previously saved calibrator instead of fitting.
    #[arg(long)]
    load_calibrator: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Score CSV (columns score,label[,group]).
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated metric ids.
    #[arg(long, default_value = "ecce_mean,msce,brier,accuracy")]
    metrics: String,
    /// Also print per-group values (requires a group column).
    #[arg(long)]
    per_group: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(exit_code_for(&error) as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => synth(args),
        Command::Bench(args) => bench(args),
        Command::Pareto(args) => pareto(args),
        Command::Report(args) => report(args),
        Command::Calibrate(args) => calibrate(args),
        Command::Evaluate(args) => evaluate(args),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let config = load_synth_config(&args.config)?;
    let (dataset, true_p) = synth_generate(&config).map_err(anyhow::Error::new)?;
    write_dataset(
        &args.out,
        &dataset,
        if args.true_p { Some(&true_p) } else { None },
    )?;
    println!(
        "wrote {} rows x {} features ({} groups) to {}",
        dataset.n(),
        dataset.p(),
        dataset.n_groups(),
        args.out.display()
    );
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let config = load_experiment_config(&args.config)?;
    let config_dir = args
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let options = config.options()?;
    let specs = config.method_specs()?;
    let datasets = config.load_datasets(&config_dir)?;

    let mut results_by_dataset: Vec<(String, Vec<MethodResult>)> = Vec::new();
    for (name, dataset) in &datasets {
        eprintln!(
            "benchmarking {name}: {} rows, {} methods, {} trials",
            dataset.n(),
            specs.len(),
            config.experiment.trials
        );
        let (results, audit) = if args.sequential {
            run_experiment(
                dataset,
                &specs,
                config.experiment.trials,
                config.experiment.base_seed,
                &options,
            )
            .map_err(anyhow::Error::new)?
        } else {
            run_experiment_parallel(
                dataset,
                &specs,
                config.experiment.trials,
                config.experiment.base_seed,
                &options,
            )?
        };
        eprintln!("  audit: {} granted group reads", audit.entries.len());
        results_by_dataset.push((name.clone(), results));
    }

    let summary = emit_reports(
        &args.out,
        &results_by_dataset,
        paritycal_core::metrics::MetricKind::EcceMean,
        true,
        ReportFormats::default(),
    )?;
    print!("{}", format_summary(&summary));
    println!(
        "reports written to {} (results.csv, summary.json, frontier.csv, frontier.svg)",
        args.out.display()
    );
    Ok(())
}

fn pareto(args: ParetoArgs) -> Result<()> {
    let kind = MetricSpec::from_id(&args.metric)
        .map_err(anyhow::Error::new)?
        .kind();
    let results_by_dataset = read_results_csv(&args.input)?;
    for (dataset, results) in &results_by_dataset {
        let points = pareto_points(results, kind);
        if points.is_empty() {
            bail!(
                "results for {dataset} carry no worst_group_{} rows",
                kind.as_str()
            );
        }
        let front = pareto_front(&points);
        println!(
            "{dataset}: Pareto front ({} of {} points)",
            front.len(),
            points.len()
        );
        for point in front {
            println!(
                "  {:<14} {:<24} worst-group {} = {:.6}",
                point.regime.label(),
                point.method,
                kind.as_str(),
                point.y
            );
        }
    }
    if let Some(out) = args.out {
        write_frontier_csv(&out, &results_by_dataset, kind, false)?;
        println!("frontier written to {}", out.display());
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let kind = MetricSpec::from_id(&args.metric)
        .map_err(anyhow::Error::new)?
        .kind();
    let results_by_dataset = read_results_csv(&args.input)?;
    let formats = ReportFormats::parse(&args.formats)?;
    let summary = emit_reports(&args.out, &results_by_dataset, kind, false, formats)?;
    print!("{}", format_summary(&summary));
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let apply_file = load_scores(&args.input)?;
    let calibrator = match &args.load_calibrator {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            Calibrator::from_json(&text).map_err(anyhow::Error::new)?
        }
        None => {
            let fit_file = match &args.fit {
                Some(path) => load_scores(path)?,
                None => load_scores(&args.input)?,
            };
            let spec = CalibratorSpec::from_id(&args.method).map_err(anyhow::Error::new)?;
            if spec.needs_groups_to_fit() && !fit_file.has_groups {
                bail!("calibrator {} needs a group column to fit", args.method);
            }
            let groups = fit_file.has_groups.then_some(fit_file.groups.as_slice());
            Calibrator::fit(&spec, &fit_file.scores, &fit_file.labels, groups)
                .map_err(anyhow::Error::new)?
        }
    };
    if let Some(path) = &args.save_calibrator {
        std::fs::write(path, calibrator.to_json())
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    let groups = apply_file
        .has_groups
        .then_some(apply_file.groups.as_slice());
    let calibrated = calibrator
        .apply_all(&apply_file.scores, groups)
        .map_err(anyhow::Error::new)?;
    let out_file = ScoreFile {
        scores: calibrated,
        ..apply_file
    };
    write_scores(&args.out, &out_file)?;
    println!(
        "wrote {} calibrated scores to {}",
        out_file.scores.len(),
        args.out.display()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let file = load_scores(&args.input)?;
    let samples = zip_samples(
        &file.scores,
        &file.labels,
        file.has_groups.then_some(file.groups.as_slice()),
    );
    for id in args.metrics.split(',') {
        let id = id.trim();
        if id.is_empty() {
            continue;
        }
        let spec = MetricSpec::from_id(id)
            .map_err(anyhow::Error::new)
            .with_context(|| format!("known metrics: {}", metric_id_list()))?;
        let overall = spec.evaluate(&samples).map_err(anyhow::Error::new)?;
        println!(
            "{id}: overall = {:.6} (n = {})",
            overall.value, overall.n_used
        );
        if file.has_groups {
            let (wg, gid) = worst_group(&samples, &spec).map_err(anyhow::Error::new)?;
            println!(
                "{id}: worst_group = {:.6} (group {}, n = {})",
                wg.value, file.group_names[gid], wg.n_used
            );
            if args.per_group {
                for (gid, value) in per_group(&samples, &spec).map_err(anyhow::Error::new)? {
                    println!(
                        "{id}:   group {} = {:.6} (n = {})",
                        file.group_names[gid], value.value, value.n_used
                    );
                }
            }
        }
    }
    Ok(())
}
