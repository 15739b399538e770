//! Benchmark execution with parallel (method, trial) work units and a
//! deterministic sequential reduce.

use anyhow::Result;
use rayon::prelude::*;

use paritycal_core::data::{split, Dataset};
use paritycal_core::error::Error as CoreError;
use paritycal_core::harness::{
    aggregate_trials, run_method_trial, AuditEntry, AuditLog, ExperimentOptions, MethodResult,
    MethodSpec, TrialMetrics,
};

/// Parallel equivalent of the core engine's sequential
/// `run_experiment`: same splits, same seeds, same results.
pub fn run_experiment_parallel(
    dataset: &Dataset,
    specs: &[MethodSpec],
    trials: usize,
    base_seed: u64,
    options: &ExperimentOptions,
) -> Result<(Vec<MethodResult>, AuditLog)> {
    if trials == 0 {
        return Err(anyhow::Error::new(CoreError::invalid_config(
            "need at least one trial",
        )));
    }
    for spec in specs {
        spec.validate().map_err(anyhow::Error::new)?;
    }
    let assignments = (0..trials)
        .map(|trial| {
            split(
                dataset,
                options.ratios,
                base_seed.wrapping_add(trial as u64),
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(anyhow::Error::new)?;

    let mut units: Vec<(usize, usize)> = Vec::new();
    for m in 0..specs.len() {
        for t in 0..trials {
            units.push((m, t));
        }
    }
    let outcomes: Vec<(usize, usize, Result<(TrialMetrics, Vec<_>), CoreError>)> = units
        .par_iter()
        .map(|&(m, t)| {
            let outcome = run_method_trial(
                &specs[m],
                dataset,
                &assignments[t],
                options,
                t,
                base_seed.wrapping_add(t as u64),
            );
            (m, t, outcome)
        })
        .collect();

    let mut per_method: Vec<Vec<Option<TrialMetrics>>> = vec![vec![None; trials]; specs.len()];
    let mut audit = AuditLog::default();
    for (m, t, outcome) in outcomes {
        let (metrics, reads) = outcome.map_err(|e| {
            anyhow::Error::new(CoreError::MethodFailed {
                method: specs[m].id.clone(),
                trial: t,
                source: Box::new(e),
            })
        })?;
        for stage in reads {
            audit.entries.push(AuditEntry {
                method: specs[m].id.clone(),
                trial: t,
                stage,
            });
        }
        per_method[m][t] = Some(metrics);
    }
    // Deterministic audit order regardless of thread scheduling.
    audit.entries.sort_by(|a, b| {
        (&a.method, a.trial, a.stage as usize).cmp(&(&b.method, b.trial, b.stage as usize))
    });

    let results = specs
        .iter()
        .zip(per_method)
        .map(|(spec, slots)| {
            let trials: Vec<TrialMetrics> = slots
                .into_iter()
                .map(|s| s.expect("all units ran"))
                .collect();
            aggregate_trials(spec, trials)
        })
        .collect();
    Ok((results, audit))
}
