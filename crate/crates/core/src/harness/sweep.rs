//! Sweep execution: every (n, seed) cell of an experiment, run independently
//! (and in parallel), then aggregated per population size.

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{run, run_with_fault, RunMetrics};
use crate::error::RunError;
use crate::suites::make_suite;

use super::fit::{fit_complexity, ComplexityForm};
use super::ExperimentSpec;

/// One executed cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellRun {
    pub n: usize,
    pub seed: u64,
    pub metrics: RunMetrics,
}

/// Per-n aggregate statistics.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub protocol: String,
    pub n: usize,
    pub success_rate: f64,
    pub median_tc: Option<u64>,
    pub p95_tc: Option<u64>,
    pub fitted_c: Option<f64>,
    pub form: ComplexityForm,
}

/// Everything a sweep produced.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub protocol: String,
    pub profile: String,
    pub cells: Vec<CellRun>,
    pub aggregates: Vec<Aggregate>,
}

fn percentile(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((sorted.len() as f64 * p).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

/// Run every cell of the spec. Deterministic per cell; cells independent.
pub fn sweep(spec: &ExperimentSpec) -> Result<ExperimentResult, RunError> {
    spec.validate()?;
    make_suite(&spec.protocol, &spec.profile)?;

    let mut cells: Vec<(usize, u64)> = Vec::new();
    for &n in &spec.ns {
        for &seed in &spec.seeds {
            cells.push((n, seed));
        }
    }

    let runs: Result<Vec<CellRun>, RunError> = cells
        .par_iter()
        .map(|&(n, seed)| {
            let suite = make_suite(&spec.protocol, &spec.profile)?;
            let limits = spec.limits_for(n);
            let metrics = match &spec.fault {
                Some(fault) => run_with_fault(suite.as_ref(), n, seed, limits, fault.hook())?,
                None => run(suite.as_ref(), n, seed, limits)?,
            };
            Ok(CellRun { n, seed, metrics })
        })
        .collect();
    let mut runs = runs?;
    runs.sort_by_key(|c| (c.n, c.seed));

    let form = ComplexityForm::for_protocol(&spec.protocol);
    let mut aggregates = Vec::new();
    for &n in &spec.ns {
        let group: Vec<&CellRun> = runs.iter().filter(|c| c.n == n).collect();
        let successes = group.iter().filter(|c| c.metrics.correct).count();
        let mut tcs: Vec<u64> = group
            .iter()
            .filter_map(|c| c.metrics.t_convergence)
            .collect();
        tcs.sort_unstable();
        aggregates.push(Aggregate {
            protocol: spec.protocol.clone(),
            n,
            success_rate: successes as f64 / group.len().max(1) as f64,
            median_tc: percentile(&tcs, 0.5),
            p95_tc: percentile(&tcs, 0.95),
            fitted_c: None,
            form,
        });
    }
    // One shared constant fitted across all n with a median convergence time.
    let points: Vec<(usize, f64)> = aggregates
        .iter()
        .filter_map(|a| a.median_tc.map(|t| (a.n, t as f64)))
        .collect();
    if let Ok(fit) = fit_complexity(&points, form) {
        for a in aggregates.iter_mut() {
            a.fitted_c = Some(fit.c_hat);
        }
    }

    Ok(ExperimentResult {
        protocol: spec.protocol.clone(),
        profile: spec.profile.name.clone(),
        cells: runs,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Profile;

    #[test]
    fn sweep_produces_one_cell_per_n_seed_pair() {
        let spec = ExperimentSpec::new("backup-exact", vec![4, 8], vec![0, 1, 2], Profile::desk());
        let result = sweep(&spec).unwrap();
        assert_eq!(result.cells.len(), 6);
        assert_eq!(result.aggregates.len(), 2);
        for agg in &result.aggregates {
            assert_eq!(agg.success_rate, 1.0);
        }
    }

    #[test]
    fn removing_a_cell_changes_no_other_cell() {
        let full = ExperimentSpec::new("backup-exact", vec![6], vec![0, 1, 2], Profile::desk());
        let partial = ExperimentSpec::new("backup-exact", vec![6], vec![0, 2], Profile::desk());
        let full = sweep(&full).unwrap();
        let partial = sweep(&partial).unwrap();
        for cell in &partial.cells {
            let twin = full
                .cells
                .iter()
                .find(|c| c.n == cell.n && c.seed == cell.seed)
                .unwrap();
            assert_eq!(
                twin.metrics.output_history_digest,
                cell.metrics.output_history_digest
            );
        }
    }

    #[test]
    fn unknown_protocol_fails_before_any_run() {
        let spec = ExperimentSpec::new("nope", vec![4], vec![0], Profile::desk());
        assert!(sweep(&spec).is_err());
    }
}
