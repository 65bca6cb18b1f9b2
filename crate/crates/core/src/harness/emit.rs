//! Result emission. The CSV row schema and the JSON aggregate keys are a
//! stable interface: byte-identical output for identical inputs.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::RunError;

use super::sweep::ExperimentResult;
use super::OutFormat;

pub const CSV_HEADER: &str =
    "protocol,n,seed,profile,correct,t_convergence,t_stabilization,distinct_states,error_raised";

fn opt(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Render the per-run CSV (header plus one row per cell, sorted).
pub fn render_csv(result: &ExperimentResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for cell in &result.cells {
        let m = &cell.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            result.protocol,
            cell.n,
            cell.seed,
            result.profile,
            m.correct,
            opt(m.t_convergence),
            opt(m.t_stabilization),
            m.state_usage.distinct_composite_states,
            m.error_raised,
        ));
    }
    out
}

#[derive(Serialize)]
struct AggregateRow<'a> {
    protocol: &'a str,
    n: usize,
    success_rate: f64,
    median_tc: Option<u64>,
    p95_tc: Option<u64>,
    fitted_c: Option<f64>,
    form: super::fit::ComplexityForm,
}

/// Render the aggregate JSON (array of per-n objects).
pub fn render_json(result: &ExperimentResult) -> String {
    let rows: Vec<AggregateRow<'_>> = result
        .aggregates
        .iter()
        .map(|a| AggregateRow {
            protocol: &a.protocol,
            n: a.n,
            success_rate: a.success_rate,
            median_tc: a.median_tc,
            p95_tc: a.p95_tc,
            fitted_c: a.fitted_c,
            form: a.form,
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("aggregates serialize")
}

/// Write one output file in the requested format.
pub fn emit(result: &ExperimentResult, format: OutFormat, path: &Path) -> Result<(), RunError> {
    let text = match format {
        OutFormat::Csv => render_csv(result),
        OutFormat::Json => render_json(result),
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}
