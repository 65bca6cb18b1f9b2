//! The acceptance suite: ten statistical and exact checks, each printed as a
//! single pass/fail line. `popproto check` exits 0 only when every selected
//! criterion passes; the `acceptance` integration test asserts the same.

use std::time::Instant;

use crate::engine::{run, RunLimits, Runner};
use crate::harness::fault::FaultSpec;
use crate::harness::fit::{fit_complexity, ComplexityForm};
use crate::harness::sweep::{sweep, ExperimentResult};
use crate::harness::ExperimentSpec;
use crate::profile::Profile;
use crate::suites::make_suite;

#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub details: String,
}

impl CriterionReport {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {} - {}",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.details
        )
    }
}

pub struct AcceptanceOutcome {
    pub reports: Vec<CriterionReport>,
    pub elapsed_secs: f64,
}

impl AcceptanceOutcome {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

pub const CRITERIA: &[(usize, &str)] = &[
    (1, "approximate correctness and convergence bound"),
    (2, "powers-of-two balancing drains within 16 n log n"),
    (3, "exact counting correctness and convergence bound"),
    (4, "approximation stage lands within log n +/- 3"),
    (5, "refinement output algebra is exact"),
    (6, "leader elections elect a unique leader"),
    (7, "backup protocols are exact for n in [2, 64]"),
    (8, "injected faults are detected and repaired"),
    (9, "broadcast completes within 4 n ln n"),
    (10, "determinism and suite runtime"),
];

/// Shared state across criteria (criterion 4 reuses criterion 3's sweep).
#[derive(Default)]
struct Ctx {
    exact_sweep: Option<ExperimentResult>,
    started: Option<Instant>,
}

/// Run the selected criteria (all of them by default) in order, invoking
/// `progress` as each one finishes.
pub fn run_all(
    only: Option<&[usize]>,
    mut progress: impl FnMut(&CriterionReport),
) -> AcceptanceOutcome {
    let started = Instant::now();
    let mut ctx = Ctx {
        exact_sweep: None,
        started: Some(started),
    };
    let mut reports = Vec::new();
    for &(id, name) in CRITERIA {
        if let Some(filter) = only {
            if !filter.contains(&id) {
                continue;
            }
        }
        let report = CriterionReport {
            id,
            name,
            ..run_criterion(id, name, &mut ctx)
        };
        progress(&report);
        reports.push(report);
    }
    AcceptanceOutcome {
        reports,
        elapsed_secs: started.elapsed().as_secs_f64(),
    }
}

fn run_criterion(id: usize, name: &'static str, ctx: &mut Ctx) -> CriterionReport {
    let (pass, details) = match id {
        1 => approximate_correctness(),
        2 => pow2_balancing_bound(),
        3 => exact_correctness(ctx),
        4 => approximation_quality(ctx),
        5 => output_algebra(),
        6 => leader_uniqueness(),
        7 => backup_exactness(),
        8 => fault_stability(),
        9 => broadcast_bound(),
        10 => determinism_and_runtime(ctx),
        _ => (false, "unknown criterion".to_string()),
    };
    CriterionReport {
        id,
        name,
        pass,
        details,
    }
}

// ---------------------------------------------------------------------------
// Criterion 1
// ---------------------------------------------------------------------------

fn approximate_correctness() -> (bool, String) {
    let ns = [256usize, 1024, 4096];
    let seeds: Vec<u64> = (0..50).collect();
    let spec = ExperimentSpec::new("approximate", ns.to_vec(), seeds, Profile::desk());
    let result = match sweep(&spec) {
        Ok(r) => r,
        Err(e) => return (false, format!("sweep failed: {e}")),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    let mut points = Vec::new();
    for agg in &result.aggregates {
        if agg.success_rate < 0.90 {
            pass = false;
        }
        parts.push(format!("n={} ok={:.0}%", agg.n, agg.success_rate * 100.0));
        if let Some(t) = agg.median_tc {
            points.push((agg.n, t as f64));
        }
    }
    match fit_complexity(&points, ComplexityForm::NLogSqN) {
        Ok(fit) => {
            let spread = fit.ratio_spread();
            if spread > 2.0 {
                pass = false;
            }
            parts.push(format!("c^={:.2} spread=x{:.2}", fit.c_hat, spread));
        }
        Err(_) => {
            pass = false;
            parts.push("fit unavailable".into());
        }
    }
    (pass, parts.join(", "))
}

// ---------------------------------------------------------------------------
// Criterion 2
// ---------------------------------------------------------------------------

fn pow2_balancing_bound() -> (bool, String) {
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [256usize, 1024] {
        let budget = (16.0 * n as f64 * (n as f64).log2()).floor() as u64;
        let suite = make_suite("pow2-balance", &Profile::desk()).unwrap();
        let mut good = 0u32;
        let trials = 100;
        for seed in 0..trials {
            // Never declare early stabilization: observe the state after
            // exactly the budgeted number of interactions.
            let mut runner = Runner::new(
                suite.as_ref(),
                n,
                seed,
                RunLimits::new(budget, u64::MAX),
            )
            .unwrap();
            runner.run_to_end().unwrap();
            let max_k = runner.agents().iter().map(|a| a.k.raw()).max().unwrap();
            if max_k <= 0 {
                good += 1;
            }
        }
        if good < 95 {
            pass = false;
        }
        parts.push(format!("n={n} drained {good}/{trials}"));
    }
    (pass, parts.join(", "))
}

// ---------------------------------------------------------------------------
// Criteria 3 and 4
// ---------------------------------------------------------------------------

fn exact_sweep(ctx: &mut Ctx) -> Result<&ExperimentResult, String> {
    if ctx.exact_sweep.is_none() {
        let ns = [256usize, 1024, 4096];
        let seeds: Vec<u64> = (0..50).collect();
        let spec = ExperimentSpec::new("count-exact", ns.to_vec(), seeds, Profile::desk());
        let result = sweep(&spec).map_err(|e| format!("sweep failed: {e}"))?;
        ctx.exact_sweep = Some(result);
    }
    Ok(ctx.exact_sweep.as_ref().unwrap())
}

fn exact_correctness(ctx: &mut Ctx) -> (bool, String) {
    let result = match exact_sweep(ctx) {
        Ok(r) => r,
        Err(e) => return (false, e),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    let mut points = Vec::new();
    for agg in &result.aggregates {
        if agg.success_rate < 0.90 {
            pass = false;
        }
        parts.push(format!("n={} ok={:.0}%", agg.n, agg.success_rate * 100.0));
        if let Some(t) = agg.median_tc {
            points.push((agg.n, t as f64));
        }
    }
    match fit_complexity(&points, ComplexityForm::NLogN) {
        Ok(fit) => {
            let spread = fit.ratio_spread();
            if spread > 2.0 {
                pass = false;
            }
            parts.push(format!("c^={:.2} spread=x{:.2}", fit.c_hat, spread));
        }
        Err(_) => {
            pass = false;
            parts.push("fit unavailable".into());
        }
    }
    (pass, parts.join(", "))
}

fn approximation_quality(ctx: &mut Ctx) -> (bool, String) {
    let result = match exact_sweep(ctx) {
        Ok(r) => r,
        Err(e) => return (false, e),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for &n in &[256usize, 1024, 4096] {
        let lg = (n as f64).log2();
        let lo = (lg - 3.0).floor() as i64;
        let hi = (lg + 3.0).ceil() as i64;
        let cells: Vec<_> = result.cells.iter().filter(|c| c.n == n).collect();
        let mut good = 0u32;
        for cell in &cells {
            // After the refinement broadcast every agent holds the leader's
            // approximation, so the run's maximal observed k is the leader's.
            let k_max = cell
                .metrics
                .state_usage
                .per_var
                .iter()
                .find(|v| v.name == "k")
                .map(|v| v.max);
            if let Some(k) = k_max {
                if k >= lo && k <= hi {
                    good += 1;
                }
            }
        }
        let frac = good as f64 / cells.len().max(1) as f64;
        if frac < 0.90 {
            pass = false;
        }
        parts.push(format!("n={n} in-window={:.0}%", frac * 100.0));
    }
    (pass, parts.join(", "))
}

// ---------------------------------------------------------------------------
// Criterion 5
// ---------------------------------------------------------------------------

/// Exact check of round(M / (M/n + r)) = n using integer arithmetic only:
/// with 4r integral, round(x) = n holds iff |4Mn - 4n*den| < 2*den where
/// den = 4M + 4r n.
fn lemma9_holds(n: u64) -> bool {
    // Smallest k with 256 * 2^(2k) >= 4 n^2, plus a larger one for slack.
    let need = 4u128 * (n as u128) * (n as u128);
    let mut k = 0u32;
    while 256u128 << (2 * k) < need {
        k += 1;
    }
    for kk in [k, k + 2] {
        let m = 256u128 << (2 * kk);
        for r4 in [-6i128, -3, 0, 3, 6] {
            // den = 4M + (4r) n ; x = 4Mn / den ; need |x - n| < 1/2.
            let den = 4 * m as i128 + r4 * n as i128;
            let num = 4 * m as i128 * n as i128;
            // |num - n*den| * 2 < den  <=>  |x - n| < 1/2
            let diff = (num - n as i128 * den).abs();
            if 2 * diff >= den {
                return false;
            }
            // The production output function must agree on integer loads
            // nearest to M/n + r.
            let l = ((m as i128 * 4 + r4 * n as i128) / (4 * n as i128)) as u128;
            for cand in [l.saturating_sub(1), l, l + 1] {
                if cand == 0 {
                    continue;
                }
                // Only check loads inside the modeled error band.
                let back4 = 4 * cand as i128 * n as i128 - 4 * m as i128;
                if back4.abs() > 6 * n as i128 {
                    continue;
                }
                let out = crate::exact::refinement_output(kk as i16, cand);
                if out != Some(n as i64) {
                    return false;
                }
            }
        }
    }
    true
}

fn output_algebra() -> (bool, String) {
    let mut checked = 0u64;
    for n in 4..=10_000u64 {
        if !lemma9_holds(n) {
            return (false, format!("violated at n={n}"));
        }
        checked += 1;
    }
    let mut n = 10_000u64;
    while n <= 1_000_000 {
        if !lemma9_holds(n) {
            return (false, format!("violated at n={n}"));
        }
        checked += 1;
        n += 89;
    }
    for exp in 2..=20u32 {
        let base = 1u64 << exp;
        for d in [-3i64, -1, 0, 1, 3] {
            let n = base as i64 + d;
            if (4..=1_000_000).contains(&n) && !lemma9_holds(n as u64) {
                return (false, format!("violated at n={n}"));
            }
            checked += 1;
        }
    }
    (true, format!("{checked} population sizes, exact"))
}

// ---------------------------------------------------------------------------
// Criterion 6
// ---------------------------------------------------------------------------

fn election_trial(protocol: &str, n: usize, seed: u64) -> Result<(bool, bool), String> {
    let profile = Profile::desk();
    let suite = make_suite(protocol, &profile).unwrap();
    let max = crate::harness::default_max_interactions(protocol, n, &profile);
    let mut runner = Runner::new(suite.as_ref(), n, seed, RunLimits::new(max, u64::MAX))
        .map_err(|e| e.to_string())?;
    let mut unique_at_first_done1 = false;
    let mut seen_done1 = false;
    let mut invariant_ok = true;
    let mut steps_since_sample = 0u64;
    loop {
        let more = runner.step().map_err(|e| e.to_string())?;
        if !seen_done1 {
            let (i, j) = runner.last_touched();
            let agents = runner.agents();
            if agents[i].done1 || agents[j].done1 {
                seen_done1 = true;
                let leaders = agents.iter().filter(|a| a.leader).count();
                unique_at_first_done1 = leaders == 1;
            }
        }
        steps_since_sample += 1;
        if steps_since_sample >= n as u64 {
            steps_since_sample = 0;
            let agents = runner.agents();
            if !agents.iter().any(|a| a.leader) {
                invariant_ok = false;
            }
            if agents.iter().all(|a| a.done1) {
                break;
            }
        }
        if !more {
            break;
        }
    }
    if !seen_done1 {
        return Ok((false, invariant_ok));
    }
    Ok((unique_at_first_done1, invariant_ok))
}

fn leader_uniqueness() -> (bool, String) {
    use rayon::prelude::*;
    let n = 1024;
    let trials: Vec<u64> = (0..100).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for protocol in ["approximate", "count-exact"] {
        let results: Result<Vec<(bool, bool)>, String> = trials
            .par_iter()
            .map(|&seed| election_trial(protocol, n, seed))
            .collect();
        let results = match results {
            Ok(r) => r,
            Err(e) => return (false, e),
        };
        let unique = results.iter().filter(|r| r.0).count();
        let invariant = results.iter().filter(|r| r.1).count();
        if unique < 95 || invariant != results.len() {
            pass = false;
        }
        let kind = if protocol == "approximate" {
            "slow"
        } else {
            "fast"
        };
        parts.push(format!(
            "{kind}: unique {unique}/100, >=1 leader {invariant}/100"
        ));
    }
    (pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// Criterion 7
// ---------------------------------------------------------------------------

fn backup_exactness() -> (bool, String) {
    use rayon::prelude::*;
    let cells: Vec<(usize, u64)> = (2..=64usize)
        .flat_map(|n| (0..10u64).map(move |s| (n, s)))
        .collect();

    let exact_bad: Vec<String> = cells
        .par_iter()
        .filter_map(|&(n, seed)| {
            let limits = RunLimits::new(
                crate::harness::default_max_interactions("backup-exact", n, &Profile::desk()),
                RunLimits::default_probe(n),
            );
            match run(&crate::exact::BackupExactSuite, n, seed, limits) {
                Ok(m) if m.correct => None,
                Ok(_) => Some(format!("backup-exact n={n} seed={seed} incorrect")),
                Err(e) => Some(format!("backup-exact n={n} seed={seed}: {e}")),
            }
        })
        .collect();

    let approx_bad: Vec<String> = cells
        .par_iter()
        .filter_map(|&(n, seed)| {
            let limits = RunLimits::new(
                crate::harness::default_max_interactions("backup-approx", n, &Profile::desk()),
                RunLimits::default_probe(n),
            );
            let suite = crate::approx::BackupApproxSuite;
            let mut runner = match Runner::new(&suite, n, seed, limits) {
                Ok(r) => r,
                Err(e) => return Some(format!("backup-approx n={n}: {e}")),
            };
            if let Err(e) = runner.run_to_end() {
                return Some(format!("backup-approx n={n} seed={seed}: {e}"));
            }
            let metrics = runner.metrics();
            if !metrics.correct {
                return Some(format!("backup-approx n={n} seed={seed} incorrect"));
            }
            let fl = (n as u64).ilog2() as i16;
            let mut per_level = vec![0u32; fl as usize + 2];
            for a in runner.agents() {
                let k = a.bk.k.raw();
                if k >= 0 {
                    if k > fl {
                        return Some(format!("backup-approx n={n}: pile above floor(log n)"));
                    }
                    per_level[k as usize] += 1;
                }
                if a.bk.kmax != fl {
                    return Some(format!("backup-approx n={n}: kmax {} != {fl}", a.bk.kmax));
                }
            }
            for (bit, &count) in per_level.iter().enumerate().take(fl as usize + 1) {
                let expected = ((n >> bit) & 1) as u32;
                if count != expected {
                    return Some(format!(
                        "backup-approx n={n}: level {bit} holds {count} piles, want {expected}"
                    ));
                }
            }
            let bound = ((fl as u64 + 1) * (fl as u64 + 1)) as u64;
            if metrics.state_usage.distinct_composite_states > bound {
                return Some(format!(
                    "backup-approx n={n}: {} composite states > {bound}",
                    metrics.state_usage.distinct_composite_states
                ));
            }
            None
        })
        .collect();

    let mut problems = exact_bad;
    problems.extend(approx_bad);
    if problems.is_empty() {
        (true, format!("{} cells, all exact", cells.len() * 2))
    } else {
        (false, problems[..problems.len().min(3)].join("; "))
    }
}

// ---------------------------------------------------------------------------
// Criterion 8
// ---------------------------------------------------------------------------

fn fault_stability() -> (bool, String) {
    use rayon::prelude::*;
    let n = 256usize;
    let cases = [
        ("approximate-stable", "corrupt-k:-3@pre-errordetect"),
        ("count-exact-stable", "corrupt-k:-5@pre-refine"),
        ("count-exact-stable", "dup-leader@post-election"),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (protocol, fault_text) in cases {
        let fault = FaultSpec::parse(fault_text).unwrap();
        let profile = Profile::desk();
        let results: Vec<Result<(bool, bool), String>> = (0..20u64)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&seed| {
                let suite = make_suite(protocol, &profile).unwrap();
                let max = crate::harness::default_max_interactions(protocol, n, &profile);
                let limits = RunLimits::new(max, RunLimits::default_probe(n));
                let mut runner = Runner::new(suite.as_ref(), n, seed, limits)
                    .map_err(|e| e.to_string())?
                    .with_fault(fault.hook());
                runner.run_to_end().map_err(|e| e.to_string())?;
                let all_error = runner.agents().iter().all(|a| a.error);
                let metrics = runner.metrics();
                Ok((all_error, metrics.correct))
            })
            .collect();
        let mut repaired = 0;
        for r in &results {
            match r {
                Ok((true, true)) => repaired += 1,
                Ok(_) => {}
                Err(e) => return (false, format!("{protocol} {fault_text}: {e}")),
            }
        }
        if repaired != 20 {
            pass = false;
        }
        parts.push(format!("{fault_text} on {protocol}: {repaired}/20"));
    }
    (pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// Criterion 9
// ---------------------------------------------------------------------------

fn broadcast_bound() -> (bool, String) {
    use rayon::prelude::*;
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [256usize, 1024, 4096] {
        let bound = (4.0 * n as f64 * (n as f64).ln()).ceil() as u64;
        let limits = RunLimits::new(bound * 4, RunLimits::default_probe(n));
        let good: u32 = (0..100u64)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&seed| {
                let m = run(&crate::suites::BroadcastSuite, n, seed, limits).unwrap();
                u32::from(m.correct && m.t_convergence.is_some_and(|t| t <= bound))
            })
            .sum();
        if good < 95 {
            pass = false;
        }
        parts.push(format!("n={n}: {good}/100"));
    }
    (pass, parts.join(", "))
}

// ---------------------------------------------------------------------------
// Criterion 10
// ---------------------------------------------------------------------------

fn determinism_and_runtime(ctx: &mut Ctx) -> (bool, String) {
    let profile = Profile::desk();
    let mut pass = true;
    let mut parts = Vec::new();
    for (protocol, n) in [
        ("approximate", 64usize),
        ("count-exact", 64),
        ("backup-exact", 32),
        ("approximate-stable", 48),
    ] {
        let suite = make_suite(protocol, &profile).unwrap();
        let max = crate::harness::default_max_interactions(protocol, n, &profile);
        let limits = RunLimits::new(max, RunLimits::default_probe(n));
        let a = run(suite.as_ref(), n, 42, limits);
        let b = run(suite.as_ref(), n, 42, limits);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                if a.output_history_digest != b.output_history_digest {
                    pass = false;
                    parts.push(format!("{protocol}: digest mismatch"));
                }
            }
            _ => {
                pass = false;
                parts.push(format!("{protocol}: run failed"));
            }
        }
    }
    let elapsed = ctx
        .started
        .map(|s| s.elapsed().as_secs_f64())
        .unwrap_or(0.0);
    if elapsed > 900.0 {
        pass = false;
    }
    parts.push(format!("replays identical, elapsed {elapsed:.0}s (budget 900s)"));
    (pass, parts.join("; "))
}
