//! Distribution of powers-of-two balancing completion times: interactions
//! until no agent holds more than one token, starting from a single pile of
//! 2^kappa tokens (kappa per the single-source balancing experiment), in
//! units of n*log2 n.
//!
//! Usage: drain_times [n] [trials]

use popproto::engine::{RunLimits, Runner};
use popproto::profile::Profile;
use popproto::suites::make_suite;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1024);
    let trials: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(100);
    let nlg = n as f64 * (n as f64).log2();
    let suite = make_suite("pow2-balance", &Profile::desk()).unwrap();
    let mut times = Vec::new();
    for seed in 0..trials {
        let mut runner = Runner::new(
            suite.as_ref(),
            n,
            seed,
            RunLimits::new(200_000_000, u64::MAX),
        )
        .unwrap();
        loop {
            runner.step().unwrap();
            if runner.t() % 256 == 0 && runner.agents().iter().all(|a| a.k.raw() <= 0) {
                break;
            }
        }
        times.push(runner.t() as f64 / nlg);
    }
    times.sort_by(f64::total_cmp);
    let pct = |p: f64| times[((times.len() as f64 * p) as usize).min(times.len() - 1)];
    println!(
        "n={n} trials={trials}: drain/nlg p50={:.2} p90={:.2} p95={:.2} p99={:.2} max={:.2}",
        pct(0.50),
        pct(0.90),
        pct(0.95),
        pct(0.99),
        times[times.len() - 1]
    );
}
