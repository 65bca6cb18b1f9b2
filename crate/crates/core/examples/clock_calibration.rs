//! Measure phase-clock behavior for a profile: junta size, phase interval
//! lengths (in units of n*log2 n), and election completion, across a grid of
//! clock moduli. Used to pick `clock-m` and the `clock-c` it delivers.
//!
//! Usage: clock_calibration [n] [seeds] [m1,m2,...]

use popproto::engine::{RunLimits, Runner};
use popproto::profile::Profile;
use popproto::suites::make_suite;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1024);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let moduli: Vec<u32> = args
        .get(3)
        .map(|s| s.split(',').filter_map(|x| x.parse().ok()).collect())
        .unwrap_or_else(|| vec![24, 48, 96, 192]);

    let nlg = n as f64 * (n as f64).log2();
    for m in moduli {
        let mut profile = Profile::desk();
        profile.clock_m = m;
        let mut interval_ratios = Vec::new();
        let mut junta_sizes = Vec::new();
        let mut levels = Vec::new();
        let mut done1_times = Vec::new();
        for seed in 0..seeds {
            let suite = make_suite("approximate", &profile).unwrap();
            let mut runner = Runner::new(
                suite.as_ref(),
                n,
                seed,
                RunLimits::new(400_000_000, u64::MAX),
            )
            .unwrap();
            let mut done1_at = None;
            loop {
                let more = runner.step().unwrap();
                if done1_at.is_none() && runner.t() % (n as u64) == 0 {
                    if runner.agents().iter().all(|a| a.done1) {
                        done1_at = Some(runner.t());
                    }
                }
                if !more || done1_at.is_some() {
                    break;
                }
            }
            let agents = runner.agents();
            let max_level = agents.iter().map(|a| a.junta.level).max().unwrap();
            let junta = agents
                .iter()
                .filter(|a| a.junta.level == max_level && a.junta.junta)
                .count();
            junta_sizes.push(junta);
            levels.push(max_level);
            done1_times.push(done1_at.map(|t| t as f64 / nlg));
            let metrics = runner.metrics();
            for iv in &metrics.phase_intervals {
                if iv.phase >= 3 {
                    interval_ratios.push((iv.d_end - iv.d_start) as f64 / nlg);
                }
            }
        }
        interval_ratios.sort_by(f64::total_cmp);
        let pct = |p: f64| -> f64 {
            if interval_ratios.is_empty() {
                return f64::NAN;
            }
            let idx = ((interval_ratios.len() as f64 * p) as usize)
                .min(interval_ratios.len() - 1);
            interval_ratios[idx]
        };
        println!(
            "m={m:4} n={n}: junta {junta_sizes:?} level {levels:?} \
             interval/nlg p05={:.2} p50={:.2} p95={:.2} done1/nlg {:?}",
            pct(0.05),
            pct(0.50),
            pct(0.95),
            done1_times
                .iter()
                .map(|d| d.map(|x| x.round()))
                .collect::<Vec<_>>()
        );
    }
}
