//! The uniform random pairwise scheduler, the simulation loop, and run
//! metrics.
//!
//! A run is strictly sequential and deterministic given (protocol, n, seed,
//! limits). Distinct runs never share state, so sweeps execute them from any
//! number of threads.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::error::{ConfigError, RunError, StepError};
use crate::rng::SplitMix64;
use crate::state::{AgentState, VarSpec};

/// Behavioral contract of one protocol.
///
/// `delta` must be a pure function of the two states and the coins drawn; in
/// particular it never sees the population size. `init_config` may depend on
/// `n` only to set up experiment inputs (a broadcast source, an initial token
/// pile); the counting protocols initialize every agent identically.
pub trait ProtocolSuite: Sync {
    fn name(&self) -> &str;

    fn init_config(&self, n: usize) -> Vec<AgentState>;

    /// Ordered-pair transition: `u` is the initiator, `v` the responder.
    fn delta(
        &self,
        u: &mut AgentState,
        v: &mut AgentState,
        rng: &mut SplitMix64,
    ) -> Result<(), StepError>;

    /// Output of a single agent; `None` when the agent has no estimate yet.
    fn output(&self, s: &AgentState) -> Option<i64>;

    /// Protocol-specific stable-configuration predicate: no continuation can
    /// change any output. Evaluated by the engine, so it may inspect the whole
    /// configuration (including n).
    fn is_stable(&self, agents: &[AgentState]) -> bool;

    /// Ground-truth checker over the multiset of current outputs.
    fn outputs_ok(&self, tally: &OutputTally, n: usize) -> bool;

    /// The variables this suite actually uses, for state-usage accounting.
    fn tracked_vars(&self) -> &'static [VarSpec];

    /// Agents exempted from the output requirement (relaxed variants).
    fn excluded(&self, _agents: &[AgentState]) -> Option<u32> {
        None
    }
}

/// Multiset of current agent outputs, maintained incrementally.
#[derive(Debug, Clone)]
pub struct OutputTally {
    counts: HashMap<Option<i64>, u32>,
    n: u32,
}

impl OutputTally {
    fn new(outputs: &[Option<i64>]) -> Self {
        let mut counts = HashMap::new();
        for &o in outputs {
            *counts.entry(o).or_insert(0) += 1;
        }
        OutputTally {
            counts,
            n: outputs.len() as u32,
        }
    }

    fn shift(&mut self, from: Option<i64>, to: Option<i64>) {
        if let Some(c) = self.counts.get_mut(&from) {
            *c -= 1;
            if *c == 0 {
                self.counts.remove(&from);
            }
        }
        *self.counts.entry(to).or_insert(0) += 1;
    }

    pub fn population(&self) -> u32 {
        self.n
    }

    pub fn count_of(&self, v: i64) -> u32 {
        self.counts.get(&Some(v)).copied().unwrap_or(0)
    }

    /// The single common output value, if all agents agree.
    pub fn unanimous(&self) -> Option<Option<i64>> {
        if self.counts.len() == 1 {
            self.counts.keys().next().copied()
        } else {
            None
        }
    }

    /// How many agents output some value from `set`.
    pub fn count_in(&self, set: &[i64]) -> u32 {
        set.iter().map(|&v| self.count_of(v)).sum()
    }

    /// Largest defined output, if any agent has one.
    pub fn max_output(&self) -> Option<i64> {
        self.counts.keys().filter_map(|k| *k).max()
    }

    /// Smallest defined output, if any agent has one.
    pub fn min_output(&self) -> Option<i64> {
        self.counts.keys().filter_map(|k| *k).min()
    }

    /// Number of agents with no defined output.
    pub fn undefined(&self) -> u32 {
        self.counts.get(&None).copied().unwrap_or(0)
    }
}

/// Per-run execution limits.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunLimits {
    pub max_interactions: u64,
    /// Extra interactions to observe after stability is first seen before
    /// declaring empirical stabilization (0 disables the probe).
    pub stabilization_probe_window: u64,
}

impl RunLimits {
    pub fn new(max_interactions: u64, probe: u64) -> Self {
        RunLimits {
            max_interactions,
            stabilization_probe_window: probe,
        }
    }

    /// Default probe window: 10 * n * ln n.
    pub fn default_probe(n: usize) -> u64 {
        (10.0 * n as f64 * (n as f64).ln()).ceil() as u64
    }
}

/// Observed range of one tracked variable.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct VarRange {
    pub name: String,
    pub min: i64,
    pub max: i64,
}

impl VarRange {
    pub fn span(&self) -> u128 {
        (self.max - self.min) as u128 + 1
    }
}

/// Per-variable ranges and composite-state counts over the observed part of a
/// run (every interaction for n <= 64, sampled every n interactions above).
#[derive(Debug, Clone, Default, Serialize)]
pub struct StateUsageReport {
    pub per_var: Vec<VarRange>,
    pub distinct_composite_states: u64,
    pub product_of_ranges: u128,
}

/// Full-overlap interval of one phase: the last agent enters at `d_start`, the
/// first agent leaves after `d_end`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PhaseInterval {
    pub phase: u16,
    pub d_start: u64,
    pub d_end: u64,
}

/// Everything measured about one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub correct: bool,
    pub t_convergence: Option<u64>,
    pub t_stabilization: Option<u64>,
    pub final_interactions: u64,
    pub output_history_digest: u64,
    pub state_usage: StateUsageReport,
    pub phase_intervals: Vec<PhaseInterval>,
    pub error_raised: bool,
    pub excluded_agents: Option<u32>,
    pub peak_total_load: u64,
}

/// Draw one ordered interaction pair, uniform over all n(n-1) of them.
#[inline]
pub fn schedule_step_unchecked(n: usize, rng: &mut SplitMix64) -> (usize, usize) {
    let idx = rng.next_below(n as u64 * (n as u64 - 1));
    let i = (idx / (n as u64 - 1)) as usize;
    let mut j = (idx % (n as u64 - 1)) as usize;
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Checked variant of [`schedule_step_unchecked`].
pub fn schedule_step(n: usize, rng: &mut SplitMix64) -> Result<(usize, usize), ConfigError> {
    if n < 2 {
        return Err(ConfigError::PopulationTooSmall(n as u64));
    }
    Ok(schedule_step_unchecked(n, rng))
}

/// Post-step fault injection hook; fires at most once per run.
pub trait FaultHook: Send {
    /// Inspect (and possibly mutate) the configuration after a step touched
    /// `touched`. Return true once the fault has fired.
    fn try_fire(&mut self, t: u64, touched: (usize, usize), agents: &mut [AgentState]) -> bool;
}

/// Observer invoked after every interaction (tracing, instrumentation).
pub trait StepObserver {
    fn on_step(
        &mut self,
        t: u64,
        initiator: usize,
        responder: usize,
        before: (&AgentState, &AgentState),
        after: (&AgentState, &AgentState),
    );
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[inline]
fn fnv_fold(mut h: u64, words: &[u64]) -> u64 {
    for &w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

fn encode_output(o: Option<i64>) -> u64 {
    match o {
        None => 0x8000_0000_0000_0000,
        Some(v) => v as u64 & 0x7fff_ffff_ffff_ffff,
    }
}

struct UsageTracker {
    vars: &'static [VarSpec],
    ranges: Vec<(i64, i64)>,
    distinct: HashSet<u64>,
    saturated: bool,
}

const DISTINCT_CAP: usize = 1 << 22;

impl UsageTracker {
    fn new(vars: &'static [VarSpec]) -> Self {
        UsageTracker {
            vars,
            ranges: vec![(i64::MAX, i64::MIN); vars.len()],
            distinct: HashSet::new(),
            saturated: false,
        }
    }

    #[inline]
    fn observe(&mut self, s: &AgentState) {
        // One multiply-mix per variable; byte-exact hashing is not needed to
        // count distinct composite states.
        let mut h = 0x243F_6A88_85A3_08D3u64;
        for (slot, var) in self.ranges.iter_mut().zip(self.vars) {
            let v = (var.extract)(s);
            if v < slot.0 {
                slot.0 = v;
            }
            if v > slot.1 {
                slot.1 = v;
            }
            h = (h ^ (v as u64)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            h ^= h >> 29;
        }
        if !self.saturated {
            self.distinct.insert(h);
            if self.distinct.len() >= DISTINCT_CAP {
                self.saturated = true;
            }
        }
    }

    fn report(&self) -> StateUsageReport {
        let per_var: Vec<VarRange> = self
            .vars
            .iter()
            .zip(&self.ranges)
            .filter(|(_, r)| r.0 <= r.1)
            .map(|(v, r)| VarRange {
                name: v.name.to_string(),
                min: r.0,
                max: r.1,
            })
            .collect();
        let product = per_var
            .iter()
            .fold(1u128, |acc, r| acc.saturating_mul(r.span()));
        StateUsageReport {
            per_var,
            distinct_composite_states: self.distinct.len() as u64,
            product_of_ranges: product,
        }
    }
}

/// Measure state usage over an explicit trace of configurations.
pub fn measure_state_usage<'a, I>(configs: I, vars: &'static [VarSpec]) -> StateUsageReport
where
    I: IntoIterator<Item = &'a [AgentState]>,
{
    let mut tracker = UsageTracker::new(vars);
    for config in configs {
        for agent in config {
            tracker.observe(agent);
        }
    }
    tracker.report()
}

#[derive(Default)]
struct PhaseTracker {
    // phase -> (first_enter, last_enter, enter_count)
    enters: BTreeMap<u16, (u64, u64, u32)>,
}

const PHASE_TRACK_CAP: usize = 8192;

impl PhaseTracker {
    #[inline]
    fn record(&mut self, old_phase: u16, new_phase: u16, t: u64) {
        if new_phase == old_phase {
            return;
        }
        if self.enters.len() >= PHASE_TRACK_CAP {
            return;
        }
        // A jump over several phases enters each of them at t.
        for p in old_phase.saturating_add(1)..=new_phase {
            let e = self.enters.entry(p).or_insert((t, t, 0));
            e.0 = e.0.min(t);
            e.1 = e.1.max(t);
            e.2 += 1;
        }
    }

    fn intervals(&self, n: u32) -> Vec<PhaseInterval> {
        let mut out = Vec::new();
        for (&phase, &(_, last_enter, count)) in &self.enters {
            if count < n {
                continue; // not every agent passed through this phase
            }
            if let Some(&(next_first, _, _)) = self.enters.get(&(phase + 1)) {
                if next_first > last_enter {
                    out.push(PhaseInterval {
                        phase,
                        d_start: last_enter,
                        d_end: next_first - 1,
                    });
                }
            }
        }
        out
    }
}

/// Incremental simulation of one run.
pub struct Runner<'s> {
    suite: &'s dyn ProtocolSuite,
    n: usize,
    rng: SplitMix64,
    agents: Vec<AgentState>,
    outputs: Vec<Option<i64>>,
    tally: OutputTally,
    t: u64,
    ok_now: bool,
    last_disturb: u64,
    stable_since: Option<u64>,
    finished: bool,
    digest: u64,
    usage: UsageTracker,
    phases: PhaseTracker,
    total_load: u128,
    peak_total_load: u128,
    fault: Option<Box<dyn FaultHook>>,
    observer: Option<Box<dyn StepObserver>>,
    sample_every: u64,
    per_step_usage: bool,
    limits: RunLimits,
    last_pair: (usize, usize),
}

impl<'s> Runner<'s> {
    pub fn new(
        suite: &'s dyn ProtocolSuite,
        n: usize,
        seed: u64,
        limits: RunLimits,
    ) -> Result<Self, ConfigError> {
        if n < 2 {
            return Err(ConfigError::PopulationTooSmall(n as u64));
        }
        let agents = suite.init_config(n);
        debug_assert_eq!(agents.len(), n);
        let outputs: Vec<Option<i64>> = agents.iter().map(|a| suite.output(a)).collect();
        let tally = OutputTally::new(&outputs);
        let ok_now = suite.outputs_ok(&tally, n);
        let mut usage = UsageTracker::new(suite.tracked_vars());
        for a in &agents {
            usage.observe(a);
        }
        let total_load: u128 = agents.iter().map(|a| a.load).sum();
        let tag = fnv1a64(suite.name().as_bytes());
        Ok(Runner {
            suite,
            n,
            rng: SplitMix64::for_run(seed, tag, n as u64),
            agents,
            outputs,
            tally,
            t: 0,
            ok_now,
            last_disturb: 0,
            stable_since: None,
            finished: false,
            digest: fnv_fold(FNV_OFFSET, &[tag, n as u64, seed]),
            usage,
            phases: PhaseTracker::default(),
            peak_total_load: total_load,
            total_load,
            fault: None,
            observer: None,
            sample_every: n as u64,
            per_step_usage: n <= 64,
            limits,
            last_pair: (0, 0),
        })
    }

    pub fn with_fault(mut self, fault: Box<dyn FaultHook>) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn with_observer(mut self, observer: Box<dyn StepObserver>) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn outputs(&self) -> &[Option<i64>] {
        &self.outputs
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn finished(&self) -> bool {
        self.finished || self.t >= self.limits.max_interactions
    }

    /// The ordered pair touched by the most recent step.
    pub fn last_touched(&self) -> (usize, usize) {
        self.last_pair
    }

    #[inline]
    fn apply_one(&mut self, idx: usize, new: AgentState) {
        let old = self.agents[idx];
        if old == new {
            return;
        }
        self.phases.record(old.clock.phase, new.clock.phase, self.t);
        self.total_load = self.total_load - old.load + new.load;
        if self.total_load > self.peak_total_load {
            self.peak_total_load = self.total_load;
        }
        if self.per_step_usage {
            self.usage.observe(&new);
        }
        let new_out = self.suite.output(&new);
        let old_out = self.outputs[idx];
        if new_out != old_out {
            self.tally.shift(old_out, new_out);
            self.outputs[idx] = new_out;
            self.last_disturb = self.t;
            self.stable_since = None;
            self.ok_now = self.suite.outputs_ok(&self.tally, self.n);
            self.digest = fnv_fold(
                self.digest,
                &[self.t, idx as u64, encode_output(new_out)],
            );
        }
        self.agents[idx] = new;
    }

    fn rescan_outputs(&mut self) {
        for idx in 0..self.n {
            let new_out = self.suite.output(&self.agents[idx]);
            if new_out != self.outputs[idx] {
                self.tally.shift(self.outputs[idx], new_out);
                self.outputs[idx] = new_out;
                self.last_disturb = self.t;
                self.stable_since = None;
                self.digest = fnv_fold(
                    self.digest,
                    &[self.t, idx as u64, encode_output(new_out)],
                );
            }
        }
        self.ok_now = self.suite.outputs_ok(&self.tally, self.n);
    }

    /// Execute one interaction. Returns false when the run is over.
    pub fn step(&mut self) -> Result<bool, RunError> {
        if self.finished() {
            return Ok(false);
        }
        self.t += 1;
        let (i, j) = schedule_step_unchecked(self.n, &mut self.rng);
        self.last_pair = (i, j);
        let mut u = self.agents[i];
        let mut v = self.agents[j];
        let pre = self.observer.is_some().then(|| (u, v));
        self.suite
            .delta(&mut u, &mut v, &mut self.rng)
            .map_err(|source| RunError::Step { t: self.t, source })?;
        if let Some((old_u, old_v)) = pre {
            if let Some(obs) = self.observer.as_mut() {
                obs.on_step(self.t, i, j, (&old_u, &old_v), (&u, &v));
            }
        }
        self.apply_one(i, u);
        self.apply_one(j, v);

        if let Some(mut hook) = self.fault.take() {
            if hook.try_fire(self.t, (i, j), &mut self.agents) {
                self.rescan_outputs();
            } else {
                self.fault = Some(hook);
            }
        }

        if self.t % self.sample_every == 0 {
            self.sample();
        }
        Ok(!self.finished())
    }

    fn sample(&mut self) {
        if !self.per_step_usage {
            for idx in 0..self.n {
                let a = self.agents[idx];
                self.usage.observe(&a);
            }
        }
        if self.ok_now && self.suite.is_stable(&self.agents) {
            if self.stable_since.is_none() {
                self.stable_since = Some(self.t);
            }
            if let Some(s) = self.stable_since {
                if self.t.saturating_sub(s) >= self.limits.stabilization_probe_window {
                    self.finished = true;
                }
            }
        } else {
            self.stable_since = None;
        }
    }

    /// Run to completion (stabilization confirmed or limit reached).
    pub fn run_to_end(&mut self) -> Result<(), RunError> {
        while self.step()? {}
        Ok(())
    }

    /// Final metrics. A run that exhausted its interaction budget without a
    /// confirmed stabilization reports `correct = false` with absent indices.
    pub fn metrics(&mut self) -> RunMetrics {
        for a in &self.agents {
            self.usage.observe(a);
        }
        let stabilized = self.finished && self.ok_now && self.stable_since.is_some();
        RunMetrics {
            correct: stabilized,
            t_convergence: stabilized.then_some(self.last_disturb),
            t_stabilization: if stabilized { self.stable_since } else { None },
            final_interactions: self.t,
            output_history_digest: self.digest,
            state_usage: self.usage.report(),
            phase_intervals: self.phases.intervals(self.n as u32),
            error_raised: self.agents.iter().any(|a| a.error),
            excluded_agents: self.suite.excluded(&self.agents),
            peak_total_load: u64::try_from(self.peak_total_load).unwrap_or(u64::MAX),
        }
    }
}

/// Run one cell to completion.
pub fn run(
    suite: &dyn ProtocolSuite,
    n: usize,
    seed: u64,
    limits: RunLimits,
) -> Result<RunMetrics, RunError> {
    let mut runner = Runner::new(suite, n, seed, limits)?;
    runner.run_to_end()?;
    Ok(runner.metrics())
}

/// Like [`run`], with a fault hook attached.
pub fn run_with_fault(
    suite: &dyn ProtocolSuite,
    n: usize,
    seed: u64,
    limits: RunLimits,
    fault: Box<dyn FaultHook>,
) -> Result<RunMetrics, RunError> {
    let mut runner = Runner::new(suite, n, seed, limits)?.with_fault(fault);
    runner.run_to_end()?;
    Ok(runner.metrics())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::VarSpec;

    /// Minimal max-adoption suite for engine tests: one agent starts with 1,
    /// the initiator adopts the max.
    struct MaxSuite;

    const MAX_VARS: &[VarSpec] = &[VarSpec {
        name: "k",
        extract: |s| s.k.raw() as i64,
    }];

    impl ProtocolSuite for MaxSuite {
        fn name(&self) -> &str {
            "test-max"
        }
        fn init_config(&self, n: usize) -> Vec<AgentState> {
            let mut agents = vec![AgentState::initial(); n];
            for a in agents.iter_mut() {
                a.k = crate::balancing::LogLoad::new(0);
            }
            agents[0].k = crate::balancing::LogLoad::new(1);
            agents
        }
        fn delta(
            &self,
            u: &mut AgentState,
            v: &mut AgentState,
            _rng: &mut SplitMix64,
        ) -> Result<(), StepError> {
            u.k = u.k.max(v.k);
            Ok(())
        }
        fn output(&self, s: &AgentState) -> Option<i64> {
            Some(s.k.raw() as i64)
        }
        fn is_stable(&self, agents: &[AgentState]) -> bool {
            agents.iter().all(|a| a.k.raw() == 1)
        }
        fn outputs_ok(&self, tally: &OutputTally, n: usize) -> bool {
            tally.count_of(1) == n as u32
        }
        fn tracked_vars(&self) -> &'static [VarSpec] {
            MAX_VARS
        }
    }

    #[test]
    fn population_of_one_is_rejected() {
        let err = Runner::new(&MaxSuite, 1, 0, RunLimits::new(10, 0))
            .err()
            .expect("n = 1 must be rejected");
        assert_eq!(err, ConfigError::PopulationTooSmall(1));
    }

    #[test]
    fn two_agents_schedule_both_ordered_pairs_evenly() {
        let mut rng = SplitMix64::new(5);
        let mut counts = [0u32; 2];
        for _ in 0..10_000 {
            let (i, j) = schedule_step(2, &mut rng).unwrap();
            assert_ne!(i, j);
            counts[i] += 1;
        }
        // Each ordered pair with probability 1/2.
        assert!((counts[0] as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn three_agents_pair_frequencies_are_uniform() {
        let mut rng = SplitMix64::new(11);
        let mut counts = std::collections::HashMap::new();
        let samples = 60_000u32;
        for _ in 0..samples {
            let p = schedule_step(3, &mut rng).unwrap();
            *counts.entry(p).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 6);
        for (&pair, &c) in &counts {
            let freq = c as f64 / samples as f64;
            assert!(
                (freq - 1.0 / 6.0).abs() < 0.01,
                "pair {pair:?} frequency {freq}"
            );
        }
    }

    #[test]
    fn identical_seeds_replay_identical_pair_sequences() {
        let mut a = SplitMix64::new(123);
        let mut b = SplitMix64::new(123);
        for _ in 0..1000 {
            assert_eq!(
                schedule_step(17, &mut a).unwrap(),
                schedule_step(17, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn run_is_deterministic_and_converges() {
        let limits = RunLimits::new(100_000, 100);
        let m1 = run(&MaxSuite, 16, 7, limits).unwrap();
        let m2 = run(&MaxSuite, 16, 7, limits).unwrap();
        assert!(m1.correct);
        assert_eq!(m1.output_history_digest, m2.output_history_digest);
        assert_eq!(m1.t_convergence, m2.t_convergence);
        let tc = m1.t_convergence.unwrap();
        let ts = m1.t_stabilization.unwrap();
        assert!(tc <= ts, "convergence {tc} must precede stabilization {ts}");
    }

    #[test]
    fn different_seeds_give_different_histories() {
        let limits = RunLimits::new(100_000, 100);
        let m1 = run(&MaxSuite, 16, 1, limits).unwrap();
        let m2 = run(&MaxSuite, 16, 2, limits).unwrap();
        assert_ne!(m1.output_history_digest, m2.output_history_digest);
    }

    #[test]
    fn exhausted_budget_reports_incorrect_with_absent_indices() {
        let limits = RunLimits::new(3, 0); // far too few to inform 16 agents
        let m = run(&MaxSuite, 16, 7, limits).unwrap();
        assert!(!m.correct);
        assert_eq!(m.t_convergence, None);
        assert_eq!(m.t_stabilization, None);
    }

    #[test]
    fn constant_trace_has_one_composite_state() {
        let agents = vec![AgentState::initial(); 8];
        let report = measure_state_usage(std::iter::once(&agents[..]), MAX_VARS);
        assert_eq!(report.distinct_composite_states, 1);
        assert_eq!(report.product_of_ranges, 1);
    }
}
