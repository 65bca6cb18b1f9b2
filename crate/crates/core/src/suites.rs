//! Protocol registry plus the small experiment suites used to probe the
//! auxiliary building blocks in isolation (broadcast completion, balancing
//! bounds).

use crate::approx::{ApproxMode, ApproximateSuite, BackupApproxSuite};
use crate::balancing::{classical_balance, pow2_balance, Load, LogLoad};
use crate::engine::{OutputTally, ProtocolSuite};
use crate::error::{ConfigError, StepError};
use crate::exact::{BackupExactSuite, CountExactSuite};
use crate::profile::Profile;
use crate::rng::SplitMix64;
use crate::state::{AgentState, VarSpec, SEARCH_VARS};

/// One-way epidemics from a single informed agent.
pub struct BroadcastSuite;

impl ProtocolSuite for BroadcastSuite {
    fn name(&self) -> &str {
        "broadcast"
    }

    fn init_config(&self, n: usize) -> Vec<AgentState> {
        let mut agents = vec![AgentState::initial(); n];
        for a in agents.iter_mut() {
            a.k = LogLoad::new(0);
        }
        agents[0].k = LogLoad::new(1);
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
        SEARCH_VARS
    }
}

/// Powers-of-two balancing from a single source pile of 2^kappa tokens, with
/// kappa the largest exponent such that the pile is at most 3n/4.
pub struct Pow2BalanceSuite;

pub fn lemma6_source_exponent(n: usize) -> i16 {
    let cap = 3 * n / 4;
    let mut k = 0i16;
    while 1usize << (k + 1) <= cap {
        k += 1;
    }
    k
}

impl ProtocolSuite for Pow2BalanceSuite {
    fn name(&self) -> &str {
        "pow2-balance"
    }

    fn init_config(&self, n: usize) -> Vec<AgentState> {
        let mut agents = vec![AgentState::initial(); n];
        agents[0].k = LogLoad::new(lemma6_source_exponent(n));
        agents
    }

    fn delta(
        &self,
        u: &mut AgentState,
        v: &mut AgentState,
        _rng: &mut SplitMix64,
    ) -> Result<(), StepError> {
        let (a, b) = pow2_balance(u.k, v.k, false, false);
        u.k = a;
        v.k = b;
        Ok(())
    }

    fn output(&self, s: &AgentState) -> Option<i64> {
        Some(s.k.raw() as i64)
    }

    fn is_stable(&self, agents: &[AgentState]) -> bool {
        let any_empty = agents.iter().any(|a| a.k.is_empty());
        let any_pile = agents.iter().any(|a| a.k.raw() > 0);
        !(any_empty && any_pile)
    }

    fn outputs_ok(&self, tally: &OutputTally, _n: usize) -> bool {
        tally.max_output().is_some_and(|m| m <= 0)
    }

    fn tracked_vars(&self) -> &'static [VarSpec] {
        SEARCH_VARS
    }
}

/// Classical balancing of 4n tokens injected at one agent; tracks the
/// discrepancy left after a fixed budget.
pub struct ClassicalBalanceSuite;

const LOAD_VARS: &[VarSpec] = &[VarSpec {
    name: "load_bits",
    extract: |s| s.load_bits() as i64,
}];

impl ProtocolSuite for ClassicalBalanceSuite {
    fn name(&self) -> &str {
        "classical-balance"
    }

    fn init_config(&self, n: usize) -> Vec<AgentState> {
        let mut agents = vec![AgentState::initial(); n];
        agents[0].load = 4 * n as u128;
        agents
    }

    fn delta(
        &self,
        u: &mut AgentState,
        v: &mut AgentState,
        _rng: &mut SplitMix64,
    ) -> Result<(), StepError> {
        let (a, b) = classical_balance(Load(u.load), Load(v.load));
        u.load = a.0;
        v.load = b.0;
        Ok(())
    }

    fn output(&self, s: &AgentState) -> Option<i64> {
        Some(s.load as i64)
    }

    fn is_stable(&self, agents: &[AgentState]) -> bool {
        let min = agents.iter().map(|a| a.load).min().unwrap_or(0);
        let max = agents.iter().map(|a| a.load).max().unwrap_or(0);
        max - min <= 1
    }

    fn outputs_ok(&self, tally: &OutputTally, _n: usize) -> bool {
        match (tally.min_output(), tally.max_output()) {
            (Some(lo), Some(hi)) => hi - lo <= 2,
            _ => false,
        }
    }

    fn tracked_vars(&self) -> &'static [VarSpec] {
        LOAD_VARS
    }
}

/// Every protocol name the harness accepts.
pub const PROTOCOL_NAMES: &[&str] = &[
    "approximate",
    "approximate-stable",
    "approximate-stable-relaxed",
    "backup-approx",
    "count-exact",
    "count-exact-stable",
    "backup-exact",
    "broadcast",
    "pow2-balance",
    "classical-balance",
];

/// Construct a protocol suite by its registry name.
pub fn make_suite(name: &str, profile: &Profile) -> Result<Box<dyn ProtocolSuite>, ConfigError> {
    let suite: Box<dyn ProtocolSuite> = match name {
        "approximate" => Box::new(ApproximateSuite::new(profile.clone(), ApproxMode::Plain)),
        "approximate-stable" => {
            Box::new(ApproximateSuite::new(profile.clone(), ApproxMode::Stable))
        }
        "approximate-stable-relaxed" => Box::new(ApproximateSuite::new(
            profile.clone(),
            ApproxMode::StableRelaxed,
        )),
        "backup-approx" => Box::new(BackupApproxSuite),
        "count-exact" => Box::new(CountExactSuite::new(profile.clone(), false)),
        "count-exact-stable" => Box::new(CountExactSuite::new(profile.clone(), true)),
        "backup-exact" => Box::new(BackupExactSuite),
        "broadcast" => Box::new(BroadcastSuite),
        "pow2-balance" => Box::new(Pow2BalanceSuite),
        "classical-balance" => Box::new(ClassicalBalanceSuite),
        other => return Err(ConfigError::UnknownProtocol(other.to_string())),
    };
    Ok(suite)
}
