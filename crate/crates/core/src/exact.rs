//! Exact population counting.
//!
//! Stage 1 elects a leader with the fast election, stage 2 grows a token
//! population by the shared exponent each phase until the leader holds at
//! least four tokens (giving an approximation of log n), and stage 3 refines:
//! the approximation is broadcast, the leader injects 2^8 * 2^k tokens, every
//! agent multiplies its balanced share by 2^k, and the output function
//! round(2^8 * 2^(2k) / load) then equals n exactly. The stable variant adds
//! the collision, phase-counter and load checks, each of which diverts the
//! population to the always-correct token-counting backup.

use std::sync::OnceLock;

use crate::balancing::{classical_balance, Load, LogLoad};
use crate::compose::{aux_prelude, enter_done2, take_tick};
use crate::engine::{OutputTally, ProtocolSuite};
use crate::error::StepError;
use crate::leader::{fast_every, fast_tick};
use crate::primitives::Coins;
use crate::profile::Profile;
use crate::rng::SplitMix64;
use crate::state::{
    AgentState, VarSpec, AUX_VARS, BACKUP_EXACT_VARS, COUNT_STAGE_VARS, FAST_LEADER_VARS,
};

/// Refinement runs phases 0..=2; the clock stops in the last one.
const REFINE_PHASES: u16 = 2;

/// Minimum pre-multiply load in refinement phase 2 (stable variant): the
/// analysis requires 2^5 - 1.5, so integer loads of at least 31.
const MIN_REFINE_LOAD: u128 = 31;

// ---------------------------------------------------------------------------
// Approximation stage
// ---------------------------------------------------------------------------

/// Multiply a load by 2^k where k may be negative (whole-population counts
/// below 8 produce approximations below zero).
fn shift_load(load: u128, k: i16) -> Result<u128, StepError> {
    if k >= 0 {
        load.checked_shl(k as u32).ok_or(StepError::LoadOverflow)
    } else {
        Ok(load >> (-k) as u32)
    }
}

/// Once-per-phase actions of the approximation stage: the leader seeds one
/// token, concludes once it holds at least four, and every agent multiplies
/// its load by 2^e when entering a new phase.
pub fn approximation_stage_tick(x: &mut AgentState, p: &Profile) -> Result<(), StepError> {
    if x.leader && x.apx_i == 0 {
        x.load = 1;
    }
    let e = p.exponent(x.junta.level as u32);
    if x.leader && x.load >= 4 {
        let i = x.apx_i as i32;
        let approx = i * e as i32 - x.load.ilog2() as i32;
        x.k = LogLoad::new(approx.max(-1) as i16);
        enter_done2(x, 0);
        return Ok(());
    }
    x.apx_i = x.apx_i.saturating_add(1);
    if x.load != 0 {
        x.load = x
            .load
            .checked_mul(1u128 << e)
            .ok_or(StepError::LoadOverflow)?;
    }
    Ok(())
}

/// Per-interaction approximation-stage actions: classical balancing and the
/// done-flag broadcast.
pub fn approximation_stage_every(u: &mut AgentState, v: &mut AgentState) {
    let (a, b) = classical_balance(Load(u.load), Load(v.load));
    u.load = a.0;
    v.load = b.0;
    if v.done2 {
        let vp = v.stage_phase(REFINE_PHASES);
        enter_done2(u, vp);
    }
}

// ---------------------------------------------------------------------------
// Refinement stage
// ---------------------------------------------------------------------------

fn refine_phase(x: &AgentState) -> u16 {
    x.stage_phase(REFINE_PHASES)
}

/// Once-per-phase refinement actions: the leader injects 2^8 * 2^k in phase
/// 1, and every agent multiplies its load by 2^k when entering phase 2 (after
/// the stable variant's minimum-load check). The phase counter stops there.
pub fn refinement_stage_tick(
    x: &mut AgentState,
    p: &Profile,
    stable: bool,
) -> Result<(), StepError> {
    let _ = p;
    match refine_phase(x) {
        1 => {
            if x.leader {
                x.load = shift_load(256, x.k.raw())?;
            }
        }
        2 => {
            if stable && x.load < MIN_REFINE_LOAD {
                mark_error(x);
            } else {
                x.load = shift_load(x.load, x.k.raw())?;
            }
            x.clock.stopped = true;
        }
        _ => {}
    }
    Ok(())
}

/// Per-interaction refinement actions: phase 0 spreads the maximum
/// approximation and clears loads; balancing runs in every interaction.
pub fn refinement_stage_every(u: &mut AgentState, v: &mut AgentState) {
    if refine_phase(u) == 0 {
        let m = u.k.max(v.k);
        u.k = m;
        v.k = m;
        u.load = 0;
        v.load = 0;
    }
    let (a, b) = classical_balance(Load(u.load), Load(v.load));
    u.load = a.0;
    v.load = b.0;
    for x in [u, v] {
        if x.done2 && refine_phase(x) >= REFINE_PHASES {
            x.clock.stopped = true;
        }
    }
}

/// Output function of the refinement stage: round(2^8 * 2^(2k) / load).
pub fn refinement_output(k: i16, load: u128) -> Option<i64> {
    if load == 0 {
        return None;
    }
    let total = 256.0 * (2f64).powi(2 * k as i32);
    Some((total / load as f64).round() as i64)
}

// ---------------------------------------------------------------------------
// Backup protocol (token counting)
// ---------------------------------------------------------------------------

/// One backup interaction: two uncounted agents merge their bags into the
/// initiator and the responder becomes counted; counted agents track the
/// largest bag they have seen. Uncounted agents never overwrite their bag, so
/// the sum of uncounted bags always equals the population size.
pub fn backup_exact_step(u: &mut AgentState, v: &mut AgentState) {
    if !u.bx.counted && !v.bx.counted {
        let total = u.bx.nmax + v.bx.nmax;
        u.bx.nmax = total;
        v.bx.counted = true;
        v.bx.nmax = total;
    } else {
        let m = u.bx.nmax.max(v.bx.nmax);
        if u.bx.counted {
            u.bx.nmax = m;
        }
        if v.bx.counted {
            v.bx.nmax = m;
        }
    }
}

fn mark_error(x: &mut AgentState) {
    if !x.error {
        x.error = true;
        x.bx = Default::default();
        x.bk_paused = false;
    }
}

// ---------------------------------------------------------------------------
// The composed protocol
// ---------------------------------------------------------------------------

fn reset_for_level_change(x: &mut AgentState) {
    x.leader = true;
    x.done1 = false;
    x.fast = Default::default();
    x.k = LogLoad::EMPTY;
    x.done2 = false;
    x.load = 0;
    x.apx_i = 0;
    x.stage_base = 0;
}

/// One interaction of the exact-counting protocol; `u` is the initiator.
pub fn count_exact_step(
    u: &mut AgentState,
    v: &mut AgentState,
    p: &Profile,
    stable: bool,
    rng: &mut SplitMix64,
) -> Result<(), StepError> {
    let mut coins = Coins::begin(&mut u.coin, &mut v.coin, p.coin_mode, rng);

    if stable && (u.error || v.error) {
        mark_error(u);
        mark_error(v);
        backup_exact_step(u, v);
        return Ok(());
    }

    aux_prelude(u, v, p, &reset_for_level_change);

    if stable {
        // Concluded-leader collision.
        if u.done1 && v.done1 && u.leader && v.leader {
            mark_error(u);
            mark_error(v);
            return Ok(());
        }
        // Exact phase-counter divergence, compared after the clock pass among
        // same-level agents; a running agent catching up with a frozen one is
        // exempt until it freezes too.
        if u.done1
            && v.done1
            && u.junta.level == v.junta.level
            && u.clock.stopped == v.clock.stopped
            && u.clock.phase != v.clock.phase
        {
            mark_error(u);
            mark_error(v);
            return Ok(());
        }
        // Approximation mismatch once both sides have settled (phase 2 of
        // refinement onward).
        if u.done2
            && v.done2
            && refine_phase(u) >= 2
            && refine_phase(v) >= 2
            && u.k != v.k
        {
            mark_error(u);
            mark_error(v);
            return Ok(());
        }
        if !u.done1 && !v.done1 {
            backup_exact_step(u, v);
        }
        u.bk_paused = u.done1;
        v.bk_paused = v.done1;
    }

    // The stage is chosen when the interaction starts; a done flag set in a
    // tick block takes effect from the next interaction.
    let stage = (u.done1, u.done2);
    let u_tick = take_tick(u, p.tick_mode, true);
    let v_tick = take_tick(v, p.tick_mode, false);
    if u_tick {
        exact_tick_block(u, p, stable)?;
    }
    if v_tick {
        exact_tick_block(v, p, stable)?;
    }

    match stage {
        (false, _) => fast_every(u, v, &mut coins, p),
        (true, false) => approximation_stage_every(u, v),
        (true, true) => refinement_stage_every(u, v),
    }
    Ok(())
}

fn exact_tick_block(x: &mut AgentState, p: &Profile, stable: bool) -> Result<(), StepError> {
    if !x.done1 {
        fast_tick(x);
        Ok(())
    } else if !x.done2 {
        approximation_stage_tick(x, p)
    } else {
        refinement_stage_tick(x, p, stable)
    }
}

/// Output of one agent under the exact protocol.
pub fn exact_output(s: &AgentState, stable: bool) -> Option<i64> {
    if stable && (s.error || !s.done1) {
        return Some(s.bx.nmax as i64);
    }
    refinement_output(s.k.raw(), s.load)
}

fn backup_exact_stable(agents: &[AgentState]) -> bool {
    let uncounted = agents.iter().filter(|a| !a.bx.counted).count();
    if uncounted != 1 {
        return false;
    }
    let nmax = agents[0].bx.nmax;
    agents.iter().all(|a| a.bx.nmax == nmax)
}

fn junta_settled(agents: &[AgentState]) -> bool {
    let level = agents[0].junta.level;
    agents
        .iter()
        .all(|a| !a.junta.active && a.junta.level == level)
}

// ---------------------------------------------------------------------------
// Protocol suites
// ---------------------------------------------------------------------------

pub struct CountExactSuite {
    profile: Profile,
    stable: bool,
}

impl CountExactSuite {
    pub fn new(profile: Profile, stable: bool) -> Self {
        CountExactSuite { profile, stable }
    }
}

fn exact_vars(stable: bool) -> &'static [VarSpec] {
    static PLAIN: OnceLock<Vec<VarSpec>> = OnceLock::new();
    static STABLE: OnceLock<Vec<VarSpec>> = OnceLock::new();
    if stable {
        STABLE.get_or_init(|| {
            let mut v = [AUX_VARS, FAST_LEADER_VARS, COUNT_STAGE_VARS].concat();
            v.push(VarSpec {
                name: "error",
                extract: |s| s.error as i64,
            });
            v.extend_from_slice(BACKUP_EXACT_VARS);
            v
        })
    } else {
        PLAIN.get_or_init(|| [AUX_VARS, FAST_LEADER_VARS, COUNT_STAGE_VARS].concat())
    }
}

impl ProtocolSuite for CountExactSuite {
    fn name(&self) -> &str {
        if self.stable {
            "count-exact-stable"
        } else {
            "count-exact"
        }
    }

    fn init_config(&self, n: usize) -> Vec<AgentState> {
        vec![AgentState::initial(); n]
    }

    fn delta(
        &self,
        u: &mut AgentState,
        v: &mut AgentState,
        rng: &mut SplitMix64,
    ) -> Result<(), StepError> {
        count_exact_step(u, v, &self.profile, self.stable, rng)
    }

    fn output(&self, s: &AgentState) -> Option<i64> {
        exact_output(s, self.stable)
    }

    fn is_stable(&self, agents: &[AgentState]) -> bool {
        if !junta_settled(agents) {
            return false;
        }
        if self.stable {
            if agents.iter().all(|a| a.error) {
                return backup_exact_stable(agents);
            }
            if agents.iter().any(|a| a.error) {
                return false;
            }
        }
        let k = agents[0].k;
        let mut lmin = u128::MAX;
        let mut lmax = 0u128;
        for a in agents {
            if !(a.done1 && a.done2 && a.k == k && a.clock.stopped) {
                return false;
            }
            if refine_phase(a) < REFINE_PHASES {
                return false;
            }
            lmin = lmin.min(a.load);
            lmax = lmax.max(a.load);
        }
        // Balancing keeps every load inside [lmin, lmax] and the output is
        // monotone in the load, so outputs can never change again once both
        // endpoints map to the same value.
        lmin > 0 && refinement_output(k.raw(), lmin) == refinement_output(k.raw(), lmax)
    }

    fn outputs_ok(&self, tally: &OutputTally, n: usize) -> bool {
        tally.count_of(n as i64) == n as u32
    }

    fn tracked_vars(&self) -> &'static [VarSpec] {
        exact_vars(self.stable)
    }
}

/// The standalone exact backup suite.
pub struct BackupExactSuite;

impl ProtocolSuite for BackupExactSuite {
    fn name(&self) -> &str {
        "backup-exact"
    }

    fn init_config(&self, n: usize) -> Vec<AgentState> {
        vec![AgentState::initial(); n]
    }

    fn delta(
        &self,
        u: &mut AgentState,
        v: &mut AgentState,
        _rng: &mut SplitMix64,
    ) -> Result<(), StepError> {
        backup_exact_step(u, v);
        Ok(())
    }

    fn output(&self, s: &AgentState) -> Option<i64> {
        Some(s.bx.nmax as i64)
    }

    fn is_stable(&self, agents: &[AgentState]) -> bool {
        backup_exact_stable(agents)
    }

    fn outputs_ok(&self, tally: &OutputTally, n: usize) -> bool {
        tally.count_of(n as i64) == n as u32
    }

    fn tracked_vars(&self) -> &'static [VarSpec] {
        BACKUP_EXACT_VARS
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, RunLimits};
    use std::collections::{BTreeSet, HashSet, VecDeque};

    fn agent() -> AgentState {
        AgentState::initial()
    }

    #[test]
    fn leader_seeds_one_token_in_first_phase() {
        let p = Profile::desk();
        let mut x = agent();
        x.done1 = true;
        x.junta.level = 3;
        approximation_stage_tick(&mut x, &p).unwrap();
        assert_eq!(x.apx_i, 1);
        // Seeded to 1, then multiplied by 2^e with e = 2^3 = 8.
        assert_eq!(x.load, 256);
    }

    #[test]
    fn leader_concludes_with_load_at_least_four() {
        // i = 3, e = 2^(level), load 5: k = 3e - floor(log2 5) = 3e - 2.
        let p = Profile::desk();
        let mut x = agent();
        x.done1 = true;
        x.junta.level = 1; // e = 2
        x.apx_i = 3;
        x.load = 5;
        approximation_stage_tick(&mut x, &p).unwrap();
        assert!(x.done2);
        assert_eq!(x.k.raw(), 3 * 2 - 2);
        assert_eq!(x.load, 5, "no explosion after the decision");
    }

    #[test]
    fn followers_never_seed_tokens() {
        let p = Profile::desk();
        let mut x = agent();
        x.done1 = true;
        x.leader = false;
        approximation_stage_tick(&mut x, &p).unwrap();
        assert_eq!(x.load, 0);
        assert_eq!(x.apx_i, 1);
    }

    #[test]
    fn refinement_initialization_spreads_max_k_and_clears_loads() {
        let mut u = agent();
        u.done1 = true;
        u.done2 = true;
        u.k = LogLoad::new(9);
        u.load = 7;
        let mut v = agent();
        v.done1 = true;
        v.done2 = true;
        v.k = LogLoad::new(11);
        v.load = 2;
        refinement_stage_every(&mut u, &mut v);
        assert_eq!((u.k.raw(), v.k.raw()), (11, 11));
        assert_eq!((u.load, v.load), (0, 0));
    }

    #[test]
    fn refinement_leader_injects_two_to_the_eight_times_two_to_k() {
        let p = Profile::desk();
        let mut x = agent();
        x.done1 = true;
        x.done2 = true;
        x.k = LogLoad::new(10);
        x.stage_base = 0;
        x.clock.phase = 1;
        refinement_stage_tick(&mut x, &p, false).unwrap();
        assert_eq!(x.load, 256 * 1024);
    }

    #[test]
    fn refinement_phase_two_multiplies_by_two_to_k() {
        let p = Profile::desk();
        let mut x = agent();
        x.leader = false;
        x.done1 = true;
        x.done2 = true;
        x.k = LogLoad::new(10);
        x.load = 256;
        x.stage_base = 0;
        x.clock.phase = 2;
        refinement_stage_tick(&mut x, &p, false).unwrap();
        assert_eq!(x.load, 262_144);
        assert!(x.clock.stopped, "phase counting stops in the last phase");
    }

    #[test]
    fn stable_refinement_rejects_underloaded_agents() {
        let p = Profile::desk();
        let mut x = agent();
        x.leader = false;
        x.done1 = true;
        x.done2 = true;
        x.k = LogLoad::new(5);
        x.load = 30; // below 2^5 - 1.5
        x.stage_base = 0;
        x.clock.phase = 2;
        refinement_stage_tick(&mut x, &p, true).unwrap();
        assert!(x.error);
        assert_eq!(x.load, 30, "no multiply once the error fires");
    }

    #[test]
    fn output_algebra_examples() {
        // Exact division: M = 4n^2, l = M/n gives exactly n.
        let n = 1000i64;
        let k = 11; // M = 256 * 2^22 = 2^30 >= 4 * 10^6
        let m = 256u128 << (2 * k);
        let l = m / n as u128;
        assert_eq!(refinement_output(k as i16, l), Some(n));
        // One-off loads still round to n (the discrepancy tolerance).
        assert_eq!(refinement_output(k as i16, l + 1), Some(n));
        assert_eq!(refinement_output(k as i16, l - 1), Some(n));
        // Empty load has no estimate.
        assert_eq!(refinement_output(10, 0), None);
    }

    #[test]
    fn backup_merges_uncounted_bags() {
        let mut u = agent();
        let mut v = agent();
        backup_exact_step(&mut u, &mut v);
        assert_eq!((u.bx.counted, u.bx.nmax), (false, 2));
        assert_eq!((v.bx.counted, v.bx.nmax), (true, 2));
    }

    #[test]
    fn backup_counted_agents_track_maximum_and_bags_stay_intact() {
        let mut u = agent();
        u.bx.counted = true;
        u.bx.nmax = 5;
        let mut v = agent();
        v.bx.counted = false;
        v.bx.nmax = 3;
        backup_exact_step(&mut u, &mut v);
        assert_eq!(u.bx.nmax, 5);
        assert_eq!(v.bx.nmax, 3, "an uncounted bag is never overwritten");
    }

    #[test]
    fn backup_conservation_through_random_runs() {
        let mut rng = SplitMix64::new(17);
        for n in [2usize, 5, 16, 33] {
            let mut pop = vec![agent(); n];
            for _ in 0..20_000 {
                let i = rng.next_below(n as u64) as usize;
                let mut j = rng.next_below((n - 1) as u64) as usize;
                if j >= i {
                    j += 1;
                }
                let (mut u, mut v) = (pop[i], pop[j]);
                backup_exact_step(&mut u, &mut v);
                pop[i] = u;
                pop[j] = v;
                let total: u64 = pop
                    .iter()
                    .filter(|a| !a.bx.counted)
                    .map(|a| a.bx.nmax)
                    .sum();
                assert_eq!(total, n as u64, "uncounted bags must sum to n");
            }
        }
    }

    /// Exhaustive schedule check at n = 3: from every reachable configuration
    /// a correct stable configuration remains reachable, and every stable
    /// configuration outputs exactly 3. Under a fair scheduler this means the
    /// backup protocol counts 3 with probability 1.
    #[test]
    fn backup_every_fair_schedule_merges_three_tokens() {
        type Config = Vec<(bool, u64)>;
        let start: Config = vec![(false, 1); 3];
        let step = |c: &Config, i: usize, j: usize| -> Config {
            let mut u = agent();
            u.bx.counted = c[i].0;
            u.bx.nmax = c[i].1;
            let mut v = agent();
            v.bx.counted = c[j].0;
            v.bx.nmax = c[j].1;
            backup_exact_step(&mut u, &mut v);
            let mut next = c.clone();
            next[i] = (u.bx.counted, u.bx.nmax);
            next[j] = (v.bx.counted, v.bx.nmax);
            next
        };
        let mut reachable: HashSet<Config> = HashSet::new();
        let mut queue: VecDeque<Config> = VecDeque::new();
        reachable.insert(start.clone());
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            for i in 0..3 {
                for j in 0..3 {
                    if i == j {
                        continue;
                    }
                    let next = step(&c, i, j);
                    if reachable.insert(next.clone()) {
                        queue.push_back(next);
                    }
                }
            }
        }
        // Stable: no transition changes any state.
        let is_stable = |c: &Config| {
            (0..3).all(|i| {
                (0..3).all(|j| i == j || step(c, i, j) == *c)
            })
        };
        let correct = |c: &Config| c.iter().all(|&(_, nmax)| nmax == 3);
        for c in &reachable {
            if is_stable(c) {
                assert!(correct(c), "stable but wrong: {c:?}");
            }
        }
        // Correct stable configurations are reachable from everywhere:
        // breadth-first search from each reachable configuration.
        for c in &reachable {
            let mut seen: BTreeSet<Config> = BTreeSet::new();
            let mut q = VecDeque::new();
            seen.insert(c.clone());
            q.push_back(c.clone());
            let mut ok = false;
            'outer: while let Some(x) = q.pop_front() {
                if is_stable(&x) && correct(&x) {
                    ok = true;
                    break 'outer;
                }
                for i in 0..3 {
                    for j in 0..3 {
                        if i == j {
                            continue;
                        }
                        let next = step(&x, i, j);
                        if seen.insert(next.clone()) {
                            q.push_back(next.clone());
                        }
                    }
                }
            }
            assert!(ok, "no correct stable configuration reachable from {c:?}");
        }
    }

    #[test]
    fn backup_suite_counts_three_agents() {
        let limits = RunLimits::new(100_000, RunLimits::default_probe(3));
        for seed in 0..10 {
            let m = run(&BackupExactSuite, 3, seed, limits).unwrap();
            assert!(m.correct, "seed {seed}: {m:?}");
        }
    }

    #[test]
    fn stable_checks_fire_on_collisions_and_divergence() {
        let p = Profile::desk();
        let mut rng = SplitMix64::new(23);
        // Two concluded leaders.
        let mut u = agent();
        u.junta.active = false;
        u.done1 = true;
        let mut v = u;
        count_exact_step(&mut u, &mut v, &p, true, &mut rng).unwrap();
        assert!(u.error && v.error);

        // Diverged exact phase counters.
        let mut u = agent();
        u.junta.active = false;
        u.done1 = true;
        u.leader = false;
        u.clock.phase = 9;
        u.clock.clock = 5;
        let mut v = u;
        v.clock.phase = 7;
        v.clock.clock = 5;
        count_exact_step(&mut u, &mut v, &p, true, &mut rng).unwrap();
        assert!(u.error && v.error);

        // Mismatched settled approximations.
        let mut u = agent();
        u.junta.active = false;
        u.done1 = true;
        u.leader = false;
        u.done2 = true;
        u.clock.phase = 12;
        u.stage_base = 10;
        u.k = LogLoad::new(8);
        let mut v = u;
        v.k = LogLoad::new(9);
        count_exact_step(&mut u, &mut v, &p, true, &mut rng).unwrap();
        assert!(u.error && v.error);
    }

    #[test]
    fn plain_run_counts_small_population() {
        let p = Profile::desk();
        let suite = CountExactSuite::new(p, false);
        let n = 24;
        let limits = RunLimits::new(40_000_000, RunLimits::default_probe(n));
        let m = run(&suite, n, 3, limits).unwrap();
        assert!(m.correct, "metrics: {m:?}");
    }
}
