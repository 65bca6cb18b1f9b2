//! Approximate population counting.
//!
//! The composed protocol runs the junta process and phase clocks on every
//! interaction and dispatches on the two done flags: slow leader election
//! until `done1`, then the search protocol until `done2`, then either a plain
//! broadcast of the result or (in the stable variants) the error-detection
//! stage backed by the slow token-merging protocol.

use std::sync::OnceLock;

use crate::balancing::{classical_balance, pow2_balance, Load, LogLoad};
use crate::compose::{aux_prelude, enter_done2, take_tick};
use crate::engine::{OutputTally, ProtocolSuite};
use crate::error::StepError;
use crate::leader::{slow_every, slow_tick};
use crate::primitives::Coins;
use crate::profile::Profile;
use crate::rng::SplitMix64;
use crate::state::{
    AgentState, VarSpec, AUX_VARS, BACKUP_APPROX_VARS, ERROR_DETECT_VARS, SEARCH_VARS,
    SLOW_LEADER_VARS,
};

/// Which approximate variant is running.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApproxMode {
    Plain,
    Stable,
    /// Stable, but token holders do not track the maximum; only the other
    /// agents are required to output the result.
    StableRelaxed,
}

impl ApproxMode {
    fn stable(self) -> bool {
        !matches!(self, ApproxMode::Plain)
    }

    fn relaxed(self) -> bool {
        matches!(self, ApproxMode::StableRelaxed)
    }
}

/// Number of error-detection phases; the clock stops in the last one.
const ED_PHASES: u16 = 4;

// ---------------------------------------------------------------------------
// Search protocol
// ---------------------------------------------------------------------------

/// Once-per-phase actions of the search protocol: the leader infuses its load
/// in phase 1 and decides in phase 4.
pub fn search_tick(x: &mut AgentState, partner: &mut AgentState) {
    if !x.leader || x.done2 {
        return;
    }
    match x.phase5() {
        1 => partner.k = x.k,
        4 => {
            if partner.k.raw() <= 0 {
                x.k = LogLoad::new(x.k.raw() + 1);
            } else {
                let here = x.clock.phase;
                x.done2 = true;
                x.stage_base = here;
            }
        }
        _ => {}
    }
}

/// Per-interaction search actions among non-leaders: reset in phase 0,
/// powers-of-two balancing in phase 2, maximum broadcast in phase 3.
pub fn search_every(u: &mut AgentState, v: &mut AgentState) {
    if u.leader || v.leader {
        return;
    }
    match u.phase5() {
        0 => u.k = LogLoad::EMPTY,
        2 => {
            let (a, b) = pow2_balance(u.k, v.k, false, false);
            u.k = a;
            v.k = b;
        }
        3 => {
            let m = u.k.max(v.k);
            u.k = m;
            v.k = m;
        }
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// Error detection (stable stage 3)
// ---------------------------------------------------------------------------

fn ed_phase(x: &AgentState) -> u16 {
    x.stage_phase(ED_PHASES)
}

/// Once-per-phase error-detection actions.
fn ed_tick(x: &mut AgentState, partner: &mut AgentState) {
    match ed_phase(x) {
        0 => {
            if x.leader {
                partner.k = LogLoad::new((x.k.raw() - 2).max(-1));
            }
        }
        2 => {
            if x.k.is_empty() || x.leader {
                x.err.l = 0;
            } else if x.k.raw() == 0 {
                x.err.l = 32;
            } else {
                mark_error(x);
            }
        }
        4 => {
            if x.leader {
                if x.err.l == 0 {
                    mark_error(x);
                } else {
                    let refined = x.k.raw() as f64 + 3.0 - (x.err.l as f64).log2();
                    x.k = LogLoad::new((refined.round() as i16).max(-1));
                }
            }
        }
        _ => {}
    }
}

/// Per-interaction error-detection actions; `u` is the initiator.
fn ed_every(u: &mut AgentState, v: &mut AgentState) {
    // A partner that has not concluded the search yet is recruited into the
    // stage at the recruiter's stage phase.
    if !v.done2 {
        v.k = LogLoad::EMPTY;
        v.err.l = 0;
        enter_done2(v, ed_phase(u));
    }
    match ed_phase(u) {
        1 => {
            if !u.leader && !v.leader {
                let (a, b) = pow2_balance(u.k, v.k, false, false);
                u.k = a;
                v.k = b;
            }
        }
        3 => {
            let (a, b) = classical_balance(Load(u.err.l as u128), Load(v.err.l as u128));
            u.err.l = a.0 as u8;
            v.err.l = b.0 as u8;
        }
        4 => {
            if u.err.l < 3 || (u.err.l as i16 - v.err.l as i16).abs() > 2 {
                mark_error(u);
            }
            u.k = u.k.max(v.k);
        }
        _ => {}
    }
    for x in [u, v] {
        if x.done2 && ed_phase(x) >= ED_PHASES {
            x.clock.stopped = true;
        }
    }
}

// ---------------------------------------------------------------------------
// Backup protocol (token merging in powers of two)
// ---------------------------------------------------------------------------

/// One backup interaction: equal piles merge into the initiator, and both
/// agents update the largest exponent they are aware of. In the relaxed
/// variant token holders do not track the maximum (saving the second
/// log-sized variable); empty agents still learn it from the piles they see.
pub fn backup_approx_step(u: &mut AgentState, v: &mut AgentState, relaxed: bool) {
    if !u.bk.k.is_empty() && u.bk.k == v.bk.k {
        u.bk.k = LogLoad::new(u.bk.k.raw() + 1);
        v.bk.k = LogLoad::EMPTY;
    }
    if relaxed {
        let (pu, pv) = (u.bk, v.bk);
        for (x, p) in [(&mut u.bk, pv), (&mut v.bk, pu)] {
            if x.k.is_empty() {
                let mut m = x.kmax.max(p.k.raw());
                if p.k.is_empty() {
                    m = m.max(p.kmax);
                }
                x.kmax = m;
            } else {
                x.kmax = x.k.raw();
            }
        }
    } else {
        let m = u
            .bk
            .kmax
            .max(v.bk.kmax)
            .max(u.bk.k.raw())
            .max(v.bk.k.raw());
        u.bk.kmax = m;
        v.bk.kmax = m;
    }
}

fn mark_error(x: &mut AgentState) {
    if !x.error {
        x.error = true;
        x.bk = Default::default();
        x.bk_paused = false;
    }
}

// ---------------------------------------------------------------------------
// The composed protocol
// ---------------------------------------------------------------------------

fn reset_for_level_change(x: &mut AgentState) {
    x.leader = true;
    x.done1 = false;
    x.slow = Default::default();
    x.k = LogLoad::EMPTY;
    x.done2 = false;
    x.err = Default::default();
    x.stage_base = 0;
}

/// One interaction of the approximate protocol; `u` is the initiator.
pub fn approximate_step(
    u: &mut AgentState,
    v: &mut AgentState,
    p: &Profile,
    mode: ApproxMode,
    rng: &mut SplitMix64,
) {
    let mut coins = Coins::begin(&mut u.coin, &mut v.coin, p.coin_mode, rng);

    if mode.stable() && (u.error || v.error) {
        mark_error(u);
        mark_error(v);
        backup_approx_step(u, v, mode.relaxed());
        return;
    }

    aux_prelude(u, v, p, &reset_for_level_change);

    if mode.stable() {
        // Concluded-leader collision.
        if u.done1 && v.done1 && u.leader && v.leader {
            mark_error(u);
            mark_error(v);
            return;
        }
        // Stage-phase divergence inside error detection (compared after the
        // clock pass; a catching-up agent whose partner already froze its
        // clock is exempt).
        if u.done1 && v.done1 && u.done2 && v.done2 && u.clock.stopped == v.clock.stopped {
            if ed_phase(u) != ed_phase(v) {
                mark_error(u);
                mark_error(v);
                return;
            }
        }
        // The backup runs from the start and pauses once an agent concludes
        // leader election.
        if !u.done1 && !v.done1 {
            backup_approx_step(u, v, mode.relaxed());
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
        approx_tick_block(u, v, mode, &mut coins, true);
    }
    if v_tick {
        approx_tick_block(v, u, mode, &mut coins, false);
    }

    // Stage dispatch on the initiator's flags.
    match stage {
        (false, _) => slow_every(u, v, p),
        (true, false) => search_every(u, v),
        (true, true) => {
            if mode.stable() {
                ed_every(u, v);
            } else {
                // Broadcasting stage: the initiator pushes (done2, k).
                enter_done2(v, 0);
                v.k = u.k;
            }
        }
    }
}

fn approx_tick_block(
    x: &mut AgentState,
    partner: &mut AgentState,
    mode: ApproxMode,
    coins: &mut Coins<'_>,
    x_is_initiator: bool,
) {
    if !x.done1 {
        let coin = if x_is_initiator {
            coins.draw_u()
        } else {
            coins.draw_v()
        };
        slow_tick(x, coin);
    } else if !x.done2 {
        search_tick(x, partner);
    } else if mode.stable() {
        ed_tick(x, partner);
    }
}

/// Output of one agent under the given variant.
pub fn approximate_output(s: &AgentState, mode: ApproxMode) -> Option<i64> {
    match mode {
        ApproxMode::Plain => Some(s.k.raw() as i64),
        ApproxMode::Stable => {
            if s.error || !s.done1 {
                Some(s.bk.kmax as i64)
            } else {
                Some(s.k.raw() as i64)
            }
        }
        ApproxMode::StableRelaxed => {
            if s.error || !s.done1 {
                if s.bk.k.is_empty() {
                    Some(s.bk.kmax as i64)
                } else {
                    Some(s.bk.k.raw() as i64)
                }
            } else {
                Some(s.k.raw() as i64)
            }
        }
    }
}

pub(crate) fn log_bounds(n: usize) -> (i64, i64) {
    let fl = (n as u64).ilog2() as i64;
    let ce = if (n as u64).is_power_of_two() {
        fl
    } else {
        fl + 1
    };
    (fl, ce)
}

/// Stability of the standalone backup configuration: no merge is possible and
/// every agent is aware of the final maximum.
fn backup_stable(agents: &[AgentState], relaxed: bool) -> bool {
    let mut seen = [false; 64];
    let mut maxk = -1i16;
    for a in agents {
        let k = a.bk.k.raw();
        if k >= 0 {
            let idx = k as usize;
            if idx >= seen.len() || seen[idx] {
                return false;
            }
            seen[idx] = true;
            maxk = maxk.max(k);
        }
    }
    if relaxed {
        agents
            .iter()
            .all(|a| !a.bk.k.is_empty() || a.bk.kmax == maxk)
    } else {
        agents.iter().all(|a| a.bk.kmax == maxk)
    }
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

/// The composed approximate-counting suite.
pub struct ApproximateSuite {
    profile: Profile,
    mode: ApproxMode,
}

impl ApproximateSuite {
    pub fn new(profile: Profile, mode: ApproxMode) -> Self {
        ApproximateSuite { profile, mode }
    }
}

fn approx_vars(mode: ApproxMode) -> &'static [VarSpec] {
    static PLAIN: OnceLock<Vec<VarSpec>> = OnceLock::new();
    static STABLE: OnceLock<Vec<VarSpec>> = OnceLock::new();
    match mode {
        ApproxMode::Plain => PLAIN.get_or_init(|| {
            [AUX_VARS, SLOW_LEADER_VARS, SEARCH_VARS].concat()
        }),
        _ => STABLE.get_or_init(|| {
            [
                AUX_VARS,
                SLOW_LEADER_VARS,
                SEARCH_VARS,
                ERROR_DETECT_VARS,
                BACKUP_APPROX_VARS,
            ]
            .concat()
        }),
    }
}

impl ProtocolSuite for ApproximateSuite {
    fn name(&self) -> &str {
        match self.mode {
            ApproxMode::Plain => "approximate",
            ApproxMode::Stable => "approximate-stable",
            ApproxMode::StableRelaxed => "approximate-stable-relaxed",
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
        approximate_step(u, v, &self.profile, self.mode, rng);
        Ok(())
    }

    fn output(&self, s: &AgentState) -> Option<i64> {
        approximate_output(s, self.mode)
    }

    fn is_stable(&self, agents: &[AgentState]) -> bool {
        if !junta_settled(agents) {
            return false;
        }
        match self.mode {
            ApproxMode::Plain => {
                let k = agents[0].k;
                agents
                    .iter()
                    .all(|a| a.done1 && a.done2 && a.k == k)
            }
            ApproxMode::Stable | ApproxMode::StableRelaxed => {
                if agents.iter().all(|a| a.error) {
                    return backup_stable(agents, self.mode.relaxed());
                }
                if agents.iter().any(|a| a.error) {
                    return false;
                }
                let k = agents[0].k;
                let (lmin, lmax) = agents
                    .iter()
                    .fold((u8::MAX, 0u8), |(lo, hi), a| (lo.min(a.err.l), hi.max(a.err.l)));
                agents.iter().all(|a| {
                    a.done1 && a.done2 && a.k == k && a.clock.stopped && ed_phase(a) == ED_PHASES
                }) && lmin >= 3
                    && lmax - lmin <= 2
            }
        }
    }

    fn outputs_ok(&self, tally: &OutputTally, n: usize) -> bool {
        let (fl, ce) = log_bounds(n);
        let in_window = if fl == ce {
            tally.count_of(fl)
        } else {
            tally.count_of(fl) + tally.count_of(ce)
        };
        match self.mode {
            ApproxMode::Plain | ApproxMode::Stable => in_window == n as u32,
            ApproxMode::StableRelaxed => {
                let need = n as u32 - fl as u32;
                tally.count_of(fl).max(tally.count_of(ce)) >= need
            }
        }
    }

    fn tracked_vars(&self) -> &'static [VarSpec] {
        approx_vars(self.mode)
    }

    fn excluded(&self, agents: &[AgentState]) -> Option<u32> {
        if !self.mode.relaxed() {
            return None;
        }
        let count = agents
            .iter()
            .filter(|a| (a.error || !a.done1) && !a.bk.k.is_empty())
            .count();
        Some(count as u32)
    }
}

/// The standalone slow backup suite.
pub struct BackupApproxSuite;

impl ProtocolSuite for BackupApproxSuite {
    fn name(&self) -> &str {
        "backup-approx"
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
        backup_approx_step(u, v, false);
        Ok(())
    }

    fn output(&self, s: &AgentState) -> Option<i64> {
        Some(s.bk.kmax as i64)
    }

    fn is_stable(&self, agents: &[AgentState]) -> bool {
        backup_stable(agents, false)
    }

    fn outputs_ok(&self, tally: &OutputTally, n: usize) -> bool {
        let (fl, _) = log_bounds(n);
        tally.count_of(fl) == n as u32
    }

    fn tracked_vars(&self) -> &'static [VarSpec] {
        BACKUP_APPROX_VARS
    }
}
