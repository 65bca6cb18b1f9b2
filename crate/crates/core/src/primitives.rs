//! Auxiliary pair rules: one-way/maximum broadcast, the junta process, phase
//! clocks, and synthetic coins.
//!
//! These are prose-specified rules rather than pseudocode, and they are applied
//! symmetrically: each agent's update is computed against the partner's
//! pre-interaction state. A one-sided variant of the junta rules is available
//! behind a profile flag for sensitivity checks.

use crate::profile::{CoinMode, Profile};
use crate::rng::SplitMix64;
use crate::state::{ClockState, CoinState, JuntaState};

/// One-way (maximum) epidemics: the initiator adopts the larger value, the
/// responder keeps its own.
pub fn broadcast_step<T: Ord + Copy>(u_val: T, v_val: T) -> (T, T) {
    (u_val.max(v_val), v_val)
}

/// One junta-process interaction, applied to both agents against each other's
/// pre-interaction states.
///
/// An active agent levels up when it meets an active agent on its own level
/// and deactivates otherwise. Any agent meeting a higher-level partner loses
/// its junta bit, and inactive agents adopt the higher level. Returns, per
/// agent, whether its level changed (callers re-initialize dependent state on
/// any level change).
pub fn junta_step(u: &mut JuntaState, v: &mut JuntaState, one_sided: bool) -> (bool, bool) {
    let pu = *u;
    let pv = *v;
    let u_changed = junta_update(u, &pv);
    let v_changed = if one_sided {
        false
    } else {
        junta_update(v, &pu)
    };
    (u_changed, v_changed)
}

fn junta_update(x: &mut JuntaState, partner: &JuntaState) -> bool {
    let old_level = x.level;
    if x.active {
        if partner.active && partner.level == x.level {
            x.level = x.level.saturating_add(1);
        } else {
            x.active = false;
        }
    } else if partner.level > x.level {
        x.level = partner.level;
    }
    if partner.level > old_level {
        x.junta = false;
    }
    x.level != old_level
}

/// Whether clock value `b` is ahead of `a` in the circular order modulo `m`:
/// the forward distance from `a` to `b` lies in `[1, m/2]`.
pub fn clock_ahead(a: u16, b: u16, m: u32) -> bool {
    let d = (b as u32 + m - a as u32) % m;
    d >= 1 && d <= m / 2
}

/// One phase-clock interaction for both agents.
///
/// Each agent adopts the partner's clock when it is ahead in the circular
/// order. When the two clocks are equal and a junta member is present, the
/// member proceeds one extra step and its partner moves with it, so the pair
/// leaves the interaction synchronized. A tick (wrap across m-1 -> 0) bumps
/// the exact phase counter and arms `first_tick`.
///
/// While `merge` is set for an agent (protocols pass it until the agent
/// concludes leader election), its counter is additionally pulled up to the
/// partner's on adoption. That welds the timelines of independently promoted
/// junta pairs into one counter; once election is done the counters advance
/// in lockstep and a divergence stays visible to the stable variants' checks.
pub fn clock_step(
    u: &mut ClockState,
    v: &mut ClockState,
    u_junta: bool,
    v_junta: bool,
    u_merge: bool,
    v_merge: bool,
    profile: &Profile,
) {
    let m = profile.clock_m;
    let pu = *u;
    let pv = *v;

    let mut target_u = pu.clock;
    let mut target_v = pv.clock;
    if clock_ahead(pu.clock, pv.clock, m) {
        target_u = pv.clock;
    }
    if clock_ahead(pv.clock, pu.clock, m) {
        target_v = pu.clock;
    }
    if pu.clock == pv.clock {
        let can_step_u = u_junta && !pu.stopped;
        let can_step_v = v_junta && !pv.stopped;
        if can_step_u || can_step_v {
            let stepped = ((pu.clock as u32 + 1) % m) as u16;
            target_u = stepped;
            target_v = stepped;
        }
    }

    if !pu.stopped {
        advance(u, target_u, pv.phase, u_merge);
    }
    if !pv.stopped {
        advance(v, target_v, pu.phase, v_merge);
    }
}

fn advance(x: &mut ClockState, target: u16, partner_phase: u16, merge: bool) {
    let old_clock = x.clock;
    let old_phase = x.phase;
    x.clock = target;
    let wrapped = target != old_clock && target < old_clock;
    let mut phase = old_phase;
    if wrapped {
        phase = phase.saturating_add(1);
    }
    if merge && partner_phase > phase && target != old_clock {
        phase = partner_phase;
    }
    x.phase = phase;
    if phase > old_phase {
        x.first_tick = true;
    }
}

/// Synthetic coin: read the partner's parity bit; the partner flips its bit as
/// part of the interaction.
pub fn synthetic_coin(partner: &mut CoinState) -> bool {
    let bit = partner.parity;
    partner.parity = !partner.parity;
    bit
}

/// Per-interaction coin source for the protocol deltas.
///
/// In synthetic mode each side's draw is its partner's pre-flip parity bit; in
/// rng mode draws come from the run's SplitMix64 stream.
pub struct Coins<'r> {
    mode: CoinMode,
    rng: &'r mut SplitMix64,
    u_pre_parity: bool,
    v_pre_parity: bool,
}

impl<'r> Coins<'r> {
    /// Flips both parities (participation count) and captures the pre-flip
    /// bits as this interaction's synthetic coin values.
    pub fn begin(
        u: &mut CoinState,
        v: &mut CoinState,
        mode: CoinMode,
        rng: &'r mut SplitMix64,
    ) -> Self {
        let u_pre = u.parity;
        let v_pre = v.parity;
        u.parity = !u.parity;
        v.parity = !v.parity;
        Coins {
            mode,
            rng,
            u_pre_parity: u_pre,
            v_pre_parity: v_pre,
        }
    }

    /// Random bit for the initiator.
    pub fn draw_u(&mut self) -> bool {
        match self.mode {
            CoinMode::Synthetic => self.v_pre_parity,
            CoinMode::Rng => self.rng.next_bool(),
        }
    }

    /// Random bit for the responder.
    pub fn draw_v(&mut self) -> bool {
        match self.mode {
            CoinMode::Synthetic => self.u_pre_parity,
            CoinMode::Rng => self.rng.next_bool(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn junta(level: u8, active: bool, junta: bool) -> JuntaState {
        JuntaState {
            level,
            active,
            junta,
        }
    }

    #[test]
    fn broadcast_initiator_adopts_maximum() {
        assert_eq!(broadcast_step(0, 5), (5, 5));
        assert_eq!(broadcast_step(5, 0), (5, 0));
        assert_eq!(broadcast_step(7, 7), (7, 7));
    }

    #[test]
    fn junta_same_level_actives_promote() {
        let mut u = junta(2, true, true);
        let mut v = junta(2, true, true);
        junta_step(&mut u, &mut v, false);
        assert_eq!(u.level, 3);
        assert_eq!(v.level, 3);
        assert!(u.active && v.active);
        assert!(u.junta && v.junta);
    }

    #[test]
    fn junta_active_deactivates_against_higher_inactive() {
        let mut u = junta(1, true, true);
        let mut v = junta(3, false, false);
        junta_step(&mut u, &mut v, false);
        assert!(!u.active);
        assert!(!u.junta);
        assert_eq!(u.level, 1, "active agents do not adopt levels");
    }

    #[test]
    fn junta_inactive_adopts_higher_level() {
        let mut u = junta(1, false, false);
        let mut v = junta(4, true, true);
        junta_step(&mut u, &mut v, false);
        assert_eq!(u.level, 4);
        assert!(!u.junta);
    }

    #[test]
    fn junta_level_is_monotone_and_terminates() {
        // Random pairings must keep levels non-decreasing and eventually
        // deactivate everyone.
        let mut rng = SplitMix64::new(3);
        let n = 64usize;
        let mut pop = vec![JuntaState::default(); n];
        let mut steps = 0u64;
        while pop.iter().any(|a| a.active) {
            let i = rng.next_below(n as u64) as usize;
            let mut j = rng.next_below((n - 1) as u64) as usize;
            if j >= i {
                j += 1;
            }
            let (mut u, mut v) = (pop[i], pop[j]);
            let before = (u.level, v.level);
            junta_step(&mut u, &mut v, false);
            assert!(u.level >= before.0 && v.level >= before.1);
            pop[i] = u;
            pop[j] = v;
            steps += 1;
            assert!(steps < 1_000_000, "junta process failed to terminate");
        }
        let max_level = pop.iter().map(|a| a.level).max().unwrap();
        let members = pop
            .iter()
            .filter(|a| a.level == max_level && a.junta)
            .count();
        assert!(members >= 1, "junta must be non-empty at termination");
    }

    fn clock(c: u16) -> ClockState {
        ClockState {
            clock: c,
            ..ClockState::default()
        }
    }

    fn m60() -> Profile {
        let mut p = Profile::desk();
        p.clock_m = 60;
        p
    }

    #[test]
    fn clock_adopts_ahead_value() {
        let p = m60();
        let mut u = clock(10);
        let mut v = clock(12);
        clock_step(&mut u, &mut v, false, false, true, true, &p);
        assert_eq!(u.clock, 12);
        assert_eq!(v.clock, 12);
        assert!(!u.first_tick);
    }

    #[test]
    fn junta_member_ticks_across_wrap() {
        let p = m60();
        let mut u = clock(59);
        let mut v = clock(59);
        clock_step(&mut u, &mut v, true, false, true, true, &p);
        assert_eq!(u.clock, 0);
        assert_eq!(u.phase, 1);
        assert!(u.first_tick);
        // The partner moves with the stepping member.
        assert_eq!(v.clock, 0);
        assert_eq!(v.phase, 1);
    }

    #[test]
    fn value_behind_across_wrap_window_is_not_adopted() {
        let p = m60();
        let mut u = clock(5);
        let mut v = clock(58);
        clock_step(&mut u, &mut v, false, false, true, true, &p);
        assert_eq!(u.clock, 5, "58 is behind 5 across the wrap window");
        // 5 is ahead of 58, so the partner adopts it and wraps.
        assert_eq!(v.clock, 5);
        assert_eq!(v.phase, 1);
        assert!(v.first_tick);
    }

    #[test]
    fn stopped_clock_is_a_beacon_but_never_moves() {
        let p = m60();
        let mut u = clock(20);
        u.stopped = true;
        let mut v = clock(15);
        clock_step(&mut u, &mut v, true, true, true, true, &p);
        assert_eq!(u.clock, 20);
        assert_eq!(v.clock, 20, "partners still adopt a stopped clock");
    }

    #[test]
    fn synthetic_coin_reads_then_flips() {
        let mut c = CoinState { parity: false };
        assert!(!synthetic_coin(&mut c));
        assert!(c.parity);
        assert!(synthetic_coin(&mut c));
        assert!(!c.parity);
    }

    #[test]
    fn synthetic_coin_mean_is_balanced() {
        // 1e5 draws across randomly chosen partners from a pool whose parities
        // evolve by participation, checked against a fair-coin oracle.
        let mut rng = SplitMix64::new(99);
        let mut pool: Vec<CoinState> = (0..50)
            .map(|i| CoinState { parity: i % 2 == 0 })
            .collect();
        let draws = 100_000u32;
        let mut ones = 0u32;
        for _ in 0..draws {
            let idx = rng.next_below(pool.len() as u64) as usize;
            if synthetic_coin(&mut pool[idx]) {
                ones += 1;
            }
        }
        let mean = f64::from(ones) / f64::from(draws);
        assert!((mean - 0.5).abs() < 0.01, "mean {mean} not within 0.5 +/- 0.01");
    }

    proptest! {
        /// Broadcast never invents values and never lowers the maximum.
        #[test]
        fn broadcast_monotone_no_new_values(a in 0i64..100, b in 0i64..100) {
            let (x, y) = broadcast_step(a, b);
            prop_assert!(x.max(y) == a.max(b));
            prop_assert!(x == a || x == b);
            prop_assert_eq!(y, b);
        }

        /// Clock values stay inside [0, m) and phases never decrease.
        #[test]
        fn clock_range_and_phase_monotone(cu in 0u16..60, cv in 0u16..60,
                                          ju in proptest::bool::ANY, jv in proptest::bool::ANY) {
            let p = m60();
            let mut u = clock(cu);
            let mut v = clock(cv);
            clock_step(&mut u, &mut v, ju, jv, true, true, &p);
            prop_assert!(u.clock < 60 && v.clock < 60);
            prop_assert!(u.phase <= 1 && v.phase <= 1);
        }
    }
}
