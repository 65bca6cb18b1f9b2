//! The two leader-election components.
//!
//! The slow election realizes the black-box interface the approximate protocol
//! relies on: every agent starts as a contender; each phase every contender
//! flips one coin, and a contender that flipped tails while some same-phase
//! contender broadcast heads demotes itself. Direct contender collisions also
//! demote the responder, which makes a multi-leader configuration non-stable
//! and gives uniqueness with probability 1. Every agent sets `done1` once its
//! phase counter reaches the configured outer modulus.
//!
//! The fast election samples a random number per even phase at every
//! contender, spreads the maximum in odd phases, and demotes contenders that
//! observe a strictly larger number. It concludes at a fixed terminal phase.
//!
//! Demotion and heads-broadcasting are gated on equal phase counters; this
//! keeps the at-least-one-contender invariant unconditional: every demotion is
//! justified by a same-phase contender that flipped heads (or sampled a larger
//! number), and the chain of justifications always ends at a surviving
//! contender.

use crate::primitives::Coins;
use crate::profile::Profile;
use crate::state::AgentState;

/// Once-per-phase actions of the slow election for one agent.
pub fn slow_tick(x: &mut AgentState, coin: bool) {
    if x.leader {
        x.slow.coin = coin;
        x.slow.heads = coin;
    } else {
        x.slow.coin = false;
        x.slow.heads = false;
    }
}

/// Per-interaction slow-election rules; `u` is the initiator.
pub fn slow_every(u: &mut AgentState, v: &mut AgentState, profile: &Profile) {
    if u.clock.phase == v.clock.phase {
        let heads = u.slow.heads | v.slow.heads;
        u.slow.heads = heads;
        v.slow.heads = heads;
        if u.leader && !u.slow.coin && heads {
            u.leader = false;
        }
        if v.leader && !v.slow.coin && heads {
            v.leader = false;
        }
        // Direct collision: the initiator survives.
        if u.leader && v.leader {
            v.leader = false;
        }
    }
    let modulus = profile.outer_modulus;
    if u.clock.phase >= modulus {
        u.done1 = true;
    }
    if v.clock.phase >= modulus {
        v.done1 = true;
    }
}

/// Once-per-phase actions of the fast election for one agent: reset the coin
/// string at the start of every even phase.
pub fn fast_tick(x: &mut AgentState) {
    if x.clock.phase % 2 == 0 {
        x.fast.coins = 0;
        x.fast.sampled = 0;
    }
}

/// Per-interaction fast-election rules; acts only on matching phase counters.
pub fn fast_every(
    u: &mut AgentState,
    v: &mut AgentState,
    coins: &mut Coins<'_>,
    profile: &Profile,
) {
    if u.clock.phase != v.clock.phase {
        return;
    }
    let phase = u.clock.phase;
    if phase % 2 == 0 {
        let budget = profile.bit_budget(u.junta.level as u32);
        if u.leader && (u.fast.sampled as u32) < budget {
            let bit = coins.draw_u();
            u.fast.coins = (u.fast.coins << 1) | bit as u64;
            u.fast.sampled += 1;
        }
    } else if u.fast.coins < v.fast.coins {
        u.leader = false;
        u.fast.coins = v.fast.coins;
    }
    if phase == profile.terminal_phase {
        u.done1 = true;
        v.done1 = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::CoinMode;
    use crate::rng::SplitMix64;
    use crate::state::CoinState;

    fn agent(leader: bool, phase: u16) -> AgentState {
        let mut a = AgentState::initial();
        a.leader = leader;
        a.clock.phase = phase;
        a
    }

    #[test]
    fn collision_demotes_the_responder() {
        let p = Profile::desk();
        let mut u = agent(true, 3);
        let mut v = agent(true, 3);
        slow_every(&mut u, &mut v, &p);
        assert!(u.leader);
        assert!(!v.leader);
    }

    #[test]
    fn tails_contender_demotes_on_heads_broadcast() {
        let p = Profile::desk();
        let mut u = agent(true, 3);
        u.slow.coin = false;
        let mut v = agent(false, 3);
        v.slow.heads = true;
        slow_every(&mut u, &mut v, &p);
        assert!(!u.leader);
    }

    #[test]
    fn heads_flipper_survives_its_phase() {
        let p = Profile::desk();
        let mut u = agent(true, 3);
        slow_tick(&mut u, true);
        let mut v = agent(false, 3);
        v.slow.heads = true;
        slow_every(&mut u, &mut v, &p);
        assert!(u.leader, "a contender that flipped heads never demotes in that phase");
    }

    #[test]
    fn stale_heads_from_other_phase_is_ignored() {
        let p = Profile::desk();
        let mut u = agent(true, 4);
        u.slow.coin = false;
        let mut v = agent(false, 3);
        v.slow.heads = true;
        slow_every(&mut u, &mut v, &p);
        assert!(u.leader, "phase mismatch must not demote");
        assert!(!u.slow.heads);
    }

    #[test]
    fn done1_fires_at_outer_modulus() {
        let p = Profile::desk();
        let mut u = agent(true, p.outer_modulus);
        let mut v = agent(false, 2);
        slow_every(&mut u, &mut v, &p);
        assert!(u.done1);
        assert!(!v.done1);
    }

    #[test]
    fn fast_odd_phase_adopts_strictly_larger_coins() {
        let p = Profile::desk();
        let mut rng = SplitMix64::new(1);
        let mut u = agent(true, 5);
        u.fast.coins = 5;
        let mut v = agent(true, 5);
        v.fast.coins = 9;
        let mut cu = CoinState::default();
        let mut cv = CoinState::default();
        let mut coins = Coins::begin(&mut cu, &mut cv, CoinMode::Rng, &mut rng);
        fast_every(&mut u, &mut v, &mut coins, &p);
        assert!(!u.leader);
        assert_eq!(u.fast.coins, 9);
    }

    #[test]
    fn fast_equal_coins_change_nothing() {
        let p = Profile::desk();
        let mut rng = SplitMix64::new(1);
        let mut u = agent(true, 5);
        u.fast.coins = 7;
        let mut v = agent(true, 5);
        v.fast.coins = 7;
        let mut cu = CoinState::default();
        let mut cv = CoinState::default();
        let mut coins = Coins::begin(&mut cu, &mut cv, CoinMode::Rng, &mut rng);
        fast_every(&mut u, &mut v, &mut coins, &p);
        assert!(u.leader && v.leader);
        assert_eq!((u.fast.coins, v.fast.coins), (7, 7));
    }

    /// Two fixed contenders survive a whole election together only if they
    /// sample identical numbers in every round: probability 2^(-b*R). Checked
    /// by Monte Carlo at b = 4, R = 4 against the direct computation 2^-16.
    #[test]
    fn tie_probability_matches_direct_computation() {
        let b = 4;
        let rounds = 4;
        let trials = 1u32 << 22;
        let mut rng = SplitMix64::new(2024);
        let mut both_survive = 0u32;
        for _ in 0..trials {
            let mut tied = true;
            for _ in 0..rounds {
                let a = rng.next_u64() & ((1 << b) - 1);
                let c = rng.next_u64() & ((1 << b) - 1);
                if a != c {
                    tied = false;
                    break;
                }
            }
            if tied {
                both_survive += 1;
            }
        }
        // Expectation 2^-16 * 2^22 = 64; allow +/- 5 sigma (sigma = 8).
        assert!(
            (24..=104).contains(&both_survive),
            "observed {both_survive} ties, expected about 64"
        );
    }
}
