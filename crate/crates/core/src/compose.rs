//! Shared plumbing for the composed protocols (junta + clock prelude,
//! re-initialization on level changes, once-per-phase action gating).

use crate::primitives::{clock_step, junta_step};
use crate::profile::{Profile, TickMode};
use crate::state::{AgentState, ClockState};

/// Junta update, level-change re-initialization, and the clock pass.
///
/// An agent meeting a higher-level partner resets its protocol variables
/// (`reset`) and joins the partner's clock timeline; an agent that promoted
/// itself to a new level starts a fresh timeline. Junta variables persist
/// through resets.
pub(crate) fn aux_prelude(
    u: &mut AgentState,
    v: &mut AgentState,
    p: &Profile,
    reset: &dyn Fn(&mut AgentState),
) {
    let (lu, lv) = (u.junta.level, v.junta.level);
    let (cu, cv) = (u.clock, v.clock);
    let (chu, chv) = junta_step(&mut u.junta, &mut v.junta, p.junta_one_sided);
    if lv > lu {
        reset(u);
        u.clock = ClockState {
            first_tick: false,
            ..cv
        };
    } else if chu {
        reset(u);
        u.clock = ClockState::default();
    }
    if lu > lv {
        reset(v);
        v.clock = ClockState {
            first_tick: false,
            ..cu
        };
    } else if chv {
        reset(v);
        v.clock = ClockState::default();
    }
    let (u_merge, v_merge) = (!u.done1, !v.done1);
    clock_step(
        &mut u.clock,
        &mut v.clock,
        u.junta.junta,
        v.junta.junta,
        u_merge,
        v_merge,
        p,
    );
}

/// Consume an armed `first_tick`, honoring the profile's tick mode. The
/// once-per-phase blocks of the stage algorithms run exactly when this
/// returns true.
pub(crate) fn take_tick(x: &mut AgentState, mode: TickMode, is_initiator: bool) -> bool {
    match mode {
        TickMode::OnWrap => {
            let armed = x.clock.first_tick;
            x.clock.first_tick = false;
            armed
        }
        TickMode::OnInitiate => {
            if is_initiator && x.clock.first_tick {
                x.clock.first_tick = false;
                true
            } else {
                false
            }
        }
    }
}

/// Flip `done2` and record the stage entry point on the agent's own timeline.
/// `partner_stage_phase` aligns a recruit with the recruiter's stage phase, so
/// late joiners do not restart the stage from phase 0.
pub(crate) fn enter_done2(x: &mut AgentState, partner_stage_phase: u16) {
    if !x.done2 {
        x.done2 = true;
        x.stage_base = x.clock.phase.saturating_sub(partner_stage_phase);
    }
}
