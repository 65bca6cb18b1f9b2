//! The composite per-agent state record.
//!
//! Every protocol in this crate operates on some subset of [`AgentState`]'s
//! fields. Keeping one flat record (instead of a state type per protocol)
//! mirrors how the composed protocols share variables: the same `k` is written
//! by the search stage, balanced by error detection, and broadcast afterwards.
//! Suites declare which variables they actually use via [`VarSpec`] tables, and
//! state-usage accounting only looks at those.

use crate::balancing::LogLoad;

/// Junta process variables: `(level, active, junta)`, initially `(0, 1, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct JuntaState {
    pub level: u8,
    pub active: bool,
    pub junta: bool,
}

impl Default for JuntaState {
    fn default() -> Self {
        JuntaState {
            level: 0,
            active: true,
            junta: true,
        }
    }
}

/// Phase clock variables.
///
/// `phase` counts ticks exactly (saturating at u16::MAX); consumers reduce it
/// mod 5, mod 2, or against a snapshot as needed. `first_tick` is armed when
/// the clock wraps and consumed in the interaction where the agent executes
/// its once-per-phase actions, so it reads 1 exactly in that interaction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ClockState {
    pub clock: u16,
    pub phase: u16,
    pub first_tick: bool,
    /// Set when a stage stops the clock; a stopped clock neither advances nor
    /// adopts, but partners may still read it.
    pub stopped: bool,
}

/// Synthetic-coin parity bit, flipped once per interaction the agent joins.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct CoinState {
    pub parity: bool,
}

/// Slow leader election per-phase coin fields.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct SlowLeaderState {
    /// This phase's coin flip (contenders only).
    pub coin: bool,
    /// Some same-phase contender flipped heads.
    pub heads: bool,
}

/// Fast leader election fields: the sampled random number and how many bits
/// of it have been drawn in the current even phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct FastLeaderState {
    pub coins: u64,
    pub sampled: u8,
}

/// Error-detection token counter, range 0..=32.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ErrorDetectState {
    pub l: u8,
}

/// Backup protocol for approximate counting: merged-token exponent (−1 =
/// empty) and the largest exponent the agent is aware of.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BackupApproxState {
    pub k: LogLoad,
    pub kmax: i16,
}

impl Default for BackupApproxState {
    fn default() -> Self {
        BackupApproxState {
            k: LogLoad::new(0),
            kmax: 0,
        }
    }
}

/// Backup protocol for exact counting: one token per agent, a counted bit and
/// the token-bag size / best-known maximum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BackupExactState {
    pub counted: bool,
    pub nmax: u64,
}

impl Default for BackupExactState {
    fn default() -> Self {
        BackupExactState {
            counted: false,
            nmax: 1,
        }
    }
}

/// All per-protocol variables of one agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct AgentState {
    pub junta: JuntaState,
    pub clock: ClockState,
    pub coin: CoinState,
    /// Leader-contender flag (both elections).
    pub leader: bool,
    /// Leader election concluded.
    pub done1: bool,
    pub slow: SlowLeaderState,
    pub fast: FastLeaderState,
    /// Logarithmic load / adopted approximation. Shared by the search stage,
    /// error detection, the approximation stage and the refinement stage.
    pub k: LogLoad,
    /// Search (or approximation stage) concluded.
    pub done2: bool,
    /// Token count for classical balancing (approximation + refinement).
    pub load: u128,
    /// Approximation-stage phase counter i.
    pub apx_i: u16,
    /// Own phase at the moment `done2` flipped; stage-relative phases are
    /// measured from here.
    pub stage_base: u16,
    pub err: ErrorDetectState,
    /// Error flag of the stable variants; monotone once set.
    pub error: bool,
    pub bk: BackupApproxState,
    pub bx: BackupExactState,
    /// Backup instance paused (done1 reached, no error yet).
    pub bk_paused: bool,
}

impl AgentState {
    /// The common initial state: everything at its protocol-initial value.
    pub fn initial() -> Self {
        let mut s = AgentState::default();
        s.leader = true; // every agent starts as a leader contender
        s.k = LogLoad::EMPTY;
        s
    }

    /// Phase index for the search protocol: the exact counter mod 5.
    pub fn phase5(&self) -> u16 {
        self.clock.phase % 5
    }

    /// Stage-relative phase (error detection / refinement), capped.
    pub fn stage_phase(&self, cap: u16) -> u16 {
        self.clock.phase.saturating_sub(self.stage_base).min(cap)
    }
}

/// One tracked variable of a suite: a name and an extractor used by
/// state-usage accounting. Booleans extract as 0/1.
#[derive(Clone, Copy)]
pub struct VarSpec {
    pub name: &'static str,
    pub extract: fn(&AgentState) -> i64,
}

impl std::fmt::Debug for VarSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VarSpec({})", self.name)
    }
}

macro_rules! var {
    ($name:literal, $($path:tt)+) => {
        VarSpec { name: $name, extract: |s: &AgentState| (s.$($path)+) as i64 }
    };
}

/// Junta + clock + coin variables, shared by every clocked suite.
pub const AUX_VARS: &[VarSpec] = &[
    var!("level", junta.level),
    var!("active", junta.active),
    var!("junta", junta.junta),
    var!("clock", clock.clock),
    var!("phase", clock.phase),
    var!("first_tick", clock.first_tick),
    var!("parity", coin.parity),
];

pub const SLOW_LEADER_VARS: &[VarSpec] = &[
    var!("leader", leader),
    var!("done1", done1),
    var!("slow_coin", slow.coin),
    var!("slow_heads", slow.heads),
];

pub const FAST_LEADER_VARS: &[VarSpec] = &[
    var!("leader", leader),
    var!("done1", done1),
    var!("coins", fast.coins),
    var!("counter", fast.sampled),
];

pub const SEARCH_VARS: &[VarSpec] = &[var!("k", k.raw()), var!("done2", done2)];

pub const ERROR_DETECT_VARS: &[VarSpec] = &[
    var!("err_l", err.l),
    var!("error", error),
    var!("stage_base", stage_base),
];

pub const COUNT_STAGE_VARS: &[VarSpec] = &[
    var!("k", k.raw()),
    var!("done2", done2),
    var!("i", apx_i),
    var!("load_bits", load_bits()),
];

pub const BACKUP_APPROX_VARS: &[VarSpec] = &[var!("bk_k", bk.k.raw()), var!("bk_kmax", bk.kmax)];

pub const BACKUP_EXACT_VARS: &[VarSpec] = &[var!("counted", bx.counted), var!("nmax", bx.nmax)];

impl AgentState {
    /// Bit length of the token count; tracked instead of the raw count so that
    /// range products stay meaningful.
    pub fn load_bits(&self) -> u32 {
        128 - self.load.leading_zeros()
    }
}
