//! Fault injection: the three targeted corruptions the stability arguments
//! must catch. A fault mutates one designated field of one designated agent
//! at one stage boundary; every other transition is the unmodified protocol.

use crate::balancing::LogLoad;
use crate::engine::FaultHook;
use crate::error::ConfigError;
use crate::state::AgentState;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultSite {
    /// The leader's approximation, right as it enters error detection.
    PreErrorDetect,
    /// The leader's approximation, right as it enters the refinement stage.
    PreRefine,
    /// A second concluded leader, right after the first `done1`.
    PostElection,
}

/// Parsed fault descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultSpec {
    CorruptK { delta: i16, site: FaultSite },
    DupLeader,
}

impl FaultSpec {
    /// Parse `corrupt-k:<delta>@pre-errordetect`, `corrupt-k:<delta>@pre-refine`
    /// or `dup-leader@post-election`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::BadFault(text.to_string());
        let (head, site) = text.split_once('@').ok_or_else(bad)?;
        match (head, site) {
            ("dup-leader", "post-election") => Ok(FaultSpec::DupLeader),
            _ => {
                let (kind, delta) = head.split_once(':').ok_or_else(bad)?;
                if kind != "corrupt-k" {
                    return Err(bad());
                }
                let delta: i16 = delta.parse().map_err(|_| bad())?;
                let site = match site {
                    "pre-errordetect" => FaultSite::PreErrorDetect,
                    "pre-refine" => FaultSite::PreRefine,
                    _ => return Err(bad()),
                };
                Ok(FaultSpec::CorruptK { delta, site })
            }
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            FaultSpec::CorruptK {
                delta,
                site: FaultSite::PreErrorDetect,
            } => format!("corrupt-k:{delta}@pre-errordetect"),
            FaultSpec::CorruptK {
                delta,
                site: FaultSite::PreRefine,
            } => format!("corrupt-k:{delta}@pre-refine"),
            FaultSpec::CorruptK { delta, site: _ } => format!("corrupt-k:{delta}@?"),
            FaultSpec::DupLeader => "dup-leader@post-election".to_string(),
        }
    }

    pub fn hook(&self) -> Box<dyn FaultHook> {
        match *self {
            FaultSpec::CorruptK { delta, .. } => Box::new(CorruptLeaderK { delta }),
            FaultSpec::DupLeader => Box::new(DupLeader),
        }
    }
}

/// Shift the leader's k by `delta` the moment it concludes its search or
/// approximation stage (it is then about to distribute that value).
struct CorruptLeaderK {
    delta: i16,
}

impl FaultHook for CorruptLeaderK {
    fn try_fire(&mut self, _t: u64, touched: (usize, usize), agents: &mut [AgentState]) -> bool {
        for idx in [touched.0, touched.1] {
            let a = &mut agents[idx];
            if a.leader && a.done1 && a.done2 {
                a.k = LogLoad::new((a.k.raw() + self.delta).max(-1));
                return true;
            }
        }
        false
    }
}

/// Promote a second concluded leader the moment the first agent finishes
/// leader election.
struct DupLeader;

impl FaultHook for DupLeader {
    fn try_fire(&mut self, _t: u64, touched: (usize, usize), agents: &mut [AgentState]) -> bool {
        let concluded = [touched.0, touched.1]
            .into_iter()
            .find(|&idx| agents[idx].done1 && agents[idx].leader);
        let Some(leader_idx) = concluded else {
            return false;
        };
        let copy_from = agents[leader_idx];
        if let Some(other) = agents.iter().position(|a| !a.leader) {
            let a = &mut agents[other];
            a.leader = true;
            a.done1 = true;
            a.fast = copy_from.fast;
            return true;
        }
        false
    }
}
