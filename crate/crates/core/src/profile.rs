//! Named constant profiles.
//!
//! The protocols are uniform: no transition ever reads the population size.
//! They do depend on a handful of structural constants (clock modulus, level
//! offset, phase budgets). A [`Profile`] bundles one consistent assignment of
//! those constants. Two are built in:
//!
//! * `desk` — constants sized for populations up to a few thousand agents,
//!   where the asymptotic choices collapse (a level offset of 8 would zero out
//!   every exponent below n = 2^256).
//! * `paper` — the constants as published, useful for inspecting the protocol
//!   shape even though they are degenerate at desk scale.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// When an agent executes its once-per-phase actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TickMode {
    /// In the interaction in which its clock wrapped, in either role.
    OnWrap,
    /// In its first initiated interaction after the wrap.
    OnInitiate,
}

/// Source of protocol random bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoinMode {
    /// Partner parity bit (synthetic coins).
    Synthetic,
    /// The run's SplitMix64 stream.
    Rng,
}

/// One consistent assignment of the protocol constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    /// Phase clock modulus m.
    pub clock_m: u32,
    /// Phase-length multiplier c the clock is calibrated to deliver: one phase
    /// should span at least c * n * log2(n) interactions.
    pub clock_c: f64,
    /// Offset in the shared exponent e = max(1, 2^(level - offset)).
    pub level_offset: u32,
    /// Fast leader election concludes when the phase counter reaches this.
    pub terminal_phase: u16,
    /// Slow leader election concludes after this many phases.
    pub outer_modulus: u16,
    /// Upper bound on fast-election coin strings, in bits.
    pub bit_budget_cap: u8,
    pub tick_mode: TickMode,
    pub coin_mode: CoinMode,
    /// Apply junta rules only from the initiator's side (sensitivity check).
    pub junta_one_sided: bool,
}

impl Profile {
    pub fn desk() -> Self {
        Profile {
            name: "desk".into(),
            clock_m: 48,
            clock_c: 3.5,
            level_offset: 0,
            terminal_phase: 16,
            outer_modulus: 60,
            bit_budget_cap: 48,
            tick_mode: TickMode::OnWrap,
            coin_mode: CoinMode::Synthetic,
            junta_one_sided: false,
        }
    }

    pub fn paper() -> Self {
        Profile {
            name: "paper".into(),
            clock_m: 48,
            clock_c: 3.5,
            level_offset: 8,
            terminal_phase: 8192,
            outer_modulus: 60,
            bit_budget_cap: 48,
            tick_mode: TickMode::OnWrap,
            coin_mode: CoinMode::Synthetic,
            junta_one_sided: false,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, ConfigError> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(ConfigError::UnknownProfile(other.to_string())),
        }
    }

    /// The shared exponent e = max(1, 2^(level - offset)), capped so that one
    /// load explosion cannot overflow 128-bit token counts.
    pub fn exponent(&self, level: u32) -> u32 {
        let e = if level > self.level_offset {
            1u32 << (level - self.level_offset).min(6)
        } else {
            1
        };
        e.min(64)
    }

    /// Fast-election bit budget for a contender on `level`.
    pub fn bit_budget(&self, level: u32) -> u32 {
        self.exponent(level).min(self.bit_budget_cap as u32)
    }

    /// Apply one `key=value` override. Unknown keys and unparseable values are
    /// configuration errors, reported before any run starts.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value
                .parse()
                .map_err(|_| ConfigError::BadOverrideValue(key.to_string(), value.to_string()))
        }
        match key {
            "clock-m" => self.clock_m = parse(key, value)?,
            "clock-c" => self.clock_c = parse(key, value)?,
            "level-offset" => self.level_offset = parse(key, value)?,
            "terminal-phase" => self.terminal_phase = parse(key, value)?,
            "outer-modulus" => self.outer_modulus = parse(key, value)?,
            "bit-budget-cap" => self.bit_budget_cap = parse(key, value)?,
            "tick-mode" => {
                self.tick_mode = match value {
                    "on-wrap" => TickMode::OnWrap,
                    "on-initiate" => TickMode::OnInitiate,
                    _ => {
                        return Err(ConfigError::BadOverrideValue(
                            key.to_string(),
                            value.to_string(),
                        ))
                    }
                }
            }
            "coin-mode" => {
                self.coin_mode = match value {
                    "synthetic" => CoinMode::Synthetic,
                    "rng" => CoinMode::Rng,
                    _ => {
                        return Err(ConfigError::BadOverrideValue(
                            key.to_string(),
                            value.to_string(),
                        ))
                    }
                }
            }
            "junta-one-sided" => self.junta_one_sided = parse(key, value)?,
            _ => return Err(ConfigError::UnknownOverride(key.to_string())),
        }
        if self.clock_m < 4 {
            return Err(ConfigError::BadOverrideValue(
                "clock-m".into(),
                "modulus must be at least 4".into(),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_exponent_floors_at_one() {
        let p = Profile::desk();
        assert_eq!(p.exponent(0), 1);
        assert_eq!(p.exponent(3), 8);
    }

    #[test]
    fn paper_exponent_collapses_below_offset() {
        let p = Profile::paper();
        assert_eq!(p.exponent(3), 1);
        assert_eq!(p.exponent(9), 2);
    }

    #[test]
    fn unknown_override_is_rejected() {
        let mut p = Profile::desk();
        assert!(p.apply_override("no-such-key", "1").is_err());
        assert!(p.apply_override("clock-m", "not-a-number").is_err());
        p.apply_override("outer-modulus", "24").unwrap();
        assert_eq!(p.outer_modulus, 24);
    }
}
