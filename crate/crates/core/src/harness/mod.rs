//! Experiment harness: sweep specifications, execution, statistics, fault
//! injection, and result emission. This is the user-facing surface behind the
//! `popproto` CLI.

pub mod acceptance;
pub mod emit;
pub mod fault;
pub mod fit;
pub mod sweep;
pub mod trace;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Deserialize;

use crate::engine::RunLimits;
use crate::error::ConfigError;
use crate::profile::Profile;
use crate::suites::PROTOCOL_NAMES;

use fault::FaultSpec;

/// Output file formats the harness can emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutFormat {
    Csv,
    Json,
}

impl OutFormat {
    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(OutFormat::Csv),
            Some("json") => Ok(OutFormat::Json),
            _ => Err(ConfigError::BadSpec(format!(
                "cannot infer output format from `{}` (expected .csv or .json)",
                path.display()
            ))),
        }
    }
}

/// A fully validated experiment: one protocol, a list of population sizes, a
/// list of seeds, a resolved profile, limits, and output destinations.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub protocol: String,
    pub ns: Vec<usize>,
    pub seeds: Vec<u64>,
    pub profile: Profile,
    pub max_interactions: Option<u64>,
    pub probe_window: Option<u64>,
    pub fault: Option<FaultSpec>,
    pub outputs: Vec<(OutFormat, PathBuf)>,
}

impl ExperimentSpec {
    pub fn new(protocol: &str, ns: Vec<usize>, seeds: Vec<u64>, profile: Profile) -> Self {
        ExperimentSpec {
            protocol: protocol.to_string(),
            ns,
            seeds,
            profile,
            max_interactions: None,
            probe_window: None,
            fault: None,
            outputs: Vec::new(),
        }
    }

    /// Validate everything that can fail before any run starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !PROTOCOL_NAMES.contains(&self.protocol.as_str()) {
            return Err(ConfigError::UnknownProtocol(self.protocol.clone()));
        }
        if self.ns.is_empty() {
            return Err(ConfigError::BadSpec("at least one n is required".into()));
        }
        for &n in &self.ns {
            if n < 2 {
                return Err(ConfigError::PopulationTooSmall(n as u64));
            }
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::NoSeeds);
        }
        Ok(())
    }

    /// Limits for one cell, falling back to per-protocol defaults.
    pub fn limits_for(&self, n: usize) -> RunLimits {
        let max = self
            .max_interactions
            .unwrap_or_else(|| default_max_interactions(&self.protocol, n, &self.profile));
        let probe = self
            .probe_window
            .unwrap_or_else(|| RunLimits::default_probe(n));
        RunLimits::new(max, probe)
    }
}

/// Generous per-protocol interaction budgets. Phase lengths vary with the
/// junta the run happens to elect, so the per-phase allowance is four times
/// the calibrated multiplier; a failed cell still cannot stall a sweep for
/// long.
pub fn default_max_interactions(protocol: &str, n: usize, profile: &Profile) -> u64 {
    let nf = n as f64;
    let lg = nf.log2().max(1.0);
    let phase = 4.0 * profile.clock_c * nf * lg;
    let budget = match protocol {
        "approximate" => (profile.outer_modulus as f64 + 5.0 * (lg + 3.0) + 6.0) * phase,
        "approximate-stable" | "approximate-stable-relaxed" => {
            (profile.outer_modulus as f64 + 5.0 * (lg + 3.0) + 12.0) * phase
                + 10.0 * nf * nf * lg * lg
        }
        "count-exact" => (profile.terminal_phase as f64 + lg + 14.0) * phase,
        "count-exact-stable" => {
            (profile.terminal_phase as f64 + lg + 14.0) * phase + 14.0 * nf * nf * lg
        }
        "backup-approx" => 10.0 * nf * nf * lg * lg,
        "backup-exact" => 14.0 * nf * nf * lg,
        "broadcast" => 10.0 * nf * nf.ln() + 1000.0,
        "pow2-balance" => 16.0 * nf * lg + 1000.0,
        "classical-balance" => profile.clock_c * nf * lg + 1000.0,
        _ => 1000.0 * nf * lg,
    };
    budget.ceil() as u64
}

/// Seed list: either a count (seeds 0..count) or explicit values.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum SeedsSpec {
    Count(u32),
    List(Vec<u64>),
}

impl SeedsSpec {
    pub fn resolve(&self) -> Result<Vec<u64>, ConfigError> {
        let seeds = match self {
            SeedsSpec::Count(c) => (0..*c as u64).collect(),
            SeedsSpec::List(list) => list.clone(),
        };
        if seeds.is_empty() {
            return Err(ConfigError::NoSeeds);
        }
        Ok(seeds)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(u64),
    Many(Vec<u64>),
}

impl OneOrMany {
    fn to_vec(&self) -> Vec<u64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct OutputEntry {
    pub format: String,
    pub path: PathBuf,
}

/// On-disk experiment description (TOML, flat keys plus lists).
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SpecFile {
    pub protocol: String,
    pub n: OneOrMany,
    pub seeds: SeedsSpec,
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub max_interactions: Option<u64>,
    #[serde(default)]
    pub probe_window: Option<u64>,
    #[serde(default)]
    pub fault: Option<String>,
    #[serde(default)]
    pub overrides: Option<BTreeMap<String, toml::Value>>,
    #[serde(default)]
    pub outputs: Option<Vec<OutputEntry>>,
}

impl SpecFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::BadSpec(e.to_string()))
    }

    pub fn resolve(&self) -> Result<ExperimentSpec, ConfigError> {
        let mut profile = Profile::by_name(self.profile.as_deref().unwrap_or("desk"))?;
        if let Some(overrides) = &self.overrides {
            for (key, value) in overrides {
                let text = match value {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                profile.apply_override(key, &text)?;
            }
        }
        let ns: Vec<usize> = self.n.to_vec().iter().map(|&v| v as usize).collect();
        let mut spec = ExperimentSpec::new(&self.protocol, ns, self.seeds.resolve()?, profile);
        spec.max_interactions = self.max_interactions;
        spec.probe_window = self.probe_window;
        if let Some(fault) = &self.fault {
            spec.fault = Some(FaultSpec::parse(fault)?);
        }
        if let Some(outputs) = &self.outputs {
            for entry in outputs {
                let format = match entry.format.as_str() {
                    "csv" => OutFormat::Csv,
                    "json" => OutFormat::Json,
                    other => {
                        return Err(ConfigError::BadSpec(format!(
                            "unknown output format `{other}`"
                        )))
                    }
                };
                spec.outputs.push((format, entry.path.clone()));
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_file_round_trip() {
        let text = r#"
protocol = "count-exact"
n = [256, 1024]
seeds = 5
profile = "desk"

[overrides]
outer-modulus = 24

[[outputs]]
format = "csv"
path = "runs.csv"
"#;
        let spec = SpecFile::parse(text).unwrap().resolve().unwrap();
        assert_eq!(spec.protocol, "count-exact");
        assert_eq!(spec.ns, vec![256, 1024]);
        assert_eq!(spec.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(spec.profile.outer_modulus, 24);
        assert_eq!(spec.outputs.len(), 1);
    }

    #[test]
    fn unknown_protocol_and_override_fail_before_running() {
        let spec = ExperimentSpec::new("no-such", vec![16], vec![0], Profile::desk());
        assert!(matches!(
            spec.validate(),
            Err(ConfigError::UnknownProtocol(_))
        ));

        let text = r#"
protocol = "broadcast"
n = 16
seeds = 1

[overrides]
bogus-key = 3
"#;
        let err = SpecFile::parse(text).unwrap().resolve().unwrap_err();
        assert!(matches!(err, ConfigError::UnknownOverride(_)));
    }

    #[test]
    fn explicit_seed_lists_are_preserved() {
        let seeds = SeedsSpec::List(vec![3, 14, 15]).resolve().unwrap();
        assert_eq!(seeds, vec![3, 14, 15]);
    }
}
