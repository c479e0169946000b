//! Run configuration: a sectioned TOML file plus `section.key=value` overrides.
//!
//! Every section and key is optional; omitted values take the defaults below.
//! Unknown keys are rejected.
//!
//! ```toml
//! [run]
//! agent = "dnaf"          # dnaf | dqn | equal
//! episodes = 3000
//! seed = 1
//! output_dir = "runs"
//! runs = 1                # concurrent seeded runs: seed, seed+1, ...
//! eval_episodes = 200
//!
//! [grid]
//! total_mhz = 10.0
//! resolution_mhz = 0.2
//!
//! [scenario]
//! user_counts = [46, 46, 8]   # replaces per-slice user counts
//! # [[scenario.slices]] tables replace the built-in VoLTE/video/URLLC set
//!
//! [reward]
//! se_weight = 0.01
//! qoe_weight = 1.0
//!
//! [observation]
//! demand_unit = "packets"    # packets | bytes
//! # normalizers = [..]       # default: expected demand per interval
//!
//! [channel]
//! mean_snr_db = 20.0
//! fading = { kind = "rayleigh" }
//!
//! [slots]
//! slot_ms = 0.5
//! slots_per_interval = 2000
//!
//! [agent]                    # see AgentConfig for every key
//! discount = 0.9
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::action_space::AllocationGrid;
use crate::agents::{AgentConfig, AgentKind};
use crate::env::{DemandUnit, EnvConfig, RewardWeights};
use crate::error::{Error, Result};
use crate::link_sim::{ChannelModel, SlotConfig};
use crate::traffic::{default_scenario, SliceSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub agent: AgentKind,
    pub episodes: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub runs: usize,
    pub eval_episodes: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            agent: AgentKind::Dnaf,
            episodes: 3000,
            seed: 1,
            output_dir: PathBuf::from("runs"),
            runs: 1,
            eval_episodes: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub total_mhz: f64,
    pub resolution_mhz: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            total_mhz: 10.0,
            resolution_mhz: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_counts: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slices: Option<Vec<SliceSpec>>,
}

impl ScenarioSection {
    pub fn resolve(&self) -> Result<Vec<SliceSpec>> {
        let mut slices = self.slices.clone().unwrap_or_else(default_scenario);
        if let Some(counts) = &self.user_counts {
            if counts.len() != slices.len() {
                return Err(Error::config(format!(
                    "scenario.user_counts has {} entries for {} slices",
                    counts.len(),
                    slices.len()
                )));
            }
            for (s, &c) in slices.iter_mut().zip(counts) {
                s.user_count = c;
            }
        }
        Ok(slices)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSection {
    pub demand_unit: DemandUnit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalizers: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub grid: GridSection,
    pub scenario: ScenarioSection,
    pub reward: RewardWeights,
    pub observation: ObservationSection,
    pub channel: ChannelModel,
    pub slots: SlotConfig,
    pub agent: AgentConfig,
}

/// Applies `section.key=value` (or `section.key = value`) to a parsed table.
/// Values are read as TOML, falling back to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::config(format!(
            "override '{spec}' is not of the form section.key=value"
        ))
    })?;
    let path = path.trim();
    let raw = raw.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!(
            "override key '{path}' must name a section and a key"
        )));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = table;
    for key in &keys[..keys.len() - 1] {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override '{path}': '{key}' is not a section")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies overrides, and validates the result.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        // Deserialising the text directly keeps line numbers in error messages.
        toml::from_str::<RunConfig>(text).map_err(|e| Error::config(e.to_string()))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.runs == 0 {
            return Err(Error::config("run.runs must be positive"));
        }
        self.agent.validate()?;
        self.env_config()?.validate()
    }

    pub fn slices(&self) -> Result<Vec<SliceSpec>> {
        self.scenario.resolve()
    }

    pub fn allocation_grid(&self) -> Result<AllocationGrid> {
        AllocationGrid::new(
            self.grid.total_mhz,
            self.grid.resolution_mhz,
            self.slices()?.len(),
        )
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let mut env = EnvConfig::new(self.allocation_grid()?, self.slices()?);
        env.slots = self.slots;
        env.channel = self.channel.clone();
        env.weights = self.reward;
        env.demand_unit = self.observation.demand_unit;
        env.demand_normalizers = self.observation.normalizers.clone();
        Ok(env)
    }

    /// Fully resolved TOML, suitable for re-running.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = RunConfig::parse("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.allocation_grid().unwrap().action_count(), 1176);
        assert_eq!(c.slices().unwrap().len(), 3);
    }

    #[test]
    fn sections_and_overrides() {
        let text = "[grid]\nresolution_mhz = 1.0\n[scenario]\nuser_counts = [10, 10, 2]\n[agent]\nhidden = [32]\n";
        let c = RunConfig::parse(
            text,
            &[
                "run.agent=dqn".into(),
                "agent.learning_rate = 0.01".into(),
                "channel.fading={ kind = \"constant\", gain = 2.0 }".into(),
                "run.output_dir=out/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.run.agent, AgentKind::Dqn);
        assert_eq!(c.agent.learning_rate, 0.01);
        assert_eq!(c.agent.hidden, vec![32]);
        assert_eq!(c.run.output_dir, PathBuf::from("out/x"));
        assert_eq!(c.allocation_grid().unwrap().action_count(), 36);
        assert_eq!(
            c.slices()
                .unwrap()
                .iter()
                .map(|s| s.user_count)
                .collect::<Vec<_>>(),
            vec![10, 10, 2]
        );
        assert_eq!(
            c.channel.fading,
            crate::link_sim::Fading::Constant { gain: 2.0 }
        );
    }

    #[test]
    fn unknown_keys_are_errors_with_location() {
        let err = RunConfig::parse("[agent]\nlearning_rat = 0.1\n", &[]).unwrap_err();
        assert!(err.is_config());
        let msg = err.to_string();
        assert!(
            msg.contains("learning_rat") && msg.contains("line 2"),
            "{msg}"
        );
        assert!(RunConfig::parse("[agnt]\n", &[]).unwrap_err().is_config());
        assert!(RunConfig::parse("", &["agent.hiden=[3]".into()])
            .unwrap_err()
            .is_config());
        assert!(RunConfig::parse("", &["nokey".into()])
            .unwrap_err()
            .is_config());
        assert!(RunConfig::parse("", &["agent=3".into()])
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for o in [
            "agent.discount=1.0",
            "grid.resolution_mhz=0",
            "scenario.user_counts=[1,2]",
            "run.runs=0",
            "reward.se_weight=-1",
        ] {
            assert!(
                RunConfig::parse("", &[o.into()]).unwrap_err().is_config(),
                "{o}"
            );
        }
    }

    #[test]
    fn resolved_echo_reproduces_config() {
        let c = RunConfig::parse(
            "[scenario]\nuser_counts = [1, 2, 3]\n",
            &["agent.noise=uniform".into()],
        )
        .unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap(), &[]).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
    }
}
