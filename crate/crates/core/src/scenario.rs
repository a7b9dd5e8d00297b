//! Scenario files: JSON describing the fleet, the network, consensus and
//! ledger parameters, intersections and scheduled messages.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbitration::{RewardDirection, DEFAULT_REWARD_MILLITRUST};
use crate::consensus::{DEFAULT_BEACON_PERIOD_MS, DEFAULT_BEACON_WINDOW_MS, DEFAULT_NETWORK_ID, DEFAULT_PENDING_TTL_MS};
use crate::ledger::DEFAULT_ENDOWMENT;

pub const DEFAULT_COLLECTION_WINDOW_MS: u64 = 200;
pub const DEFAULT_T_END_MS: u64 = 5000;
pub const DEFAULT_DEALER: &str = "dealer";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {cause}")]
    Io { path: String, cause: String },
    #[error("parse error at line {line}: {cause}")]
    Parse { line: usize, cause: String },
    #[error("invalid {field}: {cause}")]
    Validation { field: String, cause: String },
}

fn invalid(field: impl Into<String>, cause: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        cause: cause.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub latency_ms: u64,
    pub jitter_ms: u64,
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            latency_ms: 0,
            jitter_ms: 0,
            drop_probability: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub beacon_period_ms: u64,
    pub beacon_window_ms: u64,
    pub pending_ttl_ms: u64,
    pub network_id: String,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            beacon_period_ms: DEFAULT_BEACON_PERIOD_MS,
            beacon_window_ms: DEFAULT_BEACON_WINDOW_MS,
            pending_ttl_ms: DEFAULT_PENDING_TTL_MS,
            network_id: DEFAULT_NETWORK_ID.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerConfig {
    pub endowment_millitrust: u64,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self {
            endowment_millitrust: DEFAULT_ENDOWMENT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArbitrationConfig {
    pub reward_millitrust: u64,
    pub reward_direction: RewardDirection,
}

impl Default for ArbitrationConfig {
    fn default() -> Self {
        Self {
            reward_millitrust: DEFAULT_REWARD_MILLITRUST,
            reward_direction: RewardDirection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub alias: String,
    /// Key seed label; the signing key is derived from its SHA-256.
    /// Defaults to the alias.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<String>,
}

impl VehicleConfig {
    pub fn seed_label(&self) -> &str {
        self.seed.as_deref().unwrap_or(&self.alias)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionConfig {
    pub id: String,
    pub participants: Vec<String>,
    pub arrival_ms: BTreeMap<String, u64>,
    /// Missing entries mean zero.
    #[serde(default)]
    pub compute_delay_ms: BTreeMap<String, u64>,
    #[serde(default = "default_window")]
    pub collection_window_ms: u64,
}

fn default_window() -> u64 {
    DEFAULT_COLLECTION_WINDOW_MS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageConfig {
    pub from: String,
    pub at_ms: u64,
    pub payload: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub t_end_ms: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_end_ms: DEFAULT_T_END_MS,
        }
    }
}

fn default_dealer() -> String {
    DEFAULT_DEALER.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub consensus: ConsensusConfig,
    #[serde(default)]
    pub ledger: LedgerConfig,
    #[serde(default)]
    pub arbitration: ArbitrationConfig,
    #[serde(default = "default_dealer")]
    pub dealer: String,
    pub vehicles: Vec<VehicleConfig>,
    #[serde(default)]
    pub intersections: Vec<IntersectionConfig>,
    #[serde(default)]
    pub messages: Vec<MessageConfig>,
    #[serde(default)]
    pub run: RunConfig,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            cause: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            cause: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vehicle_index(&self, alias: &str) -> Option<usize> {
        self.vehicles.iter().position(|v| v.alias == alias)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = &self.network;
        if !(0.0..=1.0).contains(&n.drop_probability) {
            return Err(invalid("network.drop_probability", "must lie in [0, 1]"));
        }
        let c = &self.consensus;
        if c.beacon_period_ms == 0 {
            return Err(invalid("consensus.beacon_period_ms", "must be positive"));
        }
        if c.beacon_window_ms == 0 {
            return Err(invalid("consensus.beacon_window_ms", "must be positive"));
        }
        if self.arbitration.reward_millitrust == 0 {
            return Err(invalid("arbitration.reward_millitrust", "must be positive"));
        }
        if self.vehicles.is_empty() {
            return Err(invalid("vehicles", "at least one vehicle is required"));
        }

        let mut aliases = BTreeSet::new();
        let mut seeds = BTreeSet::new();
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.alias.is_empty() {
                return Err(invalid(format!("vehicles[{i}].alias"), "must not be empty"));
            }
            if !aliases.insert(v.alias.as_str()) {
                return Err(invalid(format!("vehicles[{i}].alias"), format!("duplicate alias {}", v.alias)));
            }
            if !seeds.insert(v.seed_label()) {
                return Err(invalid(format!("vehicles[{i}].seed"), "two vehicles would share a key"));
            }
        }

        let mut ids = BTreeSet::new();
        for (i, x) in self.intersections.iter().enumerate() {
            let at = |f: &str| format!("intersections[{i}].{f}");
            if !ids.insert(x.id.as_str()) {
                return Err(invalid(at("id"), format!("duplicate intersection {}", x.id)));
            }
            if x.participants.is_empty() {
                return Err(invalid(at("participants"), "must not be empty"));
            }
            let mut seen = BTreeSet::new();
            for (j, p) in x.participants.iter().enumerate() {
                if !aliases.contains(p.as_str()) {
                    return Err(invalid(format!("intersections[{i}].participants[{j}]"), format!("unknown vehicle {p}")));
                }
                if !seen.insert(p.as_str()) {
                    return Err(invalid(format!("intersections[{i}].participants[{j}]"), format!("{p} listed twice")));
                }
                if !x.arrival_ms.contains_key(p) {
                    return Err(invalid(at("arrival_ms"), format!("missing arrival for {p}")));
                }
            }
            for (field, map) in [("arrival_ms", &x.arrival_ms), ("compute_delay_ms", &x.compute_delay_ms)] {
                if let Some(extra) = map.keys().find(|k| !seen.contains(k.as_str())) {
                    return Err(invalid(at(field), format!("{extra} is not a participant")));
                }
            }
            if x.collection_window_ms == 0 {
                return Err(invalid(at("collection_window_ms"), "must be positive"));
            }
            if let Some((p, t)) = x.arrival_ms.iter().find(|(_, t)| **t > self.run.t_end_ms) {
                return Err(invalid(at("arrival_ms"), format!("{p} arrives at {t} after run.t_end_ms")));
            }
        }

        for (i, m) in self.messages.iter().enumerate() {
            if !aliases.contains(m.from.as_str()) {
                return Err(invalid(format!("messages[{i}].from"), format!("unknown vehicle {}", m.from)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"vehicles": [{"alias": "A"}, {"alias": "B"}]}"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = ScenarioConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.network, NetworkConfig::default());
        assert_eq!(cfg.network.seed, 0);
        assert_eq!(cfg.consensus.beacon_period_ms, 500);
        assert_eq!(cfg.consensus.beacon_window_ms, 1000);
        assert_eq!(cfg.consensus.pending_ttl_ms, 2000);
        assert_eq!(cfg.ledger.endowment_millitrust, 100_000);
        assert_eq!(cfg.arbitration.reward_millitrust, 500);
        assert_eq!(cfg.arbitration.reward_direction, RewardDirection::FirstToScheduler);
        assert_eq!(cfg.run.t_end_ms, 5000);
        assert_eq!(cfg.dealer, "dealer");
        assert_eq!(cfg.vehicles[0].seed_label(), "A");
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let err = ScenarioConfig::parse("{\n  \"vehicles\": [\n    {\"alias\": 3}\n  ]\n}").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 3, .. }), "{err:?}");
        let err = ScenarioConfig::parse("{\"vehicles\": [], \"bogus\": 1}").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 1, .. }));
    }

    fn with_intersection(body: &str) -> Result<ScenarioConfig, ScenarioError> {
        ScenarioConfig::parse(&format!(
            r#"{{"vehicles": [{{"alias": "A"}}, {{"alias": "B"}}], "intersections": [{body}]}}"#
        ))
    }

    fn field(r: Result<ScenarioConfig, ScenarioError>) -> String {
        match r.unwrap_err() {
            ScenarioError::Validation { field, .. } => field,
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        assert_eq!(
            field(with_intersection(r#"{"id": "X", "participants": ["A", "Z"], "arrival_ms": {"A": 1}}"#)),
            "intersections[0].participants[1]"
        );
        assert_eq!(
            field(with_intersection(r#"{"id": "X", "participants": ["A", "B"], "arrival_ms": {"A": 1}}"#)),
            "intersections[0].arrival_ms"
        );
        assert_eq!(
            field(with_intersection(r#"{"id": "X", "participants": ["A"], "arrival_ms": {"A": 1}, "compute_delay_ms": {"B": 3}}"#)),
            "intersections[0].compute_delay_ms"
        );
        assert_eq!(
            field(with_intersection(r#"{"id": "X", "participants": ["A"], "arrival_ms": {"A": 9000}}"#)),
            "intersections[0].arrival_ms"
        );
        assert_eq!(
            field(ScenarioConfig::parse(r#"{"vehicles": [{"alias": "A"}, {"alias": "A"}]}"#)),
            "vehicles[1].alias"
        );
        assert_eq!(
            field(ScenarioConfig::parse(r#"{"vehicles": [{"alias": "A"}, {"alias": "B", "seed": "A"}]}"#)),
            "vehicles[1].seed"
        );
        assert_eq!(
            field(ScenarioConfig::parse(r#"{"network": {"drop_probability": 1.5}, "vehicles": [{"alias": "A"}]}"#)),
            "network.drop_probability"
        );
        assert_eq!(
            field(ScenarioConfig::parse(r#"{"vehicles": [{"alias": "A"}], "messages": [{"from": "Q", "at_ms": 1, "payload": ""}]}"#)),
            "messages[0].from"
        );
    }

    #[test]
    fn bundled_intersection_scenario_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/intersection_table2.json");
        let cfg = ScenarioConfig::load(&path).unwrap();
        assert_eq!(cfg.vehicles.len(), 4);
        assert_eq!(cfg.intersections.len(), 1);
        let arrivals: Vec<u64> = cfg.intersections[0]
            .participants
            .iter()
            .map(|p| cfg.intersections[0].arrival_ms[p])
            .collect();
        assert_eq!(arrivals, vec![1000, 1010, 1030, 1070]);
    }
}
