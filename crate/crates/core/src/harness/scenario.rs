//! Scenario files.
//!
//! ```toml
//! views = 20
//! seed = 7
//!
//! [protocol]
//! f = 1
//! rho = 6
//! variant = "carry"
//!
//! [network]
//! gst = 0
//! delta = 5
//!
//! [pacemaker]
//! mode = "oracle"
//!
//! [rotation]
//! kind = "round-robin"
//!
//! [adversary]
//! byzantine = [3]
//! default = "tail-fork"
//!
//! [adversary.view.7]
//! behavior = "silent"
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AdversaryScript, Behavior, DeliveryRule, ScriptError};
use crate::pacemaker::{Backoff, PacemakerMode, Tick};
use crate::simnet::{DelayModel, NetError, NetworkConfig, PreGstPolicy};
use crate::types::{
    ConfigError, LeaderSchedule, ProtocolConfig, ProtocolVariant, ReplicaId, Rotation, View,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacemakerConfig {
    pub mode: PacemakerMode,
    /// Defaults to `4 * delta`.
    pub base_timeout: Option<Tick>,
    pub backoff: Backoff,
}

impl Default for PacemakerConfig {
    fn default() -> Self {
        Self {
            mode: PacemakerMode::Oracle,
            base_timeout: None,
            backoff: Backoff::DOUBLE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub protocol: ProtocolConfig,
    pub network: NetworkConfig,
    pub pacemaker: PacemakerConfig,
    pub views: u64,
    pub rotation: Rotation,
    pub adversary: AdversaryScript,
    pub seed: u64,
    /// Bytes of generated payload per proposal.
    pub payload_bytes: usize,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error(transparent)]
    Protocol(#[from] ConfigError),
    #[error(transparent)]
    Network(#[from] NetError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("views must be at least 3, got {0}")]
    TooFewViews(u64),
    #[error("view key {0:?} is not a number")]
    BadViewKey(String),
}

impl ScenarioConfig {
    /// A fault-free Oracle-paced run with `gst = 0`.
    pub fn honest(f: usize, rho: u64, variant: ProtocolVariant, views: u64) -> Self {
        Self {
            protocol: ProtocolConfig::new(f, rho, variant),
            network: NetworkConfig::default(),
            pacemaker: PacemakerConfig::default(),
            views,
            rotation: Rotation::RoundRobin,
            adversary: AdversaryScript::honest(),
            seed: 0,
            payload_bytes: 64,
        }
    }

    pub fn with_adversary(mut self, script: AdversaryScript) -> Self {
        self.adversary = script;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn schedule(&self) -> LeaderSchedule {
        LeaderSchedule::new(self.protocol.n, self.rotation)
    }

    pub fn base_timeout(&self) -> Tick {
        self.pacemaker
            .base_timeout
            .unwrap_or(4 * self.network.delta)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.protocol.validate()?;
        self.network.validate()?;
        if self.views < 3 {
            return Err(ScenarioError::TooFewViews(self.views));
        }
        self.adversary.validate(&self.protocol, &self.schedule())?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let cfg = file.into_config()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&ScenarioFile::from_config(self)).expect("scenario serializes")
    }
}

// On-disk layout. View-keyed tables use string keys, as TOML requires.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(default = "default_views")]
    views: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_payload")]
    payload_bytes: usize,
    protocol: ProtocolSection,
    #[serde(default)]
    network: NetworkSection,
    #[serde(default)]
    pacemaker: PacemakerSection,
    #[serde(default)]
    rotation: Rotation,
    #[serde(default)]
    adversary: AdversarySection,
}

fn default_views() -> u64 {
    20
}

fn default_payload() -> usize {
    64
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProtocolSection {
    f: usize,
    #[serde(default)]
    n: Option<usize>,
    #[serde(default = "default_rho")]
    rho: u64,
    #[serde(default = "default_variant")]
    variant: ProtocolVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quorum_override: Option<usize>,
}

fn default_rho() -> u64 {
    6
}

fn default_variant() -> ProtocolVariant {
    ProtocolVariant::CarryTheTail
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    #[serde(default)]
    gst: Tick,
    #[serde(default = "default_delta")]
    delta: Tick,
    #[serde(default)]
    pre_gst_policy: PreGstPolicy,
    #[serde(default)]
    delay: DelayModel,
}

fn default_delta() -> Tick {
    5
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = NetworkConfig::default();
        Self {
            gst: n.gst,
            delta: n.delta,
            pre_gst_policy: n.pre_gst_policy,
            delay: n.delay,
        }
    }
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PacemakerSection {
    #[serde(default)]
    mode: PacemakerMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_timeout: Option<Tick>,
    /// `[numerator, denominator]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    backoff: Option<[u64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdversarySection {
    #[serde(default)]
    byzantine: BTreeSet<ReplicaId>,
    #[serde(default = "default_behavior_spec")]
    default: BehaviorSpec,
    #[serde(default)]
    view: BTreeMap<String, Behavior>,
    #[serde(default)]
    delivery: BTreeMap<String, DeliveryRule>,
}

/// A behavior written either as its bare name or as a full table.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BehaviorSpec {
    Name(String),
    Full(Behavior),
}

fn default_behavior_spec() -> BehaviorSpec {
    BehaviorSpec::Name("silent".into())
}

impl BehaviorSpec {
    fn resolve(self) -> Result<Behavior, ScenarioError> {
        match self {
            BehaviorSpec::Name(name) => parse_behavior(&name),
            BehaviorSpec::Full(b) => Ok(b),
        }
    }

    fn of(b: Behavior) -> Self {
        match parse_behavior(b.name()) {
            Ok(plain) if plain == b => BehaviorSpec::Name(b.name().to_string()),
            _ => BehaviorSpec::Full(b),
        }
    }
}

impl AdversarySection {
    fn into_script(self) -> Result<AdversaryScript, ScenarioError> {
        let views = self
            .view
            .into_iter()
            .map(|(k, b)| Ok((parse_view(&k)?, b)))
            .collect::<Result<_, ScenarioError>>()?;
        let delivery = self
            .delivery
            .into_iter()
            .map(|(k, r)| Ok((parse_view(&k)?, r)))
            .collect::<Result<_, ScenarioError>>()?;
        Ok(AdversaryScript {
            byzantine: self.byzantine,
            default: self.default.resolve()?,
            views,
            delivery,
        })
    }
}

/// Parses a standalone adversary file: the keys of a scenario's
/// `[adversary]` section at top level.
pub fn parse_adversary(text: &str) -> Result<AdversaryScript, ScenarioError> {
    let section: AdversarySection =
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    section.into_script()
}

impl Default for AdversarySection {
    fn default() -> Self {
        Self {
            byzantine: BTreeSet::new(),
            default: default_behavior_spec(),
            view: BTreeMap::new(),
            delivery: BTreeMap::new(),
        }
    }
}

fn parse_view(key: &str) -> Result<View, ScenarioError> {
    key.trim()
        .parse::<u64>()
        .map(View)
        .map_err(|_| ScenarioError::BadViewKey(key.to_string()))
}

fn parse_behavior(name: &str) -> Result<Behavior, ScenarioError> {
    let wrapped = format!("behavior = {name:?}");
    toml::from_str::<Behavior>(&wrapped).map_err(|e| ScenarioError::Parse(e.to_string()))
}

impl ScenarioFile {
    fn into_config(self) -> Result<ScenarioConfig, ScenarioError> {
        let p = self.protocol;
        let protocol = ProtocolConfig {
            n: p.n.unwrap_or(3 * p.f + 1),
            f: p.f,
            rho: p.rho,
            variant: p.variant,
            quorum_override: p.quorum_override,
        };
        let network = NetworkConfig {
            gst: self.network.gst,
            delta: self.network.delta,
            pre_gst_policy: self.network.pre_gst_policy,
            delay: self.network.delay,
        };
        let pacemaker = PacemakerConfig {
            mode: self.pacemaker.mode,
            base_timeout: self.pacemaker.base_timeout,
            backoff: self
                .pacemaker
                .backoff
                .map_or(Backoff::DOUBLE, |[num, den]| Backoff { num, den }),
        };
        let adversary = self.adversary.into_script()?;
        Ok(ScenarioConfig {
            protocol,
            network,
            pacemaker,
            views: self.views,
            rotation: self.rotation,
            adversary,
            seed: self.seed,
            payload_bytes: self.payload_bytes,
        })
    }

    fn from_config(c: &ScenarioConfig) -> Self {
        let pm = c.pacemaker;
        ScenarioFile {
            views: c.views,
            seed: c.seed,
            payload_bytes: c.payload_bytes,
            protocol: ProtocolSection {
                f: c.protocol.f,
                n: Some(c.protocol.n),
                rho: c.protocol.rho,
                variant: c.protocol.variant,
                quorum_override: c.protocol.quorum_override,
            },
            network: NetworkSection {
                gst: c.network.gst,
                delta: c.network.delta,
                pre_gst_policy: c.network.pre_gst_policy,
                delay: c.network.delay,
            },
            pacemaker: PacemakerSection {
                mode: pm.mode,
                base_timeout: pm.base_timeout,
                backoff: Some([pm.backoff.num, pm.backoff.den]),
            },
            rotation: c.rotation,
            adversary: AdversarySection {
                byzantine: c.adversary.byzantine.clone(),
                default: BehaviorSpec::of(c.adversary.default),
                view: c
                    .adversary
                    .views
                    .iter()
                    .map(|(v, b)| (v.0.to_string(), *b))
                    .collect(),
                delivery: c
                    .adversary
                    .delivery
                    .iter()
                    .map(|(v, r)| (v.0.to_string(), r.clone()))
                    .collect(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
views = 12
seed = 7

[protocol]
f = 1
rho = 6
variant = "carry"

[network]
gst = 0
delta = 5
delay = "max"

[pacemaker]
mode = "oracle"

[rotation]
kind = "round-robin"

[adversary]
byzantine = [3]
default = "tail-fork"

[adversary.view.7]
behavior = "silent"

[adversary.view.9]
behavior = "straggle"
extra = 6
"#;

    #[test]
    fn parses_sections() {
        let c = ScenarioConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.protocol.n, 4);
        assert_eq!(c.views, 12);
        assert_eq!(c.network.delay, DelayModel::Max);
        assert_eq!(c.adversary.default, Behavior::TailFork);
        assert_eq!(c.adversary.views[&View(7)], Behavior::Silent);
        assert_eq!(c.adversary.views[&View(9)], Behavior::Straggle { extra: 6 });
        assert_eq!(c.base_timeout(), 20);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ScenarioConfig::from_toml(SAMPLE).unwrap();
        let again = ScenarioConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn standalone_adversary_file() {
        let script = parse_adversary(
            "byzantine = [2]\ndefault = \"equivocate\"\n[view.6]\nbehavior = \"silent\"\n",
        )
        .unwrap();
        assert_eq!(script.default, Behavior::Equivocate);
        assert_eq!(script.views[&View(6)], Behavior::Silent);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ScenarioConfig::from_toml("views = 2\n[protocol]\nf = 1\n").is_err());
        assert!(ScenarioConfig::from_toml("[protocol]\nf = 1\nn = 5\n").is_err());
        assert!(ScenarioConfig::from_toml("[protocol]\nf = 1\n[adversary]\nbyzantine = [1, 2]\n").is_err());
        assert!(ScenarioConfig::from_toml("[protocol]\nf = 1\n[adversary.view.x]\nbehavior = \"silent\"\n").is_err());
    }
}
