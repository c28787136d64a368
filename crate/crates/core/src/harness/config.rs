// SPDX-License-Identifier: Apache-2.0

//! Scenario configuration files.
//!
//! TOML with a mandatory `version`. Every experiment section is optional;
//! a file runs whichever sections it contains. Errors carry the dotted path
//! of the offending key and, when it can be located, its line.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::experiments::{published_model, ContextPolicy, Script, ScriptError, Scenario, Verdict};
use crate::transport::TcpVariant;
use crate::world::WorldConfig;
use crate::sim::Link;

pub const CONFIG_VERSION: u32 = 1;

fn default_variants() -> Vec<TcpVariant> {
    vec![TcpVariant::Tfo, TcpVariant::Fop]
}

fn default_lifetime() -> u64 {
    WorldConfig::default().lifetime_ms
}

fn default_taps() -> Vec<Tap> {
    vec![Tap::Wan]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo trials; zero means analytic results only.
    #[serde(default)]
    pub trials: u64,
    #[serde(default = "default_variants")]
    pub variants: Vec<TcpVariant>,
    #[serde(default = "default_lifetime")]
    pub lifetime_ms: u64,
    #[serde(default)]
    pub context_policy: ContextPolicy,
    /// Where the passive adversary listens. Empty disables it.
    #[serde(default = "default_taps")]
    pub taps: Vec<Tap>,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub website: WebsiteConfig,
    #[serde(default)]
    pub failure: FailureConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table4: Option<Table4Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table5: Option<Table5Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Script>,
    /// Checks on the scripted run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect: Vec<Expectation>,
}

impl ScenarioConfig {
    pub fn new(seed: u64) -> Self {
        ScenarioConfig {
            version: CONFIG_VERSION,
            seed,
            trials: 0,
            variants: default_variants(),
            lifetime_ms: default_lifetime(),
            context_policy: ContextPolicy::default(),
            taps: default_taps(),
            topology: Topology::default(),
            website: WebsiteConfig::default(),
            failure: FailureConfig::default(),
            table4: None,
            table5: None,
            privacy: None,
            script: None,
            expect: Vec::new(),
        }
    }

    /// World settings for scripted and privacy runs.
    pub fn world_config(&self) -> WorldConfig {
        let ticks = |ms: f64| ms.round() as u64;
        WorldConfig {
            wan: Link {
                one_way_delay: ticks(self.topology.one_way_ms),
                reverse_delay: self.topology.reverse_ms.map(ticks),
                taps: Vec::new(),
            },
            lan_delay: ticks(self.topology.lan_ms),
            lifetime_ms: self.lifetime_ms,
            capture: !self.taps.is_empty(),
            ..WorldConfig::default()
        }
    }

    pub fn p_by_revisit(&self) -> Vec<f64> {
        self.failure
            .p_by_revisit
            .clone()
            .unwrap_or_else(|| published_model().p_by_revisit)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parses and validates. The source text is kept for locating keys.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            let line = inner.span().map(|s| line_at(text, s.start));
            ConfigError {
                key: if key == "." { String::new() } else { key },
                line,
                message: inner.message().to_string(),
            }
        })?;
        cfg.validate().map_err(|mut e| {
            e.line = locate(text, &e.key);
            e
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |key: &str, message: String| {
            Err(ConfigError {
                key: key.to_string(),
                line: None,
                message,
            })
        };
        if self.version != CONFIG_VERSION {
            return fail(
                "version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.version),
            );
        }
        if self.variants.is_empty() {
            return fail("variants", "at least one variant is required".into());
        }
        if self.lifetime_ms == 0 {
            return fail("lifetime_ms", "must be positive".into());
        }
        for (key, v) in [
            ("topology.one_way_ms", Some(self.topology.one_way_ms)),
            ("topology.reverse_ms", self.topology.reverse_ms),
            ("topology.lan_ms", Some(self.topology.lan_ms)),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return fail(key, format!("delay {v} must be a finite non-negative number"));
                }
            }
        }
        if let Some(ps) = &self.failure.p_by_revisit {
            if ps.is_empty() {
                return fail("failure.p_by_revisit", "needs at least one probability".into());
            }
            for (i, p) in ps.iter().enumerate() {
                if !(0.0..=1.0).contains(p) {
                    return fail(
                        &format!("failure.p_by_revisit[{i}]"),
                        format!("probability {p} is outside [0, 1]"),
                    );
                }
            }
        }
        if self.website.pool_size == 0 {
            return fail("website.pool_size", "must be positive".into());
        }
        if let Some(t4) = &self.table4 {
            if t4.latencies_ms.is_empty() {
                return fail("table4.latencies_ms", "needs at least one latency".into());
            }
            for (i, l) in t4.latencies_ms.iter().enumerate() {
                if !(l.is_finite() && *l >= 0.0) {
                    return fail(
                        &format!("table4.latencies_ms[{i}]"),
                        format!("latency {l} must be a finite non-negative number"),
                    );
                }
            }
        }
        if let Some(t5) = &self.table5 {
            if t5.rtt_ms == 0 {
                return fail("table5.rtt_ms", "must be positive".into());
            }
            if t5.revisits == 0 {
                return fail("table5.revisits", "must be positive".into());
            }
        }
        if let Some(p) = &self.privacy {
            for (i, c) in p.cells.iter().enumerate() {
                if let Err(e) = c.parse::<PrivacyCellName>() {
                    return fail(&format!("privacy.cells[{i}]"), e.to_string());
                }
            }
        }
        if let Some(script) = &self.script {
            if let Err(e) = script.validate() {
                let key = match &e {
                    ScriptError::OutOfOrder { index, .. } => format!("script.steps[{index}].at_ms"),
                    _ => "script".to_string(),
                };
                return fail(&key, e.to_string());
            }
        }
        if !self.expect.is_empty() && self.script.is_none() {
            return fail("expect", "checks need a [script] section".into());
        }
        for (i, e) in self.expect.iter().enumerate() {
            if !self.variants.contains(&e.variant()) {
                return fail(
                    &format!("expect[{i}].variant"),
                    format!("{} is not among the configured variants", e.variant()),
                );
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    /// The access link between the client network and the servers.
    Wan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    /// Client-to-server delay.
    pub one_way_ms: f64,
    /// Server-to-client delay; defaults to `one_way_ms`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_ms: Option<f64>,
    /// Delay between a client and its NAT.
    #[serde(default)]
    pub lan_ms: f64,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            one_way_ms: 30.0,
            reverse_ms: None,
            lan_ms: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WebsiteConfig {
    pub secondary_hosts: u32,
    /// Addresses behind each hostname's load balancer.
    pub pool_size: usize,
    pub visit_gap_ms: u64,
}

impl Default for WebsiteConfig {
    fn default() -> Self {
        use crate::experiments::website::*;
        WebsiteConfig {
            secondary_hosts: DEFAULT_SECONDARY_HOSTS,
            pool_size: DEFAULT_POOL_SIZE,
            visit_gap_ms: DEFAULT_VISIT_GAP_MS,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureConfig {
    /// Miss probability per revisit; the published model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_by_revisit: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table4Config {
    #[serde(default = "Table4Config::default_latencies")]
    pub latencies_ms: Vec<f64>,
    /// Put each latency on the client's egress only instead of on both
    /// directions.
    #[serde(default)]
    pub egress_only: bool,
}

impl Table4Config {
    pub const DEFAULT_LATENCIES_MS: [f64; 4] = [0.3, 50.0, 100.0, 150.0];

    fn default_latencies() -> Vec<f64> {
        Self::DEFAULT_LATENCIES_MS.to_vec()
    }
}

impl Default for Table4Config {
    fn default() -> Self {
        Table4Config {
            latencies_ms: Self::default_latencies(),
            egress_only: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table5Config {
    pub rtt_ms: u64,
    pub revisits: u32,
}

impl Default for Table5Config {
    fn default() -> Self {
        Table5Config {
            rtt_ms: 60,
            revisits: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    /// Cells as `variant:scenario`; empty runs every scenario for every
    /// configured variant.
    #[serde(default)]
    pub cells: Vec<String>,
}

/// A parsed `variant:scenario` cell name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrivacyCellName {
    pub variant: TcpVariant,
    pub scenario: Scenario,
}

impl std::str::FromStr for PrivacyCellName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (v, sc) = s
            .split_once(':')
            .ok_or_else(|| format!("cell {s:?} is not of the form variant:scenario"))?;
        Ok(PrivacyCellName {
            variant: v.parse()?,
            scenario: sc.parse().map_err(|e: crate::experiments::UnknownScenario| e.to_string())?,
        })
    }
}

impl fmt::Display for PrivacyCellName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.variant, self.scenario)
    }
}

fn yes() -> bool {
    true
}

/// A check on the scripted run under one variant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Expectation {
    /// Host-based cookie tracking lasts longer than address tracking.
    TrackingPeriodExceedsBaseline { variant: TcpVariant },
    /// Host-based cookie tracking lasts at most `ms`, by default the
    /// configured lifetime.
    TrackingPeriodAtMost {
        variant: TcpVariant,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ms: Option<u64>,
    },
    /// A cookie handed out in one connection is presented in another.
    IssuanceChain {
        variant: TcpVariant,
        #[serde(default = "yes")]
        present: bool,
    },
    /// Linkability across the script's segments.
    Verdict { variant: TcpVariant, verdict: Verdict },
    /// The passive adversary links nothing.
    PassiveSingletons { variant: TcpVariant },
    /// No cookie appears more than once in the capture.
    CookieCleartextOnce { variant: TcpVariant },
}

impl Expectation {
    pub fn variant(&self) -> TcpVariant {
        match self {
            Expectation::TrackingPeriodExceedsBaseline { variant }
            | Expectation::TrackingPeriodAtMost { variant, .. }
            | Expectation::IssuanceChain { variant, .. }
            | Expectation::Verdict { variant, .. }
            | Expectation::PassiveSingletons { variant }
            | Expectation::CookieCleartextOnce { variant } => *variant,
        }
    }

    pub fn name(&self) -> String {
        let kind = match self {
            Expectation::TrackingPeriodExceedsBaseline { .. } => "tracking_period_exceeds_baseline",
            Expectation::TrackingPeriodAtMost { .. } => "tracking_period_at_most",
            Expectation::IssuanceChain { .. } => "issuance_chain",
            Expectation::Verdict { .. } => "verdict",
            Expectation::PassiveSingletons { .. } => "passive_singletons",
            Expectation::CookieCleartextOnce { .. } => "cookie_cleartext_once",
        };
        format!("run.{}.{kind}", self.variant())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    /// Dotted path such as `table5.rtt_ms` or `script.steps[2].client`.
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.key.is_empty(), self.line) {
            (true, Some(l)) => write!(f, "line {l}: {}", self.message),
            (true, None) => f.write_str(&self.message),
            (false, Some(l)) => write!(f, "line {l}: key `{}`: {}", self.key, self.message),
            (false, None) => write!(f, "key `{}`: {}", self.key, self.message),
        }
    }
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of a dotted key path in `text`, falling back to the nearest
/// enclosing key that exists.
fn locate(text: &str, path: &str) -> Option<usize> {
    let doc = toml_edit::ImDocument::parse(text).ok()?;
    let mut item = doc.as_item();
    let mut span = None;
    for seg in path.split('.') {
        let (name, index) = match seg.split_once('[') {
            Some((n, rest)) => (n, rest.trim_end_matches(']').parse::<usize>().ok()),
            None => (seg, None),
        };
        let Some(next) = item.get(name) else { break };
        item = next;
        span = item.span().or(span);
        if let Some(i) = index {
            let Some(next) = item.get(i) else { break };
            item = next;
            span = item.span().or(span);
        }
    }
    // keys in a table header report the header; values report themselves
    span.map(|s| line_at(text, s.start))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let cfg = ScenarioConfig::parse("version = 1\n").unwrap();
        assert_eq!(cfg, ScenarioConfig::new(0));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ScenarioConfig::new(9);
        cfg.table4 = Some(Table4Config::default());
        cfg.table5 = Some(Table5Config::default());
        cfg.privacy = Some(PrivacyConfig {
            cells: vec!["fop:restart".into()],
        });
        cfg.failure.p_by_revisit = Some(vec![0.5, 0.25]);
        cfg.topology.reverse_ms = Some(10.0);
        cfg.script = Some(Scenario::NatRotation.script(ContextPolicy::PerScenario));
        cfg.expect = vec![Expectation::IssuanceChain {
            variant: TcpVariant::Tfo,
            present: true,
        }];
        let text = cfg.to_toml();
        assert_eq!(ScenarioConfig::parse(&text).unwrap(), cfg, "{text}");
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ScenarioConfig::parse("version = 1\n[table5]\nrtt = 60\n").unwrap_err();
        assert_eq!(e.key, "table5.rtt");
        assert!(e.message.contains("rtt"), "{e}");
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn type_error_names_the_key() {
        let e = ScenarioConfig::parse("version = 1\nseed = \"x\"\n").unwrap_err();
        assert_eq!(e.key, "seed");
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn validation_error_names_the_key_and_line() {
        let e = ScenarioConfig::parse("version = 1\n\n[table5]\nrtt_ms = 0\n").unwrap_err();
        assert_eq!(e.key, "table5.rtt_ms");
        assert_eq!(e.line, Some(4));
        let e = ScenarioConfig::parse("version = 1\n[failure]\np_by_revisit = [0.1, 1.5]\n")
            .unwrap_err();
        assert_eq!(e.key, "failure.p_by_revisit[1]");
        assert_eq!(e.line, Some(3));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let e = ScenarioConfig::parse("version = 2\n").unwrap_err();
        assert_eq!(e.key, "version");
        assert_eq!(e.line, Some(1));
        let e = ScenarioConfig::parse("seed = 1\n").unwrap_err();
        assert!(e.message.contains("version"), "{e}");
    }

    #[test]
    fn unknown_privacy_cell_is_rejected() {
        let e = ScenarioConfig::parse("version = 1\n[privacy]\ncells = [\"fop:reboot\"]\n")
            .unwrap_err();
        assert_eq!(e.key, "privacy.cells[0]");
        assert!(e.message.contains("reboot"));
    }

    #[test]
    fn cell_names_round_trip() {
        let c: PrivacyCellName = "fop:restart".parse().unwrap();
        assert_eq!(c.to_string(), "fop:restart");
        assert!("fop".parse::<PrivacyCellName>().is_err());
        assert!("udp:restart".parse::<PrivacyCellName>().is_err());
    }
}
