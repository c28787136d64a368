// SPDX-License-Identifier: Apache-2.0

//! The privacy matrix: eight scripted tracking scenarios, each run under
//! one variant and judged by whether cookies link visits that the ground
//! truth puts in different segments.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::script::{ClientDef, NatDef, PoolDef, Script, ScriptError, ScriptRun, Step};
use crate::adversary::{
    cross_context_links, link_by_address, link_host, link_passive, tracking_period,
    ConnObservation, Edge, EdgeKind, HostObservation,
};
use crate::names::HostName;
use crate::transport::TcpVariant;
use crate::world::WorldConfig;

const MINUTE: u64 = 60_000;
const DAY: u64 = 24 * 60 * MINUTE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// A tracker embedded on two unrelated first-party sites.
    ThirdParty,
    /// Two hostnames behind one address.
    VirtualHosts,
    /// The client moves to a new address between visits.
    IpChange,
    /// One visit in normal browsing, one in a private window.
    PrivateMode,
    /// The application restarts between visits.
    Restart,
    /// Two applications on one host contact the same server.
    CrossApplication,
    /// The NAT's public address changes during a series of visits.
    NatRotation,
    /// Two visits far longer apart than the cookie lifetime.
    LifetimeExpiry,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::ThirdParty,
        Scenario::VirtualHosts,
        Scenario::IpChange,
        Scenario::PrivateMode,
        Scenario::Restart,
        Scenario::CrossApplication,
        Scenario::NatRotation,
        Scenario::LifetimeExpiry,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::ThirdParty => "third_party",
            Scenario::VirtualHosts => "virtual_hosts",
            Scenario::IpChange => "ip_change",
            Scenario::PrivateMode => "private_mode",
            Scenario::Restart => "restart",
            Scenario::CrossApplication => "cross_application",
            Scenario::NatRotation => "nat_rotation",
            Scenario::LifetimeExpiry => "lifetime_expiry",
        }
    }

    /// The scripted timeline. Context labels follow `contexts`; under
    /// [`ContextPolicy::Shared`] every visit uses the same label.
    pub fn script(self, contexts: ContextPolicy) -> Script {
        let mut b = Builder::new(contexts);
        match self {
            Scenario::ThirdParty => {
                b.pool("a", &["a.example"], [192, 0, 2, 10]);
                b.pool("b", &["b.example"], [192, 0, 2, 20]);
                b.pool("tracker", &["tracker.example"], [192, 0, 2, 30]);
                b.client("laptop", [10, 0, 0, 2], None);
                for (at, site) in [(0, "a"), (MINUTE, "b")] {
                    let first = format!("{site}.example");
                    b.visit(at, "laptop", &first, &first, site);
                    b.visit(at + 100, "laptop", "tracker.example", &first, site);
                }
            }
            Scenario::VirtualHosts => {
                b.pool("shared", &["one.example", "two.example"], [192, 0, 2, 40]);
                b.client("laptop", [10, 0, 0, 2], None);
                b.visit(0, "laptop", "one.example", "one.example", "one");
                b.visit(MINUTE, "laptop", "two.example", "two.example", "two");
            }
            Scenario::IpChange => {
                b.pool("shop", &["shop.example"], [192, 0, 2, 50]);
                b.client("phone", [198, 51, 100, 7], None);
                b.visit(0, "phone", "shop.example", "addr-198.51.100.7", "before");
                b.script.steps.push(Step::ChangeIp {
                    at_ms: 10 * MINUTE,
                    client: "phone".into(),
                    ip: v4([198, 51, 100, 8]),
                });
                b.visit(20 * MINUTE, "phone", "shop.example", "addr-198.51.100.8", "after");
            }
            Scenario::PrivateMode => {
                b.pool("shop", &["shop.example"], [192, 0, 2, 60]);
                b.client("laptop", [10, 0, 0, 2], None);
                b.visit(0, "laptop", "shop.example", "normal", "normal");
                b.visit(MINUTE, "laptop", "shop.example", "private", "private");
            }
            Scenario::Restart => {
                b.pool("shop", &["shop.example"], [192, 0, 2, 70]);
                b.client("laptop", [10, 0, 0, 2], None);
                b.visit(0, "laptop", "shop.example", "session-1", "first");
                b.script.steps.push(Step::ClearTls {
                    at_ms: 10 * MINUTE,
                    client: "laptop".into(),
                });
                b.visit(20 * MINUTE, "laptop", "shop.example", "session-2", "second");
            }
            Scenario::CrossApplication => {
                b.pool("mail", &["mail.example"], [192, 0, 2, 80]);
                b.client("laptop", [10, 0, 0, 2], None);
                b.visit(0, "laptop", "mail.example", "browser", "browser");
                b.visit(MINUTE, "laptop", "mail.example", "mail-client", "mail-client");
            }
            Scenario::NatRotation => {
                b.pool("shop", &["shop.example"], [192, 0, 2, 90]);
                b.nat("home", [203, 0, 113, 1]);
                b.client("laptop", [10, 0, 0, 2], Some("home"));
                for at in [0, 30, 60] {
                    b.visit(at * MINUTE, "laptop", "shop.example", "home", "before");
                }
                b.script.steps.push(Step::RotateNat {
                    at_ms: 90 * MINUTE,
                    nat: "home".into(),
                    public_ip: v4([203, 0, 113, 2]),
                });
                for at in [120, 150] {
                    b.visit(at * MINUTE, "laptop", "shop.example", "home", "after");
                }
            }
            Scenario::LifetimeExpiry => {
                b.pool("shop", &["shop.example"], [192, 0, 2, 100]);
                b.client("laptop", [10, 0, 0, 2], None);
                b.visit(0, "laptop", "shop.example", "browser", "day-0");
                b.visit(10 * DAY, "laptop", "shop.example", "browser", "day-10");
            }
        }
        b.script
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown scenario {0:?}")]
pub struct UnknownScenario(pub String);

impl FromStr for Scenario {
    type Err = UnknownScenario;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| UnknownScenario(s.to_string()))
    }
}

fn v4(o: [u8; 4]) -> IpAddr {
    IpAddr::V4(Ipv4Addr::from(o))
}

struct Builder {
    contexts: ContextPolicy,
    script: Script,
}

impl Builder {
    fn new(contexts: ContextPolicy) -> Self {
        Builder {
            contexts,
            script: Script::default(),
        }
    }

    fn pool(&mut self, name: &str, hosts: &[&str], ip: [u8; 4]) {
        self.script.pools.push(PoolDef {
            name: name.into(),
            hostnames: hosts.iter().map(|h| HostName::new(h).unwrap()).collect(),
            ips: vec![v4(ip)],
            fast_open: true,
            fop: true,
        });
    }

    fn nat(&mut self, name: &str, ip: [u8; 4]) {
        self.script.nats.push(NatDef {
            name: name.into(),
            public_ip: v4(ip),
        });
    }

    fn client(&mut self, name: &str, ip: [u8; 4], nat: Option<&str>) {
        self.script.clients.push(ClientDef {
            name: name.into(),
            ip: v4(ip),
            nat: nat.map(Into::into),
        });
    }

    fn visit(&mut self, at_ms: u64, client: &str, host: &str, context: &str, segment: &str) {
        let context = match self.contexts {
            ContextPolicy::PerScenario => context.to_string(),
            ContextPolicy::Shared => String::new(),
        };
        self.script.steps.push(Step::Visit {
            at_ms,
            client: client.into(),
            hostname: HostName::new(host).unwrap(),
            server_ip: None,
            context,
            segment: segment.into(),
        });
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPolicy {
    /// Each scenario separates contexts along its own boundary: first
    /// party, hostname, client address, browsing mode, session or
    /// application.
    #[default]
    PerScenario,
    /// One context for everything; isolates the effect of the lifetime.
    Shared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub contexts: ContextPolicy,
    pub lifetime_ms: u64,
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            contexts: ContextPolicy::PerScenario,
            lifetime_ms: WorldConfig::default().lifetime_ms,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Viable,
    Blocked,
}

/// What the trackers achieved in one cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub connections: usize,
    pub passive_cross_links: usize,
    pub host_cross_links: usize,
    pub passive_largest_component: usize,
    pub host_largest_component: usize,
    pub host_tracking_period_ms: u64,
    pub address_tracking_period_ms: u64,
    pub issuance_chain: bool,
    /// Host-tracker edges joining different segments.
    pub cross_edges: Vec<Edge>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacyCell {
    pub variant: TcpVariant,
    pub scenario: Scenario,
    pub policy: Policy,
    pub verdict: Verdict,
    pub evidence: Evidence,
}

impl Evidence {
    /// Recomputes the evidence from a finished run.
    pub fn from_run(run: &ScriptRun) -> Self {
        Self::derive(&run.passive, &run.passive_segments, &run.host, &run.host_segments)
    }

    /// Evidence from the two trackers' inputs plus ground-truth segment
    /// labels, indexed like the observations.
    pub fn derive<S: PartialEq>(
        passive: &[ConnObservation],
        passive_segments: &[S],
        host: &[HostObservation],
        host_segments: &[S],
    ) -> Self {
        let passive_graph = link_passive(passive);
        let host_graph = link_host(host);
        let cross_edges: Vec<Edge> = host_graph
            .edges
            .iter()
            .filter(|e| host_segments[e.from] != host_segments[e.to])
            .cloned()
            .collect();
        Evidence {
            connections: host.len(),
            passive_cross_links: cross_context_links(&passive_graph, passive_segments),
            host_cross_links: cross_edges.len(),
            passive_largest_component: passive_graph.largest_component(),
            host_largest_component: host_graph.largest_component(),
            host_tracking_period_ms: tracking_period(&host_graph),
            address_tracking_period_ms: tracking_period(&link_by_address(host)),
            issuance_chain: host_graph.has_edge(EdgeKind::IssuanceChain),
            cross_edges,
        }
    }

    pub fn verdict(&self) -> Verdict {
        if self.passive_cross_links > 0 || self.host_cross_links > 0 {
            Verdict::Viable
        } else {
            Verdict::Blocked
        }
    }
}

/// Runs one cell of the matrix. The run is returned beside the cell so
/// callers can write out the capture the evidence came from.
pub fn run_privacy_matrix(
    variant: TcpVariant,
    scenario: Scenario,
    policy: Policy,
    seed: u64,
) -> Result<(PrivacyCell, ScriptRun), ScriptError> {
    let script = scenario.script(policy.contexts);
    let cfg = WorldConfig {
        lifetime_ms: policy.lifetime_ms,
        ..WorldConfig::default()
    };
    let run = script.run(variant, cfg, seed)?;
    let evidence = Evidence::from_run(&run);
    let cell = PrivacyCell {
        variant,
        scenario,
        policy,
        verdict: evidence.verdict(),
        evidence,
    };
    Ok((cell, run))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(variant: TcpVariant, scenario: Scenario, policy: Policy) -> PrivacyCell {
        let (cell, run) = run_privacy_matrix(variant, scenario, policy, 7).unwrap();
        assert_eq!(run.unfinished, 0, "{scenario}");
        cell
    }

    #[test]
    fn tfo_row() {
        for sc in Scenario::ALL {
            let c = cell(TcpVariant::Tfo, sc, Policy::default());
            let want = if sc == Scenario::IpChange {
                Verdict::Blocked
            } else {
                Verdict::Viable
            };
            assert_eq!(c.verdict, want, "{sc}: {:?}", c.evidence);
        }
    }

    #[test]
    fn fop_column() {
        for sc in Scenario::ALL {
            let c = cell(TcpVariant::Fop, sc, Policy::default());
            assert_eq!(c.verdict, Verdict::Blocked, "{sc}: {:?}", c.evidence);
            assert_eq!(c.evidence.passive_largest_component, 1, "{sc}");
        }
    }

    #[test]
    fn shared_context_reopens_third_party_tracking() {
        let policy = Policy {
            contexts: ContextPolicy::Shared,
            ..Policy::default()
        };
        let c = cell(TcpVariant::Fop, Scenario::ThirdParty, policy);
        assert_eq!(c.verdict, Verdict::Viable);
        assert_eq!(c.evidence.passive_cross_links, 0);
    }

    #[test]
    fn nat_rotation_outlives_address_tracking() {
        let tfo = cell(TcpVariant::Tfo, Scenario::NatRotation, Policy::default());
        assert!(tfo.evidence.issuance_chain);
        assert!(tfo.evidence.host_tracking_period_ms > tfo.evidence.address_tracking_period_ms);
        let fop = cell(TcpVariant::Fop, Scenario::NatRotation, Policy::default());
        assert!(fop.evidence.host_tracking_period_ms <= Policy::default().lifetime_ms);
    }

    #[test]
    fn long_lifetime_lets_fop_link_across_days() {
        let policy = Policy {
            lifetime_ms: 11 * DAY,
            ..Policy::default()
        };
        let c = cell(TcpVariant::Fop, Scenario::LifetimeExpiry, policy);
        assert_eq!(c.verdict, Verdict::Viable);
    }

    #[test]
    fn verdicts_are_deterministic() {
        for sc in Scenario::ALL {
            let a = run_privacy_matrix(TcpVariant::Tfo, sc, Policy::default(), 3).unwrap();
            let b = run_privacy_matrix(TcpVariant::Tfo, sc, Policy::default(), 3).unwrap();
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.capture.to_bytes(), b.1.capture.to_bytes());
        }
    }

    #[test]
    fn names_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.name().parse::<Scenario>().unwrap(), sc);
        }
        assert_eq!(
            "third-party".parse::<Scenario>(),
            Err(UnknownScenario("third-party".into()))
        );
    }
}
