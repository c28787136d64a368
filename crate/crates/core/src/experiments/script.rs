// SPDX-License-Identifier: Apache-2.0

//! Scripted scenarios: a topology, a timeline of visits and host events,
//! and a ground-truth segment label on every visit.
//!
//! Labels never reach the world or the trackers. They are joined back onto
//! tracker nodes afterwards through the simulator's connection ids.

use std::collections::{BTreeMap, HashMap};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::adversary::{
    link_by_address, link_host, link_passive, observe, ConnObservation, HostObservation,
    LinkageGraph,
};
use crate::capture::Capture;
use crate::names::{ContextId, HostName};
use crate::sim::{ConnId, SimTime};
use crate::transport::TcpVariant;
use crate::world::{
    ClientId, Completion, ConnectRequest, NatId, PoolSpec, World, WorldConfig, WorldError,
    WAN_TAP,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NatDef {
    pub name: String,
    pub public_ip: IpAddr,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientDef {
    pub name: String,
    pub ip: IpAddr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nat: Option<String>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolDef {
    pub name: String,
    pub hostnames: Vec<HostName>,
    pub ips: Vec<IpAddr>,
    #[serde(default = "yes")]
    pub fast_open: bool,
    #[serde(default = "yes")]
    pub fop: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    /// One fetch. `server_ip` defaults to the first address of the pool
    /// serving `hostname`.
    Visit {
        at_ms: u64,
        client: String,
        hostname: HostName,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        server_ip: Option<IpAddr>,
        /// Application context label; only the privacy variant uses it.
        #[serde(default)]
        context: String,
        /// Ground truth: visits in different segments must not be linkable.
        #[serde(default)]
        segment: String,
    },
    RotateNat {
        at_ms: u64,
        nat: String,
        public_ip: IpAddr,
    },
    ChangeIp {
        at_ms: u64,
        client: String,
        ip: IpAddr,
    },
    /// Host restart: the kernel's TCP cache is lost.
    Reboot { at_ms: u64, client: String },
    /// Every application on the host drops its ticket caches.
    ClearTls { at_ms: u64, client: String },
}

impl Step {
    pub fn at_ms(&self) -> u64 {
        match self {
            Step::Visit { at_ms, .. }
            | Step::RotateNat { at_ms, .. }
            | Step::ChangeIp { at_ms, .. }
            | Step::Reboot { at_ms, .. }
            | Step::ClearTls { at_ms, .. } => *at_ms,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub nats: Vec<NatDef>,
    pub clients: Vec<ClientDef>,
    pub pools: Vec<PoolDef>,
    pub steps: Vec<Step>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("{kind} {name:?} is not defined")]
    Undefined { kind: &'static str, name: String },
    #[error("{kind} {name:?} is defined twice")]
    Duplicate { kind: &'static str, name: String },
    #[error("step {index} at {at_ms} ms comes before the previous step")]
    OutOfOrder { index: usize, at_ms: u64 },
    #[error("no pool serves {0}")]
    NoPoolFor(HostName),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Everything a scripted run produced, with ground truth kept beside the
/// tracker views rather than inside them.
#[derive(Debug)]
pub struct ScriptRun {
    pub variant: TcpVariant,
    pub completions: Vec<Completion>,
    pub capture: Capture,
    pub passive: Vec<ConnObservation>,
    pub host: Vec<HostObservation>,
    pub passive_graph: LinkageGraph,
    pub host_graph: LinkageGraph,
    pub address_graph: LinkageGraph,
    /// Segment of each passive node.
    pub passive_segments: Vec<String>,
    /// Segment of each host node.
    pub host_segments: Vec<String>,
    /// Client of each host node.
    pub host_clients: Vec<String>,
    pub unfinished: usize,
}

fn index_names<'a, I>(kind: &'static str, names: I) -> Result<HashMap<&'a str, u32>, ScriptError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = HashMap::new();
    for (i, n) in names.into_iter().enumerate() {
        if out.insert(n, i as u32).is_some() {
            return Err(ScriptError::Duplicate {
                kind,
                name: n.to_string(),
            });
        }
    }
    Ok(out)
}

fn lookup(map: &HashMap<&str, u32>, kind: &'static str, name: &str) -> Result<u32, ScriptError> {
    map.get(name).copied().ok_or_else(|| ScriptError::Undefined {
        kind,
        name: name.to_string(),
    })
}

impl Script {
    /// Checks names and step order without running anything.
    pub fn validate(&self) -> Result<(), ScriptError> {
        let nats = index_names("nat", self.nats.iter().map(|n| n.name.as_str()))?;
        let clients = index_names("client", self.clients.iter().map(|c| c.name.as_str()))?;
        index_names("pool", self.pools.iter().map(|p| p.name.as_str()))?;
        for c in &self.clients {
            if let Some(n) = &c.nat {
                lookup(&nats, "nat", n)?;
            }
        }
        let mut last = 0;
        for (index, step) in self.steps.iter().enumerate() {
            if step.at_ms() < last {
                return Err(ScriptError::OutOfOrder {
                    index,
                    at_ms: step.at_ms(),
                });
            }
            last = step.at_ms();
            match step {
                Step::Visit {
                    client, hostname, ..
                } => {
                    lookup(&clients, "client", client)?;
                    self.pool_serving(hostname)?;
                }
                Step::RotateNat { nat, .. } => {
                    lookup(&nats, "nat", nat)?;
                }
                Step::ChangeIp { client, .. }
                | Step::Reboot { client, .. }
                | Step::ClearTls { client, .. } => {
                    lookup(&clients, "client", client)?;
                }
            }
        }
        Ok(())
    }

    fn pool_serving(&self, hostname: &HostName) -> Result<&PoolDef, ScriptError> {
        self.pools
            .iter()
            .find(|p| p.hostnames.contains(hostname))
            .ok_or_else(|| ScriptError::NoPoolFor(hostname.clone()))
    }

    /// Runs the script with every visit using `variant`.
    pub fn run(&self, variant: TcpVariant, cfg: WorldConfig, seed: u64) -> Result<ScriptRun, ScriptError> {
        self.validate()?;
        let mut world = World::new(cfg, seed);
        let mut nat_ids: HashMap<&str, NatId> = HashMap::new();
        for n in &self.nats {
            nat_ids.insert(&n.name, world.add_nat(n.public_ip)?);
        }
        let mut client_ids: HashMap<&str, ClientId> = HashMap::new();
        for c in &self.clients {
            let nat = c.nat.as_deref().map(|n| nat_ids[n]);
            client_ids.insert(&c.name, world.add_client(c.ip, nat)?);
        }
        for p in &self.pools {
            let mut spec = PoolSpec::new(p.hostnames.clone(), p.ips.clone());
            spec.fast_open = p.fast_open;
            spec.fop_support = p.fop;
            world.add_pool(spec)?;
        }

        let mut segment_of: BTreeMap<ConnId, (&str, &str)> = BTreeMap::new();
        for step in &self.steps {
            let at = SimTime::from_ms(step.at_ms());
            world.run_until(at)?;
            match step {
                Step::Visit {
                    client,
                    hostname,
                    server_ip,
                    context,
                    segment,
                    ..
                } => {
                    let pool = self.pool_serving(hostname)?;
                    let req = ConnectRequest {
                        client: client_ids[client.as_str()],
                        hostname: hostname.clone(),
                        server_ip: server_ip.unwrap_or(pool.ips[0]),
                        variant,
                        context: ContextId::from_label(context),
                        tag: 0,
                    };
                    let conn = world.connect_at(at, req)?;
                    segment_of.insert(conn, (segment, client));
                }
                Step::RotateNat { nat, public_ip, .. } => {
                    world.rotate_nat(nat_ids[nat.as_str()], *public_ip)?
                }
                Step::ChangeIp { client, ip, .. } => {
                    world.change_client_ip(client_ids[client.as_str()], *ip)?
                }
                Step::Reboot { client, .. } => world.clear_tcp_cache(client_ids[client.as_str()])?,
                Step::ClearTls { client, .. } => {
                    world.clear_tls_caches(client_ids[client.as_str()])?
                }
            }
        }
        world.run()?;

        let capture = world.capture().clone();
        let passive = observe(capture.tap(WAN_TAP));
        let conns = world.capture_conns();
        let label = |conn: &ConnId| segment_of.get(conn).copied().unwrap_or(("", ""));
        let passive_segments = passive
            .iter()
            .map(|o| label(&conns[o.record]).0.to_string())
            .collect();
        let host = world.host_observations();
        let host_conns = world.host_observation_conns();
        let host_segments = host_conns.iter().map(|c| label(c).0.to_string()).collect();
        let host_clients = host_conns.iter().map(|c| label(c).1.to_string()).collect();
        Ok(ScriptRun {
            variant,
            completions: world.take_completions(),
            passive_graph: link_passive(&passive),
            host_graph: link_host(&host),
            address_graph: link_by_address(&host),
            unfinished: world.open_connections(),
            capture,
            passive,
            host,
            passive_segments,
            host_segments,
            host_clients,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
        [[clients]]
        name = "laptop"
        ip = "10.0.0.2"

        [[pools]]
        name = "shop"
        hostnames = ["shop.example"]
        ips = ["192.0.2.10"]

        [[steps]]
        action = "visit"
        at_ms = 0
        client = "laptop"
        hostname = "shop.example"
        segment = "one"

        [[steps]]
        action = "visit"
        at_ms = 1000
        client = "laptop"
        hostname = "shop.example"
        segment = "two"
    "#;

    #[test]
    fn parses_and_runs() {
        let script: Script = toml::from_str(SAMPLE).unwrap();
        let run = script.run(TcpVariant::Tfo, WorldConfig::default(), 1).unwrap();
        assert_eq!(run.completions.len(), 2);
        assert_eq!(run.unfinished, 0);
        assert_eq!(run.host_segments, vec!["one", "two"]);
        assert_eq!(run.passive_segments, vec!["one", "two"]);
        assert_eq!(run.host_graph.largest_component(), 2);
    }

    #[test]
    fn unknown_step_field_is_rejected() {
        let bad = SAMPLE.replace("segment = \"two\"", "segmnet = \"two\"");
        let err = toml::from_str::<Script>(&bad).unwrap_err().to_string();
        assert!(err.contains("segmnet"), "{err}");
    }

    #[test]
    fn undefined_names_are_reported() {
        let mut script: Script = toml::from_str(SAMPLE).unwrap();
        script.steps.push(Step::Reboot {
            at_ms: 2000,
            client: "phone".into(),
        });
        assert!(matches!(
            script.validate(),
            Err(ScriptError::Undefined { kind: "client", .. })
        ));
    }

    #[test]
    fn steps_must_be_ordered() {
        let mut script: Script = toml::from_str(SAMPLE).unwrap();
        script.steps.swap(0, 1);
        assert!(matches!(
            script.validate(),
            Err(ScriptError::OutOfOrder { index: 1, at_ms: 0 })
        ));
    }

    #[test]
    fn round_trips_through_toml() {
        let script: Script = toml::from_str(SAMPLE).unwrap();
        let text = toml::to_string(&script).unwrap();
        assert_eq!(toml::from_str::<Script>(&text).unwrap(), script);
    }
}
