// SPDX-License-Identifier: Apache-2.0

//! Randomized revisit schedules for the passive-unlinkability property.

use std::collections::HashSet;
use std::net::{IpAddr, Ipv4Addr};

use rand::Rng;
use serde::Serialize;

use super::script::{ClientDef, NatDef, PoolDef, Script, ScriptError, ScriptRun, Step};
use crate::names::HostName;
use crate::rng::{SeedTree, SimRng};
use crate::transport::TcpVariant;
use crate::world::WorldConfig;

const CONTEXTS: [&str; 3] = ["ctx-a", "ctx-b", "ctx-c"];

/// A schedule of 2 to 5 clients visiting 1 to 3 servers. With `nat` every
/// client sits behind one shared NAT. Visits are at least a second apart
/// and each one is its own segment.
pub fn random_script(rng: &mut SimRng, nat: bool) -> Script {
    let mut script = Script::default();
    if nat {
        script.nats.push(NatDef {
            name: "nat".into(),
            public_ip: IpAddr::V4(Ipv4Addr::new(203, 0, 113, 1)),
        });
    }
    let clients = rng.random_range(2..=5u8);
    for i in 0..clients {
        script.clients.push(ClientDef {
            name: format!("client-{i}"),
            ip: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2 + i)),
            nat: nat.then(|| "nat".into()),
        });
    }
    let servers = rng.random_range(1..=3u8);
    for i in 0..servers {
        script.pools.push(PoolDef {
            name: format!("server-{i}"),
            hostnames: vec![HostName::new(&format!("s{i}.example")).unwrap()],
            ips: vec![IpAddr::V4(Ipv4Addr::new(192, 0, 2, 10 + i))],
            fast_open: true,
            fop: true,
        });
    }
    let visits = rng.random_range(2..=12usize);
    let mut at_ms = 0;
    for i in 0..visits {
        let client = rng.random_range(0..clients);
        let server = rng.random_range(0..servers);
        script.steps.push(Step::Visit {
            at_ms,
            client: format!("client-{client}"),
            hostname: HostName::new(&format!("s{server}.example")).unwrap(),
            server_ip: None,
            context: CONTEXTS[rng.random_range(0..CONTEXTS.len())].into(),
            segment: format!("visit-{i}"),
        });
        at_ms += rng.random_range(1_000..=600_000);
    }
    script
}

/// True when some client visits the same server address twice.
pub fn has_revisit(script: &Script) -> bool {
    let mut seen = HashSet::new();
    script.steps.iter().any(|s| match s {
        Step::Visit {
            client, hostname, server_ip, ..
        } => {
            let ip = server_ip.or_else(|| {
                script
                    .pools
                    .iter()
                    .find(|p| p.hostnames.contains(hostname))
                    .map(|p| p.ips[0])
            });
            !seen.insert((client.clone(), ip))
        }
        _ => false,
    })
}

/// Highest number of times any cookie the servers handled appears in the
/// raw capture bytes.
pub fn max_cleartext_repeats(run: &ScriptRun) -> usize {
    let cookies: HashSet<[u8; 16]> = run
        .host
        .iter()
        .flat_map(|h| h.presented_cookie.iter().chain(&h.issued_cookies))
        .map(|c| *c.as_bytes())
        .collect();
    cookies
        .iter()
        .map(|c| {
            run.capture
                .records
                .iter()
                .map(|r| r.bytes.windows(c.len()).filter(|w| w == c).count())
                .sum::<usize>()
        })
        .max()
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UnlinkabilityTrial {
    pub seed: u64,
    pub nat: bool,
    pub revisit: bool,
    pub fop_largest_passive_component: usize,
    pub fop_max_cleartext_repeats: usize,
    pub tfo_largest_passive_component: usize,
}

impl UnlinkabilityTrial {
    pub fn holds(&self) -> bool {
        self.fop_largest_passive_component <= 1
            && self.fop_max_cleartext_repeats <= 1
            && (!self.revisit || self.tfo_largest_passive_component >= 2)
    }
}

/// Runs one random schedule under both FOP and TFO.
pub fn unlinkability_trial(seed: u64) -> Result<UnlinkabilityTrial, ScriptError> {
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream("schedule");
    let nat = rng.random_bool(0.5);
    let script = random_script(&mut rng, nat);
    let world_seed: u64 = tree.stream("world").random();
    let fop = script.run(TcpVariant::Fop, WorldConfig::default(), world_seed)?;
    let tfo = script.run(TcpVariant::Tfo, WorldConfig::default(), world_seed)?;
    Ok(UnlinkabilityTrial {
        seed,
        nat,
        revisit: has_revisit(&script),
        fop_largest_passive_component: fop.passive_graph.largest_component(),
        fop_max_cleartext_repeats: max_cleartext_repeats(&fop),
        tfo_largest_passive_component: tfo.passive_graph.largest_component(),
    })
}
