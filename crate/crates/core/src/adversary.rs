// SPDX-License-Identifier: Apache-2.0

//! Trackers and linkage metrics.
//!
//! The passive observer works from capture records alone. The host-based
//! tracker works from what a server pool logs about its own connections.
//! Neither sees keys, connection ids or any ground truth; metrics that need
//! ground truth take it as a separate label slice.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};
use std::net::IpAddr;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::capture::CaptureRecord;
use crate::cookie::FastOpenCookie;
use crate::sim::{Endpoint, Segment, SimTime};
use crate::tls::{split_records, TAG_HANDSHAKE};

/// One connection attempt as seen on the wire.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnObservation {
    /// Position of the SYN in the tap stream.
    pub record: usize,
    pub time: SimTime,
    pub wire_src: Endpoint,
    pub wire_dst: Endpoint,
    pub cookie_in_syn: Option<FastOpenCookie>,
    pub cookie_in_synack: Option<FastOpenCookie>,
    /// The SYN carried sealed records.
    pub payload_opaque: bool,
}

/// What a server logs about one accepted connection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostObservation {
    pub time: SimTime,
    pub server_ip: IpAddr,
    pub client_wire_ip: IpAddr,
    pub presented_cookie: Option<FastOpenCookie>,
    /// Cookies handed out in this connection, in the SYN-ACK or inside
    /// tickets.
    pub issued_cookies: Vec<FastOpenCookie>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// The same cookie was presented twice.
    SameCookie,
    /// A cookie handed out in one connection was presented in another.
    IssuanceChain,
    /// Same client address; the baseline rule, never mixed with cookies.
    SameAddress,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cookie: Option<FastOpenCookie>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkageGraph {
    pub times: Vec<SimTime>,
    pub edges: Vec<Edge>,
}

impl LinkageGraph {
    pub fn node_count(&self) -> usize {
        self.times.len()
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.times.len();
        let mut uf = UnionFind::<usize>::new(n);
        for e in &self.edges {
            uf.union(e.from, e.to);
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            groups.entry(uf.find(i)).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort_by_key(|c| c[0]);
        out
    }

    pub fn largest_component(&self) -> usize {
        self.components().iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, kind: EdgeKind) -> bool {
        self.edges.iter().any(|e| e.kind == kind)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Occurrence {
    Presented,
    Issued,
}

/// Links every later occurrence of a cookie to its first occurrence.
struct CookieLinker {
    first: HashMap<FastOpenCookie, (usize, Occurrence)>,
    edges: Vec<Edge>,
}

impl CookieLinker {
    fn new() -> Self {
        CookieLinker {
            first: HashMap::new(),
            edges: Vec::new(),
        }
    }

    fn see(&mut self, node: usize, cookie: FastOpenCookie, how: Occurrence) {
        match self.first.entry(cookie) {
            Entry::Vacant(v) => {
                v.insert((node, how));
            }
            Entry::Occupied(o) => {
                let (first, first_how) = *o.get();
                if first != node {
                    let kind = match first_how {
                        Occurrence::Issued => EdgeKind::IssuanceChain,
                        Occurrence::Presented => EdgeKind::SameCookie,
                    };
                    self.edges.push(Edge {
                        from: first,
                        to: node,
                        kind,
                        cookie: Some(cookie),
                    });
                }
            }
        }
    }
}

/// Turns a tap stream into one observation per connection attempt. Records
/// that do not parse as segments are skipped.
pub fn observe<'a, I>(records: I) -> Vec<ConnObservation>
where
    I: IntoIterator<Item = &'a CaptureRecord>,
{
    let mut out: Vec<ConnObservation> = Vec::new();
    let mut open: HashMap<(Endpoint, Endpoint), usize> = HashMap::new();
    for (index, rec) in records.into_iter().enumerate() {
        let Ok(seg) = Segment::decode(&rec.bytes) else {
            continue;
        };
        if seg.flags.is_syn_ack() {
            if let Some(&i) = open.get(&(seg.dst, seg.src)) {
                out[i].cookie_in_synack = seg.fo.cookie().copied();
            }
        } else if seg.flags.is_syn() {
            open.insert((seg.src, seg.dst), out.len());
            out.push(ConnObservation {
                record: index,
                time: rec.time,
                wire_src: seg.src,
                wire_dst: seg.dst,
                cookie_in_syn: seg.fo.cookie().copied(),
                cookie_in_synack: None,
                payload_opaque: carries_sealed_records(&seg.payload),
            });
        }
    }
    out
}

fn carries_sealed_records(payload: &[u8]) -> bool {
    match split_records(payload) {
        Ok((frames, _)) => frames.iter().any(|f| f.tag != TAG_HANDSHAKE),
        Err(_) => !payload.is_empty(),
    }
}

/// Cookie linkage from cleartext bytes only.
pub fn link_passive(obs: &[ConnObservation]) -> LinkageGraph {
    let mut linker = CookieLinker::new();
    for (i, o) in obs.iter().enumerate() {
        if let Some(c) = o.cookie_in_syn {
            linker.see(i, c, Occurrence::Presented);
        }
        if let Some(c) = o.cookie_in_synack {
            linker.see(i, c, Occurrence::Issued);
        }
    }
    LinkageGraph {
        times: obs.iter().map(|o| o.time).collect(),
        edges: linker.edges,
    }
}

/// Cookie linkage for a server that also sees every cookie it hands out,
/// including those sealed inside tickets.
pub fn link_host(obs: &[HostObservation]) -> LinkageGraph {
    let mut linker = CookieLinker::new();
    for (i, o) in obs.iter().enumerate() {
        if let Some(c) = o.presented_cookie {
            linker.see(i, c, Occurrence::Presented);
        }
        for &c in &o.issued_cookies {
            linker.see(i, c, Occurrence::Issued);
        }
    }
    LinkageGraph {
        times: obs.iter().map(|o| o.time).collect(),
        edges: linker.edges,
    }
}

/// Baseline tracker that links connections from the same client address.
pub fn link_by_address(obs: &[HostObservation]) -> LinkageGraph {
    let mut first: HashMap<IpAddr, usize> = HashMap::new();
    let mut edges = Vec::new();
    for (i, o) in obs.iter().enumerate() {
        match first.entry(o.client_wire_ip) {
            Entry::Vacant(v) => {
                v.insert(i);
            }
            Entry::Occupied(f) => edges.push(Edge {
                from: *f.get(),
                to: i,
                kind: EdgeKind::SameAddress,
                cookie: None,
            }),
        }
    }
    LinkageGraph {
        times: obs.iter().map(|o| o.time).collect(),
        edges,
    }
}

/// Longest span covered by one component, in milliseconds.
pub fn tracking_period(graph: &LinkageGraph) -> u64 {
    graph
        .components()
        .iter()
        .map(|c| {
            let lo = c.iter().map(|&i| graph.times[i]).min().unwrap_or_default();
            let hi = c.iter().map(|&i| graph.times[i]).max().unwrap_or_default();
            hi.saturating_sub(lo)
        })
        .max()
        .unwrap_or(0)
}

/// Edges joining nodes whose ground-truth labels differ. `labels` is
/// indexed like the graph's nodes.
pub fn cross_context_links<L: PartialEq>(graph: &LinkageGraph, labels: &[L]) -> usize {
    graph
        .edges
        .iter()
        .filter(|e| labels[e.from] != labels[e.to])
        .count()
}

/// Writes one JSON object per line.
pub fn write_json_lines<T: Serialize, W: Write>(items: &[T], mut w: W) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
