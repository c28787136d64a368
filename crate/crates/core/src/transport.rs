// SPDX-License-Identifier: Apache-2.0

//! Client and server handshake logic for plain TCP, TCP Fast Open and the
//! privacy variant, plus the cookie get/set/delete kernel calls.
//!
//! Sequence numbers are not modelled. A SYN-ACK's `ack` field carries the
//! acknowledged sequence space: 1 for the SYN alone, `1 + n` when `n` bytes
//! of SYN payload were accepted.

use std::collections::BTreeMap;
use std::fmt;
use std::net::IpAddr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cookie::{CookieVerdict, FastOpenCookie, ServerCookieKey};
use crate::sim::{ConnId, Endpoint, Flags, FoOption, Packet, Segment};

pub const DEFAULT_SYN_PAYLOAD_BUDGET: usize = 1400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TcpVariant {
    Standard,
    Tfo,
    Fop,
}

impl TcpVariant {
    pub const ALL: [TcpVariant; 3] = [TcpVariant::Standard, TcpVariant::Tfo, TcpVariant::Fop];

    pub fn label(self) -> &'static str {
        match self {
            TcpVariant::Standard => "standard",
            TcpVariant::Tfo => "tfo",
            TcpVariant::Fop => "fop",
        }
    }
}

impl fmt::Display for TcpVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for TcpVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "standard" | "tcp" => Ok(TcpVariant::Standard),
            "tfo" => Ok(TcpVariant::Tfo),
            "fop" => Ok(TcpVariant::Fop),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("SYN payload of {len} bytes exceeds the {budget}-byte budget")]
    PayloadTooLarge { len: usize, budget: usize },
    #[error("segment without SYN handed to accept")]
    NotSyn,
    #[error("expected a SYN-ACK")]
    NotSynAck,
    #[error("connection is not waiting for a SYN-ACK")]
    WrongPhase,
}

/// Cookies learned from TFO SYN-ACKs, keyed by the exact
/// (source address, destination address, destination port) triple.
#[derive(Clone, Debug, Default)]
pub struct TfoClientCache {
    entries: BTreeMap<(IpAddr, IpAddr, u16), FastOpenCookie>,
}

impl TfoClientCache {
    pub fn get(&self, src: IpAddr, dst: IpAddr, port: u16) -> Option<FastOpenCookie> {
        self.entries.get(&(src, dst, port)).copied()
    }

    pub fn insert(&mut self, src: IpAddr, dst: IpAddr, port: u16, cookie: FastOpenCookie) {
        self.entries.insert((src, dst, port), cookie);
    }

    pub fn remove_destination(&mut self, dst: IpAddr, port: u16) {
        self.entries.retain(|&(_, d, p), _| !(d == dst && p == port));
    }

    /// Destination addresses on `port` with a cookie usable from `src`.
    pub fn destinations(&self, src: IpAddr, port: u16) -> Vec<IpAddr> {
        self.entries
            .keys()
            .filter(|(s, _, p)| *s == src && *p == port)
            .map(|(_, d, _)| *d)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Per-host kernel TCP state. The TFO cache is shared by every
/// application on the host.
#[derive(Clone, Debug)]
pub struct TcpStack {
    tfo_cache: TfoClientCache,
    fop_slots: BTreeMap<(IpAddr, u16), FastOpenCookie>,
    syn_payload_budget: usize,
}

impl Default for TcpStack {
    fn default() -> Self {
        TcpStack::new(DEFAULT_SYN_PAYLOAD_BUDGET)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Idle,
    SynSent,
    Established,
    Closed,
}

/// Client side of one connection attempt.
#[derive(Clone, Debug)]
pub struct ClientConn {
    pub variant: TcpVariant,
    pub phase: Phase,
    pub conn: ConnId,
    pub local: Endpoint,
    pub remote: Endpoint,
    pub attempted_cookie: Option<FastOpenCookie>,
    pub zero_rtt_accepted: bool,
    syn_payload: Vec<u8>,
    deferred: Vec<u8>,
}

/// What the client does after a SYN-ACK.
#[derive(Clone, Debug)]
pub struct SynAckOutcome {
    /// Handshake-completing ACK, carrying any data that still has to go
    /// out (deferred data or the rejected SYN payload).
    pub reply: Packet,
    /// Data the server piggybacked on the SYN-ACK.
    pub delivered: Vec<u8>,
    pub rejected_zero_rtt: bool,
    pub stored_cookie: Option<FastOpenCookie>,
    pub discarded_cookie: Option<FastOpenCookie>,
}

impl TcpStack {
    pub fn new(syn_payload_budget: usize) -> Self {
        TcpStack {
            tfo_cache: TfoClientCache::default(),
            fop_slots: BTreeMap::new(),
            syn_payload_budget,
        }
    }

    pub fn tfo_cache(&self) -> &TfoClientCache {
        &self.tfo_cache
    }

    pub fn tfo_cache_mut(&mut self) -> &mut TfoClientCache {
        &mut self.tfo_cache
    }

    /// Places a cookie for the next privacy-variant connect to
    /// `(dst_ip, dst_port)`, replacing any earlier one.
    pub fn cookie_set(&mut self, dst_ip: IpAddr, dst_port: u16, cookie: FastOpenCookie) {
        self.fop_slots.insert((dst_ip, dst_port), cookie);
    }

    /// Forgets every cookie held for `(dst_ip, dst_port)`. Idempotent.
    pub fn cookie_delete(&mut self, dst_ip: IpAddr, dst_port: u16) {
        self.fop_slots.remove(&(dst_ip, dst_port));
        self.tfo_cache.remove_destination(dst_ip, dst_port);
    }

    pub fn placed_cookie(&self, dst_ip: IpAddr, dst_port: u16) -> Option<FastOpenCookie> {
        self.fop_slots.get(&(dst_ip, dst_port)).copied()
    }

    /// Opens a connection and returns the SYN. `first_flight` is the data
    /// the application wants out first: it rides in the SYN when the
    /// variant holds a usable cookie and otherwise waits for the handshake.
    /// Plain TCP never carries SYN data.
    pub fn connect(
        &mut self,
        variant: TcpVariant,
        conn: ConnId,
        local: Endpoint,
        remote: Endpoint,
        first_flight: Vec<u8>,
    ) -> Result<(ClientConn, Packet), TransportError> {
        if variant != TcpVariant::Standard && first_flight.len() > self.syn_payload_budget {
            return Err(TransportError::PayloadTooLarge {
                len: first_flight.len(),
                budget: self.syn_payload_budget,
            });
        }
        let (fo, cookie) = match variant {
            TcpVariant::Standard => (FoOption::Absent, None),
            TcpVariant::Tfo => match self.tfo_cache.get(local.ip, remote.ip, remote.port) {
                Some(c) => (FoOption::Cookie(c), Some(c)),
                None => (FoOption::CookieRequest, None),
            },
            // single use: the placed cookie leaves the cache as it is sent
            TcpVariant::Fop => match self.fop_slots.remove(&(remote.ip, remote.port)) {
                Some(c) => (FoOption::Cookie(c), Some(c)),
                None => (FoOption::Absent, None),
            },
        };
        let (syn_payload, deferred) = if cookie.is_some() {
            (first_flight, Vec::new())
        } else {
            (Vec::new(), first_flight)
        };
        let syn = Packet {
            seg: Segment {
                src: local,
                dst: remote,
                flags: Flags::SYN,
                ack: 0,
                fo,
                payload: syn_payload.clone(),
            },
            conn,
        };
        let state = ClientConn {
            variant,
            phase: Phase::SynSent,
            conn,
            local,
            remote,
            attempted_cookie: cookie,
            zero_rtt_accepted: false,
            syn_payload,
            deferred,
        };
        Ok((state, syn))
    }
}

impl ClientConn {
    pub fn on_synack(
        &mut self,
        stack: &mut TcpStack,
        synack: &Segment,
    ) -> Result<SynAckOutcome, TransportError> {
        if self.phase != Phase::SynSent {
            return Err(TransportError::WrongPhase);
        }
        if !synack.flags.is_syn_ack() {
            return Err(TransportError::NotSynAck);
        }
        let payload_acked =
            !self.syn_payload.is_empty() && synack.ack as usize == 1 + self.syn_payload.len();
        self.zero_rtt_accepted = payload_acked && self.attempted_cookie.is_some();
        let rejected_zero_rtt = !self.syn_payload.is_empty() && !payload_acked;

        let mut stored_cookie = None;
        let mut discarded_cookie = None;
        if let FoOption::Cookie(c) = synack.fo {
            match self.variant {
                TcpVariant::Tfo => {
                    stack
                        .tfo_cache
                        .insert(self.local.ip, self.remote.ip, self.remote.port, c);
                    stored_cookie = Some(c);
                }
                // cookies only arrive over the encrypted channel; a plaintext
                // replacement would be linkable
                TcpVariant::Fop | TcpVariant::Standard => discarded_cookie = Some(c),
            }
        }

        let mut out = std::mem::take(&mut self.deferred);
        if rejected_zero_rtt {
            let mut resend = std::mem::take(&mut self.syn_payload);
            resend.extend_from_slice(&out);
            out = resend;
        }
        self.phase = Phase::Established;
        Ok(SynAckOutcome {
            reply: self.data_packet(out),
            delivered: synack.payload.clone(),
            rejected_zero_rtt,
            stored_cookie,
            discarded_cookie,
        })
    }

    pub fn data_packet(&self, payload: Vec<u8>) -> Packet {
        Packet {
            seg: Segment {
                src: self.local,
                dst: self.remote,
                flags: Flags::ACK,
                ack: 0,
                fo: FoOption::Absent,
                payload,
            },
            conn: self.conn,
        }
    }
}

/// Server side of one connection.
#[derive(Clone, Debug)]
pub struct ServerConn {
    pub phase: Phase,
    pub conn: ConnId,
    pub local: Endpoint,
    pub remote: Endpoint,
    pub accepted_syn_payload: bool,
    pub issued_cookie: Option<FastOpenCookie>,
    pub presented_cookie: Option<FastOpenCookie>,
}

impl ServerConn {
    pub fn data_packet(&self, payload: Vec<u8>) -> Packet {
        Packet {
            seg: Segment {
                src: self.local,
                dst: self.remote,
                flags: Flags::ACK,
                ack: 0,
                fo: FoOption::Absent,
                payload,
            },
            conn: self.conn,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Accepted {
    pub state: ServerConn,
    /// SYN-ACK without application payload; the caller may append data.
    pub synack: Packet,
    /// SYN payload handed to the application (empty unless accepted).
    pub delivered: Vec<u8>,
}

/// Server-side cookie retrieval for a client address. Touches no
/// connection state.
pub fn cookie_gen<R: Rng + ?Sized>(
    key: &ServerCookieKey,
    client_ip: IpAddr,
    rng: &mut R,
) -> FastOpenCookie {
    key.mint(client_ip, rng)
}

/// Answers a SYN. A cookie request gets a fresh cookie; a valid cookie gets
/// its payload accepted; an invalid cookie gets the SYN acknowledged alone
/// and a replacement cookie attached.
pub fn server_accept<R: Rng + ?Sized>(
    syn: &Packet,
    key: &ServerCookieKey,
    fast_open: bool,
    rng: &mut R,
) -> Result<Accepted, TransportError> {
    let seg = &syn.seg;
    if !seg.flags.is_syn() {
        return Err(TransportError::NotSyn);
    }
    let client_ip = seg.src.ip;
    let mut accepted = false;
    let mut issued = None;
    let mut presented = None;
    if fast_open {
        match seg.fo {
            FoOption::Absent => {}
            FoOption::CookieRequest => issued = Some(cookie_gen(key, client_ip, rng)),
            FoOption::Cookie(c) => {
                presented = Some(c);
                if key.validate_cookie(&c, client_ip) == CookieVerdict::Accept {
                    accepted = !seg.payload.is_empty();
                } else {
                    issued = Some(cookie_gen(key, client_ip, rng));
                }
            }
        }
    }
    let delivered = if accepted { seg.payload.clone() } else { Vec::new() };
    let synack = Packet {
        seg: Segment {
            src: seg.dst,
            dst: seg.src,
            flags: Flags::SYN_ACK,
            ack: 1 + delivered.len() as u32,
            fo: issued.map(FoOption::Cookie).unwrap_or_default(),
            payload: Vec::new(),
        },
        conn: syn.conn,
    };
    let state = ServerConn {
        phase: Phase::Established,
        conn: syn.conn,
        local: seg.dst,
        remote: seg.src,
        accepted_syn_payload: accepted,
        issued_cookie: issued,
        presented_cookie: presented,
    };
    Ok(Accepted {
        state,
        synack,
        delivered,
    })
}
