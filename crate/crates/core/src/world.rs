// SPDX-License-Identifier: Apache-2.0

//! A small internet: client hosts (optionally behind NAT gateways), server
//! pools sharing a cookie key and ticket store, one wide-area link with a
//! capture tap, and the event loop that moves packets between them.
//!
//! ```text
//! client --lan--> NAT --wan(tap)--> server
//! client ---------------wan(tap)--> server
//! ```

use std::collections::HashMap;
use std::net::IpAddr;

use rand::SeedableRng;

use crate::adversary::HostObservation;
use crate::capture::Capture;
use crate::cookie::ServerCookieKey;
use crate::names::{ContextId, HostName};
use crate::rng::SimRng;
use crate::sim::{
    ConnId, Direction, Endpoint, Link, NatGateway, Packet, Scheduler, SimError, SimTime, TapId,
};
use crate::tls::{
    KeyAgreement, ServerContext, TicketStore, TlsCache, TlsClient, TlsError, TlsServer,
};
use crate::transport::{
    server_accept, ClientConn, ServerConn, TcpStack, TcpVariant, TransportError,
    DEFAULT_SYN_PAYLOAD_BUDGET,
};

pub const HTTPS_PORT: u16 = 443;

/// Tap on the wide-area link.
pub const WAN_TAP: TapId = TapId(0);

const FIRST_CLIENT_PORT: u16 = 50000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorldConfig {
    pub wan: Link,
    pub lan_delay: u64,
    /// Maximum age of a cached privacy-variant ticket.
    pub lifetime_ms: u64,
    pub tickets_per_session: u32,
    pub syn_payload_budget: usize,
    pub capture: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            wan: Link::symmetric(30),
            lan_delay: 0,
            lifetime_ms: 3_600_000,
            tickets_per_session: 1,
            syn_payload_budget: DEFAULT_SYN_PAYLOAD_BUDGET,
            capture: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NatId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PoolId(pub u32);

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("address {0} is already in use")]
    AddressInUse(IpAddr),
    #[error("no server listens on {0}")]
    UnknownServer(IpAddr),
    #[error("unknown client {0}")]
    UnknownClient(u32),
    #[error("unknown NAT gateway {0}")]
    UnknownNat(u32),
    #[error("server pool needs at least one hostname and one address")]
    EmptyPool,
    #[error("clients behind a NAT change address through the gateway")]
    ClientBehindNat,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("server TLS failure: {0}")]
    ServerTls(TlsError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub hostnames: Vec<HostName>,
    pub ips: Vec<IpAddr>,
    /// Answers Fast Open options at the TCP layer.
    pub fast_open: bool,
    /// Embeds cookies in tickets for clients that ask.
    pub fop_support: bool,
}

impl PoolSpec {
    pub fn new(hostnames: Vec<HostName>, ips: Vec<IpAddr>) -> Self {
        PoolSpec {
            hostnames,
            ips,
            fast_open: true,
            fop_support: true,
        }
    }
}

/// One application-level fetch. The application has already resolved the
/// hostname to `server_ip`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectRequest {
    pub client: ClientId,
    pub hostname: HostName,
    pub server_ip: IpAddr,
    pub variant: TcpVariant,
    /// Only the privacy variant consults it.
    pub context: ContextId,
    /// Opaque label copied into the completion.
    pub tag: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Response(Vec<u8>),
    Aborted(TlsError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub conn: ConnId,
    pub client: ClientId,
    pub tag: u64,
    pub hostname: HostName,
    pub server_ip: IpAddr,
    pub variant: TcpVariant,
    pub start: SimTime,
    pub end: SimTime,
    /// The SYN carried data under a cookie.
    pub zero_rtt_attempted: bool,
    pub zero_rtt_accepted: bool,
    pub tls_resumed: bool,
    pub outcome: Outcome,
}

impl Completion {
    pub fn duration(&self) -> u64 {
        self.end.saturating_sub(self.start)
    }
}

struct ClientHost {
    local_ip: IpAddr,
    nat: Option<NatId>,
    tcp: TcpStack,
    fop_cache: TlsCache,
    plain_cache: TlsCache,
    next_port: u16,
}

impl ClientHost {
    fn alloc_port(&mut self) -> u16 {
        let p = self.next_port;
        self.next_port = if p == u16::MAX { FIRST_CLIENT_PORT } else { p + 1 };
        p
    }
}

struct ServerPool {
    names: Vec<HostName>,
    key: ServerCookieKey,
    tickets: TicketStore,
    fast_open: bool,
    fop_support: bool,
    log: Vec<HostObservation>,
    log_conns: Vec<ConnId>,
}

struct ClientSide {
    req: ConnectRequest,
    tcp: ClientConn,
    tls: TlsClient,
    start: SimTime,
    zero_rtt_attempted: bool,
    tls_resumed: bool,
}

struct ServerSide {
    pool: PoolId,
    tcp: ServerConn,
    tls: TlsServer,
    log_index: usize,
}

#[derive(Clone, Copy, Debug)]
enum Route {
    Client(ClientId),
    Nat(NatId),
}

#[derive(Debug)]
enum Hop {
    /// Client to its NAT gateway.
    NatOutbound(NatId),
    /// Across the WAN towards a server.
    Server,
    /// Across the WAN towards a client or gateway address.
    Public,
    /// Gateway to a client on its private side.
    Client(ClientId),
}

#[derive(Debug)]
enum Event {
    Start(ConnId),
    Deliver(Hop, Packet),
}

pub struct World {
    cfg: WorldConfig,
    sched: Scheduler<Event>,
    rng: SimRng,
    kex: KeyAgreement,
    clients: Vec<ClientHost>,
    nats: Vec<NatGateway>,
    pools: Vec<ServerPool>,
    server_ips: HashMap<IpAddr, PoolId>,
    routes: HashMap<IpAddr, Route>,
    nat_members: HashMap<(NatId, IpAddr), ClientId>,
    pending: HashMap<ConnId, ConnectRequest>,
    client_conns: HashMap<ConnId, ClientSide>,
    server_conns: HashMap<ConnId, ServerSide>,
    next_conn: u64,
    capture: Capture,
    capture_conns: Vec<ConnId>,
    completions: Vec<Completion>,
    dropped: u64,
}

fn request_for(hostname: &HostName) -> Vec<u8> {
    format!("GET / HTTP/1.1\r\nHost: {hostname}\r\n\r\n").into_bytes()
}

fn response_for(request: &[u8]) -> Vec<u8> {
    let mut r = b"HTTP/1.1 200 OK\r\nContent-Length: ".to_vec();
    r.extend_from_slice(format!("{}\r\n\r\n", request.len()).as_bytes());
    r.extend_from_slice(request);
    r
}

impl World {
    pub fn new(cfg: WorldConfig, seed: u64) -> Self {
        let mut rng = SimRng::seed_from_u64(seed);
        let kex = KeyAgreement::new(&mut rng);
        World {
            cfg,
            sched: Scheduler::new(),
            rng,
            kex,
            clients: Vec::new(),
            nats: Vec::new(),
            pools: Vec::new(),
            server_ips: HashMap::new(),
            routes: HashMap::new(),
            nat_members: HashMap::new(),
            pending: HashMap::new(),
            client_conns: HashMap::new(),
            server_conns: HashMap::new(),
            next_conn: 1,
            capture: Capture::default(),
            capture_conns: Vec::new(),
            completions: Vec::new(),
            dropped: 0,
        }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn claim_public(&self, ip: IpAddr) -> Result<(), WorldError> {
        if self.routes.contains_key(&ip) || self.server_ips.contains_key(&ip) {
            return Err(WorldError::AddressInUse(ip));
        }
        Ok(())
    }

    pub fn add_nat(&mut self, public_ip: IpAddr) -> Result<NatId, WorldError> {
        self.claim_public(public_ip)?;
        let id = NatId(self.nats.len() as u32);
        self.nats.push(NatGateway::new(public_ip));
        self.routes.insert(public_ip, Route::Nat(id));
        Ok(id)
    }

    /// Adds a client host. Behind a NAT, `ip` is its private address.
    pub fn add_client(&mut self, ip: IpAddr, nat: Option<NatId>) -> Result<ClientId, WorldError> {
        let id = ClientId(self.clients.len() as u32);
        match nat {
            Some(n) => {
                if n.0 as usize >= self.nats.len() {
                    return Err(WorldError::UnknownNat(n.0));
                }
                if self.nat_members.contains_key(&(n, ip)) {
                    return Err(WorldError::AddressInUse(ip));
                }
                self.nat_members.insert((n, ip), id);
            }
            None => {
                self.claim_public(ip)?;
                self.routes.insert(ip, Route::Client(id));
            }
        }
        self.clients.push(ClientHost {
            local_ip: ip,
            nat,
            tcp: TcpStack::new(self.cfg.syn_payload_budget),
            fop_cache: TlsCache::default(),
            plain_cache: TlsCache::default(),
            next_port: FIRST_CLIENT_PORT,
        });
        Ok(id)
    }

    pub fn add_pool(&mut self, spec: PoolSpec) -> Result<PoolId, WorldError> {
        if spec.hostnames.is_empty() || spec.ips.is_empty() {
            return Err(WorldError::EmptyPool);
        }
        for &ip in &spec.ips {
            self.claim_public(ip)?;
        }
        let id = PoolId(self.pools.len() as u32);
        for &ip in &spec.ips {
            self.server_ips.insert(ip, id);
        }
        let key = ServerCookieKey::generate(&mut self.rng);
        self.pools.push(ServerPool {
            names: spec.hostnames,
            key,
            tickets: TicketStore::default(),
            fast_open: spec.fast_open,
            fop_support: spec.fop_support,
            log: Vec::new(),
            log_conns: Vec::new(),
        });
        Ok(id)
    }

    fn client_mut(&mut self, c: ClientId) -> Result<&mut ClientHost, WorldError> {
        self.clients
            .get_mut(c.0 as usize)
            .ok_or(WorldError::UnknownClient(c.0))
    }

    pub fn client_ip(&self, c: ClientId) -> Option<IpAddr> {
        self.clients.get(c.0 as usize).map(|h| h.local_ip)
    }

    /// Public address the client's traffic leaves with.
    pub fn client_public_ip(&self, c: ClientId) -> Option<IpAddr> {
        let h = self.clients.get(c.0 as usize)?;
        Some(match h.nat {
            Some(n) => self.nats[n.0 as usize].public_ip(),
            None => h.local_ip,
        })
    }

    pub fn rotate_nat(&mut self, nat: NatId, new_ip: IpAddr) -> Result<(), WorldError> {
        let gw = self
            .nats
            .get(nat.0 as usize)
            .ok_or(WorldError::UnknownNat(nat.0))?;
        let old = gw.public_ip();
        if old != new_ip {
            self.claim_public(new_ip)?;
        }
        self.nats[nat.0 as usize].rotate_public_ip(new_ip)?;
        self.routes.remove(&old);
        self.routes.insert(new_ip, Route::Nat(nat));
        Ok(())
    }

    /// New address for a directly connected client. Its caches stay.
    pub fn change_client_ip(&mut self, c: ClientId, new_ip: IpAddr) -> Result<(), WorldError> {
        let host = self
            .clients
            .get(c.0 as usize)
            .ok_or(WorldError::UnknownClient(c.0))?;
        if host.nat.is_some() {
            return Err(WorldError::ClientBehindNat);
        }
        let old = host.local_ip;
        if old == new_ip {
            return Err(SimError::SameAddress(new_ip).into());
        }
        self.claim_public(new_ip)?;
        self.routes.remove(&old);
        self.routes.insert(new_ip, Route::Client(c));
        self.clients[c.0 as usize].local_ip = new_ip;
        Ok(())
    }

    /// Host reboot: the kernel forgets its Fast Open cookies.
    pub fn clear_tcp_cache(&mut self, c: ClientId) -> Result<(), WorldError> {
        self.client_mut(c)?.tcp = TcpStack::new(self.cfg.syn_payload_budget);
        Ok(())
    }

    pub fn clear_tls_caches(&mut self, c: ClientId) -> Result<(), WorldError> {
        let h = self.client_mut(c)?;
        h.fop_cache.clear();
        h.plain_cache.clear();
        Ok(())
    }

    /// Server addresses of `pool` the client's kernel holds a TFO cookie
    /// for.
    pub fn tfo_destinations(&self, c: ClientId, pool: PoolId) -> Vec<IpAddr> {
        let Some(h) = self.clients.get(c.0 as usize) else {
            return Vec::new();
        };
        h.tcp
            .tfo_cache()
            .destinations(h.local_ip, HTTPS_PORT)
            .into_iter()
            .filter(|ip| self.server_ips.get(ip) == Some(&pool))
            .collect()
    }

    pub fn pool_of(&self, ip: IpAddr) -> Option<PoolId> {
        self.server_ips.get(&ip).copied()
    }

    /// Schedules a fetch to start at `at`.
    pub fn connect_at(&mut self, at: SimTime, req: ConnectRequest) -> Result<ConnId, WorldError> {
        if req.client.0 as usize >= self.clients.len() {
            return Err(WorldError::UnknownClient(req.client.0));
        }
        if !self.server_ips.contains_key(&req.server_ip) {
            return Err(WorldError::UnknownServer(req.server_ip));
        }
        let conn = ConnId(self.next_conn);
        self.sched.schedule(at, Event::Start(conn))?;
        self.next_conn += 1;
        self.pending.insert(conn, req);
        Ok(conn)
    }

    pub fn connect_now(&mut self, req: ConnectRequest) -> Result<ConnId, WorldError> {
        self.connect_at(self.now(), req)
    }

    /// Processes events until the queue is empty.
    pub fn run(&mut self) -> Result<(), WorldError> {
        while let Some((_, ev)) = self.sched.pop() {
            self.dispatch(ev)?;
        }
        Ok(())
    }

    /// Processes every event due at or before `until`, then moves the clock
    /// to `until`.
    pub fn run_until(&mut self, until: SimTime) -> Result<(), WorldError> {
        while self.sched.peek_time().is_some_and(|t| t <= until) {
            let (_, ev) = self.sched.pop().expect("peeked");
            self.dispatch(ev)?;
        }
        if until > self.now() {
            self.sched.advance_to(until)?;
        }
        Ok(())
    }

    pub fn completions(&self) -> &[Completion] {
        &self.completions
    }

    pub fn take_completions(&mut self) -> Vec<Completion> {
        std::mem::take(&mut self.completions)
    }

    /// Connections still waiting for a response, e.g. after a route vanished.
    pub fn open_connections(&self) -> usize {
        self.client_conns.len() + self.pending.len()
    }

    pub fn dropped_packets(&self) -> u64 {
        self.dropped
    }

    pub fn capture(&self) -> &Capture {
        &self.capture
    }

    /// Connection of each capture record. Ground truth for metrics only.
    pub fn capture_conns(&self) -> &[ConnId] {
        &self.capture_conns
    }

    /// Every pool's connection log, pool by pool.
    pub fn host_observations(&self) -> Vec<HostObservation> {
        self.pools.iter().flat_map(|p| p.log.iter().cloned()).collect()
    }

    /// Connection of each entry of [`World::host_observations`]. Ground
    /// truth for metrics only.
    pub fn host_observation_conns(&self) -> Vec<ConnId> {
        self.pools.iter().flat_map(|p| p.log_conns.iter().copied()).collect()
    }

    pub fn pool_observations(&self, pool: PoolId) -> &[HostObservation] {
        &self.pools[pool.0 as usize].log
    }

    fn dispatch(&mut self, ev: Event) -> Result<(), WorldError> {
        match ev {
            Event::Start(conn) => self.start(conn),
            Event::Deliver(Hop::NatOutbound(n), pkt) => {
                let gw = &mut self.nats[n.0 as usize];
                match gw.translate(pkt.seg, Direction::Outbound)? {
                    Some(seg) => self.wan_up(Packet { seg, conn: pkt.conn }),
                    None => self.dropped += 1,
                }
                Ok(())
            }
            Event::Deliver(Hop::Server, pkt) => self.server_recv(pkt),
            Event::Deliver(Hop::Public, pkt) => {
                match self.routes.get(&pkt.seg.dst.ip).copied() {
                    Some(Route::Client(c)) => return self.client_recv(c, pkt),
                    Some(Route::Nat(n)) => {
                        let gw = &mut self.nats[n.0 as usize];
                        let member = match gw.translate(pkt.seg, Direction::Inbound)? {
                            Some(seg) => self
                                .nat_members
                                .get(&(n, seg.dst.ip))
                                .map(|&c| (c, Packet { seg, conn: pkt.conn })),
                            None => None,
                        };
                        match member {
                            Some((c, p)) => {
                                self.sched
                                    .schedule_in(self.cfg.lan_delay, Event::Deliver(Hop::Client(c), p));
                            }
                            None => self.dropped += 1,
                        }
                    }
                    None => self.dropped += 1,
                }
                Ok(())
            }
            Event::Deliver(Hop::Client(c), pkt) => self.client_recv(c, pkt),
        }
    }

    fn record(&mut self, pkt: &Packet) {
        if self.cfg.capture {
            self.capture.push(self.sched.now(), WAN_TAP, pkt.to_wire());
            self.capture_conns.push(pkt.conn);
        }
    }

    fn wan_up(&mut self, pkt: Packet) {
        self.record(&pkt);
        let d = self.cfg.wan.delay(false);
        self.sched.schedule_in(d, Event::Deliver(Hop::Server, pkt));
    }

    fn wan_down(&mut self, pkt: Packet) {
        self.record(&pkt);
        let d = self.cfg.wan.delay(true);
        self.sched.schedule_in(d, Event::Deliver(Hop::Public, pkt));
    }

    fn client_send(&mut self, c: ClientId, pkt: Packet) {
        match self.clients[c.0 as usize].nat {
            Some(n) => {
                self.sched
                    .schedule_in(self.cfg.lan_delay, Event::Deliver(Hop::NatOutbound(n), pkt));
            }
            None => self.wan_up(pkt),
        }
    }

    fn start(&mut self, conn: ConnId) -> Result<(), WorldError> {
        let req = self.pending.remove(&conn).expect("scheduled start");
        let now = self.sched.now();
        let host = &mut self.clients[req.client.0 as usize];
        let (resume, fop) = match req.variant {
            TcpVariant::Fop => {
                let entry = host
                    .fop_cache
                    .take(&req.hostname, req.context, now, self.cfg.lifetime_ms);
                if let Some(cookie) = entry.as_ref().and_then(|e| e.ticket.embedded_cookie) {
                    host.tcp.cookie_set(req.server_ip, HTTPS_PORT, cookie);
                }
                (entry.map(|e| e.ticket), true)
            }
            TcpVariant::Standard | TcpVariant::Tfo => {
                let entry = host
                    .plain_cache
                    .take(&req.hostname, ContextId::default(), now, u64::MAX);
                (entry.map(|e| e.ticket), false)
            }
        };
        let mut tls = TlsClient::new(
            req.hostname.clone(),
            fop,
            request_for(&req.hostname),
            resume,
            &self.kex,
            &mut self.rng,
        );
        let flight = tls.first_flight();
        let local = Endpoint::new(host.local_ip, host.alloc_port())?;
        let remote = Endpoint::new(req.server_ip, HTTPS_PORT)?;
        let (tcp, syn) = host.tcp.connect(req.variant, conn, local, remote, flight)?;
        let zero_rtt_attempted = tcp.attempted_cookie.is_some() && !syn.seg.payload.is_empty();
        let client = req.client;
        self.client_conns.insert(
            conn,
            ClientSide {
                req,
                tcp,
                tls,
                start: now,
                zero_rtt_attempted,
                tls_resumed: false,
            },
        );
        self.client_send(client, syn);
        Ok(())
    }

    fn client_recv(&mut self, c: ClientId, pkt: Packet) -> Result<(), WorldError> {
        let host = &mut self.clients[c.0 as usize];
        if pkt.seg.dst.ip != host.local_ip {
            self.dropped += 1;
            return Ok(());
        }
        let Some(side) = self.client_conns.get_mut(&pkt.conn) else {
            self.dropped += 1;
            return Ok(());
        };
        let (mut out, tls_bytes) = if pkt.seg.flags.is_syn_ack() {
            let o = side.tcp.on_synack(&mut host.tcp, &pkt.seg)?;
            (o.reply.seg.payload, o.delivered)
        } else {
            (Vec::new(), pkt.seg.payload)
        };
        let mut done = None;
        if !tls_bytes.is_empty() {
            match side.tls.on_bytes(&tls_bytes, &self.kex) {
                Ok(ev) => {
                    if let Some(r) = ev.resumed {
                        side.tls_resumed = r;
                    }
                    let now = self.sched.now();
                    for t in ev.tickets {
                        let h = side.req.hostname.clone();
                        match side.req.variant {
                            TcpVariant::Fop => host.fop_cache.store(h, side.req.context, t, now),
                            _ => host.plain_cache.store(h, ContextId::default(), t, now),
                        }
                    }
                    out.extend_from_slice(&ev.send);
                    done = ev.response.map(Outcome::Response);
                }
                Err(e) => done = Some(Outcome::Aborted(e)),
            }
        }
        if let Some(outcome) = done {
            let side = self.client_conns.remove(&pkt.conn).expect("looked up above");
            self.completions.push(Completion {
                conn: pkt.conn,
                client: c,
                tag: side.req.tag,
                hostname: side.req.hostname,
                server_ip: side.req.server_ip,
                variant: side.req.variant,
                start: side.start,
                end: self.sched.now(),
                zero_rtt_attempted: side.zero_rtt_attempted,
                zero_rtt_accepted: side.tcp.zero_rtt_accepted,
                tls_resumed: side.tls_resumed,
                outcome,
            });
            return Ok(());
        }
        if !out.is_empty() {
            let p = side.tcp.data_packet(out);
            self.client_send(c, p);
        }
        Ok(())
    }

    fn server_recv(&mut self, pkt: Packet) -> Result<(), WorldError> {
        let Some(&pool_id) = self.server_ips.get(&pkt.seg.dst.ip) else {
            self.dropped += 1;
            return Ok(());
        };
        if pkt.seg.flags.is_syn() && !pkt.seg.flags.is_syn_ack() {
            let pool = &mut self.pools[pool_id.0 as usize];
            let acc = server_accept(&pkt, &pool.key, pool.fast_open, &mut self.rng)?;
            let log_index = pool.log.len();
            pool.log.push(HostObservation {
                time: self.sched.now(),
                server_ip: pkt.seg.dst.ip,
                client_wire_ip: pkt.seg.src.ip,
                presented_cookie: acc.state.presented_cookie,
                issued_cookies: acc.state.issued_cookie.into_iter().collect(),
            });
            pool.log_conns.push(pkt.conn);
            let mut side = ServerSide {
                pool: pool_id,
                tcp: acc.state,
                tls: TlsServer::new(),
                log_index,
            };
            let mut synack = acc.synack;
            let finished = if acc.delivered.is_empty() {
                false
            } else {
                let (bytes, finished) = self.server_tls(&mut side, &acc.delivered)?;
                synack.seg.payload = bytes;
                finished
            };
            if !finished {
                self.server_conns.insert(pkt.conn, side);
            }
            self.wan_down(synack);
            return Ok(());
        }
        if pkt.seg.payload.is_empty() {
            return Ok(());
        }
        let Some(mut side) = self.server_conns.remove(&pkt.conn) else {
            self.dropped += 1;
            return Ok(());
        };
        let (bytes, finished) = self.server_tls(&mut side, &pkt.seg.payload)?;
        if !bytes.is_empty() {
            let p = side.tcp.data_packet(bytes);
            self.wan_down(p);
        }
        if !finished {
            self.server_conns.insert(pkt.conn, side);
        }
        Ok(())
    }

    /// Feeds client bytes to the server's TLS and answers every request.
    /// Returns the bytes to send and whether the exchange is over.
    fn server_tls(&mut self, side: &mut ServerSide, bytes: &[u8]) -> Result<(Vec<u8>, bool), WorldError> {
        let pool = &mut self.pools[side.pool.0 as usize];
        let mut ctx = ServerContext {
            names: &pool.names,
            fop_support: pool.fop_support,
            cookie_key: &pool.key,
            tickets: &mut pool.tickets,
            kex: &self.kex,
            client_ip: side.tcp.remote.ip,
            now: self.sched.now(),
            tickets_per_session: self.cfg.tickets_per_session,
            rng: &mut self.rng,
        };
        let ev = side.tls.on_bytes(bytes, &mut ctx).map_err(WorldError::ServerTls)?;
        pool.log[side.log_index].issued_cookies.extend(ev.issued_cookies);
        let mut out = ev.send;
        let finished = !ev.requests.is_empty();
        for req in &ev.requests {
            side.tls.seal_app_into(&response_for(req), &mut out);
        }
        Ok((out, finished))
    }
}
