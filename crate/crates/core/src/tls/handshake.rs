// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::net::IpAddr;

use rand::Rng;

use super::{
    kdf, plain_record, split_records, Frame, KeyAgreement, RecordKey, SessionTicket, TlsError,
    TAG_APP, TAG_HANDSHAKE, TAG_TICKET,
};
use crate::cookie::{FastOpenCookie, ServerCookieKey};
use crate::names::HostName;
use crate::sim::SimTime;
use crate::transport::cookie_gen;

const MSG_CLIENT_HELLO: u8 = 1;
const MSG_SERVER_HELLO: u8 = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
struct ClientHello {
    random: [u8; 16],
    share: [u8; 16],
    fop: bool,
    server_name: String,
    psk_identity: Option<[u8; 16]>,
    early_data: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct ServerHello {
    random: [u8; 16],
    share: [u8; 16],
    psk_accepted: bool,
    fop: bool,
    certificate_name: String,
}

fn get<const N: usize>(b: &[u8], at: usize) -> Result<[u8; N], TlsError> {
    b.get(at..at + N)
        .and_then(|s| s.try_into().ok())
        .ok_or(TlsError::Malformed)
}

fn get_name(b: &[u8], at: usize) -> Result<(String, usize), TlsError> {
    let len = *b.get(at).ok_or(TlsError::Malformed)? as usize;
    let raw = b.get(at + 1..at + 1 + len).ok_or(TlsError::Malformed)?;
    let name = String::from_utf8(raw.to_vec()).map_err(|_| TlsError::Malformed)?;
    Ok((name, at + 1 + len))
}

impl ClientHello {
    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(53 + self.server_name.len());
        b.push(MSG_CLIENT_HELLO);
        b.extend_from_slice(&self.random);
        b.extend_from_slice(&self.share);
        b.push(self.fop as u8);
        b.push(self.server_name.len() as u8);
        b.extend_from_slice(self.server_name.as_bytes());
        match &self.psk_identity {
            Some(id) => {
                b.push(1);
                b.extend_from_slice(id);
            }
            None => b.push(0),
        }
        b.push(self.early_data as u8);
        b
    }

    fn decode(b: &[u8]) -> Result<Self, TlsError> {
        if b.first() != Some(&MSG_CLIENT_HELLO) {
            return Err(TlsError::Malformed);
        }
        let random = get::<16>(b, 1)?;
        let share = get::<16>(b, 17)?;
        let fop = get::<1>(b, 33)?[0] == 1;
        let (server_name, mut at) = get_name(b, 34)?;
        let psk_identity = match get::<1>(b, at)?[0] {
            1 => {
                let id = get::<16>(b, at + 1)?;
                at += 17;
                Some(id)
            }
            _ => {
                at += 1;
                None
            }
        };
        let early_data = get::<1>(b, at)?[0] == 1;
        if b.len() != at + 1 {
            return Err(TlsError::Malformed);
        }
        Ok(ClientHello {
            random,
            share,
            fop,
            server_name,
            psk_identity,
            early_data,
        })
    }
}

impl ServerHello {
    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(36 + self.certificate_name.len());
        b.push(MSG_SERVER_HELLO);
        b.extend_from_slice(&self.random);
        b.extend_from_slice(&self.share);
        b.push(self.psk_accepted as u8);
        b.push(self.fop as u8);
        b.push(self.certificate_name.len() as u8);
        b.extend_from_slice(self.certificate_name.as_bytes());
        b
    }

    fn decode(b: &[u8]) -> Result<Self, TlsError> {
        if b.first() != Some(&MSG_SERVER_HELLO) {
            return Err(TlsError::Malformed);
        }
        let random = get::<16>(b, 1)?;
        let share = get::<16>(b, 17)?;
        let psk_accepted = get::<1>(b, 33)?[0] == 1;
        let fop = get::<1>(b, 34)?[0] == 1;
        let (certificate_name, end) = get_name(b, 35)?;
        if end != b.len() {
            return Err(TlsError::Malformed);
        }
        Ok(ServerHello {
            random,
            share,
            psk_accepted,
            fop,
            certificate_name,
        })
    }
}

/// Per-direction record keys, derived from the master secret on first use.
struct TrafficKeys {
    master: [u8; 32],
    c2s: Option<RecordKey>,
    s2c: Option<RecordKey>,
}

impl TrafficKeys {
    fn client_to_server(&mut self) -> &mut RecordKey {
        let master = &self.master;
        self.c2s
            .get_or_insert_with(|| RecordKey::from_secret(&kdf("c2s", &[master])))
    }

    fn server_to_client(&mut self) -> &mut RecordKey {
        let master = &self.master;
        self.s2c
            .get_or_insert_with(|| RecordKey::from_secret(&kdf("s2c", &[master])))
    }
}

fn traffic_keys(master: &[u8; 32]) -> TrafficKeys {
    TrafficKeys {
        master: *master,
        c2s: None,
        s2c: None,
    }
}

fn early_key(resumption_secret: &[u8; 16], client_random: &[u8; 16]) -> RecordKey {
    RecordKey::from_secret(&kdf("early", &[resumption_secret, client_random]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ClientState {
    AwaitServerHello,
    Established,
}

/// What the client learned from a batch of server bytes.
#[derive(Debug, Default)]
pub struct ClientEvents {
    pub send: Vec<u8>,
    pub tickets: Vec<SessionTicket>,
    pub response: Option<Vec<u8>>,
    /// Set once the server hello is processed.
    pub resumed: Option<bool>,
}

/// Client half of one TLS session.
pub struct TlsClient {
    hostname: HostName,
    fop: bool,
    request: Vec<u8>,
    random: [u8; 16],
    secret: [u8; 16],
    share: [u8; 16],
    resume: Option<SessionTicket>,
    keys: Option<TrafficKeys>,
    state: ClientState,
    inbox: Vec<u8>,
}

impl TlsClient {
    /// Prepares a session that will send `request` as soon as keys allow:
    /// as early data when `resume` is given, after the server hello
    /// otherwise.
    pub fn new<R: Rng + ?Sized>(
        hostname: HostName,
        fop: bool,
        request: Vec<u8>,
        resume: Option<SessionTicket>,
        kex: &KeyAgreement,
        rng: &mut R,
    ) -> Self {
        let secret = rng.random();
        TlsClient {
            hostname,
            fop,
            request,
            random: rng.random(),
            secret,
            share: kex.share_for(&secret),
            resume,
            keys: None,
            state: ClientState::AwaitServerHello,
            inbox: Vec::new(),
        }
    }

    pub fn is_resumption(&self) -> bool {
        self.resume.is_some()
    }

    /// Client hello, plus the sealed request when resuming.
    pub fn first_flight(&mut self) -> Vec<u8> {
        let hello = ClientHello {
            random: self.random,
            share: self.share,
            fop: self.fop,
            server_name: self.hostname.as_str().to_string(),
            psk_identity: self.resume.as_ref().map(|t| t.ticket_id),
            early_data: self.resume.is_some(),
        };
        let mut out = plain_record(TAG_HANDSHAKE, &hello.encode());
        if let Some(ticket) = &self.resume {
            let mut early = early_key(&ticket.resumption_secret, &self.random);
            early.seal_into(TAG_APP, &self.request, &mut out);
        }
        out
    }

    /// `kex` must be the agreement the client was created with.
    pub fn on_bytes(&mut self, bytes: &[u8], kex: &KeyAgreement) -> Result<ClientEvents, TlsError> {
        let mut inbox = std::mem::take(&mut self.inbox);
        let data = if inbox.is_empty() {
            bytes
        } else {
            inbox.extend_from_slice(bytes);
            &inbox[..]
        };
        let (frames, used) = split_records(data)?;
        let mut ev = ClientEvents::default();
        for frame in &frames {
            self.on_frame(frame, kex, &mut ev)?;
        }
        self.inbox = data[used..].to_vec();
        Ok(ev)
    }

    fn on_frame(
        &mut self,
        frame: &Frame<'_>,
        kex: &KeyAgreement,
        ev: &mut ClientEvents,
    ) -> Result<(), TlsError> {
        match (self.state, frame.tag) {
            (ClientState::AwaitServerHello, TAG_HANDSHAKE) => {
                let hello = ServerHello::decode(frame.body)?;
                if hello.certificate_name != self.hostname.as_str() {
                    return Err(TlsError::HostnameMismatch {
                        expected: self.hostname.clone(),
                        got: hello.certificate_name,
                    });
                }
                let resumed = hello.psk_accepted && self.resume.is_some();
                let master = match (&self.resume, resumed) {
                    (Some(ticket), true) => {
                        kdf("master", &[&ticket.resumption_secret, &self.random, &hello.random])
                    }
                    _ => {
                        let peer = kex.secret_of(&hello.share);
                        let shared = kdf("shared", &[&self.secret, &peer]);
                        kdf("master", &[&shared, &self.random, &hello.random])
                    }
                };
                let mut keys = traffic_keys(&master);
                if !resumed {
                    // early data, if any, was ignored; send the request now
                    keys.client_to_server().seal_into(TAG_APP, &self.request, &mut ev.send);
                }
                self.keys = Some(keys);
                self.state = ClientState::Established;
                ev.resumed = Some(resumed);
                Ok(())
            }
            (ClientState::Established, TAG_TICKET) => {
                let keys = self.keys.as_mut().expect("established");
                let body = keys.server_to_client().open_frame(frame)?;
                ev.tickets.push(SessionTicket::decode(&body)?);
                Ok(())
            }
            (ClientState::Established, TAG_APP) => {
                let keys = self.keys.as_mut().expect("established");
                ev.response = Some(keys.server_to_client().open_frame(frame)?);
                Ok(())
            }
            (ClientState::AwaitServerHello, _) => Err(TlsError::Unexpected("await-server-hello")),
            (ClientState::Established, _) => Err(TlsError::Unexpected("established")),
        }
    }
}

/// Resumption state shared by every address of a server pool. Tickets are
/// removed when redeemed.
#[derive(Debug, Default)]
pub struct TicketStore {
    live: HashMap<[u8; 16], ([u8; 16], SimTime)>,
}

impl TicketStore {
    fn redeem(&mut self, id: &[u8; 16]) -> Option<([u8; 16], SimTime)> {
        self.live.remove(id)
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }
}

/// Everything the server side needs from its host while handling bytes.
pub struct ServerContext<'a, R: Rng + ?Sized> {
    pub names: &'a [HostName],
    pub fop_support: bool,
    pub cookie_key: &'a ServerCookieKey,
    pub tickets: &'a mut TicketStore,
    pub kex: &'a KeyAgreement,
    pub client_ip: IpAddr,
    pub now: SimTime,
    pub tickets_per_session: u32,
    pub rng: &'a mut R,
}

#[derive(Debug, Default)]
pub struct ServerEvents {
    pub send: Vec<u8>,
    pub requests: Vec<Vec<u8>>,
    pub issued_cookies: Vec<FastOpenCookie>,
    pub resumed: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ServerState {
    AwaitClientHello,
    Established,
}

pub struct TlsServer {
    state: ServerState,
    keys: Option<TrafficKeys>,
    early: Option<RecordKey>,
    inbox: Vec<u8>,
}

impl Default for TlsServer {
    fn default() -> Self {
        TlsServer {
            state: ServerState::AwaitClientHello,
            keys: None,
            early: None,
            inbox: Vec::new(),
        }
    }
}

impl TlsServer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_bytes<R: Rng + ?Sized>(
        &mut self,
        bytes: &[u8],
        ctx: &mut ServerContext<'_, R>,
    ) -> Result<ServerEvents, TlsError> {
        let mut inbox = std::mem::take(&mut self.inbox);
        let data = if inbox.is_empty() {
            bytes
        } else {
            inbox.extend_from_slice(bytes);
            &inbox[..]
        };
        let (frames, used) = split_records(data)?;
        let mut ev = ServerEvents::default();
        // early data behind a hello whose ticket we could not redeem
        let mut skip_sealed = false;
        for frame in &frames {
            match (self.state, frame.tag) {
                (ServerState::AwaitClientHello, TAG_HANDSHAKE) => {
                    let hello = ClientHello::decode(frame.body)?;
                    skip_sealed = self.on_client_hello(&hello, ctx, &mut ev);
                }
                (ServerState::Established, TAG_APP) if skip_sealed => {}
                (ServerState::Established, TAG_APP) => {
                    let req = match self.early.as_mut() {
                        Some(early) => early.open_frame(frame)?,
                        None => self
                            .keys
                            .as_mut()
                            .expect("established")
                            .client_to_server()
                            .open_frame(frame)?,
                    };
                    ev.requests.push(req);
                }
                (ServerState::AwaitClientHello, _) => {
                    return Err(TlsError::Unexpected("await-client-hello"))
                }
                (ServerState::Established, _) => return Err(TlsError::Unexpected("established")),
            }
        }
        self.inbox = data[used..].to_vec();
        Ok(ev)
    }

    /// Returns true when early data accompanying the hello must be skipped.
    fn on_client_hello<R: Rng + ?Sized>(
        &mut self,
        hello: &ClientHello,
        ctx: &mut ServerContext<'_, R>,
        ev: &mut ServerEvents,
    ) -> bool {
        let random: [u8; 16] = ctx.rng.random();
        let own_secret: [u8; 16] = ctx.rng.random();
        let redeemed = hello
            .psk_identity
            .as_ref()
            .and_then(|id| ctx.tickets.redeem(id));
        let (master, origin, resumed) = match redeemed {
            Some((secret, origin)) => {
                if hello.early_data {
                    self.early = Some(early_key(&secret, &hello.random));
                }
                (kdf("master", &[&secret, &hello.random, &random]), origin, true)
            }
            None => {
                let peer = ctx.kex.secret_of(&hello.share);
                let shared = kdf("shared", &[&peer, &own_secret]);
                (kdf("master", &[&shared, &hello.random, &random]), ctx.now, false)
            }
        };
        let certificate_name = ctx
            .names
            .iter()
            .find(|n| n.as_str() == hello.server_name)
            .or_else(|| ctx.names.first())
            .map(|n| n.as_str().to_string())
            .unwrap_or_default();
        let fop = hello.fop && ctx.fop_support;
        let reply = ServerHello {
            random,
            share: ctx.kex.share_for(&own_secret),
            psk_accepted: resumed,
            fop,
            certificate_name,
        };
        ev.send.extend_from_slice(&plain_record(TAG_HANDSHAKE, &reply.encode()));
        let mut keys = traffic_keys(&master);
        for _ in 0..ctx.tickets_per_session {
            let cookie = fop.then(|| cookie_gen(ctx.cookie_key, ctx.client_ip, ctx.rng));
            let ticket = SessionTicket {
                ticket_id: ctx.rng.random(),
                resumption_secret: ctx.rng.random(),
                embedded_cookie: cookie,
                issued_at: ctx.now,
                origin,
            };
            ctx.tickets
                .live
                .insert(ticket.ticket_id, (ticket.resumption_secret, origin));
            keys.server_to_client()
                .seal_into(TAG_TICKET, &ticket.encode(), &mut ev.send);
            ev.issued_cookies.extend(cookie);
        }
        self.keys = Some(keys);
        self.state = ServerState::Established;
        ev.resumed = Some(resumed);
        hello.early_data && !resumed
    }

    /// Seals an application response for the client.
    pub fn seal_app(&mut self, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        self.seal_app_into(data, &mut out);
        out
    }

    pub fn seal_app_into(&mut self, data: &[u8], out: &mut Vec<u8>) {
        self.keys
            .as_mut()
            .expect("response before handshake")
            .server_to_client()
            .seal_into(TAG_APP, data, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cookie::CookieVerdict;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Pool {
        names: Vec<HostName>,
        key: ServerCookieKey,
        tickets: TicketStore,
        kex: KeyAgreement,
        rng: ChaCha8Rng,
        fop: bool,
    }

    fn pool() -> Pool {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Pool {
            names: vec![HostName::new("example.org").unwrap()],
            key: ServerCookieKey::generate(&mut rng),
            tickets: TicketStore::default(),
            kex: KeyAgreement::new(&mut rng),
            rng,
            fop: true,
        }
    }

    const CLIENT_IP: [u8; 4] = [198, 51, 100, 7];

    /// Drives one session to completion with in-order delivery, returning
    /// the client events of each server flight and the number of flights.
    fn run(p: &mut Pool, mut client: TlsClient, now: u64) -> (Vec<ClientEvents>, usize) {
        let mut server = TlsServer::new();
        let mut to_server = client.first_flight();
        let mut seen = Vec::new();
        let mut flights = 0;
        while !to_server.is_empty() {
            let mut rng = p.rng.clone();
            let mut ctx = ServerContext {
                names: &p.names,
                fop_support: p.fop,
                cookie_key: &p.key,
                tickets: &mut p.tickets,
                kex: &p.kex,
                client_ip: IpAddr::from(CLIENT_IP),
                now: SimTime::from_ms(now),
                tickets_per_session: 1,
                rng: &mut rng,
            };
            let sev = server.on_bytes(&to_server, &mut ctx).unwrap();
            p.rng = rng;
            let mut out = sev.send;
            for req in sev.requests {
                let mut resp = b"re:".to_vec();
                resp.extend_from_slice(&req);
                out.extend_from_slice(&server.seal_app(&resp));
            }
            flights += 1;
            let cev = client.on_bytes(&out, &p.kex).unwrap();
            to_server = cev.send.clone();
            let done = cev.response.is_some();
            seen.push(cev);
            if done {
                break;
            }
        }
        (seen, flights)
    }

    fn new_client(p: &mut Pool, resume: Option<SessionTicket>) -> TlsClient {
        let host = p.names[0].clone();
        TlsClient::new(host, true, b"GET /".to_vec(), resume, &p.kex, &mut p.rng)
    }

    #[test]
    fn full_handshake_takes_two_flights_and_issues_cookie() {
        let mut p = pool();
        let c = new_client(&mut p, None);
        let (ev, flights) = run(&mut p, c, 0);
        assert_eq!(flights, 2);
        assert_eq!(ev[0].resumed, Some(false));
        assert_eq!(ev[0].tickets.len(), 1);
        let cookie = ev[0].tickets[0].embedded_cookie.unwrap();
        assert_eq!(
            p.key.validate_cookie(&cookie, IpAddr::from(CLIENT_IP)),
            CookieVerdict::Accept
        );
        assert_eq!(ev[1].response.as_deref(), Some(&b"re:GET /"[..]));
    }

    #[test]
    fn resumption_answers_in_one_flight_with_fresh_ticket() {
        let mut p = pool();
        let c = new_client(&mut p, None);
        let (ev, _) = run(&mut p, c, 0);
        let t1 = ev[0].tickets[0].clone();
        let c = new_client(&mut p, Some(t1.clone()));
        let (ev, flights) = run(&mut p, c, 1000);
        assert_eq!(flights, 1);
        assert_eq!(ev[0].resumed, Some(true));
        assert_eq!(ev[0].response.as_deref(), Some(&b"re:GET /"[..]));
        let t2 = &ev[0].tickets[0];
        assert_ne!(t2.ticket_id, t1.ticket_id);
        assert_ne!(t2.embedded_cookie, t1.embedded_cookie);
        assert_eq!(t2.origin, t1.origin);
        assert_eq!(t2.issued_at, SimTime::from_ms(1000));
    }

    #[test]
    fn redeemed_ticket_falls_back_to_full_handshake() {
        let mut p = pool();
        let c = new_client(&mut p, None);
        let (ev, _) = run(&mut p, c, 0);
        let t1 = ev[0].tickets[0].clone();
        let c = new_client(&mut p, Some(t1.clone()));
        run(&mut p, c, 10);
        let c = new_client(&mut p, Some(t1));
        let (ev, flights) = run(&mut p, c, 20);
        assert_eq!(flights, 2);
        assert_eq!(ev[0].resumed, Some(false));
        assert!(ev[1].response.is_some());
    }

    #[test]
    fn server_without_fop_issues_plain_tickets() {
        let mut p = pool();
        p.fop = false;
        let c = new_client(&mut p, None);
        let (ev, _) = run(&mut p, c, 0);
        assert_eq!(ev[0].tickets[0].embedded_cookie, None);
    }

    #[test]
    fn hostname_mismatch_aborts() {
        let mut p = pool();
        p.names = vec![HostName::new("other.example").unwrap()];
        let mut c = TlsClient::new(
            HostName::new("example.org").unwrap(),
            true,
            b"x".to_vec(),
            None,
            &p.kex,
            &mut p.rng,
        );
        let mut server = TlsServer::new();
        let flight = c.first_flight();
        let mut rng = p.rng.clone();
        let mut ctx = ServerContext {
            names: &p.names,
            fop_support: true,
            cookie_key: &p.key,
            tickets: &mut p.tickets,
            kex: &p.kex,
            client_ip: IpAddr::from(CLIENT_IP),
            now: SimTime::ZERO,
            tickets_per_session: 1,
            rng: &mut rng,
        };
        let sev = server.on_bytes(&flight, &mut ctx).unwrap();
        assert!(matches!(
            c.on_bytes(&sev.send, &p.kex),
            Err(TlsError::HostnameMismatch { .. })
        ));
    }

    #[test]
    fn hello_codecs_round_trip() {
        let ch = ClientHello {
            random: [1; 16],
            share: [2; 16],
            fop: true,
            server_name: "example.org".into(),
            psk_identity: Some([3; 16]),
            early_data: true,
        };
        assert_eq!(ClientHello::decode(&ch.encode()).unwrap(), ch);
        let sh = ServerHello {
            random: [4; 16],
            share: [5; 16],
            psk_accepted: false,
            fop: true,
            certificate_name: "example.org".into(),
        };
        assert_eq!(ServerHello::decode(&sh.encode()).unwrap(), sh);
        assert_eq!(ClientHello::decode(&[1, 2]), Err(TlsError::Malformed));
    }
}
