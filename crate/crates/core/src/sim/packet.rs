// SPDX-License-Identifier: Apache-2.0

//! Simulated TCP segments and their wire encoding.
//!
//! Wire layout (all integers big-endian):
//!
//! ```text
//! src   : family u8 (4|6) ‖ address (4|16 bytes) ‖ port u16
//! dst   : same as src
//! flags : u8   (SYN=0x01, ACK=0x02, FIN=0x04)
//! ack   : u32  (sequence space acknowledged in a SYN-ACK: 1 + accepted SYN payload)
//! fo    : tag u8 (0 absent, 1 cookie request, 2 cookie) ‖ 16 cookie bytes when tag = 2
//! data  : len u32 ‖ payload
//! ```
//!
//! The connection tag kept by the simulator is not part of the encoding.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::cookie::{FastOpenCookie, COOKIE_LEN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: IpAddr, port: u16) -> Result<Self, SimError> {
        if port == 0 {
            return Err(SimError::InvalidPort);
        }
        Ok(Endpoint { ip, port })
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ip {
            IpAddr::V4(ip) => write!(f, "{ip}:{}", self.port),
            IpAddr::V6(ip) => write!(f, "[{ip}]:{}", self.port),
        }
    }
}

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Flags(u8);

impl Flags {
    pub const SYN: Flags = Flags(0x01);
    pub const ACK: Flags = Flags(0x02);
    pub const FIN: Flags = Flags(0x04);
    pub const SYN_ACK: Flags = Flags(0x03);

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Option<Flags> {
        (bits & !0x07 == 0).then_some(Flags(bits))
    }

    pub fn is_syn(self) -> bool {
        self.contains(Flags::SYN) && !self.contains(Flags::ACK)
    }

    pub fn is_syn_ack(self) -> bool {
        self.contains(Flags::SYN_ACK)
    }
}

impl std::ops::BitOr for Flags {
    type Output = Flags;

    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

impl fmt::Debug for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        for (flag, name) in [(Flags::SYN, "SYN"), (Flags::ACK, "ACK"), (Flags::FIN, "FIN")] {
            if self.contains(flag) {
                names.push(name);
            }
        }
        write!(f, "{}", names.join("|"))
    }
}

/// The TCP Fast Open option as carried on a segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FoOption {
    #[default]
    Absent,
    CookieRequest,
    Cookie(FastOpenCookie),
}

impl FoOption {
    pub fn cookie(&self) -> Option<&FastOpenCookie> {
        match self {
            FoOption::Cookie(c) => Some(c),
            _ => None,
        }
    }
}

/// Everything about a segment that is visible on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub flags: Flags,
    pub ack: u32,
    pub fo: FoOption,
    pub payload: Vec<u8>,
}

/// Simulator-internal connection tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConnId(pub u64);

/// A segment in flight plus the simulator's routing tag. Observers only
/// ever receive [`Packet::to_wire`] bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub seg: Segment,
    pub conn: ConnId,
}

impl Packet {
    pub fn to_wire(&self) -> Vec<u8> {
        self.seg.encode()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WireError {
    #[error("segment truncated")]
    Truncated,
    #[error("unknown address family {0}")]
    BadFamily(u8),
    #[error("unknown flag bits {0:#04x}")]
    BadFlags(u8),
    #[error("unknown fast open tag {0}")]
    BadOptionTag(u8),
    #[error("port zero on the wire")]
    BadPort,
    #[error("{0} trailing bytes after segment")]
    Trailing(usize),
}

fn put_endpoint(out: &mut Vec<u8>, ep: &Endpoint) {
    match ep.ip {
        IpAddr::V4(ip) => {
            out.push(4);
            out.extend_from_slice(&ip.octets());
        }
        IpAddr::V6(ip) => {
            out.push(6);
            out.extend_from_slice(&ip.octets());
        }
    }
    out.extend_from_slice(&ep.port.to_be_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn endpoint(&mut self) -> Result<Endpoint, WireError> {
        let ip = match self.u8()? {
            4 => {
                let b: [u8; 4] = self.take(4)?.try_into().unwrap();
                IpAddr::V4(Ipv4Addr::from(b))
            }
            6 => {
                let b: [u8; 16] = self.take(16)?.try_into().unwrap();
                IpAddr::V6(Ipv6Addr::from(b))
            }
            other => return Err(WireError::BadFamily(other)),
        };
        let port = self.u16()?;
        Endpoint::new(ip, port).map_err(|_| WireError::BadPort)
    }
}

impl Segment {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.payload.len());
        put_endpoint(&mut out, &self.src);
        put_endpoint(&mut out, &self.dst);
        out.push(self.flags.bits());
        out.extend_from_slice(&self.ack.to_be_bytes());
        match &self.fo {
            FoOption::Absent => out.push(0),
            FoOption::CookieRequest => out.push(1),
            FoOption::Cookie(c) => {
                out.push(2);
                out.extend_from_slice(c.as_bytes());
            }
        }
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Segment, WireError> {
        let mut r = Reader { buf: bytes };
        let src = r.endpoint()?;
        let dst = r.endpoint()?;
        let raw_flags = r.u8()?;
        let flags = Flags::from_bits(raw_flags).ok_or(WireError::BadFlags(raw_flags))?;
        let ack = r.u32()?;
        let fo = match r.u8()? {
            0 => FoOption::Absent,
            1 => FoOption::CookieRequest,
            2 => {
                let b: [u8; COOKIE_LEN] = r.take(COOKIE_LEN)?.try_into().unwrap();
                FoOption::Cookie(FastOpenCookie::from_array(b))
            }
            other => return Err(WireError::BadOptionTag(other)),
        };
        let len = r.u32()? as usize;
        let payload = r.take(len)?.to_vec();
        if !r.buf.is_empty() {
            return Err(WireError::Trailing(r.buf.len()));
        }
        Ok(Segment {
            src,
            dst,
            flags,
            ack,
            fo,
            payload,
        })
    }
}
