// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::net::IpAddr;

use super::{Endpoint, Segment, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Outbound,
    Inbound,
}

/// Port-translating NAT. One public port per local endpoint; mappings live
/// for the whole scenario.
#[derive(Clone, Debug)]
pub struct NatGateway {
    public_ip: IpAddr,
    by_local: BTreeMap<Endpoint, u16>,
    by_public: BTreeMap<u16, Endpoint>,
    next_port: u16,
}

const FIRST_PUBLIC_PORT: u16 = 40001;

impl NatGateway {
    pub fn new(public_ip: IpAddr) -> Self {
        NatGateway {
            public_ip,
            by_local: BTreeMap::new(),
            by_public: BTreeMap::new(),
            next_port: FIRST_PUBLIC_PORT,
        }
    }

    pub fn public_ip(&self) -> IpAddr {
        self.public_ip
    }

    pub fn mapping_count(&self) -> usize {
        self.by_local.len()
    }

    pub fn rotate_public_ip(&mut self, new_ip: IpAddr) -> Result<(), SimError> {
        if new_ip == self.public_ip {
            return Err(SimError::SameAddress(new_ip));
        }
        self.public_ip = new_ip;
        Ok(())
    }

    fn map(&mut self, local: Endpoint) -> Result<u16, SimError> {
        if let Some(&port) = self.by_local.get(&local) {
            return Ok(port);
        }
        let port = self.next_port;
        if port == 0 {
            return Err(SimError::NatPortsExhausted);
        }
        self.next_port = port.wrapping_add(1);
        self.by_local.insert(local, port);
        self.by_public.insert(port, local);
        Ok(port)
    }

    /// Rewrites `seg` across the gateway. `Ok(None)` means the segment is
    /// dropped: an inbound segment for an unknown port or a stale address.
    pub fn translate(
        &mut self,
        seg: Segment,
        direction: Direction,
    ) -> Result<Option<Segment>, SimError> {
        match direction {
            Direction::Outbound => {
                let port = self.map(seg.src)?;
                let src = Endpoint {
                    ip: self.public_ip,
                    port,
                };
                Ok(Some(Segment { src, ..seg }))
            }
            Direction::Inbound => {
                if seg.dst.ip != self.public_ip {
                    return Ok(None);
                }
                Ok(self
                    .by_public
                    .get(&seg.dst.port)
                    .map(|&local| Segment { dst: local, ..seg }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Flags, FoOption};

    fn ep(s: &str, port: u16) -> Endpoint {
        Endpoint::new(s.parse().unwrap(), port).unwrap()
    }

    fn seg(src: Endpoint, dst: Endpoint) -> Segment {
        Segment {
            src,
            dst,
            flags: Flags::SYN,
            ack: 0,
            fo: FoOption::Absent,
            payload: vec![],
        }
    }

    #[test]
    fn outbound_then_inbound_inverts() {
        let mut gw = NatGateway::new("203.0.113.5".parse().unwrap());
        let local = ep("10.0.0.2", 5000);
        let server = ep("192.0.2.1", 443);
        let out = gw
            .translate(seg(local, server), Direction::Outbound)
            .unwrap()
            .unwrap();
        assert_eq!(out.src, ep("203.0.113.5", 40001));
        let back = gw
            .translate(seg(server, out.src), Direction::Inbound)
            .unwrap()
            .unwrap();
        assert_eq!(back.dst, local);
    }

    #[test]
    fn unmapped_inbound_dropped() {
        let mut gw = NatGateway::new("203.0.113.5".parse().unwrap());
        let r = gw
            .translate(
                seg(ep("192.0.2.1", 443), ep("203.0.113.5", 41000)),
                Direction::Inbound,
            )
            .unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn rotation_changes_source_keeps_mapping() {
        let mut gw = NatGateway::new("203.0.113.5".parse().unwrap());
        let local = ep("10.0.0.2", 5000);
        let server = ep("192.0.2.1", 443);
        gw.translate(seg(local, server), Direction::Outbound)
            .unwrap();
        let new_ip: IpAddr = "203.0.113.77".parse().unwrap();
        assert!(gw.rotate_public_ip(new_ip).is_ok());
        assert_eq!(
            gw.rotate_public_ip(new_ip),
            Err(SimError::SameAddress(new_ip))
        );
        let out = gw
            .translate(seg(local, server), Direction::Outbound)
            .unwrap()
            .unwrap();
        assert_eq!(out.src.ip, new_ip);
        assert_eq!(out.src.port, 40001);
        assert_eq!(gw.mapping_count(), 1);
        // replies to the retired address no longer reach the host
        let stale = gw
            .translate(
                seg(server, ep("203.0.113.5", 40001)),
                Direction::Inbound,
            )
            .unwrap();
        assert!(stale.is_none());
    }

    #[test]
    fn distinct_locals_get_distinct_ports() {
        let mut gw = NatGateway::new("203.0.113.5".parse().unwrap());
        let server = ep("192.0.2.1", 443);
        let a = gw
            .translate(seg(ep("10.0.0.2", 5000), server), Direction::Outbound)
            .unwrap()
            .unwrap();
        let b = gw
            .translate(seg(ep("10.0.0.3", 5000), server), Direction::Outbound)
            .unwrap()
            .unwrap();
        assert_ne!(a.src.port, b.src.port);
        assert!(!a.src.ip.to_string().starts_with("10."));
    }
}
