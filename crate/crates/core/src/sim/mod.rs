// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event primitives: clock, event queue, wire
//! segments, links, NAT gateways and the load-balancer model.

mod lb;
mod nat;
mod packet;
mod scheduler;

pub use lb::{LbChoice, LoadBalancerModel};
pub use nat::{Direction, NatGateway};
pub use packet::{ConnId, Endpoint, Flags, FoOption, Packet, Segment, WireError};
pub use scheduler::{EventHandle, Scheduler};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::net::IpAddr;

/// Milliseconds since simulation start.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_ms(ms: u64) -> Self {
        SimTime(ms)
    }

    /// Signed constructor for user-supplied values.
    pub fn try_from_ms(ms: i64) -> Result<Self, SimError> {
        u64::try_from(ms)
            .map(SimTime)
            .map_err(|_| SimError::NegativeTime(ms))
    }

    pub const fn as_ms(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl std::ops::Add<u64> for SimTime {
    type Output = SimTime;

    fn add(self, ms: u64) -> SimTime {
        SimTime(self.0 + ms)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// A one-way hop with a fixed delay. Delivery order on a link is FIFO
/// because every packet on it sees the same delay and ties resolve by
/// insertion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Link {
    pub one_way_delay: u64,
    /// Delay of the opposite direction; `None` means symmetric.
    pub reverse_delay: Option<u64>,
    pub taps: Vec<TapId>,
}

impl Link {
    pub fn symmetric(one_way_delay: u64) -> Self {
        Link {
            one_way_delay,
            reverse_delay: None,
            taps: Vec::new(),
        }
    }

    pub fn delay(&self, reverse: bool) -> u64 {
        if reverse {
            self.reverse_delay.unwrap_or(self.one_way_delay)
        } else {
            self.one_way_delay
        }
    }

    /// Round trip across this link with zero processing delay.
    pub fn rtt(&self) -> u64 {
        self.delay(false) + self.delay(true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TapId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub u32);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("cannot schedule at {at} while the clock reads {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("negative simulation time {0} ms")]
    NegativeTime(i64),
    #[error("port must be in 1..=65535")]
    InvalidPort,
    #[error("load balancer pool is empty")]
    EmptyPool,
    #[error("failure probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("revisit numbers start at 1")]
    InvalidRevisit,
    #[error("every address of the pool already holds a cookie")]
    PoolExhausted,
    #[error("new public address {0} equals the current one")]
    SameAddress(IpAddr),
    #[error("NAT port space exhausted")]
    NatPortsExhausted,
}
