// SPDX-License-Identifier: Apache-2.0

//! Single-host connection durations: one client, one server, a short
//! request, zero processing delay.

use serde::{Deserialize, Serialize};

use crate::names::{ContextId, HostName};
use crate::sim::{Link, SimTime};
use crate::transport::TcpVariant;
use crate::world::{ConnectRequest, Outcome, PoolSpec, World, WorldConfig, WorldError};

/// Simulation ticks per millisecond here, so sub-millisecond latencies stay
/// exact.
const TICKS_PER_MS: f64 = 1000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandshakeMode {
    Initial,
    Resumed,
}

/// Delays of the two directions of the path, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDelay {
    pub forward_ms: f64,
    pub reverse_ms: f64,
}

impl PathDelay {
    pub fn symmetric(one_way_ms: f64) -> Self {
        PathDelay {
            forward_ms: one_way_ms,
            reverse_ms: one_way_ms,
        }
    }

    /// The whole latency added on the client's egress only.
    pub fn egress_only(latency_ms: f64) -> Self {
        PathDelay {
            forward_ms: latency_ms,
            reverse_ms: 0.0,
        }
    }

    pub fn rtt_ms(&self) -> f64 {
        self.forward_ms + self.reverse_ms
    }

    fn ticks(ms: f64) -> Result<u64, WorldError> {
        if !(ms >= 0.0 && ms.is_finite()) {
            return Err(crate::sim::SimError::NegativeTime(ms as i64).into());
        }
        Ok((ms * TICKS_PER_MS).round() as u64)
    }
}

/// Duration in milliseconds of one fetch. `Resumed` first runs an initial
/// fetch and measures a second one.
pub fn run_table4(
    variant: TcpVariant,
    mode: HandshakeMode,
    path: PathDelay,
    seed: u64,
) -> Result<f64, WorldError> {
    let cfg = WorldConfig {
        wan: Link {
            one_way_delay: PathDelay::ticks(path.forward_ms)?,
            reverse_delay: Some(PathDelay::ticks(path.reverse_ms)?),
            taps: Vec::new(),
        },
        lifetime_ms: u64::MAX,
        capture: false,
        ..WorldConfig::default()
    };
    let mut w = World::new(cfg, seed);
    let client = w.add_client("198.51.100.10".parse().unwrap(), None)?;
    let server = "192.0.2.1".parse().unwrap();
    let host = HostName::new("bench.example").expect("valid name");
    w.add_pool(PoolSpec::new(vec![host.clone()], vec![server]))?;
    let req = ConnectRequest {
        client,
        hostname: host,
        server_ip: server,
        variant,
        context: ContextId::default(),
        tag: 0,
    };
    w.connect_at(SimTime::ZERO, req.clone())?;
    w.run()?;
    if mode == HandshakeMode::Resumed {
        let later = w.now() + TICKS_PER_MS as u64;
        w.take_completions();
        w.connect_at(later, req)?;
        w.run()?;
    }
    let done = w.completions().last().expect("fetch completes");
    debug_assert!(matches!(done.outcome, Outcome::Response(_)));
    Ok(done.duration() as f64 / TICKS_PER_MS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table4Row {
    pub latency_ms: f64,
    pub variant: TcpVariant,
    pub initial_ms: f64,
    pub resumed_ms: f64,
    /// Durations in round trips; absent at zero latency.
    pub initial_rtts: Option<f64>,
    pub resumed_rtts: Option<f64>,
}

impl Table4Row {
    /// `1 - resumed / initial`.
    pub fn resumed_saving(&self) -> f64 {
        if self.initial_ms == 0.0 {
            0.0
        } else {
            1.0 - self.resumed_ms / self.initial_ms
        }
    }
}

pub fn table4_rows(
    latencies_ms: &[f64],
    variants: &[TcpVariant],
    path: fn(f64) -> PathDelay,
    seed: u64,
) -> Result<Vec<Table4Row>, WorldError> {
    let mut rows = Vec::new();
    for &lat in latencies_ms {
        let p = path(lat);
        for &v in variants {
            let initial_ms = run_table4(v, HandshakeMode::Initial, p, seed)?;
            let resumed_ms = run_table4(v, HandshakeMode::Resumed, p, seed)?;
            let rtt = p.rtt_ms();
            let in_rtts = |ms: f64| (rtt > 0.0).then(|| ms / rtt);
            rows.push(Table4Row {
                latency_ms: lat,
                variant: v,
                initial_ms,
                resumed_ms,
                initial_rtts: in_rtts(initial_ms),
                resumed_rtts: in_rtts(resumed_ms),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_millisecond_latency_is_exact() {
        let d = run_table4(TcpVariant::Tfo, HandshakeMode::Initial, PathDelay::symmetric(0.3), 1)
            .unwrap();
        assert_eq!(d, 1.8);
    }

    #[test]
    fn zero_latency_zero_duration() {
        for v in TcpVariant::ALL {
            for m in [HandshakeMode::Initial, HandshakeMode::Resumed] {
                assert_eq!(run_table4(v, m, PathDelay::symmetric(0.0), 1).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn egress_only_round_trip_is_the_latency() {
        let d = run_table4(
            TcpVariant::Standard,
            HandshakeMode::Resumed,
            PathDelay::egress_only(50.0),
            1,
        )
        .unwrap();
        assert_eq!(d, 100.0);
    }

    #[test]
    fn negative_latency_rejected() {
        assert!(run_table4(
            TcpVariant::Standard,
            HandshakeMode::Initial,
            PathDelay::symmetric(-1.0),
            1
        )
        .is_err());
    }
}
