// SPDX-License-Identifier: Apache-2.0

use std::net::IpAddr;

use rand::Rng;

use super::SimError;
use crate::names::HostName;

/// A hostname served from a pool of addresses that share one cookie
/// secret, with the per-revisit chance that the serving address is one
/// the client holds no cookie for.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadBalancerModel {
    hostname: HostName,
    ip_pool: Vec<IpAddr>,
    failure_prob_by_revisit: Vec<f64>,
}

/// Outcome of [`LoadBalancerModel::select_ip`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LbChoice {
    pub ip: IpAddr,
    /// The client already holds a cookie for `ip`.
    pub eligible: bool,
}

impl LoadBalancerModel {
    pub fn new(
        hostname: HostName,
        ip_pool: Vec<IpAddr>,
        failure_prob_by_revisit: Vec<f64>,
    ) -> Result<Self, SimError> {
        if ip_pool.is_empty() {
            return Err(SimError::EmptyPool);
        }
        if let Some(&p) = failure_prob_by_revisit
            .iter()
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return Err(SimError::InvalidProbability(p));
        }
        Ok(LoadBalancerModel {
            hostname,
            ip_pool,
            failure_prob_by_revisit,
        })
    }

    pub fn hostname(&self) -> &HostName {
        &self.hostname
    }

    pub fn ip_pool(&self) -> &[IpAddr] {
        &self.ip_pool
    }

    /// p_r for revisit `r >= 1`; past the end of the list the last value
    /// repeats, and an empty list means no failures.
    pub fn failure_prob(&self, revisit: u32) -> Result<f64, SimError> {
        if revisit == 0 {
            return Err(SimError::InvalidRevisit);
        }
        let idx = (revisit as usize - 1).min(self.failure_prob_by_revisit.len().saturating_sub(1));
        Ok(self.failure_prob_by_revisit.get(idx).copied().unwrap_or(0.0))
    }

    /// Address for the very first visit.
    pub fn initial_ip<R: Rng + ?Sized>(&self, rng: &mut R) -> IpAddr {
        self.ip_pool[rng.random_range(0..self.ip_pool.len())]
    }

    /// Serving address for revisit `r`. `held` lists the pool addresses the
    /// client holds a cookie for. One uniform draw per call decides between
    /// a held address (probability 1 - p_r) and a fresh one (p_r).
    pub fn select_ip<R: Rng + ?Sized>(
        &self,
        revisit: u32,
        held: &[IpAddr],
        rng: &mut R,
    ) -> Result<LbChoice, SimError> {
        let p = self.failure_prob(revisit)?;
        let held_in_pool: Vec<IpAddr> = self
            .ip_pool
            .iter()
            .copied()
            .filter(|ip| held.contains(ip))
            .collect();
        let miss = held_in_pool.is_empty() || rng.random::<f64>() < p;
        if miss {
            let fresh: Vec<IpAddr> = self
                .ip_pool
                .iter()
                .copied()
                .filter(|ip| !held.contains(ip))
                .collect();
            if fresh.is_empty() {
                return Err(SimError::PoolExhausted);
            }
            let ip = fresh[rng.random_range(0..fresh.len())];
            Ok(LbChoice { ip, eligible: false })
        } else {
            let ip = held_in_pool[rng.random_range(0..held_in_pool.len())];
            Ok(LbChoice { ip, eligible: true })
        }
    }
}
