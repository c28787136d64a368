// SPDX-License-Identifier: Apache-2.0

//! Repeated fetches of a multi-host website through the full simulator.

use std::net::{IpAddr, Ipv4Addr};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::analytic::SavingsDistribution;
use super::failure::RevisitFailureModel;
use crate::names::{ContextId, HostName};
use crate::rng::{SeedTree, SimRng};
use crate::sim::{Link, LoadBalancerModel, SimError, SimTime};
use crate::transport::TcpVariant;
use crate::world::{ConnectRequest, Outcome, PoolSpec, World, WorldConfig, WorldError};

pub const DEFAULT_SECONDARY_HOSTS: u32 = 19;
pub const DEFAULT_POOL_SIZE: usize = 8;
pub const DEFAULT_VISIT_GAP_MS: u64 = 600_000;

#[derive(Debug, thiserror::Error)]
pub enum MonteCarloError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("a fetch did not complete")]
    Incomplete,
    #[error("visit took {duration} ms against a {baseline} ms baseline with rtt {rtt} ms")]
    NonIntegralSaving { duration: u64, baseline: u64, rtt: u64 },
    #[error("round-trip time must be positive")]
    ZeroRtt,
}

/// A primary host followed by secondary hosts fetched in parallel, each
/// behind its own load-balanced pool.
#[derive(Clone, Debug)]
pub struct WebsiteModel {
    pub primary: LoadBalancerModel,
    pub secondaries: Vec<LoadBalancerModel>,
}

impl WebsiteModel {
    /// Hosts `www.site.example`, `res1.site.example`, … with `pool_size`
    /// addresses each, all sharing one failure model.
    pub fn synthetic(
        n_secondary: u32,
        pool_size: usize,
        model: &RevisitFailureModel,
    ) -> Result<Self, SimError> {
        let host = |i: u32| -> Result<LoadBalancerModel, SimError> {
            let name = if i == 0 {
                "www.site.example".to_string()
            } else {
                format!("res{i}.site.example")
            };
            let pool = (0..pool_size)
                .map(|k| IpAddr::V4(Ipv4Addr::new(198, 18 + (i / 250) as u8, (i % 250) as u8, k as u8 + 1)))
                .collect();
            LoadBalancerModel::new(
                HostName::new(&name).expect("valid name"),
                pool,
                model.p_by_revisit.clone(),
            )
        };
        Ok(WebsiteModel {
            primary: host(0)?,
            secondaries: (1..=n_secondary).map(host).collect::<Result<_, _>>()?,
        })
    }

    fn hosts(&self) -> impl Iterator<Item = &LoadBalancerModel> {
        std::iter::once(&self.primary).chain(&self.secondaries)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub variant: TcpVariant,
    pub revisits: u32,
    pub rtt_ms: u64,
    pub trials: u64,
    pub seed: u64,
    pub visit_gap_ms: u64,
    pub lifetime_ms: u64,
}

impl MonteCarloConfig {
    pub fn new(variant: TcpVariant, trials: u64, seed: u64) -> Self {
        MonteCarloConfig {
            variant,
            revisits: 3,
            rtt_ms: 60,
            trials,
            seed,
            visit_gap_ms: DEFAULT_VISIT_GAP_MS,
            lifetime_ms: 3_600_000,
        }
    }

    fn world_config(&self) -> WorldConfig {
        // odd round trips put the extra millisecond on the forward path
        let back = self.rtt_ms / 2;
        WorldConfig {
            wan: Link {
                one_way_delay: self.rtt_ms - back,
                reverse_delay: Some(back),
                taps: Vec::new(),
            },
            lifetime_ms: self.lifetime_ms,
            capture: false,
            ..WorldConfig::default()
        }
    }
}

/// Counts of trials saving 0, 1 and 2 round trips on one revisit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisitSavings {
    pub revisit: u32,
    pub counts: [u64; 3],
}

impl RevisitSavings {
    pub fn trials(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn distribution(&self, rtt_ms: f64) -> SavingsDistribution<f64> {
        SavingsDistribution::from_counts(self.counts, rtt_ms)
    }
}

/// Durations in milliseconds of visit 0 (initial) through visit
/// `revisits`.
pub fn simulate_visits(
    site: &WebsiteModel,
    cfg: &MonteCarloConfig,
    seeds: &SeedTree,
) -> Result<Vec<u64>, MonteCarloError> {
    let mut world = World::new(cfg.world_config(), seeds.stream("world").next_u64());
    let mut lb_rng: SimRng = seeds.stream("load-balancer");
    let client = world.add_client(IpAddr::V4(Ipv4Addr::new(100, 64, 0, 2)), None)?;
    for h in site.hosts() {
        world.add_pool(PoolSpec::new(vec![h.hostname().clone()], h.ip_pool().to_vec()))?;
    }
    let n_hosts = 1 + site.secondaries.len();
    let mut held: Vec<Vec<IpAddr>> = vec![Vec::new(); n_hosts];
    let mut durations = Vec::with_capacity(cfg.revisits as usize + 1);

    for visit in 0..=cfg.revisits {
        let t0 = SimTime::from_ms(visit as u64 * cfg.visit_gap_ms);
        let mut pick = |i: usize, lb: &LoadBalancerModel| -> Result<IpAddr, SimError> {
            let ip = if visit == 0 {
                lb.initial_ip(&mut lb_rng)
            } else {
                lb.select_ip(visit, &held[i], &mut lb_rng)?.ip
            };
            if !held[i].contains(&ip) {
                held[i].push(ip);
            }
            Ok(ip)
        };
        let request = |lb: &LoadBalancerModel, ip| ConnectRequest {
            client,
            hostname: lb.hostname().clone(),
            server_ip: ip,
            variant: cfg.variant,
            context: ContextId::default(),
            tag: 0,
        };
        let ip = pick(0, &site.primary)?;
        world.connect_at(t0, request(&site.primary, ip))?;
        world.run()?;
        let primary_end = stage_end(world.take_completions(), 1)?;
        for (i, lb) in site.secondaries.iter().enumerate() {
            let ip = pick(i + 1, lb)?;
            world.connect_at(primary_end, request(lb, ip))?;
        }
        world.run()?;
        let end = if site.secondaries.is_empty() {
            primary_end
        } else {
            stage_end(world.take_completions(), site.secondaries.len())?
        };
        durations.push(end.saturating_sub(t0));
    }
    Ok(durations)
}

fn stage_end(done: Vec<crate::world::Completion>, expected: usize) -> Result<SimTime, MonteCarloError> {
    if done.len() != expected || done.iter().any(|c| !matches!(c.outcome, Outcome::Response(_))) {
        return Err(MonteCarloError::Incomplete);
    }
    Ok(done.iter().map(|c| c.end).max().expect("non-empty stage"))
}

/// Duration of a revisit over plain TCP with resumed TLS: the reference
/// the savings are measured against.
pub fn baseline_revisit_ms(site: &WebsiteModel, cfg: &MonteCarloConfig) -> Result<u64, MonteCarloError> {
    let plain = MonteCarloConfig {
        variant: TcpVariant::Standard,
        revisits: 1,
        ..cfg.clone()
    };
    let d = simulate_visits(site, &plain, &SeedTree::new(cfg.seed).child("baseline"))?;
    Ok(d[1])
}

/// Runs `cfg.trials` independent trials and tallies the saving of each
/// revisit. Trials fan out across threads; the tally does not depend on
/// scheduling.
pub fn table5_montecarlo(
    site: &WebsiteModel,
    cfg: &MonteCarloConfig,
) -> Result<Vec<RevisitSavings>, MonteCarloError> {
    if cfg.rtt_ms == 0 {
        return Err(MonteCarloError::ZeroRtt);
    }
    let baseline = baseline_revisit_ms(site, cfg)?;
    let root = SeedTree::new(cfg.seed).child("trials");
    let revisits = cfg.revisits as usize;
    let bucket = |duration: u64| -> Result<usize, MonteCarloError> {
        match baseline.checked_sub(duration) {
            Some(saved) if saved % cfg.rtt_ms == 0 && saved / cfg.rtt_ms <= 2 => {
                Ok((saved / cfg.rtt_ms) as usize)
            }
            _ => Err(MonteCarloError::NonIntegralSaving {
                duration,
                baseline,
                rtt: cfg.rtt_ms,
            }),
        }
    };
    let counts = (0..cfg.trials)
        .into_par_iter()
        .map(|i| -> Result<Vec<[u64; 3]>, MonteCarloError> {
            let d = simulate_visits(site, cfg, &root.child_indexed("trial", i))?;
            let mut tally = vec![[0u64; 3]; revisits];
            for r in 1..=revisits {
                tally[r - 1][bucket(d[r])?] += 1;
            }
            Ok(tally)
        })
        .try_reduce(
            || vec![[0u64; 3]; revisits],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    for k in 0..3 {
                        x[k] += y[k];
                    }
                }
                Ok(a)
            },
        )?;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, counts)| RevisitSavings {
            revisit: i as u32 + 1,
            counts,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site(p: f64, n: u32) -> WebsiteModel {
        WebsiteModel::synthetic(n, 4, &RevisitFailureModel::new(vec![p]).unwrap()).unwrap()
    }

    #[test]
    fn visit_durations_follow_round_trip_structure() {
        let s = site(0.0, 3);
        let tree = SeedTree::new(5);
        let cfg = MonteCarloConfig::new(TcpVariant::Standard, 1, 5);
        assert_eq!(simulate_visits(&s, &cfg, &tree).unwrap(), vec![360, 240, 240, 240]);
        let cfg = MonteCarloConfig::new(TcpVariant::Tfo, 1, 5);
        assert_eq!(simulate_visits(&s, &cfg, &tree).unwrap(), vec![360, 120, 120, 120]);
    }

    #[test]
    fn no_misses_always_save_two() {
        let cfg = MonteCarloConfig::new(TcpVariant::Tfo, 50, 1);
        let out = table5_montecarlo(&site(0.0, 2), &cfg).unwrap();
        assert!(out.iter().all(|r| r.counts == [0, 0, 50]));
    }

    #[test]
    fn hostname_binding_ignores_misses() {
        let cfg = MonteCarloConfig::new(TcpVariant::Fop, 30, 1);
        let out = table5_montecarlo(&site(1.0, 2), &cfg).unwrap();
        assert!(out.iter().all(|r| r.counts == [0, 0, 30]));
        let cfg = MonteCarloConfig::new(TcpVariant::Tfo, 30, 1);
        let out = table5_montecarlo(&site(1.0, 2), &cfg).unwrap();
        assert!(out.iter().all(|r| r.counts == [30, 0, 0]));
    }

    #[test]
    fn tally_is_deterministic() {
        let cfg = MonteCarloConfig::new(TcpVariant::Tfo, 40, 9);
        let s = site(0.4, 3);
        assert_eq!(table5_montecarlo(&s, &cfg).unwrap(), table5_montecarlo(&s, &cfg).unwrap());
    }
}
