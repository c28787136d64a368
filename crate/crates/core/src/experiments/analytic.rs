// SPDX-License-Identifier: Apache-2.0

//! Closed-form savings of an abbreviated handshake on a website revisit.
//!
//! A fetch has two sequential stages: the primary host, then `n` secondary
//! hosts in parallel. Each stage saves one round trip when every connection
//! in it gets 0-RTT. Each connection misses independently with probability
//! `p`, so with `q = 1 - p`:
//!
//! ```text
//! P(save 2) = q^(n+1)
//! P(save 0) = p · (1 - q^n)
//! P(save 1) = 1 - P(save 0) - P(save 2)
//! mean      = rtt · (P(save 1) + 2·P(save 2))
//! ```
//!
//! With no secondary hosts there is no second stage, so at most one round
//! trip is saved.

use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnalyticError {
    #[error("miss probability must lie in [0, 1]")]
    ProbabilityOutOfRange,
    #[error("round-trip time must be finite and non-negative")]
    InvalidRtt,
    #[error("share must lie in (0, 1]")]
    ShareOutOfRange,
}

/// How many round trips a revisit saves, as a distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavingsDistribution<T> {
    pub save0: T,
    pub save1: T,
    pub save2: T,
    /// Expected saving in the unit of the round-trip time given.
    pub mean_saving: T,
}

impl<T: Float> SavingsDistribution<T> {
    fn check_rtt(rtt: T) -> Result<(), AnalyticError> {
        if !rtt.is_finite() || rtt < T::zero() {
            return Err(AnalyticError::InvalidRtt);
        }
        Ok(())
    }

    fn from_probs(save0: T, save2: T, rtt: T) -> Self {
        let save1 = T::one() - save0 - save2;
        let two = T::one() + T::one();
        SavingsDistribution {
            save0,
            save1,
            save2,
            mean_saving: rtt * (save1 + two * save2),
        }
    }

    /// Address-bound cookies: each connection misses with probability `p`.
    pub fn address_bound(p: T, n_secondary: u32, rtt: T) -> Result<Self, AnalyticError> {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(AnalyticError::ProbabilityOutOfRange);
        }
        Self::check_rtt(rtt)?;
        if n_secondary == 0 {
            return Ok(Self::from_probs(p, T::zero(), rtt));
        }
        let q = T::one() - p;
        let all_secondaries = q.powi(n_secondary as i32);
        let save2 = q * all_secondaries;
        let save0 = p * (T::one() - all_secondaries);
        Ok(Self::from_probs(save0, save2, rtt))
    }

    /// Hostname-bound cookies never miss on a revisit.
    pub fn hostname_bound(n_secondary: u32, rtt: T) -> Result<Self, AnalyticError> {
        Self::check_rtt(rtt)?;
        let all = if n_secondary == 0 { T::zero() } else { T::one() };
        Ok(Self::from_probs(T::zero(), all, rtt))
    }

    /// Empirical distribution from counts of trials saving 0, 1, 2 round
    /// trips.
    pub fn from_counts(counts: [u64; 3], rtt: T) -> Self {
        let total = T::from(counts.iter().sum::<u64>()).unwrap();
        if total == T::zero() {
            return Self::from_probs(T::zero(), T::zero(), rtt);
        }
        let f = |c: u64| T::from(c).unwrap() / total;
        Self::from_probs(f(counts[0]), f(counts[2]), rtt)
    }

    pub fn probabilities(&self) -> [T; 3] {
        [self.save0, self.save1, self.save2]
    }
}

/// Per-connection miss probability that makes a fetch of `connections`
/// hosts all-hit with probability `all_hit_share`: `1 - share^(1/connections)`.
pub fn miss_probability_from_all_hit_share<T: Float>(
    all_hit_share: T,
    connections: u32,
) -> Result<T, AnalyticError> {
    if !(all_hit_share > T::zero() && all_hit_share <= T::one()) || connections == 0 {
        return Err(AnalyticError::ShareOutOfRange);
    }
    let exp = T::one() / T::from(connections).unwrap();
    Ok(T::one() - all_hit_share.powf(exp))
}
