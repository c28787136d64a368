// SPDX-License-Identifier: Apache-2.0

pub mod adversary;
pub mod capture;
pub mod cookie;
pub mod experiments;
pub mod harness;
pub mod names;
pub mod rng;
pub mod sim;
pub mod tls;
pub mod transport;
pub mod world;

/// Revisit savings in double precision.
pub type Savings = experiments::SavingsDistribution<f64>;
/// Revisit savings in single precision.
pub type Savings32 = experiments::SavingsDistribution<f32>;
