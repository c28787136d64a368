// SPDX-License-Identifier: Apache-2.0

pub mod analytic;
pub mod failure;
pub mod table4;
pub mod privacy;
pub mod random;
pub mod script;
pub mod website;

pub use analytic::{miss_probability_from_all_hit_share, AnalyticError, SavingsDistribution};
pub use failure::{
    derive_failure_model, published_model, published_stats, FailureModelError,
    IpObservationStats, RevisitFailureModel,
};
pub use table4::{run_table4, table4_rows, HandshakeMode, PathDelay, Table4Row};
pub use website::{
    simulate_visits, table5_montecarlo, MonteCarloConfig, MonteCarloError, RevisitSavings,
    WebsiteModel,
};
pub use script::{ClientDef, NatDef, PoolDef, Script, ScriptError, ScriptRun, Step};
pub use privacy::{
    run_privacy_matrix, ContextPolicy, Evidence, Policy, PrivacyCell, Scenario, UnknownScenario,
    Verdict,
};
pub use random::{has_revisit, random_script, unlinkability_trial, UnlinkabilityTrial};
