// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{
    ConfigError, Expectation, PrivacyCellName, PrivacyConfig, ScenarioConfig, Table4Config,
    Table5Config,
};
use super::report::{
    reference, Check, Comparison, Report, RunResult, Table4Section, Table5Row, Table5Section,
};
use crate::adversary::{observe, write_json_lines, HostObservation};
use crate::capture::{Capture, CaptureError};
use crate::experiments::random::max_cleartext_repeats;
use crate::experiments::{
    published_model, run_privacy_matrix, table4_rows, table5_montecarlo, AnalyticError,
    ContextPolicy, Evidence, MonteCarloConfig, MonteCarloError, PathDelay, Policy,
    RevisitFailureModel, SavingsDistribution, Scenario, ScriptError, ScriptRun, Verdict,
    WebsiteModel,
};
use crate::rng::SeedTree;
use crate::sim::SimError;
use crate::transport::TcpVariant;
use crate::world::{WorldError, WAN_TAP};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read {path}: {source}")]
    ReadConfig {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error("malformed artifact: {0}")]
    Artifact(#[from] serde_json::Error),
}

/// A file produced beside the report, named relative to the output
/// directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub report: Report,
    pub artifacts: Vec<Artifact>,
}

/// Ground truth written beside a capture so evidence can be recomputed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub passive_segments: Vec<String>,
    pub host_segments: Vec<String>,
}

/// Recomputes evidence from the three files emitted for a run.
pub fn rederive_evidence(
    capture: &[u8],
    host_jsonl: &[u8],
    labels_json: &[u8],
) -> Result<Evidence, HarnessError> {
    let capture = Capture::from_bytes(capture)?;
    let passive = observe(capture.tap(WAN_TAP));
    let host = serde_json::Deserializer::from_slice(host_jsonl)
        .into_iter::<HostObservation>()
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Labels = serde_json::from_slice(labels_json)?;
    Ok(Evidence::derive(
        &passive,
        &labels.passive_segments,
        &host,
        &labels.host_segments,
    ))
}

fn run_artifacts(prefix: &str, run: &ScriptRun) -> Vec<Artifact> {
    let mut host = Vec::new();
    write_json_lines(&run.host, &mut host).expect("writing to a Vec cannot fail");
    let labels = Labels {
        passive_segments: run.passive_segments.clone(),
        host_segments: run.host_segments.clone(),
    };
    vec![
        Artifact {
            name: format!("{prefix}.fopcap"),
            bytes: run.capture.to_bytes(),
        },
        Artifact {
            name: format!("{prefix}.host.jsonl"),
            bytes: host,
        },
        Artifact {
            name: format!("{prefix}.labels.json"),
            bytes: serde_json::to_vec_pretty(&labels).expect("labels serialize"),
        },
    ]
}

fn sub_seed(seed: u64, name: &str) -> u64 {
    SeedTree::new(seed).stream(name).random()
}

fn latency_label(ms: f64) -> String {
    format!("{ms}ms")
}

fn add_table4(report: &mut Report, t4: &Table4Config) -> Result<(), HarnessError> {
    let path: fn(f64) -> PathDelay = if t4.egress_only {
        PathDelay::egress_only
    } else {
        PathDelay::symmetric
    };
    let rows = table4_rows(&t4.latencies_ms, &TcpVariant::ALL, path, report.seed)?;
    for row in &rows {
        let rtt = path(row.latency_ms).rtt_ms();
        let (initial, resumed) = reference::round_trips(row.variant);
        let cell = format!("table4.{}.{}", row.variant, latency_label(row.latency_ms));
        report.compare(Comparison::new(
            format!("{cell}.initial_ms"),
            row.initial_ms,
            initial * rtt,
            0.0,
        ));
        report.compare(Comparison::new(
            format!("{cell}.resumed_ms"),
            row.resumed_ms,
            resumed * rtt,
            0.0,
        ));
        // one-way latency d, or the whole latency when it sits on egress
        let d = if t4.egress_only { rtt } else { rtt / 2.0 };
        if row.variant != TcpVariant::Standard && d >= reference::HALF_SAVING_FROM_MS {
            let saving = row.resumed_saving();
            report.check(Check::new(
                format!("{cell}.resumed_saves_over_half"),
                saving > 0.5,
                format!("resumed setup saves {:.1} %", saving * 100.0),
            ));
        }
    }
    for &lat in &t4.latencies_ms {
        let resumed = |v| rows.iter().find(|r| r.latency_ms == lat && r.variant == v).map(|r| r.resumed_ms);
        if let (Some(tfo), Some(fop)) = (resumed(TcpVariant::Tfo), resumed(TcpVariant::Fop)) {
            report.compare(Comparison::new(
                format!("table4.{}.fop_resumed_vs_tfo", latency_label(lat)),
                fop,
                tfo,
                0.0,
            ));
        }
    }
    report.table4 = Some(Table4Section {
        egress_only: t4.egress_only,
        rows,
    });
    Ok(())
}

fn is_published_model(p: &[f64]) -> bool {
    let published = published_model().p_by_revisit;
    p.len() == published.len() && p.iter().zip(&published).all(|(a, b)| (a - b).abs() < 1e-12)
}

/// Standard deviation of the saving, in round trips, of one trial.
fn saving_sd(d: &SavingsDistribution<f64>) -> f64 {
    let mean = d.save1 + 2.0 * d.save2;
    let second = d.save1 + 4.0 * d.save2;
    (second - mean * mean).max(0.0).sqrt()
}

fn add_table5(report: &mut Report, cfg: &ScenarioConfig, t5: &Table5Config) -> Result<(), HarnessError> {
    let p_list = cfg.p_by_revisit();
    let n = cfg.website.secondary_hosts;
    let rtt = t5.rtt_ms as f64;
    let model = RevisitFailureModel::new(p_list.clone())
        .map_err(|e| ConfigError { key: "failure.p_by_revisit".into(), line: None, message: e.to_string() })?;
    let with_reference = is_published_model(&p_list)
        && n == reference::SECONDARY_HOSTS
        && t5.rtt_ms == reference::RTT_MS;
    let site = WebsiteModel::synthetic(n, cfg.website.pool_size, &model)?;
    let mut rows = Vec::new();
    // plain TCP is the baseline the savings are measured against
    for &variant in cfg.variants.iter().filter(|&&v| v != TcpVariant::Standard) {
        let mc = if cfg.trials > 0 {
            let mc_cfg = MonteCarloConfig {
                revisits: t5.revisits,
                rtt_ms: t5.rtt_ms,
                visit_gap_ms: cfg.website.visit_gap_ms,
                lifetime_ms: cfg.lifetime_ms,
                ..MonteCarloConfig::new(
                    variant,
                    cfg.trials,
                    sub_seed(cfg.seed, &format!("table5/{variant}")),
                )
            };
            Some(table5_montecarlo(&site, &mc_cfg)?)
        } else {
            None
        };
        for r in 1..=t5.revisits {
            let p = model.p(r);
            let analytic = match variant {
                TcpVariant::Fop => SavingsDistribution::hostname_bound(n, rtt)?,
                _ => SavingsDistribution::address_bound(p, n, rtt)?,
            };
            let cell = format!("table5.{variant}.revisit{r}");
            let probs = analytic.probabilities();
            report.compare(Comparison::new(
                format!("{cell}.analytic_total"),
                probs.iter().sum(),
                1.0,
                1e-12,
            ));
            if with_reference && (r as usize) <= reference::TFO_SAVINGS.len() {
                let i = r as usize - 1;
                match variant {
                    TcpVariant::Tfo => {
                        for (k, (&got, &want)) in probs.iter().zip(&reference::TFO_SAVINGS[i]).enumerate() {
                            report.compare(Comparison::new(
                                format!("{cell}.save{k}"),
                                got,
                                want,
                                reference::PROBABILITY_TOLERANCE,
                            ));
                        }
                        report.compare(Comparison::new(
                            format!("{cell}.mean_saving_ms"),
                            analytic.mean_saving,
                            reference::TFO_MEAN_SAVING_MS[i],
                            reference::MEAN_TOLERANCE_MS,
                        ));
                    }
                    _ => report.compare(Comparison::new(
                        format!("{cell}.mean_saving_ms"),
                        analytic.mean_saving,
                        reference::FOP_MEAN_SAVING_MS,
                        0.0,
                    )),
                }
            }
            let tally = mc.as_ref().map(|m| m[r as usize - 1].clone());
            let empirical = tally.as_ref().map(|t| t.distribution(rtt));
            if let (Some(t), Some(e)) = (&tally, &empirical) {
                let trials = t.trials() as f64;
                for (k, (&got, &want)) in e.probabilities().iter().zip(&probs).enumerate() {
                    report.compare(Comparison::new(
                        format!("{cell}.monte_carlo_save{k}"),
                        got,
                        want,
                        3.0 * (want * (1.0 - want) / trials).sqrt(),
                    ));
                }
                report.compare(Comparison::new(
                    format!("{cell}.monte_carlo_mean_saving_ms"),
                    e.mean_saving,
                    analytic.mean_saving,
                    3.0 * rtt * saving_sd(&analytic) / trials.sqrt(),
                ));
            }
            rows.push(Table5Row {
                variant,
                revisit: r,
                p,
                analytic,
                monte_carlo: empirical,
                counts: tally.map(|t| t.counts),
            });
        }
    }
    report.table5 = Some(Table5Section {
        rtt_ms: t5.rtt_ms,
        secondary_hosts: n,
        trials: cfg.trials,
        p_by_revisit: p_list,
        rows,
    });
    Ok(())
}

/// Verdict every published cell has under the per-scenario policy.
pub fn expected_verdict(variant: TcpVariant, scenario: Scenario) -> Option<Verdict> {
    match variant {
        TcpVariant::Tfo if scenario == Scenario::IpChange => Some(Verdict::Blocked),
        TcpVariant::Tfo => Some(Verdict::Viable),
        TcpVariant::Fop => Some(Verdict::Blocked),
        TcpVariant::Standard => None,
    }
}

fn privacy_cells(cfg: &ScenarioConfig, p: &PrivacyConfig) -> Vec<PrivacyCellName> {
    if p.cells.is_empty() {
        cfg.variants
            .iter()
            .flat_map(|&variant| Scenario::ALL.map(|scenario| PrivacyCellName { variant, scenario }))
            .collect()
    } else {
        // names were checked when the config was validated
        p.cells.iter().map(|c| c.parse().expect("validated cell")).collect()
    }
}

fn add_privacy(
    report: &mut Report,
    artifacts: &mut Vec<Artifact>,
    cfg: &ScenarioConfig,
    p: &PrivacyConfig,
) -> Result<(), HarnessError> {
    let policy = Policy {
        contexts: cfg.context_policy,
        lifetime_ms: cfg.lifetime_ms,
    };
    let published_policy = policy == Policy::default();
    let mut cells = Vec::new();
    for name in privacy_cells(cfg, p) {
        let (cell, run) = run_privacy_matrix(name.variant, name.scenario, policy, cfg.seed)?;
        let prefix = format!("privacy/{}-{}", name.variant, name.scenario);
        let files = run_artifacts(&prefix, &run);
        let again = rederive_evidence(&files[0].bytes, &files[1].bytes, &files[2].bytes)?;
        report.check(Check::new(
            format!("privacy.{name}.evidence_from_capture"),
            again == cell.evidence,
            format!("recomputed from {prefix}.*"),
        ));
        report.check(Check::new(
            format!("privacy.{name}.complete"),
            run.unfinished == 0,
            format!("{} connections left open", run.unfinished),
        ));
        if name.variant == TcpVariant::Fop {
            report.check(Check::new(
                format!("privacy.{name}.passive_singletons"),
                cell.evidence.passive_largest_component <= 1,
                format!("largest passive component {}", cell.evidence.passive_largest_component),
            ));
        }
        if let (true, Some(want)) = (published_policy, expected_verdict(name.variant, name.scenario)) {
            report.check(Check::new(
                format!("privacy.{name}.verdict"),
                cell.verdict == want,
                format!("{:?}, expected {:?}", cell.verdict, want).to_lowercase(),
            ));
        }
        if name.scenario == Scenario::NatRotation && name.variant != TcpVariant::Standard {
            add_nat_checks(report, &format!("privacy.{name}"), name.variant, &cell.evidence, policy);
        }
        artifacts.extend(files);
        cells.push(cell);
    }
    report.privacy = Some(cells);
    Ok(())
}

fn add_nat_checks(report: &mut Report, cell: &str, variant: TcpVariant, e: &Evidence, policy: Policy) {
    let periods = format!(
        "cookie tracking {} ms, address tracking {} ms",
        e.host_tracking_period_ms, e.address_tracking_period_ms
    );
    match variant {
        TcpVariant::Tfo => {
            report.check(Check::new(
                format!("{cell}.outlasts_address_tracking"),
                e.host_tracking_period_ms > e.address_tracking_period_ms,
                periods,
            ));
            report.check(Check::new(
                format!("{cell}.issuance_chain"),
                e.issuance_chain,
                "replacement cookie links the old and new address",
            ));
        }
        _ => report.check(Check::new(
            format!("{cell}.within_lifetime"),
            e.host_tracking_period_ms <= policy.lifetime_ms,
            format!("{periods}, lifetime {} ms", policy.lifetime_ms),
        )),
    }
}

fn evaluate(e: &Expectation, run: &ScriptRun, evidence: &Evidence, cfg: &ScenarioConfig) -> Check {
    let name = e.name();
    match e {
        Expectation::TrackingPeriodExceedsBaseline { .. } => Check::new(
            name,
            evidence.host_tracking_period_ms > evidence.address_tracking_period_ms,
            format!(
                "cookie tracking {} ms, address tracking {} ms",
                evidence.host_tracking_period_ms, evidence.address_tracking_period_ms
            ),
        ),
        Expectation::TrackingPeriodAtMost { ms, .. } => {
            let bound = ms.unwrap_or(cfg.lifetime_ms);
            Check::new(
                name,
                evidence.host_tracking_period_ms <= bound,
                format!("cookie tracking {} ms, bound {bound} ms", evidence.host_tracking_period_ms),
            )
        }
        Expectation::IssuanceChain { present, .. } => Check::new(
            name,
            evidence.issuance_chain == *present,
            format!("issuance chain present: {}", evidence.issuance_chain),
        ),
        Expectation::Verdict { verdict, .. } => Check::new(
            name,
            evidence.verdict() == *verdict,
            format!("{:?}", evidence.verdict()).to_lowercase(),
        ),
        Expectation::PassiveSingletons { .. } => Check::new(
            name,
            evidence.passive_largest_component <= 1,
            format!("largest passive component {}", evidence.passive_largest_component),
        ),
        Expectation::CookieCleartextOnce { .. } => {
            let n = max_cleartext_repeats(run);
            Check::new(name, n <= 1, format!("most frequent cookie seen {n} times"))
        }
    }
}

fn add_script(
    report: &mut Report,
    artifacts: &mut Vec<Artifact>,
    cfg: &ScenarioConfig,
) -> Result<(), HarnessError> {
    let Some(script) = &cfg.script else {
        return Ok(());
    };
    let mut results = Vec::new();
    for &variant in &cfg.variants {
        let run = script.run(variant, cfg.world_config(), cfg.seed)?;
        let evidence = Evidence::from_run(&run);
        report.check(Check::new(
            format!("run.{variant}.complete"),
            run.unfinished == 0,
            format!("{} connections left open", run.unfinished),
        ));
        for e in cfg.expect.iter().filter(|e| e.variant() == variant) {
            report.check(evaluate(e, &run, &evidence, cfg));
        }
        artifacts.extend(run_artifacts(&format!("run/{variant}"), &run));
        results.push(RunResult {
            variant,
            completed: run.completions.len(),
            unfinished: run.unfinished,
            evidence,
        });
    }
    report.run = Some(results);
    Ok(())
}

/// Connection setup durations for every variant, initial and resumed.
pub fn cmd_table4(cfg: &ScenarioConfig) -> Result<Output, HarnessError> {
    cfg.validate()?;
    let mut report = Report::new("table4", cfg.clone());
    add_table4(&mut report, cfg.table4.as_ref().unwrap_or(&Table4Config::default()))?;
    Ok(Output {
        report,
        artifacts: Vec::new(),
    })
}

/// Revisit savings, analytic and, with `trials > 0`, simulated.
pub fn cmd_table5(cfg: &ScenarioConfig) -> Result<Output, HarnessError> {
    cfg.validate()?;
    let mut report = Report::new("table5", cfg.clone());
    add_table5(&mut report, cfg, cfg.table5.as_ref().unwrap_or(&Table5Config::default()))?;
    Ok(Output {
        report,
        artifacts: Vec::new(),
    })
}

/// The privacy matrix, or the cells listed in the config.
pub fn cmd_privacy(cfg: &ScenarioConfig) -> Result<Output, HarnessError> {
    cfg.validate()?;
    let mut report = Report::new("privacy", cfg.clone());
    let mut artifacts = Vec::new();
    let p = cfg.privacy.clone().unwrap_or_default();
    add_privacy(&mut report, &mut artifacts, cfg, &p)?;
    Ok(Output { report, artifacts })
}

/// Every section the config contains.
pub fn cmd_run(cfg: &ScenarioConfig) -> Result<Output, HarnessError> {
    cfg.validate()?;
    let mut report = Report::new("run", cfg.clone());
    let mut artifacts = Vec::new();
    if let Some(t4) = &cfg.table4 {
        add_table4(&mut report, t4)?;
    }
    if let Some(t5) = &cfg.table5 {
        add_table5(&mut report, cfg, t5)?;
    }
    if let Some(p) = &cfg.privacy {
        add_privacy(&mut report, &mut artifacts, cfg, p)?;
    }
    add_script(&mut report, &mut artifacts, cfg)?;
    Ok(Output { report, artifacts })
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::ReadConfig {
        path: path.display().to_string(),
        source,
    })?;
    Ok(ScenarioConfig::parse(&text)?)
}

/// The NAT-rotation scenario as a config file, with its checks.
pub fn nat_rotation_config(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(seed);
    cfg.script = Some(Scenario::NatRotation.script(ContextPolicy::PerScenario));
    cfg.expect = vec![
        Expectation::TrackingPeriodExceedsBaseline {
            variant: TcpVariant::Tfo,
        },
        Expectation::IssuanceChain {
            variant: TcpVariant::Tfo,
            present: true,
        },
        Expectation::TrackingPeriodAtMost {
            variant: TcpVariant::Fop,
            ms: None,
        },
        Expectation::PassiveSingletons {
            variant: TcpVariant::Fop,
        },
        Expectation::CookieCleartextOnce {
            variant: TcpVariant::Fop,
        },
    ];
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Table4Config;

    #[test]
    fn table4_default_grid_passes() {
        let out = cmd_table4(&ScenarioConfig::new(1)).unwrap();
        let t4 = out.report.table4.as_ref().unwrap();
        assert_eq!(t4.rows.len(), 12);
        assert!(out.report.passed, "{:?}", out.report.failures());
    }

    #[test]
    fn zero_latency_gives_zero_durations() {
        let mut cfg = ScenarioConfig::new(1);
        cfg.table4 = Some(Table4Config {
            latencies_ms: vec![0.0],
            egress_only: false,
        });
        let out = cmd_table4(&cfg).unwrap();
        for row in &out.report.table4.unwrap().rows {
            assert_eq!((row.initial_ms, row.resumed_ms), (0.0, 0.0));
        }
    }

    #[test]
    fn egress_only_latency_is_one_round_trip() {
        let mut cfg = ScenarioConfig::new(1);
        cfg.table4 = Some(Table4Config {
            latencies_ms: vec![50.0],
            egress_only: true,
        });
        let out = cmd_table4(&cfg).unwrap();
        let rows = &out.report.table4.as_ref().unwrap().rows;
        let tfo = rows.iter().find(|r| r.variant == TcpVariant::Tfo).unwrap();
        assert_eq!((tfo.initial_ms, tfo.resumed_ms), (150.0, 50.0));
        assert!(out.report.passed, "{:?}", out.report.failures());
    }

    #[test]
    fn analytic_table5_matches_references() {
        let out = cmd_table5(&ScenarioConfig::new(1)).unwrap();
        assert!(out.report.passed, "{:?}", out.report.failures());
        let t5 = out.report.table5.unwrap();
        assert_eq!(t5.rows.len(), 6);
        assert!(t5.rows.iter().all(|r| r.monte_carlo.is_none()));
        // 9 cells + 3 means for TFO, 3 means for FOP, 6 totals
        assert_eq!(out.report.comparisons.len(), 21);
    }

    #[test]
    fn custom_p_list_drops_references() {
        let mut cfg = ScenarioConfig::new(1);
        cfg.failure.p_by_revisit = Some(vec![0.5]);
        cfg.table5 = Some(Table5Config {
            revisits: 1,
            ..Table5Config::default()
        });
        let out = cmd_table5(&cfg).unwrap();
        let tfo = &out.report.table5.as_ref().unwrap().rows[0];
        let want = SavingsDistribution::address_bound(0.5, 19, 60.0).unwrap();
        assert_eq!(tfo.analytic, want);
        assert!(out.report.comparisons.iter().all(|c| c.name.ends_with("analytic_total")));
    }

    #[test]
    fn small_monte_carlo_agrees() {
        let mut cfg = ScenarioConfig::new(4);
        cfg.trials = 300;
        let out = cmd_table5(&cfg).unwrap();
        assert!(out.report.passed, "{:?}", out.report.failures());
        let fop = out.report.table5.unwrap().rows.into_iter().find(|r| r.variant == TcpVariant::Fop).unwrap();
        assert_eq!(fop.counts, Some([0, 0, 300]));
    }

    #[test]
    fn single_privacy_cell() {
        let mut cfg = ScenarioConfig::new(2);
        cfg.privacy = Some(PrivacyConfig {
            cells: vec!["fop:restart".into()],
        });
        let out = cmd_privacy(&cfg).unwrap();
        let cells = out.report.privacy.as_ref().unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].verdict, Verdict::Blocked);
        assert!(out.report.passed, "{:?}", out.report.failures());
        assert_eq!(out.artifacts.len(), 3);
    }

    #[test]
    fn unknown_privacy_cell_is_an_error() {
        let mut cfg = ScenarioConfig::new(2);
        cfg.privacy = Some(PrivacyConfig {
            cells: vec!["fop:nowhere".into()],
        });
        let err = cmd_privacy(&cfg).unwrap_err().to_string();
        assert!(err.contains("privacy.cells[0]") && err.contains("nowhere"), "{err}");
    }

    #[test]
    fn nat_rotation_config_passes() {
        let out = cmd_run(&nat_rotation_config(5)).unwrap();
        assert!(out.report.passed, "{:?}", out.report.failures());
        let run = out.report.run.as_ref().unwrap();
        let tfo = run.iter().find(|r| r.variant == TcpVariant::Tfo).unwrap();
        assert!(tfo.evidence.host_tracking_period_ms > tfo.evidence.address_tracking_period_ms);
    }

    #[test]
    fn failed_expectation_fails_the_report() {
        let mut cfg = nat_rotation_config(5);
        cfg.expect.push(Expectation::IssuanceChain {
            variant: TcpVariant::Tfo,
            present: false,
        });
        let out = cmd_run(&cfg).unwrap();
        assert!(!out.report.passed);
        assert_eq!(out.report.failures(), vec!["run.tfo.issuance_chain"]);
    }
}
