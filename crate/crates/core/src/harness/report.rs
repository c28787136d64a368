// SPDX-License-Identifier: Apache-2.0

//! Reports: measured tables beside published reference values, with a
//! pass/fail line per check.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::experiments::{Evidence, PrivacyCell, SavingsDistribution, Table4Row};
use crate::transport::TcpVariant;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Published JSON schema for [`Report`].
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

/// Published reference values.
pub mod reference {
    /// Share of TFO revisits saving 0, 1 and 2 round trips, per revisit.
    pub const TFO_SAVINGS: [[f64; 3]; 3] = [
        [0.393, 0.607, 0.000],
        [0.246, 0.751, 0.003],
        [0.081, 0.785, 0.134],
    ];
    /// Mean TFO saving per revisit at a 60 ms round trip.
    pub const TFO_MEAN_SAVING_MS: [f64; 3] = [36.4, 45.5, 63.1];
    /// Mean saving of the privacy variant on any revisit at 60 ms.
    pub const FOP_MEAN_SAVING_MS: f64 = 120.0;
    pub const RTT_MS: u64 = 60;
    pub const SECONDARY_HOSTS: u32 = 19;
    /// Tolerance on a published percentage printed to one decimal.
    pub const PROBABILITY_TOLERANCE: f64 = 0.0015;
    pub const MEAN_TOLERANCE_MS: f64 = 0.2;

    /// Connection setup durations measured on a testbed, in ms:
    /// (latency, [plain initial, plain resumed, tfo initial, tfo resumed,
    /// fop initial, fop resumed]). Informational; they include host
    /// processing time the simulator does not model.
    pub const TABLE4_MEASURED_MS: [(f64, [f64; 6]); 4] = [
        (0.3, [28.9, 20.2, 29.9, 22.3, 29.6, 22.2]),
        (50.0, [189.8, 132.6, 190.0, 83.7, 190.0, 83.8]),
        (100.0, [340.2, 233.1, 340.3, 135.1, 340.7, 135.4]),
        (150.0, [490.3, 332.9, 490.7, 185.3, 491.1, 185.7]),
    ];

    /// Round trips per connection setup: (initial, resumed).
    pub fn round_trips(variant: crate::transport::TcpVariant) -> (f64, f64) {
        use crate::transport::TcpVariant::*;
        match variant {
            Standard => (3.0, 2.0),
            Tfo | Fop => (3.0, 1.0),
        }
    }

    /// Latency from which resumed setups must save more than half.
    pub const HALF_SAVING_FROM_MS: f64 = 25.0;
}

/// A measured value against an expected one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub measured: f64,
    pub reference: f64,
    pub abs_delta: f64,
    /// Absent when the reference is zero.
    pub rel_delta: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl Comparison {
    pub fn new(name: impl Into<String>, measured: f64, reference: f64, tolerance: f64) -> Self {
        let abs_delta = (measured - reference).abs();
        Comparison {
            name: name.into(),
            measured,
            reference,
            abs_delta,
            rel_delta: (reference != 0.0).then(|| abs_delta / reference.abs()),
            tolerance,
            // the epsilon absorbs float noise on exact comparisons
            pass: abs_delta <= tolerance + 1e-9,
        }
    }
}

/// A pass/fail outcome that is not a numeric comparison.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table4Section {
    pub egress_only: bool,
    pub rows: Vec<Table4Row>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table5Row {
    pub variant: TcpVariant,
    pub revisit: u32,
    /// Miss probability behind the analytic row.
    pub p: f64,
    pub analytic: SavingsDistribution<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub monte_carlo: Option<SavingsDistribution<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub counts: Option<[u64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table5Section {
    pub rtt_ms: u64,
    pub secondary_hosts: u32,
    pub trials: u64,
    pub p_by_revisit: Vec<f64>,
    pub rows: Vec<Table5Row>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: TcpVariant,
    pub completed: usize,
    pub unfinished: usize,
    pub evidence: Evidence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub table4: Option<Table4Section>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub table5: Option<Table5Section>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub privacy: Option<Vec<PrivacyCell>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub run: Option<Vec<RunResult>>,
    pub comparisons: Vec<Comparison>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// One line of the CSV form. Field order is the column order.
#[derive(Serialize)]
struct CsvRow<'a> {
    kind: &'static str,
    name: &'a str,
    measured: Option<f64>,
    reference: Option<f64>,
    abs_delta: Option<f64>,
    rel_delta: Option<f64>,
    tolerance: Option<f64>,
    pass: bool,
    detail: &'a str,
}

pub const CSV_COLUMNS: [&str; 9] = [
    "kind",
    "name",
    "measured",
    "reference",
    "abs_delta",
    "rel_delta",
    "tolerance",
    "pass",
    "detail",
];

impl Report {
    pub fn new(command: &str, config: ScenarioConfig) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.to_string(),
            seed: config.seed,
            config,
            table4: None,
            table5: None,
            privacy: None,
            run: None,
            comparisons: Vec::new(),
            checks: Vec::new(),
            passed: true,
        }
    }

    pub fn compare(&mut self, c: Comparison) {
        self.passed &= c.pass;
        self.comparisons.push(c);
    }

    pub fn check(&mut self, c: Check) {
        self.passed &= c.pass;
        self.checks.push(c);
    }

    pub fn failures(&self) -> Vec<&str> {
        let cmp = self.comparisons.iter().filter(|c| !c.pass).map(|c| c.name.as_str());
        let chk = self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str());
        cmp.chain(chk).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Comparisons then checks, one per line, in [`CSV_COLUMNS`] order.
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.comparisons {
            out.serialize(CsvRow {
                kind: "comparison",
                name: &c.name,
                measured: Some(c.measured),
                reference: Some(c.reference),
                abs_delta: Some(c.abs_delta),
                rel_delta: c.rel_delta,
                tolerance: Some(c.tolerance),
                pass: c.pass,
                detail: "",
            })?;
        }
        for c in &self.checks {
            out.serialize(CsvRow {
                kind: "check",
                name: &c.name,
                measured: None,
                reference: None,
                abs_delta: None,
                rel_delta: None,
                tolerance: None,
                pass: c.pass,
                detail: &c.detail,
            })?;
        }
        if self.comparisons.is_empty() && self.checks.is_empty() {
            out.write_record(CSV_COLUMNS)?;
        }
        out.flush()
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparison_deltas() {
        let c = Comparison::new("x", 0.39, 0.393, 0.0015);
        assert!((c.abs_delta - 0.003).abs() < 1e-12);
        assert!(!c.pass);
        assert!((c.rel_delta.unwrap() - 0.003 / 0.393).abs() < 1e-12);
        assert_eq!(Comparison::new("z", 0.0, 0.0, 0.0).rel_delta, None);
        assert!(Comparison::new("z", 0.0, 0.0, 0.0).pass);
    }

    #[test]
    fn any_failure_fails_the_report() {
        let mut r = Report::new("t", ScenarioConfig::new(0));
        r.check(Check::new("a", true, ""));
        assert!(r.passed);
        r.compare(Comparison::new("b", 1.0, 2.0, 0.5));
        assert!(!r.passed);
        assert_eq!(r.failures(), vec!["b"]);
    }

    #[test]
    fn csv_header_is_fixed() {
        let mut r = Report::new("t", ScenarioConfig::new(0));
        let empty = r.to_csv();
        assert_eq!(empty.lines().next().unwrap(), CSV_COLUMNS.join(","));
        r.check(Check::new("a", true, "ok"));
        r.compare(Comparison::new("b", 1.0, 1.0, 0.0));
        let text = r.to_csv();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        assert_eq!(lines[1], "comparison,b,1.0,1.0,0.0,0.0,0.0,true,");
        assert_eq!(lines[2], "check,a,,,,,,true,ok");
    }
}
