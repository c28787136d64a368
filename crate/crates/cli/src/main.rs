// SPDX-License-Identifier: Apache-2.0

//! `fopsim`: runs the experiments and writes reports.
//!
//! Exit status is 0 when every check in the report passes, 1 when one
//! fails and 2 for usage, configuration or runtime errors.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fopsim::experiments::ContextPolicy;
use fopsim::harness::{
    cmd_privacy, cmd_run, cmd_table4, cmd_table5, load_config, HarnessError, Output,
    PrivacyConfig, ScenarioConfig, Table4Config, Table5Config,
};

const DEFAULT_OUT: &str = "fopsim-out";

#[derive(Parser, Debug)]
#[command(name = "fopsim", version, about = "Fast Open handshake and privacy lab")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Top-level seed every random stream derives from.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trials; 0 reports analytic values only.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Round-trip time in ms.
    #[arg(long, global = true)]
    rtt: Option<f64>,
    /// Lifetime of privacy-variant cookies and tickets, in ms.
    #[arg(long, global = true)]
    lifetime: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "FOPSIM_OUT", default_value = DEFAULT_OUT)]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Connection setup durations, initial and resumed, per variant.
    Table4 {
        /// Path latency in ms; repeat for several rows.
        #[arg(long = "latency")]
        latencies: Vec<f64>,
        /// Apply each latency on the client's egress only.
        #[arg(long)]
        egress_only: bool,
    },
    /// Round trips saved on revisits of a website.
    Table5 {
        /// Miss probability per revisit; repeat for revisits 1, 2, ...
        #[arg(long = "p")]
        p: Vec<f64>,
        #[arg(long)]
        revisits: Option<u32>,
    },
    /// Tracking verdicts per variant and scenario.
    Privacy {
        /// A `variant:scenario` cell, e.g. `fop:restart`; repeatable.
        #[arg(long = "cell")]
        cells: Vec<String>,
        /// One context for every visit.
        #[arg(long)]
        shared_context: bool,
    },
    /// Everything a scenario config file describes.
    Run { config: PathBuf },
}

fn base_config(common: &Common, file: Option<ScenarioConfig>) -> ScenarioConfig {
    let mut cfg = file.unwrap_or_else(|| ScenarioConfig::new(0));
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    if let Some(l) = common.lifetime {
        cfg.lifetime_ms = l;
    }
    if let Some(rtt) = common.rtt {
        cfg.topology.one_way_ms = rtt / 2.0;
        cfg.topology.reverse_ms = None;
        if let Some(t5) = &mut cfg.table5 {
            t5.rtt_ms = rtt.round() as u64;
        }
    }
    cfg
}

fn build(cli: &Cli) -> Result<(ScenarioConfig, fn(&ScenarioConfig) -> Result<Output, HarnessError>), HarnessError> {
    let c = &cli.common;
    Ok(match &cli.command {
        Command::Table4 {
            latencies,
            egress_only,
        } => {
            let mut cfg = base_config(c, None);
            let mut t4 = Table4Config {
                egress_only: *egress_only,
                ..Table4Config::default()
            };
            if !latencies.is_empty() {
                t4.latencies_ms = latencies.clone();
            } else if let Some(rtt) = c.rtt {
                t4.latencies_ms = vec![if *egress_only { rtt } else { rtt / 2.0 }];
            }
            cfg.table4 = Some(t4);
            (cfg, cmd_table4)
        }
        Command::Table5 { p, revisits } => {
            let mut cfg = base_config(c, None);
            if cli.common.trials.is_none() {
                cfg.trials = 10_000;
            }
            let mut t5 = Table5Config::default();
            if let Some(rtt) = c.rtt {
                t5.rtt_ms = rtt.round() as u64;
            }
            if !p.is_empty() {
                t5.revisits = p.len() as u32;
                cfg.failure.p_by_revisit = Some(p.clone());
            }
            if let Some(r) = revisits {
                t5.revisits = *r;
            }
            cfg.table5 = Some(t5);
            (cfg, cmd_table5)
        }
        Command::Privacy {
            cells,
            shared_context,
        } => {
            let mut cfg = base_config(c, None);
            if *shared_context {
                cfg.context_policy = ContextPolicy::Shared;
            }
            cfg.privacy = Some(PrivacyConfig {
                cells: cells.clone(),
            });
            (cfg, cmd_privacy)
        }
        Command::Run { config } => {
            let file = load_config(config)?;
            (base_config(c, Some(file)), cmd_run)
        }
    })
}

fn write_output(out: &Output, dir: &Path, format: Format) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let command = &out.report.command;
    let path = match format {
        Format::Json => {
            let p = dir.join(format!("{command}.json"));
            fs::write(&p, out.report.to_json())?;
            p
        }
        Format::Csv => {
            let p = dir.join(format!("{command}.csv"));
            fs::write(&p, out.report.to_csv())?;
            p
        }
    };
    for a in &out.artifacts {
        let p = dir.join(&a.name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(p, &a.bytes)?;
    }
    Ok(path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, command) = match build(&cli) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("fopsim: {e}");
            return ExitCode::from(2);
        }
    };
    let out = match command(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("fopsim: {e}");
            return ExitCode::from(2);
        }
    };
    let path = match write_output(&out, &cli.common.out, cli.common.format) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("fopsim: writing to {}: {e}", cli.common.out.display());
            return ExitCode::from(2);
        }
    };
    let r = &out.report;
    let total = r.comparisons.len() + r.checks.len();
    for name in r.failures() {
        println!("FAIL {name}");
    }
    println!(
        "{} {}/{} checks passed, report in {}",
        if r.passed { "PASS" } else { "FAIL" },
        total - r.failures().len(),
        total,
        path.display()
    );
    if r.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
