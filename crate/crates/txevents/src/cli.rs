//! Command-line scenario runner.

use std::ffi::OsString;
use std::io::Write;

use clap::{ArgAction, Parser, ValueEnum};
use serde::Serialize;

use crate::engine::EngineConfig;
use crate::harness::scenarios::{self, Registered};
use crate::harness::{
    explore_outcomes, run_scenario, OracleBounds, OutcomeClass, RunStatus, SimConfig, MAX_ORACLE_COMMS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TraceFormat {
    Json,
    Text,
}

/// Run a registered scenario under the deterministic harness and print its
/// trace.
#[derive(Parser, Debug)]
#[command(name = "txevents", version)]
pub struct CliOptions {
    /// Scenario name (see --list).
    pub scenario: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TraceFormat::Json)]
    pub trace_format: TraceFormat,
    /// Use the virtual clock; `--virtual-time false` paces timers on the
    /// wall clock.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub virtual_time: bool,
    #[arg(long, default_value_t = 10_000)]
    pub max_steps: u64,
    /// Matched pairs allowed in one transaction.
    #[arg(long, default_value_t = 32)]
    pub max_comms: usize,
    /// Print the registered scenario names.
    #[arg(long)]
    pub list: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    seed: u64,
    status: RunStatus,
    steps: u64,
    commits: usize,
    summary: String,
    outcome: &'a OutcomeClass,
    expected: bool,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let opts = match CliOptions::try_parse_from(args) {
        Ok(o) => o,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    if opts.list {
        for r in scenarios::registry() {
            let _ = writeln!(out, "{:<32} {}", r.name, r.about);
        }
        return EXIT_OK;
    }
    let Some(name) = opts.scenario.as_deref() else {
        let _ = writeln!(err, "error: a scenario name is required (try --list)");
        return EXIT_USAGE;
    };
    let Some(reg) = scenarios::find(name) else {
        let _ = writeln!(err, "error: unknown scenario `{name}` (try --list)");
        return EXIT_USAGE;
    };
    let cfg = SimConfig {
        seed: opts.seed,
        virtual_time: opts.virtual_time,
        max_steps: opts.max_steps,
        engine: EngineConfig {
            max_comms_per_txn: opts.max_comms,
            ..EngineConfig::default()
        },
        oracle: OracleBounds {
            max_comms: opts.max_comms.clamp(1, MAX_ORACLE_COMMS),
            ..OracleBounds::default()
        },
    };
    if let Err(e) = cfg.validate() {
        let _ = writeln!(err, "error: {e}");
        return EXIT_USAGE;
    }
    run_registered(&reg, &cfg, opts.trace_format, out, err)
}

fn run_registered(
    reg: &Registered,
    cfg: &SimConfig,
    format: TraceFormat,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let scenario = (reg.build)();
    let report = match run_scenario(&scenario, cfg) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_MISMATCH;
        }
    };
    for rec in &report.trace {
        let _ = match format {
            TraceFormat::Json => writeln!(out, "{}", rec.to_json()),
            TraceFormat::Text => writeln!(out, "{rec}"),
        };
    }
    let expected = match &scenario.expected {
        Some(set) => Ok(set.clone()),
        None => explore_outcomes(&scenario, cfg),
    };
    let ok = match &expected {
        Ok(set) => report.status == RunStatus::Quiescent && set.contains(&report.outcome),
        Err(e) => {
            let _ = writeln!(err, "error: cannot compute the expected outcomes: {e}");
            false
        }
    };
    let summary = (reg.summary)(&report);
    match format {
        TraceFormat::Json => {
            let s = Summary {
                scenario: reg.name,
                seed: cfg.seed,
                status: report.status,
                steps: report.steps,
                commits: report.commits.len(),
                summary,
                outcome: &report.outcome,
                expected: ok,
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&s).expect("summary serializes"));
        }
        TraceFormat::Text => {
            let _ = writeln!(out, "outcome: {}", report.outcome);
            let _ = writeln!(out, "summary: {summary}");
            let _ = writeln!(out, "expected: {}", if ok { "yes" } else { "no" });
        }
    }
    if ok {
        EXIT_OK
    } else {
        if let Ok(set) = expected {
            let _ = writeln!(err, "outcome not among the {} expected classes", set.len());
        }
        EXIT_MISMATCH
    }
}
