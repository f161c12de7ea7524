//! `pana`: validate scenarios, run them through the simulator and report on
//! the resulting audit logs.
//!
//! Exit status: 0 on success, 1 when a scenario or input file is invalid,
//! 2 when a run stops at `max_ticks` (its partial output is still written).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pana_core::report::{export_ledger, ledger_rows, Report};
use pana_core::scenario::Scenario;
use pana_core::sim::{self, RunStatus};

#[derive(Parser)]
#[command(name = "pana", version, about = "Wireless access-control protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a scenario and write audit.tsv, transcript.tsv, ledger.tsv and report.txt.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Summarize an audit export and check its invariants.
    Report {
        #[arg(long)]
        audit: PathBuf,
        /// Ledger export of the same run, enables the balance cross-check.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Machine,
}

const INVALID: u8 = 1;
const TRUNCATED: u8 = 2;

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Validate { scenario } => validate(&scenario),
        Command::Run { scenario, seed, out, format } => run(&scenario, seed, &out, format),
        Command::Report { audit, ledger, format } => report(&audit, ledger.as_deref(), format),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(INVALID)
        }
    }
}

fn validate(path: &Path) -> Result<u8, String> {
    let scenario = Scenario::load(path).map_err(|e| e.to_string())?;
    println!("ok: {} ({})", scenario.name, path.display());
    Ok(0)
}

fn run(path: &Path, seed: Option<u64>, out_dir: &Path, format: Format) -> Result<u8, String> {
    let scenario = Scenario::load(path).map_err(|e| e.to_string())?;
    let seed = seed.unwrap_or(scenario.seed);
    let outcome = sim::run(&scenario, seed).map_err(|e| e.to_string())?;

    let audit = outcome.audit.export();
    let ledger = export_ledger(&ledger_rows(&outcome.initial_ledger, &outcome.final_ledger));
    let report = Report::from_export(&audit, Some(&ledger)).map_err(|e| e.to_string())?;
    let status = match outcome.status {
        RunStatus::Completed => "completed",
        RunStatus::MaxTicksExceeded => "max-ticks-exceeded",
    };
    let header = [
        ("scenario", scenario.name.clone()),
        ("seed", seed.to_string()),
        ("status", status.to_string()),
        ("end_tick", outcome.end_tick.to_string()),
    ];
    let rendered = render(&report, &header, format);

    fs::create_dir_all(out_dir).map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    for (name, body) in [
        ("audit.tsv", audit.as_str()),
        ("transcript.tsv", &outcome.transcript_export()),
        ("ledger.tsv", &ledger),
        ("report.txt", &rendered),
    ] {
        let file = out_dir.join(name);
        fs::write(&file, body).map_err(|e| format!("cannot write {}: {e}", file.display()))?;
    }
    print!("{rendered}");

    if outcome.status == RunStatus::MaxTicksExceeded {
        eprintln!("run stopped at max_ticks = {}; output is partial", scenario.max_ticks);
        return Ok(TRUNCATED);
    }
    Ok(0)
}

fn report(audit: &Path, ledger: Option<&Path>, format: Format) -> Result<u8, String> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()));
    let audit_text = read(audit)?;
    let ledger_text = ledger.map(read).transpose()?;
    let report = Report::from_export(&audit_text, ledger_text.as_deref()).map_err(|e| e.to_string())?;
    print!("{}", render(&report, &[("audit", audit.display().to_string())], format));
    Ok(0)
}

fn render(report: &Report, header: &[(&str, String)], format: Format) -> String {
    match format {
        Format::Text => report.render_text(header),
        Format::Machine => report.render_machine(header),
    }
}
