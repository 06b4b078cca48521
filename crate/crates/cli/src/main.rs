//! `ballot-audit`: lookup tables, risk evaluation, comparisons and live
//! sessions for two-candidate ballot-polling audits.
//!
//! Exit status: 0 on success, 1 when a computation fails, 2 on usage errors.

mod audit;
mod reproduce;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ballot_audit::priors::max_losing_tally;
use ballot_audit::riskeval::{exact_outcome, max_risk, simulate_outcomes, RiskConfig, DEFAULT_EXACT_BALLOT_CAP};
use ballot_audit::session::Election;
use ballot_audit::tables::{build_table_with, compare_labeled, emit_table, parse_table_json, Format};
use ballot_audit::{Execution, LookupTable, RiskMethod, SessionState, SessionStatus};
use clap::{Args, Parser, Subcommand, ValueEnum};

use audit::AuditArgs;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Compute(String),
}

impl CliError {
    fn compute(e: impl std::fmt::Display) -> Self {
        CliError::Compute(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "ballot-audit", version, about = "Two-candidate ballot-polling audit decision engine")]
struct Cli {
    /// Worker threads for parallel work (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// TOML file with default audit settings (keys match the long flags).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a lookup table and print it.
    Table {
        #[command(flatten)]
        audit: AuditArgs,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Exact true risk (dynamic program or enumeration).
    Risk {
        #[command(flatten)]
        source: TableSource,
        #[arg(long, value_enum, default_value = "dp")]
        method: ExactMethod,
        /// Evaluate these tallies only (repeatable). Default: every losing tally.
        #[arg(long)]
        x: Vec<u64>,
        /// Largest N the exact scan accepts.
        #[arg(long, default_value_t = DEFAULT_EXACT_BALLOT_CAP)]
        exact_cap: u64,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Monte Carlo audit outcomes at given tallies.
    Simulate {
        #[command(flatten)]
        source: TableSource,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Master seed; required so every run is reproducible.
        #[arg(long, required = true)]
        seed: Option<u64>,
        /// True winner tallies (repeatable). Default: floor(N/2).
        #[arg(long)]
        x: Vec<u64>,
        /// Ignore k- so audits only stop by confirming.
        #[arg(long)]
        confirm_only: bool,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compare k+ across tables written by `table --format json`.
    Compare {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        /// Comma-separated labels, one per table.
        #[arg(long)]
        labels: Option<String>,
        #[arg(long, value_enum, default_value = "k-plus")]
        output: CompareOutput,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run an audit interactively, one round per input line.
    Session {
        #[command(flatten)]
        audit: AuditArgs,
        #[arg(long, default_value = "winner")]
        winner: String,
        #[arg(long, default_value = "loser")]
        loser: String,
        /// Continue a session from its exported trail.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write the audit trail here when the session ends.
        #[arg(long)]
        trail: Option<PathBuf>,
    },
    /// Regenerate the reference tables and plot data.
    Reproduce(reproduce::ReproduceArgs),
}

#[derive(Args)]
struct OutArgs {
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TableSource {
    #[command(flatten)]
    audit: AuditArgs,
    /// Use a table JSON file instead of building one from the audit flags.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExactMethod {
    Dp,
    Enum,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompareOutput {
    KPlus,
    Differences,
    Json,
}

fn write_out(out: &OutArgs, bytes: &[u8]) -> Result<(), CliError> {
    match &out.out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| CliError::Compute(format!("{}: {e}", path.display()))),
        None => std::io::stdout().write_all(bytes).map_err(CliError::compute),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn read_table(path: &Path) -> Result<LookupTable, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_table_json(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn build(audit: &AuditArgs, exec: Execution) -> Result<LookupTable, CliError> {
    let rule = audit.rule()?.compile().map_err(|e| CliError::Usage(e.to_string()))?;
    build_table_with(&rule, &audit.schedule()?, exec).map_err(|e| CliError::Usage(e.to_string()))
}

/// The table plus the ballot count risk evaluation should use.
fn load(source: &TableSource, config: Option<&Path>, exec: Execution) -> Result<(LookupTable, u64), CliError> {
    let audit = source.audit.merged(config)?;
    let table = match &source.table {
        Some(path) => read_table(path)?,
        None => build(&audit, exec)?,
    };
    let ballots = table
        .ballots
        .or(audit.ballots)
        .ok_or_else(|| CliError::Usage("--N is required for tables sampled with replacement".into()))?;
    Ok((table, ballots))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let config = cli.config.as_deref();
    match cli.command {
        Command::Table { audit, format, out } => {
            let table = build(&audit.merged(config)?, exec)?;
            write_out(&out, &emit_table(&table, format))
        }
        Command::Risk { source, method, x, exact_cap, format, out } => {
            let (table, ballots) = load(&source, config, exec)?;
            let method = match method {
                ExactMethod::Dp => RiskMethod::ExactDp,
                ExactMethod::Enum => RiskMethod::Enumeration,
            };
            let cfg = RiskConfig { exec, exact_ballot_cap: exact_cap };
            if x.is_empty() {
                let report = max_risk(&table, ballots, &method, &cfg).map_err(CliError::compute)?;
                eprintln!("max risk {} at x = {}", report.max_risk, report.argmax);
                return write_out(&out, &if format == Format::Json { to_json(&report) } else { report.to_csv() });
            }
            let mut rows = Vec::new();
            for &xi in &x {
                let o = exact_outcome(&table, ballots, xi, &method, &cfg).map_err(CliError::compute)?;
                rows.push(serde_json::json!({"x": xi, "confirm": o.confirm, "hand_count": o.hand_count, "exhausted": o.exhausted}));
            }
            if format == Format::Json {
                return write_out(&out, &to_json(&rows));
            }
            let mut csv = String::from("x,confirm,hand_count,exhausted\n");
            for r in &rows {
                csv.push_str(&format!("{},{},{},{}\n", r["x"], r["confirm"], r["hand_count"], r["exhausted"]));
            }
            write_out(&out, csv.as_bytes())
        }
        Command::Simulate { source, trials, seed, x, confirm_only, format, out } => {
            let seed = seed.expect("clap enforces --seed");
            let (mut table, ballots) = load(&source, config, exec)?;
            if confirm_only {
                table.rows.iter_mut().for_each(|r| r.k_minus = None);
            }
            let xs = if x.is_empty() { vec![max_losing_tally(ballots)] } else { x };
            let mut rows = Vec::new();
            for &xi in &xs {
                let c = simulate_outcomes(&table, ballots, xi, trials, seed, exec).map_err(CliError::compute)?;
                let est = c.confirm_estimate();
                rows.push(serde_json::json!({
                    "x": xi, "trials": c.trials, "confirm": c.confirm, "hand_count": c.hand_count,
                    "exhausted": c.exhausted, "risk": est.value, "std_error": est.std_error, "seed": seed,
                }));
            }
            if format == Format::Json {
                return write_out(&out, &to_json(&rows));
            }
            let mut csv = String::from("x,trials,confirm,hand_count,exhausted,risk,std_error\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r["x"], r["trials"], r["confirm"], r["hand_count"], r["exhausted"], r["risk"], r["std_error"]
                ));
            }
            write_out(&out, csv.as_bytes())
        }
        Command::Compare { tables, labels, output, out } => {
            let loaded = tables.iter().map(|p| read_table(p)).collect::<Result<Vec<_>, _>>()?;
            let labels = match labels {
                Some(l) => l.split(',').map(str::to_string).collect::<Vec<_>>(),
                None => loaded.iter().map(LookupTable::label).collect(),
            };
            if labels.len() != loaded.len() {
                return Err(CliError::Usage(format!("{} labels for {} tables", labels.len(), loaded.len())));
            }
            let cmp = compare_labeled(&loaded, labels).map_err(|e| CliError::Usage(e.to_string()))?;
            eprintln!("ordering: {:?}", cmp.verdict);
            let bytes = match output {
                CompareOutput::KPlus => cmp.k_plus_csv(),
                CompareOutput::Differences => cmp.difference_csv(),
                CompareOutput::Json => to_json(&cmp),
            };
            write_out(&out, &bytes)
        }
        Command::Session { audit, winner, loser, resume, trail } => {
            let mut session = match resume {
                Some(path) => {
                    let bytes = std::fs::read(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                    SessionState::import_trail(&bytes).map_err(|e| CliError::Usage(e.to_string()))?
                }
                None => {
                    let audit = audit.merged(config)?;
                    let table = build(&audit, exec)?;
                    let ballots = table
                        .ballots
                        .or(audit.ballots)
                        .ok_or_else(|| CliError::Usage("--N is required".into()))?;
                    SessionState::from_table(uuid::Uuid::new_v4(), Election { ballots, winner, loser }, table)
                }
            };
            let stdin = std::io::stdin();
            interactive(&mut session, stdin.lock(), std::io::stdout().lock())?;
            if let Some(path) = trail {
                std::fs::write(&path, session.export_trail())
                    .map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        }
        Command::Reproduce(args) => reproduce::run(&args, exec),
    }
}

/// Reads `k` or `n k` per line; `quit` or end of input stops early.
fn interactive(session: &mut SessionState, input: impl BufRead, mut out: impl Write) -> Result<(), CliError> {
    let io = CliError::compute;
    writeln!(out, "session {} | N = {} | {}", session.id, session.election.ballots, session.table.label()).map_err(io)?;
    writeln!(out, "n,k_plus,k_minus").map_err(io)?;
    for row in &session.table.rows {
        let cell = |v: Option<u64>| v.map(|k| k.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", row.n, cell(row.k_plus), cell(row.k_minus)).map_err(io)?;
    }
    let mut lines = input.lines();
    while let Some(n) = session.next_round() {
        write!(out, "round {} of {}: cumulative winner ballots among the first {n} drawn? ", session.rounds.len() + 1, session.planned_rounds())
            .map_err(io)?;
        out.flush().map_err(io)?;
        let Some(line) = lines.next() else { break };
        let line = line.map_err(io)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        let parsed = match words.as_slice() {
            [] => continue,
            ["quit"] | ["q"] => break,
            [k] => k.parse().map(|k| (n, k)).ok(),
            [n_in, k] => n_in.parse().ok().zip(k.parse().ok()),
            _ => None,
        };
        let Some((n_in, k)) = parsed else {
            writeln!(out, "\nexpected `k` or `n k`").map_err(io)?;
            continue;
        };
        match session.record_round(n_in, k) {
            Ok(verdict) => {
                let advice = match session.status {
                    SessionStatus::Active => format!("draw to n = {}", session.next_round().unwrap_or(n_in)),
                    SessionStatus::ConfirmedWinner => format!("stop: {} confirmed", session.election.winner),
                    SessionStatus::HandCount => "stop: full hand count".into(),
                    SessionStatus::Exhausted => "schedule exhausted: full hand count".into(),
                };
                writeln!(out, "\nverdict {verdict}: {advice}").map_err(io)?;
            }
            Err(e) => writeln!(out, "\nrejected: {e}").map_err(io)?,
        }
    }
    writeln!(out, "status {}", session.status).map_err(io)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let jobs = cli.jobs;
    match ballot_audit::par::with_jobs(jobs, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Compute(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
