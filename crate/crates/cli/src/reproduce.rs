//! Regenerates the reference threshold grids, the leniency comparison and
//! the tie-risk estimates as CSV files.

use std::path::{Path, PathBuf};

use ballot_audit::priors::BetaDiscretization;
use ballot_audit::riskeval::simulate_outcomes;
use ballot_audit::tables::{build_table_with, compare_tables};
use ballot_audit::{Execution, LookupTable, PriorFamily, PriorSource, PriorSpec, RuleSpec, Schedule};
use clap::{Args, ValueEnum};

use crate::CliError;

const BIG_N: u64 = 100_000;
const GAMMAS: [f64; 7] = [0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001];
const RLA_BOUNDS: [f64; 3] = [0.1, 0.05, 0.005];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    /// k+ of the Bayesian audit (beta(1/2,1/2) prior) for seven upset bounds, N = 100000.
    BayesGrid,
    /// Bayesian RLA vs Bayesian audit k+ and their differences, N = 100000.
    RlaGrid,
    /// Four rules on N = 100, n = 9..78, compared for leniency.
    Leniency,
    /// Monte Carlo risk at a tie for the seven Bayesian tables.
    MaxRisk,
    All,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    target: Target,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Required when the target includes max-risk.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
}

fn beta_half(ballots: u64) -> PriorSource {
    PriorSource::Named(PriorSpec::new(
        ballots,
        PriorFamily::Beta { a: 0.5, b: 0.5, discretization: BetaDiscretization::Pointwise },
    ))
}

fn table(spec: &RuleSpec, schedule: &Schedule, exec: Execution) -> Result<LookupTable, CliError> {
    let rule = spec.compile().map_err(CliError::compute)?;
    build_table_with(&rule, schedule, exec).map_err(CliError::compute)
}

fn bayes_tables(exec: Execution) -> Result<Vec<LookupTable>, CliError> {
    GAMMAS
        .iter()
        .map(|&gamma| table(&RuleSpec::Bayesian { gamma, prior: beta_half(BIG_N) }, &Schedule::default(), exec))
        .collect()
}

fn header(first: &str, schedule: &Schedule) -> String {
    let cols: Vec<String> = schedule.sizes().iter().map(u64::to_string).collect();
    format!("{first},{}\n", cols.join(","))
}

fn k_plus_cells(t: &LookupTable) -> String {
    t.rows.iter().map(|r| r.k_plus.map(|k| k.to_string()).unwrap_or_default()).collect::<Vec<_>>().join(",")
}

fn write(dir: &Path, name: &str, body: &[u8]) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn bayes_grid(dir: &Path, exec: Execution) -> Result<(), CliError> {
    let mut csv = header("gamma", &Schedule::default());
    for (g, t) in GAMMAS.iter().zip(bayes_tables(exec)?) {
        csv.push_str(&format!("{g},{}\n", k_plus_cells(&t)));
    }
    write(dir, "bayes_k_plus.csv", csv.as_bytes())
}

fn rla_grid(dir: &Path, exec: Execution) -> Result<(), CliError> {
    let sched = Schedule::default();
    let mut k_csv = header("bound,audit", &sched);
    let mut d_csv = header("bound", &sched);
    for bound in RLA_BOUNDS {
        let rla = table(
            &RuleSpec::BayesianRla { alpha: bound, prior: PriorSource::Named(PriorSpec::new(BIG_N, PriorFamily::UniformWinning {})) },
            &sched,
            exec,
        )?;
        let std = table(&RuleSpec::Bayesian { gamma: bound, prior: beta_half(BIG_N) }, &sched, exec)?;
        k_csv.push_str(&format!("{bound},bayes-rla,{}\n", k_plus_cells(&rla)));
        k_csv.push_str(&format!("{bound},bayes,{}\n", k_plus_cells(&std)));
        let cmp = compare_tables(&[rla, std]).map_err(CliError::compute)?;
        let delta: Vec<String> = cmp.differences[0].delta.iter().map(i64::to_string).collect();
        d_csv.push_str(&format!("{bound},{}\n", delta.join(",")));
    }
    write(dir, "rla_vs_bayes_k_plus.csv", k_csv.as_bytes())?;
    write(dir, "rla_minus_bayes.csv", d_csv.as_bytes())
}

fn leniency(dir: &Path, exec: Execution) -> Result<(), CliError> {
    let (ballots, bound) = (100, 0.001);
    let sched = Schedule::contiguous(9, 78).map_err(CliError::compute)?;
    let named = |family| PriorSource::Named(PriorSpec::new(ballots, family));
    let specs = [
        RuleSpec::TraditionalRlaWithReplacement { p: 0.75, alpha: bound, beta: bound },
        RuleSpec::TraditionalRlaWithoutReplacement { p: 0.75, alpha: bound, beta: bound, ballots },
        RuleSpec::BayesianRla { alpha: bound, prior: named(PriorFamily::UniformWinning {}) },
        RuleSpec::Bayesian { gamma: bound, prior: named(PriorFamily::Uniform {}) },
    ];
    let tables = specs.iter().map(|s| table(s, &sched, exec)).collect::<Result<Vec<_>, _>>()?;
    let labels = ["rla", "rla-wor", "bayes-rla", "bayes"].map(String::from).to_vec();
    let cmp = ballot_audit::tables::compare_labeled(&tables, labels).map_err(CliError::compute)?;
    eprintln!("leniency ordering: {:?}", cmp.verdict);
    write(dir, "leniency_k_plus.csv", &cmp.k_plus_csv())?;
    write(dir, "leniency_differences.csv", &cmp.difference_csv())
}

fn max_risk(dir: &Path, seed: u64, trials: u64, exec: Execution) -> Result<(), CliError> {
    let tie = BIG_N / 2;
    let mut csv = String::from("gamma,trials,seed,confirm_only_risk,std_error,with_lower_stops_risk\n");
    for (g, t) in GAMMAS.iter().zip(bayes_tables(exec)?) {
        let mut upper_only = t.clone();
        upper_only.rows.iter_mut().for_each(|r| r.k_minus = None);
        let est = simulate_outcomes(&upper_only, BIG_N, tie, trials, seed, exec).map_err(CliError::compute)?.confirm_estimate();
        let both = simulate_outcomes(&t, BIG_N, tie, trials, seed, exec).map_err(CliError::compute)?.confirm_estimate();
        csv.push_str(&format!("{g},{trials},{seed},{},{},{}\n", est.value, est.std_error, both.value));
    }
    write(dir, "tie_risk.csv", csv.as_bytes())
}

pub fn run(args: &ReproduceArgs, exec: Execution) -> Result<(), CliError> {
    let wants = |t: Target| args.target == t || args.target == Target::All;
    let seed = if wants(Target::MaxRisk) {
        Some(args.seed.ok_or_else(|| CliError::Usage("--seed is required for max-risk".into()))?)
    } else {
        None
    };
    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::Compute(format!("{}: {e}", args.out_dir.display())))?;
    let dir = args.out_dir.as_path();
    if wants(Target::BayesGrid) {
        bayes_grid(dir, exec)?;
    }
    if wants(Target::RlaGrid) {
        rla_grid(dir, exec)?;
    }
    if wants(Target::Leniency) {
        leniency(dir, exec)?;
    }
    if let Some(seed) = seed {
        max_risk(dir, seed, args.trials, exec)?;
    }
    Ok(())
}
