//! True risk of a lookup-table audit.
//!
//! For a true winner tally `x` the multi-round audit defined by a table
//! confirms, escalates via `k⁻`, or runs out of rounds. The probability of
//! confirming when `x` is a losing tally is the audit's true risk. Three
//! independent routes compute it:
//!
//! * an exact dynamic program over cumulative winner counts at round
//!   boundaries, with hypergeometric transitions between rounds;
//! * exhaustive enumeration of ballot arrangements (tiny `N` only), used as
//!   the oracle for the dynamic program;
//! * seeded Monte Carlo, drawing each round's increment from the
//!   hypergeometric law.
//!
//! An audit still undecided after its last scheduled round goes to a hand
//! count; it is reported separately as `exhausted`.

use std::io::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Hypergeometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hypergeom::{log_binomial, log_factorials};
use crate::par::Execution;
use crate::priors::{is_winning_tally, max_losing_tally, Prior};
use crate::rules::Sampling;
use crate::tables::LookupTable;

/// Largest `N` the exact scans accept unless configured otherwise.
pub const DEFAULT_EXACT_BALLOT_CAP: u64 = 2000;
/// Largest `N` exhaustive enumeration accepts.
pub const MAX_ENUMERATION_BALLOTS: u64 = 15;
const TRIALS_PER_BATCH: u64 = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("table samples with replacement; use the binomial dynamic program")]
    WithReplacementTable,
    #[error("table samples without replacement; use the hypergeometric dynamic program")]
    WithoutReplacementTable,
    #[error("tally x = {x} is outside 0..={ballots}")]
    TallyOutOfRange { x: u64, ballots: u64 },
    #[error("table was built for N = {table}, evaluation requested for N = {requested}")]
    BallotMismatch { table: u64, requested: u64 },
    #[error("schedule reaches n = {n} but only {ballots} ballots exist")]
    ScheduleExceedsBallots { n: u64, ballots: u64 },
    #[error("enumeration needs N <= {max}, got {ballots}")]
    TooLargeForEnumeration { ballots: u64, max: u64 },
    #[error("exact evaluation capped at N <= {cap}, got {ballots}")]
    TooLargeForExact { ballots: u64, cap: u64 },
    #[error("prior has no mass on {0} tallies")]
    OneSidedPrior(&'static str),
    #[error("at least one trial is required")]
    NoTrials,
}

/// Probabilities of the three ways an audit ends.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AuditOutcome {
    /// Stopped with the announced winner confirmed.
    pub confirm: f64,
    /// Stopped at or below `k⁻`.
    pub hand_count: f64,
    /// Undecided after the final round (also proceeds to a hand count).
    pub exhausted: f64,
}

impl AuditOutcome {
    /// Probability of any hand count, decided or by exhaustion.
    pub fn any_hand_count(&self) -> f64 {
        self.hand_count + self.exhausted
    }
}

fn check_common(table: &LookupTable, ballots: u64, x: u64) -> Result<(), RiskError> {
    if x > ballots {
        return Err(RiskError::TallyOutOfRange { x, ballots });
    }
    if let Some(t) = table.ballots {
        if t != ballots {
            return Err(RiskError::BallotMismatch { table: t, requested: ballots });
        }
    }
    Ok(())
}

fn check_without_replacement(table: &LookupTable, ballots: u64, x: u64) -> Result<(), RiskError> {
    if table.sampling() != Sampling::WithoutReplacement {
        return Err(RiskError::WithReplacementTable);
    }
    check_common(table, ballots, x)?;
    let last = table.schedule.last();
    if last > ballots {
        return Err(RiskError::ScheduleExceedsBallots { n: last, ballots });
    }
    Ok(())
}

/// Moves absorbed mass out of `dist` after a round and tallies it.
fn absorb(dist: &mut [f64], row: &crate::rules::ThresholdPair, out: &mut AuditOutcome) {
    if let Some(kp) = row.k_plus {
        for p in dist.iter_mut().skip(kp as usize) {
            out.confirm += *p;
            *p = 0.0;
        }
    }
    if let Some(km) = row.k_minus {
        for p in dist.iter_mut().take(km as usize + 1) {
            out.hand_count += *p;
            *p = 0.0;
        }
    }
}

/// Exact outcome probabilities for sampling without replacement.
pub fn exact_outcome_dp(table: &LookupTable, ballots: u64, x: u64) -> Result<AuditOutcome, RiskError> {
    check_without_replacement(table, ballots, x)?;
    let lf = log_factorials(ballots);
    let mut out = AuditOutcome::default();
    // dist[k]: probability of being undecided with k winner ballots drawn.
    let mut dist = vec![1.0f64];
    let mut drawn = 0u64;
    for row in &table.rows {
        let step = row.n - drawn;
        let remaining = ballots - drawn;
        let mut next = vec![0.0f64; row.n as usize + 1];
        for (k, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let k = k as u64;
            let winners_left = x - k;
            let lo = (step + winners_left).saturating_sub(remaining);
            let hi = step.min(winners_left);
            for j in lo..=hi {
                let t = lf.ln_hg_unchecked(j as i64, remaining, winners_left, step).exp();
                next[(k + j) as usize] += p * t;
            }
        }
        absorb(&mut next, row, &mut out);
        dist = next;
        drawn = row.n;
    }
    out.exhausted = dist.iter().sum();
    Ok(out)
}

/// Probability that the audit confirms when the true tally is `x`.
pub fn exact_risk_dp(table: &LookupTable, ballots: u64, x: u64) -> Result<f64, RiskError> {
    exact_outcome_dp(table, ballots, x).map(|o| o.confirm)
}

/// Exact outcome probabilities for sampling with replacement, each draw a
/// winner ballot with probability `x / N`.
pub fn exact_outcome_dp_binomial(table: &LookupTable, ballots: u64, x: u64) -> Result<AuditOutcome, RiskError> {
    if table.sampling() != Sampling::WithReplacement {
        return Err(RiskError::WithoutReplacementTable);
    }
    check_common(table, ballots, x)?;
    let p = x as f64 / ballots as f64;
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    let mut out = AuditOutcome::default();
    let mut dist = vec![1.0f64];
    let mut drawn = 0u64;
    for row in &table.rows {
        let step = row.n - drawn;
        let pmf: Vec<f64> = (0..=step)
            .map(|j| {
                let ln = log_binomial(step, j as i64).ln()
                    + if j == 0 { 0.0 } else { j as f64 * ln_p }
                    + if j == step { 0.0 } else { (step - j) as f64 * ln_q };
                ln.exp()
            })
            .collect();
        let mut next = vec![0.0f64; row.n as usize + 1];
        for (k, &pk) in dist.iter().enumerate() {
            if pk == 0.0 {
                continue;
            }
            for (j, &t) in pmf.iter().enumerate() {
                next[k + j] += pk * t;
            }
        }
        absorb(&mut next, row, &mut out);
        dist = next;
        drawn = row.n;
    }
    out.exhausted = dist.iter().sum();
    Ok(out)
}

pub fn exact_risk_dp_binomial(table: &LookupTable, ballots: u64, x: u64) -> Result<f64, RiskError> {
    exact_outcome_dp_binomial(table, ballots, x).map(|o| o.confirm)
}

/// Outcome probabilities by walking every arrangement of `x` winner ballots
/// among `N` positions; a uniformly random draw order makes all
/// arrangements equally likely.
pub fn exact_outcome_enum(table: &LookupTable, ballots: u64, x: u64) -> Result<AuditOutcome, RiskError> {
    if ballots > MAX_ENUMERATION_BALLOTS {
        return Err(RiskError::TooLargeForEnumeration { ballots, max: MAX_ENUMERATION_BALLOTS });
    }
    check_without_replacement(table, ballots, x)?;
    let mut counts = [0u64; 3];
    let mut arrangements = 0u64;
    for mask in 0u32..(1u32 << ballots) {
        if u64::from(mask.count_ones()) != x {
            continue;
        }
        arrangements += 1;
        let mut ended = 2;
        for row in &table.rows {
            let prefix = if row.n >= 32 { mask } else { mask & ((1u32 << row.n) - 1) };
            let k = u64::from(prefix.count_ones());
            if row.k_plus.is_some_and(|kp| k >= kp) {
                ended = 0;
                break;
            }
            if row.k_minus.is_some_and(|km| k <= km) {
                ended = 1;
                break;
            }
        }
        counts[ended] += 1;
    }
    let total = arrangements as f64;
    Ok(AuditOutcome {
        confirm: counts[0] as f64 / total,
        hand_count: counts[1] as f64 / total,
        exhausted: counts[2] as f64 / total,
    })
}

pub fn exact_risk_enum(table: &LookupTable, ballots: u64, x: u64) -> Result<f64, RiskError> {
    exact_outcome_enum(table, ballots, x).map(|o| o.confirm)
}

/// Monte Carlo tallies of audit endings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub trials: u64,
    pub confirm: u64,
    pub hand_count: u64,
    pub exhausted: u64,
}

impl OutcomeCounts {
    fn merge(self, o: OutcomeCounts) -> OutcomeCounts {
        OutcomeCounts {
            trials: self.trials + o.trials,
            confirm: self.confirm + o.confirm,
            hand_count: self.hand_count + o.hand_count,
            exhausted: self.exhausted + o.exhausted,
        }
    }

    pub fn confirm_estimate(&self) -> Estimate {
        Estimate::from_counts(self.confirm, self.trials)
    }
}

/// A proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl Estimate {
    pub fn from_counts(hits: u64, trials: u64) -> Estimate {
        let p = hits as f64 / trials as f64;
        Estimate { value: p, std_error: (p * (1.0 - p) / trials as f64).sqrt(), trials }
    }
}

fn simulate_trial(table: &LookupTable, ballots: u64, x: u64, rng: &mut ChaCha8Rng) -> usize {
    let mut drawn = 0u64;
    let mut k = 0u64;
    for row in &table.rows {
        let step = row.n - drawn;
        let inc = Hypergeometric::new(ballots - drawn, x - k, step).expect("valid urn").sample(rng);
        k += inc;
        drawn = row.n;
        if row.k_plus.is_some_and(|kp| k >= kp) {
            return 0;
        }
        if row.k_minus.is_some_and(|km| k <= km) {
            return 1;
        }
    }
    2
}

/// Simulates `trials` audits of an election whose announced winner truly has
/// `x` votes. Trial `i` draws from ChaCha8 stream `i` of `master_seed`, so
/// the counts depend only on `(master_seed, trials)`.
pub fn simulate_outcomes(
    table: &LookupTable,
    ballots: u64,
    x: u64,
    trials: u64,
    master_seed: u64,
    exec: Execution,
) -> Result<OutcomeCounts, RiskError> {
    check_without_replacement(table, ballots, x)?;
    if trials == 0 {
        return Err(RiskError::NoTrials);
    }
    let batches = trials.div_ceil(TRIALS_PER_BATCH);
    let per_batch = exec.map_indexed(batches as usize, |b| {
        let start = b as u64 * TRIALS_PER_BATCH;
        let end = (start + TRIALS_PER_BATCH).min(trials);
        let mut counts = OutcomeCounts { trials: end - start, ..Default::default() };
        for trial in start..end {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(trial);
            match simulate_trial(table, ballots, x, &mut rng) {
                0 => counts.confirm += 1,
                1 => counts.hand_count += 1,
                _ => counts.exhausted += 1,
            }
        }
        counts
    });
    Ok(per_batch.into_iter().fold(OutcomeCounts::default(), OutcomeCounts::merge))
}

pub fn simulate_risk(
    table: &LookupTable,
    ballots: u64,
    x: u64,
    trials: u64,
    master_seed: u64,
    exec: Execution,
) -> Result<Estimate, RiskError> {
    simulate_outcomes(table, ballots, x, trials, master_seed, exec).map(|c| c.confirm_estimate())
}

/// How to evaluate risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum RiskMethod {
    ExactDp,
    Enumeration,
    MonteCarlo {
        trials: u64,
        seed: u64,
        /// Losing tallies evaluated in addition to `⌊N/2⌋`.
        #[serde(default)]
        extra_tallies: Vec<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RiskConfig {
    pub exec: Execution,
    pub exact_ballot_cap: u64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig { exec: Execution::default(), exact_ballot_cap: DEFAULT_EXACT_BALLOT_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyRisk {
    pub x: u64,
    pub risk: f64,
    /// Present for Monte Carlo estimates.
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    #[serde(rename = "N")]
    pub ballots: u64,
    pub method: RiskMethod,
    pub per_tally: Vec<TallyRisk>,
    pub max_risk: f64,
    pub argmax: u64,
}

impl RiskReport {
    /// `x,risk,std_error` rows.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        writeln!(out, "x,risk,std_error").expect("in-memory write");
        for t in &self.per_tally {
            let se = t.std_error.map(|s| s.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", t.x, t.risk, se).expect("in-memory write");
        }
        out
    }
}

/// Outcome at tally `x` by an exact method.
pub fn exact_outcome(
    table: &LookupTable,
    ballots: u64,
    x: u64,
    method: &RiskMethod,
    config: &RiskConfig,
) -> Result<AuditOutcome, RiskError> {
    match method {
        RiskMethod::Enumeration => exact_outcome_enum(table, ballots, x),
        _ => {
            if ballots > config.exact_ballot_cap {
                return Err(RiskError::TooLargeForExact { ballots, cap: config.exact_ballot_cap });
            }
            match table.sampling() {
                Sampling::WithoutReplacement => exact_outcome_dp(table, ballots, x),
                Sampling::WithReplacement => exact_outcome_dp_binomial(table, ballots, x),
            }
        }
    }
}

/// Maximum true risk over losing tallies `0..=⌊N/2⌋`.
pub fn max_risk(
    table: &LookupTable,
    ballots: u64,
    method: &RiskMethod,
    config: &RiskConfig,
) -> Result<RiskReport, RiskError> {
    let hardest = max_losing_tally(ballots);
    let per_tally: Vec<TallyRisk> = match method {
        RiskMethod::ExactDp | RiskMethod::Enumeration => {
            let xs: Vec<u64> = (0..=hardest).collect();
            config
                .exec
                .map_slice(&xs, |&x| exact_outcome(table, ballots, x, method, config).map(|o| TallyRisk { x, risk: o.confirm, std_error: None }))
                .into_iter()
                .collect::<Result<_, _>>()?
        }
        RiskMethod::MonteCarlo { trials, seed, extra_tallies } => {
            let mut xs = vec![hardest];
            xs.extend(extra_tallies.iter().copied().filter(|&x| x <= hardest));
            xs.sort_unstable();
            xs.dedup();
            xs.iter()
                .map(|&x| {
                    simulate_risk(table, ballots, x, *trials, *seed, config.exec)
                        .map(|e| TallyRisk { x, risk: e.value, std_error: Some(e.std_error) })
                })
                .collect::<Result<_, _>>()?
        }
    };
    let best = per_tally
        .iter()
        .fold(None::<&TallyRisk>, |acc, t| match acc {
            Some(a) if a.risk >= t.risk => Some(a),
            _ => Some(t),
        })
        .expect("at least one losing tally");
    Ok(RiskReport { ballots, method: method.clone(), max_risk: best.risk, argmax: best.x, per_tally: per_tally.clone() })
}

/// Prior-weighted error rates of a lookup-table audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorErrors {
    /// Miss probability: confirming given the announced winner lost.
    pub p_m: f64,
    /// Probability of stopping at or below `k⁻` given the announced winner won.
    pub p_u: f64,
    /// Probability of ending in any hand count (`k⁻` stop or exhaustion)
    /// given the announced winner won.
    pub p_u_with_exhausted: f64,
}

/// Averages per-tally outcomes over the prior's losing and winning halves.
pub fn prior_weighted_errors(
    table: &LookupTable,
    prior: &Prior,
    method: &RiskMethod,
    config: &RiskConfig,
) -> Result<PriorErrors, RiskError> {
    let ballots = prior.ballots();
    let support: Vec<(u64, f64)> = prior.support().collect();
    let outcomes: Vec<AuditOutcome> = match method {
        RiskMethod::MonteCarlo { trials, seed, .. } => support
            .iter()
            .map(|&(x, _)| {
                simulate_outcomes(table, ballots, x, *trials, *seed, config.exec).map(|c| {
                    let t = c.trials as f64;
                    AuditOutcome {
                        confirm: c.confirm as f64 / t,
                        hand_count: c.hand_count as f64 / t,
                        exhausted: c.exhausted as f64 / t,
                    }
                })
            })
            .collect::<Result<_, _>>()?,
        _ => config
            .exec
            .map_slice(&support, |&(x, _)| exact_outcome(table, ballots, x, method, config))
            .into_iter()
            .collect::<Result<_, _>>()?,
    };
    let (mut lose_w, mut win_w) = (0.0, 0.0);
    let (mut miss, mut stop_low, mut any_low) = (0.0, 0.0, 0.0);
    for (&(x, f), o) in support.iter().zip(&outcomes) {
        if is_winning_tally(ballots, x) {
            win_w += f;
            stop_low += f * o.hand_count;
            any_low += f * o.any_hand_count();
        } else {
            lose_w += f;
            miss += f * o.confirm;
        }
    }
    if lose_w <= 0.0 {
        return Err(RiskError::OneSidedPrior("losing"));
    }
    if win_w <= 0.0 {
        return Err(RiskError::OneSidedPrior("winning"));
    }
    Ok(PriorErrors { p_m: miss / lose_w, p_u: stop_low / win_w, p_u_with_exhausted: any_low / win_w })
}
