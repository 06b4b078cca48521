//! Escalation schedules and lookup tables.
//!
//! A lookup table is the audit: for each scheduled cumulative sample size
//! `n` it stores `k⁺` (confirm when the sample holds at least this many
//! winner ballots) and `k⁻` (escalate to a hand count at or below this).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::Execution;
use crate::rules::{AuditRule, RuleError, RuleSpec, Sampling, ThresholdPair};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("schedule is empty")]
    EmptySchedule,
    #[error("schedule round sizes must be positive")]
    ZeroRound,
    #[error("schedule must be strictly increasing ({prev} then {next})")]
    NotIncreasing { prev: u64, next: u64 },
    #[error("round size {n} exceeds the {ballots} ballots cast")]
    RoundExceedsBallots { n: u64, ballots: u64 },
    #[error("cannot parse schedule {0:?}")]
    BadScheduleSyntax(String),
    #[error("tables have different schedules")]
    ScheduleMismatch,
    #[error("no tables to compare")]
    NothingToCompare,
    #[error("malformed table data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Rule(#[from] RuleError),
}

/// Strictly increasing cumulative sample sizes at which verdicts are given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct Schedule(Vec<u64>);

impl Schedule {
    pub fn new(round_sizes: Vec<u64>) -> Result<Schedule, TableError> {
        if round_sizes.is_empty() {
            return Err(TableError::EmptySchedule);
        }
        if round_sizes[0] == 0 {
            return Err(TableError::ZeroRound);
        }
        if let Some(w) = round_sizes.windows(2).find(|w| w[1] <= w[0]) {
            return Err(TableError::NotIncreasing { prev: w[0], next: w[1] });
        }
        Ok(Schedule(round_sizes))
    }

    /// `start, start·factor, …` up to and including `end`.
    pub fn geometric(start: u64, factor: u64, end: u64) -> Result<Schedule, TableError> {
        if start == 0 {
            return Err(TableError::ZeroRound);
        }
        if factor < 2 {
            return Err(TableError::BadScheduleSyntax(format!("{start}x{factor}..{end}")));
        }
        let mut sizes = Vec::new();
        let mut n = start;
        while n <= end {
            sizes.push(n);
            n = match n.checked_mul(factor) {
                Some(v) => v,
                None => break,
            };
        }
        Schedule::new(sizes)
    }

    /// Every integer in `first..=last`.
    pub fn contiguous(first: u64, last: u64) -> Result<Schedule, TableError> {
        Schedule::new((first..=last).collect())
    }

    /// Nine rounds doubling from 200 to 51,200.
    pub fn doubling_200() -> Schedule {
        Schedule::geometric(200, 2, 51_200).expect("static schedule")
    }

    pub fn sizes(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> u64 {
        *self.0.last().expect("non-empty schedule")
    }

    pub fn position(&self, n: u64) -> Option<usize> {
        self.0.iter().position(|&s| s == n)
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::doubling_200()
    }
}

impl TryFrom<Vec<u64>> for Schedule {
    type Error = TableError;

    fn try_from(v: Vec<u64>) -> Result<Self, Self::Error> {
        Schedule::new(v)
    }
}

impl From<Schedule> for Vec<u64> {
    fn from(s: Schedule) -> Self {
        s.0
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Accepts `10,20,40`, the geometric form `200x2..51200`, and the contiguous
/// range `9..78`.
impl FromStr for Schedule {
    type Err = TableError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || TableError::BadScheduleSyntax(s.clone());
        let num = |t: &str| t.replace('_', "").parse::<u64>().map_err(|_| bad());
        if let Some((head, end)) = s.split_once("..") {
            let end = num(end)?;
            return match head.split_once(['x', 'X', '*']) {
                Some((start, factor)) => Schedule::geometric(num(start)?, num(factor)?, end),
                None => Schedule::contiguous(num(head)?, end),
            };
        }
        let sizes = s.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
        Schedule::new(sizes)
    }
}

/// Per-round thresholds for one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    pub rule: RuleSpec,
    #[serde(rename = "N")]
    pub ballots: Option<u64>,
    pub schedule: Schedule,
    pub rows: Vec<ThresholdPair>,
}

impl LookupTable {
    pub fn sampling(&self) -> Sampling {
        self.rule.sampling()
    }

    pub fn row(&self, n: u64) -> Option<&ThresholdPair> {
        self.schedule.position(n).map(|i| &self.rows[i])
    }

    pub fn k_plus_row(&self) -> Vec<Option<u64>> {
        self.rows.iter().map(|r| r.k_plus).collect()
    }

    /// Short label such as `bayes(0.1)` used in comparisons.
    pub fn label(&self) -> String {
        let bound = match &self.rule {
            RuleSpec::WaldWithReplacement { alpha, .. }
            | RuleSpec::WaldWithoutReplacement { alpha, .. }
            | RuleSpec::TraditionalRlaWithReplacement { alpha, .. }
            | RuleSpec::TraditionalRlaWithoutReplacement { alpha, .. }
            | RuleSpec::BayesianRla { alpha, .. } => *alpha,
            RuleSpec::Bayesian { gamma, .. } => *gamma,
        };
        format!("{}({})", self.rule.family_name(), bound)
    }

    /// Checks the structural invariants a deserialized table must satisfy.
    pub fn validate(&self) -> Result<(), TableError> {
        if self.rows.len() != self.schedule.len() {
            return Err(TableError::Malformed(format!(
                "{} rows for {} scheduled rounds",
                self.rows.len(),
                self.schedule.len()
            )));
        }
        for (row, &n) in self.rows.iter().zip(self.schedule.sizes()) {
            if row.n != n {
                return Err(TableError::Malformed(format!("row for n={} where schedule has {n}", row.n)));
            }
            if let (Some(kp), Some(km)) = (row.k_plus, row.k_minus) {
                if km >= kp {
                    return Err(TableError::Malformed(format!("k_minus {km} >= k_plus {kp} at n={n}")));
                }
            }
            if row.k_plus.is_some_and(|k| k > n) || row.k_minus.is_some_and(|k| k > n) {
                return Err(TableError::Malformed(format!("threshold exceeds n={n}")));
            }
        }
        if let (Some(ballots), Sampling::WithoutReplacement) = (self.ballots, self.sampling()) {
            if self.schedule.last() > ballots {
                return Err(TableError::RoundExceedsBallots { n: self.schedule.last(), ballots });
            }
        }
        Ok(())
    }
}

pub fn build_table(rule: &AuditRule, schedule: &Schedule) -> Result<LookupTable, TableError> {
    build_table_with(rule, schedule, Execution::default())
}

/// `rows[i] = thresholds(rule, schedule[i])`, rounds evaluated independently.
pub fn build_table_with(rule: &AuditRule, schedule: &Schedule, exec: Execution) -> Result<LookupTable, TableError> {
    if let Some(ballots) = rule.ballots() {
        if schedule.last() > ballots {
            return Err(TableError::RoundExceedsBallots { n: schedule.last(), ballots });
        }
    }
    let rows = exec
        .map_slice(schedule.sizes(), |&n| rule.thresholds(n))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LookupTable { rule: rule.spec().clone(), ballots: rule.ballots(), schedule: schedule.clone(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    n: u64,
    k_plus: Option<u64>,
    k_minus: Option<u64>,
}

/// CSV carries only the `n,k_plus,k_minus` rows (empty cell = absent); JSON
/// carries the whole table.
pub fn emit_table(table: &LookupTable, format: Format) -> Vec<u8> {
    match format {
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(table).expect("tables serialize");
            out.push(b'\n');
            out
        }
        Format::Csv => rows_to_csv(&table.rows),
    }
}

pub fn rows_to_csv(rows: &[ThresholdPair]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(CsvRow { n: r.n, k_plus: r.k_plus, k_minus: r.k_minus }).expect("in-memory csv");
    }
    if rows.is_empty() {
        w.write_record(["n", "k_plus", "k_minus"]).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn parse_rows_csv(bytes: &[u8]) -> Result<Vec<ThresholdPair>, TableError> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize::<CsvRow>()
        .map(|row| {
            row.map(|c| ThresholdPair { n: c.n, k_plus: c.k_plus, k_minus: c.k_minus })
                .map_err(|e| TableError::Malformed(e.to_string()))
        })
        .collect()
}

pub fn parse_table_json(bytes: &[u8]) -> Result<LookupTable, TableError> {
    let table: LookupTable = serde_json::from_slice(bytes).map_err(|e| TableError::Malformed(e.to_string()))?;
    table.validate()?;
    Ok(table)
}

/// How a sequence of tables orders by `k⁺`, compared pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingVerdict {
    /// Every table equals the next.
    Identical,
    /// Each table's `k⁺` is at least the next one's everywhere: the list is
    /// in increasing order of leniency.
    IncreasingLeniency,
    /// Each table's `k⁺` is at most the next one's everywhere.
    DecreasingLeniency,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDifference {
    pub minuend: String,
    pub subtrahend: String,
    /// `k⁺(minuend) − k⁺(subtrahend)` per round, absent thresholds read as `n+1`.
    pub delta: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableComparison {
    pub schedule: Schedule,
    pub labels: Vec<String>,
    pub k_plus: Vec<Vec<Option<u64>>>,
    /// Differences between consecutive tables.
    pub differences: Vec<PairDifference>,
    pub verdict: OrderingVerdict,
}

pub fn compare_tables(tables: &[LookupTable]) -> Result<TableComparison, TableError> {
    let labels = tables.iter().map(LookupTable::label).collect();
    compare_labeled(tables, labels)
}

pub fn compare_labeled(tables: &[LookupTable], labels: Vec<String>) -> Result<TableComparison, TableError> {
    let first = tables.first().ok_or(TableError::NothingToCompare)?;
    if tables.iter().any(|t| t.schedule != first.schedule) {
        return Err(TableError::ScheduleMismatch);
    }
    let differences: Vec<PairDifference> = tables
        .windows(2)
        .zip(labels.windows(2))
        .map(|(pair, names)| PairDifference {
            minuend: names[0].clone(),
            subtrahend: names[1].clone(),
            delta: pair[0]
                .rows
                .iter()
                .zip(&pair[1].rows)
                .map(|(a, b)| a.k_plus_or_unreachable() as i64 - b.k_plus_or_unreachable() as i64)
                .collect(),
        })
        .collect();
    let all = |pred: fn(i64) -> bool| differences.iter().all(|d| d.delta.iter().all(|&v| pred(v)));
    let verdict = if all(|v| v == 0) {
        OrderingVerdict::Identical
    } else if all(|v| v >= 0) {
        OrderingVerdict::IncreasingLeniency
    } else if all(|v| v <= 0) {
        OrderingVerdict::DecreasingLeniency
    } else {
        OrderingVerdict::Mixed
    };
    Ok(TableComparison {
        schedule: first.schedule.clone(),
        labels,
        k_plus: tables.iter().map(LookupTable::k_plus_row).collect(),
        differences,
        verdict,
    })
}

fn cell(v: Option<u64>) -> String {
    v.map(|k| k.to_string()).unwrap_or_default()
}

impl TableComparison {
    /// `n,<label>...` with one `k⁺` column per table.
    pub fn k_plus_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["n".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).expect("in-memory csv");
        for (i, n) in self.schedule.sizes().iter().enumerate() {
            let mut rec = vec![n.to_string()];
            rec.extend(self.k_plus.iter().map(|col| cell(col[i])));
            w.write_record(&rec).expect("in-memory csv");
        }
        w.into_inner().expect("in-memory csv")
    }

    /// `n,<a>-<b>...` with one difference column per consecutive pair.
    pub fn difference_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["n".to_string()];
        header.extend(self.differences.iter().map(|d| format!("{}-{}", d.minuend, d.subtrahend)));
        w.write_record(&header).expect("in-memory csv");
        for (i, n) in self.schedule.sizes().iter().enumerate() {
            let mut rec = vec![n.to_string()];
            rec.extend(self.differences.iter().map(|d| d.delta[i].to_string()));
            w.write_record(&rec).expect("in-memory csv");
        }
        w.into_inner().expect("in-memory csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{PriorFamily, PriorSpec};

    fn small_rule() -> AuditRule {
        RuleSpec::Bayesian { gamma: 0.1, prior: PriorSpec::new(101, PriorFamily::Uniform {}).into() }.compile().unwrap()
    }

    #[test]
    fn schedule_parsing() {
        assert_eq!("200x2..51200".parse::<Schedule>().unwrap(), Schedule::doubling_200());
        assert_eq!(Schedule::doubling_200().len(), 9);
        assert_eq!("10,20,40".parse::<Schedule>().unwrap().sizes(), &[10, 20, 40]);
        assert_eq!("9..78".parse::<Schedule>().unwrap().len(), 70);
        assert_eq!("200 x 2 .. 1000".parse::<Schedule>().unwrap().sizes(), &[200, 400, 800]);
        assert!("10,10".parse::<Schedule>().is_err());
        assert!("0,1".parse::<Schedule>().is_err());
        assert!("".parse::<Schedule>().is_err());
        assert!("a,b".parse::<Schedule>().is_err());
        assert!(serde_json::from_str::<Schedule>("[3,2]").is_err());
    }

    #[test]
    fn schedule_beyond_ballots_rejected() {
        let s = Schedule::new(vec![50, 102]).unwrap();
        assert_eq!(build_table(&small_rule(), &s), Err(TableError::RoundExceedsBallots { n: 102, ballots: 101 }));
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let rows = vec![ThresholdPair { n: 200, k_plus: Some(110), k_minus: Some(93) }];
        assert_eq!(String::from_utf8(rows_to_csv(&rows)).unwrap(), "n,k_plus,k_minus\n200,110,93\n");
        let absent = vec![ThresholdPair { n: 10, k_plus: None, k_minus: None }];
        let text = String::from_utf8(rows_to_csv(&absent)).unwrap();
        assert_eq!(text, "n,k_plus,k_minus\n10,,\n");
        assert_eq!(parse_rows_csv(text.as_bytes()).unwrap(), absent);
        assert_eq!(parse_rows_csv(b"n,k_plus,k_minus\n").unwrap(), vec![]);
    }

    #[test]
    fn json_round_trip_and_null_cells() {
        let t = build_table(&small_rule(), &"10,20,40".parse().unwrap()).unwrap();
        let bytes = emit_table(&t, Format::Json);
        assert_eq!(parse_table_json(&bytes).unwrap(), t);
        let bravo = build_table(&RuleSpec::bravo(0.7, 0.1).compile().unwrap(), &"5,10".parse().unwrap()).unwrap();
        let text = String::from_utf8(emit_table(&bravo, Format::Json)).unwrap();
        assert!(text.contains("\"k_minus\": null"));
        assert!(text.contains("\"N\": null"));
    }

    #[test]
    fn malformed_json_rejected() {
        let t = build_table(&small_rule(), &"10,20".parse().unwrap()).unwrap();
        let mut bad = t.clone();
        bad.rows.pop();
        assert!(parse_table_json(&emit_table(&bad, Format::Json)).is_err());
        let mut inverted = t;
        inverted.rows[0].k_minus = inverted.rows[0].k_plus;
        assert!(parse_table_json(&emit_table(&inverted, Format::Json)).is_err());
    }

    #[test]
    fn identical_tables_compare_to_zero() {
        let t = build_table(&small_rule(), &"10,20,40".parse().unwrap()).unwrap();
        let c = compare_tables(&[t.clone(), t]).unwrap();
        assert_eq!(c.verdict, OrderingVerdict::Identical);
        assert!(c.differences[0].delta.iter().all(|&d| d == 0));
    }

    #[test]
    fn comparison_requires_same_schedule() {
        let a = build_table(&small_rule(), &"10,20".parse().unwrap()).unwrap();
        let b = build_table(&small_rule(), &"10,30".parse().unwrap()).unwrap();
        assert_eq!(compare_tables(&[a, b]), Err(TableError::ScheduleMismatch));
        assert_eq!(compare_tables(&[]), Err(TableError::NothingToCompare));
    }

    #[test]
    fn comparison_plot_data() {
        let strict = build_table(&RuleSpec::bravo(0.75, 0.001).compile().unwrap(), &"20,40".parse().unwrap()).unwrap();
        let lenient = build_table(&small_rule(), &"20,40".parse().unwrap()).unwrap();
        let c = compare_tables(&[strict, lenient]).unwrap();
        assert_eq!(c.verdict, OrderingVerdict::IncreasingLeniency);
        let plot = String::from_utf8(c.k_plus_csv()).unwrap();
        assert!(plot.starts_with("n,bravo(0.001),bayes(0.1)\n20,"));
        let diff = String::from_utf8(c.difference_csv()).unwrap();
        assert!(diff.starts_with("n,bravo(0.001)-bayes(0.1)\n"));
        assert_eq!(diff.lines().count(), 3);
    }

    #[test]
    fn sequential_and_parallel_tables_match() {
        let s: Schedule = "5,10,20,40,80".parse().unwrap();
        let a = build_table_with(&small_rule(), &s, Execution::Sequential).unwrap();
        let b = build_table_with(&small_rule(), &s, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
