//! Live audit sessions.
//!
//! A session freezes a lookup table at creation and then accepts cumulative
//! `(n, k)` reports one scheduled round at a time. Each report is checked
//! against the count invariants, judged against the frozen row, and appended
//! to the session's trail.
//!
//! # Trail format
//!
//! [`SessionState::export_trail`] writes a single JSON object:
//!
//! ```text
//! {"schema":"ballot-audit-trail/1","session":{...},"sha256":"<hex>"}
//! ```
//!
//! `session` is the compact serde serialization of [`SessionState`] (fields
//! in declaration order, no whitespace) and `sha256` is the digest of exactly
//! those bytes. Import recomputes the digest over the received `session` text,
//! then replays every round through a fresh session built from the stored
//! table and checks that each stored verdict is reproduced.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

use crate::rules::{Decision, RuleError, RuleSpec};
use crate::tables::{build_table, LookupTable, Schedule, TableError};

pub const TRAIL_SCHEMA: &str = "ballot-audit-trail/1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("invalid audit configuration: {0}")]
    Config(#[from] TableError),
    #[error("rule is set up for N = {rule} but the election has {election} ballots")]
    BallotMismatch { rule: u64, election: u64 },
    #[error("session is {0}; no further rounds are accepted")]
    Terminal(SessionStatus),
    #[error("expected round size {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("winner count {k} exceeds sample size {n}")]
    CountExceedsSample { n: u64, k: u64 },
    #[error("cumulative winner count fell from {previous} to {k}")]
    CountRegression { previous: u64, k: u64 },
    #[error("winner count rose by {increase} but only {drawn} ballots were drawn this round")]
    IncrementTooLarge { increase: u64, drawn: u64 },
    #[error("malformed trail: {0}")]
    TrailFormat(String),
    #[error("unsupported trail schema {0:?}")]
    TrailSchema(String),
    #[error("trail hash mismatch: recorded {recorded}, computed {computed}")]
    TrailHash { recorded: String, computed: String },
    #[error("trail round {index} recorded {recorded} but replays to {replayed}")]
    TrailReplay { index: usize, recorded: Decision, replayed: Decision },
}

impl From<RuleError> for SessionError {
    fn from(e: RuleError) -> Self {
        SessionError::Config(TableError::Rule(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    ConfirmedWinner,
    HandCount,
    /// Still undecided after the last scheduled round. Operationally the
    /// same as [`SessionStatus::HandCount`].
    Exhausted,
}

impl SessionStatus {
    pub fn is_terminal(self) -> bool {
        self != SessionStatus::Active
    }
}

impl std::fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionStatus::Active => "active",
            SessionStatus::ConfirmedWinner => "confirmed_winner",
            SessionStatus::HandCount => "hand_count",
            SessionStatus::Exhausted => "exhausted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Election {
    #[serde(rename = "N")]
    pub ballots: u64,
    pub winner: String,
    pub loser: String,
}

impl Election {
    pub fn new(ballots: u64) -> Election {
        Election { ballots, winner: "winner".into(), loser: "loser".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub n: u64,
    pub k: u64,
    pub recorded_at: DateTime<Utc>,
    pub verdict: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: Uuid,
    pub election: Election,
    pub table: LookupTable,
    pub rounds: Vec<RoundRecord>,
    pub status: SessionStatus,
}

#[derive(Serialize, Deserialize)]
struct Trail<'a> {
    schema: String,
    #[serde(borrow)]
    session: &'a RawValue,
    sha256: String,
}

impl SessionState {
    /// Builds and freezes the table for `rule` over `schedule`.
    pub fn new(election: Election, rule: &RuleSpec, schedule: &Schedule) -> Result<SessionState, SessionError> {
        if let Some(n) = rule.ballots() {
            if n != election.ballots {
                return Err(SessionError::BallotMismatch { rule: n, election: election.ballots });
            }
        }
        if schedule.last() > election.ballots {
            return Err(TableError::RoundExceedsBallots { n: schedule.last(), ballots: election.ballots }.into());
        }
        let table = build_table(&rule.compile()?, schedule)?;
        Ok(SessionState::from_table(Uuid::new_v4(), election, table))
    }

    /// Starts a session on an already-built table.
    pub fn from_table(id: Uuid, election: Election, table: LookupTable) -> SessionState {
        SessionState { id, election, table, rounds: Vec::new(), status: SessionStatus::Active }
    }

    /// Round size expected next, if the session is still active.
    pub fn next_round(&self) -> Option<u64> {
        if self.status.is_terminal() {
            return None;
        }
        self.table.schedule.sizes().get(self.rounds.len()).copied()
    }

    pub fn planned_rounds(&self) -> usize {
        self.table.schedule.len()
    }

    /// Checks a report against the invariants without recording it.
    pub fn check_round(&self, n: u64, k: u64) -> Result<(), SessionError> {
        if self.status.is_terminal() {
            return Err(SessionError::Terminal(self.status));
        }
        let expected = self.next_round().expect("active session has a next round");
        if n != expected {
            return Err(SessionError::OutOfOrder { expected, got: n });
        }
        if k > n {
            return Err(SessionError::CountExceedsSample { n, k });
        }
        if let Some(prev) = self.rounds.last() {
            if k < prev.k {
                return Err(SessionError::CountRegression { previous: prev.k, k });
            }
            let (increase, drawn) = (k - prev.k, n - prev.n);
            if increase > drawn {
                return Err(SessionError::IncrementTooLarge { increase, drawn });
            }
        }
        Ok(())
    }

    pub fn record_round(&mut self, n: u64, k: u64) -> Result<Decision, SessionError> {
        self.record_round_at(n, k, Utc::now())
    }

    /// Like [`SessionState::record_round`] with an explicit timestamp, for
    /// replaying logs.
    pub fn record_round_at(&mut self, n: u64, k: u64, at: DateTime<Utc>) -> Result<Decision, SessionError> {
        self.check_round(n, k)?;
        let index = self.rounds.len();
        let verdict = self.table.rows[index].verdict(k);
        self.rounds.push(RoundRecord { n, k, recorded_at: at, verdict });
        self.status = match verdict {
            Decision::StopWinnerConfirmed => SessionStatus::ConfirmedWinner,
            Decision::StopHandCount => SessionStatus::HandCount,
            Decision::Continue if index + 1 == self.table.rows.len() => SessionStatus::Exhausted,
            Decision::Continue => SessionStatus::Active,
        };
        Ok(verdict)
    }

    /// SHA-256 of the compact serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }

    fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("session state serializes")
    }

    pub fn export_trail(&self) -> Vec<u8> {
        let body = self.canonical_bytes();
        let raw = RawValue::from_string(String::from_utf8(body).expect("JSON is UTF-8")).expect("valid JSON");
        let trail = Trail { schema: TRAIL_SCHEMA.into(), session: &raw, sha256: self.content_hash() };
        serde_json::to_vec(&trail).expect("trail serializes")
    }

    /// Parses a trail, verifies its hash, and replays every round.
    pub fn import_trail(bytes: &[u8]) -> Result<SessionState, SessionError> {
        let trail: Trail = serde_json::from_slice(bytes).map_err(|e| SessionError::TrailFormat(e.to_string()))?;
        if trail.schema != TRAIL_SCHEMA {
            return Err(SessionError::TrailSchema(trail.schema));
        }
        let computed = hex::encode(Sha256::digest(trail.session.get().as_bytes()));
        if computed != trail.sha256 {
            return Err(SessionError::TrailHash { recorded: trail.sha256, computed });
        }
        let stored: SessionState =
            serde_json::from_str(trail.session.get()).map_err(|e| SessionError::TrailFormat(e.to_string()))?;
        stored.table.validate()?;
        stored.replay()
    }

    /// Rebuilds this session from its table and round reports, checking
    /// that every stored verdict and the final status are reproduced.
    pub fn replay(&self) -> Result<SessionState, SessionError> {
        let mut fresh = SessionState::from_table(self.id, self.election.clone(), self.table.clone());
        for (index, r) in self.rounds.iter().enumerate() {
            let replayed = fresh.record_round_at(r.n, r.k, r.recorded_at)?;
            if replayed != r.verdict {
                return Err(SessionError::TrailReplay { index, recorded: r.verdict, replayed });
            }
        }
        if fresh.status != self.status {
            return Err(SessionError::TrailFormat(format!(
                "stored status {} but rounds replay to {}",
                self.status, fresh.status
            )));
        }
        Ok(fresh)
    }

    /// Recomputes each recorded verdict with the rule itself rather than the
    /// frozen table. Returns the indices of rounds that disagree.
    pub fn verify_against_rule(&self) -> Result<Vec<usize>, SessionError> {
        let rule = self.table.rule.compile()?;
        let mut mismatches = Vec::new();
        for (i, r) in self.rounds.iter().enumerate() {
            match rule.decide(r.n, r.k) {
                Ok(d) if d == r.verdict => {}
                // Zero-probability samples have no statistic; the table's
                // extended comparison is authoritative there.
                Err(RuleError::ImpossibleSample { .. }) => {}
                Ok(_) => mismatches.push(i),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(mismatches)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{PriorFamily, PriorSource, PriorSpec};

    fn bayes_spec(ballots: u64, gamma: f64) -> RuleSpec {
        RuleSpec::Bayesian {
            gamma,
            prior: PriorSource::Named(PriorSpec::new(
                ballots,
                PriorFamily::Beta { a: 0.5, b: 0.5, discretization: Default::default() },
            )),
        }
    }

    fn small() -> SessionState {
        SessionState::new(Election::new(1000), &bayes_spec(1000, 0.1), &"20,40,80".parse().unwrap()).unwrap()
    }

    #[test]
    fn new_session_is_active_with_planned_rounds() {
        let s = small();
        assert_eq!(s.status, SessionStatus::Active);
        assert_eq!(s.planned_rounds(), 3);
        assert_eq!(s.next_round(), Some(20));
        assert!(s.rounds.is_empty());
    }

    #[test]
    fn schedule_beyond_ballots_rejected() {
        let err = SessionState::new(Election::new(50), &bayes_spec(50, 0.1), &"20,40,80".parse().unwrap()).unwrap_err();
        assert!(matches!(err, SessionError::Config(TableError::RoundExceedsBallots { .. })));
        let err = SessionState::new(Election::new(60), &bayes_spec(50, 0.1), &"20".parse().unwrap()).unwrap_err();
        assert_eq!(err, SessionError::BallotMismatch { rule: 50, election: 60 });
    }

    #[test]
    fn invariant_violations() {
        let mut s = small();
        assert_eq!(s.record_round(40, 10), Err(SessionError::OutOfOrder { expected: 20, got: 40 }));
        assert_eq!(s.record_round(20, 21), Err(SessionError::CountExceedsSample { n: 20, k: 21 }));
        assert_eq!(s.record_round(20, 10).unwrap(), Decision::Continue);
        assert_eq!(s.record_round(40, 9), Err(SessionError::CountRegression { previous: 10, k: 9 }));
        assert_eq!(s.record_round(40, 31), Err(SessionError::IncrementTooLarge { increase: 21, drawn: 20 }));
        assert_eq!(s.rounds.len(), 1);
    }

    #[test]
    fn exhausted_after_last_continue() {
        let mut s = small();
        let rows = s.table.rows.clone();
        for row in &rows {
            let k = row.k_minus.map_or(0, |m| m + 1).max(s.rounds.last().map_or(0, |r| r.k));
            assert!(row.k_plus.map_or(true, |kp| k < kp));
            assert_eq!(s.record_round(row.n, k).unwrap(), Decision::Continue);
        }
        assert_eq!(s.status, SessionStatus::Exhausted);
        assert_eq!(s.record_round(160, 100), Err(SessionError::Terminal(SessionStatus::Exhausted)));
    }

    #[test]
    fn terminal_states_absorb() {
        let mut s = small();
        let kp = s.table.rows[0].k_plus.unwrap();
        assert_eq!(s.record_round(20, kp).unwrap(), Decision::StopWinnerConfirmed);
        assert_eq!(s.status, SessionStatus::ConfirmedWinner);
        assert_eq!(s.next_round(), None);
        assert_eq!(s.record_round(40, kp), Err(SessionError::Terminal(SessionStatus::ConfirmedWinner)));
    }

    #[test]
    fn trail_round_trip_and_tamper_evidence() {
        let mut s = small();
        s.record_round(20, 11).unwrap();
        s.record_round(40, 25).unwrap();
        let bytes = s.export_trail();
        let back = SessionState::import_trail(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.verify_against_rule().unwrap(), Vec::<usize>::new());

        let text = String::from_utf8(bytes).unwrap();
        let edited = text.replacen("\"k\":25", "\"k\":26", 1);
        assert_ne!(edited, text);
        assert!(matches!(SessionState::import_trail(edited.as_bytes()), Err(SessionError::TrailHash { .. })));
    }

    #[test]
    fn empty_session_trail() {
        let s = small();
        let text = String::from_utf8(s.export_trail()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema"], TRAIL_SCHEMA);
        assert_eq!(v["session"]["rounds"].as_array().unwrap().len(), 0);
        assert_eq!(v["session"]["table"]["rows"].as_array().unwrap().len(), 3);
        assert_eq!(SessionState::import_trail(text.as_bytes()).unwrap(), s);
    }

    #[test]
    fn forged_verdict_with_fresh_hash_fails_replay() {
        let mut s = small();
        s.record_round(20, 11).unwrap();
        s.rounds[0].verdict = Decision::StopWinnerConfirmed;
        s.status = SessionStatus::ConfirmedWinner;
        let err = SessionState::import_trail(&s.export_trail()).unwrap_err();
        assert!(matches!(err, SessionError::TrailReplay { index: 0, .. }));
    }
}
