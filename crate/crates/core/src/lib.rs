//! Decision engine for two-candidate ballot-polling election audits.
//!
//! The crate covers Wald sequential tests, traditional risk-limiting audits
//! (including BRAVO), general Bayesian audits and the Bayesian RLA. Every
//! audit reduces to a lookup table of per-round thresholds `(n, k⁺, k⁻)`;
//! [`tables`] builds them, [`riskeval`] measures their true risk and
//! [`session`] drives a live audit round by round.

pub mod hypergeom;
pub mod par;
pub mod priors;
pub mod riskeval;
pub mod rules;
pub mod session;
pub mod tables;

pub use hypergeom::{log_binomial, log_hg, log_sum, LogValue};
pub use par::Execution;
pub use priors::{Prior, PriorError, PriorFamily, PriorSource, PriorSpec};
pub use riskeval::{RiskError, RiskMethod, RiskReport};
pub use rules::{AuditRule, Decision, RuleError, RuleSpec, ThresholdPair};
pub use session::{SessionError, SessionState, SessionStatus};
pub use tables::{build_table, LookupTable, Schedule, TableError};
