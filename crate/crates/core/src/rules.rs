//! Decision statistics and stopping rules for the six audit families.
//!
//! Every rule reduces a sample (`n` ballots drawn, `k` of them for the
//! announced winner) to a ratio compared against an upper bound `U` and a
//! lower bound `L < 1 < U`. The statistic is non-decreasing in `k`, so each
//! rule is equivalently a pair of per-sample-size thresholds `(k⁺, k⁻)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hypergeom::{log_factorials, LogAccumulator, LogFactorials, LogValue};
use crate::priors::{max_losing_tally, min_winning_tally, Prior, PriorError, PriorSource};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("{name} = {value} is outside {range}")]
    InvalidParameter { name: &'static str, value: f64, range: &'static str },
    #[error("sample has k = {k} winner ballots out of n = {n}")]
    SampleOutOfRange { n: u64, k: u64 },
    #[error("sample size {n} exceeds the {ballots} ballots cast")]
    SampleExceedsBallots { n: u64, ballots: u64 },
    #[error("sample (n = {n}, k = {k}) has probability zero under every tally in the prior's support")]
    ImpossibleSample { n: u64, k: u64 },
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// Serializable description of an audit rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleSpec {
    /// Wald sequential test, sampling with replacement.
    WaldWithReplacement { p0: f64, p1: f64, alpha: f64, beta: f64 },
    /// Wald sequential test, sampling without replacement from `N` ballots.
    WaldWithoutReplacement {
        p0: f64,
        p1: f64,
        alpha: f64,
        beta: f64,
        #[serde(rename = "N")]
        ballots: u64,
    },
    /// Traditional RLA (BRAVO when `beta = 0`), with replacement.
    TraditionalRlaWithReplacement { p: f64, alpha: f64, beta: f64 },
    /// Traditional RLA, without replacement.
    TraditionalRlaWithoutReplacement {
        p: f64,
        alpha: f64,
        beta: f64,
        #[serde(rename = "N")]
        ballots: u64,
    },
    /// Bayesian audit with upset-probability bound `gamma`.
    Bayesian { gamma: f64, prior: PriorSource },
    /// Bayesian RLA: the Bayesian audit run on the risk-maximizing prior.
    BayesianRla { alpha: f64, prior: PriorSource },
}

impl RuleSpec {
    /// BRAVO: the traditional RLA with replacement and `beta = 0`.
    pub fn bravo(p: f64, alpha: f64) -> RuleSpec {
        RuleSpec::TraditionalRlaWithReplacement { p, alpha, beta: 0.0 }
    }

    /// Ballot count for rules that sample without replacement.
    pub fn ballots(&self) -> Option<u64> {
        match self {
            RuleSpec::WaldWithReplacement { .. } | RuleSpec::TraditionalRlaWithReplacement { .. } => None,
            RuleSpec::WaldWithoutReplacement { ballots, .. } | RuleSpec::TraditionalRlaWithoutReplacement { ballots, .. } => {
                Some(*ballots)
            }
            RuleSpec::Bayesian { prior, .. } | RuleSpec::BayesianRla { prior, .. } => Some(prior.ballots()),
        }
    }

    pub fn sampling(&self) -> Sampling {
        match self.ballots() {
            None => Sampling::WithReplacement,
            Some(_) => Sampling::WithoutReplacement,
        }
    }

    /// Short human-readable family name.
    pub fn family_name(&self) -> &'static str {
        match self {
            RuleSpec::WaldWithReplacement { .. } => "wald",
            RuleSpec::WaldWithoutReplacement { .. } => "wald-wor",
            RuleSpec::TraditionalRlaWithReplacement { beta, .. } if *beta == 0.0 => "bravo",
            RuleSpec::TraditionalRlaWithReplacement { .. } => "rla",
            RuleSpec::TraditionalRlaWithoutReplacement { .. } => "rla-wor",
            RuleSpec::Bayesian { .. } => "bayes",
            RuleSpec::BayesianRla { .. } => "bayes-rla",
        }
    }

    pub fn compile(&self) -> Result<AuditRule, RuleError> {
        AuditRule::new(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    WithReplacement,
    WithoutReplacement,
}

/// Outcome of comparing a sample against a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "confirmed_winner")]
    StopWinnerConfirmed,
    #[serde(rename = "hand_count")]
    StopHandCount,
    #[serde(rename = "continue")]
    Continue,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::StopWinnerConfirmed => "confirmed_winner",
            Decision::StopHandCount => "hand_count",
            Decision::Continue => "continue",
        })
    }
}

/// Thresholds at one sample size: confirm when `k >= k_plus`, hand count
/// when `k <= k_minus`. `None` means no `k` in `0..=n` qualifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub n: u64,
    pub k_plus: Option<u64>,
    pub k_minus: Option<u64>,
}

impl ThresholdPair {
    pub fn verdict(&self, k: u64) -> Decision {
        if self.k_plus.is_some_and(|kp| k >= kp) {
            Decision::StopWinnerConfirmed
        } else if self.k_minus.is_some_and(|km| k <= km) {
            Decision::StopHandCount
        } else {
            Decision::Continue
        }
    }

    /// `k_plus`, with "absent" mapped to `n + 1` so values order by strictness.
    pub fn k_plus_or_unreachable(&self) -> u64 {
        self.k_plus.unwrap_or(self.n + 1)
    }
}

/// Rounds `p0·N` to a losing tally: nearest integer, halves rounded up, then
/// capped at `⌊N/2⌋`.
pub fn losing_tally_for(p0: f64, ballots: u64) -> u64 {
    let t = p0 * ballots as f64;
    let r = if (t - t.floor() - 0.5).abs() < 1e-9 { t.ceil() } else { t.round() };
    (r.max(0.0) as u64).min(max_losing_tally(ballots))
}

/// Rounds `p1·N` to a winning tally: nearest integer, halves rounded down,
/// then kept within `⌊N/2⌋+1..=N`.
pub fn winning_tally_for(p1: f64, ballots: u64) -> u64 {
    let t = p1 * ballots as f64;
    let r = if (t - t.floor() - 0.5).abs() < 1e-9 { t.floor() } else { t.round() };
    (r.max(0.0) as u64).clamp(min_winning_tally(ballots), ballots)
}

#[derive(Debug)]
enum Model {
    /// Independent draws with winner-ballot probability `p1` vs `p0`.
    Binomial { ln_p1: f64, ln_q1: f64, ln_p0: f64, ln_q0: f64, p0_is_zero: bool },
    /// Hypergeometric likelihood ratio between two tallies.
    TwoTally { ballots: u64, losing: u64, winning: u64, table: Arc<LogFactorials> },
    /// Posterior odds under a discrete prior.
    Posterior {
        ballots: u64,
        prior: Arc<Prior>,
        /// `(x, ln f(x) - max ln f)` for losing tallies with positive mass.
        losing: Vec<(u64, f64)>,
        winning: Vec<(u64, f64)>,
        table: Arc<LogFactorials>,
    },
}

/// A compiled, validated audit rule.
#[derive(Debug, Clone)]
pub struct AuditRule {
    spec: RuleSpec,
    model: Arc<Model>,
    ln_upper: f64,
    ln_lower: f64,
}

fn check_open(name: &'static str, value: f64, lo: f64, hi: f64, range: &'static str) -> Result<(), RuleError> {
    if value > lo && value < hi {
        Ok(())
    } else {
        Err(RuleError::InvalidParameter { name, value, range })
    }
}

fn check_error_rates(alpha: f64, beta: f64) -> Result<(), RuleError> {
    check_open("alpha", alpha, 0.0, 0.5, "(0, 1/2)")?;
    if !(0.0..0.5).contains(&beta) {
        return Err(RuleError::InvalidParameter { name: "beta", value: beta, range: "[0, 1/2)" });
    }
    Ok(())
}

fn check_p0(p0: f64) -> Result<(), RuleError> {
    if (0.0..=0.5).contains(&p0) {
        Ok(())
    } else {
        Err(RuleError::InvalidParameter { name: "p0", value: p0, range: "[0, 1/2]" })
    }
}

fn check_p1(name: &'static str, p1: f64) -> Result<(), RuleError> {
    if p1 > 0.5 && p1 <= 1.0 {
        Ok(())
    } else {
        Err(RuleError::InvalidParameter { name, value: p1, range: "(1/2, 1]" })
    }
}

fn check_ballots(ballots: u64) -> Result<(), RuleError> {
    if ballots == 0 {
        Err(RuleError::Prior(PriorError::NoBallots))
    } else {
        Ok(())
    }
}

fn binomial_model(p0: f64, p1: f64) -> Model {
    Model::Binomial { ln_p1: p1.ln(), ln_q1: (-p1).ln_1p(), ln_p0: p0.ln(), ln_q0: (-p0).ln_1p(), p0_is_zero: p0 == 0.0 }
}

fn posterior_model(prior: Prior) -> Model {
    let ballots = prior.ballots();
    let max_ln = prior.support().map(|(_, m)| m.ln()).fold(f64::NEG_INFINITY, f64::max);
    let first_winning = min_winning_tally(ballots);
    let (winning, losing): (Vec<_>, Vec<_>) =
        prior.support().map(|(x, m)| (x, m.ln() - max_ln)).partition(|(x, _)| *x >= first_winning);
    Model::Posterior { ballots, prior: Arc::new(prior), losing, winning, table: log_factorials(ballots) }
}

impl AuditRule {
    pub fn new(spec: RuleSpec) -> Result<AuditRule, RuleError> {
        let (model, upper, lower) = match &spec {
            RuleSpec::WaldWithReplacement { p0, p1, alpha, beta } => {
                check_error_rates(*alpha, *beta)?;
                check_p0(*p0)?;
                check_p1("p1", *p1)?;
                (binomial_model(*p0, *p1), (1.0 - beta) / alpha, beta / (1.0 - alpha))
            }
            RuleSpec::TraditionalRlaWithReplacement { p, alpha, beta } => {
                check_error_rates(*alpha, *beta)?;
                check_p1("p", *p)?;
                (binomial_model(0.5, *p), (1.0 - beta) / alpha, beta / (1.0 - alpha))
            }
            RuleSpec::WaldWithoutReplacement { p0, p1, alpha, beta, ballots } => {
                check_error_rates(*alpha, *beta)?;
                check_p0(*p0)?;
                check_p1("p1", *p1)?;
                check_ballots(*ballots)?;
                let model = Model::TwoTally {
                    ballots: *ballots,
                    losing: losing_tally_for(*p0, *ballots),
                    winning: winning_tally_for(*p1, *ballots),
                    table: log_factorials(*ballots),
                };
                (model, (1.0 - beta) / alpha, beta / (1.0 - alpha))
            }
            RuleSpec::TraditionalRlaWithoutReplacement { p, alpha, beta, ballots } => {
                check_error_rates(*alpha, *beta)?;
                check_p1("p", *p)?;
                check_ballots(*ballots)?;
                let model = Model::TwoTally {
                    ballots: *ballots,
                    losing: max_losing_tally(*ballots),
                    winning: winning_tally_for(*p, *ballots),
                    table: log_factorials(*ballots),
                };
                (model, (1.0 - beta) / alpha, beta / (1.0 - alpha))
            }
            RuleSpec::Bayesian { gamma, prior } => {
                check_open("gamma", *gamma, 0.0, 0.5, "(0, 1/2)")?;
                let prior = prior.build()?.balanced()?;
                (posterior_model(prior), (1.0 - gamma) / gamma, gamma / (1.0 - gamma))
            }
            RuleSpec::BayesianRla { alpha, prior } => {
                check_open("alpha", *alpha, 0.0, 0.5, "(0, 1/2)")?;
                let prior = prior.build()?.rla_transform()?.balanced()?;
                (posterior_model(prior), (1.0 - alpha) / alpha, alpha / (1.0 - alpha))
            }
        };
        Ok(AuditRule { spec, model: Arc::new(model), ln_upper: upper.ln(), ln_lower: lower.ln() })
    }

    pub fn spec(&self) -> &RuleSpec {
        &self.spec
    }

    /// `ln U`: the statistic must exceed this to confirm the winner.
    pub fn ln_upper(&self) -> f64 {
        self.ln_upper
    }

    /// `ln L`: the statistic must fall below this to escalate.
    pub fn ln_lower(&self) -> f64 {
        self.ln_lower
    }

    pub fn ballots(&self) -> Option<u64> {
        match &*self.model {
            Model::Binomial { .. } => None,
            Model::TwoTally { ballots, .. } | Model::Posterior { ballots, .. } => Some(*ballots),
        }
    }

    pub fn sampling(&self) -> Sampling {
        self.spec.sampling()
    }

    /// The prior a Bayesian rule actually uses (balanced, and transformed for
    /// the Bayesian RLA). `None` for the Wald and traditional families.
    pub fn effective_prior(&self) -> Option<&Prior> {
        match &*self.model {
            Model::Posterior { prior, .. } => Some(prior),
            _ => None,
        }
    }

    fn check_sample(&self, n: u64, k: u64) -> Result<(), RuleError> {
        if k > n {
            return Err(RuleError::SampleOutOfRange { n, k });
        }
        if let Some(ballots) = self.ballots() {
            if n > ballots {
                return Err(RuleError::SampleExceedsBallots { n, ballots });
            }
        }
        Ok(())
    }

    /// Numerator and denominator of the decision statistic.
    fn log_terms(&self, n: u64, k: u64) -> (LogValue, LogValue) {
        match &*self.model {
            Model::Binomial { ln_p1, ln_q1, ln_p0, ln_q0, .. } => {
                let num = LogValue::from_ln(*ln_p1).powi(k) * LogValue::from_ln(*ln_q1).powi(n - k);
                let den = LogValue::from_ln(*ln_p0).powi(k) * LogValue::from_ln(*ln_q0).powi(n - k);
                (num, den)
            }
            Model::TwoTally { ballots, losing, winning, table } => (
                table.ln_hg_unchecked(k as i64, *ballots, *winning, n),
                table.ln_hg_unchecked(k as i64, *ballots, *losing, n),
            ),
            Model::Posterior { ballots, losing, winning, table, .. } => {
                // hg(k; N, x, n) > 0 requires k <= x <= N - (n - k).
                let lo = k;
                let hi = ballots - (n - k);
                let sum = |atoms: &[(u64, f64)]| {
                    let start = atoms.partition_point(|(x, _)| *x < lo);
                    let end = atoms.partition_point(|(x, _)| *x <= hi);
                    atoms[start..end]
                        .iter()
                        .map(|(x, ln_f)| table.ln_hg_unchecked(k as i64, *ballots, *x, n) * LogValue::from_ln(*ln_f))
                        .collect::<LogAccumulator>()
                        .total()
                };
                (sum(winning), sum(losing))
            }
        }
    }

    /// Natural log of the rule's decision statistic `σ_n` or `τ_n`.
    pub fn log_statistic(&self, n: u64, k: u64) -> Result<LogValue, RuleError> {
        self.check_sample(n, k)?;
        let (num, den) = self.log_terms(n, k);
        num.checked_div(den).ok_or(RuleError::ImpossibleSample { n, k })
    }

    fn classify(&self, ln_stat: f64) -> Decision {
        if ln_stat > self.ln_upper {
            Decision::StopWinnerConfirmed
        } else if ln_stat < self.ln_lower {
            Decision::StopHandCount
        } else {
            Decision::Continue
        }
    }

    pub fn decide(&self, n: u64, k: u64) -> Result<Decision, RuleError> {
        Ok(self.classify(self.log_statistic(n, k)?.ln()))
    }

    /// Largest `k` any losing hypothesis in the rule can produce in `n` draws.
    fn max_losing_reachable(&self, n: u64) -> u64 {
        match &*self.model {
            Model::Binomial { p0_is_zero, .. } => {
                if *p0_is_zero {
                    0
                } else {
                    n
                }
            }
            Model::TwoTally { losing, .. } => n.min(*losing),
            Model::Posterior { losing, .. } => losing.last().map_or(0, |(x, _)| n.min(*x)),
        }
    }

    /// The log statistic with impossible samples replaced by their one-sided
    /// limits: `+inf` above everything a losing tally can produce, `-inf`
    /// otherwise. Non-decreasing in `k`.
    pub fn extended_log_statistic(&self, n: u64, k: u64) -> f64 {
        let (num, den) = self.log_terms(n, k);
        match num.checked_div(den) {
            Some(v) => v.ln(),
            None if k > self.max_losing_reachable(n) => f64::INFINITY,
            None => f64::NEG_INFINITY,
        }
    }

    /// `k⁺` and `k⁻` at sample size `n`, by bisection on the monotone
    /// statistic.
    pub fn thresholds(&self, n: u64) -> Result<ThresholdPair, RuleError> {
        self.check_sample(n, 0)?;
        let ks: Vec<u64> = (0..=n).collect();
        let first_confirm = ks.partition_point(|&k| self.extended_log_statistic(n, k) <= self.ln_upper);
        let below = ks.partition_point(|&k| self.extended_log_statistic(n, k) < self.ln_lower);
        Ok(ThresholdPair {
            n,
            k_plus: (first_confirm as u64 <= n).then_some(first_confirm as u64),
            k_minus: below.checked_sub(1).map(|k| k as u64),
        })
    }

    /// Linear-scan thresholds; the reference the bisection is checked against.
    pub fn thresholds_by_scan(&self, n: u64) -> Result<ThresholdPair, RuleError> {
        self.check_sample(n, 0)?;
        let k_plus = (0..=n).find(|&k| self.extended_log_statistic(n, k) > self.ln_upper);
        let k_minus = (0..=n).rev().find(|&k| self.extended_log_statistic(n, k) < self.ln_lower);
        Ok(ThresholdPair { n, k_plus, k_minus })
    }
}

/// Thresholds of the with-replacement traditional RLA from the closed-form
/// ceiling/floor expressions, nudged by one where rounding lands on (or just
/// past) the strict boundary.
pub fn thresholds_closed_form(p: f64, alpha: f64, beta: f64, n: u64) -> Result<ThresholdPair, RuleError> {
    check_error_rates(alpha, beta)?;
    check_open("p", p, 0.5, 1.0, "(1/2, 1)")?;
    let rule = AuditRule::new(RuleSpec::TraditionalRlaWithReplacement { p, alpha, beta })?;
    let ln_odds = (p / (1.0 - p)).ln();
    let drift = n as f64 * (0.5 / (1.0 - p)).ln() / ln_odds;
    let confirms = |k: i64| k >= 0 && k as u64 <= n && rule.extended_log_statistic(n, k as u64) > rule.ln_upper;
    let escalates = |k: i64| k >= 0 && k as u64 <= n && rule.extended_log_statistic(n, k as u64) < rule.ln_lower;

    let raw_plus = ((1.0 - beta) / alpha).ln() / ln_odds + drift;
    let mut k_plus = (raw_plus.ceil() as i64).clamp(0, n as i64 + 1);
    if k_plus <= n as i64 && !confirms(k_plus) {
        k_plus += 1;
    } else if confirms(k_plus - 1) {
        k_plus -= 1;
    }

    let k_minus = if beta == 0.0 {
        None
    } else {
        let raw_minus = (beta / (1.0 - alpha)).ln() / ln_odds + drift;
        let mut km = (raw_minus.floor() as i64).clamp(-1, n as i64);
        if km >= 0 && !escalates(km) {
            km -= 1;
        } else if escalates(km + 1) {
            km += 1;
        }
        (km >= 0).then_some(km as u64)
    };

    Ok(ThresholdPair { n, k_plus: (k_plus >= 0 && k_plus as u64 <= n).then_some(k_plus as u64), k_minus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{PriorFamily, PriorSpec};
    use approx::assert_relative_eq;

    fn bayes(gamma: f64, prior: Prior) -> AuditRule {
        AuditRule::new(RuleSpec::Bayesian { gamma, prior: PriorSource::Explicit(prior) }).unwrap()
    }

    #[test]
    fn wald_with_replacement_example() {
        let r = AuditRule::new(RuleSpec::WaldWithReplacement { p0: 0.5, p1: 0.75, alpha: 0.1, beta: 0.1 }).unwrap();
        assert_relative_eq!(r.log_statistic(2, 2).unwrap().ln(), 2.25f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn bayesian_uniform_n5_example() {
        let r = bayes(0.25, Prior::uniform(5).unwrap());
        // hg(1; 5, x, 1) = x/5: numerator (3+4+5), denominator (0+1+2).
        assert_relative_eq!(r.log_statistic(1, 1).unwrap().ln(), 4f64.ln(), epsilon = 1e-14);
        assert_eq!(r.decide(1, 1).unwrap(), Decision::StopWinnerConfirmed);
    }

    #[test]
    fn rla_without_replacement_infinite_ratio() {
        let r = AuditRule::new(RuleSpec::TraditionalRlaWithoutReplacement { p: 0.75, alpha: 0.1, beta: 0.1, ballots: 100 })
            .unwrap();
        assert!(r.log_statistic(60, 60).unwrap().is_infinite());
        assert_eq!(r.decide(60, 60).unwrap(), Decision::StopWinnerConfirmed);
    }

    #[test]
    fn empty_sample_continues() {
        let r = bayes(0.1, Prior::two_point(100, 50, 75).unwrap());
        assert_eq!(r.log_statistic(0, 0).unwrap().ln(), 0.0);
        assert_eq!(r.decide(0, 0).unwrap(), Decision::Continue);
    }

    #[test]
    fn equality_with_upper_bound_continues() {
        // U = 0.9 / 0.4 = 2.25, the statistic at n = k = 2.
        let r = AuditRule::new(RuleSpec::WaldWithReplacement { p0: 0.5, p1: 0.75, alpha: 0.4, beta: 0.1 }).unwrap();
        assert_relative_eq!(r.ln_upper(), r.log_statistic(2, 2).unwrap().ln(), epsilon = 1e-15);
        assert_eq!(r.classify(r.ln_upper()), Decision::Continue);
        assert_eq!(r.classify(r.ln_lower()), Decision::Continue);
        assert_eq!(r.classify(r.ln_upper() + 1e-12), Decision::StopWinnerConfirmed);
        assert_eq!(r.classify(r.ln_lower() - 1e-12), Decision::StopHandCount);
    }

    #[test]
    fn impossible_sample() {
        // Two-point prior on {10, 90}, N = 100, n = 95: k = 50 is unreachable.
        let r = bayes(0.1, Prior::two_point(100, 10, 90).unwrap());
        assert_eq!(r.log_statistic(95, 50), Err(RuleError::ImpossibleSample { n: 95, k: 50 }));
        assert_eq!(r.extended_log_statistic(95, 50), f64::INFINITY);
        // k below every reachable count.
        let s = bayes(0.1, Prior::two_point(100, 50, 75).unwrap());
        assert!(matches!(s.decide(60, 5), Err(RuleError::ImpossibleSample { .. })));
        assert_eq!(s.extended_log_statistic(60, 5), f64::NEG_INFINITY);
        let t = s.thresholds(60).unwrap();
        assert_eq!(t, s.thresholds_by_scan(60).unwrap());
    }

    #[test]
    fn sample_validation() {
        let r = bayes(0.1, Prior::two_point(100, 50, 75).unwrap());
        assert_eq!(r.log_statistic(10, 11), Err(RuleError::SampleOutOfRange { n: 10, k: 11 }));
        assert_eq!(r.log_statistic(101, 1), Err(RuleError::SampleExceedsBallots { n: 101, ballots: 100 }));
    }

    #[test]
    fn parameter_validation() {
        assert!(AuditRule::new(RuleSpec::bravo(0.5, 0.1)).is_err());
        assert!(AuditRule::new(RuleSpec::bravo(0.7, 0.5)).is_err());
        assert!(AuditRule::new(RuleSpec::bravo(0.7, 0.0)).is_err());
        assert!(AuditRule::new(RuleSpec::bravo(0.7, 0.05)).is_ok());
        assert!(AuditRule::new(RuleSpec::WaldWithReplacement { p0: 0.6, p1: 0.7, alpha: 0.1, beta: 0.1 }).is_err());
        let losing_free = PriorSource::Named(PriorSpec::new(10, PriorFamily::UniformWinning {}));
        assert!(matches!(
            AuditRule::new(RuleSpec::Bayesian { gamma: 0.1, prior: losing_free.clone() }),
            Err(RuleError::Prior(PriorError::NoLosingMass))
        ));
        assert!(AuditRule::new(RuleSpec::BayesianRla { alpha: 0.1, prior: losing_free }).is_ok());
        assert!(AuditRule::new(RuleSpec::Bayesian { gamma: 0.5, prior: PriorSpec::new(10, PriorFamily::Uniform {}).into() })
            .is_err());
    }

    #[test]
    fn bravo_has_no_lower_threshold() {
        let r = AuditRule::new(RuleSpec::bravo(0.75, 0.1)).unwrap();
        for n in [1, 10, 57, 300] {
            assert_eq!(r.thresholds(n).unwrap().k_minus, None);
        }
    }

    #[test]
    fn tally_rounding() {
        assert_eq!(losing_tally_for(0.5, 101), 50);
        assert_eq!(losing_tally_for(0.3, 5), 2); // 1.5 rounds up
        assert_eq!(winning_tally_for(0.75, 100), 75);
        assert_eq!(winning_tally_for(0.7, 5), 3); // 3.5 rounds down
        assert_eq!(winning_tally_for(0.51, 10), 6); // clamped to a winning tally
    }

    #[test]
    fn closed_form_examples() {
        let t = thresholds_closed_form(0.75, 0.1, 0.1, 100).unwrap();
        assert_eq!(t.k_plus, Some(66));
        let direct = AuditRule::new(RuleSpec::TraditionalRlaWithReplacement { p: 0.75, alpha: 0.1, beta: 0.1 })
            .unwrap()
            .thresholds(100)
            .unwrap();
        assert_eq!(t, direct);
        for n in [1, 7, 100, 1000] {
            assert_eq!(thresholds_closed_form(0.75, 0.1, 0.0, n).unwrap().k_minus, None);
        }
    }

    #[test]
    fn decision_serde_names() {
        assert_eq!(serde_json::to_string(&Decision::StopWinnerConfirmed).unwrap(), r#""confirmed_winner""#);
        assert_eq!(serde_json::to_string(&Decision::StopHandCount).unwrap(), r#""hand_count""#);
        assert_eq!(serde_json::to_string(&Decision::Continue).unwrap(), r#""continue""#);
    }

    #[test]
    fn rule_spec_json() {
        let spec = RuleSpec::BayesianRla { alpha: 0.05, prior: PriorSpec::new(101, PriorFamily::UniformWinning {}).into() };
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(s, r#"{"kind":"bayesian_rla","alpha":0.05,"prior":{"N":101,"family":"uniform_winning","params":{}}}"#);
        assert_eq!(serde_json::from_str::<RuleSpec>(&s).unwrap(), spec);
    }
}
