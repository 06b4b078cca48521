//! Turning flags (and an optional TOML config) into a rule and schedule.

use std::path::{Path, PathBuf};

use ballot_audit::priors::BetaDiscretization;
use ballot_audit::{PriorFamily, PriorSource, PriorSpec, RuleSpec, Schedule};
use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditKind {
    /// Wald sequential test with replacement.
    Wald,
    /// Wald sequential test without replacement.
    WaldWor,
    /// Traditional RLA with replacement.
    Rla,
    /// Traditional RLA without replacement.
    RlaWor,
    /// BRAVO: traditional RLA with beta = 0.
    Bravo,
    /// Bayesian audit.
    Bayes,
    /// Bayesian RLA.
    BayesRla,
}

/// Audit configuration flags shared by most subcommands.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditArgs {
    /// Audit family.
    #[arg(long, value_enum)]
    pub audit: Option<AuditKind>,
    /// Upset-probability bound for the Bayesian audit.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Risk limit.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bound on wrongly escalating a correct outcome (0 for BRAVO).
    #[arg(long)]
    pub beta: Option<f64>,
    /// Assumed winner share for the traditional RLA.
    #[arg(long)]
    pub p: Option<f64>,
    /// Wald losing-hypothesis share.
    #[arg(long)]
    pub p0: Option<f64>,
    /// Wald winning-hypothesis share.
    #[arg(long)]
    pub p1: Option<f64>,
    /// Ballots cast.
    #[arg(long = "N", id = "ballots")]
    #[serde(rename = "N")]
    pub ballots: Option<u64>,
    /// Prior: beta:A,B | beta-binomial:A,B | uniform | uniform-winning |
    /// two-point:LOSING,WINNING | file:PATH
    #[arg(long)]
    pub prior: Option<String>,
    /// Round sizes: "200,400,800", "200x2..51200" or "9..78".
    /// Defaults to 200 doubling to 51200.
    #[arg(long)]
    pub schedule: Option<String>,
}

impl AuditArgs {
    /// Flags win over config values.
    pub fn merged(&self, config: Option<&Path>) -> Result<AuditArgs, CliError> {
        let Some(path) = config else { return Ok(self.clone()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base: AuditArgs = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(AuditArgs {
            audit: self.audit.or(base.audit),
            gamma: self.gamma.or(base.gamma),
            alpha: self.alpha.or(base.alpha),
            beta: self.beta.or(base.beta),
            p: self.p.or(base.p),
            p0: self.p0.or(base.p0),
            p1: self.p1.or(base.p1),
            ballots: self.ballots.or(base.ballots),
            prior: self.prior.clone().or(base.prior),
            schedule: self.schedule.clone().or(base.schedule),
        })
    }

    pub fn schedule(&self) -> Result<Schedule, CliError> {
        match &self.schedule {
            None => Ok(Schedule::default()),
            Some(s) => s.parse().map_err(|e| CliError::Usage(format!("--schedule: {e}"))),
        }
    }

    pub fn rule(&self) -> Result<RuleSpec, CliError> {
        let kind = self.audit.ok_or_else(|| CliError::Usage("--audit is required".into()))?;
        let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| CliError::Usage(format!("--audit {} needs --{flag}", kind_name(kind))));
        let ballots = || self.ballots.ok_or_else(|| CliError::Usage(format!("--audit {} needs --N", kind_name(kind))));
        let spec = match kind {
            AuditKind::Wald => RuleSpec::WaldWithReplacement {
                p0: need(self.p0, "p0")?,
                p1: need(self.p1, "p1")?,
                alpha: need(self.alpha, "alpha")?,
                beta: need(self.beta, "beta")?,
            },
            AuditKind::WaldWor => RuleSpec::WaldWithoutReplacement {
                p0: need(self.p0, "p0")?,
                p1: need(self.p1, "p1")?,
                alpha: need(self.alpha, "alpha")?,
                beta: need(self.beta, "beta")?,
                ballots: ballots()?,
            },
            AuditKind::Rla => RuleSpec::TraditionalRlaWithReplacement {
                p: need(self.p, "p")?,
                alpha: need(self.alpha, "alpha")?,
                beta: need(self.beta, "beta")?,
            },
            AuditKind::RlaWor => RuleSpec::TraditionalRlaWithoutReplacement {
                p: need(self.p, "p")?,
                alpha: need(self.alpha, "alpha")?,
                beta: need(self.beta, "beta")?,
                ballots: ballots()?,
            },
            AuditKind::Bravo => RuleSpec::bravo(need(self.p, "p")?, need(self.alpha, "alpha")?),
            AuditKind::Bayes => RuleSpec::Bayesian {
                gamma: need(self.gamma, "gamma")?,
                prior: parse_prior(self.prior.as_deref().unwrap_or("beta:0.5,0.5"), ballots()?)?,
            },
            AuditKind::BayesRla => RuleSpec::BayesianRla {
                alpha: need(self.alpha, "alpha")?,
                prior: parse_prior(self.prior.as_deref().unwrap_or("uniform-winning"), ballots()?)?,
            },
        };
        // Surface parameter errors as usage errors before any work starts.
        spec.compile().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }
}

fn kind_name(kind: AuditKind) -> String {
    kind.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
}

fn two_numbers<T: std::str::FromStr>(s: &str, what: &str) -> Result<(T, T), CliError> {
    let bad = || CliError::Usage(format!("--prior {what} expects two comma-separated numbers, got {s:?}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn parse_prior(text: &str, ballots: u64) -> Result<PriorSource, CliError> {
    let (name, rest) = text.split_once(':').unwrap_or((text, ""));
    let family = match name {
        "beta" | "beta-binomial" => {
            let (a, b) = two_numbers(rest, name)?;
            let discretization =
                if name == "beta" { BetaDiscretization::Pointwise } else { BetaDiscretization::BetaBinomial };
            PriorFamily::Beta { a, b, discretization }
        }
        "uniform" => PriorFamily::Uniform {},
        "uniform-winning" => PriorFamily::UniformWinning {},
        "two-point" => {
            let (losing, winning) = two_numbers(rest, name)?;
            PriorFamily::TwoPoint { losing, winning }
        }
        "file" => return prior_from_file(&PathBuf::from(rest), ballots),
        _ => return Err(CliError::Usage(format!("unknown prior {text:?}"))),
    };
    Ok(PriorSource::Named(PriorSpec::new(ballots, family)))
}

fn prior_from_file(path: &Path, ballots: u64) -> Result<PriorSource, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let source: PriorSource =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if source.ballots() != ballots {
        return Err(CliError::Usage(format!(
            "{} describes N = {} but --N is {ballots}",
            path.display(),
            source.ballots()
        )));
    }
    Ok(source)
}
