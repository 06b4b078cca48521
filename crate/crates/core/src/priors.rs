//! Discrete priors over the announced winner's true tally `x ∈ {0..=N}`.
//!
//! A tally is *winning* when `x > N/2` (strictly), so for even `N` the tie
//! `x = N/2` counts as a loss. The hardest losing tally is therefore `⌊N/2⌋`
//! for both parities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PriorError {
    #[error("ballot count must be positive")]
    NoBallots,
    #[error("losing tally {losing} must be at most {max_losing} and winning tally {winning} must lie in ({max_losing}, {ballots}]")]
    InvalidTallies { ballots: u64, losing: u64, winning: u64, max_losing: u64 },
    #[error("beta shape parameters must be positive and finite (a={a}, b={b})")]
    InvalidShape { a: f64, b: f64 },
    #[error("prior has no interior tallies for N={0}")]
    TooFewBallots(u64),
    #[error("prior has no mass on winning tallies")]
    NoWinningMass,
    #[error("prior has no mass on losing tallies")]
    NoLosingMass,
    #[error("mass vector has {got} entries, expected N+1 = {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("mass at tally {x} is {value}; masses must be finite and non-negative")]
    BadMass { x: usize, value: f64 },
    #[error("mass sums to {0}, expected 1")]
    NotNormalized(f64),
    #[error("nested prior has N={inner}, outer N={outer}")]
    BallotMismatch { outer: u64, inner: u64 },
}

/// Largest losing tally, `⌊N/2⌋`.
pub fn max_losing_tally(ballots: u64) -> u64 {
    ballots / 2
}

/// Smallest winning tally, `⌊N/2⌋ + 1`.
pub fn min_winning_tally(ballots: u64) -> u64 {
    ballots / 2 + 1
}

pub fn is_winning_tally(ballots: u64, x: u64) -> bool {
    x > max_losing_tally(ballots)
}

const NORMALIZATION_TOLERANCE: f64 = 1e-12;

fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// A normalized distribution over tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorRepr", into = "PriorRepr")]
pub struct Prior {
    ballots: u64,
    mass: Vec<f64>,
    winner_mass: f64,
}

#[derive(Serialize, Deserialize)]
struct PriorRepr {
    #[serde(rename = "N")]
    ballots: u64,
    mass: Vec<f64>,
}

impl TryFrom<PriorRepr> for Prior {
    type Error = PriorError;

    fn try_from(r: PriorRepr) -> Result<Self, Self::Error> {
        Prior::from_mass(r.ballots, r.mass)
    }
}

impl From<Prior> for PriorRepr {
    fn from(p: Prior) -> Self {
        PriorRepr { ballots: p.ballots, mass: p.mass }
    }
}

impl Prior {
    /// Validates an explicit mass vector. It must already sum to one.
    pub fn from_mass(ballots: u64, mass: Vec<f64>) -> Result<Prior, PriorError> {
        if ballots == 0 {
            return Err(PriorError::NoBallots);
        }
        let expected = ballots as usize + 1;
        if mass.len() != expected {
            return Err(PriorError::LengthMismatch { expected, got: mass.len() });
        }
        if let Some((x, &value)) = mass.iter().enumerate().find(|(_, m)| !(m.is_finite() && **m >= 0.0)) {
            return Err(PriorError::BadMass { x, value });
        }
        let total = neumaier_sum(mass.iter().copied());
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(PriorError::NotNormalized(total));
        }
        Ok(Self::with_cached_mass(ballots, mass))
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(ballots: u64, mut weights: Vec<f64>) -> Result<Prior, PriorError> {
        if ballots == 0 {
            return Err(PriorError::NoBallots);
        }
        let expected = ballots as usize + 1;
        if weights.len() != expected {
            return Err(PriorError::LengthMismatch { expected, got: weights.len() });
        }
        if let Some((x, &value)) = weights.iter().enumerate().find(|(_, m)| !(m.is_finite() && **m >= 0.0)) {
            return Err(PriorError::BadMass { x, value });
        }
        let total = neumaier_sum(weights.iter().copied());
        if total <= 0.0 {
            return Err(PriorError::NotNormalized(total));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self::with_cached_mass(ballots, weights))
    }

    fn with_cached_mass(ballots: u64, mass: Vec<f64>) -> Prior {
        let first_winning = min_winning_tally(ballots) as usize;
        let winner_mass = neumaier_sum(mass[first_winning..].iter().copied());
        Prior { ballots, mass, winner_mass }
    }

    /// Half the mass on a losing tally, half on a winning tally.
    pub fn two_point(ballots: u64, losing: u64, winning: u64) -> Result<Prior, PriorError> {
        if ballots == 0 {
            return Err(PriorError::NoBallots);
        }
        let max_losing = max_losing_tally(ballots);
        if losing > max_losing || winning <= max_losing || winning > ballots {
            return Err(PriorError::InvalidTallies { ballots, losing, winning, max_losing });
        }
        let mut mass = vec![0.0; ballots as usize + 1];
        mass[losing as usize] = 0.5;
        mass[winning as usize] = 0.5;
        Ok(Self::with_cached_mass(ballots, mass))
    }

    /// Pointwise discretization of a Beta(a, b) density: weight
    /// `(x/N)^(a-1) (1-x/N)^(b-1)` on `1..N-1`, nothing on the endpoints.
    pub fn beta_shape(ballots: u64, a: f64, b: f64) -> Result<Prior, PriorError> {
        check_shape(a, b)?;
        if ballots < 2 {
            return Err(PriorError::TooFewBallots(ballots));
        }
        let n = ballots as f64;
        let mut ln_w: Vec<f64> = (0..=ballots)
            .map(|x| {
                if x == 0 || x == ballots {
                    f64::NEG_INFINITY
                } else {
                    let t = x as f64 / n;
                    (a - 1.0) * t.ln() + (b - 1.0) * (-t).ln_1p()
                }
            })
            .collect();
        exp_normalize(&mut ln_w);
        Self::from_weights(ballots, ln_w)
    }

    /// Beta-binomial(N, a, b): the tally distribution of a Pólya urn seeded
    /// with pseudo-counts `a` and `b`.
    pub fn beta_binomial(ballots: u64, a: f64, b: f64) -> Result<Prior, PriorError> {
        check_shape(a, b)?;
        if ballots == 0 {
            return Err(PriorError::NoBallots);
        }
        let n = ballots as f64;
        let mut ln_w = Vec::with_capacity(ballots as usize + 1);
        let mut cur = 0.0f64;
        ln_w.push(cur);
        for x in 0..ballots {
            let xf = x as f64;
            // m[x+1] / m[x] = (N-x)/(x+1) * (x+a)/(N-x-1+b)
            cur += ((n - xf) / (xf + 1.0)).ln() + ((xf + a) / (n - xf - 1.0 + b)).ln();
            ln_w.push(cur);
        }
        exp_normalize(&mut ln_w);
        Self::from_weights(ballots, ln_w)
    }

    /// Equal mass on every tally `0..=N`.
    pub fn uniform(ballots: u64) -> Result<Prior, PriorError> {
        if ballots == 0 {
            return Err(PriorError::NoBallots);
        }
        Self::from_weights(ballots, vec![1.0; ballots as usize + 1])
    }

    /// Equal mass on each winning tally `⌊N/2⌋+1..=N`.
    pub fn uniform_winning(ballots: u64) -> Result<Prior, PriorError> {
        if ballots == 0 {
            return Err(PriorError::NoBallots);
        }
        let first = min_winning_tally(ballots) as usize;
        let mut w = vec![0.0; ballots as usize + 1];
        w[first..].iter_mut().for_each(|m| *m = 1.0);
        Self::from_weights(ballots, w)
    }

    /// The risk-maximizing companion of this prior: the winning-side shape
    /// rescaled to total ½, plus ½ on the hardest losing tally `⌊N/2⌋`.
    pub fn rla_transform(&self) -> Result<Prior, PriorError> {
        if self.winner_mass <= 0.0 {
            return Err(PriorError::NoWinningMass);
        }
        let first = min_winning_tally(self.ballots) as usize;
        let scale = 0.5 / self.winner_mass;
        let mut mass = vec![0.0; self.mass.len()];
        for (dst, src) in mass[first..].iter_mut().zip(&self.mass[first..]) {
            *dst = src * scale;
        }
        mass[max_losing_tally(self.ballots) as usize] = 0.5;
        Ok(Self::with_cached_mass(self.ballots, mass))
    }

    /// Rescales so the winning and losing halves each carry ½. Priors already
    /// balanced to within 1e-12 are returned unchanged.
    pub fn balanced(&self) -> Result<Prior, PriorError> {
        let losing = self.loser_mass();
        if self.winner_mass <= 0.0 {
            return Err(PriorError::NoWinningMass);
        }
        if losing <= 0.0 {
            return Err(PriorError::NoLosingMass);
        }
        if (self.winner_mass - 0.5).abs() <= NORMALIZATION_TOLERANCE && (losing - 0.5).abs() <= NORMALIZATION_TOLERANCE {
            return Ok(self.clone());
        }
        let first = min_winning_tally(self.ballots) as usize;
        let mut mass = self.mass.clone();
        let (lose, win) = mass.split_at_mut(first);
        lose.iter_mut().for_each(|m| *m *= 0.5 / losing);
        win.iter_mut().for_each(|m| *m *= 0.5 / self.winner_mass);
        Ok(Self::with_cached_mass(self.ballots, mass))
    }

    pub fn ballots(&self) -> u64 {
        self.ballots
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn mass_at(&self, x: u64) -> f64 {
        self.mass.get(x as usize).copied().unwrap_or(0.0)
    }

    /// `Pr[announced winner truly won] = Σ_{x > N/2} f(x)`.
    pub fn winner_mass(&self) -> f64 {
        self.winner_mass
    }

    pub fn loser_mass(&self) -> f64 {
        let first = min_winning_tally(self.ballots) as usize;
        neumaier_sum(self.mass[..first].iter().copied())
    }

    /// Tallies with positive mass, in increasing order.
    pub fn support(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.mass.iter().enumerate().filter(|(_, m)| **m > 0.0).map(|(x, m)| (x as u64, *m))
    }
}

fn check_shape(a: f64, b: f64) -> Result<(), PriorError> {
    if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(PriorError::InvalidShape { a, b })
    }
}

fn exp_normalize(ln_w: &mut [f64]) {
    let max = ln_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for v in ln_w.iter_mut() {
        *v = (*v - max).exp();
    }
}

/// Beta prior discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaDiscretization {
    /// Density evaluated at `x/N`.
    #[default]
    Pointwise,
    /// Beta-binomial tally law (Pólya urn with the same pseudo-counts).
    BetaBinomial,
}

/// Compact named description of a prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(rename = "N")]
    pub ballots: u64,
    #[serde(flatten)]
    pub family: PriorFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum PriorFamily {
    TwoPoint {
        losing: u64,
        winning: u64,
    },
    Beta {
        a: f64,
        b: f64,
        #[serde(default)]
        discretization: BetaDiscretization,
    },
    Uniform {},
    UniformWinning {},
    RlaTransform {
        base: Box<PriorSpec>,
    },
}

impl PriorSpec {
    pub fn new(ballots: u64, family: PriorFamily) -> Self {
        PriorSpec { ballots, family }
    }

    pub fn build(&self) -> Result<Prior, PriorError> {
        let n = self.ballots;
        match &self.family {
            PriorFamily::TwoPoint { losing, winning } => Prior::two_point(n, *losing, *winning),
            PriorFamily::Beta { a, b, discretization: BetaDiscretization::Pointwise } => Prior::beta_shape(n, *a, *b),
            PriorFamily::Beta { a, b, discretization: BetaDiscretization::BetaBinomial } => Prior::beta_binomial(n, *a, *b),
            PriorFamily::Uniform {} => Prior::uniform(n),
            PriorFamily::UniformWinning {} => Prior::uniform_winning(n),
            PriorFamily::RlaTransform { base } => {
                if base.ballots != n {
                    return Err(PriorError::BallotMismatch { outer: n, inner: base.ballots });
                }
                base.build()?.rla_transform()
            }
        }
    }
}

/// Either form a prior may take on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorSource {
    Named(PriorSpec),
    Explicit(Prior),
}

impl PriorSource {
    pub fn ballots(&self) -> u64 {
        match self {
            PriorSource::Named(s) => s.ballots,
            PriorSource::Explicit(p) => p.ballots(),
        }
    }

    pub fn build(&self) -> Result<Prior, PriorError> {
        match self {
            PriorSource::Named(s) => s.build(),
            PriorSource::Explicit(p) => Ok(p.clone()),
        }
    }
}

impl From<PriorSpec> for PriorSource {
    fn from(s: PriorSpec) -> Self {
        PriorSource::Named(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn two_point_examples() {
        let p = Prior::two_point(100, 50, 75).unwrap();
        assert_eq!(p.mass_at(50), 0.5);
        assert_eq!(p.mass_at(75), 0.5);
        assert_eq!(p.winner_mass(), 0.5);
        let q = Prior::two_point(101, 50, 76).unwrap();
        assert_eq!(q.mass_at(50), 0.5);
        assert_eq!(q.mass_at(76), 0.5);
        assert!(matches!(Prior::two_point(100, 60, 75), Err(PriorError::InvalidTallies { .. })));
        assert!(Prior::two_point(100, 40, 50).is_err());
        assert!(Prior::two_point(100, 40, 101).is_err());
    }

    #[test]
    fn beta_shape_examples() {
        let p = Prior::beta_shape(4, 1.0, 1.0).unwrap();
        assert_eq!(p.mass_at(0), 0.0);
        assert_eq!(p.mass_at(4), 0.0);
        for x in 1..=3 {
            assert_relative_eq!(p.mass_at(x), 1.0 / 3.0, epsilon = 1e-15);
        }
        let big = Prior::beta_shape(100_000, 0.5, 0.5).unwrap();
        let ratio = big.mass_at(50_000) / big.mass_at(25_000);
        assert_relative_eq!(ratio, (0.1875f64 / 0.25).sqrt(), epsilon = 1e-12);
        let three = Prior::beta_shape(3, 0.5, 0.5).unwrap();
        assert_relative_eq!(three.mass_at(1), 0.5, epsilon = 1e-15);
        assert_relative_eq!(three.mass_at(2), 0.5, epsilon = 1e-15);
        assert_relative_eq!(three.winner_mass(), 0.5, epsilon = 1e-15);
        assert!(Prior::beta_shape(10, 0.0, 1.0).is_err());
        assert!(Prior::beta_shape(1, 1.0, 1.0).is_err());
    }

    #[test]
    fn beta_binomial_uniform_case() {
        // Beta-binomial(N, 1, 1) is uniform on 0..=N.
        let p = Prior::beta_binomial(9, 1.0, 1.0).unwrap();
        for x in 0..=9 {
            assert_relative_eq!(p.mass_at(x), 0.1, epsilon = 1e-13);
        }
        // Beta-binomial(2, ½, ½): masses 3/8, 1/4, 3/8.
        let q = Prior::beta_binomial(2, 0.5, 0.5).unwrap();
        assert_relative_eq!(q.mass_at(0), 0.375, epsilon = 1e-14);
        assert_relative_eq!(q.mass_at(1), 0.25, epsilon = 1e-14);
    }

    #[test]
    fn uniform_winning_examples() {
        let p = Prior::uniform_winning(5).unwrap();
        assert_eq!(p.support().map(|(x, _)| x).collect::<Vec<_>>(), vec![3, 4, 5]);
        for x in 3..=5 {
            assert_relative_eq!(p.mass_at(x), 1.0 / 3.0, epsilon = 1e-15);
        }
        let q = Prior::uniform_winning(4).unwrap();
        assert_eq!(q.mass_at(3), 0.5);
        assert_eq!(q.mass_at(4), 0.5);
        let r = Prior::uniform_winning(100).unwrap();
        assert_relative_eq!(r.mass_at(51), 0.02, epsilon = 1e-15);
        assert_relative_eq!(r.mass_at(100), 0.02, epsilon = 1e-15);
        assert_eq!(r.mass_at(50), 0.0);
        assert_eq!(r.winner_mass(), 1.0);
    }

    #[test]
    fn rla_transform_examples() {
        let t = Prior::uniform_winning(5).unwrap().rla_transform().unwrap();
        assert_eq!(t.mass_at(2), 0.5);
        for x in 3..=5 {
            assert_relative_eq!(t.mass_at(x), 1.0 / 6.0, epsilon = 1e-15);
        }
        assert_eq!(t.mass_at(0) + t.mass_at(1), 0.0);

        let u = Prior::two_point(101, 30, 80).unwrap().rla_transform().unwrap();
        assert_eq!(u.mass_at(50), 0.5);
        assert_eq!(u.mass_at(80), 0.5);
        assert_eq!(u.mass_at(30), 0.0);

        let b = Prior::beta_shape(100_000, 0.5, 0.5).unwrap();
        let v = b.rla_transform().unwrap();
        assert_eq!(v.mass_at(50_000), 0.5);
        assert_relative_eq!(neumaier_sum(v.mass().iter().copied()), 1.0, epsilon = 1e-12);
        assert_relative_eq!(v.mass_at(60_000) / v.mass_at(70_000), b.mass_at(60_000) / b.mass_at(70_000), epsilon = 1e-12);
        assert_eq!(v.support().filter(|(x, _)| *x <= 50_000).count(), 1);

        let losing_only = Prior::two_point(10, 2, 6).unwrap().rla_transform().unwrap();
        assert!(losing_only.winner_mass() > 0.0);
        let mut m = vec![0.0; 11];
        m[3] = 1.0;
        assert_eq!(Prior::from_mass(10, m).unwrap().rla_transform(), Err(PriorError::NoWinningMass));
    }

    #[test]
    fn winner_mass_examples() {
        assert_eq!(Prior::two_point(100, 50, 75).unwrap().winner_mass(), 0.5);
        assert_eq!(Prior::uniform_winning(5).unwrap().winner_mass(), 1.0);
        assert_relative_eq!(Prior::beta_shape(3, 0.5, 0.5).unwrap().winner_mass(), 0.5, epsilon = 1e-15);
        // Even N: the tie is a losing tally.
        let u = Prior::uniform(4).unwrap();
        assert_relative_eq!(u.winner_mass(), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn balanced_halves() {
        let u = Prior::uniform(4).unwrap().balanced().unwrap();
        assert_relative_eq!(u.winner_mass(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(u.mass_at(0), 0.5 / 3.0, epsilon = 1e-15);
        assert_eq!(Prior::uniform_winning(4).unwrap().balanced(), Err(PriorError::NoLosingMass));
        let tp = Prior::two_point(10, 3, 7).unwrap();
        assert_eq!(tp.balanced().unwrap(), tp);
    }

    #[test]
    fn from_mass_validation() {
        assert!(matches!(Prior::from_mass(2, vec![0.5, 0.5]), Err(PriorError::LengthMismatch { .. })));
        assert!(matches!(Prior::from_mass(2, vec![0.5, 0.6, -0.1]), Err(PriorError::BadMass { x: 2, .. })));
        assert!(matches!(Prior::from_mass(2, vec![0.5, 0.4, 0.0]), Err(PriorError::NotNormalized(_))));
        assert!(Prior::from_mass(0, vec![1.0]).is_err());
    }

    #[test]
    fn json_forms() {
        let p = Prior::two_point(4, 1, 3).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"N":4,"mass":[0.0,0.5,0.0,0.5,0.0]}"#);
        assert_eq!(serde_json::from_str::<Prior>(&s).unwrap(), p);
        assert!(serde_json::from_str::<Prior>(r#"{"N":2,"mass":[0.2,0.2,0.2]}"#).is_err());

        let spec = PriorSpec::new(
            100_000,
            PriorFamily::Beta { a: 0.5, b: 0.5, discretization: BetaDiscretization::Pointwise },
        );
        let js = serde_json::to_string(&spec).unwrap();
        assert_eq!(js, r#"{"N":100000,"family":"beta","params":{"a":0.5,"b":0.5,"discretization":"pointwise"}}"#);
        let named: PriorSpec = serde_json::from_str(r#"{"N":5,"family":"uniform_winning","params":{}}"#).unwrap();
        assert_eq!(named.build().unwrap(), Prior::uniform_winning(5).unwrap());
        let nested: PriorSource = serde_json::from_str(
            r#"{"N":5,"family":"rla_transform","params":{"base":{"N":5,"family":"uniform_winning","params":{}}}}"#,
        )
        .unwrap();
        assert_eq!(nested.build().unwrap(), Prior::uniform_winning(5).unwrap().rla_transform().unwrap());
        let explicit: PriorSource = serde_json::from_str(r#"{"N":2,"mass":[0.5,0.0,0.5]}"#).unwrap();
        assert!(matches!(explicit, PriorSource::Explicit(_)));
        let beta_default: PriorSpec = serde_json::from_str(r#"{"N":10,"family":"beta","params":{"a":1,"b":2}}"#).unwrap();
        assert!(matches!(beta_default.family, PriorFamily::Beta { discretization: BetaDiscretization::Pointwise, .. }));
    }

    fn arb_prior() -> impl Strategy<Value = Prior> {
        (2u64..60).prop_flat_map(|n| {
            prop::collection::vec(0.0f64..1.0, n as usize + 1).prop_filter_map("needs a winning weight", move |mut w| {
                let first = min_winning_tally(n) as usize;
                w[first] += 0.01;
                Prior::from_weights(n, w).ok()
            })
        })
    }

    proptest! {
        #[test]
        fn rla_transform_is_idempotent(p in arb_prior()) {
            let once = p.rla_transform().unwrap();
            let twice = once.rla_transform().unwrap();
            for (a, b) in once.mass().iter().zip(twice.mass()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn rla_transform_balances_and_concentrates(p in arb_prior()) {
            let t = p.rla_transform().unwrap();
            prop_assert!((t.winner_mass() - 0.5).abs() <= 1e-12);
            prop_assert!((neumaier_sum(t.mass().iter().copied()) - 1.0).abs() <= 1e-12);
            let losing: Vec<u64> = t.support().filter(|(x, _)| *x <= max_losing_tally(t.ballots())).map(|(x, _)| x).collect();
            prop_assert_eq!(losing, vec![t.ballots() / 2]);
        }
    }
}
