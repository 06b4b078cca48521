//! Log-domain combinatorics.
//!
//! Everything here works with natural logarithms so that quantities such as
//! `C(100000, 51200)` stay representable. Log-factorials are accumulated
//! exactly from `ln i` in double-double arithmetic and cached for the life of
//! the process; the cache only ever grows.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Sub};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HypergeomError {
    #[error("invalid hypergeometric parameters: population {population}, marked {marked}, draws {draws}")]
    InvalidParams { population: u64, marked: u64, draws: u64 },
}

/// A non-negative quantity stored as its natural logarithm.
///
/// `f64::NEG_INFINITY` encodes an exact zero. `f64::INFINITY` is reserved for
/// likelihood ratios whose denominator vanished.
#[derive(Clone, Copy, PartialEq, Default)]
pub struct LogValue(f64);

impl LogValue {
    pub const ZERO: LogValue = LogValue(f64::NEG_INFINITY);
    pub const ONE: LogValue = LogValue(0.0);
    pub const INFINITY: LogValue = LogValue(f64::INFINITY);

    /// Wraps a natural logarithm. NaN is rejected by a debug assertion.
    pub fn from_ln(ln: f64) -> Self {
        debug_assert!(!ln.is_nan(), "NaN is not a log value");
        LogValue(ln)
    }

    /// Encodes a plain non-negative number.
    pub fn from_value(v: f64) -> Self {
        debug_assert!(v >= 0.0, "log values encode non-negative quantities");
        LogValue(v.ln())
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn exp(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }

    /// Quotient of two encoded quantities; `None` for `0 / 0` and `inf / inf`.
    pub fn checked_div(self, rhs: LogValue) -> Option<LogValue> {
        match (self.is_zero(), rhs.is_zero()) {
            (true, true) => None,
            (false, true) => Some(LogValue::INFINITY),
            (true, false) => Some(LogValue::ZERO),
            (false, false) => {
                let q = self.0 - rhs.0;
                if q.is_nan() {
                    None
                } else {
                    Some(LogValue(q))
                }
            }
        }
    }

    /// Raises the quantity to a non-negative integer power; `0^0 = 1`.
    pub fn powi(self, e: u64) -> LogValue {
        if e == 0 {
            LogValue::ONE
        } else {
            LogValue(self.0 * e as f64)
        }
    }
}

impl fmt::Debug for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            write!(f, "LogValue(zero)")
        } else {
            write!(f, "LogValue(ln={})", self.0)
        }
    }
}

impl PartialOrd for LogValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

impl Mul for LogValue {
    type Output = LogValue;

    fn mul(self, rhs: LogValue) -> LogValue {
        // 0 * inf is not meaningful for probabilities; treat it as zero.
        if self.is_zero() || rhs.is_zero() {
            LogValue::ZERO
        } else {
            LogValue(self.0 + rhs.0)
        }
    }
}

impl Div for LogValue {
    type Output = LogValue;

    /// Panics on `0 / 0`; use [`LogValue::checked_div`] when that can happen.
    fn div(self, rhs: LogValue) -> LogValue {
        self.checked_div(rhs).expect("indeterminate log-domain quotient")
    }
}

impl Add for LogValue {
    type Output = LogValue;

    fn add(self, rhs: LogValue) -> LogValue {
        let (hi, lo) = if self.0 >= rhs.0 { (self.0, rhs.0) } else { (rhs.0, self.0) };
        if lo == f64::NEG_INFINITY || hi == f64::INFINITY {
            return LogValue(hi);
        }
        LogValue(hi + (lo - hi).exp().ln_1p())
    }
}

impl Sub for LogValue {
    type Output = LogValue;

    /// Saturates at zero: `a - b` for `b >= a` is exact zero.
    fn sub(self, rhs: LogValue) -> LogValue {
        if rhs.is_zero() {
            return self;
        }
        if rhs.0 >= self.0 {
            return LogValue::ZERO;
        }
        LogValue(self.0 + (-(rhs.0 - self.0).exp()).ln_1p())
    }
}

impl Serialize for LogValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        // JSON has no infinities; use null for zero and a string for +inf.
        if self.is_zero() {
            s.serialize_none()
        } else if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for LogValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Option::<Repr>::deserialize(d)? {
            None => Ok(LogValue::ZERO),
            Some(Repr::Num(v)) => Ok(LogValue(v)),
            Some(Repr::Text(t)) if t == "inf" => Ok(LogValue::INFINITY),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("bad log value {t:?}"))),
        }
    }
}

/// Streaming log-sum-exp with a running maximum.
#[derive(Debug, Clone, Copy)]
pub struct LogAccumulator {
    max: f64,
    scaled: f64,
}

impl Default for LogAccumulator {
    fn default() -> Self {
        LogAccumulator { max: f64::NEG_INFINITY, scaled: 0.0 }
    }
}

impl LogAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, v: LogValue) {
        let v = v.0;
        if v == f64::NEG_INFINITY {
            return;
        }
        if v <= self.max {
            self.scaled += (v - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - v).exp() + 1.0;
            self.max = v;
        }
    }

    pub fn total(&self) -> LogValue {
        if self.max == f64::NEG_INFINITY {
            LogValue::ZERO
        } else if self.max == f64::INFINITY {
            LogValue::INFINITY
        } else {
            LogValue(self.max + self.scaled.ln())
        }
    }
}

impl FromIterator<LogValue> for LogAccumulator {
    fn from_iter<I: IntoIterator<Item = LogValue>>(iter: I) -> Self {
        let mut acc = LogAccumulator::new();
        for v in iter {
            acc.push(v);
        }
        acc
    }
}

/// `ln Σ exp(v)`; the empty sum is exact zero.
pub fn log_sum(values: &[LogValue]) -> LogValue {
    let max = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return LogValue(max);
    }
    let scaled: f64 = values.iter().map(|v| (v.0 - max).exp()).sum();
    LogValue(max + scaled.ln())
}

// Double-double helpers (Knuth two-sum / Dekker fast-two-sum).

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// Signed double-double accumulator for short sums of log-factorials.
#[derive(Clone, Copy, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    #[inline]
    fn add(&mut self, hi: f64, lo: f64) {
        let (s, e) = two_sum(self.hi, hi);
        let (h, l) = fast_two_sum(s, e + self.lo + lo);
        self.hi = h;
        self.lo = l;
    }

    #[inline]
    fn sub(&mut self, hi: f64, lo: f64) {
        self.add(-hi, -lo);
    }

    #[inline]
    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Table of `ln i!` stored as double-double pairs.
#[derive(Debug)]
pub struct LogFactorials {
    hi: Vec<f64>,
    lo: Vec<f64>,
}

impl LogFactorials {
    fn with_len(len: usize, previous: Option<&LogFactorials>) -> LogFactorials {
        let mut hi = Vec::with_capacity(len);
        let mut lo = Vec::with_capacity(len);
        if let Some(prev) = previous {
            hi.extend_from_slice(&prev.hi);
            lo.extend_from_slice(&prev.lo);
        } else {
            hi.push(0.0);
            lo.push(0.0);
        }
        let mut acc = Dd { hi: *hi.last().unwrap(), lo: *lo.last().unwrap() };
        for i in hi.len()..len {
            acc.add((i as f64).ln(), 0.0);
            hi.push(acc.hi);
            lo.push(acc.lo);
        }
        LogFactorials { hi, lo }
    }

    /// Largest `n` whose factorial is tabulated.
    pub fn max_n(&self) -> u64 {
        self.hi.len() as u64 - 1
    }

    #[inline]
    fn add_to(&self, acc: &mut Dd, n: u64) {
        let i = n as usize;
        acc.add(self.hi[i], self.lo[i]);
    }

    #[inline]
    fn sub_from(&self, acc: &mut Dd, n: u64) {
        let i = n as usize;
        acc.sub(self.hi[i], self.lo[i]);
    }

    /// `ln n!`.
    pub fn ln_factorial(&self, n: u64) -> f64 {
        self.hi[n as usize] + self.lo[n as usize]
    }

    /// `ln C(n, k)`; exact zero outside `0 <= k <= n`.
    pub fn ln_binomial(&self, n: u64, k: i64) -> LogValue {
        if k < 0 || k as u64 > n {
            return LogValue::ZERO;
        }
        let k = k as u64;
        let mut acc = Dd::default();
        self.add_to(&mut acc, n);
        self.sub_from(&mut acc, k);
        self.sub_from(&mut acc, n - k);
        LogValue(acc.value())
    }

    /// `ln hg(k; population, marked, draws)` without range checks on the
    /// population parameters. Callers must ensure `marked <= population`,
    /// `draws <= population` and `population <= self.max_n()`.
    #[inline]
    pub fn ln_hg_unchecked(&self, k: i64, population: u64, marked: u64, draws: u64) -> LogValue {
        let lo = (draws + marked).saturating_sub(population) as i64;
        let hi = draws.min(marked) as i64;
        if k < lo || k > hi {
            return LogValue::ZERO;
        }
        let k = k as u64;
        let unmarked = population - marked;
        let mut acc = Dd::default();
        // C(marked, k)
        self.add_to(&mut acc, marked);
        self.sub_from(&mut acc, k);
        self.sub_from(&mut acc, marked - k);
        // C(unmarked, draws - k)
        self.add_to(&mut acc, unmarked);
        self.sub_from(&mut acc, draws - k);
        self.sub_from(&mut acc, unmarked - (draws - k));
        // / C(population, draws)
        self.sub_from(&mut acc, population);
        self.add_to(&mut acc, draws);
        self.add_to(&mut acc, population - draws);
        LogValue(acc.value().min(0.0))
    }
}

static CACHE: RwLock<Option<Arc<LogFactorials>>> = RwLock::new(None);

/// Returns a table covering at least `0..=max_n`, growing the shared cache
/// when needed. Growth is serialized by the cache's write lock.
pub fn log_factorials(max_n: u64) -> Arc<LogFactorials> {
    let need = usize::try_from(max_n).expect("table size") + 1;
    {
        let guard = CACHE.read().unwrap_or_else(|e| e.into_inner());
        if let Some(table) = guard.as_ref() {
            if table.hi.len() >= need {
                return Arc::clone(table);
            }
        }
    }
    let mut guard = CACHE.write().unwrap_or_else(|e| e.into_inner());
    if let Some(table) = guard.as_ref() {
        if table.hi.len() >= need {
            return Arc::clone(table);
        }
    }
    // Grow geometrically so repeated small extensions stay cheap.
    let len = guard.as_ref().map_or(need, |t| need.max(t.hi.len() * 2)).max(1024);
    let table = Arc::new(LogFactorials::with_len(len, guard.as_deref()));
    *guard = Some(Arc::clone(&table));
    table
}

/// `ln C(n, k)`; exact zero when `k < 0` or `k > n`.
pub fn log_binomial(n: u64, k: i64) -> LogValue {
    if k < 0 || k as u64 > n {
        return LogValue::ZERO;
    }
    log_factorials(n).ln_binomial(n, k)
}

/// `ln hg(k; population, marked, draws)` where
/// `hg = C(marked, k) C(population - marked, draws - k) / C(population, draws)`.
pub fn log_hg(k: i64, population: u64, marked: u64, draws: u64) -> Result<LogValue, HypergeomError> {
    if marked > population || draws > population {
        return Err(HypergeomError::InvalidParams { population, marked, draws });
    }
    Ok(log_factorials(population).ln_hg_unchecked(k, population, marked, draws))
}

/// Support `[lo, hi]` of the number of marked items in a draw.
pub fn hg_support(population: u64, marked: u64, draws: u64) -> (u64, u64) {
    ((draws + marked).saturating_sub(population), draws.min(marked))
}
