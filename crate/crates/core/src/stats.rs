//! Nonparametric tests: Spearman rank correlation, the Wilcoxon signed-rank
//! test, and a binomial sign-consistency test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

/// Largest sample for which the Wilcoxon p-value is computed exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

/// Fewest nonzero differences accepted by the Wilcoxon test.
pub const WILCOXON_MIN_N: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("constant sequence: ranks have zero variance")]
    ConstantSequence,
    #[error("no nonzero differences")]
    AllZero,
    #[error("non-finite input at position {0}")]
    NonFinite(usize),
    #[error("empty input")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
    TApprox,
    /// `|rho| = 1`; the t statistic is infinite and `p` is reported as 0.
    PerfectCorrelation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sidedness {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: TestMethod,
    pub sidedness: Sidedness,
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(StatsError::NonFinite(i)),
        None => Ok(()),
    }
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end share their mean.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Spearman's rho with a two-sided t-approximation p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFew { needed: 3, got: n });
    }
    check_finite(x)?;
    check_finite(y)?;
    let rho = pearson(&midranks(x), &midranks(y)).ok_or(StatsError::ConstantSequence)?;

    let denom = 1.0 - rho * rho;
    let (p_value, method) = if denom <= 0.0 {
        (0.0, TestMethod::PerfectCorrelation)
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / denom).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        ((2.0 * dist.sf(t.abs())).min(1.0), TestMethod::TApprox)
    };
    Ok(TestResult {
        statistic: rho,
        p_value,
        n,
        method,
        sidedness: Sidedness::Two,
    })
}

/// Wilcoxon signed-rank outcome with both one-sided tails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Nonzero differences ranked.
    pub n: usize,
    pub zeros_dropped: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W-)`.
    pub statistic: f64,
    /// `P(W+ >= observed)`: evidence that differences are positive.
    pub p_greater: f64,
    /// `P(W+ <= observed)`: evidence that differences are negative.
    pub p_less: f64,
    pub p_two_sided: f64,
    pub method: TestMethod,
}

impl WilcoxonResult {
    pub fn two_sided(&self) -> TestResult {
        TestResult {
            statistic: self.statistic,
            p_value: self.p_two_sided,
            n: self.n,
            method: self.method,
            sidedness: Sidedness::Two,
        }
    }

    /// One-sided test in the direction of the observed effect.
    pub fn one_sided(&self) -> TestResult {
        TestResult {
            statistic: self.statistic,
            p_value: self.p_greater.min(self.p_less),
            n: self.n,
            method: self.method,
            sidedness: Sidedness::One,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WilcoxonMethod {
    /// Exact up to `WILCOXON_EXACT_MAX_N`, normal approximation beyond.
    #[default]
    Auto,
    Exact,
    Normal,
}

pub fn wilcoxon_signed_rank(differences: &[f64]) -> Result<WilcoxonResult, StatsError> {
    wilcoxon_signed_rank_with(differences, WilcoxonMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(
    differences: &[f64],
    method: WilcoxonMethod,
) -> Result<WilcoxonResult, StatsError> {
    check_finite(differences)?;
    let nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    let zeros_dropped = differences.len() - nonzero.len();
    if nonzero.is_empty() {
        return Err(StatsError::AllZero);
    }
    let n = nonzero.len();
    if n < WILCOXON_MIN_N {
        return Err(StatsError::TooFew {
            needed: WILCOXON_MIN_N,
            got: n,
        });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&nonzero)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let exact = match method {
        WilcoxonMethod::Auto => n <= WILCOXON_EXACT_MAX_N,
        WilcoxonMethod::Exact => true,
        WilcoxonMethod::Normal => false,
    };
    let (p_greater, p_less, method) = if exact {
        let (g, l) = exact_tails(&ranks, w_plus);
        (g, l, TestMethod::Exact)
    } else {
        let (g, l) = normal_tails(&abs, n, w_plus);
        (g, l, TestMethod::NormalApprox)
    };
    Ok(WilcoxonResult {
        n,
        zeros_dropped,
        w_plus,
        w_minus,
        statistic: w_plus.min(w_minus),
        p_greater,
        p_less,
        p_two_sided: (2.0 * p_greater.min(p_less)).min(1.0),
        method,
    })
}

/// Exact null distribution of `W+` over all `2^n` sign assignments.
///
/// Midranks are integers or half-integers, so doubled ranks are integers and
/// the distribution is a subset-sum count over them.
fn exact_tails(ranks: &[f64], w_plus: f64) -> (f64, f64) {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let observed = (2.0 * w_plus).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let ge: u64 = counts[observed..].iter().sum();
    let le: u64 = counts[..=observed].iter().sum();
    (ge as f64 / all, le as f64 / all)
}

/// Tie-corrected normal approximation with continuity correction.
fn normal_tails(abs: &[f64], n: usize, w_plus: f64) -> (f64, f64) {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let sd = var.sqrt();
    let z = Normal::standard();
    let p_greater = z.sf((w_plus - mean - 0.5) / sd);
    let p_less = z.cdf((w_plus - mean + 0.5) / sd);
    (p_greater.min(1.0), p_less.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Negative,
    Positive,
}

/// Binomial probability of a majority at least this large under a
/// fair-coin sign null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignConsistency {
    pub majority: Sign,
    /// Cells carrying the majority sign.
    pub k: usize,
    /// Nonzero cells.
    pub n: usize,
    pub zeros_dropped: usize,
    pub p_value: f64,
}

impl SignConsistency {
    pub fn result(&self) -> TestResult {
        TestResult {
            statistic: self.k as f64,
            p_value: self.p_value,
            n: self.n,
            method: TestMethod::Exact,
            sidedness: Sidedness::One,
        }
    }
}

/// `ln C(n, k)` by summing logs.
fn ln_choose(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`, summed in log space.
pub fn binomial_upper_tail_half(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln_half_n = n as f64 * 0.5f64.ln();
    let terms: Vec<f64> = (k..=n).map(|j| ln_choose(n, j) + ln_half_n).collect();
    let peak = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    (peak + sum.ln()).exp().min(1.0)
}

pub fn binomial_sign_consistency(alphas: &[f64]) -> Result<SignConsistency, StatsError> {
    if alphas.is_empty() {
        return Err(StatsError::Empty);
    }
    check_finite(alphas)?;
    let negative = alphas.iter().filter(|a| **a < 0.0).count();
    let positive = alphas.iter().filter(|a| **a > 0.0).count();
    let n = negative + positive;
    if n == 0 {
        return Err(StatsError::AllZero);
    }
    let (majority, k) = if negative >= positive {
        (Sign::Negative, negative)
    } else {
        (Sign::Positive, positive)
    };
    Ok(SignConsistency {
        majority,
        k,
        n,
        zeros_dropped: alphas.len() - n,
        p_value: binomial_upper_tail_half(n, k),
    })
}
