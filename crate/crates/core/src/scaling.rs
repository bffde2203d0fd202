//! Log-log scaling exponents: outlier exclusion, OLS and Theil-Sen slopes,
//! and percentile bootstrap intervals.
//!
//! Both axes use natural logs. `alpha` is the slope of `ln V` on `ln n`; the
//! intercept is in natural-log units.

use std::fmt;

use rand::RngExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::Measure;
use crate::rng;

/// Minimum usable points for any fit.
pub const MIN_POINTS: usize = 3;

/// Largest tolerated share of failed bootstrap refits.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum ScalingError {
    #[error("all values are zero; the cell has no log-scale information")]
    AllZero,
    #[error("value {value} at position {index} is negative or non-finite")]
    InvalidValue { index: usize, value: f64 },
    #[error("{values} values for {magnitudes} magnitudes (mask {mask})")]
    LengthMismatch {
        magnitudes: usize,
        values: usize,
        mask: usize,
    },
    #[error("only {0} usable points; need at least 3")]
    TooFewPoints(usize),
    #[error("resample count must be at least 1")]
    NoResamples,
    #[error("{failures} of {resamples} bootstrap refits failed")]
    TooManyFailures { failures: usize, resamples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "OLS")]
    Ols,
    TheilSen,
}

impl Estimator {
    pub const ALL: [Estimator; 2] = [Estimator::Ols, Estimator::TheilSen];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ols => "OLS",
            Estimator::TheilSen => "TheilSen",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Cells dropped before fitting. `true` means excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionMask {
    /// `V > multiplier x median(V)`.
    pub outlier: Vec<bool>,
    /// `V = 0`, where the log is undefined.
    pub log_undefined: Vec<bool>,
}

impl ExclusionMask {
    pub fn none(len: usize) -> Self {
        Self {
            outlier: vec![false; len],
            log_undefined: vec![false; len],
        }
    }

    pub fn combined(&self) -> Vec<bool> {
        self.outlier
            .iter()
            .zip(&self.log_undefined)
            .map(|(a, b)| *a || *b)
            .collect()
    }

    pub fn n_used(&self) -> usize {
        self.combined().iter().filter(|x| !**x).count()
    }
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Flags values above `multiplier` times the median of all values in the
/// cell, and separately flags zeros.
pub fn exclude_outliers(values: &[f64], multiplier: f64) -> Result<ExclusionMask, ScalingError> {
    if let Some((index, &value)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(ScalingError::InvalidValue { index, value });
    }
    if values.iter().all(|&v| v == 0.0) {
        return Err(ScalingError::AllZero);
    }
    let threshold = multiplier * median_of(&mut values.to_vec());
    Ok(ExclusionMask {
        outlier: values.iter().map(|&v| v > threshold).collect(),
        log_undefined: values.iter().map(|&v| v == 0.0).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub alpha: f64,
    pub intercept: f64,
}

/// Unmasked `(ln n, ln V)` pairs.
fn log_points(
    magnitudes: &[u64],
    values: &[f64],
    mask: &[bool],
) -> Result<(Vec<f64>, Vec<f64>), ScalingError> {
    if magnitudes.len() != values.len() || mask.len() != values.len() {
        return Err(ScalingError::LengthMismatch {
            magnitudes: magnitudes.len(),
            values: values.len(),
            mask: mask.len(),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = magnitudes
        .iter()
        .zip(values)
        .zip(mask)
        .filter(|(_, &masked)| !masked)
        .map(|((&n, &v), _)| ((n as f64).ln(), v.ln()))
        .unzip();
    if let Some(i) = ys.iter().position(|y| !y.is_finite()) {
        return Err(ScalingError::InvalidValue {
            index: i,
            value: ys[i].exp(),
        });
    }
    if xs.len() < MIN_POINTS {
        return Err(ScalingError::TooFewPoints(xs.len()));
    }
    Ok((xs, ys))
}

/// Least-squares line; `None` when all `x` coincide.
pub fn ols_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if !(sxx > 0.0) {
        return None;
    }
    let alpha = sxy / sxx;
    Some(LineFit {
        alpha,
        intercept: my - alpha * mx,
    })
}

/// Median of a non-empty buffer by selection; reorders the buffer.
fn select_median(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let k = n / 2;
    let (lower, upper, _) = buf.select_nth_unstable_by(k, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower
            .iter()
            .copied()
            .max_by(|a, b| a.total_cmp(b))
            .expect("even-length buffer has a lower half");
        0.5 * (below + upper)
    }
}

/// Median of pairwise slopes (pairs with equal `x` skipped), intercept the
/// median of `y - alpha x`. `None` when no pair has distinct `x`.
pub fn theil_sen_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    let mut slopes = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[j] - xs[i];
            if dx != 0.0 {
                slopes.push((ys[j] - ys[i]) / dx);
            }
        }
    }
    if slopes.is_empty() {
        return None;
    }
    let alpha = select_median(&mut slopes);
    let mut offsets: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - alpha * x).collect();
    Some(LineFit {
        alpha,
        intercept: select_median(&mut offsets),
    })
}

fn fit_points(estimator: Estimator, xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    match estimator {
        Estimator::Ols => ols_line(xs, ys),
        Estimator::TheilSen => theil_sen_line(xs, ys),
    }
}

pub fn fit_ols_loglog(
    magnitudes: &[u64],
    values: &[f64],
    mask: &[bool],
) -> Result<LineFit, ScalingError> {
    fit_loglog(Estimator::Ols, magnitudes, values, mask)
}

pub fn fit_theilsen_loglog(
    magnitudes: &[u64],
    values: &[f64],
    mask: &[bool],
) -> Result<LineFit, ScalingError> {
    fit_loglog(Estimator::TheilSen, magnitudes, values, mask)
}

pub fn fit_loglog(
    estimator: Estimator,
    magnitudes: &[u64],
    values: &[f64],
    mask: &[bool],
) -> Result<LineFit, ScalingError> {
    let (xs, ys) = log_points(magnitudes, values, mask)?;
    // Magnitudes are distinct, so with >= 3 points neither estimator can fail.
    Ok(fit_points(estimator, &xs, &ys).expect("distinct magnitudes"))
}

/// Percentile bootstrap interval for the exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub resamples: usize,
    /// Resamples drawn again because every point shared one magnitude.
    pub redraws: usize,
    pub failures: usize,
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resamples the unmasked `(n, V)` pairs with replacement, refits, and
/// returns the 2.5th and 97.5th percentiles of the exponent.
pub fn bootstrap_ci(
    magnitudes: &[u64],
    values: &[f64],
    mask: &[bool],
    estimator: Estimator,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapCi, ScalingError> {
    if resamples < 1 {
        return Err(ScalingError::NoResamples);
    }
    let (xs, ys) = log_points(magnitudes, values, mask)?;
    let n = xs.len();
    let mut rng = rng::stream(seed);
    let mut alphas = Vec::with_capacity(resamples);
    let (mut redraws, mut failures) = (0, 0);
    let mut idx = vec![0usize; n];
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);

    for _ in 0..resamples {
        loop {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            if idx.iter().any(|&i| i != idx[0]) {
                break;
            }
            redraws += 1;
        }
        for (k, &i) in idx.iter().enumerate() {
            bx[k] = xs[i];
            by[k] = ys[i];
        }
        match fit_points(estimator, &bx, &by) {
            Some(fit) if fit.alpha.is_finite() => alphas.push(fit.alpha),
            _ => failures += 1,
        }
    }
    if failures as f64 > MAX_FAILURE_RATE * resamples as f64 || alphas.is_empty() {
        return Err(ScalingError::TooManyFailures {
            failures,
            resamples,
        });
    }
    alphas.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        low: quantile_sorted(&alphas, 0.025),
        high: quantile_sorted(&alphas, 0.975),
        resamples,
        redraws,
        failures,
    })
}

/// Exponent estimate for one (measure, layer, estimator) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub measure: Measure,
    pub layer: usize,
    pub estimator: Estimator,
    pub alpha: f64,
    pub intercept: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_used: usize,
    /// Union of outlier and log-undefined exclusions.
    pub excluded_magnitudes: Vec<u64>,
    pub outlier_magnitudes: Vec<u64>,
    pub zero_magnitudes: Vec<u64>,
    pub seed: u64,
    pub bootstrap_redraws: usize,
}

impl ScalingFit {
    pub fn ci_excludes_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

/// Bootstrap seed for one cell, independent of evaluation order.
pub fn cell_seed(base: u64, measure: Measure, layer: usize, estimator: Estimator) -> u64 {
    rng::derive_seed(base, &[measure as u64, layer as u64, estimator as u64])
}

/// Settings shared by every cell fit.
#[derive(Debug, Clone, Copy)]
pub struct FitSettings {
    pub outlier_multiplier: f64,
    pub resamples: usize,
    pub base_seed: u64,
}

/// Exclusion, point fit and bootstrap interval for one cell.
pub fn fit_cell(
    measure: Measure,
    layer: usize,
    estimator: Estimator,
    magnitudes: &[u64],
    values: &[f64],
    settings: FitSettings,
) -> Result<ScalingFit, ScalingError> {
    let mask = exclude_outliers(values, settings.outlier_multiplier)?;
    let combined = mask.combined();
    let line = fit_loglog(estimator, magnitudes, values, &combined)?;
    let seed = cell_seed(settings.base_seed, measure, layer, estimator);
    let ci = bootstrap_ci(
        magnitudes,
        values,
        &combined,
        estimator,
        settings.resamples,
        seed,
    )?;
    let pick = |flags: &[bool]| -> Vec<u64> {
        magnitudes
            .iter()
            .zip(flags)
            .filter(|(_, f)| **f)
            .map(|(m, _)| *m)
            .collect()
    };
    Ok(ScalingFit {
        measure,
        layer,
        estimator,
        alpha: line.alpha,
        intercept: line.intercept,
        ci_low: ci.low,
        ci_high: ci.high,
        n_used: mask.n_used(),
        excluded_magnitudes: pick(&combined),
        outlier_magnitudes: pick(&mask.outlier),
        zero_magnitudes: pick(&mask.log_undefined),
        seed,
        bootstrap_redraws: ci.redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DEFAULT_MAGNITUDES;

    fn mags() -> Vec<u64> {
        DEFAULT_MAGNITUDES.to_vec()
    }

    #[test]
    fn outlier_rule_examples() {
        let mut v = vec![1.0; 26];
        v[7] = 5.0;
        let mask = exclude_outliers(&v, 3.0).unwrap();
        assert_eq!(mask.outlier.iter().filter(|x| **x).count(), 1);
        assert!(mask.outlier[7]);

        let flat = vec![2.5; 26];
        assert_eq!(
            exclude_outliers(&flat, 3.0).unwrap(),
            ExclusionMask::none(26)
        );

        let mut z = vec![1.0; 26];
        z[3] = 0.0;
        let mask = exclude_outliers(&z, 3.0).unwrap();
        assert!(mask.log_undefined[3] && !mask.outlier[3]);
        assert_eq!(mask.n_used(), 25);

        assert_eq!(exclude_outliers(&[0.0; 5], 3.0), Err(ScalingError::AllZero));
        assert!(matches!(
            exclude_outliers(&[1.0, f64::NAN], 3.0),
            Err(ScalingError::InvalidValue { index: 1, .. })
        ));
    }

    #[test]
    fn ols_examples() {
        let m = mags();
        let none = vec![false; m.len()];
        let linear: Vec<f64> = m.iter().map(|&n| n as f64).collect();
        let fit = fit_ols_loglog(&m, &linear, &none).unwrap();
        assert!((fit.alpha - 1.0).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);

        let flat = vec![3.0; m.len()];
        assert!(fit_ols_loglog(&m, &flat, &none).unwrap().alpha.abs() < 1e-12);

        // Two points survive the mask.
        let mags3 = [1, 10, 100];
        let values = [2.0, 1.0, 1.0];
        let err = fit_ols_loglog(&mags3, &values, &[false, false, true]);
        assert_eq!(err, Err(ScalingError::TooFewPoints(2)));
    }

    #[test]
    fn two_point_slope_via_three_point_line() {
        // (1, 2), (10, 1) and a third point on the same line.
        let alpha = -(2f64.ln()) / 10f64.ln();
        let third = 2.0 * 100f64.powf(alpha);
        let fit = fit_ols_loglog(&[1, 10, 100], &[2.0, 1.0, third], &[false; 3]).unwrap();
        assert!((fit.alpha - alpha).abs() < 1e-12);
        assert!((fit.alpha + 0.30103).abs() < 1e-5);
    }

    #[test]
    fn theil_sen_examples() {
        let m = mags();
        let none = vec![false; m.len()];
        let v: Vec<f64> = m.iter().map(|&n| 0.7 * (n as f64).powf(-0.2)).collect();
        let ts = fit_theilsen_loglog(&m, &v, &none).unwrap();
        let ols = fit_ols_loglog(&m, &v, &none).unwrap();
        assert!((ts.alpha - ols.alpha).abs() < 1e-12);

        let fit = fit_theilsen_loglog(&[1, 10, 100], &[1.0, 0.5, 1.0], &[false; 3]).unwrap();
        assert_eq!(fit.alpha, 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic_and_collapses_on_exact_data() {
        let m = mags();
        let none = vec![false; m.len()];
        let v: Vec<f64> = m.iter().map(|&n| (n as f64).sqrt()).collect();
        for est in Estimator::ALL {
            let ci = bootstrap_ci(&m, &v, &none, est, 2000, 42).unwrap();
            assert!((ci.low - 0.5).abs() < 1e-9 && (ci.high - 0.5).abs() < 1e-9);
        }
        let noisy: Vec<f64> = m
            .iter()
            .enumerate()
            .map(|(i, &n)| (n as f64).powf(-0.1) * (1.0 + 0.05 * ((i * 7 % 5) as f64 - 2.0)))
            .collect();
        let a = bootstrap_ci(&m, &noisy, &none, Estimator::Ols, 1000, 42).unwrap();
        let b = bootstrap_ci(&m, &noisy, &none, Estimator::Ols, 1000, 42).unwrap();
        assert_eq!(a.low.to_bits(), b.low.to_bits());
        assert_eq!(a.high.to_bits(), b.high.to_bits());
        assert!(a.low < a.high);
        assert_eq!(
            bootstrap_ci(&m, &noisy, &none, Estimator::Ols, 0, 42),
            Err(ScalingError::NoResamples)
        );
    }

    #[test]
    fn quantile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.0);
        assert_eq!(quantile_sorted(&s, 0.125), 0.5);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
    }

    #[test]
    fn fit_cell_reports_exclusions() {
        let m = mags();
        let mut v: Vec<f64> = m.iter().map(|&n| (n as f64).powf(-0.05)).collect();
        v[2] = 10.0;
        v[5] = 0.0;
        let settings = FitSettings {
            outlier_multiplier: 3.0,
            resamples: 1000,
            base_seed: 42,
        };
        let fit = fit_cell(Measure::Veucl, 16, Estimator::Ols, &m, &v, settings).unwrap();
        assert_eq!(fit.outlier_magnitudes, vec![3]);
        assert_eq!(fit.zero_magnitudes, vec![6]);
        assert_eq!(fit.excluded_magnitudes, vec![3, 6]);
        assert_eq!(fit.n_used + fit.excluded_magnitudes.len(), m.len());
        assert!((fit.alpha + 0.05).abs() < 1e-12);
        assert_eq!(fit.seed, cell_seed(42, Measure::Veucl, 16, Estimator::Ols));
    }
}
