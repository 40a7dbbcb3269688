//! Interval estimates and two-sample tests.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Two-sided standard normal quantile for confidence `level`.
pub fn z_for_level(level: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(0.5 + level / 2.0)
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("confidence level must lie in (0,1), got {level}")))
    }
}

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    if n == 0 || successes > n {
        return Err(Error::param(format!("need 0 <= successes <= n and n >= 1, got {successes}/{n}")));
    }
    let z = z_for_level(level);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // pin the closed ends exactly
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (centre + half).min(1.0) };
    Ok((lo, hi))
}

/// Running mean and variance (Welford) with a Kahan-compensated total.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanAccumulator {
    n: u64,
    sum: f64,
    c: f64,
    mean: f64,
    m2: f64,
}

fn kahan(sum: &mut f64, c: &mut f64, x: f64) {
    let y = x - *c;
    let t = *sum + y;
    *c = (t - *sum) - y;
    *sum = t;
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        kahan(&mut self.sum, &mut self.c, x);
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        self.m2 / (self.n as f64 - 1.0)
    }

    /// Normal-approximation interval for the mean.
    pub fn interval(&self, level: f64) -> (f64, f64) {
        let m = self.mean();
        let h = z_for_level(level) * (self.variance() / self.n as f64).sqrt();
        (m - h, m + h)
    }
}

impl FromIterator<f64> for MeanAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MeanAccumulator::default();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateKind {
    Proportion,
    Mean,
}

/// A Monte Carlo estimate with its interval and bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCEstimate {
    pub kind: EstimateKind,
    /// Trials entering the estimate.
    pub n: u64,
    /// Successes (proportions) or the plain sum (means).
    pub total: f64,
    pub point: f64,
    pub ci: (f64, f64),
    pub level: f64,
    /// Trials censored by a horizon, event cap or vertex budget.
    pub censored: u64,
    pub seed: u64,
}

impl MCEstimate {
    pub fn proportion(successes: u64, n: u64, level: f64, censored: u64, seed: u64) -> Result<Self> {
        let ci = wilson_interval(successes, n, level)?;
        Ok(MCEstimate {
            kind: EstimateKind::Proportion,
            n,
            total: successes as f64,
            point: successes as f64 / n as f64,
            ci,
            level,
            censored,
            seed,
        })
    }

    pub fn mean(acc: &MeanAccumulator, level: f64, censored: u64, seed: u64) -> Result<Self> {
        check_level(level)?;
        if acc.n() < 2 {
            return Err(Error::param("a mean estimate needs at least two samples"));
        }
        Ok(MCEstimate {
            kind: EstimateKind::Mean,
            n: acc.n(),
            total: acc.sum,
            point: acc.mean(),
            ci: acc.interval(level),
            level,
            censored,
            seed,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci.0 <= x && x <= self.ci.1
    }
}

/// Ratio-of-means estimate `Σy/Σx` with a delta-method normal interval.
/// Returns `(ratio, (lo, hi))`.
pub fn ratio_interval(y: &[f64], x: &[f64], level: f64) -> Result<(f64, (f64, f64))> {
    check_level(level)?;
    if y.len() != x.len() || y.len() < 2 {
        return Err(Error::param("ratio estimate needs two equal-length samples of size >= 2"));
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mx = x.iter().sum::<f64>() / n;
    if mx <= 0.0 {
        return Err(Error::param("ratio estimate needs a positive denominator mean"));
    }
    let r = my / mx;
    // residuals y - r x have mean zero; their variance drives the interval
    let s2 = y.iter().zip(x).map(|(a, b)| (a - r * b).powi(2)).sum::<f64>() / (n - 1.0);
    let half = z_for_level(level) * (s2 / n).sqrt() / mx;
    Ok((r, (r - half, r + half)))
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic 1% critical value of the two-sample KS statistic.
pub fn ks_critical_1pct(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    1.628 * ((n + m) / (n * m)).sqrt()
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wilson_edges() {
        let (lo, _) = wilson_interval(0, 100, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        let (_, hi) = wilson_interval(100, 100, 0.95).unwrap();
        assert_eq!(hi, 1.0);
        let (lo, hi) = wilson_interval(50, 100, 0.95).unwrap();
        assert!(((lo + hi) / 2.0 - 0.5).abs() < 1e-12);
        // 2·1.96·sqrt(0.0025 + 1.96²/40000) / (1 + 1.96²/100)
        assert!((hi - lo - 0.19234).abs() < 1e-4, "{}", hi - lo);
        assert!(wilson_interval(5, 0, 0.95).is_err());
        assert!(wilson_interval(6, 5, 0.95).is_err());
    }

    #[test]
    fn z_values() {
        assert!((z_for_level(0.95) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((z_for_level(0.99) - 2.575_829_303_548_901).abs() < 1e-9);
    }

    #[test]
    fn mean_interval() {
        let acc: MeanAccumulator = [1.0, 2.0, 3.0, 4.0].into_iter().collect();
        assert_eq!(acc.mean(), 2.5);
        assert!((acc.variance() - 5.0 / 3.0).abs() < 1e-12);
        let e = MCEstimate::mean(&acc, 0.99, 0, 1).unwrap();
        assert!(e.contains(2.5));
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(ks_statistic(&a, &a), 0.0);
        let b: Vec<f64> = (200..300).map(f64::from).collect();
        assert_eq!(ks_statistic(&a, &b), 1.0);
    }

    #[test]
    fn ratio() {
        let (r, (lo, hi)) = ratio_interval(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0], 0.99).unwrap();
        assert_eq!(r, 2.0);
        assert!((hi - lo).abs() < 1e-12);
        let (r, (lo, hi)) = ratio_interval(&[1.0, 0.0, 2.0, 1.0], &[1.0, 1.0, 1.0, 1.0], 0.95).unwrap();
        assert_eq!(r, 1.0);
        let acc: MeanAccumulator = [1.0, 0.0, 2.0, 1.0].into_iter().collect();
        let (alo, ahi) = acc.interval(0.95);
        assert!((lo - alo).abs() < 1e-12 && (hi - ahi).abs() < 1e-12);
        assert!(ratio_interval(&[1.0], &[1.0], 0.9).is_err());
    }

    #[test]
    fn slope() {
        assert_eq!(ls_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]), Some(2.0));
        assert_eq!(ls_slope(&[1.0], &[1.0]), None);
    }

    proptest! {
        #[test]
        fn wilson_brackets_point(n in 1u64..10_000, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
            let s = ((n as f64) * frac).floor() as u64;
            let (lo, hi) = wilson_interval(s, n, level).unwrap();
            let p = s as f64 / n as f64;
            prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
        }
    }
}
