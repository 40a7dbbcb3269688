//! The one-dimensional chain bounding the infected-leaf count of a star
//! from below, and the geometric burst `𝔑` of leaf recoveries during a
//! healthy-centre period.
//!
//! From `Y` the chain jumps to `Y−1` at rate `L`, to `min(Y+1, L)` at rate
//! `λf(k−L)`, and to `Y−𝔑` at rate 1. It is not floored at zero.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::Serialize;

use crate::bounds::compute_l;
use crate::error::{Error, Result};
use crate::rng::exp;
use crate::stats::ratio_interval;

/// Sample `𝔑` with `P(𝔑 = j) = q^j p`, `p = λf/(λf+1)`, `q = 1−p`.
pub fn sample_frak_n<R: Rng + ?Sized>(lambda: f64, f: f64, rng: &mut R) -> Result<u64> {
    let lf = lambda * f;
    if !(lf.is_finite() && lf > 0.0) {
        return Err(Error::param(format!("lambda*f must be positive and finite, got {lf}")));
    }
    let g = Geometric::new(lf / (lf + 1.0)).map_err(|e| Error::param(e.to_string()))?;
    Ok(g.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YChain {
    lambda: f64,
    f: f64,
    k: u64,
    level: u64,
}

/// Result of one run of the chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YRun {
    /// `T_L^Y`, `None` if not reached before the horizon.
    pub t_level: Option<f64>,
    /// `R_0^Y = inf{t ≥ T_1^Y : Y_t ≤ 0}`, `None` if not reached.
    pub r_zero: Option<f64>,
    pub end_time: f64,
    pub end_y: i64,
    /// `Y_{τ} − Y_0` and `τ` for `τ = T_L^Y ∧ horizon`; the chain is a
    /// compound Poisson walk before `τ`, so these feed the drift estimate.
    pub pre_level_displacement: f64,
    pub pre_level_time: f64,
    pub trajectory: Option<Vec<(f64, i64)>>,
}

/// When a run may end before its horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YStop {
    /// Run to the horizon.
    Horizon,
    /// Stop at `T_L^Y`.
    Level,
    /// Stop once both `T_L^Y` and `R_0^Y` are known.
    Resolved,
}

impl YChain {
    pub fn new(lambda: f64, f: f64, k: u64) -> Result<Self> {
        let level = compute_l(lambda, f, k)?;
        Ok(YChain { lambda, f, k, level })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn f(&self) -> f64 {
        self.f
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn level(&self) -> u64 {
        self.level
    }

    fn up_rate(&self) -> f64 {
        self.lambda * self.f * (self.k - self.level) as f64
    }

    /// `−L + λf(k−L) − 1/(λf)`, the drift while `Y < L`.
    pub fn drift(&self) -> f64 {
        -(self.level as f64) + self.up_rate() - 1.0 / (self.lambda * self.f)
    }

    pub fn simulate<R: Rng + ?Sized>(
        &self,
        y0: i64,
        horizon: f64,
        stop: YStop,
        record: bool,
        rng: &mut R,
    ) -> Result<YRun> {
        if horizon.is_nan() || horizon < 0.0 {
            return Err(Error::param("horizon must be nonnegative"));
        }
        let level = self.level as i64;
        let down = self.level as f64;
        let up = self.up_rate();
        let total = down + up + 1.0;
        let mut traj = record.then(|| vec![(0.0, y0)]);
        let (mut t, mut y) = (0.0, y0);
        let mut t_level = (y0 >= level).then_some(0.0);
        let mut seen_one = y0 >= 1;
        let mut r_zero = None;
        let mut pre = None;
        if t_level.is_some() {
            pre = Some((0.0, 0.0));
        }
        loop {
            let done = match stop {
                YStop::Horizon => false,
                YStop::Level => t_level.is_some(),
                YStop::Resolved => t_level.is_some() && r_zero.is_some(),
            };
            if done {
                break;
            }
            let dt = exp(rng, total);
            if t + dt > horizon {
                t = horizon;
                break;
            }
            t += dt;
            let u = rng.random::<f64>() * total;
            y = if u < down {
                y - 1
            } else if u < down + up {
                (y + 1).min(level)
            } else {
                y - sample_frak_n(self.lambda, self.f, rng)? as i64
            };
            if let Some(tr) = traj.as_mut() {
                tr.push((t, y));
            }
            if t_level.is_none() && y >= level {
                t_level = Some(t);
                pre = Some(((y - y0) as f64, t));
            }
            if seen_one && r_zero.is_none() && y <= 0 {
                r_zero = Some(t);
            }
            if y >= 1 {
                seen_one = true;
            }
        }
        let (pre_level_displacement, pre_level_time) = pre.unwrap_or(((y - y0) as f64, t));
        Ok(YRun {
            t_level,
            r_zero,
            end_time: t,
            end_y: y,
            pre_level_displacement,
            pre_level_time,
            trajectory: traj,
        })
    }
}

/// One-step drift of `a^{−Z}`, `a = 1+λf/2`, for the embedded jump chain
/// at one interior state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZStep {
    pub z: u64,
    /// `E[a^{−Z'} | Z=z] − a^{−z}`.
    pub drift: f64,
    /// `E[a^{−Z'} | Z=z] / a^{−z} − 1`.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZCheck {
    pub level: u64,
    pub steps: Vec<ZStep>,
    pub max_drift: f64,
    pub max_relative: f64,
    /// `f < 8/λ` or `k < 64`: outside the range where the claim is
    /// expected to hold.
    pub warn: bool,
}

/// Exact one-step enumeration of `E[a^{−Z_{n+1}} | Z_n = z] − a^{−z}` for
/// every `z` in `(0, L)`. The burst `𝔑` is summed as a geometric series.
pub fn embedded_z_supermartingale_check(lambda: f64, f: f64, k: u64) -> Result<ZCheck> {
    let chain = YChain::new(lambda, f, k)?;
    let lf = lambda * f;
    let a = 1.0 + lf / 2.0;
    let p = lf / (lf + 1.0);
    let q = 1.0 / (lf + 1.0);
    // q a = (1+λf/2)/(1+λf) < 1, so E[a^𝔑] = p/(1−qa) is finite
    let burst = p / (1.0 - q * a);
    let l = chain.level;
    let (down, up) = (l as f64, chain.up_rate());
    let total = down + up + 1.0;
    let mut steps = Vec::new();
    for z in 1..l {
        let cur = a.powi(-(z as i32));
        let next = (z + 1).min(l);
        // each term is a ratio to a^{-z}
        let ratio = (down * a + up * a.powi(z as i32 - next as i32) + burst) / total;
        steps.push(ZStep { z, drift: cur * (ratio - 1.0), relative: ratio - 1.0 });
    }
    let max_drift = steps.iter().map(|s| s.drift).fold(f64::NEG_INFINITY, f64::max);
    let max_relative = steps.iter().map(|s| s.relative).fold(f64::NEG_INFINITY, f64::max);
    Ok(ZCheck { level: l, steps, max_drift, max_relative, warn: f < 8.0 / lambda || k < 64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftEstimate {
    pub estimate: f64,
    pub ci: (f64, f64),
    pub exact: f64,
    pub n: usize,
}

/// Estimate the pre-level drift as `Σ(Y_τ − Y_0) / Στ` over runs.
pub fn drift_estimate(chain: &YChain, runs: &[YRun], level: f64) -> Result<DriftEstimate> {
    let y: Vec<f64> = runs.iter().map(|r| r.pre_level_displacement).collect();
    let x: Vec<f64> = runs.iter().map(|r| r.pre_level_time).collect();
    let (estimate, ci) = ratio_interval(&y, &x, level)?;
    Ok(DriftEstimate { estimate, ci, exact: chain.drift(), n: runs.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn burst_law() {
        let mut rng = stream(3, 0);
        let n = 200_000;
        let zeros = (0..n).filter(|_| sample_frak_n(1.0, 1.0, &mut rng).unwrap() == 0).count();
        let p = zeros as f64 / n as f64;
        assert!((p - 0.5).abs() < 0.005, "{p}");
        let mut rng = stream(3, 1);
        let hits = (0..100_000).filter(|_| sample_frak_n(1.0, 1e6, &mut rng).unwrap() == 0).count();
        assert!(hits >= 99_990);
        assert!(sample_frak_n(0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn hand_ratio() {
        let c = embedded_z_supermartingale_check(1.0, 16.0, 64).unwrap();
        assert_eq!(c.level, 32);
        assert_eq!(c.steps.len(), 31);
        // (32·9 + 512/9 + 2) / 545
        let want = (288.0 + 512.0 / 9.0 + 2.0) / 545.0 - 1.0;
        assert!((c.steps[0].relative - want).abs() < 1e-14);
        assert!(c.max_drift <= 0.0);
        assert!(!c.warn);
    }

    #[test]
    fn small_fitness_reports_positive_drift() {
        let c = embedded_z_supermartingale_check(1.0, 1.0, 3).unwrap();
        assert!(c.warn);
        assert!(c.steps.is_empty() || c.max_relative.is_finite());
        let c = embedded_z_supermartingale_check(0.1, 1.0, 100).unwrap();
        assert!(c.max_drift > 0.0);
    }

    #[test]
    fn level_cap_and_run_fields() {
        let chain = YChain::new(1.0, 4.0, 30).unwrap();
        let mut rng = stream(11, 0);
        let run = chain.simulate(0, 50.0, YStop::Horizon, true, &mut rng).unwrap();
        let traj = run.trajectory.unwrap();
        assert!(traj.iter().all(|&(_, y)| y <= chain.level() as i64));
        assert!(traj.windows(2).all(|w| w[0].0 <= w[1].0));
        let tl = run.t_level.expect("strong upward drift reaches L");
        let first = traj.iter().find(|&&(_, y)| y >= chain.level() as i64).unwrap().0;
        assert_eq!(tl, first);
        assert_eq!(run.pre_level_time, tl);
    }

    #[test]
    fn stops() {
        let chain = YChain::new(1.0, 4.0, 30).unwrap();
        let mut rng = stream(5, 2);
        let run = chain.simulate(0, 1e3, YStop::Level, false, &mut rng).unwrap();
        assert_eq!(run.end_time, run.t_level.unwrap());
        let run = chain.simulate(chain.level() as i64, 1.0, YStop::Level, false, &mut rng).unwrap();
        assert_eq!(run.t_level, Some(0.0));
        assert_eq!(run.end_time, 0.0);
    }
}
