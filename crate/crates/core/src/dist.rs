//! Offspring and fitness distributions.
//!
//! Both families parse from a compact flag syntax (`det:2`, `pois:1.5`,
//! `pareto:2`, `unif:1,4`, ...) and print back in the same syntax.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson, Zeta};

use crate::error::{Error, Result};

/// Tolerance on the total mass of user-supplied pmfs.
pub const PMF_TOLERANCE: f64 = 1e-12;

/// Default support cap for the stretched-exponential offspring law.
pub const DEFAULT_SEXP_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum OffspringFamily {
    Deterministic(u32),
    Poisson(f64),
    /// Failures before the first success, support `{0, 1, ...}`.
    Geometric(f64),
    /// Tail exponent `alpha`: `P(k) ∝ k^{-(alpha+1)}` on `k >= 1`, so
    /// `P(xi >= k)` decays like `k^{-alpha}`. Optionally truncated at `cutoff`.
    PowerLaw { alpha: f64, cutoff: Option<u64> },
    /// `P(k) ∝ exp(-k^gamma)` on `0..=cap`.
    StretchedExp { gamma: f64, cap: u64 },
    Empirical(Vec<f64>),
}

/// A validated offspring law with its mean precomputed.
#[derive(Debug, Clone)]
pub struct OffspringDist {
    family: OffspringFamily,
    mean: f64,
    // cumulative masses for table-driven families
    table: Option<Arc<[f64]>>,
    // first support point of `table`
    offset: u64,
}

impl PartialEq for OffspringDist {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
    }
}

impl OffspringDist {
    pub fn deterministic(k: u32) -> Self {
        OffspringDist { family: OffspringFamily::Deterministic(k), mean: f64::from(k), table: None, offset: 0 }
    }

    pub fn poisson(mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidDistribution(format!("poisson mean must be positive, got {mu}")));
        }
        Ok(OffspringDist { family: OffspringFamily::Poisson(mu), mean: mu, table: None, offset: 0 })
    }

    pub fn geometric(p: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidDistribution(format!("geometric p must lie in (0,1], got {p}")));
        }
        Ok(OffspringDist { family: OffspringFamily::Geometric(p), mean: (1.0 - p) / p, table: None, offset: 0 })
    }

    pub fn power_law(alpha: f64, cutoff: Option<u64>) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidDistribution(format!("power-law exponent must be positive, got {alpha}")));
        }
        let family = OffspringFamily::PowerLaw { alpha, cutoff };
        match cutoff {
            Some(0) => Err(Error::InvalidDistribution("power-law cutoff must be >= 1".into())),
            Some(c) => {
                let weights: Vec<f64> = (1..=c).map(|k| (k as f64).powf(-alpha - 1.0)).collect();
                let (table, mean) = cumulative(&weights, 1);
                Ok(OffspringDist { family, mean, table: Some(table), offset: 1 })
            }
            None => {
                // E[xi] = zeta(alpha)/zeta(alpha+1) is finite only for alpha > 1.
                if alpha <= 1.0 {
                    return Err(Error::InvalidDistribution(format!(
                        "power law with alpha = {alpha} and no cutoff has infinite mean"
                    )));
                }
                let mean = zeta(alpha) / zeta(alpha + 1.0);
                Ok(OffspringDist { family, mean, table: None, offset: 1 })
            }
        }
    }

    pub fn stretched_exp(gamma: f64, cap: u64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidDistribution(format!("stretched-exponential gamma must be positive, got {gamma}")));
        }
        if cap == 0 {
            return Err(Error::InvalidDistribution("stretched-exponential cap must be >= 1".into()));
        }
        let mut weights = Vec::new();
        for k in 0..=cap {
            let w = (-(k as f64).powf(gamma)).exp();
            weights.push(w);
            // terms beyond this point carry no mass in double precision
            if w < 1e-20 {
                break;
            }
        }
        let (table, mean) = cumulative(&weights, 0);
        Ok(OffspringDist { family: OffspringFamily::StretchedExp { gamma, cap }, mean, table: Some(table), offset: 0 })
    }

    pub fn empirical(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidDistribution("empirical pmf is empty".into()));
        }
        if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution("empirical pmf has negative or non-finite entries".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("empirical pmf sums to {total}, not 1")));
        }
        let (table, mean) = cumulative(&pmf, 0);
        Ok(OffspringDist { family: OffspringFamily::Empirical(pmf), mean, table: Some(table), offset: 0 })
    }

    pub fn family(&self) -> &OffspringFamily {
        &self.family
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `P(xi = k)`.
    pub fn pmf(&self, k: u64) -> f64 {
        match &self.family {
            OffspringFamily::Deterministic(d) => f64::from(u8::from(u64::from(*d) == k)),
            OffspringFamily::Poisson(mu) => {
                let lg = statrs::function::gamma::ln_gamma(k as f64 + 1.0);
                (k as f64 * mu.ln() - mu - lg).exp()
            }
            OffspringFamily::Geometric(p) => (1.0 - p).powf(k as f64) * p,
            OffspringFamily::PowerLaw { alpha, cutoff: None } => {
                if k == 0 {
                    0.0
                } else {
                    (k as f64).powf(-alpha - 1.0) / zeta(alpha + 1.0)
                }
            }
            _ => {
                let table = self.table.as_ref().expect("table-driven family");
                if k < self.offset {
                    return 0.0;
                }
                let i = (k - self.offset) as usize;
                if i >= table.len() {
                    return 0.0;
                }
                let lo = if i == 0 { 0.0 } else { table[i - 1] };
                table[i] - lo
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.family {
            OffspringFamily::Deterministic(d) => u64::from(*d),
            OffspringFamily::Poisson(mu) => {
                let d = Poisson::new(*mu).expect("validated mean");
                d.sample(rng) as u64
            }
            OffspringFamily::Geometric(p) => {
                if *p >= 1.0 {
                    return 0;
                }
                let u = crate::rng::unit_open(rng);
                (u.ln() / (1.0 - p).ln()).floor() as u64
            }
            OffspringFamily::PowerLaw { alpha, cutoff: None } => {
                let d = Zeta::new(alpha + 1.0).expect("validated exponent");
                let x: f64 = d.sample(rng);
                if x.is_finite() && x < u64::MAX as f64 { x as u64 } else { u64::MAX }
            }
            _ => {
                let table = self.table.as_ref().expect("table-driven family");
                let total = *table.last().unwrap();
                let u = rng.random::<f64>() * total;
                let i = table.partition_point(|&c| c <= u).min(table.len() - 1);
                self.offset + i as u64
            }
        }
    }
}

fn cumulative(weights: &[f64], offset: u64) -> (Arc<[f64]>, f64) {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut mean = 0.0;
    let mut cum = Vec::with_capacity(weights.len());
    for (i, w) in weights.iter().enumerate() {
        let p = w / total;
        acc += p;
        mean += p * (offset + i as u64) as f64;
        cum.push(acc);
    }
    (cum.into(), mean)
}

/// Riemann zeta for real `s > 1` by Euler-Maclaurin summation.
pub(crate) fn zeta(s: f64) -> f64 {
    const N: usize = 64;
    let n = N as f64;
    let head: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    // tail from N with Bernoulli corrections B2, B4, B6
    let mut tail = n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    tail += s / 12.0 * n.powf(-s - 1.0);
    tail -= s * (s + 1.0) * (s + 2.0) / 720.0 * n.powf(-s - 3.0);
    tail += s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) / 30240.0 * n.powf(-s - 5.0);
    head + tail
}

impl fmt::Display for OffspringDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            OffspringFamily::Deterministic(k) => write!(f, "det:{k}"),
            OffspringFamily::Poisson(mu) => write!(f, "pois:{mu}"),
            OffspringFamily::Geometric(p) => write!(f, "geom:{p}"),
            OffspringFamily::PowerLaw { alpha, cutoff: None } => write!(f, "pow:{alpha}"),
            OffspringFamily::PowerLaw { alpha, cutoff: Some(c) } => write!(f, "pow:{alpha},{c}"),
            OffspringFamily::StretchedExp { gamma, cap } if *cap == DEFAULT_SEXP_CAP => write!(f, "sexp:{gamma}"),
            OffspringFamily::StretchedExp { gamma, cap } => write!(f, "sexp:{gamma},{cap}"),
            OffspringFamily::Empirical(p) => {
                let parts: Vec<String> = p.iter().map(|x| x.to_string()).collect();
                write!(f, "emp:{}", parts.join(","))
            }
        }
    }
}

fn split_spec(s: &str) -> Result<(&str, Vec<&str>)> {
    let (name, args) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidDistribution(format!("expected <family>:<args>, got `{s}`")))?;
    Ok((name.trim(), args.split(',').map(str::trim).collect()))
}

fn num<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::InvalidDistribution(format!("cannot parse {what} from `{s}`")))
}

fn arity(args: &[&str], allowed: &[usize], spec: &str) -> Result<()> {
    if allowed.contains(&args.len()) {
        Ok(())
    } else {
        Err(Error::InvalidDistribution(format!("wrong number of arguments in `{spec}`")))
    }
}

impl FromStr for OffspringDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_spec(s)?;
        match name {
            "det" => {
                arity(&args, &[1], s)?;
                Ok(OffspringDist::deterministic(num(args[0], "child count")?))
            }
            "pois" => {
                arity(&args, &[1], s)?;
                OffspringDist::poisson(num(args[0], "mean")?)
            }
            "geom" => {
                arity(&args, &[1], s)?;
                OffspringDist::geometric(num(args[0], "success probability")?)
            }
            "pow" => {
                arity(&args, &[1, 2], s)?;
                let cutoff = args.get(1).map(|c| num(c, "cutoff")).transpose()?;
                OffspringDist::power_law(num(args[0], "exponent")?, cutoff)
            }
            "sexp" => {
                arity(&args, &[1, 2], s)?;
                let cap = args.get(1).map(|c| num(c, "cap")).transpose()?.unwrap_or(DEFAULT_SEXP_CAP);
                OffspringDist::stretched_exp(num(args[0], "gamma")?, cap)
            }
            "emp" => {
                let pmf = args.iter().map(|a| num(a, "probability")).collect::<Result<Vec<f64>>>()?;
                OffspringDist::empirical(pmf)
            }
            other => Err(Error::InvalidDistribution(format!("unknown offspring family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitnessDist {
    ConstantOne,
    Constant(f64),
    /// `P(F > f) = f^{-c1}` for `f >= 1`.
    Pareto { c1: f64 },
    BoundedUniform { lo: f64, hi: f64 },
    /// Step CDF given as `(value, cumulative probability)` pairs.
    Empirical(Vec<(f64, f64)>),
}

impl FitnessDist {
    pub fn constant(f: f64) -> Result<Self> {
        if !(f.is_finite() && f >= 1.0) {
            return Err(Error::InvalidDistribution(format!("fitness must be >= 1, got {f}")));
        }
        Ok(if f == 1.0 { FitnessDist::ConstantOne } else { FitnessDist::Constant(f) })
    }

    pub fn pareto(c1: f64) -> Result<Self> {
        if !(c1.is_finite() && c1 > 0.0) {
            return Err(Error::InvalidDistribution(format!("pareto tail exponent must be positive, got {c1}")));
        }
        Ok(FitnessDist::Pareto { c1 })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo >= 1.0 && hi >= lo) {
            return Err(Error::InvalidDistribution(format!("uniform fitness needs 1 <= lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(FitnessDist::BoundedUniform { lo, hi })
    }

    pub fn empirical(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidDistribution("empirical fitness cdf is empty".into()));
        }
        let mut prev_v = f64::NEG_INFINITY;
        let mut prev_c = 0.0;
        for &(v, c) in &points {
            if !(v.is_finite() && v >= 1.0) {
                return Err(Error::InvalidDistribution(format!("fitness support must lie in [1, inf), got {v}")));
            }
            if v <= prev_v || c < prev_c || !(0.0..=1.0 + PMF_TOLERANCE).contains(&c) {
                return Err(Error::InvalidDistribution("empirical cdf must be increasing in value and nondecreasing in mass".into()));
            }
            prev_v = v;
            prev_c = c;
        }
        if (prev_c - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("empirical cdf ends at {prev_c}, not 1")));
        }
        Ok(FitnessDist::Empirical(points))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            FitnessDist::ConstantOne => 1.0,
            FitnessDist::Constant(f) => *f,
            FitnessDist::Pareto { c1 } => crate::rng::unit_open(rng).powf(-1.0 / c1),
            FitnessDist::BoundedUniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            FitnessDist::Empirical(points) => {
                let u: f64 = rng.random();
                let i = points.partition_point(|&(_, c)| c < u).min(points.len() - 1);
                points[i].0
            }
        }
    }

    /// `P(F >= f)`.
    pub fn tail_ge(&self, f: f64) -> f64 {
        match self {
            FitnessDist::ConstantOne => f64::from(u8::from(1.0 >= f)),
            FitnessDist::Constant(c) => f64::from(u8::from(*c >= f)),
            FitnessDist::Pareto { c1 } => {
                if f <= 1.0 {
                    1.0
                } else {
                    f.powf(-c1)
                }
            }
            FitnessDist::BoundedUniform { lo, hi } => {
                if f <= *lo {
                    1.0
                } else if f > *hi {
                    0.0
                } else if hi == lo {
                    1.0
                } else {
                    (hi - f) / (hi - lo)
                }
            }
            FitnessDist::Empirical(points) => {
                // mass strictly below f
                let below = points.iter().take_while(|&&(v, _)| v < f).last().map_or(0.0, |&(_, c)| c);
                (1.0 - below).max(0.0)
            }
        }
    }
}

impl fmt::Display for FitnessDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitnessDist::ConstantOne => write!(f, "const:1"),
            FitnessDist::Constant(c) => write!(f, "const:{c}"),
            FitnessDist::Pareto { c1 } => write!(f, "pareto:{c1}"),
            FitnessDist::BoundedUniform { lo, hi } => write!(f, "unif:{lo},{hi}"),
            FitnessDist::Empirical(points) => {
                let parts: Vec<String> = points.iter().map(|(v, c)| format!("{v}@{c}")).collect();
                write!(f, "emp:{}", parts.join(","))
            }
        }
    }
}

impl FromStr for FitnessDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = split_spec(s)?;
        match name {
            "const" => {
                arity(&args, &[1], s)?;
                FitnessDist::constant(num(args[0], "fitness")?)
            }
            "pareto" => {
                arity(&args, &[1], s)?;
                FitnessDist::pareto(num(args[0], "tail exponent")?)
            }
            "unif" => {
                arity(&args, &[2], s)?;
                FitnessDist::uniform(num(args[0], "lower bound")?, num(args[1], "upper bound")?)
            }
            "emp" => {
                let points = args
                    .iter()
                    .map(|a| {
                        let (v, c) = a
                            .split_once('@')
                            .ok_or_else(|| Error::InvalidDistribution(format!("expected value@cdf, got `{a}`")))?;
                        Ok((num(v, "value")?, num(c, "cdf")?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                FitnessDist::empirical(points)
            }
            other => Err(Error::InvalidDistribution(format!("unknown fitness family `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn deterministic_is_point_mass() {
        let d = OffspringDist::deterministic(2);
        let mut rng = stream(1, 0);
        assert!((0..100).all(|_| d.sample(&mut rng) == 2));
        assert_eq!(d.mean(), 2.0);
        assert_eq!(d.pmf(2), 1.0);
        assert_eq!(d.pmf(3), 0.0);
    }

    #[test]
    fn poisson_sample_mean() {
        let d = OffspringDist::poisson(2.0).unwrap();
        let mut rng = stream(2, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng) as f64).collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - 2.0).abs() < 2.576 * se, "mean {m} se {se}");
    }

    #[test]
    fn empirical_sample_mean() {
        let mut pmf = vec![0.0; 4];
        pmf[0] = 0.5;
        pmf[3] = 0.5;
        let d = OffspringDist::empirical(pmf).unwrap();
        assert!((d.mean() - 1.5).abs() < 1e-15);
        let mut rng = stream(3, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng) as f64).collect();
        assert!(xs.iter().all(|&x| x == 0.0 || x == 3.0));
        let (m, se) = mean_and_se(&xs);
        assert!((m - 1.5).abs() < 2.576 * se);
    }

    #[test]
    fn empirical_pmf_must_sum_to_one() {
        assert!(OffspringDist::empirical(vec![0.5, 0.4]).is_err());
        assert!(OffspringDist::empirical(vec![0.5, -0.1, 0.6]).is_err());
        assert!(OffspringDist::empirical(vec![0.5, 0.5 + 5e-13]).is_ok());
    }

    #[test]
    fn power_law_rejects_infinite_mean() {
        assert!(OffspringDist::power_law(1.0, None).is_err());
        assert!(OffspringDist::power_law(0.5, None).is_err());
        assert!(OffspringDist::power_law(1.0, Some(100)).is_ok());
        let d = OffspringDist::power_law(2.0, None).unwrap();
        // zeta(2)/zeta(3)
        let expect = std::f64::consts::PI.powi(2) / 6.0 / 1.202_056_903_159_594_2;
        assert!((d.mean() - expect).abs() < 1e-12, "{} vs {expect}", d.mean());
    }

    #[test]
    fn zeta_known_values() {
        assert!((zeta(2.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-14);
        assert!((zeta(4.0) - std::f64::consts::PI.powi(4) / 90.0).abs() < 1e-14);
    }

    #[test]
    fn stretched_exp_mass_and_mean() {
        let d = OffspringDist::stretched_exp(0.5, DEFAULT_SEXP_CAP).unwrap();
        let total: f64 = (0..5000).map(|k| d.pmf(k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mean: f64 = (0..5000).map(|k| k as f64 * d.pmf(k)).sum();
        assert!((mean - d.mean()).abs() < 1e-9);
    }

    #[test]
    fn geometric_pmf_matches_mean() {
        let d = OffspringDist::geometric(0.25).unwrap();
        let mean: f64 = (0..2000).map(|k| k as f64 * d.pmf(k)).sum();
        assert!((mean - 3.0).abs() < 1e-9);
    }

    #[test]
    fn fitness_constants() {
        let mut rng = stream(4, 0);
        assert_eq!(FitnessDist::ConstantOne.sample(&mut rng), 1.0);
        assert_eq!(FitnessDist::constant(4.0).unwrap().sample(&mut rng), 4.0);
        assert!(FitnessDist::constant(0.5).is_err());
        assert!(FitnessDist::uniform(0.5, 2.0).is_err());
        assert!(FitnessDist::empirical(vec![(0.9, 1.0)]).is_err());
    }

    #[test]
    fn pareto_tail() {
        let d = FitnessDist::pareto(2.0).unwrap();
        let mut rng = stream(5, 0);
        let n = 1_000_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let f = d.sample(&mut rng);
            assert!(f >= 1.0);
            if f > 10.0 {
                hits += 1;
            }
        }
        let p = 1e-2;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let phat = hits as f64 / n as f64;
        assert!((phat - p).abs() < 3.0 * se, "{phat}");
        assert_eq!(d.tail_ge(10.0), 1e-2);
    }

    #[test]
    fn parse_round_trip() {
        for s in ["det:3", "pois:2", "geom:0.25", "pow:2.5", "pow:1.5,100", "sexp:0.5", "sexp:0.5,1000", "emp:0.5,0,0,0.5"] {
            let d: OffspringDist = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        for s in ["const:1", "const:4", "pareto:2", "unif:1,4", "emp:1@0.5,3@1"] {
            let d: FitnessDist = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        assert!("nope:1".parse::<OffspringDist>().is_err());
        assert!("pois".parse::<OffspringDist>().is_err());
        assert!("unif:1".parse::<FitnessDist>().is_err());
    }

    #[test]
    fn empirical_fitness_tail() {
        let d: FitnessDist = "emp:1@0.5,3@1".parse().unwrap();
        assert_eq!(d.tail_ge(1.0), 1.0);
        assert_eq!(d.tail_ge(2.0), 0.5);
        assert_eq!(d.tail_ge(3.0), 0.5);
        assert_eq!(d.tail_ge(3.5), 0.0);
    }
}
