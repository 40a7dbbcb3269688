//! Closed-form quantities of the star and path gadgets: the cut-off level
//! `L`, the persistence time `S`, the relay constants, and the explicit
//! bounds the experiments compare against.
//!
//! Unspecified proof constants live in [`BoundParams`] as surrogates.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

fn check_lambda_f(lambda: f64, f: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::param(format!("lambda must be positive and finite, got {lambda}")));
    }
    if !(f.is_finite() && f >= 1.0) {
        return Err(Error::param(format!("f must be a finite real >= 1, got {f}")));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(Error::param(format!("epsilon must lie in (0, 1/2), got {eps}")))
    }
}

/// Cut-off level `L = ⌈λfk/(1+2λf)⌉`.
pub fn compute_l(lambda: f64, f: f64, k: u64) -> Result<u64> {
    check_lambda_f(lambda, f)?;
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    let lf = lambda * f;
    Ok((lf * k as f64 / (1.0 + 2.0 * lf)).ceil() as u64)
}

/// `ln S` with `S = (1+λf/2)^{L(1−2ε)} / (2k(2+λf))`.
pub fn log_s(lambda: f64, f: f64, k: u64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let l = compute_l(lambda, f, k)? as f64;
    let lf = lambda * f;
    Ok(l * (1.0 - 2.0 * eps) * (lf / 2.0).ln_1p() - (2.0 * k as f64 * (2.0 + lf)).ln())
}

/// `S`, possibly `+∞` when it overflows; use [`log_s`] for comparisons.
pub fn compute_s(lambda: f64, f: f64, k: u64, eps: f64) -> Result<f64> {
    log_s(lambda, f, k, eps).map(f64::exp)
}

/// `C_{λ,f} = ((λ+1)/λ)² (λf/(1+λf))²`.
pub fn compute_c_lambda_f(lambda: f64, f: f64) -> Result<f64> {
    check_lambda_f(lambda, f)?;
    let a = (lambda + 1.0) / lambda;
    let b = lambda * f / (1.0 + lambda * f);
    Ok(a * a * b * b)
}

/// `(λ̂, Ĉ) = (λ/(λ+1), C_{λ,f}/4)`.
pub fn compute_lhat_chat(lambda: f64, f: f64) -> Result<(f64, f64)> {
    let c = compute_c_lambda_f(lambda, f)?;
    Ok((lambda / (lambda + 1.0), c / 4.0))
}

/// Probability of the sequential relay along a path with the given
/// fitness values: `∏ λF_{i−1}F_i / (1+λF_{i−1}F_i)`.
pub fn relay_product(lambda: f64, fitness: &[f64]) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::param(format!("lambda must be positive and finite, got {lambda}")));
    }
    if fitness.len() < 2 {
        return Err(Error::param("a path needs at least two vertices"));
    }
    Ok(fitness
        .windows(2)
        .map(|w| {
            let x = lambda * w[0] * w[1];
            x / (1.0 + x)
        })
        .product())
}

/// One surrogate constant and whether the user supplied it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Surrogate {
    pub value: f64,
    pub user: bool,
}

impl Surrogate {
    const fn default_of(value: f64) -> Self {
        Surrogate { value, user: false }
    }
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.value, if self.user { "" } else { " (default)" })
    }
}

pub const DEFAULT_SURROGATE: f64 = 4.0;
pub const DEFAULT_EPSILON: f64 = 0.1;

/// Abstract constants of the star, path and good-vertex arguments. The
/// source never gives numbers for them; every default is a stand-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundParams {
    pub c: Surrogate,
    pub c_hat: Surrogate,
    pub c_hat1: Surrogate,
    pub c2: Surrogate,
    pub gamma: Surrogate,
    #[serde(rename = "K")]
    pub k_const: Surrogate,
    pub eps: Surrogate,
    pub eps1: Surrogate,
    pub eps2: Surrogate,
    pub delta: Surrogate,
    pub m: Surrogate,
}

impl Default for BoundParams {
    fn default() -> Self {
        let s = Surrogate::default_of(DEFAULT_SURROGATE);
        BoundParams {
            c: s,
            c_hat: s,
            c_hat1: s,
            c2: s,
            gamma: s,
            k_const: s,
            eps: Surrogate::default_of(DEFAULT_EPSILON),
            eps1: s,
            eps2: s,
            delta: s,
            m: s,
        }
    }
}

impl BoundParams {
    pub const NAMES: [&'static str; 11] =
        ["c", "c_hat", "c_hat1", "c2", "gamma", "K", "eps", "eps1", "eps2", "delta", "m"];

    fn slot(&mut self, name: &str) -> Option<&mut Surrogate> {
        Some(match name {
            "c" => &mut self.c,
            "c_hat" => &mut self.c_hat,
            "c_hat1" => &mut self.c_hat1,
            "c2" => &mut self.c2,
            "gamma" => &mut self.gamma,
            "K" => &mut self.k_const,
            "eps" => &mut self.eps,
            "eps1" => &mut self.eps1,
            "eps2" => &mut self.eps2,
            "delta" => &mut self.delta,
            "m" => &mut self.m,
            _ => return None,
        })
    }

    /// Set a constant by name, marking it user-supplied.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = self.slot(name).ok_or_else(|| {
            Error::param(format!("unknown constant {name:?}; valid: {}", Self::NAMES.join(", ")))
        })?;
        *slot = Surrogate { value, user: true };
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let mut copy = *self;
        for name in Self::NAMES {
            let v = copy.slot(name).expect("listed name").value;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("constant {name} must be positive, got {v}")));
            }
        }
        check_eps(self.eps.value)
    }
}

/// `R(f,k,λ) = ĉ1/(λf) + c/(λf k^{1/3}) + c2/(fk)`.
pub fn compute_r(f: f64, k: u64, lambda: f64, consts: &BoundParams) -> Result<f64> {
    check_lambda_f(lambda, f)?;
    consts.validate()?;
    let lf = lambda * f;
    let k = k as f64;
    Ok(consts.c_hat1.value / lf + consts.c.value / (lf * k.cbrt()) + consts.c2.value / (f * k))
}

/// Bound on the probability that the star chain dies before reaching `L`
/// infected leaves: `c/(λf k^{1/3})`.
pub fn star_extinction_bound(lambda: f64, f: f64, k: u64, c: f64) -> Result<f64> {
    check_lambda_f(lambda, f)?;
    Ok(c / (lambda * f * (k as f64).cbrt()))
}

/// Bound on the probability of not reaching `L` leaves by time 1:
/// `ĉ1/(λf) + c/(λf k^{1/3})`.
pub fn star_slow_bound(lambda: f64, f: f64, k: u64, c_hat1: f64, c: f64) -> Result<f64> {
    Ok(c_hat1 / (lambda * f) + star_extinction_bound(lambda, f, k, c)?)
}

/// Persistence failure bound from a start with `L` infected leaves:
/// `(3+λf)(1+λf/2)^{−εL}`.
pub fn persistence_bound(lambda: f64, f: f64, k: u64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let l = compute_l(lambda, f, k)? as f64;
    let lf = lambda * f;
    Ok((3.0 + lf) * (-eps * l * (lf / 2.0).ln_1p()).exp())
}

/// Lower bound on `P(v_r ∈ X_{2r})` along a path: `(1−e^{−γr}) · ∏`.
pub fn path_lower_bound(lambda: f64, fitness: &[f64], gamma: f64) -> Result<f64> {
    let prod = relay_product(lambda, fitness)?;
    let r = (fitness.len() - 1) as f64;
    Ok(-(-gamma * r).exp_m1() * prod)
}

/// Relay failure bound `(1−Ĉλ̂^r)^{S/(2r+1)} + R(f,k,λ)` with the time
/// window `S` replaced by `window` when given (capped experiments).
pub fn relay_bound(lambda: f64, f: f64, k: u64, r: u32, consts: &BoundParams, window: Option<f64>) -> Result<f64> {
    if r == 0 {
        return Err(Error::param("path length r must be at least 1"));
    }
    let (lhat, chat) = compute_lhat_chat(lambda, f)?;
    let s = match window {
        Some(w) => w,
        None => compute_s(lambda, f, k, consts.eps.value)?,
    };
    let p = chat * lhat.powi(r as i32);
    let first = if p >= 1.0 { 0.0 } else { (s / (2 * r + 1) as f64 * (-p).ln_1p()).exp() };
    Ok(first + compute_r(f, k, lambda, consts)?)
}

/// `r(f,k) = ⌈−log(μ^{-1} c k P(ξ=k) P(F≥f)) / log μ⌉`, at least 1.
pub fn compute_r_of_fk(f: f64, k: u64, mu: f64, c: f64, offspring_pmf_at_k: f64, fitness_tail_at_f: f64) -> Result<u32> {
    if !(mu.is_finite() && mu > 1.0) {
        return Err(Error::param(format!("mean offspring must exceed 1, got {mu}")));
    }
    for (name, p) in [("P(xi=k)", offspring_pmf_at_k), ("P(F>=f)", fitness_tail_at_f)] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::param(format!("{name} must lie in (0,1], got {p}")));
        }
    }
    if !(c > 0.0 && f >= 1.0 && k >= 1) {
        return Err(Error::param("need c > 0, f >= 1, k >= 1"));
    }
    let log_arg = c.ln() + (k as f64).ln() + offspring_pmf_at_k.ln() + fitness_tail_at_f.ln() - mu.ln();
    // absorb rounding when the quotient is an exact integer
    let r = (-log_arg / mu.ln() - 1e-9).ceil();
    Ok(if r < 1.0 { 1 } else { r as u32 })
}

/// Both sides of `S/(2r+1) > 2/(Ĉ λ̂^r)`, in natural logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition62 {
    pub log_lhs: f64,
    pub log_rhs: f64,
    pub holds: bool,
}

pub fn check_condition_62(lambda: f64, f: f64, k: u64, eps: f64, r: u32) -> Result<Condition62> {
    let (lhat, chat) = compute_lhat_chat(lambda, f)?;
    let log_lhs = log_s(lambda, f, k, eps)? - ((2 * r + 1) as f64).ln();
    let log_rhs = 2f64.ln() - chat.ln() - r as f64 * lhat.ln();
    Ok(Condition62 { log_lhs, log_rhs, holds: log_lhs > log_rhs })
}

/// One-sided comparison of an estimate's upper confidence end with a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub bound: f64,
    pub ci_hi: f64,
    /// The bound is at least 1 and says nothing.
    pub vacuous: bool,
    pub pass: bool,
}

impl BoundCheck {
    pub fn new(ci_hi: f64, bound: f64) -> Self {
        let vacuous = !(bound < 1.0);
        BoundCheck { bound, ci_hi, vacuous, pass: !vacuous && ci_hi < bound }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn cut_off_level() {
        assert_eq!(compute_l(1.0, 1.0, 3).unwrap(), 1);
        assert_eq!(compute_l(1.0, 1e9, 64).unwrap(), 32);
        assert_eq!(compute_l(0.1, 1.0, 10).unwrap(), 1);
        assert_eq!(compute_l(1.0, 16.0, 64).unwrap(), 32);
        assert_eq!(compute_l(1.0, 4.0, 64).unwrap(), 29);
        assert!(compute_l(1.0, 0.5, 3).is_err());
        assert!(compute_l(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn persistence_time() {
        let s = compute_s(1.0, 1.0, 3, 0.25).unwrap();
        assert!(close(s, 1.5f64.sqrt() / 18.0, 1e-14));
        assert!((s - 0.06804).abs() < 1e-5);
        for &(lambda, f, k, eps) in &[(1.0, 8.0, 512, 0.1), (0.3, 3.0, 100, 0.4), (2.0, 1.0, 7, 0.01)] {
            let lf: f64 = lambda * f;
            let l = compute_l(lambda, f, k).unwrap() as f64;
            let second = (1.0 + lf / 2.0).powf(l * (1.0 - 2.0 * eps) - 1.0) / (4.0 * k as f64);
            assert!(close(compute_s(lambda, f, k, eps).unwrap(), second, 1e-12));
        }
        assert!(compute_s(1.0, 1.0, 3, 0.5).is_err());
        // the log form survives where the plain power overflows
        assert!(log_s(1.0, 1e6, 10_000, 0.1).unwrap() > 700.0);
    }

    #[test]
    fn s_grows_with_f() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..40 {
            let f = 2.0 + i as f64;
            let ls = log_s(1.0, f, 256, 0.1).unwrap();
            assert!(ls > prev, "f={f}");
            prev = ls;
        }
    }

    #[test]
    fn relay_constants() {
        let (lhat, chat) = compute_lhat_chat(1.0, 1.0).unwrap();
        assert_eq!(compute_c_lambda_f(1.0, 1.0).unwrap(), 1.0);
        assert_eq!((lhat, chat), (0.5, 0.25));
        let big = compute_c_lambda_f(0.5, 1e12).unwrap();
        assert!(close(big, 9.0, 1e-9));
        assert!(close(compute_c_lambda_f(1e9, 1.0).unwrap(), 1.0, 1e-8));
    }

    #[test]
    fn r_term() {
        let mut p = BoundParams::default();
        for name in ["c", "c_hat1", "c2"] {
            p.set(name, 1.0).unwrap();
        }
        assert!(close(compute_r(10.0, 1000, 1.0, &p).unwrap(), 0.1101, 1e-12));
        let a = compute_r(7.0, 50, 0.3, &p).unwrap();
        let b = compute_r(14.0, 50, 0.3, &p).unwrap();
        assert!(close(b, a / 2.0, 1e-14));
        assert!(compute_r(1e12, 50, 0.3, &p).unwrap() < 1e-10);
    }

    #[test]
    fn bound_params_names() {
        let mut p = BoundParams::default();
        assert!(!p.gamma.user);
        p.set("gamma", 0.5).unwrap();
        assert!(p.gamma.user && p.gamma.value == 0.5);
        assert!(p.set("zeta", 1.0).is_err());
        assert!(p.set("eps", 0.6).is_err());
        assert!(p.set("c", -1.0).is_err());
    }

    #[test]
    fn relay_depth() {
        assert_eq!(compute_r_of_fk(2.0, 1, 2.0, 1.0, 1.0, 1.0 / 8.0).unwrap(), 4);
        assert_eq!(compute_r_of_fk(1.0, 1, 2.0, 1.0, 1.0, 1.0).unwrap(), 1);
        assert!(compute_r_of_fk(1.0, 3, 2.0, 1.0, 0.0, 0.5).is_err());
        assert!(compute_r_of_fk(1.0, 3, 1.0, 1.0, 0.1, 0.5).is_err());
    }

    #[test]
    fn condition_large_star() {
        let c = check_condition_62(1.0, 1e4, 1000, 0.1, 10).unwrap();
        assert!(c.holds, "{c:?}");
        let c = check_condition_62(1.0, 1.0, 3, 0.1, 10).unwrap();
        assert!(!c.holds);
    }

    #[test]
    fn explicit_bounds() {
        let b = star_extinction_bound(1.0, 8.0, 512, 4.0).unwrap();
        assert!(close(b, 0.0625, 1e-12));
        let p = persistence_bound(1.0, 4.0, 64, 0.1).unwrap();
        assert!(close(p, 7.0 * 3f64.powf(-2.9), 1e-12));
        assert!(close(relay_product(1.0, &[1.0; 4]).unwrap(), 0.125, 1e-15));
        assert!(close(relay_product(1.0, &[9.0, 1.0, 9.0]).unwrap(), 0.81, 1e-15));
        let lb = path_lower_bound(1.0, &[1.0; 4], 4.0).unwrap();
        assert!(lb < 0.125 && lb > 0.12);
    }

    #[test]
    fn relay_bound_shape() {
        let p = BoundParams::default();
        // with f = 1 every term of R is large: vacuous
        assert!(relay_bound(1.0, 1.0, 64, 3, &p, Some(200.0)).unwrap() > 1.0);
        let longer = relay_bound(1.0, 8.0, 64, 3, &p, Some(400.0)).unwrap();
        let shorter = relay_bound(1.0, 8.0, 64, 3, &p, Some(200.0)).unwrap();
        assert!(longer < shorter);
    }

    #[test]
    fn bound_check_flags() {
        assert!(BoundCheck::new(0.01, 0.5).pass);
        assert!(!BoundCheck::new(0.6, 0.5).pass);
        let v = BoundCheck::new(0.0, 1.3);
        assert!(v.vacuous && !v.pass);
    }
}
