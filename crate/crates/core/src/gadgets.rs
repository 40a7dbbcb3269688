//! Dedicated simulators for the star and path gadgets.
//!
//! The star with centre fitness `f` and unit leaves is tracked through its
//! counting chain `(m, n)`: `m` infected leaves, `n = 1` when the centre is
//! infected. The path simulator runs the graphical representation itself,
//! so infection arrows aimed at already infected vertices are visible; the
//! sequential relay event is defined in terms of those arrows.

use rand::Rng;

use crate::bounds::compute_l;
use crate::error::{Error, Result};
use crate::rng::exp;

/// Counting chain of the star `G_k` with centre fitness `f`.
///
/// From `(m,1)`: `(m−1,1)` at rate `m`, `(m+1,1)` at rate `λf(k−m)`,
/// `(m,0)` at rate 1. From `(m,0)`: `(m−1,0)` at rate `m`, `(m,1)` at rate
/// `λfm`. `(0,0)` is absorbing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarChain {
    lambda: f64,
    f: f64,
    k: u64,
    level: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StarState {
    pub leaves: u64,
    pub centre: bool,
}

impl StarState {
    pub const CENTRE_ONLY: StarState = StarState { leaves: 0, centre: true };
}

/// First passage of the chain from `(0,1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarHit {
    /// `T_L`, first time with at least `L` infected leaves.
    pub t_level: Option<f64>,
    /// `T_{0,0}`, extinction.
    pub t_extinct: Option<f64>,
    /// Event cap reached before either.
    pub censored: bool,
}

impl StarChain {
    pub fn new(lambda: f64, f: f64, k: u64) -> Result<Self> {
        let level = compute_l(lambda, f, k)?;
        Ok(StarChain { lambda, f, k, level })
    }

    pub fn level(&self) -> u64 {
        self.level
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    /// Advance by one event; `None` at the absorbing state.
    fn step<R: Rng + ?Sized>(&self, s: StarState, rng: &mut R) -> Option<(f64, StarState)> {
        let lf = self.lambda * self.f;
        let m = s.leaves as f64;
        let (recover, grow, toggle) =
            if s.centre { (m, lf * (self.k - s.leaves) as f64, 1.0) } else { (m, 0.0, lf * m) };
        let total = recover + grow + toggle;
        if total <= 0.0 {
            return None;
        }
        let dt = exp(rng, total);
        let u = rng.random::<f64>() * total;
        let next = if u < recover {
            StarState { leaves: s.leaves - 1, ..s }
        } else if u < recover + grow {
            StarState { leaves: s.leaves + 1, ..s }
        } else {
            StarState { centre: !s.centre, ..s }
        };
        Some((dt, next))
    }

    /// Run from `(0,1)` until `T_L ∧ T_{0,0}`.
    pub fn hit<R: Rng + ?Sized>(&self, max_events: u64, rng: &mut R) -> StarHit {
        let mut s = StarState::CENTRE_ONLY;
        let mut t = 0.0;
        for _ in 0..max_events {
            if s.leaves >= self.level {
                return StarHit { t_level: Some(t), t_extinct: None, censored: false };
            }
            match self.step(s, rng) {
                None => return StarHit { t_level: None, t_extinct: Some(t), censored: false },
                Some((dt, next)) => {
                    t += dt;
                    s = next;
                }
            }
        }
        StarHit { t_level: None, t_extinct: None, censored: true }
    }

    /// Whether the leaf count drops to `threshold` or below at some time in
    /// `[from, to]`, starting from `start` at time 0.
    pub fn dips<R: Rng + ?Sized>(&self, start: StarState, threshold: f64, from: f64, to: f64, rng: &mut R) -> Result<bool> {
        if start.leaves > self.k {
            return Err(Error::param("more infected leaves than leaves"));
        }
        if !(from >= 0.0 && from <= to) {
            return Err(Error::param(format!("bad window [{from}, {to}]")));
        }
        let mut s = start;
        let mut t = 0.0f64;
        loop {
            let (dt, next) = self.step(s, rng).unwrap_or((f64::INFINITY, s));
            // s holds on [t, t+dt)
            if s.leaves as f64 <= threshold && t.max(from) <= (t + dt).min(to) {
                return Ok(true);
            }
            t += dt;
            if t > to {
                return Ok(false);
            }
            s = next;
        }
    }
}

/// One trial of the contact process on a path `v_0, ..., v_r` from `v_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTrial {
    /// Every `v_{i−1}` sent an arrow to `v_i` before recovering, in order.
    pub relay: bool,
    /// `T = s_r` when the relay succeeded.
    pub relay_time: Option<f64>,
    /// `v_r ∈ X_{2r}`.
    pub reached: bool,
}

/// Simulate the path through its graphical representation: each infected
/// vertex recovers at rate 1 and sends arrows to each neighbour `w` at rate
/// `λF_uF_w`, whether or not `w` is infected.
pub fn path_trial<R: Rng + ?Sized>(lambda: f64, fitness: &[f64], rng: &mut R) -> Result<PathTrial> {
    if fitness.len() < 2 {
        return Err(Error::param("path needs r >= 1"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda must be positive, got {lambda}")));
    }
    let n = fitness.len();
    let r = n - 1;
    let until = 2.0 * r as f64;
    let mut infected = vec![false; n];
    infected[0] = true;
    let mut t = 0.0;
    // stage i watches v_{i-1}; stage r+1 means the relay completed
    let mut stage = 1;
    let mut relay = None::<bool>;
    let mut relay_time = None;
    let mut reached = None;
    let mut events: Vec<(usize, Option<usize>, f64)> = Vec::with_capacity(3 * n);
    loop {
        events.clear();
        for u in (0..n).filter(|&u| infected[u]) {
            events.push((u, None, 1.0));
            if u > 0 {
                events.push((u, Some(u - 1), lambda * fitness[u] * fitness[u - 1]));
            }
            if u < r {
                events.push((u, Some(u + 1), lambda * fitness[u] * fitness[u + 1]));
            }
        }
        let total: f64 = events.iter().map(|e| e.2).sum();
        let dt = if total > 0.0 { exp(rng, total) } else { f64::INFINITY };
        if reached.is_none() && t + dt > until {
            reached = Some(infected[r]);
        }
        if (reached.is_some() && relay.is_some()) || total <= 0.0 {
            break;
        }
        t += dt;
        let mut x = rng.random::<f64>() * total;
        let mut pick = events[events.len() - 1];
        for &e in &events {
            if x < e.2 {
                pick = e;
                break;
            }
            x -= e.2;
        }
        let (u, target, _) = pick;
        if relay.is_none() && u == stage - 1 {
            if target.is_none() {
                relay = Some(false);
            } else if target == Some(stage) {
                stage += 1;
                if stage > r {
                    relay = Some(true);
                    relay_time = Some(t);
                }
            }
        }
        match target {
            None => infected[u] = false,
            Some(w) => infected[w] = true,
        }
    }
    Ok(PathTrial { relay: relay == Some(true), relay_time, reached: reached.unwrap_or(false) })
}
