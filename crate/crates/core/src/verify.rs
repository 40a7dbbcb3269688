//! Verification batteries: exact identities on random small instances and
//! subset checks for the couplings.

use rand::Rng;
use serde::Serialize;

use crate::coupling::{couple_ignore_recoveries, couple_monotone, IgnoreRecoveries, IntervalSet};
use crate::error::{Error, Result};
use crate::exact::{
    build_generator, build_pinned_generator, delayed_reweight, excursion_identity_check, expected_hitting_time,
    expected_jumps, product_chain_check, stationary_distribution, zero_mass_identity, Component,
};
use crate::experiments::{run_trials, RunSpec};
use crate::rng::{stream, sub_seed, RandomStream};
use crate::sim::{simulate, Horizon, ProcessParams, Variant};
use crate::tree::{Vertex, WeightedTree, ROOT};

pub const EXACT_TOLERANCE: f64 = 1e-10;

/// `check_name,instance_id,deviation,tolerance,pass`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub check_name: String,
    pub instance_id: u64,
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl VerifyRow {
    pub fn new(check_name: &str, instance_id: u64, deviation: f64, tolerance: f64) -> Self {
        // a zero tolerance asks for an exact zero
        let pass = if tolerance > 0.0 { deviation < tolerance } else { deviation == 0.0 };
        VerifyRow { check_name: check_name.to_string(), instance_id, deviation, tolerance, pass }
    }
}

/// Uniform random recursive tree on `n` vertices (each vertex picks a
/// uniformly random earlier parent) with fitness uniform on `[lo, hi]`.
pub fn random_small_tree<R: Rng + ?Sized>(n: usize, lo: f64, hi: f64, rng: &mut R) -> Result<WeightedTree> {
    if n == 0 {
        return Err(Error::param("tree needs at least one vertex"));
    }
    let parent: Vec<Option<Vertex>> = (0..n).map(|v| (v > 0).then(|| rng.random_range(0..v))).collect();
    let fitness = (0..n).map(|_| rng.random_range(lo..=hi)).collect();
    WeightedTree::from_parents(&parent, fitness)
}

/// One tree of the simulation-versus-exact battery.
#[derive(Debug, Clone)]
pub struct BatteryInstance {
    /// Draw index; rejected draws leave gaps.
    pub draw: u64,
    pub tree: WeightedTree,
    pub lambda: f64,
    /// Exact mean extinction time from `1_ρ`.
    pub exact_mean: f64,
    /// Exact mean number of events before extinction.
    pub exact_jumps: f64,
}

/// Draws per battery slot before giving up.
pub const BATTERY_MAX_DRAWS: u64 = 100_000;

/// `count` random trees with `λ` uniform on `[0.1, 2]` and fitness uniform
/// on `[1, 8]`. Slot `i` has `1 + i mod max_vertices` vertices and keeps the
/// first draw whose exact mean event count to extinction is at most
/// `max_jumps`; a short pilot run discards hopeless draws before the exact
/// solve. Most raw draws on larger trees survive for astronomically long,
/// which no simulation can average over.
pub fn oracle_battery(seed: u64, count: usize, max_vertices: usize, max_jumps: f64) -> Result<Vec<BatteryInstance>> {
    if max_vertices == 0 || !(max_jumps >= 1.0) {
        return Err(Error::param("battery needs max vertices >= 1 and a jump cap >= 1"));
    }
    let pilot_cap = Horizon { max_events: (20.0 * max_jumps) as u64, ..Horizon::default() };
    let mut out = Vec::with_capacity(count);
    for slot in 0..count {
        let n = 1 + slot % max_vertices;
        let mut found = None;
        for draw in 0..BATTERY_MAX_DRAWS {
            let mut rng = stream(sub_seed(sub_seed(seed, 3), slot as u64), draw);
            let lambda = rng.random_range(0.1..=2.0);
            let tree = random_small_tree(n, 1.0, 8.0, &mut rng)?;
            let params = ProcessParams::new(lambda, Variant::plain());
            let pilot = (0..10).try_fold(true, |ok, _| {
                Ok::<_, Error>(ok && simulate(&tree, &params.with_horizon(pilot_cap), &[ROOT], &mut rng, None)?.obs.censor.is_none())
            })?;
            if !pilot {
                continue;
            }
            let gen = build_generator(&tree, &params)?;
            let exact_jumps = expected_jumps(&gen, |x| x == 0, 1)?;
            if exact_jumps <= max_jumps {
                let exact_mean = expected_hitting_time(&gen, |x| x == 0, 1)?;
                found = Some(BatteryInstance { draw, tree, lambda, exact_mean, exact_jumps });
                break;
            }
        }
        out.push(found.ok_or_else(|| Error::param(format!("no battery tree with {n} vertices within the jump cap")))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSuite {
    pub seed: u64,
    pub instances: u64,
    pub max_vertices: usize,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Per instance: `π(0) = 1/(1+λφF_ρE[S])`, the product identity of the
/// stationary law on a forest below a pinned parent, the delayed
/// reweighting `ν ∝ θ^{−r}π`, and the excursion identity (plain and
/// delayed).
pub fn exact_suite(suite: &ExactSuite) -> Result<Vec<VerifyRow>> {
    if suite.max_vertices < 2 {
        return Err(Error::param("exact suite needs max vertices >= 2"));
    }
    let cap = suite.max_vertices.min(10);
    let mut rows = Vec::new();
    for i in 0..suite.instances {
        let mut rng = stream(sub_seed(suite.seed, 1), i);
        let rng = &mut rng;
        let lambda = rng.random_range(0.1..=2.0);
        let phi = rng.random_range(1.0..=4.0);
        let theta = rng.random_range(0.2..0.95);

        let n = rng.random_range(1..=cap);
        let tree = random_small_tree(n, 1.0, 8.0, rng)?;
        let z = zero_mass_identity(&tree, lambda, phi)?;
        rows.push(VerifyRow::new("zero_mass_identity", i, z.deviation(), EXACT_TOLERANCE));

        let k = rng.random_range(2..=3usize);
        let mut left = cap.max(k);
        let comps: Vec<Component> = (0..k)
            .map(|j| {
                let room = left - (k - j - 1);
                let size = rng.random_range(1..=room.min(4));
                left -= size;
                Ok(Component { tree: random_small_tree(size, 1.0, 8.0, rng)?, lambda })
            })
            .collect::<Result<_>>()?;
        let p = product_chain_check(&comps, phi)?;
        rows.push(VerifyRow::new("product_identity", i, p.max_deviation(), EXACT_TOLERANCE));

        let plus = tree.clone().with_extra_root()?;
        let plain = ProcessParams::new(lambda, Variant::extra_root_permanent());
        let delayed = ProcessParams::new(lambda, Variant::extra_root_permanent().with_delay(theta));
        let g0 = build_generator(&plus, &plain)?;
        let pi = stationary_distribution(&g0)?.pi;
        let nu = stationary_distribution(&build_generator(&plus, &delayed)?)?.pi;
        let re = delayed_reweight(&pi, theta, &g0.depths())?;
        let dev = nu.iter().zip(&re).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rows.push(VerifyRow::new("delayed_reweighting", i, dev, EXACT_TOLERANCE));

        let st = stationary_distribution(&build_pinned_generator(&tree, lambda, phi, false, None)?)?;
        rows.push(VerifyRow::new("stationary_residual", i, st.residual, EXACT_TOLERANCE));

        let e = excursion_identity_check(&plus, lambda, None)?;
        rows.push(VerifyRow::new("excursion_identity", i, rel(e.frozen, e.identity), EXACT_TOLERANCE));
        let e = excursion_identity_check(&plus, lambda, Some(theta))?;
        rows.push(VerifyRow::new("excursion_identity_delayed", i, rel(e.frozen, e.identity), EXACT_TOLERANCE));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingSuite {
    pub seed: u64,
    pub instances: u64,
    /// Coupled trials per instance and coupling type.
    pub trials: u64,
    pub max_vertices: usize,
    pub horizon: f64,
    pub jobs: usize,
}

fn random_intervals(rng: &mut RandomStream, horizon: f64) -> Result<IntervalSet> {
    let k = rng.random_range(0..=3);
    let mut iv = Vec::with_capacity(k);
    for _ in 0..k {
        let a = rng.random_range(0.0..horizon);
        let b = rng.random_range(a..=horizon);
        iv.push((a, b));
    }
    IntervalSet::new(iv)
}

/// Subset violations of the monotone and ignore-recoveries couplings, and
/// violations of the implied extinction-time order. Each must be zero.
pub fn coupling_suite(suite: &CouplingSuite) -> Result<Vec<VerifyRow>> {
    if suite.max_vertices < 1 || !(suite.horizon > 0.0) {
        return Err(Error::param("coupling suite needs max vertices >= 1 and a positive horizon"));
    }
    let horizon = Horizon::time(suite.horizon);
    let mut rows = Vec::new();
    for i in 0..suite.instances {
        let mut rng = stream(sub_seed(suite.seed, 2), i);
        let n = rng.random_range(1..=suite.max_vertices);
        let tree = random_small_tree(n, 1.0, 8.0, &mut rng)?;
        let hi: Vec<f64> = tree.fitness_slice().to_vec();
        let lo: Vec<f64> = hi.iter().map(|f| 1.0 + (f - 1.0) * rng.random::<f64>()).collect();
        let lambda_hi = rng.random_range(0.1..=2.0);
        let lambda_lo = lambda_hi * rng.random::<f64>().max(1e-3);
        let spec = RunSpec::new(sub_seed(suite.seed, 1000 + i), suite.trials).with_jobs(suite.jobs);
        let outs = run_trials(&spec, |_, rng| couple_monotone(&tree, lambda_lo, lambda_hi, &lo, &hi, &[ROOT], horizon, rng))?;
        let violations: u64 = outs.iter().map(|o| o.violations).sum();
        let order = outs
            .iter()
            .filter(|o| match (o.levels[0].extinction_time, o.levels[1].extinction_time) {
                (Some(a), Some(b)) => a > b,
                (None, Some(_)) => true,
                _ => false,
            })
            .count();
        rows.push(VerifyRow::new("monotone_subset", i, violations as f64, 0.0));
        rows.push(VerifyRow::new("monotone_extinction_order", i, order as f64, 0.0));

        let vertex = rng.random_range(0..n);
        let times = random_intervals(&mut rng, suite.horizon)?;
        let lambda = rng.random_range(0.1..=2.0);
        let spec = RunSpec::new(sub_seed(suite.seed, 5000 + i), suite.trials).with_jobs(suite.jobs);
        let outs = run_trials(&spec, |_, rng| {
            let ignored = IgnoreRecoveries { vertex, times: times.clone() };
            couple_ignore_recoveries(&tree, lambda, &[ROOT], ignored, horizon, rng)
        })?;
        let violations: u64 = outs.iter().map(|o| o.violations).sum();
        rows.push(VerifyRow::new("ignore_recoveries_subset", i, violations as f64, 0.0));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_trees_are_valid() {
        let mut rng = stream(1, 0);
        for n in 1..12 {
            let t = random_small_tree(n, 1.0, 8.0, &mut rng).unwrap();
            assert_eq!(t.len(), n);
            assert!(t.fitness_slice().iter().all(|&f| (1.0..=8.0).contains(&f)));
        }
    }

    #[test]
    fn small_exact_suite_passes() {
        let rows = exact_suite(&ExactSuite { seed: 3, instances: 5, max_vertices: 6 }).unwrap();
        assert_eq!(rows.len(), 30);
        for r in &rows {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn small_coupling_suite_passes() {
        let s = CouplingSuite { seed: 4, instances: 3, trials: 50, max_vertices: 6, horizon: 10.0, jobs: 1 };
        let rows = coupling_suite(&s).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| r.pass));
    }

    #[test]
    fn battery_respects_caps() {
        let b = oracle_battery(9, 5, 4, 50.0).unwrap();
        let sizes: Vec<usize> = b.iter().map(|i| i.tree.len()).collect();
        assert_eq!(sizes, [1, 2, 3, 4, 1]);
        for inst in &b {
            assert!(inst.exact_jumps <= 50.0 && inst.exact_jumps >= 1.0);
        }
        // a lone vertex recovers at rate 1 in one jump
        assert_eq!((b[0].exact_mean, b[0].exact_jumps), (1.0, 1.0));
    }

    #[test]
    fn zero_tolerance_needs_zero() {
        assert!(VerifyRow::new("x", 0, 0.0, 0.0).pass);
        assert!(!VerifyRow::new("x", 0, 1.0, 0.0).pass);
        assert!(!VerifyRow::new("x", 0, 1e-9, 1e-10).pass);
    }
}
