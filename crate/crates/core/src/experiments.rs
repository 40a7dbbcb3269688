//! Monte Carlo estimators and the gadget experiments.
//!
//! Every estimator takes a [`RunSpec`]. Trial `i` draws from
//! `rng::stream(seed, i)` whatever the degree of parallelism, and results
//! are gathered in trial order, so equal seeds give equal numbers. Two
//! experiments run with the same seed are paired trial by trial.

use std::io::Write;
use std::ops::ControlFlow;

use serde::Serialize;

use crate::bounds::{
    compute_l, compute_r, compute_s, path_lower_bound, persistence_bound, relay_bound, relay_product,
    star_extinction_bound, star_slow_bound, BoundCheck, BoundParams,
};
use crate::coupling::{percolation_component, simulate_coupled, Level};
use crate::dist::{FitnessDist, OffspringDist};
use crate::error::{Error, Result};
use crate::gadgets::{path_trial, StarChain, StarState};
use crate::rng::{stream, RandomStream};
use crate::sim::{
    simulate, simulate_observed, Censor, Event, EventKind, GrowthSpec, Horizon, Observer, ProcessParams, Variant,
    View,
};
use crate::stats::{ls_slope, MCEstimate, MeanAccumulator};
use crate::tree::{make_star_with_path, star_path_vertex, Vertex, WeightedTree, ROOT};
use crate::ychain::{drift_estimate, embedded_z_supermartingale_check, DriftEstimate, YChain, YStop, ZCheck};

pub const DEFAULT_LEVEL: f64 = 0.99;
pub const DEFAULT_BUDGET: usize = 5_000;
pub const DEFAULT_MAX_EVENTS: u64 = 10_000_000;

/// Seed, trial count, parallelism and confidence level of one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSpec {
    pub seed: u64,
    pub trials: u64,
    pub jobs: usize,
    pub level: f64,
}

impl RunSpec {
    pub fn new(seed: u64, trials: u64) -> Self {
        RunSpec { seed, trials, jobs: 1, level: DEFAULT_LEVEL }
    }

    pub fn with_jobs(self, jobs: usize) -> Self {
        RunSpec { jobs, ..self }
    }

    pub fn with_level(self, level: f64) -> Self {
        RunSpec { level, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::param("trials must be at least 1"));
        }
        if self.jobs == 0 {
            return Err(Error::param("jobs must be at least 1"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::param(format!("confidence level must lie in (0,1), got {}", self.level)));
        }
        Ok(())
    }
}

/// Run `trial(i, rng_i)` for every trial index and return the results in
/// index order. The first error in index order wins.
pub fn run_trials<T, F>(spec: &RunSpec, trial: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut RandomStream) -> Result<T> + Sync,
{
    spec.validate()?;
    let one = |i: u64| trial(i, &mut stream(spec.seed, i));
    let results: Vec<Result<T>> = if spec.jobs == 1 {
        (0..spec.trials).map(one).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.jobs)
            .build()
            .map_err(|e| Error::param(format!("cannot start {} worker threads: {e}", spec.jobs)))?;
        pool.install(|| (0..spec.trials).into_par_iter().map(one).collect())
    };
    results.into_iter().collect()
}

fn proportion(successes: u64, n: u64, censored: u64, spec: &RunSpec) -> Result<MCEstimate> {
    if n == 0 {
        return Err(Error::param("every trial was censored; raise the budget or event cap"));
    }
    MCEstimate::proportion(successes, n, spec.level, censored, spec.seed)
}

/// A lone root, not yet expanded, with fitness drawn from `fitness`.
fn seed_tree(fitness: &FitnessDist, rng: &mut RandomStream) -> Result<WeightedTree> {
    let mut tree = WeightedTree::single(fitness.sample(rng))?;
    tree.set_frontier(ROOT, true);
    Ok(tree)
}

fn check_growth(growth: &GrowthSpec) -> Result<()> {
    if growth.budget == 0 {
        return Err(Error::param("vertex budget must be at least 1"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Extinction, survival and root reinfection

/// Mean absorption time from `initial`. Horizon-censored trials are left
/// out of the mean and counted.
pub fn mean_extinction_time(
    tree: &WeightedTree,
    params: &ProcessParams,
    initial: &[Vertex],
    spec: &RunSpec,
) -> Result<MCEstimate> {
    let times = run_trials(spec, |_, rng| Ok(simulate(tree, params, initial, rng, None)?.obs.extinction_time))?;
    let acc: MeanAccumulator = times.iter().flatten().copied().collect();
    let censored = times.iter().filter(|t| t.is_none()).count() as u64;
    MCEstimate::mean(&acc, spec.level, censored, spec.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GrownEnd {
    Extinct,
    Alive { root: bool },
    /// Budget or event cap hit while still alive.
    Censored,
}

fn grown_trial(growth: &GrowthSpec, params: &ProcessParams, rng: &mut RandomStream) -> Result<GrownEnd> {
    let tree = seed_tree(&growth.fitness, rng)?;
    match simulate(&tree, params, &[ROOT], rng, Some(growth)) {
        Ok(out) => Ok(match out.obs.censor {
            None => GrownEnd::Extinct,
            Some(Censor::Horizon) => GrownEnd::Alive { root: out.obs.root_infected_at_end },
            Some(_) => GrownEnd::Censored,
        }),
        Err(Error::VertexBudgetExceeded { .. }) => Ok(GrownEnd::Censored),
        Err(e) => Err(e),
    }
}

fn grown_params(lambda: f64, horizon: f64, max_events: u64) -> Result<ProcessParams> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::param(format!("horizon must be positive and finite, got {horizon}")));
    }
    let params = ProcessParams::new(lambda, Variant::plain()).with_horizon(Horizon { time: horizon, max_events });
    params.validate()?;
    Ok(params)
}

/// `P(X_T ≠ 0)` on a lazily grown Galton-Watson tree from `1_ρ`. A trial
/// that exhausts the vertex budget or event cap is still alive when it
/// stops; it counts as a survivor and is reported in `censored`.
pub fn estimate_survival(
    growth: &GrowthSpec,
    lambda: f64,
    horizon: f64,
    max_events: u64,
    spec: &RunSpec,
) -> Result<MCEstimate> {
    check_growth(growth)?;
    let params = grown_params(lambda, horizon, max_events)?;
    let ends = run_trials(spec, |_, rng| grown_trial(growth, &params, rng))?;
    let censored = ends.iter().filter(|e| **e == GrownEnd::Censored).count() as u64;
    let alive = ends.iter().filter(|e| **e != GrownEnd::Extinct).count() as u64;
    proportion(alive, spec.trials, censored, spec)
}

/// `P(ρ ∈ X_T)` on a lazily grown tree. Censored trials say nothing about
/// the root at `T` and are left out of the estimate.
pub fn estimate_root_reinfection(
    growth: &GrowthSpec,
    lambda: f64,
    horizon: f64,
    max_events: u64,
    spec: &RunSpec,
) -> Result<MCEstimate> {
    check_growth(growth)?;
    let params = grown_params(lambda, horizon, max_events)?;
    let ends = run_trials(spec, |_, rng| grown_trial(growth, &params, rng))?;
    let censored = ends.iter().filter(|e| **e == GrownEnd::Censored).count() as u64;
    let hits = ends.iter().filter(|e| **e == GrownEnd::Alive { root: true }).count() as u64;
    proportion(hits, spec.trials - censored, censored, spec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub estimate: MCEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
    /// Subset violations across all coupled trials; zero by construction.
    pub violations: u64,
}

/// Survival proportions over a nondecreasing `λ` grid, all levels driven
/// by one graphical representation per trial. Survival counts are
/// therefore nondecreasing in `λ` exactly. Levels alive when the budget or
/// event cap stops a trial count as censored survivors.
pub fn survival_sweep(
    growth: &GrowthSpec,
    lambdas: &[f64],
    horizon: f64,
    max_events: u64,
    spec: &RunSpec,
) -> Result<Sweep> {
    check_growth(growth)?;
    if lambdas.is_empty() || lambdas.len() > crate::coupling::MAX_LEVELS {
        return Err(Error::param(format!(
            "lambda grid must have between 1 and {} points",
            crate::coupling::MAX_LEVELS
        )));
    }
    if lambdas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("lambda grid must be nondecreasing"));
    }
    for &l in lambdas {
        grown_params(l, horizon, max_events)?;
    }
    let levels: Vec<Level> = lambdas.iter().map(|&l| Level::new(l)).collect();
    let h = Horizon { time: horizon, max_events };
    let outs = run_trials(spec, |_, rng| {
        let tree = seed_tree(&growth.fitness, rng)?;
        let out = simulate_coupled(&tree, &levels, &[ROOT], h, rng, Some(growth))?;
        let stopped_early = out.budget_exceeded || out.censor == Some(Censor::EventCap);
        let alive: Vec<bool> = out.levels.iter().map(|l| l.extinction_time.is_none()).collect();
        Ok((alive, stopped_early, out.violations))
    })?;
    let mut points = Vec::with_capacity(lambdas.len());
    for (j, &lambda) in lambdas.iter().enumerate() {
        let alive = outs.iter().filter(|o| o.0[j]).count() as u64;
        let censored = outs.iter().filter(|o| o.0[j] && o.1).count() as u64;
        points.push(SweepPoint { lambda, estimate: proportion(alive, spec.trials, censored, spec)? });
    }
    Ok(Sweep { points, violations: outs.iter().map(|o| o.2).sum() })
}

/// Mean size of the component of `ρ` in `G_{t0}` on a lazily grown tree.
/// Trials that exhaust the budget are censored and left out.
pub fn percolation_experiment(growth: &GrowthSpec, lambda: f64, t0: f64, spec: &RunSpec) -> Result<MCEstimate> {
    check_growth(growth)?;
    let sizes = run_trials(spec, |_, rng| {
        let tree = seed_tree(&growth.fitness, rng)?;
        match percolation_component(&tree, lambda, t0, rng, Some(growth)) {
            Ok(c) => Ok(Some(c.len() as f64)),
            Err(Error::VertexBudgetExceeded { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    })?;
    let acc: MeanAccumulator = sizes.iter().flatten().copied().collect();
    let censored = sizes.iter().filter(|s| s.is_none()).count() as u64;
    MCEstimate::mean(&acc, spec.level, censored, spec.seed)
}

// ---------------------------------------------------------------------------
// Depth tail

/// Where the depth-tail trials run.
#[derive(Debug, Clone)]
pub enum DepthSource<'a> {
    /// A fixed tree carrying an extra root.
    Tree(&'a WeightedTree),
    /// A fresh Galton-Watson tree per trial, grown lazily up to
    /// `growth.max_depth` (required).
    Grown(&'a GrowthSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthTail {
    pub h: Vec<i32>,
    /// `P(H ≥ h)` per grid point, `H` measured from `ρ+` (so `H ≥ 1`).
    pub estimates: Vec<MCEstimate>,
    /// Least-squares slope of `ln P̂` against `h` over points with
    /// `P̂ > 10/n`; `None` when fewer than two qualify.
    pub slope: Option<f64>,
    pub slope_points: usize,
    pub censored: u64,
    /// `λ > 1`: outside the intended small-`λ` regime.
    pub warn: bool,
}

/// Maximal depth reached by one excursion of the process with a
/// permanently infected extra root, from `1_ρ` back to `{ρ+}`.
pub fn estimate_depth_tail(
    source: &DepthSource<'_>,
    lambda: f64,
    h_grid: &[i32],
    max_events: u64,
    spec: &RunSpec,
) -> Result<DepthTail> {
    if h_grid.is_empty() || h_grid.iter().any(|&h| h < 1) {
        return Err(Error::param("depth grid must be nonempty with every h >= 1"));
    }
    let params = ProcessParams::new(lambda, Variant::extra_root_permanent())
        .with_horizon(Horizon { max_events, ..Horizon::default() });
    params.validate()?;
    match source {
        DepthSource::Tree(t) if t.extra_root().is_none() => {
            return Err(Error::param("depth tail needs a tree with an extra root"))
        }
        DepthSource::Grown(g) if g.max_depth.is_none() => {
            return Err(Error::param("depth tail on a grown tree needs a maximal generation"))
        }
        DepthSource::Grown(g) => check_growth(g)?,
        _ => {}
    }
    let depths = run_trials(spec, |_, rng| {
        let run = match source {
            DepthSource::Tree(t) => simulate(t, &params, &[ROOT], rng, None),
            DepthSource::Grown(g) => {
                let tree = seed_tree(&g.fitness, rng)?.with_extra_root()?;
                simulate(&tree, &params, &[ROOT], rng, Some(g))
            }
        };
        match run {
            Ok(out) if out.obs.censor.is_none() => Ok(Some(out.obs.max_depth)),
            Ok(_) | Err(Error::VertexBudgetExceeded { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    })?;
    let done: Vec<i32> = depths.iter().flatten().copied().collect();
    let censored = (depths.len() - done.len()) as u64;
    let n = done.len() as u64;
    let mut estimates = Vec::with_capacity(h_grid.len());
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &h in h_grid {
        let hits = done.iter().filter(|&&d| d >= h).count() as u64;
        let est = proportion(hits, n, censored, spec)?;
        if est.point > 10.0 / n as f64 {
            xs.push(h as f64);
            ys.push(est.point.ln());
        }
        estimates.push(est);
    }
    Ok(DepthTail {
        h: h_grid.to_vec(),
        estimates,
        slope: ls_slope(&xs, &ys),
        slope_points: xs.len(),
        censored,
        warn: lambda > 1.0,
    })
}

// ---------------------------------------------------------------------------
// Star gadget

fn star_warn(lambda: f64, f: f64, k: u64) -> bool {
    f < 8.0 / lambda || k < 64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StarHitting {
    pub level: u64,
    /// `P(T_L > T_{0,0})`.
    pub dies_first: MCEstimate,
    /// `P(T_L > 1)`.
    pub slow: MCEstimate,
    pub extinction_bound: BoundCheck,
    pub slow_bound: BoundCheck,
    pub warn: bool,
}

/// Star chain from `(0,1)`: how often it dies before `L` infected leaves,
/// and how often it needs more than unit time to get there.
pub fn star_hitting_experiment(
    lambda: f64,
    f: f64,
    k: u64,
    consts: &BoundParams,
    max_events: u64,
    spec: &RunSpec,
) -> Result<StarHitting> {
    consts.validate()?;
    let chain = StarChain::new(lambda, f, k)?;
    let hits = run_trials(spec, |_, rng| Ok(chain.hit(max_events, rng)))?;
    let censored = hits.iter().filter(|h| h.censored).count() as u64;
    let n = spec.trials - censored;
    let died = hits.iter().filter(|h| h.t_extinct.is_some()).count() as u64;
    let slow = hits.iter().filter(|h| !h.censored && h.t_level.is_none_or(|t| t > 1.0)).count() as u64;
    let dies_first = proportion(died, n, censored, spec)?;
    let slow = proportion(slow, n, censored, spec)?;
    Ok(StarHitting {
        level: chain.level(),
        extinction_bound: BoundCheck::new(dies_first.ci.1, star_extinction_bound(lambda, f, k, consts.c.value)?),
        slow_bound: BoundCheck::new(slow.ci.1, star_slow_bound(lambda, f, k, consts.c_hat1.value, consts.c.value)?),
        dies_first,
        slow,
        warn: star_warn(lambda, f, k),
    })
}

/// Starting configuration of the persistence experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PersistenceStart {
    /// Centre and `L` leaves infected; window `[0, S∧cap]`.
    Level,
    /// Centre only; window `[1, S∧cap]`.
    CentreOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StarPersistence {
    pub level: u64,
    pub threshold: f64,
    pub s: f64,
    pub window: (f64, f64),
    pub capped: bool,
    /// `P(inf over the window of the leaf count ≤ εL)`.
    pub failure: MCEstimate,
    /// Against `(3+λf)(1+λf/2)^{−εL}`.
    pub persistence_bound: BoundCheck,
    /// Against `R(f,k,λ)`.
    pub r_bound: BoundCheck,
    pub warn: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn star_persistence_experiment(
    lambda: f64,
    f: f64,
    k: u64,
    eps: f64,
    start: PersistenceStart,
    cap: f64,
    consts: &BoundParams,
    spec: &RunSpec,
) -> Result<StarPersistence> {
    if !(cap > 0.0) {
        return Err(Error::param(format!("time cap must be positive, got {cap}")));
    }
    let chain = StarChain::new(lambda, f, k)?;
    let s = compute_s(lambda, f, k, eps)?;
    let end = s.min(cap);
    let (from, state) = match start {
        PersistenceStart::Level => (0.0, StarState { leaves: chain.level(), centre: true }),
        PersistenceStart::CentreOnly => (1.0, StarState::CENTRE_ONLY),
    };
    if end < from {
        return Err(Error::param(format!("the window [{from}, {end}] is empty (S = {s})")));
    }
    let threshold = eps * chain.level() as f64;
    let fails = run_trials(spec, |_, rng| chain.dips(state, threshold, from, end, rng))?;
    let failure = proportion(fails.iter().filter(|&&b| b).count() as u64, spec.trials, 0, spec)?;
    Ok(StarPersistence {
        level: chain.level(),
        threshold,
        s,
        window: (from, end),
        capped: cap < s,
        persistence_bound: BoundCheck::new(failure.ci.1, persistence_bound(lambda, f, k, eps)?),
        r_bound: BoundCheck::new(failure.ci.1, compute_r(f, k, lambda, consts)?),
        failure,
        warn: star_warn(lambda, f, k) || eps > 0.45,
    })
}

// ---------------------------------------------------------------------------
// Path gadget

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathTransmission {
    /// Sequential relay event `B`.
    pub relay: MCEstimate,
    pub relay_exact: f64,
    /// `v_r ∈ X_{2r}`.
    pub reached: MCEstimate,
    /// `(1−e^{−γr}) ∏ …` with the surrogate `γ`.
    pub lower_bound: f64,
    /// `B ∩ {T ≤ 2r}`.
    pub relay_fast: MCEstimate,
    /// Trials in `B ∩ {T ≤ 2r}` with `v_r ∉ X_{2r}`.
    pub containment_violations: u64,
}

pub fn path_transmission_experiment(
    lambda: f64,
    fitness: &[f64],
    consts: &BoundParams,
    spec: &RunSpec,
) -> Result<PathTransmission> {
    consts.validate()?;
    let relay_exact = relay_product(lambda, fitness)?;
    let two_r = 2.0 * (fitness.len() - 1) as f64;
    let trials = run_trials(spec, |_, rng| path_trial(lambda, fitness, rng))?;
    let count = |p: &dyn Fn(&crate::gadgets::PathTrial) -> bool| trials.iter().filter(|t| p(t)).count() as u64;
    let fast = |t: &crate::gadgets::PathTrial| t.relay_time.is_some_and(|s| s <= two_r);
    Ok(PathTransmission {
        relay: proportion(count(&|t| t.relay), spec.trials, 0, spec)?,
        relay_exact,
        reached: proportion(count(&|t| t.reached), spec.trials, 0, spec)?,
        lower_bound: path_lower_bound(lambda, fitness, consts.gamma.value)?,
        relay_fast: proportion(count(&fast), spec.trials, 0, spec)?,
        containment_violations: count(&|t| fast(t) && !t.reached),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StarPathRelay {
    pub level: u64,
    pub s: f64,
    pub window: f64,
    pub capped: bool,
    /// `P(u_r` never infected in `[0, S∧cap])`.
    pub failure: MCEstimate,
    pub bound: BoundCheck,
}

struct StopAt(Vertex);

impl Observer for StopAt {
    fn on_event(&mut self, event: &Event, _view: &View<'_>) -> ControlFlow<()> {
        if event.kind == EventKind::Infect && event.vertex == self.0 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    }
}

/// Star `G_k` with a path of length `r` hung from a leaf; `F_ρ = F_{u_r} = f`
/// and every other fitness is 1. Starts from `1_ρ`.
#[allow(clippy::too_many_arguments)]
pub fn star_path_relay_experiment(
    lambda: f64,
    f: f64,
    k: u64,
    r: u32,
    cap: f64,
    consts: &BoundParams,
    max_events: u64,
    spec: &RunSpec,
) -> Result<StarPathRelay> {
    if r == 0 {
        return Err(Error::param("path length r must be at least 1"));
    }
    if !(cap > 0.0) {
        return Err(Error::param(format!("time cap must be positive, got {cap}")));
    }
    let level = compute_l(lambda, f, k)?;
    let s = compute_s(lambda, f, k, consts.eps.value)?;
    let window = s.min(cap);
    let mut path = vec![1.0; r as usize];
    path[r as usize - 1] = f;
    let tree = make_star_with_path(k as usize, r as usize, f, &path)?;
    let target = star_path_vertex(k as usize, r as usize);
    let params = ProcessParams::new(lambda, Variant::plain()).with_horizon(Horizon { time: window, max_events });
    let ends = run_trials(spec, |_, rng| {
        let out = simulate_observed(&tree, &params, &[ROOT], rng, None, &mut StopAt(target))?;
        Ok(out.obs.censor)
    })?;
    let censored = ends.iter().filter(|c| **c == Some(Censor::EventCap)).count() as u64;
    let failed = ends.iter().filter(|c| matches!(c, None | Some(Censor::Horizon))).count() as u64;
    let failure = proportion(failed, spec.trials - censored, censored, spec)?;
    let bound = relay_bound(lambda, f, k, r, consts, Some(window))?;
    Ok(StarPathRelay { level, s, window, capped: cap < s, bound: BoundCheck::new(failure.ci.1, bound), failure })
}

// ---------------------------------------------------------------------------
// Y-chain

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YChainReport {
    pub level: u64,
    /// Mean of the burst `𝔑` against `1/(λf)`.
    pub burst_mean: MCEstimate,
    pub burst_exact: f64,
    pub drift: DriftEstimate,
    /// Mean of `T_L^Y` from 0 over runs that reached `L` by the horizon.
    pub level_time: MCEstimate,
    pub supermartingale: ZCheck,
}

pub fn ychain_experiment(lambda: f64, f: f64, k: u64, horizon: f64, spec: &RunSpec) -> Result<YChainReport> {
    let chain = YChain::new(lambda, f, k)?;
    let runs = run_trials(spec, |_, rng| {
        let burst = crate::ychain::sample_frak_n(lambda, f, rng)? as f64;
        Ok((burst, chain.simulate(0, horizon, YStop::Level, false, rng)?))
    })?;
    let bursts: MeanAccumulator = runs.iter().map(|r| r.0).collect();
    let ys: Vec<_> = runs.into_iter().map(|r| r.1).collect();
    let times: MeanAccumulator = ys.iter().filter_map(|r| r.t_level).collect();
    let censored = ys.iter().filter(|r| r.t_level.is_none()).count() as u64;
    Ok(YChainReport {
        level: chain.level(),
        burst_mean: MCEstimate::mean(&bursts, spec.level, 0, spec.seed)?,
        burst_exact: 1.0 / (lambda * f),
        drift: drift_estimate(&chain, &ys, spec.level)?,
        level_time: MCEstimate::mean(&times, spec.level, censored, spec.seed)?,
        supermartingale: embedded_z_supermartingale_check(lambda, f, k)?,
    })
}

// ---------------------------------------------------------------------------
// Good vertices

/// Number of vertices in each generation `0..generations` with fitness at
/// least `f` and exactly `k` children.
pub fn count_good_vertices(tree: &WeightedTree, f: f64, k: usize, generations: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; generations];
    for v in 0..tree.len() {
        if Some(v) == tree.extra_root() {
            continue;
        }
        let d = tree.depth(v) as usize;
        if d >= generations {
            continue;
        }
        if tree.is_frontier(v) {
            return Err(Error::param(format!(
                "vertex {v} in generation {d} was never expanded; grow the tree past generation {}",
                generations - 1
            )));
        }
        if tree.fitness(v) >= f && tree.children(v).len() == k {
            counts[d] += 1;
        }
    }
    Ok(counts)
}

/// `E[J_r] = μ^r P(ξ = k) P(F ≥ f)`.
pub fn expected_good_vertices(offspring: &OffspringDist, fitness: &FitnessDist, f: f64, k: u64, r: u32) -> f64 {
    offspring.mean().powi(r as i32) * offspring.pmf(k) * fitness.tail_ge(f)
}

// ---------------------------------------------------------------------------
// CSV output

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub param_json: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: u64,
    pub censored: u64,
    pub bound_value: Option<f64>,
    pub bound_vacuous: Option<bool>,
    pub seed: u64,
}

impl ResultRow {
    pub fn new(experiment: &str, params: &impl Serialize, est: &MCEstimate, bound: Option<&BoundCheck>) -> Self {
        let mut row = ResultRow::from_values(experiment, params, est.point, est.ci, est.n, bound, est.seed);
        row.censored = est.censored;
        row
    }

    /// A row for a quantity that is not an [`MCEstimate`], such as a ratio
    /// estimate or an exact enumeration (give `ci = (x, x)`).
    pub fn from_values(
        experiment: &str,
        params: &impl Serialize,
        estimate: f64,
        ci: (f64, f64),
        n: u64,
        bound: Option<&BoundCheck>,
        seed: u64,
    ) -> Self {
        ResultRow {
            experiment: experiment.to_string(),
            param_json: serde_json::to_string(params).expect("parameters serialize"),
            estimate,
            ci_lo: ci.0,
            ci_hi: ci.1,
            n,
            censored: 0,
            bound_value: bound.map(|b| b.bound),
            bound_vacuous: bound.map(|b| b.vacuous),
            seed,
        }
    }
}

/// `lambda,estimate,ci_lo,ci_hi` per grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl From<&SweepPoint> for SweepRow {
    fn from(p: &SweepPoint) -> Self {
        SweepRow { lambda: p.lambda, estimate: p.estimate.point, ci_lo: p.estimate.ci.0, ci_hi: p.estimate.ci.1 }
    }
}

/// Write serializable rows as CSV with a header line.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> csv::Result<W> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{FitnessDist, OffspringDist};
    use crate::tree::{generate_tree, make_star};

    fn binary(budget: usize) -> GrowthSpec {
        GrowthSpec {
            offspring: OffspringDist::deterministic(2),
            fitness: FitnessDist::ConstantOne,
            budget,
            max_depth: None,
        }
    }

    #[test]
    fn trials_are_schedule_independent() {
        let spec = RunSpec::new(9, 200);
        let tree = make_star(3, 2.0, &[1.0]).unwrap();
        let params = ProcessParams::new(0.7, Variant::plain());
        let a = mean_extinction_time(&tree, &params, &[ROOT], &spec).unwrap();
        let b = mean_extinction_time(&tree, &params, &[ROOT], &spec.with_jobs(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn run_spec_validation() {
        assert!(RunSpec::new(1, 0).validate().is_err());
        assert!(RunSpec::new(1, 5).with_jobs(0).validate().is_err());
        assert!(RunSpec::new(1, 5).with_level(1.0).validate().is_err());
    }

    #[test]
    fn lone_root_reinfection_is_recovery_clock() {
        let g = GrowthSpec { offspring: OffspringDist::deterministic(0), ..binary(10) };
        let est = estimate_root_reinfection(&g, 1.0, 1.0, DEFAULT_MAX_EVENTS, &RunSpec::new(4, 40_000)).unwrap();
        assert!(est.contains((-1f64).exp()), "{est:?}");
    }

    #[test]
    fn budget_overflow_counts_as_censored_survivor() {
        let est = estimate_survival(&binary(20), 3.0, 50.0, DEFAULT_MAX_EVENTS, &RunSpec::new(1, 200)).unwrap();
        assert!(est.censored > 0);
        assert!(est.point * est.n as f64 >= est.censored as f64);
    }

    #[test]
    fn sweep_is_monotone() {
        let lambdas = [0.2, 0.5, 0.8, 1.2];
        let sweep = survival_sweep(&binary(2000), &lambdas, 10.0, DEFAULT_MAX_EVENTS, &RunSpec::new(2, 300)).unwrap();
        assert_eq!(sweep.violations, 0);
        let pts: Vec<f64> = sweep.points.iter().map(|p| p.estimate.total).collect();
        assert!(pts.windows(2).all(|w| w[0] <= w[1]), "{pts:?}");
        assert!(survival_sweep(&binary(10), &[0.5, 0.2], 1.0, 100, &RunSpec::new(1, 2)).is_err());
    }

    #[test]
    fn good_vertices_on_binary_tree() {
        let mut rng = stream(1, 0);
        let t = generate_tree(&OffspringDist::deterministic(2), &FitnessDist::ConstantOne, 5, 1000, &mut rng).unwrap();
        assert_eq!(count_good_vertices(&t, 1.0, 2, 5).unwrap(), vec![1, 2, 4, 8, 16]);
        assert_eq!(count_good_vertices(&t, 2.0, 2, 5).unwrap(), vec![0; 5]);
        assert!(count_good_vertices(&t, 1.0, 2, 6).is_err());
    }

    #[test]
    fn depth_tail_h1_is_certain() {
        let tree = WeightedTree::path(&[1.0, 1.0, 1.0]).unwrap().with_extra_root().unwrap();
        let d = estimate_depth_tail(&DepthSource::Tree(&tree), 0.25, &[1, 2], 1_000_000, &RunSpec::new(3, 1000))
            .unwrap();
        assert_eq!(d.estimates[0].point, 1.0);
        assert!(d.estimates[1].point < 1.0);
    }

    #[test]
    fn results_csv_header() {
        let est = MCEstimate::proportion(3, 10, 0.99, 1, 42).unwrap();
        let row = ResultRow::new("demo", &serde_json::json!({"lambda": 1.0}), &est, None);
        let out = write_csv(Vec::new(), &[row]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("experiment,param_json,estimate,ci_lo,ci_hi,n,censored,bound_value,bound_vacuous,seed\n"));
        assert!(text.contains("demo,\"{\"\"lambda\"\":1.0}\",0.3,"));
    }
}
