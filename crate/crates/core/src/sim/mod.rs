//! Event-driven simulation of the contact process and its variants.
//!
//! Every vertex carries one weight in a sum tree: its recovery rate when
//! infected, its infection pressure `λ F_v Σ_{u~v infected} F_u` when
//! healthy. One event costs `O(deg · log n)`.

mod observer;
mod sumtree;

use std::borrow::Cow;
use std::ops::ControlFlow;

use rand::Rng;

use crate::dist::{FitnessDist, OffspringDist};
use crate::error::{Error, Result};
use crate::rng::exp;
use crate::tree::{Vertex, WeightedTree, ROOT};

pub use observer::{Event, EventKind, NoObserver, Observer, TrajectoryWriter, View};
pub(crate) use sumtree::SumTree;

/// Which modifications of the plain dynamics are active. Flags combine:
/// the excursion quantities need a frozen root above a permanent extra
/// root, and the delayed process is studied with an extra root.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Variant {
    /// `ρ+` never recovers. Requires a tree with an extra root.
    pub extra_root: bool,
    /// `ρ` recovers only while it is the sole infected vertex.
    pub root_frozen: bool,
    /// Multiply every rate in state `x` by `θ^{r(x)}`.
    pub delay: Option<f64>,
}

impl Variant {
    pub fn plain() -> Self {
        Variant::default()
    }

    pub fn extra_root_permanent() -> Self {
        Variant { extra_root: true, ..Variant::default() }
    }

    pub fn root_frozen() -> Self {
        Variant { root_frozen: true, ..Variant::default() }
    }

    pub fn delayed(theta: f64) -> Self {
        Variant { delay: Some(theta), ..Variant::default() }
    }

    pub fn with_extra_root(self) -> Self {
        Variant { extra_root: true, ..self }
    }

    pub fn with_root_frozen(self) -> Self {
        Variant { root_frozen: true, ..self }
    }

    pub fn with_delay(self, theta: f64) -> Self {
        Variant { delay: Some(theta), ..self }
    }
}

/// Stop conditions. Reaching either yields a censored outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    pub time: f64,
    pub max_events: u64,
}

impl Default for Horizon {
    fn default() -> Self {
        Horizon { time: f64::INFINITY, max_events: u64::MAX }
    }
}

impl Horizon {
    pub fn time(t: f64) -> Self {
        Horizon { time: t, ..Horizon::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessParams {
    pub lambda: f64,
    pub variant: Variant,
    pub horizon: Horizon,
}

impl ProcessParams {
    pub fn new(lambda: f64, variant: Variant) -> Self {
        ProcessParams { lambda, variant, horizon: Horizon::default() }
    }

    pub fn with_horizon(self, horizon: Horizon) -> Self {
        ProcessParams { horizon, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::param(format!("lambda must be positive and finite, got {}", self.lambda)));
        }
        if let Some(theta) = self.variant.delay {
            if !(theta > 0.0 && theta < 1.0) {
                return Err(Error::param(format!("delay theta must lie in (0,1), got {theta}")));
            }
        }
        if self.horizon.time.is_nan() || self.horizon.time < 0.0 {
            return Err(Error::param("horizon time must be nonnegative"));
        }
        Ok(())
    }

    pub(crate) fn validate_for(&self, tree: &WeightedTree) -> Result<()> {
        self.validate()?;
        if tree.extra_root().is_some() != self.variant.extra_root {
            return Err(Error::param(
                "the extra-root variant and a tree with an extra root must be used together",
            ));
        }
        Ok(())
    }
}

/// Lazy growth of a conceptually infinite Galton-Watson tree: a frontier
/// vertex samples its children when it first becomes infected.
#[derive(Debug, Clone)]
pub struct GrowthSpec {
    pub offspring: OffspringDist,
    pub fitness: FitnessDist,
    /// Hard cap on realized vertices; exceeding it is an error.
    pub budget: usize,
    /// Vertices at this stored depth are never expanded (the tree `T_L`).
    pub max_depth: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Censor {
    Horizon,
    EventCap,
    /// An observer asked to stop.
    Stopped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observables {
    /// Absorption time, `None` when censored.
    pub extinction_time: Option<f64>,
    pub end_time: f64,
    pub censor: Option<Censor>,
    /// Largest `r(X_t)` seen, with `r` measured from the extra root if any.
    pub max_depth: i32,
    /// Infections of `ρ` after time 0.
    pub root_reinfections: u64,
    /// Vertices infected at least once (the extra root excluded).
    pub touched: usize,
    pub events: u64,
    /// Vertices realized by the end of the trial.
    pub vertices: usize,
    pub root_infected_at_end: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub obs: Observables,
    /// Infected vertices at the end, extra root excluded.
    pub final_infected: Vec<Vertex>,
}

/// `r` offset: distances are measured from `ρ+` when it exists.
pub(crate) fn depth_offset(tree: &WeightedTree) -> i32 {
    i32::from(tree.extra_root().is_some())
}

pub(crate) struct Engine<'a> {
    tree: Cow<'a, WeightedTree>,
    lambda: f64,
    variant: Variant,
    growth: Option<&'a GrowthSpec>,
    infected: Vec<bool>,
    ever: Vec<bool>,
    nbr_sum: Vec<f64>,
    nbr_cnt: Vec<u32>,
    weights: SumTree,
    // infected count per stored depth, extra root excluded
    depth_hist: Vec<u32>,
    deepest: i32,
    offset: i32,
    n_inf: usize,
    touched: usize,
    root_reinfections: u64,
    max_r: i32,
}

impl<'a> Engine<'a> {
    pub fn new(tree: &'a WeightedTree, params: &ProcessParams, growth: Option<&'a GrowthSpec>) -> Result<Self> {
        params.validate_for(tree)?;
        let n = tree.len();
        let mut e = Engine {
            tree: Cow::Borrowed(tree),
            lambda: params.lambda,
            variant: params.variant,
            growth,
            infected: vec![false; n],
            ever: vec![false; n],
            nbr_sum: vec![0.0; n],
            nbr_cnt: vec![0; n],
            weights: SumTree::new(n),
            depth_hist: vec![0; (tree.height().max(0) + 1) as usize],
            deepest: -1,
            offset: depth_offset(tree),
            n_inf: 0,
            touched: 0,
            root_reinfections: 0,
            max_r: 0,
        };
        if let Some(x) = tree.extra_root() {
            e.infected[x] = true;
            e.spread_pressure(x, 1.0);
        }
        Ok(e)
    }

    pub fn tree(&self) -> &WeightedTree {
        &self.tree
    }

    pub fn seed<R: Rng + ?Sized>(&mut self, initial: &[Vertex], rng: &mut R) -> Result<()> {
        for &v in initial {
            if v >= self.tree.len() || Some(v) == self.tree.extra_root() {
                return Err(Error::param(format!("initial vertex {v} is not an ordinary tree vertex")));
            }
            if !self.infected[v] {
                self.infect(v, rng)?;
            }
        }
        self.root_reinfections = 0;
        Ok(())
    }

    #[inline]
    pub fn n_infected(&self) -> usize {
        self.n_inf
    }

    #[inline]
    pub fn is_infected(&self, v: Vertex) -> bool {
        self.infected[v]
    }

    /// `r(x)` of the current configuration.
    #[inline]
    pub fn r(&self) -> i32 {
        if self.n_inf == 0 {
            0
        } else {
            self.deepest + self.offset
        }
    }

    /// Total event rate of the undelayed chain.
    #[inline]
    pub fn plain_rate(&self) -> f64 {
        self.weights.total()
    }

    fn recovery_rate(&self, v: Vertex) -> f64 {
        if Some(v) == self.tree.extra_root() {
            0.0
        } else if self.variant.root_frozen && v == ROOT && self.n_inf != 1 {
            0.0
        } else {
            1.0
        }
    }

    #[inline]
    fn refresh(&mut self, v: Vertex) {
        let w = if self.infected[v] {
            self.recovery_rate(v)
        } else if self.nbr_cnt[v] == 0 {
            0.0
        } else {
            self.lambda * self.tree.fitness(v) * self.nbr_sum[v]
        };
        self.weights.set(v, w);
    }

    fn spread_pressure(&mut self, v: Vertex, sign: f64) {
        let fv = self.tree.fitness(v);
        if let Some(p) = self.tree.parent(v) {
            self.press(p, fv, sign);
        }
        for i in 0..self.tree.children(v).len() {
            let u = self.tree.children(v)[i];
            self.press(u, fv, sign);
        }
    }

    #[inline]
    fn press(&mut self, u: Vertex, fv: f64, sign: f64) {
        if sign > 0.0 {
            self.nbr_cnt[u] += 1;
            self.nbr_sum[u] += fv;
        } else {
            self.nbr_cnt[u] -= 1;
            // reset on zero so rounding residue cannot leave a phantom rate
            self.nbr_sum[u] = if self.nbr_cnt[u] == 0 { 0.0 } else { self.nbr_sum[u] - fv };
        }
        if !self.infected[u] {
            self.refresh(u);
        }
    }

    fn expand<R: Rng + ?Sized>(&mut self, v: Vertex, rng: &mut R) -> Result<()> {
        let Some(g) = self.growth else { return Ok(()) };
        if !self.tree.is_frontier(v) {
            return Ok(());
        }
        if g.max_depth.is_some_and(|d| self.tree.depth(v) >= d) {
            return Ok(());
        }
        let new = self.tree.to_mut().extend_vertex(v, &g.offspring, &g.fitness, rng)?;
        let n = self.tree.len();
        if n > g.budget {
            return Err(Error::VertexBudgetExceeded { budget: g.budget, vertices: n });
        }
        self.infected.resize(n, false);
        self.ever.resize(n, false);
        self.nbr_sum.resize(n, 0.0);
        self.nbr_cnt.resize(n, 0);
        self.weights.reserve(n);
        let need = (self.tree.depth(v) + 2) as usize;
        if self.depth_hist.len() < need {
            self.depth_hist.resize(need, 0);
        }
        let _ = new;
        Ok(())
    }

    pub fn infect<R: Rng + ?Sized>(&mut self, v: Vertex, rng: &mut R) -> Result<()> {
        debug_assert!(!self.infected[v]);
        self.expand(v, rng)?;
        self.infected[v] = true;
        self.n_inf += 1;
        if !self.ever[v] {
            self.ever[v] = true;
            self.touched += 1;
        }
        if v == ROOT {
            self.root_reinfections += 1;
        }
        let d = self.tree.depth(v);
        self.depth_hist[d as usize] += 1;
        self.deepest = self.deepest.max(d);
        self.max_r = self.max_r.max(self.r());
        self.refresh(v);
        self.spread_pressure(v, 1.0);
        self.after_count_change();
        Ok(())
    }

    pub fn recover(&mut self, v: Vertex) {
        debug_assert!(self.infected[v]);
        self.infected[v] = false;
        self.n_inf -= 1;
        let d = self.tree.depth(v);
        self.depth_hist[d as usize] -= 1;
        while self.deepest >= 0 && self.depth_hist[self.deepest as usize] == 0 {
            self.deepest -= 1;
        }
        self.spread_pressure(v, -1.0);
        self.refresh(v);
        self.after_count_change();
    }

    #[inline]
    fn after_count_change(&mut self) {
        if self.variant.root_frozen && self.infected[ROOT] {
            self.refresh(ROOT);
        }
    }

    /// Draw the vertex of the next event, proportional to its weight.
    #[inline]
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> Vertex {
        self.weights.sample(rng.random::<f64>())
    }

    pub fn infected_vertices(&self) -> Vec<Vertex> {
        (0..self.tree.len()).filter(|&v| self.infected[v] && Some(v) != self.tree.extra_root()).collect()
    }

    fn view(&self, time: f64) -> View<'_> {
        View { tree: &self.tree, infected: &self.infected, n_infected: self.n_inf, r: self.r(), time }
    }
}

/// Simulate from `initial` until absorption or the horizon.
///
/// Absorption is the all-healthy state, or the state where only `ρ+` is
/// infected for the extra-root variant (checked after the first event, so
/// an empty start under that variant measures one excursion from 0).
pub fn simulate<R: Rng + ?Sized>(
    tree: &WeightedTree,
    params: &ProcessParams,
    initial: &[Vertex],
    rng: &mut R,
    growth: Option<&GrowthSpec>,
) -> Result<Outcome> {
    simulate_observed(tree, params, initial, rng, growth, &mut NoObserver)
}

/// Same as [`simulate`] for the delayed variant. The delay is realized by
/// running the embedded jump chain of the plain process and stretching each
/// holding time by `θ^{-r(x)}`; this is the only way the engine implements
/// the delay.
pub fn simulate_delayed_by_rescaling<R: Rng + ?Sized>(
    tree: &WeightedTree,
    params: &ProcessParams,
    initial: &[Vertex],
    rng: &mut R,
) -> Result<Outcome> {
    if params.variant.delay.is_none() {
        return Err(Error::param("delayed simulation needs theta"));
    }
    simulate(tree, params, initial, rng, None)
}

pub fn simulate_observed<R: Rng + ?Sized, O: Observer + ?Sized>(
    tree: &WeightedTree,
    params: &ProcessParams,
    initial: &[Vertex],
    rng: &mut R,
    growth: Option<&GrowthSpec>,
    observer: &mut O,
) -> Result<Outcome> {
    if initial.is_empty() && !params.variant.extra_root {
        return Err(Error::param("initial set must be nonempty without a permanent extra root"));
    }
    let mut e = Engine::new(tree, params, growth)?;
    e.seed(initial, rng)?;
    let mut t = 0.0;
    let mut events = 0u64;
    let mut censor = None;
    let mut extinct = None;
    let stop = observer.on_start(&e.view(0.0));
    if stop.is_break() {
        censor = Some(Censor::Stopped);
    }
    while censor.is_none() {
        if e.n_infected() == 0 && (events > 0 || !params.variant.extra_root) {
            extinct = Some(t);
            break;
        }
        // θ^{r} scales every rate, so it only stretches the holding time
        let scale = params.variant.delay.map_or(1.0, |theta| theta.powi(e.r()));
        let total = e.plain_rate();
        let dt = exp(rng, total) / scale;
        if t + dt > params.horizon.time {
            t = params.horizon.time;
            censor = Some(Censor::Horizon);
            break;
        }
        if events >= params.horizon.max_events {
            censor = Some(Censor::EventCap);
            break;
        }
        t += dt;
        events += 1;
        let v = e.pick(rng);
        let kind = if e.is_infected(v) {
            e.recover(v);
            EventKind::Recover
        } else {
            e.infect(v, rng)?;
            EventKind::Infect
        };
        let ev = Event { time: t, kind, vertex: v };
        if let ControlFlow::Break(()) = observer.on_event(&ev, &e.view(t)) {
            censor = Some(Censor::Stopped);
        }
    }
    if let Some(c) = censor {
        if c != Censor::Stopped {
            observer.on_censor(t, &e.view(t));
        }
    }
    let obs = Observables {
        extinction_time: extinct,
        end_time: t,
        censor,
        max_depth: e.max_r,
        root_reinfections: e.root_reinfections,
        touched: e.touched,
        events,
        vertices: e.tree().len(),
        root_infected_at_end: e.is_infected(ROOT),
    };
    Ok(Outcome { obs, final_infected: e.infected_vertices() })
}
