//! Monotone couplings through one shared graphical representation.
//!
//! Levels `0..K` are ordered from smallest to largest process. The top level
//! drives: every vertex infected there carries a rate-1 recovery clock and
//! arrow clocks towards each neighbour at the top rate `λ_top F_u F_v`. An
//! arrow is used by level `j` when its uniform mark `U` satisfies
//! `U · rate_top ≤ rate_j`, which thins the top clock to level `j`'s rate.
//! Recovery clocks are shared by all levels, except where a level ignores
//! recoveries at a vertex over a time set. Membership is stored as one
//! bitmask per vertex (bit `j` for level `j`), so the subset relation is a
//! constant-time check at every event.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::exp;
use crate::sim::{Censor, GrowthSpec, Horizon, SumTree};
use crate::tree::{Vertex, WeightedTree, ROOT};

pub const MAX_LEVELS: usize = 64;

/// A time set given as a finite union of closed intervals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalSet(Vec<(f64, f64)>);

impl IntervalSet {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.iter().any(|&(a, b)| a.is_nan() || b.is_nan() || a > b) {
            return Err(Error::param("intervals need lo <= hi"));
        }
        Ok(IntervalSet(intervals))
    }

    pub fn everything() -> Self {
        IntervalSet(vec![(f64::NEG_INFINITY, f64::INFINITY)])
    }

    pub fn contains(&self, t: f64) -> bool {
        self.0.iter().any(|&(a, b)| a <= t && t <= b)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IgnoreRecoveries {
    pub vertex: Vertex,
    pub times: IntervalSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub lambda: f64,
    /// Per-vertex fitness for this level; `None` uses the tree's.
    pub fitness: Option<Vec<f64>>,
    pub ignore: Option<IgnoreRecoveries>,
}

impl Level {
    pub fn new(lambda: f64) -> Self {
        Level { lambda, fitness: None, ignore: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelObs {
    pub extinction_time: Option<f64>,
    pub infected_at_end: usize,
    pub root_infected_at_end: bool,
    pub root_recoveries: u64,
    pub touched: usize,
    /// Largest stored depth ever infected in this level.
    pub max_depth: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOutcome {
    pub levels: Vec<LevelObs>,
    /// Events after which some vertex was infected in a level but healthy
    /// in the level above.
    pub violations: u64,
    pub end_time: f64,
    pub censor: Option<Censor>,
    pub events: u64,
    /// Set when lazy growth ran out of budget; the trial stops there.
    pub budget_exceeded: bool,
}

struct Coupled<'a> {
    tree: std::borrow::Cow<'a, WeightedTree>,
    levels: &'a [Level],
    growth: Option<&'a GrowthSpec>,
    top: usize,
    full: u64,
    mask: Vec<u64>,
    ever: Vec<u64>,
    count: Vec<usize>,
    touched: Vec<usize>,
    max_depth: Vec<i32>,
    root_recoveries: Vec<u64>,
    extinct: Vec<Option<f64>>,
    weights: SumTree,
    violations: u64,
}

impl<'a> Coupled<'a> {
    fn fit(&self, j: usize, v: Vertex) -> f64 {
        match &self.levels[j].fitness {
            Some(f) => f[v],
            None => self.tree.fitness(v),
        }
    }

    fn edge_rate(&self, j: usize, u: Vertex, v: Vertex) -> f64 {
        self.levels[j].lambda * self.fit(j, u) * self.fit(j, v)
    }

    fn out_weight(&self, u: Vertex) -> f64 {
        if self.mask[u] >> self.top & 1 == 0 {
            return 0.0;
        }
        let s: f64 = self.tree.neighbours(u).map(|v| self.fit(self.top, v)).sum();
        1.0 + self.levels[self.top].lambda * self.fit(self.top, u) * s
    }

    fn ensure_len(&mut self) {
        let n = self.tree.len();
        self.mask.resize(n, 0);
        self.ever.resize(n, 0);
        self.weights.reserve(n);
    }

    fn set_bits<R: Rng + ?Sized>(&mut self, v: Vertex, bits: u64, rng: &mut R) -> Result<()> {
        let new = bits & !self.mask[v];
        if new == 0 {
            return Ok(());
        }
        if new >> self.top & 1 == 1 {
            if let Some(g) = self.growth {
                if self.tree.is_frontier(v) && !g.max_depth.is_some_and(|d| self.tree.depth(v) >= d) {
                    self.tree.to_mut().extend_vertex(v, &g.offspring, &g.fitness, rng)?;
                    if self.tree.len() > g.budget {
                        return Err(Error::VertexBudgetExceeded { budget: g.budget, vertices: self.tree.len() });
                    }
                    self.ensure_len();
                }
            }
        }
        self.mask[v] |= new;
        let fresh = new & !self.ever[v];
        self.ever[v] |= new;
        let d = self.tree.depth(v);
        for j in 0..self.levels.len() {
            if new >> j & 1 == 1 {
                self.count[j] += 1;
                self.max_depth[j] = self.max_depth[j].max(d);
                if fresh >> j & 1 == 1 {
                    self.touched[j] += 1;
                }
            }
        }
        if new >> self.top & 1 == 1 {
            let w = self.out_weight(v);
            self.weights.set(v, w);
        }
        Ok(())
    }

    fn clear_bits(&mut self, v: Vertex, bits: u64, t: f64) {
        let gone = bits & self.mask[v];
        self.mask[v] &= !gone;
        for j in 0..self.levels.len() {
            if gone >> j & 1 == 1 {
                self.count[j] -= 1;
                if v == ROOT {
                    self.root_recoveries[j] += 1;
                }
                if self.count[j] == 0 && self.extinct[j].is_none() {
                    self.extinct[j] = Some(t);
                }
            }
        }
        if gone >> self.top & 1 == 1 {
            self.weights.set(v, 0.0);
        }
    }

    fn check(&mut self, v: Vertex) {
        let m = self.mask[v];
        // upward closed: bit j set implies bit j+1 set
        if (m << 1) & self.full & !m != 0 {
            self.violations += 1;
        }
    }
}

fn validate_levels(tree: &WeightedTree, levels: &[Level], growth: Option<&GrowthSpec>) -> Result<()> {
    if levels.is_empty() || levels.len() > MAX_LEVELS {
        return Err(Error::Coupling(format!("need 1..={MAX_LEVELS} levels")));
    }
    if tree.extra_root().is_some() {
        return Err(Error::Coupling("couplings run the plain process; drop the extra root".into()));
    }
    for l in levels {
        if !(l.lambda.is_finite() && l.lambda > 0.0) {
            return Err(Error::param(format!("lambda must be positive, got {}", l.lambda)));
        }
        if let Some(f) = &l.fitness {
            if growth.is_some() {
                return Err(Error::Coupling("per-level fitness cannot be combined with lazy growth".into()));
            }
            if f.len() != tree.len() || f.iter().any(|&x| !(x.is_finite() && x >= 1.0)) {
                return Err(Error::param("level fitness must cover every vertex with values >= 1"));
            }
        }
        if let Some(ig) = &l.ignore {
            if ig.vertex >= tree.len() {
                return Err(Error::param("ignored vertex is not in the tree"));
            }
        }
    }
    if growth.is_some() {
        // shared fitness: dominance reduces to ordered lambdas
        if levels.windows(2).any(|w| w[0].lambda > w[1].lambda) {
            return Err(Error::Coupling("levels must have nondecreasing lambda".into()));
        }
        return Ok(());
    }
    let fit = |l: &Level, v: Vertex| l.fitness.as_ref().map_or(tree.fitness(v), |f| f[v]);
    for v in 1..tree.len() {
        let u = tree.parent(v).expect("non-root vertex");
        for w in levels.windows(2) {
            let lo = w[0].lambda * fit(&w[0], u) * fit(&w[0], v);
            let hi = w[1].lambda * fit(&w[1], u) * fit(&w[1], v);
            if lo > hi * (1.0 + 1e-12) {
                return Err(Error::Coupling(format!("edge ({u},{v}) has rate {lo} above the next level's {hi}")));
            }
        }
    }
    Ok(())
}

/// Run all levels from the same initial set on one graphical
/// representation. Lazy growth is driven by the top level.
pub fn simulate_coupled<R: Rng + ?Sized>(
    tree: &WeightedTree,
    levels: &[Level],
    initial: &[Vertex],
    horizon: Horizon,
    rng: &mut R,
    growth: Option<&GrowthSpec>,
) -> Result<CoupledOutcome> {
    validate_levels(tree, levels, growth)?;
    if initial.is_empty() || initial.iter().any(|&v| v >= tree.len()) {
        return Err(Error::param("initial set must be a nonempty set of tree vertices"));
    }
    let k = levels.len();
    let n = tree.len();
    let mut c = Coupled {
        tree: std::borrow::Cow::Borrowed(tree),
        levels,
        growth,
        top: k - 1,
        full: if k == 64 { u64::MAX } else { (1u64 << k) - 1 },
        mask: vec![0; n],
        ever: vec![0; n],
        count: vec![0; k],
        touched: vec![0; k],
        max_depth: vec![0; k],
        root_recoveries: vec![0; k],
        extinct: vec![None; k],
        weights: SumTree::new(n),
        violations: 0,
    };
    let mut budget_exceeded = false;
    for &v in initial {
        let full = c.full;
        match c.set_bits(v, full, rng) {
            Ok(()) => {}
            Err(Error::VertexBudgetExceeded { .. }) => budget_exceeded = true,
            Err(e) => return Err(e),
        }
    }
    let mut t = 0.0;
    let mut events = 0u64;
    let mut censor = None;
    while !budget_exceeded {
        if c.count[c.top] == 0 {
            break;
        }
        let total = c.weights.total();
        let dt = exp(rng, total);
        if t + dt > horizon.time {
            t = horizon.time;
            censor = Some(Censor::Horizon);
            break;
        }
        if events >= horizon.max_events {
            censor = Some(Censor::EventCap);
            break;
        }
        t += dt;
        events += 1;
        let u = c.weights.sample(rng.random::<f64>());
        let w = c.weights_at(u);
        let x = rng.random::<f64>() * w;
        if x < 1.0 {
            // recovery clock at u
            let mut bits = c.mask[u];
            for (j, l) in levels.iter().enumerate() {
                if let Some(ig) = &l.ignore {
                    if ig.vertex == u && ig.times.contains(t) {
                        bits &= !(1 << j);
                    }
                }
            }
            c.clear_bits(u, bits, t);
            c.check(u);
        } else {
            // arrow u -> v, v chosen proportionally to its top fitness
            let target = (x - 1.0) / (levels[c.top].lambda * c.fit(c.top, u));
            let mut acc = 0.0;
            let mut v = usize::MAX;
            let mut last = usize::MAX;
            for y in c.tree.neighbours(u) {
                acc += c.fit(c.top, y);
                last = y;
                if target < acc {
                    v = y;
                    break;
                }
            }
            if v == usize::MAX {
                v = last;
            }
            let mark: f64 = rng.random();
            let top_rate = c.edge_rate(c.top, u, v);
            let mut bits = 0u64;
            for j in 0..k {
                if c.mask[u] >> j & 1 == 1 && (j == c.top || mark * top_rate <= c.edge_rate(j, u, v)) {
                    bits |= 1 << j;
                }
            }
            match c.set_bits(v, bits, rng) {
                Ok(()) => {}
                Err(Error::VertexBudgetExceeded { .. }) => budget_exceeded = true,
                Err(e) => return Err(e),
            }
            c.check(v);
        }
    }
    let levels_out = (0..k)
        .map(|j| LevelObs {
            extinction_time: c.extinct[j],
            infected_at_end: c.count[j],
            root_infected_at_end: c.mask[ROOT] >> j & 1 == 1,
            root_recoveries: c.root_recoveries[j],
            touched: c.touched[j],
            max_depth: c.max_depth[j],
        })
        .collect();
    Ok(CoupledOutcome { levels: levels_out, violations: c.violations, end_time: t, censor, events, budget_exceeded })
}

impl Coupled<'_> {
    fn weights_at(&self, u: Vertex) -> f64 {
        self.out_weight(u)
    }
}

/// Two-level monotone coupling: `low` below `high`, both on `tree`'s
/// structure with their own fitness vectors.
#[allow(clippy::too_many_arguments)]
pub fn couple_monotone<R: Rng + ?Sized>(
    tree: &WeightedTree,
    lambda_low: f64,
    lambda_high: f64,
    fitness_low: &[f64],
    fitness_high: &[f64],
    initial: &[Vertex],
    horizon: Horizon,
    rng: &mut R,
) -> Result<CoupledOutcome> {
    let levels = [
        Level { lambda: lambda_low, fitness: Some(fitness_low.to_vec()), ignore: None },
        Level { lambda: lambda_high, fitness: Some(fitness_high.to_vec()), ignore: None },
    ];
    simulate_coupled(tree, &levels, initial, horizon, rng, None)
}

/// Base process (level 0) against the same process ignoring recoveries at
/// one vertex over a time set (level 1).
pub fn couple_ignore_recoveries<R: Rng + ?Sized>(
    tree: &WeightedTree,
    lambda: f64,
    initial: &[Vertex],
    ignored: IgnoreRecoveries,
    horizon: Horizon,
    rng: &mut R,
) -> Result<CoupledOutcome> {
    let levels = [Level::new(lambda), Level { lambda, fitness: None, ignore: Some(ignored) }];
    simulate_coupled(tree, &levels, initial, horizon, rng, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Percolation {
    /// Component of `ρ` for each level.
    pub components: Vec<Vec<Vertex>>,
    pub violations: u64,
    /// Realized tree (grown lazily when a growth spec is given).
    pub tree: WeightedTree,
}

/// Component of `ρ` in the percolation graph `G_{t0}`: the edge `(u,v)` is
/// open when its Poisson clock rings in `[0, t0]`, with probability
/// `1 − exp(−λ F_u F_v t0)`.
pub fn percolation_component<R: Rng + ?Sized>(
    tree: &WeightedTree,
    lambda: f64,
    t0: f64,
    rng: &mut R,
    growth: Option<&GrowthSpec>,
) -> Result<Vec<Vertex>> {
    let p = coupled_percolation(tree, lambda, t0, &[1.0], rng, growth)?;
    Ok(p.components.into_iter().next().expect("one level"))
}

/// Percolation components for fitness scaled by each entry of `scales`
/// (ascending, all `>= 1`), sharing one uniform per edge.
pub fn coupled_percolation<R: Rng + ?Sized>(
    tree: &WeightedTree,
    lambda: f64,
    t0: f64,
    scales: &[f64],
    rng: &mut R,
    growth: Option<&GrowthSpec>,
) -> Result<Percolation> {
    if !(t0 > 0.0 && t0.is_finite()) {
        return Err(Error::param(format!("t0 must be positive, got {t0}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param(format!("lambda must be positive, got {lambda}")));
    }
    if scales.is_empty() || scales.len() > MAX_LEVELS || scales.iter().any(|&s| !(s >= 1.0 && s.is_finite())) {
        return Err(Error::param("fitness scales must be >= 1"));
    }
    if scales.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Coupling("fitness scales must be nondecreasing".into()));
    }
    let k = scales.len();
    let top = k - 1;
    let mut tree = tree.clone();
    let mut mask: Vec<u64> = vec![0; tree.len()];
    mask[ROOT] = if k == 64 { u64::MAX } else { (1 << k) - 1 };
    let full = mask[ROOT];
    let mut violations = 0;
    let mut queue = VecDeque::from([ROOT]);
    while let Some(u) = queue.pop_front() {
        if let Some(g) = growth {
            if tree.is_frontier(u) && !g.max_depth.is_some_and(|d| tree.depth(u) >= d) {
                tree.extend_vertex(u, &g.offspring, &g.fitness, rng)?;
                if tree.len() > g.budget {
                    return Err(Error::VertexBudgetExceeded { budget: g.budget, vertices: tree.len() });
                }
                mask.resize(tree.len(), 0);
            }
        }
        for i in 0..tree.children(u).len() {
            let v = tree.children(u)[i];
            let base = lambda * tree.fitness(u) * tree.fitness(v) * t0;
            let mark: f64 = rng.random();
            let mut bits = 0u64;
            for (j, s) in scales.iter().enumerate() {
                // 1 − e^{−x} computed without cancellation
                let p = -(-base * s * s).exp_m1();
                if mask[u] >> j & 1 == 1 && mark < p {
                    bits |= 1 << j;
                }
            }
            mask[v] = bits;
            if (bits << 1) & full & !bits != 0 {
                violations += 1;
            }
            if bits >> top & 1 == 1 {
                queue.push_back(v);
            }
        }
    }
    let components = (0..k).map(|j| (0..tree.len()).filter(|&v| mask[v] >> j & 1 == 1).collect()).collect();
    Ok(Percolation { components, violations, tree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tree::make_star;

    #[test]
    fn identical_levels_agree() {
        let t = make_star(4, 2.0, &[1.0]).unwrap();
        let f = t.fitness_slice().to_vec();
        for i in 0..200 {
            let mut rng = stream(1, i);
            let o = couple_monotone(&t, 1.0, 1.0, &f, &f, &[0], Horizon::default(), &mut rng).unwrap();
            assert_eq!(o.violations, 0);
            assert_eq!(o.levels[0], o.levels[1]);
        }
    }

    #[test]
    fn monotone_lambda_on_star() {
        let t = make_star(4, 1.0, &[1.0]).unwrap();
        let f = t.fitness_slice().to_vec();
        for i in 0..2000 {
            let mut rng = stream(2, i);
            let o = couple_monotone(&t, 0.5, 1.0, &f, &f, &[0], Horizon::default(), &mut rng).unwrap();
            assert_eq!(o.violations, 0);
            assert!(o.levels[0].extinction_time.unwrap() <= o.levels[1].extinction_time.unwrap());
        }
    }

    #[test]
    fn dominance_is_checked() {
        let t = make_star(2, 1.0, &[1.0]).unwrap();
        let f = t.fitness_slice().to_vec();
        let mut rng = stream(3, 0);
        assert!(couple_monotone(&t, 2.0, 1.0, &f, &f, &[0], Horizon::default(), &mut rng).is_err());
        let g = vec![1.0, 3.0, 1.0];
        assert!(couple_monotone(&t, 1.0, 1.0, &g, &f, &[0], Horizon::default(), &mut rng).is_err());
    }

    #[test]
    fn ignoring_all_root_recoveries() {
        let t = make_star(2, 1.0, &[1.0]).unwrap();
        let ig = IgnoreRecoveries { vertex: ROOT, times: IntervalSet::everything() };
        for i in 0..200 {
            let mut rng = stream(4, i);
            let o = couple_ignore_recoveries(&t, 1.0, &[0], ig.clone(), Horizon::time(20.0), &mut rng).unwrap();
            assert_eq!(o.violations, 0);
            assert_eq!(o.levels[1].root_recoveries, 0);
            assert!(o.levels[1].root_infected_at_end);
        }
    }

    #[test]
    fn empty_ignore_set_is_identity() {
        let t = make_star(3, 1.5, &[1.0]).unwrap();
        let ig = IgnoreRecoveries { vertex: ROOT, times: IntervalSet::default() };
        for i in 0..200 {
            let mut rng = stream(5, i);
            let o = couple_ignore_recoveries(&t, 1.0, &[0], ig.clone(), Horizon::default(), &mut rng).unwrap();
            assert_eq!(o.levels[0], o.levels[1]);
        }
    }

    #[test]
    fn tiny_t0_isolates_root() {
        let t = crate::tree::generate_tree(
            &crate::dist::OffspringDist::deterministic(2),
            &crate::dist::FitnessDist::ConstantOne,
            10,
            5000,
            &mut stream(6, 0),
        )
        .unwrap();
        let mut singles = 0;
        for i in 0..10_000 {
            let c = percolation_component(&t, 1.0, 1e-12, &mut stream(6, i + 1), None).unwrap();
            singles += usize::from(c.len() == 1);
        }
        assert!(singles >= 9990);
    }

    #[test]
    fn doubled_fitness_percolates_further() {
        let t = make_star(30, 1.0, &[1.0]).unwrap();
        for i in 0..500 {
            let p = coupled_percolation(&t, 1.0, 0.1, &[1.0, 2.0], &mut stream(7, i), None).unwrap();
            assert_eq!(p.violations, 0);
            assert!(p.components[0].iter().all(|v| p.components[1].contains(v)));
        }
    }
}
