//! Exact generator of the contact process on small trees.
//!
//! States are bitmasks: bit `i` set means vertex `i` is infected. The extra
//! root is never encoded because it is always infected; it enters only as a
//! pinned neighbour of `ρ` with a given fitness (1 for `ρ+`, or `F_ρ` when a
//! subtree hangs below a permanently infected `ρ`). All solves are dense
//! state eliminations on the relevant reachable set.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::sim::ProcessParams;
use crate::tree::{WeightedTree, ROOT};

pub const MAX_VERTICES: usize = 20;
pub const MAX_DENSE_STATES: usize = 1 << 14;

pub type State = u32;

/// Sparse generator in row-compressed form.
#[derive(Debug, Clone)]
pub struct Generator {
    bits: usize,
    row_ptr: Vec<usize>,
    col: Vec<State>,
    rate: Vec<f64>,
    exit: Vec<f64>,
    // r-depth of each encoded vertex
    vertex_r: Vec<i32>,
    pinned: bool,
    delay: Option<f64>,
}

/// One connected piece of the encoded graph: a tree, optionally hanging
/// below a permanently infected parent of fitness `pinned`.
struct Piece<'a> {
    tree: &'a WeightedTree,
    pinned: Option<f64>,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("lambda must be positive and finite, got {lambda}")))
    }
}

fn check_theta(theta: Option<f64>) -> Result<()> {
    match theta {
        Some(t) if !(t > 0.0 && t < 1.0) => Err(Error::param(format!("theta must lie in (0,1), got {t}"))),
        _ => Ok(()),
    }
}

fn build(pieces: &[Piece<'_>], lambda: f64, root_frozen: bool, delay: Option<f64>) -> Result<Generator> {
    check_lambda(lambda)?;
    check_theta(delay)?;
    // flatten the pieces
    let mut fitness = Vec::new();
    let mut nbrs: Vec<Vec<usize>> = Vec::new();
    let mut pinned_pressure = Vec::new();
    let mut vertex_r = Vec::new();
    let any_pinned = pieces.iter().any(|p| p.pinned.is_some());
    for piece in pieces {
        let t = piece.tree;
        if t.extra_root().is_some() {
            return Err(Error::param("pieces must not carry their own extra root"));
        }
        let base = fitness.len();
        let offset = i32::from(any_pinned);
        for v in 0..t.len() {
            fitness.push(t.fitness(v));
            nbrs.push(t.neighbours(v).map(|u| u + base).collect());
            pinned_pressure.push(if v == ROOT { piece.pinned.unwrap_or(0.0) } else { 0.0 });
            vertex_r.push(t.depth(v) + offset);
        }
    }
    let bits = fitness.len();
    if bits > MAX_VERTICES {
        return Err(Error::TooManyVertices { vertices: bits, limit: MAX_VERTICES });
    }
    let n = 1usize << bits;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col = Vec::new();
    let mut rate = Vec::new();
    let mut exit = Vec::with_capacity(n);
    row_ptr.push(0);
    for x in 0..n as State {
        let scale = delay.map_or(1.0, |theta| theta.powi(r_of(&vertex_r, x)));
        let mut out = 0.0;
        for v in 0..bits {
            let bit = 1 << v;
            let q = if x & bit != 0 {
                if root_frozen && v == ROOT && x != 1 {
                    0.0
                } else {
                    1.0
                }
            } else {
                let mut s = pinned_pressure[v];
                for &u in &nbrs[v] {
                    if x & (1 << u) != 0 {
                        s += fitness[u];
                    }
                }
                lambda * fitness[v] * s
            };
            if q > 0.0 {
                col.push(x ^ bit);
                rate.push(q * scale);
                out += q * scale;
            }
        }
        exit.push(out);
        row_ptr.push(col.len());
    }
    Ok(Generator { bits, row_ptr, col, rate, exit, vertex_r, pinned: any_pinned, delay })
}

fn r_of(vertex_r: &[i32], x: State) -> i32 {
    let mut r = 0;
    let mut y = x;
    while y != 0 {
        let v = y.trailing_zeros() as usize;
        r = r.max(vertex_r[v]);
        y &= y - 1;
    }
    r
}

/// Generator of the process described by `params` on `tree`. A tree with an
/// extra root needs the extra-root variant; `ρ+` is then pinned with
/// fitness 1. The horizon in `params` is ignored.
pub fn build_generator(tree: &WeightedTree, params: &ProcessParams) -> Result<Generator> {
    params.validate()?;
    match (tree.extra_root(), params.variant.extra_root) {
        (Some(_), true) => {
            let plain = without_extra_root(tree);
            build(&[Piece { tree: &plain, pinned: Some(1.0) }], params.lambda, params.variant.root_frozen, params.variant.delay)
        }
        (None, false) => build(&[Piece { tree, pinned: None }], params.lambda, params.variant.root_frozen, params.variant.delay),
        _ => Err(Error::param("the extra-root variant and a tree with an extra root must be used together")),
    }
}

// ρ+ carries the last id, so dropping it keeps every other id (and hence
// every encoded bit) in place.
fn without_extra_root(tree: &WeightedTree) -> WeightedTree {
    let m = tree.len() - 1;
    let parent: Vec<Option<usize>> = (0..m).map(|v| if v == ROOT { None } else { tree.parent(v) }).collect();
    let fitness = tree.fitness_slice()[..m].to_vec();
    WeightedTree::from_parents(&parent, fitness).expect("ids below the extra root are parent-ordered")
}

/// Generator of `tree` hanging below a permanently infected parent of
/// fitness `phi` (the chain `CP_ρ(T_v^+)` when `phi = F_ρ`).
pub fn build_pinned_generator(tree: &WeightedTree, lambda: f64, phi: f64, root_frozen: bool, delay: Option<f64>) -> Result<Generator> {
    if !(phi.is_finite() && phi >= 1.0) {
        return Err(Error::param(format!("pinned fitness must be >= 1, got {phi}")));
    }
    build(&[Piece { tree, pinned: Some(phi) }], lambda, root_frozen, delay)
}

/// Product chain: independent subtrees sharing one permanently infected
/// parent of fitness `phi`. Bits are laid out subtree after subtree.
pub fn build_forest_generator(subtrees: &[WeightedTree], lambda: f64, phi: f64, delay: Option<f64>) -> Result<Generator> {
    if !(phi.is_finite() && phi >= 1.0) {
        return Err(Error::param(format!("pinned fitness must be >= 1, got {phi}")));
    }
    let pieces: Vec<Piece<'_>> = subtrees.iter().map(|t| Piece { tree: t, pinned: Some(phi) }).collect();
    build(&pieces, lambda, false, delay)
}

impl Generator {
    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn n_states(&self) -> usize {
        1 << self.bits
    }

    pub fn delay(&self) -> Option<f64> {
        self.delay
    }

    /// Off-diagonal transitions out of `x`.
    pub fn row(&self, x: State) -> impl Iterator<Item = (State, f64)> + '_ {
        let (a, b) = (self.row_ptr[x as usize], self.row_ptr[x as usize + 1]);
        self.col[a..b].iter().copied().zip(self.rate[a..b].iter().copied())
    }

    pub fn rate(&self, from: State, to: State) -> f64 {
        self.row(from).find(|&(y, _)| y == to).map_or(0.0, |(_, q)| q)
    }

    /// Total rate of leaving `x` (minus the diagonal entry).
    pub fn exit_rate(&self, x: State) -> f64 {
        self.exit[x as usize]
    }

    /// `r(x)`: the largest distance from the pinned parent (or from `ρ` when
    /// nothing is pinned) over infected vertices; `r(0) = 0`.
    pub fn r(&self, x: State) -> i32 {
        r_of(&self.vertex_r, x)
    }

    pub fn depths(&self) -> Vec<i32> {
        (0..self.n_states() as State).map(|x| self.r(x)).collect()
    }

    /// Largest relative row-sum defect after filling the diagonal.
    pub fn row_sum_defect(&self) -> f64 {
        (0..self.n_states() as State)
            .map(|x| {
                let s: f64 = self.row(x).map(|(_, q)| q).sum();
                let d = self.exit[x as usize];
                if d == 0.0 {
                    s.abs()
                } else {
                    ((s - d) / d).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    fn forward_reach(&self, start: State, stop: &dyn Fn(State) -> bool) -> Vec<State> {
        let mut seen = vec![false; self.n_states()];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start as usize] = true;
        while let Some(x) = queue.pop_front() {
            order.push(x);
            if stop(x) {
                continue;
            }
            for (y, _) in self.row(x) {
                if !seen[y as usize] {
                    seen[y as usize] = true;
                    queue.push_back(y);
                }
            }
        }
        order
    }

    /// States of `set` from which some state satisfying `goal` is reachable
    /// while staying inside `set` until then.
    fn can_reach(&self, set: &[State], goal: &dyn Fn(State) -> bool) -> Vec<bool> {
        let mut index = vec![usize::MAX; self.n_states()];
        for (i, &x) in set.iter().enumerate() {
            index[x as usize] = i;
        }
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); set.len()];
        let mut ok = vec![false; set.len()];
        let mut queue = VecDeque::new();
        for (i, &x) in set.iter().enumerate() {
            for (y, _) in self.row(x) {
                if goal(y) {
                    if !ok[i] {
                        ok[i] = true;
                        queue.push_back(i);
                    }
                } else if index[y as usize] != usize::MAX {
                    rev[index[y as usize]].push(i);
                }
            }
        }
        while let Some(j) = queue.pop_front() {
            for &i in &rev[j] {
                if !ok[i] {
                    ok[i] = true;
                    queue.push_back(i);
                }
            }
        }
        ok
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    /// Indexed by state; zero off the recurrent class.
    pub pi: Vec<f64>,
    /// `‖πQ‖_∞`.
    pub residual: f64,
}

fn dense_guard(states: usize) -> Result<()> {
    if states > MAX_DENSE_STATES {
        Err(Error::StateSpaceTooLarge { states, limit: MAX_DENSE_STATES })
    } else {
        Ok(())
    }
}

/// Dense off-diagonal rates among `set`, plus each state's rate of leaving
/// `set`. Self-transitions do not exist in a generator.
struct Block {
    n: usize,
    rate: Vec<f64>,
    out: Vec<f64>,
}

impl Block {
    fn new(gen: &Generator, set: &[State]) -> (Self, Vec<usize>) {
        let mut index = vec![usize::MAX; gen.n_states()];
        for (i, &x) in set.iter().enumerate() {
            index[x as usize] = i;
        }
        let n = set.len();
        let mut b = Block { n, rate: vec![0.0; n * n], out: vec![0.0; n] };
        for (i, &x) in set.iter().enumerate() {
            for (y, q) in gen.row(x) {
                match index[y as usize] {
                    usize::MAX => b.out[i] += q,
                    j => b.rate[i * n + j] += q,
                }
            }
        }
        (b, index)
    }

    /// Exit rate of `k` towards states `< k` and outside, summed rather
    /// than taken from the diagonal, so no cancellation occurs.
    fn exit_below(&self, k: usize) -> f64 {
        self.out[k] + self.rate[k * self.n..k * self.n + k].iter().sum::<f64>()
    }

    /// Censor the chain on `{0, ..., k−1}` by eliminating `k`. `carry` holds
    /// per-state quantities that flow along with the rates.
    fn eliminate(&mut self, k: usize, carry: &mut [f64]) -> f64 {
        let n = self.n;
        let qk = self.exit_below(k);
        for i in 0..k {
            let rik = self.rate[i * n + k];
            if rik == 0.0 {
                continue;
            }
            let f = rik / qk;
            for j in 0..k {
                if j != i {
                    self.rate[i * n + j] += f * self.rate[k * n + j];
                }
            }
            self.out[i] += f * self.out[k];
            carry[i] += f * carry[k];
        }
        qk
    }
}

/// Solve `q_i h_i = c_i + Σ_j r_ij h_j` for the state at position 0 of
/// `set` by state elimination (Grassmann-Taksar-Heyman style). All updates
/// add nonnegative terms, which keeps full relative accuracy even when the
/// answer is astronomically large.
fn eliminate_to_first(gen: &Generator, set: &[State], mut c: Vec<f64>) -> Result<f64> {
    let (mut b, _) = Block::new(gen, set);
    for k in (1..b.n).rev() {
        if b.eliminate(k, &mut c) <= 0.0 {
            return Err(Error::Singular);
        }
    }
    if b.out[0] <= 0.0 {
        return Err(Error::Singular);
    }
    Ok(c[0] / b.out[0])
}

/// Solve `πQ = 0`, `Σπ = 1` on the class reachable from state 0. Needs a
/// pinned parent; without one state 0 is absorbing. Uses the GTH
/// elimination, which is free of subtractions.
pub fn stationary_distribution(gen: &Generator) -> Result<Stationary> {
    if !gen.pinned || gen.exit_rate(0) == 0.0 {
        return Err(Error::Reducible { state: 0 });
    }
    let class = gen.forward_reach(0, &|_| false);
    dense_guard(class.len())?;
    let back = gen.can_reach(&class, &|y| y == 0);
    for (i, &x) in class.iter().enumerate() {
        if x != 0 && !back[i] {
            return Err(Error::Reducible { state: x });
        }
    }
    let (mut b, _) = Block::new(gen, &class);
    let n = b.n;
    let mut q = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for k in (1..n).rev() {
        q[k] = b.eliminate(k, &mut scratch);
        if q[k] <= 0.0 {
            return Err(Error::Singular);
        }
    }
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    for k in 1..n {
        x[k] = (0..k).map(|i| x[i] * b.rate[i * n + k]).sum::<f64>() / q[k];
    }
    let total: f64 = x.iter().sum();
    let mut pi = vec![0.0; gen.n_states()];
    for (i, &s) in class.iter().enumerate() {
        pi[s as usize] = x[i] / total;
    }
    let residual = stationary_residual(gen, &pi);
    Ok(Stationary { pi, residual })
}

/// `‖πQ‖_∞` for an arbitrary vector.
pub fn stationary_residual(gen: &Generator, pi: &[f64]) -> f64 {
    let mut flow = vec![0.0; gen.n_states()];
    for x in 0..gen.n_states() as State {
        let p = pi[x as usize];
        if p == 0.0 {
            continue;
        }
        flow[x as usize] -= p * gen.exit_rate(x);
        for (y, q) in gen.row(x) {
            flow[y as usize] += p * q;
        }
    }
    flow.iter().fold(0.0, |m, f| m.max(f.abs()))
}

// `start` first, then the rest of the reachable transient states.
fn transient_set(gen: &Generator, start: State, stop: &dyn Fn(State) -> bool) -> Result<Vec<State>> {
    let set: Vec<State> = gen.forward_reach(start, stop).into_iter().filter(|&x| !stop(x)).collect();
    dense_guard(set.len())?;
    if gen.can_reach(&set, stop).iter().any(|ok| !ok) {
        return Err(Error::Unreachable { start });
    }
    debug_assert_eq!(set[0], start);
    Ok(set)
}

/// Expected time to enter `target` from `start`.
pub fn expected_hitting_time(gen: &Generator, target: impl Fn(State) -> bool, start: State) -> Result<f64> {
    if target(start) {
        return Ok(0.0);
    }
    let set = transient_set(gen, start, &target)?;
    let ones = vec![1.0; set.len()];
    eliminate_to_first(gen, &set, ones)
}

/// Expected number of jumps before entering `target` from `start`.
pub fn expected_jumps(gen: &Generator, target: impl Fn(State) -> bool, start: State) -> Result<f64> {
    if target(start) {
        return Ok(0.0);
    }
    let set = transient_set(gen, start, &target)?;
    // one jump per holding time: reward each state at its exit rate
    let c = set.iter().map(|&x| gen.exit_rate(x)).collect();
    eliminate_to_first(gen, &set, c)
}

/// Probability of entering `hit` before `avoid`, from `start`.
pub fn absorption_probability(
    gen: &Generator,
    hit: impl Fn(State) -> bool,
    avoid: impl Fn(State) -> bool,
    start: State,
) -> Result<f64> {
    if hit(start) {
        return Ok(1.0);
    }
    if avoid(start) {
        return Ok(0.0);
    }
    let stop = |x: State| hit(x) || avoid(x);
    let set = transient_set(gen, start, &stop)?;
    let c: Vec<f64> = set.iter().map(|&x| gen.row(x).filter(|&(y, _)| hit(y)).map(|(_, q)| q).sum()).collect();
    Ok(eliminate_to_first(gen, &set, c)?.clamp(0.0, 1.0))
}

/// `ν(x) ∝ θ^{-r(x)} π(x)`.
pub fn delayed_reweight(pi: &[f64], theta: f64, depths: &[i32]) -> Result<Vec<f64>> {
    check_theta(Some(theta))?;
    if pi.len() != depths.len() {
        return Err(Error::param("stationary vector and depth table differ in length"));
    }
    let mut nu: Vec<f64> = pi.iter().zip(depths).map(|(p, &r)| p * theta.powi(-r)).collect();
    let total: f64 = nu.iter().sum();
    for v in &mut nu {
        *v /= total;
    }
    Ok(nu)
}

/// `π(0)` by direct solve against `1/(1 + λ φ F_ρ E[S])`, where `S` is the
/// time for the pinned chain to return to 0 from `1_ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroMassCheck {
    pub solved: f64,
    pub formula: f64,
    pub hitting_time: f64,
}

impl ZeroMassCheck {
    pub fn deviation(&self) -> f64 {
        (self.solved - self.formula).abs()
    }
}

pub fn zero_mass_identity(tree: &WeightedTree, lambda: f64, phi: f64) -> Result<ZeroMassCheck> {
    let gen = build_pinned_generator(tree, lambda, phi, false, None)?;
    let st = stationary_distribution(&gen)?;
    let s = expected_hitting_time(&gen, |x| x == 0, 1)?;
    let formula = 1.0 / (1.0 + lambda * phi * tree.fitness(ROOT) * s);
    Ok(ZeroMassCheck { solved: st.pi[0], formula, hitting_time: s })
}

/// One component of a product chain. All components must share `lambda`.
#[derive(Debug, Clone)]
pub struct Component {
    pub tree: WeightedTree,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductCheck {
    /// Largest entrywise gap between the product-chain stationary vector and
    /// the tensor product of the component stationary vectors.
    pub tensor_deviation: f64,
    /// Gap between the product chain's `π(0)` and `Π 1/(1+λφF_{v_i}E[S_i])`.
    pub zero_mass_deviation: f64,
    pub pi_zero: f64,
}

impl ProductCheck {
    pub fn max_deviation(&self) -> f64 {
        self.tensor_deviation.max(self.zero_mass_deviation)
    }
}

pub const MAX_PRODUCT_VERTICES: usize = 16;

pub fn product_chain_check(components: &[Component], phi: f64) -> Result<ProductCheck> {
    if components.len() < 2 {
        return Err(Error::param("product chain needs at least two components"));
    }
    let lambda = components[0].lambda;
    if components.iter().any(|c| c.lambda != lambda) {
        return Err(Error::param("all product components must share lambda"));
    }
    let total: usize = components.iter().map(|c| c.tree.len()).sum();
    if total > MAX_PRODUCT_VERTICES {
        return Err(Error::TooManyVertices { vertices: total, limit: MAX_PRODUCT_VERTICES });
    }
    let trees: Vec<WeightedTree> = components.iter().map(|c| c.tree.clone()).collect();
    let joint = stationary_distribution(&build_forest_generator(&trees, lambda, phi, None)?)?;
    let mut marginals = Vec::new();
    let mut zero_formula = 1.0;
    for t in &trees {
        let check = zero_mass_identity(t, lambda, phi)?;
        zero_formula *= check.formula;
        let gen = build_pinned_generator(t, lambda, phi, false, None)?;
        marginals.push(stationary_distribution(&gen)?.pi);
    }
    let mut dev: f64 = 0.0;
    for x in 0..joint.pi.len() {
        let mut p = 1.0;
        let mut shift = 0;
        for (t, m) in trees.iter().zip(&marginals) {
            let part = (x >> shift) & ((1 << t.len()) - 1);
            p *= m[part];
            shift += t.len();
        }
        dev = dev.max((joint.pi[x] - p).abs());
    }
    Ok(ProductCheck {
        tensor_deviation: dev,
        zero_mass_deviation: (joint.pi[0] - zero_formula).abs(),
        pi_zero: joint.pi[0],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthHit {
    pub probability: f64,
    /// `h` exceeds every reachable `r`, so the answer is 0 by fiat.
    pub beyond_height: bool,
}

/// `P(r(X_t) ≥ h` before the chain returns to 0`)` from `1_ρ`, on a tree
/// with an extra root (so `r(1_ρ) = 1`).
pub fn exact_depth_hit_probability(tree: &WeightedTree, lambda: f64, h: i32) -> Result<DepthHit> {
    if tree.extra_root().is_none() {
        return Err(Error::param("depth-hit probability needs a tree with an extra root"));
    }
    if h < 1 {
        return Err(Error::param("h must be >= 1"));
    }
    let params = ProcessParams::new(lambda, crate::sim::Variant::extra_root_permanent());
    let gen = build_generator(tree, &params)?;
    let max_r = tree.height() + 1;
    if h > max_r {
        return Ok(DepthHit { probability: 0.0, beyond_height: true });
    }
    let p = absorption_probability(&gen, |x| gen.r(x) >= h, |x| x == 0, 1)?;
    Ok(DepthHit { probability: p, beyond_height: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcursionCheck {
    /// `E[S̃_L]` by direct solve of the root-frozen chain.
    pub frozen: f64,
    /// The same quantity assembled from product-chain hitting times.
    pub identity: f64,
    /// `E[S_L]` without the frozen root.
    pub plain: f64,
}

impl ExcursionCheck {
    pub fn deviation(&self) -> f64 {
        (self.frozen - self.identity).abs()
    }
}

pub const MAX_EXCURSION_VERTICES: usize = 12;

/// Compare `E[S̃_L]` with `θ^{-1}(1 + λ F_ρ Σ_j F_{v_j} E[S̃_j^⊗])` (θ = 1
/// when `theta` is `None`). `S̃_j^⊗` is the product chain of the subtrees
/// below `ρ`, pinned to `ρ`, started from `1_{v_j}`; with a delay its depth
/// is measured from `ρ`, one less than in the full tree.
pub fn excursion_identity_check(tree: &WeightedTree, lambda: f64, theta: Option<f64>) -> Result<ExcursionCheck> {
    if tree.extra_root().is_none() {
        return Err(Error::param("excursion identity needs a tree with an extra root"));
    }
    let m = tree.len() - 1;
    if m > MAX_EXCURSION_VERTICES {
        return Err(Error::TooManyVertices { vertices: m, limit: MAX_EXCURSION_VERTICES });
    }
    check_theta(theta)?;
    let mut variant = crate::sim::Variant::extra_root_permanent().with_root_frozen();
    variant.delay = theta;
    let frozen_gen = build_generator(tree, &ProcessParams::new(lambda, variant))?;
    let frozen = expected_hitting_time(&frozen_gen, |x| x == 0, 1)?;
    variant.root_frozen = false;
    let plain_gen = build_generator(tree, &ProcessParams::new(lambda, variant))?;
    let plain = expected_hitting_time(&plain_gen, |x| x == 0, 1)?;

    let kids = tree.children(ROOT).to_vec();
    let f_rho = tree.fitness(ROOT);
    let mut sum = 0.0;
    if !kids.is_empty() {
        let subtrees: Vec<WeightedTree> = kids.iter().map(|&v| tree.subtree(v)).collect();
        let prod = build_forest_generator(&subtrees, lambda, f_rho, theta)?;
        let mut shift = 0;
        for (t, &v) in subtrees.iter().zip(&kids) {
            let e = expected_hitting_time(&prod, |x| x == 0, 1 << shift)?;
            sum += tree.fitness(v) * e;
            shift += t.len();
        }
    }
    let identity = (1.0 + lambda * f_rho * sum) / theta.unwrap_or(1.0);
    Ok(ExcursionCheck { frozen, identity, plain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Variant;
    use crate::tree::make_star;

    fn plain(lambda: f64) -> ProcessParams {
        ProcessParams::new(lambda, Variant::plain())
    }

    #[test]
    fn single_vertex() {
        let t = WeightedTree::single(1.0).unwrap();
        let g = build_generator(&t, &plain(1.0)).unwrap();
        assert_eq!(g.n_states(), 2);
        assert_eq!(g.rate(1, 0), 1.0);
        assert_eq!(g.rate(0, 1), 0.0);
        assert_eq!(expected_hitting_time(&g, |x| x == 0, 1).unwrap(), 1.0);
        assert_eq!(stationary_distribution(&g), Err(Error::Reducible { state: 0 }));
    }

    #[test]
    fn single_vertex_below_pinned_parent() {
        let t = WeightedTree::single(3.0).unwrap();
        let g = build_pinned_generator(&t, 0.5, 2.0, false, None).unwrap();
        assert!((g.rate(0, 1) - 0.5 * 2.0 * 3.0).abs() < 1e-15);
        assert_eq!(g.rate(1, 0), 1.0);
        let phi = 1.0;
        let g = build_pinned_generator(&WeightedTree::single(1.0).unwrap(), 1.0, phi, false, None).unwrap();
        let st = stationary_distribution(&g).unwrap();
        assert!((st.pi[0] - 0.5).abs() < 1e-14);
        assert!(st.residual < 1e-14);
    }

    #[test]
    fn extra_root_tree_matches_pinned() {
        let t = make_star(2, 2.0, &[1.5, 3.0]).unwrap();
        let a = build_pinned_generator(&t, 0.7, 1.0, false, None).unwrap();
        let b = build_generator(&t.clone().with_extra_root().unwrap(), &ProcessParams::new(0.7, Variant::extra_root_permanent())).unwrap();
        for x in 0..8 {
            for y in 0..8 {
                assert_eq!(a.rate(x, y), b.rate(x, y));
            }
        }
    }

    #[test]
    fn edge_by_hand() {
        let t = make_star(1, 1.0, &[1.0]).unwrap();
        let g = build_generator(&t, &plain(1.0)).unwrap();
        assert_eq!(g.n_states(), 4);
        assert_eq!(g.rate(0b01, 0b11), 1.0);
        assert_eq!(g.rate(0b01, 0b00), 1.0);
        assert_eq!(g.rate(0b11, 0b10), 1.0);
        assert_eq!(g.rate(0b10, 0b11), 1.0);
        assert_eq!(g.exit_rate(0), 0.0);
        let h = expected_hitting_time(&g, |x| x == 0, 1).unwrap();
        assert!((h - 1.5).abs() < 1e-14);
        assert!(g.row_sum_defect() < 1e-14);
    }

    #[test]
    fn root_frozen_rates() {
        let t = make_star(2, 1.0, &[1.0]).unwrap();
        let g = build_generator(&t, &ProcessParams::new(1.0, Variant::root_frozen())).unwrap();
        assert_eq!(g.rate(0b001, 0b000), 1.0);
        assert_eq!(g.rate(0b011, 0b010), 0.0);
        assert_eq!(g.rate(0b011, 0b001), 1.0);
    }

    #[test]
    fn delayed_single_vertex_with_extra_root() {
        let t = WeightedTree::single(1.0).unwrap().with_extra_root().unwrap();
        let base = build_generator(&t, &ProcessParams::new(1.0, Variant::extra_root_permanent())).unwrap();
        let del = build_generator(&t, &ProcessParams::new(1.0, Variant::extra_root_permanent().with_delay(0.5))).unwrap();
        let s = expected_hitting_time(&base, |x| x == 0, 1).unwrap();
        let sd = expected_hitting_time(&del, |x| x == 0, 1).unwrap();
        assert!((sd - 2.0 * s).abs() < 1e-14);
        assert_eq!(del.r(0), 0);
        assert_eq!(del.r(1), 1);
    }

    #[test]
    fn reweighting_two_states() {
        let nu = delayed_reweight(&[0.5, 0.5], 0.5, &[0, 1]).unwrap();
        assert!((nu[1] / nu[0] - 2.0).abs() < 1e-14);
        let same = delayed_reweight(&[0.2, 0.8], 0.3, &[0, 0]).unwrap();
        assert!((same[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn reweight_matches_delayed_solve() {
        let t = WeightedTree::path(&[1.0, 2.0, 1.5]).unwrap();
        let g = build_pinned_generator(&t, 0.8, 1.0, false, None).unwrap();
        let gd = build_pinned_generator(&t, 0.8, 1.0, false, Some(0.5)).unwrap();
        let pi = stationary_distribution(&g).unwrap();
        let direct = stationary_distribution(&gd).unwrap();
        let nu = delayed_reweight(&pi.pi, 0.5, &g.depths()).unwrap();
        for (a, b) in nu.iter().zip(&direct.pi) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mass_on_path() {
        let t = WeightedTree::path(&[1.0, 1.0, 1.0]).unwrap();
        let c = zero_mass_identity(&t, 0.9, 1.0).unwrap();
        assert!(c.deviation() < 1e-12, "{c:?}");
    }

    #[test]
    fn product_of_two_singletons() {
        let c = Component { tree: WeightedTree::single(1.0).unwrap(), lambda: 1.0 };
        let p = product_chain_check(&[c.clone(), c.clone()], 1.0).unwrap();
        assert!(p.max_deviation() < 1e-12);
        assert!((p.pi_zero - 0.25).abs() < 1e-12);
        let d = Component { lambda: 0.5, ..c.clone() };
        assert!(product_chain_check(&[c, d], 1.0).is_err());
    }

    #[test]
    fn depth_hit() {
        let t = WeightedTree::path(&[1.0, 1.0, 1.0]).unwrap().with_extra_root().unwrap();
        assert_eq!(exact_depth_hit_probability(&t, 0.25, 1).unwrap().probability, 1.0);
        let far = exact_depth_hit_probability(&t, 0.25, 9).unwrap();
        assert!(far.beyond_height && far.probability == 0.0);
        let small = exact_depth_hit_probability(&t, 1e-6, 2).unwrap().probability;
        assert!(small <= 2e-6);
        // edge below ρ+: from 1_ρ the first event decides, λ/(1+λ)
        let e = WeightedTree::path(&[1.0, 1.0]).unwrap().with_extra_root().unwrap();
        let p = exact_depth_hit_probability(&e, 0.25, 2).unwrap().probability;
        assert!((p - 0.2).abs() < 1e-14);
    }

    #[test]
    fn excursion_small() {
        let t = WeightedTree::path(&[1.0, 1.0]).unwrap().with_extra_root().unwrap();
        let c = excursion_identity_check(&t, 1.0, None).unwrap();
        assert!(c.deviation() < 1e-12, "{c:?}");
        assert!(c.plain <= c.frozen + 1e-12);
        let t = make_star(2, 1.0, &[1.0]).unwrap().with_extra_root().unwrap();
        let c = excursion_identity_check(&t, 0.5, None).unwrap();
        assert!(c.deviation() < 1e-12, "{c:?}");
        let c = excursion_identity_check(&t, 0.5, Some(0.5)).unwrap();
        assert!(c.deviation() < 1e-12, "{c:?}");
    }

    #[test]
    fn size_caps() {
        let t = WeightedTree::path(&[1.0; 21]).unwrap();
        assert!(matches!(build_generator(&t, &plain(1.0)), Err(Error::TooManyVertices { .. })));
        let t = WeightedTree::path(&[1.0; 15]).unwrap();
        let g = build_pinned_generator(&t, 1.0, 1.0, false, None).unwrap();
        assert!(matches!(stationary_distribution(&g), Err(Error::StateSpaceTooLarge { .. })));
    }
}
