//! Fitness-weighted rooted trees and the gadget graphs built from them.
//!
//! Vertex ids are dense. The root `ρ` is always id 0. An extra root `ρ+`,
//! when attached, is appended as the last id and becomes the parent of `ρ`;
//! it keeps stored depth -1 so the depths of the original vertices do not
//! move.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::ops::Range;

use rand::Rng;

use crate::dist::{FitnessDist, OffspringDist};
use crate::error::{Error, Result};

pub type Vertex = usize;

pub const ROOT: Vertex = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTree {
    parent: Vec<Option<Vertex>>,
    children: Vec<Vec<Vertex>>,
    fitness: Vec<f64>,
    depth: Vec<i32>,
    frontier: Vec<bool>,
    extra_root: Option<Vertex>,
}

fn check_fitness(f: f64) -> Result<()> {
    if f.is_finite() && f >= 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("fitness must be finite and >= 1, got {f}")))
    }
}

impl WeightedTree {
    /// A lone root with the given fitness, not in the frontier.
    pub fn single(fitness: f64) -> Result<Self> {
        check_fitness(fitness)?;
        Ok(WeightedTree {
            parent: vec![None],
            children: vec![Vec::new()],
            fitness: vec![fitness],
            depth: vec![0],
            frontier: vec![false],
            extra_root: None,
        })
    }

    /// Build from a parent array with `parent[0] = None` and
    /// `parent[v] < v` otherwise.
    pub fn from_parents(parent: &[Option<Vertex>], fitness: Vec<f64>) -> Result<Self> {
        if parent.is_empty() || parent.len() != fitness.len() {
            return Err(Error::param("parent and fitness arrays must be nonempty and of equal length"));
        }
        if parent[0].is_some() {
            return Err(Error::param("vertex 0 must be the root"));
        }
        let mut tree = WeightedTree::single(fitness[0])?;
        for v in 1..parent.len() {
            match parent[v] {
                Some(p) if p < v => {
                    tree.push_child(p, fitness[v])?;
                }
                _ => return Err(Error::param(format!("vertex {v} needs a parent with smaller id"))),
            }
        }
        Ok(tree)
    }

    /// A path `v_0 - v_1 - ... - v_r` rooted at `v_0`.
    pub fn path(fitness: &[f64]) -> Result<Self> {
        let parent: Vec<Option<Vertex>> = (0..fitness.len()).map(|v| v.checked_sub(1)).collect();
        WeightedTree::from_parents(&parent, fitness.to_vec())
    }

    fn push_child(&mut self, p: Vertex, fitness: f64) -> Result<Vertex> {
        check_fitness(fitness)?;
        let v = self.parent.len();
        self.parent.push(Some(p));
        self.children.push(Vec::new());
        self.children[p].push(v);
        self.fitness.push(fitness);
        self.depth.push(self.depth[p] + 1);
        self.frontier.push(false);
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> Vertex {
        ROOT
    }

    pub fn parent(&self, v: Vertex) -> Option<Vertex> {
        self.parent[v]
    }

    pub fn children(&self, v: Vertex) -> &[Vertex] {
        &self.children[v]
    }

    pub fn neighbours(&self, v: Vertex) -> impl Iterator<Item = Vertex> + '_ {
        self.parent[v].into_iter().chain(self.children[v].iter().copied())
    }

    pub fn fitness(&self, v: Vertex) -> f64 {
        self.fitness[v]
    }

    pub fn fitness_slice(&self) -> &[f64] {
        &self.fitness
    }

    /// Graph distance from `ρ`; -1 for the extra root.
    pub fn depth(&self, v: Vertex) -> i32 {
        self.depth[v]
    }

    pub fn is_frontier(&self, v: Vertex) -> bool {
        self.frontier[v]
    }

    pub fn frontier(&self) -> impl Iterator<Item = Vertex> + '_ {
        (0..self.len()).filter(|&v| self.frontier[v])
    }

    pub fn extra_root(&self) -> Option<Vertex> {
        self.extra_root
    }

    /// Largest stored depth.
    pub fn height(&self) -> i32 {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Vertices at depth `r`.
    pub fn generation(&self, r: i32) -> impl Iterator<Item = Vertex> + '_ {
        (0..self.len()).filter(move |&v| self.depth[v] == r)
    }

    /// Copy of the subtree rooted at `v`, re-indexed breadth-first with `v`
    /// as the new root. Frontier flags are kept.
    pub fn subtree(&self, v: Vertex) -> WeightedTree {
        let mut out = WeightedTree::single(self.fitness[v]).expect("valid fitness");
        out.frontier[ROOT] = self.frontier[v];
        let mut queue = VecDeque::from([(v, ROOT)]);
        while let Some((old, new)) = queue.pop_front() {
            for &c in &self.children[old] {
                let nc = out.push_child(new, self.fitness[c]).expect("valid fitness");
                out.frontier[nc] = self.frontier[c];
                queue.push_back((c, nc));
            }
        }
        out
    }

    /// Same structure with a replacement fitness vector.
    pub fn with_fitness(&self, fitness: Vec<f64>) -> Result<Self> {
        if fitness.len() != self.len() {
            return Err(Error::param("fitness vector length does not match the tree"));
        }
        for &f in &fitness {
            check_fitness(f)?;
        }
        if let Some(x) = self.extra_root {
            if fitness[x] != 1.0 {
                return Err(Error::param("the extra root must keep fitness 1"));
            }
        }
        Ok(WeightedTree { fitness, ..self.clone() })
    }

    pub fn set_frontier(&mut self, v: Vertex, on: bool) {
        self.frontier[v] = on;
    }

    /// Sample the children of a frontier vertex. Returns the new ids, which
    /// join the frontier.
    pub fn extend_vertex<R: Rng + ?Sized>(
        &mut self,
        v: Vertex,
        offspring: &OffspringDist,
        fitness: &FitnessDist,
        rng: &mut R,
    ) -> Result<Range<Vertex>> {
        if v >= self.len() || !self.frontier[v] {
            return Err(Error::NotInFrontier(v));
        }
        self.frontier[v] = false;
        let n = offspring.sample(rng);
        let start = self.len();
        for _ in 0..n {
            let c = self.push_child(v, fitness.sample(rng))?;
            self.frontier[c] = true;
        }
        Ok(start..self.len())
    }

    /// Adjoin `ρ+` (fitness 1) above the root.
    pub fn attach_extra_root(&mut self) -> Result<Vertex> {
        if self.extra_root.is_some() {
            return Err(Error::ExtraRootPresent);
        }
        let x = self.len();
        self.parent.push(None);
        self.children.push(vec![ROOT]);
        self.fitness.push(1.0);
        self.depth.push(-1);
        self.frontier.push(false);
        self.parent[ROOT] = Some(x);
        self.extra_root = Some(x);
        Ok(x)
    }

    pub fn with_extra_root(mut self) -> Result<Self> {
        self.attach_extra_root()?;
        Ok(self)
    }

    /// Serialize in the line-oriented `cpfs-tree v1` format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "cpfs-tree v1 n={} extra_root={}", self.len(), u8::from(self.extra_root.is_some()));
        for v in 0..self.len() {
            let p = self.parent[v].map_or(-1, |p| p as i64);
            let _ = writeln!(out, "{v} {p} {:.17} {}", self.fitness[v], u8::from(self.frontier[v]));
        }
        out
    }

    /// Parse the format written by [`to_text`](Self::to_text). Blank lines
    /// and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::TreeFormat { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate().filter(|(_, l)| {
            let l = l.trim_start();
            !l.is_empty() && !l.starts_with('#')
        });
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "cpfs-tree" || fields[1] != "v1" {
            return Err(bad(1, "expected `cpfs-tree v1 n=<count> extra_root=<0|1>`"));
        }
        let n: usize = fields[2]
            .strip_prefix("n=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(1, "bad vertex count"))?;
        let has_extra = match fields[3] {
            "extra_root=0" => false,
            "extra_root=1" => true,
            _ => return Err(bad(1, "bad extra_root flag")),
        };
        if n == 0 {
            return Err(bad(1, "empty tree"));
        }
        let mut parent = vec![None; n];
        let mut fitness = vec![0.0; n];
        let mut frontier = vec![false; n];
        let mut seen = vec![false; n];
        let mut count = 0;
        for (i, line) in lines {
            let ln = i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad(ln, "expected `<id> <parent> <fitness> <frontier>`"));
            }
            let id: usize = f[0].parse().map_err(|_| bad(ln, "bad id"))?;
            if id >= n || seen[id] {
                return Err(bad(ln, "id out of range or repeated"));
            }
            seen[id] = true;
            let p: i64 = f[1].parse().map_err(|_| bad(ln, "bad parent id"))?;
            parent[id] = match p {
                -1 => None,
                p if p >= 0 && (p as usize) < n && p as usize != id => Some(p as usize),
                _ => return Err(bad(ln, "parent id out of range")),
            };
            fitness[id] = f[2].parse().map_err(|_| bad(ln, "bad fitness"))?;
            check_fitness(fitness[id]).map_err(|e| bad(ln, &e.to_string()))?;
            frontier[id] = match f[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad(ln, "frontier flag must be 0 or 1")),
            };
            count += 1;
        }
        if count != n {
            return Err(bad(0, &format!("header announces {n} vertices, found {count}")));
        }
        let tops: Vec<usize> = (0..n).filter(|&v| parent[v].is_none()).collect();
        if tops.len() != 1 {
            return Err(bad(0, "tree must have exactly one parentless vertex"));
        }
        let top = tops[0];
        let extra_root = if has_extra {
            if top == ROOT || parent[ROOT] != Some(top) || fitness[top] != 1.0 {
                return Err(bad(0, "extra root must be the fitness-1 parent of vertex 0"));
            }
            Some(top)
        } else {
            if top != ROOT {
                return Err(bad(0, "root must have id 0"));
            }
            None
        };
        let mut children = vec![Vec::new(); n];
        for v in 0..n {
            if let Some(p) = parent[v] {
                children[p].push(v);
            }
        }
        if let Some(x) = extra_root {
            if children[x].len() != 1 {
                return Err(bad(0, "extra root must have exactly one child"));
            }
        }
        let mut depth = vec![i32::MIN; n];
        depth[top] = if has_extra { -1 } else { 0 };
        let mut queue = VecDeque::from([top]);
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &c in &children[u] {
                depth[c] = depth[u] + 1;
                reached += 1;
                queue.push_back(c);
            }
        }
        if reached != n {
            return Err(bad(0, "parent links contain a cycle"));
        }
        Ok(WeightedTree { parent, children, fitness, depth, frontier, extra_root })
    }
}

/// Breadth-first Galton-Watson tree truncated at generation `max_gen`.
/// Vertices at depth `max_gen` are left in the frontier.
pub fn generate_tree<R: Rng + ?Sized>(
    offspring: &OffspringDist,
    fitness: &FitnessDist,
    max_gen: u32,
    max_vertices: usize,
    rng: &mut R,
) -> Result<WeightedTree> {
    if max_vertices == 0 {
        return Err(Error::param("max_vertices must be >= 1"));
    }
    let mut tree = WeightedTree::single(fitness.sample(rng))?;
    tree.frontier[ROOT] = true;
    let mut v = 0;
    while v < tree.len() {
        if tree.depth[v] < max_gen as i32 {
            let new = tree.extend_vertex(v, offspring, fitness, rng)?;
            if new.end > max_vertices {
                return Err(Error::VertexBudgetExceeded { budget: max_vertices, vertices: new.end });
            }
        }
        v += 1;
    }
    Ok(tree)
}

/// Star `G_k`: root 0 with leaves `1..=k`. `leaf_fitness` has length `k`
/// or a single broadcast value.
pub fn make_star(k: usize, root_fitness: f64, leaf_fitness: &[f64]) -> Result<WeightedTree> {
    if k == 0 {
        return Err(Error::param("star needs k >= 1"));
    }
    let leaf = |i: usize| -> Result<f64> {
        match leaf_fitness.len() {
            1 => Ok(leaf_fitness[0]),
            n if n == k => Ok(leaf_fitness[i]),
            _ => Err(Error::param(format!("leaf fitness must have length 1 or {k}"))),
        }
    };
    let mut tree = WeightedTree::single(root_fitness)?;
    for i in 0..k {
        tree.push_child(ROOT, leaf(i)?)?;
    }
    Ok(tree)
}

/// Star `G_k` with a path `u_1, ..., u_r` hung from leaf 1 (`u_1` is leaf 1).
/// Other leaves have fitness 1. See [`star_path_vertex`] for the ids.
pub fn make_star_with_path(k: usize, r: usize, root_fitness: f64, path_fitness: &[f64]) -> Result<WeightedTree> {
    if r == 0 {
        return Err(Error::param("path needs r >= 1"));
    }
    if path_fitness.len() != r {
        return Err(Error::param(format!("path fitness must have length r = {r}")));
    }
    let mut leaves = vec![1.0; k.max(1)];
    leaves[0] = path_fitness[0];
    let mut tree = make_star(k, root_fitness, &leaves)?;
    let mut prev = 1;
    for &f in &path_fitness[1..] {
        prev = tree.push_child(prev, f)?;
    }
    Ok(tree)
}

/// Id of `u_i` (1-based) in [`make_star_with_path`].
pub fn star_path_vertex(k: usize, i: usize) -> Vertex {
    assert!(i >= 1);
    if i == 1 {
        1
    } else {
        k + i - 1
    }
}
