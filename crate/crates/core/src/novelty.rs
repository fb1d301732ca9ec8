//! Width-based search: novelty tables, IW(k), iterated IW, and width measurement.
//!
//! Novelty is computed over fluent atoms only; static atoms (including goal
//! copies) are true in every state and would never be novel.

use std::collections::{HashSet, VecDeque};

use fixedbitset::FixedBitSet;
use thiserror::Error;

use crate::ground::{ActionId, GroundProblem, State};

/// Records which atom tuples of size ≤ k have been seen.
#[derive(Debug, Clone)]
pub struct NoveltyTable {
    k: usize,
    n: usize,
    singles: FixedBitSet,
    pairs: FixedBitSet,
    larger: HashSet<Vec<u32>>,
}

impl NoveltyTable {
    /// Table of arity `k` over atoms `0..n`.
    pub fn new(k: usize, n: usize) -> Self {
        NoveltyTable {
            k,
            n,
            singles: FixedBitSet::with_capacity(if k >= 1 { n } else { 0 }),
            pairs: FixedBitSet::with_capacity(if k >= 2 { n * n } else { 0 }),
            larger: HashSet::new(),
        }
    }

    pub fn arity(&self) -> usize {
        self.k
    }

    /// Records every tuple of size ≤ k in `atoms` (sorted, distinct, `< n`).
    /// Returns true iff at least one of them was new.
    pub fn check(&mut self, atoms: &[usize]) -> bool {
        let mut novel = false;
        if self.k >= 1 {
            for &a in atoms {
                novel |= !self.singles.put(a);
            }
        }
        if self.k >= 2 {
            for (i, &a) in atoms.iter().enumerate() {
                for &b in &atoms[i + 1..] {
                    novel |= !self.pairs.put(a * self.n + b);
                }
            }
        }
        if self.k >= 3 {
            let mut cur = Vec::with_capacity(self.k);
            for size in 3..=self.k.min(atoms.len()) {
                novel |= self.record_subsets(atoms, 0, size, &mut cur);
            }
        }
        novel
    }

    fn record_subsets(&mut self, atoms: &[usize], from: usize, size: usize, cur: &mut Vec<u32>) -> bool {
        if cur.len() == size {
            return self.larger.insert(cur.clone());
        }
        let mut novel = false;
        for i in from..atoms.len() {
            if atoms.len() - i < size - cur.len() {
                break;
            }
            cur.push(atoms[i] as u32);
            novel |= self.record_subsets(atoms, i + 1, size, cur);
            cur.pop();
        }
        novel
    }
}

/// Maps states to the sorted positions of their true fluent atoms.
#[derive(Debug, Clone)]
pub struct FluentView {
    pos: Vec<usize>,
    n: usize,
}

impl FluentView {
    pub fn new(gp: &GroundProblem) -> Self {
        let mut pos = vec![usize::MAX; gp.num_atoms()];
        for (i, &a) in gp.fluent_atoms.iter().enumerate() {
            pos[a] = i;
        }
        FluentView { pos, n: gp.fluent_atoms.len() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn atoms(&self, s: &State) -> Vec<usize> {
        s.atoms().map(|a| self.pos[a]).filter(|&p| p != usize::MAX).collect()
    }
}

/// A successful search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Found {
    pub plan: Vec<ActionId>,
    pub end: State,
    pub expanded: usize,
    pub generated: usize,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("search space exhausted after {expanded} expansions")]
pub struct Exhausted {
    pub expanded: usize,
    pub generated: usize,
}

fn path(nodes: &[(usize, ActionId)], mut i: usize) -> Vec<ActionId> {
    let mut plan = Vec::new();
    while i != 0 {
        let (parent, a) = nodes[i];
        plan.push(a);
        i = parent;
    }
    plan.reverse();
    plan
}

/// IW(k) from `start`: breadth-first search that prunes generated states
/// without a novel tuple of at most `k` atoms. The goal test is applied when a
/// state is generated. `k = 0` only looks one step ahead.
pub fn iw_k(
    gp: &GroundProblem,
    start: &State,
    mut goal: impl FnMut(&State) -> bool,
    k: usize,
) -> Result<Found, Exhausted> {
    if goal(start) {
        return Ok(Found { plan: vec![], end: start.clone(), expanded: 0, generated: 0 });
    }
    if k == 0 {
        let mut generated = 0;
        for (a, t) in gp.successors(start) {
            generated += 1;
            if goal(&t) {
                return Ok(Found { plan: vec![a], end: t, expanded: 1, generated });
            }
        }
        return Err(Exhausted { expanded: 1, generated });
    }
    let view = FluentView::new(gp);
    let mut table = NoveltyTable::new(k, view.len());
    table.check(&view.atoms(start));
    // (parent, action) per node; node 0 is the root
    let mut nodes: Vec<(usize, ActionId)> = vec![(0, 0)];
    let mut queue = VecDeque::from([(0usize, start.clone())]);
    let (mut expanded, mut generated) = (0, 0);
    while let Some((i, s)) = queue.pop_front() {
        expanded += 1;
        for (a, t) in gp.successors(&s) {
            generated += 1;
            if goal(&t) {
                nodes.push((i, a));
                return Ok(Found { plan: path(&nodes, nodes.len() - 1), end: t, expanded, generated });
            }
            if table.check(&view.atoms(&t)) {
                nodes.push((i, a));
                queue.push_back((nodes.len() - 1, t));
            }
        }
    }
    Err(Exhausted { expanded, generated })
}

/// Outcome of iterated IW: the plan and the first `k` that found it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IwRun {
    pub found: Found,
    pub k: usize,
    /// Expansions summed over every IW(i) tried, i ≤ k.
    pub total_expanded: usize,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no IW(k) with k <= {k_max} reaches the target ({total_expanded} expansions)")]
pub struct IwFailed {
    pub k_max: usize,
    pub total_expanded: usize,
}

/// Runs IW(0), IW(1), ..., IW(k_max) until one succeeds.
pub fn iw(
    gp: &GroundProblem,
    start: &State,
    mut goal: impl FnMut(&State) -> bool,
    k_max: usize,
) -> Result<IwRun, IwFailed> {
    let mut total_expanded = 0;
    for k in 0..=k_max {
        match iw_k(gp, start, &mut goal, k) {
            Ok(found) => {
                total_expanded += found.expanded;
                return Ok(IwRun { found, k, total_expanded });
            }
            Err(e) => total_expanded += e.expanded,
        }
    }
    Err(IwFailed { k_max, total_expanded })
}

/// Breadth-first search with duplicate detection; returns an optimal plan.
pub fn bfs(gp: &GroundProblem, start: &State, mut goal: impl FnMut(&State) -> bool) -> Option<Vec<ActionId>> {
    if goal(start) {
        return Some(vec![]);
    }
    let mut seen = HashSet::from([start.clone()]);
    let mut nodes: Vec<(usize, ActionId)> = vec![(0, 0)];
    let mut queue = VecDeque::from([(0usize, start.clone())]);
    while let Some((i, s)) = queue.pop_front() {
        for (a, t) in gp.successors(&s) {
            if seen.contains(&t) {
                continue;
            }
            nodes.push((i, a));
            if goal(&t) {
                return Some(path(&nodes, nodes.len() - 1));
            }
            seen.insert(t.clone());
            queue.push_back((nodes.len() - 1, t));
        }
    }
    None
}

/// Result of a bounded width measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Width {
    Exactly(usize),
    /// No IW(k) with k up to the cap finds an optimal plan.
    Above(usize),
    /// No target state is reachable.
    Unsolvable,
}

/// Smallest k ≤ `k_cap` for which IW(k) finds an optimal plan.
pub fn measure_width_upto(
    gp: &GroundProblem,
    start: &State,
    mut goal: impl FnMut(&State) -> bool,
    k_cap: usize,
) -> Width {
    let Some(optimal) = bfs(gp, start, &mut goal).map(|p| p.len()) else {
        return Width::Unsolvable;
    };
    if optimal == 0 {
        return Width::Exactly(0);
    }
    (0..=k_cap)
        .find(|&k| matches!(iw_k(gp, start, &mut goal, k), Ok(f) if f.plan.len() == optimal))
        .map_or(Width::Above(k_cap), Width::Exactly)
}

/// Smallest k for which IW(k) finds an optimal plan; `None` if no plan exists.
pub fn measure_width(gp: &GroundProblem, start: &State, goal: impl FnMut(&State) -> bool) -> Option<usize> {
    // once k covers every atom of every state, IW(k) is plain breadth-first search
    let k_top = gp.fluent_atoms.len().max(1);
    match measure_width_upto(gp, start, goal, k_top) {
        Width::Exactly(k) => Some(k),
        Width::Above(_) => unreachable!("IW(k) with k covering whole states is breadth-first search"),
        Width::Unsolvable => None,
    }
}
