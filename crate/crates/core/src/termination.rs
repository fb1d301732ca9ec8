//! Termination test for sketches: an abstract graph over memory states and
//! Boolean valuations of the tracked features, pruned by a sieve.
//!
//! A valuation assigns each feature in Φ one bit: the truth of a Boolean
//! feature, or whether a numerical, concept or role feature is positive. The
//! sieve repeatedly looks, inside each strongly connected component, for a
//! numerical feature that some edge decreases while no edge increases or
//! changes it unpredictably; those decreasing edges cannot be taken forever
//! and are removed. The sketch is accepted iff what remains is acyclic.

use std::collections::VecDeque;
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use thiserror::Error;

use crate::features::Kind;
use crate::sketch::{EffectKind, Rule, RuleAction, Sketch};

/// Most tracked features a graph may have (the graph has 2^|Φ| valuations per
/// memory state).
pub const MAX_FEATURES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TerminationError {
    #[error("{0} tracked features; at most {MAX_FEATURES} are supported")]
    TooManyFeatures(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vertex {
    pub memory: usize,
    /// Bit i is the truth of feature i.
    pub valuation: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Index of the rule in the sketch.
    pub rule: usize,
    /// Effect on each tracked feature (`None`: unchanged).
    pub effects: Vec<Option<EffectKind>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyGraph {
    pub memory: Vec<String>,
    pub features: Vec<String>,
    pub numeric: Vec<bool>,
    pub rule_ids: Vec<String>,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
}

impl PolicyGraph {
    fn vertex(&self, memory: usize, valuation: u32) -> usize {
        memory << self.features.len() | valuation as usize
    }

    /// Renders a vertex as `m0[on ¬h n>0]`.
    pub fn vertex_name(&self, v: usize) -> String {
        let Vertex { memory, valuation } = self.vertices[v];
        let lits: Vec<String> = self
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let on = valuation >> i & 1 == 1;
                match (self.numeric[i], on) {
                    (false, true) => f.clone(),
                    (false, false) => format!("¬{f}"),
                    (true, true) => format!("{f}>0"),
                    (true, false) => format!("{f}=0"),
                }
            })
            .collect();
        format!("{}[{}]", self.memory[memory], lits.join(" "))
    }
}

/// Per-feature condition on a valuation bit.
fn cond_bits(sk: &Sketch, rule: &Rule) -> Vec<Option<bool>> {
    let mut out = vec![None; sk.features.len()];
    for c in &rule.cond {
        use crate::sketch::Cond;
        let (name, want) = match c {
            Cond::True(f) | Cond::Gt(f) => (f, true),
            Cond::False(f) | Cond::Eq(f) => (f, false),
        };
        if let Some(i) = sk.features.iter().position(|f| &f.name == name) {
            out[i] = Some(want);
        }
    }
    out
}

/// Per-feature effect label of a rule.
fn effect_labels(sk: &Sketch, rule: &Rule) -> Vec<Option<EffectKind>> {
    let n = sk.features.len();
    let mut out = vec![None; n];
    let index = |name: &str| sk.features.iter().position(|f| f.name == name);
    match &rule.action {
        RuleAction::Effects(effects) => {
            for e in effects {
                if let Some(i) = index(&e.feature) {
                    out[i] = Some(e.kind);
                }
            }
        }
        RuleAction::Load { unk, .. } => {
            for f in unk {
                if let Some(i) = index(f) {
                    out[i] = Some(EffectKind::Unk);
                }
            }
        }
        // calls and actions may change the state arbitrarily
        RuleAction::Call { .. } | RuleAction::Do { .. } => out = vec![Some(EffectKind::Unk); n],
    }
    out
}

/// Builds the abstract graph of a sketch.
pub fn build_policy_graph(sk: &Sketch) -> Result<PolicyGraph, TerminationError> {
    let n = sk.features.len();
    if n > MAX_FEATURES {
        return Err(TerminationError::TooManyFeatures(n));
    }
    let mut g = PolicyGraph {
        memory: sk.memory.clone(),
        features: sk.features.iter().map(|f| f.name.clone()).collect(),
        numeric: sk.features.iter().map(|f| f.kind() != Kind::Bool).collect(),
        rule_ids: sk.rules.iter().map(|r| r.id.clone()).collect(),
        vertices: Vec::new(),
        edges: Vec::new(),
    };
    for m in 0..sk.memory.len() {
        for valuation in 0..1u32 << n {
            g.vertices.push(Vertex { memory: m, valuation });
        }
    }
    let mem = |name: &str| sk.memory.iter().position(|x| x == name).expect("validated memory state");
    for (ri, rule) in sk.rules.iter().enumerate() {
        let (from, to) = (mem(&rule.from), mem(&rule.to));
        let cond = cond_bits(sk, rule);
        let effects = effect_labels(sk, rule);
        for nu in 0..1u32 << n {
            let bit = |i: usize| nu >> i & 1 == 1;
            if cond.iter().enumerate().any(|(i, c)| c.is_some_and(|want| bit(i) != want)) {
                continue;
            }
            // every feature either has one possible successor bit or is free
            let mut fixed = 0u32;
            let mut free = Vec::new();
            let mut consistent = true;
            for (i, e) in effects.iter().enumerate() {
                match e {
                    None => fixed |= (bit(i) as u32) << i,
                    Some(EffectKind::SetTrue) | Some(EffectKind::Inc) => fixed |= 1 << i,
                    Some(EffectKind::SetFalse) => {}
                    Some(EffectKind::Unk) => free.push(i),
                    Some(EffectKind::Dec) => {
                        if !bit(i) {
                            consistent = false;
                        }
                        free.push(i);
                    }
                }
            }
            if !consistent {
                continue;
            }
            for pick in 0..1u32 << free.len() {
                let mut nu2 = fixed;
                for (j, &i) in free.iter().enumerate() {
                    nu2 |= (pick >> j & 1) << i;
                }
                g.edges.push(Edge {
                    from: g.vertex(from, nu),
                    to: g.vertex(to, nu2),
                    rule: ri,
                    effects: effects.clone(),
                });
            }
        }
    }
    Ok(g)
}

/// Outcome of the sieve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    /// A cycle of surviving edges, as edge indices in order.
    Reject { cycle: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SieveResult {
    pub verdict: Verdict,
    /// Which edges survived elimination.
    pub live: Vec<bool>,
}

impl SieveResult {
    pub fn accepted(&self) -> bool {
        self.verdict == Verdict::Accept
    }
}

fn components(g: &PolicyGraph, live: &[bool]) -> Vec<usize> {
    let mut dg: DiGraph<(), ()> = DiGraph::with_capacity(g.vertices.len(), g.edges.len());
    for _ in &g.vertices {
        dg.add_node(());
    }
    for (e, edge) in g.edges.iter().enumerate() {
        if live[e] {
            dg.add_edge(NodeIndex::new(edge.from), NodeIndex::new(edge.to), ());
        }
    }
    let mut comp = vec![0; g.vertices.len()];
    for (c, scc) in tarjan_scc(&dg).into_iter().enumerate() {
        for v in scc {
            comp[v.index()] = c;
        }
    }
    comp
}

/// Runs the elimination to a fixpoint and reports a surviving cycle, if any.
pub fn sieve(g: &PolicyGraph) -> SieveResult {
    let mut live = vec![true; g.edges.len()];
    loop {
        let comp = components(g, &live);
        let inside = |e: usize| live[e] && comp[g.edges[e].from] == comp[g.edges[e].to];
        let mut by_comp: Vec<Vec<usize>> = vec![Vec::new(); g.vertices.len()];
        for e in (0..g.edges.len()).filter(|&e| inside(e)) {
            by_comp[comp[g.edges[e].from]].push(e);
        }
        let mut changed = false;
        for edges in by_comp.iter().filter(|es| !es.is_empty()) {
            for f in (0..g.features.len()).filter(|&f| g.numeric[f]) {
                let has = |k: EffectKind| edges.iter().any(|&e| g.edges[e].effects[f] == Some(k));
                if has(EffectKind::Dec) && !has(EffectKind::Inc) && !has(EffectKind::Unk) {
                    for &e in edges {
                        if g.edges[e].effects[f] == Some(EffectKind::Dec) {
                            live[e] = false;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            let verdict = match find_cycle(g, &live, &comp) {
                Some(cycle) => Verdict::Reject { cycle },
                None => Verdict::Accept,
            };
            return SieveResult { verdict, live };
        }
    }
}

/// A cycle of live edges inside one component, found by breadth-first search
/// from the head of some internal edge back to its tail.
fn find_cycle(g: &PolicyGraph, live: &[bool], comp: &[usize]) -> Option<Vec<usize>> {
    let first = (0..g.edges.len()).find(|&e| live[e] && comp[g.edges[e].from] == comp[g.edges[e].to])?;
    let (start, target) = (g.edges[first].to, g.edges[first].from);
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); g.vertices.len()];
    for (e, edge) in g.edges.iter().enumerate() {
        if live[e] && comp[edge.from] == comp[edge.to] {
            out[edge.from].push(e);
        }
    }
    let mut via: Vec<Option<usize>> = vec![None; g.vertices.len()];
    let mut seen = vec![false; g.vertices.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        if u == target {
            break;
        }
        for &e in &out[u] {
            let w = g.edges[e].to;
            if !seen[w] {
                seen[w] = true;
                via[w] = Some(e);
                queue.push_back(w);
            }
        }
    }
    let mut path = Vec::new();
    let mut u = target;
    while u != start {
        let e = via[u].expect("target is reachable within its component");
        path.push(e);
        u = g.edges[e].from;
    }
    path.reverse();
    let mut cycle = vec![first];
    cycle.extend(path);
    Some(cycle)
}

/// True iff `cycle` is a closed walk of live edges of `g`.
pub fn is_valid_witness(g: &PolicyGraph, live: &[bool], cycle: &[usize]) -> bool {
    !cycle.is_empty()
        && cycle.iter().all(|&e| e < g.edges.len() && live[e])
        && cycle.iter().zip(cycle.iter().cycle().skip(1)).all(|(&a, &b)| g.edges[a].to == g.edges[b].from)
}

/// Builds the graph and sieves it.
pub fn is_terminating(sk: &Sketch) -> Result<bool, TerminationError> {
    Ok(sieve(&build_policy_graph(sk)?).accepted())
}

/// A witness cycle as a rule-id sequence with the vertices it passes through.
pub struct CycleDisplay<'a> {
    pub graph: &'a PolicyGraph,
    pub cycle: &'a [usize],
}

impl fmt::Display for CycleDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = self.graph;
        for &e in self.cycle {
            let edge = &g.edges[e];
            writeln!(f, "  {} --{}--> {}", g.vertex_name(edge.from), g.rule_ids[edge.rule], g.vertex_name(edge.to))?;
        }
        Ok(())
    }
}
