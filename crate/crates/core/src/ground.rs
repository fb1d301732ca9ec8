//! Grounded STRIPS tasks: dense atom table, bitset states, successor generation
//! and plan validation.
//!
//! Every positive goal atom `p(c..)` also yields a static atom `p_g(c..)` that
//! holds in every state, so features can refer to the goal.

use std::collections::{HashMap, HashSet};
use std::fmt;

use fixedbitset::FixedBitSet;
use thiserror::Error;

use crate::pddl::{ActionSchema, LiftedAtom, Problem, Term};
use crate::sexpr::{self, SyntaxError};

pub type AtomId = usize;
pub type ActionId = usize;
pub type ObjId = usize;

/// Suffix of goal-copy predicates.
pub const GOAL_SUFFIX: &str = "_g";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State(FixedBitSet);

impl State {
    pub fn empty(n_atoms: usize) -> Self {
        State(FixedBitSet::with_capacity(n_atoms))
    }

    pub fn contains(&self, a: AtomId) -> bool {
        self.0.contains(a)
    }

    pub fn insert(&mut self, a: AtomId) {
        self.0.insert(a)
    }

    pub fn remove(&mut self, a: AtomId) {
        self.0.set(a, false)
    }

    pub fn atoms(&self) -> impl Iterator<Item = AtomId> + '_ {
        self.0.ones()
    }

    pub fn len(&self) -> usize {
        self.0.count_ones(..)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_clear()
    }

    pub fn capacity(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateInfo {
    pub name: String,
    pub arity: usize,
    /// For `p_g`, the index of `p`.
    pub goal_copy_of: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundAction {
    pub schema: usize,
    pub args: Vec<ObjId>,
    pub pre_pos: Vec<AtomId>,
    pub pre_neg: Vec<AtomId>,
    pub add: Vec<AtomId>,
    pub del: Vec<AtomId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoalLiteral {
    pub positive: bool,
    pub atom: AtomId,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("action `{0}` is not applicable")]
pub struct InapplicableAction(pub String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanParseError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("line {line}: unknown ground action `{text}`")]
    UnknownAction { line: usize, text: String },
}

/// Outcome of [`GroundProblem::validate_plan`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanCheck {
    pub valid: bool,
    /// Index of the first inapplicable step, or `plan.len()` when every step
    /// applies but the goal is not reached.
    pub failure_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GroundProblem {
    pub name: String,
    pub schema_names: Vec<String>,
    pub schema_arity: Vec<usize>,
    /// Sorted by name, so object index order is lexicographic order.
    pub objects: Vec<String>,
    pub object_types: Vec<String>,
    pub predicates: Vec<PredicateInfo>,
    pub atoms: Vec<(usize, Vec<ObjId>)>,
    pub atoms_by_predicate: Vec<Vec<AtomId>>,
    /// Atoms touched by some action effect.
    pub fluent_atoms: Vec<AtomId>,
    pub actions: Vec<GroundAction>,
    pub init: State,
    pub goal: Vec<GoalLiteral>,
    atom_index: HashMap<(usize, Vec<ObjId>), AtomId>,
    object_index: HashMap<String, ObjId>,
    predicate_index: HashMap<String, usize>,
    action_index: HashMap<(usize, Vec<ObjId>), ActionId>,
}

struct Interner {
    atoms: Vec<(usize, Vec<ObjId>)>,
    index: HashMap<(usize, Vec<ObjId>), AtomId>,
}

impl Interner {
    fn get(&mut self, pred: usize, args: Vec<ObjId>) -> AtomId {
        if let Some(&a) = self.index.get(&(pred, args.clone())) {
            return a;
        }
        let id = self.atoms.len();
        self.atoms.push((pred, args.clone()));
        self.index.insert((pred, args), id);
        id
    }
}

fn instantiate(atom: &LiftedAtom, binding: &[ObjId], object_index: &HashMap<String, ObjId>) -> Vec<ObjId> {
    atom.args
        .iter()
        .map(|t| match t {
            Term::Param(i) => binding[*i],
            Term::Const(c) => object_index[c],
        })
        .collect()
}

/// Enumerates injective, type-consistent bindings of a schema's parameters.
fn bindings(schema: &ActionSchema, candidates: &[Vec<ObjId>]) -> Vec<Vec<ObjId>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(schema.params.len());
    fn rec(k: usize, candidates: &[Vec<ObjId>], cur: &mut Vec<ObjId>, out: &mut Vec<Vec<ObjId>>) {
        if k == candidates.len() {
            out.push(cur.clone());
            return;
        }
        for &o in &candidates[k] {
            if cur.contains(&o) {
                continue;
            }
            cur.push(o);
            rec(k + 1, candidates, cur, out);
            cur.pop();
        }
    }
    rec(0, candidates, &mut cur, &mut out);
    out
}

/// Grounds a problem: every injective, type-consistent binding of every schema,
/// minus those whose static preconditions fail in the initial state.
pub fn ground(p: &Problem) -> GroundProblem {
    let d = &p.domain;
    let mut objs: Vec<(String, String)> = p.objects.clone();
    objs.sort();
    let objects: Vec<String> = objs.iter().map(|(n, _)| n.clone()).collect();
    let object_types: Vec<String> = objs.iter().map(|(_, t)| t.clone()).collect();
    let object_index: HashMap<String, ObjId> = objects.iter().cloned().enumerate().map(|(i, o)| (o, i)).collect();

    let mut predicates: Vec<PredicateInfo> = d
        .predicates
        .iter()
        .map(|pd| PredicateInfo { name: pd.name.clone(), arity: pd.arity(), goal_copy_of: None })
        .collect();
    let mut goal_copy: HashMap<usize, usize> = HashMap::new();
    for (positive, g) in &p.goal {
        if *positive && !goal_copy.contains_key(&g.predicate) {
            goal_copy.insert(g.predicate, predicates.len());
            let base = &d.predicates[g.predicate];
            predicates.push(PredicateInfo {
                name: format!("{}{GOAL_SUFFIX}", base.name),
                arity: base.arity(),
                goal_copy_of: Some(g.predicate),
            });
        }
    }

    let mut fluent_preds = vec![false; d.predicates.len()];
    for a in &d.actions {
        for e in a.add.iter().chain(&a.delete) {
            fluent_preds[e.predicate] = true;
        }
    }

    let mut interner = Interner { atoms: Vec::new(), index: HashMap::new() };
    let init_atoms: Vec<AtomId> = p
        .init
        .iter()
        .map(|g| interner.get(g.predicate, g.args.iter().map(|o| object_index[o]).collect()))
        .collect();
    let init_set: HashSet<AtomId> = init_atoms.iter().copied().collect();
    let mut goal = Vec::new();
    let mut goal_copies = Vec::new();
    for (positive, g) in &p.goal {
        let args: Vec<ObjId> = g.args.iter().map(|o| object_index[o]).collect();
        let atom = interner.get(g.predicate, args.clone());
        goal.push(GoalLiteral { positive: *positive, atom });
        if *positive {
            goal_copies.push(interner.get(goal_copy[&g.predicate], args));
        }
    }

    let mut actions = Vec::new();
    for (si, schema) in d.actions.iter().enumerate() {
        let candidates: Vec<Vec<ObjId>> = schema
            .params
            .iter()
            .map(|(_, t)| (0..objects.len()).filter(|&o| d.is_subtype(&object_types[o], t)).collect())
            .collect();
        'binding: for b in bindings(schema, &candidates) {
            // static preconditions are decided by the initial state
            for lit in &schema.precondition {
                if !fluent_preds[lit.atom.predicate] {
                    let args = instantiate(&lit.atom, &b, &object_index);
                    let holds = interner.index.get(&(lit.atom.predicate, args)).is_some_and(|a| init_set.contains(a));
                    if holds != lit.positive {
                        continue 'binding;
                    }
                }
            }
            let mut pre_pos = Vec::new();
            let mut pre_neg = Vec::new();
            for lit in &schema.precondition {
                let atom = interner.get(lit.atom.predicate, instantiate(&lit.atom, &b, &object_index));
                if fluent_preds[lit.atom.predicate] {
                    if lit.positive {
                        pre_pos.push(atom);
                    } else {
                        pre_neg.push(atom);
                    }
                }
            }
            let add: Vec<AtomId> =
                schema.add.iter().map(|e| interner.get(e.predicate, instantiate(e, &b, &object_index))).collect();
            let add_set: HashSet<AtomId> = add.iter().copied().collect();
            // add wins over delete
            let del: Vec<AtomId> = schema
                .delete
                .iter()
                .map(|e| interner.get(e.predicate, instantiate(e, &b, &object_index)))
                .filter(|a| !add_set.contains(a))
                .collect();
            actions.push(GroundAction { schema: si, args: b, pre_pos, pre_neg, add, del });
        }
    }

    let n = interner.atoms.len();
    let mut init = State::empty(n);
    for a in init_atoms.iter().chain(&goal_copies) {
        init.insert(*a);
    }
    let mut atoms_by_predicate = vec![Vec::new(); predicates.len()];
    for (i, (pred, _)) in interner.atoms.iter().enumerate() {
        atoms_by_predicate[*pred].push(i);
    }
    let mut fluent: Vec<bool> = vec![false; n];
    for a in &actions {
        for &x in a.add.iter().chain(&a.del) {
            fluent[x] = true;
        }
    }
    let fluent_atoms = (0..n).filter(|&i| fluent[i]).collect();
    let action_index = actions.iter().enumerate().map(|(i, a)| ((a.schema, a.args.clone()), i)).collect();
    GroundProblem {
        name: p.name.clone(),
        schema_names: d.actions.iter().map(|a| a.name.clone()).collect(),
        schema_arity: d.actions.iter().map(|a| a.params.len()).collect(),
        predicate_index: predicates.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect(),
        objects,
        object_types,
        predicates,
        atoms: interner.atoms,
        atoms_by_predicate,
        fluent_atoms,
        actions,
        init,
        goal,
        atom_index: interner.index,
        object_index,
        action_index,
    }
}

impl GroundProblem {
    /// Number of atoms, N.
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn object_id(&self, name: &str) -> Option<ObjId> {
        self.object_index.get(name).copied()
    }

    pub fn predicate_id(&self, name: &str) -> Option<usize> {
        self.predicate_index.get(name).copied()
    }

    /// The goal-copy predicate of `pred`, if the goal mentions it.
    pub fn goal_predicate(&self, pred: usize) -> Option<usize> {
        self.predicates.iter().position(|p| p.goal_copy_of == Some(pred))
    }

    pub fn atom_id(&self, pred: usize, args: &[ObjId]) -> Option<AtomId> {
        self.atom_index.get(&(pred, args.to_vec())).copied()
    }

    pub fn schema_id(&self, name: &str) -> Option<usize> {
        self.schema_names.iter().position(|s| s == name)
    }

    pub fn action_id(&self, schema: usize, args: &[ObjId]) -> Option<ActionId> {
        self.action_index.get(&(schema, args.to_vec())).copied()
    }

    pub fn is_static(&self, atom: AtomId) -> bool {
        self.fluent_atoms.binary_search(&atom).is_err()
    }

    pub fn applicable(&self, s: &State, a: ActionId) -> bool {
        let act = &self.actions[a];
        act.pre_pos.iter().all(|&x| s.contains(x)) && !act.pre_neg.iter().any(|&x| s.contains(x))
    }

    pub fn apply(&self, s: &State, a: ActionId) -> Result<State, InapplicableAction> {
        if !self.applicable(s, a) {
            return Err(InapplicableAction(self.action_name(a)));
        }
        Ok(self.apply_unchecked(s, a))
    }

    /// Applies `a` without checking its precondition.
    pub fn apply_unchecked(&self, s: &State, a: ActionId) -> State {
        let act = &self.actions[a];
        let mut t = s.clone();
        for &x in &act.del {
            t.remove(x);
        }
        for &x in &act.add {
            t.insert(x);
        }
        t
    }

    /// Applicable actions and their results, in action index order.
    pub fn successors(&self, s: &State) -> Vec<(ActionId, State)> {
        (0..self.actions.len())
            .filter(|&a| self.applicable(s, a))
            .map(|a| (a, self.apply_unchecked(s, a)))
            .collect()
    }

    pub fn is_goal(&self, s: &State) -> bool {
        self.goal.iter().all(|g| s.contains(g.atom) == g.positive)
    }

    pub fn validate_plan(&self, plan: &[ActionId]) -> PlanCheck {
        let mut s = self.init.clone();
        for (i, &a) in plan.iter().enumerate() {
            if a >= self.actions.len() || !self.applicable(&s, a) {
                return PlanCheck { valid: false, failure_index: Some(i) };
            }
            s = self.apply_unchecked(&s, a);
        }
        if self.is_goal(&s) {
            PlanCheck { valid: true, failure_index: None }
        } else {
            PlanCheck { valid: false, failure_index: Some(plan.len()) }
        }
    }

    /// `(stack a b)`
    pub fn action_name(&self, a: ActionId) -> String {
        let act = &self.actions[a];
        let mut s = format!("({}", self.schema_names[act.schema]);
        for &o in &act.args {
            s.push(' ');
            s.push_str(&self.objects[o]);
        }
        s.push(')');
        s
    }

    pub fn atom_name(&self, a: AtomId) -> String {
        let (p, args) = &self.atoms[a];
        let mut s = format!("({}", self.predicates[*p].name);
        for &o in args {
            s.push(' ');
            s.push_str(&self.objects[o]);
        }
        s.push(')');
        s
    }

    /// Builds a state from atom names like `(on a b)`; goal copies are added.
    pub fn state_from_atoms<'a>(&self, atoms: impl IntoIterator<Item = &'a str>) -> Option<State> {
        let mut s = State::empty(self.num_atoms());
        for text in atoms {
            let e = sexpr::parse_one(text).ok()?;
            let items = e.as_list()?;
            let pred = self.predicate_id(items.first()?.as_atom()?)?;
            let args = items[1..].iter().map(|o| self.object_id(o.as_atom()?)).collect::<Option<Vec<_>>>()?;
            s.insert(self.atom_id(pred, &args)?);
        }
        for (pred, info) in self.predicates.iter().enumerate() {
            if info.goal_copy_of.is_some() {
                for &a in &self.atoms_by_predicate[pred] {
                    s.insert(a);
                }
            }
        }
        Some(s)
    }

    /// Parses a plan: one parenthesized ground action per line; blank lines and
    /// `;` comments are ignored.
    pub fn parse_plan(&self, text: &str) -> Result<Vec<ActionId>, PlanParseError> {
        let mut plan = Vec::new();
        for e in sexpr::parse_all(text)? {
            let unknown = || PlanParseError::UnknownAction { line: e.pos().line, text: e.to_string() };
            let items = e.as_list().ok_or_else(unknown)?;
            let schema = items.first().and_then(|h| h.as_atom()).and_then(|h| self.schema_id(h)).ok_or_else(unknown)?;
            let args = items[1..]
                .iter()
                .map(|o| o.as_atom().and_then(|o| self.object_id(o)))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(unknown)?;
            plan.push(self.action_id(schema, &args).ok_or_else(unknown)?);
        }
        Ok(plan)
    }

    pub fn format_plan(&self, plan: &[ActionId]) -> String {
        plan.iter().map(|&a| self.action_name(a) + "\n").collect()
    }
}

impl fmt::Display for PlanCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.failure_index {
            None => write!(f, "valid"),
            Some(i) => write!(f, "invalid at step {i}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::pddl::{parse_domain, parse_problem};

    fn bw(problem: &str) -> GroundProblem {
        let d = parse_domain(fixtures::BLOCKSWORLD_DOMAIN).unwrap();
        ground(&parse_problem(problem, &d).unwrap())
    }

    fn two_blocks() -> GroundProblem {
        bw("(define (problem p) (:domain blocksworld) (:objects a b - block)
             (:init (clear a) (clear b) (ontable a) (ontable b) (handempty))
             (:goal (on a b)))")
    }

    #[test]
    fn three_block_grounding_counts() {
        let g = bw("(define (problem p) (:domain blocksworld) (:objects a b c - block)
             (:init (clear a) (clear b) (clear c) (ontable a) (ontable b) (ontable c) (handempty))
             (:goal (on a b)))");
        let count = |name: &str| g.actions.iter().filter(|a| g.schema_names[a.schema] == name).count();
        assert_eq!(count("pickup"), 3);
        assert_eq!(count("putdown"), 3);
        assert_eq!(count("stack"), 6);
        assert_eq!(count("unstack"), 6);
    }

    #[test]
    fn zero_objects_zero_actions() {
        let g = bw("(define (problem p) (:domain blocksworld) (:init (handempty)) (:goal (and)))");
        assert!(g.actions.is_empty());
        assert!(g.is_goal(&g.init));
    }

    #[test]
    fn goal_copies_are_static_and_present() {
        let g = two_blocks();
        let on_g = g.predicate_id("on_g").unwrap();
        let a = g.atom_id(on_g, &[g.object_id("a").unwrap(), g.object_id("b").unwrap()]).unwrap();
        assert!(g.init.contains(a));
        assert!(g.is_static(a));
        for (_, t) in g.successors(&g.init) {
            assert!(t.contains(a));
        }
    }

    #[test]
    fn successors_and_application() {
        let g = two_blocks();
        let succ = g.successors(&g.init);
        let names: Vec<_> = succ.iter().map(|(a, _)| g.action_name(*a)).collect();
        assert_eq!(names, ["(pickup a)", "(pickup b)"]);
        let t = &succ[0].1;
        let holding = g.predicate_id("holding").unwrap();
        assert!(t.contains(g.atom_id(holding, &[0]).unwrap()));
        for atom in ["(clear a)", "(ontable a)", "(handempty)"] {
            let s = g.state_from_atoms([atom]).unwrap();
            let id = s.atoms().find(|&x| !g.is_static(x)).unwrap();
            assert!(!t.contains(id));
        }
        // pickup b while holding a is not applicable
        let pb = g.parse_plan("(pickup b)").unwrap()[0];
        assert!(!g.applicable(t, pb));
        let st = g.parse_plan("(stack b a)").unwrap()[0];
        assert!(!g.applicable(&g.init, st));
        assert!(g.apply(&g.init, st).is_err());
    }

    #[test]
    fn hanoi_initial_successors() {
        let d = parse_domain(fixtures::HANOI_DOMAIN).unwrap();
        let g = ground(&parse_problem(&fixtures::hanoi_problem(3), &d).unwrap());
        let names: Vec<_> = g.successors(&g.init).iter().map(|(a, _)| g.action_name(*a)).collect();
        assert_eq!(names, ["(move d1 d2 peg2)", "(move d1 d2 peg3)"]);
    }

    #[test]
    fn dead_end_has_no_successors() {
        let g = two_blocks();
        assert!(g.successors(&State::empty(g.num_atoms())).is_empty());
    }

    #[test]
    fn plan_validation() {
        let g = two_blocks();
        let plan = g.parse_plan("(pickup a)\n(stack a b)\n").unwrap();
        assert_eq!(g.validate_plan(&plan), PlanCheck { valid: true, failure_index: None });
        assert_eq!(g.validate_plan(&[]).failure_index, Some(0));
        let bad = g.parse_plan("(pickup a) ; first\n(pickup b)").unwrap();
        assert_eq!(g.validate_plan(&bad).failure_index, Some(1));
        assert!(g.parse_plan("(fly a)").is_err());
        assert_eq!(g.format_plan(&plan), "(pickup a)\n(stack a b)\n");
    }
}
