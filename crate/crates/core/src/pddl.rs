//! Lifted STRIPS domains and problems: a PDDL subset with `:strips`, `:typing`
//! and `:negative-preconditions`.

use std::collections::{BTreeMap, HashMap, HashSet};

use thiserror::Error;

use crate::sexpr::{self, Pos, Sexpr, SyntaxError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PddlError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("unsupported requirement `{flag}` at {pos}")]
    UnsupportedRequirement { flag: String, pos: Pos },
    #[error("unsupported construct `{what}` at {pos}")]
    Unsupported { what: String, pos: Pos },
    #[error("predicate `{name}` used with {found} arguments but declared with {expected} at {pos}")]
    ArityMismatch { name: String, expected: usize, found: usize, pos: Pos },
    #[error("unknown predicate `{0}` at {1}")]
    UnknownPredicate(String, Pos),
    #[error("unknown object or parameter `{0}` at {1}")]
    UnknownObject(String, Pos),
    #[error("unknown type `{0}` at {1}")]
    UnknownType(String, Pos),
    #[error("type mismatch at {pos}: `{object}` of type `{found}` where `{expected}` is required")]
    TypeMismatch { object: String, expected: String, found: String, pos: Pos },
    #[error("problem is for domain `{found}` but `{expected}` was given")]
    DomainMismatch { expected: String, found: String },
}

pub type Result<T, E = PddlError> = std::result::Result<T, E>;

pub const ROOT_TYPE: &str = "object";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub params: Vec<String>,
}

impl PredicateDecl {
    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

/// An argument of a lifted literal: a schema parameter (by index) or a constant.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Param(usize),
    Const(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedAtom {
    pub predicate: usize,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Literal {
    pub positive: bool,
    pub atom: LiftedAtom,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    /// (name without `?`, type)
    pub params: Vec<(String, String)>,
    pub precondition: Vec<Literal>,
    pub add: Vec<LiftedAtom>,
    pub delete: Vec<LiftedAtom>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    pub name: String,
    /// type -> parent type; `object` has no entry
    pub types: BTreeMap<String, String>,
    pub constants: Vec<(String, String)>,
    pub predicates: Vec<PredicateDecl>,
    pub actions: Vec<ActionSchema>,
}

impl Domain {
    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|p| p.name == name)
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.name == name)
    }

    /// True iff `sub` equals `sup` or inherits from it.
    pub fn is_subtype(&self, sub: &str, sup: &str) -> bool {
        let mut cur = sub;
        let mut guard = 0;
        loop {
            if cur == sup {
                return true;
            }
            match self.types.get(cur) {
                Some(parent) if guard <= self.types.len() => {
                    cur = parent;
                    guard += 1;
                }
                _ => return sup == ROOT_TYPE,
            }
        }
    }

    fn has_type(&self, t: &str) -> bool {
        t == ROOT_TYPE || self.types.contains_key(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtomSpec {
    pub predicate: usize,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub name: String,
    pub domain: Domain,
    /// Problem objects plus domain constants, with their types.
    pub objects: Vec<(String, String)>,
    pub init: Vec<GroundAtomSpec>,
    /// (positive, atom)
    pub goal: Vec<(bool, GroundAtomSpec)>,
}

const SUPPORTED_REQUIREMENTS: [&str; 3] = [":strips", ":typing", ":negative-preconditions"];

fn unsupported(e: &Sexpr) -> PddlError {
    PddlError::Unsupported { what: e.head().unwrap_or(&e.to_string()).to_string(), pos: e.pos() }
}

/// Parses `a b - t c - u d` into (name, type) pairs; untyped names get `object`.
fn typed_list(items: &[Sexpr], strip_var: bool) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let tok = items[i].expect_atom("a name")?;
        if tok == "-" {
            let ty = items
                .get(i + 1)
                .ok_or_else(|| SyntaxError::new(items[i].pos(), "missing type after `-`"))?;
            if ty.head() == Some("either") {
                return Err(unsupported(ty));
            }
            let ty = ty.expect_atom("a type name")?;
            out.extend(pending.drain(..).map(|n| (n, ty.to_string())));
            i += 2;
        } else {
            let name = if strip_var {
                tok.strip_prefix('?')
                    .ok_or_else(|| SyntaxError::new(items[i].pos(), format!("expected a `?variable`, found `{tok}`")))?
            } else {
                tok
            };
            pending.push(name.to_string());
            i += 1;
        }
    }
    out.extend(pending.into_iter().map(|n| (n, ROOT_TYPE.to_string())));
    Ok(out)
}

fn check_requirements(items: &[Sexpr]) -> Result<()> {
    for r in items {
        let flag = r.expect_atom("a requirement flag")?;
        if !SUPPORTED_REQUIREMENTS.contains(&flag) {
            return Err(PddlError::UnsupportedRequirement { flag: flag.to_string(), pos: r.pos() });
        }
    }
    Ok(())
}

fn conjuncts(e: &Sexpr) -> Result<Vec<&Sexpr>> {
    let items = e.expect_list("a formula")?;
    if items.is_empty() {
        return Ok(vec![]);
    }
    if e.head() == Some("and") {
        Ok(items[1..].iter().collect())
    } else {
        Ok(vec![e])
    }
}

struct SchemaScope<'a> {
    domain: &'a Domain,
    params: &'a [(String, String)],
}

impl SchemaScope<'_> {
    fn atom(&self, e: &Sexpr) -> Result<LiftedAtom> {
        let items = e.expect_list("an atom")?;
        let name = items
            .first()
            .ok_or_else(|| SyntaxError::new(e.pos(), "empty atom"))?
            .expect_atom("a predicate name")?;
        if matches!(name, "and" | "or" | "not" | "forall" | "exists" | "when" | "imply" | "=") {
            return Err(unsupported(e));
        }
        let predicate = self
            .domain
            .predicate_index(name)
            .ok_or_else(|| PddlError::UnknownPredicate(name.to_string(), e.pos()))?;
        let decl = &self.domain.predicates[predicate];
        if decl.arity() != items.len() - 1 {
            return Err(PddlError::ArityMismatch {
                name: name.to_string(),
                expected: decl.arity(),
                found: items.len() - 1,
                pos: e.pos(),
            });
        }
        let mut args = Vec::new();
        for (k, a) in items[1..].iter().enumerate() {
            let tok = a.expect_atom("a term")?;
            let (term, ty) = if let Some(var) = tok.strip_prefix('?') {
                let idx = self
                    .params
                    .iter()
                    .position(|(n, _)| n == var)
                    .ok_or_else(|| PddlError::UnknownObject(tok.to_string(), a.pos()))?;
                (Term::Param(idx), self.params[idx].1.clone())
            } else {
                let (_, ty) = self
                    .domain
                    .constants
                    .iter()
                    .find(|(n, _)| n == tok)
                    .ok_or_else(|| PddlError::UnknownObject(tok.to_string(), a.pos()))?;
                (Term::Const(tok.to_string()), ty.clone())
            };
            let expected = &decl.params[k];
            if !self.domain.is_subtype(&ty, expected) {
                return Err(PddlError::TypeMismatch {
                    object: tok.to_string(),
                    expected: expected.clone(),
                    found: ty,
                    pos: a.pos(),
                });
            }
            args.push(term);
        }
        Ok(LiftedAtom { predicate, args })
    }

    fn literal(&self, e: &Sexpr, allow_negative: bool) -> Result<Literal> {
        if e.head() == Some("not") {
            let items = e.as_list().unwrap();
            if items.len() != 2 || !allow_negative {
                return Err(unsupported(e));
            }
            Ok(Literal { positive: false, atom: self.atom(&items[1])? })
        } else {
            Ok(Literal { positive: true, atom: self.atom(e)? })
        }
    }
}

fn parse_action(domain: &Domain, items: &[Sexpr], negative_pre: bool, pos: Pos) -> Result<ActionSchema> {
    let name = items
        .get(1)
        .ok_or_else(|| SyntaxError::new(pos, "action without a name"))?
        .expect_atom("an action name")?
        .to_string();
    let (_, kw) = sexpr::keyword_args(&items[2..])?;
    let mut params = Vec::new();
    let mut pre = None;
    let mut eff = None;
    for (k, v) in kw {
        match k {
            ":parameters" => params = typed_list(v.expect_list("a parameter list")?, true)?,
            ":precondition" => pre = Some(v),
            ":effect" => eff = Some(v),
            _ => return Err(PddlError::Unsupported { what: k.to_string(), pos: v.pos() }),
        }
    }
    for (_, t) in &params {
        if !domain.has_type(t) {
            return Err(PddlError::UnknownType(t.clone(), pos));
        }
    }
    let scope = SchemaScope { domain, params: &params };
    let mut precondition = Vec::new();
    if let Some(p) = pre {
        for c in conjuncts(p)? {
            precondition.push(scope.literal(c, negative_pre)?);
        }
    }
    let mut add = Vec::new();
    let mut delete = Vec::new();
    if let Some(e) = eff {
        for c in conjuncts(e)? {
            let lit = scope.literal(c, true)?;
            if lit.positive {
                add.push(lit.atom);
            } else {
                delete.push(lit.atom);
            }
        }
    }
    Ok(ActionSchema { name, params, precondition, add, delete })
}

/// Parses a domain definition.
pub fn parse_domain(text: &str) -> Result<Domain> {
    let top = sexpr::parse_one(text)?;
    let items = top.expect_list("`(define (domain ...) ...)`")?;
    if top.head() != Some("define") || items.len() < 2 || items[1].head() != Some("domain") {
        return Err(SyntaxError::new(top.pos(), "expected `(define (domain <name>) ...)`").into());
    }
    let name = items[1].as_list().unwrap().get(1).map(|n| n.expect_atom("a domain name")).transpose()?;
    let mut domain = Domain {
        name: name.unwrap_or_default().to_string(),
        types: BTreeMap::new(),
        constants: Vec::new(),
        predicates: Vec::new(),
        actions: Vec::new(),
    };
    let mut negative_pre = false;
    let mut pending_actions = Vec::new();
    for section in &items[2..] {
        let sec = section.expect_list("a domain section")?;
        match section.head() {
            Some(":requirements") => {
                check_requirements(&sec[1..])?;
                negative_pre = sec[1..].iter().any(|r| r.as_atom() == Some(":negative-preconditions"));
            }
            Some(":types") => {
                for (t, parent) in typed_list(&sec[1..], false)? {
                    if t != ROOT_TYPE {
                        domain.types.insert(t, parent);
                    }
                }
                // parents named only after `-` are implicit subtypes of object
                let parents: Vec<String> = domain.types.values().cloned().collect();
                for p in parents {
                    if p != ROOT_TYPE {
                        domain.types.entry(p).or_insert_with(|| ROOT_TYPE.to_string());
                    }
                }
            }
            Some(":constants") => domain.constants = typed_list(&sec[1..], false)?,
            Some(":predicates") => {
                for p in &sec[1..] {
                    let pl = p.expect_list("a predicate declaration")?;
                    let pname = pl
                        .first()
                        .ok_or_else(|| SyntaxError::new(p.pos(), "empty predicate declaration"))?
                        .expect_atom("a predicate name")?;
                    let params = typed_list(&pl[1..], true)?.into_iter().map(|(_, t)| t).collect();
                    domain.predicates.push(PredicateDecl { name: pname.to_string(), params });
                }
            }
            Some(":action") => pending_actions.push(section),
            _ => return Err(unsupported(section)),
        }
    }
    for t in domain.types.values().chain(domain.constants.iter().map(|(_, t)| t)) {
        if !domain.has_type(t) {
            return Err(PddlError::UnknownType(t.clone(), top.pos()));
        }
    }
    for p in &domain.predicates {
        for t in &p.params {
            if !domain.has_type(t) {
                return Err(PddlError::UnknownType(t.clone(), top.pos()));
            }
        }
    }
    for a in pending_actions {
        let schema = parse_action(&domain, a.as_list().unwrap(), negative_pre, a.pos())?;
        domain.actions.push(schema);
    }
    Ok(domain)
}

/// Parses a problem against an already parsed domain.
pub fn parse_problem(text: &str, domain: &Domain) -> Result<Problem> {
    let top = sexpr::parse_one(text)?;
    let items = top.expect_list("`(define (problem ...) ...)`")?;
    if top.head() != Some("define") || items.len() < 2 || items[1].head() != Some("problem") {
        return Err(SyntaxError::new(top.pos(), "expected `(define (problem <name>) ...)`").into());
    }
    let name = items[1].as_list().unwrap().get(1).map(|n| n.expect_atom("a problem name")).transpose()?;
    let mut objects: Vec<(String, String)> = domain.constants.clone();
    let mut init_e = None;
    let mut goal_e = None;
    for section in &items[2..] {
        let sec = section.expect_list("a problem section")?;
        match section.head() {
            Some(":domain") => {
                let dname = sec.get(1).map(|d| d.expect_atom("a domain name")).transpose()?.unwrap_or("");
                if dname != domain.name {
                    return Err(PddlError::DomainMismatch { expected: domain.name.clone(), found: dname.to_string() });
                }
            }
            Some(":requirements") => check_requirements(&sec[1..])?,
            Some(":objects") => {
                for (o, t) in typed_list(&sec[1..], false)? {
                    if !domain.has_type(&t) {
                        return Err(PddlError::UnknownType(t, section.pos()));
                    }
                    if !objects.iter().any(|(n, _)| *n == o) {
                        objects.push((o, t));
                    }
                }
            }
            Some(":init") => init_e = Some(&sec[1..]),
            Some(":goal") => goal_e = Some(sec.get(1).ok_or_else(|| SyntaxError::new(section.pos(), "empty goal"))?),
            _ => return Err(unsupported(section)),
        }
    }
    let types: HashMap<&str, &str> = objects.iter().map(|(n, t)| (n.as_str(), t.as_str())).collect();
    let ground = |e: &Sexpr| -> Result<GroundAtomSpec> {
        let l = e.expect_list("a ground atom")?;
        let pname = l
            .first()
            .ok_or_else(|| SyntaxError::new(e.pos(), "empty atom"))?
            .expect_atom("a predicate name")?;
        if matches!(pname, "and" | "or" | "not" | "forall" | "exists" | "=") {
            return Err(unsupported(e));
        }
        let predicate = domain
            .predicate_index(pname)
            .ok_or_else(|| PddlError::UnknownPredicate(pname.to_string(), e.pos()))?;
        let decl = &domain.predicates[predicate];
        if decl.arity() != l.len() - 1 {
            return Err(PddlError::ArityMismatch {
                name: pname.to_string(),
                expected: decl.arity(),
                found: l.len() - 1,
                pos: e.pos(),
            });
        }
        let mut args = Vec::new();
        for (k, a) in l[1..].iter().enumerate() {
            let o = a.expect_atom("an object")?;
            let ty = types.get(o).ok_or_else(|| PddlError::UnknownObject(o.to_string(), a.pos()))?;
            if !domain.is_subtype(ty, &decl.params[k]) {
                return Err(PddlError::TypeMismatch {
                    object: o.to_string(),
                    expected: decl.params[k].clone(),
                    found: ty.to_string(),
                    pos: a.pos(),
                });
            }
            args.push(o.to_string());
        }
        Ok(GroundAtomSpec { predicate, args })
    };
    let mut init = Vec::new();
    let mut seen = HashSet::new();
    for a in init_e.unwrap_or(&[]) {
        let g = ground(a)?;
        if seen.insert(g.clone()) {
            init.push(g);
        }
    }
    let mut goal = Vec::new();
    if let Some(g) = goal_e {
        for c in conjuncts(g)? {
            if c.head() == Some("not") {
                let l = c.as_list().unwrap();
                if l.len() != 2 {
                    return Err(unsupported(c));
                }
                goal.push((false, ground(&l[1])?));
            } else {
                goal.push((true, ground(c)?));
            }
        }
    }
    Ok(Problem { name: name.unwrap_or_default().to_string(), domain: domain.clone(), objects, init, goal })
}
