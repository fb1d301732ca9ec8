//! Description-logic features: concepts (object sets), roles (object-pair sets),
//! and the Boolean and numerical features built on them.
//!
//! Features are parsed into name-based expression trees, then compiled against a
//! [`GroundProblem`] (predicates, objects, registers and module arguments resolved
//! to indices) before evaluation.

use std::collections::BTreeSet;
use std::fmt;

use fixedbitset::FixedBitSet;
use thiserror::Error;

use crate::ground::{GroundProblem, ObjId, State};
use crate::sexpr::{self, Pos, Sexpr, SyntaxError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("type error at {pos}: {msg}")]
    Type { pos: Pos, msg: String },
    #[error("unknown register `{0}` at {1}")]
    UnknownRegister(String, Pos),
    #[error("unknown feature `{0}` at {1}")]
    UnknownFeature(String, Pos),
    #[error("unknown module argument `{0}` at {1}")]
    UnknownArg(String, Pos),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("predicate `{pred}` has arity {arity}; position {position} is out of range")]
    BadPosition { pred: String, position: usize, arity: usize },
    #[error("role positions of `{0}` must differ")]
    SamePositions(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Bool,
    Num,
    Concept,
    Role,
}

impl Kind {
    pub fn keyword(self) -> &'static str {
        match self {
            Kind::Bool => "bool",
            Kind::Num => "num",
            Kind::Concept => "concept",
            Kind::Role => "role",
        }
    }

    /// True for kinds whose value has a cardinality (`eq`/`gt`, `dec`/`inc`).
    pub fn is_numeric(self) -> bool {
        !matches!(self, Kind::Bool)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Concept {
    Primitive(String, usize),
    Goal(String, usize),
    Top,
    Bot,
    Nominal(String),
    Register(String),
    Arg(String),
    Not(Box<Concept>),
    And(Box<Concept>, Box<Concept>),
    Or(Box<Concept>, Box<Concept>),
    Some(Box<Role>, Box<Concept>),
    All(Box<Role>, Box<Concept>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    Primitive(String, usize, usize),
    Goal(String, usize, usize),
    Arg(String),
    Inverse(Box<Role>),
    And(Box<Role>, Box<Role>),
    Compose(Box<Role>, Box<Role>),
    Tc(Box<Role>),
    Rtc(Box<Role>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BoolExpr {
    NonemptyC(Concept),
    NonemptyR(Role),
    Not(Box<BoolExpr>),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NumExpr {
    CountC(Concept),
    CountR(Role),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Bool(BoolExpr),
    Num(NumExpr),
    Concept(Concept),
    Role(Role),
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::Bool(_) => Kind::Bool,
            Body::Num(_) => Kind::Num,
            Body::Concept(_) => Kind::Concept,
            Body::Role(_) => Kind::Role,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feature {
    pub name: String,
    pub body: Body,
}

impl Feature {
    pub fn kind(&self) -> Kind {
        self.body.kind()
    }

    /// Registers the feature refers to.
    pub fn registers(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut v = |c: &Concept| {
            if let Concept::Register(r) = c {
                out.insert(r.clone());
            }
        };
        match &self.body {
            Body::Bool(b) => walk_bool(b, &mut v),
            Body::Num(NumExpr::CountC(c)) | Body::Concept(c) => walk_concept(c, &mut v),
            Body::Num(NumExpr::CountR(_)) | Body::Role(_) => {}
        }
        out
    }
}

fn walk_concept(c: &Concept, f: &mut impl FnMut(&Concept)) {
    f(c);
    match c {
        Concept::Not(a) => walk_concept(a, f),
        Concept::And(a, b) | Concept::Or(a, b) => {
            walk_concept(a, f);
            walk_concept(b, f);
        }
        // roles never mention registers, only concepts do
        Concept::Some(_, a) | Concept::All(_, a) => walk_concept(a, f),
        _ => {}
    }
}

fn walk_bool(b: &BoolExpr, f: &mut impl FnMut(&Concept)) {
    match b {
        BoolExpr::NonemptyC(c) => walk_concept(c, f),
        BoolExpr::NonemptyR(_) => {}
        BoolExpr::Not(a) => walk_bool(a, f),
        BoolExpr::And(a, b) | BoolExpr::Or(a, b) => {
            walk_bool(a, f);
            walk_bool(b, f);
        }
    }
}

// ---------------------------------------------------------------------------
// printing

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Concept::Primitive(p, i) => write!(f, "(primitive {p} {i})"),
            Concept::Goal(p, i) => write!(f, "(goal {p} {i})"),
            Concept::Top => f.write_str("top"),
            Concept::Bot => f.write_str("bot"),
            Concept::Nominal(o) => write!(f, "(nominal {o})"),
            Concept::Register(r) => write!(f, "(register {r})"),
            Concept::Arg(a) => write!(f, "(arg {a})"),
            Concept::Not(c) => write!(f, "(not {c})"),
            Concept::And(a, b) => write!(f, "(and {a} {b})"),
            Concept::Or(a, b) => write!(f, "(or {a} {b})"),
            Concept::Some(r, c) => write!(f, "(some {r} {c})"),
            Concept::All(r, c) => write!(f, "(all {r} {c})"),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Primitive(p, i, j) => write!(f, "(primitive {p} {i} {j})"),
            Role::Goal(p, i, j) => write!(f, "(goal {p} {i} {j})"),
            Role::Arg(a) => write!(f, "(arg {a})"),
            Role::Inverse(r) => write!(f, "(inverse {r})"),
            Role::And(a, b) => write!(f, "(and {a} {b})"),
            Role::Compose(a, b) => write!(f, "(compose {a} {b})"),
            Role::Tc(r) => write!(f, "(tc {r})"),
            Role::Rtc(r) => write!(f, "(rtc {r})"),
        }
    }
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoolExpr::NonemptyC(c) => write!(f, "(nonempty {c})"),
            BoolExpr::NonemptyR(r) => write!(f, "(nonempty {r})"),
            BoolExpr::Not(b) => write!(f, "(bnot {b})"),
            BoolExpr::And(a, b) => write!(f, "(band {a} {b})"),
            BoolExpr::Or(a, b) => write!(f, "(bor {a} {b})"),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kw = self.kind().keyword();
        match &self.body {
            Body::Bool(b) => write!(f, "({kw} {} {b})", self.name),
            Body::Num(NumExpr::CountC(c)) => write!(f, "({kw} {} (count {c}))", self.name),
            Body::Num(NumExpr::CountR(r)) => write!(f, "({kw} {} (count {r}))", self.name),
            Body::Concept(c) => write!(f, "({kw} {} {c})", self.name),
            Body::Role(r) => write!(f, "({kw} {} {r})", self.name),
        }
    }
}

// ---------------------------------------------------------------------------
// parsing

/// Names visible while parsing a feature definition.
#[derive(Debug, Clone, Default)]
pub struct Scope<'a> {
    /// Declared registers; `None` accepts any register name.
    pub registers: Option<&'a [String]>,
    /// Module arguments with their kinds.
    pub args: &'a [(String, Kind)],
    /// Earlier definitions that `(ref F)` may inline (concepts and roles only).
    pub defs: &'a [Feature],
}

enum Expr {
    C(Concept),
    R(Role),
}

fn type_err(e: &Sexpr, msg: impl Into<String>) -> FeatureError {
    FeatureError::Type { pos: e.pos(), msg: msg.into() }
}

fn index(e: &Sexpr) -> Result<usize, FeatureError> {
    let a = e.expect_atom("a position")?;
    a.parse().map_err(|_| type_err(e, format!("expected a position, found `{a}`")))
}

impl Scope<'_> {
    fn expr(&self, e: &Sexpr) -> Result<Expr, FeatureError> {
        if let Some(a) = e.as_atom() {
            return match a {
                "top" => Ok(Expr::C(Concept::Top)),
                "bot" => Ok(Expr::C(Concept::Bot)),
                _ => Err(type_err(e, format!("expected a concept or role, found `{a}`"))),
            };
        }
        let items = e.as_list().unwrap();
        let head = e.head().ok_or_else(|| type_err(e, "expected a constructor"))?;
        let arg = |i: usize| items.get(i).ok_or_else(|| type_err(e, format!("`{head}` needs more arguments")));
        let arity = |n: usize| {
            if items.len() == n + 1 {
                Ok(())
            } else {
                Err(type_err(e, format!("`{head}` takes {n} arguments")))
            }
        };
        match head {
            "primitive" | "goal" => {
                let pred = arg(1)?.expect_atom("a predicate name")?.to_string();
                match items.len() {
                    3 => {
                        let i = index(&items[2])?;
                        Ok(Expr::C(if head == "goal" { Concept::Goal(pred, i) } else { Concept::Primitive(pred, i) }))
                    }
                    4 => {
                        let (i, j) = (index(&items[2])?, index(&items[3])?);
                        if i == j {
                            return Err(type_err(e, "role positions must differ"));
                        }
                        Ok(Expr::R(if head == "goal" { Role::Goal(pred, i, j) } else { Role::Primitive(pred, i, j) }))
                    }
                    _ => Err(type_err(e, format!("`{head}` takes a predicate and one or two positions"))),
                }
            }
            "nominal" => {
                arity(1)?;
                Ok(Expr::C(Concept::Nominal(items[1].expect_atom("an object name")?.to_string())))
            }
            "register" => {
                arity(1)?;
                let r = items[1].expect_atom("a register name")?;
                if let Some(regs) = self.registers {
                    if !regs.iter().any(|x| x == r) {
                        return Err(FeatureError::UnknownRegister(r.to_string(), items[1].pos()));
                    }
                }
                Ok(Expr::C(Concept::Register(r.to_string())))
            }
            "arg" => {
                arity(1)?;
                let a = items[1].expect_atom("an argument name")?;
                match self.args.iter().find(|(n, _)| n == a) {
                    Some((_, Kind::Role)) => Ok(Expr::R(Role::Arg(a.to_string()))),
                    Some(_) => Ok(Expr::C(Concept::Arg(a.to_string()))),
                    None => Err(FeatureError::UnknownArg(a.to_string(), items[1].pos())),
                }
            }
            "ref" => {
                arity(1)?;
                let name = items[1].expect_atom("a feature name")?;
                match self.defs.iter().rev().find(|f| f.name == name).map(|f| &f.body) {
                    Some(Body::Concept(c)) => Ok(Expr::C(c.clone())),
                    Some(Body::Role(r)) => Ok(Expr::R(r.clone())),
                    Some(_) => Err(type_err(e, format!("`{name}` is not a concept or role"))),
                    None => Err(FeatureError::UnknownFeature(name.to_string(), items[1].pos())),
                }
            }
            "not" => {
                arity(1)?;
                Ok(Expr::C(Concept::Not(Box::new(self.concept(&items[1])?))))
            }
            "and" | "or" => {
                arity(2)?;
                match (self.expr(&items[1])?, self.expr(&items[2])?) {
                    (Expr::C(a), Expr::C(b)) => Ok(Expr::C(if head == "and" {
                        Concept::And(Box::new(a), Box::new(b))
                    } else {
                        Concept::Or(Box::new(a), Box::new(b))
                    })),
                    (Expr::R(a), Expr::R(b)) if head == "and" => Ok(Expr::R(Role::And(Box::new(a), Box::new(b)))),
                    _ => Err(type_err(e, format!("operands of `{head}` have incompatible kinds"))),
                }
            }
            "some" | "all" => {
                arity(2)?;
                let r = Box::new(self.role(&items[1])?);
                let c = Box::new(self.concept(&items[2])?);
                Ok(Expr::C(if head == "some" { Concept::Some(r, c) } else { Concept::All(r, c) }))
            }
            "inverse" | "tc" | "rtc" => {
                arity(1)?;
                let r = Box::new(self.role(&items[1])?);
                Ok(Expr::R(match head {
                    "inverse" => Role::Inverse(r),
                    "tc" => Role::Tc(r),
                    _ => Role::Rtc(r),
                }))
            }
            "compose" => {
                arity(2)?;
                Ok(Expr::R(Role::Compose(Box::new(self.role(&items[1])?), Box::new(self.role(&items[2])?))))
            }
            _ => Err(type_err(e, format!("unknown constructor `{head}`"))),
        }
    }

    pub fn concept(&self, e: &Sexpr) -> Result<Concept, FeatureError> {
        match self.expr(e)? {
            Expr::C(c) => Ok(c),
            Expr::R(_) => Err(type_err(e, "expected a concept, found a role")),
        }
    }

    pub fn role(&self, e: &Sexpr) -> Result<Role, FeatureError> {
        match self.expr(e)? {
            Expr::R(r) => Ok(r),
            Expr::C(_) => Err(type_err(e, "expected a role, found a concept")),
        }
    }

    fn boolean(&self, e: &Sexpr) -> Result<BoolExpr, FeatureError> {
        let items = e.expect_list("a Boolean expression")?;
        let head = e.head().unwrap_or("");
        let want = |n: usize| {
            if items.len() == n + 1 {
                Ok(())
            } else {
                Err(type_err(e, format!("`{head}` takes {n} arguments")))
            }
        };
        match head {
            "nonempty" => {
                want(1)?;
                Ok(match self.expr(&items[1])? {
                    Expr::C(c) => BoolExpr::NonemptyC(c),
                    Expr::R(r) => BoolExpr::NonemptyR(r),
                })
            }
            "bnot" => {
                want(1)?;
                Ok(BoolExpr::Not(Box::new(self.boolean(&items[1])?)))
            }
            "band" | "bor" => {
                want(2)?;
                let a = Box::new(self.boolean(&items[1])?);
                let b = Box::new(self.boolean(&items[2])?);
                Ok(if head == "band" { BoolExpr::And(a, b) } else { BoolExpr::Or(a, b) })
            }
            _ => Err(type_err(e, format!("expected nonempty/bnot/band/bor, found `{head}`"))),
        }
    }

    /// Parses `(bool|num|concept|role <name> <expr>)`.
    pub fn feature(&self, e: &Sexpr) -> Result<Feature, FeatureError> {
        let items = e.expect_list("a feature definition")?;
        if items.len() != 3 {
            return Err(type_err(e, "expected `(<kind> <name> <expression>)`"));
        }
        let name = items[1].expect_atom("a feature name")?.to_string();
        let body = &items[2];
        let body = match e.head() {
            Some("bool") => Body::Bool(self.boolean(body)?),
            Some("num") => {
                if body.head() != Some("count") || body.as_list().map(|l| l.len()) != Some(2) {
                    return Err(type_err(body, "numerical features take the form `(count <concept|role>)`"));
                }
                Body::Num(match self.expr(&body.as_list().unwrap()[1])? {
                    Expr::C(c) => NumExpr::CountC(c),
                    Expr::R(r) => NumExpr::CountR(r),
                })
            }
            Some("concept") => Body::Concept(self.concept(body)?),
            Some("role") => Body::Role(self.role(body)?),
            _ => return Err(type_err(e, "feature kind must be bool, num, concept or role")),
        };
        Ok(Feature { name, body })
    }
}

/// Parses a single feature definition; any register name is accepted.
pub fn parse_feature(text: &str) -> Result<Feature, FeatureError> {
    Scope::default().feature(&sexpr::parse_one(text)?)
}

// ---------------------------------------------------------------------------
// denotations

pub type ObjSet = FixedBitSet;

/// A binary relation over objects as a row-per-object adjacency matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Relation {
    rows: Vec<FixedBitSet>,
}

impl Relation {
    pub fn empty(n: usize) -> Self {
        Relation { rows: vec![FixedBitSet::with_capacity(n); n] }
    }

    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (ObjId, ObjId)>) -> Self {
        let mut r = Relation::empty(n);
        for (x, y) in pairs {
            r.insert(x, y);
        }
        r
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn insert(&mut self, x: ObjId, y: ObjId) {
        self.rows[x].insert(y);
    }

    pub fn contains(&self, x: ObjId, y: ObjId) -> bool {
        self.rows[x].contains(y)
    }

    pub fn row(&self, x: ObjId) -> &FixedBitSet {
        &self.rows[x]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (ObjId, ObjId)> + '_ {
        self.rows.iter().enumerate().flat_map(|(x, row)| row.ones().map(move |y| (x, y)))
    }

    pub fn count(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones(..)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|r| r.is_clear())
    }

    pub fn inverse(&self) -> Self {
        Relation::from_pairs(self.size(), self.pairs().map(|(x, y)| (y, x)))
    }

    pub fn intersect(&mut self, other: &Relation) {
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            a.intersect_with(b);
        }
    }

    pub fn compose(&self, other: &Relation) -> Self {
        let mut out = Relation::empty(self.size());
        for x in 0..self.size() {
            for y in self.rows[x].ones() {
                out.rows[x].union_with(&other.rows[y]);
            }
        }
        out
    }

    /// Transitive closure (Warshall).
    pub fn transitive_closure(&self) -> Self {
        let mut out = self.clone();
        for k in 0..out.size() {
            let row_k = out.rows[k].clone();
            for x in 0..out.size() {
                if out.rows[x].contains(k) {
                    out.rows[x].union_with(&row_k);
                }
            }
        }
        out
    }

    /// `{x | ∃y. (x, y) ∈ self ∧ y ∈ c}`
    pub fn some(&self, c: &ObjSet) -> ObjSet {
        let mut out = FixedBitSet::with_capacity(self.size());
        for (x, row) in self.rows.iter().enumerate() {
            if !row.is_disjoint(c) {
                out.insert(x);
            }
        }
        out
    }

    /// `{x | ∀y. (x, y) ∈ self → y ∈ c}`
    pub fn all(&self, c: &ObjSet) -> ObjSet {
        let mut out = FixedBitSet::with_capacity(self.size());
        for (x, row) in self.rows.iter().enumerate() {
            if row.is_subset(c) {
                out.insert(x);
            }
        }
        out
    }
}

/// The value of a feature in a state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Bool(bool),
    Num(usize),
    Concept(ObjSet),
    Role(Relation),
}

impl Value {
    /// Truth for Booleans; cardinality for everything else.
    pub fn magnitude(&self) -> usize {
        match self {
            Value::Bool(b) => *b as usize,
            Value::Num(n) => *n,
            Value::Concept(c) => c.count_ones(..),
            Value::Role(r) => r.count(),
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            Value::Bool(b) => *b,
            Value::Num(n) => *n > 0,
            Value::Concept(c) => !c.is_clear(),
            Value::Role(r) => !r.is_empty(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Num(n) => write!(f, "{n}"),
            Value::Concept(c) => write!(f, "|{}|", c.count_ones(..)),
            Value::Role(r) => write!(f, "|{}|", r.count()),
        }
    }
}

/// A module argument bound at call time.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ArgValue {
    Concept(ObjSet),
    Role(Relation),
}

// ---------------------------------------------------------------------------
// compiled form

#[derive(Debug, Clone)]
enum CConcept {
    /// atoms of a predicate, projected on a position
    Proj(Option<usize>, usize),
    Top,
    Bot,
    Nominal(ObjId),
    Register(usize),
    Arg(usize),
    Not(Box<CConcept>),
    And(Box<CConcept>, Box<CConcept>),
    Or(Box<CConcept>, Box<CConcept>),
    Some(Box<CRole>, Box<CConcept>),
    All(Box<CRole>, Box<CConcept>),
}

#[derive(Debug, Clone)]
enum CRole {
    Proj(Option<usize>, usize, usize),
    Arg(usize),
    Inverse(Box<CRole>),
    And(Box<CRole>, Box<CRole>),
    Compose(Box<CRole>, Box<CRole>),
    Tc(Box<CRole>),
    Rtc(Box<CRole>),
}

#[derive(Debug, Clone)]
enum CBool {
    NonemptyC(CConcept),
    NonemptyR(CRole),
    Not(Box<CBool>),
    And(Box<CBool>, Box<CBool>),
    Or(Box<CBool>, Box<CBool>),
}

#[derive(Debug, Clone)]
enum CBody {
    Bool(CBool),
    CountC(CConcept),
    CountR(CRole),
    Concept(CConcept),
    Role(CRole),
}

/// A feature resolved against a ground problem, ready for evaluation.
#[derive(Debug, Clone)]
pub struct CompiledFeature {
    pub name: String,
    pub kind: Kind,
    /// Indices of the registers the feature depends on.
    pub registers: Vec<usize>,
    body: CBody,
}

/// Everything a feature may read: the planning state, register contents, and
/// the current module's argument bindings. Unassigned registers denote ∅.
#[derive(Debug, Clone, Copy)]
pub struct EvalCtx<'a> {
    pub problem: &'a GroundProblem,
    pub state: &'a State,
    pub registers: &'a [Option<ObjId>],
    pub args: &'a [ArgValue],
}

struct Compiler<'a> {
    gp: &'a GroundProblem,
    registers: &'a [String],
    args: &'a [String],
}

impl Compiler<'_> {
    fn predicate(&self, name: &str, positions: &[usize], goal: bool) -> Result<Option<usize>, FeatureError> {
        let p = self.gp.predicate_id(name).ok_or_else(|| FeatureError::UnknownPredicate(name.to_string()))?;
        if self.gp.predicates[p].goal_copy_of.is_some() {
            return Err(FeatureError::UnknownPredicate(name.to_string()));
        }
        let arity = self.gp.predicates[p].arity;
        for &position in positions {
            if position >= arity {
                return Err(FeatureError::BadPosition { pred: name.to_string(), position, arity });
            }
        }
        if positions.len() == 2 && positions[0] == positions[1] {
            return Err(FeatureError::SamePositions(name.to_string()));
        }
        Ok(if goal { self.gp.goal_predicate(p) } else { Some(p) })
    }

    fn register(&self, r: &str) -> Result<usize, FeatureError> {
        self.registers
            .iter()
            .position(|x| x == r)
            .ok_or_else(|| FeatureError::UnknownRegister(r.to_string(), Pos::default()))
    }

    fn arg(&self, a: &str) -> Result<usize, FeatureError> {
        self.args.iter().position(|x| x == a).ok_or_else(|| FeatureError::UnknownArg(a.to_string(), Pos::default()))
    }

    fn concept(&self, c: &Concept) -> Result<CConcept, FeatureError> {
        Ok(match c {
            Concept::Primitive(p, i) => CConcept::Proj(self.predicate(p, &[*i], false)?, *i),
            Concept::Goal(p, i) => CConcept::Proj(self.predicate(p, &[*i], true)?, *i),
            Concept::Top => CConcept::Top,
            Concept::Bot => CConcept::Bot,
            Concept::Nominal(o) => {
                CConcept::Nominal(self.gp.object_id(o).ok_or_else(|| FeatureError::UnknownObject(o.clone()))?)
            }
            Concept::Register(r) => CConcept::Register(self.register(r)?),
            Concept::Arg(a) => CConcept::Arg(self.arg(a)?),
            Concept::Not(a) => CConcept::Not(Box::new(self.concept(a)?)),
            Concept::And(a, b) => CConcept::And(Box::new(self.concept(a)?), Box::new(self.concept(b)?)),
            Concept::Or(a, b) => CConcept::Or(Box::new(self.concept(a)?), Box::new(self.concept(b)?)),
            Concept::Some(r, a) => CConcept::Some(Box::new(self.role(r)?), Box::new(self.concept(a)?)),
            Concept::All(r, a) => CConcept::All(Box::new(self.role(r)?), Box::new(self.concept(a)?)),
        })
    }

    fn role(&self, r: &Role) -> Result<CRole, FeatureError> {
        Ok(match r {
            Role::Primitive(p, i, j) => CRole::Proj(self.predicate(p, &[*i, *j], false)?, *i, *j),
            Role::Goal(p, i, j) => CRole::Proj(self.predicate(p, &[*i, *j], true)?, *i, *j),
            Role::Arg(a) => CRole::Arg(self.arg(a)?),
            Role::Inverse(a) => CRole::Inverse(Box::new(self.role(a)?)),
            Role::And(a, b) => CRole::And(Box::new(self.role(a)?), Box::new(self.role(b)?)),
            Role::Compose(a, b) => CRole::Compose(Box::new(self.role(a)?), Box::new(self.role(b)?)),
            Role::Tc(a) => CRole::Tc(Box::new(self.role(a)?)),
            Role::Rtc(a) => CRole::Rtc(Box::new(self.role(a)?)),
        })
    }

    fn boolean(&self, b: &BoolExpr) -> Result<CBool, FeatureError> {
        Ok(match b {
            BoolExpr::NonemptyC(c) => CBool::NonemptyC(self.concept(c)?),
            BoolExpr::NonemptyR(r) => CBool::NonemptyR(self.role(r)?),
            BoolExpr::Not(a) => CBool::Not(Box::new(self.boolean(a)?)),
            BoolExpr::And(a, b) => CBool::And(Box::new(self.boolean(a)?), Box::new(self.boolean(b)?)),
            BoolExpr::Or(a, b) => CBool::Or(Box::new(self.boolean(a)?), Box::new(self.boolean(b)?)),
        })
    }
}

impl Feature {
    /// Resolves names against `gp`; `registers` and `args` give the index order
    /// used by [`EvalCtx`].
    pub fn compile(
        &self,
        gp: &GroundProblem,
        registers: &[String],
        args: &[String],
    ) -> Result<CompiledFeature, FeatureError> {
        let c = Compiler { gp, registers, args };
        let body = match &self.body {
            Body::Bool(b) => CBody::Bool(c.boolean(b)?),
            Body::Num(NumExpr::CountC(x)) => CBody::CountC(c.concept(x)?),
            Body::Num(NumExpr::CountR(x)) => CBody::CountR(c.role(x)?),
            Body::Concept(x) => CBody::Concept(c.concept(x)?),
            Body::Role(x) => CBody::Role(c.role(x)?),
        };
        let registers = self.registers().iter().map(|r| c.register(r)).collect::<Result<_, _>>()?;
        Ok(CompiledFeature { name: self.name.clone(), kind: self.kind(), registers, body })
    }
}

impl EvalCtx<'_> {
    fn n(&self) -> usize {
        self.problem.objects.len()
    }

    fn concept(&self, c: &CConcept) -> ObjSet {
        let n = self.n();
        match c {
            CConcept::Proj(pred, i) => {
                let mut out = FixedBitSet::with_capacity(n);
                if let Some(p) = pred {
                    for &a in &self.problem.atoms_by_predicate[*p] {
                        if self.state.contains(a) {
                            out.insert(self.problem.atoms[a].1[*i]);
                        }
                    }
                }
                out
            }
            CConcept::Top => {
                let mut out = FixedBitSet::with_capacity(n);
                out.insert_range(..);
                out
            }
            CConcept::Bot => FixedBitSet::with_capacity(n),
            CConcept::Nominal(o) => {
                let mut out = FixedBitSet::with_capacity(n);
                out.insert(*o);
                out
            }
            CConcept::Register(r) => {
                let mut out = FixedBitSet::with_capacity(n);
                if let Some(Some(o)) = self.registers.get(*r) {
                    out.insert(*o);
                }
                out
            }
            CConcept::Arg(a) => match &self.args[*a] {
                ArgValue::Concept(c) => c.clone(),
                ArgValue::Role(_) => FixedBitSet::with_capacity(n),
            },
            CConcept::Not(a) => {
                let mut out = self.concept(a);
                out.toggle_range(..);
                out
            }
            CConcept::And(a, b) => {
                let mut out = self.concept(a);
                out.intersect_with(&self.concept(b));
                out
            }
            CConcept::Or(a, b) => {
                let mut out = self.concept(a);
                out.union_with(&self.concept(b));
                out
            }
            CConcept::Some(r, a) => self.role(r).some(&self.concept(a)),
            CConcept::All(r, a) => self.role(r).all(&self.concept(a)),
        }
    }

    fn role(&self, r: &CRole) -> Relation {
        let n = self.n();
        match r {
            CRole::Proj(pred, i, j) => {
                let mut out = Relation::empty(n);
                if let Some(p) = pred {
                    for &a in &self.problem.atoms_by_predicate[*p] {
                        if self.state.contains(a) {
                            let args = &self.problem.atoms[a].1;
                            out.insert(args[*i], args[*j]);
                        }
                    }
                }
                out
            }
            CRole::Arg(a) => match &self.args[*a] {
                ArgValue::Role(r) => r.clone(),
                ArgValue::Concept(_) => Relation::empty(n),
            },
            CRole::Inverse(a) => self.role(a).inverse(),
            CRole::And(a, b) => {
                let mut out = self.role(a);
                out.intersect(&self.role(b));
                out
            }
            CRole::Compose(a, b) => self.role(a).compose(&self.role(b)),
            CRole::Tc(a) => self.role(a).transitive_closure(),
            CRole::Rtc(a) => {
                let mut out = self.role(a).transitive_closure();
                for x in 0..n {
                    out.insert(x, x);
                }
                out
            }
        }
    }

    fn boolean(&self, b: &CBool) -> bool {
        match b {
            CBool::NonemptyC(c) => !self.concept(c).is_clear(),
            CBool::NonemptyR(r) => !self.role(r).is_empty(),
            CBool::Not(a) => !self.boolean(a),
            CBool::And(a, b) => self.boolean(a) && self.boolean(b),
            CBool::Or(a, b) => self.boolean(a) || self.boolean(b),
        }
    }
}

impl CompiledFeature {
    pub fn eval(&self, ctx: &EvalCtx<'_>) -> Value {
        match &self.body {
            CBody::Bool(b) => Value::Bool(ctx.boolean(b)),
            CBody::CountC(c) => Value::Num(ctx.concept(c).count_ones(..)),
            CBody::CountR(r) => Value::Num(ctx.role(r).count()),
            CBody::Concept(c) => Value::Concept(ctx.concept(c)),
            CBody::Role(r) => Value::Role(ctx.role(r)),
        }
    }

    /// Denotation of a concept feature; empty for other kinds.
    pub fn eval_concept(&self, ctx: &EvalCtx<'_>) -> ObjSet {
        match &self.body {
            CBody::Concept(c) => ctx.concept(c),
            _ => FixedBitSet::with_capacity(ctx.n()),
        }
    }

    /// Denotation of a concept or role feature, as a call argument.
    pub fn eval_arg(&self, ctx: &EvalCtx<'_>) -> Option<ArgValue> {
        match &self.body {
            CBody::Concept(c) => Some(ArgValue::Concept(ctx.concept(c))),
            CBody::Role(r) => Some(ArgValue::Role(ctx.role(r))),
            _ => None,
        }
    }
}

/// Compiles and evaluates a concept expression.
pub fn eval_concept(
    c: &Concept,
    gp: &GroundProblem,
    s: &State,
    registers: &[String],
    v: &[Option<ObjId>],
) -> Result<ObjSet, FeatureError> {
    let f = Feature { name: String::new(), body: Body::Concept(c.clone()) }.compile(gp, registers, &[])?;
    Ok(f.eval_concept(&EvalCtx { problem: gp, state: s, registers: v, args: &[] }))
}

/// Compiles and evaluates a role expression.
pub fn eval_role(
    r: &Role,
    gp: &GroundProblem,
    s: &State,
    registers: &[String],
    v: &[Option<ObjId>],
) -> Result<Relation, FeatureError> {
    let f = Feature { name: String::new(), body: Body::Role(r.clone()) }.compile(gp, registers, &[])?;
    match f.eval(&EvalCtx { problem: gp, state: s, registers: v, args: &[] }) {
        Value::Role(r) => Ok(r),
        _ => unreachable!("role feature evaluates to a role"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn set(gp: &GroundProblem, names: &[&str]) -> ObjSet {
        let mut s = FixedBitSet::with_capacity(gp.objects.len());
        for n in names {
            s.insert(gp.object_id(n).unwrap());
        }
        s
    }

    #[test]
    fn parses_kinds_and_dependencies() {
        let h = parse_feature("(bool H (nonempty (primitive holding 0)))").unwrap();
        assert_eq!(h.kind(), Kind::Bool);
        assert!(h.registers().is_empty());
        let t0 = parse_feature("(concept T0 (some (primitive on 0 1) (register r0)))").unwrap();
        assert_eq!(t0.kind(), Kind::Concept);
        assert_eq!(t0.registers().into_iter().collect::<Vec<_>>(), ["r0"]);
        let a = parse_feature("(bool A (nonempty (and (register r1) (some (tc (primitive on 0 1)) (primitive clear 0)))))")
            .unwrap();
        assert_eq!(a.registers().into_iter().collect::<Vec<_>>(), ["r1"]);
    }

    #[test]
    fn type_errors() {
        assert!(matches!(
            parse_feature("(concept c (some (primitive clear 0) (primitive clear 0)))"),
            Err(FeatureError::Type { .. })
        ));
        assert!(matches!(parse_feature("(num n (count (and (primitive clear 0))))"), Err(FeatureError::Type { .. })));
        assert!(matches!(
            parse_feature("(concept c (and (primitive clear 0) (primitive on 0 1)))"),
            Err(FeatureError::Type { .. })
        ));
        assert!(parse_feature("(role r (primitive on 0 0))").is_err());
        let regs = ["r0".to_string()];
        let scope = Scope { registers: Some(&regs), ..Scope::default() };
        let e = sexpr::parse_one("(concept c (register r9))").unwrap();
        assert!(matches!(scope.feature(&e), Err(FeatureError::UnknownRegister(..))));
    }

    #[test]
    fn refs_inline_earlier_definitions() {
        let xy = parse_feature("(concept xy (or (goal on 0) (goal on 1)))").unwrap();
        let defs = [xy.clone()];
        let scope = Scope { defs: &defs, ..Scope::default() };
        let e = sexpr::parse_one("(concept n (and (ref xy) (not (primitive clear 0))))").unwrap();
        let f = scope.feature(&e).unwrap();
        let Body::Concept(Concept::And(a, _)) = &f.body else { panic!() };
        assert_eq!(Body::Concept((**a).clone()), xy.body);
    }

    #[test]
    fn print_round_trip() {
        for text in [
            "(bool h (band (nonempty (primitive holding 0)) (bnot (nonempty (goal on 0 1)))))",
            "(num n (count (some (tc (primitive on 0 1)) (or (goal on 0) (goal on 1)))))",
            "(concept l (all (inverse (rtc (primitive on 0 1))) (and top (not bot))))",
            "(role r (compose (and (primitive on 0 1) (goal on 0 1)) (primitive on 1 0)))",
        ] {
            let f = parse_feature(text).unwrap();
            assert_eq!(f.to_string(), text);
            assert_eq!(parse_feature(&f.to_string()).unwrap(), f);
        }
    }

    /// Tower b3|b2|x with y on the table; goal on(x, y).
    fn tower() -> (GroundProblem, State) {
        let gp = fixtures::blocks_problem(
            &["b2", "b3", "x", "y"],
            &["(on b3 b2)", "(on b2 x)", "(ontable x)", "(ontable y)", "(clear b3)", "(clear y)", "(handempty)"],
            &["(on x y)"],
        );
        let s = gp.init.clone();
        (gp, s)
    }

    #[test]
    fn concept_examples() {
        let (gp, s) = tower();
        let n = parse_feature("(concept n (and (or (goal on 0) (goal on 1)) (not (primitive clear 0))))").unwrap();
        let Body::Concept(c) = &n.body else { panic!() };
        assert_eq!(eval_concept(c, &gp, &s, &[], &[]).unwrap(), set(&gp, &["x"]));
        let regs = ["r0".to_string()];
        let above = parse_feature("(concept a (some (primitive on 0 1) (register r0)))").unwrap();
        let Body::Concept(c) = &above.body else { panic!() };
        let x = gp.object_id("x");
        assert_eq!(eval_concept(c, &gp, &s, &regs, &[x]).unwrap(), set(&gp, &["b2"]));
        assert_eq!(eval_concept(&Concept::Register("r0".into()), &gp, &s, &regs, &[x]).unwrap(), set(&gp, &["x"]));
        // an unassigned register denotes the empty set
        assert!(eval_concept(&Concept::Register("r0".into()), &gp, &s, &regs, &[None]).unwrap().is_clear());
    }

    #[test]
    fn role_examples() {
        let (gp, s) = tower();
        let on = Role::Primitive("on".into(), 0, 1);
        let id = |n: &str| gp.object_id(n).unwrap();
        let tc = eval_role(&Role::Tc(Box::new(on.clone())), &gp, &s, &[], &[]).unwrap();
        let want: BTreeSet<_> = [("b3", "b2"), ("b2", "x"), ("b3", "x")].iter().map(|(a, b)| (id(a), id(b))).collect();
        assert_eq!(tc.pairs().collect::<BTreeSet<_>>(), want);
        let inv = eval_role(&Role::Inverse(Box::new(on.clone())), &gp, &s, &[], &[]).unwrap();
        assert!(inv.contains(id("b2"), id("b3")));
        let goal_edge = Role::And(Box::new(on), Box::new(Role::Goal("on".into(), 0, 1)));
        assert!(eval_role(&goal_edge, &gp, &s, &[], &[]).unwrap().is_empty());
        let s2 = gp.state_from_atoms(["(on x y)", "(on b3 b2)"]).unwrap();
        let r = eval_role(&goal_edge, &gp, &s2, &[], &[]).unwrap();
        assert_eq!(r.pairs().collect::<Vec<_>>(), [(id("x"), id("y"))]);
    }

    fn eval(gp: &GroundProblem, s: &State, text: &str) -> Value {
        let f = parse_feature(text).unwrap().compile(gp, &[], &[]).unwrap();
        f.eval(&EvalCtx { problem: gp, state: s, registers: &[], args: &[] })
    }

    #[test]
    fn numerical_examples() {
        let (gp, s) = tower();
        let n = "(num n (count (some (tc (primitive on 0 1)) (or (goal on 0) (goal on 1)))))";
        assert_eq!(eval(&gp, &s, n), Value::Num(2));
        assert_eq!(eval(&gp, &s, "(num z (count bot))"), Value::Num(0));
        assert_eq!(eval(&gp, &s, "(num t (count top))"), Value::Num(4));
        assert_eq!(eval(&gp, &s, "(bool e (bnot (nonempty bot)))"), Value::Bool(true));
    }

    #[test]
    fn hanoi_peg_comparisons() {
        let gp = fixtures::hanoi(2);
        let s = gp.init.clone();
        let defs = fixtures::hanoi_features();
        let get = |name: &str| {
            let f = defs.iter().find(|f| f.name == name).unwrap().compile(&gp, &[], &[]).unwrap();
            f.eval(&EvalCtx { problem: &gp, state: &s, registers: &[], args: &[] })
        };
        assert_eq!(get("p12"), Value::Bool(true));
        assert_eq!(get("p13"), Value::Bool(true));
        assert_eq!(get("p23"), Value::Bool(false));
    }

    #[test]
    fn compile_errors() {
        let (gp, _) = tower();
        let f = parse_feature("(concept c (primitive flying 0))").unwrap();
        assert!(matches!(f.compile(&gp, &[], &[]), Err(FeatureError::UnknownPredicate(_))));
        let f = parse_feature("(concept c (primitive clear 1))").unwrap();
        assert!(matches!(f.compile(&gp, &[], &[]), Err(FeatureError::BadPosition { .. })));
        let f = parse_feature("(concept c (nominal zz))").unwrap();
        assert!(matches!(f.compile(&gp, &[], &[]), Err(FeatureError::UnknownObject(_))));
    }
}
