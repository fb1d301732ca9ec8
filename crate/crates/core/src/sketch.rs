//! Sketch and module language: AST, parser, validator, printer, and the
//! compiled form the engines run.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::features::{Body, CompiledFeature, Concept, EvalCtx, Feature, FeatureError, Kind, Role, Scope, Value};
use crate::ground::GroundProblem;
use crate::pddl::Domain;
use crate::sexpr::{self, Pos, Sexpr, SyntaxError};

/// Memory state used for sketches written without `:memory`.
pub const PLAIN_MEMORY: &str = "m0";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cond {
    True(String),
    False(String),
    Eq(String),
    Gt(String),
}

impl Cond {
    pub fn feature(&self) -> &str {
        match self {
            Cond::True(f) | Cond::False(f) | Cond::Eq(f) | Cond::Gt(f) => f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EffectKind {
    SetTrue,
    SetFalse,
    Unk,
    Dec,
    Inc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Effect {
    pub kind: EffectKind,
    pub feature: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuleAction {
    /// Value effects; an empty list is a jump between memory states.
    Effects(Vec<Effect>),
    Load { concept: String, register: String, unk: Vec<String> },
    Call { module: String, args: Vec<String> },
    Do { schema: String, args: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    Value,
    Jump,
    Load,
    Call,
    Do,
}

impl RuleKind {
    pub fn name(self) -> &'static str {
        match self {
            RuleKind::Value => "value",
            RuleKind::Jump => "jump",
            RuleKind::Load => "load",
            RuleKind::Call => "call",
            RuleKind::Do => "do",
        }
    }

    /// Load and jump rules fire at internal memory states; the rest at external ones.
    pub fn is_internal(self) -> bool {
        matches!(self, RuleKind::Jump | RuleKind::Load)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: String,
    pub from: String,
    pub cond: Vec<Cond>,
    pub action: RuleAction,
    pub to: String,
}

impl Rule {
    pub fn kind(&self) -> RuleKind {
        match &self.action {
            RuleAction::Effects(e) if e.is_empty() => RuleKind::Jump,
            RuleAction::Effects(_) => RuleKind::Value,
            RuleAction::Load { .. } => RuleKind::Load,
            RuleAction::Call { .. } => RuleKind::Call,
            RuleAction::Do { .. } => RuleKind::Do,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sketch {
    pub memory: Vec<String>,
    pub internal: Vec<String>,
    pub initial: String,
    pub registers: Vec<String>,
    /// Auxiliary features: usable in conditions, never tracked by effects.
    pub z: Vec<Feature>,
    /// Φ
    pub features: Vec<Feature>,
    pub rules: Vec<Rule>,
    /// Written without memory states.
    pub plain: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Module {
    pub name: String,
    pub args: Vec<(String, Kind)>,
    pub sketch: Sketch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleSet {
    /// The first module is the entry point.
    pub modules: Vec<Module>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub rule: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.rule {
            Some(r) => write!(f, "{sev}: {r}: {}", self.message),
            None => write!(f, "{sev}: {}", self.message),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SketchError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid sketch:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error("module `{module}`: {msg}")]
    Module { module: String, msg: String },
    #[error("compiling feature `{name}`: {source}")]
    Compile { name: String, source: FeatureError },
    #[error("rule {0} is not an external value rule")]
    NotExternal(String),
}

// ---------------------------------------------------------------------------
// parsing

fn atoms(e: &Sexpr, what: &str) -> Result<Vec<String>, SyntaxError> {
    e.expect_list(what)?.iter().map(|a| a.expect_atom(what).map(str::to_string)).collect()
}

fn parse_cond(e: &Sexpr) -> Result<Cond, SyntaxError> {
    if let Some(f) = e.as_atom() {
        return Ok(Cond::True(f.to_string()));
    }
    let items = e.as_list().unwrap();
    if items.len() != 2 {
        return Err(SyntaxError::new(e.pos(), "expected `f`, `(not f)`, `(eq f)` or `(gt f)`"));
    }
    let f = items[1].expect_atom("a feature name")?.to_string();
    match e.head() {
        Some("not") => Ok(Cond::False(f)),
        Some("eq") => Ok(Cond::Eq(f)),
        Some("gt") => Ok(Cond::Gt(f)),
        _ => Err(SyntaxError::new(e.pos(), format!("unknown condition `{e}`"))),
    }
}

fn parse_effect(e: &Sexpr) -> Result<Effect, SyntaxError> {
    if let Some(f) = e.as_atom() {
        return Ok(Effect { kind: EffectKind::SetTrue, feature: f.to_string() });
    }
    let items = e.as_list().unwrap();
    if items.len() != 2 {
        return Err(SyntaxError::new(e.pos(), "expected `f`, `(not f)`, `(unk f)`, `(dec f)` or `(inc f)`"));
    }
    let feature = items[1].expect_atom("a feature name")?.to_string();
    let kind = match e.head() {
        Some("not") => EffectKind::SetFalse,
        Some("unk") => EffectKind::Unk,
        Some("dec") => EffectKind::Dec,
        Some("inc") => EffectKind::Inc,
        _ => return Err(SyntaxError::new(e.pos(), format!("unknown effect `{e}`"))),
    };
    Ok(Effect { kind, feature })
}

fn parse_rule(e: &Sexpr, id: String, plain: bool) -> Result<Rule, SyntaxError> {
    let items = e.expect_list("a rule")?;
    let conds = |x: &Sexpr| -> Result<Vec<Cond>, SyntaxError> {
        x.expect_list("a condition list")?.iter().map(parse_cond).collect()
    };
    let name = |x: &Sexpr| x.expect_atom("a name").map(str::to_string);
    let bad = |msg: &str| SyntaxError::new(e.pos(), msg.to_string());
    match e.head() {
        Some("rule") if items.len() == 3 && plain => {
            let effects = items[2].expect_list("an effect list")?.iter().map(parse_effect).collect::<Result<_, _>>()?;
            Ok(Rule {
                id,
                from: PLAIN_MEMORY.into(),
                cond: conds(&items[1])?,
                action: RuleAction::Effects(effects),
                to: PLAIN_MEMORY.into(),
            })
        }
        Some("rule") => {
            if items.len() != 5 {
                return Err(bad("expected `(rule <m> (<cond>...) (<effect>...) <m'>)`"));
            }
            let effects = items[3].expect_list("an effect list")?.iter().map(parse_effect).collect::<Result<_, _>>()?;
            Ok(Rule {
                id,
                from: name(&items[1])?,
                cond: conds(&items[2])?,
                action: RuleAction::Effects(effects),
                to: name(&items[4])?,
            })
        }
        Some("load-rule") => {
            if items.len() != 5 && items.len() != 6 {
                return Err(bad("expected `(load-rule <m> (<cond>...) (load <concept> <reg>) [(unk f)...] <m'>)`"));
            }
            let load = items[3].expect_list("a load effect")?;
            if items[3].head() != Some("load") || load.len() != 3 {
                return Err(SyntaxError::new(items[3].pos(), "expected `(load <concept> <register>)`"));
            }
            let mut unk = Vec::new();
            if items.len() == 6 {
                for u in items[4].expect_list("a list of uncertain effects")? {
                    let eff = parse_effect(u)?;
                    if eff.kind != EffectKind::Unk {
                        return Err(SyntaxError::new(u.pos(), "load rules may only carry `(unk f)` effects"));
                    }
                    unk.push(eff.feature);
                }
            }
            Ok(Rule {
                id,
                from: name(&items[1])?,
                cond: conds(&items[2])?,
                action: RuleAction::Load { concept: name(&load[1])?, register: name(&load[2])?, unk },
                to: name(&items[items.len() - 1])?,
            })
        }
        Some(kw @ ("call" | "do")) => {
            if items.len() != 6 {
                return Err(bad(&format!("expected `({kw} <m> (<cond>...) <name> (<arg>...) <m'>)`")));
            }
            let target = name(&items[3])?;
            let args = atoms(&items[4], "an argument name")?;
            let action = if kw == "call" {
                RuleAction::Call { module: target, args }
            } else {
                RuleAction::Do { schema: target, args }
            };
            Ok(Rule { id, from: name(&items[1])?, cond: conds(&items[2])?, action, to: name(&items[5])? })
        }
        _ => Err(bad("expected `rule`, `load-rule`, `call` or `do`")),
    }
}

fn parse_features(e: &Sexpr, scope: &Scope<'_>, prior: &mut Vec<Feature>) -> Result<Vec<Feature>, SketchError> {
    let mut out = Vec::new();
    for f in e.expect_list("a feature list")? {
        let feature = Scope { defs: prior, ..scope.clone() }.feature(f)?;
        prior.push(feature.clone());
        out.push(feature);
    }
    Ok(out)
}

/// Parses the keyword body shared by sketches and modules.
fn parse_body(kw: &[(&str, &Sexpr)], args: &[(String, Kind)], pos: Pos) -> Result<Sketch, SketchError> {
    let mut get = HashMap::new();
    for (k, v) in kw {
        if !matches!(*k, ":memory" | ":internal" | ":initial" | ":registers" | ":z" | ":features" | ":rules" | ":args")
        {
            return Err(SyntaxError::new(v.pos(), format!("unknown keyword `{k}`")).into());
        }
        if get.insert(*k, *v).is_some() {
            return Err(SyntaxError::new(v.pos(), format!("duplicate keyword `{k}`")).into());
        }
    }
    let plain = !get.contains_key(":memory");
    let registers = get.get(":registers").map(|e| atoms(e, "a register name")).transpose()?.unwrap_or_default();
    let memory =
        if plain { vec![PLAIN_MEMORY.to_string()] } else { atoms(get[":memory"], "a memory state")? };
    let internal = get.get(":internal").map(|e| atoms(e, "a memory state")).transpose()?.unwrap_or_default();
    let initial = match get.get(":initial") {
        Some(e) => e.expect_atom("a memory state")?.to_string(),
        None => memory.first().cloned().ok_or_else(|| SyntaxError::new(pos, "no memory states declared"))?,
    };
    let scope = Scope { registers: Some(&registers), args, defs: &[] };
    let mut prior = Vec::new();
    let z = get.get(":z").map(|e| parse_features(e, &scope, &mut prior)).transpose()?.unwrap_or_default();
    let features =
        get.get(":features").map(|e| parse_features(e, &scope, &mut prior)).transpose()?.unwrap_or_default();
    let mut rules = Vec::new();
    if let Some(e) = get.get(":rules") {
        for (i, r) in e.expect_list("a rule list")?.iter().enumerate() {
            rules.push(parse_rule(r, format!("r{i}"), plain)?);
        }
    }
    Ok(Sketch { memory, internal, initial, registers, z, features, rules, plain })
}

fn fail_on_errors(diags: Vec<Diagnostic>) -> Result<(), SketchError> {
    if diags.iter().any(|d| d.severity == Severity::Error) {
        Err(SketchError::Invalid(diags.into_iter().filter(|d| d.severity == Severity::Error).collect()))
    } else {
        Ok(())
    }
}

/// Parses and validates `(sketch ...)`. Warnings are dropped; use
/// [`validate_sketch`] to see them.
pub fn parse_sketch(text: &str) -> Result<Sketch, SketchError> {
    let top = sexpr::parse_one(text)?;
    let items = top.expect_list("`(sketch ...)`")?;
    if top.head() != Some("sketch") {
        return Err(SyntaxError::new(top.pos(), "expected `(sketch ...)`").into());
    }
    let (positional, kw) = sexpr::keyword_args(&items[1..])?;
    if let Some(p) = positional.first() {
        return Err(SyntaxError::new(p.pos(), "unexpected item in sketch").into());
    }
    let sk = parse_body(&kw, &[], top.pos())?;
    fail_on_errors(validate_sketch(&sk, &[]))?;
    Ok(sk)
}

fn parse_module(e: &Sexpr) -> Result<Module, SketchError> {
    let items = e.expect_list("`(module ...)`")?;
    if e.head() != Some("module") {
        return Err(SyntaxError::new(e.pos(), "expected `(module <name> ...)`").into());
    }
    let (positional, kw) = sexpr::keyword_args(&items[1..])?;
    if positional.len() != 1 {
        return Err(SyntaxError::new(e.pos(), "a module takes exactly one name").into());
    }
    let name = positional[0].expect_atom("a module name")?.to_string();
    let mut args = Vec::new();
    if let Some((_, a)) = kw.iter().find(|(k, _)| *k == ":args") {
        for p in a.expect_list("an argument list")? {
            let pl = p.expect_list("`(concept X)` or `(role R)`")?;
            let kind = match p.head() {
                Some("concept") => Kind::Concept,
                Some("role") => Kind::Role,
                _ => return Err(SyntaxError::new(p.pos(), "arguments are `(concept X)` or `(role R)`").into()),
            };
            if pl.len() != 2 {
                return Err(SyntaxError::new(p.pos(), "arguments are `(concept X)` or `(role R)`").into());
            }
            args.push((pl[1].expect_atom("an argument name")?.to_string(), kind));
        }
    }
    let sketch = parse_body(&kw, &args, e.pos())?;
    Ok(Module { name, args, sketch })
}

/// Parses a module collection; the first module is the entry point. When a
/// domain is given, `do` rules are checked against its action schemas.
pub fn parse_module_set(text: &str, domain: Option<&Domain>) -> Result<ModuleSet, SketchError> {
    let mut modules = Vec::new();
    for e in sexpr::parse_all(text)? {
        modules.push(parse_module(&e)?);
    }
    let set = ModuleSet { modules };
    set.check(domain)?;
    Ok(set)
}

// ---------------------------------------------------------------------------
// validation

impl Sketch {
    pub fn feature(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn is_internal(&self, m: &str) -> bool {
        self.internal.iter().any(|x| x == m)
    }

    /// Rules originating at memory state `m`, in declaration order.
    pub fn rules_at<'a>(&'a self, m: &'a str) -> impl Iterator<Item = &'a Rule> + 'a {
        self.rules.iter().filter(move |r| r.from == m)
    }

    /// Φ(𝔯): names of Φ features that depend on register `r`.
    pub fn dependent_features(&self, r: &str) -> Vec<String> {
        self.features.iter().filter(|f| f.registers().contains(r)).map(|f| f.name.clone()).collect()
    }

    /// Kind of a name usable in conditions: Φ, Z, module argument, or register.
    pub fn kind_of(&self, name: &str, args: &[(String, Kind)]) -> Option<Kind> {
        self.features
            .iter()
            .chain(&self.z)
            .find(|f| f.name == name)
            .map(Feature::kind)
            .or_else(|| args.iter().find(|(n, _)| n == name).map(|(_, k)| *k))
            .or_else(|| self.registers.iter().any(|r| r == name).then_some(Kind::Concept))
    }
}

/// Checks the structural invariants of a sketch (module arguments, if any, in
/// `args`). Returns an empty list iff the sketch is well formed.
pub fn validate_sketch(sk: &Sketch, args: &[(String, Kind)]) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |rule: Option<&str>, message: String| {
        out.push(Diagnostic { severity: Severity::Error, rule: rule.map(str::to_string), message })
    };
    let declared: BTreeSet<&str> = sk.memory.iter().map(String::as_str).collect();
    if declared.len() != sk.memory.len() {
        err(None, "duplicate memory state".into());
    }
    if !declared.contains(sk.initial.as_str()) {
        err(None, format!("initial memory state `{}` is not declared", sk.initial));
    }
    for m in &sk.internal {
        if !declared.contains(m.as_str()) {
            err(None, format!("internal memory state `{m}` is not declared"));
        }
    }
    let mut names = BTreeSet::new();
    for n in sk
        .features
        .iter()
        .chain(&sk.z)
        .map(|f| f.name.as_str())
        .chain(args.iter().map(|(n, _)| n.as_str()))
        .chain(sk.registers.iter().map(String::as_str))
    {
        if !names.insert(n) {
            err(None, format!("name `{n}` is declared more than once"));
        }
    }
    for r in &sk.rules {
        let id = Some(r.id.as_str());
        for m in [&r.from, &r.to] {
            if !declared.contains(m.as_str()) {
                err(id, format!("memory state `{m}` is not declared"));
            }
        }
        let internal_rule = r.kind().is_internal();
        if declared.contains(r.from.as_str()) && internal_rule != sk.is_internal(&r.from) {
            let (what, place) = if internal_rule { ("internal", "external") } else { ("external", "internal") };
            err(id, format!("{} rule ({what}) at {place} memory state `{}`", r.kind().name(), r.from));
        }
        for c in &r.cond {
            match (c, sk.kind_of(c.feature(), args)) {
                (_, None) => err(id, format!("unknown feature `{}` in condition", c.feature())),
                (Cond::True(f) | Cond::False(f), Some(k)) if k != Kind::Bool => {
                    err(id, format!("`{f}` is {} and needs `(eq {f})` or `(gt {f})`", k.keyword()))
                }
                (Cond::Eq(f) | Cond::Gt(f), Some(Kind::Bool)) => {
                    err(id, format!("`{f}` is Boolean and cannot be compared with zero"))
                }
                _ => {}
            }
        }
        match &r.action {
            RuleAction::Effects(effects) => {
                let mut seen = BTreeSet::new();
                for e in effects {
                    let Some(f) = sk.feature(&e.feature) else {
                        err(id, format!("effect on `{}`, which is not a tracked feature", e.feature));
                        continue;
                    };
                    if !seen.insert(e.feature.as_str()) {
                        err(id, format!("feature `{}` has more than one effect", e.feature));
                    }
                    match (e.kind, f.kind()) {
                        (EffectKind::SetTrue | EffectKind::SetFalse, k) if k != Kind::Bool => {
                            err(id, format!("`{}` is {} and needs `dec`, `inc` or `unk`", e.feature, k.keyword()))
                        }
                        (EffectKind::Dec | EffectKind::Inc, Kind::Bool) => {
                            err(id, format!("`{}` is Boolean and cannot be decremented or incremented", e.feature))
                        }
                        _ => {}
                    }
                }
            }
            RuleAction::Load { concept, register, unk } => {
                if sk.kind_of(concept, args) != Some(Kind::Concept) {
                    err(id, format!("load source `{concept}` is not a concept"));
                }
                if !sk.registers.contains(register) {
                    err(id, format!("unknown register `{register}`"));
                }
                for f in unk {
                    if sk.feature(f).is_none() {
                        err(id, format!("effect on `{f}`, which is not a tracked feature"));
                    }
                }
                for f in sk.dependent_features(register) {
                    if !unk.contains(&f) {
                        err(id, format!("load into `{register}` must make `{f}` uncertain with `(unk {f})`"));
                    }
                }
            }
            RuleAction::Call { args: a, .. } | RuleAction::Do { args: a, .. } => {
                let is_do = matches!(r.action, RuleAction::Do { .. });
                for x in a {
                    match sk.kind_of(x, args) {
                        None => err(id, format!("unknown argument `{x}`")),
                        Some(Kind::Role) if is_do => err(id, format!("`{x}` is a role; do rules take concepts")),
                        Some(k @ (Kind::Bool | Kind::Num)) => {
                            err(id, format!("`{x}` is {} and cannot be passed as an argument", k.keyword()))
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    // warnings last, so errors come first in reports
    for r in &sk.rules {
        if let RuleAction::Load { concept, .. } = &r.action {
            if !r.cond.contains(&Cond::Gt(concept.clone())) {
                out.push(Diagnostic {
                    severity: Severity::Warning,
                    rule: Some(r.id.clone()),
                    message: format!("load from `{concept}` without condition `(gt {concept})`"),
                });
            }
        }
    }
    out
}

impl ModuleSet {
    pub fn entry(&self) -> &Module {
        &self.modules[0]
    }

    pub fn module(&self, name: &str) -> Option<&Module> {
        self.modules.iter().find(|m| m.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.modules.iter().position(|m| m.name == name)
    }

    /// All diagnostics of all modules, plus name resolution of call and do targets.
    pub fn diagnostics(&self, domain: Option<&Domain>) -> Vec<(String, Diagnostic)> {
        let mut out = Vec::new();
        for m in &self.modules {
            let mut push = |rule: Option<&str>, message: String| {
                out.push((
                    m.name.clone(),
                    Diagnostic { severity: Severity::Error, rule: rule.map(str::to_string), message },
                ))
            };
            for r in &m.sketch.rules {
                match &r.action {
                    RuleAction::Call { module, args } => match self.module(module) {
                        None => push(Some(&r.id), format!("unknown module `{module}`")),
                        Some(callee) if callee.args.len() != args.len() => push(
                            Some(&r.id),
                            format!("`{module}` takes {} arguments, {} given", callee.args.len(), args.len()),
                        ),
                        Some(callee) => {
                            for ((pname, pkind), a) in callee.args.iter().zip(args) {
                                let k = m.sketch.kind_of(a, &m.args);
                                if k.is_some() && k != Some(*pkind) {
                                    push(
                                        Some(&r.id),
                                        format!("argument `{a}` passed for {} parameter `{pname}`", pkind.keyword()),
                                    );
                                }
                            }
                        }
                    },
                    RuleAction::Do { schema, args } => {
                        if let Some(d) = domain {
                            match d.actions.iter().find(|a| &a.name == schema) {
                                None => push(Some(&r.id), format!("unknown action schema `{schema}`")),
                                Some(a) if a.params.len() != args.len() => push(
                                    Some(&r.id),
                                    format!("`{schema}` takes {} arguments, {} given", a.params.len(), args.len()),
                                ),
                                _ => {}
                            }
                        }
                    }
                    _ => {}
                }
            }
            out.extend(validate_sketch(&m.sketch, &m.args).into_iter().map(|d| (m.name.clone(), d)));
        }
        out
    }

    fn check(&self, domain: Option<&Domain>) -> Result<(), SketchError> {
        let Some(entry) = self.modules.first() else {
            return Err(SketchError::Module { module: String::new(), msg: "no modules".into() });
        };
        if !entry.args.is_empty() {
            return Err(SketchError::Module { module: entry.name.clone(), msg: "the entry module takes no arguments".into() });
        }
        let mut names = BTreeSet::new();
        for m in &self.modules {
            if !names.insert(&m.name) {
                return Err(SketchError::Module { module: m.name.clone(), msg: "defined more than once".into() });
            }
        }
        for (module, d) in self.diagnostics(domain) {
            if d.severity == Severity::Error {
                let msg = match &d.rule {
                    Some(r) => format!("{r}: {}", d.message),
                    None => d.message.clone(),
                };
                return Err(SketchError::Module { module, msg });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// printing

fn write_list<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    f.write_str("(")?;
    for (i, x) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(" ")?;
        }
        write!(f, "{x}")?;
    }
    f.write_str(")")
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cond::True(x) => write!(f, "{x}"),
            Cond::False(x) => write!(f, "(not {x})"),
            Cond::Eq(x) => write!(f, "(eq {x})"),
            Cond::Gt(x) => write!(f, "(gt {x})"),
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let x = &self.feature;
        match self.kind {
            EffectKind::SetTrue => write!(f, "{x}"),
            EffectKind::SetFalse => write!(f, "(not {x})"),
            EffectKind::Unk => write!(f, "(unk {x})"),
            EffectKind::Dec => write!(f, "(dec {x})"),
            EffectKind::Inc => write!(f, "(inc {x})"),
        }
    }
}

struct RuleText<'a>(&'a Rule, bool);

impl fmt::Display for RuleText<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let RuleText(r, plain) = *self;
        match &r.action {
            RuleAction::Effects(e) if plain => {
                f.write_str("(rule ")?;
                write_list(f, &r.cond)?;
                f.write_str(" ")?;
                write_list(f, e)?;
                f.write_str(")")
            }
            RuleAction::Effects(e) => {
                write!(f, "(rule {} ", r.from)?;
                write_list(f, &r.cond)?;
                f.write_str(" ")?;
                write_list(f, e)?;
                write!(f, " {})", r.to)
            }
            RuleAction::Load { concept, register, unk } => {
                write!(f, "(load-rule {} ", r.from)?;
                write_list(f, &r.cond)?;
                write!(f, " (load {concept} {register}) ")?;
                let unk: Vec<String> = unk.iter().map(|u| format!("(unk {u})")).collect();
                write_list(f, &unk)?;
                write!(f, " {})", r.to)
            }
            RuleAction::Call { module: name, args } | RuleAction::Do { schema: name, args } => {
                let kw = if matches!(r.action, RuleAction::Call { .. }) { "call" } else { "do" };
                write!(f, "({kw} {} ", r.from)?;
                write_list(f, &r.cond)?;
                write!(f, " {name} ")?;
                write_list(f, args)?;
                write!(f, " {})", r.to)
            }
        }
    }
}

fn write_body(f: &mut fmt::Formatter<'_>, sk: &Sketch) -> fmt::Result {
    if !sk.plain {
        f.write_str("\n  :memory ")?;
        write_list(f, &sk.memory)?;
        f.write_str("\n  :internal ")?;
        write_list(f, &sk.internal)?;
        write!(f, "\n  :initial {}", sk.initial)?;
    }
    f.write_str("\n  :registers ")?;
    write_list(f, &sk.registers)?;
    f.write_str("\n  :z (")?;
    for z in &sk.z {
        write!(f, "\n    {z}")?;
    }
    f.write_str(")\n  :features (")?;
    for x in &sk.features {
        write!(f, "\n    {x}")?;
    }
    f.write_str(")\n  :rules (")?;
    for r in &sk.rules {
        write!(f, "\n    {}", RuleText(r, sk.plain))?;
    }
    f.write_str("))")
}

impl fmt::Display for Sketch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(sketch")?;
        write_body(f, self)
    }
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(module {}\n  :args (", self.name)?;
        for (i, (n, k)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "({} {n})", k.keyword())?;
        }
        f.write_str(")")?;
        write_body(f, &self.sketch)
    }
}

impl fmt::Display for ModuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.modules {
            writeln!(f, "{m}\n")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// compiled form

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CCond {
    /// slot, required truth
    Bool(usize, bool),
    /// slot, required `> 0`
    Card(usize, bool),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CAction {
    /// Per Φ feature: the effect on it, if mentioned.
    Effects(Vec<Option<EffectKind>>),
    Load { slot: usize, register: usize },
    Call { module: usize, args: Vec<usize> },
    Do { schema: usize, args: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct CRule {
    pub id: String,
    pub kind: RuleKind,
    pub from: usize,
    pub to: usize,
    pub cond: Vec<CCond>,
    pub action: CAction,
}

/// A sketch (or module body) resolved against one ground problem.
///
/// Feature slots are laid out as Φ, then Z, then module arguments, then
/// registers, so that every name a rule mentions is a slot.
#[derive(Debug, Clone)]
pub struct Program {
    pub name: String,
    pub slots: Vec<CompiledFeature>,
    pub n_phi: usize,
    pub memory: Vec<String>,
    pub internal: Vec<bool>,
    pub initial: usize,
    pub registers: Vec<String>,
    pub arg_names: Vec<String>,
    pub rules: Vec<CRule>,
    pub rules_at: Vec<Vec<usize>>,
}

fn slot_features(sk: &Sketch, args: &[(String, Kind)]) -> Vec<Feature> {
    let mut out: Vec<Feature> = sk.features.iter().chain(&sk.z).cloned().collect();
    for (a, k) in args {
        let body = match k {
            Kind::Role => Body::Role(Role::Arg(a.clone())),
            _ => Body::Concept(Concept::Arg(a.clone())),
        };
        out.push(Feature { name: a.clone(), body });
    }
    for r in &sk.registers {
        out.push(Feature { name: r.clone(), body: Body::Concept(Concept::Register(r.clone())) });
    }
    out
}

impl Program {
    /// Compiles a validated sketch. `modules` resolves call targets.
    pub fn compile(
        name: &str,
        sk: &Sketch,
        args: &[(String, Kind)],
        gp: &GroundProblem,
        modules: &[String],
    ) -> Result<Program, SketchError> {
        let arg_names: Vec<String> = args.iter().map(|(n, _)| n.clone()).collect();
        let features = slot_features(sk, args);
        let slots = features
            .iter()
            .map(|f| {
                f.compile(gp, &sk.registers, &arg_names)
                    .map_err(|source| SketchError::Compile { name: f.name.clone(), source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let slot = |n: &str| features.iter().position(|f| f.name == n);
        let mem = |m: &str| sk.memory.iter().position(|x| x == m);
        let invalid = |r: &Rule, msg: String| {
            SketchError::Invalid(vec![Diagnostic { severity: Severity::Error, rule: Some(r.id.clone()), message: msg }])
        };
        let n_phi = sk.features.len();
        let mut rules = Vec::new();
        for r in &sk.rules {
            let from = mem(&r.from).ok_or_else(|| invalid(r, format!("unknown memory state `{}`", r.from)))?;
            let to = mem(&r.to).ok_or_else(|| invalid(r, format!("unknown memory state `{}`", r.to)))?;
            let mut cond = Vec::new();
            for c in &r.cond {
                let s = slot(c.feature()).ok_or_else(|| invalid(r, format!("unknown feature `{}`", c.feature())))?;
                cond.push(match c {
                    Cond::True(_) => CCond::Bool(s, true),
                    Cond::False(_) => CCond::Bool(s, false),
                    Cond::Eq(_) => CCond::Card(s, false),
                    Cond::Gt(_) => CCond::Card(s, true),
                });
            }
            let action = match &r.action {
                RuleAction::Effects(effects) => {
                    let mut per = vec![None; n_phi];
                    for e in effects {
                        let s = slot(&e.feature)
                            .filter(|&s| s < n_phi)
                            .ok_or_else(|| invalid(r, format!("`{}` is not a tracked feature", e.feature)))?;
                        per[s] = Some(e.kind);
                    }
                    CAction::Effects(per)
                }
                RuleAction::Load { concept, register, .. } => CAction::Load {
                    slot: slot(concept).ok_or_else(|| invalid(r, format!("unknown concept `{concept}`")))?,
                    register: sk
                        .registers
                        .iter()
                        .position(|x| x == register)
                        .ok_or_else(|| invalid(r, format!("unknown register `{register}`")))?,
                },
                RuleAction::Call { module, args } => CAction::Call {
                    module: modules
                        .iter()
                        .position(|m| m == module)
                        .ok_or_else(|| invalid(r, format!("unknown module `{module}`")))?,
                    args: args
                        .iter()
                        .map(|a| slot(a).ok_or_else(|| invalid(r, format!("unknown argument `{a}`"))))
                        .collect::<Result<_, _>>()?,
                },
                RuleAction::Do { schema, args } => CAction::Do {
                    schema: gp.schema_id(schema).ok_or_else(|| invalid(r, format!("unknown action schema `{schema}`")))?,
                    args: args
                        .iter()
                        .map(|a| slot(a).ok_or_else(|| invalid(r, format!("unknown argument `{a}`"))))
                        .collect::<Result<_, _>>()?,
                },
            };
            rules.push(CRule { id: r.id.clone(), kind: r.kind(), from, to, cond, action });
        }
        let mut rules_at = vec![Vec::new(); sk.memory.len()];
        for (i, r) in rules.iter().enumerate() {
            rules_at[r.from].push(i);
        }
        Ok(Program {
            name: name.to_string(),
            slots,
            n_phi,
            internal: sk.memory.iter().map(|m| sk.is_internal(m)).collect(),
            memory: sk.memory.clone(),
            initial: mem(&sk.initial).ok_or_else(|| {
                SketchError::Invalid(vec![Diagnostic {
                    severity: Severity::Error,
                    rule: None,
                    message: format!("unknown initial memory state `{}`", sk.initial),
                }])
            })?,
            registers: sk.registers.clone(),
            arg_names,
            rules,
            rules_at,
        })
    }

    /// Compiles a plain or extended sketch that takes no arguments.
    pub fn from_sketch(sk: &Sketch, gp: &GroundProblem) -> Result<Program, SketchError> {
        Program::compile("sketch", sk, &[], gp, &[])
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|f| f.name == name)
    }

    /// Values of every slot.
    pub fn eval_all(&self, ctx: &EvalCtx<'_>) -> Vec<Value> {
        self.slots.iter().map(|f| f.eval(ctx)).collect()
    }

    /// Values of the tracked features Φ.
    pub fn eval_phi(&self, ctx: &EvalCtx<'_>) -> Vec<Value> {
        self.slots[..self.n_phi].iter().map(|f| f.eval(ctx)).collect()
    }

    pub fn satisfies(&self, rule: &CRule, values: &[Value]) -> bool {
        satisfies(&rule.cond, values)
    }

    /// `t ≺_{r/v} s` given Φ values at `s` and `t` (condition not checked).
    pub fn effects_hold(&self, rule: &CRule, at_s: &[Value], at_t: &[Value]) -> Result<bool, SketchError> {
        let CAction::Effects(per) = &rule.action else {
            return Err(SketchError::NotExternal(rule.id.clone()));
        };
        if rule.kind != RuleKind::Value {
            return Err(SketchError::NotExternal(rule.id.clone()));
        }
        Ok(effects_hold(per, at_s, at_t))
    }

    /// Full pair compatibility: `s` satisfies the condition and `(s, t)`
    /// respects every effect, all under register valuation `ctx.registers`.
    pub fn pair_compatible(
        &self,
        rule: &CRule,
        s: &EvalCtx<'_>,
        t: &crate::ground::State,
    ) -> Result<bool, SketchError> {
        let vs = self.eval_all(s);
        let vt = self.eval_phi(&EvalCtx { state: t, ..*s });
        Ok(self.satisfies(rule, &vs) && self.effects_hold(rule, &vs, &vt)?)
    }
}

pub fn satisfies(cond: &[CCond], values: &[Value]) -> bool {
    cond.iter().all(|c| match *c {
        CCond::Bool(s, want) => values[s].truthy() == want,
        CCond::Card(s, gt) => (values[s].magnitude() > 0) == gt,
    })
}

/// Effect check for a value rule over the Φ prefix of both value vectors.
pub fn effects_hold(per: &[Option<EffectKind>], at_s: &[Value], at_t: &[Value]) -> bool {
    per.iter().enumerate().all(|(i, e)| match e {
        None => at_s[i] == at_t[i],
        Some(EffectKind::Unk) => true,
        Some(EffectKind::SetTrue) => at_t[i].truthy(),
        Some(EffectKind::SetFalse) => !at_t[i].truthy(),
        Some(EffectKind::Dec) => at_t[i].magnitude() < at_s[i].magnitude(),
        Some(EffectKind::Inc) => at_t[i].magnitude() > at_s[i].magnitude(),
    })
}
