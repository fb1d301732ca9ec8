//! Execution models: serialized IW over plain sketches (SIW_R), over extended
//! sketches with memory and registers (SIW*_R), and over module collections
//! with a call stack (SIW_M). Also enumerates the subproblems a sketch induces
//! so that its width can be measured.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::features::{ArgValue, EvalCtx, ObjSet, Value};
use crate::ground::{ActionId, GroundProblem, ObjId, State};
use crate::novelty::{iw, measure_width_upto, Width};
use crate::sketch::{CAction, CRule, ModuleSet, Program, RuleKind, Sketch, SketchError};

/// Register contents; `None` is an unassigned register.
pub type Registers = Vec<Option<ObjId>>;

/// Next memory state, and the `(register, object)` written by a load.
type Step = (usize, Option<(usize, ObjId)>);

/// How a load effect picks an object from a concept's denotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// The least object in name order.
    #[default]
    Deterministic,
    /// Uniformly at random, reproducibly from the seed.
    Random(u64),
}

#[derive(Debug, Clone)]
pub struct Config {
    /// Largest IW width tried per subproblem.
    pub k_max: usize,
    pub load: LoadMode,
    /// Record every augmented state visited (see [`Run::states`]).
    pub record_states: bool,
    /// Upper bound on interpreter steps.
    pub max_steps: usize,
    // With deterministic loads the interpreter is a function of its
    // configuration, so a repeated configuration means it would loop forever;
    // such runs fail with a cycle error. Random loads rely on `max_steps`.
}

impl Default for Config {
    fn default() -> Self {
        Config { k_max: 2, load: LoadMode::Deterministic, record_states: false, max_steps: 100_000 }
    }
}

/// Picks objects for load effects.
#[derive(Debug, Clone)]
pub struct Chooser {
    rng: Option<ChaCha8Rng>,
}

impl Chooser {
    pub fn new(mode: LoadMode) -> Self {
        let rng = match mode {
            LoadMode::Deterministic => None,
            LoadMode::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        Chooser { rng }
    }

    /// An element of `set`, or `None` if it is empty.
    pub fn pick(&mut self, set: &ObjSet) -> Option<ObjId> {
        match &mut self.rng {
            None => set.ones().next(),
            Some(rng) => set.ones().choose(rng),
        }
    }
}

/// One step of an execution trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "ev", rename_all = "lowercase")]
pub enum Event {
    /// An internal (jump or load) rule fired.
    Rule {
        module: String,
        id: String,
        kind: &'static str,
        from: String,
        to: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        register: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        object: Option<String>,
    },
    /// A subproblem solved by IW; `rule` is the rule whose subgoal was reached
    /// (none when a goal state was reached instead).
    Iw {
        module: String,
        k: usize,
        len: usize,
        expanded: usize,
        rule: Option<String>,
        from: String,
        to: String,
        plan: Vec<String>,
    },
    /// Control passed to `module`.
    Call { module: String, caller: String, rule: String, depth: usize },
    /// A ground action executed by a do rule.
    Do { module: String, rule: String, action: String },
    /// `module` returned to its caller.
    Return { module: String, depth: usize },
}

/// An augmented state: planning state, active module, memory state, registers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AugState {
    pub module: usize,
    pub memory: usize,
    pub state: State,
    pub registers: Registers,
}

/// Output of an engine run, successful or not.
#[derive(Debug, Clone, Default)]
pub struct Run {
    pub plan: Vec<ActionId>,
    pub trace: Vec<Event>,
    /// Augmented states in visiting order, when recording was enabled.
    pub states: Vec<AugState>,
}

impl Run {
    /// `(k, plan length)` of every IW episode.
    pub fn episodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.trace.iter().filter_map(|e| match e {
            Event::Iw { k, len, .. } => Some((*k, *len)),
            _ => None,
        })
    }

    /// States expanded, summed over all IW episodes.
    pub fn expanded(&self) -> usize {
        self.trace
            .iter()
            .map(|e| match e {
                Event::Iw { expanded, .. } => *expanded,
                _ => 0,
            })
            .sum()
    }

    /// The trace as JSON lines.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.trace {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error("the sketch has internal memory or registers; use SIW*_R")]
    NotPlain,
    #[error("irreducible: no internal rule of `{module}` applies at memory state {memory}")]
    Irreducible { module: String, memory: String },
    #[error("stalled: no rule of `{module}` applies at memory state {memory} and the stack is empty")]
    Stalled { module: String, memory: String },
    #[error("IW(k) with k <= {k_max} found neither a goal nor a subgoal in `{module}` at memory state {memory}")]
    SearchFailed { module: String, memory: String, k_max: usize },
    #[error("no applicable ground action for do rule {rule} of `{module}`")]
    NoApplicableAction { module: String, rule: String },
    #[error("load rule {rule} of `{module}` has an empty concept")]
    EmptyLoad { module: String, rule: String },
    #[error("call/do rule {rule} outside a module collection")]
    ModuleRule { rule: String },
    #[error("more than {limit} internal steps in a row in `{module}`; the sketch cycles on internal memory")]
    ReductionCycle { module: String, limit: usize },
    #[error("step limit of {0} exceeded")]
    StepLimit(usize),
    #[error("execution cycle: revisited memory state {memory} of `{module}` with the same state and registers")]
    Cycle { module: String, memory: String },
}

impl EngineError {
    /// Short name of the failure kind.
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::Sketch(_) => "sketch",
            EngineError::NotPlain => "not-plain",
            EngineError::Irreducible { .. } => "irreducible",
            EngineError::Stalled { .. } => "stalled",
            EngineError::SearchFailed { .. } => "search-failed",
            EngineError::NoApplicableAction { .. } => "no-applicable-action",
            EngineError::EmptyLoad { .. } => "empty-load",
            EngineError::ModuleRule { .. } => "module-rule",
            EngineError::ReductionCycle { .. } => "reduction-cycle",
            EngineError::StepLimit(_) => "step-limit",
            EngineError::Cycle { .. } => "cycle",
        }
    }
}

/// A failed run together with everything done before the failure.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct Failure {
    pub error: EngineError,
    pub run: Run,
}

pub type Outcome = Result<Run, Box<Failure>>;

fn fail(error: EngineError, run: Run) -> Box<Failure> {
    Box::new(Failure { error, run })
}

fn ctx<'a>(gp: &'a GroundProblem, s: &'a State, v: &'a [Option<ObjId>], args: &'a [ArgValue]) -> EvalCtx<'a> {
    EvalCtx { problem: gp, state: s, registers: v, args }
}

/// First applicable ground action of `schema` whose i-th argument lies in
/// `args[i]`, in action order, and the state it leads to.
pub fn execute_do(gp: &GroundProblem, schema: usize, args: &[ObjSet], s: &State) -> Option<(ActionId, State)> {
    gp.actions
        .iter()
        .enumerate()
        .filter(|(_, a)| a.schema == schema && a.args.len() == args.len())
        .filter(|(_, a)| a.args.iter().zip(args).all(|(&o, set)| set.contains(o)))
        .find(|&(i, _)| gp.applicable(s, i))
        .map(|(i, _)| (i, gp.apply_unchecked(s, i)))
}

/// The internal rule that fires at `m`, if any, and the register update it makes.
fn internal_step(
    prog: &Program,
    gp: &GroundProblem,
    s: &State,
    m: usize,
    v: &[Option<ObjId>],
    args: &[ArgValue],
    chooser: &mut Chooser,
) -> Result<Option<Step>, EngineError> {
    let c = ctx(gp, s, v, args);
    let values = prog.eval_all(&c);
    let Some(&ri) = prog.rules_at[m].iter().find(|&&ri| prog.satisfies(&prog.rules[ri], &values)) else {
        return Ok(None);
    };
    let rule = &prog.rules[ri];
    match &rule.action {
        CAction::Load { slot, register } => {
            let set = prog.slots[*slot].eval_concept(&c);
            let o = chooser
                .pick(&set)
                .ok_or_else(|| EngineError::EmptyLoad { module: prog.name.clone(), rule: rule.id.clone() })?;
            Ok(Some((ri, Some((*register, o)))))
        }
        CAction::Effects(_) => Ok(Some((ri, None))),
        CAction::Call { .. } | CAction::Do { .. } => Err(EngineError::ModuleRule { rule: rule.id.clone() }),
    }
}

/// Upper bound on consecutive internal steps: |M|·(|Obj|+1)^|R|.
fn reduction_limit(prog: &Program, gp: &GroundProblem) -> usize {
    let per = gp.objects.len().saturating_add(1);
    (0..prog.registers.len()).fold(prog.memory.len().max(1), |acc, _| acc.saturating_mul(per))
}

fn rule_event(prog: &Program, gp: &GroundProblem, rule: &CRule, load: Option<(usize, ObjId)>) -> Event {
    Event::Rule {
        module: prog.name.clone(),
        id: rule.id.clone(),
        kind: rule.kind.name(),
        from: prog.memory[rule.from].clone(),
        to: prog.memory[rule.to].clone(),
        register: load.map(|(r, _)| prog.registers[r].clone()),
        object: load.map(|(_, o)| gp.objects[o].clone()),
    }
}

/// Applies internal rules from `(s, m, v)` until an external memory state is
/// reached. Returns that memory state, the registers, and the rules fired.
pub fn reduce(
    prog: &Program,
    gp: &GroundProblem,
    s: &State,
    m: usize,
    v: &[Option<ObjId>],
    chooser: &mut Chooser,
) -> Result<(usize, Registers, Vec<Event>), EngineError> {
    let limit = reduction_limit(prog, gp);
    let (mut m, mut v) = (m, v.to_vec());
    let mut events = Vec::new();
    while prog.internal[m] {
        if events.len() >= limit {
            return Err(EngineError::ReductionCycle { module: prog.name.clone(), limit });
        }
        let Some((ri, load)) = internal_step(prog, gp, s, m, &v, &[], chooser)? else {
            return Err(EngineError::Irreducible { module: prog.name.clone(), memory: prog.memory[m].clone() });
        };
        if let Some((r, o)) = load {
            v[r] = Some(o);
        }
        let rule = &prog.rules[ri];
        events.push(rule_event(prog, gp, rule, load));
        m = rule.to;
    }
    Ok((m, v, events))
}

/// Solves the subproblem at external memory `m`: IW to a goal state or to a
/// state compatible with an applicable value rule. Returns the IW event, the
/// plan fragment, the reached state and the next memory state.
#[allow(clippy::too_many_arguments)]
fn subproblem(
    prog: &Program,
    gp: &GroundProblem,
    s: &State,
    m: usize,
    v: &[Option<ObjId>],
    args: &[ArgValue],
    candidates: &[usize],
    k_max: usize,
) -> Result<(Event, Vec<ActionId>, State, usize), EngineError> {
    let at_s = prog.eval_all(&ctx(gp, s, v, args));
    let compatible = |t: &State| -> Option<usize> {
        let at_t = prog.eval_phi(&ctx(gp, t, v, args));
        candidates.iter().copied().find(|&ri| match &prog.rules[ri].action {
            CAction::Effects(per) => crate::sketch::effects_hold(per, &at_s, &at_t),
            _ => false,
        })
    };
    // the goal test is memoized across the IW(k) iterations
    let mut memo: HashMap<State, bool> = HashMap::new();
    let test = |t: &State| -> bool {
        if t == s {
            return false;
        }
        if let Some(&b) = memo.get(t) {
            return b;
        }
        let b = gp.is_goal(t) || compatible(t).is_some();
        memo.insert(t.clone(), b);
        b
    };
    let run = iw(gp, s, test, k_max).map_err(|_| EngineError::SearchFailed {
        module: prog.name.clone(),
        memory: prog.memory[m].clone(),
        k_max,
    })?;
    let end = run.found.end;
    let fired = compatible(&end);
    let next = fired.map_or(m, |ri| prog.rules[ri].to);
    let event = Event::Iw {
        module: prog.name.clone(),
        k: run.k,
        len: run.found.plan.len(),
        expanded: run.total_expanded,
        rule: fired.map(|ri| prog.rules[ri].id.clone()),
        from: prog.memory[m].clone(),
        to: prog.memory[next].clone(),
        plan: run.found.plan.iter().map(|&a| gp.action_name(a)).collect(),
    };
    Ok((event, run.found.plan, end, next))
}

/// Value rules at `m` whose condition holds.
fn applicable_value_rules(prog: &Program, m: usize, values: &[Value]) -> Vec<usize> {
    prog.rules_at[m]
        .iter()
        .copied()
        .filter(|&ri| prog.rules[ri].kind == RuleKind::Value && prog.satisfies(&prog.rules[ri], values))
        .collect()
}

fn is_plain(prog: &Program) -> bool {
    prog.memory.len() == 1 && prog.registers.is_empty() && !prog.internal[0]
}

/// Serialized IW over a plain sketch: repeatedly run IW from the current state
/// to a goal state or a state compatible with some rule.
pub fn siw_r(gp: &GroundProblem, sk: &Sketch, cfg: &Config) -> Outcome {
    let prog = Program::from_sketch(sk, gp).map_err(|e| fail(e.into(), Run::default()))?;
    if !is_plain(&prog) {
        return Err(fail(EngineError::NotPlain, Run::default()));
    }
    let mut run = Run::default();
    let mut s = gp.init.clone();
    let mut steps = 0;
    let mut visited = HashSet::new();
    while !gp.is_goal(&s) {
        if !visited.insert(s.clone()) {
            let error = EngineError::Cycle { module: prog.name.clone(), memory: prog.memory[0].clone() };
            return Err(fail(error, run));
        }
        if cfg.record_states {
            run.states.push(AugState { module: 0, memory: 0, state: s.clone(), registers: vec![] });
        }
        steps += 1;
        if steps > cfg.max_steps {
            return Err(fail(EngineError::StepLimit(cfg.max_steps), run));
        }
        let values = prog.eval_all(&ctx(gp, &s, &[], &[]));
        let candidates = applicable_value_rules(&prog, 0, &values);
        match subproblem(&prog, gp, &s, 0, &[], &[], &candidates, cfg.k_max) {
            Ok((event, plan, t, _)) => {
                run.trace.push(event);
                run.plan.extend(plan);
                s = t;
            }
            Err(e) => return Err(fail(e, run)),
        }
    }
    Ok(run)
}

/// Serialized IW over an extended sketch: internal memory states fire jump and
/// load rules; external ones solve subproblems with IW.
pub fn siw_star_r(gp: &GroundProblem, sk: &Sketch, cfg: &Config) -> Outcome {
    let prog = Program::from_sketch(sk, gp).map_err(|e| fail(e.into(), Run::default()))?;
    Machine::new(gp, vec![prog], cfg, false).run()
}

/// Executes a module collection, starting at its entry module.
pub fn siw_m(gp: &GroundProblem, set: &ModuleSet, cfg: &Config) -> Outcome {
    let names: Vec<String> = set.modules.iter().map(|m| m.name.clone()).collect();
    let progs = set
        .modules
        .iter()
        .map(|m| Program::compile(&m.name, &m.sketch, &m.args, gp, &names))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| fail(e.into(), Run::default()))?;
    Machine::new(gp, progs, cfg, true).run()
}

/// Saved caller context.
#[derive(Clone, PartialEq, Eq, Hash)]
struct Frame {
    module: usize,
    registers: Registers,
    ret: usize,
    args: Vec<ArgValue>,
}

struct Machine<'a> {
    gp: &'a GroundProblem,
    progs: Vec<Program>,
    cfg: &'a Config,
    modular: bool,
    chooser: Chooser,
    run: Run,
    stack: Vec<Frame>,
    module: usize,
    memory: usize,
    registers: Registers,
    args: Vec<ArgValue>,
    state: State,
}

impl<'a> Machine<'a> {
    fn new(gp: &'a GroundProblem, progs: Vec<Program>, cfg: &'a Config, modular: bool) -> Self {
        let (memory, n_regs) = (progs[0].initial, progs[0].registers.len());
        Machine {
            gp,
            progs,
            cfg,
            modular,
            chooser: Chooser::new(cfg.load),
            run: Run::default(),
            stack: Vec::new(),
            module: 0,
            memory,
            // registers start unassigned and denote the empty set
            registers: vec![None; n_regs],
            args: Vec::new(),
            state: gp.init.clone(),
        }
    }

    fn run(mut self) -> Outcome {
        match self.execute() {
            Ok(()) => Ok(self.run),
            Err(e) => Err(fail(e, self.run)),
        }
    }

    fn pop(&mut self) {
        let frame = self.stack.pop().expect("pop on a non-empty stack");
        self.run.trace.push(Event::Return { module: self.progs[self.module].name.clone(), depth: self.stack.len() });
        self.module = frame.module;
        self.registers = frame.registers;
        self.memory = frame.ret;
        self.args = frame.args;
    }

    fn execute(&mut self) -> Result<(), EngineError> {
        let gp = self.gp;
        let mut steps = 0;
        let mut streak = 0;
        let detect = self.cfg.load == LoadMode::Deterministic;
        let mut visited = HashSet::new();
        loop {
            if self.cfg.record_states {
                self.run.states.push(AugState {
                    module: self.module,
                    memory: self.memory,
                    state: self.state.clone(),
                    registers: self.registers.clone(),
                });
            }
            if gp.is_goal(&self.state) {
                // unwind so that every call has a matching return
                while !self.stack.is_empty() {
                    self.pop();
                }
                return Ok(());
            }
            steps += 1;
            if steps > self.cfg.max_steps {
                return Err(EngineError::StepLimit(self.cfg.max_steps));
            }
            if detect {
                let key = (
                    self.module,
                    self.memory,
                    self.state.clone(),
                    self.registers.clone(),
                    self.args.clone(),
                    self.stack.clone(),
                );
                if !visited.insert(key) {
                    let prog = &self.progs[self.module];
                    return Err(EngineError::Cycle { module: prog.name.clone(), memory: prog.memory[self.memory].clone() });
                }
            }
            let prog = &self.progs[self.module];
            let m = self.memory;
            if prog.internal[m] {
                let step = internal_step(prog, gp, &self.state, m, &self.registers, &self.args, &mut self.chooser)?;
                match step {
                    Some((ri, load)) => {
                        streak += 1;
                        let limit = reduction_limit(prog, gp);
                        if streak > limit {
                            return Err(EngineError::ReductionCycle { module: prog.name.clone(), limit });
                        }
                        let rule = &prog.rules[ri];
                        self.run.trace.push(rule_event(prog, gp, rule, load));
                        if let Some((r, o)) = load {
                            self.registers[r] = Some(o);
                        }
                        self.memory = rule.to;
                    }
                    None if !self.modular => {
                        return Err(EngineError::Irreducible {
                            module: prog.name.clone(),
                            memory: prog.memory[m].clone(),
                        })
                    }
                    None if self.stack.is_empty() => {
                        return Err(EngineError::Stalled { module: prog.name.clone(), memory: prog.memory[m].clone() })
                    }
                    None => {
                        streak = 0;
                        self.pop();
                    }
                }
                continue;
            }
            streak = 0;
            let c = ctx(gp, &self.state, &self.registers, &self.args);
            let values = prog.eval_all(&c);
            let applicable: Vec<usize> =
                prog.rules_at[m].iter().copied().filter(|&ri| prog.satisfies(&prog.rules[ri], &values)).collect();
            let control = applicable.iter().copied().find(|&ri| matches!(prog.rules[ri].kind, RuleKind::Call | RuleKind::Do));
            if let Some(ri) = control {
                let rule = &prog.rules[ri];
                if !self.modular {
                    return Err(EngineError::ModuleRule { rule: rule.id.clone() });
                }
                match &rule.action {
                    CAction::Call { module, args } => {
                        let bound: Vec<ArgValue> = args
                            .iter()
                            .map(|&slot| prog.slots[slot].eval_arg(&c).expect("call arguments are concepts or roles"))
                            .collect();
                        let callee = *module;
                        self.run.trace.push(Event::Call {
                            module: self.progs[callee].name.clone(),
                            caller: prog.name.clone(),
                            rule: rule.id.clone(),
                            depth: self.stack.len(),
                        });
                        let frame = Frame {
                            module: self.module,
                            registers: std::mem::take(&mut self.registers),
                            ret: rule.to,
                            args: std::mem::replace(&mut self.args, bound),
                        };
                        self.stack.push(frame);
                        self.module = callee;
                        self.memory = self.progs[callee].initial;
                        self.registers = vec![None; self.progs[callee].registers.len()];
                    }
                    CAction::Do { schema, args } => {
                        let sets: Vec<ObjSet> = args.iter().map(|&slot| prog.slots[slot].eval_concept(&c)).collect();
                        let Some((a, t)) = execute_do(gp, *schema, &sets, &self.state) else {
                            return Err(EngineError::NoApplicableAction {
                                module: prog.name.clone(),
                                rule: rule.id.clone(),
                            });
                        };
                        self.run.trace.push(Event::Do {
                            module: prog.name.clone(),
                            rule: rule.id.clone(),
                            action: gp.action_name(a),
                        });
                        self.run.plan.push(a);
                        self.state = t;
                        self.memory = rule.to;
                    }
                    _ => unreachable!("control rules are call or do rules"),
                }
                continue;
            }
            if applicable.is_empty() && self.modular && !self.stack.is_empty() {
                self.pop();
                continue;
            }
            let candidates: Vec<usize> =
                applicable.into_iter().filter(|&ri| prog.rules[ri].kind == RuleKind::Value).collect();
            let (event, plan, t, next) =
                subproblem(prog, gp, &self.state, m, &self.registers, &self.args, &candidates, self.cfg.k_max)?;
            self.run.trace.push(event);
            self.run.plan.extend(plan);
            self.state = t;
            self.memory = next;
        }
    }
}

// ---------------------------------------------------------------------------
// induced subproblems and sketch width

/// A subproblem `P[s, m, v]` with `m` external.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subproblem {
    pub state: State,
    pub memory: usize,
    pub registers: Registers,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClosureError {
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error("more than {0} induced subproblems")]
    BoundExceeded(usize),
    #[error("irreducible: an augmented state at internal memory {memory} has no applicable rule")]
    Irreducible { memory: String },
}

/// Every external augmented state reachable from `(s, m, v)` through internal
/// rules, over all applicable rules and all load choices.
fn all_reductions(
    prog: &Program,
    gp: &GroundProblem,
    s: &State,
    m: usize,
    v: &[Option<ObjId>],
) -> Result<BTreeSet<(usize, Registers)>, ClosureError> {
    let mut out = BTreeSet::new();
    let mut seen = HashSet::from([(m, v.to_vec())]);
    let mut todo = vec![(m, v.to_vec())];
    while let Some((m, v)) = todo.pop() {
        if !prog.internal[m] {
            out.insert((m, v));
            continue;
        }
        let c = ctx(gp, s, &v, &[]);
        let values = prog.eval_all(&c);
        let mut any = false;
        for &ri in &prog.rules_at[m] {
            let rule = &prog.rules[ri];
            if !prog.satisfies(rule, &values) {
                continue;
            }
            any = true;
            let mut next = Vec::new();
            match &rule.action {
                CAction::Load { slot, register } => {
                    for o in prog.slots[*slot].eval_concept(&c).ones() {
                        let mut w = v.clone();
                        w[*register] = Some(o);
                        next.push((rule.to, w));
                    }
                }
                _ => next.push((rule.to, v.clone())),
            }
            for n in next {
                if seen.insert(n.clone()) {
                    todo.push(n);
                }
            }
        }
        if !any {
            return Err(ClosureError::Irreducible { memory: prog.memory[m].clone() });
        }
    }
    Ok(out)
}

fn reachable(gp: &GroundProblem, s: &State) -> Vec<State> {
    let mut seen = HashSet::from([s.clone()]);
    let mut queue = VecDeque::from([s.clone()]);
    let mut out = Vec::new();
    while let Some(u) = queue.pop_front() {
        for (_, t) in gp.successors(&u) {
            if seen.insert(t.clone()) {
                out.push(t.clone());
                queue.push_back(t);
            }
        }
    }
    out
}

/// Goal test of subproblem `sub`: a goal state of the problem, or a state other
/// than the start compatible with an applicable value rule.
fn subproblem_goal<'a>(prog: &'a Program, gp: &'a GroundProblem, sub: &'a Subproblem) -> impl FnMut(&State) -> bool + 'a {
    let at_s = prog.eval_all(&ctx(gp, &sub.state, &sub.registers, &[]));
    let candidates = applicable_value_rules(prog, sub.memory, &at_s);
    move |t: &State| {
        if *t == sub.state {
            return false;
        }
        if gp.is_goal(t) {
            return true;
        }
        let at_t = prog.eval_phi(&ctx(gp, t, &sub.registers, &[]));
        candidates.iter().any(|&ri| match &prog.rules[ri].action {
            CAction::Effects(per) => crate::sketch::effects_hold(per, &at_s, &at_t),
            _ => false,
        })
    }
}

/// The subproblems a sketch induces on `gp`, starting from unassigned
/// registers. Subproblems whose state is a goal state are not expanded.
pub fn enumerate_subproblems(gp: &GroundProblem, sk: &Sketch, bound: usize) -> Result<Vec<Subproblem>, ClosureError> {
    let prog = Program::from_sketch(sk, gp)?;
    closure(&prog, gp, bound)
}

fn closure(prog: &Program, gp: &GroundProblem, bound: usize) -> Result<Vec<Subproblem>, ClosureError> {
    let v0 = vec![None; prog.registers.len()];
    let mut seen: BTreeSet<Subproblem> = BTreeSet::new();
    let mut todo = Vec::new();
    let mut add = |sub: Subproblem, todo: &mut Vec<Subproblem>| -> Result<(), ClosureError> {
        if seen.insert(sub.clone()) {
            if seen.len() > bound {
                return Err(ClosureError::BoundExceeded(bound));
            }
            todo.push(sub);
        }
        Ok(())
    };
    for (m, v) in all_reductions(prog, gp, &gp.init, prog.initial, &v0)? {
        add(Subproblem { state: gp.init.clone(), memory: m, registers: v }, &mut todo)?;
    }
    let mut order = Vec::new();
    while let Some(sub) = todo.pop() {
        order.push(sub.clone());
        if gp.is_goal(&sub.state) {
            continue;
        }
        let at_s = prog.eval_all(&ctx(gp, &sub.state, &sub.registers, &[]));
        let candidates = applicable_value_rules(prog, sub.memory, &at_s);
        if candidates.is_empty() {
            continue;
        }
        for t in reachable(gp, &sub.state) {
            let at_t = prog.eval_phi(&ctx(gp, &t, &sub.registers, &[]));
            for &ri in &candidates {
                let rule = &prog.rules[ri];
                let CAction::Effects(per) = &rule.action else { continue };
                if !crate::sketch::effects_hold(per, &at_s, &at_t) {
                    continue;
                }
                for (m, v) in all_reductions(prog, gp, &t, rule.to, &sub.registers)? {
                    add(Subproblem { state: t.clone(), memory: m, registers: v }, &mut todo)?;
                }
            }
        }
    }
    order.sort();
    Ok(order)
}

/// Per-subproblem widths and their maximum, over the subproblems whose state
/// is not a goal state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WidthReport {
    pub rows: Vec<(Subproblem, Width)>,
    /// Largest width, or `None` if some subproblem exceeds `k_max` or has no
    /// reachable target.
    pub max: Option<usize>,
}

/// Width of the sketch over `gp`: the largest width among its induced subproblems.
pub fn sketch_width(gp: &GroundProblem, sk: &Sketch, k_max: usize, bound: usize) -> Result<WidthReport, ClosureError> {
    let prog = Program::from_sketch(sk, gp)?;
    let subs = closure(&prog, gp, bound)?;
    let mut rows = Vec::new();
    let mut max = Some(0);
    // subproblems starting at a goal state need no search
    for sub in subs.into_iter().filter(|sub| !gp.is_goal(&sub.state)) {
        let w = measure_width_upto(gp, &sub.state, subproblem_goal(&prog, gp, &sub), k_max);
        max = match (max, w) {
            (Some(a), Width::Exactly(k)) => Some(a.max(k)),
            _ => None,
        };
        rows.push((sub, w));
    }
    Ok(WidthReport { rows, max })
}

/// Renders a subproblem as `memory [r0=b1 r1=-] {atoms}`.
pub struct SubproblemDisplay<'a> {
    pub sub: &'a Subproblem,
    pub prog_memory: &'a [String],
    pub prog_registers: &'a [String],
    pub problem: &'a GroundProblem,
}

impl fmt::Display for SubproblemDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.prog_memory[self.sub.memory])?;
        for (name, o) in self.prog_registers.iter().zip(&self.sub.registers) {
            let o = o.map_or("-", |o| self.problem.objects[o].as_str());
            write!(f, " {name}={o}")?;
        }
        let atoms: Vec<String> = self
            .sub
            .state
            .atoms()
            .filter(|&a| !self.problem.is_static(a))
            .map(|a| self.problem.atom_name(a))
            .collect();
        write!(f, " {{{}}}", atoms.join(" "))
    }
}
