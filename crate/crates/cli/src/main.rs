use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sketchrun_core::engine::{self, Config, LoadMode, SubproblemDisplay};
use sketchrun_core::fixtures::{gen_blocks, GoalKind};
use sketchrun_core::ground::{ground, GroundProblem};
use sketchrun_core::novelty::Width;
use sketchrun_core::pddl::{parse_domain, parse_problem, Domain};
use sketchrun_core::sketch::{parse_module_set, parse_sketch, validate_sketch, ModuleSet, Program, Sketch};
use sketchrun_core::termination::{build_policy_graph, sieve, CycleDisplay, Verdict};

#[derive(Parser)]
#[command(name = "sketchrun", version, about = "Solve planning problems with policy sketches and modules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    /// Serialized IW over a plain sketch
    SiwR,
    /// Serialized IW over a sketch with memory and registers
    SiwStar,
    /// Module collection with a call stack
    SiwM,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem with a sketch or a module collection
    Solve {
        domain: PathBuf,
        problem: PathBuf,
        /// Sketch or module file
        policy: PathBuf,
        /// Execution model; inferred from the policy file when omitted
        #[arg(long, value_enum)]
        algo: Option<Algo>,
        /// Largest IW width tried per subproblem
        #[arg(long, default_value_t = 2)]
        kmax: usize,
        /// Pick load objects at random from this seed instead of the least object
        #[arg(long)]
        seed: Option<u64>,
        /// Write the execution trace as JSON lines
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the plan here instead of standard output
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Validate a sketch or module file and test it for termination
    Check {
        policy: PathBuf,
        /// Domain used to check `do` rules of modules
        #[arg(long)]
        domain: Option<PathBuf>,
    },
    /// Width of every subproblem a sketch induces on a problem
    Width {
        domain: PathBuf,
        problem: PathBuf,
        sketch: PathBuf,
        #[arg(long, default_value_t = 2)]
        kmax: usize,
        /// Most subproblems to enumerate
        #[arg(long, default_value_t = 100_000)]
        bound: usize,
    },
    /// Generate a random Blocksworld problem
    GenBlocks {
        n: usize,
        #[arg(value_parser = parse_goal_kind)]
        goal: GoalKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check a plan against a problem
    Validate { domain: PathBuf, problem: PathBuf, plan: PathBuf },
}

fn parse_goal_kind(s: &str) -> Result<GoalKind, String> {
    s.parse()
}

/// An error with the exit code it maps to.
struct Exit {
    code: u8,
    err: anyhow::Error,
}

/// Input errors exit with 2.
fn input<T>(r: Result<T>) -> Result<T, Exit> {
    r.map_err(|err| Exit { code: 2, err })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_domain(path: &Path) -> Result<Domain> {
    parse_domain(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_problem(domain: &Domain, path: &Path) -> Result<GroundProblem> {
    let p = parse_problem(&read(path)?, domain).with_context(|| format!("parsing {}", path.display()))?;
    Ok(ground(&p))
}

fn is_module_file(text: &str) -> bool {
    let code = text.lines().map(|l| l.split(';').next().unwrap_or("")).collect::<Vec<_>>().join("\n");
    code.trim_start().trim_start_matches('(').trim_start().starts_with("module")
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

enum Policy {
    Sketch(Sketch),
    Modules(ModuleSet),
}

#[allow(clippy::too_many_arguments)]
fn solve(
    domain: &Path,
    problem: &Path,
    policy: &Path,
    algo: Option<Algo>,
    kmax: usize,
    seed: Option<u64>,
    trace: Option<&Path>,
    plan: Option<&Path>,
) -> Result<(), Exit> {
    let d = input(load_domain(domain))?;
    let gp = input(load_problem(&d, problem))?;
    let text = input(read(policy))?;
    let algo = algo.unwrap_or(if is_module_file(&text) { Algo::SiwM } else { Algo::SiwStar });
    let parsed = if algo == Algo::SiwM {
        Policy::Modules(input(
            parse_module_set(&text, Some(&d)).with_context(|| format!("parsing {}", policy.display())),
        )?)
    } else {
        Policy::Sketch(input(parse_sketch(&text).with_context(|| format!("parsing {}", policy.display())))?)
    };
    // resolve features against the problem before running, so that bad
    // references are input errors rather than engine failures
    match &parsed {
        Policy::Sketch(sk) => {
            input(Program::from_sketch(sk, &gp).map(drop).context("compiling the sketch"))?;
        }
        Policy::Modules(set) => {
            let names: Vec<String> = set.modules.iter().map(|m| m.name.clone()).collect();
            for m in &set.modules {
                input(
                    Program::compile(&m.name, &m.sketch, &m.args, &gp, &names)
                        .map(drop)
                        .with_context(|| format!("compiling module `{}`", m.name)),
                )?;
            }
        }
    }
    let cfg = Config {
        k_max: kmax,
        load: seed.map_or(LoadMode::Deterministic, LoadMode::Random),
        ..Config::default()
    };
    let outcome = match (&parsed, algo) {
        (Policy::Sketch(sk), Algo::SiwR) => engine::siw_r(&gp, sk, &cfg),
        (Policy::Sketch(sk), _) => engine::siw_star_r(&gp, sk, &cfg),
        (Policy::Modules(set), _) => engine::siw_m(&gp, set, &cfg),
    };
    let (run, failure) = match outcome {
        Ok(run) => (run, None),
        Err(f) => (f.run, Some(f.error)),
    };
    if let Some(path) = trace {
        input(fs::write(path, run.trace_jsonl()).with_context(|| format!("writing {}", path.display())))?;
    }
    if let Some(e) = failure {
        return Err(Exit { code: 1, err: anyhow::anyhow!("FAILURE ({}): {e}", e.kind()) });
    }
    let check = gp.validate_plan(&run.plan);
    if !check.valid {
        return Err(Exit {
            code: 1,
            err: anyhow::anyhow!("internal error: the plan found does not validate (step {:?})", check.failure_index),
        });
    }
    input(write_out(plan, &gp.format_plan(&run.plan)))?;
    eprintln!(
        "solved: {} actions, {} IW episodes, {} states expanded",
        run.plan.len(),
        run.episodes().count(),
        run.expanded()
    );
    Ok(())
}

fn check_sketch(name: &str, sk: &Sketch, args: &[(String, sketchrun_core::features::Kind)]) -> Result<bool> {
    for d in validate_sketch(sk, args) {
        println!("{name}: {d}");
    }
    let (internal, external): (Vec<&String>, Vec<&String>) = sk.memory.iter().partition(|m| sk.is_internal(m));
    let join = |v: Vec<&String>| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
    println!("{name}: internal memory: {}", join(internal));
    println!("{name}: external memory: {}", join(external));
    let g = build_policy_graph(sk)?;
    let result = sieve(&g);
    match &result.verdict {
        Verdict::Accept => println!("{name}: terminating (accepted)"),
        Verdict::Reject { cycle } => {
            let ids: Vec<&str> = cycle.iter().map(|&e| g.rule_ids[g.edges[e].rule].as_str()).collect();
            println!("{name}: not shown terminating (rejected); witness cycle: {}", ids.join(" "));
            print!("{}", CycleDisplay { graph: &g, cycle });
        }
    }
    Ok(result.accepted())
}

fn check(policy: &Path, domain: Option<&Path>) -> Result<(), Exit> {
    let text = input(read(policy))?;
    let d = match domain {
        Some(p) => Some(input(load_domain(p))?),
        None => None,
    };
    let accepted = if is_module_file(&text) {
        let set = input(parse_module_set(&text, d.as_ref()).with_context(|| format!("parsing {}", policy.display())))?;
        let mut all = true;
        for m in &set.modules {
            all &= input(check_sketch(&m.name, &m.sketch, &m.args))?;
        }
        all
    } else {
        let sk = input(parse_sketch(&text).with_context(|| format!("parsing {}", policy.display())))?;
        input(check_sketch("sketch", &sk, &[]))?
    };
    if accepted {
        Ok(())
    } else {
        Err(Exit { code: 1, err: anyhow::anyhow!("termination not established") })
    }
}

fn width(domain: &Path, problem: &Path, sketch: &Path, kmax: usize, bound: usize) -> Result<(), Exit> {
    let d = input(load_domain(domain))?;
    let gp = input(load_problem(&d, problem))?;
    let sk = input(parse_sketch(&read(sketch).map_err(|e| Exit { code: 2, err: e })?).context("parsing the sketch"))?;
    let report = engine::sketch_width(&gp, &sk, kmax, bound).map_err(|e| Exit {
        code: match e {
            engine::ClosureError::Sketch(_) => 2,
            _ => 1,
        },
        err: e.into(),
    })?;
    println!("width\tsubproblem");
    for (sub, w) in &report.rows {
        let w = match w {
            Width::Exactly(k) => k.to_string(),
            Width::Above(k) => format!(">{k}"),
            Width::Unsolvable => "inf".to_string(),
        };
        let shown = SubproblemDisplay { sub, prog_memory: &sk.memory, prog_registers: &sk.registers, problem: &gp };
        println!("{w}\t{shown}");
    }
    println!("subproblems: {}", report.rows.len());
    match report.max {
        Some(k) => {
            println!("max width: {k}");
            Ok(())
        }
        None => Err(Exit { code: 1, err: anyhow::anyhow!("sketch width exceeds {kmax}") }),
    }
}

fn validate(domain: &Path, problem: &Path, plan: &Path) -> Result<(), Exit> {
    let d = input(load_domain(domain))?;
    let gp = input(load_problem(&d, problem))?;
    let text = input(read(plan))?;
    let actions = input(gp.parse_plan(&text).with_context(|| format!("parsing {}", plan.display())))?;
    let check = gp.validate_plan(&actions);
    if check.valid {
        println!("valid: {} actions", actions.len());
        return Ok(());
    }
    let i = check.failure_index.unwrap_or(actions.len());
    let why = if i < actions.len() {
        format!("step {i} `{}` is not applicable", gp.action_name(actions[i]))
    } else {
        format!("the goal does not hold after all {} actions", actions.len())
    };
    println!("invalid at index {i}: {why}");
    Err(Exit { code: 1, err: anyhow::anyhow!("invalid plan") })
}

fn run(cli: Cli) -> Result<(), Exit> {
    match cli.command {
        Command::Solve { domain, problem, policy, algo, kmax, seed, trace, plan } => {
            solve(&domain, &problem, &policy, algo, kmax, seed, trace.as_deref(), plan.as_deref())
        }
        Command::Check { policy, domain } => check(&policy, domain.as_deref()),
        Command::Width { domain, problem, sketch, kmax, bound } => width(&domain, &problem, &sketch, kmax, bound),
        Command::GenBlocks { n, goal, seed, output } => {
            let text = gen_blocks(n, goal, seed).map_err(|e| Exit { code: 2, err: e.into() })?;
            input(write_out(output.as_deref(), &text))
        }
        Command::Validate { domain, problem, plan } => validate(&domain, &problem, &plan),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
