//! Bundled domains, policies and modules, plus instance generators.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::Feature;
use crate::ground::{ground, GroundProblem};
use crate::pddl::{parse_domain, parse_problem, PddlError};
use crate::sketch::{parse_module_set, parse_sketch, ModuleSet, Sketch};

pub const BLOCKSWORLD_DOMAIN: &str = include_str!("../fixtures/blocksworld.pddl");
pub const HANOI_DOMAIN: &str = include_str!("../fixtures/hanoi.pddl");
/// Width-0 policy for Q_on with features On, H, Hx, n.
pub const EXAMPLE1_W0: &str = include_str!("../fixtures/example1-w0.sketch");
/// Two-rule width-2 sketch for Q_on.
pub const EXAMPLE1_W2: &str = include_str!("../fixtures/example1-w2.sketch");
/// Indexical Q_on policy with registers r0, r1.
pub const EXAMPLE3: &str = include_str!("../fixtures/example3.sketch");
pub const HANOI_SKETCH: &str = include_str!("../fixtures/hanoi.sketch");
/// A sketch that increments and decrements the same counter.
pub const INCDEC_SKETCH: &str = include_str!("../fixtures/incdec.sketch");
/// Entry `on-main` plus the model-free `on(x, y)` module.
pub const ON_MODULES: &str = include_str!("../fixtures/on.modules");
/// Entry `blocks` plus `tower`, `on` and `on-table`.
pub const BLOCKS_MODULES: &str = include_str!("../fixtures/blocks.modules");

/// Every bundled sketch, by file name.
pub const SKETCHES: [(&str, &str); 5] = [
    ("example1-w0.sketch", EXAMPLE1_W0),
    ("example1-w2.sketch", EXAMPLE1_W2),
    ("example3.sketch", EXAMPLE3),
    ("hanoi.sketch", HANOI_SKETCH),
    ("incdec.sketch", INCDEC_SKETCH),
];

fn bundled_sketch(text: &str) -> Sketch {
    parse_sketch(text).expect("bundled sketch parses")
}

pub fn example1_w0() -> Sketch {
    bundled_sketch(EXAMPLE1_W0)
}

pub fn example1_w2() -> Sketch {
    bundled_sketch(EXAMPLE1_W2)
}

pub fn example3() -> Sketch {
    bundled_sketch(EXAMPLE3)
}

pub fn hanoi_sketch() -> Sketch {
    bundled_sketch(HANOI_SKETCH)
}

pub fn incdec_sketch() -> Sketch {
    bundled_sketch(INCDEC_SKETCH)
}

pub fn on_modules() -> ModuleSet {
    let d = parse_domain(BLOCKSWORLD_DOMAIN).expect("bundled domain parses");
    parse_module_set(ON_MODULES, Some(&d)).expect("bundled modules parse")
}

pub fn blocks_modules() -> ModuleSet {
    let d = parse_domain(BLOCKSWORLD_DOMAIN).expect("bundled domain parses");
    parse_module_set(BLOCKS_MODULES, Some(&d)).expect("bundled modules parse")
}

/// The tracked Hanoi features p12, p13, p23.
pub fn hanoi_features() -> Vec<Feature> {
    hanoi_sketch().features
}

/// Parses and grounds a problem against a domain.
pub fn load(domain: &str, problem: &str) -> Result<GroundProblem, PddlError> {
    let d = parse_domain(domain)?;
    Ok(ground(&parse_problem(problem, &d)?))
}

/// Hanoi with `n` disks `d1` (smallest) .. `dn` stacked on `peg1`; the goal is
/// the same tower on `peg3`.
pub fn hanoi_problem(n: usize) -> String {
    let disks: Vec<String> = (1..=n).map(|i| format!("d{i}")).collect();
    let pegs = ["peg1", "peg2", "peg3"];
    let mut s = format!("(define (problem hanoi-{n}) (:domain hanoi)\n  (:objects");
    for d in &disks {
        write!(s, " {d}").unwrap();
    }
    s.push_str(" - disk peg1 peg2 peg3 - peg)\n  (:init");
    for (i, d) in disks.iter().enumerate() {
        for bigger in disks[i + 1..].iter().map(String::as_str).chain(pegs) {
            write!(s, " (smaller {d} {bigger})").unwrap();
        }
    }
    let below = |i: usize, peg: &str| if i + 1 < n { disks[i + 1].clone() } else { peg.to_string() };
    for (i, d) in disks.iter().enumerate() {
        write!(s, " (on {d} {})", below(i, "peg1")).unwrap();
    }
    s.push_str(if n > 0 { " (clear d1)" } else { " (clear peg1)" });
    s.push_str(" (clear peg2) (clear peg3))\n  (:goal (and");
    for (i, d) in disks.iter().enumerate() {
        write!(s, " (on {d} {})", below(i, "peg3")).unwrap();
    }
    s.push_str(")))\n");
    s
}

pub fn hanoi(n: usize) -> GroundProblem {
    load(HANOI_DOMAIN, &hanoi_problem(n)).expect("generated Hanoi instance is valid")
}

/// A Blocksworld problem over the given objects; atoms are written as `(on a b)`.
pub fn blocks_problem_text(objects: &[&str], init: &[&str], goal: &[&str]) -> String {
    format!(
        "(define (problem p) (:domain blocksworld)\n  (:objects {} - block)\n  (:init {})\n  (:goal (and {})))\n",
        objects.join(" "),
        init.join(" "),
        goal.join(" ")
    )
}

pub fn blocks_problem(objects: &[&str], init: &[&str], goal: &[&str]) -> GroundProblem {
    load(BLOCKSWORLD_DOMAIN, &blocks_problem_text(objects, init, goal)).expect("fixture instance is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalKind {
    /// A single `on(x, y)` atom.
    On,
    /// All blocks in one tower on the table.
    Tower,
    /// Several target towers.
    Arbitrary,
}

impl std::str::FromStr for GoalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "on" => Ok(GoalKind::On),
            "tower" => Ok(GoalKind::Tower),
            "arbitrary" => Ok(GoalKind::Arbitrary),
            _ => Err(format!("unknown goal kind `{s}` (expected on, tower or arbitrary)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenError {
    #[error("need at least {need} blocks, got {got}")]
    TooFewBlocks { need: usize, got: usize },
}

/// Random partition of `blocks` into towers, bottom first.
fn random_towers(blocks: &[String], rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let mut order = blocks.to_vec();
    order.shuffle(rng);
    let mut towers: Vec<Vec<String>> = Vec::new();
    for b in order {
        let k = rng.gen_range(0..=towers.len());
        if k == towers.len() {
            towers.push(vec![b]);
        } else {
            towers[k].push(b);
        }
    }
    towers
}

fn tower_atoms(towers: &[Vec<String>], out: &mut Vec<String>, with_clear: bool) {
    for t in towers {
        out.push(format!("(ontable {})", t[0]));
        for w in t.windows(2) {
            out.push(format!("(on {} {})", w[1], w[0]));
        }
        if with_clear {
            out.push(format!("(clear {})", t[t.len() - 1]));
        }
    }
}

/// Reproducible random Blocksworld instance with blocks `b1..bn` in random
/// towers and an empty hand.
pub fn gen_blocks(n: usize, kind: GoalKind, seed: u64) -> Result<String, GenError> {
    let need = if kind == GoalKind::On { 2 } else { 1 };
    if n < need {
        return Err(GenError::TooFewBlocks { need, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks: Vec<String> = (1..=n).map(|i| format!("b{i}")).collect();
    let start = random_towers(&blocks, &mut rng);
    let mut init = Vec::new();
    tower_atoms(&start, &mut init, true);
    init.push("(handempty)".to_string());
    let mut goal = Vec::new();
    match kind {
        GoalKind::On => {
            // prefer a pair that does not hold initially
            for _ in 0..16 {
                let pair: Vec<&String> = blocks.choose_multiple(&mut rng, 2).collect();
                goal = vec![format!("(on {} {})", pair[0], pair[1])];
                if !init.contains(&goal[0]) {
                    break;
                }
            }
        }
        GoalKind::Tower => {
            let mut order = blocks.clone();
            order.shuffle(&mut rng);
            tower_atoms(&[order], &mut goal, false);
        }
        GoalKind::Arbitrary => tower_atoms(&random_towers(&blocks, &mut rng), &mut goal, false),
    }
    let kind_name = match kind {
        GoalKind::On => "on",
        GoalKind::Tower => "tower",
        GoalKind::Arbitrary => "arbitrary",
    };
    Ok(format!(
        "(define (problem blocks-{kind_name}-{n}-{seed}) (:domain blocksworld)\n  (:objects {} - block)\n  (:init {})\n  (:goal (and {})))\n",
        blocks.join(" "),
        init.join(" "),
        goal.join(" ")
    ))
}

/// Grounded [`gen_blocks`] instance.
pub fn blocks(n: usize, kind: GoalKind, seed: u64) -> GroundProblem {
    let text = gen_blocks(n, kind, seed).expect("block count is valid");
    load(BLOCKSWORLD_DOMAIN, &text).expect("generated instance is valid")
}
