//! End-to-end runs of the `sketchrun` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sketchrun_core::fixtures::{self, gen_blocks, GoalKind};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sketchrun")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn path(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

#[test]
fn solves_hanoi_with_trace() {
    let dir = TempDir::new().unwrap();
    let problem = write(&dir, "hanoi3.pddl", &fixtures::hanoi_problem(3));
    let trace = dir.path().join("trace.jsonl");
    let out = run(&[
        "solve",
        &path("hanoi.pddl"),
        &problem,
        &path("hanoi.sketch"),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 7);
    assert!(stderr(&out).contains("solved: 7 actions"));
    let trace = fs::read_to_string(trace).unwrap();
    assert_eq!(trace.lines().count(), 7);
    assert!(trace.lines().all(|l| l.starts_with("{\"ev\":\"iw\"")));
}

#[test]
fn hanoi_with_four_disks_fails_with_a_cycle() {
    let dir = TempDir::new().unwrap();
    let problem = write(&dir, "hanoi4.pddl", &fixtures::hanoi_problem(4));
    let trace = dir.path().join("trace.jsonl");
    let out = run(&["solve", &path("hanoi.pddl"), &problem, &path("hanoi.sketch"), "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("FAILURE (cycle)"), "{}", stderr(&out));
    assert!(!fs::read_to_string(trace).unwrap().is_empty(), "the partial trace is kept");
}

#[test]
fn solves_arbitrary_goals_with_modules() {
    let dir = TempDir::new().unwrap();
    let problem = write(&dir, "p.pddl", &gen_blocks(6, GoalKind::Arbitrary, 4).unwrap());
    let plan = dir.path().join("plan.txt");
    let trace = dir.path().join("trace.jsonl");
    let out = run(&[
        "solve",
        &path("blocksworld.pddl"),
        &problem,
        &path("blocks.modules"),
        "--plan",
        plan.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let trace = fs::read_to_string(trace).unwrap();
    let calls = trace.matches("\"ev\":\"call\"").count();
    assert!(calls > 0);
    assert_eq!(calls, trace.matches("\"ev\":\"return\"").count());
    let out = run(&["validate", &path("blocksworld.pddl"), &problem, plan.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("valid: "));
}

#[test]
fn explicit_algorithms() {
    let dir = TempDir::new().unwrap();
    let problem = write(&dir, "p.pddl", &gen_blocks(5, GoalKind::On, 2).unwrap());
    for (policy, algo) in [
        ("example1-w2.sketch", "siw-r"),
        ("example1-w0.sketch", "siw-star"),
        ("example3.sketch", "siw-star"),
        ("on.modules", "siw-m"),
    ] {
        let out = run(&["solve", &path("blocksworld.pddl"), &problem, &path(policy), "--algo", algo]);
        assert_eq!(code(&out), 0, "{policy}: {}", stderr(&out));
    }
    let out = run(&["solve", &path("blocksworld.pddl"), &problem, &path("example3.sketch"), "--algo", "siw-r"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("FAILURE (not-plain)"));
}

#[test]
fn bad_input_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let problem = write(&dir, "p.pddl", &gen_blocks(3, GoalKind::On, 0).unwrap());
    let sketch = write(
        &dir,
        "bad.sketch",
        "(sketch :features ((bool q (nonempty (primitive nosuch 0)))) :rules ((rule (q) ((not q)))))",
    );
    let out = run(&["solve", &path("blocksworld.pddl"), &problem, &sketch]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nosuch"), "{}", stderr(&out));
    let out = run(&["solve", &path("blocksworld.pddl"), "/nonexistent.pddl", &path("example3.sketch")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn check_reports_verdicts() {
    let out = run(&["check", &path("example1-w0.sketch")]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("terminating (accepted)"));

    let out = run(&["check", &path("incdec.sketch")]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("witness cycle: r0"), "{}", stdout(&out));

    let out = run(&["check", &path("example3.sketch")]);
    assert!(stdout(&out).contains("internal memory: m0 m1 m2 m3"), "{}", stdout(&out));

    let out = run(&["check", &path("blocks.modules"), "--domain", &path("blocksworld.pddl")]);
    assert!(stdout(&out).contains("tower: terminating (accepted)"), "{}", stdout(&out));

    let dir = TempDir::new().unwrap();
    let bad = write(
        &dir,
        "bad.sketch",
        "(sketch :memory (m0 m1) :internal (m0) :initial m0 :registers (r0)\n\
         :features ((concept c (primitive clear 0)))\n\
         :rules ((load-rule m0 ((gt c)) (load c) () m1)))",
    );
    let out = run(&["check", &bad]);
    assert_eq!(code(&out), 2, "{}{}", stdout(&out), stderr(&out));
}

#[test]
fn width_table() {
    let dir = TempDir::new().unwrap();
    let problem = write(&dir, "p.pddl", &gen_blocks(3, GoalKind::On, 0).unwrap());
    let out = run(&["width", &path("blocksworld.pddl"), &problem, &path("example3.sketch")]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("width\tsubproblem\n"));
    assert!(text.ends_with("max width: 0\n"), "{text}");

    let problem = write(&dir, "q.pddl", &gen_blocks(4, GoalKind::On, 0).unwrap());
    let out = run(&["width", &path("blocksworld.pddl"), &problem, &path("example3.sketch"), "--kmax", "1"]);
    assert_eq!(code(&out), 1, "induced subproblems of width 2 exceed k = 1");
    let out = run(&["width", &path("blocksworld.pddl"), &problem, &path("example3.sketch"), "--bound", "2"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("more than 2 induced subproblems"));
}

#[test]
fn gen_blocks_is_deterministic() {
    let a = run(&["gen-blocks", "6", "arbitrary", "--seed", "9"]);
    let b = run(&["gen-blocks", "6", "arbitrary", "--seed", "9"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a), gen_blocks(6, GoalKind::Arbitrary, 9).unwrap());
    assert_ne!(a.stdout, run(&["gen-blocks", "6", "arbitrary", "--seed", "10"]).stdout);
    assert_eq!(code(&run(&["gen-blocks", "1", "on"])), 2);
    assert_eq!(code(&run(&["gen-blocks", "3", "sideways"])), 2);
}

#[test]
fn validate_plans() {
    let dir = TempDir::new().unwrap();
    let problem = write(&dir, "p.pddl", &fixtures::hanoi_problem(1));
    let good = write(&dir, "good.plan", "(move d1 peg1 peg3)\n");
    let out = run(&["validate", &path("hanoi.pddl"), &problem, &good]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "valid: 1 actions\n");

    let empty = write(&dir, "empty.plan", "");
    let out = run(&["validate", &path("hanoi.pddl"), &problem, &empty]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).starts_with("invalid at index 0"), "{}", stdout(&out));

    let problem = write(&dir, "q.pddl", &fixtures::hanoi_problem(2));
    let truncated = write(&dir, "short.plan", "(move d1 d2 peg2)\n(move d2 peg1 peg3)\n");
    let out = run(&["validate", &path("hanoi.pddl"), &problem, &truncated]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).starts_with("invalid at index 2"), "{}", stdout(&out));

    let wrong = write(&dir, "wrong.plan", "(move d2 peg1 peg3)\n");
    let out = run(&["validate", &path("hanoi.pddl"), &problem, &wrong]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).starts_with("invalid at index 0"));

    let blocks = write(
        &dir,
        "done.pddl",
        &fixtures::blocks_problem_text(&["a", "b"], &["(on a b)", "(ontable b)", "(clear a)", "(handempty)"], &["(on a b)"]),
    );
    let out = run(&["validate", &path("blocksworld.pddl"), &blocks, &empty]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "valid: 0 actions\n");
}

#[test]
fn runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let problem = write(&dir, "p.pddl", &gen_blocks(7, GoalKind::Arbitrary, 3).unwrap());
    let mut outputs = Vec::new();
    for i in 0..2 {
        let trace = dir.path().join(format!("t{i}.jsonl"));
        let out = run(&[
            "solve",
            &path("blocksworld.pddl"),
            &problem,
            &path("blocks.modules"),
            "--seed",
            "5",
            "--trace",
            trace.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        outputs.push((out.stdout, fs::read(trace).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}
