//! Engine runs on hand-written instances.

use sketchrun_core::engine::{siw_m, siw_r, siw_star_r, Config, Event};
use sketchrun_core::fixtures;

/// x = a, y = b; the hand starts out holding c, and d sits on b.
fn holding_initially() -> sketchrun_core::ground::GroundProblem {
    fixtures::blocks_problem(
        &["a", "b", "c", "d"],
        &["(holding c)", "(ontable a)", "(clear a)", "(ontable b)", "(on d b)", "(clear d)"],
        &["(on a b)"],
    )
}

#[test]
fn policies_start_by_dropping_a_held_block() {
    let gp = holding_initially();
    let cfg = Config::default();

    let run = siw_star_r(&gp, &fixtures::example3(), &cfg).map_err(|f| f.error).unwrap();
    assert!(gp.validate_plan(&run.plan).valid);
    assert!(run.episodes().all(|(k, len)| k == 0 && len == 1));
    assert_eq!(gp.action_name(run.plan[0]), "(putdown c)");
    assert!(matches!(&run.trace[1], Event::Iw { rule: Some(r), .. } if r == "r8"), "{:?}", run.trace[..2].to_vec());

    let run = siw_m(&gp, &fixtures::on_modules(), &cfg).map_err(|f| f.error).unwrap();
    assert!(gp.validate_plan(&run.plan).valid);
    assert_eq!(gp.action_name(run.plan[0]), "(putdown c)");
    assert_eq!(run.episodes().count(), 0);

    let run = siw_m(&gp, &fixtures::blocks_modules(), &cfg).map_err(|f| f.error).unwrap();
    assert!(gp.validate_plan(&run.plan).valid);

    for sk in [fixtures::example1_w0(), fixtures::example1_w2()] {
        let run = siw_r(&gp, &sk, &cfg).map_err(|f| f.error).unwrap();
        assert!(gp.validate_plan(&run.plan).valid);
    }
}
