use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use monoflow::fixtures::{self, FiveNodeCase, DAY, HOUR};
use monoflow::monotone::VerifyOptions;
use monoflow::physics::ModelSet;
use monoflow::robust::{
    certify_envelope, run_nmp, sandwich, verify_corollary1, NmpOptions, PolicyAction, RobustError, Side,
};
use monoflow::timefn::TimeFunction;
use monoflow::transient::{assemble_parent, integrate};

#[test]
fn certified_envelope_is_feasible_and_deep_one_is_not() {
    let g = fixtures::five_node_graph();
    let m = ModelSet::ideal_gas(&g);
    let base = fixtures::five_node_scenario(&g, FiveNodeCase::Baseline);
    let o = VerifyOptions::new(5000.0);
    let ok = certify_envelope(&g, &m, &base, &fixtures::five_node_certified_envelope(&g), &o).unwrap();
    assert!(ok.feasible);
    let deep = certify_envelope(&g, &m, &base, &fixtures::five_node_deep_envelope(&g), &o).unwrap();
    assert!(!deep.feasible);
    let first = &deep.violations[0];
    assert_eq!(first.vertex, "5");
    assert_eq!(first.side, Side::Below);
    assert!(first.t > 6.0 * HOUR && first.t < 18.0 * HOUR);
}

#[test]
fn interior_profile_is_sandwiched() {
    let g = fixtures::five_node_graph();
    let m = ModelSet::ideal_gas(&g);
    let base = fixtures::five_node_scenario(&g, FiveNodeCase::Baseline);
    let env = fixtures::five_node_certified_envelope(&g);
    let o = VerifyOptions::new(5000.0);
    let cert = certify_envelope(&g, &m, &base, &env, &o).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut s = base.clone();
    for id in env.vertices() {
        let w: f64 = r.gen_range(0.0..1.0);
        let lo = env.lower[&id].clone().scaled(1.0 - w);
        s.injections.insert(id.clone(), lo.plus(env.upper[&id].clone().scaled(w)));
    }
    env.contains(&s).unwrap();
    let sys = assemble_parent(&g, o.epsilon, &s, &m, o.system).unwrap();
    let tr = integrate(&sys, &o.outputs(s.horizon), &o.integrator).unwrap();
    // Independent runs share no steps, so allow the integration tolerance.
    let tol = 1e-6 * tr.max_density();
    sandwich(&tr, &cert.runs.upper, &cert.runs.lower, tol).unwrap();
}

#[test]
fn policy_pins_the_violating_node_once() {
    let g = fixtures::five_node_graph();
    let m = ModelSet::ideal_gas(&g);
    let env = fixtures::five_node_certified_envelope(&g);
    let realized = fixtures::five_node_nmp_realized(&g);
    let o = NmpOptions::new(5000.0);
    let trace = run_nmp(&g, &m, &env, &realized, &o).unwrap();
    assert_eq!(trace.actions.len(), 1);
    let a = &trace.actions[0];
    assert_eq!((a.node.as_str(), a.action), ("5", PolicyAction::PinToUpper));
    assert!(a.t > 2.0 * HOUR && a.t < 4.0 * HOUR);
    let q = trace.effective.injection("5");
    for t in [a.t + 1.0, 12.0 * HOUR, DAY] {
        assert_eq!(q.value(t), env.upper["5"].value(t));
    }
    verify_corollary1(&trace, o.verify.tol_order()).unwrap();

    let off = NmpOptions { enabled: false, ..o };
    let ablation = run_nmp(&g, &m, &env, &realized, &off).unwrap();
    assert!(ablation.actions.is_empty());
    match verify_corollary1(&ablation, o.verify.tol_order()).unwrap_err() {
        RobustError::SandwichViolated { vertex, side, .. } => {
            assert_eq!(side, Side::Above);
            assert!(vertex == "5" || vertex.starts_with("4~5"));
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn over_withdrawal_pins_to_lower() {
    let g = fixtures::five_node_graph();
    let m = ModelSet::ideal_gas(&g);
    let env = fixtures::five_node_certified_envelope(&g);
    let realized = fixtures::five_node_scenario(&g, FiveNodeCase::Baseline).with_injection(
        "4",
        TimeFunction::piecewise(vec![[0.0, -15.0], [2.0 * HOUR, -15.0], [3.0 * HOUR, -30.0], [DAY, -30.0]]),
    );
    let o = NmpOptions::new(5000.0);
    let trace = run_nmp(&g, &m, &env, &realized, &o).unwrap();
    assert_eq!(trace.actions.len(), 1);
    assert_eq!(trace.actions[0].action, PolicyAction::PinToLower);
    assert_eq!(trace.actions[0].node, "4");
    verify_corollary1(&trace, o.verify.tol_order()).unwrap();
}
