mod common;

use proptest::prelude::*;

use common::{random_graph, random_ordered_pair, rng, shortest_edge, HOUR};
use monoflow::fixtures::{self, FiveNodeCase};
use monoflow::monotone::{
    check_order, jacobian_check, localize_first_crossing, random_states, simulate_pair, verify_theorem3, MonotoneError,
    VerifyOptions, JACOBIAN_RTOL,
};
use monoflow::netgraph::refine;
use monoflow::physics::ModelSet;
use monoflow::transient::assemble_parent;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ordered_inputs_stay_ordered(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 5);
        let (s1, s2) = random_ordered_pair(&mut r, &g, 4.0 * HOUR);
        let o = VerifyOptions::new(shortest_edge(&g) / 4.0);
        let rep = verify_theorem3(&g, &ModelSet::ideal_gas(&g), &s1, &s2, &o).unwrap();
        prop_assert!(rep.worst_margin >= -1e-9 * rep.scale, "{}", rep.worst_margin);
        // Swapping the pair flips every margin.
        let (t1, t2) = simulate_pair(&g, &ModelSet::ideal_gas(&g), &s1, &s2, &o).unwrap();
        let back = check_order(&t2, &t1, o.tol_order()).unwrap();
        prop_assert_eq!(back.worst_margin, -rep.max_margin);
    }

    #[test]
    fn random_networks_are_cooperative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 6);
        let (s, _) = random_ordered_pair(&mut r, &g, HOUR);
        let sys = assemble_parent(&g, shortest_edge(&g) / 4.0, &s, &ModelSet::ideal_gas(&g), Default::default()).unwrap();
        let states = random_states(&sys, 10, 20.0, 60.0, seed);
        let rep = jacobian_check(&sys, &states, JACOBIAN_RTOL).unwrap();
        prop_assert!(rep.is_clean(), "{:?}", rep.metzler_violations.first());
    }
}

#[test]
fn reversed_inputs_are_rejected() {
    let g = fixtures::five_node_graph();
    let hi = fixtures::five_node_scenario(&g, FiveNodeCase::ReversalHigh);
    let lo = fixtures::five_node_scenario(&g, FiveNodeCase::ReversalLow);
    let err = verify_theorem3(&g, &ModelSet::ideal_gas(&g), &hi, &lo, &VerifyOptions::new(5000.0)).unwrap_err();
    match err {
        MonotoneError::HypothesisViolated { location, t, .. } => {
            assert_eq!(location, "vertex 5");
            assert!(t > fixtures::REVERSAL_TIME);
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn reversal_crossing_starts_at_node_5() {
    let g = fixtures::five_node_graph();
    let m = ModelSet::ideal_gas(&g);
    let hi = fixtures::five_node_scenario(&g, FiveNodeCase::ReversalHigh);
    let lo = fixtures::five_node_scenario(&g, FiveNodeCase::ReversalLow);
    let o = VerifyOptions::new(5000.0);
    let (t1, t2) = simulate_pair(&g, &m, &hi, &lo, &o).unwrap();
    let rep = check_order(&t1, &t2, o.tol_order()).unwrap();
    assert!(!rep.ordered);
    let loc = localize_first_crossing(&rep, &refine(&g, o.epsilon).unwrap()).unwrap();
    assert!(loc.at_any_node(&["5"]));
    assert!(loc.t_c > fixtures::REVERSAL_TIME);
    let t4 = rep.crossing_time("4").expect("node 4 crosses later");
    assert!(loc.t_c < t4);
    // Every other crossing comes after the first.
    assert!(rep.crossing_times.iter().flatten().all(|&t| t >= loc.t_c));
}
