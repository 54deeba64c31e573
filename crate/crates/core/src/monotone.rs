//! Order checks between trajectories, first-crossing detection, and numerical
//! checks of the cooperative structure of the nodal ODE.
//!
//! Two solutions are compared through the margin `ρ⁽¹⁾ − ρ⁽²⁾` at every
//! refined vertex. A crossing is the first time a margin drops below
//! `−tol`, refined by bisection on the cubic Hermite dense output and kept
//! only when the margin stays below `−tol` at three dense samples after it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netgraph::{GraphError, Location, MetricGraph, RefinedGraph, Scenario};
use crate::physics::ModelSet;
use crate::transient::{
    assemble_parent, integrate_many, output_grid, IntegratorOptions, OdeSystem, SystemOptions, Trajectory,
    TransientError,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MonotoneError {
    #[error("trajectories are not comparable: {0}")]
    GridMismatch(String),
    #[error("hypothesis violated: {what} at t = {t} s, {location} (margin {margin:e})")]
    HypothesisViolated {
        what: String,
        t: f64,
        location: String,
        margin: f64,
    },
    #[error("the trajectories never cross")]
    NoCrossing,
    #[error(transparent)]
    Transient(#[from] TransientError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl MonotoneError {
    pub fn category(&self) -> &'static str {
        match self {
            MonotoneError::GridMismatch(_) | MonotoneError::Graph(_) => "invalid-input",
            MonotoneError::HypothesisViolated { .. } => "hypothesis",
            MonotoneError::NoCrossing => "no-crossing",
            MonotoneError::Transient(e) => crate::Error::Transient(e.clone()).category(),
        }
    }
}

/// First persistent crossing of one ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    /// s
    pub t_c: f64,
    /// Refined vertex id.
    pub vertex: String,
    pub vertex_index: usize,
    pub location: Location,
}

/// Result of comparing `traj1 ≥ traj2`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    /// `worst_margin ≥ −tolerance`.
    pub ordered: bool,
    /// kg/m³
    pub tolerance: f64,
    /// min over times and vertices of `ρ⁽¹⁾ − ρ⁽²⁾`, kg/m³.
    pub worst_margin: f64,
    pub worst_time: f64,
    pub worst_vertex: String,
    /// max over times and vertices of `ρ⁽¹⁾ − ρ⁽²⁾`, kg/m³.
    pub max_margin: f64,
    /// Largest density in either trajectory, kg/m³.
    pub scale: f64,
    pub first_crossing: Option<Crossing>,
    /// Per vertex, the first persistent crossing time.
    pub crossing_times: Vec<Option<f64>>,
    pub times: Vec<f64>,
    pub vertex_ids: Vec<String>,
    pub locations: Vec<Location>,
    /// `[time][vertex]`, kg/m³.
    pub margins: Vec<Vec<f64>>,
}

impl OrderReport {
    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.vertex_ids.iter().position(|v| v == id)
    }

    pub fn margin_series(&self, v: usize) -> Vec<f64> {
        self.margins.iter().map(|row| row[v]).collect()
    }

    /// First crossing time at the vertex with id `id`.
    pub fn crossing_time(&self, id: &str) -> Option<f64> {
        self.vertex_index(id).and_then(|v| self.crossing_times[v])
    }

    /// Margin relative to the density scale.
    pub fn relative_worst_margin(&self) -> f64 {
        self.worst_margin / self.scale.max(f64::MIN_POSITIVE)
    }
}

fn same_grid(a: &Trajectory, b: &Trajectory) -> Result<(), MonotoneError> {
    if a.vertex_ids != b.vertex_ids {
        return Err(MonotoneError::GridMismatch("refined vertex sets differ".into()));
    }
    if a.times.len() != b.times.len() {
        return Err(MonotoneError::GridMismatch(format!(
            "{} vs {} output times",
            a.times.len(),
            b.times.len()
        )));
    }
    for (s, t) in a.times.iter().zip(&b.times) {
        if (s - t).abs() > 1e-9 * s.abs().max(1.0) {
            return Err(MonotoneError::GridMismatch(format!("output time {s} vs {t}")));
        }
    }
    Ok(())
}

/// Number of dense samples after `t_c` that must stay below `−tol`.
const PERSISTENCE_SAMPLES: usize = 3;

fn vertex_crossing(a: &Trajectory, b: &Trajectory, v: usize, margins: &[Vec<f64>], tol: f64) -> Option<f64> {
    let diff = |t: f64| a.density_at(v, t) - b.density_at(v, t);
    for k in 0..margins.len() {
        if margins[k][v] >= -tol {
            continue;
        }
        if k == 0 {
            return Some(a.times[0]);
        }
        let (mut lo, mut hi) = (a.times[k - 1], a.times[k]);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if diff(mid) < -tol {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let step = (a.times[k] - hi) / PERSISTENCE_SAMPLES as f64;
        let persistent = (1..=PERSISTENCE_SAMPLES).all(|j| diff(hi + j as f64 * step) < -tol);
        if persistent {
            return Some(hi);
        }
    }
    None
}

/// Compares `traj1 ≥ traj2` on a shared output grid.
pub fn check_order(traj1: &Trajectory, traj2: &Trajectory, tol: f64) -> Result<OrderReport, MonotoneError> {
    same_grid(traj1, traj2)?;
    let margins: Vec<Vec<f64>> = traj1
        .densities
        .iter()
        .zip(&traj2.densities)
        .map(|(r1, r2)| r1.iter().zip(r2).map(|(a, b)| a - b).collect())
        .collect();
    let (mut worst, mut worst_k, mut worst_v) = (f64::INFINITY, 0, 0);
    let mut best = f64::NEG_INFINITY;
    for (k, row) in margins.iter().enumerate() {
        for (v, &m) in row.iter().enumerate() {
            if m < worst {
                (worst, worst_k, worst_v) = (m, k, v);
            }
            best = best.max(m);
        }
    }
    let crossing_times: Vec<Option<f64>> = (0..traj1.vertex_ids.len())
        .map(|v| vertex_crossing(traj1, traj2, v, &margins, tol))
        .collect();
    let first_crossing = crossing_times
        .iter()
        .enumerate()
        .filter_map(|(v, t)| t.map(|t| (v, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(v, t_c)| Crossing {
            t_c,
            vertex: traj1.vertex_ids[v].clone(),
            vertex_index: v,
            location: traj1.locations[v].clone(),
        });
    let scale = traj1.max_density().abs().max(traj2.max_density().abs());
    Ok(OrderReport {
        ordered: worst >= -tol,
        tolerance: tol,
        worst_margin: worst,
        worst_time: traj1.times.get(worst_k).copied().unwrap_or(0.0),
        worst_vertex: traj1.vertex_ids.get(worst_v).cloned().unwrap_or_default(),
        max_margin: best,
        scale,
        first_crossing,
        crossing_times,
        times: traj1.times.clone(),
        vertex_ids: traj1.vertex_ids.clone(),
        locations: traj1.locations.clone(),
        margins,
    })
}

/// Settings for paired simulations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Refinement length, m.
    pub epsilon: f64,
    pub system: SystemOptions,
    pub integrator: IntegratorOptions,
    /// Output spacing, s. Defaults to 1/200 of the horizon.
    pub output_dt: Option<f64>,
    /// Order tolerance, kg/m³. Defaults to ten times the integrator `atol`.
    pub tol_order: Option<f64>,
    /// Uniform sample count for the input-ordering hypotheses.
    pub hypothesis_samples: usize,
}

impl VerifyOptions {
    pub fn new(epsilon: f64) -> Self {
        VerifyOptions {
            epsilon,
            system: SystemOptions::default(),
            integrator: IntegratorOptions::default(),
            output_dt: None,
            tol_order: None,
            hypothesis_samples: 200,
        }
    }

    pub fn tol_order(&self) -> f64 {
        self.tol_order.unwrap_or(10.0 * self.integrator.atol)
    }

    pub fn outputs(&self, horizon: f64) -> Vec<f64> {
        output_grid(horizon, self.output_dt.unwrap_or(horizon / 200.0))
    }
}

/// Relative slack allowed when comparing sampled inputs.
const INPUT_TOL: f64 = 1e-12;

fn sample_times(s1: &Scenario, s2: &Scenario, n: usize) -> Vec<f64> {
    let h = s1.horizon;
    let mut ts: Vec<f64> = (0..=n).map(|k| h * k as f64 / n.max(1) as f64).collect();
    for b in s1.breakpoints().into_iter().chain(s2.breakpoints()) {
        let d = 1e-9 * h;
        ts.extend([b - d, b, b + d].into_iter().filter(|t| (0.0..=h).contains(t)));
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Checks the input hypotheses of the order theorems by sampling: equal
/// horizons and actuator schedules, `q⁽¹⁾ ≥ q⁽²⁾` at flow vertices and
/// `ρ⁽¹⁾ ≥ ρ⁽²⁾` at slack vertices.
pub fn check_hypotheses(g: &MetricGraph, s1: &Scenario, s2: &Scenario, samples: usize) -> Result<(), MonotoneError> {
    s1.validate(g)?;
    s2.validate(g)?;
    if (s1.horizon - s2.horizon).abs() > 1e-12 * s1.horizon {
        return Err(MonotoneError::GridMismatch(format!(
            "horizons {} s and {} s differ",
            s1.horizon, s2.horizon
        )));
    }
    let (c1, c2) = (s1.edge_compat(g)?, s2.edge_compat(g)?);
    let violated = |what: &str, t: f64, location: String, margin: f64| MonotoneError::HypothesisViolated {
        what: what.to_string(),
        t,
        location,
        margin,
    };
    for t in sample_times(s1, s2, samples) {
        for v in 0..g.n_vertices() {
            let id = g.vertex_id(v);
            let (a, b, what) = if g.is_slack(v) {
                (s1.slack_densities[id].value(t), s2.slack_densities[id].value(t), "slack densities not ordered")
            } else {
                (s1.injection(id).value(t), s2.injection(id).value(t), "injections not ordered")
            };
            if a - b < -INPUT_TOL * a.abs().max(b.abs()).max(1.0) {
                return Err(violated(what, t, format!("vertex {id}"), a - b));
            }
        }
        for (e, (x, y)) in c1.iter().zip(&c2).enumerate() {
            for (p, q) in [(&x.inlet, &y.inlet), (&x.outlet, &y.outlet)] {
                let (r1, r2) = (p.ratio(t), q.ratio(t));
                if (r1 - r2).abs() > INPUT_TOL * r1.abs().max(1.0) {
                    return Err(violated("actuator schedules differ", t, format!("edge {}", g.edges()[e].key()), r1 - r2));
                }
            }
        }
    }
    Ok(())
}

/// Integrates two scenarios jointly with a shared step sequence.
pub fn simulate_pair(
    g: &MetricGraph,
    models: &ModelSet,
    s1: &Scenario,
    s2: &Scenario,
    opts: &VerifyOptions,
) -> Result<(Trajectory, Trajectory), MonotoneError> {
    let a = assemble_parent(g, opts.epsilon, s1, models, opts.system)?;
    let b = assemble_parent(g, opts.epsilon, s2, models, opts.system)?;
    let ya = a.initial_state()?;
    let yb = b.initial_state()?;
    let mut out = integrate_many(&[&a, &b], &[ya, yb], &opts.outputs(s1.horizon), &opts.integrator)?;
    let t2 = out.pop().expect("two members");
    let t1 = out.pop().expect("two members");
    Ok((t1, t2))
}

/// Checks the hypotheses, runs both problems and compares them. Under valid
/// hypotheses a crossing is an implementation failure.
pub fn verify_theorem3(
    g: &MetricGraph,
    models: &ModelSet,
    s1: &Scenario,
    s2: &Scenario,
    opts: &VerifyOptions,
) -> Result<OrderReport, MonotoneError> {
    check_hypotheses(g, s1, s2, opts.hypothesis_samples)?;
    let tol = opts.tol_order();
    let (t1, t2) = simulate_pair(g, models, s1, s2, opts)?;
    if let Some((v, m)) = t1.densities[0]
        .iter()
        .zip(&t2.densities[0])
        .map(|(a, b)| a - b)
        .enumerate()
        .find(|(_, m)| *m < -tol)
    {
        return Err(MonotoneError::HypothesisViolated {
            what: "initial states not ordered".into(),
            t: 0.0,
            location: format!("vertex {}", t1.vertex_ids[v]),
            margin: m,
        });
    }
    check_order(&t1, &t2, tol)
}

/// A sign condition that failed at one sampled state.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianViolation {
    pub t: f64,
    /// Row (rate) vertex id.
    pub row: String,
    /// Column (state or input) vertex id.
    pub col: String,
    pub value: f64,
    pub tolerance: f64,
}

/// Sign structure of `∇_ρ F` and `∇_q F` at sampled states.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JacobianReport {
    /// Off-diagonal `∂F_i/∂ρ_j < −tol`.
    pub metzler_violations: Vec<JacobianViolation>,
    /// `∂F_j/∂q_j ≤ tol` or `|∂F_i/∂q_j| > tol` for `i ≠ j`.
    pub input_violations: Vec<JacobianViolation>,
    pub samples: usize,
    /// Smallest off-diagonal state entry relative to its sample's scale.
    pub min_offdiagonal: f64,
}

impl JacobianReport {
    pub fn is_clean(&self) -> bool {
        self.metzler_violations.is_empty() && self.input_violations.is_empty()
    }
}

/// Default Jacobian tolerance relative to the largest entry at each sample.
pub const JACOBIAN_RTOL: f64 = 1e-8;

/// Central-difference Jacobians of the rates at each `(t, state)` sample.
pub fn jacobian_check(sys: &OdeSystem, samples: &[(f64, Vec<f64>)], rtol: f64) -> Result<JacobianReport, MonotoneError> {
    let n = sys.dim();
    let ids: Vec<String> = sys
        .free_vertices()
        .iter()
        .map(|&v| sys.graph().vertex_id(v).to_string())
        .collect();
    let mut report = JacobianReport {
        min_offdiagonal: f64::INFINITY,
        ..Default::default()
    };
    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
    for (t, y) in samples {
        let t = *t;
        let q = sys.injections_at(t);
        let mut jr = vec![vec![0.0; n]; n];
        let mut jq = vec![vec![0.0; n]; n];
        for j in 0..n {
            let h = 1e-6 * y[j].abs();
            let mut yp = y.clone();
            yp[j] = y[j] + h;
            sys.rhs_with_injections(t, &yp, &q, &mut fp)?;
            yp[j] = y[j] - h;
            sys.rhs_with_injections(t, &yp, &q, &mut fm)?;
            for i in 0..n {
                jr[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
            let hq = 1e-6 * q[j].abs().max(1.0);
            let mut qp = q.clone();
            qp[j] = q[j] + hq;
            sys.rhs_with_injections(t, y, &qp, &mut fp)?;
            qp[j] = q[j] - hq;
            sys.rhs_with_injections(t, y, &qp, &mut fm)?;
            for i in 0..n {
                jq[i][j] = (fp[i] - fm[i]) / (2.0 * hq);
            }
        }
        let amax = |m: &[Vec<f64>]| m.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
        let (sr, sq) = (amax(&jr), amax(&jq));
        let (tr, tq) = (rtol * sr, rtol * sq);
        let violation = |i: usize, j: usize, value: f64, tolerance: f64| JacobianViolation {
            t,
            row: ids[i].clone(),
            col: ids[j].clone(),
            value,
            tolerance,
        };
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    if sr > 0.0 {
                        report.min_offdiagonal = report.min_offdiagonal.min(jr[i][j] / sr);
                    }
                    if jr[i][j] < -tr {
                        report.metzler_violations.push(violation(i, j, jr[i][j], tr));
                    }
                    if jq[i][j].abs() > tq {
                        report.input_violations.push(violation(i, j, jq[i][j], tq));
                    }
                } else if jq[i][i] <= tq {
                    report.input_violations.push(violation(i, i, jq[i][i], tq));
                }
            }
        }
        report.samples += 1;
    }
    Ok(report)
}

/// `n` states drawn uniformly from `[lo, hi]` per vertex at uniform times in
/// the horizon, reproducible from `seed`.
pub fn random_states(sys: &OdeSystem, n: usize, lo: f64, hi: f64, seed: u64) -> Vec<(f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = rng.gen_range(0.0..=sys.horizon());
            let y = (0..sys.dim()).map(|_| rng.gen_range(lo..=hi)).collect();
            (t, y)
        })
        .collect()
}

/// Where and when the first crossing happened on the parent graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub t_c: f64,
    pub vertex: String,
    pub location: Location,
}

impl Localization {
    /// True when the crossing sits on one of the given parent nodes.
    pub fn at_any_node(&self, nodes: &[&str]) -> bool {
        matches!(&self.location, Location::Node(id) if nodes.contains(&id.as_str()))
    }
}

/// Classifies the first crossing of `report` on the parent of `rg`.
pub fn localize_first_crossing(report: &OrderReport, rg: &RefinedGraph) -> Result<Localization, MonotoneError> {
    let c = report.first_crossing.as_ref().ok_or(MonotoneError::NoCrossing)?;
    let v = rg
        .graph
        .vertex_index(&c.vertex)
        .ok_or_else(|| MonotoneError::GridMismatch(format!("vertex {} is not in the refined graph", c.vertex)))?;
    Ok(Localization {
        t_c: c.t_c,
        vertex: c.vertex.clone(),
        location: rg.location(v),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::physics::{CustomModel, Dissipation};
    use crate::timefn::TimeFunction;
    use std::sync::Arc;

    fn pipe_pair(a1: f64, a2: f64) -> (Trajectory, Trajectory) {
        let g = fixtures::single_pipe_graph();
        let s1 = fixtures::single_pipe_scenario(a1, 4.0 * fixtures::HOUR);
        let s2 = fixtures::single_pipe_scenario(a2, 4.0 * fixtures::HOUR);
        let mut o = VerifyOptions::new(5000.0);
        o.output_dt = Some(600.0);
        simulate_pair(&g, &ModelSet::ideal_gas(&g), &s1, &s2, &o).unwrap()
    }

    #[test]
    fn identical_trajectories_are_ordered() {
        let (a, _) = pipe_pair(120.0, 120.0);
        let r = check_order(&a, &a, 1e-8).unwrap();
        assert!(r.ordered);
        assert_eq!(r.worst_margin, 0.0);
        assert!(r.first_crossing.is_none());
    }

    #[test]
    fn swapping_negates_margins() {
        let (a, b) = pipe_pair(120.0, 300.0);
        let ab = check_order(&a, &b, 1e-8).unwrap();
        let ba = check_order(&b, &a, 1e-8).unwrap();
        assert!(ab.ordered);
        assert_eq!(ab.worst_margin, -ba.max_margin);
        assert_eq!(ab.max_margin, -ba.worst_margin);
        assert!(!ba.ordered);
        // The smaller withdrawal starts equal and separates immediately at the outlet.
        assert!(ba.first_crossing.is_some());
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let (a, _) = pipe_pair(120.0, 120.0);
        let mut b = a.clone();
        b.times.pop();
        b.densities.pop();
        assert!(matches!(check_order(&a, &b, 1e-8), Err(MonotoneError::GridMismatch(_))));
    }

    #[test]
    fn unordered_inputs_are_rejected() {
        let g = fixtures::single_pipe_graph();
        let s1 = fixtures::single_pipe_scenario(300.0, 3600.0);
        let s2 = fixtures::single_pipe_scenario(120.0, 3600.0);
        let err = verify_theorem3(&g, &ModelSet::ideal_gas(&g), &s1, &s2, &VerifyOptions::new(5000.0)).unwrap_err();
        assert!(matches!(err, MonotoneError::HypothesisViolated { .. }));
        assert_eq!(err.category(), "hypothesis");
    }

    #[test]
    fn differing_actuators_are_rejected() {
        let g = fixtures::five_node_graph();
        let s1 = fixtures::five_node_scenario(&g, fixtures::FiveNodeCase::Baseline);
        let s2 = fixtures::five_node_scenario(&g, fixtures::FiveNodeCase::CompressorSchedule);
        assert!(matches!(
            check_hypotheses(&g, &s1, &s2, 50),
            Err(MonotoneError::HypothesisViolated { .. })
        ));
    }

    #[test]
    fn pipe_at_equilibrium_is_metzler() {
        let g = fixtures::single_pipe_graph();
        let s = fixtures::single_pipe_scenario(0.0, 3600.0);
        let sys = assemble_parent(&g, 2000.0, &s, &ModelSet::ideal_gas(&g), SystemOptions::default()).unwrap();
        let y = vec![fixtures::INLET_DENSITY; sys.dim()];
        let r = jacobian_check(&sys, &[(0.0, y)], JACOBIAN_RTOL).unwrap();
        assert!(r.is_clean(), "{r:?}");
        assert!(r.min_offdiagonal >= 0.0);
    }

    #[test]
    fn reversed_dissipation_breaks_metzler() {
        let g = fixtures::single_pipe_graph();
        let s = fixtures::single_pipe_scenario(0.0, 3600.0).with_injection("2", TimeFunction::constant(-10.0));
        let flipped: Arc<dyn Dissipation> = Arc::new(CustomModel::new("flipped", |_t, u, v| -1e-3 * u * v));
        let sys = assemble_parent(&g, 5000.0, &s, &ModelSet::from_models(vec![flipped]), SystemOptions::default())
            .unwrap();
        let states = random_states(&sys, 3, 40.0, 50.0, 7);
        let r = jacobian_check(&sys, &states, JACOBIAN_RTOL).unwrap();
        assert!(!r.metzler_violations.is_empty());
    }

    #[test]
    fn ordered_pair_has_no_crossing_to_localize() {
        let (a, b) = pipe_pair(120.0, 300.0);
        let r = check_order(&a, &b, 1e-8).unwrap();
        let rg = crate::netgraph::refine(&fixtures::single_pipe_graph(), 5000.0).unwrap();
        assert_eq!(localize_first_crossing(&r, &rg), Err(MonotoneError::NoCrossing));
    }
}
