//! Reference networks and scenarios.
//!
//! * The single pipe: 20 km, 0.9144 m diameter, λ = 0.01, inlet held at
//!   6.5 MPa, outlet withdrawal varying as a slow sinusoid (3 cycles in 24 h).
//! * The five-node network: node 1 is the slack supply, nodes 2 to 5 withdraw
//!   gas. Three compressors sit at the inlets of pipes 1→2, 2→3 and 3→4.
//!   Pipe lengths, diameters and baseline withdrawals were chosen for this
//!   crate (the original study's values are not published); every check on
//!   this network is qualitative or self-derived.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::netgraph::{build_graph, Edge, GraphSpec, MetricGraph, Placement, Scenario, Vertex, VertexKind};
use crate::physics::GasConstants;
use crate::robust::Envelope;
use crate::timefn::TimeFunction;

/// c² for the default gas constants, m²/s².
pub const WAVE_SPEED_SQ: f64 = 473.92 * 288.706;
/// 6.5 MPa, kg/m³.
pub const INLET_DENSITY: f64 = 6.5e6 / WAVE_SPEED_SQ;
/// Single-pipe withdrawal period: three cycles in 24 h, s.
pub const PIPE_PERIOD: f64 = 8.0 * 3600.0;
pub const DAY: f64 = 24.0 * 3600.0;
pub const HOUR: f64 = 3600.0;

fn vertex(id: &str, kind: VertexKind) -> Vertex {
    Vertex {
        id: id.to_string(),
        kind,
    }
}

pub fn single_pipe_graph() -> MetricGraph {
    build_graph(GraphSpec {
        gas: GasConstants::default(),
        vertices: vec![vertex("1", VertexKind::Slack), vertex("2", VertexKind::Flow)],
        edges: vec![Edge::new("1", "2", 20_000.0, 0.9144, 0.01)],
    })
    .expect("valid fixture")
}

/// Outlet withdrawal `(A/2)(1 − cos(2πt/P))`, zero at `t = 0`, as a negative injection.
pub fn pipe_withdrawal(amplitude: f64) -> TimeFunction {
    TimeFunction::sinusoid(amplitude / 2.0, PIPE_PERIOD, FRAC_PI_2, -amplitude / 2.0)
}

/// Inlet at 6.5 MPa, outlet withdrawal of peak `amplitude` kg/s, steady start.
pub fn single_pipe_scenario(amplitude: f64, horizon: f64) -> Scenario {
    Scenario::new(horizon)
        .with_slack("1", TimeFunction::constant(INLET_DENSITY))
        .with_injection("2", pipe_withdrawal(amplitude))
}

/// Slack pressure of the five-node network, Pa.
pub const FIVE_NODE_SUPPLY_PRESSURE: f64 = 5.0e6;
/// Baseline withdrawals at nodes 2, 3, 4, 5, kg/s.
pub const FIVE_NODE_WITHDRAWALS: [f64; 4] = [10.0, 15.0, 15.0, 20.0];
/// Baseline compression ratios of compressors 1, 2, 3.
pub const FIVE_NODE_RATIOS: [f64; 3] = [1.3, 1.05, 1.02];
/// Start of the node-5 withdrawal reversal, s.
pub const REVERSAL_TIME: f64 = 3.8888 * HOUR;
/// Amplitude of the node-5 reversal sinusoid, kg/s.
pub const REVERSAL_AMPLITUDE: f64 = 10.0;

pub fn five_node_graph() -> MetricGraph {
    let d = 0.6096;
    let lam = 0.01;
    build_graph(GraphSpec {
        gas: GasConstants::default(),
        vertices: vec![
            vertex("1", VertexKind::Slack),
            vertex("2", VertexKind::Flow),
            vertex("3", VertexKind::Flow),
            vertex("4", VertexKind::Flow),
            vertex("5", VertexKind::Flow),
        ],
        edges: vec![
            Edge::new("1", "2", 80_000.0, d, lam),
            Edge::new("2", "3", 60_000.0, d, lam),
            Edge::new("2", "4", 70_000.0, d, lam),
            Edge::new("3", "4", 50_000.0, d, lam),
            Edge::new("4", "5", 40_000.0, d, lam),
        ],
    })
    .expect("valid fixture")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiveNodeCase {
    /// Constant withdrawals and ratios over 24 h.
    Baseline,
    /// Baseline with `c₃(t) = c₃(0)(1 + (1 − cos(6πt/T))/10)`, `T` = 24 h.
    CompressorSchedule,
    /// Node-5 withdrawal `w + A sin(2π(t − t_r)/24 h)` over 12 h: below the
    /// baseline before `t_r`, above it after.
    ReversalHigh,
    /// Node-5 withdrawal at the baseline over 12 h.
    ReversalLow,
}

/// Supply density at node 1, kg/m³.
pub fn five_node_supply_density(g: &MetricGraph) -> f64 {
    g.gas().density(FIVE_NODE_SUPPLY_PRESSURE)
}

/// Compressor actuators shared by every five-node case.
pub fn five_node_controls(s: Scenario, schedule: bool) -> Scenario {
    let [c1, c2, c3] = FIVE_NODE_RATIOS;
    let c3f = if schedule {
        TimeFunction::sinusoid(-0.1 * c3, DAY / 3.0, FRAC_PI_2, 1.1 * c3)
    } else {
        TimeFunction::constant(c3)
    };
    s.with_actuator("1", "2", Placement::Inlet, TimeFunction::constant(c1))
        .with_actuator("2", "3", Placement::Inlet, TimeFunction::constant(c2))
        .with_actuator("3", "4", Placement::Inlet, c3f)
}

pub fn five_node_scenario(g: &MetricGraph, case: FiveNodeCase) -> Scenario {
    let horizon = match case {
        FiveNodeCase::Baseline | FiveNodeCase::CompressorSchedule => DAY,
        FiveNodeCase::ReversalHigh | FiveNodeCase::ReversalLow => 12.0 * HOUR,
    };
    let mut s = Scenario::new(horizon).with_slack("1", TimeFunction::constant(five_node_supply_density(g)));
    for (k, w) in FIVE_NODE_WITHDRAWALS.iter().enumerate() {
        let id = (k + 2).to_string();
        let q = if id == "5" && case == FiveNodeCase::ReversalHigh {
            TimeFunction::sinusoid(-REVERSAL_AMPLITUDE, DAY, -2.0 * PI * REVERSAL_TIME / DAY, -w)
        } else {
            TimeFunction::constant(-w)
        };
        s = s.with_injection(&id, q);
    }
    five_node_controls(s, case == FiveNodeCase::CompressorSchedule)
}

/// Lower pressure bound of the five-node envelope, Pa.
pub const FIVE_NODE_MIN_PRESSURE: f64 = 3.0e6;
/// Upper pressure bound of the five-node envelope, Pa.
pub const FIVE_NODE_MAX_PRESSURE: f64 = 8.0e6;

/// Withdrawal uncertainty at nodes 2 to 5 around the baseline, growing from
/// zero at midnight to its widest at noon: up to `high` times the baseline
/// withdrawal in the lower bound and `low` times it in the upper bound.
pub fn five_node_envelope(g: &MetricGraph, low: f64, high: f64) -> Envelope {
    let bump = TimeFunction::raised_cosine(0.5, DAY, 0.5);
    let mut upper = BTreeMap::new();
    let mut lower = BTreeMap::new();
    for (k, w) in FIVE_NODE_WITHDRAWALS.iter().enumerate() {
        let id = (k + 2).to_string();
        upper.insert(id.clone(), TimeFunction::constant(-w).plus(bump.clone().scaled(w * (1.0 - low))));
        lower.insert(id, TimeFunction::constant(-w).plus(bump.clone().scaled(-w * (high - 1.0))));
    }
    Envelope {
        upper,
        lower,
        rho_min: g.gas().density(FIVE_NODE_MIN_PRESSURE),
        rho_max: g.gas().density(FIVE_NODE_MAX_PRESSURE),
    }
}

/// Envelope that stays above 3 MPa.
pub fn five_node_certified_envelope(g: &MetricGraph) -> Envelope {
    five_node_envelope(g, 0.7, 1.5)
}

/// Envelope whose lower bound drains node 5 below 3 MPa in the afternoon.
pub fn five_node_deep_envelope(g: &MetricGraph) -> Envelope {
    five_node_envelope(g, 0.7, 2.5)
}

/// Baseline except that node 5 cuts its withdrawal from 20 to 12 kg/s
/// between 2 h and 3 h, leaving the certified envelope from above.
pub fn five_node_nmp_realized(g: &MetricGraph) -> Scenario {
    let w = FIVE_NODE_WITHDRAWALS[3];
    five_node_scenario(g, FiveNodeCase::Baseline).with_injection(
        "5",
        TimeFunction::piecewise(vec![[0.0, -w], [2.0 * HOUR, -w], [3.0 * HOUR, -12.0], [DAY, -12.0]]),
    )
}
