#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use monoflow::netgraph::{build_graph, Edge, GraphSpec, MetricGraph, Scenario, Vertex, VertexKind};
use monoflow::physics::GasConstants;
use monoflow::timefn::TimeFunction;

pub const HOUR: f64 = 3600.0;

/// A connected random network on `2..=max_vertices` vertices with one or two
/// slack vertices, pipes of 10 to 30 km.
pub fn random_graph(rng: &mut impl Rng, max_vertices: usize) -> MetricGraph {
    let n = rng.gen_range(2..=max_vertices);
    let n_slack = if n > 3 && rng.gen_bool(0.3) { 2 } else { 1 };
    let vertices = (0..n)
        .map(|k| Vertex {
            id: format!("n{k}"),
            kind: if k < n_slack { VertexKind::Slack } else { VertexKind::Flow },
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|k| (rng.gen_range(0..k), k)).collect();
    for _ in 0..rng.gen_range(0..=n / 2) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && !pairs.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            pairs.push((a, b));
        }
    }
    let edges = pairs
        .into_iter()
        .map(|(a, b)| {
            let (t, h) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
            Edge::new(
                &format!("n{t}"),
                &format!("n{h}"),
                rng.gen_range(10_000.0..30_000.0_f64).round(),
                rng.gen_range(0.6..0.9),
                0.01,
            )
        })
        .collect();
    build_graph(GraphSpec {
        gas: GasConstants::default(),
        vertices,
        edges,
    })
    .expect("random graph is valid")
}

/// Smooth withdrawal profile: `-(base + amp sin²(πt/period))`.
fn wobble(rng: &mut impl Rng, base: f64) -> TimeFunction {
    let amp = rng.gen_range(0.0..0.5) * base;
    let period = rng.gen_range(2.0..8.0) * HOUR;
    TimeFunction::raised_cosine(amp / 2.0, period, -base - amp / 2.0)
}

/// Nonnegative smooth increment.
fn bump(rng: &mut impl Rng, size: f64) -> TimeFunction {
    let a = rng.gen_range(0.0..size);
    let period = rng.gen_range(1.0..6.0) * HOUR;
    TimeFunction::raised_cosine(a / 2.0, period, a / 2.0).plus(TimeFunction::constant(rng.gen_range(0.0..size / 4.0)))
}

/// An ordered pair `(s1, s2)`: `s1` injects at least as much everywhere and
/// holds slack densities at least as high, both from steady initial states.
pub fn random_ordered_pair(rng: &mut impl Rng, g: &MetricGraph, horizon: f64) -> (Scenario, Scenario) {
    let gas = g.gas();
    let mut s2 = Scenario::new(horizon);
    let mut s1 = Scenario::new(horizon);
    let n_flow = g.flow_vertices().len().max(1) as f64;
    for v in 0..g.n_vertices() {
        let id = g.vertex_id(v);
        if g.is_slack(v) {
            let rho = gas.density(rng.gen_range(5.0e6..6.0e6));
            let lo = TimeFunction::constant(rho);
            let hi = lo.clone().plus(bump(rng, 0.02 * rho));
            s2 = s2.with_slack(id, lo);
            s1 = s1.with_slack(id, hi);
        } else {
            let w = rng.gen_range(2.0..40.0 / n_flow);
            let lo = wobble(rng, w);
            let hi = lo.clone().plus(bump(rng, 0.5 * w));
            s2 = s2.with_injection(id, lo);
            s1 = s1.with_injection(id, hi);
        }
    }
    (s1, s2)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn shortest_edge(g: &MetricGraph) -> f64 {
    g.edges().iter().map(|e| e.length).fold(f64::INFINITY, f64::min)
}
