//! Metric graphs, spatial refinement and boundary-condition bookkeeping.
//!
//! A [`MetricGraph`] is a connected directed graph whose edges are pipes with a
//! length, diameter, friction factor and cross-section. Every vertex is either
//! a *slack* vertex (density prescribed) or a *flow* vertex (injection
//! prescribed). Injections follow the nodal-balance sign convention: a positive
//! `q` puts mass into the network, so a withdrawal is a negative injection.
//!
//! [`refine`] splits each edge of length `L` into `n = ceil(L / ε)` equal
//! segments. The resulting segment length `L̂ = L / n` obeys
//! `εL / (ε + L) < L̂ ≤ ε`; the upper bound is inclusive so that lengths exactly
//! divisible by `ε` are accepted.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use crate::physics::GasConstants;
use crate::timefn::TimeFunction;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("graph is disconnected: vertex {0} is not reachable from any slack vertex")]
    DisconnectedGraph(String),
    #[error("slack set is empty")]
    EmptySlackSet,
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("duplicate vertex {0}")]
    DuplicateVertex(String),
    #[error("edge {0} -> {1} is a self loop")]
    SelfLoop(String, String),
    #[error("unknown vertex {0}")]
    UnknownVertex(String),
    #[error("edge {edge}: {param} must be positive and finite, got {value}")]
    NonPositiveParameter {
        edge: String,
        param: &'static str,
        value: f64,
    },
    #[error("refinement length must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("scenario does not match graph: {0}")]
    VertexMismatch(String),
    #[error("invalid time function: {0}")]
    InvalidTimeFunction(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("initial state violates t = 0 coupling at {vertex}: residual {residual:e}")]
    CouplingViolated { vertex: String, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    /// Density prescribed.
    Slack,
    /// Injection prescribed.
    Flow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    pub kind: VertexKind,
}

/// A pipe. `area` defaults to `π D² / 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub tail: String,
    pub head: String,
    /// m
    pub length: f64,
    /// m
    pub diameter: f64,
    /// Darcy friction factor.
    pub friction: f64,
    /// m²
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
}

impl Edge {
    pub fn new(tail: &str, head: &str, length: f64, diameter: f64, friction: f64) -> Self {
        Edge {
            tail: tail.to_string(),
            head: head.to_string(),
            length,
            diameter,
            friction,
            area: None,
        }
    }

    pub fn area(&self) -> f64 {
        self.area
            .unwrap_or(std::f64::consts::PI * self.diameter * self.diameter / 4.0)
    }

    pub fn key(&self) -> String {
        format!("{}->{}", self.tail, self.head)
    }
}

/// Plain description of a network, as stored in a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(default)]
    pub gas: GasConstants,
    #[serde(rename = "vertex")]
    pub vertices: Vec<Vertex>,
    #[serde(rename = "edge")]
    pub edges: Vec<Edge>,
}

/// A validated metric graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct MetricGraph {
    gas: GasConstants,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
    ends: Vec<(usize, usize)>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl TryFrom<GraphSpec> for MetricGraph {
    type Error = GraphError;
    fn try_from(spec: GraphSpec) -> Result<Self, GraphError> {
        build_graph(spec)
    }
}

impl From<MetricGraph> for GraphSpec {
    fn from(g: MetricGraph) -> Self {
        GraphSpec {
            gas: g.gas,
            vertices: g.vertices,
            edges: g.edges,
        }
    }
}

/// Validates a network description.
pub fn build_graph(spec: GraphSpec) -> Result<MetricGraph, GraphError> {
    let mut index = HashMap::new();
    for (k, v) in spec.vertices.iter().enumerate() {
        if index.insert(v.id.clone(), k).is_some() {
            return Err(GraphError::DuplicateVertex(v.id.clone()));
        }
    }
    let nv = spec.vertices.len();
    let mut ends = Vec::with_capacity(spec.edges.len());
    let mut seen = BTreeSet::new();
    let mut out_edges = vec![Vec::new(); nv];
    let mut in_edges = vec![Vec::new(); nv];
    for (k, e) in spec.edges.iter().enumerate() {
        let lookup = |id: &String| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| GraphError::UnknownVertex(id.clone()))
        };
        let (a, b) = (lookup(&e.tail)?, lookup(&e.head)?);
        if a == b {
            return Err(GraphError::SelfLoop(e.tail.clone(), e.head.clone()));
        }
        if !seen.insert((a, b)) {
            return Err(GraphError::DuplicateEdge(e.tail.clone(), e.head.clone()));
        }
        for (param, value) in [
            ("length", e.length),
            ("diameter", e.diameter),
            ("friction", e.friction),
            ("area", e.area()),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GraphError::NonPositiveParameter {
                    edge: e.key(),
                    param,
                    value,
                });
            }
        }
        ends.push((a, b));
        out_edges[a].push(k);
        in_edges[b].push(k);
    }
    let gas = spec.gas;
    if !(gas.wave_speed_sq().is_finite() && gas.wave_speed_sq() > 0.0) {
        return Err(GraphError::NonPositiveParameter {
            edge: "gas".into(),
            param: "wave speed",
            value: gas.wave_speed_sq(),
        });
    }
    let slack: Vec<usize> = (0..nv)
        .filter(|&v| spec.vertices[v].kind == VertexKind::Slack)
        .collect();
    if slack.is_empty() {
        return Err(GraphError::EmptySlackSet);
    }
    let mut reached = vec![false; nv];
    let mut queue: VecDeque<usize> = slack.iter().copied().collect();
    for &s in &slack {
        reached[s] = true;
    }
    while let Some(v) = queue.pop_front() {
        for &e in out_edges[v].iter().chain(&in_edges[v]) {
            let (a, b) = ends[e];
            let w = if a == v { b } else { a };
            if !reached[w] {
                reached[w] = true;
                queue.push_back(w);
            }
        }
    }
    if let Some(v) = reached.iter().position(|r| !r) {
        return Err(GraphError::DisconnectedGraph(spec.vertices[v].id.clone()));
    }
    Ok(MetricGraph {
        gas,
        vertices: spec.vertices,
        edges: spec.edges,
        index,
        ends,
        out_edges,
        in_edges,
    })
}

impl MetricGraph {
    pub fn gas(&self) -> GasConstants {
        self.gas
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vertex_id(&self, v: usize) -> &str {
        &self.vertices[v].id
    }

    pub fn kind(&self, v: usize) -> VertexKind {
        self.vertices[v].kind
    }

    pub fn is_slack(&self, v: usize) -> bool {
        self.kind(v) == VertexKind::Slack
    }

    /// `(tail, head)` vertex indices of edge `e`.
    pub fn ends(&self, e: usize) -> (usize, usize) {
        self.ends[e]
    }

    pub fn edge_index(&self, tail: &str, head: &str) -> Option<usize> {
        let (a, b) = (self.vertex_index(tail)?, self.vertex_index(head)?);
        self.out_edges[a].iter().copied().find(|&e| self.ends[e].1 == b)
    }

    /// Edges leaving `v` (the set ∂−v).
    pub fn out_edges(&self, v: usize) -> &[usize] {
        &self.out_edges[v]
    }

    /// Edges entering `v` (the set ∂+v).
    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.in_edges[v]
    }

    /// Undirected neighbours of `v` with the connecting edge.
    pub fn neighbours(&self, v: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out_edges[v]
            .iter()
            .map(move |&e| (self.ends[e].1, e))
            .chain(self.in_edges[v].iter().map(move |&e| (self.ends[e].0, e)))
    }

    pub fn slack_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&v| self.is_slack(v)).collect()
    }

    pub fn flow_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&v| !self.is_slack(v)).collect()
    }

    pub fn spec(&self) -> GraphSpec {
        self.clone().into()
    }
}

/// Where a refined vertex sits on the parent graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coordinate {
    /// A parent vertex, by index.
    Vertex(usize),
    /// A point inside parent edge `edge`, at arclength `x` from its tail.
    Interior { edge: usize, x: f64 },
}

/// Parent-graph classification of a refined vertex.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Location {
    /// A parent network node, by id.
    Node(String),
    /// Inside a parent edge, by `tail->head` key.
    EdgeInterior(String),
}

impl Location {
    pub fn is_node(&self) -> bool {
        matches!(self, Location::Node(_))
    }

    /// The parent vertex id or parent edge key.
    pub fn parent_id(&self) -> &str {
        match self {
            Location::Node(s) | Location::EdgeInterior(s) => s,
        }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Node(s) => write!(f, "parent node {s}"),
            Location::EdgeInterior(s) => write!(f, "interior of edge {s}"),
        }
    }
}

/// A refined graph together with its map back to the parent.
#[derive(Debug, Clone)]
pub struct RefinedGraph {
    pub graph: MetricGraph,
    pub parent: MetricGraph,
    /// Refined edge → parent edge (μ).
    pub parent_map: Vec<usize>,
    /// Refined vertex → location on the parent.
    pub coordinate_map: Vec<Coordinate>,
    /// For each parent edge, its refined edges from tail to head.
    pub segments: Vec<Vec<usize>>,
    /// For each parent edge, its refined vertices from tail to head, endpoints included.
    pub chains: Vec<Vec<usize>>,
    pub epsilon: f64,
}

impl RefinedGraph {
    /// Refined vertex index of a parent vertex (parent vertices keep their index).
    pub fn refined_vertex(&self, parent_vertex: usize) -> usize {
        parent_vertex
    }

    pub fn location(&self, v: usize) -> Location {
        match self.coordinate_map[v] {
            Coordinate::Vertex(p) => Location::Node(self.parent.vertex_id(p).to_string()),
            Coordinate::Interior { edge, .. } => Location::EdgeInterior(self.parent.edges()[edge].key()),
        }
    }

    /// True when the refined vertex is a parent vertex.
    pub fn is_parent_vertex(&self, v: usize) -> bool {
        matches!(self.coordinate_map[v], Coordinate::Vertex(_))
    }

    /// Segment length of parent edge `e`.
    pub fn segment_length(&self, e: usize) -> f64 {
        self.graph.edges()[self.segments[e][0]].length
    }

    /// Position of the k-th refined edge within its parent chain.
    pub fn segment_position(&self, refined_edge: usize) -> (usize, usize, usize) {
        let p = self.parent_map[refined_edge];
        let k = self.segments[p]
            .iter()
            .position(|&r| r == refined_edge)
            .expect("refined edge listed in its parent chain");
        (p, k, self.segments[p].len())
    }
}

/// Splits every edge into `ceil(L / ε)` equal segments.
pub fn refine(g: &MetricGraph, epsilon: f64) -> Result<RefinedGraph, GraphError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(GraphError::NonPositiveEpsilon(epsilon));
    }
    let mut vertices = g.vertices().to_vec();
    let mut coordinate_map: Vec<Coordinate> = (0..g.n_vertices()).map(Coordinate::Vertex).collect();
    let mut edges = Vec::new();
    let mut parent_map = Vec::new();
    let mut segments = Vec::with_capacity(g.n_edges());
    let mut chains = Vec::with_capacity(g.n_edges());
    for (p, e) in g.edges().iter().enumerate() {
        let n = segment_count(e.length, epsilon);
        let lhat = e.length / n as f64;
        let (a, b) = g.ends(p);
        let mut chain = vec![a];
        for k in 1..n {
            coordinate_map.push(Coordinate::Interior {
                edge: p,
                x: e.length * k as f64 / n as f64,
            });
            chain.push(vertices.len());
            vertices.push(Vertex {
                id: format!("{}~{}#{}", e.tail, e.head, k),
                kind: VertexKind::Flow,
            });
        }
        chain.push(b);
        let mut segs = Vec::with_capacity(n);
        for k in 0..n {
            segs.push(edges.len());
            parent_map.push(p);
            edges.push(Edge {
                tail: vertices[chain[k]].id.clone(),
                head: vertices[chain[k + 1]].id.clone(),
                length: lhat,
                diameter: e.diameter,
                friction: e.friction,
                area: e.area,
            });
        }
        segments.push(segs);
        chains.push(chain);
    }
    let graph = build_graph(GraphSpec {
        gas: g.gas(),
        vertices,
        edges,
    })?;
    Ok(RefinedGraph {
        graph,
        parent: g.clone(),
        parent_map,
        coordinate_map,
        segments,
        chains,
        epsilon,
    })
}

/// `ceil(L / ε)`, guarded against `L / ε` landing a hair above an integer.
pub fn segment_count(length: f64, epsilon: f64) -> usize {
    let r = length / epsilon;
    let n = r.round();
    if (r - n).abs() <= 1e-12 * r.max(1.0) {
        (n as usize).max(1)
    } else {
        (r.ceil() as usize).max(1)
    }
}

/// Compatibility schedule kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompatKind {
    Identity,
    Multiplicative,
}

/// Which end of the edge an actuator sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Edge inlet (at the tail vertex).
    Inlet,
    /// Edge outlet (at the head vertex).
    Outlet,
}

/// `α(t, ρ) = c(t) ρ`, mapping a vertex density to the adjacent edge-end density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compatibility {
    pub kind: CompatKind,
    #[serde(default = "unit_ratio")]
    pub ratio: TimeFunction,
}

fn unit_ratio() -> TimeFunction {
    TimeFunction::constant(1.0)
}

impl Default for Compatibility {
    fn default() -> Self {
        Compatibility::identity()
    }
}

impl Compatibility {
    pub fn identity() -> Self {
        Compatibility {
            kind: CompatKind::Identity,
            ratio: unit_ratio(),
        }
    }

    pub fn multiplicative(ratio: TimeFunction) -> Self {
        Compatibility {
            kind: CompatKind::Multiplicative,
            ratio,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.kind == CompatKind::Identity
    }

    pub fn ratio(&self, t: f64) -> f64 {
        match self.kind {
            CompatKind::Identity => 1.0,
            CompatKind::Multiplicative => self.ratio.value(t),
        }
    }

    pub fn ratio_rate(&self, t: f64) -> f64 {
        match self.kind {
            CompatKind::Identity => 0.0,
            CompatKind::Multiplicative => self.ratio.derivative(t),
        }
    }

    pub fn apply(&self, t: f64, rho: f64) -> f64 {
        self.ratio(t) * rho
    }

    pub fn inverse(&self, t: f64, edge_rho: f64) -> f64 {
        edge_rho / self.ratio(t)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            CompatKind::Identity => Vec::new(),
            CompatKind::Multiplicative => self.ratio.breakpoints(),
        }
    }
}

/// One actuator entry of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actuator {
    pub tail: String,
    pub head: String,
    pub placement: Placement,
    #[serde(flatten)]
    pub compat: Compatibility,
}

/// Inlet and outlet compatibility of one edge.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeCompat {
    pub inlet: Compatibility,
    pub outlet: Compatibility,
}

/// How the initial state is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// Steady state of the `t = 0` boundary data.
    Steady,
    /// Same density at every vertex.
    Uniform { density: f64 },
    /// Per-vertex densities (kg/m³) by vertex id.
    Explicit { densities: BTreeMap<String, f64> },
}

/// Boundary data and initial condition for one run on one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// s
    pub horizon: f64,
    /// Flow vertex id → injection q(t) in kg/s.
    #[serde(default)]
    pub injections: BTreeMap<String, TimeFunction>,
    /// Slack vertex id → density ρ(t) in kg/m³.
    #[serde(default)]
    pub slack_densities: BTreeMap<String, TimeFunction>,
    /// Non-identity actuators; every other edge end is identity.
    #[serde(default, rename = "actuator")]
    pub actuators: Vec<Actuator>,
    pub initial: InitialState,
}

/// Absolute tolerance for the `t = 0` slack coupling of explicit initial states, kg/m³.
pub const COUPLING_TOL: f64 = 1e-9;

impl Scenario {
    pub fn new(horizon: f64) -> Self {
        Scenario {
            horizon,
            injections: BTreeMap::new(),
            slack_densities: BTreeMap::new(),
            actuators: Vec::new(),
            initial: InitialState::Steady,
        }
    }

    pub fn with_injection(mut self, v: &str, q: TimeFunction) -> Self {
        self.injections.insert(v.to_string(), q);
        self
    }

    pub fn with_slack(mut self, v: &str, rho: TimeFunction) -> Self {
        self.slack_densities.insert(v.to_string(), rho);
        self
    }

    pub fn with_actuator(mut self, tail: &str, head: &str, placement: Placement, c: TimeFunction) -> Self {
        self.actuators.push(Actuator {
            tail: tail.to_string(),
            head: head.to_string(),
            placement,
            compat: Compatibility::multiplicative(c),
        });
        self
    }

    pub fn with_initial(mut self, initial: InitialState) -> Self {
        self.initial = initial;
        self
    }

    /// Injection at a flow vertex; vertices absent from the table carry none.
    pub fn injection(&self, id: &str) -> TimeFunction {
        self.injections
            .get(id)
            .cloned()
            .unwrap_or(TimeFunction::constant(0.0))
    }

    /// Compatibility of every edge of `g`, in edge order.
    pub fn edge_compat(&self, g: &MetricGraph) -> Result<Vec<EdgeCompat>, GraphError> {
        let mut out = vec![EdgeCompat::default(); g.n_edges()];
        for a in &self.actuators {
            let e = g.edge_index(&a.tail, &a.head).ok_or_else(|| {
                GraphError::VertexMismatch(format!("actuator on unknown edge {}->{}", a.tail, a.head))
            })?;
            match a.placement {
                Placement::Inlet => out[e].inlet = a.compat.clone(),
                Placement::Outlet => out[e].outlet = a.compat.clone(),
            }
        }
        Ok(out)
    }

    /// Every breakpoint of every input inside `[0, horizon]`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .injections
            .values()
            .chain(self.slack_densities.values())
            .flat_map(|f| f.breakpoints())
            .chain(self.actuators.iter().flat_map(|a| a.compat.breakpoints()))
            .filter(|&t| t > 0.0 && t < self.horizon)
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Checks the scenario against `g`: matching vertex roles, finite inputs,
    /// positive densities and ratios on `[0, horizon]`, and `t = 0` coupling of an
    /// explicit initial state.
    pub fn validate(&self, g: &MetricGraph) -> Result<(), GraphError> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(GraphError::InvalidScenario(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        for (id, q) in &self.injections {
            let v = g
                .vertex_index(id)
                .ok_or_else(|| GraphError::VertexMismatch(format!("injection at unknown vertex {id}")))?;
            if g.is_slack(v) {
                return Err(GraphError::VertexMismatch(format!("injection at slack vertex {id}")));
            }
            q.validate()?;
        }
        for v in g.slack_vertices() {
            let id = g.vertex_id(v);
            let rho = self
                .slack_densities
                .get(id)
                .ok_or_else(|| GraphError::VertexMismatch(format!("no density for slack vertex {id}")))?;
            rho.validate()?;
            self.check_positive(rho, &format!("slack density at {id}"))?;
        }
        for id in self.slack_densities.keys() {
            match g.vertex_index(id) {
                Some(v) if g.is_slack(v) => {}
                _ => {
                    return Err(GraphError::VertexMismatch(format!(
                        "density given for non-slack vertex {id}"
                    )))
                }
            }
        }
        let mut seen = BTreeSet::new();
        for a in &self.actuators {
            if !seen.insert((a.tail.clone(), a.head.clone(), a.placement == Placement::Inlet)) {
                return Err(GraphError::InvalidScenario(format!(
                    "two actuators on the same end of {}->{}",
                    a.tail, a.head
                )));
            }
            a.compat.ratio.validate()?;
            if a.compat.kind == CompatKind::Multiplicative {
                self.check_positive(&a.compat.ratio, &format!("ratio on {}->{}", a.tail, a.head))?;
            }
        }
        self.edge_compat(g)?;
        match &self.initial {
            InitialState::Steady => {}
            InitialState::Uniform { density } => {
                if !(density.is_finite() && *density > 0.0) {
                    return Err(GraphError::InvalidScenario("uniform density must be positive".into()));
                }
            }
            InitialState::Explicit { densities } => {
                for v in 0..g.n_vertices() {
                    let id = g.vertex_id(v);
                    let rho = densities.get(id).ok_or_else(|| {
                        GraphError::VertexMismatch(format!("no initial density at {id}"))
                    })?;
                    if !(rho.is_finite() && *rho > 0.0) {
                        return Err(GraphError::InvalidScenario(format!(
                            "initial density at {id} must be positive"
                        )));
                    }
                    if g.is_slack(v) {
                        let residual = rho - self.slack_densities[id].value(0.0);
                        if residual.abs() > COUPLING_TOL * rho.max(1.0) {
                            return Err(GraphError::CouplingViolated {
                                vertex: id.to_string(),
                                residual,
                            });
                        }
                    }
                }
                if densities.len() != g.n_vertices() {
                    return Err(GraphError::VertexMismatch(
                        "initial state lists vertices not in the graph".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_positive(&self, f: &TimeFunction, what: &str) -> Result<(), GraphError> {
        for t in f.sample_times(self.horizon, 2000) {
            let v = f.value(t);
            if !(v.is_finite() && v > 0.0) {
                return Err(GraphError::InvalidScenario(format!(
                    "{what} must stay positive, got {v} at t = {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Carries a parent-graph scenario onto the refined graph.
///
/// Parent vertices keep their injections; interior vertices get `q ≡ 0`.
/// Actuators move to the first (inlet) or last (outlet) segment of their edge,
/// every interior segment end is identity. Explicit or uniform initial
/// densities are extended linearly along each edge between the
/// compatibility-transformed endpoint values.
pub fn lift_scenario(s: &Scenario, rg: &RefinedGraph) -> Result<Scenario, GraphError> {
    let parent = &rg.parent;
    s.validate(parent)?;
    let g = &rg.graph;
    let mut injections = s.injections.clone();
    for v in parent.n_vertices()..g.n_vertices() {
        injections.insert(g.vertex_id(v).to_string(), TimeFunction::constant(0.0));
    }
    let mut actuators = Vec::with_capacity(s.actuators.len());
    for a in &s.actuators {
        let p = parent
            .edge_index(&a.tail, &a.head)
            .ok_or_else(|| GraphError::VertexMismatch(format!("actuator on {}->{}", a.tail, a.head)))?;
        let segs = &rg.segments[p];
        let r = match a.placement {
            Placement::Inlet => segs[0],
            Placement::Outlet => segs[segs.len() - 1],
        };
        let e = &g.edges()[r];
        actuators.push(Actuator {
            tail: e.tail.clone(),
            head: e.head.clone(),
            placement: a.placement,
            compat: a.compat.clone(),
        });
    }
    let initial = match &s.initial {
        InitialState::Steady => InitialState::Steady,
        InitialState::Uniform { density } => {
            let mut d = BTreeMap::new();
            for v in 0..parent.n_vertices() {
                d.insert(parent.vertex_id(v).to_string(), *density);
            }
            InitialState::Explicit {
                densities: interpolate_interior(&d, s, rg)?,
            }
        }
        InitialState::Explicit { densities } => InitialState::Explicit {
            densities: interpolate_interior(densities, s, rg)?,
        },
    };
    Ok(Scenario {
        horizon: s.horizon,
        injections,
        slack_densities: s.slack_densities.clone(),
        actuators,
        initial,
    })
}

fn interpolate_interior(
    parent_densities: &BTreeMap<String, f64>,
    s: &Scenario,
    rg: &RefinedGraph,
) -> Result<BTreeMap<String, f64>, GraphError> {
    let parent = &rg.parent;
    let compat = s.edge_compat(parent)?;
    let mut out = parent_densities.clone();
    for (p, chain) in rg.chains.iter().enumerate() {
        let (a, b) = parent.ends(p);
        let ra = parent_densities[parent.vertex_id(a)];
        let rb = parent_densities[parent.vertex_id(b)];
        let left = compat[p].inlet.apply(0.0, ra);
        let right = compat[p].outlet.apply(0.0, rb);
        let n = chain.len() - 1;
        for (k, &v) in chain.iter().enumerate().take(n).skip(1) {
            let w = k as f64 / n as f64;
            out.insert(rg.graph.vertex_id(v).to_string(), left + (right - left) * w);
        }
    }
    Ok(out)
}

/// Inverse of [`lift_scenario`] on boundary data: keeps parent vertices and
/// maps actuators back to parent edges.
pub fn restrict_scenario(s: &Scenario, rg: &RefinedGraph) -> Scenario {
    let parent = &rg.parent;
    let injections = s
        .injections
        .iter()
        .filter(|(id, _)| {
            rg.graph
                .vertex_index(id)
                .is_some_and(|v| rg.is_parent_vertex(v))
        })
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let actuators = s
        .actuators
        .iter()
        .filter_map(|a| {
            let r = rg.graph.edge_index(&a.tail, &a.head)?;
            let p = &parent.edges()[rg.parent_map[r]];
            Some(Actuator {
                tail: p.tail.clone(),
                head: p.head.clone(),
                placement: a.placement,
                compat: a.compat.clone(),
            })
        })
        .collect();
    let initial = match &s.initial {
        InitialState::Explicit { densities } => InitialState::Explicit {
            densities: densities
                .iter()
                .filter(|(id, _)| parent.vertex_index(id).is_some())
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        },
        other => other.clone(),
    };
    Scenario {
        horizon: s.horizon,
        injections,
        slack_densities: s.slack_densities.clone(),
        actuators,
        initial,
    }
}
