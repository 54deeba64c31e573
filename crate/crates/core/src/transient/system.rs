use std::sync::Arc;

use super::TransientError;
use crate::netgraph::{lift_scenario, refine, EdgeCompat, InitialState, MetricGraph, RefinedGraph, Scenario};
use crate::physics::ModelSet;
use crate::timefn::TimeFunction;

/// Spatial flux stencil on a refined edge `a → b` with end densities
/// `u_a = α̲(ρ_a)`, `u_b = ᾱ(ρ_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// One flux per segment, shared by both ends, so mass is conserved.
    /// Potential-form laws use `φ = g((h(u_a) − h(u_b)) / L̂)`, exact on steady
    /// profiles; other laws use `φ = −f(t, (u_a + u_b)/2, (u_b − u_a)/L̂)`.
    #[default]
    Conservative,
    /// Each end evaluates `f` at its own end density:
    /// `φ_tail = −f(t, u_a, ∇)`, `φ_head = −f(t, u_b, ∇)`. Cooperative for any
    /// law increasing in `v`, but the two ends disagree, so it neither
    /// conserves mass nor has the continuum steady profile as a fixed point.
    NodeLocal,
}

/// Assembly options.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SystemOptions {
    pub stencil: Stencil,
    /// Continuity perturbation `ε_pert ≥ 0`, kg/(m³ s).
    pub eps_pert: f64,
}

/// Lumped nodal ODE `ρ̇ = F(t, ρ, q)` on a refined graph. The state holds the
/// densities of the free (flow) vertices, in `free` order.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    pub rg: Arc<RefinedGraph>,
    pub models: ModelSet,
    pub scenario: Scenario,
    pub opts: SystemOptions,
    pub(crate) compat: Vec<EdgeCompat>,
    pub(crate) injections: Vec<TimeFunction>,
    pub(crate) slack: Vec<Option<TimeFunction>>,
    pub(crate) free: Vec<usize>,
    pub(crate) slot: Vec<Option<usize>>,
    /// Per refined vertex, `(edge, at_head)` incidences.
    pub(crate) incidence: Vec<Vec<(usize, bool)>>,
    /// Half-segment volume `S L̂ / 2` per refined edge, m³.
    pub(crate) half_volume: Vec<f64>,
    /// Geometric lumped volume per refined vertex, m³.
    pub(crate) volume: Vec<f64>,
}

/// Edge fluxes at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Fluxes {
    /// Flow leaving the tail into the edge, kg/s.
    pub tail: Vec<f64>,
    /// Flow leaving the edge into the head, kg/s.
    pub head: Vec<f64>,
}

/// Refines the parent graph, lifts the scenario and assembles the system.
pub fn assemble_parent(
    g: &MetricGraph,
    epsilon: f64,
    s: &Scenario,
    models: &ModelSet,
    opts: SystemOptions,
) -> Result<OdeSystem, TransientError> {
    let rg = Arc::new(refine(g, epsilon)?);
    let lifted = lift_scenario(s, &rg)?;
    assemble(rg.clone(), &lifted, &models.refined(&rg), opts)
}

/// Builds the nodal system from a scenario already lifted to `rg` and one model per refined edge.
pub fn assemble(
    rg: Arc<RefinedGraph>,
    s: &Scenario,
    models: &ModelSet,
    opts: SystemOptions,
) -> Result<OdeSystem, TransientError> {
    let g = &rg.graph;
    if models.len() != g.n_edges() {
        return Err(TransientError::MissingModel {
            expected: g.n_edges(),
            found: models.len(),
        });
    }
    for v in rg.parent.n_vertices()..g.n_vertices() {
        if !s.injections.contains_key(g.vertex_id(v)) {
            return Err(TransientError::UnliftedScenario(format!(
                "interior vertex {} has no injection entry",
                g.vertex_id(v)
            )));
        }
    }
    s.validate(g)?;
    if !(opts.eps_pert >= 0.0 && opts.eps_pert.is_finite()) {
        return Err(TransientError::InvalidOption("eps_pert must be non-negative".into()));
    }
    let n = g.n_vertices();
    let compat = s.edge_compat(g)?;
    let mut injections = Vec::with_capacity(n);
    let mut slack = Vec::with_capacity(n);
    let mut free = Vec::new();
    let mut slot = vec![None; n];
    for v in 0..n {
        let id = g.vertex_id(v);
        injections.push(s.injection(id));
        if g.is_slack(v) {
            slack.push(Some(s.slack_densities[id].clone()));
        } else {
            slack.push(None);
            slot[v] = Some(free.len());
            free.push(v);
        }
    }
    let mut incidence = vec![Vec::new(); n];
    let mut half_volume = Vec::with_capacity(g.n_edges());
    let mut volume = vec![0.0; n];
    for (e, edge) in g.edges().iter().enumerate() {
        let (a, b) = g.ends(e);
        incidence[a].push((e, false));
        incidence[b].push((e, true));
        let hv = 0.5 * edge.area() * edge.length;
        half_volume.push(hv);
        volume[a] += hv;
        volume[b] += hv;
    }
    Ok(OdeSystem {
        rg,
        models: models.clone(),
        scenario: s.clone(),
        opts,
        compat,
        injections,
        slack,
        free,
        slot,
        incidence,
        half_volume,
        volume,
    })
}

impl OdeSystem {
    pub fn graph(&self) -> &MetricGraph {
        &self.rg.graph
    }

    pub fn dim(&self) -> usize {
        self.free.len()
    }

    /// Refined vertex indices of the state entries.
    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    pub fn state_index(&self, v: usize) -> Option<usize> {
        self.slot[v]
    }

    pub fn horizon(&self) -> f64 {
        self.scenario.horizon
    }

    /// Geometric lumped volume of refined vertex `v`, m³.
    pub fn volume(&self, v: usize) -> f64 {
        self.volume[v]
    }

    /// Injections at the free vertices at time `t`.
    pub fn injections_at(&self, t: f64) -> Vec<f64> {
        self.free.iter().map(|&v| self.injections[v].value(t)).collect()
    }

    /// Densities of every refined vertex for state `y` at time `t`.
    pub fn full_state(&self, t: f64, y: &[f64]) -> Vec<f64> {
        (0..self.slot.len())
            .map(|v| match self.slot[v] {
                Some(k) => y[k],
                None => self.slack[v].as_ref().expect("slack vertex").value(t),
            })
            .collect()
    }

    /// Time derivative of every refined vertex density; slack entries are
    /// the prescribed rates.
    pub fn full_rates(&self, t: f64, dy: &[f64]) -> Vec<f64> {
        (0..self.slot.len())
            .map(|v| match self.slot[v] {
                Some(k) => dy[k],
                None => self.slack[v].as_ref().expect("slack vertex").derivative(t),
            })
            .collect()
    }

    fn end_compat(&self, e: usize, at_head: bool) -> &crate::netgraph::Compatibility {
        if at_head {
            &self.compat[e].outlet
        } else {
            &self.compat[e].inlet
        }
    }

    /// Edge fluxes for full densities `rho`.
    pub fn fluxes(&self, t: f64, rho: &[f64]) -> Result<Fluxes, TransientError> {
        let g = self.graph();
        let ne = g.n_edges();
        let mut tail = Vec::with_capacity(ne);
        let mut head = Vec::with_capacity(ne);
        for e in 0..ne {
            let (a, b) = g.ends(e);
            let ua = self.compat[e].inlet.apply(t, rho[a]);
            let ub = self.compat[e].outlet.apply(t, rho[b]);
            if !(ua > 0.0 && ub > 0.0) {
                let v = if ua > 0.0 { b } else { a };
                return Err(TransientError::DensityCavitation {
                    t,
                    vertex: g.vertex_id(v).to_string(),
                    density: rho[v],
                });
            }
            let l = g.edges()[e].length;
            let m = self.models.get(e);
            let grad = (ub - ua) / l;
            match self.opts.stencil {
                Stencil::Conservative => {
                    let phi = match m.potential() {
                        Some(p) => p.g((p.h(ua) - p.h(ub)) / l),
                        None => -m.eval(t, 0.5 * (ua + ub), grad),
                    };
                    tail.push(phi);
                    head.push(phi);
                }
                Stencil::NodeLocal => {
                    tail.push(-m.eval(t, ua, grad));
                    head.push(-m.eval(t, ub, grad));
                }
            }
        }
        Ok(Fluxes { tail, head })
    }

    /// `Σ_in φ_head − Σ_out φ_tail` at vertex `v`.
    pub(crate) fn inflow(&self, v: usize, fl: &Fluxes) -> f64 {
        self.incidence[v]
            .iter()
            .map(|&(e, at_head)| if at_head { fl.head[e] } else { -fl.tail[e] })
            .sum()
    }

    /// Lumped capacity `Σ V_e ∂_ρ α_e` and time term `Σ V_e ∂_t α_e` at `v`.
    pub(crate) fn capacity(&self, t: f64, v: usize, rho_v: f64) -> (f64, f64) {
        let mut cap = 0.0;
        let mut dt = 0.0;
        for &(e, at_head) in &self.incidence[v] {
            let c = self.end_compat(e, at_head);
            cap += self.half_volume[e] * c.ratio(t);
            dt += self.half_volume[e] * c.ratio_rate(t) * rho_v;
        }
        (cap, dt)
    }

    /// Lumped mass at vertex `v`: `Σ V_e α_e(t, ρ_v)`, kg.
    pub fn vertex_mass(&self, t: f64, v: usize, rho_v: f64) -> f64 {
        self.incidence[v]
            .iter()
            .map(|&(e, at_head)| self.half_volume[e] * self.end_compat(e, at_head).apply(t, rho_v))
            .sum()
    }

    /// Total lumped mass for full densities `rho`, kg.
    pub fn total_mass(&self, t: f64, rho: &[f64]) -> f64 {
        (0..rho.len()).map(|v| self.vertex_mass(t, v, rho[v])).sum()
    }

    /// Rate with explicit free-vertex injections `q`.
    pub fn rhs_with_injections(&self, t: f64, y: &[f64], q: &[f64], dy: &mut [f64]) -> Result<(), TransientError> {
        self.rates(t, y, q, true, dy)
    }

    /// `F(t, ρ)` with the scenario's injections.
    pub fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), TransientError> {
        let q = self.injections_at(t);
        self.rates(t, y, &q, true, dy)
    }

    /// Rate without the actuator time term or continuity perturbation; its
    /// zeros are the discrete steady states.
    pub fn balance_rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), TransientError> {
        let q = self.injections_at(t);
        self.rates(t, y, &q, false, dy)
    }

    fn rates(&self, t: f64, y: &[f64], q: &[f64], transient: bool, dy: &mut [f64]) -> Result<(), TransientError> {
        for (k, &r) in y.iter().enumerate() {
            if !(r > 0.0) {
                return Err(TransientError::DensityCavitation {
                    t,
                    vertex: self.graph().vertex_id(self.free[k]).to_string(),
                    density: r,
                });
            }
        }
        let rho = self.full_state(t, y);
        let fl = self.fluxes(t, &rho)?;
        for (k, &v) in self.free.iter().enumerate() {
            let (cap, time_term) = self.capacity(t, v, rho[v]);
            let mut net = self.inflow(v, &fl) + q[k];
            if transient {
                net += self.opts.eps_pert * self.volume[v] - time_term;
            }
            dy[k] = net / cap;
        }
        Ok(())
    }

    /// Partials of the edge fluxes with respect to the two end densities:
    /// `[[∂φ_tail/∂ρ_a, ∂φ_tail/∂ρ_b], [∂φ_head/∂ρ_a, ∂φ_head/∂ρ_b]]`.
    fn flux_partials(&self, t: f64, e: usize, rho_a: f64, rho_b: f64) -> [[f64; 2]; 2] {
        let g = self.graph();
        let (ci, co) = (&self.compat[e].inlet, &self.compat[e].outlet);
        let (ra, rb) = (ci.ratio(t), co.ratio(t));
        let ua = ci.apply(t, rho_a);
        let ub = co.apply(t, rho_b);
        let l = g.edges()[e].length;
        let m = self.models.get(e);
        let grad = (ub - ua) / l;
        match self.opts.stencil {
            Stencil::Conservative => {
                let d = match m.potential() {
                    Some(p) => {
                        let gp = p.g_prime((p.h(ua) - p.h(ub)) / l);
                        [gp * p.h_prime(ua) * ra / l, -gp * p.h_prime(ub) * rb / l]
                    }
                    None => {
                        let mid = 0.5 * (ua + ub);
                        let (fu, fv) = (m.d_du(t, mid, grad), m.d_dv(t, mid, grad));
                        [-(0.5 * fu - fv / l) * ra, -(0.5 * fu + fv / l) * rb]
                    }
                };
                [d, d]
            }
            Stencil::NodeLocal => {
                let (fua, fva) = (m.d_du(t, ua, grad), m.d_dv(t, ua, grad));
                let (fub, fvb) = (m.d_du(t, ub, grad), m.d_dv(t, ub, grad));
                [
                    [-(fua - fva / l) * ra, -fva / l * rb],
                    [fvb / l * ra, -(fub + fvb / l) * rb],
                ]
            }
        }
    }

    /// Analytic `∂F/∂y` of [`Self::rhs`], written into `out` at offset `off`.
    pub(crate) fn jacobian_into(&self, t: f64, y: &[f64], out: &mut nalgebra::DMatrix<f64>, off: usize) {
        let rho = self.full_state(t, y);
        let g = self.graph();
        for (k, &v) in self.free.iter().enumerate() {
            let (cap, _) = self.capacity(t, v, rho[v]);
            let mut diag = 0.0;
            for &(e, at_head) in &self.incidence[v] {
                let (a, b) = g.ends(e);
                let p = self.flux_partials(t, e, rho[a], rho[b]);
                // inflow gains φ_head at the head and loses φ_tail at the tail.
                let (row, own, other, w) = if at_head { (p[1], 1, 0, a) } else { (p[0], 0, 1, b) };
                let sign = if at_head { 1.0 } else { -1.0 };
                diag += sign * row[own];
                if let Some(j) = self.slot[w] {
                    out[(off + k, off + j)] += sign * row[other] / cap;
                }
                diag -= self.half_volume[e] * self.end_compat(e, at_head).ratio_rate(t);
            }
            out[(off + k, off + k)] += diag / cap;
        }
    }

    /// Supply from each slack vertex into the network, excluding the slack
    /// vertex's own storage, in `slack_vertices()` order.
    pub fn slack_outflows(&self, t: f64, y: &[f64]) -> Result<Vec<f64>, TransientError> {
        let rho = self.full_state(t, y);
        let fl = self.fluxes(t, &rho)?;
        Ok(self
            .graph()
            .slack_vertices()
            .into_iter()
            .map(|v| -self.inflow(v, &fl))
            .collect())
    }

    /// Number of quadrature channels: free injections, perturbation source,
    /// throughput, then one outflow per slack vertex.
    pub fn quad_dim(&self) -> usize {
        3 + self.graph().slack_vertices().len()
    }

    /// Integrands accumulated alongside the state for the mass ledger.
    pub fn quad_integrand(&self, t: f64, y: &[f64]) -> Result<Vec<f64>, TransientError> {
        let q = self.injections_at(t);
        let outflows = self.slack_outflows(t, y)?;
        let source: f64 = self.free.iter().map(|&v| self.opts.eps_pert * self.volume[v]).sum();
        let throughput =
            q.iter().map(|x| x.abs()).sum::<f64>() + outflows.iter().map(|x| x.abs()).sum::<f64>();
        let mut out = Vec::with_capacity(self.quad_dim());
        out.push(q.iter().sum());
        out.push(source);
        out.push(throughput);
        out.extend(outflows);
        Ok(out)
    }

    /// Rate of change of the lumped mass held at slack vertex `v`, kg/s.
    pub fn slack_storage_rate(&self, t: f64, v: usize) -> f64 {
        let f = self.slack[v].as_ref().expect("slack vertex");
        let (rho, drho) = (f.value(t), f.derivative(t));
        self.incidence[v]
            .iter()
            .map(|&(e, at_head)| {
                let c = self.end_compat(e, at_head);
                self.half_volume[e] * (c.ratio_rate(t) * rho + c.ratio(t) * drho)
            })
            .sum()
    }

    /// Every input breakpoint inside the horizon.
    pub fn tstops(&self) -> Vec<f64> {
        self.scenario.breakpoints()
    }

    /// Initial state requested by the scenario. Steady initialization is
    /// delegated to [`super::steady_init`].
    pub fn initial_state(&self) -> Result<Vec<f64>, TransientError> {
        let y = match &self.scenario.initial {
            InitialState::Steady => super::steady_init(self)?,
            InitialState::Uniform { density } => vec![*density; self.dim()],
            InitialState::Explicit { densities } => self
                .free
                .iter()
                .map(|&v| densities[self.graph().vertex_id(v)])
                .collect(),
        };
        if self.opts.eps_pert > 0.0 {
            Ok(y.into_iter().map(|r| r + self.opts.eps_pert).collect())
        } else {
            Ok(y)
        }
    }

    /// Same system with different options.
    pub fn with_options(&self, opts: SystemOptions) -> Self {
        OdeSystem {
            opts,
            ..self.clone()
        }
    }

    /// Same system with the free-vertex injection at refined vertex `v` replaced.
    pub fn with_injection(&self, v: usize, q: TimeFunction) -> Self {
        let mut out = self.clone();
        let id = self.graph().vertex_id(v).to_string();
        out.scenario.injections.insert(id, q.clone());
        out.injections[v] = q;
        out
    }
}
