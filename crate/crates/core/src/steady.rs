//! Steady states: Newton on the flow-vertex densities, order and uniqueness
//! checks, and the ordered-flow path construction used as a test oracle.
//!
//! At steady state the flow along each edge is constant. With endpoint edge
//! densities `ρ̲ = α̲(ρ_tail)` and `ρ̄ = ᾱ(ρ_head)`, potential-form edges carry
//! `φ = g((h(ρ̲) − h(ρ̄)) / L)`. Other edges are closed by shooting on the edge
//! ODE `f(ρ, ρ') + φ = 0`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

use crate::netgraph::{EdgeCompat, GraphError, MetricGraph, Scenario};
use crate::physics::{Dissipation, ModelSet, PhysicsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SteadyError {
    #[error("steady solve did not converge after {iterations} iterations (residual {residual:e} kg/s)")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("steady Jacobian is singular")]
    SingularJacobian,
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("no ordered path reaches vertex {0}: flows unbalanced or injections not ordered")]
    PathNotFound(String),
}

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOptions {
    /// Balance tolerance relative to `max(1, max |q|)`, kg/s.
    pub tol_balance: f64,
    /// Edge relation tolerance relative to the potential scale.
    pub tol_edge: f64,
    /// Relative Newton step size regarded as stagnation.
    pub tol_step: f64,
    pub max_iter: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions {
            tol_balance: 1e-8,
            tol_edge: 1e-8,
            tol_step: 1e-10,
            max_iter: 50,
        }
    }
}

/// Time-frozen boundary data.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyBoundary {
    /// Per vertex: the injection at flow vertices, ignored at slack vertices.
    pub injections: Vec<f64>,
    /// Per vertex: the density at slack vertices, ignored at flow vertices.
    pub slack: Vec<f64>,
    /// Per edge: `(inlet ratio, outlet ratio)`.
    pub ratios: Vec<(f64, f64)>,
    /// Time at which dissipation laws are evaluated.
    pub t: f64,
}

impl SteadyBoundary {
    /// Freezes a scenario's inputs at time `t`.
    pub fn from_scenario(g: &MetricGraph, s: &Scenario, t: f64) -> Result<Self, GraphError> {
        s.validate(g)?;
        let compat = s.edge_compat(g)?;
        Ok(Self::from_parts(g, s, &compat, t))
    }

    pub(crate) fn from_parts(g: &MetricGraph, s: &Scenario, compat: &[EdgeCompat], t: f64) -> Self {
        let n = g.n_vertices();
        let mut injections = vec![0.0; n];
        let mut slack = vec![0.0; n];
        for v in 0..n {
            let id = g.vertex_id(v);
            if g.is_slack(v) {
                slack[v] = s.slack_densities[id].value(t);
            } else {
                injections[v] = s.injection(id).value(t);
            }
        }
        SteadyBoundary {
            injections,
            slack,
            ratios: compat
                .iter()
                .map(|c| (c.inlet.ratio(t), c.outlet.ratio(t)))
                .collect(),
            t,
        }
    }

    /// Boundary data with identity actuators.
    pub fn new(g: &MetricGraph, injections: Vec<f64>, slack: Vec<f64>) -> Self {
        SteadyBoundary {
            injections,
            slack,
            ratios: vec![(1.0, 1.0); g.n_edges()],
            t: 0.0,
        }
    }

    fn mean_slack(&self, g: &MetricGraph) -> f64 {
        let s = g.slack_vertices();
        s.iter().map(|&v| self.slack[v]).sum::<f64>() / s.len() as f64
    }

    fn balance_scale(&self, g: &MetricGraph) -> f64 {
        g.flow_vertices()
            .iter()
            .map(|&v| self.injections[v].abs())
            .fold(1.0, f64::max)
    }
}

/// A converged steady state.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    /// kg/m³ per vertex.
    pub densities: Vec<f64>,
    /// kg/s per edge, tail to head.
    pub flows: Vec<f64>,
    /// Realized injections per vertex (the slack vertices absorb the imbalance).
    pub injections: Vec<f64>,
    /// max |nodal balance| over flow vertices, kg/s.
    pub balance_residual: f64,
    /// max edge relation residual, relative to the potential scale.
    pub edge_residual: f64,
    pub iterations: usize,
}

impl SteadyState {
    /// Edge-frame density at arclength `x` along edge `e`.
    pub fn edge_density(
        &self,
        g: &MetricGraph,
        models: &ModelSet,
        b: &SteadyBoundary,
        e: usize,
        x: f64,
    ) -> Result<f64, SteadyError> {
        let (a, _) = g.ends(e);
        let rin = b.ratios[e].0 * self.densities[a];
        edge_density_at(models.get(e), b.t, rin, self.flows[e], x)
    }
}

/// Edge-frame density at `x` for an edge entered at density `rho_in` and carrying `phi`.
pub fn edge_density_at(m: &dyn Dissipation, t: f64, rho_in: f64, phi: f64, x: f64) -> Result<f64, SteadyError> {
    if x == 0.0 {
        return Ok(rho_in);
    }
    match m.potential() {
        Some(p) => Ok(crate::physics::steady_edge_profile(p, phi, rho_in, x)?.at(x)),
        None => shoot(m, t, rho_in, phi, x).ok_or(SteadyError::Physics(PhysicsError::DensityCavitation {
            x,
            potential: f64::NAN,
        })),
    }
}

/// Flow carried by an edge of length `l` between edge-end densities.
pub fn edge_flow(m: &dyn Dissipation, t: f64, rho_in: f64, rho_out: f64, l: f64) -> Result<f64, SteadyError> {
    if !(rho_in > 0.0) {
        return Err(PhysicsError::NonPositiveDensity(rho_in).into());
    }
    if !(rho_out > 0.0) {
        return Err(PhysicsError::NonPositiveDensity(rho_out).into());
    }
    match m.potential() {
        Some(p) => Ok(p.g((p.h(rho_in) - p.h(rho_out)) / l)),
        None => shooting_flow(m, t, rho_in, rho_out, l),
    }
}

/// `(∂φ/∂ρ_in, ∂φ/∂ρ_out)` with the singular zero-flow slope capped.
fn edge_flow_partials(
    m: &dyn Dissipation,
    t: f64,
    rho_in: f64,
    rho_out: f64,
    l: f64,
) -> Result<(f64, f64), SteadyError> {
    match m.potential() {
        Some(p) => {
            let w = (p.h(rho_in) - p.h(rho_out)) / l;
            let scale = p.h(rho_in).abs().max(p.h(rho_out).abs()) / l;
            let floor = 1e-10 * scale.max(f64::MIN_POSITIVE);
            let slope = if w.abs() < floor {
                p.g(floor) / floor
            } else {
                p.g_prime(w)
            };
            Ok((slope * p.h_prime(rho_in) / l, -slope * p.h_prime(rho_out) / l))
        }
        None => {
            let hi = 1e-6 * rho_in;
            let ho = 1e-6 * rho_out;
            let di = (shooting_flow(m, t, rho_in + hi, rho_out, l)?
                - shooting_flow(m, t, rho_in - hi, rho_out, l)?)
                / (2.0 * hi);
            let d_o = (shooting_flow(m, t, rho_in, rho_out + ho, l)?
                - shooting_flow(m, t, rho_in, rho_out - ho, l)?)
                / (2.0 * ho);
            Ok((di, d_o))
        }
    }
}

/// Gradient `v` with `f(t, u, v) = −φ`.
fn gradient_for_flow(m: &dyn Dissipation, t: f64, u: f64, phi: f64) -> Option<f64> {
    let r = |v: f64| m.eval(t, u, v) + phi;
    let (mut lo, mut hi) = (-1e-3, 1e-3);
    let mut k = 0;
    while r(lo) > 0.0 {
        lo *= 4.0;
        k += 1;
        if k > 60 {
            return None;
        }
    }
    while r(hi) < 0.0 {
        hi *= 4.0;
        k += 1;
        if k > 120 {
            return None;
        }
    }
    Some(bisect(r, lo, hi))
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    // f(lo) <= 0 <= f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Integrates `ρ' = v(ρ)` from `rho_in` over `[0, x]` with an adaptive
/// fourth-order Runge-Kutta method (step doubling). `None` if the density
/// reaches zero.
fn shoot(m: &dyn Dissipation, t: f64, rho_in: f64, phi: f64, x_end: f64) -> Option<f64> {
    let rhs = |u: f64| -> Option<f64> {
        if u > 0.0 {
            gradient_for_flow(m, t, u, phi)
        } else {
            None
        }
    };
    let rk4 = |u: f64, h: f64| -> Option<f64> {
        let k1 = rhs(u)?;
        let k2 = rhs(u + 0.5 * h * k1)?;
        let k3 = rhs(u + 0.5 * h * k2)?;
        let k4 = rhs(u + h * k3)?;
        Some(u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    };
    let (mut x, mut u) = (0.0, rho_in);
    let mut h = x_end / 16.0;
    let tol = 1e-12 * rho_in;
    while x < x_end {
        h = h.min(x_end - x);
        let full = rk4(u, h);
        let half = rk4(u, 0.5 * h).and_then(|m| rk4(m, 0.5 * h));
        match (full, half) {
            (Some(a), Some(b)) if b > 0.0 => {
                let err = (a - b).abs() / 15.0;
                if err <= tol || h < 1e-9 * x_end {
                    x += h;
                    u = b + (b - a) / 15.0;
                    if !(u > 0.0) {
                        return None;
                    }
                    h *= (0.9 * (tol / err.max(1e-300)).powf(0.2)).clamp(0.2, 4.0);
                } else {
                    h *= (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.9);
                }
            }
            _ => {
                if h < 1e-9 * x_end {
                    return None;
                }
                h *= 0.25;
            }
        }
    }
    Some(u)
}

/// Root of `ρ(L; φ) = rho_out`. The outlet density decreases with `φ`.
fn shooting_flow(m: &dyn Dissipation, t: f64, rho_in: f64, rho_out: f64, l: f64) -> Result<f64, SteadyError> {
    // mismatch(φ) = ρ(L; φ) − rho_out; decreasing in φ; cavitation counts as −∞.
    let mismatch = |phi: f64| shoot(m, t, rho_in, phi, l).map_or(f64::NEG_INFINITY, |u| u - rho_out);
    let mut step = 1.0;
    let (mut lo, mut hi) = (0.0, 0.0);
    let m0 = mismatch(0.0);
    if m0 > 0.0 {
        while mismatch(hi) > 0.0 {
            lo = hi;
            hi += step;
            step *= 2.0;
            if step > 1e15 {
                return Err(SteadyError::NonConvergence { iterations: 0, residual: m0 });
            }
        }
    } else if m0 < 0.0 {
        while mismatch(lo) < 0.0 {
            hi = lo;
            lo -= step;
            step *= 2.0;
            if step > 1e15 {
                return Err(SteadyError::NonConvergence { iterations: 0, residual: m0 });
            }
        }
    } else {
        return Ok(0.0);
    }
    Ok(bisect(|p| -mismatch(p), lo, hi))
}

struct Layout {
    free: Vec<usize>,
    slot: Vec<Option<usize>>,
}

impl Layout {
    fn new(g: &MetricGraph) -> Self {
        let free = g.flow_vertices();
        let mut slot = vec![None; g.n_vertices()];
        for (k, &v) in free.iter().enumerate() {
            slot[v] = Some(k);
        }
        Layout { free, slot }
    }

    fn densities(&self, g: &MetricGraph, b: &SteadyBoundary, x: &DVector<f64>) -> Vec<f64> {
        (0..g.n_vertices())
            .map(|v| self.slot[v].map_or(b.slack[v], |k| x[k]))
            .collect()
    }
}

fn edge_flows(g: &MetricGraph, models: &ModelSet, b: &SteadyBoundary, rho: &[f64]) -> Result<Vec<f64>, SteadyError> {
    (0..g.n_edges())
        .map(|e| {
            let (a, c) = g.ends(e);
            let (ri, ro) = b.ratios[e];
            edge_flow(models.get(e), b.t, ri * rho[a], ro * rho[c], g.edges()[e].length)
        })
        .collect()
}

/// `q_v + Σ_in φ − Σ_out φ` at every vertex.
fn balances(g: &MetricGraph, flows: &[f64], q: &[f64]) -> Vec<f64> {
    let mut r = q.to_vec();
    for (e, phi) in flows.iter().enumerate() {
        let (a, c) = g.ends(e);
        r[a] -= phi;
        r[c] += phi;
    }
    r
}

fn residual(
    g: &MetricGraph,
    models: &ModelSet,
    b: &SteadyBoundary,
    lay: &Layout,
    x: &DVector<f64>,
) -> Result<DVector<f64>, SteadyError> {
    let rho = lay.densities(g, b, x);
    let flows = edge_flows(g, models, b, &rho)?;
    let bal = balances(g, &flows, &b.injections);
    Ok(DVector::from_iterator(lay.free.len(), lay.free.iter().map(|&v| bal[v])))
}

fn jacobian(
    g: &MetricGraph,
    models: &ModelSet,
    b: &SteadyBoundary,
    lay: &Layout,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>, SteadyError> {
    let rho = lay.densities(g, b, x);
    let n = lay.free.len();
    let mut jac = DMatrix::zeros(n, n);
    for e in 0..g.n_edges() {
        let (a, c) = g.ends(e);
        let (ri, ro) = b.ratios[e];
        let (di, d_o) = edge_flow_partials(models.get(e), b.t, ri * rho[a], ro * rho[c], g.edges()[e].length)?;
        let (da, dc) = (di * ri, d_o * ro);
        // φ leaves a (−) and enters c (+).
        for (row, sign) in [(lay.slot[a], -1.0), (lay.slot[c], 1.0)] {
            if let Some(r) = row {
                if let Some(k) = lay.slot[a] {
                    jac[(r, k)] += sign * da;
                }
                if let Some(k) = lay.slot[c] {
                    jac[(r, k)] += sign * dc;
                }
            }
        }
    }
    Ok(jac)
}

/// Solves the steady network equations with the default initial guess
/// (uniform mean slack density).
pub fn solve_steady(g: &MetricGraph, models: &ModelSet, b: &SteadyBoundary) -> Result<SteadyState, SteadyError> {
    solve_steady_with(g, models, b, None, &SteadyOptions::default())
}

/// Solves from an explicit guess on the flow vertices (in `g.flow_vertices()` order).
pub fn solve_steady_with(
    g: &MetricGraph,
    models: &ModelSet,
    b: &SteadyBoundary,
    guess: Option<&[f64]>,
    opts: &SteadyOptions,
) -> Result<SteadyState, SteadyError> {
    let lay = Layout::new(g);
    let n = lay.free.len();
    let mut x = match guess {
        Some(gs) => DVector::from_column_slice(gs),
        None => DVector::from_element(n, b.mean_slack(g)),
    };
    let tol = opts.tol_balance * b.balance_scale(g);
    let mut r = residual(g, models, b, &lay, &x)?;
    let mut iterations = 0;
    // One extra Newton step after the balance tolerance is met buys the
    // remaining digits at quadratic convergence.
    let mut polish = 1;
    loop {
        if r.amax() <= tol {
            if polish == 0 || n == 0 {
                break;
            }
            polish -= 1;
        }
        if iterations >= opts.max_iter {
            if r.amax() <= tol {
                break;
            }
            return Err(SteadyError::NonConvergence {
                iterations,
                residual: r.amax(),
            });
        }
        iterations += 1;
        let jac = jacobian(g, models, b, &lay, &x)?;
        let dx = jac.lu().solve(&(-&r)).ok_or(SteadyError::SingularJacobian)?;
        if dx.iter().any(|d| !d.is_finite()) {
            return Err(SteadyError::SingularJacobian);
        }
        // Keep densities positive, then backtrack on the residual norm.
        let mut alpha: f64 = 1.0;
        for k in 0..n {
            if dx[k] < 0.0 {
                alpha = alpha.min(0.9 * x[k] / -dx[k]);
            }
        }
        let r0 = r.norm();
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &x + alpha * &dx;
            if let Ok(rt) = residual(g, models, b, &lay, &trial) {
                if rt.norm() <= (1.0 - 1e-4 * alpha) * r0 || rt.amax() <= tol {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, rn)) = accepted else {
            if r.amax() <= tol {
                break;
            }
            return Err(SteadyError::NonConvergence {
                iterations,
                residual: r.amax(),
            });
        };
        let step = (alpha * &dx).amax() / xn.amax().max(1.0);
        x = xn;
        r = rn;
        // A tiny step is stagnation only if the residual stopped falling too.
        if step <= opts.tol_step && r.norm() > 0.5 * r0 {
            if r.amax() <= tol {
                break;
            }
            return Err(SteadyError::NonConvergence {
                iterations,
                residual: r.amax(),
            });
        }
    }
    finish(g, models, b, &lay, &x, iterations)
}

fn finish(
    g: &MetricGraph,
    models: &ModelSet,
    b: &SteadyBoundary,
    lay: &Layout,
    x: &DVector<f64>,
    iterations: usize,
) -> Result<SteadyState, SteadyError> {
    let densities = lay.densities(g, b, x);
    if let Some(&bad) = densities.iter().find(|r| !(**r > 0.0)) {
        return Err(PhysicsError::NonPositiveDensity(bad).into());
    }
    let flows = edge_flows(g, models, b, &densities)?;
    let bal = balances(g, &flows, &b.injections);
    let balance_residual = lay.free.iter().map(|&v| bal[v].abs()).fold(0.0, f64::max);
    let mut injections = b.injections.clone();
    for v in g.slack_vertices() {
        injections[v] = b.injections[v] - bal[v];
    }
    let mut edge_residual: f64 = 0.0;
    for e in 0..g.n_edges() {
        let (a, c) = g.ends(e);
        let (ri, ro) = b.ratios[e];
        let (rin, rout) = (ri * densities[a], ro * densities[c]);
        let l = g.edges()[e].length;
        let m = models.get(e);
        let res = match m.potential() {
            Some(p) => (p.g_inv(flows[e]) * l - (p.h(rin) - p.h(rout))) / p.h(rin).max(p.h(rout)),
            None => (edge_density_at(m, b.t, rin, flows[e], l)? - rout) / rout,
        };
        edge_residual = edge_residual.max(res.abs());
    }
    Ok(SteadyState {
        densities,
        flows,
        injections,
        balance_residual,
        edge_residual,
        iterations,
    })
}

/// Outcome of an ordering check between two steady states.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderVerdict {
    pub ordered: bool,
    /// min of `ρ¹ − ρ²` over vertices and sampled edge points, kg/m³.
    pub worst_margin: f64,
    /// Where the worst margin occurs: vertex id, or `tail->head@x`.
    pub worst_location: String,
    pub samples: usize,
}

/// Interior points sampled per edge by [`verify_theorem1`].
pub const EDGE_SAMPLES: usize = 8;

/// Solves both boundary sets and checks `ρ¹ ≥ ρ² − tol` at every vertex and
/// at sampled interior points of every edge.
pub fn verify_theorem1(
    g: &MetricGraph,
    models: &ModelSet,
    b1: &SteadyBoundary,
    b2: &SteadyBoundary,
    tol: f64,
) -> Result<OrderVerdict, SteadyError> {
    for v in 0..g.n_vertices() {
        let id = g.vertex_id(v);
        if g.is_slack(v) && b1.slack[v] < b2.slack[v] {
            return Err(SteadyError::HypothesisViolated(format!("slack density at {id} not ordered")));
        }
        if !g.is_slack(v) && b1.injections[v] < b2.injections[v] {
            return Err(SteadyError::HypothesisViolated(format!("injection at {id} not ordered")));
        }
    }
    if b1.ratios != b2.ratios {
        return Err(SteadyError::HypothesisViolated("actuator ratios differ".into()));
    }
    let s1 = solve_steady(g, models, b1)?;
    let s2 = solve_steady(g, models, b2)?;
    let mut worst = f64::INFINITY;
    let mut location = String::new();
    let mut samples = 0;
    for v in 0..g.n_vertices() {
        samples += 1;
        let m = s1.densities[v] - s2.densities[v];
        if m < worst {
            worst = m;
            location = g.vertex_id(v).to_string();
        }
    }
    for e in 0..g.n_edges() {
        let l = g.edges()[e].length;
        for k in 1..EDGE_SAMPLES {
            let x = l * k as f64 / EDGE_SAMPLES as f64;
            let m = s1.edge_density(g, models, b1, e, x)? - s2.edge_density(g, models, b2, e, x)?;
            samples += 1;
            if m < worst {
                worst = m;
                location = format!("{}@{x}", g.edges()[e].key());
            }
        }
    }
    Ok(OrderVerdict {
        ordered: worst >= -tol,
        worst_margin: worst,
        worst_location: location,
        samples,
    })
}

/// Multi-start agreement report.
#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessVerdict {
    /// max pairwise |Δρ| over converged starts, relative to max density.
    pub max_deviation: f64,
    pub converged: usize,
    /// Errors of starts that failed to converge.
    pub failures: Vec<String>,
}

impl UniquenessVerdict {
    pub fn unique_within(&self, tol: f64) -> bool {
        self.converged >= 2 && self.max_deviation <= tol
    }
}

/// Solves from `n_starts` random initial guesses in `[0.5, 1.5]` times the
/// mean slack density and reports the largest disagreement.
pub fn uniqueness_probe(
    g: &MetricGraph,
    models: &ModelSet,
    b: &SteadyBoundary,
    n_starts: usize,
    seed: u64,
) -> Result<UniquenessVerdict, SteadyError> {
    if n_starts < 2 {
        return Err(SteadyError::HypothesisViolated("uniqueness probe needs at least two starts".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = b.mean_slack(g);
    let nf = g.flow_vertices().len();
    let mut states: Vec<Vec<f64>> = Vec::new();
    let mut failures = Vec::new();
    for _ in 0..n_starts {
        let guess: Vec<f64> = (0..nf).map(|_| mean * rng.gen_range(0.5..1.5)).collect();
        match solve_steady_with(g, models, b, Some(&guess), &SteadyOptions::default()) {
            Ok(s) => states.push(s.densities),
            Err(e) => failures.push(e.to_string()),
        }
    }
    let scale = states
        .iter()
        .flatten()
        .fold(f64::MIN_POSITIVE, |m, r| m.max(r.abs()));
    let mut dev: f64 = 0.0;
    for (i, a) in states.iter().enumerate() {
        for bb in &states[i + 1..] {
            for (x, y) in a.iter().zip(bb) {
                dev = dev.max((x - y).abs() / scale);
            }
        }
    }
    Ok(UniquenessVerdict {
        max_deviation: dev,
        converged: states.len(),
        failures,
    })
}

/// Skew-symmetric flow `φ_uv` (`−φ_vu` when the edge runs `v → u`).
fn skew_flow(g: &MetricGraph, flows: &[f64], u: usize, e: usize) -> f64 {
    if g.ends(e).0 == u {
        flows[e]
    } else {
        -flows[e]
    }
}

/// A non-intersecting path `i₁, …, iₙ` from a vertex outside `s_set` to `i`
/// with `φ¹ ≤ φ²` on every step, grown breadth-first from `i`.
pub fn aquarius_path(
    g: &MetricGraph,
    flows1: &[f64],
    flows2: &[f64],
    s_set: &[bool],
    i: usize,
) -> Result<Vec<usize>, SteadyError> {
    let n = g.n_vertices();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut in_a = vec![false; n];
    in_a[i] = true;
    let mut frontier = VecDeque::from([i]);
    let mut end = (!s_set[i]).then_some(i);
    while end.is_none() {
        let Some(j) = frontier.pop_front() else { break };
        for (v, e) in g.neighbours(j) {
            // φ_vj on the edge joining v and j.
            if !in_a[v] && skew_flow(g, flows1, v, e) <= skew_flow(g, flows2, v, e) {
                in_a[v] = true;
                parent[v] = Some(j);
                frontier.push_back(v);
                if !s_set[v] {
                    end = Some(v);
                    break;
                }
            }
        }
    }
    let Some(mut v) = end else {
        return Err(SteadyError::PathNotFound(g.vertex_id(i).to_string()));
    };
    let mut path = vec![v];
    while let Some(p) = parent[v] {
        path.push(p);
        v = p;
    }
    Ok(path)
}

/// Checks that `path` is simple, follows edges and has `φ¹ ≤ φ²` on every step.
pub fn is_ordered_path(g: &MetricGraph, flows1: &[f64], flows2: &[f64], path: &[usize]) -> bool {
    let mut seen = vec![false; g.n_vertices()];
    for &v in path {
        if std::mem::replace(&mut seen[v], true) {
            return false;
        }
    }
    path.windows(2).all(|w| {
        g.neighbours(w[0])
            .find(|&(v, _)| v == w[1])
            .is_some_and(|(_, e)| skew_flow(g, flows1, w[0], e) <= skew_flow(g, flows2, w[0], e))
    })
}

/// A random flow vector satisfying the balance equations for `q` with the
/// slack vertices absorbing the remainder, used to exercise [`aquarius_path`].
pub fn random_balanced_flows(g: &MetricGraph, q: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    // Spanning tree from the slack vertices, random flows on the co-tree edges.
    let n = g.n_vertices();
    let mut flows = vec![f64::NAN; g.n_edges()];
    let mut tree_parent: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut order = Vec::new();
    let mut seen = vec![false; n];
    let mut queue: VecDeque<usize> = g.slack_vertices().into();
    for &s in &queue {
        seen[s] = true;
    }
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for (w, e) in g.neighbours(v) {
            if !seen[w] {
                seen[w] = true;
                tree_parent[w] = Some((v, e));
                queue.push_back(w);
            }
        }
    }
    let tree: Vec<bool> = {
        let mut t = vec![false; g.n_edges()];
        for (_, e) in tree_parent.iter().flatten() {
            t[*e] = true;
        }
        t
    };
    for e in 0..g.n_edges() {
        if !tree[e] {
            flows[e] = rng.gen_range(-10.0..10.0);
        }
    }
    let mut excess = q.to_vec();
    for e in 0..g.n_edges() {
        if !tree[e] {
            let (a, c) = g.ends(e);
            excess[a] -= flows[e];
            excess[c] += flows[e];
        }
    }
    for &v in order.iter().rev() {
        if let Some((p, e)) = tree_parent[v] {
            // Route v's excess through edge e toward p.
            let out = excess[v];
            let phi = if g.ends(e).0 == v { out } else { -out };
            flows[e] = phi;
            excess[p] += out;
            excess[v] = 0.0;
        }
    }
    flows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::physics::{CustomModel, IdealGas, Potential};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn pipe_boundary(g: &MetricGraph, withdrawal: f64) -> SteadyBoundary {
        SteadyBoundary::new(g, vec![0.0, -withdrawal], vec![fixtures::INLET_DENSITY, 0.0])
    }

    #[test]
    fn zero_withdrawal_is_uniform() {
        let g = fixtures::single_pipe_graph();
        let m = ModelSet::ideal_gas(&g);
        let s = solve_steady(&g, &m, &pipe_boundary(&g, 0.0)).unwrap();
        assert_eq!(s.flows, vec![0.0]);
        assert_eq!(s.densities[1], fixtures::INLET_DENSITY);
    }

    #[test]
    fn single_pipe_matches_potential_inversion() {
        let g = fixtures::single_pipe_graph();
        let m = ModelSet::ideal_gas(&g);
        let gas = IdealGas::for_edge(g.gas(), &g.edges()[0]);
        let l = g.edges()[0].length;
        for w in [120.0, 300.0] {
            let s = solve_steady(&g, &m, &pipe_boundary(&g, w)).unwrap();
            let oracle = gas.h_inv(gas.h(fixtures::INLET_DENSITY) - gas.g_inv(w) * l).unwrap();
            assert_relative_eq!(s.densities[1], oracle, max_relative = 1e-10);
            assert_relative_eq!(s.flows[0], w, max_relative = 1e-10);
            assert_relative_eq!(s.injections[0], w, max_relative = 1e-10);
        }
    }

    #[test]
    fn y_network_is_symmetric() {
        let g = crate::netgraph::build_graph(crate::netgraph::GraphSpec {
            gas: Default::default(),
            vertices: ["s", "m", "a", "b"]
                .iter()
                .enumerate()
                .map(|(k, id)| crate::netgraph::Vertex {
                    id: id.to_string(),
                    kind: if k == 0 {
                        crate::netgraph::VertexKind::Slack
                    } else {
                        crate::netgraph::VertexKind::Flow
                    },
                })
                .collect(),
            edges: vec![
                crate::netgraph::Edge::new("s", "m", 30_000.0, 0.9, 0.01),
                crate::netgraph::Edge::new("m", "a", 20_000.0, 0.6, 0.01),
                crate::netgraph::Edge::new("m", "b", 20_000.0, 0.6, 0.01),
            ],
        })
        .unwrap();
        let m = ModelSet::ideal_gas(&g);
        let b = SteadyBoundary::new(&g, vec![0.0, 0.0, -40.0, -40.0], vec![50.0, 0.0, 0.0, 0.0]);
        let s = solve_steady(&g, &m, &b).unwrap();
        assert_relative_eq!(s.densities[2], s.densities[3], max_relative = 1e-12);
        assert!(s.balance_residual < 1e-8 * 40.0);
        let total: f64 = s.injections.iter().sum();
        assert!(total.abs() < 1e-8 * 40.0 * 4.0);
    }

    #[test]
    fn custom_edges_match_closed_form() {
        let g = fixtures::single_pipe_graph();
        let gas = IdealGas::for_edge(g.gas(), &g.edges()[0]);
        let custom = CustomModel::new("gas-by-shooting", move |t, u, v| {
            crate::physics::Dissipation::eval(&gas, t, u, v)
        });
        let m = ModelSet::from_models(vec![Arc::new(custom)]);
        let s = solve_steady(&g, &m, &pipe_boundary(&g, 120.0)).unwrap();
        let oracle = gas
            .h_inv(gas.h(fixtures::INLET_DENSITY) - gas.g_inv(120.0) * g.edges()[0].length)
            .unwrap();
        assert_relative_eq!(s.densities[1], oracle, max_relative = 1e-8);
        assert!(s.edge_residual < 1e-8);
    }

    #[test]
    fn theorem1_pipe_examples() {
        let g = fixtures::single_pipe_graph();
        let m = ModelSet::ideal_gas(&g);
        let b1 = pipe_boundary(&g, 120.0);
        let same = verify_theorem1(&g, &m, &b1, &b1, 1e-9).unwrap();
        assert!(same.ordered);
        assert_eq!(same.worst_margin, 0.0);
        let v = verify_theorem1(&g, &m, &b1, &pipe_boundary(&g, 300.0), 1e-9).unwrap();
        assert!(v.ordered && v.worst_margin >= 0.0);
        assert!(matches!(
            verify_theorem1(&g, &m, &pipe_boundary(&g, 300.0), &b1, 1e-9),
            Err(SteadyError::HypothesisViolated(_))
        ));
    }

    #[test]
    fn theorem1_five_node() {
        let g = fixtures::five_node_graph();
        let m = ModelSet::ideal_gas(&g);
        let s = fixtures::five_node_scenario(&g, fixtures::FiveNodeCase::Baseline);
        let b2 = SteadyBoundary::from_scenario(&g, &s, 0.0).unwrap();
        let mut b1 = b2.clone();
        let v5 = g.vertex_index("5").unwrap();
        b1.injections[v5] *= 0.95; // withdrawal below by 5%: q¹ ≥ q²
        let v = verify_theorem1(&g, &m, &b1, &b2, 1e-9).unwrap();
        assert!(v.ordered, "{v:?}");
    }

    #[test]
    fn multistart_agrees() {
        let g = fixtures::single_pipe_graph();
        let m = ModelSet::ideal_gas(&g);
        let u = uniqueness_probe(&g, &m, &pipe_boundary(&g, 300.0), 5, 7).unwrap();
        assert!(u.unique_within(1e-8), "{u:?}");
        let z = uniqueness_probe(&g, &m, &pipe_boundary(&g, 0.0), 3, 7).unwrap();
        assert!(z.max_deviation < 1e-12);
    }

    #[test]
    fn aquarius_single_pipe() {
        let g = fixtures::single_pipe_graph();
        let s_set = [false, true];
        let path = aquarius_path(&g, &[120.0], &[300.0], &s_set, 1).unwrap();
        assert_eq!(path, vec![0, 1]);
        assert!(aquarius_path(&g, &[300.0], &[120.0], &s_set, 1).is_err());
    }

    #[test]
    fn aquarius_equal_flows() {
        let g = fixtures::five_node_graph();
        let flows = vec![3.0, 1.0, 2.0, -1.0, 4.0];
        let s_set: Vec<bool> = (0..g.n_vertices()).map(|v| !g.is_slack(v)).collect();
        for i in g.flow_vertices() {
            let path = aquarius_path(&g, &flows, &flows, &s_set, i).unwrap();
            assert!(is_ordered_path(&g, &flows, &flows, &path));
            assert_eq!(*path.last().unwrap(), i);
        }
    }
}
