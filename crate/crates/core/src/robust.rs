//! Robust feasibility under interval injection uncertainty, and the nodal
//! monitoring policy.
//!
//! An [`Envelope`] bounds every uncertain injection between a lower profile
//! `q⁽²⁾` and an upper profile `q⁽¹⁾`. Because densities are monotone in the
//! injections, the upper scenario gives the highest densities anywhere in the
//! envelope and the lower one the lowest, so checking `ρ⁽¹⁾ ≤ ρ_max` and
//! `ρ⁽²⁾ ≥ ρ_min` certifies every profile inside it.
//!
//! The policy handles realized injections that leave the envelope. A node
//! injecting more than `q⁽¹⁾` is watched against `ρ⁽¹⁾`; when its density
//! crosses above, its injection is reset to `q⁽¹⁾` for the rest of the run.
//! Nodes below `q⁽²⁾` are treated symmetrically against `ρ⁽²⁾`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::monotone::{check_order, MonotoneError, VerifyOptions};
use crate::netgraph::{GraphError, MetricGraph, Scenario};
use crate::physics::ModelSet;
use crate::timefn::TimeFunction;
use crate::transient::{assemble_parent, integrate_many, OdeSystem, Trajectory, TransientError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RobustError {
    #[error("envelope inverted at vertex {vertex}, t = {t} s: upper − lower = {gap:e} kg/s")]
    EnvelopeInverted { vertex: String, t: f64, gap: f64 },
    #[error("invalid density bounds: {0}")]
    InvalidBounds(String),
    #[error("envelope names unknown or non-flow vertex {0}")]
    UnknownVertex(String),
    #[error("base injection at vertex {vertex} leaves the envelope at t = {t} s")]
    BaseOutsideEnvelope { vertex: String, t: f64 },
    #[error("sandwich violated at t = {t} s, vertex {vertex}: {side} by {excess:e} kg/m³")]
    SandwichViolated {
        t: f64,
        vertex: String,
        side: Side,
        excess: f64,
    },
    #[error(transparent)]
    Monotone(#[from] MonotoneError),
    #[error(transparent)]
    Transient(#[from] TransientError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl RobustError {
    pub fn category(&self) -> &'static str {
        match self {
            RobustError::EnvelopeInverted { .. }
            | RobustError::InvalidBounds(_)
            | RobustError::UnknownVertex(_)
            | RobustError::BaseOutsideEnvelope { .. }
            | RobustError::Graph(_) => "invalid-input",
            RobustError::SandwichViolated { .. } => "sandwich-violated",
            RobustError::Monotone(e) => e.category(),
            RobustError::Transient(e) => crate::Error::Transient(e.clone()).category(),
        }
    }
}

/// Which envelope trajectory was crossed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Above `ρ⁽¹⁾` (or above `ρ_max`).
    Above,
    /// Below `ρ⁽²⁾` (or below `ρ_min`).
    Below,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Above => "above",
            Side::Below => "below",
        })
    }
}

/// Interval uncertainty on injections plus network density bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    /// Flow vertex id → `q⁽¹⁾(t)`, kg/s.
    pub upper: BTreeMap<String, TimeFunction>,
    /// Flow vertex id → `q⁽²⁾(t)`, kg/s.
    pub lower: BTreeMap<String, TimeFunction>,
    /// kg/m³
    pub rho_min: f64,
    /// kg/m³
    pub rho_max: f64,
}

/// Uniform sample count for envelope and input checks.
const SAMPLES: usize = 400;

impl Envelope {
    /// Uncertain vertices: those named by either bound.
    pub fn vertices(&self) -> Vec<String> {
        let mut v: Vec<String> = self.upper.keys().chain(self.lower.keys()).cloned().collect();
        v.sort();
        v.dedup();
        v
    }

    /// Bound profile at `id`, falling back to `base` where the envelope is silent.
    pub fn bound(&self, side: Side, id: &str, base: &Scenario) -> TimeFunction {
        let map = match side {
            Side::Above => &self.upper,
            Side::Below => &self.lower,
        };
        map.get(id).cloned().unwrap_or_else(|| base.injection(id))
    }

    /// `base` with every uncertain injection replaced by one bound.
    pub fn scenario(&self, base: &Scenario, side: Side) -> Scenario {
        let mut s = base.clone();
        for id in self.vertices() {
            s.injections.insert(id.clone(), self.bound(side, &id, base));
        }
        s
    }

    /// Checks vertex names, bound order on sampled times and density bounds.
    pub fn validate(&self, g: &MetricGraph, base: &Scenario) -> Result<(), RobustError> {
        if !(self.rho_min > 0.0 && self.rho_min < self.rho_max && self.rho_max.is_finite()) {
            return Err(RobustError::InvalidBounds(format!(
                "need 0 < rho_min < rho_max, got {} and {}",
                self.rho_min, self.rho_max
            )));
        }
        for id in self.vertices() {
            match g.vertex_index(&id) {
                Some(v) if !g.is_slack(v) => {}
                _ => return Err(RobustError::UnknownVertex(id)),
            }
        }
        for f in self.upper.values().chain(self.lower.values()) {
            f.validate()?;
        }
        for t in self.sample_times(base) {
            for id in self.vertices() {
                let gap = self.bound(Side::Above, &id, base).value(t) - self.bound(Side::Below, &id, base).value(t);
                if gap < 0.0 {
                    return Err(RobustError::EnvelopeInverted { vertex: id, t, gap });
                }
            }
        }
        Ok(())
    }

    /// Checks that `s` injects within the envelope at sampled times.
    pub fn contains(&self, s: &Scenario) -> Result<(), RobustError> {
        for t in self.sample_times(s) {
            for id in self.vertices() {
                let q = s.injection(&id).value(t);
                let hi = self.bound(Side::Above, &id, s).value(t);
                let lo = self.bound(Side::Below, &id, s).value(t);
                let slack = 1e-12 * q.abs().max(1.0);
                if q > hi + slack || q < lo - slack {
                    return Err(RobustError::BaseOutsideEnvelope { vertex: id, t });
                }
            }
        }
        Ok(())
    }

    fn sample_times(&self, base: &Scenario) -> Vec<f64> {
        let h = base.horizon;
        let mut ts: Vec<f64> = (0..=SAMPLES).map(|k| h * k as f64 / SAMPLES as f64).collect();
        for f in self.upper.values().chain(self.lower.values()) {
            ts.extend(f.breakpoints().into_iter().filter(|t| (0.0..=h).contains(t)));
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Vertices whose realized injection leaves the envelope, by side, with
    /// the first sampled time it does.
    pub fn violating_nodes(&self, realized: &Scenario) -> Vec<(String, Side, f64)> {
        let mut out = Vec::new();
        for id in self.vertices() {
            let q = realized.injection(&id);
            let hi = self.bound(Side::Above, &id, realized);
            let lo = self.bound(Side::Below, &id, realized);
            let ts = self.sample_times(realized);
            if let Some(&t) = ts.iter().find(|&&t| q.value(t) > hi.value(t)) {
                out.push((id.clone(), Side::Above, t));
            }
            if let Some(&t) = ts.iter().find(|&&t| q.value(t) < lo.value(t)) {
                out.push((id.clone(), Side::Below, t));
            }
        }
        out
    }
}

/// Nominal, upper and lower runs sharing controls and a step sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeRun {
    pub nominal: Trajectory,
    pub upper: Trajectory,
    pub lower: Trajectory,
}

/// A density bound broken by an extremal trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundViolation {
    pub t: f64,
    pub vertex: String,
    /// kg/m³
    pub density: f64,
    /// kg/m³
    pub bound: f64,
    pub side: Side,
}

/// Outcome of [`certify_envelope`].
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub feasible: bool,
    /// Lowest density of the lower run, kg/m³.
    pub min_density: f64,
    /// Highest density of the upper run, kg/m³.
    pub max_density: f64,
    /// First violation per vertex and side, in time order.
    pub violations: Vec<BoundViolation>,
    pub runs: EnvelopeRun,
}

fn systems(
    g: &MetricGraph,
    models: &ModelSet,
    scenarios: &[&Scenario],
    opts: &VerifyOptions,
) -> Result<Vec<OdeSystem>, RobustError> {
    scenarios
        .iter()
        .map(|s| assemble_parent(g, opts.epsilon, s, models, opts.system).map_err(RobustError::from))
        .collect()
}

fn run_joint(systems: &[OdeSystem], horizon: f64, opts: &VerifyOptions) -> Result<Vec<Trajectory>, RobustError> {
    let refs: Vec<&OdeSystem> = systems.iter().collect();
    let y0 = systems
        .iter()
        .map(|s| s.initial_state())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(integrate_many(&refs, &y0, &opts.outputs(horizon), &opts.integrator)?)
}

/// Runs the nominal and both extremal scenarios and checks the density bounds.
pub fn certify_envelope(
    g: &MetricGraph,
    models: &ModelSet,
    base: &Scenario,
    env: &Envelope,
    opts: &VerifyOptions,
) -> Result<Certificate, RobustError> {
    env.validate(g, base)?;
    env.contains(base)?;
    let upper = env.scenario(base, Side::Above);
    let lower = env.scenario(base, Side::Below);
    let sys = systems(g, models, &[base, &upper, &lower], opts)?;
    let mut runs = run_joint(&sys, base.horizon, opts)?;
    let lower_t = runs.pop().expect("three runs");
    let upper_t = runs.pop().expect("three runs");
    let nominal = runs.pop().expect("three runs");
    let mut violations = Vec::new();
    for v in 0..upper_t.vertex_ids.len() {
        let over = (0..upper_t.len()).find(|&k| upper_t.densities[k][v] > env.rho_max);
        let under = (0..lower_t.len()).find(|&k| lower_t.densities[k][v] < env.rho_min);
        if let Some(k) = over {
            violations.push(BoundViolation {
                t: upper_t.times[k],
                vertex: upper_t.vertex_ids[v].clone(),
                density: upper_t.densities[k][v],
                bound: env.rho_max,
                side: Side::Above,
            });
        }
        if let Some(k) = under {
            violations.push(BoundViolation {
                t: lower_t.times[k],
                vertex: lower_t.vertex_ids[v].clone(),
                density: lower_t.densities[k][v],
                bound: env.rho_min,
                side: Side::Below,
            });
        }
    }
    violations.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(Certificate {
        feasible: violations.is_empty(),
        min_density: lower_t.min_density(),
        max_density: upper_t.max_density(),
        violations,
        runs: EnvelopeRun {
            nominal,
            upper: upper_t,
            lower: lower_t,
        },
    })
}

/// Runs interior scenarios jointly with both extremal ones and reports how
/// each sits between them. Every scenario must lie inside the envelope.
pub fn check_interior(
    g: &MetricGraph,
    models: &ModelSet,
    base: &Scenario,
    env: &Envelope,
    interior: &[Scenario],
    opts: &VerifyOptions,
) -> Result<Vec<SandwichReport>, RobustError> {
    env.validate(g, base)?;
    for s in interior {
        env.contains(s)?;
    }
    let upper = env.scenario(base, Side::Above);
    let lower = env.scenario(base, Side::Below);
    let mut all: Vec<&Scenario> = vec![&upper, &lower];
    all.extend(interior);
    let sys = systems(g, models, &all, opts)?;
    let runs = run_joint(&sys, base.horizon, opts)?;
    runs[2..]
        .iter()
        .map(|tr| {
            Ok(SandwichReport {
                upper_margin: check_order(&runs[0], tr, 0.0)?.worst_margin,
                lower_margin: check_order(tr, &runs[1], 0.0)?.worst_margin,
            })
        })
        .collect()
}

/// Policy override kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyAction {
    /// Injection reset to the upper bound `q⁽¹⁾` after crossing above `ρ⁽¹⁾`.
    PinToUpper,
    /// Injection reset to the lower bound `q⁽²⁾` after crossing below `ρ⁽²⁾`.
    PinToLower,
}

impl fmt::Display for PolicyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyAction::PinToUpper => "pin-to-upper",
            PolicyAction::PinToLower => "pin-to-lower",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionRecord {
    /// Time from which the override applies, s.
    pub t: f64,
    pub node: String,
    pub action: PolicyAction,
    /// Margin past the envelope trajectory that triggered the action, kg/m³.
    pub trigger_margin: f64,
}

/// Closed-loop run of the monitoring policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTrace {
    pub actions: Vec<ActionRecord>,
    /// Realized scenario with the overrides applied.
    pub effective: Scenario,
    pub trajectory: Trajectory,
    /// Run of the upper envelope scenario.
    pub upper: Trajectory,
    /// Run of the lower envelope scenario.
    pub lower: Trajectory,
}

/// Policy settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpOptions {
    pub verify: VerifyOptions,
    /// With the policy off the realized scenario runs unmodified.
    pub enabled: bool,
}

impl NmpOptions {
    pub fn new(epsilon: f64) -> Self {
        NmpOptions {
            verify: VerifyOptions::new(epsilon),
            enabled: true,
        }
    }
}

/// Runs `realized` under the monitoring policy against the envelope built
/// from it (same slack data and actuators).
pub fn run_nmp(
    g: &MetricGraph,
    models: &ModelSet,
    env: &Envelope,
    realized: &Scenario,
    opts: &NmpOptions,
) -> Result<PolicyTrace, RobustError> {
    env.validate(g, realized)?;
    let tol = opts.verify.tol_order();
    let upper = env.scenario(realized, Side::Above);
    let lower = env.scenario(realized, Side::Below);
    let mut watch: Vec<(String, Side)> = if opts.enabled {
        env.violating_nodes(realized).into_iter().map(|(id, side, _)| (id, side)).collect()
    } else {
        Vec::new()
    };
    let mut effective = realized.clone();
    let mut actions: Vec<ActionRecord> = Vec::new();
    loop {
        let sys = systems(g, models, &[&effective, &upper, &lower], &opts.verify)?;
        let mut runs = run_joint(&sys, realized.horizon, &opts.verify)?;
        let lo_t = runs.pop().expect("three runs");
        let up_t = runs.pop().expect("three runs");
        let traj = runs.pop().expect("three runs");
        let after = actions.last().map_or(f64::NEG_INFINITY, |a| a.t);
        let mut next: Option<(usize, f64, f64)> = None;
        for (w, (id, side)) in watch.iter().enumerate() {
            let v = traj
                .vertex_index(id)
                .ok_or_else(|| RobustError::UnknownVertex(id.clone()))?;
            // Margin is non-negative while the node stays on the envelope's side.
            let report = match side {
                Side::Above => check_order(&up_t, &traj, tol)?,
                Side::Below => check_order(&traj, &lo_t, tol)?,
            };
            let Some(t_c) = report.crossing_times[v] else {
                continue;
            };
            if t_c <= after {
                continue;
            }
            let margin = |t: f64| match side {
                Side::Above => up_t.density_at(v, t) - traj.density_at(v, t),
                Side::Below => traj.density_at(v, t) - lo_t.density_at(v, t),
            };
            // Act from the last zero of the margin before the detected crossing.
            let k = traj.times.partition_point(|&s| s < t_c).max(1);
            let (mut a, mut b) = (traj.times[k - 1].max(after), t_c);
            if margin(a) >= 0.0 {
                for _ in 0..100 {
                    let m = 0.5 * (a + b);
                    if m <= a || m >= b {
                        break;
                    }
                    if margin(m) < 0.0 {
                        b = m;
                    } else {
                        a = m;
                    }
                }
            }
            let t_act = a;
            if next.is_none_or(|n| t_act < n.1) {
                next = Some((w, t_act, margin(t_c)));
            }
        }
        let Some((w, t_act, m)) = next else {
            return Ok(PolicyTrace {
                actions,
                effective,
                trajectory: traj,
                upper: up_t,
                lower: lo_t,
            });
        };
        let (id, side) = watch.remove(w);
        let bound = env.bound(side, &id, realized);
        let before = effective.injection(&id);
        effective
            .injections
            .insert(id.clone(), TimeFunction::switch(t_act, before, bound));
        actions.push(ActionRecord {
            t: t_act,
            node: id,
            action: match side {
                Side::Above => PolicyAction::PinToUpper,
                Side::Below => PolicyAction::PinToLower,
            },
            trigger_margin: m,
        });
    }
}

/// Worst sandwich excess found by [`verify_corollary1`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichReport {
    /// min over times and vertices of `ρ⁽¹⁾ − ρ`, kg/m³.
    pub upper_margin: f64,
    /// min over times and vertices of `ρ − ρ⁽²⁾`, kg/m³.
    pub lower_margin: f64,
}

/// Checks `ρ⁽²⁾ − tol ≤ ρ ≤ ρ⁽¹⁾ + tol` at every refined vertex and output.
pub fn verify_corollary1(trace: &PolicyTrace, tol: f64) -> Result<SandwichReport, RobustError> {
    sandwich(&trace.trajectory, &trace.upper, &trace.lower, tol)
}

/// Checks that `traj` lies between `upper` and `lower` within `tol`.
pub fn sandwich(traj: &Trajectory, upper: &Trajectory, lower: &Trajectory, tol: f64) -> Result<SandwichReport, RobustError> {
    let hi = check_order(upper, traj, tol)?;
    let lo = check_order(traj, lower, tol)?;
    let report = SandwichReport {
        upper_margin: hi.worst_margin,
        lower_margin: lo.worst_margin,
    };
    let (r, side) = if hi.worst_margin <= lo.worst_margin {
        (&hi, Side::Above)
    } else {
        (&lo, Side::Below)
    };
    if r.worst_margin < -tol {
        return Err(RobustError::SandwichViolated {
            t: r.worst_time,
            vertex: r.worst_vertex.clone(),
            side,
            excess: -r.worst_margin,
        });
    }
    Ok(report)
}
