//! Dissipation laws `φ = −f(t, u, v)` relating edge mass flow to local density
//! `u` and density gradient `v`.
//!
//! The gas instance drops the inertia term of the momentum equation (valid for
//! slow transients) and substitutes `p = c² ρ`, which gives
//!
//! ```text
//! f(u, v) = sign(v) · S · sqrt(2 D c² u |v| / λ)
//! ```
//!
//! The same law has a potential form `f(u, v) = g(h'(u) v)` with
//! `h(ρ) = c² ρ² / 2` and `g⁻¹(φ) = λ φ|φ| / (2 D S²)`. Along a steady edge
//! this integrates to `g⁻¹(φ) L = h(ρ(0)) − h(ρ(L))`. Some printed versions of
//! this relation carry a factor `1/L` where `L` belongs; the integrated form
//! is the one implemented here.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use crate::netgraph::{Edge, MetricGraph, RefinedGraph};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhysicsError {
    #[error("density must be positive, got {0}")]
    NonPositiveDensity(f64),
    #[error("density cavitates at x = {x} m: potential {potential:e} has no positive preimage")]
    DensityCavitation { x: f64, potential: f64 },
}

/// Gas constants. Defaults: `R = 473.92 J/(kg K)`, `T = 288.706 K`, `Z = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasConstants {
    /// J/(kg K)
    #[serde(default = "default_r")]
    pub gas_constant: f64,
    /// K
    #[serde(default = "default_t")]
    pub temperature: f64,
    #[serde(default = "default_z")]
    pub compressibility: f64,
    /// Mass flow below which pipe friction blends into a linear (laminar)
    /// law, kg/s. Zero keeps the pure square-root law.
    #[serde(default = "default_laminar")]
    pub laminar_flow: f64,
}

fn default_r() -> f64 {
    473.92
}
fn default_t() -> f64 {
    288.706
}
fn default_z() -> f64 {
    1.0
}
fn default_laminar() -> f64 {
    DEFAULT_LAMINAR_FLOW
}

/// Default laminar blending flow, kg/s. Far below operating flows; it keeps
/// the law smooth through flow reversals.
pub const DEFAULT_LAMINAR_FLOW: f64 = 0.1;

impl Default for GasConstants {
    fn default() -> Self {
        GasConstants {
            gas_constant: default_r(),
            temperature: default_t(),
            compressibility: default_z(),
            laminar_flow: default_laminar(),
        }
    }
}

impl GasConstants {
    /// `c² = Z R T`, m²/s².
    pub fn wave_speed_sq(&self) -> f64 {
        self.compressibility * self.gas_constant * self.temperature
    }

    pub fn pressure(&self, rho: f64) -> f64 {
        self.wave_speed_sq() * rho
    }

    pub fn density(&self, pressure: f64) -> f64 {
        pressure / self.wave_speed_sq()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormTag {
    IdealGas,
    PotentialForm,
    Custom,
}

/// `f(t, u, v)`: minus the mass flow (kg/s) for density `u` (kg/m³) and
/// gradient `v` (kg/m⁴). Must be strictly increasing in `v`.
pub trait Dissipation: fmt::Debug + Send + Sync {
    fn eval(&self, t: f64, u: f64, v: f64) -> f64;
    fn d_du(&self, t: f64, u: f64, v: f64) -> f64;
    fn d_dv(&self, t: f64, u: f64, v: f64) -> f64;
    fn form(&self) -> FormTag;
    /// The potential-form structure, when the law has one.
    fn potential(&self) -> Option<&dyn Potential> {
        None
    }
}

/// `f(u, v) = g(h'(u) v)` with increasing `h` and `g`.
pub trait Potential: fmt::Debug + Send + Sync {
    fn h(&self, rho: f64) -> f64;
    fn h_prime(&self, rho: f64) -> f64;
    /// Positive preimage of `psi`, if any.
    fn h_inv(&self, psi: f64) -> Option<f64>;
    fn g(&self, w: f64) -> f64;
    fn g_prime(&self, w: f64) -> f64;
    fn g_inv(&self, phi: f64) -> f64;
}

/// Inertia-free isothermal gas with constant compressibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealGas {
    /// c², m²/s²
    pub c2: f64,
    pub diameter: f64,
    pub friction: f64,
    pub area: f64,
    /// Blending width in potential-gradient units, m/s².
    pub delta: f64,
}

impl IdealGas {
    /// Pure square-root friction law.
    pub fn new(gas: GasConstants, diameter: f64, friction: f64, area: f64) -> Self {
        IdealGas {
            c2: gas.wave_speed_sq(),
            diameter,
            friction,
            area,
            delta: 0.0,
        }
    }

    /// Blends into a linear law below `flow` kg/s: with `w = h'(u) v`,
    /// `g(w) = S √(2D/λ) w (w² + δ²)^(-1/4)` and `δ` the turbulent gradient at `flow`.
    pub fn with_laminar_flow(mut self, flow: f64) -> Self {
        self.delta = flow * flow / (self.k() * self.area * self.area);
        self
    }

    pub fn for_edge(gas: GasConstants, e: &Edge) -> Self {
        IdealGas::new(gas, e.diameter, e.friction, e.area()).with_laminar_flow(gas.laminar_flow)
    }

    /// `2 D / λ`
    fn k(&self) -> f64 {
        2.0 * self.diameter / self.friction
    }

    fn ks(&self) -> f64 {
        self.area * self.k().sqrt()
    }
}

impl Dissipation for IdealGas {
    fn eval(&self, _t: f64, u: f64, v: f64) -> f64 {
        self.g(self.c2 * u * v)
    }

    fn d_du(&self, _t: f64, u: f64, v: f64) -> f64 {
        if u <= 0.0 {
            return f64::INFINITY * v.signum();
        }
        self.g_prime(self.c2 * u * v) * self.c2 * v
    }

    fn d_dv(&self, _t: f64, u: f64, v: f64) -> f64 {
        self.g_prime(self.c2 * u * v) * self.c2 * u
    }

    fn form(&self) -> FormTag {
        FormTag::IdealGas
    }

    fn potential(&self) -> Option<&dyn Potential> {
        Some(self)
    }
}

impl Potential for IdealGas {
    fn h(&self, rho: f64) -> f64 {
        0.5 * self.c2 * rho * rho
    }

    fn h_prime(&self, rho: f64) -> f64 {
        self.c2 * rho
    }

    fn h_inv(&self, psi: f64) -> Option<f64> {
        (psi > 0.0).then(|| (2.0 * psi / self.c2).sqrt())
    }

    fn g(&self, w: f64) -> f64 {
        if self.delta == 0.0 {
            return w.signum() * self.ks() * w.abs().sqrt();
        }
        self.ks() * w / (w * w + self.delta * self.delta).powf(0.25)
    }

    fn g_prime(&self, w: f64) -> f64 {
        if self.delta == 0.0 {
            if w == 0.0 {
                return f64::INFINITY;
            }
            return self.g(w) / (2.0 * w);
        }
        let d2 = self.delta * self.delta;
        let r = w * w + d2;
        self.ks() * (0.5 * w * w + d2) / (r * r.powf(0.25))
    }

    fn g_inv(&self, phi: f64) -> f64 {
        if self.delta == 0.0 {
            return phi * phi.abs() / (self.k() * self.area * self.area);
        }
        // (φ/K)⁴ = w⁴ / (w² + δ²), a quadratic in w².
        let a = (phi / self.ks()).powi(4);
        let w2 = 0.5 * (a + (a * a + 4.0 * a * self.delta * self.delta).sqrt());
        phi.signum() * w2.sqrt()
    }
}

type Scalar1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Scalar1Opt = Arc<dyn Fn(f64) -> Option<f64> + Send + Sync>;

/// A potential-form law assembled from user-supplied `h` and `g`.
#[derive(Clone)]
pub struct PotentialModel {
    pub h: Scalar1,
    pub h_prime: Scalar1,
    pub h_inv: Scalar1Opt,
    pub g: Scalar1,
    pub g_prime: Scalar1,
    pub g_inv: Scalar1,
}

impl fmt::Debug for PotentialModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PotentialModel")
    }
}

impl Potential for PotentialModel {
    fn h(&self, rho: f64) -> f64 {
        (self.h)(rho)
    }
    fn h_prime(&self, rho: f64) -> f64 {
        (self.h_prime)(rho)
    }
    fn h_inv(&self, psi: f64) -> Option<f64> {
        (self.h_inv)(psi)
    }
    fn g(&self, w: f64) -> f64 {
        (self.g)(w)
    }
    fn g_prime(&self, w: f64) -> f64 {
        (self.g_prime)(w)
    }
    fn g_inv(&self, phi: f64) -> f64 {
        (self.g_inv)(phi)
    }
}

impl Dissipation for PotentialModel {
    fn eval(&self, _t: f64, u: f64, v: f64) -> f64 {
        self.g(self.h_prime(u) * v)
    }

    fn d_du(&self, t: f64, u: f64, v: f64) -> f64 {
        central_difference(|x| self.eval(t, x, v), u)
    }

    fn d_dv(&self, _t: f64, u: f64, v: f64) -> f64 {
        let hp = self.h_prime(u);
        self.g_prime(hp * v) * hp
    }

    fn form(&self) -> FormTag {
        FormTag::PotentialForm
    }

    fn potential(&self) -> Option<&dyn Potential> {
        Some(self)
    }
}

type Scalar3 = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// An arbitrary law `f(t, u, v)`. Derivatives fall back to central differences.
#[derive(Clone)]
pub struct CustomModel {
    pub name: String,
    pub f: Scalar3,
    pub d_du: Option<Scalar3>,
    pub d_dv: Option<Scalar3>,
}

impl CustomModel {
    pub fn new(name: &str, f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        CustomModel {
            name: name.to_string(),
            f: Arc::new(f),
            d_du: None,
            d_dv: None,
        }
    }
}

impl fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomModel({})", self.name)
    }
}

impl Dissipation for CustomModel {
    fn eval(&self, t: f64, u: f64, v: f64) -> f64 {
        (self.f)(t, u, v)
    }

    fn d_du(&self, t: f64, u: f64, v: f64) -> f64 {
        match &self.d_du {
            Some(d) => d(t, u, v),
            None => central_difference(|x| (self.f)(t, x, v), u),
        }
    }

    fn d_dv(&self, t: f64, u: f64, v: f64) -> f64 {
        match &self.d_dv {
            Some(d) => d(t, u, v),
            None => central_difference(|x| (self.f)(t, u, x), v),
        }
    }

    fn form(&self) -> FormTag {
        FormTag::Custom
    }
}

fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1e-6);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// One dissipation law per edge of a graph.
#[derive(Debug, Clone)]
pub struct ModelSet {
    models: Vec<Arc<dyn Dissipation>>,
}

impl ModelSet {
    /// Ideal-gas closure on every edge, from the graph's gas constants.
    pub fn ideal_gas(g: &MetricGraph) -> Self {
        ModelSet {
            models: g
                .edges()
                .iter()
                .map(|e| Arc::new(IdealGas::for_edge(g.gas(), e)) as Arc<dyn Dissipation>)
                .collect(),
        }
    }

    pub fn from_models(models: Vec<Arc<dyn Dissipation>>) -> Self {
        ModelSet { models }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn get(&self, e: usize) -> &dyn Dissipation {
        self.models[e].as_ref()
    }

    pub fn replace(&mut self, e: usize, m: Arc<dyn Dissipation>) {
        self.models[e] = m;
    }

    /// Models of the parent edges, taken from the first segment of each.
    pub fn parent(&self, rg: &RefinedGraph) -> Self {
        ModelSet {
            models: rg.segments.iter().map(|segs| self.models[segs[0]].clone()).collect(),
        }
    }

    /// Parent-edge models carried onto the refined edges.
    pub fn refined(&self, rg: &RefinedGraph) -> Self {
        ModelSet {
            models: rg.parent_map.iter().map(|&p| self.models[p].clone()).collect(),
        }
    }
}

/// `φ = −f(t, u, v)`.
pub fn flow_from_gradient(m: &dyn Dissipation, t: f64, u: f64, v: f64) -> Result<f64, PhysicsError> {
    if !(u > 0.0) {
        return Err(PhysicsError::NonPositiveDensity(u));
    }
    Ok(-m.eval(t, u, v))
}

/// Closed-form steady density profile along an edge carrying flow `φ`.
#[derive(Debug, Clone, Copy)]
pub struct EdgeProfile<'a> {
    pub potential: &'a dyn Potential,
    pub psi_in: f64,
    /// `g⁻¹(φ)`, the potential drop per metre.
    pub drop: f64,
    pub length: f64,
}

impl EdgeProfile<'_> {
    pub fn at(&self, x: f64) -> f64 {
        self.potential
            .h_inv(self.psi_in - self.drop * x)
            .expect("profile validated positive at construction")
    }

    pub fn outlet(&self) -> f64 {
        self.at(self.length)
    }
}

/// `x ↦ h⁻¹(h(ρ_in) − g⁻¹(φ) x)` on `[0, L]`.
pub fn steady_edge_profile<'a>(
    p: &'a dyn Potential,
    phi: f64,
    rho_in: f64,
    length: f64,
) -> Result<EdgeProfile<'a>, PhysicsError> {
    if !(rho_in > 0.0) {
        return Err(PhysicsError::NonPositiveDensity(rho_in));
    }
    let psi_in = p.h(rho_in);
    let drop = p.g_inv(phi);
    let psi_out = psi_in - drop * length;
    if drop > 0.0 && p.h_inv(psi_out).is_none_or(|r| !(r > 0.0)) {
        let x = bisect_cavitation(p, psi_in, drop, length);
        return Err(PhysicsError::DensityCavitation {
            x,
            potential: psi_in - drop * x,
        });
    }
    Ok(EdgeProfile {
        potential: p,
        psi_in,
        drop,
        length,
    })
}

fn bisect_cavitation(p: &dyn Potential, psi_in: f64, drop: f64, length: f64) -> f64 {
    let ok = |x: f64| p.h_inv(psi_in - drop * x).is_some_and(|r| r > 0.0);
    let (mut a, mut b) = (0.0, length);
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if ok(m) {
            a = m;
        } else {
            b = m;
        }
    }
    b
}

/// One failed sample of [`check_monotone_v`].
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneFailure {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub d_dv: f64,
    pub finite_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonotoneVerdict {
    pub checked: usize,
    pub failures: Vec<MonotoneFailure>,
}

impl MonotoneVerdict {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative agreement required between `d_dv` and its central difference.
pub const DERIVATIVE_RTOL: f64 = 1e-6;

/// Checks `∂f/∂v > 0` at every sample and cross-checks the analytic
/// derivative against a central difference with step `1e-6 |v|`. The cross
/// check is skipped at `v = 0`, where the gas law has an infinite slope.
pub fn check_monotone_v(m: &dyn Dissipation, samples: &[(f64, f64, f64)]) -> MonotoneVerdict {
    let mut verdict = MonotoneVerdict::default();
    for &(t, u, v) in samples {
        verdict.checked += 1;
        let d = m.d_dv(t, u, v);
        let fd = (v != 0.0).then(|| {
            let h = 1e-6 * v.abs();
            (m.eval(t, u, v + h) - m.eval(t, u, v - h)) / (2.0 * h)
        });
        let agrees = match fd {
            Some(fd) if d.is_finite() => {
                (d - fd).abs() <= DERIVATIVE_RTOL * d.abs().max(fd.abs()) + 1e-300
            }
            _ => true,
        };
        if !(d > 0.0) || !agrees || fd.is_some_and(|fd| !(fd > 0.0)) {
            verdict.failures.push(MonotoneFailure {
                t,
                u,
                v,
                d_dv: d,
                finite_difference: fd,
            });
        }
    }
    verdict
}
