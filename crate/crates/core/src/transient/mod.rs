//! Lumped-element transient model on a refined graph and its time integration.
//!
//! Every refined vertex `j` holds half of each adjacent segment. With
//! half-segment volumes `V_e = S_e L̂_e / 2` and edge-end densities
//! `α_e(t, ρ_j)`, the lumped mass balance reads
//!
//! ```text
//! Σ_e V_e (∂_ρ α_e ρ̇_j + ∂_t α_e) = Σ_in φ_head − Σ_out φ_tail + q_j (+ ε_pert Σ_e V_e)
//! ```
//!
//! With equal segments and identity actuators this is the classical
//! `ε̂ S ρ̇_j / 2 = …` balance. The flux stencil is chosen by [`Stencil`].

mod init;
mod integrator;
mod system;
mod trajectory;

pub use init::steady_init;
pub use integrator::{hermite, integrate_joint, IntegratorOptions, IntegratorStats, JointSolution};
pub use system::{assemble, assemble_parent, Fluxes, OdeSystem, Stencil, SystemOptions};
pub use trajectory::{output_grid, MassAudit, Trajectory};

use crate::netgraph::GraphError;
use crate::physics::PhysicsError;
use crate::steady::SteadyError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransientError {
    #[error("scenario is not lifted to the refined graph: {0}")]
    UnliftedScenario(String),
    #[error("expected {expected} dissipation models, found {found}")]
    MissingModel { expected: usize, found: usize },
    #[error("integration failed at t = {t} s (h = {h:e} s): {reason}")]
    StepFailure { t: f64, h: f64, reason: String },
    #[error("density left the positive orthant at t = {t} s, vertex {vertex}: {density}")]
    DensityCavitation { t: f64, vertex: String, density: f64 },
    #[error("iteration matrix is singular")]
    SingularIteration,
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Steady(#[from] SteadyError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// Integrates one system from its scenario's initial state over `outputs`
/// (times in `(0, horizon]`).
pub fn integrate(sys: &OdeSystem, outputs: &[f64], opts: &IntegratorOptions) -> Result<Trajectory, TransientError> {
    let y0 = sys.initial_state()?;
    integrate_from(sys, &y0, outputs, opts)
}

/// Integrates one system from an explicit free-vertex state at `t = 0`.
pub fn integrate_from(
    sys: &OdeSystem,
    y0: &[f64],
    outputs: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory, TransientError> {
    let mut v = integrate_many(&[sys], &[y0.to_vec()], outputs, opts)?;
    Ok(v.remove(0))
}

/// Integrates several systems jointly with a shared step sequence.
pub fn integrate_many(
    systems: &[&OdeSystem],
    y0: &[Vec<f64>],
    outputs: &[f64],
    opts: &IntegratorOptions,
) -> Result<Vec<Trajectory>, TransientError> {
    let sol = integrate_joint(systems, y0, 0.0, outputs, opts)?;
    systems
        .iter()
        .enumerate()
        .map(|(k, s)| Trajectory::from_joint(s, &sol, k))
        .collect()
}
