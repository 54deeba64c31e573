//! Simulation and verification of dissipative flows on pipe networks.
//!
//! The crate models gas transport on a metric graph: pipes carry mass flow
//! driven by density gradients through a dissipation law that is strictly
//! increasing in the gradient. On top of steady and transient solvers it
//! checks the order-preservation properties such networks enjoy: ordered
//! boundary inputs give ordered densities everywhere, and the first place an
//! ordering can fail is a network node whose own input ordering failed.
//!
//! | module | contents |
//! |---|---|
//! | [`netgraph`] | graphs, refinement, scenarios |
//! | [`physics`] | dissipation laws and their potential form |
//! | [`steady`] | steady-state solver, order and uniqueness checks |
//! | [`transient`] | lumped nodal ODE and the stiff integrator |
//! | [`monotone`] | trajectory ordering, crossing detection, Metzler checks |
//! | [`robust`] | envelope certificates and the nodal monitoring policy |
//! | [`io`] | TOML and CSV file formats |
//! | [`fixtures`] | the single-pipe and five-node reference cases |
//!
//! ```
//! use monoflow::{fixtures, physics::ModelSet, steady};
//!
//! let g = fixtures::single_pipe_graph();
//! let b = steady::SteadyBoundary::new(&g, vec![0.0, -120.0], vec![fixtures::INLET_DENSITY, 0.0]);
//! let s = steady::solve_steady(&g, &ModelSet::ideal_gas(&g), &b).unwrap();
//! assert!((s.flows[0] - 120.0).abs() < 1e-6);
//! assert!(s.densities[1] < s.densities[0]);
//! ```

pub mod fixtures;
pub mod io;
pub mod monotone;
pub mod netgraph;
pub mod physics;
pub mod robust;
pub mod steady;
pub mod timefn;
pub mod transient;

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/network.md")]
    pub mod network {}
    #[doc = include_str!("../../../book/src/physics.md")]
    pub mod physics {}
    #[doc = include_str!("../../../book/src/steady.md")]
    pub mod steady {}
    #[doc = include_str!("../../../book/src/transient.md")]
    pub mod transient {}
    #[doc = include_str!("../../../book/src/monotone.md")]
    pub mod monotone {}
    #[doc = include_str!("../../../book/src/robust.md")]
    pub mod robust {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}

/// Any error raised by the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] netgraph::GraphError),
    #[error(transparent)]
    Physics(#[from] physics::PhysicsError),
    #[error(transparent)]
    Steady(#[from] steady::SteadyError),
    #[error(transparent)]
    Transient(#[from] transient::TransientError),
    #[error(transparent)]
    Monotone(#[from] monotone::MonotoneError),
    #[error(transparent)]
    Robust(#[from] robust::RobustError),
    #[error(transparent)]
    Io(#[from] io::IoError),
}

impl Error {
    /// Stable machine-readable category.
    pub fn category(&self) -> &'static str {
        use steady::SteadyError as S;
        use transient::TransientError as T;
        match self {
            Error::Graph(_) | Error::Transient(T::Graph(_)) | Error::Steady(S::Graph(_)) => "invalid-input",
            Error::Physics(_) | Error::Steady(S::Physics(_)) | Error::Transient(T::Physics(_)) => "physics",
            Error::Steady(S::HypothesisViolated(_)) => "hypothesis",
            Error::Steady(_) | Error::Transient(T::Steady(_)) => "steady-solver",
            Error::Transient(T::DensityCavitation { .. }) => "physics",
            Error::Transient(T::InvalidOption(_)) => "invalid-input",
            Error::Transient(_) => "integration",
            Error::Monotone(e) => e.category(),
            Error::Robust(e) => e.category(),
            Error::Io(e) => e.category(),
        }
    }
}
