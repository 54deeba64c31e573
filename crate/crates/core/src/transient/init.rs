use nalgebra::{DMatrix, DVector};

use super::{OdeSystem, TransientError};
use crate::netgraph::restrict_scenario;
use crate::steady::{edge_density_at, solve_steady, SteadyBoundary, SteadyError};

/// Steady initial state of the discrete system at `t = 0`.
///
/// Solves the parent network, fills each refined edge from its steady
/// profile, then polishes with Newton on the discrete balance so the returned
/// state is a fixed point of the chosen stencil (actuator rates excluded).
pub fn steady_init(sys: &OdeSystem) -> Result<Vec<f64>, TransientError> {
    let rg = &sys.rg;
    let parent = &rg.parent;
    let models = sys.models.parent(rg);
    let restricted = restrict_scenario(&sys.scenario, rg);
    let b = SteadyBoundary::from_scenario(parent, &restricted, 0.0)?;
    let st = solve_steady(parent, &models, &b)?;
    let g = sys.graph();
    let mut rho = vec![0.0; g.n_vertices()];
    rho[..parent.n_vertices()].copy_from_slice(&st.densities);
    for (p, chain) in rg.chains.iter().enumerate() {
        let (a, _) = parent.ends(p);
        let rin = b.ratios[p].0 * st.densities[a];
        let n = chain.len() - 1;
        for (k, &v) in chain.iter().enumerate().take(n).skip(1) {
            let x = parent.edges()[p].length * k as f64 / n as f64;
            rho[v] = edge_density_at(models.get(p), 0.0, rin, st.flows[p], x)?;
        }
    }
    let y: Vec<f64> = sys.free_vertices().iter().map(|&v| rho[v]).collect();
    polish(sys, y)
}

fn polish(sys: &OdeSystem, mut y: Vec<f64>) -> Result<Vec<f64>, TransientError> {
    let n = y.len();
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let amax = |f: &[f64]| f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-11 * scale;
    let mut f = vec![0.0; n];
    sys.balance_rhs(0.0, &y, &mut f)?;
    let mut jac = DMatrix::zeros(n, n);
    for it in 0..50 {
        let f0 = amax(&f);
        if f0 <= tol {
            break;
        }
        // The time term of the analytic Jacobian vanishes for constant ratios
        // and only slows convergence otherwise.
        jac.fill(0.0);
        sys.jacobian_into(0.0, &y, &mut jac, 0);
        let dx = jac
            .clone()
            .lu()
            .solve(&-DVector::from_column_slice(&f))
            .ok_or(TransientError::Steady(SteadyError::SingularJacobian))?;
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = (0..n).map(|i| y[i] + alpha * dx[i]).collect();
            let mut ft = vec![0.0; n];
            if trial.iter().all(|v| *v > 0.0)
                && sys.balance_rhs(0.0, &trial, &mut ft).is_ok()
                && amax(&ft) < f0
            {
                y = trial;
                f = ft;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-6 {
                return Err(TransientError::Steady(SteadyError::NonConvergence {
                    iterations: it,
                    residual: f0,
                }));
            }
        }
    }
    let r = amax(&f);
    if r > tol {
        return Err(TransientError::Steady(SteadyError::NonConvergence {
            iterations: 50,
            residual: r,
        }));
    }
    Ok(y)
}
