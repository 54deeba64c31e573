use super::integrator::{hermite, IntegratorStats, JointSolution};
use super::{OdeSystem, TransientError};
use crate::netgraph::Location;

/// Sampled solution on a refined graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// s
    pub times: Vec<f64>,
    /// Refined vertex ids, column order of `densities`.
    pub vertex_ids: Vec<String>,
    /// Parent-graph location of each refined vertex.
    pub locations: Vec<Location>,
    /// Refined edge ids (`tail->head`), column order of the flow tables.
    pub edge_ids: Vec<String>,
    /// kg/m³, `[time][vertex]`.
    pub densities: Vec<Vec<f64>>,
    /// kg/(m³ s), `[time][vertex]`.
    pub rates: Vec<Vec<f64>>,
    /// kg/s leaving the tail into each edge, `[time][edge]`.
    pub flows_tail: Vec<Vec<f64>>,
    /// kg/s leaving each edge into its head, `[time][edge]`.
    pub flows_head: Vec<Vec<f64>>,
    /// Slack vertex ids, column order of `slack_injections`.
    pub slack_ids: Vec<String>,
    /// Realized slack injections including storage, kg/s, `[time][slack]`.
    pub slack_injections: Vec<Vec<f64>>,
    /// Total lumped mass, kg.
    pub mass: Vec<f64>,
    /// Cumulative mass supplied through every boundary and source term, kg.
    pub supplied: Vec<f64>,
    /// Cumulative `∫ Σ |boundary flows| dt`, kg.
    pub throughput: Vec<f64>,
    pub epsilon: f64,
    /// c², for pressure columns.
    pub wave_speed_sq: f64,
    pub stats: IntegratorStats,
}

/// Mass ledger summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassAudit {
    /// max over outputs of |ΔM − supplied|, kg.
    pub max_defect: f64,
    /// Total boundary throughput over the horizon, kg.
    pub throughput: f64,
}

impl MassAudit {
    pub fn relative(&self) -> f64 {
        self.max_defect / self.throughput.max(f64::MIN_POSITIVE)
    }
}

/// `0, dt, 2dt, …` up to and including `horizon`, without `0`.
pub fn output_grid(horizon: f64, dt: f64) -> Vec<f64> {
    let n = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
    (1..=n).map(|k| (k as f64 * dt).min(horizon)).collect()
}

impl Trajectory {
    pub(crate) fn from_joint(sys: &OdeSystem, sol: &JointSolution, member: usize) -> Result<Self, TransientError> {
        let g = sys.graph();
        let range = sol.ranges[member].clone();
        let qr = sol.quad_ranges[member].clone();
        let slack = g.slack_vertices();
        let mut out = Trajectory {
            times: sol.times.clone(),
            vertex_ids: g.vertices().iter().map(|v| v.id.clone()).collect(),
            locations: (0..g.n_vertices()).map(|v| sys.rg.location(v)).collect(),
            edge_ids: g.edges().iter().map(|e| e.key()).collect(),
            densities: Vec::new(),
            rates: Vec::new(),
            flows_tail: Vec::new(),
            flows_head: Vec::new(),
            slack_ids: slack.iter().map(|&v| g.vertex_id(v).to_string()).collect(),
            slack_injections: Vec::new(),
            mass: Vec::new(),
            supplied: Vec::new(),
            throughput: Vec::new(),
            epsilon: sys.rg.epsilon,
            wave_speed_sq: g.gas().wave_speed_sq(),
            stats: sol.stats,
        };
        let mut slack_mass0 = 0.0;
        for (k, &t) in sol.times.iter().enumerate() {
            let y = &sol.states[k][range.clone()];
            let rho = sys.full_state(t, y);
            let fl = sys.fluxes(t, &rho)?;
            let outflows = sys.slack_outflows(t, y)?;
            let slack_mass: f64 = slack.iter().map(|&v| sys.vertex_mass(t, v, rho[v])).sum();
            if k == 0 {
                slack_mass0 = slack_mass;
            }
            let q = &sol.quad[k][qr.clone()];
            // Free injections + source + slack outflows + slack storage change.
            let supplied = q[0] + q[1] + q[3..].iter().sum::<f64>() + (slack_mass - slack_mass0);
            out.slack_injections.push(
                slack
                    .iter()
                    .zip(&outflows)
                    .map(|(&v, o)| o + sys.slack_storage_rate(t, v))
                    .collect(),
            );
            out.mass.push(sys.total_mass(t, &rho));
            out.supplied.push(supplied);
            out.throughput.push(q[2]);
            out.rates.push(sys.full_rates(t, &sol.rates[k][range.clone()]));
            out.densities.push(rho);
            out.flows_tail.push(fl.tail);
            out.flows_head.push(fl.head);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.vertex_ids.iter().position(|v| v == id)
    }

    /// Density series of one vertex.
    pub fn series(&self, v: usize) -> Vec<f64> {
        self.densities.iter().map(|row| row[v]).collect()
    }

    /// Mean of tail and head flow of edge `e` at output `k`.
    pub fn mean_flow(&self, k: usize, e: usize) -> f64 {
        0.5 * (self.flows_tail[k][e] + self.flows_head[k][e])
    }

    /// Hermite-interpolated density of vertex `v` at `t`.
    pub fn density_at(&self, v: usize, t: f64) -> f64 {
        let k = self.interval(t);
        hermite(
            self.times[k],
            self.densities[k][v],
            self.rates[k][v],
            self.times[k + 1],
            self.densities[k + 1][v],
            self.rates[k + 1][v],
            t,
        )
    }

    /// Index `k` with `times[k] ≤ t ≤ times[k+1]`.
    pub(crate) fn interval(&self, t: f64) -> usize {
        let n = self.times.len();
        if n < 2 {
            return 0;
        }
        self.times.partition_point(|&s| s <= t).clamp(1, n - 1) - 1
    }

    pub fn min_density(&self) -> f64 {
        self.densities.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_density(&self) -> f64 {
        self.densities.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mass_audit(&self) -> MassAudit {
        let m0 = self.mass[0];
        let max_defect = self
            .mass
            .iter()
            .zip(&self.supplied)
            .map(|(m, s)| (m - m0 - s).abs())
            .fold(0.0, f64::max);
        MassAudit {
            max_defect,
            throughput: self.throughput.last().copied().unwrap_or(0.0),
        }
    }
}
