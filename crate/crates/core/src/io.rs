//! File formats.
//!
//! Networks, scenarios, envelopes and run reports are TOML. Time series are
//! CSV with a header row of `name [unit]` cells. Floats are written in Rust's
//! shortest round-trip form, so reading a written file gives back the same
//! values bit for bit.
//!
//! A network file:
//!
//! ```toml
//! [gas]
//! gas_constant = 473.92
//! temperature = 288.706
//!
//! [[vertex]]
//! id = "1"
//! kind = "slack"
//!
//! [[vertex]]
//! id = "2"
//! kind = "flow"
//!
//! [[edge]]
//! tail = "1"
//! head = "2"
//! length = 20000.0
//! diameter = 0.9144
//! friction = 0.01
//! ```
//!
//! A scenario file (time functions are tagged by `kind`):
//!
//! ```toml
//! horizon = 86400.0
//!
//! [initial]
//! kind = "steady"
//!
//! [injections."2"]
//! kind = "piecewise"
//! points = [[0.0, 0.0], [3600.0, -120.0]]
//!
//! [slack_densities."1"]
//! kind = "constant"
//! value = 47.5
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::monotone::{JacobianReport, OrderReport};
use crate::netgraph::{GraphSpec, MetricGraph, Scenario};
use crate::robust::{Certificate, Envelope, PolicyTrace, SandwichReport};
use crate::steady::SteadyState;
use crate::transient::Trajectory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IoError {
    #[error("cannot access {path}: {reason}")]
    File { path: String, reason: String },
    #[error("parse error in {what}: {reason}")]
    Parse { what: String, reason: String },
    #[error("cannot encode {what}: {reason}")]
    Encode { what: String, reason: String },
}

impl IoError {
    pub fn category(&self) -> &'static str {
        match self {
            IoError::File { .. } => "io",
            IoError::Parse { .. } => "parse",
            IoError::Encode { .. } => "io",
        }
    }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::File {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let err = |e: std::io::Error| IoError::File {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    fs::write(path, text).map_err(err)
}

/// Parses any TOML document; `what` names it in errors.
pub fn from_toml<T: DeserializeOwned>(text: &str, what: &str) -> Result<T, IoError> {
    toml::from_str(text).map_err(|e| IoError::Parse {
        what: what.to_string(),
        reason: e.to_string(),
    })
}

pub fn to_toml<T: Serialize>(value: &T, what: &str) -> Result<String, IoError> {
    toml::to_string(value).map_err(|e| IoError::Encode {
        what: what.to_string(),
        reason: e.to_string(),
    })
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    from_toml(&read_text(path)?, &path.display().to_string())
}

/// Reads and validates a network file.
pub fn read_network(path: &Path) -> Result<MetricGraph, IoError> {
    let spec: GraphSpec = read_toml(path)?;
    crate::netgraph::build_graph(spec).map_err(|e| IoError::Parse {
        what: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn network_to_toml(g: &MetricGraph) -> Result<String, IoError> {
    to_toml(&g.spec(), "network")
}

pub fn read_scenario(path: &Path) -> Result<Scenario, IoError> {
    read_toml(path)
}

pub fn scenario_to_toml(s: &Scenario) -> Result<String, IoError> {
    to_toml(s, "scenario")
}

pub fn read_envelope(path: &Path) -> Result<Envelope, IoError> {
    read_toml(path)
}

pub fn envelope_to_toml(env: &Envelope) -> Result<String, IoError> {
    to_toml(env, "envelope")
}

/// A numeric table with one `name [unit]` header cell per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<Column>,
    /// `[row][column]`
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub unit: String,
}

impl Column {
    fn new(name: impl Into<String>, unit: &str) -> Self {
        Column {
            name: name.into(),
            unit: unit.to_string(),
        }
    }
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn series(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column(name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.columns.iter().map(|c| format!("{} [{}]", c.name, c.unit)).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            for (k, x) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write!(out, "{x:?}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Table, IoError> {
        let bad = |reason: String| IoError::Parse {
            what: "csv".to_string(),
            reason,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".to_string()))?;
        let columns = header
            .split(',')
            .map(|cell| {
                let cell = cell.trim();
                match cell.strip_suffix(']').and_then(|c| c.rsplit_once(" [")) {
                    Some((name, unit)) => Ok(Column::new(name, unit)),
                    None => Err(bad(format!("header cell {cell:?} lacks a [unit]"))),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("row {}: {e}", n + 1)))?;
            if row.len() != columns.len() {
                return Err(bad(format!("row {} has {} cells, expected {}", n + 1, row.len(), columns.len())));
            }
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }
}

pub fn read_table(path: &Path) -> Result<Table, IoError> {
    Table::from_csv(&read_text(path)?)
}

/// Time, densities, pressures (`p = c²ρ`), then mean edge flows.
pub fn trajectory_table(traj: &Trajectory) -> Table {
    let mut columns = vec![Column::new("t", "s")];
    columns.extend(traj.vertex_ids.iter().map(|v| Column::new(format!("rho:{v}"), "kg/m3")));
    columns.extend(traj.vertex_ids.iter().map(|v| Column::new(format!("p:{v}"), "Pa")));
    columns.extend(traj.edge_ids.iter().map(|e| Column::new(format!("flow:{e}"), "kg/s")));
    let rows = (0..traj.len())
        .map(|k| {
            let mut row = vec![traj.times[k]];
            row.extend(&traj.densities[k]);
            row.extend(traj.densities[k].iter().map(|r| traj.wave_speed_sq * r));
            row.extend((0..traj.edge_ids.len()).map(|e| traj.mean_flow(k, e)));
            row
        })
        .collect();
    Table { columns, rows }
}

/// Time, then the order margin `ρ¹ − ρ²` per refined vertex.
pub fn margin_table(report: &OrderReport) -> Table {
    let mut columns = vec![Column::new("t", "s")];
    columns.extend(report.vertex_ids.iter().map(|v| Column::new(format!("margin:{v}"), "kg/m3")));
    let rows = report
        .times
        .iter()
        .zip(&report.margins)
        .map(|(t, m)| std::iter::once(*t).chain(m.iter().copied()).collect())
        .collect();
    Table { columns, rows }
}

/// Steady solution as written by `steady`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyReport {
    pub iterations: usize,
    pub balance_residual: f64,
    pub edge_residual: f64,
    pub vertex: Vec<SteadyVertex>,
    pub edge: Vec<SteadyEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyVertex {
    pub id: String,
    /// kg/m³
    pub density: f64,
    /// Pa
    pub pressure: f64,
    /// kg/s
    pub injection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyEdge {
    pub tail: String,
    pub head: String,
    /// kg/s
    pub flow: f64,
}

impl SteadyReport {
    pub fn new(g: &MetricGraph, s: &SteadyState) -> Self {
        let gas = g.gas();
        SteadyReport {
            iterations: s.iterations,
            balance_residual: s.balance_residual,
            edge_residual: s.edge_residual,
            vertex: (0..g.n_vertices())
                .map(|v| SteadyVertex {
                    id: g.vertex_id(v).to_string(),
                    density: s.densities[v],
                    pressure: gas.pressure(s.densities[v]),
                    injection: s.injections[v],
                })
                .collect(),
            edge: g
                .edges()
                .iter()
                .zip(&s.flows)
                .map(|(e, &flow)| SteadyEdge {
                    tail: e.tail.clone(),
                    head: e.head.clone(),
                    flow,
                })
                .collect(),
        }
    }
}

/// Summary of a `simulate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// m
    pub epsilon: f64,
    pub horizon: f64,
    pub refined_vertices: usize,
    pub outputs: usize,
    pub steps: usize,
    pub rejected_steps: usize,
    pub newton_failures: usize,
    pub jacobians: usize,
    /// kg
    pub mass_defect: f64,
    /// kg
    pub throughput: f64,
    pub relative_mass_defect: f64,
    /// kg/m³
    pub min_density: f64,
    /// kg/m³
    pub max_density: f64,
}

impl RunSummary {
    pub fn new(traj: &Trajectory) -> Self {
        let audit = traj.mass_audit();
        RunSummary {
            epsilon: traj.epsilon,
            horizon: traj.times.last().copied().unwrap_or(0.0),
            refined_vertices: traj.vertex_ids.len(),
            outputs: traj.len(),
            steps: traj.stats.steps,
            rejected_steps: traj.stats.rejected,
            newton_failures: traj.stats.newton_failures,
            jacobians: traj.stats.jacobians,
            mass_defect: audit.max_defect,
            throughput: audit.throughput,
            relative_mass_defect: audit.relative(),
            min_density: traj.min_density(),
            max_density: traj.max_density(),
        }
    }
}

/// Summary of an ordering check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSummary {
    pub ordered: bool,
    /// kg/m³
    pub tolerance: f64,
    /// kg/m³
    pub worst_margin: f64,
    /// s
    pub worst_time: f64,
    pub worst_vertex: String,
    /// kg/m³
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_crossing: Option<CrossingSummary>,
    #[serde(default)]
    pub crossing: Vec<CrossingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingSummary {
    /// s
    pub t: f64,
    pub vertex: String,
    /// Parent node id, or the parent edge key for interior vertices.
    pub location: String,
    pub at_node: bool,
}

impl OrderSummary {
    pub fn new(r: &OrderReport) -> Self {
        let summary = |t: f64, v: usize| CrossingSummary {
            t,
            vertex: r.vertex_ids[v].clone(),
            location: r.locations[v].parent_id().to_string(),
            at_node: r.locations[v].is_node(),
        };
        let mut crossing: Vec<CrossingSummary> = r
            .crossing_times
            .iter()
            .enumerate()
            .filter(|(v, _)| r.locations[*v].is_node())
            .filter_map(|(v, t)| t.map(|t| summary(t, v)))
            .collect();
        crossing.sort_by(|a, b| a.t.total_cmp(&b.t));
        OrderSummary {
            ordered: r.ordered,
            tolerance: r.tolerance,
            worst_margin: r.worst_margin,
            worst_time: r.worst_time,
            worst_vertex: r.worst_vertex.clone(),
            scale: r.scale,
            first_crossing: r.first_crossing.as_ref().map(|c| summary(c.t_c, c.vertex_index)),
            crossing,
        }
    }
}

/// Summary of a Jacobian sign check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianSummary {
    pub clean: bool,
    pub samples: usize,
    pub metzler_violations: usize,
    pub input_violations: usize,
    /// Smallest off-diagonal state-Jacobian entry seen, 1/s.
    pub min_offdiagonal: f64,
}

impl JacobianSummary {
    pub fn new(r: &JacobianReport) -> Self {
        JacobianSummary {
            clean: r.is_clean(),
            samples: r.samples,
            metzler_violations: r.metzler_violations.len(),
            input_violations: r.input_violations.len(),
            min_offdiagonal: r.min_offdiagonal,
        }
    }
}

/// Summary of an envelope certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub feasible: bool,
    /// kg/m³
    pub min_density: f64,
    /// kg/m³
    pub max_density: f64,
    #[serde(default)]
    pub violation: Vec<ViolationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationSummary {
    pub t: f64,
    pub vertex: String,
    pub density: f64,
    pub bound: f64,
    pub side: crate::robust::Side,
}

impl CertificateSummary {
    pub fn new(c: &Certificate) -> Self {
        CertificateSummary {
            feasible: c.feasible,
            min_density: c.min_density,
            max_density: c.max_density,
            violation: c
                .violations
                .iter()
                .map(|v| ViolationSummary {
                    t: v.t,
                    vertex: v.vertex.clone(),
                    density: v.density,
                    bound: v.bound,
                    side: v.side,
                })
                .collect(),
        }
    }
}

/// Summary of a policy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub sandwiched: bool,
    /// min of `ρ¹ − ρ`, kg/m³.
    pub upper_margin: f64,
    /// min of `ρ − ρ²`, kg/m³.
    pub lower_margin: f64,
    #[serde(default)]
    pub action: Vec<ActionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSummary {
    pub t: f64,
    pub node: String,
    pub action: crate::robust::PolicyAction,
}

impl PolicySummary {
    pub fn new(trace: &PolicyTrace, sandwich: SandwichReport, tol: f64) -> Self {
        PolicySummary {
            sandwiched: sandwich.upper_margin >= -tol && sandwich.lower_margin >= -tol,
            upper_margin: sandwich.upper_margin,
            lower_margin: sandwich.lower_margin,
            action: trace
                .actions
                .iter()
                .map(|a| ActionSummary {
                    t: a.t,
                    node: a.node.clone(),
                    action: a.action,
                })
                .collect(),
        }
    }
}
