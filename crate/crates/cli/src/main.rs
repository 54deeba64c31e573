//! `monoflow` command line.
//!
//! Exit status: 0 when the check passes (ordered, clean, feasible,
//! sandwiched), 2 when it fails, 1 on any error. Errors are printed to stderr
//! as `error[<category>]: <message>`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use monoflow::io::{self, CertificateSummary, JacobianSummary, OrderSummary, PolicySummary, RunSummary, SteadyReport};
use monoflow::monotone::{self, VerifyOptions, JACOBIAN_RTOL};
use monoflow::netgraph::{MetricGraph, Scenario};
use monoflow::physics::ModelSet;
use monoflow::robust::{self, NmpOptions};
use monoflow::steady::{self, SteadyBoundary};
use monoflow::transient::{self, Stencil};
use monoflow::Error;

#[derive(Parser)]
#[command(name = "monoflow", version, about = "Dissipative network flow simulation and order checks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Network file (TOML).
    #[arg(long, global = true)]
    network: Option<PathBuf>,
    /// Scenario file (TOML); repeat for commands taking two.
    #[arg(long = "scenario", global = true)]
    scenarios: Vec<PathBuf>,
    /// Refinement length, m. Defaults to a quarter of the shortest pipe.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Relative integration tolerance.
    #[arg(long, global = true)]
    rtol: Option<f64>,
    /// Absolute integration tolerance, kg/m³.
    #[arg(long, global = true)]
    atol: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for sampled checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output spacing, s. Defaults to 1/200 of the horizon.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Use the node-local flux stencil instead of the conservative one.
    #[arg(long, global = true)]
    node_local: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Steady state of the scenario's boundary data.
    Steady {
        /// Time at which boundary data is frozen, s.
        #[arg(long, default_value_t = 0.0)]
        time: f64,
    },
    /// Transient run: trajectory CSV and a run summary.
    Simulate,
    /// Simulates two scenarios and checks that the first dominates the second.
    VerifyMonotone {
        /// Order tolerance, kg/m³. Defaults to ten times atol.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Sign checks on the system Jacobian at random states.
    JacobianCheck {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// State range as fractions of the largest slack density.
        #[arg(long, default_value_t = 0.3)]
        low: f64,
        #[arg(long, default_value_t = 1.5)]
        high: f64,
    },
    /// Envelope feasibility certificate for a base scenario.
    RobustCheck {
        #[arg(long)]
        envelope: PathBuf,
    },
    /// Runs a realized scenario under the nodal monitoring policy.
    Nmp {
        #[arg(long)]
        envelope: PathBuf,
        /// Run without any policy action.
        #[arg(long)]
        no_policy: bool,
    },
}

enum Verdict {
    Pass,
    Fail,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(1)
        }
    }
}

fn usage(msg: &str) -> Error {
    Error::Io(io::IoError::Parse {
        what: "command line".to_string(),
        reason: msg.to_string(),
    })
}

impl Global {
    fn network(&self) -> Result<MetricGraph, Error> {
        let p = self.network.as_deref().ok_or_else(|| usage("--network is required"))?;
        Ok(io::read_network(p)?)
    }

    fn scenarios(&self, n: usize) -> Result<Vec<Scenario>, Error> {
        if self.scenarios.len() != n {
            return Err(usage(&format!(
                "expected {n} --scenario file(s), got {}",
                self.scenarios.len()
            )));
        }
        Ok(self
            .scenarios
            .iter()
            .map(|p| io::read_scenario(p))
            .collect::<Result<_, _>>()?)
    }

    fn verify_options(&self, g: &MetricGraph) -> Result<VerifyOptions, Error> {
        let shortest = g.edges().iter().map(|e| e.length).fold(f64::INFINITY, f64::min);
        let mut o = VerifyOptions::new(self.epsilon.unwrap_or(shortest / 4.0));
        if let Some(r) = self.rtol {
            o.integrator.rtol = r;
        }
        if let Some(a) = self.atol {
            o.integrator.atol = a;
        }
        for (name, x) in [("epsilon", o.epsilon), ("rtol", o.integrator.rtol), ("atol", o.integrator.atol)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(usage(&format!("--{name} must be positive")));
            }
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(usage("--dt must be positive"));
            }
        }
        o.output_dt = self.dt;
        if self.node_local {
            o.system.stencil = Stencil::NodeLocal;
        }
        Ok(o)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, Error> {
        let p = self.out.join(name);
        io::write_text(&p, text)?;
        Ok(p)
    }
}

fn report(path: &Path, text: &str) {
    // A closed stdout (e.g. piped into `head`) is not an error; the files are written.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|_| writeln!(out, "# written to {}", path.display()));
}

fn run(cli: &Cli) -> Result<Verdict, Error> {
    let gl = &cli.global;
    let g = gl.network()?;
    let models = ModelSet::ideal_gas(&g);
    match &cli.command {
        Command::Steady { time } => {
            let [s] = <[Scenario; 1]>::try_from(gl.scenarios(1)?).expect("one scenario");
            s.validate(&g)?;
            let b = SteadyBoundary::from_scenario(&g, &s, *time)?;
            let st = steady::solve_steady(&g, &models, &b)?;
            let text = io::to_toml(&SteadyReport::new(&g, &st), "steady report")?;
            report(&gl.write("steady.toml", &text)?, &text);
            Ok(Verdict::Pass)
        }
        Command::Simulate => {
            let [s] = <[Scenario; 1]>::try_from(gl.scenarios(1)?).expect("one scenario");
            let o = gl.verify_options(&g)?;
            let sys = transient::assemble_parent(&g, o.epsilon, &s, &models, o.system)?;
            let traj = transient::integrate(&sys, &o.outputs(s.horizon), &o.integrator)?;
            gl.write("trajectory.csv", &io::trajectory_table(&traj).to_csv())?;
            let text = io::to_toml(&RunSummary::new(&traj), "run summary")?;
            report(&gl.write("summary.toml", &text)?, &text);
            Ok(Verdict::Pass)
        }
        Command::VerifyMonotone { tol } => {
            let [s1, s2] = <[Scenario; 2]>::try_from(gl.scenarios(2)?).expect("two scenarios");
            let mut o = gl.verify_options(&g)?;
            o.tol_order = *tol;
            if let Err(e) = monotone::check_hypotheses(&g, &s1, &s2, o.hypothesis_samples) {
                if e.category() != "hypothesis" {
                    return Err(e.into());
                }
                eprintln!("note: inputs are not ordered ({e}); reporting where the states cross");
            }
            let (t1, t2) = monotone::simulate_pair(&g, &models, &s1, &s2, &o)?;
            let r = monotone::check_order(&t1, &t2, o.tol_order())?;
            gl.write("margins.csv", &io::margin_table(&r).to_csv())?;
            let text = io::to_toml(&OrderSummary::new(&r), "order report")?;
            report(&gl.write("order.toml", &text)?, &text);
            Ok(if r.ordered { Verdict::Pass } else { Verdict::Fail })
        }
        Command::JacobianCheck { samples, low, high } => {
            let [s] = <[Scenario; 1]>::try_from(gl.scenarios(1)?).expect("one scenario");
            let o = gl.verify_options(&g)?;
            let sys = transient::assemble_parent(&g, o.epsilon, &s, &models, o.system)?;
            let scale = s
                .slack_densities
                .values()
                .map(|f| f.value(0.0))
                .fold(0.0, f64::max);
            if !(scale > 0.0 && *low > 0.0 && high > low) {
                return Err(usage("need a positive slack density and 0 < --low < --high"));
            }
            let states = monotone::random_states(&sys, *samples, low * scale, high * scale, gl.seed);
            let r = monotone::jacobian_check(&sys, &states, JACOBIAN_RTOL)?;
            let text = io::to_toml(&JacobianSummary::new(&r), "jacobian report")?;
            report(&gl.write("jacobian.toml", &text)?, &text);
            Ok(if r.is_clean() { Verdict::Pass } else { Verdict::Fail })
        }
        Command::RobustCheck { envelope } => {
            let [s] = <[Scenario; 1]>::try_from(gl.scenarios(1)?).expect("one scenario");
            let env = io::read_envelope(envelope)?;
            let o = gl.verify_options(&g)?;
            let c = robust::certify_envelope(&g, &models, &s, &env, &o)?;
            gl.write("upper.csv", &io::trajectory_table(&c.runs.upper).to_csv())?;
            gl.write("lower.csv", &io::trajectory_table(&c.runs.lower).to_csv())?;
            let text = io::to_toml(&CertificateSummary::new(&c), "certificate")?;
            report(&gl.write("certificate.toml", &text)?, &text);
            Ok(if c.feasible { Verdict::Pass } else { Verdict::Fail })
        }
        Command::Nmp { envelope, no_policy } => {
            let [s] = <[Scenario; 1]>::try_from(gl.scenarios(1)?).expect("one scenario");
            let env = io::read_envelope(envelope)?;
            let o = NmpOptions {
                verify: gl.verify_options(&g)?,
                enabled: !no_policy,
            };
            let trace = robust::run_nmp(&g, &models, &env, &s, &o)?;
            let tol = o.verify.tol_order();
            let sandwich = match robust::verify_corollary1(&trace, tol) {
                Ok(r) => r,
                Err(robust::RobustError::SandwichViolated { .. }) => robust::SandwichReport {
                    upper_margin: monotone::check_order(&trace.upper, &trace.trajectory, tol)?.worst_margin,
                    lower_margin: monotone::check_order(&trace.trajectory, &trace.lower, tol)?.worst_margin,
                },
                Err(e) => return Err(e.into()),
            };
            gl.write("trace.csv", &io::trajectory_table(&trace.trajectory).to_csv())?;
            gl.write("effective.toml", &io::scenario_to_toml(&trace.effective)?)?;
            let summary = PolicySummary::new(&trace, sandwich, tol);
            let text = io::to_toml(&summary, "policy trace")?;
            report(&gl.write("policy.toml", &text)?, &text);
            Ok(if summary.sandwiched { Verdict::Pass } else { Verdict::Fail })
        }
    }
}
