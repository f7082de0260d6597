//! Command-line driver: scenario ingestion, the three run modes and artifact
//! emission.

pub mod bundled;
pub mod plots;
pub mod scenario;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::eigen::{eigenvalues, multiset_distance, sort_descending};
use crate::analysis::trace::{geometric, operating_scenario, spectrum_at};
use crate::analysis::{
    build_linear_voltage_system, check_stability_conditions, eigen_trace, pencil_roots,
    sufficiency_check, Gain, StabilityReport, SufficiencyReport,
};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::simengine::{final_configuration, integrate, Scenario};

pub use scenario::{parse_scenario, parse_scenario_str, ScenarioFile};

/// Environment variable overriding both integrator tolerances.
pub const TOL_ENV: &str = "DAPIGRID_TOL";

/// Randomized draws used by `analyze --seed`.
pub const SUFFICIENCY_DRAWS: usize = 1000;
pub const SUFFICIENCY_MAX_ATTEMPTS: usize = 200_000;

#[derive(Debug, Parser)]
#[command(
    name = "dapigrid",
    version,
    about = "Islanded microgrid droop/DAPI simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub mode: Mode,
}

#[derive(Debug, Subcommand)]
pub enum Mode {
    /// Integrate the scenario and write trajectory.csv and events.log.
    Simulate(Common),
    /// Check the stability conditions of the linear voltage system and write
    /// stability.json.
    Analyze(Common),
    /// Sweep one gain and write the closed-loop eigenvalues to trace.csv.
    Trace(TraceArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the randomized sufficiency check (analyze mode).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip SVG rendering.
    #[arg(long)]
    pub no_plots: bool,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub common: Common,
    /// k, kappa, beta or b.
    #[arg(long)]
    pub gain: Option<String>,
    #[arg(long)]
    pub from: Option<f64>,
    #[arg(long)]
    pub to: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
}

/// Load a scenario from a path, falling back to the bundled set by name.
pub fn load_scenario(spec: &str) -> Result<ScenarioFile> {
    let path = Path::new(spec);
    if path.exists() {
        return parse_scenario(path);
    }
    match bundled::load(spec) {
        Some(r) => r,
        None => Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no such file or bundled scenario",
            ),
        )),
    }
}

/// Apply the tolerance override from the environment, if set.
pub fn apply_tolerance_override(sc: &mut Scenario, value: Option<&str>) -> Result<()> {
    if let Some(v) = value {
        let tol: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::validation(TOL_ENV, format!("not a number: `{v}`")))?;
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::validation(TOL_ENV, "must be positive"));
        }
        sc.settings.rtol = tol;
        sc.settings.atol = tol;
    }
    Ok(())
}

fn prepare(common: &Common) -> Result<(ScenarioFile, Scenario)> {
    let file = load_scenario(&common.scenario)?;
    let mut sc = file.to_scenario()?;
    apply_tolerance_override(&mut sc, std::env::var(TOL_ENV).ok().as_deref())?;
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    Ok((file, sc))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report types always serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Stability report of the linear voltage system in force at the end of the
/// scenario.
pub fn final_stability(sc: &Scenario) -> Result<StabilityReport> {
    let cfg = final_configuration(sc)?;
    let sys = build_linear_voltage_system(cfg.grid(), cfg.controllers(), cfg.graph_b())?;
    check_stability_conditions(&sys)
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub scenario: String,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub condition_w1: bool,
    pub condition_w2: bool,
}

impl Summary {
    pub fn render(&self) -> String {
        let mut s = format!("scenario {}\n", self.scenario);
        s.push_str(&self.metrics.table());
        s.push_str(&format!(
            "{:<42} {}\n",
            "condition lambda_min(W1+W1^T) > 0", self.condition_w1
        ));
        s.push_str(&format!(
            "{:<42} {}\n",
            "condition lambda_min(W2+W2^T) > 0", self.condition_w2
        ));
        s
    }
}

pub fn simulate(sc: &Scenario, out: &Path) -> Result<Summary> {
    let traj = integrate(sc)?;
    traj.write_csv(&out.join("trajectory.csv"))?;
    traj.write_events(&out.join("events.log"))?;
    let metrics = match traj.last() {
        Some(s) => Metrics::of(s, &sc.controllers),
        None => Metrics::from_csv(&out.join("trajectory.csv"), &sc.controllers)?,
    };
    let rep = final_stability(sc)?;
    let summary = Summary {
        scenario: sc.name.clone(),
        metrics,
        condition_w1: rep.condition_w1,
        condition_w2: rep.condition_w2,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyzeReport {
    pub scenario: String,
    #[serde(flatten)]
    pub linear: StabilityReport,
    /// Bottleneck distance between the direct spectrum of `W` and the roots
    /// of the quadratic pencil.
    pub pencil_distance: f64,
    /// Largest real part of the grounded closed-loop Jacobian at the
    /// operating point, when one was found.
    pub closed_loop_max_real: Option<f64>,
    pub closed_loop_max_residual: Option<f64>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sufficiency: Option<SufficiencyReport>,
}

pub fn analyze(sc: &Scenario, out: &Path, seed: Option<u64>) -> Result<AnalyzeReport> {
    let cfg = final_configuration(sc)?;
    let sys = build_linear_voltage_system(cfg.grid(), cfg.controllers(), cfg.graph_b())?;
    let linear = check_stability_conditions(&sys)?;
    let mut direct = eigenvalues(&sys.w)?;
    sort_descending(&mut direct);
    let pencil = pencil_roots(&sys.w1, &sys.w2)?;
    let pencil_distance = multiset_distance(&direct, &pencil);
    let mut warnings = Vec::new();
    let (closed_loop_max_real, closed_loop_max_residual) =
        match spectrum_at(&operating_scenario(sc)) {
            Ok(p) => (
                Some(
                    p.eigenvalues
                        .iter()
                        .map(|z| z.re)
                        .fold(f64::NEG_INFINITY, f64::max),
                ),
                Some(p.max_residual),
            ),
            Err(e) => {
                warnings.push(format!("closed-loop spectrum unavailable: {e}"));
                (None, None)
            }
        };
    let sufficiency = match seed {
        Some(s) => Some(sufficiency_check(
            s,
            SUFFICIENCY_DRAWS,
            SUFFICIENCY_MAX_ATTEMPTS,
        )?),
        None => None,
    };
    let report = AnalyzeReport {
        scenario: sc.name.clone(),
        linear,
        pencil_distance,
        closed_loop_max_real,
        closed_loop_max_residual,
        warnings,
        sufficiency,
    };
    write_json(&out.join("stability.json"), &report)?;
    Ok(report)
}

/// Sweep grid from explicit bounds, falling back to the gain's default grid.
pub fn sweep_grid(
    base: &Scenario,
    gain: Gain,
    from: Option<f64>,
    to: Option<f64>,
    points: Option<usize>,
) -> Result<Vec<f64>> {
    let default = gain.default_grid(base);
    let lo = from.unwrap_or(default[0]);
    let hi = to.unwrap_or(default[default.len() - 1]);
    let n = points.unwrap_or(default.len());
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Parameter(format!(
            "sweep bounds must satisfy 0 < from < to, got {lo} and {hi}"
        )));
    }
    if n < 2 {
        return Err(Error::Parameter("a sweep needs at least two points".into()));
    }
    Ok(geometric(lo, hi, n))
}

pub fn trace(
    file: &ScenarioFile,
    sc: &Scenario,
    args: &TraceArgs,
) -> Result<crate::analysis::EigenTrace> {
    let sweep = file.analysis.as_ref();
    let gain: Gain = match (&args.gain, sweep) {
        (Some(g), _) => g.parse()?,
        (None, Some(s)) => s.gain.parse()?,
        (None, None) => return Err(Error::Parameter("trace mode needs --gain".into())),
    };
    let pick = |cli: Option<f64>, file: Option<f64>| cli.or(file);
    let grid = sweep_grid(
        sc,
        gain,
        pick(args.from, sweep.and_then(|s| s.from)),
        pick(args.to, sweep.and_then(|s| s.to)),
        args.points.or(sweep.and_then(|s| s.points)),
    )?;
    let tr = eigen_trace(sc, gain, &grid)?;
    tr.write_csv(&args.common.out.join("trace.csv"))?;
    Ok(tr)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.mode {
        Mode::Simulate(c) => {
            let (_, sc) = prepare(c)?;
            let summary = simulate(&sc, &c.out)?;
            print!("{}", summary.render());
            if !c.no_plots {
                plots::emit_plots(&c.out)?;
            }
        }
        Mode::Analyze(c) => {
            let (_, sc) = prepare(c)?;
            let rep = analyze(&sc, &c.out, c.seed)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            println!("scenario {}", rep.scenario);
            println!(
                "{:<42} {:.6e}",
                "lambda_min(W1+W1^T)", rep.linear.lambda_min_w1
            );
            println!(
                "{:<42} {:.6e}",
                "lambda_min(W2+W2^T)", rep.linear.lambda_min_w2
            );
            println!("{:<42} {}", "condition W1", rep.linear.condition_w1);
            println!("{:<42} {}", "condition W2", rep.linear.condition_w2);
            println!("{:<42} {:.6e}", "max Re eig(W)", rep.linear.max_real);
            if let Some(m) = rep.closed_loop_max_real {
                println!("{:<42} {:.6e}", "max Re closed-loop (grounded)", m);
            }
            if let Some(s) = &rep.sufficiency {
                println!(
                    "{:<42} {} of {} accepted, {} counterexamples",
                    "randomized sufficiency check", s.accepted, s.attempted, s.counterexamples
                );
            }
        }
        Mode::Trace(t) => {
            let (file, sc) = prepare(&t.common)?;
            let tr = trace(&file, &sc, t)?;
            for w in &tr.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "trace of {} over {} points written",
                tr.gain,
                tr.points.len()
            );
            if !t.common.no_plots {
                plots::emit_plots(&t.common.out)?;
            }
        }
    }
    Ok(())
}
