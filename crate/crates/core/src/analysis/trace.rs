//! Eigenvalue traces of the linearized closed loop under a gain sweep.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use super::eigen::{self, C64};
use super::jacobian::{jacobian_full, DEFAULT_STEP};
use crate::error::{Error, Result};
use crate::simengine::{steady_state, EventKind, Scenario};

/// Residual tolerance for operating points along a sweep.
pub const TRACE_OPERATING_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Gain {
    K,
    Kappa,
    Beta,
    B,
}

impl FromStr for Gain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(Gain::K),
            "kappa" | "κ" => Ok(Gain::Kappa),
            "beta" | "β" => Ok(Gain::Beta),
            "b" => Ok(Gain::B),
            other => Err(Error::Parameter(format!(
                "unknown gain `{other}` (expected k, kappa, beta or b)"
            ))),
        }
    }
}

impl fmt::Display for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gain::K => "k",
            Gain::Kappa => "kappa",
            Gain::Beta => "beta",
            Gain::B => "b",
        })
    }
}

impl Gain {
    /// Value of the gain in the base scenario.
    pub fn nominal(&self, base: &Scenario) -> f64 {
        let c = &base.controllers;
        match self {
            Gain::K => c[0].k,
            Gain::Kappa => c[0].kappa,
            Gain::Beta => c.iter().map(|c| c.beta).fold(0.0, f64::max),
            Gain::B => base.comm_b.weights().iter().copied().fold(0.0, f64::max),
        }
    }

    /// Default sweep: geometric from a quarter of nominal to four times it,
    /// extended to sixteen times for κ where the collapse happens later.
    pub fn default_grid(&self, base: &Scenario) -> Vec<f64> {
        let nominal = self.nominal(base);
        let (hi, points) = match self {
            Gain::Kappa => (16.0, 13),
            _ => (4.0, 9),
        };
        geometric(0.25 * nominal, hi * nominal, points)
    }

    /// Base scenario with this gain set to `value` on every DG.
    pub fn apply(&self, base: &Scenario, value: f64) -> Scenario {
        let mut sc = base.clone();
        match self {
            Gain::K => sc.controllers.iter_mut().for_each(|c| c.k = value),
            Gain::Kappa => sc.controllers.iter_mut().for_each(|c| c.kappa = value),
            Gain::Beta => sc.controllers.iter_mut().for_each(|c| c.beta = value),
            Gain::B => {
                let top = self.nominal(base);
                if top > 0.0 {
                    sc.comm_b = base.comm_b.scaled(value / top);
                }
            }
        }
        sc
    }
}

pub fn geometric(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![from],
        _ => (0..points)
            .map(|i| from * (to / from).powf(i as f64 / (points - 1) as f64))
            .collect(),
    }
}

#[derive(Clone, Debug)]
pub struct TracePoint {
    pub value: f64,
    /// Sorted by real part, then imaginary part, both descending.
    pub eigenvalues: Vec<C64>,
    pub max_residual: f64,
}

#[derive(Clone, Debug)]
pub struct EigenTrace {
    pub gain: Gain,
    pub points: Vec<TracePoint>,
    pub warnings: Vec<String>,
}

/// Operating-point scenario: final topology and loads of the base scenario
/// with secondary control enabled throughout.
pub fn operating_scenario(base: &Scenario) -> Scenario {
    let mut sc = base.clone();
    sc.secondary_enabled = true;
    sc.events.retain(|e| {
        !matches!(
            e.kind,
            EventKind::EnableSecondary | EventKind::DisableSecondary
        )
    });
    sc
}

/// Grounded closed-loop spectrum at the operating point of a scenario.
pub fn spectrum_at(sc: &Scenario) -> Result<TracePoint> {
    let op = steady_state(
        &operating_scenario(sc),
        sc.settings.steady_window,
        TRACE_OPERATING_TOL,
    )?;
    let lin = jacobian_full(&op, DEFAULT_STEP)?;
    let mut ev = eigen::eigenvalues(&lin.grounded)?;
    eigen::sort_descending(&mut ev);
    let max_residual = eigen::max_relative_residual(&lin.grounded, &ev);
    Ok(TracePoint {
        value: f64::NAN,
        eigenvalues: ev,
        max_residual,
    })
}

/// Fails if the first grid point has no operating point; a later failure
/// truncates the trace with a warning.
pub fn eigen_trace(base: &Scenario, gain: Gain, grid: &[f64]) -> Result<EigenTrace> {
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter(
            "sweep grid must be strictly increasing".into(),
        ));
    }
    if grid.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::Parameter(
            "sweep values must be finite and nonnegative".into(),
        ));
    }
    let results: Vec<Result<TracePoint>> = grid
        .par_iter()
        .map(|&v| {
            spectrum_at(&gain.apply(base, v)).map(|mut p| {
                p.value = v;
                p
            })
        })
        .collect();
    let mut points = Vec::new();
    let mut warnings = Vec::new();
    for (v, r) in grid.iter().zip(results) {
        match r {
            Ok(p) => points.push(p),
            Err(e) if points.is_empty() => return Err(e),
            Err(e) => {
                warnings.push(format!("{gain} = {v}: {e}; trace truncated"));
                break;
            }
        }
    }
    Ok(EigenTrace {
        gain,
        points,
        warnings,
    })
}

impl EigenTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        let m = self.points.first().map_or(0, |p| p.eigenvalues.len());
        let mut header = vec!["gain_value".to_string()];
        for i in 1..=m {
            header.push(format!("re_{i}"));
            header.push(format!("im_{i}"));
        }
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for p in &self.points {
            let mut row = format!("{}", p.value);
            for z in &p.eigenvalues {
                row.push_str(&format!(",{},{}", z.re, z.im));
            }
            writeln!(w, "{row}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Follow each eigenvalue across the grid by nearest matching of
    /// consecutive spectra. Returns one path per eigenvalue.
    pub fn branches(&self) -> Vec<Vec<C64>> {
        let Some(first) = self.points.first() else {
            return vec![];
        };
        let mut paths: Vec<Vec<C64>> = first.eigenvalues.iter().map(|&z| vec![z]).collect();
        for p in &self.points[1..] {
            let prev: Vec<C64> = paths.iter().map(|b| *b.last().unwrap()).collect();
            let assign = eigen::nearest_assignment(&prev, &p.eigenvalues);
            for (b, j) in paths.iter_mut().zip(assign) {
                b.push(p.eigenvalues[j]);
            }
        }
        paths
    }
}

/// Qualitative readouts of a trace.
pub mod readout {
    use super::*;

    fn moved(path: &[C64]) -> bool {
        let scale = path.iter().map(|z| z.norm()).fold(1e-12, f64::max);
        path.windows(2).any(|w| (w[1] - w[0]).norm() > 1e-7 * scale)
    }

    fn is_real(z: C64) -> bool {
        z.im.abs() <= 1e-9 * z.norm().max(1.0)
    }

    /// Branches moved by the swept gain.
    pub fn moving_branches(trace: &EigenTrace) -> Vec<Vec<C64>> {
        trace.branches().into_iter().filter(|b| moved(b)).collect()
    }

    /// Among moving branches that stay on the real axis, the one with the
    /// largest real part at the start of the sweep.
    pub fn dominant_real(trace: &EigenTrace) -> Option<Vec<C64>> {
        moving_branches(trace)
            .into_iter()
            .filter(|b| b.iter().all(|&z| is_real(z)))
            .max_by(|a, b| a[0].re.total_cmp(&b[0].re))
    }

    /// Among moving branches in the upper half plane at the start of the
    /// sweep, the one with the largest real part there.
    pub fn dominant_complex(trace: &EigenTrace) -> Option<Vec<C64>> {
        moving_branches(trace)
            .into_iter()
            .filter(|b| b[0].im > 0.0 && !is_real(b[0]))
            .max_by(|a, b| a[0].re.total_cmp(&b[0].re))
    }

    pub fn damping_ratio(z: C64) -> f64 {
        -z.re / z.norm()
    }

    pub fn strictly_decreasing(v: &[f64]) -> bool {
        v.windows(2).all(|w| w[1] < w[0])
    }

    pub fn reaches_real_axis(branch: &[C64]) -> bool {
        branch.last().is_some_and(|&z| is_real(z))
    }
}
