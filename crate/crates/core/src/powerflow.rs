//! Power injections for the lossless inductive network.
//!
//! Generation is positive: a DG's injection covers both the flow into the
//! lines and the draw of its collocated load.

use crate::control::DgController;
use crate::error::{Error, Result};
use crate::netmodel::Grid;

#[derive(Clone, Debug, PartialEq)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

fn check_voltages(e: &[f64]) -> Result<()> {
    match e.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(i) => Err(Error::Domain(format!(
            "voltage magnitude at position {i} is {} (must be positive)",
            e[i]
        ))),
        None => Ok(()),
    }
}

/// Full nonlinear active and reactive injections.
///
/// `Q_i = E_i²/X_i − Σ_j (E_iE_j/X_ij) cos θ_ij + B_i E_i²` is evaluated as
/// `Σ_j (1/X_ij)(E_i(E_i − E_j) + 2E_iE_j sin²(θ_ij/2))`, the same quantity
/// without the cancellation between the two large terms.
pub fn injections_nonlinear(grid: &Grid, theta: &[f64], e: &[f64]) -> Result<Injections> {
    let n = grid.len();
    if theta.len() != n || e.len() != n {
        return Err(Error::Parameter(format!(
            "state length mismatch: grid has {n} buses, got {} angles and {} voltages",
            theta.len(),
            e.len()
        )));
    }
    check_voltages(e)?;
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    injections_into(grid, theta, e, &mut p, &mut q);
    Ok(Injections { p, q })
}

/// Unchecked kernel shared with the simulation right-hand side.
pub(crate) fn injections_into(grid: &Grid, theta: &[f64], e: &[f64], p: &mut [f64], q: &mut [f64]) {
    let n = grid.len();
    let coupling = grid.coupling();
    for i in 0..n {
        let mut pi = 0.0;
        let mut qi = 0.0;
        for j in 0..n {
            let s = coupling[(i, j)];
            if s == 0.0 {
                continue;
            }
            let d = theta[i] - theta[j];
            let half = (0.5 * d).sin();
            pi += s * e[i] * e[j] * d.sin();
            qi += s * (e[i] * (e[i] - e[j]) + 2.0 * e[i] * e[j] * half * half);
        }
        let e2 = e[i] * e[i];
        p[i] = pi + grid.load_conductance()[i] * e2;
        q[i] = qi + grid.load_susceptance()[i] * e2;
    }
}

/// Decoupled reactive injection `Q_i = −E_i² Y_load,ii + E_i Σ_j Y_bus,ij (E_i − E_j)`.
pub fn injections_decoupled_reactive(grid: &Grid, e: &[f64]) -> Result<Vec<f64>> {
    if e.len() != grid.len() {
        return Err(Error::Parameter("voltage vector length mismatch".into()));
    }
    check_voltages(e)?;
    let (y_bus, y_load) = grid.susceptance_matrices();
    let n = grid.len();
    Ok((0..n)
        .map(|i| {
            let flow: f64 = (0..n).map(|j| y_bus[(i, j)] * (e[i] - e[j])).sum();
            -e[i] * e[i] * y_load[(i, i)] + e[i] * flow
        })
        .collect())
}

/// Steady-state droop frequency `ω* + P₀ / Σ 1/m_i`.
///
/// `p0` is the net load in the sign of an injection, i.e. minus the total
/// consumed active power, so a loaded network settles below `ω*`.
pub fn droop_steady_frequency(ctrls: &[DgController], p0: f64) -> f64 {
    let inv_m: f64 = ctrls.iter().map(|c| 1.0 / c.m).sum();
    ctrls[0].omega_star + p0 / inv_m
}
