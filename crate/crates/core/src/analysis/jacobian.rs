//! Finite-difference linearization of the closed-loop vector field.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::simengine::{Configuration, SteadyState};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Residual an operating point must satisfy before it is linearized.
pub const OPERATING_POINT_TOL: f64 = 1e-9;

/// Central-difference Jacobian of the full stacked state `(θ, E, Ω, e)`.
pub fn jacobian_ungrounded(config: &Configuration, y: &[f64], h: f64) -> DMatrix<f64> {
    let d = y.len();
    let mut j = DMatrix::zeros(d, d);
    let mut yp = y.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for c in 0..d {
        yp[c] = y[c] + h;
        config.rhs(&yp, &mut fp);
        yp[c] = y[c] - h;
        config.rhs(&yp, &mut fm);
        yp[c] = y[c];
        for r in 0..d {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

/// Remove the rotational symmetry: with `n` angles leading the state, return
/// the Jacobian in coordinates `(θ₂−θ₁, …, θₙ−θ₁, E, Ω, e)`.
pub fn ground(j: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let d = j.nrows();
    assert!(n >= 1 && d >= n);
    let g = d - 1;
    // T embeds reduced coordinates with θ₁ = 0.
    let t = DMatrix::from_fn(d, g, |r, c| if r == c + 1 { 1.0 } else { 0.0 });
    // S maps a full derivative to the reduced one.
    let s = DMatrix::from_fn(g, d, |r, c| {
        if c == r + 1 {
            1.0
        } else if c == 0 && r + 1 < n {
            -1.0
        } else {
            0.0
        }
    });
    s * j * t
}

#[derive(Clone, Debug)]
pub struct Linearization {
    pub full: DMatrix<f64>,
    pub grounded: DMatrix<f64>,
    pub n: usize,
}

/// Linearize at a converged operating point.
pub fn jacobian_full(op: &SteadyState, h: f64) -> Result<Linearization> {
    if !(op.residual < OPERATING_POINT_TOL) {
        return Err(Error::Parameter(format!(
            "operating point not converged (residual {:.3e})",
            op.residual
        )));
    }
    let y = op.config.pack(&op.state);
    let full = jacobian_ungrounded(&op.config, &y, h);
    let n = op.config.len();
    let grounded = ground(&full, n);
    Ok(Linearization { full, grounded, n })
}
