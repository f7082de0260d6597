//! Roots of `det(s²I + sW₁ + W₂)` by simultaneous Aberth–Ehrlich iteration,
//! an independent route to the spectrum of the linear voltage system.
//!
//! The determinant is never expanded into coefficients: each Newton
//! correction uses `p'(s)/p(s) = tr(M(s)⁻¹ M'(s))` with `M(s) = s²I + sW₁ + W₂`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::eigen::C64;
use crate::error::{Error, Result};

const MAX_ITERS: usize = 2000;

fn complex(a: &DMatrix<f64>) -> DMatrix<C64> {
    a.map(|x| C64::new(x, 0.0))
}

/// Newton correction `p(s)/p'(s)`, or zero at an exact root.
fn newton_step(w1: &DMatrix<C64>, w2: &DMatrix<C64>, s: C64) -> C64 {
    let n = w1.nrows();
    let id = DMatrix::<C64>::identity(n, n);
    let m = &id * (s * s) + w1 * s + w2;
    let dm = &id * (s * 2.0) + w1;
    match m.lu().solve(&dm) {
        Some(x) => {
            let tr = x.trace();
            if tr == C64::new(0.0, 0.0) || !tr.re.is_finite() || !tr.im.is_finite() {
                C64::new(0.0, 0.0)
            } else {
                tr.inv()
            }
        }
        None => C64::new(0.0, 0.0),
    }
}

/// All `2n` roots of the quadratic pencil, with multiplicity.
pub fn pencil_roots(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<Vec<C64>> {
    let n = w1.nrows();
    let deg = 2 * n;
    if deg == 0 {
        return Ok(vec![]);
    }
    let (c1, c2) = (complex(w1), complex(w2));
    // Every root is an eigenvalue of the companion block matrix, whose
    // infinity norm bounds the root moduli.
    let row1 = (0..n).map(|i| w1.row(i).iter().map(|x| x.abs()).sum::<f64>() + 1.0);
    let row2 = (0..n).map(|i| w2.row(i).iter().map(|x| x.abs()).sum::<f64>());
    let radius = row1.chain(row2).fold(1.0, f64::max);
    let mut z: Vec<C64> = (0..deg)
        .map(|k| C64::from_polar(0.5 * radius, 2.0 * PI * k as f64 / deg as f64 + 0.4))
        .collect();
    for _ in 0..MAX_ITERS {
        let mut converged = true;
        for k in 0..deg {
            let ratio = newton_step(&c1, &c2, z[k]);
            let repulsion: C64 = (0..deg)
                .filter(|&j| j != k)
                .map(|j| {
                    let d = z[k] - z[j];
                    if d == C64::new(0.0, 0.0) {
                        C64::new(0.0, 0.0)
                    } else {
                        d.inv()
                    }
                })
                .sum();
            let denom = C64::new(1.0, 0.0) - ratio * repulsion;
            let step = if denom.norm() > 0.0 {
                ratio / denom
            } else {
                ratio
            };
            z[k] -= step;
            if step.norm() > 1e-14 * (1.0 + z[k].norm()) {
                converged = false;
            }
        }
        if converged {
            return Ok(z);
        }
    }
    // Clustered roots converge linearly; accept once the corrections have
    // settled to a level far below the comparison tolerance.
    let worst = z
        .iter()
        .map(|&s| newton_step(&c1, &c2, s).norm() / (1.0 + s.norm()))
        .fold(0.0, f64::max);
    if worst < 1e-9 {
        Ok(z)
    } else {
        Err(Error::EigenNonConvergence {
            iterations: MAX_ITERS,
        })
    }
}
