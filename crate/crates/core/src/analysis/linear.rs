//! Linearized voltage/reactive-power loop and its sufficient stability
//! conditions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::eigen::{self, C64};
use crate::control::{CommGraph, DgController};
use crate::error::{Error, Result};
use crate::netmodel::Grid;

/// `ẋ = Wx + u` with `x = (E, e)`, under the approximation `[E] ≈ [E*]`.
#[derive(Clone, Debug)]
pub struct LinearVoltageSystem {
    pub w: DMatrix<f64>,
    /// `I + N[E*]Y`
    pub w1: DMatrix<f64>,
    /// `κ⁻¹(β + L_c[Q*]⁻¹[E*]Y)`
    pub w2: DMatrix<f64>,
    /// `(E*, κ⁻¹βE*)`
    pub u: DVector<f64>,
    /// Asymmetry of the rescaled `T W₁ T⁻¹`, relative to its norm.
    pub w1_similarity_defect: f64,
}

pub fn build_linear_voltage_system(
    grid: &Grid,
    ctrls: &[DgController],
    graph_b: &CommGraph,
) -> Result<LinearVoltageSystem> {
    let n = grid.len();
    if ctrls.len() != n || graph_b.len() != n {
        return Err(Error::Parameter(format!(
            "dimension mismatch: {n} buses, {} controllers, {}-node graph",
            ctrls.len(),
            graph_b.len()
        )));
    }
    for (i, c) in ctrls.iter().enumerate() {
        for (name, v) in [
            ("n", c.n),
            ("kappa", c.kappa),
            ("q_rated", c.q_rated),
            ("e_star", c.e_star),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("DG {} has {name} = {v}", i + 1)));
            }
        }
    }
    let y = grid.stiffness();
    let e_star = DMatrix::from_fn(n, n, |i, j| if i == j { ctrls[i].e_star } else { 0.0 });
    let ne = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            ctrls[i].n * ctrls[i].e_star
        } else {
            0.0
        }
    });
    let w1 = DMatrix::identity(n, n) + &ne * &y;
    let lc = graph_b.laplacian();
    let q_inv = DMatrix::from_fn(
        n,
        n,
        |i, j| if i == j { 1.0 / ctrls[i].q_rated } else { 0.0 },
    );
    let beta = DMatrix::from_fn(n, n, |i, j| if i == j { ctrls[i].beta } else { 0.0 });
    let k_inv = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / ctrls[i].kappa } else { 0.0 });
    let w2 = &k_inv * (beta + lc * q_inv * &e_star * &y);

    let mut w = DMatrix::zeros(2 * n, 2 * n);
    w.view_mut((0, 0), (n, n)).copy_from(&(-&w1));
    w.view_mut((0, n), (n, n)).fill_with_identity();
    w.view_mut((n, 0), (n, n)).copy_from(&(-&w2));

    let mut u = DVector::zeros(2 * n);
    for (i, c) in ctrls.iter().enumerate() {
        u[i] = c.e_star;
        u[n + i] = c.beta * c.e_star / c.kappa;
    }

    // T = N^{-1/2}[E*]^{-1/2} makes T W₁ T⁻¹ symmetric.
    let t = DMatrix::from_fn(
        n,
        n,
        |i, j| if i == j { 1.0 / ne[(i, i)].sqrt() } else { 0.0 },
    );
    let t_inv = DMatrix::from_fn(n, n, |i, j| if i == j { ne[(i, i)].sqrt() } else { 0.0 });
    let s = &t * &w1 * &t_inv;
    let defect = (&s - s.transpose()).norm() / s.norm().max(f64::MIN_POSITIVE);

    Ok(LinearVoltageSystem {
        w,
        w1,
        w2,
        u,
        w1_similarity_defect: defect,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub lambda_min_w1: f64,
    pub lambda_min_w2: f64,
    pub condition_w1: bool,
    pub condition_w2: bool,
    #[serde(serialize_with = "serialize_complex")]
    pub eigenvalues: Vec<C64>,
    pub max_real: f64,
    /// Largest |Im| over the spectrum of `W₁`.
    pub w1_max_imag: f64,
    pub w1_similarity_defect: f64,
    /// Largest `‖Wv − λv‖ / ‖W‖` over the reported eigenvalues.
    pub max_residual: f64,
    /// `false` only if both conditions hold and `W` still has an eigenvalue
    /// with nonnegative real part.
    pub consistent: bool,
}

fn serialize_complex<S: serde::Serializer>(
    v: &[C64],
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

impl StabilityReport {
    pub fn both(&self) -> bool {
        self.condition_w1 && self.condition_w2
    }
}

pub fn check_stability_conditions(sys: &LinearVoltageSystem) -> Result<StabilityReport> {
    let sym1 = &sys.w1 + sys.w1.transpose();
    let sym2 = &sys.w2 + sys.w2.transpose();
    let lambda_min_w1 = eigen::symmetric_min(&sym1)?;
    let lambda_min_w2 = eigen::symmetric_min(&sym2)?;
    let mut eigenvalues = eigen::eigenvalues(&sys.w)?;
    eigen::sort_descending(&mut eigenvalues);
    let max_real = eigenvalues
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let w1_max_imag = eigen::eigenvalues(&sys.w1)?
        .iter()
        .map(|z| z.im.abs())
        .fold(0.0, f64::max);
    let max_residual = eigen::max_relative_residual(&sys.w, &eigenvalues);
    let condition_w1 = lambda_min_w1 > 0.0;
    let condition_w2 = lambda_min_w2 > 0.0;
    Ok(StabilityReport {
        lambda_min_w1,
        lambda_min_w2,
        condition_w1,
        condition_w2,
        consistent: !(condition_w1 && condition_w2) || max_real < 0.0,
        eigenvalues,
        max_real,
        w1_max_imag,
        w1_similarity_defect: sys.w1_similarity_defect,
        max_residual,
    })
}
