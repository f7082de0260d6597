//! Randomized check that the two sufficient conditions imply a Hurwitz `W`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::linear::{build_linear_voltage_system, check_stability_conditions};
use crate::control::{CommGraph, DgController};
use crate::error::Result;
use crate::netmodel::Grid;

#[derive(Clone, Debug, Serialize)]
pub struct SufficiencyReport {
    pub seed: u64,
    /// Draws satisfying both conditions.
    pub accepted: usize,
    pub attempted: usize,
    /// Accepted draws whose `W` has an eigenvalue with nonnegative real part.
    pub counterexamples: usize,
    /// Largest max Re(eig W) over accepted draws.
    pub worst_max_real: f64,
}

/// Random connected weighted graph: a random spanning tree plus extra edges.
fn random_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    draw: &mut impl FnMut(&mut ChaCha8Rng) -> f64,
) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for i in 1..n {
        let j = rng.gen_range(0..i);
        let v = draw(rng);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        for j in i + 1..n {
            if w[(i, j)] == 0.0 && rng.gen_bool(0.3) {
                let v = draw(rng);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    w
}

/// One admissible draw with `n ≤ 4`: grid, controllers and voltage graph.
pub fn random_system(rng: &mut ChaCha8Rng) -> Result<(Grid, Vec<DgController>, CommGraph)> {
    let n = rng.gen_range(1..=4);
    let coupling = random_graph(rng, n, &mut |r| 1.0 / r.gen_range(0.2..2.0));
    let b_load: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.6) {
                rng.gen_range(0.0..0.02)
            } else {
                0.0
            }
        })
        .collect();
    let grid = Grid::from_parts(coupling, vec![0.0; n], b_load);
    let ctrls = (0..n)
        .map(|_| DgController {
            e_star: rng.gen_range(300.0..350.0),
            n: rng.gen_range(1e-3..5e-3),
            q_rated: rng.gen_range(200.0..1000.0),
            kappa: rng.gen_range(0.2..5.0),
            beta: if rng.gen_bool(0.7) {
                rng.gen_range(0.0..5.0)
            } else {
                0.0
            },
            ..DgController::unit_1400w()
        })
        .collect();
    let b = CommGraph::new(
        random_graph(rng, n, &mut |r| r.gen_range(0.0..300.0)),
        false,
    )?;
    Ok((grid, ctrls, b))
}

/// Draw systems until `wanted` satisfy both conditions (or `max_attempts`
/// draws are spent) and count those that are not Hurwitz.
pub fn sufficiency_check(
    seed: u64,
    wanted: usize,
    max_attempts: usize,
) -> Result<SufficiencyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SufficiencyReport {
        seed,
        accepted: 0,
        attempted: 0,
        counterexamples: 0,
        worst_max_real: f64::NEG_INFINITY,
    };
    while rep.accepted < wanted && rep.attempted < max_attempts {
        rep.attempted += 1;
        let (grid, ctrls, b) = random_system(&mut rng)?;
        let sys = build_linear_voltage_system(&grid, &ctrls, &b)?;
        let r = check_stability_conditions(&sys)?;
        if r.both() {
            rep.accepted += 1;
            rep.worst_max_real = rep.worst_max_real.max(r.max_real);
            if r.max_real >= 0.0 {
                rep.counterexamples += 1;
            }
        }
    }
    Ok(rep)
}
