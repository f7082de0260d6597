//! Droop laws, the two DAPI secondary controllers and the communication layer.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use petgraph::unionfind::UnionFind;

use crate::error::{Error, Result};

pub const NOMINAL_OMEGA: f64 = 2.0 * PI * 50.0;
pub const NOMINAL_VOLTAGE: f64 = 325.3;

/// Per-DG gains, setpoints and ratings.
#[derive(Clone, Debug, PartialEq)]
pub struct DgController {
    /// P–ω droop coefficient, rad/(W·s).
    pub m: f64,
    /// Q–E droop coefficient, V/VAr.
    pub n: f64,
    /// Frequency integral time constant, s.
    pub k: f64,
    /// Voltage integral time constant, s.
    pub kappa: f64,
    /// Voltage regulation gain (dimensionless, may be zero).
    pub beta: f64,
    pub omega_star: f64,
    pub e_star: f64,
    pub p_rated: f64,
    pub q_rated: f64,
}

impl DgController {
    /// 1400 W / 800 VAr unit of the four-DG laboratory setup.
    pub fn unit_1400w() -> Self {
        DgController {
            m: 2.5e-3,
            n: 1.5e-3,
            k: 1.7,
            kappa: 1.0,
            beta: 0.0,
            omega_star: NOMINAL_OMEGA,
            e_star: NOMINAL_VOLTAGE,
            p_rated: 1400.0,
            q_rated: 800.0,
        }
    }

    /// 700 W / 400 VAr unit of the four-DG laboratory setup.
    pub fn unit_700w() -> Self {
        DgController {
            m: 5e-3,
            n: 3e-3,
            p_rated: 700.0,
            q_rated: 400.0,
            ..Self::unit_1400w()
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let positive = [
            ("m", self.m),
            ("n", self.n),
            ("k", self.k),
            ("kappa", self.kappa),
            ("omega_star", self.omega_star),
            ("e_star", self.e_star),
            ("p_rated", self.p_rated),
            ("q_rated", self.q_rated),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(
                    format!("{field}.{name}"),
                    format!("must be finite and positive, got {v}"),
                ));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::validation(
                format!("{field}.beta"),
                format!("must be finite and nonnegative, got {}", self.beta),
            ));
        }
        Ok(())
    }

    /// `ω_i = ω* − m_i P_i + Ω_i`.
    pub fn droop_frequency(&self, p: f64, omega_sec: f64) -> f64 {
        self.omega_star - self.m * p + omega_sec
    }

    /// `E_i = E* − n_i Q_i + e_i`.
    pub fn droop_voltage(&self, q: f64, e_sec: f64) -> f64 {
        self.e_star - self.n * q + e_sec
    }
}

/// Secondary integrator states.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondaryState {
    pub omega: Vec<f64>,
    pub e: Vec<f64>,
}

impl SecondaryState {
    pub fn zeros(n: usize) -> Self {
        SecondaryState {
            omega: vec![0.0; n],
            e: vec![0.0; n],
        }
    }
}

/// Weighted communication graph. `weights[(i, j)] > 0` means DG `i` listens
/// to DG `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CommGraph {
    weights: DMatrix<f64>,
    directed: bool,
}

impl CommGraph {
    pub fn new(weights: DMatrix<f64>, directed: bool) -> Result<Self> {
        let n = weights.nrows();
        if weights.ncols() != n {
            return Err(Error::Parameter("adjacency matrix must be square".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let w = weights[(i, j)];
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::validation(
                        format!("[{i}][{j}]"),
                        format!("weight must be finite and nonnegative, got {w}"),
                    ));
                }
                if i == j && w != 0.0 {
                    return Err(Error::validation(
                        format!("[{i}][{j}]"),
                        "diagonal must be zero",
                    ));
                }
                if !directed && w != weights[(j, i)] {
                    return Err(Error::validation(
                        format!("[{i}][{j}]"),
                        "undirected graph needs a symmetric adjacency matrix",
                    ));
                }
            }
        }
        Ok(CommGraph { weights, directed })
    }

    pub fn empty(n: usize) -> Self {
        CommGraph {
            weights: DMatrix::zeros(n, n),
            directed: false,
        }
    }

    /// Ring `1 – 2 – … – n – 1` with uniform weight.
    pub fn ring(n: usize, weight: f64) -> Self {
        let mut w = DMatrix::zeros(n, n);
        if n >= 2 {
            for i in 0..n {
                let j = (i + 1) % n;
                if i != j {
                    w[(i, j)] = weight;
                    w[(j, i)] = weight;
                }
            }
        }
        CommGraph {
            weights: w,
            directed: false,
        }
    }

    pub fn chain(n: usize, weight: f64) -> Self {
        let mut w = DMatrix::zeros(n, n);
        for i in 1..n {
            w[(i - 1, i)] = weight;
            w[(i, i - 1)] = weight;
        }
        CommGraph {
            weights: w,
            directed: false,
        }
    }

    pub fn complete(n: usize, weight: f64) -> Self {
        let w = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { weight });
        CommGraph {
            weights: w,
            directed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.nrows() == 0
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Set the link weight; an undirected graph updates both directions.
    pub fn with_link(&self, i: usize, j: usize, weight: f64) -> Result<Self> {
        if i == j || i >= self.len() || j >= self.len() {
            return Err(Error::Parameter(format!("invalid link ({i}, {j})")));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::Parameter(format!("invalid link weight {weight}")));
        }
        let mut next = self.clone();
        next.weights[(i, j)] = weight;
        if !self.directed {
            next.weights[(j, i)] = weight;
        }
        Ok(next)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        CommGraph {
            weights: &self.weights * factor,
            directed: self.directed,
        }
    }

    /// Subgraph on the selected nodes, remaining weights unchanged.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let w = DMatrix::from_fn(keep.len(), keep.len(), |a, b| {
            self.weights[(keep[a], keep[b])]
        });
        CommGraph {
            weights: w,
            directed: self.directed,
        }
    }

    /// `L = diag(Σ_j a_ij) − A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut l = -self.weights.clone();
        for i in 0..n {
            l[(i, i)] = self.weights.row(i).sum();
        }
        l
    }

    /// Consensus right-hand side `−Σ_j a_ij (x_i − x_j)`, i.e. `−L x`.
    pub fn consensus_rhs(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                -(0..n)
                    .map(|j| self.weights[(i, j)] * (x[i] - x[j]))
                    .sum::<f64>()
            })
            .collect()
    }

    /// Weak connectivity over positive-weight links. A single node, or an
    /// empty graph, counts as connected.
    pub fn is_connected(&self) -> bool {
        let n = self.len();
        if n <= 1 {
            return true;
        }
        let mut uf = UnionFind::new(n);
        for i in 0..n {
            for j in 0..n {
                if self.weights[(i, j)] > 0.0 {
                    uf.union(i, j);
                }
            }
        }
        let root = uf.find(0);
        (1..n).all(|i| uf.find(i) == root)
    }
}

/// `dΩ_i/dt` from `k_i dΩ_i/dt = −(ω_i − ω*) − Σ_j a_ij (Ω_i − Ω_j)`.
pub fn dapi_frequency_rhs(
    ctrls: &[DgController],
    graph: &CommGraph,
    omega: &[f64],
    omega_sec: &[f64],
) -> Vec<f64> {
    let avg = graph.consensus_rhs(omega_sec);
    ctrls
        .iter()
        .enumerate()
        .map(|(i, c)| (-(omega[i] - c.omega_star) + avg[i]) / c.k)
        .collect()
}

/// `de_i/dt` from
/// `κ_i de_i/dt = −β_i (E_i − E*) − Σ_j b_ij (Q_i/Q_i* − Q_j/Q_j*)`.
pub fn dapi_voltage_rhs(
    ctrls: &[DgController],
    graph: &CommGraph,
    e_mag: &[f64],
    q: &[f64],
    _e_sec: &[f64],
) -> Vec<f64> {
    let ratio: Vec<f64> = q.iter().zip(ctrls).map(|(q, c)| q / c.q_rated).collect();
    let share = graph.consensus_rhs(&ratio);
    ctrls
        .iter()
        .enumerate()
        .map(|(i, c)| (-c.beta * (e_mag[i] - c.e_star) + share[i]) / c.kappa)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lab_units() -> Vec<DgController> {
        vec![
            DgController::unit_1400w(),
            DgController::unit_700w(),
            DgController::unit_700w(),
            DgController::unit_1400w(),
        ]
    }

    #[test]
    fn consensus_fixed_point_and_two_node() {
        let g = CommGraph::ring(4, 1.0);
        assert_eq!(g.consensus_rhs(&[3.0; 4]), vec![0.0; 4]);

        let two = CommGraph::complete(2, 1.0);
        assert_eq!(two.consensus_rhs(&[1.0, 3.0]), vec![2.0, -2.0]);

        // Closed form: x(t) = 2 ∓ e^{-2t}.
        let mut x = [1.0, 3.0];
        let dt = 1e-3;
        for _ in 0..10_000 {
            let k1 = two.consensus_rhs(&x);
            let mid = [x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]];
            let k2 = two.consensus_rhs(&mid);
            x = [x[0] + dt * k2[0], x[1] + dt * k2[1]];
        }
        assert!((x[0] - 2.0).abs() < 1e-8 && (x[1] - 2.0).abs() < 1e-8);
        assert!((x[0] + x[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ring_laplacian() {
        let l = CommGraph::ring(4, 1.0).laplacian();
        for i in 0..4 {
            assert_eq!(l[(i, i)], 2.0);
            assert_eq!(l.row(i).sum(), 0.0);
        }
    }

    #[test]
    fn droop_laws() {
        let c = DgController::unit_700w();
        assert_eq!(c.droop_frequency(0.0, 0.0), c.omega_star);
        assert!((c.droop_frequency(700.0, 0.0) - c.omega_star + 3.5).abs() < 1e-12);
        assert_eq!(c.droop_frequency(700.0, c.m * 700.0), c.omega_star);

        let big = DgController::unit_1400w();
        assert_eq!(big.droop_voltage(0.0, 0.0), big.e_star);
        assert!((big.droop_voltage(800.0, 0.0) - (big.e_star - 1.2)).abs() < 1e-12);
        assert_eq!(big.droop_voltage(800.0, big.n * 800.0), big.e_star);
    }

    #[test]
    fn frequency_dapi_cases() {
        let ctrls = lab_units();
        let g = CommGraph::ring(4, 1.0);
        let w = vec![NOMINAL_OMEGA; 4];
        assert_eq!(dapi_frequency_rhs(&ctrls, &g, &w, &[0.7; 4]), vec![0.0; 4]);

        // Decentralized integrators without communication.
        let off = [
            NOMINAL_OMEGA - 1.0,
            NOMINAL_OMEGA + 0.5,
            NOMINAL_OMEGA,
            NOMINAL_OMEGA,
        ];
        let rhs = dapi_frequency_rhs(&ctrls, &CommGraph::empty(4), &off, &[0.3, 0.1, 0.0, 2.0]);
        for i in 0..4 {
            assert!((rhs[i] + (off[i] - NOMINAL_OMEGA) / ctrls[i].k).abs() < 1e-12);
        }

        let two = vec![
            DgController {
                k: 1.0,
                ..DgController::unit_1400w()
            };
            2
        ];
        let rhs = dapi_frequency_rhs(
            &two,
            &CommGraph::complete(2, 1.0),
            &[NOMINAL_OMEGA; 2],
            &[1.0, 0.0],
        );
        assert_eq!(rhs, vec![-1.0, 1.0]);
    }

    #[test]
    fn voltage_dapi_cases() {
        let mut ctrls = lab_units();
        let g = CommGraph::ring(4, 180.0);
        let e = vec![NOMINAL_VOLTAGE; 4];
        let shared: Vec<f64> = ctrls.iter().map(|c| 0.4 * c.q_rated).collect();
        assert_eq!(
            dapi_voltage_rhs(&ctrls, &g, &e, &shared, &[0.0; 4]),
            vec![0.0; 4]
        );

        // Pure regulation.
        for c in &mut ctrls {
            c.beta = 2.2;
        }
        let e = [324.0, 325.0, 326.0, 325.3];
        let rhs = dapi_voltage_rhs(
            &ctrls,
            &CommGraph::empty(4),
            &e,
            &[10.0, 50.0, 0.0, 3.0],
            &[0.0; 4],
        );
        for i in 0..4 {
            assert!((rhs[i] + 2.2 * (e[i] - NOMINAL_VOLTAGE) / ctrls[i].kappa).abs() < 1e-12);
        }

        // Leader-follower tuning: only DG 2 regulates.
        for (i, c) in ctrls.iter_mut().enumerate() {
            c.beta = if i == 1 { 4.0 } else { 0.0 };
        }
        let shared: Vec<f64> = ctrls.iter().map(|c| 0.4 * c.q_rated).collect();
        let rhs = dapi_voltage_rhs(&ctrls, &CommGraph::ring(4, 100.0), &e, &shared, &[0.0; 4]);
        for i in 0..4 {
            assert_eq!(rhs[i] != 0.0, i == 1);
        }
    }

    #[test]
    fn connectivity() {
        let ring = CommGraph::ring(4, 1.0);
        assert!(ring.is_connected());
        let cut = ring
            .with_link(2, 3, 0.0)
            .unwrap()
            .with_link(0, 3, 0.0)
            .unwrap();
        assert!(!cut.is_connected());
        assert!(ring.restrict(&[2]).is_connected());
        assert!(ring.restrict(&[0, 1, 3]).is_connected());
    }

    #[test]
    fn rejects_bad_weights() {
        let mut w = DMatrix::zeros(2, 2);
        w[(0, 1)] = -1.0;
        w[(1, 0)] = -1.0;
        assert!(CommGraph::new(w, false).is_err());
        let mut w = DMatrix::zeros(2, 2);
        w[(0, 1)] = 1.0;
        assert!(CommGraph::new(w.clone(), false).is_err());
        assert!(CommGraph::new(w, true).is_ok());
        let mut c = DgController::unit_1400w();
        c.q_rated = 0.0;
        assert!(c.validate("controllers[0]").is_err());
    }

    fn symmetric_eigen_min2(l: &DMatrix<f64>) -> (f64, f64) {
        let mut ev: Vec<f64> = l
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (ev[0], ev[1])
    }

    proptest! {
        #[test]
        fn laplacian_properties(
            raw in proptest::collection::vec(0.0f64..5.0, 6),
            drop in proptest::collection::vec(any::<bool>(), 6),
            x in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let mut w = DMatrix::zeros(4, 4);
            let mut k = 0;
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let v = if drop[k] { 0.0 } else { raw[k] };
                    w[(i, j)] = v;
                    w[(j, i)] = v;
                    k += 1;
                }
            }
            let g = CommGraph::new(w, false).unwrap();
            let l = g.laplacian();
            for i in 0..4 {
                prop_assert!(l.row(i).sum().abs() < 1e-12);
            }
            let (l0, l1) = symmetric_eigen_min2(&l);
            prop_assert!(l0.abs() < 1e-9);
            if g.is_connected() {
                prop_assert!(l1 > 1e-9);
            } else {
                prop_assert!(l1.abs() < 1e-9);
            }
            // Symmetric consensus preserves the sum.
            let rhs = g.consensus_rhs(&x);
            prop_assert!(rhs.iter().sum::<f64>().abs() < 1e-9);
        }
    }
}
