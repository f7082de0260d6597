//! Electrical topology of an islanded microgrid.
//!
//! Every DG sits on its own bus; loads are constant impedances collocated with
//! the DGs. Interconnecting lines are purely inductive. Passive junction buses
//! (a distribution node with no DG, or the bus of a DG that has been plugged
//! out) are eliminated by Kron reduction, which is exact for a lossless
//! impedance network as long as the eliminated buses carry no conductance.
//!
//! All quantities are SI. Matrix conventions follow the usual bus susceptance
//! matrix: off-diagonal entries are `+1/X_ij`, diagonal entries are `-Σ_j 1/X_ij`,
//! and the load matrix holds the (negative, inductive) load susceptances, so
//! that `Y = -(Y_bus + Y_load)` is a grounded Laplacian.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use petgraph::unionfind::UnionFind;

use crate::error::{Error, Result};

/// Constant-impedance load attached to a bus.
///
/// `susceptance` is the magnitude of the inductive load susceptance, so a
/// positive value consumes reactive power.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Load {
    pub conductance: f64,
    pub susceptance: f64,
}

impl Load {
    pub const NONE: Load = Load {
        conductance: 0.0,
        susceptance: 0.0,
    };

    /// Impedance load drawing `p` W and `q` VAr at voltage `e`.
    pub fn from_power(p: f64, q: f64, e: f64) -> Self {
        Load {
            conductance: p / (e * e),
            susceptance: q / (e * e),
        }
    }

    pub fn is_detached(&self) -> bool {
        self.conductance == 0.0 && self.susceptance == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub load: Load,
}

/// Passive bus without a DG. Only reactive loads can be eliminated exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Junction {
    pub id: u32,
    pub load_susceptance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineStatus {
    Connected,
    Disconnected,
}

/// Inductive line between two nodes.
///
/// Node indices `0..n` address DG buses in declaration order, `n..n + h` the
/// junctions. The resistance is kept for documentation only.
#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub reactance: f64,
    pub resistance: f64,
    pub status: LineStatus,
}

impl Line {
    pub fn new(from: usize, to: usize, reactance: f64) -> Self {
        Line {
            from,
            to,
            reactance,
            resistance: 0.0,
            status: LineStatus::Connected,
        }
    }

    /// Line with reactance `2π f L`.
    pub fn from_inductance(
        from: usize,
        to: usize,
        resistance: f64,
        inductance: f64,
        frequency_hz: f64,
    ) -> Self {
        Line {
            from,
            to,
            reactance: 2.0 * PI * frequency_hz * inductance,
            resistance,
            status: LineStatus::Connected,
        }
    }

    fn connects(&self, a: usize, b: usize) -> bool {
        (self.from == a && self.to == b) || (self.from == b && self.to == a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    buses: Vec<Bus>,
    junctions: Vec<Junction>,
    lines: Vec<Line>,
}

impl NetworkModel {
    pub fn new(buses: Vec<Bus>, junctions: Vec<Junction>, lines: Vec<Line>) -> Result<Self> {
        if buses.is_empty() {
            return Err(Error::Parameter("network needs at least one DG bus".into()));
        }
        let nodes = buses.len() + junctions.len();
        for (i, bus) in buses.iter().enumerate() {
            check_load(&bus.load, &format!("buses[{i}].load"))?;
        }
        for (i, j) in junctions.iter().enumerate() {
            if !(j.load_susceptance.is_finite() && j.load_susceptance >= 0.0) {
                return Err(Error::validation(
                    format!("junctions[{i}].load_susceptance"),
                    "must be finite and nonnegative",
                ));
            }
        }
        for (k, line) in lines.iter().enumerate() {
            let field = format!("lines[{k}]");
            if line.from >= nodes || line.to >= nodes {
                return Err(Error::validation(field, "endpoint does not exist"));
            }
            if line.from == line.to {
                return Err(Error::validation(field, "line endpoints must differ"));
            }
            if !(line.reactance.is_finite() && line.reactance > 0.0) {
                return Err(Error::validation(
                    format!("{field}.reactance"),
                    "must be finite and positive",
                ));
            }
            if lines[..k].iter().any(|l| l.connects(line.from, line.to)) {
                return Err(Error::validation(field, "duplicate line for this bus pair"));
            }
        }
        Ok(NetworkModel {
            buses,
            junctions,
            lines,
        })
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    fn node_count(&self) -> usize {
        self.buses.len() + self.junctions.len()
    }

    fn node_id(&self, node: usize) -> u32 {
        if node < self.buses.len() {
            self.buses[node].id
        } else {
            self.junctions[node - self.buses.len()].id
        }
    }

    pub fn with_load(&self, bus: usize, load: Load) -> Result<Self> {
        check_load(&load, &format!("buses[{bus}].load"))?;
        let mut next = self.clone();
        next.buses
            .get_mut(bus)
            .ok_or_else(|| Error::Parameter(format!("no bus at index {bus}")))?
            .load = load;
        Ok(next)
    }

    pub fn with_line_status(&self, a: usize, b: usize, status: LineStatus) -> Result<Self> {
        let mut next = self.clone();
        let line = next
            .lines
            .iter_mut()
            .find(|l| l.connects(a, b))
            .ok_or_else(|| Error::Parameter(format!("no line between nodes {a} and {b}")))?;
        line.status = status;
        Ok(next)
    }

    fn union_find(&self) -> UnionFind<usize> {
        let mut uf = UnionFind::new(self.node_count());
        for line in self
            .lines
            .iter()
            .filter(|l| l.status == LineStatus::Connected)
        {
            uf.union(line.from, line.to);
        }
        uf
    }

    /// Groups of active DG bus indices that are electrically connected,
    /// possibly through passive nodes.
    pub fn components(&self, active: &[bool]) -> Vec<Vec<usize>> {
        let uf = self.union_find();
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for bus in (0..self.buses.len()).filter(|&b| active[b]) {
            groups.entry(uf.find(bus)).or_default().push(bus);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort();
        out
    }

    /// True when all active DG buses lie in one electrical component.
    pub fn is_connected(&self, active: &[bool]) -> bool {
        self.components(active).len() <= 1
    }

    pub fn all_active(&self) -> Vec<bool> {
        vec![true; self.buses.len()]
    }

    /// Lossless network seen from the active DG buses, with every passive
    /// node eliminated.
    pub fn reduce(&self, active: &[bool]) -> Result<Grid> {
        assert_eq!(active.len(), self.buses.len(), "activity mask length");
        let comps = self.components(active);
        if comps.len() > 1 {
            let text = comps
                .iter()
                .map(|c| {
                    let ids: Vec<String> =
                        c.iter().map(|&b| self.buses[b].id.to_string()).collect();
                    format!("{{{}}}", ids.join(", "))
                })
                .collect::<Vec<_>>()
                .join(" | ");
            return Err(Error::Topology { components: text });
        }
        let kept: Vec<usize> = (0..self.buses.len()).filter(|&b| active[b]).collect();
        if kept.is_empty() {
            return Err(Error::Parameter("no active DG bus".into()));
        }
        let uf = self.union_find();
        let root = uf.find(kept[0]);
        let passive: Vec<usize> = (0..self.node_count())
            .filter(|&v| uf.find(v) == root && !(v < self.buses.len() && active[v]))
            .collect();

        for &v in &passive {
            if v < self.buses.len() && self.buses[v].load.conductance != 0.0 {
                return Err(Error::Domain(format!(
                    "bus {} has no active DG but carries a conductance load; \
                     it cannot be eliminated from a lossless network",
                    self.buses[v].id
                )));
            }
        }

        // Grounded Laplacian over the kept + passive nodes, ordered kept first.
        let order: Vec<usize> = kept.iter().chain(passive.iter()).copied().collect();
        let mut pos = vec![usize::MAX; self.node_count()];
        for (k, &v) in order.iter().enumerate() {
            pos[v] = k;
        }
        let total = order.len();
        let mut stiff = DMatrix::<f64>::zeros(total, total);
        for line in self
            .lines
            .iter()
            .filter(|l| l.status == LineStatus::Connected)
        {
            let (a, b) = (pos[line.from], pos[line.to]);
            if a == usize::MAX || b == usize::MAX {
                continue;
            }
            let s = 1.0 / line.reactance;
            stiff[(a, b)] -= s;
            stiff[(b, a)] -= s;
            stiff[(a, a)] += s;
            stiff[(b, b)] += s;
        }
        for (k, &v) in order.iter().enumerate() {
            stiff[(k, k)] += self.shunt_susceptance(v);
        }

        let n = kept.len();
        let reduced = if passive.is_empty() {
            stiff
        } else {
            let kaa = stiff.view((0, 0), (n, n)).into_owned();
            let kap = stiff.view((0, n), (n, total - n)).into_owned();
            let kpp = stiff.view((n, n), (total - n, total - n)).into_owned();
            let chol = kpp.cholesky().ok_or_else(|| {
                Error::Numeric("passive-node block is singular during Kron reduction".into())
            })?;
            let x = chol.solve(&kap.transpose());
            kaa - &kap * x
        };

        let scale = reduced.amax().max(f64::MIN_POSITIVE);
        let floor = 1e-12 * scale;
        let mut coupling = DMatrix::<f64>::zeros(n, n);
        let mut load_susceptance = vec![0.0; n];
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += reduced[(i, j)];
                if i != j {
                    let c = -reduced[(i, j)];
                    coupling[(i, j)] = if c.abs() <= floor { 0.0 } else { c };
                }
            }
            load_susceptance[i] = if row.abs() <= floor { 0.0 } else { row };
        }
        // Symmetrize away round-off from the Schur complement.
        let coupling = (&coupling + coupling.transpose()) * 0.5;
        let load_conductance = kept
            .iter()
            .map(|&b| self.buses[b].load.conductance)
            .collect();

        Ok(Grid {
            bus_ids: kept.iter().map(|&b| self.node_id(b)).collect(),
            coupling,
            load_conductance,
            load_susceptance,
        })
    }

    fn shunt_susceptance(&self, node: usize) -> f64 {
        if node < self.buses.len() {
            self.buses[node].load.susceptance
        } else {
            self.junctions[node - self.buses.len()].load_susceptance
        }
    }

    /// `(Y_bus, Y_load)` with every DG active.
    pub fn susceptance_matrices(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok(self.reduce(&self.all_active())?.susceptance_matrices())
    }
}

fn check_load(load: &Load, field: &str) -> Result<()> {
    if !(load.conductance.is_finite() && load.conductance >= 0.0) {
        return Err(Error::validation(
            format!("{field}.conductance"),
            "must be finite and nonnegative",
        ));
    }
    if !(load.susceptance.is_finite() && load.susceptance >= 0.0) {
        return Err(Error::validation(
            format!("{field}.susceptance"),
            "must be finite and nonnegative",
        ));
    }
    Ok(())
}

/// Lossless network restricted to the active DG buses.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    bus_ids: Vec<u32>,
    /// `1/X_ij` for each connected pair, zero elsewhere and on the diagonal.
    coupling: DMatrix<f64>,
    load_conductance: Vec<f64>,
    load_susceptance: Vec<f64>,
}

impl Grid {
    /// Build a grid directly from a line susceptance matrix and load vectors.
    pub fn from_parts(
        coupling: DMatrix<f64>,
        load_conductance: Vec<f64>,
        load_susceptance: Vec<f64>,
    ) -> Self {
        let n = coupling.nrows();
        assert_eq!(coupling.ncols(), n);
        assert_eq!(load_conductance.len(), n);
        assert_eq!(load_susceptance.len(), n);
        Grid {
            bus_ids: (1..=n as u32).collect(),
            coupling,
            load_conductance,
            load_susceptance,
        }
    }

    pub fn len(&self) -> usize {
        self.load_conductance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load_conductance.is_empty()
    }

    pub fn bus_ids(&self) -> &[u32] {
        &self.bus_ids
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn load_conductance(&self) -> &[f64] {
        &self.load_conductance
    }

    pub fn load_susceptance(&self) -> &[f64] {
        &self.load_susceptance
    }

    /// `X_i = 1 / Σ_j X_ij⁻¹`; infinite for an isolated bus.
    pub fn self_reactance(&self, i: usize) -> f64 {
        1.0 / self.coupling.row(i).sum()
    }

    pub fn susceptance_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.len();
        let mut y_bus = self.coupling.clone();
        for i in 0..n {
            y_bus[(i, i)] = -self.coupling.row(i).sum();
        }
        let y_load = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -self.load_susceptance[i]
            } else {
                0.0
            }
        });
        (y_bus, y_load)
    }

    /// `Y = -(Y_bus + Y_load)`.
    pub fn stiffness(&self) -> DMatrix<f64> {
        let (y_bus, y_load) = self.susceptance_matrices();
        -(y_bus + y_load)
    }
}
