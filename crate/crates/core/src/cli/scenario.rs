//! JSON scenario files.
//!
//! Bus ids are the user-facing names; matrices and DG order follow the order
//! of `network.buses`. After parsing, a file is put in canonical form: named
//! communication topologies become explicit matrices and loads given as power
//! at the DG setpoint voltage become admittances. Serializing the canonical
//! form and parsing it again gives the same value.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::{CommGraph, DgController, NOMINAL_OMEGA, NOMINAL_VOLTAGE};
use crate::error::{Error, Result};
use crate::netmodel::{Bus, Junction, Line, LineStatus, Load, NetworkModel};
use crate::simengine::{EventKind, Layer, Scenario, ScenarioEvent, SimSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub network: NetworkSection,
    pub controllers: Vec<ControllerSpec>,
    pub comm: CommSection,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<SweepSpec>,
}

fn default_frequency() -> f64 {
    50.0
}

fn default_omega() -> f64 {
    NOMINAL_OMEGA
}

fn default_voltage() -> f64 {
    NOMINAL_VOLTAGE
}

fn default_weight() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Frequency used to turn line inductances into reactances.
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    pub buses: Vec<BusSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub junctions: Vec<JunctionSpec>,
    #[serde(default)]
    pub lines: Vec<LineSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub id: u32,
    #[serde(default)]
    pub load: LoadSpec,
}

/// Either `conductance`/`susceptance` in siemens, or `p`/`q` in W/VAr drawn
/// at the setpoint voltage of the DG on that bus. Missing terms are zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conductance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub susceptance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
}

impl LoadSpec {
    pub fn admittance(load: Load) -> Self {
        LoadSpec {
            conductance: Some(load.conductance),
            susceptance: Some(load.susceptance),
            p: None,
            q: None,
        }
    }

    fn to_load(&self, e_star: f64, field: &str) -> Result<Load> {
        let admittance = self.conductance.is_some() || self.susceptance.is_some();
        let power = self.p.is_some() || self.q.is_some();
        if admittance && power {
            return Err(Error::validation(
                field,
                "give either conductance/susceptance or p/q, not both",
            ));
        }
        if power {
            Ok(Load::from_power(
                self.p.unwrap_or(0.0),
                self.q.unwrap_or(0.0),
                e_star,
            ))
        } else {
            Ok(Load {
                conductance: self.conductance.unwrap_or(0.0),
                susceptance: self.susceptance.unwrap_or(0.0),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JunctionSpec {
    pub id: u32,
    #[serde(default)]
    pub load_susceptance: f64,
}

/// Line with resistance `r` (Ω, informational) and either inductance `l`
/// (H) or reactance `x` (Ω).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from: u32,
    pub to: u32,
    #[serde(default)]
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub connected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub bus: u32,
    pub m: f64,
    pub n: f64,
    pub k: f64,
    pub kappa: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_omega")]
    pub omega_star: f64,
    #[serde(default = "default_voltage")]
    pub e_star: f64,
    pub p_rated: f64,
    pub q_rated: f64,
}

impl ControllerSpec {
    fn controller(&self) -> DgController {
        DgController {
            m: self.m,
            n: self.n,
            k: self.k,
            kappa: self.kappa,
            beta: self.beta,
            omega_star: self.omega_star,
            e_star: self.e_star,
            p_rated: self.p_rated,
            q_rated: self.q_rated,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Empty,
    Ring,
    Chain,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTopology {
    pub topology: Topology,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

/// Adjacency matrix, given explicitly or by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Explicit(Vec<Vec<f64>>),
    Named(NamedTopology),
}

impl MatrixSpec {
    fn expand(&self, n: usize) -> Vec<Vec<f64>> {
        match self {
            MatrixSpec::Explicit(rows) => rows.clone(),
            MatrixSpec::Named(t) => {
                let g = match t.topology {
                    Topology::Empty => CommGraph::empty(n),
                    Topology::Ring => CommGraph::ring(n, t.weight),
                    Topology::Chain => CommGraph::chain(n, t.weight),
                    Topology::Complete => CommGraph::complete(n, t.weight),
                };
                let w = g.weights();
                (0..n)
                    .map(|i| (0..n).map(|j| w[(i, j)]).collect())
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommSection {
    #[serde(default, skip_serializing_if = "is_false")]
    pub directed: bool,
    /// Frequency layer.
    pub a: MatrixSpec,
    /// Voltage layer.
    pub b: MatrixSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerSpec {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventSpec {
    EnableSecondary {
        t: f64,
    },
    DisableSecondary {
        t: f64,
    },
    LoadSet {
        t: f64,
        bus: u32,
        load: LoadSpec,
    },
    CommLinkSet {
        t: f64,
        layer: LayerSpec,
        i: u32,
        j: u32,
        weight: f64,
    },
    DgPlugOut {
        t: f64,
        bus: u32,
    },
    DgPlugIn {
        t: f64,
        bus: u32,
    },
}

impl EventSpec {
    pub fn t(&self) -> f64 {
        match self {
            EventSpec::EnableSecondary { t }
            | EventSpec::DisableSecondary { t }
            | EventSpec::LoadSet { t, .. }
            | EventSpec::CommLinkSet { t, .. }
            | EventSpec::DgPlugOut { t, .. }
            | EventSpec::DgPlugIn { t, .. } => *t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub sample_rate_hz: f64,
    pub tau_e: f64,
    pub max_step: f64,
    pub steady_tol: f64,
    pub steady_window: f64,
    pub horizon: f64,
    pub secondary_enabled: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimSettings::default();
        SimSection {
            t_end: s.t_end,
            rtol: s.rtol,
            atol: s.atol,
            sample_rate_hz: s.sample_rate_hz,
            tau_e: s.tau_e,
            max_step: s.max_step,
            steady_tol: s.steady_tol,
            steady_window: s.steady_window,
            horizon: s.horizon,
            secondary_enabled: false,
        }
    }
}

impl SimSection {
    fn settings(&self) -> SimSettings {
        SimSettings {
            t_end: self.t_end,
            rtol: self.rtol,
            atol: self.atol,
            sample_rate_hz: self.sample_rate_hz,
            tau_e: self.tau_e,
            max_step: self.max_step,
            steady_tol: self.steady_tol,
            steady_window: self.steady_window,
            horizon: self.horizon,
        }
    }
}

/// Default sweep for `trace` mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub gain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

fn json_message(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}

/// Prefix the field path of a validation error.
fn within(prefix: &str, e: Error) -> Error {
    match e {
        Error::Validation { field, reason } => {
            let sep = if field.starts_with('[') { "" } else { "." };
            Error::Validation {
                field: format!("{prefix}{sep}{field}"),
                reason,
            }
        }
        other => other,
    }
}

fn deserialize(text: &str) -> Result<ScenarioFile> {
    use serde_json::error::Category;
    let mut de = serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        match inner.classify() {
            Category::Data => Error::validation(
                if path == "." {
                    "<root>".to_string()
                } else {
                    path
                },
                json_message(&inner),
            ),
            _ => Error::Parse {
                line: inner.line(),
                column: inner.column(),
                message: json_message(&inner),
            },
        }
    })?;
    de.end().map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: json_message(&e),
    })?;
    Ok(file)
}

/// Parse, canonicalize and validate scenario text.
pub fn parse_scenario_str(text: &str) -> Result<ScenarioFile> {
    let mut file = deserialize(text)?;
    file.canonicalize()?;
    file.to_scenario()?;
    Ok(file)
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario_str(&text)
}

impl ScenarioFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario files always serialize")
    }

    fn bus_index(&self) -> HashMap<u32, usize> {
        self.network
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    fn e_star_of(&self, bus: u32) -> f64 {
        self.controllers
            .iter()
            .find(|c| c.bus == bus)
            .map_or(NOMINAL_VOLTAGE, |c| c.e_star)
    }

    /// Expand named topologies and convert power loads to admittances.
    pub fn canonicalize(&mut self) -> Result<()> {
        let n = self.network.buses.len();
        self.comm.a = MatrixSpec::Explicit(self.comm.a.expand(n));
        self.comm.b = MatrixSpec::Explicit(self.comm.b.expand(n));
        for i in 0..n {
            let bus = &self.network.buses[i];
            let field = format!("network.buses[{i}].load");
            let load = bus.load.to_load(self.e_star_of(bus.id), &field)?;
            self.network.buses[i].load = LoadSpec::admittance(load);
        }
        for k in 0..self.events.len() {
            if let EventSpec::LoadSet { bus, load, .. } = &self.events[k] {
                let e = self.e_star_of(*bus);
                let l = load.to_load(e, &format!("events[{k}].load"))?;
                if let EventSpec::LoadSet { load, .. } = &mut self.events[k] {
                    *load = LoadSpec::admittance(l);
                }
            }
        }
        Ok(())
    }

    fn graph(&self, spec: &MatrixSpec, field: &str) -> Result<CommGraph> {
        let n = self.network.buses.len();
        let rows = spec.expand(n);
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::validation(
                field,
                format!("expected a {n}x{n} matrix"),
            ));
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        CommGraph::new(m, self.comm.directed).map_err(|e| within(field, e))
    }

    /// Build the simulation scenario, checking every cross-reference.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let net = &self.network;
        if net.buses.is_empty() {
            return Err(Error::validation(
                "network.buses",
                "at least one DG bus is required",
            ));
        }
        if !(net.frequency_hz.is_finite() && net.frequency_hz > 0.0) {
            return Err(Error::validation(
                "network.frequency_hz",
                "must be positive",
            ));
        }
        let mut nodes: HashMap<u32, usize> = HashMap::new();
        for (i, b) in net.buses.iter().enumerate() {
            if nodes.insert(b.id, i).is_some() {
                return Err(Error::validation(
                    format!("network.buses[{i}].id"),
                    "duplicate id",
                ));
            }
        }
        let n = net.buses.len();
        for (i, j) in net.junctions.iter().enumerate() {
            if nodes.insert(j.id, n + i).is_some() {
                return Err(Error::validation(
                    format!("network.junctions[{i}].id"),
                    "duplicate id",
                ));
            }
        }
        let buses_idx = self.bus_index();

        let mut ctrls: Vec<Option<DgController>> = vec![None; n];
        for (k, c) in self.controllers.iter().enumerate() {
            let field = format!("controllers[{k}]");
            let Some(&i) = buses_idx.get(&c.bus) else {
                return Err(Error::validation(
                    format!("{field}.bus"),
                    format!("unknown bus {}", c.bus),
                ));
            };
            if ctrls[i].is_some() {
                return Err(Error::validation(
                    format!("{field}.bus"),
                    "bus already has a controller",
                ));
            }
            let ctrl = c.controller();
            ctrl.validate(&field)?;
            ctrls[i] = Some(ctrl);
        }
        let controllers = ctrls
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    Error::validation(
                        "controllers",
                        format!("no controller for bus {}", net.buses[i].id),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut buses = Vec::with_capacity(n);
        for (i, b) in net.buses.iter().enumerate() {
            let load = b
                .load
                .to_load(controllers[i].e_star, &format!("network.buses[{i}].load"))?;
            buses.push(Bus { id: b.id, load });
        }
        let junctions = net
            .junctions
            .iter()
            .map(|j| Junction {
                id: j.id,
                load_susceptance: j.load_susceptance,
            })
            .collect();
        let mut lines = Vec::with_capacity(net.lines.len());
        for (k, l) in net.lines.iter().enumerate() {
            let field = format!("network.lines[{k}]");
            let end = |id: u32, what: &str| {
                nodes.get(&id).copied().ok_or_else(|| {
                    Error::validation(format!("{field}.{what}"), format!("unknown node {id}"))
                })
            };
            let (from, to) = (end(l.from, "from")?, end(l.to, "to")?);
            if !(l.r.is_finite() && l.r >= 0.0) {
                return Err(Error::validation(
                    format!("{field}.r"),
                    "must be finite and nonnegative",
                ));
            }
            let mut line = match (l.l, l.x) {
                (Some(ind), None) => {
                    if !(ind.is_finite() && ind > 0.0) {
                        return Err(Error::validation(
                            format!("{field}.l"),
                            "must be finite and positive",
                        ));
                    }
                    Line::from_inductance(from, to, l.r, ind, net.frequency_hz)
                }
                (None, Some(x)) => Line {
                    resistance: l.r,
                    ..Line::new(from, to, x)
                },
                _ => return Err(Error::validation(field, "give exactly one of `l` or `x`")),
            };
            if !l.connected {
                line.status = LineStatus::Disconnected;
            }
            lines.push(line);
        }
        let network =
            NetworkModel::new(buses, junctions, lines).map_err(|e| within("network", e))?;

        let comm_a = self.graph(&self.comm.a, "comm.a")?;
        let comm_b = self.graph(&self.comm.b, "comm.b")?;

        let mut events = Vec::with_capacity(self.events.len());
        for (k, ev) in self.events.iter().enumerate() {
            let field = format!("events[{k}]");
            let bus = |id: u32, what: &str| {
                buses_idx.get(&id).copied().ok_or_else(|| {
                    Error::validation(format!("{field}.{what}"), format!("unknown bus {id}"))
                })
            };
            let kind = match ev {
                EventSpec::EnableSecondary { .. } => EventKind::EnableSecondary,
                EventSpec::DisableSecondary { .. } => EventKind::DisableSecondary,
                EventSpec::LoadSet { bus: b, load, .. } => {
                    let i = bus(*b, "bus")?;
                    EventKind::LoadSet {
                        bus: i,
                        load: load.to_load(controllers[i].e_star, &format!("{field}.load"))?,
                    }
                }
                EventSpec::CommLinkSet {
                    layer,
                    i,
                    j,
                    weight,
                    ..
                } => EventKind::CommLinkSet {
                    layer: match layer {
                        LayerSpec::A => Layer::A,
                        LayerSpec::B => Layer::B,
                    },
                    i: bus(*i, "i")?,
                    j: bus(*j, "j")?,
                    weight: *weight,
                },
                EventSpec::DgPlugOut { bus: b, .. } => EventKind::PlugOut {
                    bus: bus(*b, "bus")?,
                },
                EventSpec::DgPlugIn { bus: b, .. } => EventKind::PlugIn {
                    bus: bus(*b, "bus")?,
                },
            };
            events.push(ScenarioEvent { t: ev.t(), kind });
        }

        let scenario = Scenario {
            name: self.name.clone(),
            network,
            controllers,
            comm_a,
            comm_b,
            events,
            settings: self.sim.settings(),
            secondary_enabled: self.sim.secondary_enabled,
            initial: None,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
