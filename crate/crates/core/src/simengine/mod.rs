//! Closed-loop time simulation with timed events.
//!
//! The state of every active DG is `(θ_i, E_i, Ω_i, e_i)`, with angles taken
//! in a frame rotating at ω*. Between events the parameters are constant and
//! the network is reduced once per segment into a [`Configuration`].

pub mod ode;

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::control::{dapi_frequency_rhs, dapi_voltage_rhs, CommGraph, DgController};
use crate::error::{Error, Result};
use crate::netmodel::{Grid, Load, NetworkModel};
use crate::powerflow::injections_into;

use ode::{Dopri5, Tolerances};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    /// Frequency layer, weights `a_ij`.
    A,
    /// Voltage layer, weights `b_ij`.
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    EnableSecondary,
    DisableSecondary,
    LoadSet {
        bus: usize,
        load: Load,
    },
    CommLinkSet {
        layer: Layer,
        i: usize,
        j: usize,
        weight: f64,
    },
    PlugOut {
        bus: usize,
    },
    PlugIn {
        bus: usize,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::EnableSecondary => "enable-secondary",
            EventKind::DisableSecondary => "disable-secondary",
            EventKind::LoadSet { .. } => "load-set",
            EventKind::CommLinkSet { .. } => "comm-link-set",
            EventKind::PlugOut { .. } => "dg-plug-out",
            EventKind::PlugIn { .. } => "dg-plug-in",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioEvent {
    pub t: f64,
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimSettings {
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub sample_rate_hz: f64,
    /// Voltage low-pass time constant.
    pub tau_e: f64,
    pub max_step: f64,
    pub steady_tol: f64,
    pub steady_window: f64,
    pub horizon: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            t_end: 50.0,
            rtol: 1e-9,
            atol: 1e-9,
            sample_rate_hz: 100.0,
            tau_e: 1.0,
            max_step: 0.05,
            steady_tol: 1e-9,
            steady_window: 1.0,
            horizon: 600.0,
        }
    }
}

impl SimSettings {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            rtol: self.rtol,
            atol: self.atol,
        }
    }

    /// Same settings with both integrator tolerances multiplied by `factor`.
    pub fn with_tolerance_scale(&self, factor: f64) -> Self {
        SimSettings {
            rtol: self.rtol * factor,
            atol: self.atol * factor,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub t: f64,
    pub theta: Vec<f64>,
    pub e_mag: Vec<f64>,
    pub omega_sec: Vec<f64>,
    pub e_sec: Vec<f64>,
    pub active: Vec<bool>,
}

impl SystemState {
    /// θ = 0, E = E*, Ω = e = 0, every DG active.
    pub fn flat(ctrls: &[DgController]) -> Self {
        let n = ctrls.len();
        SystemState {
            t: 0.0,
            theta: vec![0.0; n],
            e_mag: ctrls.iter().map(|c| c.e_star).collect(),
            omega_sec: vec![0.0; n],
            e_sec: vec![0.0; n],
            active: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub network: NetworkModel,
    pub controllers: Vec<DgController>,
    pub comm_a: CommGraph,
    pub comm_b: CommGraph,
    pub events: Vec<ScenarioEvent>,
    pub settings: SimSettings,
    pub secondary_enabled: bool,
    pub initial: Option<SystemState>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let n = self.network.bus_count();
        if self.controllers.len() != n {
            return Err(Error::validation(
                "controllers",
                format!("expected {n} controllers, got {}", self.controllers.len()),
            ));
        }
        for (i, c) in self.controllers.iter().enumerate() {
            c.validate(&format!("controllers[{i}]"))?;
            if c.omega_star != self.controllers[0].omega_star {
                return Err(Error::validation(
                    format!("controllers[{i}].omega_star"),
                    "all DGs must share the nominal frequency",
                ));
            }
        }
        for (name, g) in [("comm.a", &self.comm_a), ("comm.b", &self.comm_b)] {
            if g.len() != n {
                return Err(Error::validation(
                    name,
                    format!("matrix is {}x{}, expected {n}x{n}", g.len(), g.len()),
                ));
            }
        }
        let s = &self.settings;
        let positive = [
            ("sim.rtol", s.rtol),
            ("sim.atol", s.atol),
            ("sim.sample_rate_hz", s.sample_rate_hz),
            ("sim.tau_e", s.tau_e),
            ("sim.max_step", s.max_step),
            ("sim.steady_tol", s.steady_tol),
            ("sim.steady_window", s.steady_window),
            ("sim.horizon", s.horizon),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(
                    field,
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if !(s.t_end.is_finite() && s.t_end >= 0.0) {
            return Err(Error::validation("sim.t_end", "must be nonnegative"));
        }
        if let Some(init) = &self.initial {
            let ok = [
                init.theta.len(),
                init.e_mag.len(),
                init.omega_sec.len(),
                init.e_sec.len(),
                init.active.len(),
            ]
            .iter()
            .all(|&l| l == n);
            if !ok {
                return Err(Error::validation(
                    "initial",
                    "state vectors must match the bus count",
                ));
            }
        }

        let mut active = match &self.initial {
            Some(s) => s.active.clone(),
            None => vec![true; n],
        };
        let mut prev: Option<&ScenarioEvent> = None;
        for (k, ev) in self.events.iter().enumerate() {
            let field = format!("events[{k}]");
            if !(ev.t.is_finite() && ev.t >= 0.0) {
                return Err(Error::validation(
                    format!("{field}.t"),
                    "event time must be nonnegative",
                ));
            }
            if ev.t > s.t_end {
                return Err(Error::validation(
                    format!("{field}.t"),
                    "event time exceeds sim.t_end",
                ));
            }
            if let Some(p) = prev {
                if ev.t < p.t {
                    return Err(Error::validation(
                        format!("{field}.t"),
                        "events must be sorted by time",
                    ));
                }
                if ev.t == p.t && p.kind.name() != ev.kind.name() {
                    return Err(Error::validation(
                        format!("{field}.t"),
                        "simultaneous events must be of the same kind",
                    ));
                }
            }
            prev = Some(ev);
            let check_bus = |b: usize, what: &str| -> Result<()> {
                if b >= n {
                    Err(Error::validation(format!("{field}.{what}"), "unknown bus"))
                } else {
                    Ok(())
                }
            };
            match &ev.kind {
                EventKind::EnableSecondary | EventKind::DisableSecondary => {}
                EventKind::LoadSet { bus, load } => {
                    check_bus(*bus, "bus")?;
                    if !(load.conductance >= 0.0 && load.susceptance >= 0.0)
                        || !load.conductance.is_finite()
                        || !load.susceptance.is_finite()
                    {
                        return Err(Error::validation(field, "load terms must be nonnegative"));
                    }
                }
                EventKind::CommLinkSet { i, j, weight, .. } => {
                    check_bus(*i, "i")?;
                    check_bus(*j, "j")?;
                    if i == j {
                        return Err(Error::validation(field, "link endpoints must differ"));
                    }
                    if !(weight.is_finite() && *weight >= 0.0) {
                        return Err(Error::validation(
                            format!("{field}.weight"),
                            "must be nonnegative",
                        ));
                    }
                }
                EventKind::PlugOut { bus } => {
                    check_bus(*bus, "bus")?;
                    if !active[*bus] {
                        return Err(Error::validation(field, "DG is already plugged out"));
                    }
                    active[*bus] = false;
                    if !active.iter().any(|&a| a) {
                        return Err(Error::validation(field, "no active DG would remain"));
                    }
                }
                EventKind::PlugIn { bus } => {
                    check_bus(*bus, "bus")?;
                    if active[*bus] {
                        return Err(Error::validation(field, "plug-in requires an inactive DG"));
                    }
                    active[*bus] = true;
                }
            }
        }
        Ok(())
    }

    pub fn with_settings(&self, settings: SimSettings) -> Self {
        Scenario {
            settings,
            ..self.clone()
        }
    }
}

/// Parameters frozen over one event-free segment, restricted to active DGs.
#[derive(Clone, Debug)]
pub struct Configuration {
    idx: Vec<usize>,
    n_total: usize,
    grid: Grid,
    ctrls: Vec<DgController>,
    graph_a: CommGraph,
    graph_b: CommGraph,
    secondary: bool,
    tau_e: f64,
}

impl Configuration {
    pub fn new(
        network: &NetworkModel,
        ctrls: &[DgController],
        graph_a: &CommGraph,
        graph_b: &CommGraph,
        active: &[bool],
        secondary: bool,
        tau_e: f64,
    ) -> Result<Self> {
        let idx: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
        if idx.is_empty() {
            return Err(Error::Parameter("no active DG".into()));
        }
        let grid = network.reduce(active)?;
        Ok(Configuration {
            n_total: active.len(),
            grid,
            ctrls: idx.iter().map(|&i| ctrls[i].clone()).collect(),
            graph_a: graph_a.restrict(&idx),
            graph_b: graph_b.restrict(&idx),
            secondary,
            tau_e,
            idx,
        })
    }

    pub fn active_indices(&self) -> &[usize] {
        &self.idx
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn controllers(&self) -> &[DgController] {
        &self.ctrls
    }

    pub fn graph_a(&self) -> &CommGraph {
        &self.graph_a
    }

    pub fn graph_b(&self) -> &CommGraph {
        &self.graph_b
    }

    pub fn secondary(&self) -> bool {
        self.secondary
    }

    pub fn tau_e(&self) -> f64 {
        self.tau_e
    }

    /// Number of active DGs.
    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn dim(&self) -> usize {
        4 * self.idx.len()
    }

    /// Stack `[θ, E, Ω, e]` of the active DGs.
    pub fn pack(&self, s: &SystemState) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.dim());
        for v in [&s.theta, &s.e_mag, &s.omega_sec, &s.e_sec] {
            y.extend(self.idx.iter().map(|&i| v[i]));
        }
        y
    }

    pub fn unpack(&self, y: &[f64], s: &mut SystemState) {
        let n = self.idx.len();
        for (a, &i) in self.idx.iter().enumerate() {
            s.theta[i] = y[a];
            s.e_mag[i] = y[n + a];
            s.omega_sec[i] = y[2 * n + a];
            s.e_sec[i] = y[3 * n + a];
        }
    }

    /// Closed-loop vector field on the stacked state.
    pub fn rhs(&self, y: &[f64], dy: &mut [f64]) {
        let n = self.idx.len();
        let (theta, rest) = y.split_at(n);
        let (e, rest) = rest.split_at(n);
        let (om, es) = rest.split_at(n);
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        injections_into(&self.grid, theta, e, &mut p, &mut q);
        let mut omega = vec![0.0; n];
        for (i, c) in self.ctrls.iter().enumerate() {
            omega[i] = c.droop_frequency(p[i], om[i]);
            dy[i] = omega[i] - c.omega_star;
            dy[n + i] = (c.droop_voltage(q[i], es[i]) - e[i]) / self.tau_e;
        }
        if self.secondary {
            let d_om = dapi_frequency_rhs(&self.ctrls, &self.graph_a, &omega, om);
            let d_e = dapi_voltage_rhs(&self.ctrls, &self.graph_b, e, &q, es);
            dy[2 * n..3 * n].copy_from_slice(&d_om);
            dy[3 * n..].copy_from_slice(&d_e);
        } else {
            dy[2 * n..].fill(0.0);
        }
    }

    /// Gershgorin bound on the spectral radius of the vector field's
    /// Jacobian at `y`, from central differences.
    pub fn spectral_bound(&self, y: &[f64]) -> f64 {
        let d = y.len();
        let mut rows = vec![0.0; d];
        let mut yp = y.to_vec();
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for c in 0..d {
            let h = 1e-6 * y[c].abs().max(1.0);
            yp[c] = y[c] + h;
            self.rhs(&yp, &mut fp);
            yp[c] = y[c] - h;
            self.rhs(&yp, &mut fm);
            yp[c] = y[c];
            for r in 0..d {
                rows[r] += ((fp[r] - fm[r]) / (2.0 * h)).abs();
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    /// Largest derivative magnitude once the common angle drift is removed.
    pub fn residual(&self, dy: &[f64]) -> f64 {
        let n = self.idx.len();
        let drift = dy[0];
        let angles = dy[..n].iter().map(|d| (d - drift).abs());
        angles
            .chain(dy[n..].iter().map(|d| d.abs()))
            .fold(0.0, f64::max)
    }

    /// Output sample over all DGs; inactive DGs read as NaN.
    pub fn sample(&self, t: f64, y: &[f64]) -> Sample {
        let n = self.idx.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        injections_into(&self.grid, &y[..n], &y[n..2 * n], &mut p, &mut q);
        let mut s = Sample::blank(t, self.n_total);
        for (a, &i) in self.idx.iter().enumerate() {
            let c = &self.ctrls[a];
            s.freq_hz[i] = c.droop_frequency(p[a], y[2 * n + a]) / (2.0 * PI);
            s.e_mag[i] = y[n + a];
            s.p[i] = p[a];
            s.q[i] = q[a];
            s.omega_sec[i] = y[2 * n + a];
            s.e_sec[i] = y[3 * n + a];
        }
        s
    }
}

/// Derivative of a full [`SystemState`], zero for inactive DGs.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDerivative {
    pub theta: Vec<f64>,
    pub e_mag: Vec<f64>,
    pub omega_sec: Vec<f64>,
    pub e_sec: Vec<f64>,
}

pub fn closed_loop_rhs(
    network: &NetworkModel,
    ctrls: &[DgController],
    graph_a: &CommGraph,
    graph_b: &CommGraph,
    state: &SystemState,
    secondary_enabled: bool,
    tau_e: f64,
) -> Result<StateDerivative> {
    let cfg = Configuration::new(
        network,
        ctrls,
        graph_a,
        graph_b,
        &state.active,
        secondary_enabled,
        tau_e,
    )?;
    let y = cfg.pack(state);
    if let Some(i) = y[cfg.len()..2 * cfg.len()].iter().position(|&e| !(e > 0.0)) {
        return Err(Error::Domain(format!(
            "voltage magnitude of DG {} is not positive",
            network.buses()[cfg.idx[i]].id
        )));
    }
    let mut dy = vec![0.0; y.len()];
    cfg.rhs(&y, &mut dy);
    let n = state.len();
    let mut d = SystemState {
        t: state.t,
        theta: vec![0.0; n],
        e_mag: vec![0.0; n],
        omega_sec: vec![0.0; n],
        e_sec: vec![0.0; n],
        active: state.active.clone(),
    };
    cfg.unpack(&dy, &mut d);
    Ok(StateDerivative {
        theta: d.theta,
        e_mag: d.e_mag,
        omega_sec: d.omega_sec,
        e_sec: d.e_sec,
    })
}

/// One recorded row. Frequencies are in Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub freq_hz: Vec<f64>,
    pub e_mag: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub omega_sec: Vec<f64>,
    pub e_sec: Vec<f64>,
}

impl Sample {
    fn blank(t: f64, n: usize) -> Self {
        let nan = vec![f64::NAN; n];
        Sample {
            t,
            freq_hz: nan.clone(),
            e_mag: nan.clone(),
            p: nan.clone(),
            q: nan.clone(),
            omega_sec: nan.clone(),
            e_sec: nan,
        }
    }

    pub fn len(&self) -> usize {
        self.freq_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq_hz.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoggedEvent {
    pub t: f64,
    pub text: String,
}

impl fmt::Display for LoggedEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} {}", self.t, self.text)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub bus_ids: Vec<u32>,
    pub samples: Vec<Sample>,
    pub events: Vec<LoggedEvent>,
    pub final_state: Option<SystemState>,
}

pub fn csv_header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for (name, unit) in [
        ("omega", "[Hz]"),
        ("E", "[V]"),
        ("P", "[W]"),
        ("Q", "[VAr]"),
        ("Omega", ""),
        ("e", ""),
    ] {
        cols.extend((1..=n).map(|i| format!("{name}_{i}{unit}")));
    }
    cols.join(",")
}

impl Trajectory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", csv_header(self.bus_ids.len())).map_err(io)?;
        for s in &self.samples {
            let mut row = format!("{}", s.t);
            for v in [&s.freq_hz, &s.e_mag, &s.p, &s.q, &s.omega_sec, &s.e_sec] {
                for x in v {
                    row.push(',');
                    row.push_str(&format!("{x}"));
                }
            }
            writeln!(w, "{row}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn write_events(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for e in &self.events {
            text.push_str(&e.to_string());
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Last sample recorded strictly before `t` (the pre-event sample when
    /// `t` is an event time).
    pub fn sample_before(&self, t: f64) -> Option<&Sample> {
        let mut best = None;
        for (k, s) in self.samples.iter().enumerate() {
            if s.t < t || (s.t == t && self.samples.get(k + 1).is_some_and(|n| n.t == t)) {
                best = Some(s);
            } else if s.t > t {
                break;
            }
        }
        best
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }
}

/// Mutable run state: parameters as modified by events plus the DG states.
struct Runner<'a> {
    scenario: &'a Scenario,
    network: NetworkModel,
    graph_a: CommGraph,
    graph_b: CommGraph,
    secondary: bool,
    state: SystemState,
    config: Configuration,
    stepper: Dopri5,
}

impl<'a> Runner<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        scenario.validate()?;
        let state = scenario
            .initial
            .clone()
            .unwrap_or_else(|| SystemState::flat(&scenario.controllers));
        let config = Configuration::new(
            &scenario.network,
            &scenario.controllers,
            &scenario.comm_a,
            &scenario.comm_b,
            &state.active,
            scenario.secondary_enabled,
            scenario.settings.tau_e,
        )?;
        let y = config.pack(&state);
        let stepper = Dopri5::new(
            state.t,
            y,
            scenario.settings.tolerances(),
            scenario.settings.max_step,
        );
        Ok(Runner {
            scenario,
            network: scenario.network.clone(),
            graph_a: scenario.comm_a.clone(),
            graph_b: scenario.comm_b.clone(),
            secondary: scenario.secondary_enabled,
            state,
            config,
            stepper,
        })
    }

    fn rhs_closure(config: &Configuration) -> impl FnMut(f64, &[f64], &mut [f64]) + '_ {
        move |_t, y, dy| config.rhs(y, dy)
    }

    fn advance_to(&mut self, t: f64) -> Result<()> {
        let mut f = Self::rhs_closure(&self.config);
        self.stepper.advance(&mut f, t, |_, _, _| false)?;
        Ok(())
    }

    fn sync_state(&mut self) {
        self.config.unpack(&self.stepper.y, &mut self.state);
        self.state.t = self.stepper.t;
    }

    fn sample(&self) -> Sample {
        self.config.sample(self.stepper.t, &self.stepper.y)
    }

    fn describe(&self, kind: &EventKind) -> String {
        let id = |b: usize| self.network.buses()[b].id;
        match kind {
            EventKind::EnableSecondary | EventKind::DisableSecondary => kind.name().to_string(),
            EventKind::LoadSet { bus, load } => format!(
                "{} bus={} conductance={} susceptance={}",
                kind.name(),
                id(*bus),
                load.conductance,
                load.susceptance
            ),
            EventKind::CommLinkSet {
                layer,
                i,
                j,
                weight,
            } => format!(
                "{} layer={:?} i={} j={} weight={}",
                kind.name(),
                layer,
                id(*i),
                id(*j),
                weight
            ),
            EventKind::PlugOut { bus } | EventKind::PlugIn { bus } => {
                format!("{} bus={}", kind.name(), id(*bus))
            }
        }
    }

    fn apply(&mut self, kind: &EventKind) -> Result<()> {
        self.sync_state();
        match kind {
            EventKind::EnableSecondary => self.secondary = true,
            EventKind::DisableSecondary => self.secondary = false,
            EventKind::LoadSet { bus, load } => {
                self.network = self.network.with_load(*bus, *load)?;
            }
            EventKind::CommLinkSet {
                layer,
                i,
                j,
                weight,
            } => {
                let g = match layer {
                    Layer::A => &mut self.graph_a,
                    Layer::B => &mut self.graph_b,
                };
                *g = g.with_link(*i, *j, *weight)?;
            }
            EventKind::PlugOut { bus } => {
                self.state.active[*bus] = false;
            }
            EventKind::PlugIn { bus } => {
                let b = *bus;
                self.state.active[b] = true;
                let probe = self.build_config()?;
                let pos = probe
                    .idx
                    .iter()
                    .position(|&i| i == b)
                    .expect("plugged bus is active");
                let row = probe.grid.coupling().row(pos);
                let mut wsum = 0.0;
                let mut acc = 0.0;
                for (a, &i) in probe.idx.iter().enumerate() {
                    if i != b && row[a] > 0.0 {
                        wsum += row[a];
                        acc += row[a] * self.state.theta[i];
                    }
                }
                self.state.theta[b] = if wsum > 0.0 { acc / wsum } else { 0.0 };
                self.state.e_mag[b] = self.scenario.controllers[b].e_star;
                self.state.omega_sec[b] = 0.0;
                self.state.e_sec[b] = 0.0;
            }
        }
        self.config = self.build_config()?;
        let y = self.config.pack(&self.state);
        self.stepper.reset(self.state.t, y);
        Ok(())
    }

    fn build_config(&self) -> Result<Configuration> {
        Configuration::new(
            &self.network,
            &self.scenario.controllers,
            &self.graph_a,
            &self.graph_b,
            &self.state.active,
            self.secondary,
            self.scenario.settings.tau_e,
        )
    }
}

/// Run the scenario to `t_end`, sampling at the configured rate. At an event
/// time both the pre- and post-event samples are recorded.
pub fn integrate(scenario: &Scenario) -> Result<Trajectory> {
    let mut run = Runner::new(scenario)?;
    let settings = &scenario.settings;
    let mut traj = Trajectory {
        bus_ids: scenario.network.buses().iter().map(|b| b.id).collect(),
        ..Default::default()
    };
    let t0 = run.stepper.t;
    let mut k: u64 = 0;
    let sample_time = |k: u64| t0 + k as f64 / settings.sample_rate_hz;

    let mut emit_until = |run: &mut Runner, traj: &mut Trajectory, stop: f64| -> Result<bool> {
        let mut hit = false;
        while sample_time(k) <= stop {
            let ts = sample_time(k);
            run.advance_to(ts)?;
            traj.samples.push(run.sample());
            hit = ts == stop;
            k += 1;
        }
        run.advance_to(stop)?;
        Ok(hit)
    };

    let mut e = 0;
    while e < scenario.events.len() {
        let te = scenario.events[e].t;
        if !emit_until(&mut run, &mut traj, te)? {
            traj.samples.push(run.sample());
        }
        while e < scenario.events.len() && scenario.events[e].t == te {
            let kind = &scenario.events[e].kind;
            traj.events.push(LoggedEvent {
                t: te,
                text: run.describe(kind),
            });
            run.apply(kind)?;
            e += 1;
        }
        traj.samples.push(run.sample());
    }
    emit_until(&mut run, &mut traj, settings.t_end)?;
    run.sync_state();
    traj.final_state = Some(run.state.clone());
    Ok(traj)
}

/// Configuration in force after every event of the scenario, obtained by
/// replaying the parameter and topology changes without integrating.
pub fn final_configuration(scenario: &Scenario) -> Result<Configuration> {
    scenario.validate()?;
    let mut network = scenario.network.clone();
    let mut graph_a = scenario.comm_a.clone();
    let mut graph_b = scenario.comm_b.clone();
    let mut secondary = scenario.secondary_enabled;
    let mut active = scenario.initial.as_ref().map_or_else(
        || vec![true; scenario.controllers.len()],
        |s| s.active.clone(),
    );
    for ev in &scenario.events {
        match &ev.kind {
            EventKind::EnableSecondary => secondary = true,
            EventKind::DisableSecondary => secondary = false,
            EventKind::LoadSet { bus, load } => network = network.with_load(*bus, *load)?,
            EventKind::CommLinkSet {
                layer,
                i,
                j,
                weight,
            } => {
                let g = match layer {
                    Layer::A => &mut graph_a,
                    Layer::B => &mut graph_b,
                };
                *g = g.with_link(*i, *j, *weight)?;
            }
            EventKind::PlugOut { bus } => active[*bus] = false,
            EventKind::PlugIn { bus } => active[*bus] = true,
        }
    }
    Configuration::new(
        &network,
        &scenario.controllers,
        &graph_a,
        &graph_b,
        &active,
        secondary,
        scenario.settings.tau_e,
    )
}

/// Dormand–Prince stability interval on the negative real axis, with margin.
const STABILITY_INTERVAL: f64 = 3.0;

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub state: SystemState,
    pub config: Configuration,
    pub residual: f64,
}

impl SteadyState {
    pub fn sample(&self) -> Sample {
        self.config
            .sample(self.state.t, &self.config.pack(&self.state))
    }
}

/// Apply every event, then integrate until the residual stays below `tol`
/// for `window` seconds. Fails with [`Error::NoConvergence`] past the
/// scenario horizon or when the trajectory diverges first.
pub fn steady_state(scenario: &Scenario, window: f64, tol: f64) -> Result<SteadyState> {
    let mut run = Runner::new(scenario)?;
    for ev in &scenario.events {
        run.advance_to(ev.t)?;
        run.apply(&ev.kind)?;
    }
    let horizon = scenario.settings.horizon;
    let mut quiet_since: Option<f64> = None;
    let mut last_residual = f64::INFINITY;
    {
        let cfg = &run.config;
        let mut dy0 = vec![0.0; cfg.dim()];
        cfg.rhs(&run.stepper.y, &mut dy0);
        last_residual = last_residual.min(cfg.residual(&dy0));
        if last_residual < tol {
            quiet_since = Some(run.stepper.t);
        }
    }
    let cfg = run.config.clone();
    // Explicit steps hovering at the stability boundary leave noise far above
    // the residual tolerance, so stay inside the stability interval.
    let bound = cfg.spectral_bound(&run.stepper.y);
    if bound > 0.0 {
        run.stepper
            .set_max_step(scenario.settings.max_step.min(STABILITY_INTERVAL / bound));
    }
    let mut f = Runner::rhs_closure(&cfg);
    let outcome = run.stepper.advance(&mut f, horizon, |t, _y, dy| {
        let r = cfg.residual(dy);
        last_residual = r;
        if r < tol {
            let since = *quiet_since.get_or_insert(t);
            t - since >= window
        } else {
            quiet_since = None;
            false
        }
    });
    // A trajectory that blows up before the horizon has no steady state either.
    let done = match outcome {
        Err(Error::Numeric(_)) => false,
        other => other?,
    };
    if !done {
        return Err(Error::NoConvergence {
            horizon,
            residual: last_residual,
        });
    }
    run.sync_state();
    Ok(SteadyState {
        state: run.state.clone(),
        config: run.config.clone(),
        residual: last_residual,
    })
}
