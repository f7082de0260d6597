#![allow(dead_code)]

use dapigrid::cli::bundled;
use dapigrid::metrics::Metrics;
use dapigrid::simengine::{steady_state, EventKind, Scenario, SteadyState};

pub fn study(name: &str) -> Scenario {
    bundled::load(name)
        .unwrap_or_else(|| panic!("no bundled scenario {name}"))
        .and_then(|f| f.to_scenario())
        .unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Scenario keeping only the events at or before `t`.
pub fn up_to(sc: &Scenario, t: f64) -> Scenario {
    let mut s = sc.clone();
    s.events.retain(|e| e.t <= t);
    s
}

pub fn settle(sc: &Scenario) -> SteadyState {
    steady_state(sc, sc.settings.steady_window, sc.settings.steady_tol)
        .unwrap_or_else(|e| panic!("{}: {e}", sc.name))
}

/// Metrics at the steady state reached after every event.
pub fn steady_metrics(sc: &Scenario) -> Metrics {
    Metrics::of(&settle(sc).sample(), &sc.controllers)
}

/// Time from which secondary control is active, if ever.
pub fn activation_time(sc: &Scenario) -> Option<f64> {
    if sc.secondary_enabled {
        return Some(0.0);
    }
    sc.events
        .iter()
        .find(|e| e.kind == EventKind::EnableSecondary)
        .map(|e| e.t)
}

/// Start times of the event-free segments with secondary control active.
pub fn active_segments(sc: &Scenario) -> Vec<f64> {
    let Some(t0) = activation_time(sc) else {
        return vec![];
    };
    let mut starts = vec![t0];
    for e in &sc.events {
        if e.t > t0 && starts.last() != Some(&e.t) {
            starts.push(e.t);
        }
    }
    starts
}

pub const STUDIES: [&str; 7] = [
    "study1a", "study1b", "study1c", "study1d", "study2", "study3", "study4",
];
