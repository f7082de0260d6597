mod common;

use dapigrid::analysis::eigen::eigenvalues;
use dapigrid::analysis::jacobian::{jacobian_full, DEFAULT_STEP};
use dapigrid::analysis::trace::spectrum_at;
use dapigrid::analysis::{build_linear_voltage_system, check_stability_conditions, Gain};
use dapigrid::cli::scenario::parse_scenario_str;
use dapigrid::control::CommGraph;
use dapigrid::simengine::{final_configuration, steady_state, Scenario};
use dapigrid::Error;

use common::{settle, steady_metrics, study, STUDIES};

fn operating_point(name: &str) -> dapigrid::simengine::SteadyState {
    let mut sc = study(name);
    sc.events.retain(|e| e.kind.name() != "enable-secondary");
    sc.secondary_enabled = true;
    steady_state(&sc, sc.settings.steady_window, 1e-10).unwrap()
}

#[test]
fn jacobian_stable_under_step_doubling() {
    let op = operating_point("study1c");
    let a = jacobian_full(&op, DEFAULT_STEP).unwrap().full;
    let b = jacobian_full(&op, 2.0 * DEFAULT_STEP).unwrap().full;
    let scale = a.amax();
    let diff = (&a - &b).amax();
    assert!(diff / scale < 1e-4, "relative change {:.2e}", diff / scale);
}

#[test]
fn ungrounded_jacobian_has_rotation_mode() {
    let op = operating_point("study1d");
    let lin = jacobian_full(&op, DEFAULT_STEP).unwrap();
    let ev = eigenvalues(&lin.full).unwrap();
    let smallest = ev.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    assert!(
        smallest < 1e-6 * lin.full.amax(),
        "smallest |lambda| {smallest:.2e}"
    );
    let grounded = eigenvalues(&lin.grounded).unwrap();
    assert_eq!(grounded.len(), ev.len() - 1);
}

#[test]
fn study_operating_points_are_stable() {
    for name in STUDIES {
        let p = spectrum_at(&study(name)).unwrap();
        let top = p
            .eigenvalues
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        // The sharing-only tuning keeps one neutral voltage direction.
        let bound = if name == "study1a" { 1e-6 } else { 0.0 };
        assert!(top < bound, "{name}: max Re {top:.3e}");
    }
}

#[test]
fn conditions_hold_for_every_study() {
    for name in STUDIES.iter().copied().chain(["parallel2"]) {
        let cfg = final_configuration(&study(name)).unwrap();
        let sys =
            build_linear_voltage_system(cfg.grid(), cfg.controllers(), cfg.graph_b()).unwrap();
        let rep = check_stability_conditions(&sys).unwrap();
        assert!(rep.condition_w1, "{name}");
        // Without β or b there is no voltage secondary term in W2.
        let expect_w2 = !matches!(name, "study1a" | "parallel2");
        assert_eq!(rep.condition_w2, expect_w2, "{name}");
    }
}

#[test]
fn stiff_communication_breaks_w2_condition() {
    // Unequal ratings make L_b diag(1/Q*) nonsymmetric.
    let mut sc = study("parallel2");
    sc.controllers[1].q_rated = 100.0;
    sc.comm_b = CommGraph::chain(2, 1e4);
    let cfg = final_configuration(&sc).unwrap();
    let sys = build_linear_voltage_system(cfg.grid(), cfg.controllers(), cfg.graph_b()).unwrap();
    let rep = check_stability_conditions(&sys).unwrap();
    assert!(rep.condition_w1);
    assert!(!rep.condition_w2, "lambda_min {:.3e}", rep.lambda_min_w2);
}

fn sweep_metrics(base: &Scenario, gain: Gain, values: &[f64]) -> Vec<(f64, f64)> {
    values
        .iter()
        .map(|&v| {
            let m = steady_metrics(&gain.apply(base, v));
            (m.v_dev, m.q_spread)
        })
        .collect()
}

#[test]
fn voltage_gains_trade_regulation_against_sharing() {
    let base = study("study1c");
    let beta = sweep_metrics(&base, Gain::Beta, &[0.6, 1.2, 2.4]);
    for w in beta.windows(2) {
        assert!(w[1].0 < w[0].0, "beta: voltage deviation {beta:?}");
        assert!(w[1].1 > w[0].1, "beta: sharing spread {beta:?}");
    }
    let b = sweep_metrics(&base, Gain::B, &[90.0, 180.0, 360.0]);
    for w in b.windows(2) {
        assert!(w[1].0 > w[0].0, "b: voltage deviation {b:?}");
        assert!(w[1].1 < w[0].1, "b: sharing spread {b:?}");
    }
}

#[test]
fn pure_tunings_meet_their_objective() {
    let a = steady_metrics(&study("study1a"));
    let b = steady_metrics(&study("study1b"));
    assert!(a.q_spread < 5e-3);
    assert!(b.v_dev < 0.05);
}

#[test]
fn droop_only_ignores_secondary_gains() {
    let mut sc = study("study1c");
    sc.events.clear();
    sc.secondary_enabled = false;
    let s0 = settle(&sc).sample();
    let s1 = settle(&Gain::Beta.apply(&sc, 5.0)).sample();
    for i in 0..s0.len() {
        assert!((s0.freq_hz[i] - s1.freq_hz[i]).abs() < 1e-9);
        assert!((s0.e_mag[i] - s1.e_mag[i]).abs() < 1e-6);
    }
}

#[test]
fn unstable_tuning_times_out() {
    let text = r#"{
      "name": "unstable",
      "network": {
        "buses": [
          {"id": 1, "load": {"susceptance": 0.005}},
          {"id": 2, "load": {"susceptance": 0.007}},
          {"id": 3, "load": {"susceptance": 0.0023}},
          {"id": 4, "load": {"susceptance": 0.0068}}
        ],
        "lines": [
          {"from": 1, "to": 2, "x": 0.012},
          {"from": 1, "to": 4, "x": 0.03},
          {"from": 2, "to": 3, "x": 0.9}
        ]
      },
      "controllers": [
        {"bus": 1, "m": 0.0025, "n": 1.3e-4, "k": 1.7, "kappa": 0.055, "beta": 1.45, "p_rated": 1400, "q_rated": 1700},
        {"bus": 2, "m": 0.0025, "n": 3e-4, "k": 1.7, "kappa": 2.5, "beta": 0, "p_rated": 1400, "q_rated": 110},
        {"bus": 3, "m": 0.0025, "n": 1.1e-3, "k": 1.7, "kappa": 0.66, "beta": 0.4, "p_rated": 1400, "q_rated": 720},
        {"bus": 4, "m": 0.0025, "n": 1.4e-4, "k": 1.7, "kappa": 0.011, "beta": 0.05, "p_rated": 1400, "q_rated": 1260}
      ],
      "comm": {"a": {"topology": "ring"}, "b": {"topology": "complete", "weight": 2}},
      "sim": {"horizon": 60, "secondary_enabled": true}
    }"#;
    let sc = parse_scenario_str(text).unwrap().to_scenario().unwrap();
    let cfg = final_configuration(&sc).unwrap();
    let sys = build_linear_voltage_system(cfg.grid(), cfg.controllers(), cfg.graph_b()).unwrap();
    assert!(check_stability_conditions(&sys).unwrap().max_real > 0.0);
    match steady_state(&sc, 1.0, 1e-9) {
        Err(e @ Error::NoConvergence { .. }) => assert_eq!(e.exit_code(), 4),
        other => panic!("expected a timeout, got {:?}", other.map(|s| s.residual)),
    }
}
