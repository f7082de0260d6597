//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the
//! process exits nonzero if any criterion fails.

mod common;

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::time::Instant;

use dapigrid::analysis::eigen::{eigenvalues, multiset_distance};
use dapigrid::analysis::trace::readout::{
    damping_ratio, dominant_complex, dominant_real, reaches_real_axis, strictly_decreasing,
};
use dapigrid::analysis::trace::spectrum_at;
use dapigrid::analysis::{
    build_linear_voltage_system, check_stability_conditions, eigen_trace, pencil_roots,
    sufficiency_check, EigenTrace, Gain,
};
use dapigrid::cli::bundled;
use dapigrid::control::{CommGraph, NOMINAL_VOLTAGE};
use dapigrid::metrics::Metrics;
use dapigrid::powerflow::droop_steady_frequency;
use dapigrid::simengine::{final_configuration, Scenario};
use dapigrid::Result;

use common::{active_segments, settle, steady_metrics, study, up_to, STUDIES};

const FREQ_TOL_HZ: f64 = 1e-3;
const P_SHARING_REL_TOL: f64 = 5e-3;
const Q_SHARING_TOL: f64 = 5e-3;
const VOLTAGE_TOL: f64 = 0.05;
const ORDER_FACTOR: f64 = 10.0;
const EQUAL_SHARE_TOL: f64 = 1e-3;
const DROOP_FREQ_REL_TOL: f64 = 1e-6;
const DROOP_RUNTIME_S: f64 = 5.0;
const SUFFICIENCY_SEED: u64 = 20_140_128;
const SUFFICIENCY_DRAWS: usize = 1000;
const PENCIL_TOL: f64 = 1e-6;
const ROBUSTNESS_TOL: f64 = 1e-6;
const TOL_HALVING_REL: f64 = 1e-8;
const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
/// Two steady-state readouts closer than this (relative to their natural
/// scale) are not considered strictly ordered.
const RESOLUTION: f64 = TOL_HALVING_REL;

struct Check {
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Ctx {
    metrics: HashMap<String, Metrics>,
    traces: HashMap<Gain, EigenTrace>,
}

impl Ctx {
    fn metrics(&mut self, name: &str) -> Metrics {
        *self
            .metrics
            .entry(name.to_string())
            .or_insert_with(|| steady_metrics(&study(name)))
    }

    fn trace(&mut self, gain: Gain) -> Result<&EigenTrace> {
        if let Entry::Vacant(slot) = self.traces.entry(gain) {
            let base = study("study1c");
            slot.insert(eigen_trace(&base, gain, &gain.default_grid(&base))?);
        }
        Ok(&self.traces[&gain])
    }
}

fn strictly_between(x: f64, a: f64, b: f64, res: f64) -> bool {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    x > lo + res && x < hi - res
}

fn droop_frequency(_: &mut Ctx) -> Result<Check> {
    let start = Instant::now();
    let mut sc = study("study1c");
    sc.events.clear();
    sc.secondary_enabled = false;
    let ss = settle(&sc);
    let s = ss.sample();
    let grid = sc.network.reduce(&sc.network.all_active())?;
    let consumed: f64 = (0..s.len())
        .map(|i| grid.load_conductance()[i] * s.e_mag[i] * s.e_mag[i])
        .sum();
    let want = droop_steady_frequency(&sc.controllers, -consumed);
    let worst = s
        .freq_hz
        .iter()
        .map(|f| (2.0 * PI * f - want).abs() / want)
        .fold(0.0, f64::max);
    let elapsed = start.elapsed().as_secs_f64();
    Ok(Check {
        pass: worst < DROOP_FREQ_REL_TOL && elapsed < DROOP_RUNTIME_S,
        detail: format!("max relative error {worst:.2e}, runtime {elapsed:.2}s"),
    })
}

/// Worst frequency deviation and relative P-sharing spread over every
/// post-activation segment of a study.
fn regulation_over_segments(sc: &Scenario, from: Option<f64>) -> (f64, f64) {
    let mut worst = (0.0f64, 0.0f64);
    for t in active_segments(sc) {
        if from.is_some_and(|f| t < f) {
            continue;
        }
        let m = steady_metrics(&up_to(sc, t));
        worst.0 = worst.0.max(m.freq_dev_hz);
        worst.1 = worst.1.max(m.p_spread_rel);
    }
    worst
}

fn frequency_regulation(_: &mut Ctx) -> Result<Check> {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in STUDIES {
        let (f, p) = regulation_over_segments(&study(name), None);
        pass &= f < FREQ_TOL_HZ && p < P_SHARING_REL_TOL;
        parts.push(format!("{name} df={f:.1e}Hz dp={p:.1e}"));
    }
    Ok(Check {
        pass,
        detail: parts.join("; "),
    })
}

fn sharing_case(ctx: &mut Ctx) -> Result<Check> {
    let a = ctx.metrics("study1a");
    let b = ctx.metrics("study1b");
    Ok(Check {
        pass: a.q_spread < Q_SHARING_TOL && a.v_dev >= ORDER_FACTOR * b.v_dev,
        detail: format!(
            "1a Q spread {:.2e}, 1a max|E-E*| {:.4} V vs 1b {:.2e} V",
            a.q_spread, a.v_dev, b.v_dev
        ),
    })
}

fn regulation_case(ctx: &mut Ctx) -> Result<Check> {
    let a = ctx.metrics("study1a");
    let b = ctx.metrics("study1b");
    Ok(Check {
        pass: b.v_dev < VOLTAGE_TOL && b.q_spread >= ORDER_FACTOR * a.q_spread,
        detail: format!(
            "1b max|E-E*| {:.2e} V, 1b Q spread {:.4} vs 1a {:.2e}",
            b.v_dev, b.q_spread, a.q_spread
        ),
    })
}

fn compromise_ordering(ctx: &mut Ctx) -> Result<Check> {
    let a = ctx.metrics("study1a");
    let b = ctx.metrics("study1b");
    let v_res = RESOLUTION * NOMINAL_VOLTAGE;
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["study1c", "study1d"] {
        let m = ctx.metrics(name);
        let v_ok = strictly_between(m.v_dev, a.v_dev, b.v_dev, v_res);
        let q_ok = strictly_between(m.q_spread, a.q_spread, b.q_spread, RESOLUTION);
        pass &= v_ok && q_ok;
        parts.push(format!(
            "{name} voltage {:.4} V {} Q {:.2e} {}",
            m.v_dev,
            if v_ok { "between" } else { "NOT between" },
            m.q_spread,
            if q_ok { "between" } else { "NOT between" },
        ));
    }
    let c = ctx.metrics("study1c");
    let d = ctx.metrics("study1d");
    let improved = d.q_spread < c.q_spread - RESOLUTION;
    pass &= improved;
    parts.push(format!(
        "pure cases: voltage [{:.2e}, {:.4}] Q [{:.2e}, {:.4}]; 1d Q < 1c Q: {improved}",
        b.v_dev, a.v_dev, a.q_spread, b.q_spread
    ));
    Ok(Check {
        pass,
        detail: parts.join("; "),
    })
}

fn two_dg_sharing(_: &mut Ctx) -> Result<Check> {
    let base = study("parallel2");
    let q_of = |sc: &Scenario| {
        let s = settle(sc).sample();
        (s.q[0], s.q[1])
    };
    let mut primary = base.clone();
    primary.secondary_enabled = false;
    let (q1, q2) = q_of(&primary);

    let mut regulate = base.clone();
    regulate.secondary_enabled = true;
    regulate.controllers.iter_mut().for_each(|c| c.beta = 2.2);
    regulate.comm_b = CommGraph::empty(2);
    let (q1r, q2r) = q_of(&regulate);

    let mut share = base.clone();
    share.secondary_enabled = true;
    share.controllers.iter_mut().for_each(|c| c.beta = 0.0);
    share.comm_b = CommGraph::chain(2, 50.0);
    let (q1s, q2s) = q_of(&share);
    let rel = (q1s - q2s).abs() / q1s.abs().max(q2s.abs());

    Ok(Check {
        pass: q1 < q2 && q1r < q1 && q2r > q2 && rel < EQUAL_SHARE_TOL,
        detail: format!(
            "primary Q=({q1:.2}, {q2:.2}); regulation Q=({q1r:.2}, {q2r:.2}); sharing Q=({q1s:.2}, {q2s:.2}) rel diff {rel:.1e}"
        ),
    })
}

fn stability_conditions(_: &mut Ctx) -> Result<Check> {
    let sc = study("study1c");
    let cfg = final_configuration(&sc)?;
    let sys = build_linear_voltage_system(cfg.grid(), cfg.controllers(), cfg.graph_b())?;
    let rep = check_stability_conditions(&sys)?;
    let draws = sufficiency_check(SUFFICIENCY_SEED, SUFFICIENCY_DRAWS, 200 * SUFFICIENCY_DRAWS)?;
    Ok(Check {
        pass: rep.both()
            && rep.max_real < 0.0
            && draws.accepted == SUFFICIENCY_DRAWS
            && draws.counterexamples == 0,
        detail: format!(
            "1c lambda_min {:.3}/{:.3}, max Re {:.3}; {} admissible draws of {} tried, {} counterexamples (worst max Re {:.3e})",
            rep.lambda_min_w1,
            rep.lambda_min_w2,
            rep.max_real,
            draws.accepted,
            draws.attempted,
            draws.counterexamples,
            draws.worst_max_real
        ),
    })
}

/// Every configuration a bundled scenario passes through.
fn configurations(sc: &Scenario) -> Vec<Scenario> {
    let mut out = vec![up_to(sc, -1.0)];
    for e in &sc.events {
        out.push(up_to(sc, e.t));
    }
    out
}

fn pencil_equivalence(_: &mut Ctx) -> Result<Check> {
    let mut worst = 0.0f64;
    let mut count = 0;
    for name in bundled::names() {
        for sc in configurations(&study(name)) {
            let cfg = final_configuration(&sc)?;
            let sys = build_linear_voltage_system(cfg.grid(), cfg.controllers(), cfg.graph_b())?;
            let d = multiset_distance(&eigenvalues(&sys.w)?, &pencil_roots(&sys.w1, &sys.w2)?);
            worst = worst.max(d);
            count += 1;
        }
    }
    Ok(Check {
        pass: worst < PENCIL_TOL,
        detail: format!("{count} systems, largest multiset distance {worst:.2e}"),
    })
}

fn gain_traces(ctx: &mut Ctx) -> Result<Check> {
    let mut parts = Vec::new();
    let mut pass = true;

    let tr = ctx.trace(Gain::K)?;
    let a = match dominant_real(tr) {
        Some(b) => {
            let mags: Vec<f64> = b.iter().map(|z| z.re.abs()).collect();
            let ok = strictly_decreasing(&mags);
            parts.push(format!(
                "k: dominant real |Re| {:.3} -> {:.3} monotone {ok}",
                mags[0],
                mags[mags.len() - 1]
            ));
            ok && tr.warnings.is_empty()
        }
        None => false,
    };
    pass &= a;

    let tr = ctx.trace(Gain::Kappa)?;
    let b = match dominant_complex(tr) {
        Some(br) => {
            let ok = reaches_real_axis(&br);
            parts.push(format!(
                "kappa: dominant pair Im {:.3} -> {:.1e} real {ok}",
                br[0].im,
                br[br.len() - 1].im
            ));
            ok && tr.warnings.is_empty()
        }
        None => false,
    };
    pass &= b;

    for gain in [Gain::B, Gain::Beta] {
        let tr = ctx.trace(gain)?;
        let ok = match dominant_complex(tr) {
            Some(br) => {
                let zeta: Vec<f64> = br.iter().map(|&z| damping_ratio(z)).collect();
                let ok = strictly_decreasing(&zeta);
                parts.push(format!(
                    "{gain}: damping {:.3} -> {:.3} monotone {ok}",
                    zeta[0],
                    zeta[zeta.len() - 1]
                ));
                ok && tr.warnings.is_empty()
            }
            None => false,
        };
        pass &= ok;
    }
    Ok(Check {
        pass,
        detail: parts.join("; "),
    })
}

fn max_metric_difference(a: &Metrics, b: &Metrics) -> f64 {
    [
        (a.freq_dev_hz - b.freq_dev_hz).abs(),
        (a.p_spread - b.p_spread).abs(),
        (a.q_spread - b.q_spread).abs(),
        (a.v_dev - b.v_dev).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn robustness(ctx: &mut Ctx) -> Result<Check> {
    let d = ctx.metrics("study1d");
    let link = max_metric_difference(&ctx.metrics("study2"), &d);
    let hetero = max_metric_difference(&ctx.metrics("study3"), &d);
    let sc4 = study("study4");
    let reconnect = sc4
        .events
        .iter()
        .rev()
        .find(|e| e.kind.name() == "dg-plug-in")
        .map(|e| e.t);
    let (f, p) = regulation_over_segments(&sc4, reconnect);
    Ok(Check {
        pass: link < ROBUSTNESS_TOL
            && hetero < ROBUSTNESS_TOL
            && reconnect.is_some()
            && f < FREQ_TOL_HZ
            && p < P_SHARING_REL_TOL,
        detail: format!(
            "study2 vs 1d {link:.1e}; study3 vs 1d {hetero:.1e}; study4 after plug-in df={f:.1e}Hz dp={p:.1e}"
        ),
    })
}

/// Largest metric change relative to natural scales: f* for frequency,
/// the mean m_i P_i for active sharing, unity for Q/Q* and E* for voltage.
fn relative_change(a: &Metrics, b: &Metrics, f_star: f64, e_star: f64) -> f64 {
    [
        (a.freq_dev_hz - b.freq_dev_hz).abs() / f_star,
        (a.p_spread_rel - b.p_spread_rel).abs(),
        (a.q_spread - b.q_spread).abs(),
        (a.v_dev - b.v_dev).abs() / e_star,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn numerics(ctx: &mut Ctx) -> Result<Check> {
    let mut worst_tol = 0.0f64;
    for name in STUDIES.iter().copied().chain(["parallel2"]) {
        let sc = study(name);
        let base = ctx.metrics(name);
        let fine = steady_metrics(&sc.with_settings(sc.settings.with_tolerance_scale(0.5)));
        let c = &sc.controllers[0];
        worst_tol = worst_tol.max(relative_change(
            &base,
            &fine,
            c.omega_star / (2.0 * PI),
            c.e_star,
        ));
    }
    let mut worst_res = 0.0f64;
    let mut emitted = 0usize;
    for name in bundled::names() {
        let sc = study(name);
        let cfg = final_configuration(&sc)?;
        let sys = build_linear_voltage_system(cfg.grid(), cfg.controllers(), cfg.graph_b())?;
        let rep = check_stability_conditions(&sys)?;
        worst_res = worst_res.max(rep.max_residual);
        emitted += rep.eigenvalues.len();
        let p = spectrum_at(&sc)?;
        worst_res = worst_res.max(p.max_residual);
        emitted += p.eigenvalues.len();
    }
    for gain in [Gain::K, Gain::Kappa, Gain::Beta, Gain::B] {
        for p in &ctx.trace(gain)?.points {
            worst_res = worst_res.max(p.max_residual);
            emitted += p.eigenvalues.len();
        }
    }
    Ok(Check {
        pass: worst_tol < TOL_HALVING_REL && worst_res < EIGEN_RESIDUAL_TOL,
        detail: format!(
            "tolerance halving changes metrics by {worst_tol:.1e}; largest residual {worst_res:.1e} over {emitted} eigenvalues"
        ),
    })
}

type Criterion = fn(&mut Ctx) -> Result<Check>;

fn main() {
    let criteria: [(u32, &str, Criterion); 11] = [
        (1, "droop-only steady frequency", droop_frequency),
        (
            2,
            "frequency regulation and active sharing",
            frequency_regulation,
        ),
        (3, "sharing-only voltage tuning", sharing_case),
        (4, "regulation-only voltage tuning", regulation_case),
        (
            5,
            "compromise tunings ordered between pure cases",
            compromise_ordering,
        ),
        (6, "two-DG reactive sharing", two_dg_sharing),
        (7, "sufficient stability conditions", stability_conditions),
        (8, "direct and pencil spectra agree", pencil_equivalence),
        (9, "qualitative eigenvalue traces", gain_traces),
        (10, "robustness studies", robustness),
        (11, "integrator and eigensolver accuracy", numerics),
    ];
    let mut ctx = Ctx::default();
    let mut failed = Vec::new();
    for (id, title, run) in criteria {
        let start = Instant::now();
        let (pass, detail) = match run(&mut ctx) {
            Ok(c) => (c.pass, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {verdict} {title}: {detail} [{:.1}s]",
            start.elapsed().as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed.len(),
        criteria.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
