//! Steady-state summary metrics of a recorded sample.
//!
//! Inactive DGs appear as NaN in a sample and are skipped.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use crate::control::DgController;
use crate::error::{Error, Result};
use crate::simengine::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    /// max_i |f_i − f*| in Hz.
    pub freq_dev_hz: f64,
    /// max − min of m_i P_i, in rad/s.
    pub p_spread: f64,
    /// `p_spread` relative to the mean of |m_i P_i|.
    pub p_spread_rel: f64,
    /// max_{i,j} |Q_i/Q_i* − Q_j/Q_j*|.
    pub q_spread: f64,
    /// max_i |E_i − E_i*| in volts.
    pub v_dev: f64,
}

fn spread(v: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

impl Metrics {
    pub fn of(sample: &Sample, ctrls: &[DgController]) -> Self {
        let live: Vec<usize> = (0..sample.len())
            .filter(|&i| !sample.freq_hz[i].is_nan())
            .collect();
        let f_star = |i: usize| ctrls[i].omega_star / (2.0 * PI);
        let freq_dev_hz = live
            .iter()
            .map(|&i| (sample.freq_hz[i] - f_star(i)).abs())
            .fold(0.0, f64::max);
        let mp: Vec<f64> = live.iter().map(|&i| ctrls[i].m * sample.p[i]).collect();
        let p_spread = spread(mp.iter().copied());
        let mean = if mp.is_empty() {
            0.0
        } else {
            mp.iter().map(|x| x.abs()).sum::<f64>() / mp.len() as f64
        };
        let p_spread_rel = if mean > 0.0 { p_spread / mean } else { 0.0 };
        let q_spread = spread(live.iter().map(|&i| sample.q[i] / ctrls[i].q_rated));
        let v_dev = live
            .iter()
            .map(|&i| (sample.e_mag[i] - ctrls[i].e_star).abs())
            .fold(0.0, f64::max);
        Metrics {
            freq_dev_hz,
            p_spread,
            p_spread_rel,
            q_spread,
            v_dev,
        }
    }

    /// Metrics of the last row of a trajectory CSV.
    pub fn from_csv(path: &Path, ctrls: &[DgController]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sample = last_csv_sample(&text, ctrls.len())?;
        Ok(Metrics::of(&sample, ctrls))
    }

    pub fn table(&self) -> String {
        [
            ("final frequency deviation [Hz]", self.freq_dev_hz),
            ("P-sharing spread max-min m_i P_i [rad/s]", self.p_spread),
            ("P-sharing spread relative to mean", self.p_spread_rel),
            ("Q-sharing spread max-min Q_i/Q_i*", self.q_spread),
            ("max |E_i - E*| [V]", self.v_dev),
        ]
        .iter()
        .map(|(k, v)| format!("{k:<42} {v:.6e}\n"))
        .collect()
    }
}

fn last_csv_sample(text: &str, n: usize) -> Result<Sample> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::validation("trajectory", "empty CSV"))?;
    let cols = header.split(',').count();
    if cols != 1 + 6 * n {
        return Err(Error::validation(
            "trajectory",
            format!("expected {} columns for {n} DGs, found {cols}", 1 + 6 * n),
        ));
    }
    let row = lines
        .next_back()
        .ok_or_else(|| Error::validation("trajectory", "no samples"))?;
    let v: Vec<f64> = row
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::validation("trajectory", format!("bad number: {e}")))?;
    if v.len() != cols {
        return Err(Error::validation("trajectory", "ragged row"));
    }
    let block = |k: usize| v[1 + k * n..1 + (k + 1) * n].to_vec();
    Ok(Sample {
        t: v[0],
        freq_hz: block(0),
        e_mag: block(1),
        p: block(2),
        q: block(3),
        omega_sec: block(4),
        e_sec: block(5),
    })
}
