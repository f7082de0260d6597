//! Dormand–Prince 5(4) explicit integrator with adaptive step size.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the fifth- and fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
// Proportional-integral step control damps step-size oscillation on stiff
// components near the stability boundary.
const PI_BETA: f64 = 0.04;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

/// Integrator state carried between calls to [`Dopri5::advance`].
#[derive(Clone, Debug)]
pub struct Dopri5 {
    tol: Tolerances,
    pub t: f64,
    pub y: Vec<f64>,
    h: f64,
    max_step: f64,
    k: [Vec<f64>; 7],
    fsal_valid: bool,
    scratch: Vec<f64>,
    y_new: Vec<f64>,
    err_prev: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl Dopri5 {
    pub fn new(t0: f64, y0: Vec<f64>, tol: Tolerances, max_step: f64) -> Self {
        let n = y0.len();
        Dopri5 {
            tol,
            t: t0,
            y: y0,
            h: 0.0,
            max_step,
            k: std::array::from_fn(|_| vec![0.0; n]),
            fsal_valid: false,
            scratch: vec![0.0; n],
            y_new: vec![0.0; n],
            err_prev: 1e-4,
            accepted: 0,
            rejected: 0,
        }
    }

    /// Replace the state after a discontinuity; the step size is kept.
    pub fn reset(&mut self, t: f64, y: Vec<f64>) {
        let n = y.len();
        if n != self.y.len() {
            self.k = std::array::from_fn(|_| vec![0.0; n]);
            self.scratch = vec![0.0; n];
            self.y_new = vec![0.0; n];
        }
        self.t = t;
        self.y = y;
        self.fsal_valid = false;
    }

    pub fn set_max_step(&mut self, max_step: f64) {
        self.max_step = max_step;
        self.h = self.h.min(max_step);
    }

    /// Derivative at the current point, valid after any accepted step.
    pub fn derivative(&mut self, f: &mut impl FnMut(f64, &[f64], &mut [f64])) -> &[f64] {
        if !self.fsal_valid {
            f(self.t, &self.y, &mut self.k[0]);
            self.fsal_valid = true;
        }
        &self.k[0]
    }

    fn error_norm(&self, y0: &[f64], y1: &[f64], err: &[f64]) -> f64 {
        let n = y0.len().max(1);
        let sum: f64 = (0..y0.len())
            .map(|i| {
                let sc = self.tol.atol + self.tol.rtol * y0[i].abs().max(y1[i].abs());
                let r = err[i] / sc;
                r * r
            })
            .sum();
        (sum / n as f64).sqrt()
    }

    fn initial_step(&mut self, f: &mut impl FnMut(f64, &[f64], &mut [f64])) -> f64 {
        let n = self.y.len().max(1) as f64;
        let scale = |v: f64, y: f64, tol: &Tolerances| v / (tol.atol + tol.rtol * y.abs());
        let d0 = (self
            .y
            .iter()
            .map(|&y| scale(y, y, &self.tol).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let d1 = (self
            .y
            .iter()
            .zip(&self.k[0])
            .map(|(&y, &dy)| scale(dy, y, &self.tol).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(self.max_step);
        for i in 0..self.y.len() {
            self.scratch[i] = self.y[i] + h0 * self.k[0][i];
        }
        f(self.t + h0, &self.scratch, &mut self.k[1]);
        let d2 = (self
            .y
            .iter()
            .enumerate()
            .map(|(i, &y)| scale(self.k[1][i] - self.k[0][i], y, &self.tol).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.max_step)
    }

    /// Integrate up to exactly `t_stop`. `on_step` runs after every accepted
    /// step with the new time, state and derivative; returning `true` stops
    /// the integration early.
    pub fn advance(
        &mut self,
        f: &mut impl FnMut(f64, &[f64], &mut [f64]),
        t_stop: f64,
        mut on_step: impl FnMut(f64, &[f64], &[f64]) -> bool,
    ) -> Result<bool> {
        let n = self.y.len();
        if n == 0 || t_stop <= self.t {
            self.t = self.t.max(t_stop);
            return Ok(false);
        }
        self.derivative(f);
        if self.h <= 0.0 {
            self.h = self.initial_step(f);
        }
        while self.t < t_stop {
            let remaining = t_stop - self.t;
            let mut h = self.h.min(self.max_step);
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            let h_min = 1e-14 * self.t.abs().max(1.0);
            if h < h_min && !last {
                let norm = self.y.iter().map(|v| v * v).sum::<f64>().sqrt();
                return Err(Error::Numeric(format!(
                    "step size underflow at t = {:.9} s (h = {h:.3e}, state norm {norm:.6e})",
                    self.t
                )));
            }
            self.stages(f, h);
            let err = {
                let mut e = vec![0.0; n];
                for i in 0..n {
                    e[i] = h
                        * (E1 * self.k[0][i]
                            + E3 * self.k[2][i]
                            + E4 * self.k[3][i]
                            + E5 * self.k[4][i]
                            + E6 * self.k[5][i]
                            + E7 * self.k[6][i]);
                }
                self.error_norm(&self.y, &self.y_new, &e)
            };
            if err.is_nan() || self.y_new.iter().any(|v| v.is_nan()) {
                return Err(Error::Numeric(format!(
                    "non-finite state at t = {:.9} s",
                    self.t
                )));
            }
            if !err.is_finite() {
                self.rejected += 1;
                self.h = h * MIN_FACTOR;
                continue;
            }
            if err <= 1.0 {
                self.t = if last { t_stop } else { self.t + h };
                std::mem::swap(&mut self.y, &mut self.y_new);
                self.k.swap(0, 6);
                self.accepted += 1;
                let factor = if err == 0.0 {
                    MAX_FACTOR
                } else {
                    let err = err.max(1e-10);
                    (SAFETY * err.powf(-0.2 + 0.75 * PI_BETA) * self.err_prev.powf(PI_BETA))
                        .clamp(MIN_FACTOR, MAX_FACTOR)
                };
                self.err_prev = err.max(1e-4);
                // A step shortened to hit t_stop says nothing about the
                // admissible size, so keep the previous proposal.
                if !last || h >= self.h {
                    self.h = h * factor;
                }
                if on_step(self.t, &self.y, &self.k[0]) {
                    return Ok(true);
                }
            } else {
                self.rejected += 1;
                self.h = h * (SAFETY * err.powf(-0.2 + 0.75 * PI_BETA)).clamp(MIN_FACTOR, 1.0);
            }
        }
        Ok(false)
    }

    fn stages(&mut self, f: &mut impl FnMut(f64, &[f64], &mut [f64]), h: f64) {
        let n = self.y.len();
        let t = self.t;
        let (y, k, s) = (&self.y, &mut self.k, &mut self.scratch);
        for i in 0..n {
            s[i] = y[i] + h * A21 * k[0][i];
        }
        f(t + C2 * h, s, &mut k[1]);
        for i in 0..n {
            s[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
        }
        f(t + C3 * h, s, &mut k[2]);
        for i in 0..n {
            s[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
        }
        f(t + C4 * h, s, &mut k[3]);
        for i in 0..n {
            s[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
        }
        f(t + C5 * h, s, &mut k[4]);
        for i in 0..n {
            s[i] = y[i]
                + h * (A61 * k[0][i]
                    + A62 * k[1][i]
                    + A63 * k[2][i]
                    + A64 * k[3][i]
                    + A65 * k[4][i]);
        }
        f(t + h, s, &mut k[5]);
        let y_new = &mut self.y_new;
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * k[0][i]
                    + A73 * k[2][i]
                    + A74 * k[3][i]
                    + A75 * k[4][i]
                    + A76 * k[5][i]);
        }
        f(t + h, y_new, &mut k[6]);
    }
}
