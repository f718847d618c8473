//! Step-response and tracking statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimulationTrace;

/// Fraction of the run (by time) used to estimate the steady value.
pub const FINAL_WINDOW: f64 = 0.05;
/// Allowed variation inside the final window, relative to the steady value.
pub const SETTLED_TOLERANCE: f64 = 0.005;
/// Settling band half-width, relative to the steady value.
pub const SETTLING_BAND: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Peak beyond the steady value over the steady value, both measured from the initial value.
    pub overshoot: f64,
    /// Same peak excess normalized by the absolute steady value (°C for temperatures).
    pub overshoot_absolute: f64,
    /// Last exit from the ±2% band around the steady value, measured from the first sample, s.
    pub settling_time: f64,
    /// Largest |y - reference|.
    pub max_deviation: f64,
    /// Steady value as an absolute signal value.
    pub steady_state: f64,
}

/// Metrics of a step response `y(t)` starting at `y[0]`.
///
/// The steady value is the mean over the final 5% of the time span. `reference` is only
/// used for `max_deviation`.
pub fn step_metrics(t: &[f64], y: &[f64], reference: f64) -> Result<StepMetrics> {
    if t.len() != y.len() || t.is_empty() {
        return Err(Error::invalid(
            "step_metrics",
            "time and signal must be non-empty and equally long",
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSettled {
            variation: f64::INFINITY,
            steady_state: f64::NAN,
        });
    }
    let t0 = t[0];
    let y0 = y[0];
    let t_end = *t.last().unwrap();
    let window_start = t_end - FINAL_WINDOW * (t_end - t0);
    let first = t.partition_point(|&ti| ti < window_start).min(t.len() - 1);
    let window = &y[first..];
    let steady = window.iter().map(|v| v - y0).sum::<f64>() / window.len() as f64;
    let (lo, hi) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let variation = hi - lo;
    if variation > SETTLED_TOLERANCE * steady.abs() {
        return Err(Error::NotSettled {
            variation,
            steady_state: steady,
        });
    }

    let max_deviation = y.iter().map(|v| (v - reference).abs()).fold(0.0, f64::max);
    if steady == 0.0 {
        return Ok(StepMetrics {
            overshoot: 0.0,
            overshoot_absolute: 0.0,
            settling_time: 0.0,
            max_deviation,
            steady_state: y0,
        });
    }

    let sign = steady.signum();
    let (peak_index, peak) =
        y.iter()
            .map(|v| (v - y0) * sign)
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |best, (k, v)| if v > best.1 { (k, v) } else { best },
            );
    let peak = peak * sign;
    // A peak inside the final window is residual drift, not overshoot.
    let excess = if peak_index >= first {
        0.0
    } else {
        ((peak - steady) / steady).max(0.0)
    };
    let steady_abs = y0 + steady;
    let overshoot_absolute = if steady_abs != 0.0 {
        excess * steady.abs() / steady_abs.abs()
    } else {
        0.0
    };

    let band = SETTLING_BAND * steady.abs();
    let outside = |k: usize| ((y[k] - y0) - steady).abs() > band;
    let settling_time = match (0..y.len()).rev().find(|&k| outside(k)) {
        None => 0.0,
        Some(k) if k + 1 == y.len() => t_end - t0,
        Some(k) => {
            // Interpolate where |e| crosses the band between samples k and k+1.
            let ea = (y[k] - y0) - steady;
            let eb = (y[k + 1] - y0) - steady;
            let target = band * ea.signum();
            let w = if eb != ea {
                ((target - ea) / (eb - ea)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            t[k] + w * (t[k + 1] - t[k]) - t0
        }
    };

    Ok(StepMetrics {
        overshoot: excess,
        overshoot_absolute,
        settling_time,
        max_deviation,
        steady_state: steady_abs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStats {
    /// max |T_f - T_aim| over the trace, K.
    pub delta_t_max: f64,
    /// RMS of T_f - T_aim over the window, K.
    pub delta_t_rms: f64,
    /// Mean of (T_stack + T_sep)/2 over the trace, °C.
    pub t_bar: f64,
    /// Rows used for the RMS.
    pub samples: usize,
}

/// Tracking statistics of the controlled temperature. `window` bounds the RMS (inclusive, s).
pub fn scenario_stats(trace: &SimulationTrace, window: Option<(f64, f64)>) -> ScenarioStats {
    let fb = trace.feedback;
    let mut delta_t_max: f64 = 0.0;
    let mut t_bar_sum = 0.0;
    let mut sq = 0.0;
    let mut samples = 0usize;
    for r in &trace.rows {
        let e = fb.select(&r.state()) - r.t_aim;
        delta_t_max = delta_t_max.max(e.abs());
        t_bar_sum += 0.5 * (r.t_stack + r.t_sep);
        if window.is_none_or(|(a, b)| r.t >= a && r.t <= b) {
            sq += e * e;
            samples += 1;
        }
    }
    let n = trace.rows.len().max(1) as f64;
    ScenarioStats {
        delta_t_max,
        delta_t_rms: if samples > 0 { (sq / samples as f64).sqrt() } else { 0.0 },
        t_bar: t_bar_sum / n,
        samples,
    }
}
