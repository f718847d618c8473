//! Stability-region scans, grid-search PID tuning and delay-sensitivity sweeps.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{find_equilibrium, OperatingPoint};
use crate::error::{Error, Result};
use crate::linearize::{linearize, DelayedLinearModel};
use crate::metrics::{step_metrics, StepMetrics};
use crate::params::SystemParams;
use crate::pid::{Feedback, PidParams};
use crate::stepresp::{horizon_for, step_response, DEFAULT_SAMPLES};
use crate::tf::{characteristic_polynomial, closed_loop, plant_transfer, RationalTf};

/// Reference overshoot for the tuning objective.
pub const DEFAULT_GAMMA0: f64 = 0.5;
/// Reference settling time for the tuning objective, s.
pub const DEFAULT_TS0: f64 = 7200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

/// One gain axis of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub scale: Scale,
    /// Prepend an explicit 0 sample.
    #[serde(default)]
    pub include_zero: bool,
}

impl Axis {
    pub const fn log(min: f64, max: f64, count: usize) -> Self {
        Self {
            min,
            max,
            count,
            scale: Scale::Log,
            include_zero: false,
        }
    }

    pub const fn linear(min: f64, max: f64, count: usize) -> Self {
        Self {
            min,
            max,
            count,
            scale: Scale::Linear,
            include_zero: false,
        }
    }

    pub const fn with_zero(self) -> Self {
        Self {
            include_zero: true,
            ..self
        }
    }

    /// A single fixed value.
    pub const fn fixed(v: f64) -> Self {
        Self {
            min: v,
            max: v,
            count: 1,
            scale: Scale::Linear,
            include_zero: false,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(Error::invalid(name, "bounds must be finite"));
        }
        if self.count == 0 {
            return Err(Error::invalid(name, "count must be >= 1"));
        }
        if self.count == 1 {
            if self.min != self.max {
                return Err(Error::invalid(name, "a single-sample axis needs min == max"));
            }
        } else if !(self.min < self.max) {
            return Err(Error::invalid(
                name,
                format!("need min < max, got [{}, {}]", self.min, self.max),
            ));
        }
        if self.min < 0.0 {
            return Err(Error::invalid(name, "gains must be >= 0"));
        }
        if self.scale == Scale::Log && self.count > 1 && !(self.min > 0.0) {
            return Err(Error::invalid(
                name,
                "log scale requires min > 0 (use include_zero for a 0 sample)",
            ));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.count + 1);
        if self.include_zero {
            v.push(0.0);
        }
        if self.count == 1 {
            v.push(self.min);
            return v;
        }
        let last = (self.count - 1) as f64;
        for k in 0..self.count {
            let f = k as f64 / last;
            let x = match self.scale {
                Scale::Linear => self.min + f * (self.max - self.min),
                Scale::Log => 10f64.powf(self.min.log10() + f * (self.max.log10() - self.min.log10())),
            };
            v.push(x);
        }
        // Pin the endpoints exactly.
        let n = v.len();
        v[n - 1] = self.max;
        v[usize::from(self.include_zero)] = self.min;
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub kp: Axis,
    pub ki: Axis,
    pub kd: Axis,
}

impl Default for GridSpec {
    /// kp ∈ [1e-3, 1], ki ∈ [1e-6, 1e-3], kd ∈ {0} ∪ [0.1, 100], log-spaced.
    fn default() -> Self {
        Self {
            kp: Axis::log(1e-3, 1.0, 10),
            ki: Axis::log(1e-6, 1e-3, 10),
            kd: Axis::log(0.1, 100.0, 9).with_zero(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.kp.validate("grid.kp")?;
        self.ki.validate("grid.ki")?;
        self.kd.validate("grid.kd")
    }

    /// Grid points in kp-major order.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let (kp, ki, kd) = (self.kp.values(), self.ki.values(), self.kd.values());
        let mut out = Vec::with_capacity(kp.len() * ki.len() * kd.len());
        for &p in &kp {
            for &i in &ki {
                for &d in &kd {
                    out.push((p, i, d));
                }
            }
        }
        out
    }

    pub fn describe(&self) -> String {
        let axis = |a: &Axis| {
            format!(
                "[{:e}, {:e}] x{}{}",
                a.min,
                a.max,
                a.count,
                if a.include_zero { " +0" } else { "" }
            )
        };
        format!("kp {}, ki {}, kd {}", axis(&self.kp), axis(&self.ki), axis(&self.kd))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// 1/s; NaN when the pole computation failed.
    pub max_real_pole: f64,
    pub stable: bool,
    /// Pole computation failed; the point counts as unstable.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityMap {
    pub feedback: Feedback,
    pub sigma_margin: f64,
    pub rows: Vec<StabilityRow>,
}

impl StabilityMap {
    pub fn stable_count(&self) -> usize {
        self.rows.iter().filter(|r| r.stable).count()
    }

    pub fn failed_count(&self) -> usize {
        self.rows.iter().filter(|r| r.failed).count()
    }

    pub fn stable_points(&self) -> impl Iterator<Item = &StabilityRow> {
        self.rows.iter().filter(|r| r.stable)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kp,ki,kd,max_real_pole,stable\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.kp, r.ki, r.kd, r.max_real_pole, r.stable
            );
        }
        out
    }
}

/// Largest closed-loop pole real part (1/s) for a precomputed plant.
pub fn max_real_pole(plant: &RationalTf, pid: &PidParams) -> Result<f64> {
    let chi = characteristic_polynomial(plant, pid);
    let roots = chi.roots().map_err(|e| Error::Gains {
        kp: pid.kp,
        ki: pid.ki,
        kd: pid.kd,
        source: Box::new(e),
    })?;
    Ok(roots.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max) / plant.time_unit)
}

/// Stability of the closed loop at `model` and the largest pole real part, 1/s.
pub fn is_stable(pid: &PidParams, model: &DelayedLinearModel) -> Result<(bool, f64)> {
    is_stable_with_margin(pid, model, 0.0)
}

pub fn is_stable_with_margin(pid: &PidParams, model: &DelayedLinearModel, sigma_margin: f64) -> Result<(bool, f64)> {
    pid.validate()?;
    let plant = plant_transfer(model, pid.feedback)?;
    let m = max_real_pole(&plant, pid)?;
    Ok((m < -sigma_margin, m))
}

/// Evaluates every grid point; failures are recorded as unstable rows.
pub fn stability_region(
    model: &DelayedLinearModel,
    feedback: Feedback,
    grid: &GridSpec,
    sigma_margin: f64,
) -> Result<StabilityMap> {
    grid.validate()?;
    let plant = plant_transfer(model, feedback)?;
    let rows = grid
        .points()
        .into_par_iter()
        .map(|(kp, ki, kd)| {
            let pid = PidParams::new(kp, ki, kd, feedback);
            match max_real_pole(&plant, &pid) {
                Ok(m) => StabilityRow {
                    kp,
                    ki,
                    kd,
                    max_real_pole: m,
                    stable: m < -sigma_margin,
                    failed: false,
                },
                Err(_) => StabilityRow {
                    kp,
                    ki,
                    kd,
                    max_real_pole: f64::NAN,
                    stable: false,
                    failed: true,
                },
            }
        })
        .collect();
    Ok(StabilityMap {
        feedback,
        sigma_margin,
        rows,
    })
}

/// Step metrics and objective of one gain set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScore {
    pub pid: PidParams,
    pub max_real_pole: f64,
    /// Infinite when the response does not settle within the horizon.
    pub objective: f64,
    pub metrics: Option<StepMetrics>,
}

/// `(γ/γ0)² + (t_s/t_s0)²`.
pub fn objective(m: &StepMetrics, gamma0: f64, ts0: f64) -> f64 {
    (m.overshoot / gamma0).powi(2) + (m.settling_time / ts0).powi(2)
}

/// Unit set-point step response of the linear closed loop.
pub fn closed_loop_step(plant: &RationalTf, pid: &PidParams, max_real: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = closed_loop(plant, pid)?;
    step_response(&g, horizon_for(max_real), DEFAULT_SAMPLES)
}

/// Scores a stable gain set on a precomputed plant.
pub fn score_point(plant: &RationalTf, pid: &PidParams, gamma0: f64, ts0: f64) -> Result<PointScore> {
    let m = max_real_pole(plant, pid)?;
    if !(m < 0.0) {
        return Ok(PointScore {
            pid: *pid,
            max_real_pole: m,
            objective: f64::INFINITY,
            metrics: None,
        });
    }
    let metrics = closed_loop_step(plant, pid, m)
        .and_then(|(t, y)| step_metrics(&t, &y, 1.0))
        .ok();
    let objective = metrics.map_or(f64::INFINITY, |s| objective(&s, gamma0, ts0));
    Ok(PointScore {
        pid: *pid,
        max_real_pole: m,
        objective,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub best: PidParams,
    pub objective: f64,
    pub overshoot: f64,
    /// Overshoot normalized by the absolute temperature step target; equal to `overshoot`
    /// for unit set-point steps in deviation variables.
    pub overshoot_absolute: f64,
    pub settling_time: f64,
    /// Stable points whose step response was evaluated.
    pub evaluated: usize,
    /// Evaluated points that did not settle.
    pub infeasible: usize,
    pub grid_points: usize,
    pub gamma0: f64,
    pub ts0: f64,
}

fn lexicographic(a: &PointScore, b: &PointScore) -> std::cmp::Ordering {
    a.objective
        .total_cmp(&b.objective)
        .then(a.pid.kp.total_cmp(&b.pid.kp))
        .then(a.pid.ki.total_cmp(&b.pid.ki))
        .then(a.pid.kd.total_cmp(&b.pid.kd))
}

/// Grid search minimizing the overshoot/settling-time objective over the stable set.
pub fn tune(
    model: &DelayedLinearModel,
    feedback: Feedback,
    grid: &GridSpec,
    gamma0: f64,
    ts0: f64,
) -> Result<TuningResult> {
    let (result, _) = tune_with_scores(model, feedback, grid, gamma0, ts0)?;
    Ok(result)
}

/// [`tune`] plus the score of every stable point, in grid order.
pub fn tune_with_scores(
    model: &DelayedLinearModel,
    feedback: Feedback,
    grid: &GridSpec,
    gamma0: f64,
    ts0: f64,
) -> Result<(TuningResult, Vec<PointScore>)> {
    for (name, v) in [("gamma0", gamma0), ("ts0", ts0)] {
        if !(v > 0.0) {
            return Err(Error::invalid(name, "must be > 0"));
        }
    }
    let map = stability_region(model, feedback, grid, 0.0)?;
    let stable: Vec<StabilityRow> = map.stable_points().copied().collect();
    if stable.is_empty() {
        return Err(Error::EmptyStableSet {
            bounds: grid.describe(),
        });
    }
    let plant = plant_transfer(model, feedback)?;
    let scores: Vec<PointScore> = stable
        .par_iter()
        .map(|r| {
            let pid = PidParams::new(r.kp, r.ki, r.kd, feedback);
            let metrics = closed_loop_step(&plant, &pid, r.max_real_pole)
                .and_then(|(t, y)| step_metrics(&t, &y, 1.0))
                .ok();
            let objective = metrics.map_or(f64::INFINITY, |s| objective(&s, gamma0, ts0));
            PointScore {
                pid,
                max_real_pole: r.max_real_pole,
                objective,
                metrics,
            }
        })
        .collect();
    let infeasible = scores.iter().filter(|s| s.metrics.is_none()).count();
    let best = scores.iter().min_by(|a, b| lexicographic(a, b)).expect("non-empty");
    let Some(m) = best.metrics else {
        return Err(Error::NoFeasiblePoint {
            bounds: grid.describe(),
        });
    };
    let result = TuningResult {
        best: best.pid,
        objective: best.objective,
        overshoot: m.overshoot,
        overshoot_absolute: m.overshoot_absolute,
        settling_time: m.settling_time,
        evaluated: scores.len(),
        infeasible,
        grid_points: map.rows.len(),
        gamma0,
        ts0,
    };
    Ok((result, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySample {
    /// s
    pub tau1: f64,
    /// s
    pub tau2: f64,
    pub settling_time: f64,
    pub overshoot: f64,
    pub objective: f64,
    pub best: PidParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayGap {
    pub tau1: f64,
    pub tau2: f64,
    pub error: String,
}

/// `a1 + a2 τ1 + a3 τ2 + a4 τ1 τ2` with τ in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFit {
    pub coefficients: [f64; 4],
    pub residual_rms: f64,
}

impl SurfaceFit {
    pub fn eval(&self, tau1: f64, tau2: f64) -> f64 {
        let [a1, a2, a3, a4] = self.coefficients;
        a1 + a2 * tau1 + a3 * tau2 + a4 * tau1 * tau2
    }

    /// Least-squares fit to `(τ1, τ2, value)` samples.
    pub fn fit(samples: &[(f64, f64, f64)]) -> Option<Self> {
        if samples.len() < 4 {
            return None;
        }
        let x = DMatrix::from_fn(samples.len(), 4, |i, j| {
            let (t1, t2, _) = samples[i];
            [1.0, t1, t2, t1 * t2][j]
        });
        let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.2));
        let coef = x.clone().svd(true, true).solve(&y, 1e-12).ok()?;
        let resid = &x * &coef - &y;
        let residual_rms = (resid.norm_squared() / samples.len() as f64).sqrt();
        Some(Self {
            coefficients: [coef[0], coef[1], coef[2], coef[3]],
            residual_rms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySurface {
    pub feedback: Feedback,
    pub samples: Vec<DelaySample>,
    pub gaps: Vec<DelayGap>,
    pub settling_fit: Option<SurfaceFit>,
    pub overshoot_fit: Option<SurfaceFit>,
    pub warnings: Vec<String>,
}

impl DelaySurface {
    pub fn sample(&self, tau1: f64, tau2: f64) -> Option<&DelaySample> {
        self.samples.iter().find(|s| s.tau1 == tau1 && s.tau2 == tau2)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau1,tau2,settling_time,overshoot,objective,kp,ki,kd\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.tau1, s.tau2, s.settling_time, s.overshoot, s.objective, s.best.kp, s.best.ki, s.best.kd
            );
        }
        out
    }
}

/// Fewer samples than this triggers a fit warning.
pub const MIN_FIT_SAMPLES: usize = 6;

/// Re-linearizes and re-tunes at every delay pair, then fits the bilinear surfaces.
pub fn delay_sweep(
    params: &SystemParams,
    op: &OperatingPoint,
    feedback: Feedback,
    delays: &[(f64, f64)],
    grid: &GridSpec,
    gamma0: f64,
    ts0: f64,
) -> Result<DelaySurface> {
    grid.validate()?;
    if delays.is_empty() {
        return Err(Error::invalid("delays", "at least one (tau1, tau2) pair is required"));
    }
    let eq = find_equilibrium(params, op)?;
    let mut samples = Vec::new();
    let mut gaps = Vec::new();
    for &(tau1, tau2) in delays {
        let run = || -> Result<DelaySample> {
            let p = params.with_delays(tau1, tau2);
            let model = linearize(&p, &eq)?;
            let r = tune(&model, feedback, grid, gamma0, ts0)?;
            Ok(DelaySample {
                tau1,
                tau2,
                settling_time: r.settling_time,
                overshoot: r.overshoot,
                objective: r.objective,
                best: r.best,
            })
        };
        match run() {
            Ok(s) => samples.push(s),
            Err(e) => gaps.push(DelayGap {
                tau1,
                tau2,
                error: e.to_string(),
            }),
        }
    }

    let mut warnings = Vec::new();
    if samples.len() < MIN_FIT_SAMPLES {
        warnings.push(format!(
            "only {} delay samples; surface fit is poorly determined",
            samples.len()
        ));
    }
    let pts = |f: fn(&DelaySample) -> f64| samples.iter().map(|s| (s.tau1, s.tau2, f(s))).collect::<Vec<_>>();
    let settling_fit = SurfaceFit::fit(&pts(|s| s.settling_time));
    let overshoot_fit = SurfaceFit::fit(&pts(|s| s.overshoot));
    if settling_fit.is_none() {
        warnings.push("fewer than 4 samples; no surface fit".to_string());
    }
    Ok(DelaySurface {
        feedback,
        samples,
        gaps,
        settling_fit,
        overshoot_fit,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> DelayedLinearModel {
        let p = SystemParams::default();
        let eq = find_equilibrium(&p, &OperatingPoint::rated()).unwrap();
        linearize(&p, &eq).unwrap()
    }

    #[test]
    fn axis_values() {
        let a = Axis::log(1e-3, 1.0, 4).values();
        assert_eq!(a.len(), 4);
        assert_eq!(a[0], 1e-3);
        assert_eq!(a[3], 1.0);
        assert!((a[1] - 1e-2).abs() < 1e-15);
        let z = Axis::log(0.1, 100.0, 9).with_zero().values();
        assert_eq!(z.len(), 10);
        assert_eq!(z[0], 0.0);
        assert_eq!(z[1], 0.1);
        assert_eq!(Axis::linear(0.0, 1.0, 3).values(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::default().validate().is_ok());
        let bad = GridSpec {
            kp: Axis::log(0.0, 1.0, 4),
            ..GridSpec::default()
        };
        assert!(bad.validate().is_err());
        let inverted = GridSpec {
            ki: Axis::linear(1.0, 0.5, 4),
            ..GridSpec::default()
        };
        assert!(inverted.validate().is_err());
        let empty = GridSpec {
            kd: Axis {
                count: 0,
                ..Axis::linear(0.0, 1.0, 2)
            },
            ..GridSpec::default()
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn kp_major_order() {
        let g = GridSpec {
            kp: Axis::linear(1.0, 2.0, 2),
            ki: Axis::linear(3.0, 4.0, 2),
            kd: Axis::linear(5.0, 6.0, 2),
        };
        let p = g.points();
        assert_eq!(p[0], (1.0, 3.0, 5.0));
        assert_eq!(p[1], (1.0, 3.0, 6.0));
        assert_eq!(p[2], (1.0, 4.0, 5.0));
        assert_eq!(p[4], (2.0, 3.0, 5.0));
    }

    #[test]
    fn reference_gains_are_stable() {
        let m = model();
        for pid in [PidParams::AFTER_STACK_REFERENCE, PidParams::BEFORE_STACK_REFERENCE] {
            let (stable, sigma) = is_stable(&pid, &m).unwrap();
            assert!(stable, "{pid:?} sigma {sigma}");
        }
    }

    #[test]
    fn hundredfold_gains_are_unstable() {
        let m = model();
        let p = PidParams::AFTER_STACK_REFERENCE;
        let big = PidParams::new(100.0 * p.kp, 100.0 * p.ki, 100.0 * p.kd, p.feedback);
        assert!(!is_stable(&big, &m).unwrap().0);
    }

    #[test]
    fn zero_gain_row_is_open_loop() {
        let m = model();
        let g = GridSpec {
            kp: Axis::fixed(0.0),
            ki: Axis::fixed(0.0),
            kd: Axis::fixed(0.0),
        };
        let map = stability_region(&m, Feedback::AfterStack, &g, 0.0).unwrap();
        let plant = plant_transfer(&m, Feedback::AfterStack).unwrap();
        let ol = plant.poles().unwrap().max_real();
        assert_eq!(map.rows.len(), 1);
        assert!((map.rows[0].max_real_pole - ol).abs() < 1e-15);
        assert_eq!(map.rows[0].stable, ol < 0.0);
    }

    #[test]
    fn single_stable_point_is_returned() {
        let m = model();
        let p = PidParams::BEFORE_STACK_REFERENCE;
        let g = GridSpec {
            kp: Axis::fixed(p.kp),
            ki: Axis::fixed(p.ki),
            kd: Axis::fixed(p.kd),
        };
        let r = tune(&m, Feedback::BeforeStack, &g, DEFAULT_GAMMA0, DEFAULT_TS0).unwrap();
        assert_eq!(r.best, p);
        assert_eq!(r.evaluated, 1);
    }

    #[test]
    fn empty_stable_set_names_bounds() {
        let m = model();
        let g = GridSpec {
            kp: Axis::fixed(50.0),
            ki: Axis::fixed(1.0),
            kd: Axis::fixed(1000.0),
        };
        match tune(&m, Feedback::AfterStack, &g, DEFAULT_GAMMA0, DEFAULT_TS0) {
            Err(Error::EmptyStableSet { bounds }) => assert!(bounds.contains("kp")),
            other => panic!("expected empty stable set, got {other:?}"),
        }
    }

    #[test]
    fn surface_fit_recovers_bilinear() {
        let truth = [1.0, 0.5, -0.25, 0.01];
        let mut pts = Vec::new();
        for t1 in [0.0, 1.0, 2.0, 3.0] {
            for t2 in [0.0, 2.0, 5.0] {
                pts.push((t1, t2, truth[0] + truth[1] * t1 + truth[2] * t2 + truth[3] * t1 * t2));
            }
        }
        let f = SurfaceFit::fit(&pts).unwrap();
        for (a, b) in f.coefficients.iter().zip(truth) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(f.residual_rms < 1e-10);
        assert!(SurfaceFit::fit(&pts[..3]).is_none());
    }

    #[test]
    fn csv_header() {
        let m = model();
        let g = GridSpec {
            kp: Axis::linear(0.01, 0.02, 2),
            ki: Axis::fixed(1e-5),
            kd: Axis::fixed(0.0),
        };
        let map = stability_region(&m, Feedback::BeforeStack, &g, 0.0).unwrap();
        let csv = map.to_csv();
        assert!(csv.starts_with("kp,ki,kd,max_real_pole,stable\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
