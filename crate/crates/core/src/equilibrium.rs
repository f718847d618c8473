//! Steady operating point of the delayed plant with the controlled temperature pinned.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{evaluate, ExogenousInputs, ThermalState};
use crate::params::{SystemParams, RATED_CURRENT, RATED_STACK_TEMPERATURE};
use crate::pid::Feedback;

const MAX_ITERATIONS: usize = 100;
/// Rate residual accepted as converged, K/s.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Where to look for a steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatingPoint {
    pub current: f64,
    /// Temperature held by the controller at steady state, °C.
    pub controlled_temp: f64,
    pub feedback: Feedback,
    #[serde(default = "default_ambient")]
    pub t_amb: f64,
    #[serde(default = "default_coolant_inlet")]
    pub t_cool_in: f64,
}

pub(crate) fn default_ambient() -> f64 {
    25.0
}

pub(crate) fn default_coolant_inlet() -> f64 {
    30.0
}

impl OperatingPoint {
    /// Rated current with the after-stack temperature at its rated value.
    pub fn rated() -> Self {
        Self {
            current: RATED_CURRENT,
            controlled_temp: RATED_STACK_TEMPERATURE,
            feedback: Feedback::AfterStack,
            t_amb: default_ambient(),
            t_cool_in: default_coolant_inlet(),
        }
    }

    pub fn inputs(&self) -> ExogenousInputs {
        ExogenousInputs {
            current: self.current,
            t_amb: self.t_amb,
            t_cool_in: self.t_cool_in,
            t_aim: self.controlled_temp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub state: ThermalState,
    pub valve: f64,
    pub inputs: ExogenousInputs,
    /// Norm of the rate vector at the solution, K/s.
    pub residual: f64,
}

fn residual(z: &Vector4<f64>, op: &OperatingPoint, inputs: &ExogenousInputs, p: &SystemParams) -> Result<Vector4<f64>> {
    let state = ThermalState::new(z[0], z[1], z[2]);
    // Steady state: delayed values equal current values.
    let rates = evaluate(&state, state.t_sep, z[3], inputs, p)?.rates;
    let pin = z[op.feedback.index()] - op.controlled_temp;
    Ok(Vector4::new(rates.t_stack, rates.t_sep, rates.t_cool, pin))
}

/// Merit for the line search: rates weighted by heat capacity (W) plus the pin in W/K units.
fn merit(r: &Vector4<f64>, p: &SystemParams) -> f64 {
    let w = Vector4::new(r[0] * p.c_stack, r[1] * p.c_sep, r[2] * p.c_cool, r[3] * 1e3);
    w.norm()
}

fn in_coil_domain(z: &Vector4<f64>, inputs: &ExogenousInputs) -> bool {
    z[0] - z[2] > 0.0 && z[1] - inputs.t_cool_in > 0.0
}

/// Heat the coil must remove to hold the pinned temperature, W, from the stack and separator
/// balances with the other lye temperature solved by bisection. Non-positive means the point
/// would need heating and no valve opening can hold it.
fn required_coil_duty(p: &SystemParams, op: &OperatingPoint, inputs: &ExogenousInputs) -> Option<f64> {
    let pinned = op.controlled_temp;
    let lye = p.lye_capacity_flow();
    let temps = |other: f64| match op.feedback {
        Feedback::AfterStack => ThermalState::new(pinned, other, pinned),
        Feedback::BeforeStack => ThermalState::new(other, pinned, other),
    };
    let stack_balance = |other: f64| -> Option<f64> {
        let s = temps(other);
        let ev = evaluate(&s, s.t_sep, 0.0, inputs, p).ok()?;
        Some(ev.rates.t_stack)
    };
    let (mut lo, mut hi) = (pinned - 40.0, pinned + 40.0);
    let (mut g_lo, g_hi) = (stack_balance(lo)?, stack_balance(hi)?);
    if g_lo.signum() == g_hi.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g = stack_balance(mid)?;
        if g.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g;
        } else {
            hi = mid;
        }
    }
    let s = temps(0.5 * (lo + hi));
    let q_dis_sep = crate::model::separator_heat_loss(s.t_bar(), inputs.t_amb, p);
    Some(0.5 * lye * (s.t_stack - s.t_sep) - q_dis_sep)
}

/// Newton iteration on (T_stack, T_sep, T_cool, valve) with the controlled temperature pinned.
pub fn find_equilibrium(p: &SystemParams, op: &OperatingPoint) -> Result<Equilibrium> {
    p.validate()?;
    let inputs = op.inputs();
    let t = op.controlled_temp;
    let mut z = match op.feedback {
        Feedback::AfterStack => Vector4::new(t, t - 8.0, t - 1.0, 0.1),
        Feedback::BeforeStack => Vector4::new(t + 8.0, t, t + 7.0, 0.1),
    };
    if !in_coil_domain(&z, &inputs) {
        return Err(Error::invalid(
            "t_cool_in",
            format!(
                "coolant inlet {} °C is above the separator guess; no cooling possible",
                inputs.t_cool_in
            ),
        ));
    }

    let mut r = residual(&z, op, &inputs, p)?;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let rate_norm = r.fixed_rows::<3>(0).norm();
        if rate_norm < RESIDUAL_TOL && r[3].abs() < 1e-9 {
            break;
        }
        iterations += 1;

        let mut jac = Matrix4::zeros();
        for j in 0..4 {
            let h = if j == 3 { 1e-7 } else { 1e-6 * z[j].abs().max(1.0) };
            let mut zp = z;
            let mut zm = z;
            zp[j] += h;
            zm[j] -= h;
            let col = (residual(&zp, op, &inputs, p)? - residual(&zm, op, &inputs, p)?) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let step = jac.lu().solve(&(-r)).ok_or(Error::NoConvergence {
            iterations,
            residual: rate_norm,
        })?;

        // Backtracking: stay inside the LMTD domain and decrease the merit.
        let m0 = merit(&r, p);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = z + step * alpha;
            if in_coil_domain(&trial, &inputs) {
                if let Ok(rt) = residual(&trial, op, &inputs, p) {
                    if merit(&rt, p) < m0 || alpha < 1e-6 {
                        accepted = Some((trial, rt));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((zn, rn)) => {
                z = zn;
                r = rn;
            }
            None => {
                if required_coil_duty(p, op, &inputs).is_some_and(|q| q <= 0.0) {
                    return Err(Error::InfeasibleCooling { valve: 0.0 });
                }
                return Err(Error::NoConvergence {
                    iterations,
                    residual: rate_norm,
                });
            }
        }
    }

    let rate_norm = r.fixed_rows::<3>(0).norm();
    if !(rate_norm < RESIDUAL_TOL) {
        if required_coil_duty(p, op, &inputs).is_some_and(|q| q <= 0.0) {
            return Err(Error::InfeasibleCooling { valve: 0.0 });
        }
        return Err(Error::NoConvergence {
            iterations,
            residual: rate_norm,
        });
    }
    let valve = z[3];
    if !(valve > 0.0 && valve < 1.0) {
        return Err(Error::InfeasibleCooling { valve });
    }
    Ok(Equilibrium {
        state: ThermalState::new(z[0], z[1], z[2]),
        valve,
        inputs,
        residual: rate_norm,
    })
}
