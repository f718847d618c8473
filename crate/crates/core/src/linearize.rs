//! Delayed linear model of the plant at an equilibrium.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::equilibrium::Equilibrium;
use crate::error::{Error, Result};
use crate::model::{evaluate, AlgebraicOutputs, Evaluation, ExogenousInputs, Flags, ThermalState};
use crate::params::SystemParams;
use crate::sim::DelayedPlant;

/// Accepted rate norm at the linearization point, K/s.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;
const STATE_STEP_FLOOR: f64 = 1e-4;
const VALVE_STEP_FLOOR: f64 = 1e-6;
const RELATIVE_STEP: f64 = 1e-6;
const MAX_SHRINKS: usize = 3;

/// `dx/dt = a x + a1 x(t-τ1) + a2 x(t-τ2) + e u + e1 u(t-τ1) + e2 u(t-τ2)` in deviation
/// variables around `equilibrium`; `u` is the valve opening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LinearModelRepr", from = "LinearModelRepr")]
pub struct DelayedLinearModel {
    pub a: Matrix3<f64>,
    pub a1: Matrix3<f64>,
    pub a2: Matrix3<f64>,
    pub e: Vector3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub tau1: f64,
    pub tau2: f64,
    pub equilibrium: Equilibrium,
}

/// Row-major JSON layout.
#[derive(Clone, Serialize, Deserialize)]
struct LinearModelRepr {
    a: [[f64; 3]; 3],
    a1: [[f64; 3]; 3],
    a2: [[f64; 3]; 3],
    e: [f64; 3],
    e1: [f64; 3],
    e2: [f64; 3],
    tau1: f64,
    tau2: f64,
    equilibrium: Equilibrium,
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn from_rows(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

impl From<DelayedLinearModel> for LinearModelRepr {
    fn from(m: DelayedLinearModel) -> Self {
        Self {
            a: rows(&m.a),
            a1: rows(&m.a1),
            a2: rows(&m.a2),
            e: m.e.into(),
            e1: m.e1.into(),
            e2: m.e2.into(),
            tau1: m.tau1,
            tau2: m.tau2,
            equilibrium: m.equilibrium,
        }
    }
}

impl From<LinearModelRepr> for DelayedLinearModel {
    fn from(r: LinearModelRepr) -> Self {
        Self {
            a: from_rows(&r.a),
            a1: from_rows(&r.a1),
            a2: from_rows(&r.a2),
            e: r.e.into(),
            e1: r.e1.into(),
            e2: r.e2.into(),
            tau1: r.tau1,
            tau2: r.tau2,
            equilibrium: r.equilibrium,
        }
    }
}

impl DelayedLinearModel {
    pub fn is_finite(&self) -> bool {
        [&self.a, &self.a1, &self.a2]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && [&self.e, &self.e1, &self.e2]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn with_delays(&self, tau1: f64, tau2: f64) -> Self {
        Self {
            tau1,
            tau2,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::invalid("linear_model", "matrices must be finite"));
        }
        for (field, v) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, format!("delay must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Simulation view of the model. Only the delayed separator column of `a1` and the delayed
    /// valve input `e2` carry delays, which is the structure `linearize` produces.
    pub fn plant(&self) -> LinearPlant<'_> {
        LinearPlant { model: self }
    }
}

/// Deviation dynamics of a [`DelayedLinearModel`] expressed in absolute temperatures.
pub struct LinearPlant<'a> {
    model: &'a DelayedLinearModel,
}

impl DelayedPlant for LinearPlant<'_> {
    fn tau1(&self) -> f64 {
        self.model.tau1
    }
    fn tau2(&self) -> f64 {
        self.model.tau2
    }
    fn evaluate(&self, state: &ThermalState, d_sep: f64, d_valve: f64, _: &ExogenousInputs) -> Result<Evaluation> {
        let m = self.model;
        let x0 = m.equilibrium.state;
        let dx = Vector3::from(state.to_array()) - Vector3::from(x0.to_array());
        let rates = m.a * dx + m.a1.column(1) * (d_sep - x0.t_sep) + m.e2 * (d_valve - m.equilibrium.valve);
        Ok(Evaluation {
            rates: ThermalState::new(rates[0], rates[1], rates[2]),
            outputs: AlgebraicOutputs::default(),
            flags: Flags::NONE,
        })
    }
}

fn field(
    p: &SystemParams,
    inputs: &ExogenousInputs,
    x: [f64; 3],
    d_sep: f64,
    d_valve: f64,
) -> Result<(Vector3<f64>, Flags)> {
    let ev = evaluate(&ThermalState::from_array(x), d_sep, d_valve, inputs, p)?;
    Ok((Vector3::from(ev.rates.to_array()), ev.flags))
}

/// Central difference in one coordinate. The step shrinks if the two sides see different
/// fallback flags from the center (an LMTD domain boundary inside the stencil).
fn central(
    variable: &'static str,
    x0: f64,
    floor: f64,
    center: Flags,
    f: impl Fn(f64) -> Result<(Vector3<f64>, Flags)>,
) -> Result<Vector3<f64>> {
    let mut h = (RELATIVE_STEP * x0.abs()).max(floor);
    for _ in 0..=MAX_SHRINKS {
        let (fp, flp) = f(x0 + h)?;
        let (fm, flm) = f(x0 - h)?;
        if flp == center && flm == center {
            return Ok((fp - fm) / (2.0 * h));
        }
        h /= 10.0;
    }
    Err(Error::LinearizationStep { variable })
}

/// Jacobians of the delayed derivative field at `eq` by central differences.
pub fn linearize(p: &SystemParams, eq: &Equilibrium) -> Result<DelayedLinearModel> {
    p.validate()?;
    let x0 = eq.state.to_array();
    let (f0, center) = field(p, &eq.inputs, x0, eq.state.t_sep, eq.valve)?;
    let residual = f0.norm();
    if !(residual < EQUILIBRIUM_TOL) {
        return Err(Error::NotEquilibrium { residual });
    }

    const NAMES: [&str; 3] = ["t_stack", "t_sep", "t_cool"];
    let mut a = Matrix3::zeros();
    for j in 0..3 {
        let col = central(NAMES[j], x0[j], STATE_STEP_FLOOR, center, |v| {
            let mut x = x0;
            x[j] = v;
            field(p, &eq.inputs, x, eq.state.t_sep, eq.valve)
        })?;
        a.set_column(j, &col);
    }

    let mut a1 = Matrix3::zeros();
    let delayed_sep = central("delayed t_sep", eq.state.t_sep, STATE_STEP_FLOOR, center, |v| {
        field(p, &eq.inputs, x0, v, eq.valve)
    })?;
    a1.set_column(1, &delayed_sep);

    let e2 = central("delayed valve", eq.valve, VALVE_STEP_FLOOR, center, |v| {
        field(p, &eq.inputs, x0, eq.state.t_sep, v)
    })?;

    let model = DelayedLinearModel {
        a,
        a1,
        a2: Matrix3::zeros(),
        e: Vector3::zeros(),
        e1: Vector3::zeros(),
        e2,
        tau1: p.tau1,
        tau2: p.tau2,
        equilibrium: *eq,
    };
    if !model.is_finite() {
        return Err(Error::invalid("linear_model", "non-finite Jacobian entry"));
    }
    Ok(model)
}
