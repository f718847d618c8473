//! Plant physics: the algebraic heat and voltage relations and the delayed
//! three-temperature derivative field.
//!
//! All functions are pure. Temperatures are °C; only the radiation term converts to K.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SystemParams;

const KELVIN: f64 = 273.15;
/// Relative tolerance below which the LMTD switches to the arithmetic-mean limit.
pub const LMTD_EPS: f64 = 1e-9;

/// Lumped temperatures, °C.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalState {
    pub t_stack: f64,
    pub t_sep: f64,
    pub t_cool: f64,
}

impl ThermalState {
    pub const fn new(t_stack: f64, t_sep: f64, t_cool: f64) -> Self {
        Self { t_stack, t_sep, t_cool }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.t_stack, self.t_sep, self.t_cool]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn is_finite(&self) -> bool {
        self.t_stack.is_finite() && self.t_sep.is_finite() && self.t_cool.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.t_stack.powi(2) + self.t_sep.powi(2) + self.t_cool.powi(2)).sqrt()
    }

    pub fn t_bar(&self) -> f64 {
        0.5 * (self.t_stack + self.t_sep)
    }

    /// Advisory plausibility check against a configurable band.
    pub fn in_range(&self, lo: f64, hi: f64) -> bool {
        self.to_array().iter().all(|t| (lo..=hi).contains(t))
    }
}

impl Add for ThermalState {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.t_stack + o.t_stack, self.t_sep + o.t_sep, self.t_cool + o.t_cool)
    }
}

impl Sub for ThermalState {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.t_stack - o.t_stack, self.t_sep - o.t_sep, self.t_cool - o.t_cool)
    }
}

impl Mul<f64> for ThermalState {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.t_stack * k, self.t_sep * k, self.t_cool * k)
    }
}

/// Inputs that are not part of the state: terminal current, ambient, coolant inlet, set point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExogenousInputs {
    pub current: f64,
    pub t_amb: f64,
    pub t_cool_in: f64,
    pub t_aim: f64,
}

impl ExogenousInputs {
    /// Non-fatal configuration warnings.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.t_cool_in >= self.t_aim {
            out.push(format!(
                "coolant inlet {} °C is not below the set point {} °C; the coil cannot cool",
                self.t_cool_in, self.t_aim
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlgebraicOutputs {
    pub u_cell: f64,
    pub q_ele: f64,
    pub q_dis_stack: f64,
    pub q_dis_sep: f64,
    pub lmtd: f64,
}

/// Which end of the coil has a non-positive temperature difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmtdEnd {
    /// Stack outlet vs coolant outlet.
    Hot,
    /// Separator outlet vs coolant inlet.
    Cold,
}

impl fmt::Display for LmtdEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LmtdEnd::Hot => f.write_str("hot-end (T_stack - T_cool)"),
            LmtdEnd::Cold => f.write_str("cold-end (T_sep - T_cool_in)"),
        }
    }
}

/// Fallback conditions hit while evaluating the derivative field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Flags(u8);

impl Flags {
    pub const NONE: Flags = Flags(0);
    /// LMTD domain inverted; coil exchange set to zero.
    pub const COOLING_OFF: Flags = Flags(1);
    /// Stack colder than ambient; convection evaluated from |ΔT| with sign flipped.
    pub const STACK_BELOW_AMBIENT: Flags = Flags(2);

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

impl std::ops::BitOr for Flags {
    type Output = Flags;
    fn bitor(self, o: Flags) -> Flags {
        Flags(self.0 | o.0)
    }
}

impl std::ops::BitOrAssign for Flags {
    fn bitor_assign(&mut self, o: Flags) {
        self.0 |= o.0;
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        if self.contains(Flags::COOLING_OFF) {
            names.push("cooling_off");
        }
        if self.contains(Flags::STACK_BELOW_AMBIENT) {
            names.push("stack_below_ambient");
        }
        f.write_str(&names.join("|"))
    }
}

/// Empirical U-I curve. `t_bar` is the mean of stack and separator temperatures, °C.
pub fn cell_voltage(current_density: f64, t_bar: f64, p: &SystemParams) -> Result<f64> {
    let argument = (p.t1 + p.t2 / t_bar + p.t3 / (t_bar * t_bar)) * current_density + 1.0;
    if !(argument > 0.0) {
        return Err(Error::TafelDomain {
            current_density,
            argument,
        });
    }
    Ok(p.u_rev + (p.r1 + p.r2 * t_bar) * current_density + p.s_tafel * argument.log10())
}

/// Heat released above the thermoneutral voltage, W. Negative in the endothermic regime.
pub fn electrolysis_heat(current: f64, u_cell: f64, p: &SystemParams) -> f64 {
    (u_cell - p.u_th) * p.cell_current(current) * p.n_cells as f64
}

/// Convection plus radiation loss from the stack surface, W.
///
/// Below ambient the convection coefficient is computed from |ΔT| and the loss changes sign.
pub fn stack_heat_loss(t_stack: f64, t_amb: f64, p: &SystemParams) -> f64 {
    let dt = t_stack - t_amb;
    let h = 2.51 * 0.52 * (dt.abs() / p.stack_diameter).powf(0.25);
    let convection = h * p.stack_surface_area * dt;
    let radiation = p.stefan_boltzmann
        * p.stack_surface_area
        * p.emissivity
        * ((t_stack + KELVIN).powi(4) - (t_amb + KELVIN).powi(4));
    convection + radiation
}

/// Log-mean temperature difference across the cooling coil, K.
pub fn lmtd(t_stack: f64, t_sep: f64, t_cool: f64, t_cool_in: f64) -> Result<f64> {
    let d1 = t_stack - t_cool;
    let d2 = t_sep - t_cool_in;
    if !(d1 > 0.0) {
        return Err(Error::LmtdDomain {
            end: LmtdEnd::Hot,
            difference: d1,
        });
    }
    if !(d2 > 0.0) {
        return Err(Error::LmtdDomain {
            end: LmtdEnd::Cold,
            difference: d2,
        });
    }
    if (d1 - d2).abs() < LMTD_EPS * d1.max(d2) {
        return Ok(0.5 * (d1 + d2));
    }
    Ok((d1 - d2) / (d1 / d2).ln())
}

/// Separator loss to ambient, W (signed).
pub fn separator_heat_loss(t_bar: f64, t_amb: f64, p: &SystemParams) -> f64 {
    (t_bar - t_amb) / p.r_sep
}

/// Coolant volume flow for a valve opening, m³/s. Callers clamp the opening to [0, 1].
pub fn coolant_flow(valve_opening: f64, p: &SystemParams) -> f64 {
    p.k_valve * valve_opening
}

/// Algebraic outputs at a state. LMTD inversion falls back to zero coil exchange.
pub fn algebraic_outputs(
    state: &ThermalState,
    inputs: &ExogenousInputs,
    p: &SystemParams,
) -> Result<(AlgebraicOutputs, Flags)> {
    let mut flags = Flags::NONE;
    let t_bar = state.t_bar();
    let u_cell = cell_voltage(p.current_density(inputs.current), t_bar, p)?;
    let q_ele = electrolysis_heat(inputs.current, u_cell, p);
    if state.t_stack < inputs.t_amb {
        flags |= Flags::STACK_BELOW_AMBIENT;
    }
    let q_dis_stack = stack_heat_loss(state.t_stack, inputs.t_amb, p);
    let q_dis_sep = separator_heat_loss(t_bar, inputs.t_amb, p);
    let lmtd = match lmtd(state.t_stack, state.t_sep, state.t_cool, inputs.t_cool_in) {
        Ok(v) => v,
        Err(Error::LmtdDomain { .. }) => {
            flags |= Flags::COOLING_OFF;
            0.0
        }
        Err(e) => return Err(e),
    };
    Ok((
        AlgebraicOutputs {
            u_cell,
            q_ele,
            q_dis_stack,
            q_dis_sep,
            lmtd,
        },
        flags,
    ))
}

/// Rates together with the algebraic outputs they were computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub rates: ThermalState,
    pub outputs: AlgebraicOutputs,
    pub flags: Flags,
}

/// Full evaluation of the delayed derivative field.
///
/// `delayed_t_sep` is T_sep(t - tau1) and `delayed_valve` is the valve opening at t - tau2;
/// these are the only places the delays and the control input enter.
pub fn evaluate(
    state: &ThermalState,
    delayed_t_sep: f64,
    delayed_valve: f64,
    inputs: &ExogenousInputs,
    p: &SystemParams,
) -> Result<Evaluation> {
    let (out, flags) = algebraic_outputs(state, inputs, p)?;
    let lye = p.lye_capacity_flow();
    let coil = p.ka_coil * out.lmtd;
    let coolant = coolant_flow(delayed_valve, p) * p.cool_density * p.cool_specific_heat;

    let d_stack = (out.q_ele - out.q_dis_stack - lye * (state.t_stack - delayed_t_sep)) / p.c_stack;
    let d_sep = (0.5 * lye * (state.t_stack - state.t_sep) - coil - out.q_dis_sep) / p.c_sep;
    let d_cool = (coolant * (inputs.t_cool_in - state.t_cool) + coil) / p.c_cool;

    Ok(Evaluation {
        rates: ThermalState::new(d_stack, d_sep, d_cool),
        outputs: out,
        flags,
    })
}

/// Temperature rates, K/s.
pub fn derivatives(
    state: &ThermalState,
    delayed_t_sep: f64,
    delayed_valve: f64,
    inputs: &ExogenousInputs,
    p: &SystemParams,
) -> Result<ThermalState> {
    evaluate(state, delayed_t_sep, delayed_valve, inputs, p).map(|e| e.rates)
}
