//! Physical, geometric and electrochemical constants of the plant.
//!
//! Defaults describe a 5 Nm³/h alkaline electrolysis platform (26 cells arranged as two
//! parallel strings of 13). Temperatures are in °C, delays in seconds, everything else SI.
//!
//! A few constants are not published for that platform and carry engineering defaults:
//! the reversible/thermoneutral voltages (1.229 V / 1.482 V), the lye and coolant
//! properties (30 wt% KOH at ~80 °C, water) and `k_valve`, which is sized so that a
//! fully open valve removes the rated heat with a 20 K coolant temperature rise.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rated stack current of the default platform, A.
pub const RATED_CURRENT: f64 = 820.0;
/// Rated after-stack temperature used as the default design point, °C.
pub const RATED_STACK_TEMPERATURE: f64 = 80.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Total number of cells.
    pub n_cells: u32,
    /// Number of parallel cell strings sharing the terminal current.
    pub n_parallel: u32,
    /// Active cell area, m².
    pub cell_area: f64,
    /// Reversible cell voltage, V.
    pub u_rev: f64,
    /// Thermoneutral cell voltage, V.
    pub u_th: f64,
    /// Ohmic U-I parameters, Ω·m² and Ω·m²/K.
    pub r1: f64,
    pub r2: f64,
    /// Tafel slope (base-10 logarithm), V.
    pub s_tafel: f64,
    /// Overvoltage coefficients, m²/A, m²·K/A, m²·K²/A.
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    /// Lumped heat capacities, J/K.
    pub c_stack: f64,
    pub c_sep: f64,
    pub c_cool: f64,
    pub lye_specific_heat: f64,
    pub lye_density: f64,
    /// Electrolyte circulation, m³/s.
    pub lye_flow: f64,
    pub cool_specific_heat: f64,
    pub cool_density: f64,
    /// Coolant flow at full valve opening, m³/s.
    pub k_valve: f64,
    /// Cooling-coil heat-transfer coefficient times area, W/K.
    pub ka_coil: f64,
    /// Separator thermal resistance to ambient, K/W.
    pub r_sep: f64,
    pub stack_surface_area: f64,
    pub stack_diameter: f64,
    pub emissivity: f64,
    pub stefan_boltzmann: f64,
    /// Transport delay from stack inlet to outlet temperature, s.
    pub tau1: f64,
    /// Delay from valve command to cooling-coil response, s.
    pub tau2: f64,
    /// Carried for completeness; no equation uses it.
    pub info: PlantGeometry,
}

/// Informational plant data. None of these values enter the thermal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantGeometry {
    pub cell_diameter: f64,
    pub stack_length: f64,
    pub electrode_volume: f64,
    pub free_stack_volume: f64,
    pub void_fraction: f64,
    pub separator_diameter: f64,
    pub separator_length: f64,
    pub separator_volume: f64,
    pub separator_liquid_level: f64,
    pub koh_mass_fraction: f64,
}

impl Default for PlantGeometry {
    fn default() -> Self {
        Self {
            cell_diameter: 0.5,
            stack_length: 0.267,
            electrode_volume: 0.03,
            free_stack_volume: 0.05,
            void_fraction: 0.5,
            separator_diameter: 0.219,
            separator_length: 2.0,
            separator_volume: 1.38,
            separator_liquid_level: 0.5,
            koh_mass_fraction: 0.312,
        }
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            n_cells: 26,
            n_parallel: 2,
            cell_area: 0.196,
            u_rev: 1.229,
            u_th: 1.482,
            r1: 1.71e-4,
            r2: -1.96e-7,
            s_tafel: 0.16,
            t1: -0.24,
            t2: 26.23,
            t3: 139.88,
            c_stack: 120e3,
            c_sep: 146e3,
            c_cool: 23e3,
            lye_specific_heat: 3100.0,
            lye_density: 1280.0,
            lye_flow: 0.5 / 3600.0,
            cool_specific_heat: 4180.0,
            cool_density: 1000.0,
            // Q_ele(820 A, 80 °C) / (rho_c * c_c * 20 K)
            k_valve: 5.9e-5,
            ka_coil: 140.0,
            r_sep: 0.04,
            stack_surface_area: 1.1,
            stack_diameter: 0.61,
            emissivity: 0.8,
            stefan_boltzmann: 5.670374419e-8,
            tau1: 360.0,
            tau2: 240.0,
            info: PlantGeometry::default(),
        }
    }
}

impl SystemParams {
    pub fn from_json(text: &str) -> Result<Self> {
        let params: SystemParams = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Lye heat-capacity flow c·ρ·v, W/K.
    pub fn lye_capacity_flow(&self) -> f64 {
        self.lye_specific_heat * self.lye_density * self.lye_flow
    }

    /// Current through one cell string, A.
    pub fn cell_current(&self, current: f64) -> f64 {
        current / self.n_parallel as f64
    }

    pub fn current_density(&self, current: f64) -> f64 {
        self.cell_current(current) / self.cell_area
    }

    pub fn with_delays(&self, tau1: f64, tau2: f64) -> Self {
        Self {
            tau1,
            tau2,
            ..self.clone()
        }
    }

    /// Valve gain for which a fully open valve carries `heat` watts with the given
    /// coolant temperature rise.
    pub fn k_valve_for(&self, heat: f64, coolant_rise: f64) -> f64 {
        heat / (self.cool_density * self.cool_specific_heat * coolant_rise)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cell_area", self.cell_area),
            ("c_stack", self.c_stack),
            ("c_sep", self.c_sep),
            ("c_cool", self.c_cool),
            ("lye_specific_heat", self.lye_specific_heat),
            ("lye_density", self.lye_density),
            ("lye_flow", self.lye_flow),
            ("cool_specific_heat", self.cool_specific_heat),
            ("cool_density", self.cool_density),
            ("k_valve", self.k_valve),
            ("ka_coil", self.ka_coil),
            ("r_sep", self.r_sep),
            ("stack_surface_area", self.stack_surface_area),
            ("stack_diameter", self.stack_diameter),
            ("stefan_boltzmann", self.stefan_boltzmann),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(field, format!("must be finite and > 0, got {value}")));
            }
        }
        // Zero delays are allowed: delay sweeps start from the delay-free plant.
        for (field, value) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid(field, format!("must be finite and >= 0, got {value}")));
            }
        }
        let finite = [
            ("u_rev", self.u_rev),
            ("u_th", self.u_th),
            ("r1", self.r1),
            ("r2", self.r2),
            ("s_tafel", self.s_tafel),
            ("t1", self.t1),
            ("t2", self.t2),
            ("t3", self.t3),
        ];
        for (field, value) in finite {
            if !value.is_finite() {
                return Err(Error::invalid(field, "must be finite"));
            }
        }
        if !(self.emissivity >= 0.0 && self.emissivity <= 1.0) {
            return Err(Error::invalid(
                "emissivity",
                format!("must lie in [0, 1], got {}", self.emissivity),
            ));
        }
        if self.n_parallel == 0 {
            return Err(Error::invalid("n_parallel", "must be >= 1"));
        }
        if self.n_cells == 0 || !self.n_cells.is_multiple_of(self.n_parallel) {
            return Err(Error::invalid(
                "n_cells",
                format!(
                    "{} cells cannot be split into {} equal strings",
                    self.n_cells, self.n_parallel
                ),
            ));
        }
        Ok(())
    }
}
