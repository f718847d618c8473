//! Thermal dynamics, linearization and PID tuning for an alkaline electrolysis system with
//! transport delays in the lye and coolant loops.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod history;
pub mod linearize;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pid;
pub mod poly;
pub mod scenario;
pub mod sim;
pub mod stepresp;
pub mod tf;
pub mod tuner;

pub use equilibrium::{find_equilibrium, Equilibrium, OperatingPoint};
pub use error::{Error, Result};
pub use linearize::{linearize, DelayedLinearModel};
pub use metrics::{scenario_stats, step_metrics, ScenarioStats, StepMetrics};
pub use model::{ExogenousInputs, Flags, ThermalState};
pub use params::SystemParams;
pub use pid::{Feedback, PidParams, PidRuntime};
pub use poly::Poly;
pub use scenario::{ScenarioConfig, ScenarioFile, Schedule};
pub use sim::{simulate, SimulationTrace, TraceRow};
pub use tf::{closed_loop, pade_first_order, plant_transfer, PoleSet, RationalTf};
pub use tuner::{delay_sweep, is_stable, stability_region, tune, GridSpec, StabilityMap, TuningResult};
