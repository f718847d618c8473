//! Scenario configuration: input schedules, initial conditions and controllers.
//!
//! [`ScenarioConfig`] is one fully resolved simulation run. [`ScenarioFile`] is the on-disk
//! format, which may compare several controllers from a shared initial condition and
//! may request a seeded synthetic current profile.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{default_ambient, default_coolant_inlet, find_equilibrium, OperatingPoint};
use crate::error::{Error, Result};
use crate::model::ThermalState;
use crate::params::{SystemParams, RATED_CURRENT, RATED_STACK_TEMPERATURE};
use crate::pid::{Feedback, PidParams};

/// Piecewise-constant schedule of `(time s, value)` breakpoints.
///
/// Before the first breakpoint the first value applies. JSON accepts either a bare number
/// (constant) or a list of `[t, value]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "Vec<(f64, f64)>")]
pub struct Schedule {
    points: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScheduleRepr {
    Constant(f64),
    Steps(Vec<(f64, f64)>),
}

impl TryFrom<ScheduleRepr> for Schedule {
    type Error = Error;
    fn try_from(r: ScheduleRepr) -> Result<Self> {
        match r {
            ScheduleRepr::Constant(v) => Ok(Schedule::constant(v)),
            ScheduleRepr::Steps(points) => Schedule::new(points),
        }
    }
}

impl From<Schedule> for Vec<(f64, f64)> {
    fn from(s: Schedule) -> Self {
        s.points
    }
}

impl Schedule {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("schedule", "needs at least one breakpoint"));
        }
        if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(Error::invalid("schedule", "breakpoints must be finite"));
        }
        if points.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::invalid("schedule", "breakpoints must be sorted by time"));
        }
        Ok(Self { points })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    /// `before` until `at`, then `after`.
    pub fn step(before: f64, at: f64, after: f64) -> Self {
        Self {
            points: vec![(0.0, before), (at, after)],
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.points.partition_point(|(ti, _)| *ti <= t);
        self.points[idx.saturating_sub(1)].1
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Same schedule with every value shifted by `offset`.
    pub fn offset(&self, offset: f64) -> Self {
        Self {
            points: self.points.iter().map(|&(t, v)| (t, v + offset)).collect(),
        }
    }
}

/// Seeded hourly current levels drawn uniformly in `[min_fraction, max_fraction] * rated_current`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticHourly {
    #[serde(default = "rated_current")]
    pub rated_current: f64,
    #[serde(default = "default_min_fraction")]
    pub min_fraction: f64,
    #[serde(default = "one")]
    pub max_fraction: f64,
    pub hours: usize,
    #[serde(default)]
    pub seed: u64,
}

fn rated_current() -> f64 {
    RATED_CURRENT
}
fn default_min_fraction() -> f64 {
    0.4
}
fn one() -> f64 {
    1.0
}

impl SyntheticHourly {
    pub fn schedule(&self) -> Result<Schedule> {
        if !(0.0 <= self.min_fraction && self.min_fraction <= self.max_fraction) {
            return Err(Error::invalid(
                "synthetic_hourly",
                "need 0 <= min_fraction <= max_fraction",
            ));
        }
        if self.hours == 0 {
            return Err(Error::invalid("synthetic_hourly.hours", "must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let points = (0..self.hours)
            .map(|h| {
                let frac = if self.max_fraction > self.min_fraction {
                    rng.gen_range(self.min_fraction..=self.max_fraction)
                } else {
                    self.min_fraction
                };
                (h as f64 * 3600.0, frac * self.rated_current)
            })
            .collect();
        Schedule::new(points)
    }
}

/// A schedule, or a request for a synthetic one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Synthetic { synthetic_hourly: SyntheticHourly },
    Schedule(Schedule),
}

impl ProfileSpec {
    pub fn resolve(&self, seed_override: Option<u64>) -> Result<Schedule> {
        match self {
            ProfileSpec::Schedule(s) => Ok(s.clone()),
            ProfileSpec::Synthetic { synthetic_hourly } => {
                let mut spec = synthetic_hourly.clone();
                if let Some(seed) = seed_override {
                    spec.seed = seed;
                }
                spec.schedule()
            }
        }
    }
}

/// One resolved simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// s
    pub duration: f64,
    /// Integration step, s.
    #[serde(default = "one")]
    pub dt: f64,
    /// Controller sampling period, s; an integer multiple of `dt`.
    #[serde(default = "one")]
    pub controller_period: f64,
    /// Terminal current, A.
    pub current_profile: Schedule,
    /// °C
    pub ambient_profile: Schedule,
    /// Controller set point, °C.
    pub setpoint_profile: Schedule,
    /// Fixed coolant inlet temperature, °C.
    pub coolant_inlet: f64,
    pub initial_state: ThermalState,
    /// Valve opening before t = 0 and the controller's bumpless starting output.
    pub initial_valve: f64,
    pub pid: PidParams,
}

impl ScenarioConfig {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn controller_stride(&self) -> usize {
        (self.controller_period / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return Err(Error::invalid("duration", "must be at least one step"));
        }
        let ratio = self.controller_period / self.dt;
        if !(ratio >= 1.0 - 1e-9) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::invalid(
                "controller_period",
                format!(
                    "must be an integer multiple of dt >= dt, got {} with dt = {}",
                    self.controller_period, self.dt
                ),
            ));
        }
        let span = (self.duration / self.dt).round() * self.dt;
        if (span - self.duration).abs() > 1e-9 * self.duration {
            return Err(Error::invalid("duration", "must be an integer multiple of dt"));
        }
        if !self.initial_state.is_finite() {
            return Err(Error::invalid("initial_state", "temperatures must be finite"));
        }
        if !(0.0..=1.0).contains(&self.initial_valve) {
            return Err(Error::invalid("initial_valve", "must lie in [0, 1]"));
        }
        if self.current_profile.points().iter().any(|&(_, i)| i < 0.0) {
            return Err(Error::invalid("current_profile", "current must be >= 0"));
        }
        if !self.coolant_inlet.is_finite() {
            return Err(Error::invalid("coolant_inlet", "must be finite"));
        }
        self.pid.validate()
    }
}

/// How the initial condition is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Steady state with the after-stack temperature pinned at `t_stack` for `current`.
    Equilibrium {
        current: f64,
        t_stack: f64,
    },
    Explicit {
        state: ThermalState,
        valve: f64,
    },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Equilibrium {
            current: RATED_CURRENT,
            t_stack: RATED_STACK_TEMPERATURE,
        }
    }
}

/// Scenario file: shared inputs plus one or more named controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub duration: f64,
    #[serde(default = "one")]
    pub dt: f64,
    #[serde(default = "one")]
    pub controller_period: f64,
    pub current_profile: ProfileSpec,
    #[serde(default = "default_ambient_profile")]
    pub ambient_profile: ProfileSpec,
    /// Omitted: hold each controller's feedback temperature at the initial state.
    #[serde(default)]
    pub setpoint_profile: Option<ProfileSpec>,
    /// Added to the set point of every controller (used for set-point steps).
    #[serde(default)]
    pub setpoint_offset: Option<Schedule>,
    #[serde(default = "default_coolant_inlet")]
    pub coolant_inlet: f64,
    #[serde(default)]
    pub initial: InitialSpec,
    pub controllers: BTreeMap<String, PidParams>,
    /// Window (s) for the RMS tracking statistic; the whole trace when omitted.
    #[serde(default)]
    pub stats_window: Option<(f64, f64)>,
    /// Write every n-th trace row.
    #[serde(default = "one_usize")]
    pub decimation: usize,
}

fn default_ambient_profile() -> ProfileSpec {
    ProfileSpec::Schedule(Schedule::constant(default_ambient()))
}
fn one_usize() -> usize {
    1
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: ScenarioFile = serde_json::from_str(text)?;
        if f.controllers.is_empty() {
            return Err(Error::invalid("controllers", "at least one controller is required"));
        }
        if f.decimation == 0 {
            return Err(Error::invalid("decimation", "must be >= 1"));
        }
        for (name, pid) in &f.controllers {
            pid.validate().map_err(|e| match e {
                Error::Invalid { field, reason } => Error::invalid(format!("controllers.{name}.{field}"), reason),
                other => other,
            })?;
        }
        Ok(f)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// One resolved run per controller, in name order.
    pub fn resolve(&self, params: &SystemParams, seed_override: Option<u64>) -> Result<Vec<(String, ScenarioConfig)>> {
        let current_profile = self.current_profile.resolve(seed_override)?;
        let ambient_profile = self.ambient_profile.resolve(seed_override)?;
        let (initial_state, initial_valve) = match &self.initial {
            InitialSpec::Explicit { state, valve } => (*state, *valve),
            InitialSpec::Equilibrium { current, t_stack } => {
                let op = OperatingPoint {
                    current: *current,
                    controlled_temp: *t_stack,
                    feedback: Feedback::AfterStack,
                    t_amb: ambient_profile.value_at(0.0),
                    t_cool_in: self.coolant_inlet,
                };
                let eq = find_equilibrium(params, &op)?;
                (eq.state, eq.valve)
            }
        };

        let mut runs = Vec::with_capacity(self.controllers.len());
        for (name, pid) in &self.controllers {
            let mut setpoint = match &self.setpoint_profile {
                Some(spec) => spec.resolve(seed_override)?,
                None => Schedule::constant(pid.feedback.select(&initial_state)),
            };
            if let Some(offset) = &self.setpoint_offset {
                setpoint = add_schedules(&setpoint, offset);
            }
            let config = ScenarioConfig {
                duration: self.duration,
                dt: self.dt,
                controller_period: self.controller_period,
                current_profile: current_profile.clone(),
                ambient_profile: ambient_profile.clone(),
                setpoint_profile: setpoint,
                coolant_inlet: self.coolant_inlet,
                initial_state,
                initial_valve,
                pid: *pid,
            };
            config.validate()?;
            runs.push((name.clone(), config));
        }
        Ok(runs)
    }
}

/// Pointwise sum of two piecewise-constant schedules.
fn add_schedules(a: &Schedule, b: &Schedule) -> Schedule {
    let mut times: Vec<f64> = a.points().iter().chain(b.points()).map(|p| p.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let points = times.into_iter().map(|t| (t, a.value_at(t) + b.value_at(t))).collect();
    Schedule { points }
}
