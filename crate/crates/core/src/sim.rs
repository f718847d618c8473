//! Fixed-step closed-loop simulation of the delayed plant with a sampled PID controller.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::HistoryBuffer;
use crate::model::{evaluate, Evaluation, ExogenousInputs, Flags, ThermalState};
use crate::params::SystemParams;
use crate::pid::{pid_step, Feedback, PidRuntime};
use crate::scenario::ScenarioConfig;

/// A plant whose rates depend on the current state plus delayed separator temperature and valve.
pub trait DelayedPlant {
    /// Lye transport delay, s.
    fn tau1(&self) -> f64;
    /// Coolant transport delay, s.
    fn tau2(&self) -> f64;
    fn evaluate(
        &self,
        state: &ThermalState,
        delayed_t_sep: f64,
        delayed_valve: f64,
        inputs: &ExogenousInputs,
    ) -> Result<Evaluation>;
}

impl DelayedPlant for SystemParams {
    fn tau1(&self) -> f64 {
        self.tau1
    }
    fn tau2(&self) -> f64 {
        self.tau2
    }
    fn evaluate(&self, state: &ThermalState, d_sep: f64, d_valve: f64, inputs: &ExogenousInputs) -> Result<Evaluation> {
        evaluate(state, d_sep, d_valve, inputs, self)
    }
}

/// One committed time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub current: f64,
    pub t_stack: f64,
    pub t_sep: f64,
    pub t_cool: f64,
    /// Valve command issued at `t`.
    pub valve: f64,
    pub t_aim: f64,
    pub q_ele: f64,
    /// Stack plus separator losses to ambient, W.
    pub q_dis_total: f64,
    pub flags: Flags,
}

impl TraceRow {
    pub fn state(&self) -> ThermalState {
        ThermalState::new(self.t_stack, self.t_sep, self.t_cool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub feedback: Feedback,
    pub rows: Vec<TraceRow>,
}

pub const CSV_HEADER: &str = "t,current,t_stack,t_sep,t_cool,valve,t_aim,q_ele,q_dis_total,flags";

impl SimulationTrace {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// The controlled temperature at every row.
    pub fn feedback_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| self.feedback.select(&r.state())).collect()
    }

    pub fn flags(&self) -> Flags {
        self.rows.iter().fold(Flags::NONE, |acc, r| acc | r.flags)
    }

    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace has at least the initial row")
    }

    /// CSV text, keeping every `decimation`-th row and always the last one.
    pub fn to_csv(&self, decimation: usize) -> String {
        let step = decimation.max(1);
        let mut out = String::with_capacity(self.rows.len() / step * 200 + 100);
        out.push_str(CSV_HEADER);
        out.push('\n');
        let n = self.rows.len();
        for (k, r) in self.rows.iter().enumerate() {
            if k % step != 0 && k + 1 != n {
                continue;
            }
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.t,
                r.current,
                r.t_stack,
                r.t_sep,
                r.t_cool,
                r.valve,
                r.t_aim,
                r.q_ele,
                r.q_dis_total,
                r.flags.bits()
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, decimation: usize) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv(decimation).as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

/// Simulate the nonlinear plant.
pub fn simulate(config: &ScenarioConfig, params: &SystemParams) -> Result<SimulationTrace> {
    params.validate()?;
    simulate_plant(config, params)
}

/// Simulate any delayed plant under the scenario's inputs and controller.
///
/// RK4 with the delayed arguments held at their step-start values; the controller samples
/// every `controller_period` and holds its output in between.
pub fn simulate_plant<P: DelayedPlant + ?Sized>(config: &ScenarioConfig, plant: &P) -> Result<SimulationTrace> {
    config.validate()?;
    let dt = config.dt;
    let n = config.steps();
    let stride = config.controller_stride();
    let pid = config.pid;
    let (tau1, tau2) = (plant.tau1(), plant.tau2());

    let mut x = config.initial_state;
    let mut valve = config.initial_valve;
    let mut runtime = PidRuntime::bumpless(&pid, valve);
    let mut history = HistoryBuffer::new(tau1.max(tau2) + dt, x.t_sep, valve);
    let mut rows = Vec::with_capacity(n + 1);

    for k in 0..=n {
        let t = k as f64 * dt;
        let inputs = ExogenousInputs {
            current: config.current_profile.value_at(t),
            t_amb: config.ambient_profile.value_at(t),
            t_cool_in: config.coolant_inlet,
            t_aim: config.setpoint_profile.value_at(t),
        };
        if k % stride == 0 {
            let error = pid.feedback.select(&x) - inputs.t_aim;
            valve = pid_step(error, &mut runtime, &pid, config.controller_period);
        }
        history.push(t, x.t_sep, valve);
        let d_sep = history.t_sep_at(t - tau1);
        let d_valve = history.valve_at(t - tau2);

        let abort = |step: usize, time: f64| {
            move |e: Error| Error::Aborted {
                step,
                time,
                source: Box::new(e),
            }
        };
        let e1 = plant.evaluate(&x, d_sep, d_valve, &inputs).map_err(abort(k, t))?;
        let mut row = TraceRow {
            t,
            current: inputs.current,
            t_stack: x.t_stack,
            t_sep: x.t_sep,
            t_cool: x.t_cool,
            valve,
            t_aim: inputs.t_aim,
            q_ele: e1.outputs.q_ele,
            q_dis_total: e1.outputs.q_dis_stack + e1.outputs.q_dis_sep,
            flags: e1.flags,
        };
        if k == n {
            rows.push(row);
            break;
        }

        let f = |s: &ThermalState| plant.evaluate(s, d_sep, d_valve, &inputs).map_err(abort(k + 1, t + dt));
        let k1 = e1.rates;
        let e2 = f(&(x + k1 * (0.5 * dt)))?;
        let e3 = f(&(x + e2.rates * (0.5 * dt)))?;
        let e4 = f(&(x + e3.rates * dt))?;
        row.flags |= e2.flags | e3.flags | e4.flags;
        rows.push(row);

        x = x + (k1 + e2.rates * 2.0 + e3.rates * 2.0 + e4.rates) * (dt / 6.0);
        if !x.is_finite() {
            return Err(Error::NonFiniteState {
                step: k + 1,
                time: t + dt,
            });
        }
    }

    Ok(SimulationTrace {
        feedback: pid.feedback,
        rows,
    })
}
