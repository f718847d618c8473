//! Discrete PID valve controller with output clamping and conditional-integration anti-windup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ThermalState;

/// Which temperature the controller regulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// Stack outlet temperature, T_stack.
    #[serde(alias = "after")]
    AfterStack,
    /// Stack inlet / separator outlet temperature, T_sep.
    #[serde(alias = "before")]
    BeforeStack,
}

impl Feedback {
    pub fn select(self, state: &ThermalState) -> f64 {
        match self {
            Feedback::AfterStack => state.t_stack,
            Feedback::BeforeStack => state.t_sep,
        }
    }

    /// Index of the fed-back state (0 = stack, 1 = separator).
    pub fn index(self) -> usize {
        match self {
            Feedback::AfterStack => 0,
            Feedback::BeforeStack => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feedback::AfterStack => "after_stack",
            Feedback::BeforeStack => "before_stack",
        }
    }
}

impl std::str::FromStr for Feedback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "after" | "after_stack" | "after-stack" => Ok(Feedback::AfterStack),
            "before" | "before_stack" | "before-stack" => Ok(Feedback::BeforeStack),
            other => Err(Error::invalid(
                "feedback",
                format!("expected `after` or `before`, got `{other}`"),
            )),
        }
    }
}

/// Controller gains. The error is `T_f - T_aim`, so a hot plant opens the valve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidParams {
    /// opening/K
    pub kp: f64,
    /// opening/(K·s)
    pub ki: f64,
    /// opening·s/K
    pub kd: f64,
    pub feedback: Feedback,
}

impl PidParams {
    pub const fn new(kp: f64, ki: f64, kd: f64, feedback: Feedback) -> Self {
        Self { kp, ki, kd, feedback }
    }

    /// Tuned after-stack controller for the default platform.
    pub const AFTER_STACK_REFERENCE: PidParams = PidParams::new(0.02, 1.1e-5, 6.0, Feedback::AfterStack);
    /// Tuned before-stack controller for the default platform.
    pub const BEFORE_STACK_REFERENCE: PidParams = PidParams::new(0.031, 3.1e-5, 0.0, Feedback::BeforeStack);

    pub fn reference(feedback: Feedback) -> Self {
        match feedback {
            Feedback::AfterStack => Self::AFTER_STACK_REFERENCE,
            Feedback::BeforeStack => Self::BEFORE_STACK_REFERENCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("pid.kp", self.kp), ("pid.ki", self.ki), ("pid.kd", self.kd)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(field, format!("gain must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Accumulated controller state between samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidRuntime {
    /// K·s
    pub integral_accum: f64,
    /// K
    pub prev_error: f64,
    pub prev_output: f64,
}

impl PidRuntime {
    /// Runtime whose integral term alone reproduces `output` at zero error.
    ///
    /// Without an integral gain the output cannot be held, so the accumulator stays at zero.
    pub fn bumpless(pid: &PidParams, output: f64) -> Self {
        let integral_accum = if pid.ki > 0.0 { output / pid.ki } else { 0.0 };
        Self {
            integral_accum,
            prev_error: 0.0,
            prev_output: output,
        }
    }
}

/// One controller sample. Returns the valve opening in [0, 1].
///
/// The integral only advances when the resulting output is unsaturated, or when the error
/// pushes the output back toward the band.
pub fn pid_step(error: f64, runtime: &mut PidRuntime, pid: &PidParams, period: f64) -> f64 {
    debug_assert!(period > 0.0);
    let derivative = pid.kd * (error - runtime.prev_error) / period;
    let candidate = runtime.integral_accum + error * period;
    let mut raw = pid.kp * error + pid.ki * candidate + derivative;

    let winding_up = (raw > 1.0 && error > 0.0) || (raw < 0.0 && error < 0.0);
    if winding_up {
        raw = pid.kp * error + pid.ki * runtime.integral_accum + derivative;
    } else {
        runtime.integral_accum = candidate;
    }

    let output = raw.clamp(0.0, 1.0);
    runtime.prev_error = error;
    runtime.prev_output = output;
    output
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_error_from_rest_is_closed() {
        let mut rt = PidRuntime::default();
        let pid = PidParams::AFTER_STACK_REFERENCE;
        assert_eq!(pid_step(0.0, &mut rt, &pid, 1.0), 0.0);
        assert_eq!(rt.integral_accum, 0.0);
    }

    #[test]
    fn cold_start_negative_error_freezes_integral() {
        let mut rt = PidRuntime::default();
        let pid = PidParams::AFTER_STACK_REFERENCE;
        assert_eq!(pid_step(-10.0, &mut rt, &pid, 1.0), 0.0);
        assert_eq!(rt.integral_accum, 0.0);
        assert_eq!(rt.prev_error, -10.0);
    }

    /// Independent scalar recurrence for a constant error, written without the runtime struct.
    fn recurrence(kp: f64, ki: f64, kd: f64, e: f64, n: usize) -> Vec<f64> {
        let (mut integ, mut prev) = (0.0f64, 0.0f64);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let d = kd * (e - prev);
            let trial = kp * e + ki * (integ + e) + d;
            let freeze = (trial > 1.0 && e > 0.0) || (trial < 0.0 && e < 0.0);
            let u = if freeze { kp * e + ki * integ + d } else { trial };
            if !freeze {
                integ += e;
            }
            prev = e;
            out.push(u.clamp(0.0, 1.0));
        }
        out
    }

    #[test]
    fn constant_error_matches_recurrence() {
        let pid = PidParams::AFTER_STACK_REFERENCE;
        let expected = recurrence(0.02, 1.1e-5, 6.0, 1.0, 100);
        // First sample saturates on the derivative kick, integral frozen; afterwards the
        // output ramps from kp*e with slope ki.
        assert_eq!(expected[0], 1.0);
        assert!((expected[1] - (0.02 + 1.1e-5)).abs() < 1e-15);
        assert!((expected[99] - (0.02 + 99.0 * 1.1e-5)).abs() < 1e-14);

        let mut rt = PidRuntime::default();
        for (k, want) in expected.iter().enumerate() {
            let got = pid_step(1.0, &mut rt, &pid, 1.0);
            assert_eq!(got, *want, "sample {k}");
        }
    }

    #[test]
    fn bumpless_start_holds_output() {
        let pid = PidParams::BEFORE_STACK_REFERENCE;
        let mut rt = PidRuntime::bumpless(&pid, 0.07);
        let u = pid_step(0.0, &mut rt, &pid, 1.0);
        assert!((u - 0.07).abs() < 1e-15);
    }

    #[test]
    fn feedback_parsing() {
        assert_eq!("after".parse::<Feedback>().unwrap(), Feedback::AfterStack);
        assert_eq!("before_stack".parse::<Feedback>().unwrap(), Feedback::BeforeStack);
        assert!("middle".parse::<Feedback>().is_err());
        let f: Feedback = serde_json::from_str("\"before\"").unwrap();
        assert_eq!(f, Feedback::BeforeStack);
    }

    proptest! {
        #[test]
        fn output_in_band_and_integral_bounded(
            errors in proptest::collection::vec(-20.0f64..20.0, 1..400),
            kp in 0.0f64..1.0, ki in 0.0f64..1e-2, kd in 0.0f64..20.0,
        ) {
            let pid = PidParams::new(kp, ki, kd, Feedback::AfterStack);
            let mut rt = PidRuntime::default();
            for &e in &errors {
                let u = pid_step(e, &mut rt, &pid, 1.0);
                prop_assert!((0.0..=1.0).contains(&u));
                // |integral| grows at most by |e| per sample, never beyond the run length bound.
                prop_assert!(rt.integral_accum.abs() <= 20.0 * errors.len() as f64);
            }
        }

        #[test]
        fn saturated_high_never_accumulates_positive_error(e in 0.1f64..50.0) {
            let pid = PidParams::new(0.5, 0.1, 0.0, Feedback::AfterStack);
            let mut rt = PidRuntime { integral_accum: 20.0, prev_error: e, prev_output: 1.0 };
            let before = rt.integral_accum;
            let u = pid_step(e, &mut rt, &pid, 1.0);
            prop_assert_eq!(u, 1.0);
            prop_assert_eq!(rt.integral_accum, before);
        }
    }
}
