//! Step responses of rational transfer functions by exact zero-order-hold stepping of a
//! controllable canonical realization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tf::RationalTf;

/// Shortest and longest step-response horizons, s.
pub const MIN_HORIZON: f64 = 7200.0;
pub const MAX_HORIZON: f64 = 400_000.0;
/// Horizon in multiples of the slowest pole time constant.
pub const HORIZON_TIME_CONSTANTS: f64 = 12.0;
pub const DEFAULT_SAMPLES: usize = 20_000;

/// Horizon long enough for the slowest pole (`max_real` in 1/s) to decay.
pub fn horizon_for(max_real: f64) -> f64 {
    if !(max_real < 0.0) {
        return MAX_HORIZON;
    }
    (HORIZON_TIME_CONSTANTS / max_real.abs()).clamp(MIN_HORIZON, MAX_HORIZON)
}

/// Unit step response sampled at `samples + 1` equally spaced times on `[0, t_end]` (s).
pub fn step_response(tf: &RationalTf, t_end: f64, samples: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !tf.is_proper() {
        return Err(Error::invalid(
            "transfer function",
            "step response needs a proper transfer function",
        ));
    }
    if !(t_end > 0.0) || samples == 0 {
        return Err(Error::invalid("t_end", "horizon and sample count must be positive"));
    }
    let times: Vec<f64> = (0..=samples).map(|k| t_end * k as f64 / samples as f64).collect();
    let den = &tf.denominator;
    let n = den.degree();
    let lead = den.leading();
    let num_c = tf.numerator.coeffs();
    let feedthrough = if tf.numerator.degree() == n && !tf.numerator.is_zero() {
        num_c[n] / lead
    } else {
        0.0
    };
    if n == 0 {
        return Ok((times, vec![feedthrough; samples + 1]));
    }

    // Monic denominator and strictly proper numerator remainder.
    let a: Vec<f64> = den.coeffs().iter().map(|c| c / lead).collect();
    let b: Vec<f64> = (0..n)
        .map(|k| num_c.get(k).copied().unwrap_or(0.0) / lead - feedthrough * a[k])
        .collect();

    // Augmented [[A, B], [0, 0]] in σ-time (the polynomial time unit).
    let h = t_end / samples as f64 / tf.time_unit;
    let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 0..n - 1 {
        m[(i, i + 1)] = h;
    }
    for k in 0..n {
        m[(n - 1, k)] = -a[k] * h;
    }
    m[(n - 1, n)] = h;
    let phi_aug = m.exp();
    let phi = phi_aug.view((0, 0), (n, n)).clone_owned();
    let gamma = phi_aug.view((0, n), (n, 1)).clone_owned();
    let c = DVector::from_vec(b);

    let mut x = DVector::<f64>::zeros(n);
    let mut y = Vec::with_capacity(samples + 1);
    for _ in 0..=samples {
        y.push(c.dot(&x) + feedthrough);
        x = &phi * &x + &gamma;
    }
    Ok((times, y))
}
