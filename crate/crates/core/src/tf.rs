//! Rational transfer functions of the delayed plant and the PID loop.
//!
//! Polynomials are kept in a rescaled Laplace variable `σ = s · time_unit` (hours by default)
//! so that degree-6 coefficients stay well conditioned. Evaluation, poles and zeros are
//! exposed in 1/s.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::DelayedLinearModel;
use crate::pid::{Feedback, PidParams};
use crate::poly::Poly;

/// Seconds per polynomial time unit.
pub const HOUR: f64 = 3600.0;
/// Relative distance below which a numerator and denominator root are treated as one factor.
pub const CANCELLATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalTf {
    /// Ascending coefficients in σ.
    pub numerator: Poly,
    /// Ascending coefficients in σ.
    pub denominator: Poly,
    /// Seconds per unit of σ.
    pub time_unit: f64,
}

impl RationalTf {
    pub fn new(numerator: Poly, denominator: Poly, time_unit: f64) -> Result<Self> {
        if denominator.is_zero() {
            return Err(Error::invalid("denominator", "must be nonzero"));
        }
        Ok(Self {
            numerator,
            denominator,
            time_unit,
        })
    }

    pub fn is_proper(&self) -> bool {
        self.numerator.is_zero() || self.numerator.degree() <= self.denominator.degree()
    }

    /// Value at the complex frequency `s` in 1/s.
    pub fn eval(&self, s: Complex64) -> Complex64 {
        let z = s * self.time_unit;
        self.numerator.eval_complex(z) / self.denominator.eval_complex(z)
    }

    pub fn dc_gain(&self) -> f64 {
        self.numerator.eval(0.0) / self.denominator.eval(0.0)
    }

    /// Poles in 1/s, untagged.
    pub fn poles(&self) -> Result<PoleSet> {
        let roots = self.denominator.roots()?;
        Ok(PoleSet {
            poles: roots
                .into_iter()
                .map(|z| Pole {
                    value: z / self.time_unit,
                    origin: PoleOrigin::Coupled,
                })
                .collect(),
        })
    }

    /// Zeros in 1/s; empty for a constant numerator.
    pub fn zeros(&self) -> Result<Vec<Complex64>> {
        if self.numerator.is_zero() || self.numerator.degree() == 0 {
            return Ok(Vec::new());
        }
        Ok(self
            .numerator
            .roots()?
            .into_iter()
            .map(|z| z / self.time_unit)
            .collect())
    }

    /// Removes factors shared by numerator and denominator (roots within `CANCELLATION_TOL`).
    pub fn reduce(&self) -> Result<Self> {
        if self.numerator.is_zero() {
            return Ok(Self {
                numerator: Poly::zero(),
                ..self.clone()
            });
        }
        if self.numerator.degree() == 0 || self.denominator.degree() == 0 {
            return Ok(self.clone());
        }
        let zn = self.numerator.roots()?;
        let zd = self.denominator.roots()?;
        let mut used = vec![false; zd.len()];
        let (mut num, mut den) = (self.numerator.clone(), self.denominator.clone());
        for z in zn.iter().filter(|z| z.im >= 0.0) {
            let hit = zd
                .iter()
                .enumerate()
                .find(|(k, w)| !used[*k] && w.im >= 0.0 && (*w - z).norm() <= CANCELLATION_TOL * z.norm().max(1.0));
            if let Some((k, w)) = hit {
                used[k] = true;
                let factor = if w.im == 0.0 && z.im == 0.0 {
                    Poly::new(vec![-0.5 * (w.re + z.re), 1.0])
                } else {
                    let m = 0.5 * (w + z);
                    Poly::new(vec![m.norm_sqr(), -2.0 * m.re, 1.0])
                };
                num = num.div_rem(&factor).0;
                den = den.div_rem(&factor).0;
            }
        }
        Ok(Self {
            numerator: num,
            denominator: den,
            time_unit: self.time_unit,
        })
    }
}

/// Which open-loop element a closed-loop pole sits on, when it can be told apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoleOrigin {
    Plant,
    DelayApprox,
    Controller,
    /// Moved by feedback or produced by coupling; no single origin.
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    /// 1/s
    pub value: Complex64,
    pub origin: PoleOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleSet {
    pub poles: Vec<Pole>,
}

impl PoleSet {
    pub fn len(&self) -> usize {
        self.poles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poles.is_empty()
    }

    /// Largest real part, 1/s; -inf for an empty set.
    pub fn max_real(&self) -> f64 {
        self.poles.iter().map(|p| p.value.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn values(&self) -> Vec<Complex64> {
        self.poles.iter().map(|p| p.value).collect()
    }

    fn tag(mut self, references: &[(Complex64, PoleOrigin)]) -> Self {
        for p in &mut self.poles {
            if let Some((_, origin)) = references
                .iter()
                .find(|(r, _)| (p.value - r).norm() <= 1e-6 * r.norm().max(p.value.norm()).max(1e-12))
            {
                p.origin = *origin;
            }
        }
        self
    }
}

/// First-order Padé approximant of `e^{-τs}` in the given time unit.
pub fn pade_first_order_in(tau: f64, time_unit: f64) -> RationalTf {
    let h = 0.5 * tau / time_unit;
    RationalTf {
        numerator: Poly::new(vec![1.0, -h]),
        denominator: Poly::new(vec![1.0, h]),
        time_unit,
    }
}

/// `(1 - τs/2)/(1 + τs/2)`; τ = 0 gives the constant 1.
pub fn pade_first_order(tau: f64) -> RationalTf {
    pade_first_order_in(tau, HOUR)
}

fn row_nonzero(m: &Matrix3<f64>, i: usize) -> bool {
    (0..3).any(|j| m[(i, j)] != 0.0)
}

fn det3(m: &[[Poly; 3]; 3]) -> Poly {
    let minor = |a: usize, b: usize, c: usize, d: usize| &(&m[1][a] * &m[2][b]) - &(&m[1][c] * &m[2][d]);
    let t0 = &m[0][0] * &minor(1, 2, 2, 1);
    let t1 = &m[0][1] * &minor(0, 2, 2, 0);
    let t2 = &m[0][2] * &minor(0, 1, 1, 0);
    &(&t0 - &t1) + &t2
}

/// Plant transfer function from valve opening to the fed-back temperature, in hours.
pub fn plant_transfer(model: &DelayedLinearModel, feedback: Feedback) -> Result<RationalTf> {
    plant_transfer_in(model, feedback, HOUR)
}

/// `F (σI - A - A1 P1 - A2 P2)^{-1} (E + E1 P1 + E2 P2)` with Padé delays, by Cramer's rule.
///
/// Each row is cleared of the Padé denominators it actually contains, so no spurious
/// factors enter the determinant.
pub fn plant_transfer_in(model: &DelayedLinearModel, feedback: Feedback, time_unit: f64) -> Result<RationalTf> {
    model.validate()?;
    let p1 = pade_first_order_in(model.tau1, time_unit);
    let p2 = pade_first_order_in(model.tau2, time_unit);
    let (n1, d1) = (&p1.numerator, &p1.denominator);
    let (n2, d2) = (&p2.numerator, &p2.denominator);
    let a = model.a * time_unit;
    let a1 = model.a1 * time_unit;
    let a2 = model.a2 * time_unit;
    let (e, e1, e2) = (model.e * time_unit, model.e1 * time_unit, model.e2 * time_unit);

    let mut m: [[Poly; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| Poly::zero()));
    let mut rhs: [Poly; 3] = std::array::from_fn(|_| Poly::zero());
    for i in 0..3 {
        let uses1 = row_nonzero(&a1, i) || e1[i] != 0.0;
        let uses2 = row_nonzero(&a2, i) || e2[i] != 0.0;
        let over_d1 = if uses2 { d2.clone() } else { Poly::one() };
        let over_d2 = if uses1 { d1.clone() } else { Poly::one() };
        let l = if uses1 { d1 * &over_d1 } else { over_d1.clone() };
        for j in 0..3 {
            let mut entry = l.scale(-a[(i, j)]);
            if uses1 {
                entry = &entry - &(n1 * &over_d1).scale(a1[(i, j)]);
            }
            if uses2 {
                entry = &entry - &(n2 * &over_d2).scale(a2[(i, j)]);
            }
            if i == j {
                entry = &entry + &(&Poly::x() * &l);
            }
            m[i][j] = entry;
        }
        let mut r = l.scale(e[i]);
        if uses1 {
            r = &r + &(n1 * &over_d1).scale(e1[i]);
        }
        if uses2 {
            r = &r + &(n2 * &over_d2).scale(e2[i]);
        }
        rhs[i] = r;
    }

    let den = det3(&m);
    let k = feedback.index();
    let mut mk = m.clone();
    for i in 0..3 {
        mk[i][k] = rhs[i].clone();
    }
    let num = det3(&mk);

    let scale = den.coeffs().iter().map(|c| c.abs()).fold(0.0, f64::max);
    if !(den.eval(0.0).abs() > 1e-12 * scale) {
        return Err(Error::DegeneratePlant);
    }
    RationalTf::new(num, den, time_unit)?.reduce()
}

/// PID numerator `C(σ)` over `σ^k`: with an integral gain `C = kd σ² + kp σ + ki` over σ,
/// otherwise `C = kd σ + kp` over 1.
fn controller_polynomial(pid: &PidParams, time_unit: f64) -> (Poly, bool) {
    let ki = pid.ki * time_unit;
    let kd = pid.kd / time_unit;
    if pid.ki > 0.0 {
        (Poly::new(vec![ki, pid.kp, kd]), true)
    } else {
        (Poly::new(vec![pid.kp, kd]), false)
    }
}

/// Closed-loop characteristic polynomial `σD - CN` (or `D - CN` without integral action).
pub fn characteristic_polynomial(plant: &RationalTf, pid: &PidParams) -> Poly {
    let (c, integrator) = controller_polynomial(pid, plant.time_unit);
    let cn = &c * &plant.numerator;
    if integrator {
        &(&Poly::x() * &plant.denominator) - &cn
    } else {
        &plant.denominator - &cn
    }
}

/// Set-point to feedback-temperature closed loop `-Gc Gp / (1 - Gc Gp)`.
///
/// The sign convention follows the controller error `T_f - T_aim`: a hot plant opens the
/// valve, and the plant gain is negative.
pub fn closed_loop(plant: &RationalTf, pid: &PidParams) -> Result<RationalTf> {
    pid.validate()?;
    if !plant.is_proper() {
        return Err(Error::invalid("plant", "transfer function must be proper"));
    }
    let (c, _) = controller_polynomial(pid, plant.time_unit);
    let num = -&(&c * &plant.numerator);
    let den = characteristic_polynomial(plant, pid);
    if num.is_zero() {
        return RationalTf::new(Poly::zero(), den, plant.time_unit);
    }
    if den.degree() >= 1 {
        for z in den.roots()? {
            if z.re.abs() <= CANCELLATION_TOL * z.norm().max(1.0) && num.relative_residual(z) < CANCELLATION_TOL {
                return Err(Error::MarginalCancellation {
                    root: z / plant.time_unit,
                });
            }
        }
    }
    RationalTf::new(num, den, plant.time_unit)?.reduce()
}

/// Closed-loop poles with origin hints from the open-loop plant eigenvalues, the Padé poles
/// and the integrator.
pub fn closed_loop_poles(model: &DelayedLinearModel, plant: &RationalTf, pid: &PidParams) -> Result<PoleSet> {
    let chi = characteristic_polynomial(plant, pid);
    let roots = chi.roots().map_err(|e| Error::Gains {
        kp: pid.kp,
        ki: pid.ki,
        kd: pid.kd,
        source: Box::new(e),
    })?;
    let set = PoleSet {
        poles: roots
            .into_iter()
            .map(|z| Pole {
                value: z / plant.time_unit,
                origin: PoleOrigin::Coupled,
            })
            .collect(),
    };
    let mut references: Vec<(Complex64, PoleOrigin)> = model
        .a
        .complex_eigenvalues()
        .iter()
        .map(|z| (*z, PoleOrigin::Plant))
        .collect();
    for tau in [model.tau1, model.tau2] {
        if tau > 0.0 {
            references.push((Complex64::new(-2.0 / tau, 0.0), PoleOrigin::DelayApprox));
        }
    }
    if pid.ki > 0.0 {
        references.push((Complex64::new(0.0, 0.0), PoleOrigin::Controller));
    }
    Ok(set.tag(&references))
}

/// Plant frequency response with true delay exponentials, by a direct complex solve.
pub fn exact_frequency_response(model: &DelayedLinearModel, feedback: Feedback, omega: f64) -> Result<Complex64> {
    let s = Complex64::new(0.0, omega);
    let p1 = (-s * model.tau1).exp();
    let p2 = (-s * model.tau2).exp();
    direct_response(model, feedback, s, p1, p2)
}

/// `F (sI - A - A1 p1 - A2 p2)^{-1} (E + E1 p1 + E2 p2)` for given delay factors.
pub fn direct_response(
    model: &DelayedLinearModel,
    feedback: Feedback,
    s: Complex64,
    p1: Complex64,
    p2: Complex64,
) -> Result<Complex64> {
    let c = |m: &Matrix3<f64>| m.map(|v| Complex64::new(v, 0.0));
    let cv = |v: &Vector3<f64>| v.map(|x| Complex64::new(x, 0.0));
    let m = Matrix3::from_diagonal_element(s) - c(&model.a) - c(&model.a1) * p1 - c(&model.a2) * p2;
    let rhs = cv(&model.e) + cv(&model.e1) * p1 + cv(&model.e2) * p2;
    let x = m.lu().solve(&rhs).ok_or(Error::DegeneratePlant)?;
    Ok(x[feedback.index()])
}

/// Closed-loop value from a plant value at the same frequency.
pub fn closed_loop_value(gp: Complex64, pid: &PidParams, s: Complex64) -> Complex64 {
    let gc = pid.kp + pid.ki / s + pid.kd * s;
    -gc * gp / (1.0 - gc * gp)
}
