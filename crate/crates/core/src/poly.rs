//! Real polynomials in ascending coefficient order and their roots.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::linalg::balancing::balance_parlett_reinsch;
use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest coefficient magnitude ratio accepted after variable scaling.
pub const MAX_COEFFICIENT_SPAN: f64 = 1e14;

/// `c[0] + c[1] x + c[2] x^2 + ...`; trailing zeros are trimmed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Self { coeffs }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![c])
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// The monomial `x`.
    pub fn x() -> Self {
        Self::new(vec![0.0, 1.0])
    }

    /// Monic polynomial with the given roots; complex roots must come in conjugate pairs.
    pub fn from_roots(roots: &[Complex64]) -> Self {
        let mut c = vec![Complex64::new(1.0, 0.0)];
        for r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
            for (k, ck) in c.iter().enumerate() {
                next[k + 1] += ck;
                next[k] -= ck * r;
            }
            c = next;
        }
        Self::new(c.into_iter().map(|z| z.re).collect())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn leading(&self) -> f64 {
        *self.coeffs.last().unwrap()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * k).collect())
    }

    /// `p(alpha x)`.
    pub fn compose_scale(&self, alpha: f64) -> Self {
        let mut f = 1.0;
        Self::new(
            self.coeffs
                .iter()
                .map(|c| {
                    let v = c * f;
                    f *= alpha;
                    v
                })
                .collect(),
        )
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::zero();
        }
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * k as f64)
                .collect(),
        )
    }

    /// Quotient and remainder of polynomial long division.
    pub fn div_rem(&self, d: &Poly) -> (Poly, Poly) {
        assert!(!d.is_zero(), "division by the zero polynomial");
        let (n, m) = (self.degree(), d.degree());
        if n < m {
            return (Poly::zero(), self.clone());
        }
        let mut r = self.coeffs.clone();
        let mut q = vec![0.0; n - m + 1];
        let lead = d.leading();
        for k in (0..=n - m).rev() {
            let c = r[k + m] / lead;
            q[k] = c;
            for (i, dc) in d.coeffs.iter().enumerate() {
                r[k + i] -= c * dc;
            }
        }
        r.truncate(m.max(1));
        (Poly::new(q), Poly::new(r))
    }

    /// `|p(z)| / Σ|c_k||z|^k`: backward-error style residual of a root.
    pub fn relative_residual(&self, z: Complex64) -> f64 {
        let r = z.norm();
        let scale = self.coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c.abs());
        if scale == 0.0 {
            return 0.0;
        }
        self.eval_complex(z).norm() / scale
    }

    /// Ratio of largest to smallest nonzero coefficient after the scaling x → αx that
    /// equalizes the constant and leading terms.
    pub fn coefficient_span(&self) -> f64 {
        let n = self.degree();
        let c0 = self.coeffs.iter().position(|&c| c != 0.0).unwrap_or(0);
        if n == c0 {
            return 1.0;
        }
        let alpha = (self.coeffs[c0].abs() / self.leading().abs()).powf(1.0 / (n - c0) as f64);
        let scaled = self.compose_scale(alpha);
        let (lo, hi) = scaled
            .coeffs
            .iter()
            .filter(|c| **c != 0.0)
            .fold((f64::INFINITY, 0.0f64), |(l, h), c| (l.min(c.abs()), h.max(c.abs())));
        hi / lo
    }

    /// Roots from the eigenvalues of the balanced companion matrix, polished by Newton steps
    /// and returned closed under conjugation.
    pub fn roots(&self) -> Result<Vec<Complex64>> {
        let n = self.degree();
        if n == 0 {
            return Err(Error::DegreeTooLow { degree: n });
        }
        let span = self.coefficient_span();
        if !(span <= MAX_COEFFICIENT_SPAN) {
            return Err(Error::IllConditioned { span });
        }
        // Factor out roots at zero exactly.
        let zeros = self.coeffs.iter().position(|&c| c != 0.0).unwrap_or(0);
        let reduced = Poly::new(self.coeffs[zeros..].to_vec());
        let mut roots = vec![Complex64::new(0.0, 0.0); zeros];
        let m = reduced.degree();
        if m == 0 {
            return Ok(roots);
        }

        let alpha = (reduced.coeffs[0].abs() / reduced.leading().abs()).powf(1.0 / m as f64);
        let scaled = reduced.compose_scale(alpha);
        let lead = scaled.leading();
        let mut companion = DMatrix::<f64>::zeros(m, m);
        for k in 0..m {
            companion[(0, k)] = -scaled.coeffs[m - 1 - k] / lead;
            if k + 1 < m {
                companion[(k + 1, k)] = 1.0;
            }
        }
        balance_parlett_reinsch(&mut companion);
        let eig = Schur::try_new(companion, f64::EPSILON, 100_000)
            .ok_or(Error::IllConditioned { span })?
            .complex_eigenvalues();

        let dp = scaled.derivative();
        let polish = |z0: Complex64| {
            let mut z = z0;
            let mut best = scaled.eval_complex(z).norm();
            for _ in 0..8 {
                let d = dp.eval_complex(z);
                if d.norm() == 0.0 {
                    break;
                }
                let next = z - scaled.eval_complex(z) / d;
                let r = scaled.eval_complex(next).norm();
                if !(r < best) {
                    break;
                }
                z = next;
                best = r;
            }
            z
        };

        let (mut upper, mut real, mut lower) = (Vec::new(), Vec::new(), 0usize);
        for z in eig.iter() {
            if z.im > 0.0 {
                upper.push(*z);
            } else if z.im < 0.0 {
                lower += 1;
            } else {
                real.push(*z);
            }
        }
        if upper.len() == lower {
            for z in real {
                let p = polish(z);
                roots.push(Complex64::new(p.re, 0.0) * alpha);
            }
            for z in upper {
                let p = polish(z);
                roots.push(p * alpha);
                roots.push(p.conj() * alpha);
            }
        } else {
            roots.extend(eig.iter().map(|z| polish(*z) * alpha));
        }
        roots.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
        Ok(roots)
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, o: &Poly) -> Poly {
        let n = self.coeffs.len().max(o.coeffs.len());
        Poly::new(
            (0..n)
                .map(|k| self.coeffs.get(k).unwrap_or(&0.0) + o.coeffs.get(k).unwrap_or(&0.0))
                .collect(),
        )
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, o: &Poly) -> Poly {
        self + &(-o)
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(-1.0)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, o: &Poly) -> Poly {
        let mut c = vec![0.0; self.coeffs.len() + o.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in o.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Poly::new(c)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Poly {
            type Output = Poly;
            fn $m(self, o: Poly) -> Poly {
                (&self).$m(&o)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn arithmetic() {
        let p = Poly::new(vec![1.0, 1.0]);
        let q = Poly::new(vec![2.0, 1.0]);
        assert_eq!((&p * &q).coeffs(), &[2.0, 3.0, 1.0]);
        assert_eq!((&p - &p).coeffs(), &[0.0]);
        assert_eq!((&p + &q).eval(2.0), 7.0);
        assert_eq!(Poly::new(vec![1.0, 2.0, 3.0]).derivative().coeffs(), &[2.0, 6.0]);
        assert_eq!(Poly::new(vec![1.0, 1.0]).compose_scale(3.0).coeffs(), &[1.0, 3.0]);
    }

    #[test]
    fn long_division() {
        let p = Poly::new(vec![-4.0, 0.0, 1.0]);
        let (q, r) = p.div_rem(&Poly::new(vec![-2.0, 1.0]));
        assert_eq!(q.coeffs(), &[2.0, 1.0]);
        assert_eq!(r.coeffs(), &[0.0]);
        let (q, r) = Poly::new(vec![1.0, 0.0, 1.0]).div_rem(&Poly::new(vec![1.0, 1.0]));
        assert_eq!(q.coeffs(), &[-1.0, 1.0]);
        assert_eq!(r.coeffs(), &[2.0]);
    }

    #[test]
    fn factored_quadratic() {
        let roots = Poly::new(vec![2.0, 3.0, 1.0]).roots().unwrap();
        assert!((roots[0] - c(-1.0, 0.0)).norm() < 1e-14);
        assert!((roots[1] - c(-2.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn zero_roots_are_exact() {
        let roots = Poly::new(vec![0.0, 0.0, 2.0, 1.0]).roots().unwrap();
        assert_eq!(roots.iter().filter(|z| z.norm() == 0.0).count(), 2);
        assert!(roots.iter().any(|z| (z - c(-2.0, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn planted_degree_six() {
        let planted = [
            c(-0.5, 0.0),
            c(-3.0, 0.0),
            c(-0.2, 1.5),
            c(-0.2, -1.5),
            c(-7.0, 2.0),
            c(-7.0, -2.0),
        ];
        let p = Poly::from_roots(&planted).scale(4.2);
        let roots = p.roots().unwrap();
        assert_eq!(roots.len(), 6);
        for z in &planted {
            let best = roots
                .iter()
                .map(|r| (r - z).norm() / z.norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-8, "root {z} missed by {best}");
        }
    }

    #[test]
    fn constant_has_no_roots() {
        assert!(matches!(
            Poly::constant(3.0).roots(),
            Err(Error::DegreeTooLow { degree: 0 })
        ));
    }

    #[test]
    fn ill_conditioned_rejected() {
        // Roots 1, 1e16 and 1e32: the span cannot be balanced away.
        let p = Poly::from_roots(&[c(1.0, 0.0), c(1e16, 0.0), c(1e32, 0.0)]);
        assert!(p.coefficient_span() > MAX_COEFFICIENT_SPAN);
        assert!(matches!(p.roots(), Err(Error::IllConditioned { .. })));
    }

    proptest! {
        #[test]
        fn planted_roots_recovered(
            reals in proptest::collection::vec(-10.0f64..-0.01, 0..3),
            pairs in proptest::collection::vec((-5.0f64..-0.01, 0.05f64..5.0), 0..2),
            lead in 0.1f64..10.0,
        ) {
            let mut planted: Vec<Complex64> = reals.iter().map(|&r| c(r, 0.0)).collect();
            for &(re, im) in &pairs {
                planted.push(c(re, im));
                planted.push(c(re, -im));
            }
            prop_assume!(!planted.is_empty());
            // Keep roots separated so the relative recovery bound is meaningful.
            for (i, a) in planted.iter().enumerate() {
                for b in &planted[i + 1..] {
                    prop_assume!((a - b).norm() > 0.05 * a.norm().max(b.norm()));
                }
            }
            let p = Poly::from_roots(&planted).scale(lead);
            let roots = p.roots().unwrap();
            prop_assert_eq!(roots.len(), planted.len());
            for z in &roots {
                prop_assert!(p.relative_residual(*z) < 1e-8);
                // conjugate closure
                prop_assert!(roots.iter().any(|w| *w == z.conj()));
            }
            for z in &planted {
                let best = roots.iter().map(|r| (r - z).norm() / z.norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(best < 1e-6, "root {} missed by {}", z, best);
            }
        }
    }
}
