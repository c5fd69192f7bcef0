//! Polynomial machinery for the Kaplan-martingale integral.
//!
//! The martingale is the integral over `[0, 1]` of a product of linear
//! factors `1 + a_j g`. Three representations are kept:
//!
//! * monomial coefficients in exact rationals ([`poly_mul_linear`],
//!   [`integrate_01`]), the direct expansion;
//! * Bernstein coefficients with a shared integer denominator
//!   ([`ExactBernstein`]), used for incremental exact updates;
//! * Bernstein coefficients in floating point with a log scale
//!   ([`FloatBernstein`]), used past the exact-arithmetic limit and in
//!   simulation.
//!
//! Writing each factor as `1·(1-g) + (1+a)·g` makes every Bernstein
//! coefficient a nonnegative combination, so the float form never cancels.

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::rational::{self, Rational};

/// Coefficients (constant term first) of `(a g + 1) * poly`.
pub fn poly_mul_linear(coeffs: &[Rational], a: &Rational) -> Vec<Rational> {
    if a.is_zero() {
        return coeffs.to_vec();
    }
    let mut out = vec![Rational::zero(); coeffs.len() + 1];
    for (k, c) in coeffs.iter().enumerate() {
        out[k] += c;
        out[k + 1] += c * a;
    }
    out
}

/// `sum_k coeffs[k] / (k + 1)`, the integral over `[0, 1]`.
pub fn integrate_01(coeffs: &[Rational]) -> Rational {
    coeffs.iter().enumerate().map(|(k, c)| c / rational::int(k as i64 + 1)).fold(Rational::zero(), |acc, v| acc + v)
}

/// Product of factors `(1-g) + slope·g` in the Bernstein basis, stored as
/// integer numerators over a common denominator.
#[derive(Debug, Clone)]
pub struct ExactBernstein {
    numerators: Vec<BigInt>,
    denominator: BigInt,
}

impl Default for ExactBernstein {
    fn default() -> Self {
        ExactBernstein { numerators: vec![BigInt::one()], denominator: BigInt::one() }
    }
}

impl ExactBernstein {
    pub fn degree(&self) -> usize {
        self.numerators.len() - 1
    }

    /// Multiplies by `(1-g) + slope·g`; `slope` must be nonnegative.
    pub fn push(&mut self, slope: &Rational) {
        let n1 = BigInt::from(self.numerators.len());
        let (p, q) = (slope.numer(), slope.denom());
        let mut next = Vec::with_capacity(self.numerators.len() + 1);
        let mut prev = BigInt::zero();
        for (k, b) in self.numerators.iter().enumerate() {
            let k = BigInt::from(k);
            // (n+1-k) q b_k + k p b_{k-1}
            next.push((&n1 - &k) * q * b + k * p * &prev);
            prev = b.clone();
        }
        next.push(&n1 * p * &prev);
        self.numerators = next;
        self.denominator = &self.denominator * &n1 * q;
    }

    pub fn integral(&self) -> Rational {
        let sum: BigInt = self.numerators.iter().sum();
        Rational::new(sum, &self.denominator * BigInt::from(self.numerators.len()))
    }
}

/// Floating-point Bernstein product with coefficients normalised to a
/// maximum of one and the scale carried as a logarithm.
#[derive(Debug, Clone)]
pub struct FloatBernstein {
    coeffs: Vec<f64>,
    log_scale: f64,
}

impl Default for FloatBernstein {
    fn default() -> Self {
        FloatBernstein { coeffs: vec![1.0], log_scale: 0.0 }
    }
}

impl FloatBernstein {
    pub fn push(&mut self, slope: f64) {
        let n1 = self.coeffs.len() as f64;
        let mut prev = 0.0;
        let mut max = 0.0f64;
        for k in 0..self.coeffs.len() {
            let b = self.coeffs[k];
            let v = ((n1 - k as f64) * b + k as f64 * slope * prev) / n1;
            self.coeffs[k] = v;
            max = max.max(v);
            prev = b;
        }
        let last = slope * prev;
        max = max.max(last);
        self.coeffs.push(last);
        if max > 0.0 && max.is_finite() {
            let inv = 1.0 / max;
            self.coeffs.iter_mut().for_each(|c| *c *= inv);
            self.log_scale += max.ln();
        } else if max == 0.0 {
            self.log_scale = f64::NEG_INFINITY;
        }
    }

    /// Natural log of the integral over `[0, 1]`.
    pub fn log_integral(&self) -> f64 {
        let sum: f64 = self.coeffs.iter().sum();
        self.log_scale + (sum / self.coeffs.len() as f64).ln()
    }
}
