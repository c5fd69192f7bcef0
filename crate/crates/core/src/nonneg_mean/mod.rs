//! Sequential tests of "the mean of a finite nonnegative population is at
//! most `t`" under sampling without replacement.
//!
//! Two tests are provided. The Kaplan-Kolmogorov test multiplies the
//! ratios of each draw to the conditional null mean of the items not yet
//! drawn; the Kaplan-martingale test integrates a product of linear
//! factors over a mixing parameter in `[0, 1]`. Both processes are
//! nonnegative martingales under the null, so `1 / max_j` of the process
//! is a valid p-value at any stopping time.
//!
//! When the running sample total already reaches `N t` the null can no
//! longer explain further draws; every later factor is then exactly one.

mod poly;
mod sample_size;
mod state;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::rational::{self, Rational};

pub use poly::{integrate_01, poly_mul_linear, ExactBernstein, FloatBernstein};
pub use sample_size::{estimate_initial_sample_size, AuditKind, SampleSizeRequest};
pub use state::{FloatTest, TestState, TraceEntry, DEFAULT_EXACT_LIMIT};

/// Which sequential test to run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TestKind {
    /// Kaplan-Kolmogorov product test on data shifted right by `shift`.
    #[serde(rename = "KK")]
    KaplanKolmogorov {
        #[serde(with = "rational::as_str")]
        shift: Rational,
    },
    /// Kaplan-martingale integral test.
    #[serde(rename = "KM")]
    KaplanMartingale,
}

impl TestKind {
    pub fn kk(shift: Rational) -> Self {
        TestKind::KaplanKolmogorov { shift }
    }

    pub fn shift(&self) -> Rational {
        match self {
            TestKind::KaplanKolmogorov { shift } => shift.clone(),
            TestKind::KaplanMartingale => Rational::zero(),
        }
    }

    /// The `t` the test formula uses to test "population mean <= null_mean".
    pub fn formula_mean(&self, null_mean: &Rational) -> Rational {
        null_mean + self.shift()
    }
}

/// Draws `X_1..X_J` in order from a population of `N` items; `None`
/// population means sampling with replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialSample {
    pub values: Vec<Rational>,
    pub population_size: Option<u64>,
    pub null_mean: Rational,
}

impl SequentialSample {
    pub fn new(values: Vec<Rational>, population_size: u64, null_mean: Rational) -> Result<Self> {
        let s = SequentialSample { values, population_size: Some(population_size), null_mean };
        s.validate()?;
        Ok(s)
    }

    pub fn with_replacement(values: Vec<Rational>, null_mean: Rational) -> Result<Self> {
        let s = SequentialSample { values, population_size: None, null_mean };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.null_mean.is_positive() {
            return Err(AuditError::InvalidArgument(format!(
                "null mean must be positive, got {}",
                rational::format(&self.null_mean)
            )));
        }
        if let Some(x) = self.values.iter().find(|x| x.is_negative()) {
            return Err(AuditError::NegativeValue(rational::format(x)));
        }
        if let Some(n) = self.population_size {
            if self.values.len() as u64 > n {
                return Err(AuditError::SampleTooLarge { drawn: self.values.len(), population: n });
            }
        }
        Ok(())
    }
}

/// Ratio of draw `j` (1-based) to the conditional null mean of the items
/// not yet drawn, or `None` when the prior total already reaches `N t`.
pub(crate) fn conditional_ratio(
    x: &Rational,
    j: u64,
    prior_sum: &Rational,
    population: Option<u64>,
    t: &Rational,
) -> Option<Rational> {
    match population {
        Some(n) => {
            let n_big = Rational::from_integer(BigInt::from(n));
            let room = &n_big * t - prior_sum;
            if !room.is_positive() {
                return None;
            }
            let remaining = Rational::from_integer(BigInt::from(n - j + 1));
            Some(x * remaining / room)
        }
        None => Some(x / t),
    }
}

pub(crate) fn p_from_max(max: &Rational) -> Rational {
    if *max <= Rational::one() {
        Rational::one()
    } else {
        max.recip()
    }
}

/// Kaplan-Kolmogorov p-value for "mean <= t - shift", computed on the
/// shifted data `X_k + shift`.
pub fn kk_pvalue(sample: &SequentialSample, shift: &Rational) -> Result<Rational> {
    sample.validate()?;
    if shift.is_negative() {
        return Err(AuditError::InvalidArgument("shift must be nonnegative".into()));
    }
    let mut z = Rational::one();
    let mut max = Rational::zero();
    let mut sum = Rational::zero();
    for (i, x) in sample.values.iter().enumerate() {
        let shifted = x + shift;
        if let Some(ratio) = conditional_ratio(&shifted, i as u64 + 1, &sum, sample.population_size, &sample.null_mean)
        {
            z *= ratio;
        }
        sum += shifted;
        if z > max {
            max = z.clone();
        }
    }
    Ok(p_from_max(&max))
}

/// Kaplan-martingale p-value for "mean <= t", expanding the integrand in
/// monomials and integrating term by term.
pub fn km_pvalue(sample: &SequentialSample) -> Result<Rational> {
    sample.validate()?;
    let mut coeffs = vec![Rational::one()];
    let mut max = Rational::zero();
    let mut sum = Rational::zero();
    for (i, x) in sample.values.iter().enumerate() {
        let slope = conditional_ratio(x, i as u64 + 1, &sum, sample.population_size, &sample.null_mean)
            .map(|r| r - Rational::one())
            .unwrap_or_else(Rational::zero);
        coeffs = poly_mul_linear(&coeffs, &slope);
        sum += x;
        let y = integrate_01(&coeffs);
        if y > max {
            max = y;
        }
    }
    Ok(p_from_max(&max))
}
