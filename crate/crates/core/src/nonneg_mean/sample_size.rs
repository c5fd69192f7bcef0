use num_traits::{One, Signed};
use serde::{Deserialize, Serialize};

use super::state::FloatTest;
use super::TestKind;
use crate::error::{AuditError, Result};
use crate::rational::{self, Rational};

/// Longest synthetic sequence tried when sampling with replacement.
const UNBOUNDED_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditKind {
    Polling,
    Comparison,
}

#[derive(Debug, Clone)]
pub struct SampleSizeRequest {
    /// Reported assorter margin `v = 2 * mean - 1`.
    pub margin: Rational,
    pub risk_limit: Rational,
    pub test: TestKind,
    pub population: Option<u64>,
    /// Upper bound `u` of the polling assorter.
    pub upper_bound: Rational,
    pub kind: AuditKind,
    /// Fraction of comparison draws that carry a one-vote overstatement
    /// (`omega = u/2`). Ignored for polling.
    pub error_rate: f64,
}

/// Smallest number of draws after which a synthetic audit matching the
/// reported margin reaches `p <= risk_limit`. Capped at the population.
pub fn estimate_initial_sample_size(req: &SampleSizeRequest) -> Result<u64> {
    if !req.margin.is_positive() {
        return Err(AuditError::NonPositiveMargin(rational::format(&req.margin)));
    }
    if !req.risk_limit.is_positive() || req.risk_limit > Rational::one() {
        return Err(AuditError::InvalidArgument("risk limit must lie in (0, 1]".into()));
    }
    if req.risk_limit.is_one() {
        return Ok(0);
    }
    if !(0.0..1.0).contains(&req.error_rate) {
        return Err(AuditError::InvalidArgument("error rate must lie in [0, 1)".into()));
    }
    let u = rational::to_f64(&req.upper_bound);
    let v = rational::to_f64(&req.margin);
    let alpha = rational::to_f64(&req.risk_limit);
    let cap = req.population.unwrap_or(UNBOUNDED_CAP);
    let mut test = FloatTest::new(&req.test, req.population, 0.5);

    // Value of draw j (1-based) in the synthetic sequence.
    let value = |j: u64| -> f64 {
        let j = j as f64;
        match req.kind {
            AuditKind::Polling => {
                // mean (1+v)/2 spread as values u and 0, leading with u
                let f = ((1.0 + v) / 2.0 / u).min(1.0);
                if (j * f).ceil() > ((j - 1.0) * f).ceil() {
                    u
                } else {
                    0.0
                }
            }
            AuditKind::Comparison => {
                let clean = 1.0 / (2.0 - v / u);
                let r = req.error_rate;
                if (j * r).floor() > ((j - 1.0) * r).floor() {
                    clean / 2.0
                } else {
                    clean
                }
            }
        }
    };
    for j in 1..=cap {
        test.push(value(j));
        if test.p_value() <= alpha {
            return Ok(j);
        }
    }
    Ok(cap)
}
