//! Ballot-level comparison: turning a polling assorter plus the reported
//! CVRs into the overstatement assorter
//! `B = (1 - omega/u) / (2 - v/u)`, whose mean exceeds 1/2 exactly when
//! the original assertion holds for the cards.
//!
//! Unaccounted cards and CVRs are handled by substitution: a phantom CVR
//! counts as 1/2 and its phantom card as 0; a linked card that cannot be
//! found or lacks the contest counts as 0; a redacted CVR that was counted
//! in the tally counts as `u` when drawn.

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::assorters::{Assertion, AssertionStatus, Assorter};
use crate::ballots::VoteRecord;
use crate::error::{AuditError, Result};
use crate::rational::{self, half, Rational};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonContext {
    pub base_assorter: Assorter,
    /// Mean of the assorter over all N CVRs, phantoms included.
    #[serde(with = "rational::as_str")]
    pub reported_mean: Rational,
    /// `2 * reported_mean - 1`, frozen at audit start.
    #[serde(with = "rational::as_str")]
    pub margin: Rational,
    /// `2 / (2 - v/u)`, the largest value B can take.
    #[serde(with = "rational::as_str")]
    pub b_upper: Rational,
    #[serde(default)]
    pub redacted_in_tally: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawFlags {
    pub phantom_cvr: bool,
    pub card_missing: bool,
    pub card_lacks_contest: bool,
    pub redacted_included_in_tally: bool,
}

/// Assorter values for one sampled (CVR, card) pair before substitution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonDraw {
    pub cvr_value: Option<Rational>,
    pub card_value: Option<Rational>,
    pub flags: DrawFlags,
}

impl ComparisonDraw {
    pub fn matched(cvr_value: Rational, card_value: Rational) -> Self {
        ComparisonDraw { cvr_value: Some(cvr_value), card_value: Some(card_value), flags: DrawFlags::default() }
    }

    pub fn phantom() -> Self {
        ComparisonDraw { flags: DrawFlags { phantom_cvr: true, ..DrawFlags::default() }, ..Default::default() }
    }

    /// Values after the phantom, missing-card and redaction substitutions.
    pub fn effective_values(&self, u: &Rational) -> Result<(Rational, Rational)> {
        let f = &self.flags;
        let in_range = |v: &Rational, what: &str| -> Result<()> {
            if v.is_negative() || v > u {
                return Err(AuditError::InconsistentDraw(format!(
                    "{what} value {} outside [0, {}]",
                    rational::format(v),
                    rational::format(u)
                )));
            }
            Ok(())
        };
        if f.phantom_cvr {
            if self.card_value.is_some() || self.cvr_value.is_some() {
                return Err(AuditError::InconsistentDraw("phantom draws carry no CVR or card values".into()));
            }
            return Ok((half(), Rational::zero()));
        }
        let cvr = if f.redacted_included_in_tally {
            u.clone()
        } else {
            let v = self.cvr_value.clone().ok_or_else(|| AuditError::InconsistentDraw("missing CVR value".into()))?;
            in_range(&v, "CVR")?;
            v
        };
        let card = if f.card_missing || f.card_lacks_contest {
            if self.card_value.is_some() {
                return Err(AuditError::InconsistentDraw(
                    "card value supplied for a missing card or one lacking the contest".into(),
                ));
            }
            Rational::zero()
        } else {
            let v = self.card_value.clone().ok_or_else(|| AuditError::InconsistentDraw("missing card value".into()))?;
            in_range(&v, "card")?;
            v
        };
        Ok((cvr, card))
    }
}

/// Overstatement `omega = A(cvr) - A(card)` after substitutions.
pub fn overstatement(draw: &ComparisonDraw, u: &Rational) -> Result<Rational> {
    let (cvr, card) = draw.effective_values(u)?;
    Ok(cvr - card)
}

/// What the audit board found for a sampled index.
#[derive(Debug, Clone, PartialEq)]
pub enum CardObservation<'a> {
    Card(&'a VoteRecord),
    Missing,
}

impl ComparisonContext {
    pub fn new(base_assorter: Assorter, reported_mean: Rational) -> Result<Self> {
        let margin = &reported_mean * rational::int(2) - Rational::one();
        if !margin.is_positive() {
            return Err(AuditError::NonPositiveMargin(rational::format(&margin)));
        }
        let u = &base_assorter.upper_bound;
        let b_upper = rational::int(2) / (rational::int(2) - &margin / u);
        Ok(ComparisonContext { base_assorter, reported_mean, margin, b_upper, redacted_in_tally: false })
    }

    /// Computes the reported mean from the CVR list, which must already
    /// hold one entry per card (phantom CVRs as records without the contest).
    pub fn from_cvrs(base_assorter: Assorter, cvrs: &[VoteRecord]) -> Result<Self> {
        let mean = crate::assorters::assorter_mean(&base_assorter, cvrs)?;
        Self::new(base_assorter, mean)
    }

    pub fn with_redacted_in_tally(mut self, flag: bool) -> Self {
        self.redacted_in_tally = flag;
        self
    }

    pub fn upper_bound(&self) -> &Rational {
        &self.base_assorter.upper_bound
    }

    /// `(1 - omega/u) / (2 - v/u)`.
    pub fn b_value(&self, draw: &ComparisonDraw) -> Result<Rational> {
        let u = self.upper_bound();
        let omega = overstatement(draw, u)?;
        Ok((Rational::one() - omega / u) / (rational::int(2) - &self.margin / u))
    }

    /// Builds the comparison draw for a real CVR and what the board found.
    pub fn draw_for(&self, cvr: &VoteRecord, card: CardObservation<'_>) -> Result<ComparisonDraw> {
        comparison_draw(&self.base_assorter, cvr, card, cvr.redacted && self.redacted_in_tally)
    }
}

/// Comparison draw for a real CVR; `redacted_in_tally` marks a redacted
/// CVR whose votes were counted.
pub fn comparison_draw(
    assorter: &Assorter,
    cvr: &VoteRecord,
    card: CardObservation<'_>,
    redacted_in_tally: bool,
) -> Result<ComparisonDraw> {
    let mut flags = DrawFlags { redacted_included_in_tally: redacted_in_tally, ..DrawFlags::default() };
    let cvr_value = if redacted_in_tally { None } else { Some(assorter.eval(cvr)?) };
    let card_value = match card {
        CardObservation::Missing => {
            flags.card_missing = true;
            None
        }
        CardObservation::Card(r) if !r.has_contest(&assorter.contest_id) && cvr.has_contest(&assorter.contest_id) => {
            flags.card_lacks_contest = true;
            None
        }
        CardObservation::Card(r) => Some(assorter.eval(r)?),
    };
    Ok(ComparisonDraw { cvr_value, card_value, flags })
}

/// A base assertion together with its frozen comparison context, or
/// `Unresolved` when the CVRs themselves do not support the assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonAssertion {
    pub assertion: Assertion,
    pub context: Option<ComparisonContext>,
}

impl ComparisonAssertion {
    pub fn b_value(&self, draw: &ComparisonDraw) -> Result<Rational> {
        match &self.context {
            Some(ctx) => ctx.b_value(draw),
            None => {
                Err(AuditError::NonPositiveMargin(format!("assertion `{}` is unresolved", self.assertion.assorter.id)))
            }
        }
    }
}

/// Wraps `base` for a comparison audit against the reported CVRs (one per
/// card, phantoms included).
pub fn comparison_audit_assertion(base: &Assertion, cvrs: &[VoteRecord]) -> Result<ComparisonAssertion> {
    match ComparisonContext::from_cvrs(base.assorter.clone(), cvrs) {
        Ok(ctx) => Ok(ComparisonAssertion { assertion: base.clone(), context: Some(ctx) }),
        Err(AuditError::NonPositiveMargin(_)) => {
            let mut assertion = base.clone();
            assertion.status = AssertionStatus::Unresolved;
            Ok(ComparisonAssertion { assertion, context: None })
        }
        Err(e) => Err(e),
    }
}

/// Mean of the B values; used by tests and reports.
pub fn b_mean(values: &[Rational]) -> Option<Rational> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(Rational::zero(), |acc, v| acc + v);
    Some(sum / rational::int(values.len() as i64))
}
