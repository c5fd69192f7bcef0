use num_traits::{One, Signed};
use serde::{Deserialize, Serialize};

use crate::ballots::ContestSpec;
use crate::error::{AuditError, Result};
use crate::nonneg_mean::{TestKind, DEFAULT_EXACT_LIMIT};
use crate::rational::{self, Rational};
use crate::stratification::{StratifiedConfig, StratumMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditMethod {
    Polling,
    Comparison,
    Stratified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestName {
    #[serde(rename = "KK")]
    KaplanKolmogorov,
    #[serde(rename = "KM")]
    KaplanMartingale,
}

/// Test selection; a missing KK shift defaults to a tenth of the upper
/// bound of the values being tested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestChoice {
    pub kind: TestName,
    #[serde(default, with = "rational::opt_as_str", skip_serializing_if = "Option::is_none")]
    pub shift: Option<Rational>,
}

impl Default for TestChoice {
    fn default() -> Self {
        TestChoice { kind: TestName::KaplanKolmogorov, shift: None }
    }
}

impl TestChoice {
    pub fn resolve(&self, value_upper_bound: &Rational) -> TestKind {
        match self.kind {
            TestName::KaplanMartingale => TestKind::KaplanMartingale,
            TestName::KaplanKolmogorov => {
                TestKind::kk(self.shift.clone().unwrap_or_else(|| value_upper_bound * rational::ratio(1, 10)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestConfig {
    #[serde(flatten)]
    pub spec: ContestSpec,
    pub method: AuditMethod,
    /// Required for STRATIFIED: one comparison stratum (cards with CVRs)
    /// and one polling stratum (cards without).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strata: Option<StratifiedConfig>,
}

fn default_growth() -> Rational {
    rational::ratio(3, 2)
}

fn default_exact_limit() -> usize {
    DEFAULT_EXACT_LIMIT
}

/// Frozen audit parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    #[serde(with = "rational::as_str")]
    pub risk_limit: Rational,
    pub seed: String,
    #[serde(default)]
    pub test: TestChoice,
    #[serde(default)]
    pub replacement: bool,
    /// Next round targets this multiple of the estimated sample size.
    #[serde(default = "default_growth", with = "rational::as_str")]
    pub round_growth: Rational,
    #[serde(default = "default_exact_limit")]
    pub exact_limit: usize,
    pub contests: Vec<ContestConfig>,
}

impl AuditConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: AuditConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.risk_limit.is_positive() || self.risk_limit >= Rational::one() {
            return Err(AuditError::InvalidArgument(format!(
                "risk limit {} outside (0, 1)",
                rational::format(&self.risk_limit)
            )));
        }
        if self.seed.trim().is_empty() {
            return Err(AuditError::InvalidArgument("seed must not be empty".into()));
        }
        if self.round_growth < Rational::one() {
            return Err(AuditError::InvalidArgument("round_growth must be at least 1".into()));
        }
        if self.test.shift.as_ref().is_some_and(|s| s.is_negative()) {
            return Err(AuditError::InvalidArgument("shift must be nonnegative".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for c in &self.contests {
            c.spec.validate()?;
            if !ids.insert(&c.spec.contest_id) {
                return Err(AuditError::InvalidArgument(format!("duplicate contest `{}`", c.spec.contest_id)));
            }
            match (c.method, &c.strata) {
                (AuditMethod::Stratified, Some(s)) => {
                    s.grid()?;
                    let methods: Vec<StratumMethod> = s.strata.iter().map(|x| x.method).collect();
                    if methods.len() != 2
                        || !methods.contains(&StratumMethod::Polling)
                        || !methods.contains(&StratumMethod::Comparison)
                    {
                        return Err(AuditError::InvalidContest {
                            contest: c.spec.contest_id.clone(),
                            message: "stratified contests need one polling and one comparison stratum".into(),
                        });
                    }
                    if s.total() != c.spec.upper_bound_cards {
                        return Err(AuditError::InvalidContest {
                            contest: c.spec.contest_id.clone(),
                            message: format!(
                                "stratum sizes sum to {} but upper_bound_cards is {}",
                                s.total(),
                                c.spec.upper_bound_cards
                            ),
                        });
                    }
                }
                (AuditMethod::Stratified, None) => {
                    return Err(AuditError::InvalidContest {
                        contest: c.spec.contest_id.clone(),
                        message: "STRATIFIED needs a `strata` configuration".into(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn contest_specs(&self) -> Vec<ContestSpec> {
        self.contests.iter().map(|c| c.spec.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    const CONFIG: &str = r#"{
        "risk_limit": "0.05",
        "seed": "93125490127453856731",
        "test": {"kind": "KM"},
        "contests": [{
            "contest_id": "mayor", "social_choice": "PLURALITY",
            "candidates": ["Alice", "Bob", "Carol"], "n_winners": 1,
            "reported_winners": ["Alice"], "upper_bound_cards": 100,
            "method": "COMPARISON"
        }]
    }"#;

    #[test]
    fn parses_and_defaults() {
        let c = AuditConfig::from_json(CONFIG).unwrap();
        assert_eq!(c.risk_limit, ratio(1, 20));
        assert_eq!(c.round_growth, ratio(3, 2));
        assert!(!c.replacement);
        assert_eq!(c.contests[0].method, AuditMethod::Comparison);
        assert_eq!(c.contests[0].spec.candidates.len(), 3);
        let back = serde_json::to_string(&c).unwrap();
        assert_eq!(AuditConfig::from_json(&back).unwrap(), c);
    }

    #[test]
    fn rejects_bad_risk_limit() {
        let bad = CONFIG.replace("\"0.05\"", "\"1\"");
        assert!(AuditConfig::from_json(&bad).is_err());
    }

    #[test]
    fn default_shift_scales_with_upper_bound() {
        let t = TestChoice::default().resolve(&ratio(10, 9));
        assert_eq!(t, TestKind::kk(ratio(1, 9)));
    }

    #[test]
    fn stratified_needs_consistent_strata() {
        let s = CONFIG.replace(
            "\"method\": \"COMPARISON\"",
            r#""method": "STRATIFIED", "strata": {"strata": [
                {"stratum_id": "cvr", "size": 60, "method": "comparison", "test": {"kind": "KK", "shift": "0.1"}},
                {"stratum_id": "precinct", "size": 30, "method": "polling", "test": {"kind": "KK", "shift": "0.1"}}]}"#,
        );
        assert!(AuditConfig::from_json(&s).is_err());
        let ok = s.replace("\"size\": 30", "\"size\": 40");
        assert!(AuditConfig::from_json(&ok).is_ok());
    }
}
