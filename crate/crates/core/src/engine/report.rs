use serde::{Deserialize, Serialize};

use super::config::AuditMethod;
use super::state::{AuditDecision, AuditState, ContestStatus};
use crate::assorters::AssertionStatus;
use crate::error::Result;
use crate::rational;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionReport {
    pub assertion_id: String,
    pub description: String,
    pub status: AssertionStatus,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value_exact: Option<String>,
    pub draws: u64,
    /// Worst-case allocation of a stratified assertion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestReport {
    pub contest_id: String,
    pub method: AuditMethod,
    pub status: ContestStatus,
    /// Largest assertion p-value.
    pub measured_risk: f64,
    pub draws: u64,
    pub population: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested_next_round_size: Option<u64>,
    pub assertions: Vec<AssertionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub decision: AuditDecision,
    pub risk_limit: String,
    pub rounds: u32,
    pub open_round: Option<u32>,
    pub pending_interpretations: usize,
    pub diagnostics: usize,
    pub contests: Vec<ContestReport>,
}

impl AuditReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Summary of every contest and assertion in the current state.
pub fn measure_all(state: &AuditState) -> Result<AuditReport> {
    let mut contests = Vec::with_capacity(state.contests.len());
    for c in &state.contests {
        let suggested = if state.open_round().is_none() { state.suggest_round_size(&c.contest_id)? } else { None };
        contests.push(ContestReport {
            contest_id: c.contest_id.clone(),
            method: c.method,
            status: c.status,
            measured_risk: c.measured_risk(),
            draws: c.draws(),
            population: c.frames.iter().map(|f| f.size()).sum(),
            suggested_next_round_size: suggested,
            assertions: c
                .assertions
                .iter()
                .map(|a| AssertionReport {
                    assertion_id: a.id().to_string(),
                    description: a.assertion.assorter.description.clone(),
                    status: a.assertion.status,
                    p_value: a.p_value,
                    p_value_exact: a.p_value_exact.as_ref().map(rational::format),
                    draws: a.draws(),
                    allocation: a.combined.as_ref().map(|c| c.allocation.iter().map(rational::format).collect()),
                })
                .collect(),
        });
    }
    Ok(AuditReport {
        decision: state.decision,
        risk_limit: rational::format(&state.config.risk_limit),
        rounds: state.rounds.len() as u32,
        open_round: state.open_round().map(|r| r.number),
        pending_interpretations: state.pending_draws().len(),
        diagnostics: state.diagnostics.len(),
        contests,
    })
}
