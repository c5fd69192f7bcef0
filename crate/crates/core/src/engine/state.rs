use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::config::{AuditConfig, AuditMethod, ContestConfig};
use super::sampling::draw_indices;
use crate::assorters::{assertions_for, assorter_mean, Assertion, AssertionStatus};
use crate::ballots::{load_election, CardManifest, ContestSpec, Diagnostic, ResolvedDraw, VoteRecord};
use crate::comparison::{
    comparison_draw, overstatement, CardObservation, ComparisonContext, ComparisonDraw, DrawFlags,
};
use crate::error::{AuditError, Result};
use crate::nonneg_mean::{estimate_initial_sample_size, AuditKind, SampleSizeRequest, TestKind, TestState};
use crate::rational::{self, half, Rational};
use crate::stratification::{
    comparison_tester, max_combined_pvalue, polling_tester, CombinedPValue, StratumMethod, StratumSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditDecision {
    InProgress,
    Certified,
    FullHandCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContestStatus {
    InProgress,
    Confirmed,
    FullHandCount,
}

/// Append-only audit log entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    Initialized { contests: usize },
    RoundDrawn { round: u32, sizes: BTreeMap<String, u64> },
    RoundClosed { round: u32, decision: AuditDecision },
    ContestConfirmed { round: u32, contest_id: String },
    FullHandCount { round: u32, contest_id: String, reason: String },
    Escalated { round: u32, contest_id: String, reason: String },
}

/// The sampling frame of one contest or stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub stratum_id: String,
    pub method: StratumMethod,
    pub manifest: CardManifest,
    /// Indices drawn so far, in draw order.
    pub drawn: Vec<u64>,
    /// Per-stratum test of a stratified contest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestKind>,
}

impl Frame {
    pub fn size(&self) -> u64 {
        self.manifest.len()
    }

    fn remaining(&self, replacement: bool) -> u64 {
        if replacement {
            u64::MAX
        } else {
            self.size() - self.drawn.len() as u64
        }
    }
}

/// Per-frame data of one assertion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<ComparisonContext>,
    /// CVR assorter mean of a stratified comparison stratum.
    #[serde(default, with = "rational::opt_as_str", skip_serializing_if = "Option::is_none")]
    pub reported_mean: Option<Rational>,
    /// Test inputs in draw order: assorter values (polling), B values
    /// (comparison) or `1 - omega/u` (stratified comparison).
    #[serde(with = "rational::vec_as_str")]
    pub values: Vec<Rational>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionAudit {
    pub assertion: Assertion,
    pub frames: Vec<AssertionFrame>,
    pub p_value: f64,
    #[serde(default, with = "rational::opt_as_str", skip_serializing_if = "Option::is_none")]
    pub p_value_exact: Option<Rational>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined: Option<CombinedPValue>,
}

impl AssertionAudit {
    pub fn id(&self) -> &str {
        &self.assertion.assorter.id
    }

    pub fn draws(&self) -> u64 {
        self.frames.iter().map(|f| f.values.len() as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestAudit {
    pub contest_id: String,
    pub method: AuditMethod,
    pub frames: Vec<Frame>,
    pub assertions: Vec<AssertionAudit>,
    pub status: ContestStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<usize>,
}

impl ContestAudit {
    pub fn measured_risk(&self) -> f64 {
        self.assertions.iter().map(|a| a.p_value).fold(0.0, f64::max)
    }

    pub fn draws(&self) -> u64 {
        self.frames.iter().map(|f| f.drawn.len() as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub contest_id: String,
    pub stratum_id: String,
    pub index: u64,
    #[serde(flatten)]
    pub resolved: ResolvedDraw,
}

/// What the audit board recorded for one drawn index; `record: null`
/// means the card could not be found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interpretation {
    pub contest_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum_id: Option<String>,
    pub index: u64,
    pub record: Option<VoteRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionLog {
    pub assertion_id: String,
    #[serde(default, with = "rational::opt_as_str", skip_serializing_if = "Option::is_none")]
    pub cvr_value: Option<Rational>,
    #[serde(default, with = "rational::opt_as_str", skip_serializing_if = "Option::is_none")]
    pub card_value: Option<Rational>,
    #[serde(default, with = "rational::opt_as_str", skip_serializing_if = "Option::is_none")]
    pub omega: Option<Rational>,
    #[serde(with = "rational::as_str")]
    pub value: Rational,
}

/// Audit-log record for one processed draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawLog {
    pub contest_id: String,
    pub stratum_id: String,
    pub index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvr_id: Option<String>,
    pub card_missing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<DrawFlags>,
    pub assertions: Vec<AssertionLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub number: u32,
    pub sizes: BTreeMap<String, u64>,
    pub draws: Vec<Draw>,
    pub interpretations: Vec<Interpretation>,
    pub closed: bool,
    pub log: Vec<DrawLog>,
}

impl Round {
    /// Number of distinct drawn cards not yet interpreted.
    pub fn uncovered(&self) -> usize {
        let covered: HashSet<(&str, &str, u64)> = self
            .interpretations
            .iter()
            .map(|i| (i.contest_id.as_str(), i.stratum_id.as_deref().unwrap_or(""), i.index))
            .collect();
        let keys: HashSet<(&str, &str, u64)> =
            self.draws.iter().map(|d| (d.contest_id.as_str(), d.stratum_id.as_str(), d.index)).collect();
        keys.difference(&covered).count()
    }
}

/// Complete persisted state of an audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditState {
    pub config: AuditConfig,
    pub records: Vec<VoteRecord>,
    pub diagnostics: Vec<Diagnostic>,
    pub manifest: CardManifest,
    pub contests: Vec<ContestAudit>,
    pub rounds: Vec<Round>,
    pub decision: AuditDecision,
    pub events: Vec<AuditEvent>,
}

/// CVR assorter value used for reported means: phantoms count 1/2, and
/// redacted CVRs counted in the tally count `u`.
fn cvr_value(
    ctx_assorter: &crate::assorters::Assorter,
    record: Option<&VoteRecord>,
    redacted_in_tally: bool,
) -> Result<Rational> {
    match record {
        None => Ok(half()),
        Some(r) if r.redacted && redacted_in_tally => Ok(ctx_assorter.upper_bound.clone()),
        Some(r) => ctx_assorter.eval(r),
    }
}

fn frame_cvr_mean(
    assertion: &Assertion,
    frame: &CardManifest,
    cvrs: &HashMap<&str, &VoteRecord>,
    redacted_in_tally: bool,
) -> Result<Rational> {
    let mut sum = Rational::zero();
    for e in &frame.entries {
        let record = if e.phantom { None } else { e.cvr_id.as_deref().and_then(|id| cvrs.get(id).copied()) };
        sum += cvr_value(&assertion.assorter, record, redacted_in_tally)?;
    }
    if frame.is_empty() {
        return Ok(half());
    }
    Ok(sum / rational::int(frame.len() as i64))
}

fn with_upper_bound(spec: &ContestSpec, n: u64) -> ContestSpec {
    ContestSpec { upper_bound_cards: n, ..spec.clone() }
}

fn build_contest(
    config: &ContestConfig,
    manifest: &CardManifest,
    cvrs: &HashMap<&str, &VoteRecord>,
) -> Result<ContestAudit> {
    let spec = &config.spec;
    let base = assertions_for(spec)?;
    let empty_frame = || AssertionFrame { context: None, reported_mean: None, values: Vec::new() };
    let mut frames = Vec::new();
    let mut assertions = Vec::new();
    let mut grid_resolution = None;
    match config.method {
        AuditMethod::Polling => {
            frames.push(Frame {
                stratum_id: "all".into(),
                method: StratumMethod::Polling,
                manifest: manifest.polling_frame(spec, cvrs).add_phantoms(spec)?,
                drawn: Vec::new(),
                test: None,
            });
            for a in base {
                assertions.push(AssertionAudit {
                    assertion: a,
                    frames: vec![empty_frame()],
                    p_value: 1.0,
                    p_value_exact: Some(Rational::one()),
                    combined: None,
                });
            }
        }
        AuditMethod::Comparison => {
            let frame = manifest.comparison_frame(spec, cvrs).add_phantoms(spec)?;
            for mut a in base {
                let mean = frame_cvr_mean(&a, &frame, cvrs, spec.redacted_in_tally)?;
                let context = match ComparisonContext::new(a.assorter.clone(), mean) {
                    Ok(ctx) => Some(ctx.with_redacted_in_tally(spec.redacted_in_tally)),
                    Err(AuditError::NonPositiveMargin(_)) => {
                        a.status = AssertionStatus::Unresolved;
                        None
                    }
                    Err(e) => return Err(e),
                };
                assertions.push(AssertionAudit {
                    assertion: a,
                    frames: vec![AssertionFrame { context, ..empty_frame() }],
                    p_value: 1.0,
                    p_value_exact: Some(Rational::one()),
                    combined: None,
                });
            }
            frames.push(Frame {
                stratum_id: "all".into(),
                method: StratumMethod::Comparison,
                manifest: frame,
                drawn: Vec::new(),
                test: None,
            });
        }
        AuditMethod::Stratified => {
            let strata = config.strata.as_ref().ok_or_else(|| AuditError::InvalidContest {
                contest: spec.contest_id.clone(),
                message: "STRATIFIED needs a `strata` configuration".into(),
            })?;
            grid_resolution = Some(strata.grid()?.resolution);
            let cvr_frame = manifest.comparison_frame(spec, cvrs);
            let with_cvr: HashSet<&str> = cvr_frame.entries.iter().map(|e| e.location_id.as_str()).collect();
            let mut no_cvr = manifest.polling_frame(spec, cvrs);
            no_cvr.entries.retain(|e| !with_cvr.contains(e.location_id.as_str()));
            for s in &strata.strata {
                let sub = with_upper_bound(spec, s.size);
                let manifest = match s.method {
                    StratumMethod::Comparison => cvr_frame.add_phantoms(&sub)?,
                    StratumMethod::Polling => no_cvr.add_phantoms(&sub)?,
                };
                frames.push(Frame {
                    stratum_id: s.stratum_id.clone(),
                    method: s.method,
                    manifest,
                    drawn: Vec::new(),
                    test: Some(s.test.clone()),
                });
            }
            for a in base {
                let mut per_frame = Vec::new();
                for f in &frames {
                    per_frame.push(match f.method {
                        StratumMethod::Comparison => AssertionFrame {
                            reported_mean: Some(frame_cvr_mean(&a, &f.manifest, cvrs, spec.redacted_in_tally)?),
                            ..empty_frame()
                        },
                        StratumMethod::Polling => empty_frame(),
                    });
                }
                assertions.push(AssertionAudit {
                    assertion: a,
                    frames: per_frame,
                    p_value: 1.0,
                    p_value_exact: None,
                    combined: None,
                });
            }
        }
    }
    Ok(ContestAudit {
        contest_id: spec.contest_id.clone(),
        method: config.method,
        frames,
        assertions,
        status: ContestStatus::InProgress,
        grid_resolution,
    })
}

impl AuditState {
    /// Starts an audit from a configuration, a CVR JSON-lines stream and
    /// the card manifest. Polling-only audits may pass an empty stream.
    pub fn init<R: BufRead>(config: AuditConfig, cvr_stream: R, manifest: CardManifest) -> Result<Self> {
        config.validate()?;
        let election = load_election(cvr_stream, &config.contest_specs())?;
        Self::from_parts(config, election.records, election.diagnostics, manifest)
    }

    /// Builds the initial state from already-validated records.
    pub fn from_parts(
        config: AuditConfig,
        records: Vec<VoteRecord>,
        mut diagnostics: Vec<Diagnostic>,
        manifest: CardManifest,
    ) -> Result<Self> {
        let cvrs: HashMap<&str, &VoteRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let linked: HashSet<&str> = manifest.entries.iter().filter_map(|e| e.cvr_id.as_deref()).collect();
        for r in &records {
            if !linked.contains(r.id.as_str()) {
                diagnostics.push(Diagnostic {
                    line: 0,
                    record_id: Some(r.id.clone()),
                    message: "CVR has no manifest entry and cannot be sampled".into(),
                });
            }
        }
        let mut contests = Vec::new();
        let mut events = vec![AuditEvent::Initialized { contests: config.contests.len() }];
        for c in &config.contests {
            let mut audit = build_contest(c, &manifest, &cvrs)?;
            if audit.assertions.iter().any(|a| a.assertion.status == AssertionStatus::Unresolved) {
                audit.status = ContestStatus::FullHandCount;
                events.push(AuditEvent::FullHandCount {
                    round: 0,
                    contest_id: audit.contest_id.clone(),
                    reason: "the CVRs do not support the reported outcome".into(),
                });
            } else if audit.assertions.is_empty() {
                audit.status = ContestStatus::Confirmed;
                events.push(AuditEvent::ContestConfirmed { round: 0, contest_id: audit.contest_id.clone() });
            }
            contests.push(audit);
        }
        let mut state = AuditState {
            config,
            records,
            diagnostics,
            manifest,
            contests,
            rounds: Vec::new(),
            decision: AuditDecision::InProgress,
            events,
        };
        state.decision = state.current_decision();
        Ok(state)
    }

    pub fn current_decision(&self) -> AuditDecision {
        if self.contests.iter().any(|c| c.status == ContestStatus::InProgress) {
            AuditDecision::InProgress
        } else if self.contests.iter().all(|c| c.status == ContestStatus::Confirmed) {
            AuditDecision::Certified
        } else {
            AuditDecision::FullHandCount
        }
    }

    pub fn contest(&self, contest_id: &str) -> Result<&ContestAudit> {
        self.contests
            .iter()
            .find(|c| c.contest_id == contest_id)
            .ok_or_else(|| AuditError::UnknownContest(contest_id.to_string()))
    }

    pub fn round(&self, number: u32) -> Result<&Round> {
        number
            .checked_sub(1)
            .and_then(|i| self.rounds.get(i as usize))
            .ok_or_else(|| AuditError::NotFound(format!("round {number}")))
    }

    pub fn open_round(&self) -> Option<&Round> {
        self.rounds.last().filter(|r| !r.closed)
    }

    /// Draw count proposed for the next round of a contest: the growth
    /// factor times the estimated total sample size, less what has already
    /// been drawn. `None` when there is nothing to base an estimate on.
    pub fn suggest_round_size(&self, contest_id: &str) -> Result<Option<u64>> {
        let contest = self.contest(contest_id)?;
        if contest.status != ContestStatus::InProgress || contest.method == AuditMethod::Stratified {
            return Ok(None);
        }
        let frame = &contest.frames[0];
        let n = frame.size();
        let drawn = frame.drawn.len() as u64;
        let remaining = frame.remaining(self.config.replacement);
        if remaining == 0 {
            return Ok(None);
        }
        let population = (!self.config.replacement).then_some(n);
        let spec =
            &self.config.contests.iter().find(|c| c.spec.contest_id == contest_id).expect("contest configured").spec;
        let mut target: Option<u64> = None;
        for a in contest.assertions.iter().filter(|a| a.assertion.status == AssertionStatus::Pending) {
            let u = a.assertion.assorter.upper_bound.clone();
            let values = &a.frames[0].values;
            let (margin, kind, error_rate, test) = match &a.frames[0].context {
                Some(ctx) => {
                    let clean = Rational::one() / (rational::int(2) - &ctx.margin / &u);
                    let errors = values.iter().filter(|b| **b < clean).count();
                    let rate = if values.is_empty() { 0.0 } else { errors as f64 / values.len() as f64 };
                    (ctx.margin.clone(), AuditKind::Comparison, rate.min(0.99), self.config.test.resolve(&ctx.b_upper))
                }
                None => {
                    let mean = if !values.is_empty() {
                        values.iter().fold(Rational::zero(), |s, v| s + v) / rational::int(values.len() as i64)
                    } else {
                        let with_contest: Vec<VoteRecord> =
                            self.records.iter().filter(|r| r.has_contest(&spec.contest_id)).cloned().collect();
                        if with_contest.is_empty() {
                            return Ok(None);
                        }
                        assorter_mean(&a.assertion.assorter, &with_contest)?
                    };
                    (&mean * rational::int(2) - Rational::one(), AuditKind::Polling, 0.0, self.config.test.resolve(&u))
                }
            };
            let estimate = match estimate_initial_sample_size(&SampleSizeRequest {
                margin,
                risk_limit: self.config.risk_limit.clone(),
                test,
                population,
                upper_bound: u,
                kind,
                error_rate,
            }) {
                Ok(e) => e,
                Err(AuditError::NonPositiveMargin(_)) => n,
                Err(e) => return Err(e),
            };
            target = Some(target.map_or(estimate, |t| t.max(estimate)));
        }
        Ok(target.map(|t| {
            let grown =
                (rational::int(t as i64) * &self.config.round_growth).ceil().to_integer().to_u64().unwrap_or(u64::MAX);
            grown.saturating_sub(drawn).max(1).min(remaining)
        }))
    }

    /// Draws the next round. `size` applies to every contest still in
    /// progress; without it each contest uses its suggested size. A
    /// stratified contest splits the size across strata in proportion to
    /// their card counts.
    pub fn draw_round(&mut self, size: Option<u64>) -> Result<&Round> {
        let mut sizes = BTreeMap::new();
        for c in self.contests.iter().filter(|c| c.status == ContestStatus::InProgress) {
            let n = match size {
                Some(n) => n,
                None => self.suggest_round_size(&c.contest_id)?.ok_or_else(|| {
                    AuditError::Round(format!("contest `{}` needs an explicit round size", c.contest_id))
                })?,
            };
            sizes.insert(c.contest_id.clone(), n);
        }
        self.draw_round_with(sizes)
    }

    /// Draws the next round with an explicit per-contest size.
    pub fn draw_round_with(&mut self, sizes: BTreeMap<String, u64>) -> Result<&Round> {
        if let Some(open) = self.open_round() {
            return Err(AuditError::Round(format!("round {} is still open", open.number)));
        }
        let number = self.rounds.len() as u32 + 1;
        let replacement = self.config.replacement;
        let seed = self.config.seed.clone();
        let mut draws = Vec::new();
        for (contest_id, &n) in &sizes {
            let contest = self
                .contests
                .iter_mut()
                .find(|c| &c.contest_id == contest_id)
                .ok_or_else(|| AuditError::UnknownContest(contest_id.clone()))?;
            if contest.status != ContestStatus::InProgress {
                return Err(AuditError::Round(format!("contest `{contest_id}` is no longer in progress")));
            }
            let total: u64 = contest.frames.iter().map(Frame::size).sum();
            let single = contest.frames.len() == 1;
            for frame in &mut contest.frames {
                let share = if single {
                    n
                } else {
                    (rational::int(n as i64) * rational::ratio(frame.size() as i64, total as i64))
                        .ceil()
                        .to_integer()
                        .to_u64()
                        .unwrap_or(0)
                };
                let count = share.min(frame.remaining(replacement));
                if count == 0 {
                    continue;
                }
                let round_id = format!("{number}/{contest_id}/{}", frame.stratum_id);
                let already: BTreeSet<u64> =
                    if replacement { BTreeSet::new() } else { frame.drawn.iter().copied().collect() };
                let indices = draw_indices(&seed, &round_id, frame.size(), count, replacement, &already)?;
                for &index in &indices {
                    draws.push(Draw {
                        contest_id: contest_id.clone(),
                        stratum_id: frame.stratum_id.clone(),
                        index,
                        resolved: frame.manifest.resolve_draw(index)?,
                    });
                }
                frame.drawn.extend(indices);
            }
        }
        self.events.push(AuditEvent::RoundDrawn { round: number, sizes: sizes.clone() });
        self.rounds.push(Round { number, sizes, draws, interpretations: Vec::new(), closed: false, log: Vec::new() });
        Ok(self.rounds.last().expect("just pushed"))
    }

    /// Records audit-board interpretations for an open round. The batch is
    /// applied all-or-nothing; an index already interpreted is a conflict.
    pub fn enter_interpretations(&mut self, number: u32, batch: Vec<Interpretation>) -> Result<usize> {
        let round = self.round(number)?;
        if round.closed {
            return Err(AuditError::Round(format!("round {number} is closed")));
        }
        let drawn: HashMap<(&str, &str, u64), &Draw> =
            round.draws.iter().map(|d| ((d.contest_id.as_str(), d.stratum_id.as_str(), d.index), d)).collect();
        let mut seen: HashSet<(String, String, u64)> = round
            .interpretations
            .iter()
            .map(|i| (i.contest_id.clone(), i.stratum_id.clone().unwrap_or_default(), i.index))
            .collect();
        let mut accepted = Vec::with_capacity(batch.len());
        let mut by_location: HashMap<String, Option<VoteRecord>> = HashMap::new();
        for mut item in batch {
            let contest = self.contest(&item.contest_id)?;
            let stratum_id = match (&item.stratum_id, contest.frames.as_slice()) {
                (Some(s), _) => s.clone(),
                (None, [only]) => only.stratum_id.clone(),
                (None, _) => {
                    return Err(AuditError::InvalidArgument(format!(
                        "contest `{}` is stratified; stratum_id is required",
                        item.contest_id
                    )))
                }
            };
            let draw = drawn.get(&(item.contest_id.as_str(), stratum_id.as_str(), item.index)).ok_or_else(|| {
                AuditError::InvalidArgument(format!(
                    "index {} of contest `{}` stratum `{stratum_id}` was not drawn in round {number}",
                    item.index, item.contest_id
                ))
            })?;
            if matches!(draw.resolved, ResolvedDraw::PhantomPair) && item.record.is_some() {
                return Err(AuditError::InvalidArgument(format!(
                    "index {} is a phantom and must be recorded as missing",
                    item.index
                )));
            }
            if let Some(record) = &item.record {
                for (cid, vote) in &record.contests {
                    let spec = self
                        .config
                        .contests
                        .iter()
                        .find(|c| &c.spec.contest_id == cid)
                        .ok_or_else(|| AuditError::UnknownContest(cid.clone()))?;
                    vote.validate(&spec.spec)
                        .map_err(|m| AuditError::InvalidContest { contest: cid.clone(), message: m })?;
                }
            }
            if !seen.insert((item.contest_id.clone(), stratum_id.clone(), item.index)) {
                return Err(AuditError::Conflict(format!(
                    "index {} of contest `{}` already has an interpretation in round {number}",
                    item.index, item.contest_id
                )));
            }
            if let Some(location) = draw.resolved.location_id() {
                by_location.insert(location.to_string(), item.record.clone());
            }
            item.stratum_id = Some(stratum_id);
            accepted.push(item);
        }
        let count = accepted.len();
        // one retrieval serves every contest that drew the same card
        let mut shared = Vec::new();
        for d in &round.draws {
            let Some(record) = d.resolved.location_id().and_then(|l| by_location.get(l)) else { continue };
            if seen.insert((d.contest_id.clone(), d.stratum_id.clone(), d.index)) {
                shared.push(Interpretation {
                    contest_id: d.contest_id.clone(),
                    stratum_id: Some(d.stratum_id.clone()),
                    index: d.index,
                    record: record.clone(),
                });
            }
        }
        accepted.extend(shared);
        self.rounds[(number - 1) as usize].interpretations.extend(accepted);
        Ok(count)
    }

    /// Closes a fully interpreted round: feeds every draw to the tests,
    /// updates p-values and statuses, and records the decision.
    pub fn close_round(&mut self, number: u32) -> Result<AuditDecision> {
        let round = self.round(number)?;
        if round.closed {
            return Err(AuditError::Round(format!("round {number} is already closed")));
        }
        let missing = round.uncovered();
        if missing > 0 {
            return Err(AuditError::Round(format!(
                "round {number} has {missing} drawn cards without an interpretation"
            )));
        }
        let round = round.clone();
        let interpretations: HashMap<(&str, &str, u64), &Interpretation> = round
            .interpretations
            .iter()
            .map(|i| ((i.contest_id.as_str(), i.stratum_id.as_deref().unwrap_or(""), i.index), i))
            .collect();
        let records = self.records.clone();
        let cvrs: HashMap<&str, &VoteRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut log = Vec::new();
        for draw in &round.draws {
            let key = (draw.contest_id.as_str(), draw.stratum_id.as_str(), draw.index);
            let card = interpretations[&key].record.as_ref();
            let contest = self
                .contests
                .iter_mut()
                .find(|c| c.contest_id == draw.contest_id)
                .ok_or_else(|| AuditError::UnknownContest(draw.contest_id.clone()))?;
            if contest.status != ContestStatus::InProgress {
                continue;
            }
            let f = contest.frames.iter().position(|f| f.stratum_id == draw.stratum_id).ok_or_else(|| {
                AuditError::NotFound(format!("stratum `{}` of contest `{}`", draw.stratum_id, draw.contest_id))
            })?;
            let method = contest.frames[f].method;
            let stratified = contest.method == AuditMethod::Stratified;
            let mut entry = DrawLog {
                contest_id: draw.contest_id.clone(),
                stratum_id: draw.stratum_id.clone(),
                index: draw.index,
                cvr_id: None,
                card_missing: card.is_none(),
                flags: None,
                assertions: Vec::new(),
            };
            for a in &mut contest.assertions {
                let u = a.assertion.assorter.upper_bound.clone();
                let record = match method {
                    StratumMethod::Polling => {
                        let value = match (&draw.resolved, card) {
                            (ResolvedDraw::PhantomPair, _) | (_, None) => Rational::zero(),
                            (_, Some(r)) => a.assertion.assorter.eval(r)?,
                        };
                        AssertionLog {
                            assertion_id: a.assertion.assorter.id.clone(),
                            cvr_value: None,
                            card_value: Some(value.clone()),
                            omega: None,
                            value,
                        }
                    }
                    StratumMethod::Comparison => {
                        let cmp = match &draw.resolved {
                            ResolvedDraw::PhantomPair => ComparisonDraw::phantom(),
                            ResolvedDraw::RealCardWithCvr { cvr_id, .. } => {
                                entry.cvr_id = Some(cvr_id.clone());
                                let cvr = cvrs.get(cvr_id.as_str()).ok_or_else(|| {
                                    AuditError::InconsistentDraw(format!("CVR `{cvr_id}` is not loaded"))
                                })?;
                                let obs = card.map_or(CardObservation::Missing, CardObservation::Card);
                                // redacted CVRs only enter the frame when counted in the tally
                                comparison_draw(&a.assertion.assorter, cvr, obs, cvr.redacted)?
                            }
                            ResolvedDraw::RealCard { .. } => {
                                return Err(AuditError::InconsistentDraw("comparison frame entry without a CVR".into()))
                            }
                        };
                        entry.flags = Some(cmp.flags);
                        let omega = overstatement(&cmp, &u)?;
                        let value = if stratified {
                            Rational::one() - &omega / &u
                        } else {
                            a.frames[f]
                                .context
                                .as_ref()
                                .ok_or_else(|| AuditError::NonPositiveMargin(a.assertion.assorter.id.clone()))?
                                .b_value(&cmp)?
                        };
                        let (cvr_value, card_value) = cmp.effective_values(&u)?;
                        AssertionLog {
                            assertion_id: a.assertion.assorter.id.clone(),
                            cvr_value: Some(cvr_value),
                            card_value: Some(card_value),
                            omega: Some(omega),
                            value,
                        }
                    }
                };
                a.frames[f].values.push(record.value.clone());
                entry.assertions.push(record);
            }
            log.push(entry);
        }
        let touched: BTreeSet<&str> = round.draws.iter().map(|d| d.contest_id.as_str()).collect();
        for i in 0..self.contests.len() {
            if self.contests[i].status != ContestStatus::InProgress
                || !touched.contains(self.contests[i].contest_id.as_str())
            {
                continue;
            }
            self.measure_contest(i)?;
            let contest = &mut self.contests[i];
            if contest.assertions.iter().all(|a| a.assertion.status == AssertionStatus::RejectedNull) {
                contest.status = ContestStatus::Confirmed;
                self.events
                    .push(AuditEvent::ContestConfirmed { round: number, contest_id: contest.contest_id.clone() });
            } else if contest.frames.iter().all(|f| f.remaining(self.config.replacement) == 0) {
                contest.status = ContestStatus::FullHandCount;
                self.events.push(AuditEvent::FullHandCount {
                    round: number,
                    contest_id: contest.contest_id.clone(),
                    reason: "every card in the frame has been drawn".into(),
                });
            }
        }
        self.decision = self.current_decision();
        let r = &mut self.rounds[(number - 1) as usize];
        r.closed = true;
        r.log = log;
        self.events.push(AuditEvent::RoundClosed { round: number, decision: self.decision });
        Ok(self.decision)
    }

    /// Enters `interpretations` into the open round and closes it, leaving
    /// `self` untouched on error.
    pub fn execute_round(&self, interpretations: Vec<Interpretation>) -> Result<AuditState> {
        let number = self.open_round().map(|r| r.number).ok_or_else(|| AuditError::Round("no round is open".into()))?;
        let mut next = self.clone();
        next.enter_interpretations(number, interpretations)?;
        next.close_round(number)?;
        Ok(next)
    }

    fn test_for(&self, a: &AssertionAudit) -> TestKind {
        match &a.frames[0].context {
            Some(ctx) => self.config.test.resolve(&ctx.b_upper),
            None => self.config.test.resolve(&a.assertion.assorter.upper_bound),
        }
    }

    /// Sequential test state of a single-frame assertion, rebuilt from its values.
    pub fn test_state(&self, contest_id: &str, assertion_id: &str) -> Result<TestState> {
        let contest = self.contest(contest_id)?;
        let a = contest
            .assertions
            .iter()
            .find(|a| a.id() == assertion_id)
            .ok_or_else(|| AuditError::NotFound(format!("assertion `{assertion_id}`")))?;
        if contest.method == AuditMethod::Stratified {
            return Err(AuditError::InvalidArgument("stratified assertions combine several tests".into()));
        }
        self.single_test(contest, a)
    }

    fn single_test(&self, contest: &ContestAudit, a: &AssertionAudit) -> Result<TestState> {
        let population = (!self.config.replacement).then(|| contest.frames[0].size());
        let mut state = TestState::new(self.test_for(a), population, half())?.with_exact_limit(self.config.exact_limit);
        for v in &a.frames[0].values {
            state.push(v.clone())?;
        }
        Ok(state)
    }

    fn measure_contest(&mut self, i: usize) -> Result<()> {
        let alpha = self.config.risk_limit.clone();
        let contest = &self.contests[i];
        let mut results = Vec::with_capacity(contest.assertions.len());
        for a in &contest.assertions {
            if contest.method == AuditMethod::Stratified {
                let combined = self.stratified_pvalue(contest, a)?;
                let rejects = combined.p_value <= rational::to_f64(&alpha);
                results.push((combined.p_value, None, Some(combined), rejects));
            } else {
                let t = self.single_test(contest, a)?;
                results.push((t.p_value(), t.p_value_exact(), None, t.rejects(&alpha)));
            }
        }
        for (a, (p, exact, combined, rejects)) in self.contests[i].assertions.iter_mut().zip(results) {
            a.p_value = p;
            a.p_value_exact = exact;
            a.combined = combined;
            if rejects {
                a.assertion.status = AssertionStatus::RejectedNull;
            }
        }
        Ok(())
    }

    fn stratified_pvalue(&self, contest: &ContestAudit, a: &AssertionAudit) -> Result<CombinedPValue> {
        let total: u64 = contest.frames.iter().map(Frame::size).sum();
        let u = &a.assertion.assorter.upper_bound;
        let strata: Vec<StratumSpec> = contest
            .frames
            .iter()
            .zip(&a.frames)
            .map(|(f, af)| {
                let values: Vec<f64> = af.values.iter().map(rational::to_f64).collect();
                let test = f.test.clone().unwrap_or_else(|| self.config.test.resolve(u));
                let tester = match f.method {
                    StratumMethod::Polling => polling_tester(values, f.size(), total, test, rational::to_f64(u)),
                    StratumMethod::Comparison => comparison_tester(
                        values,
                        f.size(),
                        total,
                        test,
                        af.reported_mean.as_ref().map_or(0.5, rational::to_f64),
                        rational::to_f64(u),
                    ),
                };
                StratumSpec { stratum_id: f.stratum_id.clone(), size: f.size(), tester }
            })
            .collect();
        let grid = match contest.grid_resolution {
            Some(g) => crate::stratification::AllocationGrid::new(strata.len(), g)?,
            None => crate::stratification::AllocationGrid::default_for(strata.len())?,
        };
        max_combined_pvalue(&strata, &grid)
    }

    /// Sends contests to a full hand count at the operator's request: the
    /// named contest, or every contest still in progress.
    pub fn escalate(&mut self, contest_id: Option<&str>, reason: &str) -> Result<AuditDecision> {
        let round = self.rounds.len() as u32;
        if let Some(id) = contest_id {
            let status = self.contest(id)?.status;
            if status != ContestStatus::InProgress {
                return Err(AuditError::Round(format!("contest `{id}` is not in progress")));
            }
        }
        for c in &mut self.contests {
            if c.status == ContestStatus::InProgress && contest_id.is_none_or(|id| id == c.contest_id) {
                c.status = ContestStatus::FullHandCount;
                self.events.push(AuditEvent::Escalated {
                    round,
                    contest_id: c.contest_id.clone(),
                    reason: reason.to_string(),
                });
            }
        }
        self.decision = self.current_decision();
        Ok(self.decision)
    }

    /// Recomputes the whole audit from its inputs and logged operator
    /// actions. A faithful log replays to an identical state.
    pub fn replay(&self) -> Result<AuditState> {
        let mut state =
            AuditState::from_parts(self.config.clone(), self.records.clone(), Vec::new(), self.manifest.clone())?;
        state.diagnostics = self.diagnostics.clone();
        for event in &self.events {
            match event {
                AuditEvent::RoundDrawn { round, sizes } => {
                    state.draw_round_with(sizes.clone())?;
                    let original = self.round(*round)?;
                    if original.draws != state.round(*round)?.draws {
                        return Err(AuditError::Round(format!("round {round} draws differ on replay")));
                    }
                }
                AuditEvent::RoundClosed { round, .. } => {
                    let original = self.round(*round)?;
                    state.enter_interpretations(*round, original.interpretations.clone())?;
                    state.close_round(*round)?;
                }
                AuditEvent::Escalated { contest_id, reason, .. } => {
                    state.escalate(Some(contest_id), reason)?;
                }
                _ => {}
            }
        }
        if let Some(open) = self.open_round() {
            state.enter_interpretations(open.number, open.interpretations.clone())?;
        }
        Ok(state)
    }

    /// Cards still awaiting an interpretation in the open round.
    pub fn pending_draws(&self) -> Vec<&Draw> {
        let Some(round) = self.open_round() else { return Vec::new() };
        let covered: HashSet<(&str, &str, u64)> = round
            .interpretations
            .iter()
            .map(|i| (i.contest_id.as_str(), i.stratum_id.as_deref().unwrap_or(""), i.index))
            .collect();
        let mut seen = HashSet::new();
        round
            .draws
            .iter()
            .filter(|d| {
                let key = (d.contest_id.as_str(), d.stratum_id.as_str(), d.index);
                !covered.contains(&key) && seen.insert(key)
            })
            .collect()
    }

    pub fn cvr(&self, id: &str) -> Option<&VoteRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}
