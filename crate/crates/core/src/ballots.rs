//! Contests, cast-vote records, ballot manifests and phantoms.
//!
//! Index assignment for sampling follows manifest file order: a contest's
//! sampling frame lists the eligible manifest entries in the order they
//! appear in the manifest, followed by any phantom entries.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Read};

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::assorters::IrvAssertionSpec;
use crate::error::{AuditError, Result};
use crate::rational::{self, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SocialChoice {
    Plurality,
    Approval,
    Supermajority,
    Weighted,
    Irv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestSpec {
    pub contest_id: String,
    pub social_choice: SocialChoice,
    pub candidates: Vec<String>,
    pub n_winners: usize,
    pub reported_winners: Vec<String>,
    #[serde(default, with = "rational::opt_as_str", skip_serializing_if = "Option::is_none")]
    pub supermajority_fraction: Option<Rational>,
    #[serde(default, with = "rational::opt_as_str", skip_serializing_if = "Option::is_none")]
    pub score_upper_bound: Option<Rational>,
    pub upper_bound_cards: u64,
    /// Redacted CVRs were counted in the reported tally.
    #[serde(default)]
    pub redacted_in_tally: bool,
    /// Externally supplied assertion set for IRV contests.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub irv_assertions: Vec<IrvAssertionSpec>,
}

impl ContestSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(AuditError::InvalidContest { contest: self.contest_id.clone(), message });
        let distinct: BTreeSet<&String> = self.candidates.iter().collect();
        if distinct.len() != self.candidates.len() {
            return fail("duplicate candidate ids".into());
        }
        let c = self.candidates.len();
        if self.n_winners < 1 || self.n_winners >= c {
            return fail(format!("need 1 <= K < C, got K={} C={c}", self.n_winners));
        }
        let winners: BTreeSet<&String> = self.reported_winners.iter().collect();
        if winners.len() != self.n_winners || self.reported_winners.len() != self.n_winners {
            return fail(format!("expected {} distinct reported winners", self.n_winners));
        }
        if let Some(w) = winners.iter().find(|w| !distinct.contains(**w)) {
            return fail(format!("reported winner `{w}` is not a candidate"));
        }
        if self.upper_bound_cards < 1 {
            return fail("upper_bound_cards must be at least 1".into());
        }
        match (self.social_choice, &self.supermajority_fraction) {
            (SocialChoice::Supermajority, Some(f)) => {
                if !f.is_positive() || *f >= rational::int(1) {
                    return fail(format!("supermajority fraction {} outside (0,1)", rational::format(f)));
                }
            }
            (SocialChoice::Supermajority, None) => return fail("missing supermajority_fraction".into()),
            (_, Some(_)) => return fail("supermajority_fraction only applies to SUPERMAJORITY".into()),
            _ => {}
        }
        match (self.social_choice, &self.score_upper_bound) {
            (SocialChoice::Weighted, Some(s)) => {
                if !s.is_positive() {
                    return fail("score_upper_bound must be positive".into());
                }
            }
            (SocialChoice::Weighted, None) => return fail("missing score_upper_bound".into()),
            (_, Some(_)) => return fail("score_upper_bound only applies to WEIGHTED".into()),
            _ => {}
        }
        for spec in &self.irv_assertions {
            spec.validate()?;
            for c in spec.candidates() {
                if !distinct.contains(c) {
                    return fail(format!("IRV assertion names unknown candidate `{c}`"));
                }
            }
        }
        Ok(())
    }

    pub fn is_candidate(&self, id: &str) -> bool {
        self.candidates.iter().any(|c| c == id)
    }

    pub fn reported_losers(&self) -> impl Iterator<Item = &String> {
        self.candidates.iter().filter(|c| !self.reported_winners.contains(c))
    }
}

/// The marks one card (or CVR) shows in a single contest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContestVote {
    Marks(BTreeSet<String>),
    Scores(#[serde(with = "rational::map_as_str")] BTreeMap<String, Rational>),
    Ranks(BTreeMap<String, u32>),
}

impl ContestVote {
    pub fn marks(&self) -> Option<&BTreeSet<String>> {
        match self {
            ContestVote::Marks(m) => Some(m),
            _ => None,
        }
    }

    /// Candidate ranked `rank`, if any.
    pub fn ranked_at(&self, rank: u32) -> Option<&str> {
        match self {
            ContestVote::Ranks(r) => r.iter().find(|(_, &v)| v == rank).map(|(k, _)| k.as_str()),
            _ => None,
        }
    }

    /// Candidates in preference order (lowest rank first).
    pub fn preference_order(&self) -> Vec<&str> {
        match self {
            ContestVote::Ranks(r) => {
                let mut v: Vec<(&String, &u32)> = r.iter().collect();
                v.sort_by_key(|(_, &rank)| rank);
                v.into_iter().map(|(c, _)| c.as_str()).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Checks the record invariants against the contest's rules.
    pub fn validate(&self, contest: &ContestSpec) -> std::result::Result<(), String> {
        let expected = match contest.social_choice {
            SocialChoice::Plurality | SocialChoice::Approval | SocialChoice::Supermajority => "marks",
            SocialChoice::Weighted => "scores",
            SocialChoice::Irv => "ranks",
        };
        let unknown = |c: &String| format!("unknown candidate `{c}`");
        match (self, expected) {
            (ContestVote::Marks(m), "marks") => {
                if let Some(c) = m.iter().find(|c| !contest.is_candidate(c)) {
                    return Err(unknown(c));
                }
            }
            (ContestVote::Scores(s), "scores") => {
                let upper = contest.score_upper_bound.clone().unwrap_or_default();
                for (c, score) in s {
                    if !contest.is_candidate(c) {
                        return Err(unknown(c));
                    }
                    if score.is_negative() || *score > upper {
                        return Err(format!(
                            "score {} for `{c}` outside [0, {}]",
                            rational::format(score),
                            rational::format(&upper)
                        ));
                    }
                }
            }
            (ContestVote::Ranks(r), "ranks") => {
                let mut seen = HashSet::new();
                for (c, &rank) in r {
                    if !contest.is_candidate(c) {
                        return Err(unknown(c));
                    }
                    if rank == 0 {
                        return Err(format!("rank 0 for `{c}`; ranks are 1-based"));
                    }
                    if !seen.insert(rank) {
                        return Err(format!("duplicate rank {rank}"));
                    }
                }
            }
            _ => return Err(format!("contest expects {expected}")),
        }
        Ok(())
    }
}

/// One card's or CVR's content across contests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub redacted: bool,
    #[serde(default)]
    pub contests: BTreeMap<String, ContestVote>,
}

impl VoteRecord {
    pub fn new(id: impl Into<String>) -> Self {
        VoteRecord { id: id.into(), redacted: false, contests: BTreeMap::new() }
    }

    pub fn with_marks<I, S>(mut self, contest: &str, marks: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.contests.insert(contest.to_string(), ContestVote::Marks(marks.into_iter().map(Into::into).collect()));
        self
    }

    pub fn with_scores<I, S>(mut self, contest: &str, scores: I) -> Self
    where
        I: IntoIterator<Item = (S, Rational)>,
        S: Into<String>,
    {
        self.contests
            .insert(contest.to_string(), ContestVote::Scores(scores.into_iter().map(|(c, s)| (c.into(), s)).collect()));
        self
    }

    pub fn with_ranks<I, S>(mut self, contest: &str, ranks: I) -> Self
    where
        I: IntoIterator<Item = (S, u32)>,
        S: Into<String>,
    {
        self.contests
            .insert(contest.to_string(), ContestVote::Ranks(ranks.into_iter().map(|(c, r)| (c.into(), r)).collect()));
        self
    }

    pub fn contest(&self, contest_id: &str) -> Option<&ContestVote> {
        self.contests.get(contest_id)
    }

    pub fn has_contest(&self, contest_id: &str) -> bool {
        self.contests.contains_key(contest_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub record_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Election {
    pub records: Vec<VoteRecord>,
    pub diagnostics: Vec<Diagnostic>,
    /// Number of accepted records containing each contest.
    pub counts: BTreeMap<String, u64>,
}

/// Reads a JSON-lines CVR stream and validates each record against the
/// contests it mentions. Invalid records are dropped with a diagnostic;
/// malformed JSON and duplicate ids are fatal.
pub fn load_election<R: BufRead>(stream: R, contests: &[ContestSpec]) -> Result<Election> {
    let by_id: HashMap<&str, &ContestSpec> = contests.iter().map(|c| (c.contest_id.as_str(), c)).collect();
    let mut election = Election::default();
    for c in contests {
        election.counts.insert(c.contest_id.clone(), 0);
    }
    let mut seen = HashSet::new();
    for (i, line) in stream.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VoteRecord =
            serde_json::from_str(&line).map_err(|e| AuditError::Parse { position: line_no, message: e.to_string() })?;
        if !seen.insert(record.id.clone()) {
            return Err(AuditError::DuplicateRecord(record.id));
        }
        let problem = record.contests.iter().find_map(|(cid, vote)| match by_id.get(cid.as_str()) {
            None => Some(format!("unknown contest `{cid}`")),
            Some(spec) => vote.validate(spec).err().map(|m| format!("contest `{cid}`: {m}")),
        });
        match problem {
            Some(message) => {
                election.diagnostics.push(Diagnostic { line: line_no, record_id: Some(record.id.clone()), message })
            }
            None => {
                for cid in record.contests.keys() {
                    *election.counts.entry(cid.clone()).or_default() += 1;
                }
                election.records.push(record);
            }
        }
    }
    Ok(election)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub location_id: String,
    pub cvr_id: Option<String>,
    /// Contests the card's style carries; `None` when unknown.
    pub styles: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub phantom: bool,
}

impl ManifestEntry {
    pub fn card(location_id: impl Into<String>, cvr_id: Option<&str>) -> Self {
        ManifestEntry {
            location_id: location_id.into(),
            cvr_id: cvr_id.map(str::to_string),
            styles: None,
            phantom: false,
        }
    }

    fn phantom(contest_id: &str, k: u64) -> Self {
        ManifestEntry {
            location_id: format!("phantom-{contest_id}-{k}"),
            cvr_id: None,
            styles: Some(BTreeSet::from([contest_id.to_string()])),
            phantom: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PhantomKind {
    PhantomCvr,
    PhantomCard,
}

/// Placeholder for an unaccounted card or CVR.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhantomRecord {
    pub kind: PhantomKind,
    pub contest_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CardManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResolvedDraw {
    RealCardWithCvr {
        location_id: String,
        cvr_id: String,
    },
    /// A card with no linked CVR (polling frames).
    RealCard {
        location_id: String,
    },
    PhantomPair,
}

impl ResolvedDraw {
    pub fn location_id(&self) -> Option<&str> {
        match self {
            ResolvedDraw::RealCardWithCvr { location_id, .. } | ResolvedDraw::RealCard { location_id } => {
                Some(location_id)
            }
            ResolvedDraw::PhantomPair => None,
        }
    }
}

impl CardManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let manifest = CardManifest { entries };
        manifest.check_cvr_links()?;
        Ok(manifest)
    }

    /// Reads a `location_id,cvr_id,styles` CSV manifest.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["location_id", "cvr_id", "styles"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(AuditError::Parse {
                position: 1,
                message: format!("manifest header must be `{}`", expected.join(",")),
            });
        }
        let mut entries = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let field = |k: usize| row.get(k).unwrap_or("").to_string();
            let location_id = field(0);
            if location_id.is_empty() {
                return Err(AuditError::Parse { position: i + 2, message: "empty location_id".into() });
            }
            let cvr_id = Some(field(1)).filter(|s| !s.is_empty());
            let styles = Some(field(2))
                .filter(|s| !s.is_empty())
                .map(|s| s.split(';').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect());
            entries.push(ManifestEntry { location_id, cvr_id, styles, phantom: false });
        }
        CardManifest::new(entries)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["location_id", "cvr_id", "styles"])?;
        for e in self.entries.iter().filter(|e| !e.phantom) {
            let styles = e.styles.as_ref().map(|s| s.iter().cloned().collect::<Vec<_>>().join(";")).unwrap_or_default();
            wtr.write_record([e.location_id.as_str(), e.cvr_id.as_deref().unwrap_or(""), &styles])?;
        }
        let bytes = wtr.into_inner().map_err(|e| AuditError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    fn check_cvr_links(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if let Some(id) = &e.cvr_id {
                if !seen.insert(id) {
                    return Err(AuditError::DuplicateRecord(id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn real_len(&self) -> u64 {
        self.entries.iter().filter(|e| !e.phantom).count() as u64
    }

    /// Entries whose CVR contains the contest, in manifest order. Redacted
    /// CVRs are left out unless the contest counted them in its tally.
    pub fn comparison_frame(&self, contest: &ContestSpec, cvrs: &HashMap<&str, &VoteRecord>) -> Self {
        let entries =
            self.entries
                .iter()
                .filter(|e| !e.phantom)
                .filter(|e| {
                    e.cvr_id.as_deref().and_then(|id| cvrs.get(id)).is_some_and(|r| {
                        r.has_contest(&contest.contest_id) && (!r.redacted || contest.redacted_in_tally)
                    })
                })
                .cloned()
                .collect();
        CardManifest { entries }
    }

    /// Entries that may contain the contest: by style when known, by CVR
    /// when the style is unknown, and every unlinked card otherwise.
    pub fn polling_frame(&self, contest: &ContestSpec, cvrs: &HashMap<&str, &VoteRecord>) -> Self {
        let cid = &contest.contest_id;
        let entries = self
            .entries
            .iter()
            .filter(|e| !e.phantom)
            .filter(|e| match (&e.styles, e.cvr_id.as_deref().and_then(|id| cvrs.get(id))) {
                (Some(styles), _) => styles.contains(cid),
                (None, Some(r)) => r.has_contest(cid),
                (None, None) => true,
            })
            .cloned()
            .collect();
        CardManifest { entries }
    }

    /// Appends `N - n` phantom entries so the frame holds exactly the
    /// contest's upper bound of cards.
    pub fn add_phantoms(&self, contest: &ContestSpec) -> Result<Self> {
        let n = self.real_len();
        let upper = contest.upper_bound_cards;
        if upper < n {
            return Err(AuditError::ImpossibleUpperBound {
                contest: contest.contest_id.clone(),
                upper_bound: upper,
                cvrs: n,
            });
        }
        let mut entries: Vec<ManifestEntry> = self.entries.iter().filter(|e| !e.phantom).cloned().collect();
        entries.extend((1..=upper - n).map(|k| ManifestEntry::phantom(&contest.contest_id, k)));
        Ok(CardManifest { entries })
    }

    /// Maps a 1-based sample index onto the frame.
    pub fn resolve_draw(&self, index: u64) -> Result<ResolvedDraw> {
        if index == 0 || index > self.len() {
            return Err(AuditError::IndexOutOfRange { index, size: self.len() });
        }
        let e = &self.entries[(index - 1) as usize];
        Ok(match (&e.cvr_id, e.phantom) {
            (_, true) => ResolvedDraw::PhantomPair,
            (Some(cvr_id), false) => {
                ResolvedDraw::RealCardWithCvr { location_id: e.location_id.clone(), cvr_id: cvr_id.clone() }
            }
            (None, false) => ResolvedDraw::RealCard { location_id: e.location_id.clone() },
        })
    }

    pub fn entry(&self, index: u64) -> Option<&ManifestEntry> {
        index.checked_sub(1).and_then(|i| self.entries.get(i as usize))
    }
}

/// Total score helper shared by tabulation oracles and reporting.
pub fn score_of(vote: &ContestVote, candidate: &str) -> Rational {
    match vote {
        ContestVote::Scores(s) => s.get(candidate).cloned().unwrap_or_else(Rational::zero),
        _ => Rational::zero(),
    }
}
