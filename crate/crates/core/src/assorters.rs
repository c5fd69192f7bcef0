//! Assorters and the assertion sets they generate for each social choice
//! function.
//!
//! Every assertion has the form "the mean of the assorter over all cards
//! exceeds 1/2". A mean of exactly 1/2 means the reported winner did not
//! win (a tie), so ties are losses.

use std::collections::BTreeSet;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::ballots::{ContestSpec, ContestVote, SocialChoice, VoteRecord};
use crate::error::{AuditError, Result};
use crate::rational::{self, half, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IrvKind {
    /// Winner's first preferences exceed the loser's total mentions.
    #[serde(rename = "NEB")]
    NotEliminatedBefore,
    /// Winner beats loser once `eliminated` are removed.
    #[serde(rename = "NEN")]
    NotEliminatedNext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrvAssertionSpec {
    pub kind: IrvKind,
    pub winner: String,
    pub loser: String,
    #[serde(default)]
    pub eliminated: BTreeSet<String>,
}

impl IrvAssertionSpec {
    pub fn neb(winner: &str, loser: &str) -> Self {
        IrvAssertionSpec {
            kind: IrvKind::NotEliminatedBefore,
            winner: winner.into(),
            loser: loser.into(),
            eliminated: BTreeSet::new(),
        }
    }

    pub fn nen<I, S>(winner: &str, loser: &str, eliminated: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        IrvAssertionSpec {
            kind: IrvKind::NotEliminatedNext,
            winner: winner.into(),
            loser: loser.into(),
            eliminated: eliminated.into_iter().map(Into::into).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.winner == self.loser {
            return Err(AuditError::InvalidArgument(format!("IRV assertion compares `{}` with itself", self.winner)));
        }
        match self.kind {
            IrvKind::NotEliminatedBefore if !self.eliminated.is_empty() => {
                Err(AuditError::InvalidArgument("NEB assertions take no eliminated set".into()))
            }
            IrvKind::NotEliminatedNext
                if self.eliminated.contains(&self.winner) || self.eliminated.contains(&self.loser) =>
            {
                Err(AuditError::InvalidArgument("NEN winner and loser must not be eliminated".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn candidates(&self) -> impl Iterator<Item = &String> {
        [&self.winner, &self.loser].into_iter().chain(self.eliminated.iter())
    }

    /// Parses a JSON list of assertion specs.
    pub fn parse_list(json: &str) -> Result<Vec<Self>> {
        let specs: Vec<Self> = serde_json::from_str(json)?;
        specs.iter().try_for_each(Self::validate)?;
        Ok(specs)
    }
}

/// How an assorter scores a card.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AssorterRule {
    /// Card with a mark for `winner` but not `loser` scores 1; the reverse
    /// scores 0. A card with more than `vote_limit` marks is an overvote.
    Pairwise {
        winner: String,
        loser: String,
        vote_limit: Option<usize>,
    },
    Supermajority {
        winner: String,
        #[serde(with = "rational::as_str")]
        fraction: Rational,
    },
    Weighted {
        winner: String,
        loser: String,
        #[serde(with = "rational::as_str")]
        score_upper_bound: Rational,
    },
    Irv(IrvAssertionSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assorter {
    pub id: String,
    pub contest_id: String,
    pub rule: AssorterRule,
    #[serde(with = "rational::as_str")]
    pub upper_bound: Rational,
    pub description: String,
}

fn wrong_shape(contest_id: &str, expected: &str) -> AuditError {
    AuditError::InvalidArgument(format!("contest `{contest_id}` record does not carry {expected}"))
}

impl Assorter {
    /// Value of the assorter on one card or CVR, in `[0, upper_bound]`.
    /// Records without the contest score 1/2.
    pub fn eval(&self, record: &VoteRecord) -> Result<Rational> {
        self.eval_vote(record.contest(&self.contest_id))
    }

    pub fn eval_vote(&self, vote: Option<&ContestVote>) -> Result<Rational> {
        let Some(vote) = vote else {
            return Ok(half());
        };
        match &self.rule {
            AssorterRule::Pairwise { winner, loser, vote_limit } => {
                let marks = vote.marks().ok_or_else(|| wrong_shape(&self.contest_id, "marks"))?;
                if vote_limit.is_some_and(|k| marks.len() > k) {
                    return Ok(half());
                }
                Ok(match (marks.contains(winner), marks.contains(loser)) {
                    (true, false) => Rational::one(),
                    (false, true) => Rational::zero(),
                    _ => half(),
                })
            }
            AssorterRule::Supermajority { winner, .. } => {
                let marks = vote.marks().ok_or_else(|| wrong_shape(&self.contest_id, "marks"))?;
                Ok(match (marks.len(), marks.contains(winner)) {
                    (1, true) => self.upper_bound.clone(),
                    (1, false) => Rational::zero(),
                    _ => half(),
                })
            }
            AssorterRule::Weighted { winner, loser, score_upper_bound } => {
                let ContestVote::Scores(scores) = vote else {
                    return Err(wrong_shape(&self.contest_id, "scores"));
                };
                let score = |c: &String| -> Result<Rational> {
                    let s = scores.get(c).cloned().unwrap_or_else(Rational::zero);
                    if s.is_negative() || s > *score_upper_bound {
                        return Err(AuditError::ScoreOutOfRange {
                            candidate: c.clone(),
                            score: rational::format(&s),
                            upper: rational::format(score_upper_bound),
                        });
                    }
                    Ok(s)
                };
                let (sw, sl) = (score(winner)?, score(loser)?);
                Ok((sw - sl + score_upper_bound) / (score_upper_bound * rational::int(2)))
            }
            AssorterRule::Irv(spec) => {
                if !matches!(vote, ContestVote::Ranks(_)) {
                    return Err(wrong_shape(&self.contest_id, "ranks"));
                }
                let order = vote.preference_order();
                Ok(match spec.kind {
                    IrvKind::NotEliminatedBefore => {
                        if order.first() == Some(&spec.winner.as_str()) {
                            Rational::one()
                        } else if order.contains(&spec.loser.as_str()) {
                            Rational::zero()
                        } else {
                            half()
                        }
                    }
                    IrvKind::NotEliminatedNext => match order.into_iter().find(|c| !spec.eliminated.contains(*c)) {
                        Some(c) if c == spec.winner => Rational::one(),
                        Some(c) if c == spec.loser => Rational::zero(),
                        _ => half(),
                    },
                })
            }
        }
    }
}

/// `(1_w - 1_l + 1) / 2` with upper bound 1.
pub fn pairwise_assorter(contest_id: &str, winner: &str, loser: &str) -> Result<Assorter> {
    if winner == loser {
        return Err(AuditError::InvalidArgument(format!("winner and loser are both `{winner}`")));
    }
    Ok(Assorter {
        id: format!("{contest_id}:{winner}>{loser}"),
        contest_id: contest_id.into(),
        rule: AssorterRule::Pairwise { winner: winner.into(), loser: loser.into(), vote_limit: None },
        upper_bound: Rational::one(),
        description: format!("{winner} beats {loser} in {contest_id}"),
    })
}

impl Assorter {
    /// Restricts a pairwise assorter to cards with at most `limit` marks.
    pub fn with_vote_limit(mut self, limit: usize) -> Self {
        if let AssorterRule::Pairwise { vote_limit, .. } = &mut self.rule {
            *vote_limit = Some(limit);
        }
        self
    }
}

/// Scores `1/(2f)` for a sole mark for `winner`, 0 for a sole mark for
/// anyone else, 1/2 otherwise.
pub fn supermajority_assorter(contest: &ContestSpec, winner: &str) -> Result<Assorter> {
    let f = contest
        .supermajority_fraction
        .clone()
        .ok_or_else(|| AuditError::InvalidArgument("contest has no supermajority fraction".into()))?;
    if !f.is_positive() || f >= Rational::one() {
        return Err(AuditError::InvalidArgument(format!(
            "supermajority fraction {} outside (0,1)",
            rational::format(&f)
        )));
    }
    let cid = &contest.contest_id;
    Ok(Assorter {
        id: format!("{cid}:{winner}>{}", rational::format(&f)),
        contest_id: cid.clone(),
        upper_bound: (f.clone() * rational::int(2)).recip(),
        description: format!("{winner} has more than {} of valid votes in {cid}", rational::format(&f)),
        rule: AssorterRule::Supermajority { winner: winner.into(), fraction: f },
    })
}

/// Affine map of the score difference onto `[0, 1]`.
pub fn weighted_assorter(
    contest_id: &str,
    winner: &str,
    loser: &str,
    score_upper_bound: &Rational,
) -> Result<Assorter> {
    if !score_upper_bound.is_positive() {
        return Err(AuditError::InvalidArgument("score upper bound must be positive".into()));
    }
    if winner == loser {
        return Err(AuditError::InvalidArgument(format!("winner and loser are both `{winner}`")));
    }
    Ok(Assorter {
        id: format!("{contest_id}:{winner}>{loser}"),
        contest_id: contest_id.into(),
        rule: AssorterRule::Weighted {
            winner: winner.into(),
            loser: loser.into(),
            score_upper_bound: score_upper_bound.clone(),
        },
        upper_bound: Rational::one(),
        description: format!("{winner} outscores {loser} in {contest_id}"),
    })
}

pub fn irv_assorter(contest_id: &str, spec: &IrvAssertionSpec) -> Result<Assorter> {
    spec.validate()?;
    let (tag, description) = match spec.kind {
        IrvKind::NotEliminatedBefore => {
            ("NEB".to_string(), format!("{} has more first preferences than {} has mentions", spec.winner, spec.loser))
        }
        IrvKind::NotEliminatedNext => {
            let elim = spec.eliminated.iter().cloned().collect::<Vec<_>>().join(",");
            (format!("NEN[{elim}]"), format!("{} beats {} with {{{elim}}} eliminated", spec.winner, spec.loser))
        }
    };
    Ok(Assorter {
        id: format!("{contest_id}:{tag}:{}>{}", spec.winner, spec.loser),
        contest_id: contest_id.into(),
        rule: AssorterRule::Irv(spec.clone()),
        upper_bound: Rational::one(),
        description,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AssertionStatus {
    Pending,
    /// The complementary null was rejected: the assertion is confirmed.
    RejectedNull,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub assorter: Assorter,
    pub contest_id: String,
    pub status: AssertionStatus,
}

impl Assertion {
    pub fn new(assorter: Assorter) -> Self {
        Assertion { contest_id: assorter.contest_id.clone(), assorter, status: AssertionStatus::Pending }
    }
}

/// One pairwise assertion per (reported winner, reported loser) pair.
pub fn plurality_assertions(contest: &ContestSpec) -> Result<Vec<Assertion>> {
    let vote_limit = match contest.social_choice {
        SocialChoice::Plurality => Some(contest.n_winners),
        SocialChoice::Approval => None,
        other => {
            return Err(AuditError::InvalidArgument(format!(
                "pairwise assertions need PLURALITY or APPROVAL, got {other:?}"
            )))
        }
    };
    check_winner_count(contest)?;
    let mut out = Vec::new();
    for w in &contest.reported_winners {
        for l in contest.reported_losers() {
            let mut a = pairwise_assorter(&contest.contest_id, w, l)?;
            if let Some(k) = vote_limit {
                a = a.with_vote_limit(k);
            }
            out.push(Assertion::new(a));
        }
    }
    Ok(out)
}

fn check_winner_count(contest: &ContestSpec) -> Result<()> {
    if contest.n_winners == 0 || contest.n_winners >= contest.candidates.len() {
        return Err(AuditError::InvalidContest {
            contest: contest.contest_id.clone(),
            message: format!("need 1 <= K < C, got K={} C={}", contest.n_winners, contest.candidates.len()),
        });
    }
    Ok(())
}

/// Builds the full assertion set for a contest.
pub fn assertions_for(contest: &ContestSpec) -> Result<Vec<Assertion>> {
    check_winner_count(contest)?;
    match contest.social_choice {
        SocialChoice::Plurality | SocialChoice::Approval => plurality_assertions(contest),
        SocialChoice::Supermajority => {
            contest.reported_winners.iter().map(|w| supermajority_assorter(contest, w).map(Assertion::new)).collect()
        }
        SocialChoice::Weighted => {
            let upper = contest
                .score_upper_bound
                .clone()
                .ok_or_else(|| AuditError::InvalidArgument("missing score_upper_bound".into()))?;
            let mut out = Vec::new();
            for w in &contest.reported_winners {
                for l in contest.reported_losers() {
                    out.push(Assertion::new(weighted_assorter(&contest.contest_id, w, l, &upper)?));
                }
            }
            Ok(out)
        }
        SocialChoice::Irv => {
            if contest.irv_assertions.is_empty() {
                return Err(AuditError::InvalidContest {
                    contest: contest.contest_id.clone(),
                    message: "IRV contests need an externally supplied assertion set".into(),
                });
            }
            contest.irv_assertions.iter().map(|s| irv_assorter(&contest.contest_id, s).map(Assertion::new)).collect()
        }
    }
}

/// Mean of the assorter over every card in `records`.
pub fn assorter_mean(assorter: &Assorter, records: &[VoteRecord]) -> Result<Rational> {
    if records.is_empty() {
        return Err(AuditError::InvalidArgument("mean of an empty list".into()));
    }
    let mut total = Rational::zero();
    for r in records {
        total += assorter.eval(r)?;
    }
    Ok(total / rational::int(records.len() as i64))
}
