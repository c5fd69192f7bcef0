//! Random small elections and brute-force tabulation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rla_core::ballots::{ContestSpec, ContestVote, SocialChoice, VoteRecord};
use rla_core::rational::{int, ratio, Rational};

pub const CONTEST: &str = "c";

pub fn candidates(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("K{i}")).collect()
}

pub fn spec(choice: SocialChoice, cands: &[String], winners: &[String]) -> ContestSpec {
    ContestSpec {
        contest_id: CONTEST.into(),
        social_choice: choice,
        candidates: cands.to_vec(),
        n_winners: winners.len(),
        reported_winners: winners.to_vec(),
        supermajority_fraction: None,
        score_upper_bound: None,
        upper_bound_cards: 1_000_000,
        redacted_in_tally: false,
        irv_assertions: Vec::new(),
    }
}

/// A card for `choice`: marks for plurality-like rules, Borda scores for
/// weighted contests. Some cards skip the contest or over/undervote.
pub fn random_vote<R: Rng>(rng: &mut R, choice: SocialChoice, cands: &[String], bias: &[f64]) -> Option<ContestVote> {
    if rng.random_bool(0.05) {
        return None;
    }
    let pick = |rng: &mut R| -> String {
        let total: f64 = bias.iter().sum();
        let mut x = rng.random_range(0.0..total);
        for (c, b) in cands.iter().zip(bias) {
            if x < *b {
                return c.clone();
            }
            x -= b;
        }
        cands.last().unwrap().clone()
    };
    Some(match choice {
        SocialChoice::Plurality | SocialChoice::Supermajority => {
            let marks: BTreeSet<String> = match rng.random_range(0..20) {
                0 => BTreeSet::new(),
                1 => (0..2).map(|_| pick(rng)).collect(),
                _ => BTreeSet::from([pick(rng)]),
            };
            ContestVote::Marks(marks)
        }
        SocialChoice::Approval => {
            let mut marks = BTreeSet::new();
            for _ in 0..rng.random_range(0..=cands.len()) {
                marks.insert(pick(rng));
            }
            ContestVote::Marks(marks)
        }
        SocialChoice::Weighted => {
            // Borda over a ranked prefix led by a biased pick
            let first = pick(rng);
            let mut rest: Vec<&String> = cands.iter().filter(|c| **c != first).collect();
            rest.shuffle(rng);
            let depth = rng.random_range(0..=rest.len());
            let top = cands.len() as i64 - 1;
            let mut scores = BTreeMap::from([(first, int(top))]);
            for (k, c) in rest.into_iter().take(depth).enumerate() {
                scores.insert(c.clone(), int(top - 1 - k as i64));
            }
            ContestVote::Scores(scores)
        }
        SocialChoice::Irv => {
            let mut order: Vec<&String> = cands.iter().collect();
            order.shuffle(rng);
            let first = pick(rng);
            order.retain(|c| **c != first);
            let depth = rng.random_range(0..=order.len());
            let mut ranks = BTreeMap::from([(first, 1u32)]);
            for (k, c) in order.into_iter().take(depth).enumerate() {
                ranks.insert(c.clone(), k as u32 + 2);
            }
            ContestVote::Ranks(ranks)
        }
    })
}

pub fn record(id: String, vote: Option<ContestVote>) -> VoteRecord {
    let mut r = VoteRecord::new(id);
    if let Some(v) = vote {
        r.contests.insert(CONTEST.into(), v);
    }
    r
}

pub fn random_cards<R: Rng>(rng: &mut R, choice: SocialChoice, cands: &[String], n: usize) -> Vec<VoteRecord> {
    let bias: Vec<f64> = cands.iter().map(|_| rng.random_range(0.2..1.0)).collect();
    (0..n).map(|i| record(format!("r{i}"), random_vote(rng, choice, cands, &bias))).collect()
}

/// Per-candidate totals under the contest's own counting rule.
pub fn tally(spec: &ContestSpec, cards: &[VoteRecord]) -> BTreeMap<String, Rational> {
    let mut t: BTreeMap<String, Rational> = spec.candidates.iter().map(|c| (c.clone(), int(0))).collect();
    for r in cards {
        match r.contest(CONTEST) {
            Some(ContestVote::Marks(m)) => {
                let valid = match spec.social_choice {
                    SocialChoice::Plurality => m.len() <= spec.n_winners,
                    SocialChoice::Supermajority => m.len() == 1,
                    _ => true,
                };
                if valid {
                    for c in m {
                        *t.get_mut(c).unwrap() += int(1);
                    }
                }
            }
            Some(ContestVote::Scores(s)) => {
                for (c, v) in s {
                    *t.get_mut(c).unwrap() += v;
                }
            }
            _ => {}
        }
    }
    t
}

/// Whether the reported winners are the true winners, by direct count.
pub fn reported_winners_correct(spec: &ContestSpec, cards: &[VoteRecord]) -> bool {
    let t = tally(spec, cards);
    if spec.social_choice == SocialChoice::Supermajority {
        let valid: Rational = t.values().sum();
        let f = spec.supermajority_fraction.clone().unwrap();
        let w = &spec.reported_winners[0];
        return valid > int(0) && t[w].clone() / valid > f;
    }
    let losers: Vec<&String> = spec.reported_losers().collect();
    spec.reported_winners.iter().all(|w| losers.iter().all(|l| t[w] > t[*l]))
}

/// True winners by tally when strictly separated, else a random set.
pub fn pick_reported<R: Rng>(rng: &mut R, spec: &ContestSpec, cards: &[VoteRecord], k: usize) -> Vec<String> {
    if rng.random_bool(0.5) {
        let t = tally(spec, cards);
        let mut order: Vec<&String> = spec.candidates.iter().collect();
        order.sort_by(|a, b| t[*b].cmp(&t[*a]));
        order.into_iter().take(k).cloned().collect()
    } else {
        let mut c = spec.candidates.clone();
        c.shuffle(rng);
        c.truncate(k);
        c
    }
}

/// Builds a random contest of the given rule with cards and a reported
/// outcome that is right about half the time.
pub fn random_election<R: Rng>(
    rng: &mut R,
    choice: SocialChoice,
    max_cands: usize,
    max_cards: usize,
) -> (ContestSpec, Vec<VoteRecord>) {
    let c = rng.random_range(2..=max_cands);
    let cands = candidates(c);
    let k = match choice {
        SocialChoice::Supermajority | SocialChoice::Irv => 1,
        _ => rng.random_range(1..c),
    };
    let n = rng.random_range(1..=max_cards);
    let mut s = spec(choice, &cands, &cands[..k]);
    match choice {
        SocialChoice::Supermajority => {
            s.supermajority_fraction = Some([ratio(1, 2), ratio(3, 5), ratio(2, 3)].choose(rng).unwrap().clone());
        }
        SocialChoice::Weighted => s.score_upper_bound = Some(int(c as i64 - 1)),
        _ => {}
    }
    let cards = random_cards(rng, choice, &cands, n);
    s.reported_winners = pick_reported(rng, &s, &cards, k);
    (s, cards)
}
