#![allow(dead_code)]

pub mod elections;
pub mod oracles;

use std::collections::HashMap;

use rla_core::ballots::{CardManifest, ManifestEntry, ResolvedDraw, VoteRecord};
use rla_core::engine::{AuditConfig, AuditState, Interpretation};

/// A plurality election where card `i` sits at location `L{i}` and, when
/// it has one, CVR `C{i}` records `reported[i]`. The board sees `actual[i]`.
pub struct Fixture {
    pub config: AuditConfig,
    pub cvrs: Vec<VoteRecord>,
    pub manifest: CardManifest,
    pub cards: HashMap<String, Option<VoteRecord>>,
}

pub const CONTEST: &str = "mayor";

pub fn config_json(method: &str, upper_bound: usize, test: &str, extra: &str) -> String {
    format!(
        r#"{{
        "risk_limit": "1/20",
        "seed": "93125490127453856731",
        "test": {test},
        "contests": [{{
            "contest_id": "{CONTEST}", "social_choice": "PLURALITY",
            "candidates": ["Alice", "Bob", "Carol"], "n_winners": 1,
            "reported_winners": ["Alice"], "upper_bound_cards": {upper_bound},
            "method": "{method}"{extra}
        }}]
    }}"#
    )
}

pub fn vote(id: &str, choice: Option<&str>) -> VoteRecord {
    let r = VoteRecord::new(id);
    match choice {
        Some(c) => r.with_marks(CONTEST, [c]),
        None => r.with_marks(CONTEST, Vec::<String>::new()),
    }
}

/// `reported` and `actual` hold one entry per physical card; `with_cvr`
/// says which cards have a CVR; `None` in `actual` is a lost card.
pub fn fixture(
    config: &str,
    reported: &[Option<&str>],
    actual: &[Option<Option<&str>>],
    with_cvr: impl Fn(usize) -> bool,
) -> Fixture {
    let config = AuditConfig::from_json(config).expect("config parses");
    let mut cvrs = Vec::new();
    let mut entries = Vec::new();
    let mut cards = HashMap::new();
    for (i, (rep, act)) in reported.iter().zip(actual).enumerate() {
        let location = format!("L{i}");
        let cvr_id = format!("C{i}");
        if with_cvr(i) {
            cvrs.push(vote(&cvr_id, *rep));
            entries.push(ManifestEntry::card(location.clone(), Some(&cvr_id)));
        } else {
            entries.push(ManifestEntry::card(location.clone(), None));
        }
        cards.insert(location.clone(), act.map(|c| vote(&location, c)));
    }
    Fixture { config, cvrs, manifest: CardManifest::new(entries).unwrap(), cards }
}

pub fn jsonl(records: &[VoteRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).unwrap()).collect::<Vec<_>>().join("\n")
}

impl Fixture {
    pub fn init(&self) -> AuditState {
        AuditState::init(self.config.clone(), jsonl(&self.cvrs).as_bytes(), self.manifest.clone()).expect("init")
    }

    /// What an honest board records for every card of the open round.
    pub fn interpret(&self, state: &AuditState) -> Vec<Interpretation> {
        state
            .pending_draws()
            .into_iter()
            .map(|d| Interpretation {
                contest_id: d.contest_id.clone(),
                stratum_id: Some(d.stratum_id.clone()),
                index: d.index,
                record: match &d.resolved {
                    ResolvedDraw::PhantomPair => None,
                    ResolvedDraw::RealCard { location_id } | ResolvedDraw::RealCardWithCvr { location_id, .. } => {
                        self.cards[location_id].clone()
                    }
                },
            })
            .collect()
    }

    /// Runs rounds of the suggested (or given) size until the audit ends.
    pub fn run(&self, size: Option<u64>, max_rounds: usize) -> AuditState {
        let mut state = self.init();
        for _ in 0..max_rounds {
            if state.decision != rla_core::engine::AuditDecision::InProgress {
                break;
            }
            state.draw_round(size).expect("draw");
            let interp = self.interpret(&state);
            state = state.execute_round(interp).expect("round");
        }
        state
    }
}
