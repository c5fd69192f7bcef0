//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use common::elections::{self, CONTEST};
use common::{config_json, fixture, oracles};
use num_traits::Zero;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rla_core::assorters::{assertions_for, assorter_mean, irv_assorter, Assertion, IrvAssertionSpec};
use rla_core::ballots::{SocialChoice, VoteRecord};
use rla_core::comparison::{comparison_draw, CardObservation, ComparisonContext};
use rla_core::engine::{draw_indices, hash_counter, load_state, save_state, AuditDecision};
use rla_core::nonneg_mean::{kk_pvalue, km_pvalue, FloatTest, SequentialSample, TestKind, TestState};
use rla_core::rational::{self, half, int, ratio, Rational};
use rla_core::simulate::{pairwise_population, process_means, rejection_rate};
use rla_core::stratification::{comparison_tester, max_combined_pvalue, polling_tester, AllocationGrid, StratumSpec};

const ALPHA: f64 = 0.05;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

fn bound(trials: u64) -> f64 {
    ALPHA + 3.0 * (ALPHA * (1.0 - ALPHA) / trials as f64).sqrt()
}

fn validity(test: TestKind) -> Outcome {
    let pop = pairwise_population(1000, 0.0).map_err(|e| e.to_string())?;
    let s = rejection_rate(&pop, &test, 0.5, ALPHA, 10_000, 1000, 20_240_601).map_err(|e| e.to_string())?;
    let msg = format!("false certification {:.4} <= {:.4} over {} trials", s.rate, s.bound, s.trials);
    if s.rate <= s.bound {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn martingale_means() -> Outcome {
    // 0/1 populations put the whole expectation on paths of probability
    // near 1/C(100, 50), out of reach of 10,000 replications
    let mut three_point = vec![0.3; 33];
    three_point.extend([0.5; 34]);
    three_point.extend([0.7; 33]);
    let grid: Vec<f64> = (0..100).map(|k| 0.3 + 0.4 * k as f64 / 99.0).collect();
    let populations = [("three-point", three_point), ("grid", grid)];
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for (name, pop) in &populations {
        for test in [TestKind::kk(ratio(1, 10)), TestKind::KaplanMartingale] {
            let means = process_means(pop, &test, 0.5, &[1, 50, 100], 10_000, 5).map_err(|e| e.to_string())?;
            for m in means {
                let z = (m.mean - 1.0).abs() / m.standard_error.max(1e-12);
                // a process that is constant across reps must equal 1
                let ok = if m.standard_error < 1e-12 { (m.mean - 1.0).abs() < 1e-9 } else { z <= 3.0 };
                worst = worst.max(if m.standard_error < 1e-12 { 0.0 } else { z });
                if !ok {
                    bad.push(format!("{name}/{test:?}/n={}: mean {:.4} se {:.4}", m.n, m.mean, m.standard_error));
                }
            }
        }
    }
    if bad.is_empty() {
        Ok(format!("12 checks, largest deviation {worst:.2} standard errors"))
    } else {
        Err(bad.join("; "))
    }
}

fn golden_p_values() -> Outcome {
    let one = SequentialSample::with_replacement(vec![int(1)], half()).unwrap();
    let kk = kk_pvalue(&one, &Rational::zero()).unwrap();
    let km = km_pvalue(&one).unwrap();
    if kk != half() || km != ratio(2, 3) {
        return Err(format!("KK {} KM {}", rational::format(&kk), rational::format(&km)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let len = rng.random_range(1..=20);
        let xs: Vec<Rational> = (0..len).map(|_| ratio(rng.random_range(0..=16), 16)).collect();
        let t = ratio(rng.random_range(4..=12), 16);
        let n = (case % 2 == 0).then(|| len as u64 + rng.random_range(0..40));
        let sample = match n {
            Some(n) => SequentialSample::new(xs.clone(), n, t.clone()),
            None => SequentialSample::with_replacement(xs.clone(), t.clone()),
        }
        .unwrap();
        let exact = rational::to_f64(&km_pvalue(&sample).unwrap());
        let floats: Vec<f64> = xs.iter().map(rational::to_f64).collect();
        let quad = oracles::p_from_process(&oracles::km_process(&floats, n, rational::to_f64(&t)));
        worst = worst.max((exact - quad).abs());
    }
    let msg = format!("KK 1/2, KM 2/3 exact; quadrature gap {worst:.1e} on 100 sequences");
    if worst <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

const RULES: [SocialChoice; 4] =
    [SocialChoice::Plurality, SocialChoice::Approval, SocialChoice::Supermajority, SocialChoice::Weighted];

/// Copies `cvrs` with a fraction `rate` of the cards re-voted at random.
/// A card keeps the contest whenever its CVR has it.
fn with_errors<R: Rng>(
    rng: &mut R,
    choice: SocialChoice,
    cands: &[String],
    cvrs: &[VoteRecord],
    rate: f64,
) -> Vec<VoteRecord> {
    let bias = vec![1.0; cands.len()];
    cvrs.iter()
        .map(|c| {
            if !rng.random_bool(rate) {
                return c.clone();
            }
            loop {
                let vote = elections::random_vote(rng, choice, cands, &bias);
                if vote.is_some() || !c.has_contest(CONTEST) {
                    return elections::record(c.id.clone(), vote);
                }
            }
        })
        .collect()
}

fn assertions_with_irv(spec: &rla_core::ballots::ContestSpec) -> Vec<Assertion> {
    if spec.social_choice != SocialChoice::Irv {
        return assertions_for(spec).unwrap();
    }
    let w = &spec.reported_winners[0];
    spec.candidates
        .iter()
        .filter(|l| *l != w)
        .map(|l| Assertion::new(irv_assorter(CONTEST, &IrvAssertionSpec::neb(w, l)).unwrap()))
        .collect()
}

fn comparison_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut checked, mut flips, mut bad) = (0, 0, 0);
    for e in 0..1000 {
        let choice = if e % 5 == 4 { SocialChoice::Irv } else { RULES[e % 4] };
        let (spec, cvrs) = elections::random_election(&mut rng, choice, 5, 500);
        let rate = rng.random_range(0.0..0.3);
        let cards = with_errors(&mut rng, choice, &spec.candidates, &cvrs, rate);
        for a in assertions_with_irv(&spec) {
            let Ok(ctx) = ComparisonContext::from_cvrs(a.assorter.clone(), &cvrs) else { continue };
            let mut total = Rational::zero();
            for (cvr, card) in cvrs.iter().zip(&cards) {
                let draw = comparison_draw(&a.assorter, cvr, CardObservation::Card(card), false).unwrap();
                total += ctx.b_value(&draw).unwrap();
            }
            let b_bar = total / int(cvrs.len() as i64);
            let a_bar = assorter_mean(&a.assorter, &cards).unwrap();
            checked += 1;
            if a_bar <= half() {
                flips += 1;
            }
            if (b_bar > half()) != (a_bar > half()) {
                bad += 1;
            }
        }
    }
    let msg = format!("{checked} assertions, {flips} false on the cards, {bad} discrepancies");
    if bad == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn sharpness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let (mut wrong, mut bad) = (0, 0);
    for e in 0..1000 {
        let (spec, cards) = elections::random_election(&mut rng, RULES[e % 4], 6, 300);
        let holds = assertions_for(&spec).unwrap().iter().all(|a| assorter_mean(&a.assorter, &cards).unwrap() > half());
        let correct = elections::reported_winners_correct(&spec, &cards);
        wrong += usize::from(!correct);
        bad += usize::from(holds != correct);
    }
    let msg = format!("1000 elections, {wrong} with a wrong reported outcome, {bad} discrepancies");
    if bad == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Runs each audit on the zombie-substituted values, as the engine would,
/// until it certifies or draws 40 cards, and compares every visited
/// position against the same draws scored with the hidden truth.
fn zombie_conservatism() -> Outcome {
    let alpha = ratio(1, 20);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut audits, mut with_zombies, mut positions, mut bad, mut after_stop) = (0, 0, 0, 0, 0);
    while audits < 1000 {
        let (spec, cvrs) = elections::random_election(&mut rng, SocialChoice::Plurality, 5, 500);
        let cards = with_errors(&mut rng, SocialChoice::Plurality, &spec.candidates, &cvrs, 0.05);
        let missing: Vec<bool> = (0..cvrs.len()).map(|_| rng.random_bool(0.02)).collect();
        let a = &assertions_for(&spec).unwrap()[0];
        let Ok(ctx) = ComparisonContext::from_cvrs(a.assorter.clone(), &cvrs) else { continue };
        audits += 1;
        let mut order: Vec<usize> = (0..cvrs.len()).collect();
        order.shuffle(&mut rng);
        order.truncate(40);
        let kind = if audits % 2 == 0 { TestKind::KaplanMartingale } else { TestKind::kk(ratio(1, 10)) };
        let n = cvrs.len() as u64;
        let mut zombie = TestState::new(kind.clone(), Some(n), half()).unwrap();
        let mut truth = TestState::new(kind, Some(n), half()).unwrap();
        let (mut saw, mut stopped) = (false, false);
        for &i in &order {
            let seen = if missing[i] { CardObservation::Missing } else { CardObservation::Card(&cards[i]) };
            let z = ctx.b_value(&ctx.draw_for(&cvrs[i], seen).unwrap()).unwrap();
            let t = ctx.b_value(&ctx.draw_for(&cvrs[i], CardObservation::Card(&cards[i])).unwrap()).unwrap();
            zombie.push(z).unwrap();
            truth.push(t).unwrap();
            let violated = zombie.p_value_exact().unwrap() < truth.p_value_exact().unwrap();
            if stopped {
                after_stop += usize::from(violated);
                continue;
            }
            saw |= missing[i];
            positions += 1;
            bad += usize::from(violated);
            stopped = zombie.rejects(&alpha);
        }
        with_zombies += usize::from(saw);
    }
    let msg = format!(
        "{audits} audits ({with_zombies} drew a missing card), {positions} positions, {bad} violations; \
         {after_stop} clamp reorderings past certification"
    );
    if bad == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn stratified_conservatism(trials: u64) -> Outcome {
    // polling stratum of 200 with mean 0.6; comparison stratum of 200 whose
    // cards have mean 0.4 while the CVRs claim 0.6: overall a tie
    let (n1, n2) = (200u64, 200u64);
    let total = n1 + n2;
    let polling: Vec<f64> = (0..n1).map(|i| if i < 120 { 1.0 } else { 0.0 }).collect();
    // (cvr, card) pairs: 120 cvr=1 of which 40 are really 0; 80 cvr=0
    let pairs: Vec<(f64, f64)> = (0..n2)
        .map(|i| {
            if i < 80 {
                (1.0, 1.0)
            } else if i < 120 {
                (1.0, 0.0)
            } else {
                (0.0, 0.0)
            }
        })
        .collect();
    let reported = pairs.iter().map(|p| p.0).sum::<f64>() / n2 as f64;
    let truth = (polling.iter().sum::<f64>() + pairs.iter().map(|p| p.1).sum::<f64>()) / total as f64;
    assert!(truth <= 0.5);
    let grid = AllocationGrid::new(2, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let (mut p_sample, mut c_sample) = (polling.clone(), pairs.clone());
    let mut certified = 0u64;
    for _ in 0..trials {
        p_sample.shuffle(&mut rng);
        c_sample.shuffle(&mut rng);
        for n in [25usize, 50, 75, 100] {
            let taus: Vec<f64> = c_sample[..n].iter().map(|(cvr, card)| 1.0 - (cvr - card)).collect();
            let strata = vec![
                StratumSpec {
                    stratum_id: "polling".into(),
                    size: n1,
                    tester: polling_tester(p_sample[..n].to_vec(), n1, total, TestKind::KaplanMartingale, 1.0),
                },
                StratumSpec {
                    stratum_id: "comparison".into(),
                    size: n2,
                    tester: comparison_tester(taus, n2, total, TestKind::KaplanMartingale, reported, 1.0),
                },
            ];
            if max_combined_pvalue(&strata, &grid).unwrap().p_value <= ALPHA {
                certified += 1;
                break;
            }
        }
    }
    let rate = certified as f64 / trials as f64;
    let msg = format!("certification {rate:.4} <= {:.4} over {trials} trials at G=100", bound(trials));
    if rate <= bound(trials) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn no_multiplicity(trials: u64) -> Outcome {
    // A reported over B and C; A > C holds by a wide margin, A > B is a tie
    let n = 1000usize;
    let cards: Vec<(f64, f64)> = (0..n)
        .map(|i| match i % 10 {
            0..=3 => (1.0, 1.0), // A
            4..=7 => (0.0, 0.5), // B
            _ => (0.5, 0.0),     // C
        })
        .collect();
    let mean_ab = cards.iter().map(|c| c.0).sum::<f64>() / n as f64;
    assert!(mean_ab <= 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut pop = cards.clone();
    let threshold = -ALPHA.ln();
    let mut certified = 0;
    for _ in 0..trials {
        let (sample, _) = pop.partial_shuffle(&mut rng, 300);
        let mut ab = FloatTest::new(&TestKind::KaplanMartingale, Some(n as u64), 0.5);
        let mut ac = FloatTest::new(&TestKind::KaplanMartingale, Some(n as u64), 0.5);
        let (mut rab, mut rac) = (false, false);
        for (x, y) in sample.iter() {
            rab |= ab.push(*x) >= threshold;
            rac |= ac.push(*y) >= threshold;
            if rab && rac {
                certified += 1;
                break;
            }
        }
    }
    let rate = certified as f64 / trials as f64;
    let msg = format!("certification {rate:.4} <= {:.4} over {trials} audits", bound(trials));
    if rate <= bound(trials) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn determinism() -> Outcome {
    let reported: Vec<Option<&str>> = (0..300).map(|i| Some(if i % 20 < 12 { "Alice" } else { "Bob" })).collect();
    let actual: Vec<Option<Option<&str>>> = reported
        .iter()
        .enumerate()
        .map(|(i, r)| match i % 53 {
            0 => None,
            1 => Some(Some("Bob")),
            _ => Some(*r),
        })
        .collect();
    let f = fixture(&config_json("COMPARISON", 305, r#"{"kind": "KM"}"#, ""), &reported, &actual, |_| true);
    let run = || {
        let mut state = f.init();
        for size in [20, 30] {
            state.draw_round(Some(size)).unwrap();
            state = state.execute_round(f.interpret(&state)).unwrap();
        }
        state
    };
    let first = run();
    let second = run();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("audit.json");
    save_state(&first, &path).map_err(|e| e.to_string())?;
    let replayed = load_state(&path).and_then(|s| s.replay()).map_err(|e| e.to_string())?;
    let json = |s: &rla_core::engine::AuditState| serde_json::to_string(s).unwrap();
    let traces = |s: &rla_core::engine::AuditState| -> String {
        s.contests[0]
            .assertions
            .iter()
            .map(|a| s.test_state("mayor", a.id()).unwrap().trace_jsonl())
            .collect::<Vec<_>>()
            .join("\n")
    };
    if json(&first) != json(&second) || json(&first) != json(&replayed) || traces(&first) != traces(&replayed) {
        return Err("replayed audit differs".into());
    }
    if first.decision != replayed.decision {
        return Err("decision differs".into());
    }

    let reference: serde_json::Value =
        serde_json::from_str(include_str!("data/prng_reference.json")).map_err(|e| e.to_string())?;
    let h = &reference["hash_counter"];
    for v in h["values"].as_array().unwrap() {
        let got =
            hash_counter(h["seed"].as_str().unwrap(), h["round_id"].as_str().unwrap(), v["counter"].as_u64().unwrap());
        if got.to_string() != v["value"].as_str().unwrap() {
            return Err(format!("hash counter {} differs", v["counter"]));
        }
    }
    let cases = reference["draws"].as_array().unwrap();
    for case in cases {
        let already: BTreeSet<u64> =
            case["already_drawn"].as_array().unwrap().iter().filter_map(|v| v.as_u64()).collect();
        let got = draw_indices(
            case["seed"].as_str().unwrap(),
            case["round_id"].as_str().unwrap(),
            case["population"].as_u64().unwrap(),
            case["count"].as_u64().unwrap(),
            case["replacement"].as_bool().unwrap(),
            &already,
        )
        .map_err(|e| e.to_string())?;
        let expected: Vec<u64> = case["indices"].as_array().unwrap().iter().filter_map(|v| v.as_u64()).collect();
        if got != expected {
            return Err(format!("draw vector differs for {}", case["round_id"]));
        }
    }
    let decision = match first.decision {
        AuditDecision::Certified => "CERTIFIED",
        AuditDecision::InProgress => "IN_PROGRESS",
        AuditDecision::FullHandCount => "FULL_HAND_COUNT",
    };
    Ok(format!("replay byte-identical ({decision}, {} rounds); {} PRNG vectors match", first.rounds.len(), cases.len()))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("polling validity, KK", Box::new(|| validity(TestKind::kk(ratio(1, 10))))),
        ("polling validity, KM", Box::new(|| validity(TestKind::KaplanMartingale))),
        ("martingale expectation", Box::new(martingale_means)),
        ("golden p-values and quadrature", Box::new(golden_p_values)),
        ("comparison equivalence", Box::new(comparison_equivalence)),
        ("sharpness", Box::new(sharpness)),
        ("zombie conservatism", Box::new(zombie_conservatism)),
        ("stratified conservatism", Box::new(|| stratified_conservatism(2000))),
        ("determinism and replay", Box::new(determinism)),
        ("no multiplicity adjustment", Box::new(|| no_multiplicity(10_000))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
