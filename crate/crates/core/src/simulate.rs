//! Monte-Carlo harness for checking the sequential tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::nonneg_mean::{FloatTest, TestKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub trials: u64,
    pub rejections: u64,
    pub rate: f64,
    /// `alpha + 3 sqrt(alpha (1 - alpha) / trials)`.
    pub bound: f64,
    /// Mean number of draws per trial.
    pub mean_draws: f64,
}

impl RejectionSummary {
    fn new(trials: u64, rejections: u64, total_draws: u64, alpha: f64) -> Self {
        RejectionSummary {
            trials,
            rejections,
            rate: rejections as f64 / trials as f64,
            bound: alpha + 3.0 * (alpha * (1.0 - alpha) / trials as f64).sqrt(),
            mean_draws: total_draws as f64 / trials as f64,
        }
    }
}

/// Binary-ish population of `n` assorter values with exact mean
/// `(1 + margin) / 2`: ones, zeros and at most one-tenth halves.
pub fn pairwise_population(n: usize, margin: f64) -> Result<Vec<f64>> {
    if !(-1.0..=1.0).contains(&margin) {
        return Err(AuditError::InvalidArgument("margin must lie in [-1, 1]".into()));
    }
    let halves = n / 10;
    let decided = n - halves;
    // ones - zeros = margin * n over the decided cards
    let lead = (margin * n as f64).round() as i64;
    let ones = (decided as i64 + lead) / 2;
    if ones < 0 || ones as usize > decided {
        return Err(AuditError::InvalidArgument("margin too wide for the population".into()));
    }
    let ones = ones as usize;
    let mut pop = vec![1.0; ones];
    pop.extend(std::iter::repeat_n(0.0, decided - ones));
    pop.extend(std::iter::repeat_n(0.5, halves));
    Ok(pop)
}

/// Runs `trials` audits of "mean <= null_mean" by sampling `population`
/// without replacement, stopping at `p <= alpha` or after `max_draws`.
pub fn rejection_rate(
    population: &[f64],
    test: &TestKind,
    null_mean: f64,
    alpha: f64,
    trials: u64,
    max_draws: usize,
    seed: u64,
) -> Result<RejectionSummary> {
    if population.is_empty() || trials == 0 {
        return Err(AuditError::InvalidArgument("need a population and at least one trial".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop = population.to_vec();
    let n = pop.len() as u64;
    let draws = max_draws.min(pop.len());
    let log_threshold = -alpha.ln();
    let (mut rejections, mut total) = (0u64, 0u64);
    for _ in 0..trials {
        let (sample, _) = pop.partial_shuffle(&mut rng, draws);
        let mut t = FloatTest::new(test, Some(n), null_mean);
        for x in sample.iter() {
            total += 1;
            if t.push(*x) >= log_threshold {
                rejections += 1;
                break;
            }
        }
    }
    Ok(RejectionSummary::new(trials, rejections, total, alpha))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleMean {
    pub n: usize,
    pub mean: f64,
    pub standard_error: f64,
}

/// Monte-Carlo mean of the test process after each of `checkpoints`
/// draws, sampling `population` without replacement.
pub fn process_means(
    population: &[f64],
    test: &TestKind,
    null_mean: f64,
    checkpoints: &[usize],
    reps: u64,
    seed: u64,
) -> Result<Vec<MartingaleMean>> {
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    if last > population.len() || checkpoints.contains(&0) || reps < 2 {
        return Err(AuditError::InvalidArgument("checkpoints must lie in 1..=N and reps >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop = population.to_vec();
    let n = pop.len() as u64;
    let mut sums = vec![0.0; checkpoints.len()];
    let mut squares = vec![0.0; checkpoints.len()];
    for _ in 0..reps {
        let (sample, _) = pop.partial_shuffle(&mut rng, last);
        let mut t = FloatTest::new(test, Some(n), null_mean);
        for (j, x) in sample.iter().enumerate() {
            let value = t.push(*x).exp();
            for (k, &c) in checkpoints.iter().enumerate() {
                if c == j + 1 {
                    sums[k] += value;
                    squares[k] += value * value;
                }
            }
        }
    }
    let r = reps as f64;
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let mean = sums[k] / r;
            let var = ((squares[k] / r - mean * mean) * r / (r - 1.0)).max(0.0);
            MartingaleMean { n: c, mean, standard_error: (var / r).sqrt() }
        })
        .collect())
}

/// Random population of `n` values in `[0, upper]` with mean exactly
/// `target`: uniform draws rescaled, then the residual spread evenly.
pub fn random_population<R: Rng>(rng: &mut R, n: usize, target: f64, upper: f64) -> Vec<f64> {
    let mut values: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { upper } else { 0.0 }).collect();
    let mut residual = target * n as f64 - values.iter().sum::<f64>();
    for v in values.iter_mut() {
        if residual.abs() < 1e-12 {
            break;
        }
        let room = if residual > 0.0 { upper - *v } else { -*v };
        let step = if residual > 0.0 { room.min(residual) } else { room.max(residual) };
        *v += step;
        residual -= step;
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_population_has_mean_one_half() {
        let p = pairwise_population(1000, 0.0).unwrap();
        assert_eq!(p.len(), 1000);
        assert_eq!(p.iter().sum::<f64>(), 500.0);
        let p = pairwise_population(1000, 0.1).unwrap();
        assert_eq!(p.iter().sum::<f64>(), 550.0);
    }

    #[test]
    fn wide_margin_is_usually_confirmed() {
        let p = pairwise_population(1000, 0.4).unwrap();
        let s = rejection_rate(&p, &TestKind::KaplanMartingale, 0.5, 0.05, 50, 1000, 7).unwrap();
        assert!(s.rate > 0.9);
    }

    #[test]
    fn random_population_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_population(&mut rng, 200, 0.3, 1.0);
        assert!((p.iter().sum::<f64>() / 200.0 - 0.3).abs() < 1e-12);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
