//! Stratified audits: independent per-stratum tests combined with
//! Fisher's function, maximised over every allocation `(beta_s)` with
//! `sum beta_s <= 1/2` on a grid.
//!
//! Stratum `s` holding `N_s` of the `N` cards is asked for a p-value for
//! "stratum mean <= (N / N_s) * beta_s".

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::nonneg_mean::{FloatTest, TestKind};
use crate::rational::{self, Rational};

/// Upper tail of the chi-square distribution with `2S` degrees of freedom
/// at `-2 sum ln p_s`.
pub fn fisher_combine(p_values: &[f64]) -> Result<f64> {
    if p_values.is_empty() {
        return Err(AuditError::InvalidArgument("need at least one p-value".into()));
    }
    if let Some(p) = p_values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(AuditError::InvalidArgument(format!("p-value {p} outside (0, 1]")));
    }
    let half_stat: f64 = -p_values.iter().map(|p| p.ln()).sum::<f64>();
    // survival of chi2_{2S} at 2h is e^{-h} sum_{k<S} h^k / k!
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..p_values.len() {
        term *= half_stat / k as f64;
        sum += term;
    }
    Ok(((-half_stat).exp() * sum).min(1.0))
}

/// Allocations `beta_s = g_s / (2G)` with nonnegative integers `g_s`
/// summing to at most `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationGrid {
    pub resolution: usize,
    pub strata: usize,
}

impl AllocationGrid {
    pub fn new(strata: usize, resolution: usize) -> Result<Self> {
        if strata == 0 || resolution == 0 {
            return Err(AuditError::InvalidArgument("grid needs at least one stratum and step".into()));
        }
        Ok(AllocationGrid { resolution, strata })
    }

    /// G = 100 for two strata and 25 for three; more strata need an
    /// explicit resolution.
    pub fn default_for(strata: usize) -> Result<Self> {
        match strata {
            1 | 2 => Self::new(strata, 100),
            3 => Self::new(strata, 25),
            _ => Err(AuditError::InvalidArgument(format!("{strata} strata need an explicit grid resolution"))),
        }
    }

    pub fn beta(&self, level: usize) -> Rational {
        Rational::new(BigInt::from(level), BigInt::from(2 * self.resolution))
    }

    /// Grid points in lexicographic order of their level vectors.
    pub fn points(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut current = Vec::with_capacity(self.strata);
        fn rec(strata: usize, budget: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if current.len() == strata {
                out.push(current.clone());
                return;
            }
            for g in 0..=budget {
                current.push(g);
                rec(strata, budget - g, current, out);
                current.pop();
            }
        }
        rec(self.strata, self.resolution, &mut current, &mut out);
        out
    }
}

pub type Tester = Box<dyn Fn(&Rational) -> Result<f64> + Send + Sync>;

/// One stratum: its size and a p-value function of the allocation
/// `beta_s` it is charged with.
pub struct StratumSpec {
    pub stratum_id: String,
    pub size: u64,
    pub tester: Tester,
}

impl std::fmt::Debug for StratumSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StratumSpec").field("stratum_id", &self.stratum_id).field("size", &self.size).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedPValue {
    pub p_value: f64,
    #[serde(with = "rational::vec_as_str")]
    pub allocation: Vec<Rational>,
    pub resolution: usize,
}

/// Largest Fisher-combined p-value over the grid and the allocation that
/// attains it (ties go to the lexicographically smallest allocation).
pub fn max_combined_pvalue(strata: &[StratumSpec], grid: &AllocationGrid) -> Result<CombinedPValue> {
    if strata.len() != grid.strata {
        return Err(AuditError::InvalidArgument(format!(
            "grid built for {} strata, got {}",
            grid.strata,
            strata.len()
        )));
    }
    // each tester only ever sees G + 1 distinct allocations
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(strata.len());
    for s in strata {
        let row = (0..=grid.resolution).map(|g| (s.tester)(&grid.beta(g))).collect::<Result<Vec<f64>>>()?;
        table.push(row);
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for point in grid.points() {
        let ps: Vec<f64> = point.iter().enumerate().map(|(s, &g)| table[s][g]).collect();
        // a stratum that rules out its share outright rules out the allocation
        let p = if ps.iter().any(|p| *p <= 0.0) { 0.0 } else { fisher_combine(&ps)? };
        if best.as_ref().is_none_or(|(b, _)| p > *b) {
            best = Some((p, point));
        }
    }
    let (p_value, levels) = best.expect("grid is nonempty");
    Ok(CombinedPValue {
        p_value,
        allocation: levels.into_iter().map(|g| grid.beta(g)).collect(),
        resolution: grid.resolution,
    })
}

/// Float p-value for "mean of the population the values were drawn from
/// is at most `null_mean`", with the degenerate nulls resolved directly.
pub fn mean_test_pvalue(
    values: &[f64],
    population: u64,
    test: &TestKind,
    null_mean: f64,
    value_upper_bound: f64,
) -> f64 {
    if null_mean >= value_upper_bound {
        return 1.0;
    }
    if null_mean < 0.0 {
        return 0.0;
    }
    if null_mean == 0.0 && rational::to_f64(&test.shift()) == 0.0 {
        return if values.iter().any(|v| *v > 0.0) { 0.0 } else { 1.0 };
    }
    let mut t = FloatTest::new(test, Some(population), null_mean);
    for v in values {
        t.push(*v);
    }
    t.p_value()
}

/// Tester for a ballot-polling stratum holding the sampled assorter values.
pub fn polling_tester(values: Vec<f64>, stratum_size: u64, total: u64, test: TestKind, upper_bound: f64) -> Tester {
    Box::new(move |beta: &Rational| {
        let null = rational::to_f64(beta) * total as f64 / stratum_size as f64;
        Ok(mean_test_pvalue(&values, stratum_size, &test, null, upper_bound))
    })
}

/// Tester for a comparison stratum holding sampled `tau = 1 - omega/u`
/// values; `reported_mean` is the stratum's CVR assorter mean.
///
/// "card mean <= m" is "mean overstatement >= reported - m", which is
/// "mean tau <= 1 - (reported - m)/u".
pub fn comparison_tester(
    taus: Vec<f64>,
    stratum_size: u64,
    total: u64,
    test: TestKind,
    reported_mean: f64,
    upper_bound: f64,
) -> Tester {
    Box::new(move |beta: &Rational| {
        let card_null = rational::to_f64(beta) * total as f64 / stratum_size as f64;
        let tau_null = 1.0 - (reported_mean - card_null) / upper_bound;
        Ok(mean_test_pvalue(&taus, stratum_size, &test, tau_null, 2.0))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StratumMethod {
    Polling,
    Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumConfig {
    pub stratum_id: String,
    pub size: u64,
    pub method: StratumMethod,
    pub test: TestKind,
}

/// Stratified audit configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedConfig {
    pub strata: Vec<StratumConfig>,
    #[serde(default)]
    pub grid_resolution: Option<usize>,
    /// Samples are drawn independently across strata.
    #[serde(default = "default_true")]
    pub independent_sampling: bool,
}

fn default_true() -> bool {
    true
}

impl StratifiedConfig {
    pub fn grid(&self) -> Result<AllocationGrid> {
        if !self.independent_sampling {
            return Err(AuditError::InvalidArgument(
                "Fisher combination requires independent samples across strata".into(),
            ));
        }
        match self.grid_resolution {
            Some(g) => AllocationGrid::new(self.strata.len(), g),
            None => AllocationGrid::default_for(self.strata.len()),
        }
    }

    pub fn total(&self) -> u64 {
        self.strata.iter().map(|s| s.size).sum()
    }
}

/// True when the stratum sizes sum to the contest's card count.
pub fn sizes_consistent(strata: &[StratumSpec], total: u64) -> bool {
    strata.iter().map(|s| s.size).sum::<u64>() == total
}
