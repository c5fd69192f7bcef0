use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use super::poly::{ExactBernstein, FloatBernstein};
use super::{conditional_ratio, p_from_max, TestKind};
use crate::error::{AuditError, Result};
use crate::rational::{self, Rational};

/// Draw count up to which the process is tracked in exact arithmetic.
pub const DEFAULT_EXACT_LIMIT: usize = 2000;

/// One line of the exported per-draw trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub j: u64,
    pub x: String,
    pub z_or_y: String,
    pub p: f64,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        self.carry += if self.sum.abs() >= x.abs() { (self.sum - t) + x } else { (x - t) + self.sum };
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Floating-point form of either test, with the process kept in log space.
#[derive(Debug, Clone)]
pub struct FloatTest {
    shift: f64,
    population: Option<u64>,
    t: f64,
    draws: u64,
    sum: CompensatedSum,
    log_z: f64,
    bernstein: Option<FloatBernstein>,
    max_log: f64,
}

impl FloatTest {
    /// `null_mean` is the hypothesized mean of the unshifted data.
    pub fn new(kind: &TestKind, population: Option<u64>, null_mean: f64) -> Self {
        let shift = rational::to_f64(&kind.shift());
        FloatTest {
            shift,
            population,
            t: null_mean + shift,
            draws: 0,
            sum: CompensatedSum::default(),
            log_z: 0.0,
            bernstein: matches!(kind, TestKind::KaplanMartingale).then(FloatBernstein::default),
            max_log: f64::NEG_INFINITY,
        }
    }

    /// Consumes one draw and returns the log of the updated process.
    pub fn push(&mut self, x: f64) -> f64 {
        let x = x + self.shift;
        self.draws += 1;
        let ratio = match self.population {
            Some(n) => {
                let room = n as f64 * self.t - self.sum.value();
                (room > 0.0).then(|| x * (n - self.draws + 1) as f64 / room)
            }
            None => Some(x / self.t),
        };
        self.sum.add(x);
        let log = match &mut self.bernstein {
            Some(b) => {
                b.push(ratio.unwrap_or(1.0));
                b.log_integral()
            }
            None => {
                if let Some(r) = ratio {
                    self.log_z += r.ln();
                }
                self.log_z
            }
        };
        if log > self.max_log {
            self.max_log = log;
        }
        log
    }

    pub fn p_value(&self) -> f64 {
        (-self.max_log).exp().min(1.0)
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

#[derive(Debug, Clone)]
enum ExactProcess {
    Product(Rational),
    Integral(ExactBernstein),
}

#[derive(Debug, Clone)]
struct ExactTest {
    process: ExactProcess,
    sum: Rational,
    current: Rational,
    max: Rational,
}

/// Incremental state of one assertion's sequential test.
///
/// Exact rationals are used for the first `exact_limit` draws; a float
/// shadow runs alongside from the first draw and takes over afterwards.
#[derive(Debug, Clone)]
pub struct TestState {
    kind: TestKind,
    population: Option<u64>,
    t: Rational,
    exact: Option<ExactTest>,
    float: FloatTest,
    exact_limit: usize,
    values: Vec<Rational>,
    trace: Vec<TraceEntry>,
    clamped_from: Option<u64>,
}

impl TestState {
    pub fn new(kind: TestKind, population: Option<u64>, null_mean: Rational) -> Result<Self> {
        if kind.shift().is_negative() || null_mean.is_negative() {
            return Err(AuditError::InvalidArgument("shift and null mean must be nonnegative".into()));
        }
        let t = kind.formula_mean(&null_mean);
        if !t.is_positive() {
            return Err(AuditError::InvalidArgument("null mean plus shift must be positive".into()));
        }
        let process = match kind {
            TestKind::KaplanKolmogorov { .. } => ExactProcess::Product(Rational::one()),
            TestKind::KaplanMartingale => ExactProcess::Integral(ExactBernstein::default()),
        };
        Ok(TestState {
            float: FloatTest::new(&kind, population, rational::to_f64(&null_mean)),
            kind,
            population,
            t,
            exact: Some(ExactTest { process, sum: Rational::zero(), current: Rational::one(), max: Rational::zero() }),
            exact_limit: DEFAULT_EXACT_LIMIT,
            values: Vec::new(),
            trace: Vec::new(),
            clamped_from: None,
        })
    }

    pub fn with_exact_limit(mut self, limit: usize) -> Self {
        self.exact_limit = limit;
        if self.values.len() > limit {
            self.exact = None;
        }
        self
    }

    pub fn push(&mut self, x: Rational) -> Result<()> {
        if x.is_negative() {
            return Err(AuditError::NegativeValue(rational::format(&x)));
        }
        if let Some(n) = self.population {
            if self.values.len() as u64 >= n {
                return Err(AuditError::SampleTooLarge { drawn: self.values.len() + 1, population: n });
            }
        }
        let j = self.values.len() as u64 + 1;
        let log = self.float.push(rational::to_f64(&x));
        if self.exact.is_some() && self.values.len() >= self.exact_limit {
            self.exact = None;
        }
        let shift = self.kind.shift();
        let mut z_or_y = None;
        if let Some(exact) = &mut self.exact {
            let shifted = &x + &shift;
            let ratio = conditional_ratio(&shifted, j, &exact.sum, self.population, &self.t);
            if ratio.is_none() && self.clamped_from.is_none() {
                self.clamped_from = Some(j);
            }
            exact.current = match &mut exact.process {
                ExactProcess::Product(z) => {
                    if let Some(r) = ratio {
                        *z *= r;
                    }
                    z.clone()
                }
                ExactProcess::Integral(poly) => {
                    poly.push(&ratio.unwrap_or_else(Rational::one));
                    poly.integral()
                }
            };
            exact.sum += shifted;
            if exact.current > exact.max {
                exact.max = exact.current.clone();
            }
            z_or_y = Some(rational::format(&exact.current));
        }
        self.values.push(x);
        let entry = TraceEntry {
            j,
            x: rational::format(self.values.last().expect("just pushed")),
            z_or_y: z_or_y.unwrap_or_else(|| format!("{}", log.exp())),
            p: self.p_value(),
        };
        self.trace.push(entry);
        Ok(())
    }

    pub fn p_value_exact(&self) -> Option<Rational> {
        self.exact.as_ref().map(|e| p_from_max(&e.max))
    }

    pub fn p_value(&self) -> f64 {
        match self.p_value_exact() {
            Some(p) => rational::to_f64(&p),
            None => self.float.p_value(),
        }
    }

    /// Float p-value from the shadow computation, regardless of mode.
    pub fn p_value_float(&self) -> f64 {
        self.float.p_value()
    }

    pub fn rejects(&self, alpha: &Rational) -> bool {
        match self.p_value_exact() {
            Some(p) => p <= *alpha,
            None => self.float.p_value() <= rational::to_f64(alpha),
        }
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn draws(&self) -> u64 {
        self.values.len() as u64
    }

    pub fn values(&self) -> &[Rational] {
        &self.values
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// Draw at which the running total first reached `N t`, if it has.
    pub fn clamped_from(&self) -> Option<u64> {
        self.clamped_from
    }

    pub fn kind(&self) -> &TestKind {
        &self.kind
    }

    /// Trace as JSON lines.
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|e| serde_json::to_string(e).expect("trace entries serialize"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
