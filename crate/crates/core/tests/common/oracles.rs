//! Reference computations written independently of the library code.

use std::collections::{BTreeMap, BTreeSet};

/// KK process values `Z_1..Z_n` by the textbook product, in f64.
pub fn kk_process(xs: &[f64], n: Option<u64>, t: f64, shift: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut z = 1.0;
    let mut sum = 0.0;
    for (k, x) in xs.iter().enumerate() {
        let x = x + shift;
        let factor = match n {
            Some(n) => {
                let big_n = n as f64;
                // the remaining room is zero up to rounding
                if big_n * t - sum <= 1e-9 * big_n {
                    1.0
                } else {
                    x * (1.0 - k as f64 / big_n) / (t - sum / big_n)
                }
            }
            None => x / t,
        };
        z *= factor;
        sum += x;
        out.push(z);
    }
    out
}

pub fn p_from_process(process: &[f64]) -> f64 {
    let max = process.iter().cloned().fold(0.0, f64::max);
    if max <= 1.0 {
        1.0
    } else {
        1.0 / max
    }
}

/// Slopes `a_j` of the KM factors `1 + a_j g`.
pub fn km_slopes(xs: &[f64], n: Option<u64>, t: f64) -> Vec<f64> {
    let mut sum = 0.0;
    let mut out = Vec::new();
    for (k, x) in xs.iter().enumerate() {
        let a = match n {
            Some(n) => {
                let big_n = n as f64;
                let room = big_n * t - sum;
                if room <= 1e-9 * big_n {
                    0.0
                } else {
                    x * (big_n - k as f64) / room - 1.0
                }
            }
            None => x / t - 1.0,
        };
        sum += x;
        out.push(a);
    }
    out
}

/// `int_0^1 prod (1 + a_j g) dg` by composite Gauss-Legendre quadrature.
pub fn km_integral(slopes: &[f64], panels: usize) -> f64 {
    // 5-point rule on each panel
    let nodes = [
        (0.0, 0.568_888_888_888_888_9),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let h = 1.0 / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (x, w) in nodes {
            let g = mid + x * h / 2.0;
            let f: f64 = slopes.iter().map(|a| 1.0 + a * g).product();
            total += w * f * h / 2.0;
        }
    }
    total
}

pub fn km_process(xs: &[f64], n: Option<u64>, t: f64) -> Vec<f64> {
    let slopes = km_slopes(xs, n, t);
    (1..=slopes.len()).map(|j| km_integral(&slopes[..j], 64)).collect()
}

/// Plurality pairwise assorter by direct case analysis.
pub fn pairwise_value(marks: &BTreeSet<String>, winner: &str, loser: &str, vote_limit: Option<usize>) -> f64 {
    if vote_limit.is_some_and(|k| marks.len() > k) {
        return 0.5;
    }
    match (marks.contains(winner), marks.contains(loser)) {
        (true, false) => 1.0,
        (false, true) => 0.0,
        _ => 0.5,
    }
}

/// Instant-runoff winner by repeated elimination; ties eliminate the
/// alphabetically first candidate with the fewest votes.
pub fn irv_winner(ballots: &[Vec<String>], candidates: &[String]) -> String {
    let mut alive: BTreeSet<String> = candidates.iter().cloned().collect();
    loop {
        let mut tally: BTreeMap<String, usize> = alive.iter().map(|c| (c.clone(), 0)).collect();
        let mut active = 0;
        for b in ballots {
            if let Some(top) = b.iter().find(|c| alive.contains(*c)) {
                *tally.get_mut(top).unwrap() += 1;
                active += 1;
            }
        }
        if let Some((c, _)) = tally.iter().find(|(_, v)| 2 * **v > active) {
            return c.clone();
        }
        if alive.len() == 1 {
            return alive.into_iter().next().unwrap();
        }
        let min = *tally.values().min().unwrap();
        let loser = tally.iter().find(|(_, v)| **v == min).unwrap().0.clone();
        alive.remove(&loser);
    }
}

/// Chi-square survival with `2 s` degrees of freedom by Simpson's rule on
/// the density, integrated from 0 to `x`.
pub fn chi2_even_survival(x: f64, s: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let k = 2.0 * s as f64;
    let log_norm = -(k / 2.0) * 2f64.ln() - ln_gamma(k / 2.0);
    let density = |y: f64| {
        if y <= 0.0 {
            if s == 1 {
                0.5
            } else {
                0.0
            }
        } else {
            (log_norm + (k / 2.0 - 1.0) * y.ln() - y / 2.0).exp()
        }
    };
    let steps = 20_000;
    let h = x / steps as f64;
    let mut acc = density(0.0) + density(x);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * density(i as f64 * h);
    }
    1.0 - acc * h / 3.0
}

fn ln_gamma(z: f64) -> f64 {
    // integer and half-integer arguments only
    if (z - z.round()).abs() < 1e-12 {
        (1..z.round() as u64).map(|i| (i as f64).ln()).sum()
    } else {
        let mut v = std::f64::consts::PI.sqrt().ln();
        let mut a = 0.5;
        while a < z - 1e-9 {
            v += a.ln();
            a += 1.0;
        }
        v
    }
}
