//! Empirical distances, confidence intervals and the exact small-state
//! oracle for the `X` chain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::{ln_binomial, ln_factorial};

use crate::chains::ChainParams;
use crate::error::{param, Result};

/// Probability mass function on the integers.
pub type Pmf = BTreeMap<i64, f64>;

/// Poisson pmfs are cut where the remaining upper tail drops below this.
pub const POISSON_TAIL_CUTOFF: f64 = 1e-15;

/// Largest state space `exact_distribution` will allocate.
pub const EXACT_MAX_CUTOFF: usize = 1000;

/// Above this trial count binomial coefficients are built from logarithms.
const LOG_BINOMIAL_ABOVE: u64 = 100;

/// An empirical statistic compared with a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub statistic: String,
    pub value: f64,
    pub n1: usize,
    pub n2: usize,
    pub threshold: f64,
    pub pass: bool,
    pub notes: String,
}

impl DistanceReport {
    /// `pass` is `value <= threshold`.
    pub fn new(
        statistic: impl Into<String>,
        value: f64,
        n1: usize,
        n2: usize,
        threshold: f64,
        notes: impl Into<String>,
    ) -> Self {
        DistanceReport {
            statistic: statistic.into(),
            value,
            n1,
            n2,
            threshold,
            pass: value <= threshold,
            notes: notes.into(),
        }
    }
}

fn sorted(sample: &[f64]) -> Vec<f64> {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_A - F_B|`, computed by
/// merging the sorted samples. Ties are stepped over together.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return param("KS needs two non-empty samples");
    }
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample KS statistic against a continuous CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if sample.is_empty() {
        return param("KS needs a non-empty sample");
    }
    let xs = sorted(sample);
    let n = xs.len() as f64;
    Ok(xs.iter().enumerate().fold(0.0, |d: f64, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    }))
}

/// Two-sample DKW-style threshold `sqrt(ln(2/level)/2) * sqrt(1/n1 + 1/n2)`.
pub fn dkw_threshold(n1: usize, n2: usize, level: f64) -> f64 {
    debug_assert!(n1 > 0 && n2 > 0 && level > 0.0 && level < 1.0);
    ((2.0 / level).ln() / 2.0).sqrt() * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt()
}

/// One-sample DKW threshold `sqrt(ln(2/level) / (2n))`.
pub fn dkw_threshold_one_sample(n: usize, level: f64) -> f64 {
    ((2.0 / level).ln() / (2.0 * n as f64)).sqrt()
}

/// Total variation `1/2 sum |P(k) - Q(k)|` over the union of supports.
pub fn tv_integer(p: &Pmf, q: &Pmf) -> Result<f64> {
    check_pmf(p)?;
    check_pmf(q)?;
    let mut sum = 0.0;
    for (k, &pk) in p {
        sum += (pk - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, &qk) in q {
        if !p.contains_key(k) {
            sum += qk;
        }
    }
    Ok(0.5 * sum)
}

fn check_pmf(p: &Pmf) -> Result<()> {
    if p.values().any(|&v| !(v >= 0.0)) {
        return param("pmf has a negative or NaN entry");
    }
    let total: f64 = p.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return param(format!("pmf sums to {total}, not 1"));
    }
    Ok(())
}

/// Row `j -> C(n, j) q^j (1-q)^(n-j)` for `j = 0..=n`.
pub fn binomial_pmf_row(n: u64, q: f64) -> Vec<f64> {
    if q <= 0.0 {
        let mut row = vec![0.0; n as usize + 1];
        row[0] = 1.0;
        return row;
    }
    if q >= 1.0 {
        let mut row = vec![0.0; n as usize + 1];
        row[n as usize] = 1.0;
        return row;
    }
    if n <= LOG_BINOMIAL_ABOVE {
        let mut coef = 1.0;
        (0..=n)
            .map(|j| {
                if j > 0 {
                    coef *= (n - j + 1) as f64 / j as f64;
                }
                coef * q.powi(j as i32) * (1.0 - q).powi((n - j) as i32)
            })
            .collect()
    } else {
        let (lq, lr) = (q.ln(), (-q).ln_1p());
        (0..=n)
            .map(|j| (ln_binomial(n, j) + j as f64 * lq + (n - j) as f64 * lr).exp())
            .collect()
    }
}

pub fn binomial_pmf(n: u64, q: f64) -> Pmf {
    binomial_pmf_row(n, q)
        .into_iter()
        .enumerate()
        .map(|(k, v)| (k as i64, v))
        .collect()
}

/// Poisson(`lambda`) pmf truncated where the remaining tail is below
/// [`POISSON_TAIL_CUTOFF`]. Returns the pmf and a bound on the truncated
/// mass: past the mode the tail after `k` is at most
/// `p_k * r / (1 - r)` with `r = lambda / (k + 1)`.
pub fn poisson_pmf(lambda: f64) -> (Pmf, f64) {
    let mut pmf = Pmf::new();
    if lambda <= 0.0 {
        pmf.insert(0, 1.0);
        return (pmf, 0.0);
    }
    let ll = lambda.ln();
    let mut k = 0u64;
    loop {
        let v = (-lambda + k as f64 * ll - ln_factorial(k)).exp();
        pmf.insert(k as i64, v);
        let r = lambda / (k + 1) as f64;
        if r < 1.0 {
            let tail = v * r / (1.0 - r);
            if tail < POISSON_TAIL_CUTOFF {
                return (pmf, tail);
            }
        }
        k += 1;
    }
}

/// Exact `T`-step law of `X` from `x0`, by repeated application of the
/// transition kernel on the dense state space `0..=cutoff`.
pub fn exact_distribution(
    params: &ChainParams,
    x0: i64,
    steps: usize,
    cutoff: usize,
) -> Result<Pmf> {
    if x0 < 0 {
        return param(format!("x0 = {x0} must be >= 0"));
    }
    if cutoff > EXACT_MAX_CUTOFF {
        return param(format!("cutoff {cutoff} exceeds {EXACT_MAX_CUTOFF}"));
    }
    if x0 as usize + steps > cutoff {
        return param(format!(
            "x0 + T = {} exceeds cutoff {cutoff}",
            x0 as usize + steps
        ));
    }
    let (p, c) = (params.p(), params.c());
    let mut mass = vec![0.0; cutoff + 1];
    mass[x0 as usize] = 1.0;
    for _ in 0..steps {
        let mut next = vec![0.0; cutoff + 1];
        next[0] += mass[0];
        for k in 1..=cutoff {
            let m = mass[k];
            if m == 0.0 {
                continue;
            }
            next[k + 1] += p * m;
            for (j, b) in binomial_pmf_row(k as u64, c).into_iter().enumerate() {
                next[k - j] += (1.0 - p) * m * b;
            }
        }
        let total: f64 = next.iter().sum();
        debug_assert!((total - 1.0).abs() < 1e-12, "mass drifted to {total}");
        mass = next;
    }
    Ok(mass
        .into_iter()
        .enumerate()
        .filter(|&(_, v)| v > 0.0)
        .map(|(k, v)| (k as i64, v))
        .collect())
}

/// Wasserstein-1 distance between two empirical laws, `integral |F_A - F_B|`.
/// For equal sizes this is the mean absolute difference of order statistics;
/// unequal sizes are handled exactly by the same integral.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return param("W1 needs two non-empty samples");
    }
    let (a, b) = (sorted(a), sorted(b));
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut last = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (x - last) * (i as f64 / na - j as f64 / nb).abs();
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        last = x;
    }
    Ok(total)
}

/// Standard normal quantile.
pub fn normal_quantile(prob: f64) -> f64 {
    Normal::standard().inverse_cdf(prob)
}

/// Wilson score interval for a binomial proportion at two-sided `level`.
pub fn binomial_ci(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    let n = trials as f64;
    let ph = successes as f64 / n;
    let z2 = z * z;
    let centre = (ph + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (ph * (1.0 - ph) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if successes == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (low, high)
}

/// Sample moments with standard errors for the mean and the variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    /// `sqrt((m4 - s^4) / n)`.
    pub se_variance: f64,
}

pub fn moments(sample: &[f64]) -> Moments {
    let n = sample.len();
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in sample {
        let d = (x - mean) * (x - mean);
        m2 += d;
        m4 += d * d;
    }
    let variance = m2 / (nf - 1.0).max(1.0);
    let m4 = m4 / nf;
    Moments {
        n,
        mean,
        variance,
        se_mean: (variance / nf).sqrt(),
        se_variance: ((m4 - variance * variance).max(0.0) / nf).sqrt(),
    }
}

/// Fixed-bin histogram on `[lo, hi)`, normalised as a density over all
/// samples (mass outside the range is counted in `n` but not in any bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub n: u64,
}

impl Histogram {
    pub fn new(sample: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo) || bins == 0 || sample.is_empty() {
            return param("histogram needs hi > lo, bins >= 1 and a non-empty sample");
        }
        let w = (hi - lo) / bins as f64;
        let mut counts = vec![0u64; bins];
        for &x in sample {
            if x >= lo && x < hi {
                counts[(((x - lo) / w) as usize).min(bins - 1)] += 1;
            }
        }
        Ok(Histogram {
            lo,
            hi,
            counts,
            n: sample.len() as u64,
        })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    pub fn density(&self, i: usize) -> f64 {
        self.counts[i] as f64 / (self.n as f64 * self.width())
    }

    /// Binomial standard error of the density in bin `i`.
    pub fn density_se(&self, i: usize) -> f64 {
        let p = self.counts[i] as f64 / self.n as f64;
        (p * (1.0 - p) / self.n as f64).sqrt() / self.width()
    }
}
