//! The integer-valued chains: the catastrophe walk `X`, the fixed-mean
//! Poisson walk `Y`, the state-dependent Poisson walk `U`, and the
//! local-extrema recursions of the drift-and-shrink limit.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Result};
use crate::rng::{SeedSpec, Stream};

/// Longest path `simulate` will store in memory.
pub const MAX_STORED_STEPS: u64 = 10_000_000;

/// Birth probability `p` and catastrophe parameter `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    p: f64,
    c: f64,
}

impl ChainParams {
    /// Requires `0 < p < 1` and `0 < c <= 1`.
    pub fn new(p: f64, c: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return param(format!("p = {p} must lie in (0, 1)"));
        }
        if !(c > 0.0 && c <= 1.0) {
            return param(format!("c = {c} must lie in (0, 1]"));
        }
        Ok(ChainParams { p, c })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// Mean catastrophe size of the `Y` chain, `p / (1 - p)`.
    pub fn poisson_mean(&self) -> f64 {
        self.p / (1.0 - self.p)
    }
}

/// The level `p / ((1 - p) c)` at which the expected increment of `X`
/// vanishes.
pub fn metastable_level(params: &ChainParams) -> f64 {
    params.p / ((1.0 - params.p) * params.c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainKind {
    /// Binomial catastrophes, absorbed at 0.
    X,
    /// Poisson catastrophes with fixed mean `p / (1 - p)`.
    Y,
    /// Poisson catastrophes with mean `k c` at state `k`.
    U,
}

/// One step of `X` from state `k`.
pub fn step_x(k: i64, params: &ChainParams, stream: &mut Stream) -> Result<i64> {
    if k < 0 {
        return domain(format!("X state {k} is negative"));
    }
    Ok(step_x_raw(k, params, stream))
}

#[inline]
pub(crate) fn step_x_raw(k: i64, params: &ChainParams, stream: &mut Stream) -> i64 {
    if k == 0 {
        0
    } else if stream.bernoulli_raw(params.p) {
        k + 1
    } else {
        k - stream.binomial_raw(k as u64, params.c) as i64
    }
}

/// One step of `Y`. The state space is all of the integers; nothing is
/// special about 0.
pub fn step_y(k: i64, params: &ChainParams, stream: &mut Stream) -> i64 {
    if stream.bernoulli_raw(params.p) {
        k + 1
    } else {
        k - stream.poisson_raw(params.poisson_mean()) as i64
    }
}

/// One step of `U` from a non-negative state.
pub fn step_u(k: i64, params: &ChainParams, stream: &mut Stream) -> Result<i64> {
    if k < 0 {
        return domain(format!(
            "U state {k} is negative; the catastrophe mean k*c would be < 0"
        ));
    }
    Ok(if stream.bernoulli_raw(params.p) {
        k + 1
    } else {
        k - stream.poisson_raw(k as f64 * params.c) as i64
    })
}

/// A stored trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub kind: ChainKind,
    pub params: ChainParams,
    pub seed: SeedSpec,
    pub values: Vec<i64>,
    /// For `U` paths: the step at which the path went negative. The path is
    /// cut there, so `values` is shorter than requested.
    pub escaped_at: Option<usize>,
}

impl DiscretePath {
    /// Writes `step,value` rows with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,value")?;
        for (n, v) in self.values.iter().enumerate() {
            writeln!(out, "{n},{v}")?;
        }
        Ok(())
    }

    /// Checks the per-kind path invariants.
    pub fn check_invariants(&self) -> Result<()> {
        for (n, w) in self.values.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let ok = match self.kind {
                ChainKind::X => {
                    b >= 0
                        && (if a == 0 {
                            b == 0
                        } else {
                            b == a + 1 || (0..=a).contains(&b)
                        })
                }
                ChainKind::Y | ChainKind::U => b == a + 1 || b <= a,
            };
            if !ok {
                return domain(format!(
                    "{:?} path step {n}: {a} -> {b} is not a legal move",
                    self.kind
                ));
            }
        }
        Ok(())
    }
}

/// Simulates `steps` transitions of the chain `kind` from `x0`.
pub fn simulate(
    kind: ChainKind,
    params: &ChainParams,
    x0: i64,
    steps: u64,
    seed: SeedSpec,
) -> Result<DiscretePath> {
    if steps > MAX_STORED_STEPS {
        return param(format!(
            "{steps} steps exceeds the stored-path limit {MAX_STORED_STEPS}; use simulate_summary"
        ));
    }
    if kind != ChainKind::Y && x0 < 0 {
        return domain(format!("{kind:?} cannot start at negative state {x0}"));
    }
    let mut stream = seed.stream();
    let mut values = Vec::with_capacity(steps as usize + 1);
    values.push(x0);
    let mut escaped_at = None;
    let mut k = x0;
    for n in 1..=steps as usize {
        k = match kind {
            ChainKind::X => step_x_raw(k, params, &mut stream),
            ChainKind::Y => step_y(k, params, &mut stream),
            ChainKind::U => step_u(k, params, &mut stream)?,
        };
        values.push(k);
        if kind == ChainKind::U && k < 0 {
            escaped_at = Some(n);
            break;
        }
    }
    Ok(DiscretePath {
        kind,
        params: *params,
        seed,
        values,
        escaped_at,
    })
}

/// Running statistics of an `X` path that is not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub steps: u64,
    pub final_value: i64,
    pub min: i64,
    pub max: i64,
    /// Mean of `values[from..=steps]`.
    pub window_mean: f64,
    pub window_from: u64,
    /// First step at which the value was 0, if any.
    pub absorbed_at: Option<u64>,
}

/// Streams an `X` path without storing it.
pub fn simulate_summary(
    params: &ChainParams,
    x0: i64,
    steps: u64,
    window_from: u64,
    seed: SeedSpec,
) -> Result<PathSummary> {
    if x0 < 0 {
        return domain(format!("X cannot start at negative state {x0}"));
    }
    let mut stream = seed.stream();
    let (mut k, mut min, mut max) = (x0, x0, x0);
    let mut sum = 0.0;
    let mut count = 0u64;
    let mut absorbed_at = (x0 == 0).then_some(0);
    for n in 0..=steps {
        if n > 0 {
            k = step_x_raw(k, params, &mut stream);
            min = min.min(k);
            max = max.max(k);
            if k == 0 && absorbed_at.is_none() {
                absorbed_at = Some(n);
            }
        }
        if n >= window_from {
            sum += k as f64;
            count += 1;
        }
    }
    Ok(PathSummary {
        steps,
        final_value: k,
        min,
        max,
        window_mean: if count > 0 {
            sum / count as f64
        } else {
            f64::NAN
        },
        window_from,
        absorbed_at,
    })
}

/// `X` at the requested (sorted) step indices, simulated run by run: from
/// state `k` the chain makes a Geometric number of births (mean `p/(1-p)`)
/// and then one binomial catastrophe. Same law as stepping one at a time,
/// with cost proportional to the number of catastrophes.
pub fn x_at_steps(
    params: &ChainParams,
    x0: i64,
    checkpoints: &[u64],
    stream: &mut Stream,
) -> Vec<i64> {
    debug_assert!(checkpoints.windows(2).all(|w| w[0] <= w[1]));
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut idx = 0;
    let (mut n, mut k) = (0u64, x0.max(0));
    while idx < checkpoints.len() {
        if k == 0 {
            out.resize(checkpoints.len(), 0);
            break;
        }
        let births = stream.geometric_raw(1.0 - params.p) - 1;
        let top = k + births as i64;
        let drop_at = n.saturating_add(births).saturating_add(1);
        while idx < checkpoints.len() && checkpoints[idx] < drop_at {
            out.push(k + (checkpoints[idx] - n) as i64);
            idx += 1;
        }
        if idx == checkpoints.len() {
            break;
        }
        k = top - stream.binomial_raw(top as u64, params.c) as i64;
        n = drop_at;
    }
    out
}

/// Outcome of an absorption-time run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Absorption {
    At(u64),
    Censored,
}

/// First `n` with `X_n = 0`, or `Censored` if none by `cap`.
pub fn absorption_time(
    params: &ChainParams,
    x0: i64,
    cap: u64,
    seed: SeedSpec,
) -> Result<Absorption> {
    if x0 < 0 {
        return domain(format!("X cannot start at negative state {x0}"));
    }
    if x0 == 0 {
        return Ok(Absorption::At(0));
    }
    let mut stream = seed.stream();
    let mut k = x0;
    for n in 1..=cap {
        k = step_x_raw(k, params, &mut stream);
        if k == 0 {
            return Ok(Absorption::At(n));
        }
    }
    Ok(Absorption::Censored)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremum {
    /// `M' = (1 - c) M + E`: successive pre-jump maxima.
    Max,
    /// `m' = (1 - c)(m + E)`: successive post-jump minima.
    Min,
}

/// One step of the local-extrema recursion with a fresh mean-one
/// exponential.
pub fn step_extrema(value: f64, kind: Extremum, c: f64, stream: &mut Stream) -> Result<f64> {
    if !(value >= 0.0) {
        return domain(format!("extremum {value} must be >= 0"));
    }
    if !(c > 0.0 && c <= 1.0) {
        return param(format!("c = {c} must lie in (0, 1]"));
    }
    let e = stream.standard_exponential();
    Ok(match kind {
        Extremum::Max => (1.0 - c) * value + e,
        Extremum::Min => (1.0 - c) * (value + e),
    })
}
