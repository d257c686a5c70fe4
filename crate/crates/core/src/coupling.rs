//! Maximal couplings of catastrophe sizes and the coupled `X`/`U`/`Y` run.
//!
//! Both couplings are built the same way: draw the first variable from its
//! own law, keep it for the second with probability `min(1, Q(a)/P(a))`,
//! otherwise draw the second from the residual `(Q - P)+` by rejection from
//! `Q`. Each marginal is exact and the disagreement probability equals the
//! total variation distance, the smallest possible.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::{ln_binomial, ln_factorial};

use crate::chains::ChainParams;
use crate::error::{param, Result};
use crate::rng::{derive_seed, par_replicates, SeedSpec, Stream};
use crate::stats::{binomial_ci, binomial_pmf, poisson_pmf, tv_integer};

/// Default slack `M` in the reported union bound.
pub const DEFAULT_UNION_SLACK: f64 = 10.0;

/// `x c^2 / 2`, the bound on `P(Bin(x, c) != Poisson(x c))` used in the
/// coupling argument. Returned as is, even above 1.
pub fn tv_bound_bin_poisson(x: u64, c: f64) -> f64 {
    0.5 * x as f64 * c * c
}

/// Le Cam's bound `x c^2` on the same total variation distance.
pub fn le_cam_bound(x: u64, c: f64) -> f64 {
    x as f64 * c * c
}

/// `|lambda - mu|`, the bound on `P(Poisson(lambda) != Poisson(mu))`.
pub fn tv_bound_poisson_poisson(lambda: f64, mu: f64) -> f64 {
    (lambda - mu).abs()
}

/// States of the binomial-vs-Poisson bound grid.
pub const BOUND_GRID_STATES: std::ops::RangeInclusive<u64> = 1..=50;
/// Thinning probabilities of the binomial-vs-Poisson bound grid.
pub const BOUND_GRID_CS: [f64; 3] = [0.001, 0.01, 0.1];
/// Means of the Poisson-vs-Poisson bound grid; every ordered pair is used.
pub const BOUND_GRID_MEANS: [f64; 9] = [0.0, 0.1, 0.5, 1.0, 1.1, 1.25, 2.0, 5.0, 20.0];

/// Exact total variation distance next to an analytic bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    /// `x` and `c`, or `lambda` and `mu`.
    pub a: f64,
    pub b: f64,
    /// Upper bound on the exact distance: pmf summation plus truncated
    /// Poisson mass.
    pub tv: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `TV(Bin(x, c), Poisson(x c))` against `x c^2 / 2` on the given grid.
pub fn bin_poisson_bound_table(
    states: impl IntoIterator<Item = u64>,
    cs: &[f64],
) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    for x in states {
        for &c in cs {
            let (pois, tail) = poisson_pmf(x as f64 * c);
            let tv = tv_integer(&binomial_pmf(x, c), &pois)? + tail;
            let bound = tv_bound_bin_poisson(x, c);
            rows.push(BoundRow {
                a: x as f64,
                b: c,
                tv,
                bound,
                holds: tv <= bound,
            });
        }
    }
    Ok(rows)
}

/// `TV(Poisson(lambda), Poisson(mu))` against `|lambda - mu|` for every
/// ordered pair of `means`.
pub fn poisson_poisson_bound_table(means: &[f64]) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    for &l in means {
        for &m in means {
            let (pl, tl) = poisson_pmf(l);
            let (pm, tm) = poisson_pmf(m);
            let tv = if l == m {
                0.0
            } else {
                tv_integer(&pl, &pm)? + tl + tm
            };
            let bound = tv_bound_poisson_poisson(l, m);
            rows.push(BoundRow {
                a: l,
                b: m,
                tv,
                bound,
                holds: tv <= bound,
            });
        }
    }
    Ok(rows)
}

/// A law with an exact sampler and a log pmf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Law {
    Binomial { n: u64, q: f64 },
    Poisson { mean: f64 },
}

impl Law {
    pub fn ln_pmf(&self, k: u64) -> f64 {
        match *self {
            Law::Binomial { n, q } => {
                if k > n {
                    f64::NEG_INFINITY
                } else if q <= 0.0 {
                    if k == 0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else if q >= 1.0 {
                    if k == n {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    ln_binomial(n, k) + k as f64 * q.ln() + (n - k) as f64 * (-q).ln_1p()
                }
            }
            Law::Poisson { mean } => {
                if mean <= 0.0 {
                    if k == 0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    -mean + k as f64 * mean.ln() - ln_factorial(k)
                }
            }
        }
    }

    pub fn sample(&self, stream: &mut Stream) -> u64 {
        match *self {
            Law::Binomial { n, q } => stream.binomial_raw(n, q),
            Law::Poisson { mean } => stream.poisson_raw(mean),
        }
    }
}

/// Given `a` drawn from `first`, draws the partner from `second` under the
/// maximal coupling.
pub fn couple_given(first: Law, second: Law, a: u64, stream: &mut Stream) -> u64 {
    if first == second {
        return a;
    }
    let keep = second.ln_pmf(a) - first.ln_pmf(a);
    if keep >= 0.0 || stream.uniform() < keep.exp() {
        return a;
    }
    loop {
        let k = second.sample(stream);
        let ratio = first.ln_pmf(k) - second.ln_pmf(k);
        if ratio < 0.0 && stream.uniform() < -ratio.exp_m1() {
            return k;
        }
    }
}

/// `(b, q)` with `b ~ Bin(x, c)`, `q ~ Poisson(x c)` and
/// `P(b != q) = TV(Bin(x, c), Poisson(x c))`.
pub fn coupled_catastrophe_bin_poisson(x: u64, c: f64, stream: &mut Stream) -> Result<(u64, u64)> {
    if !(0.0..=1.0).contains(&c) {
        return param(format!("c = {c} is not a probability"));
    }
    let first = Law::Binomial { n: x, q: c };
    let second = Law::Poisson { mean: x as f64 * c };
    let b = first.sample(stream);
    Ok((b, couple_given(first, second, b, stream)))
}

/// `(q1, q2)` with Poisson(`lambda`) and Poisson(`mu`) marginals, maximally
/// coupled.
pub fn coupled_catastrophe_poisson_poisson(
    lambda: f64,
    mu: f64,
    stream: &mut Stream,
) -> Result<(u64, u64)> {
    if !(lambda >= 0.0 && mu >= 0.0 && lambda.is_finite() && mu.is_finite()) {
        return param("Poisson means must be finite and >= 0");
    }
    let first = Law::Poisson { mean: lambda };
    let second = Law::Poisson { mean: mu };
    let a = first.sample(stream);
    Ok((a, couple_given(first, second, a, stream)))
}

/// One replicate of the coupled `X(L)`, `U`, `Y` run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoupledTriple {
    pub x: i64,
    pub u: i64,
    pub y: i64,
    /// First step with `x != u`.
    pub tau_xu: Option<u64>,
    /// First step with `u != y`.
    pub tau_uy: Option<u64>,
    /// First step with `x != y`.
    pub tau_xy: Option<u64>,
    /// First step at which `U` went negative; it is frozen from then on.
    pub u_escaped: Option<u64>,
}

struct TripleStreams {
    shared: Stream,
    x: Stream,
    u: Stream,
    y: Stream,
}

impl TripleStreams {
    fn new(seed: SeedSpec) -> Self {
        TripleStreams {
            shared: seed.lane(0).stream(),
            x: seed.lane(1).stream(),
            u: seed.lane(2).stream(),
            y: seed.lane(3).stream(),
        }
    }
}

impl CoupledTriple {
    pub fn start(x0: i64) -> Self {
        CoupledTriple {
            x: x0,
            u: x0,
            y: x0,
            tau_xu: None,
            tau_uy: None,
            tau_xy: None,
            u_escaped: None,
        }
    }

    /// Advances all three chains one step. The birth/catastrophe choice is
    /// shared; catastrophe sizes are coupled while coordinates agree and
    /// drawn from separate streams once they differ.
    fn step(&mut self, n: u64, params: &ChainParams, s: &mut TripleStreams) {
        let (p, c) = (params.p(), params.c());
        let lambda = params.poisson_mean();
        let u_live = self.u_escaped.is_none();
        if s.shared.bernoulli_raw(p) {
            if self.x > 0 {
                self.x += 1;
            }
            if u_live {
                self.u += 1;
            }
            self.y += 1;
        } else {
            let xu = self.x == self.u && u_live;
            let uy = self.u == self.y && u_live;
            let bin = Law::Binomial {
                n: self.x.max(0) as u64,
                q: c,
            };
            let pois_u = Law::Poisson {
                mean: self.u.max(0) as f64 * c,
            };
            let pois_y = Law::Poisson { mean: lambda };
            let (b, q, q2) = if xu {
                let b = bin.sample(&mut s.shared);
                let q = couple_given(bin, pois_u, b, &mut s.shared);
                let q2 = if uy {
                    couple_given(pois_u, pois_y, q, &mut s.shared)
                } else {
                    pois_y.sample(&mut s.y)
                };
                (b, q, q2)
            } else {
                let b = bin.sample(&mut s.x);
                if uy {
                    let q = pois_u.sample(&mut s.shared);
                    (b, q, couple_given(pois_u, pois_y, q, &mut s.shared))
                } else {
                    let q = if u_live { pois_u.sample(&mut s.u) } else { 0 };
                    (b, q, pois_y.sample(&mut s.y))
                }
            };
            self.x -= b as i64;
            if u_live {
                self.u -= q as i64;
            }
            self.y -= q2 as i64;
        }
        if u_live && self.u < 0 {
            self.u_escaped = Some(n);
        }
        if self.x != self.u && self.tau_xu.is_none() {
            self.tau_xu = Some(n);
        }
        if self.u != self.y && self.tau_uy.is_none() {
            self.tau_uy = Some(n);
        }
        if self.x != self.y && self.tau_xy.is_none() {
            self.tau_xy = Some(n);
        }
    }
}

/// Runs one coupled triple for `steps` steps from `x0`.
pub fn run_triple(params: &ChainParams, x0: i64, steps: u64, seed: SeedSpec) -> CoupledTriple {
    let mut streams = TripleStreams::new(seed);
    let mut t = CoupledTriple::start(x0);
    for n in 1..=steps {
        t.step(n, params, &mut streams);
    }
    t
}

/// Coupled-run estimate of `P(exists n <= T: X_n(L) != Y_n)` at one `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Prop1Report {
    pub L: f64,
    pub p: f64,
    pub T: u64,
    pub reps: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub union_bound: f64,
    pub x0: i64,
    pub p_hat_xu: f64,
    pub p_hat_uy: f64,
    pub u_escapes: usize,
}

/// Confidence level of the intervals in [`Prop1Report`].
pub const PROP1_CI_LEVEL: f64 = 0.95;

/// Cap on the discrepancy estimate at the largest `L`.
pub const PROP1_CAP: f64 = 0.05;

/// Union bound from the coupling argument: over `T` steps, the per-step
/// binomial/Poisson and Poisson/Poisson disagreement sums over the interval
/// the chains stay in, plus twice the probability of leaving it.
#[allow(non_snake_case)]
pub fn union_bound(L: f64, p: f64, T: u64, slack: f64) -> f64 {
    let c = 1.0 / L;
    let n_star = L * p / (1.0 - p);
    let lambda = c * n_star;
    let t = T as f64;
    let drop_mean = t * (t + n_star) * c;
    let step1 =
        0.5 * c * c * 0.5 * (2.0 * n_star + t - drop_mean - slack) * (t + drop_mean + slack + 1.0);
    let step2 = (drop_mean + slack + t + 1.0) * (slack + t * lambda) * c;
    let leave = poisson_upper_tail(drop_mean, drop_mean + slack);
    t * (step1 + step2 + 2.0 * leave)
}

/// `P(Poisson(mean) >= level)`.
fn poisson_upper_tail(mean: f64, level: f64) -> f64 {
    if level <= 0.0 {
        return 1.0;
    }
    let start = level.ceil() as u64;
    let mut sum = 0.0;
    let mut k = start;
    loop {
        let term = (-mean + k as f64 * mean.ln() - ln_factorial(k)).exp();
        sum += term;
        if (k as f64 > mean && term < 1e-18 * sum.max(1e-300)) || term == 0.0 && k as f64 > mean {
            break;
        }
        k += 1;
    }
    sum.min(1.0)
}

/// Estimates the discrepancy probability at one `L`, with `c = 1/L` and all
/// chains started at `round(L p / (1 - p))`.
#[allow(non_snake_case)]
pub fn run_coupled_prop1(
    L: f64,
    p: f64,
    T: u64,
    reps: usize,
    seed: u64,
    slack: f64,
) -> Result<Prop1Report> {
    if !(L >= 1.0) {
        return param(format!("L = {L} must be >= 1"));
    }
    if reps == 0 {
        return param("reps must be >= 1");
    }
    let params = ChainParams::new(p, 1.0 / L)?;
    let x0 = (L * p / (1.0 - p)).round() as i64;
    let master = derive_seed(seed, &[1, L.to_bits(), p.to_bits(), T]);
    let triples = par_replicates(master, reps, |s| run_triple(&params, x0, T, s));
    let count = |f: &dyn Fn(&CoupledTriple) -> bool| triples.iter().filter(|t| f(t)).count();
    let hits = count(&|t| t.tau_xy.is_some());
    let (ci_low, ci_high) = binomial_ci(hits as u64, reps as u64, PROP1_CI_LEVEL);
    Ok(Prop1Report {
        L,
        p,
        T,
        reps,
        p_hat: hits as f64 / reps as f64,
        ci_low,
        ci_high,
        union_bound: union_bound(L, p, T, slack),
        x0,
        p_hat_xu: count(&|t| t.tau_xu.is_some()) as f64 / reps as f64,
        p_hat_uy: count(&|t| t.tau_uy.is_some()) as f64 / reps as f64,
        u_escapes: count(&|t| t.u_escaped.is_some()),
    })
}

/// Discrepancy estimates across an `L` grid with the trend verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Table {
    pub rows: Vec<Prop1Report>,
    /// Each estimate is below the previous one or their intervals overlap.
    pub non_increasing: bool,
    /// Estimate at the largest `L` is below `cap`.
    pub below_cap: bool,
    pub cap: f64,
}

/// Non-increasing up to confidence-interval overlap.
pub fn ci_non_increasing(rows: &[Prop1Report]) -> bool {
    rows.windows(2)
        .all(|w| w[1].p_hat <= w[0].p_hat || w[1].ci_low <= w[0].ci_high)
}

#[allow(non_snake_case)]
pub fn run_coupled_prop1_grid(
    L_grid: &[f64],
    p: f64,
    T: u64,
    reps: usize,
    seed: u64,
    slack: f64,
    cap: f64,
) -> Result<Prop1Table> {
    if L_grid.is_empty() {
        return param("L grid is empty");
    }
    let mut grid = L_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let rows = grid
        .iter()
        .map(|&l| run_coupled_prop1(l, p, T, reps, seed, slack))
        .collect::<Result<Vec<_>>>()?;
    let below_cap = rows.last().map(|r| r.p_hat < cap).unwrap_or(false);
    Ok(Prop1Table {
        non_increasing: ci_non_increasing(&rows),
        below_cap,
        cap,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_bound_holds_on_grid() {
        let rows = poisson_poisson_bound_table(&BOUND_GRID_MEANS).unwrap();
        assert_eq!(rows.len(), 81);
        assert!(rows.iter().all(|r| r.holds));
    }

    #[test]
    fn halved_bound_fails_where_le_cam_holds() {
        let rows = bin_poisson_bound_table(BOUND_GRID_STATES, &BOUND_GRID_CS).unwrap();
        assert_eq!(rows.len(), 150);
        assert!(rows.iter().all(|r| r.tv <= le_cam_bound(r.a as u64, r.b)));
        let single = bin_poisson_bound_table([1], &[0.5]).unwrap()[0];
        assert!((single.tv - 0.1967).abs() < 1e-4 && !single.holds);
    }

    #[test]
    fn bound_arithmetic() {
        assert_eq!(tv_bound_bin_poisson(0, 0.3), 0.0);
        assert!((tv_bound_bin_poisson(10, 0.01) - 5e-4).abs() < 1e-18);
        assert!((tv_bound_bin_poisson(990, 0.1) - 4.95).abs() < 1e-12);
        assert_eq!(tv_bound_poisson_poisson(2.0, 2.0), 0.0);
        assert_eq!(tv_bound_poisson_poisson(1.0, 1.25), 0.25);
        assert!((tv_bound_poisson_poisson(0.0, 0.1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn poisson_from_zero_disagreement_is_one_minus_exp() {
        // Poisson(0) is a point mass, so TV = 1 - e^{-0.1}
        let tv = tv_integer(&poisson_pmf(0.0).0, &poisson_pmf(0.1).0).unwrap();
        assert!((tv - (1.0 - (-0.1f64).exp())).abs() < 1e-14);
        assert!(tv <= 0.1);
    }

    #[test]
    fn degenerate_couplings() {
        let mut s = SeedSpec::new(1, 0).stream();
        for _ in 0..100 {
            assert_eq!(
                coupled_catastrophe_bin_poisson(0, 0.3, &mut s).unwrap(),
                (0, 0)
            );
            let (a, b) = coupled_catastrophe_poisson_poisson(2.5, 2.5, &mut s).unwrap();
            assert_eq!(a, b);
        }
        assert!(coupled_catastrophe_poisson_poisson(-1.0, 1.0, &mut s).is_err());
    }

    fn disagreement_and_marginals(
        draw: impl Fn(&mut Stream) -> (u64, u64),
        n: usize,
        seed: u64,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let mut s = SeedSpec::new(seed, 0).stream();
        let mut diff = 0usize;
        let (mut fa, mut fb) = (vec![0.0; 40], vec![0.0; 40]);
        for _ in 0..n {
            let (a, b) = draw(&mut s);
            if a != b {
                diff += 1;
            }
            if a < 40 {
                fa[a as usize] += 1.0 / n as f64;
            }
            if b < 40 {
                fb[b as usize] += 1.0 / n as f64;
            }
        }
        (diff as f64 / n as f64, fa, fb)
    }

    fn within(freq: &[f64], pmf: &crate::stats::Pmf, n: usize) {
        for (k, &f) in freq.iter().enumerate() {
            let p = pmf.get(&(k as i64)).copied().unwrap_or(0.0);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() <= 4.0 * se + 1e-12, "k={k}: {f} vs {p}");
        }
    }

    #[test]
    fn bin_poisson_coupling_is_maximal_with_exact_marginals() {
        for (x, c, seed) in [(1u64, 0.5, 2), (10, 0.01, 3), (30, 0.1, 4)] {
            let n = 2_000_000;
            let (dis, fb, fq) = disagreement_and_marginals(
                |s| coupled_catastrophe_bin_poisson(x, c, s).unwrap(),
                n,
                seed,
            );
            let (pois, tail) = poisson_pmf(x as f64 * c);
            let bin = binomial_pmf(x, c);
            let tv = tv_integer(&bin, &pois).unwrap() + tail;
            let se = (tv * (1.0 - tv) / n as f64).sqrt();
            assert!(
                (dis - tv).abs() < 4.0 * se + 1e-9,
                "x={x} c={c}: {dis} vs TV {tv}"
            );
            assert!(dis <= le_cam_bound(x, c) + 4.0 * se);
            within(&fb, &bin, n);
            within(&fq, &pois, n);
        }
    }

    #[test]
    fn poisson_poisson_coupling_is_maximal() {
        for (l, m, seed) in [(1.0, 1.1, 5), (0.5, 1.0, 6), (20.0, 21.5, 7)] {
            let n = 1_000_000;
            let (dis, fa, fb) = disagreement_and_marginals(
                |s| coupled_catastrophe_poisson_poisson(l, m, s).unwrap(),
                n,
                seed,
            );
            let (pl, _) = poisson_pmf(l);
            let (pm, _) = poisson_pmf(m);
            let tv = tv_integer(&pl, &pm).unwrap();
            let se = (tv * (1.0 - tv) / n as f64).sqrt();
            assert!((dis - tv).abs() < 4.0 * se, "{l},{m}: {dis} vs {tv}");
            assert!(dis <= tv_bound_poisson_poisson(l, m) + 4.0 * se);
            within(&fa, &pl, n);
            within(&fb, &pm, n);
        }
    }

    #[test]
    fn zero_horizon_never_disagrees() {
        let r = run_coupled_prop1(100.0, 0.5, 0, 500, 3, DEFAULT_UNION_SLACK).unwrap();
        assert_eq!(r.p_hat, 0.0);
        assert_eq!(r.ci_low, 0.0);
        assert_eq!(r.x0, 100);
    }

    #[test]
    fn triple_respects_first_disagreement_order() {
        let params = ChainParams::new(0.5, 0.01).unwrap();
        for i in 0..300 {
            let t = run_triple(&params, 100, 60, SeedSpec::new(8, i));
            if let (Some(xy), Some(xu), Some(uy)) = (t.tau_xy, t.tau_xu, t.tau_uy) {
                assert!(xy >= xu.min(uy));
            }
            if t.tau_xu.is_none() && t.tau_uy.is_none() {
                assert!(t.tau_xy.is_none());
                assert_eq!(t.x, t.y);
            }
        }
    }

    #[test]
    fn union_bound_is_finite_and_shrinks_with_l() {
        let a = union_bound(1e4, 0.5, 50, DEFAULT_UNION_SLACK);
        let b = union_bound(1e8, 0.5, 50, DEFAULT_UNION_SLACK);
        assert!(a.is_finite() && b.is_finite());
        assert!(b < a);
        assert!((poisson_upper_tail(3.0, 0.0) - 1.0).abs() < 1e-12);
        let t = poisson_upper_tail(1.0, 1.0);
        assert!((t - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }
}
