//! Continuous-time limit processes and the invariant-law toolkit.
//!
//! Three path samplers share one representation, [`CadlagPath`]:
//!
//! * the drift-and-shrink process: slope 1 between the epochs of a rate-1
//!   Poisson clock, multiplied by `1 - c` at each epoch;
//! * the drifted process: the same clock, each epoch subtracts `r`;
//! * the continuous-time simple random walk with rate `1 + r`, stepping right
//!   with probability `1 / (1 + r)`.
//!
//! The invariant law of the first is the perpetuity
//! `sum_{n >= 0} (1 - c)^n E_n`. Its Laplace transform is the infinite product
//! `prod_n 1 / (1 + (1 - c)^n theta)`, and its density `psi` solves
//! `psi(x) = integral_x^{x / (1 - c)} psi(y) dy`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Error, Result};
use crate::rng::Stream;
use crate::stats::Histogram;

mod stationarity;

pub use stationarity::{
    run_stationarity_suite, EstimateCheck, LaplaceRow, StationarityConfig, StationarityReport,
    TimedReport, LAPLACE_TERMS, LAPLACE_TOL,
};

/// Default bound on the mean of the dropped perpetuity tail.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    /// Slope 1, jumps `x -> (1 - c) x`.
    Pdmp,
    /// Slope 1, jumps `x -> x - r`.
    Drifted,
    /// Piecewise constant, jumps of +-1.
    Walk,
}

/// A right-continuous path with finitely many jumps on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadlagPath {
    pub kind: PathKind,
    /// `c` for [`PathKind::Pdmp`], `r` otherwise.
    pub parameter: f64,
    pub initial_value: f64,
    pub horizon: f64,
    pub jump_times: Vec<f64>,
    pub pre_jump_values: Vec<f64>,
    pub post_jump_values: Vec<f64>,
}

impl CadlagPath {
    fn empty(kind: PathKind, parameter: f64, initial_value: f64, horizon: f64) -> Self {
        CadlagPath {
            kind,
            parameter,
            initial_value,
            horizon,
            jump_times: Vec::new(),
            pre_jump_values: Vec::new(),
            post_jump_values: Vec::new(),
        }
    }

    pub fn jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Value at time `t`; at a jump time the post-jump value.
    pub fn value_at(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&s| s <= t);
        let (base, since) = if idx == 0 {
            (self.initial_value, t)
        } else {
            (self.post_jump_values[idx - 1], t - self.jump_times[idx - 1])
        };
        match self.kind {
            PathKind::Pdmp | PathKind::Drifted => base + since,
            PathKind::Walk => base,
        }
    }

    /// Writes `time,value,kind` rows: the start and end points as `interp`,
    /// and a `pre` and a `post` row at each jump.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time,value,kind")?;
        writeln!(out, "0,{},interp", self.initial_value)?;
        for ((s, pre), post) in self
            .jump_times
            .iter()
            .zip(&self.pre_jump_values)
            .zip(&self.post_jump_values)
        {
            writeln!(out, "{s},{pre},pre")?;
            writeln!(out, "{s},{post},post")?;
        }
        writeln!(
            out,
            "{},{},interp",
            self.horizon,
            self.value_at(self.horizon)
        )
    }

    /// Checks the slope and jump relations to relative tolerance `tol`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()));
        if !self.jump_times.windows(2).all(|w| w[0] < w[1]) {
            return domain("jump times are not increasing");
        }
        for n in 0..self.jumps() {
            let (prev_t, prev_v) = if n == 0 {
                (0.0, self.initial_value)
            } else {
                (self.jump_times[n - 1], self.post_jump_values[n - 1])
            };
            let (pre, post) = (self.pre_jump_values[n], self.post_jump_values[n]);
            let ok = match self.kind {
                PathKind::Pdmp => {
                    close(pre, prev_v + (self.jump_times[n] - prev_t))
                        && close(post, (1.0 - self.parameter) * pre)
                        && post >= 0.0
                }
                PathKind::Drifted => {
                    close(pre, prev_v + (self.jump_times[n] - prev_t))
                        && close(post, pre - self.parameter)
                }
                PathKind::Walk => pre == prev_v && (post - pre).abs() == 1.0 && post.fract() == 0.0,
            };
            if !ok {
                return domain(format!(
                    "{:?} path violates its jump relation at jump {n}",
                    self.kind
                ));
            }
        }
        Ok(())
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon >= 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        param(format!("horizon {horizon} must be finite and >= 0"))
    }
}

/// Drift-and-shrink path from `y0`: `Y(S_n-) = Y(S_{n-1}) + E_n`,
/// `Y(S_n) = (1 - c) Y(S_n-)`.
pub fn sample_pdmp(y0: f64, c: f64, horizon: f64, stream: &mut Stream) -> Result<CadlagPath> {
    if !(y0 >= 0.0) {
        return param(format!("initial value {y0} must be >= 0"));
    }
    if !(c > 0.0 && c < 1.0) {
        return param(format!("c = {c} must lie in (0, 1)"));
    }
    check_horizon(horizon)?;
    let mut path = CadlagPath::empty(PathKind::Pdmp, c, y0, horizon);
    let (mut t, mut y) = (0.0, y0);
    loop {
        let e = stream.standard_exponential();
        t += e;
        if t > horizon {
            return Ok(path);
        }
        let pre = y + e;
        y = (1.0 - c) * pre;
        path.jump_times.push(t);
        path.pre_jump_values.push(pre);
        path.post_jump_values.push(y);
    }
}

/// Drifted path from `y0`: slope 1, each epoch subtracts `r`.
pub fn sample_drifted(y0: f64, r: f64, horizon: f64, stream: &mut Stream) -> Result<CadlagPath> {
    if !(r > 0.0 && r.is_finite()) {
        return param(format!("jump size r = {r} must be finite and > 0"));
    }
    if !y0.is_finite() {
        return param("initial value must be finite");
    }
    check_horizon(horizon)?;
    let mut path = CadlagPath::empty(PathKind::Drifted, r, y0, horizon);
    let (mut t, mut y) = (0.0, y0);
    loop {
        let e = stream.standard_exponential();
        t += e;
        if t > horizon {
            return Ok(path);
        }
        let pre = y + e;
        y = pre - r;
        path.jump_times.push(t);
        path.pre_jump_values.push(pre);
        path.post_jump_values.push(y);
    }
}

/// Continuous-time simple random walk from `k0` with jump rate `1 + r`,
/// stepping right with probability `1 / (1 + r)`.
pub fn sample_ctrw(k0: i64, r: f64, horizon: f64, stream: &mut Stream) -> Result<CadlagPath> {
    if !(r >= 0.0 && r.is_finite()) {
        return param(format!("rate parameter r = {r} must be finite and >= 0"));
    }
    check_horizon(horizon)?;
    let mut path = CadlagPath::empty(PathKind::Walk, r, k0 as f64, horizon);
    let (mut t, mut k) = (0.0, k0);
    let right = 1.0 / (1.0 + r);
    loop {
        t += stream.exponential_raw(1.0 + r);
        if t > horizon {
            return Ok(path);
        }
        path.jump_times.push(t);
        path.pre_jump_values.push(k as f64);
        k += if stream.bernoulli_raw(right) { 1 } else { -1 };
        path.post_jump_values.push(k as f64);
    }
}

/// Truncated perpetuity `sum_{n=0}^{N} (1 - c)^n E_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerpetuityParams {
    pub c: f64,
    /// Index `N` of the last term kept.
    pub terms: usize,
    pub tail_tol: f64,
}

impl PerpetuityParams {
    /// Chooses `N = ceil(log(c * tail_tol) / log(1 - c)) - 1`, the smallest
    /// `N` whose dropped tail has mean at most `tail_tol`.
    pub fn new(c: f64, tail_tol: f64) -> Result<Self> {
        check_c(c)?;
        if !(tail_tol > 0.0 && tail_tol < 1.0) {
            return param(format!("tail tolerance {tail_tol} must lie in (0, 1)"));
        }
        let terms = if c >= 1.0 {
            0
        } else {
            let n = ((c * tail_tol).ln() / (1.0 - c).ln()).ceil() - 1.0;
            n.max(0.0) as usize
        };
        Ok(PerpetuityParams { c, terms, tail_tol })
    }

    /// Explicit `N`, rejected if its tail mean exceeds `tail_tol`.
    pub fn with_terms(c: f64, terms: usize, tail_tol: f64) -> Result<Self> {
        check_c(c)?;
        let p = PerpetuityParams { c, terms, tail_tol };
        if p.tail_mean() > tail_tol {
            return param(format!(
                "N = {terms} leaves tail mean {} above {tail_tol}",
                p.tail_mean()
            ));
        }
        Ok(p)
    }

    /// Mean of the dropped terms, `(1 - c)^(N + 1) / c`.
    pub fn tail_mean(&self) -> f64 {
        (1.0 - self.c).powi(self.terms as i32 + 1) / self.c
    }
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c <= 1.0 {
        Ok(())
    } else {
        param(format!("c = {c} must lie in (0, 1]"))
    }
}

/// One draw of the truncated perpetuity.
pub fn perpetuity_sample(params: &PerpetuityParams, stream: &mut Stream) -> f64 {
    discounted_sum(params, 0, stream)
}

/// One draw of `sum_{n=1}^{N} (1 - c)^n E_n`, the perpetuity without its
/// leading term (the stationary law of the post-jump minima).
pub fn perpetuity_sample_without_leading(params: &PerpetuityParams, stream: &mut Stream) -> f64 {
    discounted_sum(params, 1, stream)
}

fn discounted_sum(params: &PerpetuityParams, from: usize, stream: &mut Stream) -> f64 {
    let q = 1.0 - params.c;
    let mut w = q.powi(from as i32);
    let mut sum = 0.0;
    for _ in from..=params.terms {
        sum += w * stream.standard_exponential();
        w *= q;
    }
    sum
}

/// `prod_{n=0}^{N-1} 1 / (1 + (1 - c)^n theta)`.
pub fn invariant_laplace(theta: f64, c: f64, terms: usize) -> Result<f64> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return param(format!("theta = {theta} must be finite and >= 0"));
    }
    check_c(c)?;
    if terms == 0 {
        return param("need at least one factor");
    }
    let q = 1.0 - c;
    let mut w = 1.0;
    let mut phi = 1.0;
    for _ in 0..terms {
        phi /= 1.0 + w * theta;
        w *= q;
    }
    Ok(phi)
}

/// Bound `exp(theta (1 - c)^N / c) - 1` on the relative error of the
/// `N`-factor product.
pub fn laplace_truncation_bound(theta: f64, c: f64, terms: usize) -> f64 {
    (theta * (1.0 - c).powi(terms as i32) / c).exp_m1()
}

/// `|(1 + theta) phi(theta) - phi((1 - c) theta)|` for the `N`-factor product.
pub fn laplace_functional_residual(theta: f64, c: f64, terms: usize) -> Result<f64> {
    let lhs = (1.0 + theta) * invariant_laplace(theta, c, terms)?;
    let rhs = invariant_laplace((1.0 - c) * theta, c, terms)?;
    Ok((lhs - rhs).abs())
}

/// Finite-difference step used by [`generator_apply`] when no derivative is
/// supplied.
pub fn fd_step(x: f64) -> f64 {
    1e-6f64.max(1e-6 * x.abs())
}

/// Generator of the drift-and-shrink process,
/// `f'(x) + f((1 - c) x) - f(x)`. Without `df`, the derivative is a central
/// difference with step [`fd_step`], one-sided (second order) when `x < h`.
pub fn generator_apply(
    f: &dyn Fn(f64) -> f64,
    df: Option<&dyn Fn(f64) -> f64>,
    x: f64,
    c: f64,
) -> Result<f64> {
    if !(x >= 0.0) {
        return domain(format!("x = {x} must be >= 0"));
    }
    check_c(c)?;
    let finite = |v: f64, what: &str| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("{what} is not finite at x = {x}")))
        }
    };
    let deriv = match df {
        Some(d) => finite(d(x), "f'")?,
        None => {
            let h = fd_step(x);
            if x >= h {
                (finite(f(x + h), "f")? - finite(f(x - h), "f")?) / (2.0 * h)
            } else {
                (-3.0 * finite(f(x), "f")? + 4.0 * finite(f(x + h), "f")?
                    - finite(f(x + 2.0 * h), "f")?)
                    / (2.0 * h)
            }
        }
    };
    Ok(deriv + finite(f((1.0 - c) * x), "f")? - finite(f(x), "f")?)
}

/// A probability density that can be evaluated and integrated.
pub trait Density {
    fn value(&self, x: f64) -> f64;
    fn integral(&self, a: f64, b: f64) -> f64;
    /// Interval on which the density is known.
    fn support(&self) -> (f64, f64);
}

/// Piecewise-linear interpolant through `(xs[i], ys[i])`, integrated exactly
/// (the trapezoid rule on its nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() || !xs.windows(2).all(|w| w[0] < w[1]) {
            return param("need >= 2 strictly increasing nodes with one value each");
        }
        Ok(PiecewiseLinear { xs, ys })
    }

    /// Histogram densities at bin midpoints, extended flat to the range
    /// edges.
    pub fn from_histogram(h: &Histogram) -> Self {
        Self::histogram_nodes(h, |i| h.density(i))
    }

    /// Same nodes as [`PiecewiseLinear::from_histogram`], carrying the
    /// binomial standard error of each bin instead.
    pub fn histogram_errors(h: &Histogram) -> Self {
        Self::histogram_nodes(h, |i| h.density_se(i))
    }

    fn histogram_nodes(h: &Histogram, f: impl Fn(usize) -> f64) -> Self {
        let bins = h.counts.len();
        let mut xs = vec![h.lo];
        let mut ys = vec![f(0)];
        for i in 0..bins {
            xs.push(h.midpoint(i));
            ys.push(f(i));
        }
        xs.push(h.hi);
        ys.push(f(bins - 1));
        PiecewiseLinear { xs, ys }
    }

    fn segment(&self, x: f64) -> usize {
        self.xs
            .partition_point(|&n| n <= x)
            .clamp(1, self.xs.len() - 1)
            - 1
    }
}

impl Density for PiecewiseLinear {
    fn value(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let (x0, x1, y0, y1) = (self.xs[i], self.xs[i + 1], self.ys[i], self.ys[i + 1]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return -self.integral(b, a);
        }
        let mut total = 0.0;
        let mut left = a;
        let mut fl = self.value(a);
        for (&xn, &yn) in self.xs.iter().zip(&self.ys) {
            if xn <= a {
                continue;
            }
            if xn >= b {
                break;
            }
            total += 0.5 * (fl + yn) * (xn - left);
            left = xn;
            fl = yn;
        }
        total + 0.5 * (fl + self.value(b)) * (b - left)
    }

    fn support(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }
}

/// Closure density integrated by the composite trapezoid rule with a fixed
/// number of panels.
pub struct FnDensity<F: Fn(f64) -> f64> {
    pub f: F,
    pub lo: f64,
    pub hi: f64,
    pub panels: usize,
}

impl<F: Fn(f64) -> f64> Density for FnDensity<F> {
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let h = (b - a) / self.panels as f64;
        let inner: f64 = (1..self.panels).map(|i| (self.f)(a + i as f64 * h)).sum();
        h * (0.5 * ((self.f)(a) + (self.f)(b)) + inner)
    }

    fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

/// `psi(x) - integral_x^{x / (1 - c)} psi(y) dy` at each grid point.
pub fn invariant_density_residual(psi: &dyn Density, grid: &[f64], c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0 && c < 1.0) {
        return param(format!("c = {c} must lie in (0, 1)"));
    }
    let a = 1.0 / (1.0 - c);
    let (lo, hi) = psi.support();
    grid.iter()
        .map(|&x| {
            if x < lo || a * x > hi {
                domain(format!(
                    "[{x}, {}] is not inside the support [{lo}, {hi}]",
                    a * x
                ))
            } else {
                Ok(psi.value(x) - psi.integral(x, a * x))
            }
        })
        .collect()
}

/// One-standard-error envelope of the residual for a histogram estimate:
/// the interpolated bin error at `x` plus its integral over `[x, x/(1-c)]`.
pub fn histogram_residual_envelope(h: &Histogram, grid: &[f64], c: f64) -> Result<Vec<f64>> {
    invariant_density_residual(&PiecewiseLinear::histogram_errors(h), grid, c).map(|_| {
        let se = PiecewiseLinear::histogram_errors(h);
        let a = 1.0 / (1.0 - c);
        grid.iter()
            .map(|&x| se.value(x) + se.integral(x, a * x))
            .collect()
    })
}
