//! Parameter regimes indexed by a scale `L`, and the experiments comparing
//! rescaled chains with their limit processes.
//!
//! | regime | `p`            | `c`                | `X_0`              | time   | space  | centring   |
//! |--------|----------------|--------------------|--------------------|--------|--------|------------|
//! | P1     | fixed          | `1/L`              | `round(Lp/(1-p))`  | 1      | 1      | 0          |
//! | P2     | `1 - 1/L`      | fixed              | `floor(yL)`        | `L`    | `L`    | 0          |
//! | P4     | `1 - L^-a`     | `L^(a-1)`          | `R + floor(yL^a)`  | `L^a`  | `L^a`  | `floor(rL)`|
//! | P5     | `L^-g`         | `L^(-1-g)`         | `R + k`            | `L^g`  | 1      | `floor(rL)`|
//!
//! Marginals are compared at fixed times with two-sample KS.

use serde::{Deserialize, Serialize};

use crate::chains::{step_x, x_at_steps, ChainParams};
use crate::error::{param, Error, Result};
use crate::limits::{sample_ctrw, sample_drifted, sample_pdmp};
use crate::rng::{derive_seed, par_replicates, Stream};
use crate::stats::{binomial_ci, dkw_threshold, ks_two_sample, moments, DistanceReport};

/// KS cap at the largest `L`.
pub const KS_CAP: f64 = 0.05;
pub const KS_LEVEL: f64 = 0.01;
/// Default number of repeated trials in the calibration and power controls.
pub const CONTROL_TRIALS: usize = 100;
pub const NULL_PASS_RATE: f64 = 0.97;
pub const POWER_FAIL_RATE: f64 = 0.95;
/// Drift and concentration checks accept within this many standard errors.
pub const TOLERANCE_SE: f64 = 4.0;
/// Added to the two-sample DKW threshold for the holding-time test.
pub const HOLDING_SLACK: f64 = 0.02;
pub const JUMP_CI_LEVEL: f64 = 0.99;
/// Perturbation of `c` in the Prop 2 power control.
pub const PROP2_POWER_DC: f64 = 0.1;
/// Perturbation of `r` in the Prop 4 power control.
pub const PROP4_POWER_DR: f64 = 0.5;
/// Rate multiplier in the Prop 5 power control.
pub const PROP5_POWER_RATE: f64 = 1.5;
/// A holding time longer than this many time units aborts the run.
pub const HOLDING_CAP: f64 = 1000.0;

const TAG_CHAIN: u64 = 0x5C01;
const TAG_LIMIT: u64 = 0x5C02;
const TAG_NULL: u64 = 0x5C03;
const TAG_POWER: u64 = 0x5C04;
const TAG_BULK: u64 = 0x5C05;
const TAG_REFERENCE: u64 = 0x5C06;
const TAG_TWO_CLOCK: u64 = 0x5C07;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    P1,
    P2,
    P4,
    P5,
}

/// Regime-specific inputs. Which ones are required depends on the regime:
/// P1 needs `p`; P2 `c, y`; P4 `alpha, r, y`; P5 `gamma, r, k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleExtras {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ScalingSchedule {
    pub regime: Regime,
    pub L: f64,
    pub extras: ScheduleExtras,
    pub p: f64,
    pub c: f64,
    pub x0: i64,
    pub time_scale: f64,
    pub space_scale: f64,
    pub centering: i64,
}

/// A limit process and its initial value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "lowercase")]
pub enum LimitProcess {
    Pdmp { y: f64, c: f64 },
    Drifted { y: f64, r: f64 },
    Walk { k: i64, r: f64 },
}

fn need<T>(v: Option<T>, name: &str, regime: Regime) -> Result<T> {
    v.ok_or_else(|| Error::Parameter(format!("regime {regime:?} needs `{name}`")))
}

#[allow(non_snake_case)]
pub fn build_schedule(regime: Regime, L: f64, extras: ScheduleExtras) -> Result<ScalingSchedule> {
    if !(L > 1.0 && L.is_finite()) {
        return param(format!("L = {L} must be finite and > 1"));
    }
    let (p, c, x0, time_scale, space_scale, centering) = match regime {
        Regime::P1 => {
            let p = need(extras.p, "p", regime)?;
            if !(p > 0.0 && p < 1.0) {
                return param(format!("p = {p} must lie in (0, 1)"));
            }
            (p, 1.0 / L, (L * p / (1.0 - p)).round() as i64, 1.0, 1.0, 0)
        }
        Regime::P2 => {
            let c = need(extras.c, "c", regime)?;
            let y = need(extras.y, "y", regime)?;
            if !(c > 0.0 && c < 1.0) {
                return param(format!("c = {c} must lie in (0, 1)"));
            }
            if !(y > 0.0 && y.is_finite()) {
                return param(format!("y = {y} must be finite and > 0"));
            }
            (1.0 - 1.0 / L, c, (y * L).floor() as i64, L, L, 0)
        }
        Regime::P4 => {
            let a = need(extras.alpha, "alpha", regime)?;
            let r = need(extras.r, "r", regime)?;
            let y = need(extras.y, "y", regime)?;
            if !(a > 0.0 && a < 1.0) {
                return param(format!("alpha = {a} must lie in (0, 1)"));
            }
            if !(r > 0.0 && r.is_finite()) {
                return param(format!("r = {r} must be finite and > 0"));
            }
            if !y.is_finite() {
                return param("y must be finite");
            }
            let la = L.powf(a);
            let centre = (r * L).floor() as i64;
            (
                1.0 - 1.0 / la,
                1.0 / L.powf(1.0 - a),
                centre + (y * la).floor() as i64,
                la,
                la,
                centre,
            )
        }
        Regime::P5 => {
            let g = need(extras.gamma, "gamma", regime)?;
            let r = need(extras.r, "r", regime)?;
            let k = need(extras.k, "k", regime)?;
            if !(g > 0.0 && g.is_finite()) {
                return param(format!("gamma = {g} must be finite and > 0"));
            }
            if !(r >= 0.0 && r.is_finite()) {
                return param(format!("r = {r} must be finite and >= 0"));
            }
            let lg = L.powf(g);
            let centre = (r * L).floor() as i64;
            (1.0 / lg, 1.0 / (L * lg), centre + k, lg, 1.0, centre)
        }
    };
    if !(p > 0.0 && p < 1.0 && c > 0.0 && c < 1.0) {
        return param(format!(
            "L = {L} gives p = {p}, c = {c}; both must lie in (0, 1)"
        ));
    }
    if x0 < 1 {
        return param(format!("initial state {x0} must be >= 1"));
    }
    Ok(ScalingSchedule {
        regime,
        L,
        extras,
        p,
        c,
        x0,
        time_scale,
        space_scale,
        centering,
    })
}

impl ScalingSchedule {
    pub fn params(&self) -> ChainParams {
        ChainParams::new(self.p, self.c).expect("validated when the schedule was built")
    }

    /// The process the rescaled chain approaches. P1 has none: its comparison
    /// is the coupling with the fixed-mean Poisson walk.
    pub fn limit(&self) -> Result<LimitProcess> {
        let e = self.extras;
        match self.regime {
            Regime::P1 => param("regime P1 has no continuous-time limit"),
            Regime::P2 => Ok(LimitProcess::Pdmp {
                y: e.y.unwrap_or_default(),
                c: self.c,
            }),
            Regime::P4 => Ok(LimitProcess::Drifted {
                y: e.y.unwrap_or_default(),
                r: e.r.unwrap_or_default(),
            }),
            Regime::P5 => Ok(LimitProcess::Walk {
                k: e.k.unwrap_or_default(),
                r: e.r.unwrap_or_default(),
            }),
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        param(format!("time {t} must be finite and >= 0"))
    }
}

/// One draw of `(X(t * time_scale) - centering) / space_scale`, with `X`
/// linearly interpolated between integer steps.
pub fn rescaled_draw(schedule: &ScalingSchedule, t: f64, stream: &mut Stream) -> f64 {
    let s = t * schedule.time_scale;
    let n = s.floor();
    let frac = s - n;
    let n = n as u64;
    let xs = x_at_steps(&schedule.params(), schedule.x0, &[n, n + 1], stream);
    // centre first: exact integers, so a jump-free path lands on the limit's
    // atom exactly
    let a = (xs[0] - schedule.centering) as f64;
    let b = (xs[1] - schedule.centering) as f64;
    let x = if frac == 0.0 { a } else { a + frac * (b - a) };
    x / schedule.space_scale
}

pub fn rescaled_marginal(
    schedule: &ScalingSchedule,
    t: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_time(t)?;
    Ok(par_replicates(seed, reps, |s| {
        rescaled_draw(schedule, t, &mut s.stream())
    }))
}

/// One draw of the limit process at time `t`.
pub fn limit_draw(limit: &LimitProcess, t: f64, stream: &mut Stream) -> Result<f64> {
    let path = match *limit {
        LimitProcess::Pdmp { y, c } => sample_pdmp(y, c, t, stream)?,
        LimitProcess::Drifted { y, r } => sample_drifted(y, r, t, stream)?,
        LimitProcess::Walk { k, r } => sample_ctrw(k, r, t, stream)?,
    };
    Ok(path.value_at(t))
}

pub fn limit_marginal(limit: &LimitProcess, t: f64, reps: usize, seed: u64) -> Result<Vec<f64>> {
    check_time(t)?;
    // surfaces parameter errors before the parallel run
    limit_draw(
        limit,
        0.0,
        &mut crate::rng::SeedSpec::new(seed, u64::MAX).stream(),
    )?;
    par_replicates(seed, reps, |s| limit_draw(limit, t, &mut s.stream()))
        .into_iter()
        .collect()
}

/// Thresholds and control sizes shared by the comparison experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub ks_cap: f64,
    pub level: f64,
    /// 0 skips the calibration and power controls.
    pub control_trials: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            ks_cap: KS_CAP,
            level: KS_LEVEL,
            control_trials: CONTROL_TRIALS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct KsRow {
    pub L: f64,
    pub t: f64,
    pub report: DistanceReport,
}

/// KS values across increasing `L` at one time. Non-increasing means each
/// value exceeds its predecessor by at most `tolerance`, the two-sample DKW
/// threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendVerdict {
    pub t: f64,
    pub ks: Vec<f64>,
    pub tolerance: f64,
    pub non_increasing: bool,
}

/// Outcome of repeated trials of a calibration or power control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub name: String,
    pub t: f64,
    pub trials: usize,
    /// Trials with the intended outcome: a pass for calibration, a failure
    /// for power.
    pub hits: usize,
    pub required: usize,
    pub pass: bool,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct MeanCheck {
    pub L: f64,
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub expected: f64,
    pub tolerance_se: f64,
    pub pass: bool,
}

/// `Binomial(floor(rL), c) / L^alpha` against mean `r` and its exact
/// variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ConcentrationCheck {
    pub L: f64,
    pub mean: f64,
    pub se_mean: f64,
    pub target_mean: f64,
    pub variance: f64,
    pub se_variance: f64,
    pub target_variance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct Grid {
    pub L: Vec<f64>,
    pub t: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub regime: Regime,
    pub params: ScheduleExtras,
    pub grid: Grid,
    pub reps: usize,
    pub seed: u64,
    pub options: CompareOptions,
    pub ks_table: Vec<KsRow>,
    pub trends: Vec<TrendVerdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drift: Vec<MeanCheck>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concentration: Vec<ConcentrationCheck>,
    pub controls: Vec<ControlReport>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

impl ScalingReport {
    pub fn verdict(&self, name: &str) -> Option<bool> {
        self.verdicts
            .iter()
            .find(|v| v.name == name)
            .map(|v| v.pass)
    }

    /// Rows at the largest `L`.
    pub fn final_rows(&self) -> impl Iterator<Item = &KsRow> {
        let last = self.grid.L.last().copied().unwrap_or(f64::NAN);
        self.ks_table.iter().filter(move |r| r.L == last)
    }
}

fn check_grids(l_grid: &[f64], t_grid: &[f64], reps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if l_grid.is_empty() || t_grid.is_empty() {
        return param("L and t grids must be non-empty");
    }
    if reps == 0 {
        return param("need at least one replicate");
    }
    for &t in t_grid {
        check_time(t)?;
    }
    let mut ls = l_grid.to_vec();
    ls.sort_by(f64::total_cmp);
    ls.dedup();
    Ok((ls, t_grid.to_vec()))
}

fn trend(t: f64, ks: Vec<f64>, tolerance: f64) -> TrendVerdict {
    let non_increasing = ks.windows(2).all(|w| w[1] <= w[0] + tolerance);
    TrendVerdict {
        t,
        ks,
        tolerance,
        non_increasing,
    }
}

/// Runs `trials` seeded KS comparisons and counts those on the intended
/// side of `threshold`.
#[allow(clippy::too_many_arguments)]
fn control<A, B>(
    name: &str,
    t: f64,
    trials: usize,
    seed: u64,
    threshold: f64,
    expect_pass: bool,
    notes: String,
    first: A,
    second: B,
) -> Result<ControlReport>
where
    A: Fn(u64) -> Result<Vec<f64>>,
    B: Fn(u64) -> Result<Vec<f64>>,
{
    let mut hits = 0;
    for trial in 0..trials as u64 {
        let a = first(derive_seed(seed, &[trial, 1]))?;
        let b = second(derive_seed(seed, &[trial, 2]))?;
        let passed = ks_two_sample(&a, &b)? <= threshold;
        if passed == expect_pass {
            hits += 1;
        }
    }
    let rate = if expect_pass {
        NULL_PASS_RATE
    } else {
        POWER_FAIL_RATE
    };
    let required = (rate * trials as f64).ceil() as usize;
    Ok(ControlReport {
        name: name.to_string(),
        t,
        trials,
        hits,
        required,
        pass: hits >= required,
        notes,
    })
}

struct Comparison {
    ks_table: Vec<KsRow>,
    trends: Vec<TrendVerdict>,
    samples: Vec<(f64, f64, Vec<f64>)>,
}

fn compare_marginals(
    regime: Regime,
    extras: ScheduleExtras,
    ls: &[f64],
    ts: &[f64],
    reps: usize,
    seed: u64,
    opts: &CompareOptions,
) -> Result<Comparison> {
    let dkw = dkw_threshold(reps, reps, opts.level);
    let mut ks_table = Vec::new();
    let mut samples = Vec::new();
    for &l in ls {
        let sched = build_schedule(regime, l, extras)?;
        let limit = sched.limit()?;
        for &t in ts {
            let tags = [TAG_CHAIN, l.to_bits(), t.to_bits()];
            let chain = rescaled_marginal(&sched, t, reps, derive_seed(seed, &tags))?;
            let tags = [TAG_LIMIT, l.to_bits(), t.to_bits()];
            let lim = limit_marginal(&limit, t, reps, derive_seed(seed, &tags))?;
            let ks = ks_two_sample(&chain, &lim)?;
            ks_table.push(KsRow {
                L: l,
                t,
                report: DistanceReport::new(
                    "ks_two_sample",
                    ks,
                    reps,
                    reps,
                    opts.ks_cap,
                    format!(
                        "rescaled chain vs limit; two-sample DKW at level {} is {dkw:.4}",
                        opts.level
                    ),
                ),
            });
            samples.push((l, t, chain));
        }
    }
    let trends = ts
        .iter()
        .map(|&t| {
            let ks = ks_table
                .iter()
                .filter(|r| r.t == t)
                .map(|r| r.report.value)
                .collect();
            trend(t, ks, dkw)
        })
        .collect();
    Ok(Comparison {
        ks_table,
        trends,
        samples,
    })
}

/// Null calibration of the limit-vs-limit comparison at each `t`, and power
/// of chain-vs-perturbed-limit at the largest `L`.
#[allow(clippy::too_many_arguments)]
fn standard_controls(
    sched: &ScalingSchedule,
    limit: LimitProcess,
    perturbed: LimitProcess,
    perturbation: &str,
    ts: &[f64],
    reps: usize,
    seed: u64,
    opts: &CompareOptions,
) -> Result<Vec<ControlReport>> {
    let mut out = Vec::new();
    if opts.control_trials == 0 {
        return Ok(out);
    }
    let dkw = dkw_threshold(reps, reps, opts.level);
    for &t in ts {
        let lim = |s| limit_marginal(&limit, t, reps, s);
        out.push(control(
            "null_calibration",
            t,
            opts.control_trials,
            derive_seed(seed, &[TAG_NULL, t.to_bits()]),
            dkw,
            true,
            format!("limit vs limit, KS <= two-sample DKW {dkw:.4}"),
            lim,
            lim,
        )?);
    }
    let threshold = dkw.max(opts.ks_cap);
    for &t in ts {
        out.push(control(
            "power",
            t,
            opts.control_trials,
            derive_seed(seed, &[TAG_POWER, t.to_bits()]),
            threshold,
            false,
            format!(
                "chain at L = {} vs limit with {perturbation}, KS > {threshold:.4}",
                sched.L
            ),
            |s| rescaled_marginal(sched, t, reps, s),
            |s| limit_marginal(&perturbed, t, reps, s),
        )?);
    }
    Ok(out)
}

fn controls_pass(controls: &[ControlReport]) -> bool {
    controls.iter().all(|c| c.pass)
}

fn finish(mut report: ScalingReport, extra: Vec<Verdict>) -> ScalingReport {
    let last = *report.grid.L.last().expect("grid is non-empty");
    let mut verdicts = vec![
        Verdict {
            name: "ks_non_increasing".into(),
            pass: report.trends.iter().all(|t| t.non_increasing),
        },
        Verdict {
            name: "ks_below_cap".into(),
            pass: report
                .ks_table
                .iter()
                .filter(|r| r.L == last)
                .all(|r| r.report.pass),
        },
    ];
    verdicts.extend(extra);
    if !report.controls.is_empty() {
        verdicts.push(Verdict {
            name: "controls".into(),
            pass: controls_pass(&report.controls),
        });
    }
    report.pass = verdicts.iter().all(|v| v.pass);
    report.verdicts = verdicts;
    report
}

/// Rescaled chain with `p = 1 - 1/L` against the drift-and-shrink process
/// started at `y`.
#[allow(non_snake_case)]
pub fn compare_prop2(
    c: f64,
    y: f64,
    L_grid: &[f64],
    t_grid: &[f64],
    reps: usize,
    seed: u64,
    opts: &CompareOptions,
) -> Result<ScalingReport> {
    let (ls, ts) = check_grids(L_grid, t_grid, reps)?;
    let extras = ScheduleExtras {
        c: Some(c),
        y: Some(y),
        ..Default::default()
    };
    let cmp = compare_marginals(Regime::P2, extras, &ls, &ts, reps, seed, opts)?;
    let sched = build_schedule(Regime::P2, *ls.last().unwrap(), extras)?;
    let dc = if c + PROP2_POWER_DC < 1.0 {
        PROP2_POWER_DC
    } else {
        -PROP2_POWER_DC
    };
    let controls = standard_controls(
        &sched,
        sched.limit()?,
        LimitProcess::Pdmp { y, c: c + dc },
        &format!("c = {}", c + dc),
        &ts,
        reps,
        seed,
        opts,
    )?;
    let report = ScalingReport {
        regime: Regime::P2,
        params: extras,
        grid: Grid { L: ls, t: ts },
        reps,
        seed,
        options: *opts,
        ks_table: cmp.ks_table,
        trends: cmp.trends,
        drift: Vec::new(),
        concentration: Vec::new(),
        controls,
        verdicts: Vec::new(),
        pass: false,
    };
    Ok(finish(report, Vec::new()))
}

/// `Binomial(floor(rL), L^(alpha-1)) / L^alpha`, the rescaled size of one
/// catastrophe near the centring level.
#[allow(non_snake_case)]
pub fn concentration_check(
    alpha: f64,
    r: f64,
    L: f64,
    reps: usize,
    seed: u64,
) -> Result<ConcentrationCheck> {
    let n = (r * L).floor() as u64;
    let c = 1.0 / L.powf(1.0 - alpha);
    let la = L.powf(alpha);
    let xs = par_replicates(seed, reps, |s| s.stream().binomial_raw(n, c) as f64 / la);
    let m = moments(&xs);
    let target_variance = n as f64 * c * (1.0 - c) / (la * la);
    let pass = (m.mean - r).abs() <= TOLERANCE_SE * m.se_mean
        && (m.variance - target_variance).abs() <= TOLERANCE_SE * m.se_variance;
    Ok(ConcentrationCheck {
        L,
        mean: m.mean,
        se_mean: m.se_mean,
        target_mean: r,
        variance: m.variance,
        se_variance: m.se_variance,
        target_variance,
        pass,
    })
}

/// Centred chain with `p = 1 - L^-alpha`, `c = L^(alpha-1)` against the
/// drifted process `y + t - r N_t`.
#[allow(non_snake_case)]
#[allow(clippy::too_many_arguments)]
pub fn compare_prop4(
    alpha: f64,
    r: f64,
    y: f64,
    L_grid: &[f64],
    t_grid: &[f64],
    reps: usize,
    seed: u64,
    opts: &CompareOptions,
) -> Result<ScalingReport> {
    let (ls, ts) = check_grids(L_grid, t_grid, reps)?;
    let extras = ScheduleExtras {
        alpha: Some(alpha),
        r: Some(r),
        y: Some(y),
        ..Default::default()
    };
    let cmp = compare_marginals(Regime::P4, extras, &ls, &ts, reps, seed, opts)?;
    let last = *ls.last().unwrap();
    let drift: Vec<MeanCheck> = cmp
        .samples
        .iter()
        .filter(|(l, _, _)| *l == last)
        .map(|(l, t, xs)| {
            let m = moments(xs);
            let expected = y + (1.0 - r) * t;
            MeanCheck {
                L: *l,
                t: *t,
                mean: m.mean,
                se: m.se_mean,
                expected,
                tolerance_se: TOLERANCE_SE,
                pass: (m.mean - expected).abs() <= TOLERANCE_SE * m.se_mean,
            }
        })
        .collect();
    let concentration = ls
        .iter()
        .map(|&l| {
            concentration_check(
                alpha,
                r,
                l,
                reps,
                derive_seed(seed, &[TAG_BULK, l.to_bits()]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let sched = build_schedule(Regime::P4, last, extras)?;
    let controls = standard_controls(
        &sched,
        sched.limit()?,
        LimitProcess::Drifted {
            y,
            r: r + PROP4_POWER_DR,
        },
        &format!("r = {}", r + PROP4_POWER_DR),
        &ts,
        reps,
        seed,
        opts,
    )?;
    let extra = vec![
        Verdict {
            name: "drift".into(),
            pass: drift.iter().all(|d| d.pass),
        },
        Verdict {
            name: "concentration".into(),
            pass: concentration.iter().all(|c| c.pass),
        },
    ];
    let report = ScalingReport {
        regime: Regime::P4,
        params: extras,
        grid: Grid { L: ls, t: ts },
        reps,
        seed,
        options: *opts,
        ks_table: cmp.ks_table,
        trends: cmp.trends,
        drift,
        concentration,
        controls,
        verdicts: Vec::new(),
        pass: false,
    };
    Ok(finish(report, extra))
}

/// The first change of state: how long it took and which way it went.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirstJump {
    /// Steps up to and including the change.
    pub steps: u64,
    /// Signed size of the change.
    pub size: i64,
}

/// Steps the chain one at a time until its state changes.
pub fn chain_first_jump(
    params: &ChainParams,
    x0: i64,
    cap: u64,
    stream: &mut Stream,
) -> Result<FirstJump> {
    let mut n = 0;
    while n < cap {
        n += 1;
        let next = step_x(x0, params, stream)?;
        if next != x0 {
            return Ok(FirstJump {
                steps: n,
                size: next - x0,
            });
        }
    }
    Err(Error::Numeric(format!(
        "no change of state within {cap} steps"
    )))
}

/// The chain's first change drawn directly: a Geometric holding time with
/// the per-step change probability, then a birth or a catastrophe
/// conditioned to be non-empty. Same law as [`chain_first_jump`].
pub fn direct_first_jump(params: &ChainParams, x0: i64, stream: &mut Stream) -> Result<FirstJump> {
    if x0 < 1 {
        return param(format!("state {x0} must be >= 1"));
    }
    let (p, c) = (params.p(), params.c());
    let hit = -((x0 as f64) * (-c).ln_1p()).exp_m1();
    let change = p + (1.0 - p) * hit;
    let steps = stream.geometric(change)?;
    let size = if stream.bernoulli(p / change)? {
        1
    } else {
        -(stream.binomial_at_least_one(x0 as u64, c)? as i64)
    };
    Ok(FirstJump { steps, size })
}

/// Two independent clocks: births after Geometric(`p`) steps and
/// catastrophes after Geometric(`1 - (1 - c)^x0`) steps; the earlier one
/// fires (a birth on ties). A diagnostic for the two-clock picture, not the
/// chain itself.
pub fn two_clock_first_jump(
    params: &ChainParams,
    x0: i64,
    stream: &mut Stream,
) -> Result<FirstJump> {
    if x0 < 1 {
        return param(format!("state {x0} must be >= 1"));
    }
    let (p, c) = (params.p(), params.c());
    let hit = -((x0 as f64) * (-c).ln_1p()).exp_m1();
    let births = stream.geometric(p)?;
    let drops = stream.geometric(hit)?;
    Ok(if births <= drops {
        FirstJump {
            steps: births,
            size: 1,
        }
    } else {
        FirstJump {
            steps: drops,
            size: -(stream.binomial_at_least_one(x0 as u64, c)? as i64),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyCheck {
    pub successes: u64,
    pub trials: u64,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub target: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigJumpCheck {
    /// Left jumps of size at least 2.
    pub big: u64,
    pub left: u64,
    pub frequency: f64,
    /// `6 r / L^gamma`.
    pub bound: f64,
    /// `sqrt(bound (1 - bound) / left)`.
    pub sigma: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop5Report {
    pub regime: Regime,
    pub schedule: ScalingSchedule,
    pub reps: usize,
    pub seed: u64,
    pub options: CompareOptions,
    /// First holding time over `L^gamma` against `Exp(1 + r)`.
    pub holding: DistanceReport,
    pub right_jumps: FrequencyCheck,
    pub big_left_jumps: BigJumpCheck,
    /// Holding times of the two-clock construction against the chain's.
    /// Reported, not judged.
    pub two_clock: DistanceReport,
    pub controls: Vec<ControlReport>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

/// First holding time, jump direction and small-jump property of the chain
/// with `p = L^-gamma`, `c = L^(-1-gamma)` started at `floor(rL) + k`.
#[allow(non_snake_case)]
pub fn compare_prop5(
    gamma: f64,
    r: f64,
    k: i64,
    L: f64,
    reps: usize,
    seed: u64,
    opts: &CompareOptions,
) -> Result<Prop5Report> {
    if reps == 0 {
        return param("need at least one replicate");
    }
    let extras = ScheduleExtras {
        gamma: Some(gamma),
        r: Some(r),
        k: Some(k),
        ..Default::default()
    };
    let sched = build_schedule(Regime::P5, L, extras)?;
    let params = sched.params();
    let scale = sched.time_scale;
    let cap = (HOLDING_CAP * scale).ceil() as u64;
    let rate = 1.0 + r;
    let jumps = par_replicates(derive_seed(seed, &[TAG_CHAIN]), reps, |s| {
        chain_first_jump(&params, sched.x0, cap, &mut s.stream())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let holding: Vec<f64> = jumps.iter().map(|j| j.steps as f64 / scale).collect();
    let reference = par_replicates(derive_seed(seed, &[TAG_REFERENCE]), reps, |s| {
        s.stream().standard_exponential() / rate
    });
    let dkw = dkw_threshold(reps, reps, opts.level);
    let holding_report = DistanceReport::new(
        "ks_two_sample",
        ks_two_sample(&holding, &reference)?,
        reps,
        reps,
        dkw + HOLDING_SLACK,
        format!("holding time / L^gamma vs Exp({rate}); DKW {dkw:.4} + slack {HOLDING_SLACK}"),
    );

    let rights = jumps.iter().filter(|j| j.size > 0).count() as u64;
    let (lo, hi) = binomial_ci(rights, reps as u64, JUMP_CI_LEVEL);
    let target = 1.0 / rate;
    let right_jumps = FrequencyCheck {
        successes: rights,
        trials: reps as u64,
        frequency: rights as f64 / reps as f64,
        ci_low: lo,
        ci_high: hi,
        target,
        pass: lo <= target && target <= hi,
    };

    let left = reps as u64 - rights;
    let big = jumps.iter().filter(|j| j.size <= -2).count() as u64;
    let bound = 6.0 * r / scale;
    let sigma = if left > 0 {
        (bound * (1.0 - bound) / left as f64).sqrt()
    } else {
        0.0
    };
    let frequency = if left > 0 {
        big as f64 / left as f64
    } else {
        0.0
    };
    let threshold = bound + TOLERANCE_SE * sigma;
    let big_left_jumps = BigJumpCheck {
        big,
        left,
        frequency,
        bound,
        sigma,
        threshold,
        pass: frequency <= threshold,
    };

    let clocks = par_replicates(derive_seed(seed, &[TAG_TWO_CLOCK]), reps, |s| {
        two_clock_first_jump(&params, sched.x0, &mut s.stream()).map(|j| j.steps as f64 / scale)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let two_clock = DistanceReport::new(
        "ks_two_sample",
        ks_two_sample(&clocks, &holding)?,
        reps,
        reps,
        dkw,
        "two-clock holding time vs chain holding time (diagnostic)",
    );

    let mut controls = Vec::new();
    if opts.control_trials > 0 {
        let exp = |rate: f64| {
            move |s: u64| -> Result<Vec<f64>> {
                Ok(par_replicates(s, reps, |sp| {
                    sp.stream().standard_exponential() / rate
                }))
            }
        };
        controls.push(control(
            "null_calibration",
            0.0,
            opts.control_trials,
            derive_seed(seed, &[TAG_NULL]),
            dkw,
            true,
            format!("Exp({rate}) vs Exp({rate}), KS <= two-sample DKW {dkw:.4}"),
            exp(rate),
            exp(rate),
        )?);
        let direct = |s: u64| -> Result<Vec<f64>> {
            par_replicates(s, reps, |sp| {
                direct_first_jump(&params, sched.x0, &mut sp.stream())
                    .map(|j| j.steps as f64 / scale)
            })
            .into_iter()
            .collect()
        };
        let perturbed = PROP5_POWER_RATE * rate;
        controls.push(control(
            "power",
            0.0,
            opts.control_trials,
            derive_seed(seed, &[TAG_POWER]),
            dkw + HOLDING_SLACK,
            false,
            format!(
                "chain holding time vs Exp({perturbed}), KS > {:.4}",
                dkw + HOLDING_SLACK
            ),
            direct,
            exp(perturbed),
        )?);
    }

    let mut verdicts = vec![
        Verdict {
            name: "holding_time".into(),
            pass: holding_report.pass,
        },
        Verdict {
            name: "right_jump_frequency".into(),
            pass: right_jumps.pass,
        },
        Verdict {
            name: "big_left_jumps".into(),
            pass: big_left_jumps.pass,
        },
    ];
    if !controls.is_empty() {
        verdicts.push(Verdict {
            name: "controls".into(),
            pass: controls_pass(&controls),
        });
    }
    let pass = verdicts.iter().all(|v| v.pass);
    Ok(Prop5Report {
        regime: Regime::P5,
        schedule: sched,
        reps,
        seed,
        options: *opts,
        holding: holding_report,
        right_jumps,
        big_left_jumps,
        two_clock,
        controls,
        verdicts,
        pass,
    })
}
