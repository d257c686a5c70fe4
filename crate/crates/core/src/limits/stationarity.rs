//! Checks that the perpetuity is the invariant law of the drift-and-shrink
//! process, and that the local extrema have the laws the inspection paradox
//! predicts: `m + E = M` in distribution, with `M` the perpetuity.

use serde::{Deserialize, Serialize};

use super::{
    generator_apply, invariant_laplace, laplace_functional_residual, perpetuity_sample,
    sample_pdmp, PerpetuityParams, DEFAULT_TAIL_TOL,
};
use crate::chains::{step_extrema, Extremum};
use crate::error::{param, Result};
use crate::rng::{derive_seed, par_replicates, Stream};
use crate::stats::{dkw_threshold, ks_two_sample, moments, DistanceReport};

pub const LAPLACE_TERMS: usize = 200;
pub const LAPLACE_TOL: f64 = 1e-10;
pub const STATIONARITY_LEVEL: f64 = 0.01;
pub const MEAN_TOL_SE: f64 = 3.0;
pub const VARIANCE_TOL_SE: f64 = 5.0;
pub const GENERATOR_TOL_SE: f64 = 4.0;

const TAG_MOMENTS: u64 = 0x3001;
const TAG_START: u64 = 0x3002;
const TAG_FRESH: u64 = 0x3003;
const TAG_MAX: u64 = 0x3004;
const TAG_MIN: u64 = 0x3005;
const TAG_PERPETUITY: u64 = 0x3006;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityConfig {
    pub c: f64,
    /// `c` values for the Laplace functional equation.
    pub laplace_cs: Vec<f64>,
    pub thetas: Vec<f64>,
    pub terms: usize,
    /// Sample size for the moment and generator checks.
    pub moment_samples: usize,
    /// Per-sample size of each two-sample KS test.
    pub ks_samples: usize,
    pub times: Vec<f64>,
    /// `theta` of the test function `exp(-theta x)` in the generator check.
    pub generator_theta: f64,
    pub level: f64,
    pub seed: u64,
}

impl StationarityConfig {
    pub fn new(c: f64, ks_samples: usize, moment_samples: usize, seed: u64) -> Self {
        StationarityConfig {
            c,
            laplace_cs: vec![0.1, 0.5, 0.9],
            thetas: vec![0.1, 1.0, 10.0],
            terms: LAPLACE_TERMS,
            moment_samples,
            ks_samples,
            times: vec![1.0, 5.0],
            generator_theta: 1.0,
            level: STATIONARITY_LEVEL,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceRow {
    pub c: f64,
    pub theta: f64,
    pub terms: usize,
    pub phi: f64,
    pub residual: f64,
    pub pass: bool,
}

/// An estimate compared with a target to within `tolerance_se` standard
/// errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateCheck {
    pub statistic: String,
    pub estimate: f64,
    pub se: f64,
    pub target: f64,
    pub tolerance_se: f64,
    pub pass: bool,
}

impl EstimateCheck {
    pub fn new(
        statistic: impl Into<String>,
        estimate: f64,
        se: f64,
        target: f64,
        tolerance_se: f64,
    ) -> Self {
        EstimateCheck {
            statistic: statistic.into(),
            estimate,
            se,
            target,
            tolerance_se,
            pass: (estimate - target).abs() <= tolerance_se * se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedReport {
    pub t: f64,
    pub report: DistanceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub config: StationarityConfig,
    pub perpetuity_terms: usize,
    pub laplace: Vec<LaplaceRow>,
    pub mean: EstimateCheck,
    pub variance: EstimateCheck,
    pub generator: EstimateCheck,
    pub stationarity: Vec<TimedReport>,
    pub max_law: DistanceReport,
    pub identity: DistanceReport,
    pub pass: bool,
}

impl StationarityReport {
    pub fn laplace_pass(&self) -> bool {
        self.laplace.iter().all(|r| r.pass)
    }

    pub fn moments_pass(&self) -> bool {
        self.mean.pass && self.variance.pass
    }

    pub fn stationarity_pass(&self) -> bool {
        self.stationarity.iter().all(|r| r.report.pass)
    }
}

/// Iterates the extrema recursion `steps` times from 0.
fn extremum_after(kind: Extremum, c: f64, steps: usize, stream: &mut Stream) -> Result<f64> {
    (0..steps).try_fold(0.0, |v, _| step_extrema(v, kind, c, stream))
}

fn collect<T>(v: Vec<Result<T>>) -> Result<Vec<T>> {
    v.into_iter().collect()
}

pub fn run_stationarity_suite(cfg: &StationarityConfig) -> Result<StationarityReport> {
    if !(cfg.c > 0.0 && cfg.c < 1.0) {
        return param(format!("c = {} must lie in (0, 1)", cfg.c));
    }
    if cfg.ks_samples == 0 || cfg.moment_samples < 2 {
        return param("need at least one KS sample and two moment samples");
    }
    let c = cfg.c;
    let pp = PerpetuityParams::new(c, DEFAULT_TAIL_TOL)?;

    let mut laplace = Vec::new();
    for &lc in &cfg.laplace_cs {
        for &theta in &cfg.thetas {
            let residual = laplace_functional_residual(theta, lc, cfg.terms)?;
            laplace.push(LaplaceRow {
                c: lc,
                theta,
                terms: cfg.terms,
                phi: invariant_laplace(theta, lc, cfg.terms)?,
                residual,
                pass: residual < LAPLACE_TOL,
            });
        }
    }

    let xs = par_replicates(
        derive_seed(cfg.seed, &[TAG_MOMENTS]),
        cfg.moment_samples,
        |s| perpetuity_sample(&pp, &mut s.stream()),
    );
    let m = moments(&xs);
    let mean = EstimateCheck::new("perpetuity mean", m.mean, m.se_mean, 1.0 / c, MEAN_TOL_SE);
    let variance = EstimateCheck::new(
        "perpetuity variance",
        m.variance,
        m.se_variance,
        1.0 / (c * (2.0 - c)),
        VARIANCE_TOL_SE,
    );
    let th = cfg.generator_theta;
    let f = move |x: f64| (-th * x).exp();
    let df = move |x: f64| -th * (-th * x).exp();
    let gen = xs
        .iter()
        .map(|&x| generator_apply(&f, Some(&df), x, c))
        .collect::<Result<Vec<_>>>()?;
    let gm = moments(&gen);
    let generator = EstimateCheck::new(
        "generator of exp(-theta x)",
        gm.mean,
        gm.se_mean,
        0.0,
        GENERATOR_TOL_SE,
    );

    let n = cfg.ks_samples;
    let threshold = dkw_threshold(n, n, cfg.level);
    let mut stationarity = Vec::new();
    for &t in &cfg.times {
        let tag = t.to_bits();
        let moved = collect(par_replicates(
            derive_seed(cfg.seed, &[TAG_START, tag]),
            n,
            |s| {
                let mut st = s.stream();
                let y0 = perpetuity_sample(&pp, &mut st);
                sample_pdmp(y0, c, t, &mut st).map(|p| p.value_at(t))
            },
        ))?;
        let fresh = par_replicates(derive_seed(cfg.seed, &[TAG_FRESH, tag]), n, |s| {
            perpetuity_sample(&pp, &mut s.stream())
        });
        stationarity.push(TimedReport {
            t,
            report: DistanceReport::new(
                "ks_two_sample",
                ks_two_sample(&moved, &fresh)?,
                n,
                n,
                threshold,
                format!("PDMP at t = {t} from a perpetuity draw vs fresh perpetuity"),
            ),
        });
    }

    let burn = pp.terms + 1;
    let maxima = collect(par_replicates(derive_seed(cfg.seed, &[TAG_MAX]), n, |s| {
        extremum_after(Extremum::Max, c, burn, &mut s.stream())
    }))?;
    let perp = par_replicates(derive_seed(cfg.seed, &[TAG_PERPETUITY]), n, |s| {
        perpetuity_sample(&pp, &mut s.stream())
    });
    let max_law = DistanceReport::new(
        "ks_two_sample",
        ks_two_sample(&maxima, &perp)?,
        n,
        n,
        threshold,
        format!("local maxima after {burn} recursion steps vs perpetuity"),
    );
    let shifted_minima = collect(par_replicates(derive_seed(cfg.seed, &[TAG_MIN]), n, |s| {
        let mut st = s.stream();
        extremum_after(Extremum::Min, c, burn, &mut st).map(|m| m + st.standard_exponential())
    }))?;
    let identity = DistanceReport::new(
        "ks_two_sample",
        ks_two_sample(&shifted_minima, &maxima)?,
        n,
        n,
        threshold,
        "local minimum plus an independent Exp(1) vs local maximum",
    );

    let mut report = StationarityReport {
        config: cfg.clone(),
        perpetuity_terms: pp.terms,
        laplace,
        mean,
        variance,
        generator,
        stationarity,
        max_law,
        identity,
        pass: false,
    };
    report.pass = report.laplace_pass()
        && report.moments_pass()
        && report.generator.pass
        && report.stationarity_pass()
        && report.max_law.pass
        && report.identity.pass;
    Ok(report)
}
