use std::error::Error;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, Write};

use serde::Serialize;

use catwalk::chains::{simulate, ChainKind, ChainParams};
use catwalk::coupling::{run_coupled_prop1_grid, DEFAULT_UNION_SLACK, PROP1_CAP};
use catwalk::limits::{
    invariant_laplace, laplace_functional_residual, laplace_truncation_bound, perpetuity_sample,
    run_stationarity_suite, EstimateCheck, PerpetuityParams, StationarityConfig, DEFAULT_TAIL_TOL,
    LAPLACE_TOL,
};
use catwalk::rng::{par_replicates, DEFAULT_SEED};
use catwalk::scaling::{
    compare_prop2, compare_prop4, compare_prop5, CompareOptions, ScalingReport,
};
use catwalk::stats::moments;
use catwalk::SeedSpec;

use crate::config::{Envelope, RunConfig};
use crate::{Cli, Command, Format, InvariantArgs, KindArg, SimulateArgs, VerifyArgs};

type Res<T> = Result<T, Box<dyn Error>>;

pub const FIGURE1_P: f64 = 0.99;
pub const FIGURE1_C: f64 = 0.1;
pub const FIGURE1_X0: i64 = 2000;
pub const FIGURE1_STEPS: u64 = 100_000;

const INVARIANT_REPS: usize = 100_000;
const MEAN_TOL_SE: f64 = 3.0;
const VARIANCE_TOL_SE: f64 = 5.0;

/// Runs the command and writes its output. `Ok(false)` means a check failed.
pub fn run(cli: &Cli) -> Res<bool> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let (bytes, pass) = match &cli.command {
        Command::Simulate(a) => simulate_cmd(cli, seed, a, "simulate")?,
        Command::Figure1 => {
            let a = SimulateArgs {
                p: FIGURE1_P,
                c: FIGURE1_C,
                x0: FIGURE1_X0,
                steps: FIGURE1_STEPS,
                kind: KindArg::X,
            };
            simulate_cmd(cli, seed, &a, "figure1")?
        }
        Command::Verify(a) => verify_cmd(cli, seed, a)?,
        Command::Invariant(a) => invariant_cmd(cli, seed, a)?,
    };
    match &cli.out {
        Some(path) => File::create(path)?.write_all(&bytes)?,
        None => {
            let mut out = io::stdout().lock();
            out.write_all(&bytes)?;
            out.flush()?;
        }
    }
    Ok(pass)
}

fn json<T: Serialize>(config: &RunConfig, pass: Option<bool>, report: &T) -> Res<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(&Envelope::new(config, pass, report))?;
    v.push(b'\n');
    Ok(v)
}

fn simulate_cmd(cli: &Cli, seed: u64, a: &SimulateArgs, command: &str) -> Res<(Vec<u8>, bool)> {
    let format = cli.format.unwrap_or(Format::Csv);
    let kind = match a.kind {
        KindArg::X => ChainKind::X,
        KindArg::Y => ChainKind::Y,
        KindArg::U => ChainKind::U,
    };
    let config = RunConfig {
        command: command.into(),
        seed,
        format: format.name().into(),
        kind: Some(format!("{:?}", kind).to_lowercase()),
        p: Some(a.p),
        c: Some(a.c),
        x0: Some(a.x0),
        steps: Some(a.steps),
        ..Default::default()
    };
    let params = ChainParams::new(a.p, a.c)?;
    let path = simulate(kind, &params, a.x0, a.steps, SeedSpec::new(seed, 0))?;
    let bytes = match format {
        Format::Csv => {
            let mut buf = Vec::with_capacity(16 * path.values.len());
            path.write_csv(&mut buf)?;
            buf
        }
        Format::Json => json(&config, None, &path)?,
    };
    Ok((bytes, true))
}

fn verify_cmd(cli: &Cli, seed: u64, a: &VerifyArgs) -> Res<(Vec<u8>, bool)> {
    let format = cli.format.unwrap_or(Format::Json);
    let mut config = RunConfig {
        command: "verify".into(),
        prop: Some(a.prop),
        seed,
        format: format.name().into(),
        ..Default::default()
    };
    let opts = CompareOptions {
        control_trials: a
            .controls
            .unwrap_or(CompareOptions::default().control_trials),
        ..Default::default()
    };
    let decades = || vec![1e2, 1e3, 1e4];
    match a.prop {
        1 => {
            let p = a.p.unwrap_or(0.5);
            let t = a.T.unwrap_or(50);
            let ls = a.L.clone().unwrap_or_else(decades);
            let reps = cli.reps.unwrap_or(2000);
            let slack = a.M.unwrap_or(DEFAULT_UNION_SLACK);
            config.p = Some(p);
            config.T = Some(t);
            config.L = Some(ls.clone());
            config.reps = Some(reps);
            config.M = Some(slack);
            let table = run_coupled_prop1_grid(&ls, p, t, reps, seed, slack, PROP1_CAP)?;
            let pass = table.non_increasing && table.below_cap;
            let bytes = match format {
                Format::Json => json(&config, Some(pass), &table)?,
                Format::Csv => {
                    let mut s = String::from("L,x0,p_hat,ci_low,ci_high,union_bound\n");
                    for r in &table.rows {
                        writeln!(
                            s,
                            "{},{},{},{},{},{}",
                            r.L, r.x0, r.p_hat, r.ci_low, r.ci_high, r.union_bound
                        )?;
                    }
                    s.into_bytes()
                }
            };
            Ok((bytes, pass))
        }
        2 => {
            let c = a.c.unwrap_or(0.5);
            let y = a.y.unwrap_or(1.0);
            let ls = a.L.clone().unwrap_or_else(decades);
            let ts = a.t.clone().unwrap_or_else(|| vec![0.5, 1.0, 2.0]);
            let reps = cli.reps.unwrap_or(10_000);
            config.c = Some(c);
            config.y = Some(y);
            config.L = Some(ls.clone());
            config.t = Some(ts.clone());
            config.reps = Some(reps);
            config.controls = Some(opts.control_trials);
            let report = compare_prop2(c, y, &ls, &ts, reps, seed, &opts)?;
            scaling_output(&config, format, &report)
        }
        3 => {
            let c = a.c.unwrap_or(0.5);
            let reps = cli.reps.unwrap_or(10_000);
            let moment_reps = a.moment_reps.unwrap_or(1_000_000);
            let mut cfg = StationarityConfig::new(c, reps, moment_reps, seed);
            if let Some(n) = a.N {
                cfg.terms = n;
            }
            if let Some(th) = &a.theta {
                cfg.thetas = th.clone();
            }
            if let Some(ts) = &a.t {
                cfg.times = ts.clone();
            }
            config.c = Some(c);
            config.reps = Some(reps);
            config.moment_reps = Some(moment_reps);
            config.N = Some(cfg.terms);
            config.theta = Some(cfg.thetas.clone());
            config.t = Some(cfg.times.clone());
            let report = run_stationarity_suite(&cfg)?;
            let bytes = match format {
                Format::Json => json(&config, Some(report.pass), &report)?,
                Format::Csv => {
                    let mut s = String::from("check,value,threshold,pass\n");
                    for l in &report.laplace {
                        writeln!(
                            s,
                            "laplace_c{}_theta{},{},{},{}",
                            l.c, l.theta, l.residual, LAPLACE_TOL, l.pass
                        )?;
                    }
                    for e in [&report.mean, &report.variance, &report.generator] {
                        estimate_row(&mut s, e)?;
                    }
                    for r in &report.stationarity {
                        let d = &r.report;
                        writeln!(
                            s,
                            "stationarity_t{},{},{},{}",
                            r.t, d.value, d.threshold, d.pass
                        )?;
                    }
                    for (name, d) in [("max_law", &report.max_law), ("identity", &report.identity)]
                    {
                        writeln!(s, "{name},{},{},{}", d.value, d.threshold, d.pass)?;
                    }
                    s.into_bytes()
                }
            };
            Ok((bytes, report.pass))
        }
        4 => {
            let alpha = a.alpha.unwrap_or(0.5);
            let r = a.r.unwrap_or(1.0);
            let y = a.y.unwrap_or(0.0);
            let ls = a.L.clone().unwrap_or_else(decades);
            let ts = a.t.clone().unwrap_or_else(|| vec![1.0]);
            let reps = cli.reps.unwrap_or(10_000);
            config.alpha = Some(alpha);
            config.r = Some(r);
            config.y = Some(y);
            config.L = Some(ls.clone());
            config.t = Some(ts.clone());
            config.reps = Some(reps);
            config.controls = Some(opts.control_trials);
            let report = compare_prop4(alpha, r, y, &ls, &ts, reps, seed, &opts)?;
            scaling_output(&config, format, &report)
        }
        5 => {
            let gamma = a.gamma.unwrap_or(1.0);
            let r = a.r.unwrap_or(1.0);
            let k = a.k.unwrap_or(0);
            let l = match a.L.as_deref() {
                None => 1e4,
                Some([l]) => *l,
                Some(_) => return Err("verify 5 takes a single --L".into()),
            };
            let reps = cli.reps.unwrap_or(10_000);
            config.gamma = Some(gamma);
            config.r = Some(r);
            config.k = Some(k);
            config.L = Some(vec![l]);
            config.reps = Some(reps);
            config.controls = Some(opts.control_trials);
            let report = compare_prop5(gamma, r, k, l, reps, seed, &opts)?;
            let bytes = match format {
                Format::Json => json(&config, Some(report.pass), &report)?,
                Format::Csv => {
                    let mut s = String::from("check,value,threshold,pass\n");
                    let h = &report.holding;
                    writeln!(s, "holding_time_ks,{},{},{}", h.value, h.threshold, h.pass)?;
                    let j = &report.right_jumps;
                    writeln!(
                        s,
                        "right_jump_frequency,{},{}..{},{}",
                        j.frequency, j.ci_low, j.ci_high, j.pass
                    )?;
                    let b = &report.big_left_jumps;
                    writeln!(
                        s,
                        "big_left_jump_frequency,{},{},{}",
                        b.frequency, b.threshold, b.pass
                    )?;
                    for c in &report.controls {
                        writeln!(s, "{},{},{},{}", c.name, c.hits, c.required, c.pass)?;
                    }
                    s.into_bytes()
                }
            };
            Ok((bytes, report.pass))
        }
        other => Err(format!("no proposition {other}").into()),
    }
}

fn estimate_row(s: &mut String, e: &EstimateCheck) -> std::fmt::Result {
    writeln!(
        s,
        "{},{},{},{}",
        e.statistic.replace(' ', "_"),
        e.estimate,
        e.tolerance_se * e.se,
        e.pass
    )
}

fn scaling_output(
    config: &RunConfig,
    format: Format,
    report: &ScalingReport,
) -> Res<(Vec<u8>, bool)> {
    let bytes = match format {
        Format::Json => json(config, Some(report.pass), report)?,
        Format::Csv => {
            let mut s = String::from("L,t,ks,threshold,pass\n");
            for row in &report.ks_table {
                let d = &row.report;
                writeln!(
                    s,
                    "{},{},{},{},{}",
                    row.L, row.t, d.value, d.threshold, d.pass
                )?;
            }
            s.into_bytes()
        }
    };
    Ok((bytes, report.pass))
}

#[derive(Debug, Serialize)]
struct LaplaceLine {
    theta: f64,
    phi: f64,
    residual: f64,
    truncation_bound: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct InvariantReport {
    c: f64,
    terms: usize,
    perpetuity_terms: usize,
    rows: Vec<LaplaceLine>,
    mean: EstimateCheck,
    variance: EstimateCheck,
}

fn invariant_cmd(cli: &Cli, seed: u64, a: &InvariantArgs) -> Res<(Vec<u8>, bool)> {
    let format = cli.format.unwrap_or(Format::Json);
    let reps = cli.reps.unwrap_or(INVARIANT_REPS);
    if reps < 2 {
        return Err("need at least two replicates".into());
    }
    let config = RunConfig {
        command: "invariant".into(),
        seed,
        reps: Some(reps),
        format: format.name().into(),
        c: Some(a.c),
        theta: Some(a.theta.clone()),
        N: Some(a.N),
        ..Default::default()
    };
    let rows = a
        .theta
        .iter()
        .map(|&theta| {
            let residual = laplace_functional_residual(theta, a.c, a.N)?;
            Ok(LaplaceLine {
                theta,
                phi: invariant_laplace(theta, a.c, a.N)?,
                residual,
                truncation_bound: laplace_truncation_bound(theta, a.c, a.N),
                pass: residual < LAPLACE_TOL,
            })
        })
        .collect::<catwalk::Result<Vec<_>>>()?;
    let pp = PerpetuityParams::new(a.c, DEFAULT_TAIL_TOL)?;
    let xs = par_replicates(seed, reps, |s| perpetuity_sample(&pp, &mut s.stream()));
    let m = moments(&xs);
    let report = InvariantReport {
        c: a.c,
        terms: a.N,
        perpetuity_terms: pp.terms,
        rows,
        mean: EstimateCheck::new("perpetuity mean", m.mean, m.se_mean, 1.0 / a.c, MEAN_TOL_SE),
        variance: EstimateCheck::new(
            "perpetuity variance",
            m.variance,
            m.se_variance,
            1.0 / (a.c * (2.0 - a.c)),
            VARIANCE_TOL_SE,
        ),
    };
    let pass = report.rows.iter().all(|r| r.pass) && report.mean.pass && report.variance.pass;
    let bytes = match format {
        Format::Json => json(&config, Some(pass), &report)?,
        Format::Csv => {
            let mut s = String::from("theta,phi,residual,truncation_bound\n");
            for r in &report.rows {
                writeln!(
                    s,
                    "{},{},{},{}",
                    r.theta, r.phi, r.residual, r.truncation_bound
                )?;
            }
            s.into_bytes()
        }
    };
    Ok((bytes, pass))
}
