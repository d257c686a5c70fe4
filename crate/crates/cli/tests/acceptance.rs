//! Acceptance criteria. Prints one PASS/FAIL line per criterion, with
//! indented detail lines, and exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use catwalk::chains::{simulate, step_x, ChainKind, ChainParams};
use catwalk::coupling::{
    bin_poisson_bound_table, poisson_poisson_bound_table, run_coupled_prop1_grid, BOUND_GRID_CS,
    BOUND_GRID_MEANS, BOUND_GRID_STATES, DEFAULT_UNION_SLACK, PROP1_CAP,
};
use catwalk::limits::{run_stationarity_suite, StationarityConfig};
use catwalk::rng::{derive_seed, par_replicates, DEFAULT_SEED};
use catwalk::scaling::{compare_prop2, compare_prop4, compare_prop5, CompareOptions};
use catwalk::stats::exact_distribution;

const SEED: u64 = DEFAULT_SEED;
const DECADES: [f64; 3] = [1e2, 1e3, 1e4];

type Criterion = (u8, &'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            pass: true,
            details: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details
            .push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn figure1() -> Outcome {
    const RUNS: usize = 100;
    let params = ChainParams::new(0.99, 0.1).unwrap();
    let (lo_mean, hi_mean) = (990.0 * 0.95, 990.0 * 1.05);
    let results = par_replicates(derive_seed(SEED, &[1]), RUNS, |s| {
        let path = simulate(ChainKind::X, &params, 2000, 100_000, s).unwrap();
        let window = &path.values[20_000..];
        let mean = window.iter().sum::<i64>() as f64 / window.len() as f64;
        let entry = path.values.iter().position(|v| (940..=1040).contains(v));
        (mean, entry)
    });
    let good = results
        .iter()
        .filter(|(m, e)| *m >= lo_mean && *m <= hi_mean && e.is_some_and(|n| n <= 20_000))
        .count();
    let means: Vec<f64> = results.iter().map(|r| r.0).collect();
    let latest = results.iter().filter_map(|r| r.1).max();
    let centre = means.iter().sum::<f64>() / RUNS as f64;
    let sd = (means.iter().map(|m| (m - centre).powi(2)).sum::<f64>() / (RUNS - 1) as f64).sqrt();
    let mut o = Outcome::new();
    o.check(
        good >= 95,
        format!(
            "{good}/{RUNS} runs have window mean in [{lo_mean}, {hi_mean}] and enter [940, 1040] by step 20000 \
             (means {:.1}..{:.1}, average {centre:.1}, sd {sd:.1}; latest entry {latest:?})",
            means.iter().cloned().fold(f64::INFINITY, f64::min),
            means.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ),
    );
    o
}

fn prop1() -> Outcome {
    let t = run_coupled_prop1_grid(
        &DECADES,
        0.5,
        50,
        2000,
        SEED,
        DEFAULT_UNION_SLACK,
        PROP1_CAP,
    )
    .unwrap();
    let mut o = Outcome::new();
    for r in &t.rows {
        o.details.push(format!(
            "     L = {:>6}: p_hat = {:.4} [{:.4}, {:.4}]",
            r.L, r.p_hat, r.ci_low, r.ci_high
        ));
    }
    o.check(
        t.non_increasing,
        "estimates non-increasing in L (95% Wilson CI overlap allowed)".into(),
    );
    o.check(
        t.below_cap,
        format!(
            "p_hat at L = 1e4 is {:.4} < {PROP1_CAP}",
            t.rows.last().unwrap().p_hat
        ),
    );
    o
}

fn tv_bounds() -> Outcome {
    let mut o = Outcome::new();
    let bin = bin_poisson_bound_table(BOUND_GRID_STATES, &BOUND_GRID_CS).unwrap();
    let bad: Vec<_> = bin.iter().filter(|r| !r.holds).collect();
    let worst = bin.iter().map(|r| r.tv / r.bound).fold(0.0, f64::max);
    o.check(
        bad.is_empty(),
        format!(
            "TV(Bin(x,c), Poisson(xc)) <= xc^2/2 on x in 1..50, c in {BOUND_GRID_CS:?}: {} of {} points violate, \
             worst TV/bound = {worst:.3}",
            bad.len(),
            bin.len()
        ),
    );
    if let Some(r) = bad.iter().find(|r| r.a == 10.0 && r.b == 0.01) {
        o.details.push(format!(
            "     e.g. x = 10, c = 0.01: TV = {:.3e} vs bound {:.1e}",
            r.tv, r.bound
        ));
    }
    let pois = poisson_poisson_bound_table(&BOUND_GRID_MEANS).unwrap();
    let bad = pois.iter().filter(|r| !r.holds).count();
    o.check(
        bad == 0,
        format!(
            "TV(Poisson(l), Poisson(m)) <= |l - m| on all {} ordered pairs of {BOUND_GRID_MEANS:?}: {bad} violate",
            pois.len()
        ),
    );
    o
}

fn prop2() -> Outcome {
    let r = compare_prop2(
        0.5,
        1.0,
        &DECADES,
        &[0.5, 1.0, 2.0],
        10_000,
        SEED,
        &CompareOptions::default(),
    )
    .unwrap();
    let mut o = Outcome::new();
    for tr in &r.trends {
        let ks: Vec<String> = tr.ks.iter().map(|k| format!("{k:.4}")).collect();
        o.check(
            tr.non_increasing,
            format!(
                "t = {}: KS over L = {} (tolerance {:.4})",
                tr.t,
                ks.join(", "),
                tr.tolerance
            ),
        );
    }
    for row in r.final_rows() {
        o.check(
            row.report.pass,
            format!(
                "t = {}: KS at L = 1e4 is {:.4} < {}",
                row.t, row.report.value, row.report.threshold
            ),
        );
    }
    for c in &r.controls {
        o.check(
            c.pass,
            format!(
                "{} at t = {}: {}/{} (need {})",
                c.name, c.t, c.hits, c.trials, c.required
            ),
        );
    }
    o
}

fn prop3() -> Outcome {
    let r = run_stationarity_suite(&StationarityConfig::new(0.5, 10_000, 1_000_000, SEED)).unwrap();
    let mut o = Outcome::new();
    let worst = r.laplace.iter().map(|l| l.residual).fold(0.0, f64::max);
    o.check(
        r.laplace_pass(),
        format!("(a) max Laplace functional residual {worst:.2e} < 1e-10 over c in {{0.1, 0.5, 0.9}}, theta in {{0.1, 1, 10}}, N = 200"),
    );
    o.check(
        r.mean.pass,
        format!(
            "(b) mean {:.5} vs {} within 3 SE ({:.2e})",
            r.mean.estimate, r.mean.target, r.mean.se
        ),
    );
    o.check(
        r.variance.pass,
        format!(
            "(b) variance {:.5} vs {:.5} within 5 SE ({:.2e})",
            r.variance.estimate, r.variance.target, r.variance.se
        ),
    );
    for s in &r.stationarity {
        o.check(
            s.report.pass,
            format!(
                "(c) stationarity at t = {}: KS {:.4} <= {:.4}",
                s.t, s.report.value, s.report.threshold
            ),
        );
    }
    o.check(
        r.identity.pass,
        format!(
            "(d) m + E vs M: KS {:.4} <= {:.4}",
            r.identity.value, r.identity.threshold
        ),
    );
    o.details.push(format!(
        "     also: M vs perpetuity KS {:.4} ({}), E[generator] {:.2e} +- {:.2e} ({})",
        r.max_law.value,
        verdict(r.max_law.pass),
        r.generator.estimate,
        r.generator.se,
        verdict(r.generator.pass)
    ));
    o
}

fn prop4() -> Outcome {
    let mut o = Outcome::new();
    for r in [0.5, 1.0, 2.0] {
        let rep = compare_prop4(
            0.5,
            r,
            0.0,
            &DECADES,
            &[1.0],
            10_000,
            SEED,
            &CompareOptions::default(),
        )
        .unwrap();
        for row in rep.final_rows() {
            o.check(
                row.report.pass,
                format!(
                    "r = {r}: KS vs limit at L = 1e4, t = 1 is {:.4} < {}",
                    row.report.value, row.report.threshold
                ),
            );
        }
        for d in &rep.drift {
            o.check(
                d.pass,
                format!(
                    "r = {r}: mean {:.4} vs (1 - r)t = {} within 4 SE ({:.4})",
                    d.mean, d.expected, d.se
                ),
            );
        }
        let conc = &rep.concentration;
        let last = conc.last().unwrap();
        o.check(
            conc.iter().all(|c| c.pass),
            format!(
                "r = {r}: J_L mean {:.4} (target {r}), variance {:.2e} (exact {:.2e}) at L = 1e4",
                last.mean, last.variance, last.target_variance
            ),
        );
        let ks: Vec<String> = rep.trends[0].ks.iter().map(|k| format!("{k:.4}")).collect();
        o.details
            .push(format!("     r = {r}: KS over L = {}", ks.join(", ")));
    }
    o
}

fn prop5() -> Outcome {
    let mut o = Outcome::new();
    for r in [1.0, 3.0] {
        let rep = compare_prop5(1.0, r, 0, 1e4, 10_000, SEED, &CompareOptions::default()).unwrap();
        let h = &rep.holding;
        o.check(
            h.pass,
            format!(
                "r = {r}: holding-time KS {:.4} < {:.4}",
                h.value, h.threshold
            ),
        );
        let j = &rep.right_jumps;
        o.check(
            j.pass,
            format!(
                "r = {r}: right-jump frequency {:.4}, 99% CI [{:.4}, {:.4}] contains {:.4}",
                j.frequency, j.ci_low, j.ci_high, j.target
            ),
        );
        let b = &rep.big_left_jumps;
        o.check(
            b.pass,
            format!(
                "r = {r}: {}/{} left jumps of size >= 2, frequency {:.2e} <= {:.2e}",
                b.big, b.left, b.frequency, b.threshold
            ),
        );
    }
    o
}

fn oracle() -> Outcome {
    const REPS: usize = 1_000_000;
    let mut o = Outcome::new();
    let mut worst_tv: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    let mut configs = 0;
    for p in [0.3, 0.5, 0.8] {
        for c in [0.2, 0.5] {
            let params = ChainParams::new(p, c).unwrap();
            for x0 in [1i64, 3] {
                for t in [1usize, 2, 4] {
                    configs += 1;
                    let exact = exact_distribution(&params, x0, t, x0 as usize + t).unwrap();
                    let seed =
                        derive_seed(SEED, &[8, p.to_bits(), c.to_bits(), x0 as u64, t as u64]);
                    let finals = par_replicates(seed, REPS, |s| {
                        let mut st = s.stream();
                        (0..t).fold(x0, |k, _| step_x(k, &params, &mut st).unwrap())
                    });
                    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
                    for v in finals {
                        *counts.entry(v).or_default() += 1;
                    }
                    let mut tv = 0.0;
                    let mut ok = true;
                    for k in exact
                        .keys()
                        .chain(counts.keys())
                        .copied()
                        .collect::<std::collections::BTreeSet<_>>()
                    {
                        let pk = exact.get(&k).copied().unwrap_or(0.0);
                        let f = counts.get(&k).copied().unwrap_or(0) as f64 / REPS as f64;
                        let sigma = (pk * (1.0 - pk) / REPS as f64).sqrt();
                        tv += 0.5 * (f - pk).abs();
                        if sigma > 0.0 {
                            worst_z = worst_z.max((f - pk).abs() / sigma);
                        }
                        ok &= (f - pk).abs() <= 4.0 * sigma;
                    }
                    worst_tv = worst_tv.max(tv);
                    if !ok || tv >= 0.003 {
                        o.check(
                            false,
                            format!("p = {p}, c = {c}, x0 = {x0}, T = {t}: TV {tv:.2e}"),
                        );
                    }
                }
            }
        }
    }
    o.check(
        o.pass,
        format!("{configs} configurations, 1e6 replicates each: worst TV {worst_tv:.2e} < 3e-3, worst |z| {worst_z:.2} <= 4"),
    );
    o
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("catwalk-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let runs: [&[&str]; 6] = [
        &["figure1", "--seed", "7"],
        &[
            "verify", "1", "--L", "100,1000", "--reps", "500", "--seed", "7",
        ],
        &[
            "verify",
            "2",
            "--L",
            "100,1000",
            "--reps",
            "1000",
            "--controls",
            "3",
            "--seed",
            "7",
        ],
        &[
            "verify",
            "3",
            "--reps",
            "1000",
            "--moment-reps",
            "10000",
            "--seed",
            "7",
        ],
        &[
            "verify",
            "4",
            "--L",
            "100,1000",
            "--reps",
            "1000",
            "--controls",
            "3",
            "--seed",
            "7",
        ],
        &["invariant", "--c", "0.3", "--reps", "10000", "--seed", "7"],
    ];
    let mut o = Outcome::new();
    for (i, args) in runs.iter().enumerate() {
        let mut outputs = Vec::new();
        for threads in ["1", "4", "2"] {
            let path = dir.join(format!("{i}-{threads}"));
            let status = Command::new(env!("CARGO_BIN_EXE_catwalk"))
                .args(*args)
                .args(["--threads", threads, "--out", path.to_str().unwrap()])
                .env_remove("CATWALK_SEED")
                .status()
                .unwrap();
            assert!(status.code().is_some_and(|c| c < 2), "{args:?} errored");
            outputs.push(std::fs::read(&path).unwrap());
        }
        let same = outputs.windows(2).all(|w| w[0] == w[1]);
        o.check(
            same,
            format!(
                "`catwalk {}` identical under 1, 4 and 2 threads ({} bytes)",
                args.join(" "),
                outputs[0].len()
            ),
        );
    }
    let _ = std::fs::remove_dir_all(&dir);
    o
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "Figure 1 reproduction", Duration::from_secs(10), figure1),
        (2, "Prop 1 coupling decay", Duration::from_secs(60), prop1),
        (
            3,
            "total variation bounds",
            Duration::from_secs(5),
            tv_bounds,
        ),
        (
            4,
            "Prop 2 marginal convergence",
            Duration::from_secs(300),
            prop2,
        ),
        (
            5,
            "Prop 3 invariant-law suite",
            Duration::from_secs(120),
            prop3,
        ),
        (6, "Prop 4 centred regime", Duration::from_secs(300), prop4),
        (
            7,
            "Prop 5 random-walk regime",
            Duration::from_secs(120),
            prop5,
        ),
        (8, "oracle equivalence", Duration::from_secs(120), oracle),
        (9, "determinism", Duration::from_secs(300), determinism),
    ];
    let filter: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for (n, name, budget, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let mut o = run();
        let elapsed = start.elapsed();
        o.check(
            elapsed <= budget,
            format!(
                "runtime {:.1} s within {} s",
                elapsed.as_secs_f64(),
                budget.as_secs()
            ),
        );
        println!("criterion {n} [{}] {name}", verdict(o.pass));
        for d in &o.details {
            println!("    {d}");
        }
        if !o.pass {
            failed.push(n);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
