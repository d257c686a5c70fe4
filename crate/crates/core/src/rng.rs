//! Seeded, splittable random streams and the exact variate generators used by
//! every simulator in the crate.
//!
//! A [`SeedSpec`] names a stream by `(master_seed, stream_index)`. The master
//! seed is expanded by SplitMix64 into a 256-bit ChaCha8 key, and the stream
//! index selects the ChaCha stream (nonce). Distinct indices therefore give
//! disjoint keystreams under one key, and no stream is produced by burning
//! another. Replicate `i` of an experiment always uses stream index `i`, so
//! results do not depend on how replicates are scheduled across threads.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, param, Result};

/// Master seed used when none is given on the command line or in the
/// environment.
pub const DEFAULT_SEED: u64 = 0x00C0_FFEE_2019;

/// Binomial draws with mean `n * min(q, 1 - q)` below this use sequential
/// inversion; larger ones are reduced by exact beta splitting first.
pub const BINOMIAL_INVERSION_MAX_MEAN: f64 = 30.0;

/// Poisson draws with mean below this use sequential inversion; larger ones
/// are reduced by exact gamma splitting first.
pub const POISSON_INVERSION_MAX_MEAN: f64 = 16.0;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of tags into a seed. Used to give each experiment grid point
/// its own master seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(master), |acc, &t| {
        mix64(acc ^ mix64(t.wrapping_add(GOLDEN)))
    })
}

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        SeedSpec {
            master_seed,
            stream_index,
        }
    }

    /// An independent sub-seed for lane `lane` of this replicate. Lanes keep
    /// the stream index and change the key.
    pub fn lane(&self, lane: u64) -> SeedSpec {
        SeedSpec {
            master_seed: derive_seed(self.master_seed, &[0x1A4E, lane]),
            stream_index: self.stream_index,
        }
    }

    pub fn stream(&self) -> Stream {
        let mut state = self.master_seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(GOLDEN);
            chunk.copy_from_slice(&mix64(state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_index);
        Stream { rng }
    }
}

/// A random stream. Cheap to create from a [`SeedSpec`]; not shared between
/// replicates.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval `(0, 1)`; safe to take logarithms of.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Returns `true` with probability `q`.
    #[doc(alias = "draw_bernoulli")]
    pub fn bernoulli(&mut self, q: f64) -> Result<bool> {
        check_probability("q", q)?;
        Ok(self.bernoulli_raw(q))
    }

    #[inline]
    pub(crate) fn bernoulli_raw(&mut self, q: f64) -> bool {
        self.uniform() < q
    }

    /// Exact Binomial(`n`, `q`) draw.
    #[doc(alias = "draw_binomial")]
    pub fn binomial(&mut self, n: u64, q: f64) -> Result<u64> {
        check_probability("q", q)?;
        Ok(self.binomial_raw(n, q))
    }

    pub(crate) fn binomial_raw(&mut self, n: u64, q: f64) -> u64 {
        if n == 0 || q <= 0.0 {
            return 0;
        }
        if q >= 1.0 {
            return n;
        }
        if q > 0.5 {
            return n - self.binomial_raw(n, 1.0 - q);
        }
        if n as f64 * q < BINOMIAL_INVERSION_MAX_MEAN {
            return self.binomial_inversion(n, q);
        }
        // The a-th smallest of n uniforms is Beta(a, n + 1 - a). Counting how
        // many uniforms fall below q on either side of it leaves a binomial
        // with about half as many trials.
        let a = 1 + n / 2;
        let b = n + 1 - a;
        let x = self.beta(a as f64, b as f64);
        if x >= q {
            self.binomial_raw(a - 1, q / x)
        } else {
            a + self.binomial_raw(b - 1, (q - x) / (1.0 - x))
        }
    }

    fn binomial_inversion(&mut self, n: u64, q: f64) -> u64 {
        let ratio = q / (1.0 - q);
        let p0 = (n as f64 * (-q).ln_1p()).exp();
        'draw: loop {
            let mut u = self.uniform();
            let mut pk = p0;
            let mut k = 0u64;
            loop {
                if u < pk {
                    return k;
                }
                u -= pk;
                if k == n {
                    // rounding left some mass unassigned; redraw
                    continue 'draw;
                }
                pk *= ratio * (n - k) as f64 / (k + 1) as f64;
                k += 1;
                if pk == 0.0 {
                    continue 'draw;
                }
            }
        }
    }

    /// Exact Binomial(`n`, `q`) draw conditioned on being at least one.
    pub fn binomial_at_least_one(&mut self, n: u64, q: f64) -> Result<u64> {
        check_probability("q", q)?;
        if n == 0 || q == 0.0 {
            return param("binomial conditioned on >= 1 needs n >= 1 and q > 0");
        }
        if n as f64 * q >= 1.0 || q > 0.5 {
            // acceptance probability at least 1 - e^{-1}
            loop {
                let k = self.binomial_raw(n, q);
                if k >= 1 {
                    return Ok(k);
                }
            }
        }
        let ratio = q / (1.0 - q);
        let p0 = (n as f64 * (-q).ln_1p()).exp();
        'draw: loop {
            // shift u past the mass at zero, then invert from k = 1
            let mut u = p0 + self.uniform() * (1.0 - p0);
            let mut pk = p0;
            let mut k = 0u64;
            loop {
                if u < pk && k >= 1 {
                    return Ok(k);
                }
                u -= pk;
                if k == n {
                    continue 'draw;
                }
                pk *= ratio * (n - k) as f64 / (k + 1) as f64;
                k += 1;
                if pk == 0.0 {
                    continue 'draw;
                }
            }
        }
    }

    /// Exact Poisson(`lambda`) draw.
    #[doc(alias = "draw_poisson")]
    pub fn poisson(&mut self, lambda: f64) -> Result<u64> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return param(format!("Poisson mean {lambda} must be finite and >= 0"));
        }
        Ok(self.poisson_raw(lambda))
    }

    pub(crate) fn poisson_raw(&mut self, lambda: f64) -> u64 {
        if lambda <= 0.0 {
            return 0;
        }
        if lambda < POISSON_INVERSION_MAX_MEAN {
            return self.poisson_inversion(lambda);
        }
        // The m-th arrival of a unit-rate Poisson process is Gamma(m). Given
        // it, arrivals before lambda are binomial among the first m - 1, or
        // we restart the process from it.
        let m = (0.875 * lambda).floor() as u64;
        let g = self.gamma(m as f64);
        if g > lambda {
            self.binomial_raw(m - 1, lambda / g)
        } else {
            m + self.poisson_raw(lambda - g)
        }
    }

    fn poisson_inversion(&mut self, lambda: f64) -> u64 {
        let p0 = (-lambda).exp();
        'draw: loop {
            let mut u = self.uniform();
            let mut pk = p0;
            let mut k = 0u64;
            loop {
                if u < pk {
                    return k;
                }
                u -= pk;
                pk *= lambda / (k + 1) as f64;
                k += 1;
                if pk == 0.0 {
                    continue 'draw;
                }
            }
        }
    }

    /// Number of Bernoulli(`s`) trials up to and including the first success.
    #[doc(alias = "draw_geometric")]
    pub fn geometric(&mut self, s: f64) -> Result<u64> {
        if !(s > 0.0 && s <= 1.0) {
            return param(format!(
                "geometric success probability {s} must be in (0, 1]"
            ));
        }
        Ok(self.geometric_raw(s))
    }

    pub(crate) fn geometric_raw(&mut self, s: f64) -> u64 {
        if s >= 1.0 {
            return 1;
        }
        // P(G > k) = (1 - s)^k, inverted in closed form.
        let t = (self.uniform_open().ln() / (-s).ln_1p()).floor();
        if t >= u64::MAX as f64 {
            u64::MAX
        } else {
            1 + t as u64
        }
    }

    /// Exponential draw with the given rate.
    #[doc(alias = "draw_exponential")]
    pub fn exponential(&mut self, rate: f64) -> Result<f64> {
        if !(rate > 0.0 && rate.is_finite()) {
            return param(format!("exponential rate {rate} must be finite and > 0"));
        }
        Ok(self.exponential_raw(rate))
    }

    #[inline]
    pub(crate) fn exponential_raw(&mut self, rate: f64) -> f64 {
        -self.uniform_open().ln() / rate
    }

    /// Mean-one exponential.
    #[inline]
    pub fn standard_exponential(&mut self) -> f64 {
        -self.uniform_open().ln()
    }

    fn gamma(&mut self, shape: f64) -> f64 {
        Gamma::new(shape, 1.0)
            .expect("gamma shape is positive and finite")
            .sample(&mut self.rng)
    }

    fn beta(&mut self, a: f64, b: f64) -> f64 {
        let x = self.gamma(a);
        let y = self.gamma(b);
        x / (x + y)
    }
}

/// Runs `f` once per replicate on streams `0..reps` of `master_seed`, in
/// parallel, and returns results in replicate order.
pub fn par_replicates<T, F>(master_seed: u64, reps: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(SeedSpec) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..reps as u64)
        .into_par_iter()
        .map(|i| f(SeedSpec::new(master_seed, i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(seed: u64) -> Stream {
        SeedSpec::new(seed, 0).stream()
    }

    fn binom_pmf(n: u64, q: f64, k: u64) -> f64 {
        let mut c = 1.0;
        for i in 0..k {
            c *= (n - i) as f64 / (i + 1) as f64;
        }
        c * q.powi(k as i32) * (1.0 - q).powi((n - k) as i32)
    }

    fn poisson_pmf(lambda: f64, k: u64) -> f64 {
        let mut p = (-lambda).exp();
        for i in 0..k {
            p *= lambda / (i + 1) as f64;
        }
        p
    }

    /// Counts per value below `cutoff` must sit within 4 standard errors of
    /// the analytic pmf.
    fn assert_pmf_matches(draws: &[u64], pmf: impl Fn(u64) -> f64, cutoff: u64) {
        assert_pmf_window(draws, pmf, 0, cutoff)
    }

    fn assert_pmf_window(draws: &[u64], pmf: impl Fn(u64) -> f64, lo: u64, hi: u64) {
        let n = draws.len() as f64;
        let mut counts = vec![0usize; (hi - lo) as usize];
        for &d in draws {
            if (lo..hi).contains(&d) {
                counts[(d - lo) as usize] += 1;
            }
        }
        for (i, &cnt) in counts.iter().enumerate() {
            let k = lo + i as u64;
            let p = pmf(k);
            let se = (p * (1.0 - p) / n).sqrt();
            let freq = cnt as f64 / n;
            assert!(
                (freq - p).abs() <= 4.0 * se + 1e-12,
                "k={k}: freq {freq} vs pmf {p} (se {se})"
            );
        }
    }

    #[test]
    fn equal_seeds_reproduce_and_indices_differ() {
        let a: Vec<u64> = {
            let mut s = SeedSpec::new(9, 3).stream();
            (0..16).map(|_| s.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut s = SeedSpec::new(9, 3).stream();
            (0..16).map(|_| s.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut s = SeedSpec::new(9, 4).stream();
            (0..16).map(|_| s.next_u64()).collect()
        };
        let d: Vec<u64> = {
            let mut s = SeedSpec::new(9, 3).lane(1).stream();
            (0..16).map(|_| s.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn parallel_replicates_ignore_thread_count() {
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| par_replicates(5, 200, |s| s.stream().binomial_raw(1000, 0.3)))
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn bernoulli_degenerate_and_fair() {
        let mut s = stream(1);
        assert!((0..1000).all(|_| !s.bernoulli(0.0).unwrap()));
        assert!((0..1000).all(|_| s.bernoulli(1.0).unwrap()));
        let n = 1_000_000;
        let hits = (0..n).filter(|_| s.bernoulli(0.5).unwrap()).count();
        let mean = hits as f64 / n as f64;
        assert!((mean - 0.5).abs() <= 0.002, "mean {mean}");
        assert!(s.bernoulli(1.5).is_err());
        assert!(s.bernoulli(-0.1).is_err());
    }

    #[test]
    fn binomial_small_pmf() {
        let mut s = stream(2);
        assert!((0..100).all(|_| s.binomial(0, 0.3).unwrap() == 0));
        let draws: Vec<u64> = (0..1_000_000)
            .map(|_| s.binomial(2, 0.5).unwrap())
            .collect();
        assert_pmf_matches(&draws, |k| [0.25, 0.5, 0.25][k as usize], 3);
        assert!(s.binomial(3, 1.2).is_err());
    }

    #[test]
    fn binomial_tiny_probability_many_trials() {
        let mut s = stream(3);
        let reps = 200_000;
        let total: u64 = (0..reps)
            .map(|_| s.binomial(1_000_000, 1e-6).unwrap())
            .sum();
        let mean = total as f64 / reps as f64;
        // variance ~ 1, so se ~ 1/sqrt(reps)
        assert!(
            (mean - 1.0).abs() < 4.0 / (reps as f64).sqrt(),
            "mean {mean}"
        );
        // n up to 1e9 with small q stays on the inversion path
        let big = s.binomial(1_000_000_000, 2e-9).unwrap();
        assert!(big < 40);
    }

    #[test]
    fn binomial_beta_split_path_matches_pmf() {
        // mean 60 > inversion cutoff; also exercises reflection with q > 0.5
        let mut s = stream(4);
        let n = 120;
        let draws: Vec<u64> = (0..400_000).map(|_| s.binomial(n, 0.5).unwrap()).collect();
        assert_pmf_window(&draws, |k| binom_pmf(n, 0.5, k), 45, 75);
        let draws: Vec<u64> = (0..400_000)
            .map(|_| s.binomial(200, 0.8).unwrap())
            .collect();
        let mean = draws.iter().sum::<u64>() as f64 / draws.len() as f64;
        let se = (200.0 * 0.8 * 0.2 / draws.len() as f64).sqrt();
        assert!((mean - 160.0).abs() < 4.0 * se);
        assert!(draws.iter().all(|&d| d <= 200));
    }

    #[test]
    fn binomial_huge_mean() {
        let mut s = stream(5);
        let reps = 20_000;
        let (n, q) = (1_000_000_000u64, 0.3);
        let draws: Vec<f64> = (0..reps)
            .map(|_| s.binomial(n, q).unwrap() as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / reps as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let sd = (n as f64 * q * (1.0 - q)).sqrt();
        assert!((mean - n as f64 * q).abs() < 4.0 * sd / (reps as f64).sqrt());
        assert!(
            (var / (sd * sd) - 1.0).abs() < 0.05,
            "var ratio {}",
            var / (sd * sd)
        );
    }

    #[test]
    fn poisson_pmf_and_moments() {
        let mut s = stream(6);
        assert!((0..100).all(|_| s.poisson(0.0).unwrap() == 0));
        let draws: Vec<u64> = (0..1_000_000).map(|_| s.poisson(1.0).unwrap()).collect();
        assert_pmf_matches(&draws, |k| poisson_pmf(1.0, k), 20);
        let draws: Vec<u64> = (0..1_000_000).map(|_| s.poisson(4.0).unwrap()).collect();
        let mean = draws.iter().sum::<u64>() as f64 / 1e6;
        assert!((mean - 4.0).abs() < 4.0 * (4.0f64 / 1e6).sqrt());
        assert!(s.poisson(-1.0).is_err());
        assert!(s.poisson(f64::NAN).is_err());
    }

    #[test]
    fn poisson_gamma_split_path() {
        let mut s = stream(7);
        let lambda = 40.0;
        let draws: Vec<u64> = (0..400_000).map(|_| s.poisson(lambda).unwrap()).collect();
        assert_pmf_window(&draws, |k| poisson_pmf(lambda, k), 25, 60);
        let big = 1e7;
        let reps = 20_000;
        let mean = (0..reps)
            .map(|_| s.poisson(big).unwrap() as f64)
            .sum::<f64>()
            / reps as f64;
        assert!((mean - big).abs() < 4.0 * (big / reps as f64).sqrt());
    }

    #[test]
    fn geometric_conventions() {
        let mut s = stream(8);
        assert!((0..100).all(|_| s.geometric(1.0).unwrap() == 1));
        let n = 1_000_000;
        let draws: Vec<u64> = (0..n).map(|_| s.geometric(0.5).unwrap()).collect();
        let mean = draws.iter().sum::<u64>() as f64 / n as f64;
        // variance (1-s)/s^2 = 2
        assert!((mean - 2.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
        assert_pmf_matches(
            &draws,
            |k| if k == 0 { 0.0 } else { 0.5f64.powi(k as i32) },
            20,
        );
        // forward run length before a catastrophe when p = 1 - 1/L
        let l = 100.0;
        let runs = 200_000;
        let mean_run = (0..runs)
            .map(|_| (s.geometric(1.0 / l).unwrap() - 1) as f64)
            .sum::<f64>()
            / runs as f64;
        let sd = ((1.0 - 1.0 / l) * l * l).sqrt();
        assert!((mean_run - (l - 1.0)).abs() < 4.0 * sd / (runs as f64).sqrt());
        assert!(s.geometric(0.0).is_err());
        assert!(s.geometric(1.1).is_err());
    }

    #[test]
    fn exponential_moments_and_median() {
        let mut s = stream(9);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| s.exponential(1.0).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt());
        let above = draws
            .iter()
            .filter(|&&x| x > std::f64::consts::LN_2)
            .count() as f64
            / n as f64;
        assert!((above - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt());
        assert!(draws.iter().all(|&x| x > 0.0));
        let fast: Vec<f64> = (0..n).map(|_| s.exponential(4.0).unwrap()).collect();
        let mean = fast.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 3.0 * 0.25 / (n as f64).sqrt());
        assert!(s.exponential(0.0).is_err());
        assert!(s.exponential(-2.0).is_err());
    }

    #[test]
    fn exponential_passes_ks_against_cdf() {
        let mut s = stream(10);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n).map(|_| s.exponential(1.0).unwrap()).collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-x).exp();
                (f - i as f64 / n as f64)
                    .abs()
                    .max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        let dkw = ((2.0f64 / 0.01).ln() / (2.0 * n as f64)).sqrt();
        assert!(d < dkw, "KS {d} vs {dkw}");
    }

    #[test]
    fn conditioned_binomial_is_positive_with_right_law() {
        let mut s = stream(11);
        let (n, q) = (20_000u64, 1e-8);
        let draws: Vec<u64> = (0..200_000)
            .map(|_| s.binomial_at_least_one(n, q).unwrap())
            .collect();
        assert!(draws.iter().all(|&d| d >= 1));
        let p1 = binom_pmf(n, q, 1) / (1.0 - binom_pmf(n, q, 0));
        let ones = draws.iter().filter(|&&d| d == 1).count() as f64 / draws.len() as f64;
        let se = (p1 * (1.0 - p1) / draws.len() as f64).sqrt();
        assert!((ones - p1).abs() < 4.0 * se + 1e-9);
        let draws: Vec<u64> = (0..200_000)
            .map(|_| s.binomial_at_least_one(3, 0.5).unwrap())
            .collect();
        assert_pmf_matches(
            &draws,
            |k| {
                if k == 0 {
                    0.0
                } else {
                    binom_pmf(3, 0.5, k) / 0.875
                }
            },
            4,
        );
    }
}
