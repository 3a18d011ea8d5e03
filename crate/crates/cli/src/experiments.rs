//! Experiment runners: FLO-exponent fit, strong scaling and precision
//! fidelity.

use std::time::Instant;

use serde::Serialize;
use tor_core::flo::count_flos_standard;
use tor_core::gbsgen::{haar_unitary, random_valid_matrix, sampling_matrix, SqueezeSpec};
use tor_core::parallel::WorkerPool;
use tor_core::{
    tor_naive, tor_recursive, CholeskyPrecision, ComplexMatrix, EvalOptions, TorError, TorResult,
};

/// Spectral radius of the random inputs used by counting and timing runs.
pub const BENCH_SPECTRAL_RADIUS: f64 = 0.9;

/// Smallest size admitted into the exponent fit when enough larger sizes
/// are available.
pub const FIT_MIN_N: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Naive,
    Recursive,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Recursive => "recursive",
        }
    }

    pub fn options(self, precision: CholeskyPrecision) -> EvalOptions {
        match self {
            Self::Naive => EvalOptions::naive(precision),
            Self::Recursive => EvalOptions::recursive(precision),
        }
    }

    /// Serial evaluation.
    pub fn evaluate(self, a: &ComplexMatrix, opts: EvalOptions) -> Result<TorResult, TorError> {
        match self {
            Self::Naive => tor_naive(a, opts),
            Self::Recursive => tor_recursive(a, opts),
        }
    }
}

/// Benchmark input of size `n` (even) for trial `trial`.
pub fn bench_matrix(n: usize, seed: u64, trial: u64) -> ComplexMatrix {
    random_valid_matrix(
        n / 2,
        BENCH_SPECTRAL_RADIUS,
        seed.wrapping_add(1_000 * n as u64 + trial),
    )
}

/// Least-squares fit of `ln F - (N/2) ln 2 = omega ln N + c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OmegaFit {
    pub omega: f64,
    pub c: f64,
    /// RMS residual of the linear model.
    pub residual: f64,
    pub points: Vec<(usize, u64)>,
    /// Smallest `N` entering the fit.
    pub fit_n_min: usize,
}

/// Fits `points`, keeping only `N >= 26` when at least two such points
/// exist. `None` with fewer than two usable points.
pub fn fit_omega(points: &[(usize, u64)]) -> Option<OmegaFit> {
    let large = points.iter().filter(|p| p.0 >= FIT_MIN_N).count();
    let used: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| large < 2 || p.0 >= FIT_MIN_N)
        .filter(|p| p.0 > 0 && p.1 > 0)
        .map(|&(n, f)| {
            let n = n as f64;
            (n.ln(), (f as f64).ln() - 0.5 * n * std::f64::consts::LN_2)
        })
        .collect();
    if used.len() < 2 {
        return None;
    }
    let k = used.len() as f64;
    let mx = used.iter().map(|p| p.0).sum::<f64>() / k;
    let my = used.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = used.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let omega = sxy / sxx;
    let c = my - omega * mx;
    let residual = (used
        .iter()
        .map(|p| (p.1 - omega * p.0 - c).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    let fit_n_min = points
        .iter()
        .map(|p| p.0)
        .filter(|&n| large < 2 || n >= FIT_MIN_N)
        .min()
        .unwrap_or(0);
    Some(OmegaFit {
        omega,
        c,
        residual,
        points: points.to_vec(),
        fit_n_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OmegaConfig {
    pub algorithm: Algorithm,
    pub n_min: usize,
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
    /// Standard-algorithm sizes above this use the closed-form count
    /// instead of a counted run.
    pub closed_form_above: Option<usize>,
}

/// Counted FLOs of `algorithm` at size `n`. Counts do not depend on the
/// matrix entries; differing trials would indicate a bug and are reported.
pub fn counted_flos(
    algorithm: Algorithm,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<u64, TorError> {
    let opts = algorithm
        .options(CholeskyPrecision::Double)
        .with_counting(true);
    let mut count = None;
    for t in 0..trials.max(1) {
        let r = algorithm.evaluate(&bench_matrix(n, seed, t as u64), opts)?;
        match count {
            None => count = Some(r.flos.count),
            Some(c) => assert_eq!(
                c, r.flos.count,
                "FLO count varies with the input at N = {n}"
            ),
        }
    }
    Ok(count.unwrap_or(0))
}

pub fn run_fit_omega(cfg: &OmegaConfig) -> Result<(Vec<(usize, u64)>, Option<OmegaFit>), TorError> {
    let mut points = Vec::new();
    let start = cfg.n_min + cfg.n_min % 2;
    for n in (start..=cfg.n_max).step_by(2) {
        let flos = match (cfg.algorithm, cfg.closed_form_above) {
            (Algorithm::Naive, Some(limit)) if n > limit => {
                u64::try_from(count_flos_standard(n)).expect("count fits in 64 bits")
            }
            _ => counted_flos(cfg.algorithm, n, cfg.trials, cfg.seed)?,
        };
        points.push((n, flos));
    }
    let fit = fit_omega(&points);
    Ok((points, fit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: usize,
    pub threads: usize,
    pub time_s: f64,
    pub time_x_threads: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Per size: max/min of `time * threads`.
    pub collapse: Vec<(usize, f64)>,
}

impl ScalingReport {
    /// Wall-time ratio `t(1 thread) / t(threads)` at size `n`.
    pub fn speedup(&self, n: usize, threads: usize) -> Option<f64> {
        let t = |k| {
            self.rows
                .iter()
                .find(|r| r.n == n && r.threads == k)
                .map(|r| r.time_s)
        };
        Some(t(1)? / t(threads)?)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Times the parallel recursive evaluator: one discarded warm-up run, then
/// the median of `repeats` runs.
pub fn run_scaling(
    sizes: &[usize],
    threads: &[usize],
    repeats: usize,
    seed: u64,
    precision: CholeskyPrecision,
    cutoff: usize,
) -> Result<ScalingReport, TorError> {
    let mut rows = Vec::new();
    let mut collapse = Vec::new();
    for &n in sizes {
        let a = bench_matrix(n, seed, 0);
        let opts = EvalOptions::recursive(precision);
        let mut products = Vec::new();
        for &t in threads {
            let pool = WorkerPool::new(t);
            pool.evaluate(&a, opts, cutoff, false)?;
            let mut times = Vec::with_capacity(repeats.max(1));
            for _ in 0..repeats.max(1) {
                let start = Instant::now();
                pool.evaluate(&a, opts, cutoff, false)?;
                times.push(start.elapsed().as_secs_f64());
            }
            let time_s = median(times);
            let row = ScalingRow {
                n,
                threads: t,
                time_s,
                time_x_threads: time_s * t as f64,
            };
            products.push(row.time_x_threads);
            rows.push(row);
        }
        let max = products.iter().copied().fold(f64::MIN, f64::max);
        let min = products.iter().copied().fold(f64::MAX, f64::min);
        collapse.push((n, max / min));
    }
    Ok(ScalingReport { rows, collapse })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityRecord {
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub trials: usize,
    /// Mean of `|Tor_ext - Tor_double| / |Tor_double|` over trials.
    pub epsilon: f64,
}

/// Relative difference of the double-Cholesky result from the extended
/// reference.
pub fn epsilon(reference: &TorResult, double: &TorResult) -> f64 {
    ((reference.value - double.value) / double.value)
        .abs()
        .to_f64()
}

/// For every `(S, N)`: uniform squeezing `S` through a Haar interferometer
/// (trial `t` uses the same unitary for every `S`), evaluated with both
/// Cholesky precisions.
pub fn run_fidelity(
    squeezing: &[f64],
    sizes: &[usize],
    trials: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<FidelityRecord>, TorError> {
    let pool = WorkerPool::new(threads);
    let cutoff = tor_core::parallel::DEFAULT_CUTOFF;
    let mut out = Vec::new();
    for &n in sizes {
        let d = n / 2;
        for &s in squeezing {
            let mut sum = 0.0;
            for t in 0..trials.max(1) {
                let trial_seed = seed.wrapping_add(t as u64);
                let u = haar_unitary(d, trial_seed);
                let a = sampling_matrix(&SqueezeSpec::uniform(d, s, trial_seed), &u);
                let ext = EvalOptions::recursive(CholeskyPrecision::Extended);
                let dbl = EvalOptions::recursive(CholeskyPrecision::Double);
                let (r, _, _) = pool.evaluate(&a, ext, cutoff, false)?;
                let (x, _, _) = pool.evaluate(&a, dbl, cutoff, false)?;
                sum += epsilon(&r, &x);
            }
            out.push(FidelityRecord {
                s,
                n,
                trials: trials.max(1),
                epsilon: sum / trials.max(1) as f64,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_exponent_is_recovered() {
        let points: Vec<(usize, u64)> = (26..=40)
            .step_by(2)
            .map(|n| {
                let f = 3.0f64.exp() * (n as f64).powf(1.07) * 2f64.powf(n as f64 / 2.0);
                (n, f.round() as u64)
            })
            .collect();
        let fit = fit_omega(&points).unwrap();
        assert!((fit.omega - 1.07).abs() < 5e-5, "{}", fit.omega);
        assert!((fit.c - 3.0).abs() < 1e-3);
        assert!(fit.residual < 1e-6);
        assert_eq!(fit.fit_n_min, 26);
    }

    #[test]
    fn small_sizes_are_dropped_when_possible() {
        let pts = vec![(8, 100), (10, 300), (26, 1 << 20), (28, 1 << 22)];
        assert_eq!(fit_omega(&pts).unwrap().fit_n_min, 26);
        let pts = vec![(8, 100), (10, 300), (26, 1 << 20)];
        assert_eq!(fit_omega(&pts).unwrap().fit_n_min, 8);
        assert!(fit_omega(&[(8, 100)]).is_none());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn single_thread_scaling_is_collapsed() {
        let r = run_scaling(&[8], &[1], 1, 0, CholeskyPrecision::Double, 4).unwrap();
        assert_eq!(r.collapse, vec![(8, 1.0)]);
        assert_eq!(r.speedup(8, 1), Some(1.0));
    }

    #[test]
    fn counting_is_reproducible() {
        let a = counted_flos(Algorithm::Recursive, 12, 3, 5).unwrap();
        assert_eq!(u128::from(a), tor_core::flo::count_flos_recursive(12));
        let b = counted_flos(Algorithm::Naive, 12, 2, 9).unwrap();
        assert_eq!(u128::from(b), count_flos_standard(12));
    }
}
