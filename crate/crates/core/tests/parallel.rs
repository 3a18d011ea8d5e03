use tor_core::gbsgen::random_valid_matrix;
use tor_core::parallel::{tor_parallel, tor_parallel_with_stats, ParallelOptions, WorkerPool};
use tor_core::torontonian::{tor_recursive_with_addends, Addend};
use tor_core::{CholeskyPrecision, EvalOptions};

fn sorted(mut v: Vec<Addend>) -> Vec<(u64, u64, u64)> {
    v.sort_by_key(|a| a.0);
    v.into_iter()
        .map(|(m, x)| (m, x.hi.to_bits(), x.lo.to_bits()))
        .collect()
}

#[test]
fn addend_multiset_and_value_are_thread_count_independent() {
    let a = random_valid_matrix(12, 0.9, 2024);
    let opts = EvalOptions::recursive(CholeskyPrecision::Extended).with_counting(true);
    let (serial, rec) = tor_recursive_with_addends(&a, opts, true).unwrap();
    let reference = sorted(rec.unwrap());
    assert_eq!(reference.len(), 1 << 12);
    for threads in [1, 2, 4, 8] {
        let (r, stats, rec) = tor_parallel_with_stats(
            &a,
            opts,
            ParallelOptions::threads(threads).with_cutoff(4),
            true,
        )
        .unwrap();
        assert_eq!(sorted(rec.unwrap()), reference, "threads={threads}");
        assert_eq!(r.addend_count, 1 << 12);
        assert_eq!(r.flos, serial.flos);
        let rel = ((r.value - serial.value) / serial.value).abs().to_f64();
        assert!(rel < 1e-20, "threads={threads} rel={rel:e}");
        assert!(stats.max_concurrent <= threads);
        assert!(stats.tasks > 1);
    }
}

#[test]
fn pool_is_reusable_across_evaluations() {
    let pool = WorkerPool::new(3);
    let opts = EvalOptions::recursive(CholeskyPrecision::Double);
    for seed in 0..4 {
        let a = random_valid_matrix(9, 0.8, seed);
        let (x, stats, _) = pool.evaluate(&a, opts, 3, false).unwrap();
        let y = tor_parallel(&a, opts, ParallelOptions::threads(1)).unwrap();
        assert!(((x.value - y.value) / y.value).abs().to_f64() < 1e-20);
        assert!(stats.max_concurrent <= pool.threads());
    }
}

#[test]
fn cap_applies_to_parallel_runs() {
    let a = tor_core::ComplexMatrix::zeros(2 * 40);
    assert!(tor_parallel(
        &a,
        EvalOptions::recursive(CholeskyPrecision::Double),
        ParallelOptions::threads(2)
    )
    .is_err());
}
