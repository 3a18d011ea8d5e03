//! Shared-memory task-parallel recursive evaluation.
//!
//! Each loop iteration whose subtree holds at least `2^cutoff` addends
//! becomes an independently schedulable task on a work-stealing pool;
//! smaller subtrees run serially inside the task that reached them. Tasks
//! own their scratch levels (taken from a shared free list) and their
//! partial sum, which is merged once when the task finishes.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use num_complex::Complex64;
use rayon::{Scope, ThreadPool, ThreadPoolBuilder};

use crate::ddreal::DDComplex;
use crate::flo::{FloCounter, NoFlops};
use crate::linalg::{ComplexMatrix, Scalar};
use crate::torontonian::{
    descend, scratch_levels, validate_input, Addend, CholeskyPrecision, Context, EvalOptions,
    MergeFlos, ModeList, Node, TaskLocalState, TorError, TorResult,
};

/// Default task granularity exponent.
pub const DEFAULT_CUTOFF: usize = 10;

/// Environment variable overriding the thread count.
pub const THREADS_ENV: &str = "TOR_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParallelOptions {
    pub threads: usize,
    /// Subtrees with at least `2^cutoff` addends are spawned as tasks.
    pub cutoff: usize,
}

impl Default for ParallelOptions {
    fn default() -> Self {
        Self {
            threads: default_threads(),
            cutoff: DEFAULT_CUTOFF,
        }
    }
}

impl ParallelOptions {
    pub fn threads(threads: usize) -> Self {
        Self {
            threads,
            cutoff: DEFAULT_CUTOFF,
        }
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.cutoff = cutoff;
        self
    }
}

/// `TOR_THREADS` if set and positive, else the available parallelism.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Scheduling statistics of one parallel evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParallelStats {
    pub tasks: u64,
    pub max_concurrent: usize,
}

/// A reusable worker pool. Concurrent evaluations may share one pool.
pub struct WorkerPool {
    pool: ThreadPool,
    threads: usize,
}

impl WorkerPool {
    pub fn new(threads: usize) -> Self {
        let threads = threads.max(1);
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("tor-worker-{i}"))
            .build()
            .expect("failed to start worker threads");
        Self { pool, threads }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Recursive evaluation of `a` on this pool.
    pub fn evaluate(
        &self,
        a: &ComplexMatrix,
        opts: EvalOptions,
        cutoff: usize,
        recording: bool,
    ) -> Result<(TorResult, ParallelStats, Option<Vec<Addend>>), TorError> {
        validate_input(a, opts.mode_cap)?;
        match (opts.precision, opts.counting) {
            (CholeskyPrecision::Double, false) => {
                self.evaluate_impl::<Complex64, NoFlops>(a, cutoff, recording)
            }
            (CholeskyPrecision::Double, true) => {
                self.evaluate_impl::<Complex64, FloCounter>(a, cutoff, recording)
            }
            (CholeskyPrecision::Extended, false) => {
                self.evaluate_impl::<DDComplex, NoFlops>(a, cutoff, recording)
            }
            (CholeskyPrecision::Extended, true) => {
                self.evaluate_impl::<DDComplex, FloCounter>(a, cutoff, recording)
            }
        }
    }

    fn evaluate_impl<T: Scalar, F: MergeFlos>(
        &self,
        a: &ComplexMatrix,
        cutoff: usize,
        recording: bool,
    ) -> Result<(TorResult, ParallelStats, Option<Vec<Addend>>), TorError> {
        let ctx = Context::<T>::new(a);
        let mut state = TaskLocalState::<F>::new(recording);
        let root = Node::from_scratch(&ctx, &ModeList::empty(), &mut state.flos)?;
        let addend = root.addend(ctx.d, &mut state.flos);
        state.push(0, addend);
        let (below, stats) = evaluate_below::<T, F>(&ctx, root, Some(self), cutoff, recording)?;
        state.merge(below);
        Ok((
            TorResult {
                value: state.partial,
                addend_count: state.addends,
                flos: state.flos.total(),
            },
            stats,
            state.record,
        ))
    }
}

/// Parallel recursive evaluation on a fresh pool of `par.threads` workers.
pub fn tor_parallel(
    a: &ComplexMatrix,
    opts: EvalOptions,
    par: ParallelOptions,
) -> Result<TorResult, TorError> {
    tor_parallel_with_stats(a, opts, par, false).map(|(r, _, _)| r)
}

/// As [`tor_parallel`], also returning scheduling statistics and, when
/// `recording`, every addend.
pub fn tor_parallel_with_stats(
    a: &ComplexMatrix,
    opts: EvalOptions,
    par: ParallelOptions,
    recording: bool,
) -> Result<(TorResult, ParallelStats, Option<Vec<Addend>>), TorError> {
    WorkerPool::new(par.threads).evaluate(a, opts, par.cutoff, recording)
}

struct Shared<'c, T: Scalar, F> {
    ctx: &'c Context<T>,
    cutoff: usize,
    recording: bool,
    scratch: Mutex<Vec<Vec<Node<T>>>>,
    total: Mutex<TaskLocalState<F>>,
    error: Mutex<Option<TorError>>,
    abort: AtomicBool,
    active: AtomicUsize,
    max_active: AtomicUsize,
    tasks: AtomicU64,
}

impl<T: Scalar, F: MergeFlos> Shared<'_, T, F> {
    fn take_scratch(&self) -> Vec<Node<T>> {
        let pooled = self.scratch.lock().unwrap().pop();
        pooled.unwrap_or_else(|| scratch_levels(self.ctx))
    }

    fn fail(&self, e: TorError) {
        self.abort.store(true, Ordering::Relaxed);
        self.error.lock().unwrap().get_or_insert(e);
    }
}

/// Evaluates every descendant of `node` (not `node` itself). `None` runs
/// serially on the calling thread.
pub(crate) fn evaluate_below<T: Scalar, F: MergeFlos>(
    ctx: &Context<T>,
    node: Node<T>,
    pool: Option<&WorkerPool>,
    cutoff: usize,
    recording: bool,
) -> Result<(TaskLocalState<F>, ParallelStats), TorError> {
    let depth = node.depth(ctx.d);
    let Some(pool) = pool else {
        let mut state = TaskLocalState::<F>::new(recording);
        let mut levels = scratch_levels(ctx);
        levels[depth] = node;
        descend(ctx, &mut levels[depth..], &mut state, None)?;
        return Ok((
            state,
            ParallelStats {
                tasks: 1,
                max_concurrent: 1,
            },
        ));
    };
    let shared = Shared {
        ctx,
        cutoff: cutoff.max(1),
        recording,
        scratch: Mutex::new(Vec::new()),
        total: Mutex::new(TaskLocalState::<F>::new(recording)),
        error: Mutex::new(None),
        abort: AtomicBool::new(false),
        active: AtomicUsize::new(0),
        max_active: AtomicUsize::new(0),
        tasks: AtomicU64::new(0),
    };
    pool.pool
        .install(|| rayon::scope(|s| run_task(s, &shared, node)));
    if let Some(e) = shared.error.into_inner().unwrap() {
        return Err(e);
    }
    let stats = ParallelStats {
        tasks: shared.tasks.load(Ordering::Relaxed),
        max_concurrent: shared.max_active.load(Ordering::Relaxed),
    };
    Ok((shared.total.into_inner().unwrap(), stats))
}

fn run_task<'s, T: Scalar, F: MergeFlos>(
    scope: &Scope<'s>,
    shared: &'s Shared<'s, T, F>,
    node: Node<T>,
) {
    if shared.abort.load(Ordering::Relaxed) {
        return;
    }
    let now = shared.active.fetch_add(1, Ordering::SeqCst) + 1;
    shared.max_active.fetch_max(now, Ordering::SeqCst);
    shared.tasks.fetch_add(1, Ordering::Relaxed);

    let ctx = shared.ctx;
    let depth = node.depth(ctx.d);
    let mut levels = shared.take_scratch();
    levels[depth] = node;
    let mut state = TaskLocalState::<F>::new(shared.recording);
    let mut spawn = |child: Node<T>| {
        scope.spawn(move |s| run_task(s, shared, child));
    };
    let result = descend(
        ctx,
        &mut levels[depth..],
        &mut state,
        Some((&mut spawn, shared.cutoff)),
    );

    shared.active.fetch_sub(1, Ordering::SeqCst);
    match result {
        Ok(()) => shared.total.lock().unwrap().merge(state),
        Err(e) => shared.fail(e),
    }
    shared.scratch.lock().unwrap().push(levels);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddreal::DDReal;
    use crate::gbsgen;
    use crate::torontonian::tor_recursive;

    #[test]
    fn single_thread_matches_serial() {
        let a = gbsgen::random_valid_matrix(7, 0.8, 3);
        let opts = EvalOptions::recursive(CholeskyPrecision::Extended).with_counting(true);
        let serial = tor_recursive(&a, opts).unwrap();
        let (par, stats, _) =
            tor_parallel_with_stats(&a, opts, ParallelOptions::threads(1).with_cutoff(2), false)
                .unwrap();
        assert_eq!(par.addend_count, serial.addend_count);
        assert_eq!(par.flos, serial.flos);
        let rel = ((par.value - serial.value) / serial.value).abs().to_f64();
        assert!(rel < 1e-20, "{rel:e}");
        assert_eq!(stats.max_concurrent, 1);
        assert!(stats.tasks > 1);
    }

    #[test]
    fn empty_and_tiny_inputs() {
        let a = ComplexMatrix::zeros(0);
        let r = tor_parallel(
            &a,
            EvalOptions::recursive(CholeskyPrecision::Double),
            ParallelOptions::threads(2),
        )
        .unwrap();
        assert_eq!(r.value, DDReal::ONE);
        assert_eq!(r.addend_count, 1);
    }

    #[test]
    fn errors_propagate_from_tasks() {
        let mut a = ComplexMatrix::zeros(12);
        for i in 0..12 {
            a.set(i, i, Complex64::new(if i == 9 { 1.5 } else { 0.1 }, 0.0));
        }
        let e = tor_parallel(
            &a,
            EvalOptions::recursive(CholeskyPrecision::Double),
            ParallelOptions::threads(3).with_cutoff(1),
        )
        .unwrap_err();
        assert!(matches!(e, TorError::NotPositiveDefinite { .. }));
    }
}
