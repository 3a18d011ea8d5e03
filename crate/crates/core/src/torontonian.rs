//! Torontonian evaluators.
//!
//! ```text
//! Tor(A) = sum_{Z ⊆ modes} (-1)^{d - |Z|} / sqrt(det(I - A_Z))
//! ```
//!
//! [`tor_naive`] enumerates every subset and factors each `I - A_Z` from
//! scratch. [`tor_recursive`] walks the subsets depth-first by removed modes:
//! a child removes one mode larger than every mode its parent removed, so
//! the parent's factor rows and leading columns before the removed pair are
//! reused and only the trailing block is refactored.
//!
//! Both evaluators accumulate addends in double-double precision; the
//! [`CholeskyPrecision`] only selects the scalar field of the factorizations.

use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

use crate::ddreal::{DDComplex, DDReal};
use crate::flo::{self, FloCounter, FloSink, NoFlops};
use crate::linalg::{self, ComplexMatrix, LinalgError, Scalar, SquareMatrix};

pub use crate::flo::count_flos_standard;

/// Default mode-count cap of the brute-force evaluator.
pub const NAIVE_MODE_CAP: usize = 30;
/// Default mode-count cap of the recursive evaluator.
pub const RECURSIVE_MODE_CAP: usize = 36;
/// Hard ceiling imposed by the 64-bit subset masks.
pub const MAX_MODES: usize = 63;

/// Scalar field of the Cholesky factorizations. Determinants and the
/// addend summation always run in double-double.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CholeskyPrecision {
    Double,
    #[default]
    Extended,
}

impl fmt::Display for CholeskyPrecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Double => "double",
            Self::Extended => "extended",
        })
    }
}

impl std::str::FromStr for CholeskyPrecision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "double" => Ok(Self::Double),
            "extended" => Ok(Self::Extended),
            other => Err(format!("unknown precision `{other}`")),
        }
    }
}

/// Strictly increasing list of removed mode indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ModeList(Vec<usize>);

impl ModeList {
    pub fn new(modes: Vec<usize>, d: usize) -> Result<Self, LinalgError> {
        linalg::check_modes(&modes, d)?;
        Ok(Self(modes))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// First mode the subtree below this list may remove.
    pub fn next_start(&self) -> usize {
        self.last().map_or(0, |m| m + 1)
    }

    /// This list extended by `mode`, which must exceed every element.
    pub fn pushed(&self, mode: usize) -> Self {
        debug_assert!(self.last().is_none_or(|l| l < mode));
        let mut v = self.0.clone();
        v.push(mode);
        Self(v)
    }

    /// Modes of `0..d` not in this list, i.e. the subset `Z`.
    pub fn complement(&self, d: usize) -> Vec<usize> {
        let mut it = self.0.iter().peekable();
        (0..d)
            .filter(|m| {
                if it.peek() == Some(&m) {
                    it.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    }

    pub fn mask(&self) -> u64 {
        self.0.iter().fold(0, |m, &i| m | (1u64 << i))
    }

    pub fn from_mask(mask: u64) -> Self {
        Self((0..64).filter(|i| mask >> i & 1 == 1).collect())
    }

    /// Number of addends in the subtree rooted at this list (itself
    /// included) among `d` modes.
    pub fn subtree_addends(&self, d: usize) -> u64 {
        1u64 << (d - self.next_start())
    }
}

impl fmt::Display for ModeList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TorError {
    #[error("matrix dimension {0} is odd")]
    OddDimension(usize),
    #[error("{modes} modes exceed the cap of {cap}")]
    CapExceeded { modes: usize, cap: usize },
    #[error(
        "I - A_Z is not positive definite for removed modes {removed} (diagonal index {index})"
    )]
    NotPositiveDefinite { removed: ModeList, index: usize },
    #[error("non-finite matrix entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Torontonian value with its bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorResult {
    pub value: DDReal,
    pub addend_count: u64,
    pub flos: FloCounter,
}

/// Evaluation settings shared by all evaluators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub precision: CholeskyPrecision,
    pub counting: bool,
    /// Largest accepted mode count.
    pub mode_cap: usize,
}

impl EvalOptions {
    pub fn naive(precision: CholeskyPrecision) -> Self {
        Self {
            precision,
            counting: false,
            mode_cap: NAIVE_MODE_CAP,
        }
    }

    pub fn recursive(precision: CholeskyPrecision) -> Self {
        Self {
            precision,
            counting: false,
            mode_cap: RECURSIVE_MODE_CAP,
        }
    }

    pub fn with_counting(mut self, counting: bool) -> Self {
        self.counting = counting;
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.mode_cap = cap;
        self
    }
}

/// One signed addend, keyed by the mask of removed modes.
pub type Addend = (u64, DDReal);

/// Per-task accumulation: partial sum, addend tally, FLOs and, in diagnostic
/// runs, every addend produced.
#[derive(Debug, Clone, Default)]
pub struct TaskLocalState<F> {
    pub partial: DDReal,
    pub addends: u64,
    pub flos: F,
    pub record: Option<Vec<Addend>>,
}

impl<F: FloSink + Default> TaskLocalState<F> {
    pub fn new(recording: bool) -> Self {
        Self {
            partial: DDReal::ZERO,
            addends: 0,
            flos: F::default(),
            record: recording.then(Vec::new),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, mask: u64, addend: DDReal) {
        self.partial += addend;
        self.addends += 1;
        if let Some(r) = &mut self.record {
            r.push((mask, addend));
        }
    }

    pub fn merge(&mut self, other: Self)
    where
        F: MergeFlos,
    {
        self.partial += other.partial;
        self.addends += other.addends;
        self.flos.merge_from(&other.flos);
        if let (Some(a), Some(b)) = (&mut self.record, other.record) {
            a.extend(b);
        }
    }
}

/// Counter types that can be folded together.
pub trait MergeFlos: FloSink + Default + Send + 'static {
    fn merge_from(&mut self, other: &Self);
    fn total(&self) -> FloCounter;
}

impl MergeFlos for FloCounter {
    fn merge_from(&mut self, other: &Self) {
        self.merge(*other);
    }
    fn total(&self) -> FloCounter {
        *self
    }
}

impl MergeFlos for NoFlops {
    fn merge_from(&mut self, _other: &Self) {}
    fn total(&self) -> FloCounter {
        FloCounter::default()
    }
}

pub(crate) fn validate_input(a: &ComplexMatrix, cap: usize) -> Result<usize, TorError> {
    let n = a.n();
    if !n.is_multiple_of(2) {
        return Err(TorError::OddDimension(n));
    }
    let d = n / 2;
    let cap = cap.min(MAX_MODES);
    if d > cap {
        return Err(TorError::CapExceeded { modes: d, cap });
    }
    for i in 0..n {
        for j in 0..n {
            let z = a.get(i, j);
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(TorError::NonFinite(i, j));
            }
        }
    }
    Ok(d)
}

#[inline]
fn signed_addend<F: FloSink>(det: DDReal, removed: usize, flo: &mut F) -> DDReal {
    flo.charge(flo::ADDEND);
    // det is a product of squares of positive reals, hence > 0.
    let root = det.sqrt().unwrap_or(DDReal::from(f64::NAN));
    let term = root.recip();
    if removed % 2 == 1 {
        -term
    } else {
        term
    }
}

/// Brute-force evaluation: one independent factorization per subset.
pub fn tor_naive(a: &ComplexMatrix, opts: EvalOptions) -> Result<TorResult, TorError> {
    tor_naive_with_addends(a, opts, false).map(|(r, _)| r)
}

/// As [`tor_naive`], optionally returning every addend.
pub fn tor_naive_with_addends(
    a: &ComplexMatrix,
    opts: EvalOptions,
    recording: bool,
) -> Result<(TorResult, Option<Vec<Addend>>), TorError> {
    let d = validate_input(a, opts.mode_cap)?;
    match (opts.precision, opts.counting) {
        (CholeskyPrecision::Double, false) => naive_impl::<Complex64, NoFlops>(a, d, recording),
        (CholeskyPrecision::Double, true) => naive_impl::<Complex64, FloCounter>(a, d, recording),
        (CholeskyPrecision::Extended, false) => naive_impl::<DDComplex, NoFlops>(a, d, recording),
        (CholeskyPrecision::Extended, true) => naive_impl::<DDComplex, FloCounter>(a, d, recording),
    }
}

fn naive_impl<T: Scalar, F: MergeFlos>(
    a: &ComplexMatrix,
    d: usize,
    recording: bool,
) -> Result<(TorResult, Option<Vec<Addend>>), TorError> {
    let ia: SquareMatrix<T> = a.identity_minus();
    let n = 2 * d;
    let mut state = TaskLocalState::<F>::new(recording);
    let mut buf = vec![T::default(); n * n];
    let mut idx = Vec::with_capacity(n);
    let full = if d == 0 { 0u64 } else { (1u64 << d) - 1 };
    for z in 0..=full {
        // z is the mask of kept modes.
        idx.clear();
        for m in 0..d {
            if z >> m & 1 == 1 {
                idx.push(2 * m);
                idx.push(2 * m + 1);
            }
        }
        let k = idx.len();
        for (r, &oi) in idx.iter().enumerate() {
            for (c, &oj) in idx[..=r].iter().enumerate() {
                buf[r * k + c] = ia.get(oi, oj);
            }
        }
        linalg::factor_rows(&mut buf, k, 0, k, &mut state.flos).map_err(|index| {
            TorError::NotPositiveDefinite {
                removed: ModeList::from_mask(full & !z),
                index,
            }
        })?;
        state.flos.charge(flo::determinant(k));
        let det = linalg::det_from_diagonal::<T>((0..k).map(|r| buf[r * k + r].re()));
        let removed = d - z.count_ones() as usize;
        let addend = signed_addend(det, removed, &mut state.flos);
        state.push(full & !z, addend);
    }
    Ok((
        TorResult {
            value: state.partial,
            addend_count: state.addends,
            flos: state.flos.total(),
        },
        state.record,
    ))
}

/// Evaluation context: `I - A` in the factorization field.
pub(crate) struct Context<T> {
    pub d: usize,
    pub n: usize,
    pub ia: SquareMatrix<T>,
}

impl<T: Scalar> Context<T> {
    pub fn new(a: &ComplexMatrix) -> Self {
        Self {
            d: a.n() / 2,
            n: a.n(),
            ia: a.identity_minus(),
        }
    }

    /// Original row/column index of local index `local` given kept modes.
    #[inline]
    fn orig(kept: &[usize], local: usize) -> usize {
        2 * kept[local / 2] + (local & 1)
    }
}

/// Factor of one recursion node. Rows `owned_from..size` hold complete `L`
/// rows (stride `Context::n`); rows below are the ancestors' and are never
/// read through this node.
#[derive(Debug, Clone)]
pub(crate) struct Node<T: Scalar> {
    pub kept: Vec<usize>,
    pub mask: u64,
    pub start: usize,
    pub size: usize,
    pub owned_from: usize,
    pub rows: Vec<T>,
    pub diag: Vec<T::Real>,
}

impl<T: Scalar> Node<T> {
    pub fn blank(n: usize) -> Self {
        Self {
            kept: Vec::with_capacity(n / 2),
            mask: 0,
            start: 0,
            size: 0,
            owned_from: 0,
            rows: vec![T::default(); n * n],
            diag: vec![T::Real::default(); n],
        }
    }

    pub fn depth(&self, d: usize) -> usize {
        d - self.kept.len()
    }

    pub fn removed(&self) -> ModeList {
        ModeList::from_mask(self.mask)
    }

    /// Factors `I - A_Z` for the given removed modes from scratch.
    pub fn from_scratch<F: FloSink>(
        ctx: &Context<T>,
        removed: &ModeList,
        flo: &mut F,
    ) -> Result<Self, TorError> {
        let mut node = Self::blank(ctx.n);
        node.kept = removed.complement(ctx.d);
        node.mask = removed.mask();
        node.start = removed.next_start();
        node.size = 2 * node.kept.len();
        node.owned_from = 0;
        let stride = ctx.n;
        for r in 0..node.size {
            let oi = Context::<T>::orig(&node.kept, r);
            for c in 0..=r {
                node.rows[r * stride + c] = ctx.ia.get(oi, Context::<T>::orig(&node.kept, c));
            }
        }
        linalg::factor_rows(&mut node.rows, stride, 0, node.size, flo).map_err(|index| {
            TorError::NotPositiveDefinite {
                removed: removed.clone(),
                index,
            }
        })?;
        for r in 0..node.size {
            node.diag[r] = node.rows[r * stride + r].re();
        }
        Ok(node)
    }

    /// Signed addend of this node.
    #[inline]
    pub fn addend<F: FloSink>(&self, d: usize, flo: &mut F) -> DDReal {
        flo.charge(flo::determinant(self.size));
        let det = linalg::det_from_diagonal::<T>(self.diag[..self.size].iter().copied());
        signed_addend(det, self.depth(d), flo)
    }

    /// Overwrites `child` with the factor obtained by additionally removing
    /// `mode` (which must be `>= self.start`).
    pub fn build_child<F: FloSink>(
        &self,
        ctx: &Context<T>,
        mode: usize,
        child: &mut Self,
        flo: &mut F,
    ) -> Result<(), TorError> {
        let stride = ctx.n;
        let depth = self.depth(ctx.d);
        let pos = mode - depth;
        debug_assert_eq!(self.kept[pos], mode);
        let s = 2 * pos;
        let m = self.size - 2;
        child.kept.clear();
        child.kept.extend_from_slice(&self.kept[..pos]);
        child.kept.extend_from_slice(&self.kept[pos + 1..]);
        child.mask = self.mask | 1u64 << mode;
        child.start = mode + 1;
        child.size = m;
        child.owned_from = s;
        for r in s..m {
            let dst = r * stride;
            let src = (r + 2) * stride;
            child.rows[dst..dst + s].copy_from_slice(&self.rows[src..src + s]);
            let oi = Context::<T>::orig(&child.kept, r);
            let ia_row = ctx.ia.row(oi);
            for c in s..=r {
                child.rows[dst + c] = ia_row[Context::<T>::orig(&child.kept, c)];
            }
        }
        linalg::factor_rows(&mut child.rows, stride, s, m, flo).map_err(|index| {
            TorError::NotPositiveDefinite {
                removed: child.removed(),
                index,
            }
        })?;
        child.diag[..s].copy_from_slice(&self.diag[..s]);
        for r in s..m {
            child.diag[r] = child.rows[r * stride + r].re();
        }
        Ok(())
    }
}

/// Callback receiving subtrees to be evaluated elsewhere: the child node and
/// the original mode count of its subtree.
pub(crate) type Spawner<'a, T> = dyn FnMut(Node<T>) + 'a;

/// Depth-first walk below `levels[0]`, reusing `levels[1..]` as scratch.
///
/// Children whose subtree holds at least `2^cutoff` addends are handed to
/// `spawn` (after their own addend is added) instead of being descended.
pub(crate) fn descend<T: Scalar, F: MergeFlos>(
    ctx: &Context<T>,
    levels: &mut [Node<T>],
    state: &mut TaskLocalState<F>,
    mut spawn: Option<(&mut Spawner<'_, T>, usize)>,
) -> Result<(), TorError> {
    let d = ctx.d;
    let (parent, rest) = levels
        .split_first_mut()
        .expect("scratch holds a level per remaining depth");
    for mode in parent.start..d {
        let child = &mut rest[0];
        parent.build_child(ctx, mode, child, &mut state.flos)?;
        let addend = child.addend(d, &mut state.flos);
        state.push(child.mask, addend);
        let below = d - mode - 1;
        if below == 0 {
            continue;
        }
        let hand_off = matches!(&spawn, Some((_, cutoff)) if below >= *cutoff);
        if hand_off {
            if let Some((f, _)) = spawn.as_mut() {
                f(child.clone());
            }
        } else {
            descend(
                ctx,
                rest,
                state,
                spawn.as_mut().map(|(f, c)| (&mut **f, *c)),
            )?;
        }
    }
    Ok(())
}

/// Scratch levels for a walk starting at depth `depth`.
pub(crate) fn scratch_levels<T: Scalar>(ctx: &Context<T>) -> Vec<Node<T>> {
    (0..=ctx.d).map(|_| Node::blank(ctx.n)).collect()
}

/// Recursive evaluation, serial.
pub fn tor_recursive(a: &ComplexMatrix, opts: EvalOptions) -> Result<TorResult, TorError> {
    tor_recursive_with_addends(a, opts, false).map(|(r, _)| r)
}

/// As [`tor_recursive`], optionally returning every addend.
pub fn tor_recursive_with_addends(
    a: &ComplexMatrix,
    opts: EvalOptions,
    recording: bool,
) -> Result<(TorResult, Option<Vec<Addend>>), TorError> {
    validate_input(a, opts.mode_cap)?;
    match (opts.precision, opts.counting) {
        (CholeskyPrecision::Double, false) => recursive_impl::<Complex64, NoFlops>(a, recording),
        (CholeskyPrecision::Double, true) => recursive_impl::<Complex64, FloCounter>(a, recording),
        (CholeskyPrecision::Extended, false) => recursive_impl::<DDComplex, NoFlops>(a, recording),
        (CholeskyPrecision::Extended, true) => {
            recursive_impl::<DDComplex, FloCounter>(a, recording)
        }
    }
}

fn recursive_impl<T: Scalar, F: MergeFlos>(
    a: &ComplexMatrix,
    recording: bool,
) -> Result<(TorResult, Option<Vec<Addend>>), TorError> {
    let ctx = Context::<T>::new(a);
    let mut state = TaskLocalState::<F>::new(recording);
    let mut levels = scratch_levels(&ctx);
    levels[0] = Node::from_scratch(&ctx, &ModeList::empty(), &mut state.flos)?;
    let root = levels[0].addend(ctx.d, &mut state.flos);
    state.push(0, root);
    if ctx.d > 0 {
        descend(&ctx, &mut levels, &mut state, None)?;
    }
    Ok((
        TorResult {
            value: state.partial,
            addend_count: state.addends,
            flos: state.flos.total(),
        },
        state.record,
    ))
}
