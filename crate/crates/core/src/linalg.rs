//! Dense complex matrices and the row-oriented Cholesky kernel.
//!
//! Matrices are stored row-major in full square form. The factorization
//! computes `L` row by row:
//!
//! ```text
//! L[i][j] = (M[i][j] - sum_{k<j} L[i][k] * conj(L[j][k])) / L[j][j]   (j < i)
//! L[i][i] = sqrt(M[i][i] - sum_{k<i} |L[i][k]|^2)
//! ```
//!
//! Row `i` only reads rows `<= i`, so a factorization can be resumed from any
//! column `s` when columns `< s` of every row `>= s` already hold `L` entries
//! and the block `[s.., s..]` holds the entries of the matrix being factored.
//! That is the continuation used after deleting a mode pair: the leading
//! block and the leading columns of the trailing rows are unchanged.

use std::fmt::Debug;

use num_complex::Complex64;
use thiserror::Error;

use crate::ddreal::{DDComplex, DDReal};
use crate::flo::{self, FloSink};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    /// The radicand of diagonal entry `index` was not strictly positive or
    /// not finite.
    #[error("matrix is not positive definite (diagonal index {index})")]
    NotPositiveDefinite { index: usize },
    #[error("mode index {mode} out of range for {modes} modes")]
    ModeOutOfRange { mode: usize, modes: usize },
    #[error("mode list must be strictly increasing")]
    ModesNotIncreasing,
    #[error("matrix dimension {0} is odd")]
    OddDimension(usize),
    #[error("start column {start} exceeds dimension {n}")]
    StartOutOfRange { start: usize, n: usize },
}

/// Scalar field the Cholesky kernel runs in: binary64 complex or
/// double-double complex.
pub trait Scalar: Copy + Default + Debug + Send + Sync + 'static {
    type Real: Copy + Default + Debug + Send + Sync + 'static;

    fn from_c64(z: Complex64) -> Self;
    /// Entry of `I - A` for input entry `a`.
    fn identity_minus(a: Complex64, diagonal: bool) -> Self;
    fn to_c64(self) -> Complex64;
    fn re(self) -> Self::Real;
    fn from_real(r: Self::Real) -> Self;
    /// `acc - sum_k a[k] * conj(b[k])`.
    fn sub_dot_conj(acc: Self, a: &[Self], b: &[Self]) -> Self;
    /// `acc - sum_k |a[k]|^2`.
    fn sub_norm_sqr(acc: Self::Real, a: &[Self]) -> Self::Real;
    fn div_real(self, r: Self::Real) -> Self;
    /// Square root of a strictly positive finite radicand, else `None`.
    fn sqrt_positive(r: Self::Real) -> Option<Self::Real>;
    fn real_to_dd(r: Self::Real) -> DDReal;
    fn conj(self) -> Self;
    fn mul(self, other: Self) -> Self;
    fn add(self, other: Self) -> Self;
    fn sub(self, other: Self) -> Self;
}

impl Scalar for Complex64 {
    type Real = f64;

    #[inline]
    fn from_c64(z: Complex64) -> Self {
        z
    }
    #[inline]
    fn identity_minus(a: Complex64, diagonal: bool) -> Self {
        if diagonal {
            Complex64::new(1.0 - a.re, -a.im)
        } else {
            -a
        }
    }
    #[inline]
    fn to_c64(self) -> Complex64 {
        self
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn from_real(r: f64) -> Self {
        Complex64::new(r, 0.0)
    }
    #[inline]
    fn sub_dot_conj(acc: Self, a: &[Self], b: &[Self]) -> Self {
        let (mut re, mut im) = (acc.re, acc.im);
        for (x, y) in a.iter().zip(b) {
            re -= x.re * y.re + x.im * y.im;
            im -= x.im * y.re - x.re * y.im;
        }
        Complex64::new(re, im)
    }
    #[inline]
    fn sub_norm_sqr(acc: f64, a: &[Self]) -> f64 {
        let mut s = acc;
        for x in a {
            s -= x.re * x.re + x.im * x.im;
        }
        s
    }
    #[inline]
    fn div_real(self, r: f64) -> Self {
        Complex64::new(self.re / r, self.im / r)
    }
    #[inline]
    fn sqrt_positive(r: f64) -> Option<f64> {
        (r > 0.0 && r.is_finite()).then(|| r.sqrt())
    }
    #[inline]
    fn real_to_dd(r: f64) -> DDReal {
        DDReal::from(r)
    }
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn mul(self, other: Self) -> Self {
        self * other
    }
    #[inline]
    fn add(self, other: Self) -> Self {
        self + other
    }
    #[inline]
    fn sub(self, other: Self) -> Self {
        self - other
    }
}

impl Scalar for DDComplex {
    type Real = DDReal;

    #[inline]
    fn from_c64(z: Complex64) -> Self {
        DDComplex::from_f64(z.re, z.im)
    }
    #[inline]
    fn identity_minus(a: Complex64, diagonal: bool) -> Self {
        if diagonal {
            DDComplex::new(DDReal::from_sum(1.0, -a.re), DDReal::from(-a.im))
        } else {
            DDComplex::from_f64(-a.re, -a.im)
        }
    }
    #[inline]
    fn to_c64(self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }
    #[inline]
    fn re(self) -> DDReal {
        self.re
    }
    #[inline]
    fn from_real(r: DDReal) -> Self {
        DDComplex::from(r)
    }
    #[inline]
    fn sub_dot_conj(acc: Self, a: &[Self], b: &[Self]) -> Self {
        let (mut re, mut im) = (acc.re, acc.im);
        for (x, y) in a.iter().zip(b) {
            re -= x.re * y.re + x.im * y.im;
            im -= x.im * y.re - x.re * y.im;
        }
        DDComplex::new(re, im)
    }
    #[inline]
    fn sub_norm_sqr(acc: DDReal, a: &[Self]) -> DDReal {
        let mut s = acc;
        for x in a {
            s -= x.re.sqr() + x.im.sqr();
        }
        s
    }
    #[inline]
    fn div_real(self, r: DDReal) -> Self {
        DDComplex::div_real(self, r)
    }
    #[inline]
    fn sqrt_positive(r: DDReal) -> Option<DDReal> {
        if r.hi > 0.0 && r.is_finite() {
            r.sqrt().ok()
        } else {
            None
        }
    }
    #[inline]
    fn real_to_dd(r: DDReal) -> DDReal {
        r
    }
    #[inline]
    fn conj(self) -> Self {
        DDComplex::conj(self)
    }
    #[inline]
    fn mul(self, other: Self) -> Self {
        self * other
    }
    #[inline]
    fn add(self, other: Self) -> Self {
        self + other
    }
    #[inline]
    fn sub(self, other: Self) -> Self {
        self - other
    }
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

/// Binary64 complex matrix, the carrier of sampling matrices.
pub type ComplexMatrix = SquareMatrix<Complex64>;

impl<T: Copy + Default> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::default(); n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Builds a matrix from `n*n` row-major entries.
    ///
    /// # Panics
    /// If `data.len() != n * n`.
    pub fn from_row_major(n: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * n, "expected {} entries", n * n);
        Self { n, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Simultaneous row and column permutation: entry `(i, j)` of the result
    /// is entry `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        Self::from_fn(self.n, |i, j| self.get(perm[i], perm[j]))
    }
}

impl ComplexMatrix {
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| {
            if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self.get(j, i).conj())
    }

    /// Largest componentwise deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..=i {
                let a = self.get(i, j);
                let b = self.get(j, i).conj();
                worst = worst.max((a.re - b.re).abs()).max((a.im - b.im).abs());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Entries of `I - self` lifted into the scalar field `T`.
    pub fn identity_minus<T: Scalar>(&self) -> SquareMatrix<T> {
        SquareMatrix::from_fn(self.n, |i, j| T::identity_minus(self.get(i, j), i == j))
    }

    /// Lifts every entry into the scalar field `T`.
    pub fn lift<T: Scalar>(&self) -> SquareMatrix<T> {
        SquareMatrix::from_fn(self.n, |i, j| T::from_c64(self.get(i, j)))
    }
}

/// Interleaved row/column index of the `half`-th component (`0` = â, `1` = â†)
/// of mode `mode`.
#[inline]
pub fn mode_index(mode: usize, half: usize) -> usize {
    2 * mode + half
}

/// Validates a strictly increasing mode list against `modes` total modes.
pub fn check_modes(list: &[usize], modes: usize) -> Result<(), LinalgError> {
    for w in list.windows(2) {
        if w[0] >= w[1] {
            return Err(LinalgError::ModesNotIncreasing);
        }
    }
    if let Some(&m) = list.iter().find(|&&m| m >= modes) {
        return Err(LinalgError::ModeOutOfRange { mode: m, modes });
    }
    Ok(())
}

/// Principal submatrix on the `kept` modes, each contributing its adjacent
/// row/column pair in interleaved order.
pub fn reduce_matrix<T: Copy + Default>(
    src: &SquareMatrix<T>,
    kept: &[usize],
) -> Result<SquareMatrix<T>, LinalgError> {
    if !src.n().is_multiple_of(2) {
        return Err(LinalgError::OddDimension(src.n()));
    }
    check_modes(kept, src.n() / 2)?;
    let idx: Vec<usize> = kept
        .iter()
        .flat_map(|&m| [mode_index(m, 0), mode_index(m, 1)])
        .collect();
    Ok(SquareMatrix::from_fn(idx.len(), |i, j| {
        src.get(idx[i], idx[j])
    }))
}

/// Factors rows `start..n` of the row-major buffer `buf` (row stride
/// `stride`) in place. On entry, every row `i >= start` holds `L` entries in
/// columns `< start` and matrix entries in columns `start..=i`.
///
/// On failure returns the diagonal index whose radicand was not positive.
#[inline]
pub fn factor_rows<T: Scalar, F: FloSink>(
    buf: &mut [T],
    stride: usize,
    start: usize,
    n: usize,
    flo: &mut F,
) -> Result<(), usize> {
    for i in start..n {
        let (before, rest) = buf.split_at_mut(i * stride);
        let row_i = &mut rest[..i + 1];
        for j in start..i {
            let row_j = &before[j * stride..j * stride + j + 1];
            let acc = T::sub_dot_conj(row_i[j], &row_i[..j], &row_j[..j]);
            row_i[j] = acc.div_real(row_j[j].re());
        }
        let radicand = T::sub_norm_sqr(row_i[i].re(), &row_i[..i]);
        let d = T::sqrt_positive(radicand).ok_or(i)?;
        row_i[i] = T::from_real(d);
        flo.charge(flo::cholesky_row(start, i));
    }
    Ok(())
}

/// Lower-triangular Cholesky factor; the strict upper part is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T> {
    l: SquareMatrix<T>,
}

impl<T: Scalar> CholeskyFactor<T> {
    pub fn n(&self) -> usize {
        self.l.n()
    }

    /// Entry `L[i][j]`; zero above the diagonal.
    pub fn get(&self, i: usize, j: usize) -> T {
        if j > i {
            T::default()
        } else {
            self.l.get(i, j)
        }
    }

    pub fn diag(&self, i: usize) -> T::Real {
        self.l.get(i, i).re()
    }

    /// The factor with its strict upper part zeroed.
    pub fn lower(&self) -> SquareMatrix<T> {
        SquareMatrix::from_fn(self.n(), |i, j| self.get(i, j))
    }

    /// `L * L^H`.
    pub fn reconstruct(&self) -> SquareMatrix<T> {
        let n = self.n();
        SquareMatrix::from_fn(n, |i, j| {
            let mut acc = T::default();
            for k in 0..=i.min(j) {
                acc = acc.add(self.get(i, k).mul(self.get(j, k).conj()));
            }
            acc
        })
    }

    /// Raw buffer, for building a partial factor.
    pub fn into_buffer(self) -> SquareMatrix<T> {
        self.l
    }
}

/// Factors a Hermitian positive definite matrix.
pub fn cholesky<T: Scalar, F: FloSink>(
    m: &SquareMatrix<T>,
    flo: &mut F,
) -> Result<CholeskyFactor<T>, LinalgError> {
    cholesky_continue(m.clone(), 0, flo)
}

/// Resumes a factorization from column `start_col`.
///
/// `partial` must hold valid `L` rows below `start_col` and, in rows
/// `>= start_col`, `L` entries in columns `< start_col` followed by the
/// matrix entries being factored. Only the recomputed region is charged.
pub fn cholesky_continue<T: Scalar, F: FloSink>(
    mut partial: SquareMatrix<T>,
    start_col: usize,
    flo: &mut F,
) -> Result<CholeskyFactor<T>, LinalgError> {
    let n = partial.n();
    if start_col > n {
        return Err(LinalgError::StartOutOfRange {
            start: start_col,
            n,
        });
    }
    factor_rows(partial.as_mut_slice(), n, start_col, n, flo)
        .map_err(|index| LinalgError::NotPositiveDefinite { index })?;
    Ok(CholeskyFactor { l: partial })
}

/// Partial buffer for the matrix obtained by deleting mode position `pos`
/// (rows/columns `2*pos`, `2*pos + 1`) from the factored matrix.
///
/// `reduced` is the target matrix itself; its trailing block is copied into
/// the buffer while the leading columns come from `factor`. Continue the
/// result from column `2 * pos`.
pub fn partial_after_removal<T: Scalar>(
    factor: &CholeskyFactor<T>,
    reduced: &SquareMatrix<T>,
    pos: usize,
) -> Result<SquareMatrix<T>, LinalgError> {
    let n = factor.n();
    if !n.is_multiple_of(2) {
        return Err(LinalgError::OddDimension(n));
    }
    if 2 * pos + 2 > n {
        return Err(LinalgError::ModeOutOfRange {
            mode: pos,
            modes: n / 2,
        });
    }
    assert_eq!(reduced.n(), n - 2, "reduced matrix has the wrong size");
    let s = 2 * pos;
    Ok(SquareMatrix::from_fn(n - 2, |i, j| {
        if i < s {
            factor.get(i, j)
        } else if j < s {
            factor.get(i + 2, j)
        } else {
            reduced.get(i, j)
        }
    }))
}

/// `prod |L[i][i]|^2` in double-double precision; `1` for the empty factor.
pub fn det_from_diagonal<T: Scalar>(diag: impl IntoIterator<Item = T::Real>) -> DDReal {
    let mut det = DDReal::ONE;
    for d in diag {
        det *= T::real_to_dd(d).sqr();
    }
    det
}

pub fn det_from_factor<T: Scalar>(f: &CholeskyFactor<T>) -> DDReal {
    det_from_diagonal::<T>((0..f.n()).map(|i| f.diag(i)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flo::{FloCounter, NoFlops};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_factors_to_identity() {
        for n in [0, 1, 4, 7] {
            let f = cholesky(&ComplexMatrix::identity(n), &mut NoFlops).unwrap();
            assert_eq!(f.lower(), ComplexMatrix::identity(n));
            assert_eq!(det_from_factor(&f), DDReal::ONE);
        }
    }

    #[test]
    fn real_two_by_two() {
        let m = ComplexMatrix::from_row_major(
            2,
            vec![c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)],
        );
        let f = cholesky(&m, &mut NoFlops).unwrap();
        // Hand evaluation: L11 = sqrt 2, L21 = 1/sqrt 2, L22 = sqrt(2 - 1/2).
        assert!((f.get(0, 0).re - 2f64.sqrt()).abs() < 1e-15);
        assert!((f.get(1, 0).re - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((f.get(1, 1).re - 1.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.get(0, 1), c(0.0, 0.0));
        let det = det_from_factor(&f).to_f64();
        assert!((det - 3.0).abs() < 1e-14);
        let r = f.reconstruct();
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.get(i, j) - m.get(i, j)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn complex_two_by_two() {
        let m = ComplexMatrix::from_row_major(
            2,
            vec![c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)],
        );
        let f = cholesky(&m, &mut NoFlops).unwrap();
        assert_eq!(f.get(0, 0), c(1.0, 0.0));
        assert_eq!(f.get(1, 0), c(0.0, -1.0));
        assert_eq!(f.get(1, 1), c(1.0, 0.0));
        assert_eq!(f.reconstruct(), m);
    }

    #[test]
    fn not_positive_definite_carries_index() {
        let m = ComplexMatrix::from_row_major(
            2,
            vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(1.0, 0.0)],
        );
        assert_eq!(
            cholesky(&m, &mut NoFlops),
            Err(LinalgError::NotPositiveDefinite { index: 1 })
        );
        let z = ComplexMatrix::zeros(3);
        assert_eq!(
            cholesky(&z, &mut NoFlops),
            Err(LinalgError::NotPositiveDefinite { index: 0 })
        );
        let mut nan = ComplexMatrix::identity(2);
        nan.set(1, 1, c(f64::NAN, 0.0));
        assert!(cholesky(&nan, &mut NoFlops).is_err());
    }

    #[test]
    fn extended_two_by_two() {
        let m = ComplexMatrix::from_row_major(
            2,
            vec![c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)],
        );
        let f = cholesky(&m.lift::<DDComplex>(), &mut NoFlops).unwrap();
        let det = det_from_factor(&f);
        assert!((det - DDReal::from(3.0)).abs().to_f64() < 1e-30);
    }

    #[test]
    fn continuation_edges() {
        let m = ComplexMatrix::from_row_major(
            2,
            vec![c(2.0, 0.0), c(1.0, 0.5), c(1.0, -0.5), c(2.0, 0.0)],
        );
        let full = cholesky(&m, &mut NoFlops).unwrap();
        let from_zero = cholesky_continue(m.clone(), 0, &mut NoFlops).unwrap();
        assert_eq!(full, from_zero);
        let mut flo = FloCounter::new();
        let done = cholesky_continue(full.clone().into_buffer(), 2, &mut flo).unwrap();
        assert_eq!(done, full);
        assert_eq!(flo.count, 0);
        assert!(cholesky_continue(m, 3, &mut NoFlops).is_err());
    }

    #[test]
    fn flo_counts_follow_convention() {
        let m = ComplexMatrix::identity(6);
        let mut flo = FloCounter::new();
        cholesky(&m, &mut flo).unwrap();
        assert_eq!(flo.count, flo::cholesky_full(6));
    }

    #[test]
    fn reduce_matrix_cases() {
        let src = ComplexMatrix::from_fn(4, |i, j| c(i as f64, j as f64));
        assert_eq!(reduce_matrix(&src, &[0, 1]).unwrap(), src);
        assert_eq!(reduce_matrix(&src, &[]).unwrap().n(), 0);
        let tail = reduce_matrix(&src, &[1]).unwrap();
        assert_eq!(
            tail,
            ComplexMatrix::from_fn(2, |i, j| src.get(i + 2, j + 2))
        );
        assert_eq!(
            reduce_matrix(&src, &[2]),
            Err(LinalgError::ModeOutOfRange { mode: 2, modes: 2 })
        );
        assert_eq!(
            reduce_matrix(&src, &[1, 0]),
            Err(LinalgError::ModesNotIncreasing)
        );
        assert_eq!(
            reduce_matrix(&ComplexMatrix::zeros(3), &[0]),
            Err(LinalgError::OddDimension(3))
        );
    }
}
