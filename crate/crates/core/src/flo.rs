//! Floating-point operation accounting.
//!
//! One FLO is one real scalar operation. Complex operations are charged by
//! their real-arithmetic formulas:
//!
//! | operation                 | FLOs |
//! |---------------------------|------|
//! | complex add / sub         | 2    |
//! | complex mul               | 6    |
//! | complex div               | 11   |
//! | complex / real            | 2    |
//! | `abs2(z)`                 | 3    |
//! | real add / mul / div / sqrt | 1  |
//!
//! The same table is used by the runtime counters inside the kernels and by
//! the closed-form totals below, so the two agree exactly.

use std::ops::AddAssign;

pub const COMPLEX_ADD: u64 = 2;
pub const COMPLEX_MUL: u64 = 6;
pub const COMPLEX_DIV: u64 = 11;
pub const COMPLEX_DIV_REAL: u64 = 2;
pub const ABS2: u64 = 3;
pub const REAL_OP: u64 = 1;

/// Receiver of FLO charges. Kernels are generic over it so that uncounted
/// runs compile the accounting away.
pub trait FloSink {
    fn charge(&mut self, flos: u64);
}

/// Sink that discards all charges.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFlops;

impl FloSink for NoFlops {
    #[inline(always)]
    fn charge(&mut self, _flos: u64) {}
}

/// Additive tally of FLOs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FloCounter {
    pub count: u64,
}

impl FloCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn merge(&mut self, other: FloCounter) {
        self.count += other.count;
    }
}

impl FloSink for FloCounter {
    #[inline(always)]
    fn charge(&mut self, flos: u64) {
        self.count += flos;
    }
}

impl AddAssign for FloCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.merge(rhs);
    }
}

/// Cost of factoring row `i` when columns `start..i` are recomputed.
///
/// Each off-diagonal entry `L[i][j]` costs `j` multiply-subtracts of 8 FLOs
/// and a division by the real `L[j][j]`; the diagonal costs `i`
/// `abs2`-subtracts of 4 FLOs and a square root.
#[inline]
pub fn cholesky_row(start: usize, i: usize) -> u64 {
    let (s, i) = (start as u64, i as u64);
    // sum_{j=s}^{i-1} (8j + 2)
    let off = if i > s {
        4 * (i * (i - 1) - s * (s.saturating_sub(1))) + 2 * (i - s)
    } else {
        0
    };
    off + (ABS2 + REAL_OP) * i + REAL_OP
}

/// Cost of factoring rows `start..n` of an `n`-dimensional matrix.
pub fn cholesky_rows(start: usize, n: usize) -> u64 {
    (start..n).map(|i| cholesky_row(start, i)).sum()
}

/// Full Cholesky decomposition of an `n`-dimensional matrix.
pub fn cholesky_full(n: usize) -> u64 {
    cholesky_rows(0, n)
}

/// Determinant from the diagonal of an `n`-dimensional factor: a square and
/// an accumulate per diagonal entry.
pub fn determinant(n: usize) -> u64 {
    2 * n as u64
}

/// Turning a determinant into a signed addend: one square root, one
/// reciprocal and one accumulation.
pub const ADDEND: u64 = 3;

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Closed-form FLO total of the standard (independent-determinant)
/// evaluation of an `big_n`-dimensional matrix. Wider than the runtime
/// tally so that sizes beyond direct evaluation (N = 100) do not overflow.
pub fn count_flos_standard(big_n: usize) -> u128 {
    let d = (big_n / 2) as u64;
    (0..=d)
        .map(|k| {
            let n = 2 * k as usize;
            binomial(d, k) * u128::from(cholesky_full(n) + determinant(n) + ADDEND)
        })
        .sum()
}

/// Closed-form FLO total of the recursive evaluation. Not used as a
/// substitute for the runtime counter; it is the analytic companion the
/// runtime counter is checked against.
pub fn count_flos_recursive(big_n: usize) -> u128 {
    let d = big_n / 2;
    let mut total = u128::from(cholesky_full(big_n) + determinant(big_n) + ADDEND);
    for last in 0..d {
        for k in 1..=last + 1 {
            // k removed modes, the largest being `last`; the others are any
            // (k-1)-subset of 0..last.
            let nodes = binomial(last as u64, (k - 1) as u64);
            let pos = last - (k - 1);
            let n = big_n - 2 * k;
            total += nodes * u128::from(cholesky_rows(2 * pos, n) + determinant(n) + ADDEND);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_brute(start: usize, i: usize) -> u64 {
        let off: u64 = (start..i)
            .map(|j| j as u64 * (COMPLEX_MUL + COMPLEX_ADD) + COMPLEX_DIV_REAL)
            .sum();
        off + i as u64 * (ABS2 + REAL_OP) + REAL_OP
    }

    #[test]
    fn row_formula_matches_loop() {
        for start in 0..12 {
            for i in start..20 {
                assert_eq!(cholesky_row(start, i), row_brute(start, i), "{start} {i}");
            }
        }
    }

    #[test]
    fn standard_count_edges() {
        // d = 0: one empty determinant, only the addend overhead.
        assert_eq!(count_flos_standard(0), u128::from(ADDEND));
        assert_eq!(cholesky_full(0), 0);
        // d = 1: empty subset plus a 2x2 factorization.
        assert_eq!(
            count_flos_standard(2),
            u128::from(2 * ADDEND + cholesky_full(2) + determinant(2))
        );
        assert_eq!(cholesky_full(1), 1);
        // 2x2: L11 sqrt (1); L21 div (2); L22: abs2-sub (4) + sqrt (1).
        assert_eq!(cholesky_full(2), 8);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(10, 3), 120);
        assert_eq!(binomial(30, 15), 155_117_520);
        assert_eq!(binomial(5, 0), 1);
    }
}
