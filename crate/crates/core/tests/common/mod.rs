#![allow(dead_code)]

use tor_core::linalg::{reduce_matrix, ComplexMatrix};
use tor_core::Complex64;

/// Determinant by LU with partial pivoting, independent of the crate's
/// Cholesky code.
pub fn lu_det(m: &ComplexMatrix) -> Complex64 {
    let n = m.n();
    let mut a: Vec<Complex64> = m.as_slice().to_vec();
    let mut det = Complex64::new(1.0, 0.0);
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i * n + k].norm().total_cmp(&a[j * n + k].norm()))
            .unwrap();
        if a[p * n + k].norm() == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if p != k {
            for c in 0..n {
                a.swap(p * n + c, k * n + c);
            }
            det = -det;
        }
        let piv = a[k * n + k];
        det *= piv;
        for i in k + 1..n {
            let f = a[i * n + k] / piv;
            for c in k..n {
                let v = a[k * n + c];
                a[i * n + c] -= f * v;
            }
        }
    }
    det
}

/// Torontonian straight from its subset-sum definition, with LU
/// determinants and a compensated binary64 sum.
pub fn brute_tor(a: &ComplexMatrix) -> f64 {
    let d = a.n() / 2;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for z in 0u64..1 << d {
        let kept: Vec<usize> = (0..d).filter(|m| z >> m & 1 == 1).collect();
        let sub = reduce_matrix(a, &kept).unwrap();
        let ia = ComplexMatrix::from_fn(sub.n(), |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            Complex64::new(id, 0.0) - sub.get(i, j)
        });
        let det = lu_det(&ia).re;
        let sign = if (d - kept.len()) % 2 == 0 { 1.0 } else { -1.0 };
        let term = sign / det.sqrt();
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Mode-wise direct sum in interleaved ordering.
pub fn direct_sum(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (na, nb) = (a.n(), b.n());
    ComplexMatrix::from_fn(na + nb, |i, j| {
        if i < na && j < na {
            a.get(i, j)
        } else if i >= na && j >= na {
            b.get(i - na, j - na)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Simultaneous row/column permutation moving mode `perm[k]` to mode `k`.
pub fn permute_modes(a: &ComplexMatrix, perm: &[usize]) -> ComplexMatrix {
    let idx: Vec<usize> = (0..a.n()).map(|k| 2 * perm[k / 2] + k % 2).collect();
    a.permuted(&idx)
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
