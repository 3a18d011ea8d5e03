//! Valid sampling matrices.
//!
//! Pure squeezed inputs through an interferometer `U` give
//! `B = U diag(tanh r) U^T` and, in block ordering `(a_1..a_d, a_1†..a_d†)`,
//! `A = [[0, conj(B)], [B, 0]]`. Its eigenvalues are `±tanh r_i`, so every
//! `I - A_Z` is positive definite. Matrices are emitted in interleaved
//! ordering `(a_1, a_1†, a_2, a_2†, ...)`.
//!
//! Randomness comes from ChaCha20 with one stream per purpose, so outputs
//! are reproducible across runs and platforms.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::ComplexMatrix;

/// Identifier of the generator recorded in matrix file headers.
pub const PRNG_ID: &str = "ChaCha20";

const STREAM_UNITARY: u64 = 1;
const STREAM_RANDOM_BASIS: u64 = 2;
const STREAM_RANDOM_SPECTRUM: u64 = 3;

/// Squeezing parameters of the `d` input modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeSpec {
    pub r: Vec<f64>,
    pub seed: u64,
}

impl SqueezeSpec {
    pub fn uniform(d: usize, r: f64, seed: u64) -> Self {
        Self {
            r: vec![r; d],
            seed,
        }
    }

    pub fn d(&self) -> usize {
        self.r.len()
    }

    /// Average squeezing.
    pub fn mean(&self) -> f64 {
        if self.r.is_empty() {
            0.0
        } else {
            self.r.iter().sum::<f64>() / self.r.len() as f64
        }
    }
}

/// A `d x d` unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferometerU(ComplexMatrix);

impl InterferometerU {
    pub fn identity(d: usize) -> Self {
        Self(ComplexMatrix::identity(d))
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn d(&self) -> usize {
        self.0.n()
    }

    /// `max |(U U^H - I)_{ij}|`.
    pub fn unitarity_defect(&self) -> f64 {
        let p = self.0.mul(&self.0.conj_transpose());
        let mut worst = 0.0f64;
        for i in 0..p.n() {
            for j in 0..p.n() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((p.get(i, j) - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Haar unitary from the QR decomposition of a complex Gaussian matrix,
/// with the phases of `R`'s diagonal moved into `Q`.
fn haar_from_rng(d: usize, rng: &mut impl Rng) -> ComplexMatrix {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let z = DMatrix::<Complex64>::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * scale, im * scale)
    });
    let qr = z.qr();
    let q = qr.q();
    let r = qr.r();
    ComplexMatrix::from_fn(d, |i, j| {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 {
            rjj / rjj.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        q[(i, j)] * phase
    })
}

/// Haar-random `d x d` unitary, deterministic in `seed`.
pub fn haar_unitary(d: usize, seed: u64) -> InterferometerU {
    let mut rng = stream_rng(seed, STREAM_UNITARY);
    InterferometerU(haar_from_rng(d, &mut rng))
}

/// Sampling matrix of pure squeezed inputs, interleaved ordering.
///
/// # Panics
/// If the sizes of `spec` and `u` differ.
pub fn sampling_matrix(spec: &SqueezeSpec, u: &InterferometerU) -> ComplexMatrix {
    let d = spec.d();
    assert_eq!(d, u.d(), "squeezing and interferometer sizes differ");
    let um = u.matrix();
    let t: Vec<f64> = spec.r.iter().map(|r| r.tanh()).collect();
    // B = U diag(t) U^T, symmetric.
    let b = ComplexMatrix::from_fn(d, |i, j| {
        (0..d)
            .map(|k| um.get(i, k) * t[k] * um.get(j, k))
            .sum::<Complex64>()
    });
    let zero = Complex64::new(0.0, 0.0);
    ComplexMatrix::from_fn(2 * d, |i, j| match (i % 2, j % 2) {
        (0, 1) => b.get(i / 2, j / 2).conj(),
        (1, 0) => b.get(i / 2, j / 2),
        _ => zero,
    })
}

/// Random Hermitian `2d x 2d` matrix `V diag(λ) V^H` with Haar `V` and
/// eigenvalues uniform in `[-spectral_radius, spectral_radius]`.
pub fn random_valid_matrix(d: usize, spectral_radius: f64, seed: u64) -> ComplexMatrix {
    let n = 2 * d;
    let v = haar_from_rng(n, &mut stream_rng(seed, STREAM_RANDOM_BASIS));
    let mut rng = stream_rng(seed, STREAM_RANDOM_SPECTRUM);
    let lambda: Vec<f64> = (0..n)
        .map(|_| spectral_radius * rng.random_range(-1.0..=1.0))
        .collect();
    let raw = ComplexMatrix::from_fn(n, |i, j| {
        (0..n)
            .map(|k| v.get(i, k) * lambda[k] * v.get(j, k).conj())
            .sum::<Complex64>()
    });
    // Exact Hermitian symmetry with a real diagonal.
    ComplexMatrix::from_fn(n, |i, j| {
        if i == j {
            Complex64::new(raw.get(i, i).re, 0.0)
        } else if i > j {
            raw.get(i, j)
        } else {
            raw.get(j, i).conj()
        }
    })
}

/// Row/column ordering of a sampling matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModeOrdering {
    /// `(a_1, a_1†, a_2, a_2†, ...)`
    Interleaved,
    /// `(a_1, ..., a_d, a_1†, ..., a_d†)`
    Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderingError {
    #[error("unknown ordering `{0}`")]
    Unknown(String),
    #[error("matrix dimension {0} is odd")]
    OddDimension(usize),
}

impl FromStr for ModeOrdering {
    type Err = OrderingError;
    fn from_str(s: &str) -> Result<Self, OrderingError> {
        match s {
            "interleaved" => Ok(Self::Interleaved),
            "block" => Ok(Self::Block),
            other => Err(OrderingError::Unknown(other.to_string())),
        }
    }
}

impl fmt::Display for ModeOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Interleaved => "interleaved",
            Self::Block => "block",
        })
    }
}

/// `perm[k]` is the block-ordered index of interleaved index `k`.
fn interleaved_to_block_index(n: usize) -> Vec<usize> {
    let d = n / 2;
    (0..n)
        .map(|k| if k % 2 == 0 { k / 2 } else { d + k / 2 })
        .collect()
}

/// Converts between orderings by a simultaneous row and column permutation.
pub fn reorder(
    a: &ComplexMatrix,
    from: ModeOrdering,
    to: ModeOrdering,
) -> Result<ComplexMatrix, OrderingError> {
    let n = a.n();
    if !n.is_multiple_of(2) {
        return Err(OrderingError::OddDimension(n));
    }
    let perm = interleaved_to_block_index(n);
    Ok(match (from, to) {
        (f, t) if f == t => a.clone(),
        (ModeOrdering::Block, ModeOrdering::Interleaved) => a.permuted(&perm),
        _ => {
            let mut inv = vec![0; n];
            for (k, &p) in perm.iter().enumerate() {
                inv[p] = k;
            }
            a.permuted(&inv)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flo::NoFlops;
    use crate::linalg::{cholesky, reduce_matrix};

    #[test]
    fn single_mode_unitary_has_unit_modulus() {
        let u = haar_unitary(1, 7);
        assert!((u.matrix().get(0, 0).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn haar_is_unitary_and_deterministic() {
        for d in [2, 5, 16, 40] {
            let u = haar_unitary(d, 11);
            assert!(u.unitarity_defect() < 1e-10, "d = {d}");
            assert_eq!(u, haar_unitary(d, 11));
        }
        assert_ne!(haar_unitary(4, 1), haar_unitary(4, 2));
    }

    #[test]
    fn vacuum_gives_zero_matrix() {
        let a = sampling_matrix(&SqueezeSpec::uniform(3, 0.0, 0), &haar_unitary(3, 5));
        assert!(a.as_slice().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn single_mode_structure() {
        let r0: f64 = 0.7;
        let a = sampling_matrix(
            &SqueezeSpec::uniform(1, r0, 0),
            &InterferometerU::identity(1),
        );
        let t = r0.tanh();
        assert_eq!(a.get(0, 0), Complex64::new(0.0, 0.0));
        assert_eq!(a.get(1, 1), Complex64::new(0.0, 0.0));
        assert!((a.get(0, 1) - Complex64::new(t, 0.0)).norm() < 1e-16);
        assert!((a.get(1, 0) - Complex64::new(t, 0.0)).norm() < 1e-16);
    }

    fn all_subsets_pd(a: &ComplexMatrix) -> bool {
        let d = a.n() / 2;
        (0u64..1 << d).all(|z| {
            let kept: Vec<usize> = (0..d).filter(|m| z >> m & 1 == 1).collect();
            let sub = reduce_matrix(a, &kept).unwrap();
            cholesky(&sub.identity_minus::<Complex64>(), &mut NoFlops).is_ok()
        })
    }

    #[test]
    fn generated_matrices_are_hermitian_and_valid() {
        let spec = SqueezeSpec {
            r: vec![0.3, 1.1, 0.6],
            seed: 9,
        };
        let a = sampling_matrix(&spec, &haar_unitary(3, 9));
        assert!(a.is_hermitian(1e-12));
        assert!(all_subsets_pd(&a));
        for d in [2, 4, 6] {
            let r = random_valid_matrix(d, 0.95, d as u64);
            assert!(r.is_hermitian(0.0));
            assert!(all_subsets_pd(&r));
            assert_eq!(r, random_valid_matrix(d, 0.95, d as u64));
        }
    }

    #[test]
    fn zero_radius_is_zero_matrix() {
        let a = random_valid_matrix(3, 0.0, 1);
        assert!(a.as_slice().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn reorder_permutations() {
        let a = ComplexMatrix::from_fn(2, |i, j| Complex64::new(i as f64, j as f64));
        assert_eq!(
            reorder(&a, ModeOrdering::Block, ModeOrdering::Interleaved).unwrap(),
            a
        );
        let b = ComplexMatrix::from_fn(4, |i, j| Complex64::new((4 * i + j) as f64, 0.0));
        let inter = reorder(&b, ModeOrdering::Block, ModeOrdering::Interleaved).unwrap();
        let order = [0, 2, 1, 3];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(inter.get(i, j), b.get(order[i], order[j]));
            }
        }
        let back = reorder(&inter, ModeOrdering::Interleaved, ModeOrdering::Block).unwrap();
        assert_eq!(back, b);
        assert!(reorder(
            &ComplexMatrix::zeros(3),
            ModeOrdering::Block,
            ModeOrdering::Interleaved
        )
        .is_err());
        assert!("diagonal".parse::<ModeOrdering>().is_err());
    }
}
