//! Dense complex matrix helpers shared by the simulation and gradient code.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>` in column-major storage. The
//! hot products go through `matrixmultiply::zgemm`, which is several times
//! faster than the generic complex product for the 4..256 dimensions used here.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// `c = a * b` without allocating.
pub fn matmul_into(a: &CMatrix, b: &CMatrix, c: &mut CMatrix) {
    let (m, k) = a.shape();
    let (kb, n) = b.shape();
    assert_eq!(k, kb, "inner dimensions differ");
    assert_eq!(c.shape(), (m, n), "output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(ZERO);
        return;
    }
    // SAFETY: Complex64 is repr(C) { re, im }, so a column-major buffer of
    // Complex64 has the [f64; 2] layout zgemm expects. Strides describe the
    // column-major storage of each operand and all slices are in bounds.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
}

pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let mut c = CMatrix::zeros(a.nrows(), b.ncols());
    matmul_into(a, b, &mut c);
    c
}

/// `a * b * c`
pub fn matmul3(a: &CMatrix, b: &CMatrix, c: &CMatrix) -> CMatrix {
    matmul(&matmul(a, b), c)
}

pub fn dagger(a: &CMatrix) -> CMatrix {
    a.adjoint()
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

/// `Tr(a b)` in O(n²).
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), b.nrows());
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).norm()))
}

/// Largest entrywise deviation from Hermiticity, `max |A - A†|`.
pub fn hermiticity_error(a: &CMatrix) -> f64 {
    let n = a.nrows();
    if a.ncols() != n {
        return f64::INFINITY;
    }
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Hermitian part `(A + A†) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    matmul(a, b) - matmul(b, a)
}

/// `‖U U† − I‖_F`
pub fn unitarity_error(u: &CMatrix) -> f64 {
    let prod = matmul(u, &u.adjoint());
    frobenius(&(prod - identity(u.nrows())))
}

/// Spectral decomposition `H = V diag(λ) V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    /// Relative Hermiticity tolerance accepted before decomposing.
    pub const HERMITIAN_TOL: f64 = 1e-9;

    pub fn new(h: &CMatrix) -> Result<Self> {
        let scale = max_abs(h).max(1.0);
        let err = hermiticity_error(h);
        if !(err <= Self::HERMITIAN_TOL * scale) {
            return Err(Error::NotHermitian(err));
        }
        let eig = SymmetricEigen::try_new(h.clone(), f64::EPSILON, 0)
            .ok_or(Error::Eigendecomposition)?;
        let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eigendecomposition);
        }
        Ok(Self { values, vectors: eig.eigenvectors })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Phases `e^{-iλt}` of the propagator for time `t`.
    pub fn phases(&self, t: f64) -> Vec<Complex64> {
        self.values.iter().map(|&l| Complex64::from_polar(1.0, -l * t)).collect()
    }

    /// `exp(-i H t)`.
    pub fn propagator(&self, t: f64) -> CMatrix {
        let ph = self.phases(t);
        let mut scaled = self.vectors.clone();
        for (j, p) in ph.iter().enumerate() {
            for z in scaled.column_mut(j).iter_mut() {
                *z *= p;
            }
        }
        matmul(&scaled, &self.vectors.adjoint())
    }

    /// `V† A V`
    pub fn to_eigenbasis(&self, a: &CMatrix) -> CMatrix {
        matmul3(&self.vectors.adjoint(), a, &self.vectors)
    }

    /// `V A V†`
    pub fn from_eigenbasis(&self, a: &CMatrix) -> CMatrix {
        matmul3(&self.vectors, a, &self.vectors.adjoint())
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `d[a] * m[a][b] * conj(d[b])`: conjugation of an eigenbasis matrix by a
/// diagonal unitary.
pub fn conjugate_by_diagonal(m: &CMatrix, d: &[Complex64]) -> CMatrix {
    let n = m.nrows();
    CMatrix::from_fn(n, n, |a, b| d[a] * m[(a, b)] * d[b].conj())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> CMatrix {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        CMatrix::from_fn(n, n, |_, _| Complex64::new(next(), next()))
    }

    #[test]
    fn zgemm_matches_generic_product() {
        for &(m, k, n) in &[(1, 1, 1), (4, 3, 5), (32, 32, 32), (7, 16, 2)] {
            let a = CMatrix::from_fn(m, k, |i, j| Complex64::new(i as f64 - j as f64, (i * j) as f64 * 0.1));
            let b = CMatrix::from_fn(k, n, |i, j| Complex64::new((i + 2 * j) as f64, -(i as f64)));
            assert!(max_abs_diff(&matmul(&a, &b), &(&a * &b)) < 1e-10);
        }
    }

    #[test]
    fn eigen_reconstructs_and_propagates() {
        let a = sample(8, 3);
        let h = &a + a.adjoint();
        let eig = HermitianEigen::new(&h).unwrap();
        let diag = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            8,
            eig.values.iter().map(|&v| Complex64::new(v, 0.0)),
        ));
        assert!(max_abs_diff(&eig.from_eigenbasis(&diag), &h) < 1e-12);
        let u = eig.propagator(0.37);
        assert!(unitarity_error(&u) < 1e-12);
    }

    #[test]
    fn rejects_non_hermitian() {
        let a = sample(4, 9);
        assert!(matches!(HermitianEigen::new(&a), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn trace_product_matches_full_product() {
        let a = sample(6, 1);
        let b = sample(6, 2);
        assert!((trace_product(&a, &b) - matmul(&a, &b).trace()).norm() < 1e-12);
    }
}
