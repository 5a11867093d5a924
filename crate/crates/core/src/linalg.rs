//! Small dense-matrix helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Largest `|m[i][j] - conj(m[j][i])|` over all entries.
pub fn max_asymmetry(m: &ComplexMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(m + m†) / 2`.
pub fn hermitize(m: &ComplexMatrix) -> ComplexMatrix {
    let n = m.nrows();
    ComplexMatrix::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |i, c| eig.eigenvectors[(i, order[c])]);
    (values, vectors)
}

/// `V diag(w) V†` for real weights.
pub fn recompose(vectors: &ComplexMatrix, weights: &[f64]) -> ComplexMatrix {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (c, &w) in weights.iter().enumerate() {
        scaled.column_mut(c).scale_mut(w);
    }
    let out = scaled * vectors.adjoint();
    debug_assert_eq!(out.nrows(), n);
    out
}

/// Apply `f` to the spectrum of a Hermitian matrix.
pub fn hermitian_map(m: &ComplexMatrix, f: impl Fn(f64) -> f64) -> ComplexMatrix {
    let (values, vectors) = hermitian_eigen(m);
    let mapped: Vec<f64> = values.into_iter().map(f).collect();
    hermitize(&recompose(&vectors, &mapped))
}

/// Real part of the trace of `a * b` without forming the product.
pub fn trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Frobenius inner product `Re Tr(a† b)`.
pub fn frobenius_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

pub(crate) fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}
