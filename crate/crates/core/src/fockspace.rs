//! Truncated single-mode Fock space: states, ladder/parity/displacement
//! operators and oscillator wavefunctions.
//!
//! Truncated coherent and thermal states are never renormalized. The
//! truncation deficit shows up in their norm or trace, and the caller is
//! expected to pick a dimension large enough for the deficit not to matter.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eigen, hermitize, ln_factorials, max_asymmetry, ComplexMatrix, ComplexVector, ONE, ZERO,
};

/// Tolerance on per-entry Hermitian asymmetry for operators.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Tolerance on the trace of a density matrix.
pub const TRACE_TOL: f64 = 1e-9;
/// Most negative eigenvalue a density matrix may carry.
pub const PSD_TOL: f64 = 1e-9;

/// Hilbert-space truncation: Fock states `|0>..|n-1>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct FockDim(usize);

impl FockDim {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("dim", "Fock dimension must be at least 1"));
        }
        Ok(FockDim(n))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for FockDim {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        FockDim::new(n)
    }
}

impl From<FockDim> for usize {
    fn from(d: FockDim) -> usize {
        d.0
    }
}

impl std::fmt::Display for FockDim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ket in the truncated Fock basis. Not necessarily normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    amplitudes: ComplexVector,
}

impl StateVector {
    pub fn new(amplitudes: ComplexVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::param("amplitudes", "state vector must be nonempty"));
        }
        if amplitudes.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("state amplitudes"));
        }
        Ok(StateVector { amplitudes })
    }

    pub fn from_slice(amplitudes: &[Complex64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(amplitudes))
    }

    /// `|n>` in dimension `dim`.
    pub fn fock(n: usize, dim: FockDim) -> Result<Self> {
        if n >= dim.get() {
            return Err(Error::param("n", format!("Fock index {n} outside dimension {dim}")));
        }
        let mut v = ComplexVector::zeros(dim.get());
        v[n] = ONE;
        Ok(StateVector { amplitudes: v })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &ComplexVector {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if norm == 0.0 {
            return Err(Error::Invariant("cannot normalize the zero vector".into()));
        }
        Ok(StateVector { amplitudes: self.amplitudes.unscale(norm) })
    }

    /// `|psi><psi|` without normalization.
    pub fn projector(&self) -> ComplexMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }
}

/// Square complex matrix that is Hermitian within [`HERMITIAN_TOL`].
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    entries: ComplexMatrix,
}

impl HermitianOperator {
    /// Checked constructor: rejects matrices whose asymmetry exceeds
    /// [`HERMITIAN_TOL`]. The stored matrix is exactly Hermitian.
    pub fn new(entries: ComplexMatrix) -> Result<Self> {
        check_square(&entries)?;
        if entries.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("operator entries"));
        }
        let asym = max_asymmetry(&entries);
        if asym > HERMITIAN_TOL {
            return Err(Error::NotHermitian(asym));
        }
        Ok(HermitianOperator { entries: hermitize(&entries) })
    }

    /// Takes the Hermitian part of `entries` unconditionally.
    pub fn hermitian_part(entries: &ComplexMatrix) -> Self {
        HermitianOperator { entries: hermitize(entries) }
    }

    pub(crate) fn from_exact(entries: ComplexMatrix) -> Self {
        debug_assert!(max_asymmetry(&entries) <= HERMITIAN_TOL);
        HermitianOperator { entries }
    }

    pub fn entries(&self) -> &ComplexMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> ComplexMatrix {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|c| c.re).sum()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.entries).0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        HermitianOperator { entries: self.entries.scale(factor) }
    }

    /// `Tr[self * rho]`, real for Hermitian arguments.
    pub fn expectation(&self, rho: &DensityMatrix) -> f64 {
        crate::linalg::trace_product(&self.entries, rho.entries()).re
    }
}

/// Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(entries: ComplexMatrix) -> Result<Self> {
        let op = HermitianOperator::new(entries)?;
        Self::from_operator(op)
    }

    pub fn from_operator(op: HermitianOperator) -> Result<Self> {
        let trace = op.trace();
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(Error::Invariant(format!("density matrix trace {trace} != 1")));
        }
        let min_eig = op.eigenvalues()[0];
        if min_eig < -PSD_TOL {
            return Err(Error::Invariant(format!("density matrix has negative eigenvalue {min_eig:e}")));
        }
        Ok(DensityMatrix { entries: op.entries })
    }

    pub(crate) fn from_exact(entries: ComplexMatrix) -> Self {
        DensityMatrix { entries }
    }

    /// `|psi><psi|` for a normalized copy of `state`.
    pub fn pure(state: &StateVector) -> Result<Self> {
        let psi = state.normalized()?;
        Ok(DensityMatrix { entries: hermitize(&psi.projector()) })
    }

    /// `I / n`.
    pub fn maximally_mixed(dim: FockDim) -> Self {
        let n = dim.get();
        DensityMatrix { entries: ComplexMatrix::identity(n, n).unscale(n as f64) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &ComplexMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> ComplexMatrix {
        self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|c| c.re).sum()
    }

    pub fn as_operator(&self) -> HermitianOperator {
        HermitianOperator { entries: self.entries.clone() }
    }

    /// Copy embedded in a larger or truncated to a smaller dimension.
    /// Truncation renormalizes the retained block.
    pub fn resized(&self, dim: FockDim) -> Result<Self> {
        let n = dim.get();
        let m = self.dim();
        let k = n.min(m);
        let mut out = ComplexMatrix::zeros(n, n);
        out.view_mut((0, 0), (k, k)).copy_from(&self.entries.view((0, 0), (k, k)));
        let tr: f64 = out.diagonal().iter().map(|c| c.re).sum();
        if tr <= 0.0 {
            return Err(Error::Invariant("truncated state has no weight".into()));
        }
        Self::from_operator(HermitianOperator::hermitian_part(&out.unscale(tr)))
    }
}

fn check_square(m: &ComplexMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch(format!("expected a square matrix, found {}x{}", m.nrows(), m.ncols())));
    }
    if m.nrows() == 0 {
        return Err(Error::ShapeMismatch("empty matrix".into()));
    }
    Ok(())
}

/// Ladder operator `a` with `a|n> = sqrt(n)|n-1>`.
pub fn annihilation_op(dim: FockDim) -> ComplexMatrix {
    let n = dim.get();
    let mut a = ComplexMatrix::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = Complex64::new((k as f64).sqrt(), 0.0);
    }
    a
}

/// Coherent state amplitudes `exp(-|alpha|^2/2) alpha^n / sqrt(n!)`, truncated.
pub fn coherent_state(alpha: Complex64, dim: FockDim) -> StateVector {
    let n = dim.get();
    let mut amps = ComplexVector::zeros(n);
    amps[0] = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for k in 1..n {
        amps[k] = amps[k - 1] * alpha / (k as f64).sqrt();
    }
    StateVector { amplitudes: amps }
}

/// `exp(alpha a† - conj(alpha) a)` evaluated inside the truncated space.
///
/// Only accurate against the untruncated operator while `|alpha|^2` is well
/// below `dim / 4`; use [`displacement_elements`] for exact matrix elements.
pub fn displacement_op(alpha: Complex64, dim: FockDim) -> ComplexMatrix {
    let n = dim.get();
    if alpha == ZERO {
        return ComplexMatrix::identity(n, n);
    }
    let a = annihilation_op(dim);
    let generator = a.adjoint() * alpha - &a * alpha.conj();
    // generator is skew-Hermitian, so i*generator is Hermitian and
    // D = exp(generator) = V exp(-i w) V†.
    let herm = hermitize(&(generator * Complex64::i()));
    let (w, v) = hermitian_eigen(&herm);
    let mut scaled = v.clone();
    for (c, &wc) in w.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -wc);
        for r in 0..n {
            scaled[(r, c)] *= phase;
        }
    }
    scaled * v.adjoint()
}

/// Exact matrix elements `<m|D(alpha)|n>` of the untruncated displacement
/// operator for `m < rows`, `n < cols`.
///
/// Uses the associated-Laguerre closed form with log-scaled prefactors, so
/// large displacements neither overflow nor depend on a truncation wall.
pub fn displacement_elements(alpha: Complex64, rows: usize, cols: usize) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(rows, cols);
    if rows == 0 || cols == 0 {
        return out;
    }
    if alpha == ZERO {
        for k in 0..rows.min(cols) {
            out[(k, k)] = ONE;
        }
        return out;
    }
    let x = alpha.norm_sqr();
    let ln_abs = alpha.norm().ln();
    let phi = alpha.arg();
    let lnf = ln_factorials(rows.max(cols));
    let max_order = rows.max(cols);
    let mut lag = Vec::new();
    for k in 0..max_order {
        // lower triangle: m = n + k, n < min(cols, rows - k)
        let lower = if k < rows { cols.min(rows - k) } else { 0 };
        // upper triangle: n = m + k, m < min(rows, cols - k)
        let upper = if k > 0 && k < cols { rows.min(cols - k) } else { 0 };
        let degrees = lower.max(upper);
        if degrees == 0 {
            continue;
        }
        laguerre_scaled(degrees, k as f64, x, &mut lag);
        let kf = k as f64;
        for (d, &(mant, scale)) in lag.iter().enumerate().take(lower) {
            let (m, n) = (d + k, d);
            let log_mag = -x / 2.0 + 0.5 * (lnf[n] - lnf[m]) + kf * ln_abs + scale;
            let mag = mant * log_mag.exp();
            out[(m, n)] = Complex64::from_polar(1.0, kf * phi) * mag;
        }
        for (d, &(mant, scale)) in lag.iter().enumerate().take(upper) {
            let (m, n) = (d, d + k);
            let log_mag = -x / 2.0 + 0.5 * (lnf[m] - lnf[n]) + kf * ln_abs + scale;
            let mag = mant * log_mag.exp();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            out[(m, n)] = Complex64::from_polar(sign, -kf * phi) * mag;
        }
    }
    out
}

/// Fills `out[d] = (mantissa, log_scale)` with
/// `L_d^{(order)}(x) = mantissa * exp(log_scale)` for `d < degrees`.
fn laguerre_scaled(degrees: usize, order: f64, x: f64, out: &mut Vec<(f64, f64)>) {
    const BIG: f64 = 1e150;
    let ln_big = BIG.ln();
    out.clear();
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut scale = 0.0;
    out.push((cur, scale));
    for d in 0..degrees.saturating_sub(1) {
        let df = d as f64;
        let next = if d == 0 {
            1.0 + order - x
        } else {
            ((2.0 * df + 1.0 + order - x) * cur - (df + order) * prev) / (df + 1.0)
        };
        prev = cur;
        cur = next;
        if cur.abs() > BIG {
            cur /= BIG;
            prev /= BIG;
            scale += ln_big;
        }
        out.push((cur, scale));
    }
}

fn thermal_populations(n_th: f64, count: usize) -> Vec<f64> {
    let ratio = n_th / (n_th + 1.0);
    let mut p = Vec::with_capacity(count);
    let mut cur = 1.0 / (n_th + 1.0);
    for _ in 0..count {
        p.push(cur);
        cur *= ratio;
    }
    p
}

/// Number of thermal populations needed for the neglected tail to drop
/// below `tail`.
pub(crate) fn thermal_cutoff(n_th: f64, tail: f64) -> usize {
    if n_th <= 0.0 {
        return 1;
    }
    let ratio = n_th / (n_th + 1.0);
    (tail.ln() / ratio.ln()).ceil().max(1.0) as usize
}

/// Thermal state with mean photon number `n_th`, truncated (trace < 1).
pub fn thermal_state(n_th: f64, dim: FockDim) -> Result<HermitianOperator> {
    if !(n_th >= 0.0) || !n_th.is_finite() {
        return Err(Error::param("n_th", format!("must be finite and >= 0, got {n_th}")));
    }
    let n = dim.get();
    let p = thermal_populations(n_th, n);
    let mut m = ComplexMatrix::zeros(n, n);
    for (k, pk) in p.into_iter().enumerate() {
        m[(k, k)] = Complex64::new(pk, 0.0);
    }
    Ok(HermitianOperator::from_exact(m))
}

/// Exact block `<m| D(alpha) rho_th D†(alpha) |n>`, `m, n < dim`, of a
/// displaced thermal state. The thermal mixture is summed until its tail
/// weight drops below 1e-16.
pub fn displaced_thermal_block(alpha: Complex64, n_th: f64, dim: FockDim) -> Result<HermitianOperator> {
    if !(n_th >= 0.0) || !n_th.is_finite() {
        return Err(Error::param("n_th", format!("must be finite and >= 0, got {n_th}")));
    }
    let n = dim.get();
    if n_th == 0.0 {
        let psi = coherent_state(alpha, dim);
        return Ok(HermitianOperator::from_exact(hermitize(&psi.projector())));
    }
    let terms = thermal_cutoff(n_th, 1e-16).max(n);
    let pops = thermal_populations(n_th, terms);
    let cols = displacement_elements(alpha, n, terms);
    let mut weighted = cols.clone();
    for (k, pk) in pops.iter().enumerate() {
        weighted.column_mut(k).scale_mut(*pk);
    }
    Ok(HermitianOperator::from_exact(hermitize(&(weighted * cols.adjoint()))))
}

/// `diag((-1)^n)`.
pub fn parity_op(dim: FockDim) -> HermitianOperator {
    let n = dim.get();
    let mut m = ComplexMatrix::zeros(n, n);
    for k in 0..n {
        m[(k, k)] = Complex64::new(if k % 2 == 0 { 1.0 } else { -1.0 }, 0.0);
    }
    HermitianOperator::from_exact(m)
}

/// Normalized oscillator eigenfunctions `psi_0(x) .. psi_{count-1}(x)` by the
/// three-term recurrence `psi_n = sqrt(2/n) x psi_{n-1} - sqrt((n-1)/n) psi_{n-2}`.
pub fn hosc_wavefunctions(count: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(PI.powf(-0.25) * (-x * x / 2.0).exp());
    if count > 1 {
        out.push(2f64.sqrt() * x * out[0]);
    }
    for n in 2..count {
        let nf = n as f64;
        let v = (2.0 / nf).sqrt() * x * out[n - 1] - ((nf - 1.0) / nf).sqrt() * out[n - 2];
        out.push(v);
    }
    out
}

/// `psi_n(x) = (2^n n!)^{-1/2} pi^{-1/4} exp(-x^2/2) H_n(x)`.
pub fn hosc_wavefunction(n: usize, x: f64) -> f64 {
    hosc_wavefunctions(n + 1, x)[n]
}

/// `<x_theta|n> = exp(-i n theta) psi_n(x)`.
pub fn quadrature_overlap(theta: f64, n: usize, x: f64) -> Complex64 {
    Complex64::from_polar(1.0, -(n as f64) * theta) * hosc_wavefunction(n, x)
}
