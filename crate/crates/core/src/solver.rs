//! Least squares over the spectrahedron `{rho >= 0, Tr rho = 1}`:
//! minimize `f(rho) = ||A vec(rho) - b||^2` by accelerated projected
//! gradient with adaptive restart.
//!
//! Internally a Hermitian `N x N` matrix is stored as `N^2` real
//! coordinates that form an orthonormal basis for the Frobenius inner
//! product (diagonal entries, then `sqrt(2) Re` / `sqrt(2) Im` of each strict
//! upper-triangle entry), so the design matrix becomes a real `M x N^2`
//! operator with the same singular values on Hermitian inputs.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assemble::{unvectorize, vectorize, DesignMatrix, MeasurementVector, IMAG_GUARD};
use crate::error::{Error, Result};
use crate::fockspace::{DensityMatrix, FockDim, HermitianOperator};
use crate::linalg::{frobenius_inner, hermitian_eigen, hermitize, max_asymmetry, recompose, ComplexMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative objective change regarded as a stall.
    pub eps_rel: f64,
    /// Allowed violation of the trace / positivity constraints.
    pub eps_feas: f64,
    /// Consecutive stalled iterations required to stop.
    pub stall_window: usize,
    /// Objective value, relative to `||b||^2`, below which the data are
    /// reproduced exactly for all practical purposes. The relative stall
    /// test alone never fires on consistent data, where the optimum is 0.
    pub eps_abs: f64,
    pub power_iters: usize,
    pub power_tol: f64,
    /// Gradient-based momentum restart. Objective increases always restart.
    pub restart: bool,
    /// Periodically refine the iterate by Levenberg-Marquardt on a low-rank
    /// factorization `rho = Y Y† / Tr(Y Y†)`; accepted only if `f` drops.
    pub polish: bool,
    pub polish_every: usize,
    pub polish_max_rank: usize,
    pub polish_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 20_000,
            eps_rel: 1e-9,
            eps_feas: 1e-10,
            stall_window: 10,
            eps_abs: 1e-16,
            power_iters: 30,
            power_tol: 1e-6,
            restart: true,
            polish: true,
            polish_every: 500,
            polish_max_rank: 4,
            polish_iters: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        for (name, v) in [
            ("eps_rel", self.eps_rel),
            ("eps_feas", self.eps_feas),
            ("eps_abs", self.eps_abs),
            ("power_tol", self.power_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, "must be a positive finite number"));
            }
        }
        for (name, v) in [
            ("stall_window", self.stall_window),
            ("power_iters", self.power_iters),
            ("polish_every", self.polish_every),
            ("polish_max_rank", self.polish_max_rank),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub rho: DensityMatrix,
    /// Final `||A vec(rho) - b||^2`.
    pub objective: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Seconds spent building operators and the design matrix.
    pub t_build: f64,
    /// Seconds spent in the solver.
    pub t_solve: f64,
    /// Objective after each accepted step, starting with the initial point.
    pub history: Vec<f64>,
    /// Lipschitz constant of the gradient actually used.
    pub lipschitz: f64,
}

#[derive(Serialize, Deserialize)]
struct ResultFile {
    dim: usize,
    real: Vec<f64>,
    imag: Vec<f64>,
    objective: f64,
    residual: f64,
    iterations: usize,
    converged: bool,
    t_build: f64,
    t_solve: f64,
}

impl ReconstructionResult {
    /// JSON with row-major `real` / `imag` entry arrays.
    pub fn to_json(&self) -> Result<String> {
        let n = self.rho.dim();
        let m = self.rho.entries();
        let mut real = Vec::with_capacity(n * n);
        let mut imag = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                real.push(m[(i, j)].re);
                imag.push(m[(i, j)].im);
            }
        }
        let file = ResultFile {
            dim: n,
            real,
            imag,
            objective: self.objective,
            residual: self.residual_norm,
            iterations: self.iterations,
            converged: self.converged,
            t_build: self.t_build,
            t_solve: self.t_solve,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Reads the density matrix and diagnostics back from [`Self::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        let f: ResultFile = serde_json::from_str(text)?;
        let n = f.dim;
        if f.real.len() != n * n || f.imag.len() != n * n {
            return Err(Error::ShapeMismatch("result entry arrays do not match dim".into()));
        }
        let m = ComplexMatrix::from_fn(n, n, |i, j| Complex64::new(f.real[i * n + j], f.imag[i * n + j]));
        Ok(ReconstructionResult {
            rho: DensityMatrix::new(m)?,
            objective: f.objective,
            residual_norm: f.residual,
            iterations: f.iterations,
            converged: f.converged,
            t_build: f.t_build,
            t_solve: f.t_solve,
            history: Vec::new(),
            lipschitz: f64::NAN,
        })
    }
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

fn project_matrix(h: &ComplexMatrix) -> ComplexMatrix {
    let (values, vectors) = hermitian_eigen(h);
    let weights = simplex_project(&values);
    hermitize(&recompose(&vectors, &weights))
}

/// Frobenius-nearest density matrix to a Hermitian `h`.
pub fn spectrahedron_project(h: &HermitianOperator) -> Result<DensityMatrix> {
    spectrahedron_project_matrix(h.entries())
}

/// As [`spectrahedron_project`], accepting a matrix whose asymmetry is at
/// most 1e-9.
pub fn spectrahedron_project_matrix(h: &ComplexMatrix) -> Result<DensityMatrix> {
    if h.nrows() != h.ncols() || h.nrows() == 0 {
        return Err(Error::ShapeMismatch("projection needs a nonempty square matrix".into()));
    }
    let asym = max_asymmetry(h);
    if !asym.is_finite() {
        return Err(Error::NonFinite("projection input"));
    }
    if asym > 1e-9 {
        return Err(Error::NotHermitian(asym));
    }
    Ok(DensityMatrix::from_exact(project_matrix(&hermitize(h))))
}

/// `f(rho) = ||A vec(rho) - b||^2` evaluated through the complex design matrix.
pub struct LeastSquares<'a> {
    a: &'a DesignMatrix,
    b: &'a [f64],
}

impl<'a> LeastSquares<'a> {
    pub fn new(a: &'a DesignMatrix, b: &'a MeasurementVector) -> Result<Self> {
        Self::from_slice(a, &b.values)
    }

    pub fn from_slice(a: &'a DesignMatrix, b: &'a [f64]) -> Result<Self> {
        if a.rows() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.rows(), found: b.len() });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement vector"));
        }
        Ok(LeastSquares { a, b })
    }

    fn residual(&self, rho: &ComplexMatrix) -> Result<nalgebra::DVector<Complex64>> {
        let mut r = self.a.apply_complex(rho)?;
        for (ri, bi) in r.iter_mut().zip(self.b) {
            *ri -= *bi;
        }
        Ok(r)
    }

    pub fn value(&self, rho: &ComplexMatrix) -> Result<f64> {
        Ok(self.residual(rho)?.iter().map(|c| c.norm_sqr()).sum())
    }

    /// `unvec(2 A† (A vec(rho) - b))`, Hermitized.
    pub fn gradient(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        let r = self.residual(rho)?;
        let g = self.a.entries().ad_mul(&r) * Complex64::new(2.0, 0.0);
        let g = unvectorize(&g, self.a.dim())?;
        let asym = max_asymmetry(&g);
        let scale = 1.0 + g.camax();
        if asym > 1e-9 * scale {
            return Err(Error::Invariant(format!("gradient asymmetry {asym:e}")));
        }
        Ok(hermitize(&g))
    }
}

/// Real orthonormal coordinates of Hermitian matrices.
struct HermitianCoords {
    n: usize,
}

impl HermitianCoords {
    fn to_params(&self, m: &ComplexMatrix) -> DVector<f64> {
        let n = self.n;
        let s2 = std::f64::consts::SQRT_2;
        let mut u = DVector::zeros(n * n);
        for i in 0..n {
            u[i] = m[(i, i)].re;
        }
        let mut p = n;
        for i in 0..n {
            for j in i + 1..n {
                u[p] = s2 * m[(i, j)].re;
                u[p + 1] = s2 * m[(i, j)].im;
                p += 2;
            }
        }
        u
    }

    fn to_matrix(&self, u: &DVector<f64>) -> ComplexMatrix {
        let n = self.n;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut m = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(u[i], 0.0);
        }
        let mut p = n;
        for i in 0..n {
            for j in i + 1..n {
                let c = Complex64::new(h * u[p], h * u[p + 1]);
                m[(i, j)] = c;
                m[(j, i)] = c.conj();
                p += 2;
            }
        }
        m
    }

    /// Real operator `R` with `R u = Re(A vec(X))` for Hermitian `X`.
    fn real_operator(&self, a: &DesignMatrix) -> Result<DMatrix<f64>> {
        let n = self.n;
        let entries = a.entries();
        let col = |i: usize, j: usize| j * n + i;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut r = DMatrix::zeros(entries.nrows(), n * n);
        let mut worst = 0.0f64;
        for k in 0..entries.nrows() {
            for i in 0..n {
                let d = entries[(k, col(i, i))];
                worst = worst.max(d.im.abs());
                r[(k, i)] = d.re;
            }
            let mut p = n;
            for i in 0..n {
                for j in i + 1..n {
                    let aij = entries[(k, col(i, j))];
                    let aji = entries[(k, col(j, i))];
                    worst = worst.max((aij - aji.conj()).norm());
                    r[(k, p)] = h * (aij + aji).re;
                    r[(k, p + 1)] = -h * (aij - aji).im;
                    p += 2;
                }
            }
        }
        let scale = 1.0 + entries.camax();
        if worst > IMAG_GUARD * scale {
            return Err(Error::Invariant(format!(
                "design matrix rows are not Hermitian functionals (defect {worst:e})"
            )));
        }
        Ok(r)
    }
}

fn power_iteration(r: &DMatrix<f64>, iters: usize, tol: f64) -> f64 {
    let p = r.ncols();
    let mut v = DVector::from_fn(p, |i, _| 1.0 + 0.01 * ((i % 17) as f64));
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = r.tr_mul(&(r * &v));
        let next = w.norm();
        if next == 0.0 {
            return 0.0;
        }
        v = w / next;
        let done = (next - lambda).abs() <= tol * next;
        lambda = next;
        if done {
            break;
        }
    }
    lambda
}

/// Pre-processed problem for repeated solves.
struct Problem {
    coords: HermitianCoords,
    r: DMatrix<f64>,
    b: DVector<f64>,
    b_norm_sqr: f64,
}

impl Problem {
    fn new(a: &DesignMatrix, b: &[f64]) -> Result<Self> {
        if a.rows() != b.len() {
            return Err(Error::DimensionMismatch { expected: a.rows(), found: b.len() });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement vector"));
        }
        if a.entries().iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        let coords = HermitianCoords { n: a.dim().get() };
        let r = coords.real_operator(a)?;
        let b = DVector::from_column_slice(b);
        let b_norm_sqr = b.norm_squared();
        Ok(Problem { coords, r, b, b_norm_sqr })
    }

    fn project(&self, u: &DVector<f64>) -> DVector<f64> {
        let m = self.coords.to_matrix(u);
        self.coords.to_params(&project_matrix(&m))
    }

    fn objective_from_prediction(&self, pred: &DVector<f64>) -> f64 {
        (pred - &self.b).norm_squared()
    }
}

/// Residual Jacobian of `u(Y) = params(Y Y† / ||Y||^2)` mapped through `R`,
/// with respect to the real and imaginary parts of `Y` (column-major).
fn factor_jacobian(prob: &Problem, y: &ComplexMatrix, pred: &DVector<f64>) -> DMatrix<f64> {
    let n = y.nrows();
    let r = y.ncols();
    let t = y.norm_squared();
    let s2 = std::f64::consts::SQRT_2;
    let mut jac = DMatrix::zeros(prob.r.nrows(), 2 * n * r);
    // Offsets of the parameters of pair (i, l), i < l.
    let mut pair = vec![0usize; n * n];
    let mut p = n;
    for i in 0..n {
        for l in i + 1..n {
            pair[i * n + l] = p;
            p += 2;
        }
    }
    let mut col = DVector::zeros(prob.r.nrows());
    for j in 0..r {
        for i in 0..n {
            for (part, c) in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)].into_iter().enumerate() {
                col.fill(0.0);
                // A = c e_i Y[:, j]†, H = A + A†.
                for l in 0..n {
                    let a = c * y[(l, j)].conj();
                    if l == i {
                        col.axpy(2.0 * a.re, &prob.r.column(i), 1.0);
                    } else if i < l {
                        let q = pair[i * n + l];
                        col.axpy(s2 * a.re, &prob.r.column(q), 1.0);
                        col.axpy(s2 * a.im, &prob.r.column(q + 1), 1.0);
                    } else {
                        let q = pair[l * n + i];
                        let h = a.conj();
                        col.axpy(s2 * h.re, &prob.r.column(q), 1.0);
                        col.axpy(s2 * h.im, &prob.r.column(q + 1), 1.0);
                    }
                }
                // d t = 2 Re(conj(Y_ij) c)
                let dt = 2.0 * (y[(i, j)].conj() * c).re;
                let mut full = &col / t;
                full.axpy(-dt / t, pred, 1.0);
                jac.set_column(2 * (j * n + i) + part, &full);
            }
        }
    }
    jac
}

fn factor_state(prob: &Problem, y: &ComplexMatrix) -> DVector<f64> {
    let m = hermitize(&(y * y.adjoint()));
    let t: f64 = y.norm_squared();
    prob.coords.to_params(&m.unscale(t))
}

/// Levenberg-Marquardt on `rho = Y Y† / Tr(Y Y†)` from the leading `rank`
/// eigenpairs of `x`. Returns the polished parameters and objective.
fn factor_polish(prob: &Problem, x: &DVector<f64>, rank: usize, max_iters: usize, floor: f64) -> (DVector<f64>, f64) {
    let m = prob.coords.to_matrix(x);
    let (vals, vecs) = hermitian_eigen(&m);
    let n = vals.len();
    let rank = rank.clamp(1, n);
    let mut y = ComplexMatrix::zeros(n, rank);
    for c in 0..rank {
        let k = n - 1 - c;
        y.set_column(c, &(vecs.column(k) * Complex64::new(vals[k].max(1e-8).sqrt(), 0.0)));
    }
    let mut u = factor_state(prob, &y);
    let mut pred = &prob.r * &u;
    let mut f = prob.objective_from_prediction(&pred);
    let mut lambda = 1e-3;
    for _ in 0..max_iters {
        let jac = factor_jacobian(prob, &y, &pred);
        let res = &pred - &prob.b;
        let jtj = jac.tr_mul(&jac);
        let g = jac.tr_mul(&res);
        let scale = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        let mut improved = false;
        for _ in 0..30 {
            let mut h = jtj.clone();
            for d in 0..h.nrows() {
                h[(d, d)] += lambda * scale;
            }
            let Some(ch) = h.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = ch.solve(&(-&g));
            let mut y2 = y.clone();
            for j in 0..rank {
                for i in 0..n {
                    let k = 2 * (j * n + i);
                    y2[(i, j)] += Complex64::new(step[k], step[k + 1]);
                }
            }
            let u2 = factor_state(prob, &y2);
            let pred2 = &prob.r * &u2;
            let f2 = prob.objective_from_prediction(&pred2);
            if f2 < f {
                let rel = (f - f2) / f;
                y = y2.unscale(y2.norm());
                u = u2;
                pred = pred2;
                f = f2;
                lambda = (lambda / 3.0).max(1e-15);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 4.0;
        }
        if !improved || f <= floor {
            break;
        }
    }
    (u, f)
}

/// Best factorized polish over ranks `1..=min(cap, numerical rank)`.
fn polish(prob: &Problem, x: &DVector<f64>, config: &SolverConfig, floor: f64) -> Option<(DVector<f64>, f64)> {
    let (vals, _) = hermitian_eigen(&prob.coords.to_matrix(x));
    let top = vals.last().copied().unwrap_or(0.0);
    let numerical_rank = vals.iter().filter(|&&v| v > 1e-9 * top).count();
    let cap = config.polish_max_rank.min(numerical_rank).max(1);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for rank in 1..=cap {
        let (u, fu) = factor_polish(prob, x, rank, config.polish_iters, floor);
        if best.as_ref().is_none_or(|(_, fb)| fu < *fb) {
            best = Some((u, fu));
        }
        if fu <= floor {
            break;
        }
    }
    best
}

/// Solves from the maximally mixed state.
pub fn reconstruct(a: &DesignMatrix, b: &MeasurementVector, config: &SolverConfig) -> Result<ReconstructionResult> {
    reconstruct_from(a, b, config, &DensityMatrix::maximally_mixed(a.dim()))
}

/// Solves from a caller-supplied feasible starting point.
pub fn reconstruct_from(
    a: &DesignMatrix,
    b: &MeasurementVector,
    config: &SolverConfig,
    start: &DensityMatrix,
) -> Result<ReconstructionResult> {
    config.validate()?;
    if start.dim() != a.dim().get() {
        return Err(Error::DimensionMismatch { expected: a.dim().get(), found: start.dim() });
    }
    let t0 = Instant::now();
    let prob = Problem::new(a, &b.values)?;
    let sigma_sqr = power_iteration(&prob.r, config.power_iters, config.power_tol);
    // Power iteration approaches sigma^2 from below; a small margin keeps
    // the step admissible, the backtracking below catches the rest.
    let mut lipschitz = (2.0 * sigma_sqr * 1.02).max(f64::MIN_POSITIVE);

    let floor = config.eps_abs * prob.b_norm_sqr;
    let mut x = prob.project(&prob.coords.to_params(start.entries()));
    let mut ax = &prob.r * &x;
    let mut f = prob.objective_from_prediction(&ax);
    let mut y = x.clone();
    let mut ay = ax.clone();
    let mut t = 1.0f64;
    let mut momentum = false;
    let mut history = vec![f];
    let mut stalled = 0usize;
    let mut converged = f <= floor;
    let mut iterations = 0usize;
    let mut since_polish = 0usize;

    while !converged {
        let out_of_budget = iterations >= config.max_iters;
        let stall_exit = stalled >= config.stall_window;
        if config.polish && (since_polish >= config.polish_every || out_of_budget || stall_exit) {
            since_polish = 0;
            if let Some((u, fu)) = polish(&prob, &x, config, floor) {
                if fu < f {
                    let rel = (f - fu) / f.max(f64::MIN_POSITIVE);
                    x = u;
                    ax = &prob.r * &x;
                    f = fu;
                    history.push(f);
                    y.copy_from(&x);
                    ay.copy_from(&ax);
                    t = 1.0;
                    momentum = false;
                    if rel >= config.eps_rel {
                        stalled = 0;
                    }
                }
            }
        }
        if f <= floor || stalled >= config.stall_window {
            converged = true;
            break;
        }
        if out_of_budget {
            break;
        }
        iterations += 1;
        since_polish += 1;

        let grad = prob.r.tr_mul(&(&ay - &prob.b)) * 2.0;
        let z = prob.project(&(&y - grad / lipschitz));
        let az = &prob.r * &z;
        let fz = prob.objective_from_prediction(&az);

        if !(fz <= f) {
            if momentum {
                y.copy_from(&x);
                ay.copy_from(&ax);
                t = 1.0;
                momentum = false;
                continue;
            }
            // A plain projected-gradient step with a valid step size cannot
            // increase f; only roundoff or an underestimated constant can.
            if fz <= f * (1.0 + 1e-12) + floor {
                stalled = config.stall_window;
                continue;
            }
            lipschitz *= 2.0;
            continue;
        }

        let rel = (f - fz) / f.max(f64::MIN_POSITIVE);
        stalled = if rel < config.eps_rel { stalled + 1 } else { 0 };

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let misaligned = config.restart && (&y - &z).dot(&(&z - &x)) > 0.0;
        if misaligned {
            t = 1.0;
            y.copy_from(&z);
            ay.copy_from(&az);
            momentum = false;
        } else {
            y = &z + (&z - &x) * beta;
            ay = &az + (&az - &ax) * beta;
            t = t_next;
            momentum = beta != 0.0;
        }
        x = z;
        ax = az;
        f = fz;
        history.push(f);
    }

    let rho_m = project_matrix(&prob.coords.to_matrix(&x));
    let rho = finalize(rho_m, config.eps_feas)?;
    let pred = &prob.r * prob.coords.to_params(rho.entries());
    let objective = prob.objective_from_prediction(&pred);
    Ok(ReconstructionResult {
        rho,
        objective,
        residual_norm: objective.sqrt(),
        iterations,
        converged,
        t_build: 0.0,
        t_solve: t0.elapsed().as_secs_f64(),
        history,
        lipschitz,
    })
}

fn finalize(m: ComplexMatrix, eps_feas: f64) -> Result<DensityMatrix> {
    let trace: f64 = m.diagonal().iter().map(|c| c.re).sum();
    let (values, _) = hermitian_eigen(&m);
    if (trace - 1.0).abs() > eps_feas || values[0] < -eps_feas {
        // One more projection absorbs accumulated roundoff.
        let again = project_matrix(&m);
        return Ok(DensityMatrix::from_exact(again));
    }
    Ok(DensityMatrix::from_exact(m))
}

/// Outcome of [`certify_optimality`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub trials: usize,
    /// Trials where a random feasible state beat the solution.
    pub objective_violations: Vec<usize>,
    /// Trials where `<grad f(rho), rho_r - rho> < -1e-6`.
    pub variational_violations: Vec<usize>,
    pub min_objective_margin: f64,
    pub min_variational: f64,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.objective_violations.is_empty() && self.variational_violations.is_empty()
    }

    pub fn first_violation(&self) -> Option<usize> {
        let a = self.objective_violations.first().copied();
        let b = self.variational_violations.first().copied();
        match (a, b) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        }
    }
}

/// Random density matrix from a complex Ginibre matrix, `G G† / Tr`.
pub fn random_density_matrix<R: Rng>(dim: FockDim, rng: &mut R) -> DensityMatrix {
    let n = dim.get();
    let g = ComplexMatrix::from_fn(n, n, |_, _| {
        Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let p = &g * g.adjoint();
    let tr: f64 = p.diagonal().iter().map(|c| c.re).sum();
    DensityMatrix::from_exact(hermitize(&p.unscale(tr)))
}

/// Random pure state as a density matrix.
pub fn random_pure_state<R: Rng>(dim: FockDim, rng: &mut R) -> DensityMatrix {
    let n = dim.get();
    let v = nalgebra::DVector::from_fn(n, |_, _| {
        Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let v = v.unscale(v.norm());
    DensityMatrix::from_exact(hermitize(&(&v * v.adjoint())))
}

/// Compares the solution against `trials` random feasible states: the
/// objective must not be beaten (beyond `1e-8 (1 + f(rho_r))`) and the
/// first-order condition `<grad f(rho), rho_r - rho> >= -1e-6` must hold.
pub fn certify_optimality(
    result: &ReconstructionResult,
    a: &DesignMatrix,
    b: &MeasurementVector,
    trials: usize,
    seed: u64,
) -> Result<CertificateReport> {
    let prob = Problem::new(a, &b.values)?;
    let dim = a.dim();
    if result.rho.dim() != dim.get() {
        return Err(Error::DimensionMismatch { expected: dim.get(), found: result.rho.dim() });
    }
    let x = prob.coords.to_params(result.rho.entries());
    let ax = &prob.r * &x;
    let f = prob.objective_from_prediction(&ax);
    let grad = prob.r.tr_mul(&(&ax - &prob.b)) * 2.0;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut report = CertificateReport {
        trials,
        objective_violations: Vec::new(),
        variational_violations: Vec::new(),
        min_objective_margin: f64::INFINITY,
        min_variational: f64::INFINITY,
    };
    for trial in 0..trials {
        let sample =
            if trial % 2 == 0 { random_density_matrix(dim, &mut rng) } else { random_pure_state(dim, &mut rng) };
        let u = prob.coords.to_params(sample.entries());
        let fr = prob.objective_from_prediction(&(&prob.r * &u));
        let margin = fr + 1e-8 * (1.0 + fr) - f;
        report.min_objective_margin = report.min_objective_margin.min(margin);
        if margin < 0.0 {
            report.objective_violations.push(trial);
        }
        let vi = grad.dot(&(&u - &x));
        report.min_variational = report.min_variational.min(vi);
        if vi < -1e-6 {
            report.variational_violations.push(trial);
        }
    }
    Ok(report)
}

/// Frobenius inner product of the complex gradient with a direction, for
/// finite-difference checks.
pub fn directional_derivative(obj: &LeastSquares<'_>, rho: &ComplexMatrix, dir: &ComplexMatrix) -> Result<f64> {
    Ok(frobenius_inner(&obj.gradient(rho)?, dir))
}

/// Objective via the complex path, usable on any Hermitian matrix.
pub fn objective(a: &DesignMatrix, b: &[f64], rho: &ComplexMatrix) -> Result<f64> {
    let v = vectorize(rho)?;
    if v.len() != a.cols() {
        return Err(Error::DimensionMismatch { expected: a.cols(), found: v.len() });
    }
    LeastSquares::from_slice(a, b)?.value(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::{build_design_matrix, build_measurement_vector, MeasurementData};
    use crate::povm::{build_povm_set, HomodyneSettings, MeasurementSettings, PhaseSpaceGrid};

    fn dim(n: usize) -> FockDim {
        FockDim::new(n).unwrap()
    }

    #[test]
    fn simplex_cases() {
        assert_eq!(simplex_project(&[1.0, -1.0]), vec![1.0, 0.0]);
        assert_eq!(simplex_project(&[0.25, 0.75]), vec![0.25, 0.75]);
        let p = simplex_project(&[3.0, 3.0, 3.0]);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_fixed_points() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let rho = random_density_matrix(dim(5), &mut rng);
        let p = spectrahedron_project(&rho.as_operator()).unwrap();
        assert!((p.entries() - rho.entries()).camax() < 1e-12);
        let mut h = ComplexMatrix::zeros(2, 2);
        h[(0, 0)] = Complex64::new(1.0, 0.0);
        h[(1, 1)] = Complex64::new(-1.0, 0.0);
        let p = spectrahedron_project(&HermitianOperator::new(h).unwrap()).unwrap();
        assert!((p.entries()[(0, 0)].re - 1.0).abs() < 1e-15);
        assert!(p.entries()[(1, 1)].norm() < 1e-15);
        let mut bad = ComplexMatrix::zeros(2, 2);
        bad[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(spectrahedron_project_matrix(&bad).is_err());
    }

    #[test]
    fn coords_are_isometric() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let c = HermitianCoords { n: 4 };
        let a = random_density_matrix(dim(4), &mut rng);
        let b = random_density_matrix(dim(4), &mut rng);
        let ua = c.to_params(a.entries());
        let ub = c.to_params(b.entries());
        assert!((ua.dot(&ub) - frobenius_inner(a.entries(), b.entries())).abs() < 1e-14);
        assert!((c.to_matrix(&ua) - a.entries()).camax() < 1e-15);
        assert_eq!(ua.len(), 16);
    }

    #[test]
    fn real_operator_matches_complex_path() {
        let settings = MeasurementSettings::Homodyne(HomodyneSettings::uniform(4, 6, 3.0, 0.7).unwrap());
        let set = build_povm_set(&settings, dim(5)).unwrap();
        let a = build_design_matrix(&set).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let rho = random_density_matrix(dim(5), &mut rng);
        let b: Vec<f64> = (0..a.rows()).map(|k| 0.01 * k as f64).collect();
        let prob = Problem::new(&a, &b).unwrap();
        let u = prob.coords.to_params(rho.entries());
        let f_real = prob.objective_from_prediction(&(&prob.r * &u));
        let f_cplx = objective(&a, &b, rho.entries()).unwrap();
        assert!((f_real - f_cplx).abs() < 1e-13 * (1.0 + f_cplx));
        let g_real = prob.coords.to_matrix(&(prob.r.tr_mul(&(&prob.r * &u - &prob.b)) * 2.0));
        let g_cplx = LeastSquares::from_slice(&a, &b).unwrap().gradient(rho.entries()).unwrap();
        assert!((g_real - g_cplx).camax() < 1e-12);
    }

    #[test]
    fn degenerate_identity_problem() {
        let settings = MeasurementSettings::Homodyne(
            HomodyneSettings::new(vec![0.0], vec![f64::NEG_INFINITY, f64::INFINITY], 1.0).unwrap(),
        );
        let set = build_povm_set(&settings, dim(4)).unwrap();
        let a = build_design_matrix(&set).unwrap();
        let b = build_measurement_vector(&MeasurementData::Probabilities(vec![1.0]), &set).unwrap();
        let res = reconstruct(&a, &b, &SolverConfig::default()).unwrap();
        assert!(res.objective < 1e-12);
        assert!(res.converged);
    }

    #[test]
    fn rejects_bad_inputs() {
        let grid = PhaseSpaceGrid::square(3, 2.0).unwrap();
        let set = build_povm_set(&MeasurementSettings::Heterodyne { grid, n_th: 0.0 }, dim(3)).unwrap();
        let a = build_design_matrix(&set).unwrap();
        let short = MeasurementVector {
            values: vec![0.1; 4],
            normalization: crate::assemble::Normalization::Probabilities,
            samples: None,
        };
        assert!(reconstruct(&a, &short, &SolverConfig::default()).is_err());
        let mut nan = short.clone();
        nan.values = vec![f64::NAN; 9];
        assert!(matches!(reconstruct(&a, &nan, &SolverConfig::default()), Err(Error::NonFinite(_))));
        let cfg = SolverConfig { max_iters: 0, ..SolverConfig::default() };
        let ok = MeasurementVector { values: vec![0.1; 9], ..short };
        assert!(reconstruct(&a, &ok, &cfg).is_err());
    }

    fn small_problem(n: usize, seed: u64) -> (DesignMatrix, MeasurementVector, DensityMatrix) {
        let grid = PhaseSpaceGrid::square(9, 3.0).unwrap();
        let set = build_povm_set(&MeasurementSettings::Heterodyne { grid, n_th: 0.0 }, dim(n)).unwrap();
        let a = build_design_matrix(&set).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let rho = random_pure_state(dim(n), &mut rng);
        let b = build_measurement_vector(&MeasurementData::Probabilities(a.predict(&rho).unwrap()), &set).unwrap();
        (a, b, rho)
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha20Rng) -> ComplexMatrix {
        let g = ComplexMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        });
        hermitize(&g)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (a, _, _) = small_problem(6, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(30);
        let b: Vec<f64> = (0..a.rows()).map(|_| rng.random::<f64>() * 0.02).collect();
        let obj = LeastSquares::from_slice(&a, &b).unwrap();
        let rho = random_density_matrix(dim(6), &mut rng);
        for _ in 0..20 {
            let d = random_hermitian(6, &mut rng);
            let h = 1e-4;
            let plus = obj.value(&(rho.entries() + &d * Complex64::new(h, 0.0))).unwrap();
            let minus = obj.value(&(rho.entries() - &d * Complex64::new(h, 0.0))).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            let an = directional_derivative(&obj, rho.entries(), &d).unwrap();
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-12), "fd {fd} analytic {an}");
        }
    }

    #[test]
    fn projection_beats_sampled_feasible_points() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let h = random_hermitian(4, &mut rng);
        let p = spectrahedron_project_matrix(&h).unwrap();
        let d_best = (p.entries() - &h).norm_squared();
        for k in 0..1_000_000u32 {
            let y =
                if k % 2 == 0 { random_density_matrix(dim(4), &mut rng) } else { random_pure_state(dim(4), &mut rng) };
            assert!((y.entries() - &h).norm_squared() >= d_best - 1e-12);
            if k % 1000 == 0 {
                let vi = frobenius_inner(&(p.entries() - &h), &(y.entries() - p.entries()));
                assert!(vi >= -1e-8, "variational inequality {vi}");
            }
        }
    }

    #[test]
    fn history_is_monotone_and_starts_agree() {
        let (a, b, _) = small_problem(5, 11);
        let noisy: Vec<f64> = b.values.iter().enumerate().map(|(k, v)| v + 1e-3 * ((k * 7 % 5) as f64 - 2.0)).collect();
        let b = MeasurementVector { values: noisy, ..b };
        let cfg = SolverConfig::default();
        let r1 = reconstruct(&a, &b, &cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let r2 = reconstruct_from(&a, &b, &cfg, &random_pure_state(dim(5), &mut rng)).unwrap();
        for r in [&r1, &r2] {
            assert!(r.converged);
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            DensityMatrix::new(r.rho.entries().clone()).unwrap();
        }
        let f = r1.objective.min(r2.objective);
        assert!((r1.objective - r2.objective).abs() <= 1e-8 * (1.0 + f));
    }

    #[test]
    fn certificate_cases() {
        let (a, b, _) = small_problem(5, 21);
        let done = reconstruct(&a, &b, &SolverConfig::default()).unwrap();
        let rep = certify_optimality(&done, &a, &b, 200, 9).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.first_violation(), None);

        let early = reconstruct(&a, &b, &SolverConfig { max_iters: 3, polish: false, ..Default::default() }).unwrap();
        assert!(!early.converged);
        DensityMatrix::new(early.rho.entries().clone()).unwrap();
        let rep = certify_optimality(&early, &a, &b, 200, 9).unwrap();
        if !rep.passed() {
            assert!(rep.first_violation().unwrap() < 200);
        }

        let mixed = ReconstructionResult { rho: DensityMatrix::maximally_mixed(dim(5)), ..done };
        let rep = certify_optimality(&mixed, &a, &b, 200, 9).unwrap();
        assert!(!rep.objective_violations.is_empty());
    }

    #[test]
    fn polish_never_raises_objective() {
        let (a, b, _) = small_problem(6, 2);
        let plain = reconstruct(&a, &b, &SolverConfig { polish: false, max_iters: 400, ..Default::default() }).unwrap();
        let polished = reconstruct(&a, &b, &SolverConfig { max_iters: 400, ..Default::default() }).unwrap();
        assert!(polished.objective <= plain.objective * (1.0 + 1e-12) + 1e-30);
    }
}
