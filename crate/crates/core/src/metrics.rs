//! State comparison and phase-space diagnostics.

use std::f64::consts::PI;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assemble::write_grid_csv;
use crate::error::{Error, Result};
use crate::fockspace::{coherent_state, DensityMatrix, FockDim};
use crate::linalg::{hermitian_eigen, hermitize, ComplexMatrix};
use crate::povm::{wigner_povm, PhaseSpaceGrid};
use crate::Complex64;

/// Eigenvalues below `dim * eps * max` are treated as rounding noise.
fn rank_tolerance(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(0.0, f64::max);
    values.len() as f64 * f64::EPSILON * max.max(f64::MIN_POSITIVE)
}

fn numerical_rank(values: &[f64]) -> usize {
    let tol = rank_tolerance(values);
    values.iter().filter(|&&v| v > tol).count()
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
///
/// Evaluated on the numerical support of the argument with lower rank, so
/// pure-state inputs give `<psi|sigma|psi>` without square-root noise from
/// zero eigenvalues.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), found: sigma.dim() });
    }
    let (va, ea) = hermitian_eigen(rho.entries());
    let (vb, eb) = hermitian_eigen(sigma.entries());
    let (values, vectors, other) =
        if numerical_rank(&va) <= numerical_rank(&vb) { (va, ea, sigma.entries()) } else { (vb, eb, rho.entries()) };
    let tol = rank_tolerance(&values);
    let support: Vec<usize> = (0..values.len()).filter(|&k| values[k] > tol).collect();
    let r = support.len();
    if r == 0 {
        return Err(Error::Invariant("fidelity input has no positive spectrum".into()));
    }
    // K = diag(sqrt l) V† other V diag(sqrt l) on the support.
    let mut basis = ComplexMatrix::zeros(values.len(), r);
    for (c, &k) in support.iter().enumerate() {
        basis.set_column(c, &(vectors.column(k) * Complex64::new(values[k].sqrt(), 0.0)));
    }
    let k = hermitize(&(basis.adjoint() * other * &basis));
    let (kv, _) = hermitian_eigen(&k);
    let ktol = rank_tolerance(&kv);
    let root: f64 = kv.iter().filter(|&&v| v > ktol).map(|v| v.sqrt()).sum();
    Ok(root * root)
}

/// Diagonal of `rho`.
pub fn photon_populations(rho: &DensityMatrix) -> Vec<f64> {
    rho.entries().diagonal().iter().map(|c| c.re).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseSpaceKind {
    Wigner,
    HusimiQ,
}

/// Function values on a grid; `values[(row, col)]` sits at
/// `x = grid.x_center(row)`, `p = grid.p_center(col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceFunction {
    pub grid: PhaseSpaceGrid,
    pub values: DMatrix<f64>,
    pub kind: PhaseSpaceKind,
}

impl PhaseSpaceFunction {
    pub fn from_flat(grid: PhaseSpaceGrid, flat: &[f64], kind: PhaseSpaceKind) -> Result<Self> {
        if flat.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), found: flat.len() });
        }
        let values = DMatrix::from_row_slice(grid.nx(), grid.np(), flat);
        Ok(PhaseSpaceFunction { grid, values, kind })
    }

    /// Row-major values, matching the grid's outcome order.
    pub fn to_flat(&self) -> Vec<f64> {
        let (nx, np) = self.values.shape();
        (0..nx).flat_map(|i| (0..np).map(move |j| (i, j))).map(|(i, j)| self.values[(i, j)]).collect()
    }

    /// Riemann sum `sum f * dx * dp`.
    pub fn integral(&self) -> f64 {
        self.values.sum() * self.grid.cell_area()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_grid_csv(path, &self.to_flat(), self.grid.nx(), self.grid.np())
    }

    /// Heatmap with x to the right and p upward. Wigner data uses a
    /// diverging map centred on zero, Q data a sequential one.
    pub fn write_png(&self, path: &Path, cell_pixels: u32) -> Result<()> {
        let img = self.render(cell_pixels.max(1));
        img.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image(e.to_string()))
    }

    pub fn render(&self, cell_pixels: u32) -> RgbImage {
        let (nx, np) = self.values.shape();
        let w = nx as u32 * cell_pixels;
        let h = np as u32 * cell_pixels;
        let max_abs = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let max = self.values.max();
        let min = self.values.min();
        let span = (max - min).max(f64::MIN_POSITIVE);
        let kind = self.kind;
        RgbImage::from_fn(w, h, |px, py| {
            let row = (px / cell_pixels) as usize;
            let col = np - 1 - (py / cell_pixels) as usize;
            let v = self.values[(row, col)];
            match kind {
                PhaseSpaceKind::Wigner => diverging(v / max_abs),
                PhaseSpaceKind::HusimiQ => sequential((v - min) / span),
            }
        })
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> Rgb<u8> {
    let c = |i: usize| ((a[i] + (b[i] - a[i]) * t).clamp(0.0, 255.0)).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn diverging(t: f64) -> Rgb<u8> {
    let t = t.clamp(-1.0, 1.0);
    let white = [247.0, 247.0, 247.0];
    if t >= 0.0 {
        lerp(white, [178.0, 24.0, 43.0], t)
    } else {
        lerp(white, [33.0, 102.0, 172.0], -t)
    }
}

fn sequential(t: f64) -> Rgb<u8> {
    let stops =
        [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [94.0, 201.0, 98.0], [253.0, 231.0, 37.0]];
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (t.floor() as usize).min(stops.len() - 2);
    lerp(stops[i], stops[i + 1], t - i as f64)
}

/// `Q(alpha) = <alpha|rho|alpha> / pi` at every grid point.
pub fn q_function(rho: &DensityMatrix, grid: &PhaseSpaceGrid) -> PhaseSpaceFunction {
    let dim = FockDim::new(rho.dim()).expect("density matrices are nonempty");
    let values: Vec<f64> = grid
        .centers()
        .par_iter()
        .map(|&alpha| {
            let psi = coherent_state(alpha, dim);
            let v = psi.amplitudes();
            (v.adjoint() * rho.entries() * v)[(0, 0)].re / PI
        })
        .collect();
    PhaseSpaceFunction::from_flat(*grid, &values, PhaseSpaceKind::HusimiQ).expect("grid-sized")
}

/// `W(alpha) = (2/pi) Tr[D(alpha) P D†(alpha) rho]` at every grid point.
pub fn wigner_function(rho: &DensityMatrix, grid: &PhaseSpaceGrid) -> PhaseSpaceFunction {
    let dim = FockDim::new(rho.dim()).expect("density matrices are nonempty");
    let values: Vec<f64> =
        grid.centers().par_iter().map(|&alpha| 2.0 / PI * wigner_povm(alpha, dim).expectation(rho)).collect();
    PhaseSpaceFunction::from_flat(*grid, &values, PhaseSpaceKind::Wigner).expect("grid-sized")
}

/// Discrete convolution of grid values with the normalized Gaussian
/// `exp(-|beta|^2 / n) / (pi n)`, truncated at radius `6 sqrt(n)`. Mass
/// carried past the grid edge is dropped. `n = 0` is the identity.
pub fn gaussian_smooth(values: &[f64], grid: &PhaseSpaceGrid, n: f64) -> Result<Vec<f64>> {
    if !(n >= 0.0) || !n.is_finite() {
        return Err(Error::param("n_th", "must be a finite number >= 0"));
    }
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), found: values.len() });
    }
    if n == 0.0 {
        return Ok(values.to_vec());
    }
    let (dx, dp) = (grid.dx(), grid.dp());
    let radius = 6.0 * n.sqrt();
    let rx = (radius / dx).floor() as isize;
    let rp = (radius / dp).floor() as isize;
    let mut kernel = Vec::new();
    let mut total = 0.0;
    for i in -rx..=rx {
        for j in -rp..=rp {
            let r2 = (i as f64 * dx).powi(2) + (j as f64 * dp).powi(2);
            if r2 <= radius * radius {
                let w = (-r2 / n).exp();
                kernel.push((i, j, w));
                total += w;
            }
        }
    }
    for k in &mut kernel {
        k.2 /= total;
    }
    let (nx, np) = (grid.nx() as isize, grid.np() as isize);
    let out = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (row, col) = ((idx as isize) / np, (idx as isize) % np);
            let mut acc = 0.0;
            for &(i, j, w) in &kernel {
                let (r, c) = (row - i, col - j);
                if r >= 0 && r < nx && c >= 0 && c < np {
                    acc += w * values[(r * np + c) as usize];
                }
            }
            acc
        })
        .collect();
    Ok(out)
}
