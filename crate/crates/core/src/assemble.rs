//! Vectorization, the Fock operator basis, and the linear model `A vec(rho) = b`.
//!
//! `vectorize` stacks columns: `vec[j * N + i] = rho[i][j]`. The operator
//! basis is labelled `Omega_{i * N + j} = |i><j|`, so design-matrix column
//! `c = j * N + i` pairs with basis operator `Omega_{sigma(c)}`,
//! `sigma(j * N + i) = i * N + j`, and
//! `rho = sum_c vec(rho)[c] * Omega_{sigma(c)}`.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::fockspace::{DensityMatrix, FockDim};
use crate::linalg::{ComplexMatrix, ComplexVector, ONE};
use crate::povm::{MeasurementSettings, PhaseSpaceGrid, PovmSet, Scheme};

/// Largest tolerated imaginary part of a predicted outcome.
pub const IMAG_GUARD: f64 = 1e-9;

/// Column-stacked vectorization.
pub fn vectorize(m: &ComplexMatrix) -> Result<ComplexVector> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch(format!("cannot vectorize a {}x{} matrix", m.nrows(), m.ncols())));
    }
    // nalgebra storage is column-major, which is exactly the stacking order.
    Ok(ComplexVector::from_column_slice(m.as_slice()))
}

pub fn unvectorize(v: &ComplexVector, dim: FockDim) -> Result<ComplexMatrix> {
    let n = dim.get();
    if v.len() != n * n {
        return Err(Error::DimensionMismatch { expected: n * n, found: v.len() });
    }
    Ok(ComplexMatrix::from_column_slice(n, n, v.as_slice()))
}

/// `Omega_{i * N + j} = |i><j|` for `index = i * N + j`.
pub fn basis_op(index: usize, dim: FockDim) -> ComplexMatrix {
    let n = dim.get();
    let mut m = ComplexMatrix::zeros(n, n);
    m[(index / n, index % n)] = ONE;
    m
}

/// All `N^2` basis operators in label order.
pub fn basis_ops(dim: FockDim) -> Vec<ComplexMatrix> {
    let n = dim.get();
    (0..n * n).map(|c| basis_op(c, dim)).collect()
}

/// Basis label paired with vectorized column `c`.
pub fn column_basis_index(c: usize, dim: FockDim) -> usize {
    let n = dim.get();
    let (j, i) = (c / n, c % n);
    i * n + j
}

/// `M x N^2` matrix of `Tr[Pi_k Omega_{sigma(c)}]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    entries: ComplexMatrix,
    dim: FockDim,
    settings: MeasurementSettings,
}

impl DesignMatrix {
    pub fn entries(&self) -> &ComplexMatrix {
        &self.entries
    }

    pub fn dim(&self) -> FockDim {
        self.dim
    }

    pub fn settings(&self) -> &MeasurementSettings {
        &self.settings
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    /// `A vec(rho)` as complex numbers.
    pub fn apply_complex(&self, rho: &ComplexMatrix) -> Result<ComplexVector> {
        let v = vectorize(rho)?;
        if v.len() != self.cols() {
            return Err(Error::DimensionMismatch { expected: self.dim.get(), found: rho.nrows() });
        }
        Ok(&self.entries * v)
    }

    /// Predicted outcomes `A vec(rho)`; errors if any imaginary part exceeds
    /// [`IMAG_GUARD`].
    pub fn predict(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        let out = self.apply_complex(rho.entries())?;
        let worst = out.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
        if worst > IMAG_GUARD {
            return Err(Error::Invariant(format!("prediction has imaginary part {worst:e}")));
        }
        Ok(out.iter().map(|c| c.re).collect())
    }

    pub fn from_parts(entries: ComplexMatrix, dim: FockDim, settings: MeasurementSettings) -> Result<Self> {
        let n = dim.get();
        if entries.ncols() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: entries.ncols() });
        }
        if entries.nrows() == 0 || entries.nrows() != settings.outcome_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for {} outcomes",
                entries.nrows(),
                settings.outcome_count()
            )));
        }
        Ok(DesignMatrix { entries, dim, settings })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DesignFile {
            format: DESIGN_FORMAT.into(),
            version: 1,
            dim: self.dim.get(),
            rows: self.rows(),
            cols: self.cols(),
            settings: self.settings.clone(),
            entries: codec::encode_matrix(&self.entries),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DesignFile = serde_json::from_str(text)?;
        if file.format != DESIGN_FORMAT || file.version != 1 {
            return Err(Error::Parse(format!("unsupported container {} v{}", file.format, file.version)));
        }
        let entries = codec::decode_matrix(&file.entries, file.rows, file.cols)?;
        Self::from_parts(entries, FockDim::new(file.dim)?, file.settings)
    }
}

const DESIGN_FORMAT: &str = "cvqst-design";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    format: String,
    version: u32,
    dim: usize,
    rows: usize,
    cols: usize,
    settings: MeasurementSettings,
    entries: String,
}

/// Row scale applied at assembly: Wigner data are `W(alpha)`, whose
/// operator is `(2/pi) D P D†`.
pub fn row_scale(scheme: Scheme) -> f64 {
    match scheme {
        Scheme::Wigner => 2.0 / PI,
        Scheme::Homodyne | Scheme::Heterodyne => 1.0,
    }
}

/// `A[k][j*N + i] = <j|Pi_k|i>` by direct element lookup.
pub fn build_design_matrix(povms: &PovmSet) -> Result<DesignMatrix> {
    if povms.is_empty() {
        return Err(Error::ShapeMismatch("empty POVM set".into()));
    }
    let n = povms.dim().get();
    if let Some(bad) = povms.operators().iter().find(|o| o.dim() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: bad.dim() });
    }
    let scale = row_scale(povms.scheme());
    let m = povms.len();
    let rows: Vec<Vec<Complex64>> = povms
        .operators()
        .par_iter()
        .map(|op| {
            // column c = j*N + i  ->  Pi[(j, i)]; transpose is column-stacked.
            let t = op.entries().transpose();
            t.as_slice().iter().map(|c| c * scale).collect()
        })
        .collect();
    let entries = ComplexMatrix::from_fn(m, n * n, |k, c| rows[k][c]);
    DesignMatrix::from_parts(entries, povms.dim(), povms.settings().clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Probabilities,
    Densities,
    WignerValues,
}

/// Right-hand side `b`, in outcome order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub samples: Option<u64>,
}

impl MeasurementVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Raw data in outcome order.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasurementData {
    /// Sampled histogram. `total` counts every draw, including any that
    /// fell outside the listed outcomes, and defaults to the histogram sum.
    /// Homodyne histograms are normalized per angle, with `total` read as
    /// the per-angle draw count.
    Counts { counts: Vec<f64>, total: Option<u64> },
    /// Exact outcome probabilities.
    Probabilities(Vec<f64>),
    /// Phase-space density values (e.g. Q-function samples), converted to
    /// cell masses by multiplying with the cell area.
    Densities(Vec<f64>),
    /// Wigner-function values, passed through unscaled.
    WignerValues(Vec<f64>),
}

/// Aligns `data` with the outcome layout of `povms` and normalizes it.
pub fn build_measurement_vector(data: &MeasurementData, povms: &PovmSet) -> Result<MeasurementVector> {
    let m = povms.len();
    let check_len = |len: usize| {
        if len != m {
            Err(Error::ShapeMismatch(format!("data has {len} entries, POVM set has {m} outcomes")))
        } else {
            Ok(())
        }
    };
    let finite = |v: &[f64]| {
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("measurement data"))
        }
    };
    match data {
        MeasurementData::Counts { counts, total } => {
            check_len(counts.len())?;
            finite(counts)?;
            if let Some((index, &value)) = counts.iter().enumerate().find(|(_, c)| **c < 0.0) {
                return Err(Error::NegativeCount { index, value });
            }
            // Homodyne histograms are normalized per angle.
            let block = match povms.settings() {
                MeasurementSettings::Homodyne(h) => h.n_bins(),
                _ => m,
            };
            let mut values = Vec::with_capacity(m);
            let mut samples = 0.0;
            for chunk in counts.chunks(block) {
                let sum: f64 = chunk.iter().sum();
                let t = total.map(|t| t as f64).unwrap_or(sum);
                if sum <= 0.0 || t <= 0.0 {
                    return Err(Error::NoSamples);
                }
                if t + 0.5 < sum {
                    return Err(Error::Invariant(format!("histogram sum {sum} exceeds total {t}")));
                }
                values.extend(chunk.iter().map(|c| c / t));
                samples += t;
            }
            Ok(MeasurementVector {
                values,
                normalization: Normalization::Probabilities,
                samples: Some(samples.round() as u64),
            })
        }
        MeasurementData::Probabilities(p) => {
            check_len(p.len())?;
            finite(p)?;
            // Grid cell masses are Riemann sums of a smooth density and may
            // overshoot 1 slightly on coarse grids; homodyne angles may not.
            let (block, limit) = match povms.settings() {
                MeasurementSettings::Homodyne(h) => (h.n_bins(), 1.0 + 1e-6),
                _ => (m, 1.05),
            };
            for chunk in p.chunks(block) {
                let sum: f64 = chunk.iter().sum();
                if sum > limit {
                    return Err(Error::Invariant(format!("probabilities sum to {sum} > 1")));
                }
            }
            Ok(MeasurementVector { values: p.clone(), normalization: Normalization::Probabilities, samples: None })
        }
        MeasurementData::Densities(d) => {
            check_len(d.len())?;
            finite(d)?;
            let Some(grid) = povms.settings().grid() else {
                return Err(Error::param("data", "density data requires a phase-space grid scheme"));
            };
            if povms.scheme() != Scheme::Heterodyne {
                return Err(Error::param("data", "density data is only meaningful for heterodyne"));
            }
            let area = grid.cell_area();
            Ok(MeasurementVector {
                values: d.iter().map(|v| v * area).collect(),
                normalization: Normalization::Densities,
                samples: None,
            })
        }
        MeasurementData::WignerValues(w) => {
            check_len(w.len())?;
            finite(w)?;
            if povms.scheme() != Scheme::Wigner {
                return Err(Error::param("data", "Wigner values require the wigner scheme"));
            }
            Ok(MeasurementVector { values: w.clone(), normalization: Normalization::WignerValues, samples: None })
        }
    }
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn parse_field(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse(format!("{}:{line}: `{s}` is not a number", path.display())))
}

/// One value per line, in outcome order.
pub fn read_vector_csv(path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (line, rec) in reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let fields: Vec<&str> = rec.iter().filter(|f| !f.is_empty()).collect();
        match fields.as_slice() {
            [] => continue,
            [v] => out.push(parse_field(v, path, line + 1)?),
            _ => return Err(Error::Parse(format!("{}:{}: expected one value per line", path.display(), line + 1))),
        }
    }
    Ok(out)
}

/// `nx` lines of `np` comma-separated values; returns them row-major.
pub fn read_grid_csv(path: &Path, grid: &PhaseSpaceGrid) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut rows = 0;
    for (line, rec) in reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != grid.np() {
            return Err(Error::ShapeMismatch(format!(
                "{}:{}: {} columns, grid has {}",
                path.display(),
                line + 1,
                rec.len(),
                grid.np()
            )));
        }
        for f in rec.iter() {
            out.push(parse_field(f, path, line + 1)?);
        }
        rows += 1;
    }
    if rows != grid.nx() {
        return Err(Error::ShapeMismatch(format!("{}: {rows} rows, grid has {}", path.display(), grid.nx())));
    }
    Ok(out)
}

pub fn write_vector_csv(path: &Path, values: &[f64]) -> Result<()> {
    let mut text = String::with_capacity(values.len() * 24);
    for v in values {
        text.push_str(&format!("{v:e}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_grid_csv(path: &Path, values: &[f64], nx: usize, np: usize) -> Result<()> {
    if values.len() != nx * np {
        return Err(Error::ShapeMismatch(format!("{} values for a {nx}x{np} grid", values.len())));
    }
    let mut text = String::with_capacity(values.len() * 24);
    for row in values.chunks(np) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::HermitianOperator;
    use crate::linalg::trace_product;
    use crate::povm::{build_povm_set, HomodyneSettings};

    fn dim(n: usize) -> FockDim {
        FockDim::new(n).unwrap()
    }

    fn sample_matrix(n: usize, seed: u64) -> ComplexMatrix {
        ComplexMatrix::from_fn(n, n, |i, j| {
            let t = seed as f64 * 0.37 + (i * 13 + j * 7) as f64;
            Complex64::new(t.sin(), (1.7 * t).cos())
        })
    }

    #[test]
    fn vectorize_stacks_columns() {
        let m = ComplexMatrix::from_fn(3, 3, |i, j| Complex64::new((10 * i + j) as f64, 0.0));
        let v = vectorize(&m).unwrap();
        let want = [0.0, 10.0, 20.0, 1.0, 11.0, 21.0, 2.0, 12.0, 22.0];
        for (a, b) in v.iter().zip(want) {
            assert_eq!(a.re, b);
        }
        let id = vectorize(&ComplexMatrix::identity(2, 2)).unwrap();
        assert_eq!(id.iter().map(|c| c.re).collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 1.0]);
        assert!(vectorize(&ComplexMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn unvectorize_round_trip() {
        let m = sample_matrix(8, 3);
        let back = unvectorize(&vectorize(&m).unwrap(), dim(8)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn basis_labels() {
        let ops = basis_ops(dim(2));
        assert_eq!(ops[1][(0, 1)], ONE);
        for op in &ops {
            assert_eq!(op.iter().filter(|c| c.norm() != 0.0).count(), 1);
            assert_eq!(op.iter().map(|c| c.re).sum::<f64>(), 1.0);
        }
        let n = 4;
        let sum = (0..n).fold(ComplexMatrix::zeros(n, n), |acc, i| acc + basis_op(i * n + i, dim(n)));
        assert_eq!(sum, ComplexMatrix::identity(n, n));
        // rho = sum_c vec(rho)[c] Omega_{sigma(c)}
        let rho = sample_matrix(n, 9);
        let v = vectorize(&rho).unwrap();
        let rebuilt = (0..n * n)
            .fold(ComplexMatrix::zeros(n, n), |acc, c| acc + basis_op(column_basis_index(c, dim(n)), dim(n)) * v[c]);
        assert_eq!(rebuilt, rho);
    }

    fn random_density(n: usize, seed: u64) -> DensityMatrix {
        let g = sample_matrix(n, seed);
        let p = &g * g.adjoint();
        let tr: f64 = p.diagonal().iter().map(|c| c.re).sum();
        DensityMatrix::new(crate::linalg::hermitize(&p.unscale(tr))).unwrap()
    }

    #[test]
    fn identity_row_and_trace_identity() {
        let n = 6;
        let h = HomodyneSettings::new(vec![0.3], vec![f64::NEG_INFINITY, f64::INFINITY], 1.0).unwrap();
        let set = build_povm_set(&MeasurementSettings::Homodyne(h), dim(n)).unwrap();
        let a = build_design_matrix(&set).unwrap();
        for c in 0..n * n {
            let want = if c / n == c % n { 1.0 } else { 0.0 };
            assert!((a.entries()[(0, c)] - Complex64::new(want, 0.0)).norm() < 1e-8);
        }
        // every column reproduces Tr[Pi Omega_sigma(c)]
        let set =
            build_povm_set(&MeasurementSettings::Homodyne(HomodyneSettings::uniform(3, 5, 2.0, 0.8).unwrap()), dim(n))
                .unwrap();
        let a = build_design_matrix(&set).unwrap();
        for k in [0, 7, 14] {
            for c in 0..n * n {
                let omega = basis_op(column_basis_index(c, dim(n)), dim(n));
                let direct = trace_product(set.operators()[k].entries(), &omega);
                assert!((a.entries()[(k, c)] - direct).norm() < 1e-15);
            }
        }
        let rho = random_density(n, 5);
        let pred = a.predict(&rho).unwrap();
        for (k, op) in set.operators().iter().enumerate() {
            assert!((pred[k] - op.expectation(&rho)).abs() < 1e-12);
        }
    }

    #[test]
    fn random_psd_operator_row() {
        let n = 6;
        let g = sample_matrix(n, 11);
        let pi = HermitianOperator::hermitian_part(&(&g * g.adjoint()));
        let rho = random_density(n, 2);
        let v = vectorize(rho.entries()).unwrap();
        let row = vectorize(&pi.entries().transpose()).unwrap();
        let lhs: Complex64 = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        assert!((lhs.re - pi.expectation(&rho)).abs() < 1e-12);
        assert!(lhs.im.abs() < 1e-12);
    }

    #[test]
    fn golden_three_by_three() {
        // Pi = |0><1| + |1><0| + 2|2><2| (Hermitian, real)
        let mut p = ComplexMatrix::zeros(3, 3);
        p[(0, 1)] = ONE;
        p[(1, 0)] = ONE;
        p[(2, 2)] = Complex64::new(2.0, 0.0);
        p[(0, 2)] = Complex64::new(0.0, 1.0);
        p[(2, 0)] = Complex64::new(0.0, -1.0);
        let t = p.transpose();
        let row: Vec<Complex64> = t.as_slice().to_vec();
        // column c = j*3 + i holds Pi[(j, i)]
        let golden = [
            (0, ONE * 0.0),
            (1, ONE),
            (2, Complex64::new(0.0, 1.0)),
            (3, ONE),
            (6, Complex64::new(0.0, -1.0)),
            (8, Complex64::new(2.0, 0.0)),
        ];
        for (c, want) in golden {
            assert_eq!(row[c], want, "column {c}");
        }
    }

    #[test]
    fn measurement_vectors() {
        let grid = PhaseSpaceGrid::square(25, 6.0).unwrap();
        let set = build_povm_set(&MeasurementSettings::Heterodyne { grid, n_th: 0.0 }, dim(4)).unwrap();
        let mut counts = vec![0.0; 625];
        for (k, c) in counts.iter_mut().enumerate() {
            *c = (k % 64) as f64;
        }
        let total: f64 = counts.iter().sum();
        counts[0] += 20_000.0 - total;
        let mv =
            build_measurement_vector(&MeasurementData::Counts { counts: counts.clone(), total: None }, &set).unwrap();
        assert!((mv.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(mv.samples, Some(20_000));
        let zeros = MeasurementData::Counts { counts: vec![0.0; 625], total: None };
        assert!(matches!(build_measurement_vector(&zeros, &set), Err(Error::NoSamples)));
        let mut neg = counts.clone();
        neg[3] = -1.0;
        assert!(matches!(
            build_measurement_vector(&MeasurementData::Counts { counts: neg, total: None }, &set),
            Err(Error::NegativeCount { index: 3, .. })
        ));
        assert!(build_measurement_vector(&MeasurementData::Probabilities(vec![0.1; 10]), &set).is_err());
        let w = build_povm_set(&MeasurementSettings::Wigner { grid }, dim(4)).unwrap();
        let vals: Vec<f64> = (0..625).map(|k| (k as f64 * 0.01).sin() * 0.6).collect();
        let mv = build_measurement_vector(&MeasurementData::WignerValues(vals.clone()), &w).unwrap();
        assert_eq!(mv.values, vals);
        assert_eq!(mv.normalization, Normalization::WignerValues);
    }

    #[test]
    fn csv_round_trip_and_shape_errors() {
        let dir = tempfile::tempdir().unwrap();
        let grid = PhaseSpaceGrid::new(1.0, 2.0, 3, 4).unwrap();
        let vals: Vec<f64> = (0..12).map(|k| k as f64 * 0.25 - 1.0).collect();
        let path = dir.path().join("g.csv");
        write_grid_csv(&path, &vals, 3, 4).unwrap();
        assert_eq!(read_grid_csv(&path, &grid).unwrap(), vals);
        let other = PhaseSpaceGrid::new(1.0, 2.0, 4, 3).unwrap();
        assert!(read_grid_csv(&path, &other).is_err());
        let vpath = dir.path().join("v.csv");
        write_vector_csv(&vpath, &vals).unwrap();
        assert_eq!(read_vector_csv(&vpath).unwrap(), vals);
        assert!(read_vector_csv(&path).is_err());
    }

    #[test]
    fn design_json_round_trip() {
        let grid = PhaseSpaceGrid::square(3, 2.0).unwrap();
        let set = build_povm_set(&MeasurementSettings::Wigner { grid }, dim(3)).unwrap();
        let a = build_design_matrix(&set).unwrap();
        let back = DesignMatrix::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
    }
}
