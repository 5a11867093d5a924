//! Measurement operators for homodyne, heterodyne and displaced-parity
//! (Wigner) detection, with loss and thermal-noise compensation.
//!
//! Outcome ordering is fixed:
//! - homodyne: `k = angle_index * n_bins + bin_index`
//! - phase-space grids: `k = row * np + col`, where `row` indexes the real
//!   part (x) and `col` the imaginary part (p) of `alpha`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::fockspace::{
    coherent_state, displaced_thermal_block, displacement_elements, hosc_wavefunctions, FockDim, HermitianOperator,
};
use crate::linalg::{hermitize, ln_factorials, ComplexMatrix};
use crate::quadrature::integrate_vec;

/// Per-entry absolute tolerance for the homodyne bin integrals.
pub const HOMODYNE_QUAD_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Homodyne,
    Heterodyne,
    Wigner,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Homodyne => "homodyne",
            Scheme::Heterodyne => "heterodyne",
            Scheme::Wigner => "wigner",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homodyne" => Ok(Scheme::Homodyne),
            "heterodyne" => Ok(Scheme::Heterodyne),
            "wigner" => Ok(Scheme::Wigner),
            other => Err(Error::param("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

/// Local-oscillator phases, quadrature bin edges and detector efficiency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HomodyneSettingsRaw", deny_unknown_fields)]
pub struct HomodyneSettings {
    angles: Vec<f64>,
    #[serde(serialize_with = "serialize_edges")]
    bin_edges: Vec<f64>,
    efficiency: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HomodyneSettingsRaw {
    angles: Vec<f64>,
    #[serde(deserialize_with = "deserialize_edges")]
    bin_edges: Vec<f64>,
    efficiency: f64,
}

impl TryFrom<HomodyneSettingsRaw> for HomodyneSettings {
    type Error = Error;
    fn try_from(raw: HomodyneSettingsRaw) -> Result<Self> {
        HomodyneSettings::new(raw.angles, raw.bin_edges, raw.efficiency)
    }
}

// JSON has no infinities; unbounded edges are written as strings.
fn serialize_edges<S: serde::Serializer>(edges: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(edges.len()))?;
    for &e in edges {
        if e == f64::INFINITY {
            seq.serialize_element("inf")?;
        } else if e == f64::NEG_INFINITY {
            seq.serialize_element("-inf")?;
        } else {
            seq.serialize_element(&e)?;
        }
    }
    seq.end()
}

fn deserialize_edges<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Edge {
        Num(f64),
        Text(String),
    }
    let raw: Vec<Edge> = Vec::deserialize(d)?;
    raw.into_iter()
        .map(|e| match e {
            Edge::Num(v) => Ok(v),
            Edge::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad bin edge `{other}`"))),
            },
        })
        .collect()
}

impl HomodyneSettings {
    pub fn new(angles: Vec<f64>, bin_edges: Vec<f64>, efficiency: f64) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::param("angles", "at least one angle is required"));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::param("angles", "angles must be finite"));
        }
        if bin_edges.len() < 2 {
            return Err(Error::param("bin_edges", "at least two edges are required"));
        }
        if bin_edges.iter().any(|e| e.is_nan()) {
            return Err(Error::param("bin_edges", "NaN edge"));
        }
        for w in bin_edges.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::EmptyBin { lo: w[0], hi: w[1] });
            }
        }
        let interior_inf = bin_edges[1..bin_edges.len() - 1].iter().any(|e| e.is_infinite());
        if interior_inf {
            return Err(Error::param("bin_edges", "only the outer edges may be infinite"));
        }
        check_efficiency(efficiency)?;
        Ok(HomodyneSettings { angles, bin_edges, efficiency })
    }

    /// `n_angles` phases `k*pi/n_angles` and `n_bins` bins: `n_bins - 2`
    /// equal-width bins over `[-x_max, x_max]` plus two unbounded edge bins.
    pub fn uniform(n_angles: usize, n_bins: usize, x_max: f64, efficiency: f64) -> Result<Self> {
        if n_angles == 0 {
            return Err(Error::param("angles", "at least one angle is required"));
        }
        if n_bins < 3 {
            return Err(Error::param("bins", "need at least 3 bins (two are unbounded)"));
        }
        if !(x_max > 0.0) || !x_max.is_finite() {
            return Err(Error::param("x_max", "must be positive"));
        }
        let angles = (0..n_angles).map(|k| k as f64 * PI / n_angles as f64).collect();
        let interior = n_bins - 2;
        let mut edges = vec![f64::NEG_INFINITY];
        for k in 0..=interior {
            edges.push(-x_max + 2.0 * x_max * k as f64 / interior as f64);
        }
        edges.push(f64::INFINITY);
        Self::new(angles, edges, efficiency)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn n_bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    pub fn bins(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.bin_edges.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn outcome_count(&self) -> usize {
        self.angles.len() * self.n_bins()
    }
}

fn check_efficiency(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::param("efficiency", format!("must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

fn check_nth(n_th: f64) -> Result<()> {
    if !(n_th >= 0.0) || !n_th.is_finite() {
        return Err(Error::param("n_th", format!("must be finite and >= 0, got {n_th}")));
    }
    Ok(())
}

/// Uniform `nx x np` grid of cell centres over `[-x_max, x_max] x [-p_max, p_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRaw", deny_unknown_fields)]
pub struct PhaseSpaceGrid {
    x_max: f64,
    p_max: f64,
    nx: usize,
    np: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRaw {
    x_max: f64,
    p_max: f64,
    nx: usize,
    np: usize,
}

impl TryFrom<GridRaw> for PhaseSpaceGrid {
    type Error = Error;
    fn try_from(r: GridRaw) -> Result<Self> {
        PhaseSpaceGrid::new(r.x_max, r.p_max, r.nx, r.np)
    }
}

impl PhaseSpaceGrid {
    pub fn new(x_max: f64, p_max: f64, nx: usize, np: usize) -> Result<Self> {
        if !(x_max > 0.0 && x_max.is_finite()) || !(p_max > 0.0 && p_max.is_finite()) {
            return Err(Error::param("grid", "phase-space limits must be positive"));
        }
        if nx == 0 || np == 0 {
            return Err(Error::param("grid", "grid must have at least one cell per axis"));
        }
        Ok(PhaseSpaceGrid { x_max, p_max, nx, np })
    }

    /// `n x n` grid with `x_max = p_max = alpha_max`.
    pub fn square(n: usize, alpha_max: f64) -> Result<Self> {
        Self::new(alpha_max, alpha_max, n, n)
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn p_max(&self) -> f64 {
        self.p_max
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn np(&self) -> usize {
        self.np
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.x_max / self.nx as f64
    }

    pub fn dp(&self) -> f64 {
        2.0 * self.p_max / self.np as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dp()
    }

    pub fn len(&self) -> usize {
        self.nx * self.np
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_center(&self, row: usize) -> f64 {
        -self.x_max + (row as f64 + 0.5) * self.dx()
    }

    pub fn p_center(&self, col: usize) -> f64 {
        -self.p_max + (col as f64 + 0.5) * self.dp()
    }

    pub fn center(&self, row: usize, col: usize) -> Complex64 {
        Complex64::new(self.x_center(row), self.p_center(col))
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.np + col
    }

    /// Cell centres in outcome order.
    pub fn centers(&self) -> Vec<Complex64> {
        (0..self.nx).flat_map(|r| (0..self.np).map(move |c| (r, c))).map(|(r, c)| self.center(r, c)).collect()
    }
}

/// Scheme plus everything needed to rebuild its operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeasurementSettings {
    Homodyne(HomodyneSettings),
    Heterodyne { grid: PhaseSpaceGrid, n_th: f64 },
    Wigner { grid: PhaseSpaceGrid },
}

impl MeasurementSettings {
    pub fn scheme(&self) -> Scheme {
        match self {
            MeasurementSettings::Homodyne(_) => Scheme::Homodyne,
            MeasurementSettings::Heterodyne { .. } => Scheme::Heterodyne,
            MeasurementSettings::Wigner { .. } => Scheme::Wigner,
        }
    }

    pub fn outcome_count(&self) -> usize {
        match self {
            MeasurementSettings::Homodyne(h) => h.outcome_count(),
            MeasurementSettings::Heterodyne { grid, .. } | MeasurementSettings::Wigner { grid } => grid.len(),
        }
    }

    pub fn grid(&self) -> Option<&PhaseSpaceGrid> {
        match self {
            MeasurementSettings::Homodyne(_) => None,
            MeasurementSettings::Heterodyne { grid, .. } | MeasurementSettings::Wigner { grid } => Some(grid),
        }
    }

    /// Metadata for outcome `k`.
    pub fn outcome(&self, k: usize) -> Option<Outcome> {
        if k >= self.outcome_count() {
            return None;
        }
        Some(match self {
            MeasurementSettings::Homodyne(h) => {
                let nb = h.n_bins();
                let (a, b) = (k / nb, k % nb);
                Outcome::Quadrature {
                    angle_index: a,
                    bin_index: b,
                    theta: h.angles[a],
                    lo: h.bin_edges[b],
                    hi: h.bin_edges[b + 1],
                }
            }
            MeasurementSettings::Heterodyne { grid, .. } | MeasurementSettings::Wigner { grid } => {
                let (row, col) = (k / grid.np, k % grid.np);
                Outcome::Cell { row, col, alpha: grid.center(row, col) }
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    Quadrature { angle_index: usize, bin_index: usize, theta: f64, lo: f64, hi: f64 },
    Cell { row: usize, col: usize, alpha: Complex64 },
}

/// Ordered measurement operators with their settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PovmSet {
    settings: MeasurementSettings,
    dim: FockDim,
    operators: Vec<HermitianOperator>,
}

impl PovmSet {
    pub fn settings(&self) -> &MeasurementSettings {
        &self.settings
    }

    pub fn scheme(&self) -> Scheme {
        self.settings.scheme()
    }

    pub fn dim(&self) -> FockDim {
        self.dim
    }

    pub fn operators(&self) -> &[HermitianOperator] {
        &self.operators
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    /// `sum_k Pi_k`.
    pub fn operator_sum(&self) -> ComplexMatrix {
        let n = self.dim.get();
        self.operators.iter().fold(ComplexMatrix::zeros(n, n), |acc, op| acc + op.entries())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PovmFile {
            format: POVM_FORMAT.to_string(),
            version: 1,
            dim: self.dim.get(),
            settings: self.settings.clone(),
            operators: self.operators.iter().map(|o| codec::encode_matrix(o.entries())).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PovmFile = serde_json::from_str(text)?;
        if file.format != POVM_FORMAT || file.version != 1 {
            return Err(Error::Parse(format!("unsupported container {} v{}", file.format, file.version)));
        }
        let dim = FockDim::new(file.dim)?;
        if file.operators.len() != file.settings.outcome_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} operators for {} outcomes",
                file.operators.len(),
                file.settings.outcome_count()
            )));
        }
        let operators = file
            .operators
            .iter()
            .map(|s| HermitianOperator::new(codec::decode_matrix(s, dim.get(), dim.get())?))
            .collect::<Result<Vec<_>>>()?;
        Ok(PovmSet { settings: file.settings, dim, operators })
    }
}

pub(crate) const POVM_FORMAT: &str = "cvqst-povm";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PovmFile {
    format: String,
    version: u32,
    dim: usize,
    settings: MeasurementSettings,
    operators: Vec<String>,
}

/// Quadrature cut-off used in place of infinite bin edges.
pub fn quadrature_cutoff(dim: FockDim) -> f64 {
    (2.0 * dim.get() as f64).sqrt() + 6.0
}

/// Real symmetric matrix `G_mn = int_lo^hi psi_m(x) psi_n(x) dx`.
pub fn bin_overlap_matrix(lo: f64, hi: f64, dim: FockDim) -> Result<nalgebra::DMatrix<f64>> {
    if !(lo < hi) {
        return Err(Error::EmptyBin { lo, hi });
    }
    let n = dim.get();
    let cut = quadrature_cutoff(dim);
    let (a, b) = (lo.max(-cut), hi.min(cut));
    let mut g = nalgebra::DMatrix::<f64>::zeros(n, n);
    if a >= b {
        return Ok(g);
    }
    let len = n * (n + 1) / 2;
    let (vals, _err) = integrate_vec(
        |x, out| {
            let psi = hosc_wavefunctions(n, x);
            let mut idx = 0;
            for m in 0..n {
                for k in m..n {
                    out[idx] = psi[m] * psi[k];
                    idx += 1;
                }
            }
        },
        a,
        b,
        len,
        HOMODYNE_QUAD_TOL,
        4000,
    );
    let mut idx = 0;
    for m in 0..n {
        for k in m..n {
            g[(m, k)] = vals[idx];
            g[(k, m)] = vals[idx];
            idx += 1;
        }
    }
    Ok(g)
}

fn phase_rotate(g: &ComplexMatrix, theta: f64) -> ComplexMatrix {
    let n = g.nrows();
    ComplexMatrix::from_fn(n, n, |m, k| {
        if m == k {
            g[(m, k)]
        } else {
            g[(m, k)] * Complex64::from_polar(1.0, (m as f64 - k as f64) * theta)
        }
    })
}

/// Homodyne bin operator `Pi_mn = int <m|x_theta><x_theta|n> dx` over `[lo, hi]`.
pub fn homodyne_povm(theta: f64, lo: f64, hi: f64, dim: FockDim) -> Result<HermitianOperator> {
    let g = bin_overlap_matrix(lo, hi, dim)?;
    let gc = g.map(|v| Complex64::new(v, 0.0));
    Ok(HermitianOperator::from_exact(phase_rotate(&gc, theta)))
}

/// `B_{n+k,n}(eta) = sqrt(C(n+k, n) eta^n (1-eta)^k)` for `n + k < size`,
/// indexed `[n][k]`.
pub fn bernoulli_table(eta: f64, size: usize) -> Vec<Vec<f64>> {
    let lnf = ln_factorials(size);
    let (ln_eta, ln_loss) = (eta.ln(), (1.0 - eta).ln());
    (0..size)
        .map(|n| {
            (0..size - n)
                .map(|k| {
                    if k > 0 && eta == 1.0 {
                        return 0.0;
                    }
                    let ln_c = lnf[n + k] - lnf[n] - lnf[k];
                    let loss_term = if k == 0 { 0.0 } else { k as f64 * ln_loss };
                    let eta_term = if n == 0 { 0.0 } else { n as f64 * ln_eta };
                    (0.5 * (ln_c + eta_term + loss_term)).exp()
                })
                .collect()
        })
        .collect()
}

/// Loss-compensated operator `sum_{m,n,k} B_{m+k,m} B_{n+k,n} Pi_mn |m+k><n+k|`,
/// the Heisenberg-picture image of `pi` under a beam splitter of
/// transmissivity `eta`, truncated to `m + k, n + k < dim`.
pub fn loss_degrade(pi: &HermitianOperator, eta: f64, dim: FockDim) -> Result<HermitianOperator> {
    check_efficiency(eta)?;
    let n = dim.get();
    if pi.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: pi.dim() });
    }
    Ok(HermitianOperator::from_exact(hermitize(&loss_degrade_matrix(pi.entries(), eta))))
}

fn loss_degrade_matrix(p: &ComplexMatrix, eta: f64) -> ComplexMatrix {
    let n = p.nrows();
    if eta == 1.0 {
        return p.clone();
    }
    let b = bernoulli_table(eta, n);
    let mut out = ComplexMatrix::zeros(n, n);
    for k in 0..n {
        for m in 0..n - k {
            let bm = b[m][k];
            for l in 0..n - k {
                out[(m + k, l + k)] += p[(m, l)] * (bm * b[l][k]);
            }
        }
    }
    out
}

/// `(cell_area / pi) |alpha><alpha|`.
pub fn heterodyne_povm(alpha: Complex64, cell_area: f64, dim: FockDim) -> Result<HermitianOperator> {
    if !(cell_area > 0.0) {
        return Err(Error::param("cell_area", "must be positive"));
    }
    let psi = coherent_state(alpha, dim);
    Ok(HermitianOperator::from_exact(hermitize(&psi.projector().scale(cell_area / PI))))
}

/// Noise-compensated heterodyne operator `(cell_area / pi) D(alpha) rho_th D†(alpha)`,
/// built from exact displaced-thermal matrix elements.
pub fn heterodyne_povm_noisy(alpha: Complex64, n_th: f64, cell_area: f64, dim: FockDim) -> Result<HermitianOperator> {
    check_nth(n_th)?;
    if !(cell_area > 0.0) {
        return Err(Error::param("cell_area", "must be positive"));
    }
    if n_th == 0.0 {
        return heterodyne_povm(alpha, cell_area, dim);
    }
    Ok(displaced_thermal_block(alpha, n_th, dim)?.scaled(cell_area / PI))
}

/// Displaced parity `D(alpha) P D†(alpha) = D(2 alpha) P`, exact matrix
/// elements restricted to the truncated space.
pub fn wigner_povm(alpha: Complex64, dim: FockDim) -> HermitianOperator {
    let n = dim.get();
    let mut d = displacement_elements(alpha * 2.0, n, n);
    for k in (1..n).step_by(2) {
        d.column_mut(k).neg_mut();
    }
    HermitianOperator::from_exact(hermitize(&d))
}

/// Thermal photon number equivalent to detection efficiency `eta`: `1/eta - 1`.
pub fn noise_efficiency_equivalence(eta: f64) -> Result<f64> {
    check_efficiency(eta)?;
    Ok(1.0 / eta - 1.0)
}

/// Inverse of [`noise_efficiency_equivalence`]: `1 / (n + 1)`.
pub fn efficiency_from_noise(n_th: f64) -> Result<f64> {
    check_nth(n_th)?;
    Ok(1.0 / (n_th + 1.0))
}

/// Builds every operator of the scheme in outcome order.
pub fn build_povm_set(settings: &MeasurementSettings, dim: FockDim) -> Result<PovmSet> {
    let operators = match settings {
        MeasurementSettings::Homodyne(h) => {
            let eta = h.efficiency;
            let bins: Vec<(f64, f64)> = h.bins().collect();
            // The loss map commutes with the angle phase, so degrade each
            // bin's overlap matrix once and rotate per angle.
            let per_bin = bins
                .par_iter()
                .map(|&(lo, hi)| {
                    let g = bin_overlap_matrix(lo, hi, dim)?.map(|v| Complex64::new(v, 0.0));
                    Ok(loss_degrade_matrix(&g, eta))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut ops = Vec::with_capacity(h.outcome_count());
            for &theta in &h.angles {
                for g in &per_bin {
                    ops.push(HermitianOperator::from_exact(hermitize(&phase_rotate(g, theta))));
                }
            }
            ops
        }
        MeasurementSettings::Heterodyne { grid, n_th } => {
            check_nth(*n_th)?;
            let area = grid.cell_area();
            grid.centers()
                .par_iter()
                .map(|&alpha| heterodyne_povm_noisy(alpha, *n_th, area, dim))
                .collect::<Result<Vec<_>>>()?
        }
        MeasurementSettings::Wigner { grid } => {
            grid.centers().par_iter().map(|&alpha| wigner_povm(alpha, dim)).collect()
        }
    };
    Ok(PovmSet { settings: settings.clone(), dim, operators })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fockspace::{parity_op, thermal_state, DensityMatrix, StateVector};
    use crate::linalg::{ONE, ZERO};
    use approx::assert_abs_diff_eq;

    fn dim(n: usize) -> FockDim {
        FockDim::new(n).unwrap()
    }

    fn kraus_oracle(p: &ComplexMatrix, eta: f64) -> ComplexMatrix {
        // Independent route: K_k = sum_n B_{n+k,n} |n><n+k| built from
        // explicit binomials, result sum_k K_k† P K_k.
        let n = p.nrows();
        let binom = |a: usize, b: usize| -> f64 {
            let mut r = 1.0;
            for i in 0..b {
                r = r * (a - i) as f64 / (i + 1) as f64;
            }
            r
        };
        let mut out = ComplexMatrix::zeros(n, n);
        for k in 0..n {
            let mut kk = ComplexMatrix::zeros(n, n);
            for m in 0..n - k {
                let b = (binom(m + k, m) * eta.powi(m as i32) * (1.0 - eta).powi(k as i32)).sqrt();
                kk[(m, m + k)] = Complex64::new(b, 0.0);
            }
            out += kk.adjoint() * p * &kk;
        }
        out
    }

    #[test]
    fn full_line_bin_is_identity() {
        for theta in [0.0, 0.7, 2.9] {
            let op = homodyne_povm(theta, f64::NEG_INFINITY, f64::INFINITY, dim(12)).unwrap();
            assert!((op.entries() - ComplexMatrix::identity(12, 12)).camax() < 1e-8);
        }
    }

    #[test]
    fn half_line_entries() {
        for theta in [0.0, 1.3] {
            let op = homodyne_povm(theta, 0.0, f64::INFINITY, dim(4)).unwrap();
            assert_abs_diff_eq!(op.entries()[(0, 0)].re, 0.5, epsilon = 1e-8);
        }
        // oracle: int_0^inf psi_0 psi_1 = sqrt(2) pi^{-1/2} int_0^inf x e^{-x^2} dx
        let oracle = 2f64.sqrt() / PI.sqrt() * 0.5;
        assert_abs_diff_eq!(oracle, 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-15);
        let op = homodyne_povm(0.0, 0.0, f64::INFINITY, dim(4)).unwrap();
        assert_abs_diff_eq!(op.entries()[(0, 1)].re, oracle, epsilon = 1e-8);
        assert!(homodyne_povm(0.0, 1.0, 1.0, dim(4)).is_err());
    }

    #[test]
    fn loss_identity_and_kraus() {
        let base = homodyne_povm(0.9, -0.4, 1.1, dim(10)).unwrap();
        let same = loss_degrade(&base, 1.0, dim(10)).unwrap();
        assert!((same.entries() - base.entries()).camax() < 1e-15);
        let b = bernoulli_table(0.37, 12);
        for (n, row) in b.iter().enumerate() {
            assert_abs_diff_eq!(row[0], 0.37f64.powf(n as f64 / 2.0), epsilon = 1e-14);
        }
        for eta in [0.2, 0.5, 0.83] {
            for nd in [3, 9, 16] {
                let op = homodyne_povm(1.1, -0.5, 0.8, dim(nd)).unwrap();
                let got = loss_degrade(&op, eta, dim(nd)).unwrap();
                let want = kraus_oracle(op.entries(), eta);
                assert!((got.entries() - want).camax() < 1e-10);
            }
        }
        let mut vac = ComplexMatrix::zeros(6, 6);
        vac[(0, 0)] = ONE;
        let got = loss_degrade(&HermitianOperator::new(vac).unwrap(), 0.4, dim(6)).unwrap();
        for k in 0..6 {
            assert_abs_diff_eq!(got.entries()[(k, k)].re, 0.6f64.powi(k as i32), epsilon = 1e-14);
        }
        assert!(loss_degrade(&base, 0.0, dim(10)).is_err());
        assert!(loss_degrade(&base, 1.2, dim(10)).is_err());
    }

    #[test]
    fn printed_index_order_is_the_transpose() {
        // Writing the output dyad as |n+k><m+k| yields the transpose of the
        // Kraus result, which differs from it for complex operators.
        let op = homodyne_povm(0.8, -0.3, 0.9, dim(6)).unwrap();
        let kraus = kraus_oracle(op.entries(), 0.6);
        let got = loss_degrade(&op, 0.6, dim(6)).unwrap();
        assert!((got.entries() - &kraus).camax() < 1e-12);
        assert!((got.entries().transpose() - &kraus).camax() > 1e-3);
    }

    #[test]
    fn heterodyne_cases() {
        let op = heterodyne_povm(ZERO, PI, dim(5)).unwrap();
        let mut vac = ComplexMatrix::zeros(5, 5);
        vac[(0, 0)] = ONE;
        assert!((op.entries() - vac).camax() < 1e-15);
        let alpha = Complex64::new(0.6, -1.1);
        let op = heterodyne_povm(alpha, 0.3, dim(20)).unwrap();
        let ev = op.eigenvalues();
        let nonzero = ev.iter().filter(|v| v.abs() > 1e-12).count();
        assert_eq!(nonzero, 1);
        let norm = coherent_state(alpha, dim(20)).norm_sqr();
        assert_abs_diff_eq!(op.trace(), 0.3 / PI * norm, epsilon = 1e-14);
        assert!(heterodyne_povm(alpha, 0.0, dim(4)).is_err());
    }

    #[test]
    fn vacuum_grid_mass() {
        let grid = PhaseSpaceGrid::square(49, 6.0).unwrap();
        let povm = build_povm_set(&MeasurementSettings::Heterodyne { grid, n_th: 0.0 }, dim(32)).unwrap();
        let vac = DensityMatrix::pure(&StateVector::fock(0, dim(32)).unwrap()).unwrap();
        let total: f64 = povm.operators().iter().map(|o| o.expectation(&vac)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn noisy_heterodyne_cases() {
        let area = 0.25;
        for alpha in [Complex64::new(1.0, 2.0), Complex64::new(-5.5, 4.0)] {
            let a = heterodyne_povm_noisy(alpha, 0.0, area, dim(24)).unwrap();
            let b = heterodyne_povm(alpha, area, dim(24)).unwrap();
            assert!((a.entries() - b.entries()).camax() < 1e-10);
        }
        let z = heterodyne_povm_noisy(ZERO, 1.5, area, dim(16)).unwrap();
        let th = thermal_state(1.5, dim(16)).unwrap().scaled(area / PI);
        assert!((z.entries() - th.entries()).camax() < 1e-14);
        let small = Complex64::new(0.4, -0.3);
        let op = heterodyne_povm_noisy(small, 0.8, area, dim(60)).unwrap();
        let tr = thermal_state(0.8, dim(60)).unwrap().trace();
        assert_abs_diff_eq!(op.trace(), area / PI * tr, epsilon = 1e-9);
        assert!(op.eigenvalues()[0] > -1e-10);
        assert!(heterodyne_povm_noisy(small, -1.0, area, dim(8)).is_err());
    }

    #[test]
    fn wigner_cases() {
        let w0 = wigner_povm(ZERO, dim(7));
        assert_eq!(w0.entries(), parity_op(dim(7)).entries());
        let vac = DensityMatrix::pure(&StateVector::fock(0, dim(7)).unwrap()).unwrap();
        let one = DensityMatrix::pure(&StateVector::fock(1, dim(7)).unwrap()).unwrap();
        assert_abs_diff_eq!(2.0 / PI * w0.expectation(&vac), 2.0 / PI, epsilon = 1e-15);
        assert_abs_diff_eq!(2.0 / PI * w0.expectation(&one), -2.0 / PI, epsilon = 1e-15);
        // In a big enough space the displaced parity has eigenvalues +-1.
        let w = wigner_povm(Complex64::new(0.5, 0.4), dim(60));
        let ev = w.eigenvalues();
        for v in ev.iter().take(20).chain(ev.iter().rev().take(20)) {
            assert!((v.abs() - 1.0).abs() < 1e-6, "eigenvalue {v}");
        }
    }

    #[test]
    fn equivalence_formula() {
        assert_eq!(noise_efficiency_equivalence(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(noise_efficiency_equivalence(0.5).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(noise_efficiency_equivalence(0.2).unwrap(), 4.0, epsilon = 1e-15);
        assert!(noise_efficiency_equivalence(0.0).is_err());
        assert!(noise_efficiency_equivalence(1.5).is_err());
        for eta in [0.05, 0.3, 0.5, 0.77, 1.0] {
            let back = efficiency_from_noise(noise_efficiency_equivalence(eta).unwrap()).unwrap();
            assert!((back - eta).abs() <= 1e-15);
        }
    }

    #[test]
    fn homodyne_set_counts_and_completeness() {
        let h = HomodyneSettings::uniform(20, 20, 4.0, 1.0).unwrap();
        let set = build_povm_set(&MeasurementSettings::Homodyne(h.clone()), dim(8)).unwrap();
        assert_eq!(set.len(), 400);
        for a in 0..20 {
            let sum = set.operators()[a * 20..(a + 1) * 20]
                .iter()
                .fold(ComplexMatrix::zeros(8, 8), |acc, o| acc + o.entries());
            assert!((sum - ComplexMatrix::identity(8, 8)).camax() < 1e-8);
        }
        let lossy = HomodyneSettings::uniform(3, 12, 3.0, 0.45).unwrap();
        let set = build_povm_set(&MeasurementSettings::Homodyne(lossy.clone()), dim(10)).unwrap();
        for a in 0..3 {
            let sum = set.operators()[a * 12..(a + 1) * 12]
                .iter()
                .fold(ComplexMatrix::zeros(10, 10), |acc, o| acc + o.entries());
            assert!((sum - ComplexMatrix::identity(10, 10)).camax() < 1e-8);
        }
        // batched path equals the per-outcome constructors
        for k in [0, 5, 17, 30] {
            let Some(Outcome::Quadrature { theta, lo, hi, .. }) = set.settings().outcome(k) else {
                panic!("wrong outcome kind")
            };
            let single = loss_degrade(&homodyne_povm(theta, lo, hi, dim(10)).unwrap(), 0.45, dim(10)).unwrap();
            assert!((single.entries() - set.operators()[k].entries()).camax() < 1e-12);
            assert!(set.operators()[k].eigenvalues()[0] > -1e-10);
        }
    }

    #[test]
    fn heterodyne_set_count_and_near_completeness() {
        let grid = PhaseSpaceGrid::square(25, 6.0).unwrap();
        let set = build_povm_set(&MeasurementSettings::Heterodyne { grid, n_th: 0.0 }, dim(32)).unwrap();
        assert_eq!(set.len(), 625);
        // coverage |alpha| <= sqrt(N), spacing <= 0.5
        let n = 16;
        let grid = PhaseSpaceGrid::square(24, 5.8).unwrap();
        assert!(grid.dx() <= 0.5);
        let set = build_povm_set(&MeasurementSettings::Heterodyne { grid, n_th: 0.0 }, dim(n)).unwrap();
        let sum = set.operator_sum();
        let block = n - n.div_ceil(4);
        let dev = (sum.view((0, 0), (block, block)) - ComplexMatrix::identity(block, block)).camax();
        assert!(dev < 1e-2, "deviation {dev}");
        assert!(set.operators().iter().all(|o| o.eigenvalues()[0] > -1e-10));
    }

    #[test]
    fn grid_ordering() {
        let g = PhaseSpaceGrid::new(2.0, 1.0, 4, 2).unwrap();
        assert_eq!(g.cell_area(), 1.0 * 1.0);
        assert_eq!(g.center(0, 0), Complex64::new(-1.5, -0.5));
        assert_eq!(g.centers()[1], Complex64::new(-1.5, 0.5));
        assert_eq!(g.index(3, 1), 7);
        assert!(PhaseSpaceGrid::new(0.0, 1.0, 3, 3).is_err());
        assert!(PhaseSpaceGrid::new(1.0, 1.0, 0, 3).is_err());
    }

    #[test]
    fn settings_validation() {
        assert!(HomodyneSettings::new(vec![], vec![0.0, 1.0], 1.0).is_err());
        assert!(HomodyneSettings::new(vec![0.0], vec![0.0], 1.0).is_err());
        assert!(HomodyneSettings::new(vec![0.0], vec![1.0, 0.0], 1.0).is_err());
        assert!(HomodyneSettings::new(vec![0.0], vec![0.0, 1.0], 0.0).is_err());
        assert!(HomodyneSettings::new(vec![0.0], vec![0.0, f64::INFINITY, 2.0], 1.0).is_err());
        let ok = HomodyneSettings::uniform(2, 5, 3.0, 0.9).unwrap();
        assert_eq!(ok.bin_edges(), &[f64::NEG_INFINITY, -3.0, -1.0, 1.0, 3.0, f64::INFINITY]);
    }

    #[test]
    fn json_container_round_trip() {
        let h = HomodyneSettings::uniform(2, 4, 3.0, 0.7).unwrap();
        let set = build_povm_set(&MeasurementSettings::Homodyne(h), dim(5)).unwrap();
        let text = set.to_json().unwrap();
        assert!(text.contains("\"-inf\""));
        let back = PovmSet::from_json(&text).unwrap();
        assert_eq!(back, set);
        let bad = text.replace("cvqst-povm", "other");
        assert!(PovmSet::from_json(&bad).is_err());
    }
}
