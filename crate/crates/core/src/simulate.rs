//! Synthetic measurement data for the three schemes.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`), seeded from a 64-bit
//! [`SimSeed`]; per-angle streams use `seed ^ angle_index`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fockspace::{coherent_state, hosc_wavefunctions, DensityMatrix, FockDim, StateVector};
use crate::linalg::{ln_factorials, ComplexVector};
use crate::metrics::{gaussian_smooth, wigner_function};
use crate::povm::{heterodyne_povm, quadrature_cutoff, HomodyneSettings, PhaseSpaceGrid, Scheme};
use crate::quadrature::integrate_vec;
use crate::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum TestState {
    /// `(|0> + |2>) / sqrt 2`
    Vac02,
    /// `(|beta> + |-beta>)` normalized.
    Cat { beta: f64 },
    /// `(|0> + |4>) / sqrt 2`
    Fock04,
    /// Squeezed vacuum `S(r)|0>`.
    Squeezed { r: f64 },
    /// `|1>`
    Fock1,
}

impl TestState {
    pub fn name(&self) -> &'static str {
        match self {
            TestState::Vac02 => "vac02",
            TestState::Cat { .. } => "cat",
            TestState::Fock04 => "fock04",
            TestState::Squeezed { .. } => "squeezed",
            TestState::Fock1 => "fock1",
        }
    }

    /// Named state with parameters `beta` (cat) or `r` (squeezed).
    pub fn with_params(name: &str, beta: Option<f64>, r: Option<f64>) -> Result<Self> {
        let state = match name {
            "vac02" => TestState::Vac02,
            "cat" => TestState::Cat { beta: beta.unwrap_or(2.0) },
            "fock04" => TestState::Fock04,
            "squeezed" => TestState::Squeezed { r: r.unwrap_or(0.5) },
            "fock1" => TestState::Fock1,
            other => return Err(Error::UnknownState(other.to_string())),
        };
        Ok(state)
    }
}

impl FromStr for TestState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TestState::with_params(s, None, None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestStateSpec {
    pub state: TestState,
    pub dim: FockDim,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimSeed(pub u64);

impl SimSeed {
    pub fn rng(self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.0)
    }

    /// Independent stream for sub-task `index`.
    pub fn derive(self, index: u64) -> SimSeed {
        SimSeed(self.0 ^ index)
    }
}

fn superposition(a: usize, b: usize, dim: FockDim) -> Result<StateVector> {
    let n = dim.get();
    if b >= n {
        return Err(Error::param("dim", format!("state needs at least {} Fock levels", b + 1)));
    }
    let mut v = ComplexVector::zeros(n);
    v[a] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    v[b] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    StateVector::new(v)
}

/// Test-state vector, renormalized inside the truncated space.
pub fn test_state_vector(spec: &TestStateSpec) -> Result<StateVector> {
    let n = spec.dim.get();
    match spec.state {
        TestState::Vac02 => superposition(0, 2, spec.dim),
        TestState::Fock04 => superposition(0, 4, spec.dim),
        TestState::Fock1 => StateVector::fock(1, spec.dim),
        TestState::Cat { beta } => {
            if !beta.is_finite() {
                return Err(Error::param("beta", "must be finite"));
            }
            let norm = 1.0 / (2.0 * (1.0 + (-2.0 * beta * beta).exp())).sqrt();
            let plus = coherent_state(Complex64::new(beta, 0.0), spec.dim);
            let minus = coherent_state(Complex64::new(-beta, 0.0), spec.dim);
            let v = (plus.amplitudes() + minus.amplitudes()) * Complex64::new(norm, 0.0);
            StateVector::new(v)?.normalized()
        }
        TestState::Squeezed { r } => {
            if !r.is_finite() {
                return Err(Error::param("r", "must be finite"));
            }
            // <2k|S(r)|0> = (-tanh r)^k sqrt((2k)!) / (2^k k! sqrt(cosh r))
            let lnf = ln_factorials(n);
            let t = r.tanh();
            let mut v = ComplexVector::zeros(n);
            for k in 0..n.div_ceil(2) {
                let m = 2 * k;
                if m >= n {
                    break;
                }
                let mag =
                    (0.5 * lnf[m] - lnf[k] - k as f64 * 2f64.ln() + k as f64 * t.abs().ln()).exp() / r.cosh().sqrt();
                let sign = if t < 0.0 || k % 2 == 0 { 1.0 } else { -1.0 };
                let mag = if t == 0.0 {
                    if k == 0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    mag
                };
                v[m] = Complex64::new(sign * mag, 0.0);
            }
            StateVector::new(v)?.normalized()
        }
    }
}

pub fn make_test_state(spec: &TestStateSpec) -> Result<DensityMatrix> {
    DensityMatrix::pure(&test_state_vector(spec)?)
}

/// Cell masses `Tr[Pi_k rho]` for the ideal heterodyne operators.
pub fn ideal_heterodyne_grid(rho: &DensityMatrix, grid: &PhaseSpaceGrid) -> Vec<f64> {
    let dim = FockDim::new(rho.dim()).expect("nonempty");
    let area = grid.cell_area();
    grid.centers()
        .par_iter()
        .map(|&alpha| heterodyne_povm(alpha, area, dim).expect("positive area").expectation(rho))
        .collect()
}

/// Convolution with the thermal P-function of mean photon number `n_th`.
pub fn thermal_corrupt(values: &[f64], grid: &PhaseSpaceGrid, n_th: f64) -> Result<Vec<f64>> {
    gaussian_smooth(values, grid, n_th)
}

/// Histogram from one multinomial draw. `overflow` holds draws that landed
/// in the residual mass `1 - sum p`. Inputs summing above 1 are rescaled.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub overflow: u64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

fn multinomial<R: Rng>(probabilities: &[f64], num_samples: u64, rng: &mut R) -> Result<Histogram> {
    if num_samples < 1 {
        return Err(Error::param("num_samples", "must be at least 1"));
    }
    if let Some((index, &value)) = probabilities.iter().enumerate().find(|(_, p)| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::param("probabilities", format!("entry {index} is {value}, must be finite and >= 0")));
    }
    let sum: f64 = probabilities.iter().sum();
    let mut remaining_mass = sum.max(1.0);
    let mut remaining = num_samples;
    let mut counts = Vec::with_capacity(probabilities.len());
    for &p in probabilities {
        if remaining == 0 || p == 0.0 {
            counts.push(0);
            remaining_mass -= p;
            continue;
        }
        let q = (p / remaining_mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, q).map_err(|e| Error::Invariant(e.to_string()))?.sample(rng);
        counts.push(draw);
        remaining -= draw;
        remaining_mass -= p;
    }
    // Rounding can leave a few draws when the probabilities sum to 1.
    let overflow = if sum >= 1.0 - 1e-12 && remaining > 0 {
        let last = probabilities.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        counts[last] += remaining;
        0
    } else {
        remaining
    };
    Ok(Histogram { counts, overflow })
}

/// One multinomial draw of `num_samples` from `probabilities`.
pub fn sample_counts(probabilities: &[f64], num_samples: u64, seed: SimSeed) -> Result<Histogram> {
    multinomial(probabilities, num_samples, &mut seed.rng())
}

/// Quadrature density `p(x|theta) = <x_theta|rho|x_theta>`.
pub fn quadrature_density(rho: &DensityMatrix, theta: f64, x: f64) -> f64 {
    let n = rho.dim();
    let psi = hosc_wavefunctions(n, x);
    let v = DVector::from_fn(n, |k, _| Complex64::from_polar(psi[k], k as f64 * theta));
    (v.adjoint() * rho.entries() * &v)[(0, 0)].re
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::param("eta", format!("must lie in (0, 1], got {eta}")));
    }
    Ok(())
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Exact bin probabilities of the lossy quadrature `y = sqrt(eta) x + s z`,
/// `s^2 = (1 - eta) / 2`, for every angle and bin of `settings` (angle-major).
pub fn homodyne_probabilities(rho: &DensityMatrix, settings: &HomodyneSettings) -> Result<Vec<f64>> {
    let eta = settings.efficiency();
    check_eta(eta)?;
    let dim = FockDim::new(rho.dim())?;
    let edges = settings.bin_edges().to_vec();
    let nb = settings.n_bins();
    let cut = quadrature_cutoff(dim) + 4.0;
    let per_angle: Vec<Vec<f64>> = settings
        .angles()
        .par_iter()
        .map(|&theta| {
            let (vals, _) = if eta == 1.0 {
                integrate_bins_lossless(rho, theta, &edges, cut)
            } else {
                let s = ((1.0 - eta) / 2.0).sqrt();
                let se = eta.sqrt();
                integrate_vec(
                    |x, out| {
                        let p = quadrature_density(rho, theta, x);
                        let mut prev = std_normal_cdf((edges[0] - se * x) / s);
                        for b in 0..nb {
                            let next = std_normal_cdf((edges[b + 1] - se * x) / s);
                            out[b] = p * (next - prev);
                            prev = next;
                        }
                    },
                    -cut,
                    cut,
                    nb,
                    1e-13,
                    4000,
                )
            };
            vals
        })
        .collect();
    Ok(per_angle.concat())
}

fn integrate_bins_lossless(rho: &DensityMatrix, theta: f64, edges: &[f64], cut: f64) -> (Vec<f64>, f64) {
    let nb = edges.len() - 1;
    let mut out = vec![0.0; nb];
    let mut worst = 0.0f64;
    for b in 0..nb {
        let lo = edges[b].max(-cut);
        let hi = edges[b + 1].min(cut);
        if hi > lo {
            let (v, e) = integrate_vec(|x, o| o[0] = quadrature_density(rho, theta, x), lo, hi, 1, 1e-14, 2000);
            out[b] = v[0];
            worst = worst.max(e);
        }
    }
    (out, worst)
}

/// Inverse-CDF sampler of the ideal quadrature distribution on a lattice of
/// spacing at most `0.01` over `[-cut, cut]`.
pub struct QuadratureSampler {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

impl QuadratureSampler {
    pub fn new(rho: &DensityMatrix, theta: f64) -> Result<Self> {
        let dim = FockDim::new(rho.dim())?;
        let cut = quadrature_cutoff(dim) + 2.0;
        let count = (2.0 * cut / 0.01).ceil() as usize + 1;
        let h = 2.0 * cut / (count - 1) as f64;
        let nodes: Vec<f64> = (0..count).map(|k| -cut + k as f64 * h).collect();
        let dens: Vec<f64> = nodes.iter().map(|&x| quadrature_density(rho, theta, x).max(0.0)).collect();
        if dens.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("quadrature density"));
        }
        let mut cdf = Vec::with_capacity(count);
        cdf.push(0.0);
        for k in 1..count {
            cdf.push(cdf[k - 1] + 0.5 * h * (dens[k - 1] + dens[k]));
        }
        let total = *cdf.last().expect("nonempty");
        if !(total > 0.0) {
            return Err(Error::Invariant("quadrature density has no mass".into()));
        }
        for c in &mut cdf {
            *c /= total;
        }
        Ok(QuadratureSampler { nodes, cdf })
    }

    /// Draw with piecewise-linear CDF inversion.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.nodes[k - 1] + t * (self.nodes[k] - self.nodes[k - 1])
    }
}

/// Raw lossy quadrature samples at one angle.
pub fn sample_quadratures<R: Rng>(
    rho: &DensityMatrix,
    theta: f64,
    eta: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_eta(eta)?;
    let sampler = QuadratureSampler::new(rho, theta)?;
    let s = ((1.0 - eta) / 2.0).sqrt();
    let se = eta.sqrt();
    Ok((0..count)
        .map(|_| {
            let x = sampler.sample(rng);
            let z: f64 = rng.sample(StandardNormal);
            se * x + s * z
        })
        .collect())
}

/// Index of the bin holding `y`, if any.
pub fn bin_index(edges: &[f64], y: f64) -> Option<usize> {
    if y < edges[0] || y >= edges[edges.len() - 1] {
        return None;
    }
    Some(edges.partition_point(|&e| e <= y) - 1)
}

/// Per-angle histograms of simulated homodyne samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomodyneData {
    pub histograms: Vec<Histogram>,
    pub samples_per_angle: u64,
    pub seed: SimSeed,
}

impl HomodyneData {
    /// Counts concatenated in outcome order.
    pub fn flat_counts(&self) -> Vec<f64> {
        self.histograms.iter().flat_map(|h| h.counts_f64()).collect()
    }
}

pub fn simulate_homodyne(
    rho: &DensityMatrix,
    settings: &HomodyneSettings,
    samples_per_angle: u64,
    seed: SimSeed,
) -> Result<HomodyneData> {
    if samples_per_angle < 1 {
        return Err(Error::param("samples", "must be at least 1"));
    }
    let edges = settings.bin_edges();
    let eta = settings.efficiency();
    let histograms = settings
        .angles()
        .par_iter()
        .enumerate()
        .map(|(i, &theta)| {
            let mut rng = seed.derive(i as u64).rng();
            let ys = sample_quadratures(rho, theta, eta, samples_per_angle as usize, &mut rng)?;
            let mut counts = vec![0u64; edges.len() - 1];
            let mut overflow = 0;
            for y in ys {
                match bin_index(edges, y) {
                    Some(b) => counts[b] += 1,
                    None => overflow += 1,
                }
            }
            Ok(Histogram { counts, overflow })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HomodyneData { histograms, samples_per_angle, seed })
}

/// Wigner values on the grid, plus optional i.i.d. Gaussian noise of
/// standard deviation `sigma`.
pub fn ideal_wigner_grid(rho: &DensityMatrix, grid: &PhaseSpaceGrid, sigma: f64, seed: SimSeed) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", "must be finite and >= 0"));
    }
    let mut values = wigner_function(rho, grid).to_flat();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Invariant(e.to_string()))?;
        let mut rng = seed.rng();
        for v in &mut values {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(values)
}

/// Description of a simulated dataset, written beside the data files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub state: TestStateSpec,
    pub scheme: Scheme,
    pub settings: crate::povm::MeasurementSettings,
    pub n_th: f64,
    pub eta: f64,
    pub sigma: f64,
    pub seed: SimSeed,
    pub samples: Option<u64>,
    pub files: Vec<String>,
}

/// Chi-square statistic of observed counts against expected probabilities,
/// over cells with positive expectation.
pub fn chi_square(counts: &[u64], probabilities: &[f64], total: u64) -> (f64, usize) {
    let mut stat = 0.0;
    let mut cells = 0;
    for (&c, &p) in counts.iter().zip(probabilities) {
        let e = p * total as f64;
        if e > 0.0 {
            stat += (c as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    (stat, cells)
}

/// Upper critical value of chi-square with `dof` degrees of freedom at
/// significance 0.001 (Wilson-Hilferty approximation).
pub fn chi_square_critical_001(dof: usize) -> f64 {
    let k = dof as f64;
    let z = 3.090_232_306_167_813;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}

/// Mean of `|alpha|^2` over a grid of cell masses.
pub fn grid_second_moment(values: &[f64], grid: &PhaseSpaceGrid) -> f64 {
    let total: f64 = values.iter().sum();
    grid.centers().iter().zip(values).map(|(a, v)| a.norm_sqr() * v).sum::<f64>() / total
}

#[cfg(test)]
pub(crate) fn q_value_oracle(n_th: f64, alpha: Complex64) -> f64 {
    (-alpha.norm_sqr() / (n_th + 1.0)).exp() / (std::f64::consts::PI * (n_th + 1.0))
}
