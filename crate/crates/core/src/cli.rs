//! Command-line front end: `simulate`, `reconstruct`, `benchmark`,
//! `fidelity` and `inspect`.
//!
//! A run is described by [`RunConfig`]. Values are layered, later layers
//! winning: built-in defaults, the metadata of an input dataset, a JSON
//! config file, command-line flags. The fully resolved config is written
//! next to the outputs and can be fed back with `--config`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::assemble::{
    build_design_matrix, build_measurement_vector, read_grid_csv, read_vector_csv, write_grid_csv, MeasurementData,
};
use crate::error::{Error, Result};
use crate::fockspace::{DensityMatrix, FockDim};
use crate::metrics::{fidelity, photon_populations, wigner_function, PhaseSpaceFunction, PhaseSpaceKind};
use crate::povm::{build_povm_set, HomodyneSettings, MeasurementSettings, PhaseSpaceGrid, Scheme};
use crate::simulate::{
    homodyne_probabilities, ideal_heterodyne_grid, ideal_wigner_grid, make_test_state, sample_counts,
    simulate_homodyne, thermal_corrupt, DatasetMetadata, SimSeed, TestState, TestStateSpec,
};
use crate::solver::{certify_optimality, reconstruct, ReconstructionResult, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const METADATA: &str = "metadata.json";
pub const GRID_DATA: &str = "data.csv";

#[derive(Parser, Debug)]
#[command(name = "cvqst", version, about = "Continuous-variable quantum state tomography")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset for a test state.
    Simulate(RunArgs),
    /// Reconstruct a density matrix from a dataset.
    Reconstruct(RunArgs),
    /// Simulate and reconstruct over a parameter sweep, one CSV row per run.
    Benchmark(BenchArgs),
    /// Fidelity between a result and another result or a test state.
    Fidelity(FidelityArgs),
    /// Summarize a result, dataset or config file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// homodyne, heterodyne or wigner.
    #[arg(long)]
    pub scheme: Option<Scheme>,
    /// Test state: vac02, cat, fock04, squeezed, fock1.
    #[arg(long)]
    pub state: Option<String>,
    /// Reference state for fidelity reports (reconstruct).
    #[arg(long)]
    pub reference: Option<String>,
    /// Cat amplitude.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Squeezing parameter r.
    #[arg(long)]
    pub squeezing: Option<f64>,
    /// Fock-space dimension N.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Cells per side of the square phase-space grid.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub alpha_max: Option<f64>,
    #[arg(long)]
    pub angles: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Outer finite homodyne bin edge.
    #[arg(long)]
    pub x_max: Option<f64>,
    /// Homodyne detector efficiency.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Thermal photon number of the heterodyne amplifier noise.
    #[arg(long)]
    pub nth: Option<f64>,
    /// Gaussian noise on simulated Wigner values.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Samples (per angle for homodyne); omit for exact probabilities.
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset directory or data file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub eps_rel: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Swept parameter, e.g. `alpha_max=2.5,3,3.5` or `state=["cat","fock1"]`.
    /// Repeat for a Cartesian product; the first flag varies slowest.
    #[arg(long = "sweep", value_name = "KEY=VALUES")]
    pub sweep: Vec<String>,
}

#[derive(Args, Debug, Clone)]
pub struct FidelityArgs {
    /// Result JSON written by `reconstruct`.
    pub result: PathBuf,
    /// Second result JSON; alternatively use --state.
    pub other: Option<PathBuf>,
    #[arg(long)]
    pub state: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub squeezing: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Everything needed to reproduce one simulate or reconstruct run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub state: TestState,
    pub reference: Option<TestState>,
    pub dim: FockDim,
    pub grid: usize,
    pub alpha_max: f64,
    pub angles: usize,
    pub bins: usize,
    pub x_max: f64,
    pub eta: f64,
    pub n_th: f64,
    pub sigma: f64,
    pub samples: Option<u64>,
    pub seed: SimSeed,
    pub certificate_trials: usize,
    pub solver: SolverConfig,
    pub data: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: Scheme::Heterodyne,
            state: TestState::Cat { beta: 2.0 },
            reference: None,
            dim: FockDim::new(32).expect("nonzero"),
            grid: 25,
            alpha_max: 6.0,
            angles: 20,
            bins: 20,
            x_max: 4.0,
            eta: 1.0,
            n_th: 0.0,
            sigma: 0.0,
            samples: None,
            seed: SimSeed(0),
            certificate_trials: 200,
            solver: SolverConfig::default(),
            data: None,
            output: PathBuf::from("cvqst-out"),
        }
    }
}

impl RunConfig {
    pub fn grid_settings(&self) -> Result<PhaseSpaceGrid> {
        PhaseSpaceGrid::square(self.grid, self.alpha_max)
    }

    pub fn measurement_settings(&self) -> Result<MeasurementSettings> {
        Ok(match self.scheme {
            Scheme::Homodyne => {
                MeasurementSettings::Homodyne(HomodyneSettings::uniform(self.angles, self.bins, self.x_max, self.eta)?)
            }
            Scheme::Heterodyne => MeasurementSettings::Heterodyne { grid: self.grid_settings()?, n_th: self.n_th },
            Scheme::Wigner => MeasurementSettings::Wigner { grid: self.grid_settings()? },
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.measurement_settings()?;
        if !(self.n_th >= 0.0) || !self.n_th.is_finite() {
            return Err(Error::param("n_th", "must be finite and >= 0"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::param("sigma", "must be finite and >= 0"));
        }
        if self.samples == Some(0) {
            return Err(Error::param("samples", "must be at least 1"));
        }
        if self.samples.is_some() && self.scheme == Scheme::Wigner {
            return Err(Error::param("samples", "sampling is not defined for Wigner data"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Merges `patch` into `base`. Only `solver` merges key by key; every
/// other key is replaced whole, so a new `state` drops the old parameters.
fn merge(base: &mut Value, patch: Value) {
    let (Value::Object(b), Value::Object(p)) = (base, patch) else { return };
    for (k, v) in p {
        match b.get_mut(&k) {
            Some(slot @ Value::Object(_)) if k == "solver" && v.is_object() => {
                let (Value::Object(s), Value::Object(vp)) = (slot, v) else { unreachable!() };
                s.extend(vp);
            }
            _ => {
                b.insert(k, v);
            }
        }
    }
}

fn from_value(v: Value) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Parse(format!("config: {e}")))?;
    Ok(cfg)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| io_context(e, path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn state_with(name: &str, beta: Option<f64>, r: Option<f64>, current: Option<TestState>) -> Result<TestState> {
    let beta = beta.or(match current {
        Some(TestState::Cat { beta }) => Some(beta),
        _ => None,
    });
    let r = r.or(match current {
        Some(TestState::Squeezed { r }) => Some(r),
        _ => None,
    });
    TestState::with_params(name, beta, r)
}

fn retune(state: TestState, beta: Option<f64>, r: Option<f64>) -> TestState {
    match state {
        TestState::Cat { beta: b } => TestState::Cat { beta: beta.unwrap_or(b) },
        TestState::Squeezed { r: s } => TestState::Squeezed { r: r.unwrap_or(s) },
        other => other,
    }
}

fn flag_patch(args: &RunArgs) -> Map<String, Value> {
    let mut m = Map::new();
    let mut put = |k: &str, v: Value| {
        m.insert(k.to_string(), v);
    };
    if let Some(s) = args.scheme {
        put("scheme", Value::String(s.to_string()));
    }
    if let Some(n) = args.dim {
        put("dim", n.into());
    }
    if let Some(g) = args.grid {
        put("grid", g.into());
    }
    if let Some(a) = args.alpha_max {
        put("alpha_max", a.into());
    }
    if let Some(a) = args.angles {
        put("angles", a.into());
    }
    if let Some(b) = args.bins {
        put("bins", b.into());
    }
    if let Some(x) = args.x_max {
        put("x_max", x.into());
    }
    if let Some(e) = args.eta {
        put("eta", e.into());
    }
    if let Some(n) = args.nth {
        put("n_th", n.into());
    }
    if let Some(s) = args.sigma {
        put("sigma", s.into());
    }
    if let Some(s) = args.samples {
        put("samples", s.into());
    }
    if let Some(s) = args.seed {
        put("seed", s.into());
    }
    if let Some(d) = &args.data {
        put("data", Value::String(d.display().to_string()));
    }
    if let Some(o) = &args.out {
        put("output", Value::String(o.display().to_string()));
    }
    let mut solver = Map::new();
    if let Some(i) = args.max_iters {
        solver.insert("max_iters".into(), i.into());
    }
    if let Some(e) = args.eps_rel {
        solver.insert("eps_rel".into(), e.into());
    }
    if !solver.is_empty() {
        put("solver", Value::Object(solver));
    }
    m
}

/// Defaults a dataset's metadata implies for reconstructing it.
fn metadata_patch(meta: &DatasetMetadata) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("scheme".into(), Value::String(meta.scheme.to_string()));
    m.insert("dim".into(), meta.state.dim.get().into());
    m.insert("n_th".into(), meta.n_th.into());
    m.insert("eta".into(), meta.eta.into());
    m.insert("sigma".into(), meta.sigma.into());
    m.insert("seed".into(), meta.seed.0.into());
    m.insert("samples".into(), meta.samples.map_or(Value::Null, Value::from));
    if let Ok(v) = serde_json::to_value(meta.state.state) {
        m.insert("reference".into(), v);
    }
    match &meta.settings {
        MeasurementSettings::Homodyne(h) => {
            m.insert("angles".into(), h.angles().len().into());
            m.insert("bins".into(), h.n_bins().into());
            if let Some(x) = h.bin_edges().get(1) {
                m.insert("x_max".into(), x.abs().into());
            }
        }
        MeasurementSettings::Heterodyne { grid, .. } | MeasurementSettings::Wigner { grid } => {
            m.insert("grid".into(), grid.nx().into());
            m.insert("alpha_max".into(), grid.x_max().into());
        }
    }
    m
}

fn read_metadata(data: &Path) -> Result<Option<DatasetMetadata>> {
    let path = data.join(METADATA);
    if !data.is_dir() || !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| io_context(e, &path))?;
    let meta = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(Some(meta))
}

/// Builds the layered config for a run command.
pub fn resolve_config(args: &RunArgs, use_metadata: bool) -> Result<RunConfig> {
    let mut v = serde_json::to_value(RunConfig::default())?;
    let file = match &args.config {
        Some(p) => {
            let f = read_json(p)?;
            if !f.is_object() {
                return Err(Error::Parse(format!("{}: config must be a JSON object", p.display())));
            }
            // Reject unknown keys before any merging hides them.
            from_value(f.clone())?;
            Some(f)
        }
        None => None,
    };
    let flags = flag_patch(args);
    if use_metadata {
        let data = flags
            .get("data")
            .or_else(|| file.as_ref().and_then(|f| f.get("data")))
            .and_then(Value::as_str)
            .map(PathBuf::from);
        if let Some(meta) = data.as_deref().map(read_metadata).transpose()?.flatten() {
            merge(&mut v, Value::Object(metadata_patch(&meta)));
        }
    }
    if let Some(f) = file {
        merge(&mut v, f);
    }
    merge(&mut v, Value::Object(flags));
    let mut cfg = from_value(v)?;

    if let Some(name) = &args.state {
        cfg.state = state_with(name, args.beta, args.squeezing, Some(cfg.state))?;
    } else {
        cfg.state = retune(cfg.state, args.beta, args.squeezing);
    }
    if let Some(name) = &args.reference {
        cfg.reference = Some(state_with(name, args.beta, args.squeezing, cfg.reference)?);
    } else {
        cfg.reference = cfg.reference.map(|s| retune(s, args.beta, args.squeezing));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Simulated data in outcome order: counts when `samples` is set,
/// otherwise exact probabilities (or Wigner values).
pub fn generate_data(cfg: &RunConfig, rho: &DensityMatrix) -> Result<Vec<f64>> {
    let settings = cfg.measurement_settings()?;
    match &settings {
        MeasurementSettings::Homodyne(h) => match cfg.samples {
            Some(n) => Ok(simulate_homodyne(rho, h, n, cfg.seed)?.flat_counts()),
            None => homodyne_probabilities(rho, h),
        },
        MeasurementSettings::Heterodyne { grid, n_th } => {
            let ideal = ideal_heterodyne_grid(rho, grid);
            let p = thermal_corrupt(&ideal, grid, *n_th)?;
            match cfg.samples {
                Some(n) => Ok(sample_counts(&p, n, cfg.seed)?.counts_f64()),
                None => Ok(p),
            }
        }
        MeasurementSettings::Wigner { grid } => ideal_wigner_grid(rho, grid, cfg.sigma, cfg.seed),
    }
}

pub fn measurement_data(cfg: &RunConfig, values: Vec<f64>) -> MeasurementData {
    match (cfg.samples, cfg.scheme) {
        (Some(n), _) => MeasurementData::Counts { counts: values, total: Some(n) },
        (None, Scheme::Wigner) => MeasurementData::WignerValues(values),
        (None, _) => MeasurementData::Probabilities(values),
    }
}

fn hist_name(angle: usize) -> String {
    format!("hist_{angle:03}.csv")
}

fn write_histograms(dir: &Path, h: &HomodyneSettings, values: &[f64]) -> Result<Vec<String>> {
    let nb = h.n_bins();
    let mut files = Vec::new();
    for (i, chunk) in values.chunks(nb).enumerate() {
        let mut text = format!("# theta = {:e}\nlo,hi,value\n", h.angles()[i]);
        for ((lo, hi), v) in h.bins().zip(chunk) {
            let _ = writeln!(text, "{lo:e},{hi:e},{v:e}");
        }
        let name = hist_name(i);
        std::fs::write(dir.join(&name), text)?;
        files.push(name);
    }
    Ok(files)
}

fn read_histograms(dir: &Path, h: &HomodyneSettings) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(h.outcome_count());
    for i in 0..h.angles().len() {
        let path = dir.join(hist_name(i));
        let text = std::fs::read_to_string(&path).map_err(|e| io_context(e, &path))?;
        let mut rows = 0;
        let bins: Vec<(f64, f64)> = h.bins().collect();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            if line.starts_with("lo") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Parse(format!("{}: `{s}` is not a number", path.display())))
            };
            let [lo, hi, v] = fields.as_slice() else {
                return Err(Error::Parse(format!("{}: expected `lo,hi,value` rows", path.display())));
            };
            let (lo, hi, v) = (parse(lo)?, parse(hi)?, parse(v)?);
            let Some(&(elo, ehi)) = bins.get(rows) else {
                return Err(Error::ShapeMismatch(format!("{}: more than {} bins", path.display(), bins.len())));
            };
            let same = |a: f64, b: f64| a == b || (a - b).abs() <= 1e-9 * (1.0 + b.abs());
            if !same(lo, elo) || !same(hi, ehi) {
                return Err(Error::ShapeMismatch(format!(
                    "{}: bin {rows} is [{lo}, {hi}], settings expect [{elo}, {ehi}]",
                    path.display()
                )));
            }
            out.push(v);
            rows += 1;
        }
        if rows != bins.len() {
            return Err(Error::ShapeMismatch(format!("{}: {rows} bins, settings have {}", path.display(), bins.len())));
        }
    }
    Ok(out)
}

fn load_data(cfg: &RunConfig, settings: &MeasurementSettings) -> Result<Vec<f64>> {
    let path = cfg.data.as_deref().ok_or_else(|| Error::param("data", "reconstruct needs --data"))?;
    match settings {
        MeasurementSettings::Homodyne(h) if path.is_dir() => read_histograms(path, h),
        MeasurementSettings::Homodyne(h) => {
            let v = read_vector_csv(path)?;
            if v.len() != h.outcome_count() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: {} values, settings have {} outcomes",
                    path.display(),
                    v.len(),
                    h.outcome_count()
                )));
            }
            Ok(v)
        }
        MeasurementSettings::Heterodyne { grid, .. } | MeasurementSettings::Wigner { grid } => {
            let file = if path.is_dir() { path.join(GRID_DATA) } else { path.to_path_buf() };
            if !file.exists() {
                return Err(io_context(std::io::ErrorKind::NotFound.into(), &file));
            }
            read_grid_csv(&file, grid)
        }
    }
}

fn create_output(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.output).map_err(|e| io_context(e, &cfg.output))?;
    std::fs::write(cfg.output.join(RESOLVED_CONFIG), cfg.to_json()?)?;
    Ok(&cfg.output)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<i32> {
    let rho = make_test_state(&TestStateSpec { state: cfg.state, dim: cfg.dim })?;
    let settings = cfg.measurement_settings()?;
    info!("simulating {} data for {}", cfg.scheme, cfg.state.name());
    let values = generate_data(cfg, &rho)?;
    let dir = create_output(cfg)?;
    let files = match &settings {
        MeasurementSettings::Homodyne(h) => write_histograms(dir, h, &values)?,
        MeasurementSettings::Heterodyne { grid, .. } | MeasurementSettings::Wigner { grid } => {
            write_grid_csv(&dir.join(GRID_DATA), &values, grid.nx(), grid.np())?;
            let kind = if cfg.scheme == Scheme::Wigner { PhaseSpaceKind::Wigner } else { PhaseSpaceKind::HusimiQ };
            PhaseSpaceFunction::from_flat(*grid, &values, kind)?.write_png(&dir.join("data.png"), 8)?;
            vec![GRID_DATA.to_string(), "data.png".to_string()]
        }
    };
    let meta = DatasetMetadata {
        state: TestStateSpec { state: cfg.state, dim: cfg.dim },
        scheme: cfg.scheme,
        settings,
        n_th: cfg.n_th,
        eta: cfg.eta,
        sigma: cfg.sigma,
        seed: cfg.seed,
        samples: cfg.samples,
        files,
    };
    std::fs::write(dir.join(METADATA), serde_json::to_string_pretty(&meta)?)?;
    println!("wrote {} outcomes to {}", values.len(), dir.display());
    Ok(EXIT_OK)
}

pub fn cmd_reconstruct(cfg: &RunConfig) -> Result<i32> {
    let settings = cfg.measurement_settings()?;
    let raw = load_data(cfg, &settings)?;
    let t0 = Instant::now();
    let set = build_povm_set(&settings, cfg.dim)?;
    let a = build_design_matrix(&set)?;
    let t_build = t0.elapsed().as_secs_f64();
    let b = build_measurement_vector(&measurement_data(cfg, raw), &set)?;
    info!("operators built in {t_build:.3} s, solving N = {} with {} outcomes", cfg.dim.get(), set.len());
    let mut result = reconstruct(&a, &b, &cfg.solver)?;
    result.t_build = t_build;

    let dir = create_output(cfg)?;
    std::fs::write(dir.join("result.json"), result.to_json()?)?;
    let mut pops = String::from("n,population\n");
    for (n, p) in photon_populations(&result.rho).iter().enumerate() {
        let _ = writeln!(pops, "{n},{p:e}");
    }
    std::fs::write(dir.join("populations.csv"), pops)?;
    let w = wigner_function(&result.rho, &cfg.grid_settings()?);
    w.write_csv(&dir.join("wigner.csv"))?;
    w.write_png(&dir.join("wigner.png"), 8)?;

    println!("objective {:e}", result.objective);
    println!("iterations {}", result.iterations);
    println!("converged {}", result.converged);
    println!("t_build {:.3} s, t_solve {:.3} s", result.t_build, result.t_solve);
    if let Some(reference) = cfg.reference {
        let truth = make_test_state(&TestStateSpec { state: reference, dim: cfg.dim })?;
        println!("fidelity {:.8}", fidelity(&result.rho, &truth)?);
    }
    if !result.converged {
        let report = certify_optimality(&result, &a, &b, cfg.certificate_trials, cfg.seed.0)?;
        if !report.passed() {
            eprintln!(
                "error: solver did not converge and the optimality certificate failed at trial {}",
                report.first_violation().unwrap_or(0)
            );
            return Ok(EXIT_NUMERIC);
        }
        warn!("solver hit max_iters, but the optimality certificate passed");
    }
    Ok(EXIT_OK)
}

/// One benchmark row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub values: Vec<Value>,
    pub fidelity: f64,
    pub t_build: f64,
    pub t_solve: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub error: Option<String>,
}

/// Simulates and reconstructs one configuration in memory.
pub fn run_entry(cfg: &RunConfig) -> Result<(ReconstructionResult, f64)> {
    let rho = make_test_state(&TestStateSpec { state: cfg.state, dim: cfg.dim })?;
    let values = generate_data(cfg, &rho)?;
    let t0 = Instant::now();
    let set = build_povm_set(&cfg.measurement_settings()?, cfg.dim)?;
    let a = build_design_matrix(&set)?;
    let t_build = t0.elapsed().as_secs_f64();
    let b = build_measurement_vector(&measurement_data(cfg, values), &set)?;
    let mut result = reconstruct(&a, &b, &cfg.solver)?;
    result.t_build = t_build;
    let f = fidelity(&result.rho, &rho)?;
    Ok((result, f))
}

/// Swept key and its values, in sweep order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<Value>,
}

pub fn parse_sweep(spec: &str) -> Result<SweepAxis> {
    let (key, list) =
        spec.split_once('=').ok_or_else(|| Error::param("sweep", format!("`{spec}` is not KEY=VALUES")))?;
    let key = key.trim().replace('-', "_");
    let list = list.trim();
    let values: Vec<Value> = if list.starts_with('[') {
        serde_json::from_str(list).map_err(|e| Error::Parse(format!("sweep {key}: {e}")))?
    } else {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string())))
            .collect()
    };
    if values.is_empty() {
        return Err(Error::param("sweep", format!("no values for `{key}`")));
    }
    Ok(SweepAxis { key, values })
}

/// Expands the axes into configurations, first axis varying slowest.
/// Unknown keys fail the whole sweep; an invalid value only its own runs.
pub fn expand_sweep(base: &RunConfig, axes: &[SweepAxis]) -> Result<Vec<(Vec<Value>, Result<RunConfig>)>> {
    let base_value = serde_json::to_value(base)?;
    for axis in axes {
        let known = match axis.key.strip_prefix("solver.") {
            Some(inner) => base_value["solver"].get(inner).is_some(),
            None => base_value.get(&axis.key).is_some(),
        };
        if !known {
            return Err(Error::param("sweep", format!("unknown config key `{}`", axis.key)));
        }
    }
    let mut combos: Vec<Vec<Value>> = vec![Vec::new()];
    for axis in axes {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                axis.values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }
    Ok(combos
        .into_iter()
        .map(|values| {
            let mut v = base_value.clone();
            for (axis, val) in axes.iter().zip(&values) {
                let patch = match axis.key.strip_prefix("solver.") {
                    Some(inner) => serde_json::json!({ "solver": { inner: val } }),
                    None => serde_json::json!({ axis.key.as_str(): val }),
                };
                merge(&mut v, patch);
            }
            let cfg = from_value(v).and_then(|c| c.validate().map(|_| c));
            (values, cfg)
        })
        .collect())
}

fn csv_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn cmd_benchmark(base: &RunConfig, axes: &[SweepAxis]) -> Result<i32> {
    let runs = expand_sweep(base, axes)?;
    info!("benchmark: {} runs on {} workers", runs.len(), rayon::current_num_threads());
    let rows: Vec<BenchRow> = runs
        .par_iter()
        .map(|(values, cfg)| {
            match cfg.as_ref().map_err(|e| e.to_string()).and_then(|c| run_entry(c).map_err(|e| e.to_string())) {
                Ok((r, f)) => BenchRow {
                    values: values.clone(),
                    fidelity: f,
                    t_build: r.t_build,
                    t_solve: r.t_solve,
                    iterations: r.iterations,
                    converged: r.converged,
                    objective: r.objective,
                    error: None,
                },
                Err(e) => BenchRow {
                    values: values.clone(),
                    fidelity: f64::NAN,
                    t_build: f64::NAN,
                    t_solve: f64::NAN,
                    iterations: 0,
                    converged: false,
                    objective: f64::NAN,
                    error: Some(e),
                },
            }
        })
        .collect();

    let dir = create_output(base)?;
    std::fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(axes)?)?;
    let path = dir.join("benchmark.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Parse(e.to_string()))?;
    let mut header: Vec<String> = axes.iter().map(|a| a.key.clone()).collect();
    header
        .extend(["fidelity", "t_build", "t_solve", "iterations", "converged", "objective", "error"].map(String::from));
    w.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for r in &rows {
        let mut rec: Vec<String> = r.values.iter().map(csv_value).collect();
        rec.extend([
            format!("{}", r.fidelity),
            format!("{}", r.t_build),
            format!("{}", r.t_solve),
            r.iterations.to_string(),
            r.converged.to_string(),
            format!("{:e}", r.objective),
            r.error.clone().unwrap_or_default(),
        ]);
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        warn!("{failed} of {} runs failed; see the error column", rows.len());
    }
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(EXIT_OK)
}

fn read_result(path: &Path) -> Result<ReconstructionResult> {
    let text = std::fs::read_to_string(path).map_err(|e| io_context(e, path))?;
    ReconstructionResult::from_json(&text)
}

pub fn cmd_fidelity(args: &FidelityArgs) -> Result<i32> {
    let a = read_result(&args.result)?;
    let other = match (&args.other, &args.state) {
        (Some(p), _) => read_result(p)?.rho,
        (None, Some(name)) => {
            let state = TestState::with_params(name, args.beta, args.squeezing)?;
            make_test_state(&TestStateSpec { state, dim: FockDim::new(a.rho.dim())? })?
        }
        (None, None) => return Err(Error::param("state", "give a second result file or --state")),
    };
    if other.dim() != a.rho.dim() {
        return Err(Error::DimensionMismatch { expected: a.rho.dim(), found: other.dim() });
    }
    println!("{:.10}", fidelity(&a.rho, &other)?);
    Ok(EXIT_OK)
}

fn describe_grid(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| io_context(e, path))?;
    let mut rows = 0usize;
    let mut cols = 0usize;
    let mut values = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let parsed: Vec<f64> = line.split(',').filter_map(|f| f.trim().parse().ok()).collect();
        if parsed.is_empty() {
            continue;
        }
        rows += 1;
        cols = cols.max(parsed.len());
        values.extend(parsed);
    }
    let sum: f64 = values.iter().sum();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(format!("{rows} rows x {cols} columns of numbers\nsum {sum:e}\nmin {min:e}\nmax {max:e}"))
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<i32> {
    let path = &args.path;
    if path.extension().is_some_and(|e| e == "csv") {
        println!("{}", describe_grid(path)?);
        return Ok(EXIT_OK);
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_context(e, path))?;
    if let Ok(r) = ReconstructionResult::from_json(&text) {
        let pops = photon_populations(&r.rho);
        let purity: f64 = r.rho.entries().iter().map(|c| c.norm_sqr()).sum();
        println!("reconstruction result, N = {}", r.rho.dim());
        println!("objective {:e}, iterations {}, converged {}", r.objective, r.iterations, r.converged);
        println!("trace {:.12}, purity {:.6}", r.rho.trace(), purity);
        println!("t_build {:.3} s, t_solve {:.3} s", r.t_build, r.t_solve);
        let shown: Vec<String> = pops.iter().take(10).enumerate().map(|(n, p)| format!("{n}:{p:.4}")).collect();
        println!("populations {}", shown.join(" "));
    } else if let Ok(m) = serde_json::from_str::<DatasetMetadata>(&text) {
        println!("dataset: {} data for {} (N = {})", m.scheme, m.state.state.name(), m.state.dim.get());
        println!("outcomes {}, seed {}, samples {:?}", m.settings.outcome_count(), m.seed.0, m.samples);
        println!("n_th {}, eta {}, sigma {}", m.n_th, m.eta, m.sigma);
        println!("files {}", m.files.join(", "));
    } else if let Ok(c) = serde_json::from_str::<RunConfig>(&text) {
        println!("run config: {} scheme, state {}, N = {}", c.scheme, c.state.name(), c.dim.get());
        println!("{}", c.to_json()?);
    } else {
        return Err(Error::Parse(format!("{}: not a result, dataset metadata or run config", path.display())));
    }
    Ok(EXIT_OK)
}

/// Exit code for a library error: bad input versus numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotHermitian(_) | Error::Invariant(_) | Error::Image(_) => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            warn!("could not size the worker pool: {e}");
        }
    }
    let outcome = match &cli.command {
        Command::Simulate(args) => resolve_config(args, false).and_then(|c| cmd_simulate(&c)),
        Command::Reconstruct(args) => resolve_config(args, true).and_then(|c| cmd_reconstruct(&c)),
        Command::Benchmark(args) => resolve_config(&args.run, false).and_then(|c| {
            let axes = args.sweep.iter().map(|s| parse_sweep(s)).collect::<Result<Vec<_>>>()?;
            cmd_benchmark(&c, &axes)
        }),
        Command::Fidelity(args) => cmd_fidelity(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
