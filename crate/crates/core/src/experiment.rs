//! Experiment configuration, ε-sweep presets, ensemble execution, statistics
//! bundles and the on-disk output layout (`manifest.json` + CSVs per
//! experiment directory).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::sample_uniform_sphere;
use crate::error::{Error, Result};
use crate::integrate::{integrate_lockstep, Observe, RngStream, StepperConfig, TimeSeries};
use crate::model::{builtin_paper_model, fast_energy, FastSubsystem, FullModel, TriadCoefficients, TriadSystem};
use crate::reduced::{EFloorPolicy, MProvenance, ReducedModel, ReducedParams};
use crate::stats::{
    self, correlation_function, correlation_time, empirical_density, ensemble_curves, ensemble_kurtosis,
    lagged_kurtosis, CorrelationCurve, CorrelationTime, CtConvention, DensityEstimate, KurtosisCurve,
};

/// Bath constant reported for the reference coefficient set.
pub const PUBLISHED_M: f64 = 1.2759;

/// Fraction of aborted trajectories above which an ensemble fails.
pub const MAX_ABORT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Full,
    Fast,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

/// Time step of the full model for a given ε (reference protocol); ε values
/// outside the table scale the ε = 0.1 step as ε².
pub fn paper_dt(epsilon: f64) -> f64 {
    const TABLE: [(f64, f64); 4] = [(1.0, 1e-4), (0.5, 2.5e-5), (0.25, 2e-5), (0.1, 1e-6)];
    TABLE
        .iter()
        .find(|(e, _)| (e - epsilon).abs() < 1e-12)
        .map(|&(_, dt)| dt)
        .unwrap_or(1e-6 * (epsilon / 0.1).powi(2).min(100.0))
}

/// Spacing of recorded samples used by all presets.
pub const SAMPLE_INTERVAL: f64 = 0.01;

fn stride_for(dt: f64, interval: f64) -> usize {
    ((interval / dt).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsRequest {
    pub cf_max_lag_x: f64,
    pub cf_max_lag_e: f64,
    pub cf_max_lag_y: f64,
    pub kurt_max_lag_x: f64,
    pub kurt_max_lag_e: f64,
    pub density_bins: usize,
    pub density_range_x: (f64, f64),
    pub density_range_e: (f64, f64),
    pub ct_convention: CtConvention,
}

impl Default for StatsRequest {
    fn default() -> Self {
        Self {
            cf_max_lag_x: 3.0,
            cf_max_lag_e: 40.0,
            cf_max_lag_y: 2.0,
            kurt_max_lag_x: 2.0,
            kurt_max_lag_e: 10.0,
            density_bins: 60,
            density_range_x: (-8.0, 8.0),
            density_range_e: (0.0, 90.0),
            ct_convention: CtConvention::Area,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    /// Coefficient JSON file; the built-in table when absent.
    #[serde(default)]
    pub coefficients: Option<PathBuf>,
    /// Use the coefficients as printed instead of their exactly conservative
    /// projection.
    #[serde(default)]
    pub raw_coefficients: bool,
    #[serde(default = "one")]
    pub epsilon: f64,
    pub stepper: StepperConfig,
    pub t_final: f64,
    #[serde(default = "one_usize")]
    pub ensemble: usize,
    #[serde(default)]
    pub seed: u64,
    /// Bath constant for the reduced model.
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub m_provenance: MProvenance,
    #[serde(default)]
    pub e_floor: EFloorPolicy,
    /// Record y_1..y_n as well (full and fast models).
    #[serde(default)]
    pub record_fast_modes: bool,
    /// Energy shell of fast-model runs; `n` when absent.
    #[serde(default)]
    pub fast_energy_level: Option<f64>,
    #[serde(default)]
    pub stats: StatsRequest,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl ExperimentConfig {
    /// Full model at ε with the reference time step and 0.01 sampling.
    pub fn full_preset(epsilon: f64, scale: Scale) -> Self {
        let dt = paper_dt(epsilon);
        let (t_final, ensemble) = match scale {
            Scale::Desk => (2_000.0, 4),
            Scale::Paper => (40_000.0, 10),
        };
        Self {
            model: ModelKind::Full,
            coefficients: None,
            raw_coefficients: false,
            epsilon,
            stepper: StepperConfig {
                dt,
                scheme: Default::default(),
                record_stride: stride_for(dt, SAMPLE_INTERVAL),
            },
            t_final,
            ensemble,
            seed: 0,
            m: None,
            m_provenance: MProvenance::UserSupplied,
            e_floor: EFloorPolicy::Clamp,
            record_fast_modes: false,
            fast_energy_level: None,
            stats: StatsRequest::default(),
            out_dir: None,
        }
    }

    /// Reduced model with dt = 1e-5 and the published bath constant.
    pub fn reduced_preset(scale: Scale) -> Self {
        let dt = 1e-5;
        let (t_final, ensemble) = match scale {
            Scale::Desk => (10_000.0, 4),
            Scale::Paper => (100_000.0, 10),
        };
        Self {
            model: ModelKind::Reduced,
            m: Some(PUBLISHED_M),
            epsilon: 1.0,
            stepper: StepperConfig {
                dt,
                scheme: Default::default(),
                record_stride: stride_for(dt, SAMPLE_INTERVAL),
            },
            t_final,
            ensemble,
            ..Self::full_preset(1.0, scale)
        }
    }

    /// Microcanonical fast-bath run at E = n recording every mode.
    pub fn fast_preset() -> Self {
        let dt = 1e-3;
        Self {
            model: ModelKind::Fast,
            stepper: StepperConfig {
                dt,
                scheme: Default::default(),
                record_stride: 1,
            },
            t_final: 100.0,
            ensemble: 1,
            record_fast_modes: true,
            ..Self::full_preset(1.0, Scale::Desk)
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.stepper.check()?;
        if self.ensemble == 0 {
            return Err(Error::Parameter("ensemble size must be >= 1".into()));
        }
        if !(self.t_final >= self.stepper.dt) {
            return Err(Error::Parameter(format!(
                "t_final {} shorter than dt {}",
                self.t_final, self.stepper.dt
            )));
        }
        if let Some(p) = &self.coefficients {
            if !p.exists() {
                return Err(Error::Parameter(format!("coefficient file {} not found", p.display())));
            }
        }
        if self.model == ModelKind::Reduced && self.m.is_none() {
            return Err(Error::Parameter("reduced model needs a bath constant `m`".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Parameter(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn load_coefficients(&self) -> Result<TriadCoefficients> {
        let c = match &self.coefficients {
            Some(p) => TriadCoefficients::from_json_file(p)?,
            None => builtin_paper_model(),
        };
        Ok(if self.raw_coefficients { c } else { c.projected() })
    }

    /// Stream of trajectory `k`: the base seed with stream id `k`.
    pub fn stream(&self, k: usize) -> RngStream {
        RngStream::new(self.seed, k as u64)
    }
}

/// Stationary draw for the full model: x and every y_k ~ N(0, σ²/(2γ)).
pub fn initial_full_state<R: Rng + ?Sized>(gamma: f64, sigma: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let sd = (sigma * sigma / (2.0 * gamma)).sqrt();
    (0..=n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            sd * g
        })
        .collect()
}

/// Stationary draw for the reduced model: x Gaussian, E a sum of n squared
/// Gaussians.
pub fn initial_reduced_state<R: Rng + ?Sized>(gamma: f64, sigma: f64, n: usize, rng: &mut R) -> [f64; 2] {
    let z = initial_full_state(gamma, sigma, n, rng);
    [z[0], fast_energy(&z[1..])]
}

struct FullObserver {
    n: usize,
    modes: bool,
}

impl Observe for FullObserver {
    fn names(&self) -> Vec<String> {
        let mut v = vec!["x".to_string(), "E".to_string()];
        if self.modes {
            v.extend((1..=self.n).map(|k| format!("y{k}")));
        }
        v
    }

    fn observe(&self, z: &[f64], out: &mut Vec<f64>) {
        out.push(z[0]);
        out.push(fast_energy(&z[1..]));
        if self.modes {
            out.extend_from_slice(&z[1..]);
        }
    }
}

struct FastObserver {
    n: usize,
}

// E is conserved on the sphere, so only the modes are recorded.
impl Observe for FastObserver {
    fn names(&self) -> Vec<String> {
        (1..=self.n).map(|k| format!("y{k}")).collect()
    }

    fn observe(&self, z: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(z);
    }
}

struct ReducedObserver;

impl Observe for ReducedObserver {
    fn names(&self) -> Vec<String> {
        vec!["x".into(), "E".into()]
    }

    fn observe(&self, z: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(z);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub steps: u64,
    /// E-floor events (reduced model only).
    pub clamp_events: u64,
    /// `None` for a completed run, the diagnostic otherwise.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryOutcome {
    pub record: RunRecord,
    pub series: Option<TimeSeries>,
}

/// Runs trajectory `k` of the experiment.
pub fn run_trajectory(config: &ExperimentConfig, coeffs: &TriadCoefficients, k: usize) -> Result<TrajectoryOutcome> {
    Ok(run_batch(config, coeffs, &[k])?.pop().expect("one trajectory"))
}

/// Runs the listed trajectories in lockstep. Each one draws its initial
/// state and noise from its own stream, so the outcome of a trajectory does
/// not depend on how trajectories are batched.
pub fn run_batch(config: &ExperimentConfig, coeffs: &TriadCoefficients, indices: &[usize]) -> Result<Vec<TrajectoryOutcome>> {
    let streams: Vec<RngStream> = indices.iter().map(|&k| config.stream(k)).collect();
    let mut rngs: Vec<_> = streams.iter().map(RngStream::rng).collect();
    let seeds: Vec<Option<RngStream>> = streams.iter().copied().map(Some).collect();
    let cfg = &config.stepper;
    let results = match config.model {
        ModelKind::Full => {
            let params = coeffs.params(config.epsilon)?;
            let model = FullModel::new(TriadSystem::from_coefficients(coeffs)?, params)?;
            let inits: Vec<Vec<f64>> = rngs
                .iter_mut()
                .map(|r| initial_full_state(params.gamma, params.sigma, params.n, r))
                .collect();
            let obs = FullObserver {
                n: params.n,
                modes: config.record_fast_modes,
            };
            let mut refs: Vec<_> = rngs.iter_mut().collect();
            integrate_lockstep(&model, &inits, 0.0, cfg, config.t_final, &obs, &mut refs, &seeds)?
        }
        ModelKind::Fast => {
            let model = FastSubsystem::from_yyy(&coeffs.yyy, coeffs.n)?;
            let level = config.fast_energy_level.unwrap_or(coeffs.n as f64);
            let inits = rngs
                .iter_mut()
                .map(|r| sample_uniform_sphere(coeffs.n, level, r))
                .collect::<Result<Vec<_>>>()?;
            let obs = FastObserver { n: coeffs.n };
            let mut refs: Vec<_> = rngs.iter_mut().collect();
            integrate_lockstep(&model, &inits, 0.0, cfg, config.t_final, &obs, &mut refs, &seeds)?
        }
        ModelKind::Reduced => {
            let m = config
                .m
                .ok_or_else(|| Error::Parameter("reduced model needs a bath constant `m`".into()))?;
            let params = ReducedParams::new(coeffs.gamma, coeffs.sigma, coeffs.n, m, config.m_provenance)?;
            let model = ReducedModel::new(params, config.e_floor)?;
            let inits: Vec<Vec<f64>> = rngs
                .iter_mut()
                .map(|r| initial_reduced_state(params.gamma, params.sigma, params.n, r).to_vec())
                .collect();
            let mut refs: Vec<_> = rngs.iter_mut().collect();
            integrate_lockstep(&model, &inits, 0.0, cfg, config.t_final, &ReducedObserver, &mut refs, &seeds)?
        }
    };
    results
        .into_iter()
        .zip(indices.iter().zip(&streams))
        .map(|(result, (&index, stream))| {
            let mut record = RunRecord {
                index,
                seed: stream.seed,
                stream_id: stream.stream_id,
                steps: 0,
                clamp_events: 0,
                aborted: None,
            };
            match result {
                Ok(tr) => {
                    record.steps = tr.steps;
                    record.clamp_events = tr.projection_events;
                    Ok(TrajectoryOutcome {
                        record,
                        series: Some(tr.series),
                    })
                }
                Err(e) if e.is_numerical() => {
                    record.aborted = Some(e.to_string());
                    Ok(TrajectoryOutcome { record, series: None })
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    /// Completed trajectories, in index order.
    pub series: Vec<TimeSeries>,
    pub wall_clock_seconds: f64,
}

impl EnsembleRun {
    pub fn total_clamp_events(&self) -> u64 {
        self.records.iter().map(|r| r.clamp_events).sum()
    }

    pub fn total_steps(&self) -> u64 {
        self.records.iter().map(|r| r.steps).sum()
    }
}

/// Runs all K trajectories on a pool of `jobs` threads. Results are merged
/// by trajectory index, so the output does not depend on `jobs`.
pub fn run_ensemble(config: &ExperimentConfig, jobs: usize) -> Result<EnsembleRun> {
    config.validate()?;
    let coeffs = config.load_coefficients()?;
    coeffs.validate(5e-4)?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    // One lockstep batch per worker, contiguous in trajectory index.
    let indices: Vec<usize> = (0..config.ensemble).collect();
    let per_batch = config.ensemble.div_ceil(jobs.max(1));
    let batches: Vec<Result<Vec<TrajectoryOutcome>>> = pool.install(|| {
        indices
            .par_chunks(per_batch)
            .map(|b| run_batch(config, &coeffs, b))
            .collect()
    });
    let mut records = Vec::with_capacity(config.ensemble);
    let mut series = Vec::new();
    for o in batches.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten() {
        if let Some(s) = o.series {
            series.push(s);
        }
        records.push(o.record);
    }
    let aborted = records.iter().filter(|r| r.aborted.is_some()).count();
    if aborted as f64 > MAX_ABORT_FRACTION * config.ensemble as f64 || series.is_empty() {
        return Err(Error::Ensemble(format!(
            "{aborted} of {} trajectories aborted: {}",
            config.ensemble,
            records
                .iter()
                .filter_map(|r| r.aborted.as_deref())
                .next()
                .unwrap_or("")
        )));
    }
    Ok(EnsembleRun {
        config: config.clone(),
        records,
        series,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableStats {
    pub name: String,
    pub cf: CorrelationCurve,
    /// CT of the ensemble-averaged CF.
    pub ct: CorrelationTime,
    /// CT of each trajectory's own CF.
    pub ct_per_run: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean across runs (block error for one run).
    pub stderr_mean: f64,
    pub stderr_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsBundle {
    pub variables: Vec<VariableStats>,
    pub kurtosis: BTreeMap<String, KurtosisCurve>,
    pub densities: BTreeMap<String, DensityEstimate>,
    /// Skewness of E pooled over runs (when E is recorded).
    pub skewness_e: Option<f64>,
    pub transient_samples: usize,
}

impl StatsBundle {
    pub fn variable(&self, name: &str) -> Option<&VariableStats> {
        self.variables.iter().find(|v| v.name == name)
    }
}

fn cf_lag_for(name: &str, req: &StatsRequest) -> f64 {
    match name {
        "x" => req.cf_max_lag_x,
        "E" => req.cf_max_lag_e,
        _ => req.cf_max_lag_y,
    }
}

/// Per-run moments and their spread: across runs for K > 1, block errors
/// for K = 1.
fn moment_spread(columns: &[Vec<f64>]) -> (f64, f64, f64, f64) {
    let means: Vec<f64> = columns.iter().map(|c| stats::mean(c)).collect();
    let vars: Vec<f64> = columns.iter().map(|c| stats::variance_and_skewness(c).0).collect();
    if columns.len() > 1 {
        let (m, se_m) = stats::mean_and_stderr(&means);
        let (v, se_v) = stats::mean_and_stderr(&vars);
        (m, se_m.unwrap_or(0.0), v, se_v.unwrap_or(0.0))
    } else {
        let c = &columns[0];
        let (m, se_m) = stats::block_mean(c);
        let sq: Vec<f64> = c.iter().map(|v| (v - m).powi(2)).collect();
        let (v, se_v) = stats::block_mean(&sq);
        (m, se_m.unwrap_or(f64::NAN), v, se_v.unwrap_or(f64::NAN))
    }
}

/// Statistics of an ensemble of stationary runs. The transient
/// `max(10/γ, 1% of the run)` is dropped from each run first.
pub fn compute_stats(series: &[TimeSeries], req: &StatsRequest, gamma: f64) -> Result<StatsBundle> {
    let first = series
        .first()
        .ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
    if series.iter().any(|s| s.names != first.names || s.dt_sample != first.dt_sample) {
        return Err(Error::GridMismatch("trajectories differ in columns or sampling".into()));
    }
    let dt = first.dt_sample;
    let skip = stats::transient_samples(first.len(), dt, 1.0 / gamma);
    let trimmed: Vec<TimeSeries> = series.iter().map(|s| s.skip(skip)).collect();

    let mut variables = Vec::new();
    let mut kurtosis = BTreeMap::new();
    let mut densities = BTreeMap::new();
    let mut skewness_e = None;
    for (idx, name) in first.names.iter().enumerate() {
        let columns: Vec<Vec<f64>> = trimmed.iter().map(|s| s.column(idx)).collect();
        let curves = columns
            .iter()
            .map(|c| correlation_function(c, dt, cf_lag_for(name, req)))
            .collect::<Result<Vec<_>>>()?;
        let ct_per_run = curves
            .iter()
            .map(|c| correlation_time(c, req.ct_convention).value)
            .collect();
        let cf = ensemble_curves(&curves)?;
        let ct = correlation_time(&cf, req.ct_convention);
        let (mean, stderr_mean, variance, stderr_variance) = moment_spread(&columns);
        variables.push(VariableStats {
            name: name.clone(),
            cf,
            ct,
            ct_per_run,
            mean,
            variance,
            stderr_mean,
            stderr_variance,
        });

        let (kurt_lag, range) = match name.as_str() {
            "x" => (req.kurt_max_lag_x, req.density_range_x),
            "E" => (req.kurt_max_lag_e, req.density_range_e),
            _ => continue,
        };
        let k = columns
            .iter()
            .map(|c| lagged_kurtosis(c, dt, kurt_lag))
            .collect::<Result<Vec<_>>>()?;
        kurtosis.insert(name.clone(), ensemble_kurtosis(&k)?);
        let pooled: Vec<f64> = columns.concat();
        densities.insert(name.clone(), empirical_density(&pooled, req.density_bins, Some(range))?);
        if name == "E" {
            skewness_e = Some(stats::variance_and_skewness(&pooled).1);
        }
    }
    Ok(StatsBundle {
        variables,
        kurtosis,
        densities,
        skewness_e,
        transient_samples: skip,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub m: Option<f64>,
    pub m_provenance: Option<MProvenance>,
    pub wall_clock_seconds: f64,
    pub runs: Vec<RunRecord>,
    pub clamp_events: u64,
    pub steps: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn for_run(run: &EnsembleRun, outputs: Vec<String>) -> Self {
        let reduced = run.config.model == ModelKind::Reduced;
        Self {
            config: run.config.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            m: if reduced { run.config.m } else { None },
            m_provenance: reduced.then_some(run.config.m_provenance),
            wall_clock_seconds: run.wall_clock_seconds,
            runs: run.records.clone(),
            clamp_events: run.total_clamp_events(),
            steps: run.total_steps(),
            outputs,
        }
    }
}

/// Writes `contents` via a temporary file and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_file(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}

/// Writes the CF / kurtosis / density CSVs and `summary.json` of a bundle.
pub fn write_stats(dir: &Path, bundle: &StatsBundle, extra: serde_json::Value) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut outputs = Vec::new();
    for v in &bundle.variables {
        write_file(dir, &format!("cf_{}.csv", v.name), &v.cf.csv("cf"), &mut outputs)?;
    }
    for (name, k) in &bundle.kurtosis {
        write_file(dir, &format!("kurt_{name}.csv"), &k.csv(), &mut outputs)?;
    }
    for (name, d) in &bundle.densities {
        write_file(dir, &format!("density_{name}.csv"), &d.csv(), &mut outputs)?;
    }
    let ct: BTreeMap<&str, f64> = bundle.variables.iter().map(|v| (v.name.as_str(), v.ct.value)).collect();
    let moments: BTreeMap<&str, serde_json::Value> = bundle
        .variables
        .iter()
        .map(|v| {
            (
                v.name.as_str(),
                serde_json::json!({
                    "mean": v.mean,
                    "stderr_mean": v.stderr_mean,
                    "variance": v.variance,
                    "stderr_variance": v.stderr_variance,
                    "ct_per_run": v.ct_per_run,
                    "ct_decayed": v.ct.decayed,
                }),
            )
        })
        .collect();
    let summary = serde_json::json!({
        "ct": ct,
        "moments": moments,
        "skewness_E": bundle.skewness_e,
        "transient_samples": bundle.transient_samples,
        "run": extra,
    });
    write_file(dir, "summary.json", &serde_json::to_string_pretty(&summary).expect("json"), &mut outputs)?;
    Ok(outputs)
}

/// Runs an experiment and writes trajectories, statistics and the manifest
/// into `dir`.
pub fn simulate_to_dir(config: &ExperimentConfig, jobs: usize, dir: &Path) -> Result<(EnsembleRun, StatsBundle)> {
    let run = run_ensemble(config, jobs)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut outputs = Vec::new();
    for (s, r) in run.series.iter().zip(run.records.iter().filter(|r| r.aborted.is_none())) {
        let name = format!("traj_{:03}.csv", r.index);
        s.write_csv_file(dir.join(&name))?;
        outputs.push(name);
    }
    let gamma = config.load_coefficients()?.gamma;
    let bundle = compute_stats(&run.series, &config.stats, gamma)?;
    let extra = serde_json::json!({
        "model": config.model,
        "epsilon": config.epsilon,
        "ensemble": config.ensemble,
        "clamp_events": run.total_clamp_events(),
        "steps": run.total_steps(),
    });
    outputs.extend(write_stats(dir, &bundle, extra)?);
    let manifest = RunManifest::for_run(&run, outputs);
    write_atomic(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("json").as_bytes(),
    )?;
    Ok((run, bundle))
}

/// Reads `traj_*.csv` from a simulate output directory.
pub fn read_trajectories(dir: &Path) -> Result<Vec<TimeSeries>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("traj_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InsufficientData(format!("no traj_*.csv in {}", dir.display())));
    }
    paths.iter().map(TimeSeries::read_csv_file).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureId {
    Fig1,
    CfxFull,
    CfeFull,
    PdfE,
    CfCompare,
    KurtCompare,
    CtTable,
}

impl FigureId {
    pub const ALL: [FigureId; 7] = [
        FigureId::Fig1,
        FigureId::CfxFull,
        FigureId::CfeFull,
        FigureId::PdfE,
        FigureId::CfCompare,
        FigureId::KurtCompare,
        FigureId::CtTable,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FigureId::Fig1 => "fig1",
            FigureId::CfxFull => "cfx_full",
            FigureId::CfeFull => "cfe_full",
            FigureId::PdfE => "pdf_E",
            FigureId::CfCompare => "cf_compare",
            FigureId::KurtCompare => "kurt_compare",
            FigureId::CtTable => "ct_table",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceOptions {
    pub scale: Scale,
    pub seed: u64,
    pub jobs: usize,
    /// Overrides the preset run lengths (full and reduced alike).
    pub t_final: Option<f64>,
    pub ensemble: Option<usize>,
    /// Overrides the ε values of the sweep.
    pub epsilons: Option<Vec<f64>>,
    pub m: f64,
    /// Overrides the reduced-model time step.
    pub reduced_dt: Option<f64>,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self {
            scale: Scale::Desk,
            seed: 0,
            jobs: 1,
            t_final: None,
            ensemble: None,
            epsilons: None,
            m: PUBLISHED_M,
            reduced_dt: None,
        }
    }
}

impl ReproduceOptions {
    /// ε values of the full-model sweep (all four at paper scale).
    pub fn sweep(&self) -> Vec<f64> {
        self.epsilons.clone().unwrap_or_else(|| match self.scale {
            Scale::Desk => vec![1.0, 0.5],
            Scale::Paper => vec![1.0, 0.5, 0.25, 0.1],
        })
    }

    /// ε values compared against the reduced model.
    pub fn comparison(&self) -> Vec<f64> {
        self.epsilons.clone().unwrap_or_else(|| match self.scale {
            Scale::Desk => vec![0.5],
            Scale::Paper => vec![0.25, 0.1],
        })
    }

    fn full(&self, epsilon: f64, modes: bool) -> ExperimentConfig {
        let mut c = ExperimentConfig::full_preset(epsilon, self.scale);
        c.seed = self.seed;
        c.record_fast_modes = modes;
        if let Some(t) = self.t_final {
            c.t_final = t;
        }
        if let Some(k) = self.ensemble {
            c.ensemble = k;
        }
        c
    }

    fn reduced(&self) -> ExperimentConfig {
        let mut c = ExperimentConfig::reduced_preset(self.scale);
        c.seed = self.seed;
        c.m = Some(self.m);
        if let Some(dt) = self.reduced_dt {
            c.stepper.dt = dt;
            c.stepper.record_stride = stride_for(dt, SAMPLE_INTERVAL);
        }
        if let Some(t) = self.t_final {
            c.t_final = t;
        }
        if let Some(k) = self.ensemble {
            c.ensemble = k;
        }
        c
    }
}

fn eps_tag(eps: f64) -> String {
    format!("eps{eps}")
}

fn run_stats(config: &ExperimentConfig, jobs: usize) -> Result<(EnsembleRun, StatsBundle)> {
    let run = run_ensemble(config, jobs)?;
    let gamma = config.load_coefficients()?.gamma;
    let bundle = compute_stats(&run.series, &config.stats, gamma)?;
    Ok((run, bundle))
}

fn var<'a>(b: &'a StatsBundle, name: &str) -> Result<&'a VariableStats> {
    b.variable(name)
        .ok_or_else(|| Error::InsufficientData(format!("variable {name} not recorded")))
}

/// Produces the CSV bundle behind one figure or table in `dir`, plus a
/// `manifest.json` listing every underlying run.
pub fn reproduce(figure: FigureId, opts: &ReproduceOptions, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut outputs = Vec::new();
    let mut manifests = Vec::new();
    let emit = |name: String, text: String, outputs: &mut Vec<String>| write_file(dir, &name, &text, outputs);

    match figure {
        FigureId::Fig1 => {
            let cfg = opts.full(1.0, true);
            let (run, b) = run_stats(&cfg, opts.jobs)?;
            for name in ["x", "E", "y2", "y7"] {
                emit(format!("cf_{name}.csv"), var(&b, name)?.cf.csv("cf"), &mut outputs)?;
            }
            manifests.push(RunManifest::for_run(&run, outputs.clone()));
        }
        FigureId::CfxFull | FigureId::CfeFull => {
            let name = if figure == FigureId::CfxFull { "x" } else { "E" };
            for eps in opts.sweep() {
                let (run, b) = run_stats(&opts.full(eps, false), opts.jobs)?;
                let file = format!("cf_{name}_{}.csv", eps_tag(eps));
                emit(file.clone(), var(&b, name)?.cf.csv("cf"), &mut outputs)?;
                manifests.push(RunManifest::for_run(&run, vec![file]));
            }
        }
        FigureId::PdfE | FigureId::CfCompare | FigureId::KurtCompare => {
            let mut labelled = Vec::new();
            for eps in opts.comparison() {
                let (run, b) = run_stats(&opts.full(eps, false), opts.jobs)?;
                manifests.push(RunManifest::for_run(&run, vec![]));
                labelled.push((eps_tag(eps), b));
            }
            let (run, b) = run_stats(&opts.reduced(), opts.jobs)?;
            manifests.push(RunManifest::for_run(&run, vec![]));
            labelled.push(("reduced".to_string(), b));
            for (label, b) in &labelled {
                match figure {
                    FigureId::PdfE => {
                        let d = b
                            .densities
                            .get("E")
                            .ok_or_else(|| Error::InsufficientData("E density missing".into()))?;
                        emit(format!("density_E_{label}.csv"), d.csv(), &mut outputs)?;
                    }
                    FigureId::CfCompare => {
                        for name in ["x", "E"] {
                            emit(format!("cf_{name}_{label}.csv"), var(b, name)?.cf.csv("cf"), &mut outputs)?;
                        }
                    }
                    _ => {
                        for name in ["x", "E"] {
                            let k = b
                                .kurtosis
                                .get(name)
                                .ok_or_else(|| Error::InsufficientData(format!("{name} kurtosis missing")))?;
                            emit(format!("kurt_{name}_{label}.csv"), k.csv(), &mut outputs)?;
                        }
                    }
                }
            }
            if figure == FigureId::PdfE {
                let c = builtin_paper_model();
                let rho = stats::analytic_density_e(c.gamma, c.sigma, c.n)?;
                let centers = labelled[0].1.densities["E"].centers();
                let mut text = String::from("bin_center,density\n");
                for s in centers {
                    text.push_str(&format!(
                        "{},{}\n",
                        crate::integrate::fmt_f64(s),
                        crate::integrate::fmt_f64(rho.pdf(s))
                    ));
                }
                emit("density_E_analytic.csv".into(), text, &mut outputs)?;
            }
        }
        FigureId::CtTable => {
            let sweep = opts.sweep();
            let mut columns = Vec::new();
            for &eps in &sweep {
                let (run, b) = run_stats(&opts.full(eps, true), opts.jobs)?;
                manifests.push(RunManifest::for_run(&run, vec![]));
                columns.push(b);
            }
            let names: Vec<String> = columns[0].variables.iter().map(|v| v.name.clone()).collect();
            let mut text = String::from("variable");
            for eps in &sweep {
                text.push_str(&format!(",ct_{}", eps_tag(*eps)));
            }
            text.push('\n');
            for name in &names {
                text.push_str(name);
                for b in &columns {
                    text.push_str(&format!(",{}", crate::integrate::fmt_f64(var(b, name)?.ct.value)));
                }
                text.push('\n');
            }
            emit("ct_table.csv".into(), text, &mut outputs)?;
        }
    }
    let manifest = serde_json::json!({
        "figure": figure.name(),
        "options": opts,
        "code_version": env!("CARGO_PKG_VERSION"),
        "runs": manifests,
        "outputs": outputs,
    });
    write_atomic(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("json").as_bytes(),
    )?;
    Ok(outputs)
}
