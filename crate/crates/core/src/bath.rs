//! Microcanonical statistics of the deterministic fast sub-system.
//!
//! The bath constant is the area under the two-point function of the
//! x-forcing `f(y) = Σ a_xyy y_j y_k` along a single long run on the sphere
//! `Σ y² = E`:
//!
//! ```text
//! C(τ) = ⟨f(y(t)) f(y(t + τ))⟩_t,    Q(E) = ∫₀^τmax C(τ) dτ,
//! M    = Q(E) · (n / E)^{3/2}
//! ```
//!
//! The last line uses the invariance of the bath under `y → s·y, t → t/s`,
//! so any energy level can be used and compensated back to `E = n`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{RngStream, Scheme, Stepper, TimeSeries};
use crate::model::{fast_energy, FastSubsystem, TriadSystem, XyyTriad, YyyTriad};
use crate::stats::{mean_and_stderr, trapezoid};

/// Relative energy drift at which a fast run is declared inaccurate.
pub const ENERGY_DRIFT_TOLERANCE: f64 = 1e-8;
/// Relative drift above which the state is pulled back onto the sphere.
pub const RENORMALIZE_THRESHOLD: f64 = 1e-10;

/// Uniform draw on the sphere `Σ y² = e_target` via a normalized Gaussian.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(n: usize, e_target: f64, rng: &mut R) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Parameter(format!("n must be >= 2, got {n}")));
    }
    if !(e_target > 0.0 && e_target.is_finite()) {
        return Err(Error::Parameter(format!("energy must be > 0, got {e_target}")));
    }
    loop {
        let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm2 = fast_energy(&g);
        if norm2 > 0.0 {
            let scale = (e_target / norm2).sqrt();
            return Ok(g.into_iter().map(|v| v * scale).collect());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastRunOptions {
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
    /// Pull the state back to the initial energy when the drift exceeds
    /// [`RENORMALIZE_THRESHOLD`].
    pub renormalize: bool,
    pub drift_tolerance: f64,
}

impl Default for FastRunOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 100.0,
            record_stride: 1,
            renormalize: true,
            drift_tolerance: ENERGY_DRIFT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FastRun {
    pub series: TimeSeries,
    /// Largest relative energy deviation seen before any renormalization.
    pub max_rel_drift: f64,
    pub renormalizations: u64,
}

struct DriveSummary {
    max_rel_drift: f64,
    renormalizations: u64,
}

/// Steps the fast sub-system, handing every `stride`-th state (the initial
/// one included) to `visit`.
fn drive_fast(
    bath: &FastSubsystem,
    init: &[f64],
    dt: f64,
    steps: u64,
    stride: u64,
    renormalize: bool,
    drift_tolerance: f64,
    mut visit: impl FnMut(&[f64]),
) -> Result<DriveSummary> {
    let e0 = fast_energy(init);
    let mut y = init.to_vec();
    let mut stepper = Stepper::new(bath, Scheme::Rk5EulerNoise);
    let mut max_rel_drift = 0.0f64;
    let mut renormalizations = 0;
    visit(&y);
    for step in 0..steps {
        let t = step as f64 * dt;
        stepper.drift_step(bath, t, &mut y, dt);
        let e = fast_energy(&y);
        if !e.is_finite() {
            return Err(Error::NonFinite {
                t: t + dt,
                state: y,
            });
        }
        if e0 > 0.0 {
            let drift = (e - e0).abs() / e0;
            max_rel_drift = max_rel_drift.max(drift);
            if drift > drift_tolerance {
                return Err(Error::EnergyDrift {
                    t: t + dt,
                    drift,
                    tolerance: drift_tolerance,
                });
            }
            if renormalize && drift > RENORMALIZE_THRESHOLD {
                let s = (e0 / e).sqrt();
                y.iter_mut().for_each(|v| *v *= s);
                renormalizations += 1;
            }
        }
        if (step + 1) % stride == 0 {
            visit(&y);
        }
    }
    Ok(DriveSummary {
        max_rel_drift,
        renormalizations,
    })
}

/// Deterministic run of `dy/dt = B(y, y)`, recording `y_1 … y_n`.
pub fn run_fast_subsystem(
    yyy: &[YyyTriad],
    n: usize,
    init: &[f64],
    opts: &FastRunOptions,
) -> Result<FastRun> {
    if init.len() != n {
        return Err(Error::Parameter(format!(
            "initial state has length {}, expected {n}",
            init.len()
        )));
    }
    let bath = FastSubsystem::from_yyy(yyy, n)?;
    let cfg = crate::integrate::StepperConfig::rk5(opts.dt, opts.record_stride)?;
    let steps = cfg.steps_for(opts.t_final)?;
    let names = (1..=n).map(|k| format!("y{k}")).collect();
    let mut series = TimeSeries::new(names, 0.0, opts.dt * opts.record_stride as f64, None);
    let summary = drive_fast(
        &bath,
        init,
        opts.dt,
        steps,
        opts.record_stride as u64,
        opts.renormalize,
        opts.drift_tolerance,
        |y| series.push(y),
    )?;
    Ok(FastRun {
        series,
        max_rel_drift: summary.max_rel_drift,
        renormalizations: summary.renormalizations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedMoment {
    /// 1-based mode indices, `j < k`.
    pub j: usize,
    pub k: usize,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub tolerance: f64,
    pub n_blocks: usize,
    pub first_moments: Vec<MomentEstimate>,
    pub mixed_moments: Vec<MixedMoment>,
    /// Time averages of `y_j²` (not part of the test; useful to compare with
    /// the sphere value E/n).
    pub second_moments: Vec<f64>,
    pub max_abs_first_moment: f64,
    pub max_abs_mixed_moment: f64,
    pub pass: bool,
}

/// Per-block sums of `y_j` and `y_j y_k` for block standard errors.
#[derive(Debug, Clone)]
struct BlockMoments {
    n: usize,
    block_len: usize,
    n_blocks: usize,
    seen: usize,
    // [block][j] and [block][j*n + k]
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl BlockMoments {
    fn new(n: usize, total: usize, n_blocks: usize) -> Self {
        let block_len = total / n_blocks;
        Self {
            n,
            block_len,
            n_blocks,
            seen: 0,
            first: vec![vec![0.0; n]; n_blocks],
            second: vec![vec![0.0; n * n]; n_blocks],
        }
    }

    /// Appends the blocks of an equally long run.
    fn append(&mut self, other: BlockMoments) {
        debug_assert_eq!(self.block_len, other.block_len);
        self.n_blocks += other.n_blocks;
        self.first.extend(other.first);
        self.second.extend(other.second);
    }

    fn push(&mut self, y: &[f64]) {
        let b = self.seen / self.block_len.max(1);
        self.seen += 1;
        if b >= self.n_blocks {
            return;
        }
        let n = self.n;
        let first = &mut self.first[b];
        let second = &mut self.second[b];
        for j in 0..n {
            first[j] += y[j];
            for k in j..n {
                second[j * n + k] += y[j] * y[k];
            }
        }
    }

    fn report(&self, tol: f64) -> CompatibilityReport {
        let n = self.n;
        let len = self.block_len as f64;
        let est = |f: &dyn Fn(usize) -> f64| {
            let means: Vec<f64> = (0..self.n_blocks).map(|b| f(b) / len).collect();
            let (value, stderr) = mean_and_stderr(&means);
            MomentEstimate {
                value,
                stderr: stderr.unwrap_or(0.0),
            }
        };
        let consistent = |m: &MomentEstimate| m.value.abs() <= tol.max(4.0 * m.stderr);
        let first_moments: Vec<_> = (0..n).map(|j| est(&|b| self.first[b][j])).collect();
        let mut mixed_moments = Vec::new();
        for j in 0..n {
            for k in j + 1..n {
                let m = est(&|b| self.second[b][j * n + k]);
                mixed_moments.push(MixedMoment {
                    j: j + 1,
                    k: k + 1,
                    value: m.value,
                    stderr: m.stderr,
                });
            }
        }
        let second_moments = (0..n).map(|j| est(&|b| self.second[b][j * n + j]).value).collect();
        let pass = first_moments.iter().all(consistent)
            && mixed_moments.iter().all(|m| {
                consistent(&MomentEstimate {
                    value: m.value,
                    stderr: m.stderr,
                })
            });
        CompatibilityReport {
            tolerance: tol,
            n_blocks: self.n_blocks,
            max_abs_first_moment: first_moments.iter().map(|m| m.value.abs()).fold(0.0, f64::max),
            max_abs_mixed_moment: mixed_moments.iter().map(|m| m.value.abs()).fold(0.0, f64::max),
            first_moments,
            mixed_moments,
            second_moments,
            pass,
        }
    }
}

const COMPAT_BLOCKS: usize = 20;
const MIN_BLOCK_LEN: usize = 10;

/// Tests `⟨y_j⟩ = 0` and `⟨y_j y_k⟩ = 0 (j ≠ k)` on a fast run. Each average
/// must lie within `max(tol, 4·stderr)` of zero, with standard errors from
/// 20 non-overlapping blocks.
pub fn check_compatibility(run: &TimeSeries, tol: f64) -> Result<CompatibilityReport> {
    if run.len() < COMPAT_BLOCKS * MIN_BLOCK_LEN {
        return Err(Error::InsufficientData(format!(
            "{} samples; at least {} needed for {COMPAT_BLOCKS} blocks",
            run.len(),
            COMPAT_BLOCKS * MIN_BLOCK_LEN
        )));
    }
    let mut acc = BlockMoments::new(run.width(), run.len(), COMPAT_BLOCKS);
    for row in run.rows() {
        acc.push(row);
    }
    Ok(acc.report(tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathOptions {
    /// Energy shell of the run; `None` means `E = n`.
    pub e_level: Option<f64>,
    pub dt: f64,
    pub t_final: f64,
    /// Discarded before averaging.
    pub burn_in: f64,
    /// Spacing of time origins (and of the τ grid) in steps.
    pub sample_stride: usize,
    /// Hard cap on the integration window.
    pub max_tau: f64,
    /// Integrate to a fixed τ instead of detecting the decay of `C(τ)`.
    #[serde(default)]
    pub fixed_tau_max: Option<f64>,
    /// `C(τ)` counts as decayed once `|C| < cutoff_fraction · |C(0)|`...
    pub cutoff_fraction: f64,
    /// ...for this many consecutive τ samples.
    pub cutoff_window: usize,
    pub n_blocks: usize,
    pub compatibility_tol: f64,
    /// Independent trajectories (streams `stream_id..stream_id + n_runs`),
    /// each of length `t_final`, whose lag moments are pooled.
    pub n_runs: usize,
    pub seed: u64,
    pub stream_id: u64,
}

impl Default for BathOptions {
    fn default() -> Self {
        Self {
            e_level: None,
            dt: 1e-3,
            t_final: 10_000.0,
            burn_in: 10.0,
            sample_stride: 10,
            max_tau: 20.0,
            fixed_tau_max: None,
            cutoff_fraction: 0.005,
            cutoff_window: 50,
            n_blocks: 20,
            compatibility_tol: 0.02,
            n_runs: 1,
            seed: 0,
            stream_id: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathStatistics {
    /// Bath constant on the `E = n` shell.
    pub m: f64,
    /// Block standard error of `m`.
    pub stderr_m: f64,
    /// Uncompensated area on the simulated shell.
    pub q: f64,
    pub stderr_q: f64,
    pub e_level: f64,
    pub n: usize,
    pub tau_max: f64,
    /// Spacing of the τ grid of `c_curve`.
    pub dtau: f64,
    pub c_curve: Vec<f64>,
    /// Whether `C(τ)` decayed below the cutoff before `max_tau`.
    pub decayed: bool,
    /// Area beyond `tau_max` extrapolated with the curve's own decay time.
    pub tail_estimate: f64,
    pub compatibility: CompatibilityReport,
    pub max_rel_drift: f64,
    pub renormalizations: u64,
    pub warnings: Vec<String>,
}

impl BathStatistics {
    pub fn tau_grid(&self) -> Vec<f64> {
        (0..self.c_curve.len()).map(|i| i as f64 * self.dtau).collect()
    }

    pub fn c0(&self) -> f64 {
        self.c_curve.first().copied().unwrap_or(0.0)
    }

    pub fn first_moments(&self) -> Vec<f64> {
        self.compatibility.first_moments.iter().map(|m| m.value).collect()
    }

    /// Summary document with the fields of the `bath-stats` JSON output.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "M": self.m,
            "E_level": self.e_level,
            "tau_max": self.tau_max,
            "first_moments": self.first_moments(),
            "max_abs_mixed_moment": self.compatibility.max_abs_mixed_moment,
            "stderr_M": self.stderr_m,
            "Q": self.q,
            "stderr_Q": self.stderr_q,
            "C0": self.c0(),
            "decayed": self.decayed,
            "tail_estimate": self.tail_estimate,
            "compatibility_pass": self.compatibility.pass,
            "max_rel_energy_drift": self.max_rel_drift,
            "warnings": self.warnings,
        })
    }

    /// `tau,C_tau` rows, full precision.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("tau,C_tau\n");
        for (i, c) in self.c_curve.iter().enumerate() {
            out.push_str(&format!(
                "{},{}\n",
                crate::integrate::fmt_f64(i as f64 * self.dtau),
                crate::integrate::fmt_f64(*c)
            ));
        }
        out
    }
}

/// Uncentred lag product `(1/(N−l)) Σ f_i f_{i+l}` pooled over runs.
fn lag_moment(runs: &[Vec<f64>], l: usize) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for f in runs.iter().filter(|f| f.len() > l) {
        let m = f.len() - l;
        sum += f[..m].iter().zip(&f[l..]).map(|(a, b)| a * b).sum::<f64>();
        count += m;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Extends `C(τ)` lag by lag until it stays below the cutoff for a full
/// window or the cap is reached. Returns the curve and the cutoff index.
fn decaying_curve(runs: &[Vec<f64>], max_lag: usize, fraction: f64, window: usize) -> (Vec<f64>, Option<usize>) {
    let longest = runs.iter().map(Vec::len).max().unwrap_or(0);
    let mut curve = Vec::new();
    let mut below_since: Option<usize> = None;
    for l in 0..=max_lag.min(longest.saturating_sub(1)) {
        let c = lag_moment(runs, l);
        curve.push(c);
        let threshold = fraction * curve[0].abs();
        if c.abs() < threshold {
            let start = *below_since.get_or_insert(l);
            if l + 1 - start >= window {
                return (curve, Some(start));
            }
        } else {
            below_since = None;
        }
    }
    (curve, None)
}

struct BathRun {
    forcing: Vec<f64>,
    moments: BlockMoments,
    max_rel_drift: f64,
    renormalizations: u64,
}

/// One microcanonical run: burn-in, then x-forcing and state samples every
/// `sample_stride` steps.
fn bath_run(sys: &TriadSystem, bath: &FastSubsystem, opts: &BathOptions, e_level: f64, stream_id: u64) -> Result<BathRun> {
    let n = sys.n();
    let cfg = crate::integrate::StepperConfig::rk5(opts.dt, opts.sample_stride)?;
    let burn_steps = if opts.burn_in > 0.0 { cfg.steps_for(opts.burn_in)? } else { 0 };
    let steps = cfg.steps_for(opts.t_final)?;
    let stride = opts.sample_stride as u64;
    let mut rng = RngStream::new(opts.seed, stream_id).rng();
    let mut init = sample_uniform_sphere(n, e_level, &mut rng)?;
    let mut renormalizations = 0;
    let mut max_rel_drift = 0.0f64;
    if burn_steps > 0 {
        let mut last = init.clone();
        let s = drive_fast(bath, &init, opts.dt, burn_steps, burn_steps, true, ENERGY_DRIFT_TOLERANCE, |y| {
            last.copy_from_slice(y)
        })?;
        renormalizations += s.renormalizations;
        max_rel_drift = max_rel_drift.max(s.max_rel_drift);
        init = last;
    }
    let samples = (steps / stride + 1) as usize;
    let mut forcing = Vec::with_capacity(samples);
    let mut moments = BlockMoments::new(n, samples, COMPAT_BLOCKS);
    let s = drive_fast(bath, &init, opts.dt, steps, stride, true, ENERGY_DRIFT_TOLERANCE, |y| {
        forcing.push(sys.x_forcing(y));
        moments.push(y);
    })?;
    Ok(BathRun {
        forcing,
        moments,
        max_rel_drift: max_rel_drift.max(s.max_rel_drift),
        renormalizations: renormalizations + s.renormalizations,
    })
}

/// Estimates the bath constant from `n_runs` microcanonical runs.
pub fn estimate_m(
    xyy: &[XyyTriad],
    yyy: &[YyyTriad],
    n: usize,
    opts: &BathOptions,
) -> Result<BathStatistics> {
    let sys = TriadSystem::new(xyy, yyy, n)?;
    let e_level = opts.e_level.unwrap_or(n as f64);
    if !(e_level > 0.0) {
        return Err(Error::Parameter(format!("energy level must be > 0, got {e_level}")));
    }
    if opts.sample_stride == 0 || opts.n_blocks < 2 {
        return Err(Error::Parameter("sample_stride >= 1 and n_blocks >= 2 required".into()));
    }
    if opts.n_runs == 0 {
        return Err(Error::Parameter("n_runs must be >= 1".into()));
    }
    let dtau = opts.dt * opts.sample_stride as f64;
    let bath = FastSubsystem::new(TriadSystem::new(&[], yyy, n)?);
    let runs: Vec<BathRun> = (0..opts.n_runs as u64)
        .into_par_iter()
        .map(|r| bath_run(&sys, &bath, opts, e_level, opts.stream_id + r))
        .collect::<Result<_>>()?;
    let renormalizations = runs.iter().map(|r| r.renormalizations).sum();
    let max_rel_drift = runs.iter().map(|r| r.max_rel_drift).fold(0.0, f64::max);
    let mut forcing = Vec::with_capacity(runs.len());
    let mut moments: Option<BlockMoments> = None;
    for r in runs {
        forcing.push(r.forcing);
        match moments.as_mut() {
            Some(m) => m.append(r.moments),
            None => moments = Some(r.moments),
        }
    }
    let compatibility = moments.expect("n_runs >= 1").report(opts.compatibility_tol);

    let compensation = (n as f64 / e_level).powf(1.5);
    let mut warnings = Vec::new();
    if !compatibility.pass {
        warnings.push(format!(
            "compatibility conditions not met (max |<y_j>| = {:.3e}, max |<y_j y_k>| = {:.3e})",
            compatibility.max_abs_first_moment, compatibility.max_abs_mixed_moment
        ));
    }

    if !sys.has_xyy() {
        return Ok(BathStatistics {
            m: 0.0,
            stderr_m: 0.0,
            q: 0.0,
            stderr_q: 0.0,
            e_level,
            n,
            tau_max: 0.0,
            dtau,
            c_curve: vec![0.0],
            decayed: true,
            tail_estimate: 0.0,
            compatibility,
            max_rel_drift,
            renormalizations,
            warnings,
        });
    }

    let max_lag = (opts.max_tau / dtau).round() as usize;
    let shortest = forcing.iter().map(Vec::len).min().unwrap_or(0);
    if shortest < 5 * max_lag.max(1) {
        return Err(Error::InsufficientData(format!(
            "{shortest} samples per run cannot resolve lags up to {max_lag} (need 5x)"
        )));
    }
    let (curve, decayed, cut) = match opts.fixed_tau_max {
        Some(tau) => {
            let lags = ((tau / dtau).round() as usize).min(max_lag);
            let curve: Vec<f64> = (0..=lags).map(|l| lag_moment(&forcing, l)).collect();
            (curve, true, lags)
        }
        None => {
            let (curve, cutoff) = decaying_curve(&forcing, max_lag, opts.cutoff_fraction, opts.cutoff_window);
            let cut = cutoff.unwrap_or(curve.len() - 1);
            (curve, cutoff.is_some(), cut)
        }
    };
    let q = trapezoid(&curve[..=cut], dtau);
    let c0 = curve[0];
    let tail_estimate = if c0 != 0.0 { curve[cut] * q / c0 } else { 0.0 };
    if !decayed {
        warnings.push(format!(
            "C(tau) did not decay below {} C(0) by tau = {}; tail estimate {:.3e}",
            opts.cutoff_fraction, opts.max_tau, tail_estimate
        ));
    }

    // Block estimates of the same truncated area, `n_blocks` per run.
    let block_len = shortest / opts.n_blocks;
    if block_len < 2 * (cut + 1) {
        warnings.push(format!(
            "blocks of {block_len} samples are short relative to the integration window ({} samples)",
            cut + 1
        ));
    }
    let block_q: Vec<f64> = forcing
        .iter()
        .flat_map(|f| f.chunks_exact(block_len.max(1)).take(opts.n_blocks))
        .map(|b| {
            let one = [b.to_vec()];
            let c: Vec<f64> = (0..=cut).map(|l| lag_moment(&one, l)).collect();
            trapezoid(&c, dtau)
        })
        .collect();
    let stderr_q = mean_and_stderr(&block_q).1.unwrap_or(0.0);

    let m = q * compensation;
    if m < 0.0 {
        warnings.push(format!(
            "negative bath constant {m:.4}: insufficient averaging or non-ergodic bath"
        ));
    }
    Ok(BathStatistics {
        m,
        stderr_m: stderr_q * compensation,
        q,
        stderr_q,
        e_level,
        n,
        tau_max: cut as f64 * dtau,
        dtau,
        c_curve: curve,
        decayed,
        tail_estimate,
        compatibility,
        max_rel_drift,
        renormalizations,
        warnings,
    })
}

/// Static moment `⟨f(y)²⟩` under the uniform measure on the sphere `Σy² = E`,
/// by direct sampling. Independent check of `C(0)`.
pub fn static_moment_sphere<R: Rng + ?Sized>(
    xyy: &[XyyTriad],
    n: usize,
    e_level: f64,
    samples: usize,
    rng: &mut R,
) -> Result<MomentEstimate> {
    let sys = TriadSystem::new(xyy, &[], n)?;
    if samples < 2 {
        return Err(Error::Parameter("at least two samples required".into()));
    }
    let vals: Vec<f64> = (0..samples)
        .map(|_| sample_uniform_sphere(n, e_level, rng).map(|y| sys.x_forcing(&y).powi(2)))
        .collect::<Result<_>>()?;
    let (value, stderr) = mean_and_stderr(&vals);
    Ok(MomentEstimate {
        value,
        stderr: stderr.unwrap_or(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescalingLevel {
    pub e_level: f64,
    pub q: f64,
    pub stderr_q: f64,
    /// `Q(E)·(n/E)^{3/2}`, comparable across levels.
    pub m: f64,
    pub stderr_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescalingPair {
    pub e_low: f64,
    pub e_high: f64,
    pub raw_ratio: f64,
    pub expected_ratio: f64,
    /// |ΔM| in units of the combined standard error.
    pub z_score: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescalingReport {
    pub levels: Vec<RescalingLevel>,
    pub pairs: Vec<RescalingPair>,
    /// Pairs agree when |ΔM| ≤ `sigmas` combined standard errors.
    pub sigmas: f64,
    pub pass: bool,
}

/// Estimates the compensated bath constant on each shell in `e_levels` and
/// checks pairwise agreement within two combined standard errors. The first
/// level sets the integration window; the others integrate over the same
/// window mapped by the rescaling law, `τ_max(E) = τ_max · √(n/E)`, so all
/// levels truncate the same part of the curve.
pub fn check_rescaling(
    xyy: &[XyyTriad],
    yyy: &[YyyTriad],
    n: usize,
    e_levels: &[f64],
    opts: &BathOptions,
) -> Result<RescalingReport> {
    if e_levels.len() < 2 {
        return Err(Error::Precondition(format!(
            "rescaling check needs at least two energy levels, got {}",
            e_levels.len()
        )));
    }
    let reference = estimate_m(
        xyy,
        yyy,
        n,
        &BathOptions {
            e_level: Some(e_levels[0]),
            ..*opts
        },
    )?;
    rescaling_against(&reference, xyy, yyy, n, &e_levels[1..], opts)
}

/// [`check_rescaling`] with the first level already estimated.
pub fn rescaling_against(
    reference: &BathStatistics,
    xyy: &[XyyTriad],
    yyy: &[YyyTriad],
    n: usize,
    other_levels: &[f64],
    opts: &BathOptions,
) -> Result<RescalingReport> {
    if other_levels.is_empty() {
        return Err(Error::Precondition("rescaling check needs at least two energy levels, got 1".into()));
    }
    let level = |s: &BathStatistics| RescalingLevel {
        e_level: s.e_level,
        q: s.q,
        stderr_q: s.stderr_q,
        m: s.m,
        stderr_m: s.stderr_m,
    };
    let mut levels = vec![level(reference)];
    for (i, &e) in other_levels.iter().enumerate() {
        let o = BathOptions {
            e_level: Some(e),
            fixed_tau_max: Some(reference.tau_max * (reference.e_level / e).sqrt()),
            stream_id: opts.stream_id + ((i + 1) * opts.n_runs) as u64,
            ..*opts
        };
        levels.push(level(&estimate_m(xyy, yyy, n, &o)?));
    }
    let sigmas = 2.0;
    let mut pairs = Vec::new();
    for a in 0..levels.len() {
        for b in a + 1..levels.len() {
            let (lo, hi) = (&levels[a], &levels[b]);
            let se = (lo.stderr_m.powi(2) + hi.stderr_m.powi(2)).sqrt();
            let diff = (lo.m - hi.m).abs();
            let z_score = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            pairs.push(RescalingPair {
                e_low: lo.e_level,
                e_high: hi.e_level,
                raw_ratio: if lo.q != 0.0 { hi.q / lo.q } else { f64::NAN },
                expected_ratio: (hi.e_level / lo.e_level).powf(1.5),
                z_score,
                pass: z_score <= sigmas,
            });
        }
    }
    let pass = pairs.iter().all(|p| p.pass);
    Ok(RescalingReport {
        levels,
        pairs,
        sigmas,
        pass,
    })
}
