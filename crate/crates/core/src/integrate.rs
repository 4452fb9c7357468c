//! Fixed-step time integration: explicit Runge–Kutta for the drift, composed
//! with an Euler increment for additive/multiplicative noise.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Any |component| above this aborts a trajectory.
pub const BLOW_UP_BOUND: f64 = 1e12;

/// A (possibly deterministic) SDE `dz = f(t, z) dt + G(z) dW` on a flat state.
pub trait SdeModel {
    fn dim(&self) -> usize;

    /// Number of independent Wiener processes (columns of G).
    fn noise_dim(&self) -> usize;

    fn drift(&self, t: f64, z: &[f64], dz: &mut [f64]);

    /// Writes G(z) row-major into `g` (`dim × noise_dim`).
    fn diffusion(&self, z: &[f64], g: &mut [f64]);

    /// Projection applied after each full step; returns true when it changed
    /// the state.
    fn post_step(&self, _z: &mut [f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Dormand–Prince fifth-order drift step, then Euler noise.
    #[default]
    Rk5EulerNoise,
    /// Explicit midpoint drift step, then Euler noise.
    Rk2EulerNoise,
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_stride() -> usize {
    1
}

impl StepperConfig {
    pub fn new(dt: f64, scheme: Scheme, record_stride: usize) -> Result<Self> {
        let c = Self {
            dt,
            scheme,
            record_stride,
        };
        c.check()?;
        Ok(c)
    }

    pub fn rk5(dt: f64, record_stride: usize) -> Result<Self> {
        Self::new(dt, Scheme::Rk5EulerNoise, record_stride)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.record_stride == 0 {
            return Err(Error::Parameter("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of steps covering `t_final`, i.e. floor(T/dt).
    pub fn steps_for(&self, t_final: f64) -> Result<u64> {
        self.check()?;
        if !(t_final >= self.dt) {
            return Err(Error::Parameter(format!(
                "duration {t_final} shorter than dt {}",
                self.dt
            )));
        }
        // Guard the floor against T/dt landing just below an integer.
        Ok((t_final / self.dt * (1.0 + 1e-12)).floor() as u64)
    }
}

/// Seed provenance of one trajectory. Identical pairs reproduce identical
/// draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

// Dormand–Prince 5(4): nodes, stage matrix and fifth-order weights.
const DP_C: [f64; 6] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0];
const DP_A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
];
const DP_B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];

/// Reusable work buffers for stepping one model.
#[derive(Debug, Clone)]
pub struct Stepper {
    scheme: Scheme,
    dim: usize,
    noise_dim: usize,
    // stage derivatives, stage-major: k[s * dim + i]
    k: Vec<f64>,
    tmp: Vec<f64>,
    pre: Vec<f64>,
    g: Vec<f64>,
    xi: Vec<f64>,
    // dt · DP_A for the last dt seen
    da: [[f64; 5]; 6],
    da_dt: f64,
}

impl Stepper {
    pub fn new<M: SdeModel + ?Sized>(model: &M, scheme: Scheme) -> Self {
        let dim = model.dim();
        let noise_dim = model.noise_dim();
        Self {
            scheme,
            dim,
            noise_dim,
            k: vec![0.0; 6 * dim],
            tmp: vec![0.0; dim],
            pre: vec![0.0; dim],
            g: vec![0.0; dim * noise_dim],
            xi: vec![0.0; noise_dim],
            da: [[0.0; 5]; 6],
            da_dt: f64::NAN,
        }
    }

    /// Deterministic part of one step, in place.
    pub fn drift_step<M: SdeModel + ?Sized>(&mut self, model: &M, t: f64, z: &mut [f64], dt: f64) {
        let dim = self.dim;
        debug_assert_eq!(z.len(), dim);
        match self.scheme {
            Scheme::Rk5EulerNoise => {
                if self.da_dt != dt {
                    for (row, a) in self.da.iter_mut().zip(DP_A) {
                        for (d, a) in row.iter_mut().zip(a) {
                            *d = dt * a;
                        }
                    }
                    self.da_dt = dt;
                }
                model.drift(t, z, &mut self.k[..dim]);
                for s in 1..6 {
                    let (done, rest) = self.k.split_at_mut(s * dim);
                    let da = &self.da[s][..s];
                    for (i, v) in self.tmp.iter_mut().enumerate() {
                        let mut acc = z[i];
                        for (r, a) in da.iter().enumerate() {
                            acc += a * done[r * dim + i];
                        }
                        *v = acc;
                    }
                    model.drift(t + DP_C[s] * dt, &self.tmp, &mut rest[..dim]);
                }
                for (i, v) in z.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (s, b) in DP_B.iter().enumerate() {
                        acc += b * self.k[s * dim + i];
                    }
                    *v += dt * acc;
                }
            }
            Scheme::Rk2EulerNoise => {
                let (k0, k1) = self.k.split_at_mut(dim);
                model.drift(t, z, k0);
                for i in 0..dim {
                    self.tmp[i] = z[i] + 0.5 * dt * k0[i];
                }
                model.drift(t + 0.5 * dt, &self.tmp, &mut k1[..dim]);
                for (v, kv) in z.iter_mut().zip(&k1[..dim]) {
                    *v += dt * kv;
                }
            }
            Scheme::EulerMaruyama => {
                let k0 = &mut self.k[..dim];
                model.drift(t, z, k0);
                for (v, kv) in z.iter_mut().zip(k0.iter()) {
                    *v += dt * kv;
                }
            }
        }
    }

    /// One split step: drift step, then `G(z_pre)·√dt·ξ`, then the model's
    /// post-step projection. Returns whether the projection fired.
    pub fn step<M: SdeModel + ?Sized, R: rand::Rng + ?Sized>(
        &mut self,
        model: &M,
        t: f64,
        z: &mut [f64],
        dt: f64,
        rng: &mut R,
    ) -> Result<bool> {
        if self.noise_dim > 0 {
            self.pre.copy_from_slice(z);
        }
        self.drift_step(model, t, z, dt);
        if self.noise_dim > 0 {
            model.diffusion(&self.pre, &mut self.g);
            add_noise(&self.g, self.noise_dim, dt.sqrt(), &mut self.xi, z, rng);
        }
        let projected = model.post_step(z);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: t + dt,
                state: z.to_vec(),
            });
        }
        Ok(projected)
    }

    /// The most recent Wiener increments `√dt·ξ` drawn by [`Stepper::step`].
    pub fn last_increments(&self) -> &[f64] {
        &self.xi
    }
}

/// Draws `xi = √dt·ξ` and adds `G·xi` to `z`.
#[inline]
fn add_noise<R: rand::Rng + ?Sized>(g: &[f64], m: usize, sq: f64, xi: &mut [f64], z: &mut [f64], rng: &mut R) {
    for x in xi.iter_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *x = sq * n;
    }
    for (i, v) in z.iter_mut().enumerate() {
        let row = &g[i * m..(i + 1) * m];
        *v += row.iter().zip(xi.iter()).map(|(g, w)| g * w).sum::<f64>();
    }
}

/// `count` copies of a model side by side on one flat state, integrated
/// together so the independent members overlap in the pipeline.
struct Stacked<'a, M: ?Sized> {
    model: &'a M,
    dim: usize,
    count: usize,
}

impl<M: SdeModel + ?Sized> SdeModel for Stacked<'_, M> {
    fn dim(&self) -> usize {
        self.dim * self.count
    }
    fn noise_dim(&self) -> usize {
        0
    }
    #[inline]
    fn drift(&self, t: f64, z: &[f64], dz: &mut [f64]) {
        for (zm, dzm) in z.chunks_exact(self.dim).zip(dz.chunks_exact_mut(self.dim)) {
            self.model.drift(t, zm, dzm);
        }
    }
    fn diffusion(&self, _z: &[f64], _g: &mut [f64]) {}
}

struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> SdeModel for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        0
    }
    fn drift(&self, t: f64, z: &[f64], dz: &mut [f64]) {
        (self.f)(t, z, dz)
    }
    fn diffusion(&self, _z: &[f64], _g: &mut [f64]) {}
}

/// One Dormand–Prince fifth-order step of `dz/dt = f(t, z)`.
pub fn rk5_step<F>(f: F, t: f64, z: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let field = FnField { dim: z.len(), f };
    let mut stepper = Stepper::new(&field, Scheme::Rk5EulerNoise);
    let mut out = z.to_vec();
    stepper.drift_step(&field, t, &mut out, dt);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            t,
            state: z.to_vec(),
        });
    }
    Ok(out)
}

/// One split step of `model` from `z` (fresh buffers; use [`Stepper`] in
/// loops).
pub fn split_step_sde<M: SdeModel + ?Sized, R: rand::Rng + ?Sized>(
    model: &M,
    t: f64,
    z: &[f64],
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be > 0, got {dt}")));
    }
    let mut stepper = Stepper::new(model, Scheme::Rk5EulerNoise);
    let mut out = z.to_vec();
    stepper.step(model, t, &mut out, dt, rng)?;
    Ok(out)
}

/// Maps the flat model state to the recorded columns.
pub trait Observe {
    fn names(&self) -> Vec<String>;
    fn observe(&self, z: &[f64], out: &mut Vec<f64>);
}

/// Records the raw state under the given column names.
#[derive(Debug, Clone)]
pub struct StateColumns(pub Vec<String>);

impl Observe for StateColumns {
    fn names(&self) -> Vec<String> {
        self.0.clone()
    }
    fn observe(&self, z: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(z);
    }
}

/// Uniformly sampled record of a trajectory, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub names: Vec<String>,
    pub t0: f64,
    pub dt_sample: f64,
    pub seed: Option<RngStream>,
    data: Vec<f64>,
}

impl TimeSeries {
    pub fn new(names: Vec<String>, t0: f64, dt_sample: f64, seed: Option<RngStream>) -> Self {
        Self {
            names,
            t0,
            dt_sample,
            seed,
            data: Vec::new(),
        }
    }

    pub fn from_columns(
        names: Vec<String>,
        t0: f64,
        dt_sample: f64,
        columns: &[Vec<f64>],
    ) -> Result<Self> {
        if names.len() != columns.len() || columns.is_empty() {
            return Err(Error::Parameter("one name per column required".into()));
        }
        let len = columns[0].len();
        if columns.iter().any(|c| c.len() != len) {
            return Err(Error::Parameter("columns differ in length".into()));
        }
        let mut s = Self::new(names, t0, dt_sample, None);
        s.data.reserve(len * columns.len());
        for i in 0..len {
            s.data.extend(columns.iter().map(|c| c[i]));
        }
        Ok(s)
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        if self.names.is_empty() {
            0
        } else {
            self.data.len() / self.width()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.width(), "row width");
        self.data.extend_from_slice(row);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width().max(1))
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt_sample
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.rows().map(|r| r[idx]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name).map(|i| self.column(i))
    }

    /// Drops the first `n` samples, shifting `t0` accordingly.
    pub fn skip(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            names: self.names.clone(),
            t0: self.time(n),
            dt_sample: self.dt_sample,
            seed: self.seed,
            data: self.data[n * self.width()..].to_vec(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        write!(w, "t")?;
        for n in &self.names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for (i, row) in self.rows().enumerate() {
            write!(w, "{}", fmt_f64(self.time(i)))?;
            for v in row {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f).map_err(|e| Error::io(path, e))
    }

    /// Reads a `t,<names...>` CSV written by [`TimeSeries::write_csv`]. The
    /// sampling interval is taken from the first two rows.
    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut lines = BufReader::new(f).lines();
        let header = match lines.next() {
            Some(h) => h.map_err(|e| Error::io(path, e))?,
            None => return Err(parse_err(1, "empty file".into())),
        };
        let mut cols = header.split(',');
        if cols.next() != Some("t") {
            return Err(parse_err(1, "first column must be `t`".into()));
        }
        let names: Vec<String> = cols.map(str::to_string).collect();
        if names.is_empty() {
            return Err(parse_err(1, "no data columns".into()));
        }
        let mut times = Vec::new();
        let mut s = TimeSeries::new(names, 0.0, 0.0, None);
        let mut row = Vec::with_capacity(s.width());
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            row.clear();
            let mut fields = line.split(',');
            let t: f64 = fields
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|e| parse_err(idx + 2, format!("{e}")))?;
            for f in fields {
                row.push(f.parse().map_err(|e| parse_err(idx + 2, format!("{e}")))?);
            }
            if row.len() != s.width() {
                return Err(parse_err(
                    idx + 2,
                    format!("expected {} values, found {}", s.width(), row.len()),
                ));
            }
            times.push(t);
            s.push(&row);
        }
        if times.is_empty() {
            return Err(parse_err(2, "no samples".into()));
        }
        s.t0 = times[0];
        s.dt_sample = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
        Ok(s)
    }
}

/// Seventeen significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub series: TimeSeries,
    pub steps: u64,
    /// Number of steps in which the model's post-step projection fired.
    pub projection_events: u64,
    pub final_state: Vec<f64>,
}

/// Integrates `model` from `init` over `t_final`, recording every
/// `record_stride` steps (the initial state included).
pub fn integrate_trajectory<M, O, R>(
    model: &M,
    init: &[f64],
    t0: f64,
    config: &StepperConfig,
    t_final: f64,
    observer: &O,
    rng: &mut R,
    seed: Option<RngStream>,
) -> Result<Trajectory>
where
    M: SdeModel + ?Sized,
    O: Observe + ?Sized,
    R: rand::Rng + ?Sized,
{
    integrate_lockstep(model, &[init.to_vec()], t0, config, t_final, observer, &mut [rng], &[seed])?
        .pop()
        .expect("one member")
}

/// Integrates several independent trajectories of `model` in lockstep, one
/// noise stream each. Every member evolves exactly as it would under
/// [`integrate_trajectory`]; a member that blows up is dropped with its own
/// error while the others continue.
pub fn integrate_lockstep<M, O, R>(
    model: &M,
    inits: &[Vec<f64>],
    t0: f64,
    config: &StepperConfig,
    t_final: f64,
    observer: &O,
    rngs: &mut [&mut R],
    seeds: &[Option<RngStream>],
) -> Result<Vec<Result<Trajectory>>>
where
    M: SdeModel + ?Sized,
    O: Observe + ?Sized,
    R: rand::Rng + ?Sized,
{
    let dim = model.dim();
    let count = inits.len();
    if rngs.len() != count || seeds.len() != count {
        return Err(Error::Parameter(format!(
            "{count} initial states but {} noise streams and {} seeds",
            rngs.len(),
            seeds.len()
        )));
    }
    if let Some(bad) = inits.iter().find(|z| z.len() != dim) {
        return Err(Error::Parameter(format!(
            "initial state has length {}, model dimension is {dim}",
            bad.len()
        )));
    }
    let steps = config.steps_for(t_final)?;
    let stride = config.record_stride as u64;
    let dt = config.dt;
    let noise_dim = model.noise_dim();
    let stacked = Stacked { model, dim, count };
    let mut stepper = Stepper::new(&stacked, config.scheme);

    let mut z: Vec<f64> = inits.concat();
    let mut pre = vec![0.0; z.len()];
    let mut g = vec![0.0; dim * noise_dim];
    let mut xi = vec![0.0; noise_dim];
    let mut buf = Vec::new();
    let mut series: Vec<TimeSeries> = seeds
        .iter()
        .map(|&seed| TimeSeries::new(observer.names(), t0, dt * config.record_stride as f64, seed))
        .collect();
    let mut projection_events = vec![0u64; count];
    let mut failed: Vec<Option<Error>> = (0..count).map(|_| None).collect();
    for (zm, s) in z.chunks_exact(dim).zip(series.iter_mut()) {
        buf.clear();
        observer.observe(zm, &mut buf);
        s.push(&buf);
    }
    let sq = dt.sqrt();
    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        if noise_dim > 0 {
            pre.copy_from_slice(&z);
        }
        stepper.drift_step(&stacked, t, &mut z, dt);
        for (mi, zm) in z.chunks_exact_mut(dim).enumerate() {
            if failed[mi].is_some() {
                continue;
            }
            if noise_dim > 0 {
                model.diffusion(&pre[mi * dim..(mi + 1) * dim], &mut g);
                add_noise(&g, noise_dim, sq, &mut xi, zm, &mut *rngs[mi]);
            }
            if model.post_step(zm) {
                projection_events[mi] += 1;
            }
            let err = if zm.iter().any(|v| !v.is_finite()) {
                Some(Error::NonFinite {
                    t: t + dt,
                    state: zm.to_vec(),
                })
            } else if zm.iter().any(|v| v.abs() > BLOW_UP_BOUND) {
                Some(Error::BlowUp {
                    t: t + dt,
                    bound: BLOW_UP_BOUND,
                    state: zm.to_vec(),
                })
            } else {
                None
            };
            if err.is_some() {
                failed[mi] = err;
                // Park the member on its (finite) initial state.
                zm.copy_from_slice(&inits[mi]);
                continue;
            }
            if (step + 1) % stride == 0 {
                buf.clear();
                observer.observe(zm, &mut buf);
                series[mi].push(&buf);
            }
        }
        if failed.iter().all(Option::is_some) {
            break;
        }
    }
    Ok(series
        .into_iter()
        .zip(failed)
        .zip(projection_events)
        .zip(z.chunks_exact(dim))
        .map(|(((series, failed), projection_events), zm)| match failed {
            Some(e) => Err(e),
            None => Ok(Trajectory {
                series,
                steps,
                projection_events,
                final_state: zm.to_vec(),
            }),
        })
        .collect())
}
