//! Stationary and two-point statistics of scalar time series, plus the
//! analytic stationary densities of x and E.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Blocks used for every block standard error in this module.
pub const N_BLOCKS: usize = 20;

/// Composite trapezoid rule on a uniform grid with spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample mean and the standard error of the mean (absent for < 2 values).
pub fn mean_and_stderr(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    let m = mean(values);
    if n < 2 {
        return (m, None);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, Some((var / n as f64).sqrt()))
}

/// Mean and block standard error of `values` using [`N_BLOCKS`] blocks.
pub fn block_mean(values: &[f64]) -> (f64, Option<f64>) {
    let len = values.len() / N_BLOCKS;
    if len == 0 {
        return (mean(values), None);
    }
    let means: Vec<f64> = values.chunks_exact(len).take(N_BLOCKS).map(mean).collect();
    (mean(values), mean_and_stderr(&means).1)
}

/// Population variance and third standardized moment.
pub fn variance_and_skewness(values: &[f64]) -> (f64, f64) {
    let m = mean(values);
    let n = values.len() as f64;
    let m2 = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
    (m2, m3 / m2.powf(1.5))
}

/// Samples to drop as transient: `max(10·ct_guess, 1% of the run)`.
pub fn transient_samples(len: usize, dt_sample: f64, ct_guess: f64) -> usize {
    let by_time = (10.0 * ct_guess / dt_sample).ceil() as usize;
    by_time.max(len / 100).min(len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub lags: Vec<f64>,
    /// Normalized so that `values[0] == 1`.
    pub values: Vec<f64>,
    /// Lag-0 covariance used for the normalization.
    pub variance: f64,
    /// Per-lag block standard error (or spread across an ensemble).
    pub stderr: Vec<f64>,
}

impl CorrelationCurve {
    pub fn dlag(&self) -> f64 {
        if self.lags.len() > 1 {
            self.lags[1] - self.lags[0]
        } else {
            0.0
        }
    }

    pub fn csv(&self, value_column: &str) -> String {
        curve_csv(value_column, &self.lags, &self.values, &self.stderr)
    }
}

pub(crate) fn curve_csv(value_column: &str, lags: &[f64], values: &[f64], stderr: &[f64]) -> String {
    use crate::integrate::fmt_f64;
    let mut out = format!("lag,{value_column},stderr\n");
    for i in 0..lags.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(lags[i]),
            fmt_f64(values[i]),
            fmt_f64(stderr[i])
        ));
    }
    out
}

fn lag_count(len: usize, dt_sample: f64, max_lag: f64) -> Result<usize> {
    if !(dt_sample > 0.0) || !(max_lag >= 0.0) {
        return Err(Error::Parameter(format!(
            "need dt_sample > 0 and max_lag >= 0 (got {dt_sample}, {max_lag})"
        )));
    }
    let lags = (max_lag / dt_sample).round() as usize;
    if len < 5 * lags.max(1) {
        return Err(Error::InsufficientData(format!(
            "{len} samples; lags up to {lags} need at least {}",
            5 * lags.max(1)
        )));
    }
    Ok(lags)
}

/// Biased (1/N) centred autocovariance at lags `0..=lags`.
fn autocovariance(z: &[f64], lags: usize) -> Vec<f64> {
    let m = mean(z);
    let c: Vec<f64> = z.iter().map(|v| v - m).collect();
    let n = c.len() as f64;
    (0..=lags)
        .map(|l| c[..c.len() - l].iter().zip(&c[l..]).map(|(a, b)| a * b).sum::<f64>() / n)
        .collect()
}

fn normalized_cf(z: &[f64], lags: usize) -> Result<Vec<f64>> {
    let cov = autocovariance(z, lags);
    if !(cov[0] > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(cov.iter().map(|c| c / cov[0]).collect())
}

/// Per-lag spread of `f` evaluated on each of [`N_BLOCKS`] blocks.
fn block_stderr(z: &[f64], lags: usize, f: impl Fn(&[f64], usize) -> Result<Vec<f64>>) -> Vec<f64> {
    let len = z.len() / N_BLOCKS;
    if len <= lags + 1 {
        return vec![f64::NAN; lags + 1];
    }
    let per_block: Vec<Vec<f64>> = z
        .chunks_exact(len)
        .take(N_BLOCKS)
        .filter_map(|b| f(b, lags).ok())
        .collect();
    (0..=lags)
        .map(|l| {
            let vals: Vec<f64> = per_block.iter().map(|c| c[l]).collect();
            mean_and_stderr(&vals).1.unwrap_or(f64::NAN)
        })
        .collect()
}

/// Normalized autocorrelation `CF(τ) = Cov(z(t), z(t+τ)) / Var z` for
/// `τ ∈ [0, max_lag]`. The series is assumed stationary (drop transients
/// first).
pub fn correlation_function(series: &[f64], dt_sample: f64, max_lag: f64) -> Result<CorrelationCurve> {
    let lags = lag_count(series.len(), dt_sample, max_lag)?;
    let cov = autocovariance(series, lags);
    if !(cov[0] > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let values = cov.iter().map(|c| c / cov[0]).collect();
    let stderr = block_stderr(series, lags, normalized_cf);
    Ok(CorrelationCurve {
        lags: (0..=lags).map(|l| l as f64 * dt_sample).collect(),
        values,
        variance: cov[0],
        stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CtConvention {
    /// Area under the normalized correlation function.
    #[default]
    Area,
    /// Reciprocal of that area.
    InverseArea,
}

/// Threshold on the normalized CF that ends the correlation-time integral.
pub const CT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTime {
    pub value: f64,
    /// Upper limit of the integral.
    pub tau_star: f64,
    /// False when the CF never dropped below the threshold.
    pub decayed: bool,
}

/// Trapezoid area of the CF up to its first lag below [`CT_THRESHOLD`]
/// (or the whole curve when it never gets there).
pub fn correlation_time(curve: &CorrelationCurve, convention: CtConvention) -> CorrelationTime {
    let first_below = curve.values.iter().position(|&c| c < CT_THRESHOLD);
    let end = first_below.unwrap_or(curve.values.len().saturating_sub(1));
    let area = trapezoid(&curve.values[..=end.min(curve.values.len() - 1)], curve.dlag());
    CorrelationTime {
        value: match convention {
            CtConvention::Area => area,
            CtConvention::InverseArea => 1.0 / area,
        },
        tau_star: curve.lags.get(end).copied().unwrap_or(0.0),
        decayed: first_below.is_some(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KurtosisCurve {
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl KurtosisCurve {
    pub fn csv(&self) -> String {
        curve_csv("kurt", &self.lags, &self.values, &self.stderr)
    }
}

fn kurtosis_values(z: &[f64], lags: usize) -> Result<Vec<f64>> {
    let m = mean(z);
    let c: Vec<f64> = z.iter().map(|v| v - m).collect();
    let sq: Vec<f64> = c.iter().map(|v| v * v).collect();
    let m2 = mean(&sq);
    (0..=lags)
        .map(|l| {
            let k = c.len() - l;
            let num = sq[..k].iter().zip(&sq[l..]).map(|(a, b)| a * b).sum::<f64>() / k as f64;
            let cov = c[..k].iter().zip(&c[l..]).map(|(a, b)| a * b).sum::<f64>() / k as f64;
            let den = m2 * m2 + 2.0 * cov * cov;
            if den > 0.0 {
                Ok(num / den)
            } else {
                Err(Error::ZeroVariance)
            }
        })
        .collect()
}

/// Gaussian-normalized fourth-order two-point moment
/// `K(τ) = E[z²(t) z²(t+τ)] / ((E z²)² + 2 (E z(t) z(t+τ))²)` of the centred
/// series; identically 1 for a Gaussian process.
pub fn lagged_kurtosis(series: &[f64], dt_sample: f64, max_lag: f64) -> Result<KurtosisCurve> {
    let lags = lag_count(series.len(), dt_sample, max_lag)?;
    let values = kurtosis_values(series, lags)?;
    let stderr = block_stderr(series, lags, kurtosis_values);
    Ok(KurtosisCurve {
        lags: (0..=lags).map(|l| l as f64 * dt_sample).collect(),
        values,
        stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub bin_edges: Vec<f64>,
    pub density: Vec<f64>,
    /// Samples that fell inside the range.
    pub count: usize,
    /// Samples outside the range (excluded from the normalization).
    pub outside: usize,
}

impl DensityEstimate {
    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.density
            .iter()
            .zip(self.bin_edges.windows(2))
            .map(|(d, w)| d * (w[1] - w[0]))
            .sum()
    }

    pub fn csv(&self) -> String {
        use crate::integrate::fmt_f64;
        let mut out = String::from("bin_center,density\n");
        for (c, d) in self.centers().iter().zip(&self.density) {
            out.push_str(&format!("{},{}\n", fmt_f64(*c), fmt_f64(*d)));
        }
        out
    }
}

/// Normalized histogram. Without an explicit range the sample extent is
/// used (widened by ±0.5 for a degenerate sample).
pub fn empirical_density(series: &[f64], n_bins: usize, range: Option<(f64, f64)>) -> Result<DensityEstimate> {
    if series.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    if n_bins < 2 {
        return Err(Error::Parameter(format!("n_bins must be >= 2, got {n_bins}")));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) if hi > lo => (lo, hi),
        Some((lo, hi)) => return Err(Error::Parameter(format!("empty range [{lo}, {hi}]"))),
        None => {
            let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        }
    };
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    let mut outside = 0;
    for &v in series {
        if !(v >= lo && v <= hi) {
            outside += 1;
            continue;
        }
        let b = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    let count = series.len() - outside;
    if count == 0 {
        return Err(Error::InsufficientData("no samples inside the range".into()));
    }
    let bin_edges = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    let density = counts.iter().map(|&c| c as f64 / (count as f64 * width)).collect();
    Ok(DensityEstimate {
        bin_edges,
        density,
        count,
        outside,
    })
}

/// Stationary density of the slow variable: N(0, σ²/(2γ)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianDensity {
    pub gamma: f64,
    pub sigma: f64,
}

impl GaussianDensity {
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.gamma)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        (2.0 * self.gamma).sqrt() / ((2.0 * std::f64::consts::PI).sqrt() * self.sigma)
            * (-self.gamma * x * x / (self.sigma * self.sigma)).exp()
    }
}

pub fn analytic_density_x(gamma: f64, sigma: f64) -> GaussianDensity {
    GaussianDensity { gamma, sigma }
}

/// Stationary density of the bath energy, `C s^{(n−2)/2} exp(−sγ/σ²)`, a
/// χ² law with n degrees of freedom scaled by σ²/(2γ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDensity {
    pub gamma: f64,
    pub sigma: f64,
    pub n: usize,
}

impl EnergyDensity {
    fn rate(&self) -> f64 {
        self.gamma / (self.sigma * self.sigma)
    }

    fn shape(&self) -> f64 {
        self.n as f64 / 2.0
    }

    /// Normalization constant `(γ/σ²)^{n/2} / Γ(n/2)`.
    pub fn normalization(&self) -> f64 {
        (self.shape() * self.rate().ln() - ln_gamma(self.shape())).exp()
    }

    pub fn pdf(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        if s == 0.0 {
            return match self.n {
                2 => self.normalization(),
                _ => 0.0,
            };
        }
        let log = self.shape() * self.rate().ln() - ln_gamma(self.shape())
            + (self.shape() - 1.0) * s.ln()
            - s * self.rate();
        log.exp()
    }

    pub fn mean(&self) -> f64 {
        self.shape() / self.rate()
    }

    pub fn variance(&self) -> f64 {
        self.shape() / (self.rate() * self.rate())
    }

    pub fn skewness(&self) -> f64 {
        2.0 / self.shape().sqrt()
    }

    pub fn mode(&self) -> f64 {
        ((self.shape() - 1.0) / self.rate()).max(0.0)
    }
}

pub fn analytic_density_e(gamma: f64, sigma: f64, n: usize) -> Result<EnergyDensity> {
    if n < 2 {
        return Err(Error::Parameter(format!("n must be >= 2, got {n}")));
    }
    Ok(EnergyDensity { gamma, sigma, n })
}

/// L¹ distance between a histogram and a density, including the density's
/// mass outside the histogram range. Bin integrals use Simpson's rule.
pub fn l1_distance(est: &DensityEstimate, pdf: impl Fn(f64) -> f64) -> f64 {
    let mut dist = 0.0;
    let mut inside = 0.0;
    for (d, w) in est.density.iter().zip(est.bin_edges.windows(2)) {
        let (a, b) = (w[0], w[1]);
        let h = b - a;
        let sub = 8;
        let mut p = 0.0;
        for s in 0..sub {
            let (x0, x1) = (a + h * s as f64 / sub as f64, a + h * (s + 1) as f64 / sub as f64);
            p += (x1 - x0) / 6.0 * (pdf(x0) + 4.0 * pdf(0.5 * (x0 + x1)) + pdf(x1));
        }
        inside += p;
        dist += (d * h - p).abs();
    }
    dist + (1.0 - inside).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStat {
    pub mean: Vec<f64>,
    /// Standard error across runs; absent for a single run.
    pub stderr: Option<Vec<f64>>,
    pub runs: usize,
}

/// Pointwise mean and across-run standard error of equally sized records.
pub fn ensemble_average(runs: &[Vec<f64>]) -> Result<EnsembleStat> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InsufficientData("no runs to average".into()))?;
    if let Some(bad) = runs.iter().position(|r| r.len() != first.len()) {
        return Err(Error::GridMismatch(format!(
            "run {bad} has {} points, run 0 has {}",
            runs[bad].len(),
            first.len()
        )));
    }
    let k = runs.len();
    let mut mean = vec![0.0; first.len()];
    let mut stderr = vec![0.0; first.len()];
    for i in 0..first.len() {
        let vals: Vec<f64> = runs.iter().map(|r| r[i]).collect();
        let (m, se) = mean_and_stderr(&vals);
        mean[i] = m;
        stderr[i] = se.unwrap_or(0.0);
    }
    Ok(EnsembleStat {
        mean,
        stderr: (k > 1).then_some(stderr),
        runs: k,
    })
}

/// Merges correlation curves on a common lag grid. The merged stderr is the
/// across-run spread, or the single run's block error when K = 1.
pub fn ensemble_curves(curves: &[CorrelationCurve]) -> Result<CorrelationCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InsufficientData("no curves to average".into()))?;
    if curves.iter().any(|c| c.lags != first.lags) {
        return Err(Error::GridMismatch("correlation curves use different lag grids".into()));
    }
    let values: Vec<Vec<f64>> = curves.iter().map(|c| c.values.clone()).collect();
    let stat = ensemble_average(&values)?;
    let variances: Vec<f64> = curves.iter().map(|c| c.variance).collect();
    Ok(CorrelationCurve {
        lags: first.lags.clone(),
        values: stat.mean,
        variance: mean(&variances),
        stderr: stat.stderr.unwrap_or_else(|| first.stderr.clone()),
    })
}

pub fn ensemble_kurtosis(curves: &[KurtosisCurve]) -> Result<KurtosisCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InsufficientData("no curves to average".into()))?;
    if curves.iter().any(|c| c.lags != first.lags) {
        return Err(Error::GridMismatch("kurtosis curves use different lag grids".into()));
    }
    let values: Vec<Vec<f64>> = curves.iter().map(|c| c.values.clone()).collect();
    let stat = ensemble_average(&values)?;
    Ok(KurtosisCurve {
        lags: first.lags.clone(),
        values: stat.mean,
        stderr: stat.stderr.unwrap_or_else(|| first.stderr.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::RngStream;
    use rand_distr::{Distribution, StandardNormal};

    /// Exact OU sampling: z_{i+1} = ρ z_i + sqrt(1−ρ²)·v·ξ, ρ = e^{−γh}.
    fn ou(gamma: f64, var: f64, h: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0).rng();
        let rho = (-gamma * h).exp();
        let kick = (var * (1.0 - rho * rho)).sqrt();
        let mut z: f64 = var.sqrt() * { let g: f64 = StandardNormal.sample(&mut rng); g };
        (0..n)
            .map(|_| {
                let out = z;
                let xi: f64 = StandardNormal.sample(&mut rng);
                z = rho * z + kick * xi;
                out
            })
            .collect()
    }

    /// Adaptive Simpson quadrature (test oracle).
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
            (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
        }
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (l, r) = (simpson(f, a, m), simpson(f, m, b));
            if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
                l + r + (l + r - whole) / 15.0
            } else {
                rec(f, a, m, l, tol / 2.0, depth - 1) + rec(f, m, b, r, tol / 2.0, depth - 1)
            }
        }
        // start from 64 panels so a peaked integrand cannot fool the first
        // comparison
        let h = (b - a) / 64.0;
        (0..64)
            .map(|i| {
                let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
                rec(f, lo, hi, simpson(f, lo, hi), tol / 64.0, 50)
            })
            .sum()
    }

    #[test]
    fn trapezoid_basics() {
        assert_eq!(trapezoid(&[], 0.1), 0.0);
        assert_eq!(trapezoid(&[1.0], 0.1), 0.0);
        assert!((trapezoid(&[0.0, 1.0, 2.0], 0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cf_starts_at_one_and_rejects_constants() {
        let z = ou(1.0, 1.0, 0.1, 1000, 1);
        let cf = correlation_function(&z, 0.1, 2.0).unwrap();
        assert_eq!(cf.values[0], 1.0);
        assert_eq!(cf.lags.len(), 21);
        assert!(matches!(
            correlation_function(&[3.0; 100], 0.1, 1.0),
            Err(Error::ZeroVariance)
        ));
        assert!(matches!(
            correlation_function(&z[..50], 0.1, 2.0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn ou_cf_and_ct_match_closed_form() {
        let gamma = 2.0;
        let z = ou(gamma, 1.0, 0.01, 2_000_000, 7);
        let cf = correlation_function(&z, 0.01, 3.0).unwrap();
        let max_err = cf
            .lags
            .iter()
            .zip(&cf.values)
            .map(|(t, c)| (c - (-gamma * t).exp()).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 0.02, "max error {max_err}");
        let ct = correlation_time(&cf, CtConvention::Area);
        assert!(ct.decayed);
        // Truncation at CF = 0.01 removes 0.01/γ = 0.005 of the 0.5 area.
        assert!((ct.value - 0.5).abs() <= 0.05 * 0.5, "ct {}", ct.value);
        let inv = correlation_time(&cf, CtConvention::InverseArea);
        assert!((inv.value * ct.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ct_of_analytic_exponentials() {
        for theta in [0.01, 0.1, 1.0, 10.0] {
            let h = theta / 200.0;
            let lags: Vec<f64> = (0..=2000).map(|i| i as f64 * h).collect();
            let values: Vec<f64> = lags.iter().map(|t| (-t / theta).exp()).collect();
            let curve = CorrelationCurve {
                stderr: vec![0.0; lags.len()],
                lags,
                values,
                variance: 1.0,
            };
            let ct = correlation_time(&curve, CtConvention::Area);
            // area to the 0.01 crossing is θ(1 − 0.01); add the quadrature error
            assert!((ct.value - theta).abs() <= 0.011 * theta + 1e-4 * theta, "θ {theta}: {}", ct.value);
        }
    }

    #[test]
    fn non_decaying_cf_is_flagged() {
        let curve = CorrelationCurve {
            lags: vec![0.0, 1.0, 2.0],
            values: vec![1.0, 0.9, 0.8],
            variance: 1.0,
            stderr: vec![0.0; 3],
        };
        let ct = correlation_time(&curve, CtConvention::Area);
        assert!(!ct.decayed);
        assert!((ct.value - 1.8).abs() < 1e-12);
    }

    #[test]
    fn reversed_series_has_same_cf() {
        let z = ou(1.0, 1.0, 0.05, 20_000, 3);
        let rev: Vec<f64> = z.iter().rev().copied().collect();
        let a = correlation_function(&z, 0.05, 2.0).unwrap();
        let b = correlation_function(&rev, 0.05, 2.0).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_kurtosis_is_one() {
        let z = ou(1.0, 2.5, 0.01, 1_000_000, 13);
        let k = lagged_kurtosis(&z, 0.01, 2.0).unwrap();
        for (i, (v, se)) in k.values.iter().zip(&k.stderr).enumerate() {
            assert!((v - 1.0).abs() <= 3.0 * se, "lag {i}: {v} ± {se}");
        }
        assert!(matches!(lagged_kurtosis(&[1.0; 100], 0.1, 1.0), Err(Error::ZeroVariance)));
    }

    #[test]
    fn density_examples() {
        let mut rng = RngStream::new(1, 0).rng();
        let z: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = empirical_density(&z, 100, None).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
        let d = empirical_density(&[2.0], 2, None).unwrap();
        assert_eq!(d.density.iter().filter(|&&v| v > 0.0).count(), 1);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
        assert!(empirical_density(&[], 10, None).is_err());
        assert!(empirical_density(&[1.0], 1, None).is_err());
    }

    #[test]
    fn analytic_x_density() {
        let g = analytic_density_x(1.0, 2.236);
        assert!((g.variance() - 2.499848).abs() < 1e-6);
        let mass = adaptive_simpson(&|x| g.pdf(x), -40.0, 40.0, 1e-13);
        assert!((mass - 1.0).abs() < 1e-9, "{mass}");
        let var = adaptive_simpson(&|x| x * x * g.pdf(x), -40.0, 40.0, 1e-13);
        assert!((var - g.variance()).abs() < 1e-9, "{var} {}", g.variance());
        for x in [0.3, 1.0, 4.5] {
            assert_eq!(g.pdf(x), g.pdf(-x));
        }
    }

    #[test]
    fn analytic_e_density() {
        let d = analytic_density_e(1.0, 2.236, 10).unwrap();
        assert!((d.mean() - 24.99848).abs() < 1e-5);
        assert!((d.mode() - 19.998784).abs() < 1e-5);
        let mass = adaptive_simpson(&|s| d.pdf(s), 0.0, 400.0, 1e-13);
        assert!((mass - 1.0).abs() < 1e-9, "{mass}");
        let mean = adaptive_simpson(&|s| s * d.pdf(s), 0.0, 400.0, 1e-12);
        assert!((mean - d.mean()).abs() < 1e-8);
        // the mode maximizes the density
        let m = d.mode();
        assert!(d.pdf(m) > d.pdf(m - 0.01) && d.pdf(m) > d.pdf(m + 0.01));
        // n = 2 is exponential
        let e2 = analytic_density_e(1.0, 1.0, 2).unwrap();
        assert!((e2.pdf(0.0) - 1.0).abs() < 1e-15);
        assert!(analytic_density_e(1.0, 1.0, 1).is_err());
    }

    #[test]
    fn chi_squared_samples_are_l1_close() {
        let d = analytic_density_e(1.0, 2.236, 10).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        let v = 2.236f64.powi(2) / 2.0;
        let e: Vec<f64> = (0..200_000)
            .map(|_| (0..10).map(|_| { let g: f64 = StandardNormal.sample(&mut rng); v * g * g }).sum())
            .collect();
        let est = empirical_density(&e, 60, Some((0.0, 90.0))).unwrap();
        let l1 = l1_distance(&est, |s| d.pdf(s));
        assert!(l1 < 0.02, "{l1}");
    }

    #[test]
    fn ensemble_average_behaviour() {
        let r = vec![1.0, 2.0, 3.0];
        let s = ensemble_average(&[r.clone(), r.clone()]).unwrap();
        assert_eq!(s.mean, r);
        assert_eq!(s.stderr, Some(vec![0.0; 3]));
        let single = ensemble_average(&[r.clone()]).unwrap();
        assert_eq!(single.mean, r);
        assert!(single.stderr.is_none());
        assert!(matches!(
            ensemble_average(&[r.clone(), vec![1.0]]),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn ensemble_spread_shrinks_like_root_k() {
        // spread of the lag-10 CF across K runs, for K = 4 and K = 16
        let lag = 10;
        let run = |k: usize, base: u64| -> f64 {
            let curves: Vec<CorrelationCurve> = (0..k as u64)
                .map(|s| correlation_function(&ou(1.0, 1.0, 0.05, 4000, base + s), 0.05, 1.0).unwrap())
                .collect();
            ensemble_curves(&curves).unwrap().stderr[lag]
        };
        let avg = |k: usize| (0..8).map(|rep| run(k, 1000 * rep as u64 + k as u64)).sum::<f64>() / 8.0;
        let ratio = avg(4) / avg(16);
        assert!(ratio > 1.4 && ratio < 2.8, "ratio {ratio}");
    }

    #[test]
    fn transient_rule() {
        assert_eq!(transient_samples(1_000_000, 0.01, 1.0), 10_000);
        assert_eq!(transient_samples(100, 0.01, 1.0), 100);
        assert_eq!(transient_samples(10_000_000, 0.01, 0.1), 100_000);
    }
}
