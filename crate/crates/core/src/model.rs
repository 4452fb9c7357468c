//! Triad model data: interaction coefficients, energy-conservation checks and
//! the drift of the full slow–fast system.
//!
//! Indices are 1-based in every public type (configuration files and reports
//! use the same numbering as the coefficient tables). [`TriadSystem`] holds the
//! 0-based form used in the inner loops.
//!
//! Each table row contributes exactly one summand to the drift. For an
//! x–y–y row `(j, k, a, a_j, a_k)`:
//!
//! ```text
//! dx/dt   += a   · y_j · y_k / ε
//! dy_j/dt += a_j · x · y_k / ε
//! dy_k/dt += a_k · x · y_j / ε
//! ```
//!
//! and for a y–y–y row `(i, j, k, b_ijk, b_jki, b_kij)`:
//!
//! ```text
//! dy_i/dt += b_ijk · y_j · y_k / ε²
//! dy_j/dt += b_jki · y_k · y_i / ε²
//! dy_k/dt += b_kij · y_i · y_j / ε²
//! ```
//!
//! Zero row sums make both interactions conserve `x² + Σ y²`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::SdeModel;

/// Coupling between the slow variable and the fast pair `(y_j, y_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XyyTriad {
    pub j: usize,
    pub k: usize,
    /// Coefficient of `y_j y_k` in the x equation.
    pub a_xyy: f64,
    /// Coefficient of `x y_k` in the `y_j` equation.
    pub a_j: f64,
    /// Coefficient of `x y_j` in the `y_k` equation.
    pub a_k: f64,
}

impl XyyTriad {
    pub const fn new(j: usize, k: usize, a_xyy: f64, a_j: f64, a_k: f64) -> Self {
        Self {
            j,
            k,
            a_xyy,
            a_j,
            a_k,
        }
    }

    pub fn residual(&self) -> f64 {
        self.a_xyy + self.a_j + self.a_k
    }

    fn label(&self) -> String {
        format!("xyy({},{})", self.j, self.k)
    }
}

/// Interaction among three distinct fast modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YyyTriad {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub b_ijk: f64,
    pub b_jki: f64,
    pub b_kij: f64,
}

impl YyyTriad {
    pub const fn new(i: usize, j: usize, k: usize, b_ijk: f64, b_jki: f64, b_kij: f64) -> Self {
        Self {
            i,
            j,
            k,
            b_ijk,
            b_jki,
            b_kij,
        }
    }

    pub fn residual(&self) -> f64 {
        self.b_ijk + self.b_jki + self.b_kij
    }

    fn label(&self) -> String {
        format!("yyy({},{},{})", self.i, self.j, self.k)
    }
}

/// A complete coefficient set together with the model constants that do not
/// depend on the scale separation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriadCoefficients {
    pub gamma: f64,
    pub sigma: f64,
    pub n: usize,
    #[serde(default)]
    pub xyy: Vec<XyyTriad>,
    #[serde(default)]
    pub yyy: Vec<YyyTriad>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub gamma: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub n: usize,
}

impl ModelParams {
    pub fn new(gamma: f64, sigma: f64, epsilon: f64, n: usize) -> Result<Self> {
        let p = Self {
            gamma,
            sigma,
            epsilon,
            n,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.n < 2 {
            return Err(Error::Parameter(format!("n must be >= 2, got {}", self.n)));
        }
        Ok(())
    }

    /// Stationary variance σ²/(2γ) shared by x and every y_k.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.gamma)
    }
}

impl TriadCoefficients {
    pub fn params(&self, epsilon: f64) -> Result<ModelParams> {
        ModelParams::new(self.gamma, self.sigma, epsilon, self.n)
    }

    pub fn validate(&self, tol: f64) -> Result<ValidationReport> {
        validate_conservation(&self.xyy, &self.yyy, self.n, tol)
    }

    /// Copy with every triad shifted onto the exact constraint surface.
    pub fn projected(&self) -> Self {
        let p = project_to_conservative(&self.xyy, &self.yyy);
        Self {
            xyy: p.xyy,
            yyy: p.yyy,
            ..self.clone()
        }
    }

    pub fn from_json_str(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("coefficients serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// The coefficient tables and parameters (γ = 1, σ = 2.236, n = 10) of the
/// reference experiment, exactly as printed (four-decimal rounding included).
pub fn builtin_paper_model() -> TriadCoefficients {
    let xyy = vec![
        XyyTriad::new(1, 2, 1.2, -0.55, -0.65),
        XyyTriad::new(8, 9, 0.525, 0.25, -0.775),
        XyyTriad::new(4, 10, 1.35, -0.725, -0.625),
        XyyTriad::new(5, 6, 1.125, -0.5, -0.625),
        XyyTriad::new(3, 7, 1.35, -0.725, -0.625),
        XyyTriad::new(1, 10, 0.525, 0.25, -0.775),
        XyyTriad::new(2, 4, 1.2, -0.55, -0.65),
        XyyTriad::new(5, 8, 1.125, -0.5, -0.625),
        XyyTriad::new(7, 9, 0.875, -0.3, -0.575),
        XyyTriad::new(3, 6, 1.25, -0.625, -0.625),
    ];
    let yyy = vec![
        YyyTriad::new(1, 2, 3, 2.0, 2.5, -4.5),
        YyyTriad::new(1, 2, 4, 4.2426, 2.8284, -7.071),
        YyyTriad::new(1, 2, 9, -1.2247, 2.9393, -1.7146),
        YyyTriad::new(1, 2, 10, 2.1166, 2.9103, -5.0269),
        YyyTriad::new(1, 3, 4, 1.7321, 2.5981, -4.3302),
        YyyTriad::new(1, 5, 6, 3.8013, 4.9193, -8.7206),
        YyyTriad::new(1, 9, 10, 3.9598, -2.2627, -1.6971),
        YyyTriad::new(2, 3, 4, -2.0, 4.0, -2.0),
        YyyTriad::new(2, 5, 6, -4.5, 2.1, 2.4),
        YyyTriad::new(2, 9, 10, 1.7393, 1.4230, -3.1623),
        YyyTriad::new(3, 7, 8, 1.1608, 2.3217, -3.4825),
        YyyTriad::new(4, 7, 8, -1.7321, -2.0785, 3.8106),
        YyyTriad::new(5, 6, 7, 2.9566, 2.0912, -5.0478),
        YyyTriad::new(5, 6, 8, -2.6192, -1.4966, 4.1158),
        YyyTriad::new(5, 7, 8, 4.6476, 2.7111, -7.3587),
        YyyTriad::new(5, 6, 9, -3.0, -1.8, 4.8),
        YyyTriad::new(5, 6, 10, 1.8554, 2.2677, -4.1231),
        YyyTriad::new(6, 7, 8, 4.6669, 2.9698, -7.6367),
        YyyTriad::new(8, 9, 10, 3.923, 2.3974, -6.3204),
    ];
    TriadCoefficients {
        gamma: 1.0,
        sigma: 2.236,
        n: 10,
        xyy,
        yyy,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriadResidual {
    pub triad: String,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub xyy: Vec<TriadResidual>,
    pub yyy: Vec<TriadResidual>,
    pub max_abs_residual: f64,
    pub pass: bool,
}

impl ValidationReport {
    pub fn failures(&self) -> impl Iterator<Item = &TriadResidual> {
        self.xyy.iter().chain(&self.yyy).filter(|r| !r.pass)
    }
}

fn check_index(label: impl Fn() -> String, idx: usize, n: usize) -> Result<()> {
    if idx == 0 || idx > n {
        return Err(Error::Structure {
            triad: label(),
            reason: format!("index {idx} outside 1..={n}"),
        });
    }
    Ok(())
}

fn check_structure(xyy: &[XyyTriad], yyy: &[YyyTriad], n: usize) -> Result<()> {
    for t in xyy {
        check_index(|| t.label(), t.j, n)?;
        check_index(|| t.label(), t.k, n)?;
        if t.j == t.k {
            return Err(Error::Structure {
                triad: t.label(),
                reason: "j and k must differ".into(),
            });
        }
    }
    for t in yyy {
        for idx in [t.i, t.j, t.k] {
            check_index(|| t.label(), idx, n)?;
        }
        if t.i == t.j || t.j == t.k || t.i == t.k {
            return Err(Error::Structure {
                triad: t.label(),
                reason: "indices must be distinct".into(),
            });
        }
    }
    Ok(())
}

/// Checks the zero-sum constraint of every triad against `tol`.
pub fn validate_conservation(
    xyy: &[XyyTriad],
    yyy: &[YyyTriad],
    n: usize,
    tol: f64,
) -> Result<ValidationReport> {
    if !(tol >= 0.0) {
        return Err(Error::Parameter(format!("tolerance must be >= 0, got {tol}")));
    }
    check_structure(xyy, yyy, n)?;
    let row = |triad: String, residual: f64| TriadResidual {
        triad,
        residual,
        pass: residual.abs() <= tol,
    };
    let xyy: Vec<_> = xyy.iter().map(|t| row(t.label(), t.residual())).collect();
    let yyy: Vec<_> = yyy.iter().map(|t| row(t.label(), t.residual())).collect();
    let max_abs_residual = xyy
        .iter()
        .chain(&yyy)
        .map(|r| r.residual.abs())
        .fold(0.0, f64::max);
    let pass = xyy.iter().chain(&yyy).all(|r| r.pass);
    Ok(ValidationReport {
        tolerance: tol,
        xyy,
        yyy,
        max_abs_residual,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub xyy: Vec<XyyTriad>,
    pub yyy: Vec<YyyTriad>,
    /// Largest absolute change applied to any single coefficient.
    pub max_change: f64,
}

/// Removes one third of each triad's residual from each of its three members.
pub fn project_to_conservative(xyy: &[XyyTriad], yyy: &[YyyTriad]) -> Projection {
    let mut max_change = 0.0f64;
    let xyy = xyy
        .iter()
        .map(|t| {
            let [a, aj, ak] = shift3([t.a_xyy, t.a_j, t.a_k], &mut max_change);
            XyyTriad { a_xyy: a, a_j: aj, a_k: ak, ..*t }
        })
        .collect();
    let yyy = yyy
        .iter()
        .map(|t| {
            let [b1, b2, b3] = shift3([t.b_ijk, t.b_jki, t.b_kij], &mut max_change);
            YyyTriad {
                b_ijk: b1,
                b_jki: b2,
                b_kij: b3,
                ..*t
            }
        })
        .collect();
    Projection {
        xyy,
        yyy,
        max_change,
    }
}

fn shift3(c: [f64; 3], max_change: &mut f64) -> [f64; 3] {
    let r = c[0] + c[1] + c[2];
    if r == 0.0 {
        return c;
    }
    let third = r / 3.0;
    let a = c[0] - third;
    let b = c[1] - third;
    // Close the sum with the third member so rounding in the first two shifts
    // cannot leave a residual.
    let out = [a, b, -(a + b)];
    for (new, old) in out.iter().zip(c) {
        *max_change = max_change.max((new - old).abs());
    }
    out
}

/// Energy of the fast sub-system, `E = Σ y_k²`.
pub fn fast_energy(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub x: f64,
    pub y: Vec<f64>,
    pub t: f64,
}

impl SystemState {
    pub fn new(x: f64, y: Vec<f64>, t: f64) -> Self {
        Self { x, y, t }
    }

    pub fn energy(&self) -> f64 {
        fast_energy(&self.y)
    }

    /// Flat layout used by the integrators: `[x, y_1, …, y_n]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.y.len() + 1);
        z.push(self.x);
        z.extend_from_slice(&self.y);
        z
    }
}

#[derive(Debug, Clone, Copy)]
struct XyyRow {
    j: usize,
    k: usize,
    a: f64,
    aj: f64,
    ak: f64,
}

#[derive(Debug, Clone, Copy)]
struct YyyRow {
    i: usize,
    j: usize,
    k: usize,
    bi: f64,
    bj: f64,
    bk: f64,
}

/// 0-based, structure-checked coefficient set for the inner loops.
#[derive(Debug, Clone)]
pub struct TriadSystem {
    n: usize,
    xyy: Vec<XyyRow>,
    yyy: Vec<YyyRow>,
}

impl TriadSystem {
    pub fn new(xyy: &[XyyTriad], yyy: &[YyyTriad], n: usize) -> Result<Self> {
        check_structure(xyy, yyy, n)?;
        Ok(Self {
            n,
            xyy: xyy
                .iter()
                .map(|t| XyyRow {
                    j: t.j - 1,
                    k: t.k - 1,
                    a: t.a_xyy,
                    aj: t.a_j,
                    ak: t.a_k,
                })
                .collect(),
            yyy: yyy
                .iter()
                .map(|t| YyyRow {
                    i: t.i - 1,
                    j: t.j - 1,
                    k: t.k - 1,
                    bi: t.b_ijk,
                    bj: t.b_jki,
                    bk: t.b_kij,
                })
                .collect(),
        })
    }

    pub fn from_coefficients(c: &TriadCoefficients) -> Result<Self> {
        Self::new(&c.xyy, &c.yyy, c.n)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_xyy(&self) -> bool {
        !self.xyy.is_empty()
    }

    /// `Σ a_xyy · y_j · y_k`, the quadratic forcing of x (without 1/ε).
    #[inline]
    pub fn x_forcing(&self, y: &[f64]) -> f64 {
        self.xyy.iter().map(|r| r.a * y[r.j] * y[r.k]).sum()
    }

    /// Adds `scale · a_j · x · y_k` (and the k counterpart) to `dy`.
    #[inline]
    pub fn add_x_coupling(&self, x: f64, y: &[f64], dy: &mut [f64], scale: f64) {
        let sx = scale * x;
        for r in &self.xyy {
            dy[r.j] += sx * r.aj * y[r.k];
            dy[r.k] += sx * r.ak * y[r.j];
        }
    }

    /// Adds `scale ·` (y–y–y interaction terms) to `dy`.
    #[inline]
    pub fn add_bath(&self, y: &[f64], dy: &mut [f64], scale: f64) {
        for r in &self.yyy {
            let (yi, yj, yk) = (y[r.i], y[r.j], y[r.k]);
            dy[r.i] += scale * r.bi * yj * yk;
            dy[r.j] += scale * r.bj * yk * yi;
            dy[r.k] += scale * r.bk * yi * yj;
        }
    }
}

/// A quadratic vector field `dz_m = Σ c · z_a · z_b`, with the terms grouped
/// by output component so each component is accumulated in a register.
#[derive(Debug, Clone)]
struct QuadraticForm {
    starts: Vec<usize>,
    terms: Vec<(usize, usize, f64)>,
}

impl QuadraticForm {
    fn new(dim: usize, mut raw: Vec<(usize, usize, usize, f64)>) -> Self {
        raw.sort_by_key(|t| t.0);
        let mut starts = vec![0; dim + 1];
        for t in &raw {
            starts[t.0 + 1] += 1;
        }
        for m in 0..dim {
            starts[m + 1] += starts[m];
        }
        Self {
            starts,
            terms: raw.into_iter().map(|(_, a, b, c)| (a, b, c)).collect(),
        }
    }

    #[inline]
    fn eval(&self, z: &[f64], dz: &mut [f64]) {
        for (m, d) in dz.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(a, b, c) in &self.terms[self.starts[m]..self.starts[m + 1]] {
                acc += c * z[a] * z[b];
            }
            *d = acc;
        }
    }
}

impl TriadSystem {
    /// Terms of `(1/ε)` x-coupling and `(1/ε²)` bath on the flat state
    /// `[x, y]` (or on `y` alone when `with_x` is false).
    fn quadratic_form(&self, inv_eps: f64, with_x: bool) -> QuadraticForm {
        let off = usize::from(with_x);
        let mut raw = Vec::new();
        if with_x {
            for r in &self.xyy {
                let (j, k) = (r.j + 1, r.k + 1);
                raw.push((0, j, k, inv_eps * r.a));
                raw.push((j, 0, k, inv_eps * r.aj));
                raw.push((k, 0, j, inv_eps * r.ak));
            }
        }
        let s = inv_eps * inv_eps;
        for r in &self.yyy {
            let (i, j, k) = (r.i + off, r.j + off, r.k + off);
            raw.push((i, j, k, s * r.bi));
            raw.push((j, k, i, s * r.bj));
            raw.push((k, i, j, s * r.bk));
        }
        QuadraticForm::new(self.n + off, raw)
    }
}

/// Deterministic drift of the full model at `state`: returns `dx/dt`
/// (including the −γx damping, without noise) and `dy/dt`.
pub fn full_drift(
    state: &SystemState,
    params: &ModelParams,
    xyy: &[XyyTriad],
    yyy: &[YyyTriad],
) -> Result<(f64, Vec<f64>)> {
    if state.y.len() != params.n {
        return Err(Error::Parameter(format!(
            "state has {} fast modes, model has {}",
            state.y.len(),
            params.n
        )));
    }
    let sys = TriadSystem::new(xyy, yyy, params.n)?;
    let model = FullModel::new(sys, *params)?;
    let z = state.to_flat();
    let mut dz = vec![0.0; z.len()];
    model.drift(state.t, &z, &mut dz);
    let dx = dz[0];
    dz.remove(0);
    Ok((dx, dz))
}

/// Residual between the energy rate implied by the y drift and the closed
/// form `dE/dt = −(2/ε) x Σ a y_j y_k` of the extended slow system.
pub fn energy_rate_residual(state: &SystemState, params: &ModelParams, sys: &TriadSystem) -> f64 {
    let model = FullModel {
        quad: sys.quadratic_form(1.0 / params.epsilon, true),
        sys: sys.clone(),
        params: *params,
    };
    let z = state.to_flat();
    let mut dz = vec![0.0; z.len()];
    model.drift(state.t, &z, &mut dz);
    let from_y: f64 = 2.0 * state.y.iter().zip(&dz[1..]).map(|(y, d)| y * d).sum::<f64>();
    let closed = -2.0 / params.epsilon * state.x * sys.x_forcing(&state.y);
    from_y - closed
}

/// Full slow–fast model on the flat state `[x, y_1, …, y_n]`; additive noise
/// σ dW acts on x only.
#[derive(Debug, Clone)]
pub struct FullModel {
    sys: TriadSystem,
    params: ModelParams,
    quad: QuadraticForm,
}

impl FullModel {
    pub fn new(sys: TriadSystem, params: ModelParams) -> Result<Self> {
        params.check()?;
        if sys.n() != params.n {
            return Err(Error::Parameter(format!(
                "coefficient set has n = {}, params have n = {}",
                sys.n(),
                params.n
            )));
        }
        let quad = sys.quadratic_form(1.0 / params.epsilon, true);
        Ok(Self { sys, params, quad })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn system(&self) -> &TriadSystem {
        &self.sys
    }
}

impl SdeModel for FullModel {
    fn dim(&self) -> usize {
        self.params.n + 1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, z: &[f64], dz: &mut [f64]) {
        self.quad.eval(z, dz);
        dz[0] -= self.params.gamma * z[0];
    }

    fn diffusion(&self, _z: &[f64], g: &mut [f64]) {
        g.fill(0.0);
        g[0] = self.params.sigma;
    }
}

/// The virtual fast sub-system `dy/dt = B(y, y)` (no ε, no x).
#[derive(Debug, Clone)]
pub struct FastSubsystem {
    sys: TriadSystem,
    quad: QuadraticForm,
}

impl FastSubsystem {
    /// Uses the y–y–y part of `sys` only.
    pub fn new(sys: TriadSystem) -> Self {
        let quad = sys.quadratic_form(1.0, false);
        Self { sys, quad }
    }

    pub fn from_yyy(yyy: &[YyyTriad], n: usize) -> Result<Self> {
        Ok(Self::new(TriadSystem::new(&[], yyy, n)?))
    }
}

impl SdeModel for FastSubsystem {
    fn dim(&self) -> usize {
        self.sys.n()
    }

    fn noise_dim(&self) -> usize {
        0
    }

    fn drift(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.quad.eval(y, dy);
    }

    fn diffusion(&self, _z: &[f64], _g: &mut [f64]) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builtin_counts_and_rows() {
        let c = builtin_paper_model();
        assert_eq!((c.gamma, c.sigma, c.n), (1.0, 2.236, 10));
        assert_eq!(c.xyy.len(), 10);
        assert_eq!(c.yyy.len(), 19);
        assert_eq!(c.xyy[0], XyyTriad::new(1, 2, 1.2, -0.55, -0.65));
        assert_eq!(c.yyy[0], YyyTriad::new(1, 2, 3, 2.0, 2.5, -4.5));
    }

    #[test]
    fn exact_row_passes_tight_tolerance() {
        let t = XyyTriad::new(1, 2, 1.2, -0.55, -0.65);
        let r = validate_conservation(&[t], &[], 10, 1e-12).unwrap();
        assert!(r.pass);
        assert!(r.xyy[0].residual.abs() <= 1e-15);
    }

    #[test]
    fn rounded_row_needs_loose_tolerance() {
        let t = YyyTriad::new(1, 2, 4, 4.2427, 2.8284, -7.071);
        // 4.2427 + 2.8284 - 7.071 = 1e-4 up to binary rounding
        let loose = validate_conservation(&[], &[t], 10, 5e-4).unwrap();
        assert!(loose.pass);
        let tight = validate_conservation(&[], &[t], 10, 1e-12).unwrap();
        assert!(!tight.pass);
        assert!((tight.yyy[0].residual - 1e-4).abs() < 1e-12);
        assert_eq!(tight.failures().count(), 1);
    }

    #[test]
    fn builtin_rows_sum_to_zero() {
        // the printed four-decimal rows cancel exactly in decimal, so only
        // binary rounding remains
        let c = builtin_paper_model();
        assert!(c.validate(5e-4).unwrap().pass);
        assert!(c.validate(1e-12).unwrap().max_abs_residual < 1e-14);
        assert!(c.projected().validate(1e-12).unwrap().pass);
    }

    #[test]
    fn structural_errors_name_the_triad() {
        let bad = XyyTriad::new(1, 11, 1.0, -0.5, -0.5);
        match validate_conservation(&[bad], &[], 10, 1e-3) {
            Err(Error::Structure { triad, .. }) => assert_eq!(triad, "xyy(1,11)"),
            other => panic!("expected structure error, got {other:?}"),
        }
        let dup = YyyTriad::new(2, 2, 3, 1.0, -0.5, -0.5);
        assert!(matches!(
            validate_conservation(&[], &[dup], 10, 1e-3),
            Err(Error::Structure { .. })
        ));
        let zero = XyyTriad::new(0, 1, 1.0, -0.5, -0.5);
        assert!(validate_conservation(&[zero], &[], 10, 1e-3).is_err());
    }

    #[test]
    fn projection_examples() {
        let exact = XyyTriad::new(1, 2, 1.2, -0.55, -0.65);
        let p = project_to_conservative(&[exact], &[]);
        assert_eq!(p.xyy[0].residual(), 0.0);
        assert!(p.max_change < 1e-15);

        let rounded = YyyTriad::new(1, 2, 4, 4.2427, 2.8284, -7.071);
        let p = project_to_conservative(&[], &[rounded]);
        let t = p.yyy[0];
        assert_eq!(t.residual(), 0.0);
        assert!(p.max_change <= 2e-4);
        assert!((t.b_ijk - rounded.b_ijk).abs() <= 2e-4);
        assert!((t.b_jki - rounded.b_jki).abs() <= 2e-4);
        assert!((t.b_kij - rounded.b_kij).abs() <= 2e-4);

        let p = project_to_conservative(&[], &[]);
        assert!(p.xyy.is_empty() && p.yyy.is_empty());
        assert_eq!(p.max_change, 0.0);
    }

    #[test]
    fn fast_energy_examples() {
        assert_eq!(fast_energy(&[0.0; 10]), 0.0);
        assert_eq!(fast_energy(&[1.0; 10]), 10.0);
        assert_eq!(fast_energy(&[3.0, 4.0]), 25.0);
    }

    #[test]
    fn drift_hand_evaluation() {
        let params = ModelParams::new(1.0, 2.236, 1.0, 2).unwrap();
        let xyy = [XyyTriad::new(1, 2, 1.2, -0.55, -0.65)];
        let state = SystemState::new(1.0, vec![1.0, 1.0], 0.0);
        let (dx, dy) = full_drift(&state, &params, &xyy, &[]).unwrap();
        assert!((dx - 0.2).abs() < 1e-15);
        assert!((dy[0] + 0.55).abs() < 1e-15);
        assert!((dy[1] + 0.65).abs() < 1e-15);

        let c = builtin_paper_model();
        let params = c.params(0.5).unwrap();
        let origin = SystemState::new(0.0, vec![0.0; 10], 0.0);
        let (dx, dy) = full_drift(&origin, &params, &c.xyy, &c.yyy).unwrap();
        assert_eq!(dx, 0.0);
        assert!(dy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn drift_rejects_wrong_dimension() {
        let c = builtin_paper_model();
        let params = c.params(1.0).unwrap();
        let s = SystemState::new(0.0, vec![0.0; 3], 0.0);
        assert!(full_drift(&s, &params, &c.xyy, &c.yyy).is_err());
    }

    #[test]
    fn json_schema_round_trip() {
        let c = builtin_paper_model();
        let text = serde_json::to_string(&c).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["xyy"][0]["a_j"], -0.55);
        assert_eq!(v["yyy"][1]["b_kij"], -7.071);
        assert_eq!(TriadCoefficients::from_json_str(&text).unwrap(), c);
    }

    #[test]
    fn params_invariants() {
        assert!(ModelParams::new(1.0, 1.0, 1.0, 2).is_ok());
        assert!(ModelParams::new(0.0, 1.0, 1.0, 2).is_err());
        assert!(ModelParams::new(1.0, -1.0, 1.0, 2).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0.0, 2).is_err());
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1).is_err());
    }

    fn exact_coefficients() -> TriadCoefficients {
        builtin_paper_model().projected()
    }

    proptest! {
        #[test]
        fn interaction_conserves_total_energy(
            x in -5.0f64..5.0,
            y in proptest::collection::vec(-5.0f64..5.0, 10),
            eps in 0.1f64..2.0,
        ) {
            let c = exact_coefficients();
            let params = c.params(eps).unwrap();
            let s = SystemState::new(x, y.clone(), 0.0);
            let (dx, dy) = full_drift(&s, &params, &c.xyy, &c.yyy).unwrap();
            let interaction_x = dx + params.gamma * x;
            let rate = 2.0 * x * interaction_x
                + 2.0 * y.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
            let scale = (x * x + fast_energy(&y)).powf(1.5) / (eps * eps) + 1.0;
            prop_assert!(rate.abs() <= 1e-12 * scale, "rate {rate}");

            let sys = TriadSystem::from_coefficients(&c).unwrap();
            let mut bath = vec![0.0; 10];
            sys.add_bath(&y, &mut bath, 1.0);
            let bath_rate: f64 = y.iter().zip(&bath).map(|(a, b)| a * b).sum();
            prop_assert!(bath_rate.abs() <= 1e-12 * (fast_energy(&y).powf(1.5) + 1.0));

            let r = energy_rate_residual(&s, &params, &sys);
            prop_assert!(r.abs() <= 1e-12 * scale);
        }

        #[test]
        fn projection_is_idempotent(
            coeffs in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            let xyy = [XyyTriad::new(1, 2, coeffs[0], coeffs[1], coeffs[2])];
            let yyy = [YyyTriad::new(1, 2, 3, coeffs[3], coeffs[4], coeffs[5])];
            let once = project_to_conservative(&xyy, &yyy);
            let twice = project_to_conservative(&once.xyy, &once.yyy);
            prop_assert_eq!(&once.xyy, &twice.xyy);
            prop_assert_eq!(&once.yyy, &twice.yyy);
            prop_assert_eq!(twice.max_change, 0.0);
        }
    }
}
