//! Reduced (homogenized) SDE for the slow pair (x, E):
//!
//! ```text
//! dx = −γx dt − (n+1) M x E^{1/2}/n^{3/2} dt + σ dW₁ + √(2M) (E/n)^{3/4} dW₂
//! dE = −2M (E/n)^{3/2} dt + 2(n+1) M x² E^{1/2}/n^{3/2} dt − 2x √(2M) (E/n)^{3/4} dW₂
//! ```
//!
//! Both W₂ terms come from the same draw; the noise on E is −2x times the W₂
//! noise on x.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{SdeModel, Scheme, Stepper};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MProvenance {
    /// Computed from a microcanonical bath run.
    Estimated,
    #[default]
    UserSupplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedParams {
    pub gamma: f64,
    pub sigma: f64,
    pub n: usize,
    pub m: f64,
    #[serde(default)]
    pub m_provenance: MProvenance,
}

impl ReducedParams {
    pub fn new(gamma: f64, sigma: f64, n: usize, m: f64, m_provenance: MProvenance) -> Result<Self> {
        let p = Self {
            gamma,
            sigma,
            n,
            m,
            m_provenance,
        };
        p.check()?;
        Ok(p)
    }

    pub fn from_model(params: &ModelParams, m: f64, m_provenance: MProvenance) -> Result<Self> {
        Self::new(params.gamma, params.sigma, params.n, m, m_provenance)
    }

    /// Accepts M = 0 (the decoupled limit) and σ = 0; rejects negative or
    /// non-finite values.
    pub fn check(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.m >= 0.0 && self.m.is_finite()) {
            return Err(Error::Parameter(format!("M must be >= 0, got {}", self.m)));
        }
        if self.n < 2 {
            return Err(Error::Parameter(format!("n must be >= 2, got {}", self.n)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub x: f64,
    pub e: f64,
    pub t: f64,
}

impl ReducedState {
    pub fn new(x: f64, e: f64, t: f64) -> Self {
        Self { x, e, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EFloorPolicy {
    /// E ← max(E, 0).
    #[default]
    Clamp,
    /// E ← |E|.
    Reflect,
}

/// Precomputed coefficients shared by drift and diffusion.
#[derive(Debug, Clone, Copy)]
struct Coefs {
    gamma: f64,
    sigma: f64,
    /// (n+1) M / n^{3/2}
    coupling: f64,
    /// 2M / n^{3/2}
    decay: f64,
    /// √(2M) / n^{3/4}
    w2: f64,
}

impl Coefs {
    fn new(p: &ReducedParams) -> Self {
        let n = p.n as f64;
        let n32 = n * n.sqrt();
        Self {
            gamma: p.gamma,
            sigma: p.sigma,
            coupling: (n + 1.0) * p.m / n32,
            decay: 2.0 * p.m / n32,
            w2: (2.0 * p.m).sqrt() / (n.sqrt() * n.sqrt().sqrt()),
        }
    }

    #[inline]
    fn drift(&self, x: f64, e: f64) -> (f64, f64) {
        let e = e.max(0.0);
        let sqrt_e = e.sqrt();
        let dx = -self.gamma * x - self.coupling * x * sqrt_e;
        let de = (-self.decay * e + 2.0 * self.coupling * x * x) * sqrt_e;
        (dx, de)
    }

    /// √(2M) (E/n)^{3/4}
    #[inline]
    fn w2_amplitude(&self, e: f64) -> f64 {
        let r = e.max(0.0).sqrt();
        self.w2 * r * r.sqrt()
    }
}

fn check_energy(state: &ReducedState) -> Result<()> {
    if state.e < 0.0 || state.e.is_nan() {
        return Err(Error::Domain(format!("bath energy must be >= 0, got {}", state.e)));
    }
    Ok(())
}

/// Drift `(dx/dt, dE/dt)` of the reduced model.
pub fn reduced_drift(state: &ReducedState, params: &ReducedParams) -> Result<(f64, f64)> {
    check_energy(state)?;
    Ok(Coefs::new(params).drift(state.x, state.e))
}

/// Noise matrix with rows (x, E) and columns (W₁, W₂).
pub fn reduced_diffusion(state: &ReducedState, params: &ReducedParams) -> Result<[[f64; 2]; 2]> {
    check_energy(state)?;
    let c = Coefs::new(params);
    let s = c.w2_amplitude(state.e);
    Ok([[c.sigma, s], [0.0, -2.0 * state.x * s]])
}

/// The reduced model on the flat state `[x, E]`.
#[derive(Debug, Clone, Copy)]
pub struct ReducedModel {
    params: ReducedParams,
    coefs: Coefs,
    floor: EFloorPolicy,
}

impl ReducedModel {
    pub fn new(params: ReducedParams, floor: EFloorPolicy) -> Result<Self> {
        params.check()?;
        Ok(Self {
            params,
            coefs: Coefs::new(&params),
            floor,
        })
    }

    pub fn params(&self) -> &ReducedParams {
        &self.params
    }
}

impl SdeModel for ReducedModel {
    fn dim(&self) -> usize {
        2
    }

    fn noise_dim(&self) -> usize {
        2
    }

    #[inline]
    fn drift(&self, _t: f64, z: &[f64], dz: &mut [f64]) {
        let (dx, de) = self.coefs.drift(z[0], z[1]);
        dz[0] = dx;
        dz[1] = de;
    }

    #[inline]
    fn diffusion(&self, z: &[f64], g: &mut [f64]) {
        let s = self.coefs.w2_amplitude(z[1]);
        g[0] = self.coefs.sigma;
        g[1] = s;
        g[2] = 0.0;
        g[3] = -2.0 * z[0] * s;
    }

    #[inline]
    fn post_step(&self, z: &mut [f64]) -> bool {
        if z[1] >= 0.0 {
            return false;
        }
        z[1] = match self.floor {
            EFloorPolicy::Clamp => 0.0,
            EFloorPolicy::Reflect => -z[1],
        };
        true
    }
}

/// One split step (RK5 drift, shared-W₂ Euler noise, E floor). The flag is
/// true when the floor policy fired.
pub fn step_reduced<R: rand::Rng + ?Sized>(
    state: &ReducedState,
    params: &ReducedParams,
    dt: f64,
    rng: &mut R,
    floor: EFloorPolicy,
) -> Result<(ReducedState, bool)> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt must be > 0, got {dt}")));
    }
    check_energy(state)?;
    let model = ReducedModel::new(*params, floor)?;
    let mut stepper = Stepper::new(&model, Scheme::Rk5EulerNoise);
    let mut z = [state.x, state.e];
    let clamped = stepper.step(&model, state.t, &mut z, dt, rng)?;
    Ok((ReducedState::new(z[0], z[1], state.t + dt), clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate_trajectory, RngStream, StateColumns, StepperConfig};
    use proptest::prelude::*;

    const PAPER_M: f64 = 1.2759;

    fn paper(m: f64) -> ReducedParams {
        ReducedParams::new(1.0, 2.236, 10, m, MProvenance::UserSupplied).unwrap()
    }

    #[test]
    fn drift_examples() {
        let p = paper(PAPER_M);
        assert_eq!(reduced_drift(&ReducedState::new(0.0, 0.0, 0.0), &p).unwrap(), (0.0, 0.0));
        let (dx, de) = reduced_drift(&ReducedState::new(0.0, 10.0, 0.0), &p).unwrap();
        assert_eq!(dx, 0.0);
        assert!((de + 2.5518).abs() < 1e-12, "{de}");
        assert!(matches!(
            reduced_drift(&ReducedState::new(0.0, -1e-3, 0.0), &p),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn diffusion_examples() {
        let p = paper(PAPER_M);
        let d = reduced_diffusion(&ReducedState::new(1.5, 0.0, 0.0), &p).unwrap();
        assert_eq!(d, [[2.236, 0.0], [0.0, -0.0]]);
        let d = reduced_diffusion(&ReducedState::new(0.7, 10.0, 0.0), &p).unwrap();
        assert!((d[0][1] - 1.597_435).abs() < 1e-6, "{}", d[0][1]);
        assert!(reduced_diffusion(&ReducedState::new(0.0, -1.0, 0.0), &p).is_err());
    }

    proptest! {
        #[test]
        fn drift_coupling_cancels(x in -6.0f64..6.0, e in 0.0f64..80.0, m in 0.0f64..3.0) {
            let p = paper(m);
            let (dx, de) = reduced_drift(&ReducedState::new(x, e, 0.0), &p).unwrap();
            let lhs = de + 2.0 * x * (dx + p.gamma * x);
            let rhs = -2.0 * m * (e / 10.0).powf(1.5);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs() + (x * x * e).abs()));
        }

        #[test]
        fn diffusion_square_matches_closed_form(x in -6.0f64..6.0, e in 0.0f64..80.0) {
            let p = paper(PAPER_M);
            let d = reduced_diffusion(&ReducedState::new(x, e, 0.0), &p).unwrap();
            let ddt = [
                [d[0][0] * d[0][0] + d[0][1] * d[0][1], d[0][0] * d[1][0] + d[0][1] * d[1][1]],
                [d[1][0] * d[0][0] + d[1][1] * d[0][1], d[1][0] * d[1][0] + d[1][1] * d[1][1]],
            ];
            let q = 2.0 * PAPER_M * (e / 10.0).powf(1.5);
            let expect = [[q, -2.0 * x * q], [-2.0 * x * q, 4.0 * x * x * q]];
            let sig2 = p.sigma * p.sigma;
            let tol = 1e-10 * (1.0 + q * (1.0 + 4.0 * x * x));
            prop_assert!((ddt[0][0] - sig2 - expect[0][0]).abs() <= tol);
            prop_assert!((ddt[0][1] - expect[0][1]).abs() <= tol);
            prop_assert!((ddt[1][0] - expect[1][0]).abs() <= tol);
            prop_assert!((ddt[1][1] - expect[1][1]).abs() <= tol);
        }

        #[test]
        fn e_noise_is_minus_two_x_times_x_noise(x in -4.0f64..4.0, e in 0.5f64..60.0, seed in 0u64..1000) {
            // Isolate the W₂ channel: σ = 0 so all x noise is W₂ noise.
            let p = ReducedParams::new(1.0, 0.0, 10, PAPER_M, MProvenance::UserSupplied).unwrap();
            let model = ReducedModel::new(p, EFloorPolicy::Clamp).unwrap();
            let mut stepper = Stepper::new(&model, Scheme::Rk5EulerNoise);
            let dt = 1e-4;
            let mut det = [x, e];
            stepper.drift_step(&model, 0.0, &mut det, dt);
            let mut z = [x, e];
            let mut rng = RngStream::new(seed, 0).rng();
            stepper.step(&model, 0.0, &mut z, dt, &mut rng).unwrap();
            let (nx, ne) = (z[0] - det[0], z[1] - det[1]);
            prop_assume!(z[1] > 0.0);
            prop_assert!((ne + 2.0 * x * nx).abs() <= 1e-12 * (1.0 + ne.abs()));
        }
    }

    #[test]
    fn decoupled_limit_is_linear_decay() {
        let p = ReducedParams::new(1.0, 0.0, 10, 0.0, MProvenance::UserSupplied).unwrap();
        let model = ReducedModel::new(p, EFloorPolicy::Clamp).unwrap();
        let cfg = StepperConfig::rk5(1e-3, 100).unwrap();
        let mut rng = RngStream::new(0, 0).rng();
        let obs = StateColumns(vec!["x".into(), "E".into()]);
        let tr = integrate_trajectory(&model, &[1.0, 7.0], 0.0, &cfg, 3.0, &obs, &mut rng, None).unwrap();
        for (i, row) in tr.series.rows().enumerate() {
            let t = tr.series.time(i);
            assert!((row[0] - (-t).exp()).abs() < 1e-12, "t {t}: {}", row[0]);
            assert_eq!(row[1], 7.0);
        }
    }

    #[test]
    fn decoupled_limit_has_ou_variance() {
        let p = ReducedParams::new(1.0, 2.236, 10, 0.0, MProvenance::UserSupplied).unwrap();
        let model = ReducedModel::new(p, EFloorPolicy::Clamp).unwrap();
        let cfg = StepperConfig::rk5(1e-3, 10).unwrap();
        let mut rng = RngStream::new(17, 0).rng();
        let obs = StateColumns(vec!["x".into(), "E".into()]);
        let tr = integrate_trajectory(&model, &[0.0, 5.0], 0.0, &cfg, 2000.0, &obs, &mut rng, None).unwrap();
        let x = tr.series.skip(1000).column(0);
        let v = crate::stats::variance_and_skewness(&x).0;
        let target = 2.236f64.powi(2) / 2.0;
        let se = target * (2.0 / 1990.0f64).sqrt();
        assert!((v - target).abs() < 3.0 * se, "{v}");
        assert!(tr.series.rows().all(|r| r[1] == 5.0));
    }

    #[test]
    fn energy_stays_non_negative_from_zero() {
        let model = ReducedModel::new(paper(PAPER_M), EFloorPolicy::Clamp).unwrap();
        let cfg = StepperConfig::rk5(1e-4, 10).unwrap();
        let mut rng = RngStream::new(23, 0).rng();
        let obs = StateColumns(vec!["x".into(), "E".into()]);
        // every E term carries a power of E, so E = 0 is absorbing
        let tr = integrate_trajectory(&model, &[0.0, 0.0], 0.0, &cfg, 20.0, &obs, &mut rng, None).unwrap();
        assert!(tr.series.rows().all(|r| r[1] == 0.0));
        let tr = integrate_trajectory(&model, &[3.0, 1e-6], 0.0, &cfg, 20.0, &obs, &mut rng, None).unwrap();
        assert!(tr.series.rows().all(|r| r[1] >= 0.0));
        assert!(tr.final_state[1] > 1e-6);
    }

    #[test]
    fn floor_policies() {
        let model = ReducedModel::new(paper(PAPER_M), EFloorPolicy::Clamp).unwrap();
        let mut z = [0.3, -0.2];
        assert!(model.post_step(&mut z));
        assert_eq!(z, [0.3, 0.0]);
        let model = ReducedModel::new(paper(PAPER_M), EFloorPolicy::Reflect).unwrap();
        let mut z = [0.3, -0.2];
        assert!(model.post_step(&mut z));
        assert_eq!(z, [0.3, 0.2]);
        let mut z = [0.3, 0.2];
        assert!(!model.post_step(&mut z));
    }

    #[test]
    fn step_is_reproducible() {
        let p = paper(PAPER_M);
        let s = ReducedState::new(0.5, 20.0, 0.0);
        let a = step_reduced(&s, &p, 1e-3, &mut RngStream::new(3, 1).rng(), EFloorPolicy::Clamp).unwrap();
        let b = step_reduced(&s, &p, 1e-3, &mut RngStream::new(3, 1).rng(), EFloorPolicy::Clamp).unwrap();
        assert_eq!(a, b);
        assert!((a.0.t - 1e-3).abs() < 1e-18);
        assert!(step_reduced(&s, &p, 0.0, &mut RngStream::new(3, 1).rng(), EFloorPolicy::Clamp).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ReducedParams::new(1.0, 1.0, 10, -1.0, MProvenance::Estimated).is_err());
        assert!(ReducedParams::new(0.0, 1.0, 10, 1.0, MProvenance::Estimated).is_err());
        assert!(ReducedParams::new(1.0, 1.0, 1, 1.0, MProvenance::Estimated).is_err());
    }
}
