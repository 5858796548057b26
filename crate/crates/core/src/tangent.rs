//! Linearized dynamics `dv = [Av + νv + 2B(u,v)]dt` along a trajectory,
//! the solution propagator and finite-time Lyapunov exponents.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{NoiseSource, NoiseSpec, StepNoise};
use crate::spde::{ExpEuler, SimParams, Trajectory};
use crate::spectral::{ModelSpec, SpectralField};

/// Relative eigen-residual at which power iteration stops.
pub const POWER_TOLERANCE: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 500;

/// Which clock an exponent is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeScale {
    /// `t`, the time of the original equation.
    Fast,
    /// `T = ε² t`.
    Slow,
}

/// A finite-time Lyapunov exponent tagged with its time scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ftle {
    pub value: f64,
    pub scale: TimeScale,
}

impl Ftle {
    pub fn fast(value: f64) -> Self {
        Self { value, scale: TimeScale::Fast }
    }

    pub fn slow(value: f64) -> Self {
        Self { value, scale: TimeScale::Slow }
    }

    /// Same exponent in slow units: `λ^U_T = ε⁻² λ^u_{Tε⁻²}`.
    pub fn to_slow(self, eps: f64) -> Self {
        match self.scale {
            TimeScale::Slow => self,
            TimeScale::Fast => Self::slow(self.value / (eps * eps)),
        }
    }

    /// Same exponent in fast units.
    pub fn to_fast(self, eps: f64) -> Self {
        match self.scale {
            TimeScale::Fast => self,
            TimeScale::Slow => Self::fast(self.value * eps * eps),
        }
    }
}

/// A tangent vector with its kernel and stable parts.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentState {
    pub v: SpectralField,
}

impl TangentState {
    pub fn new(v: SpectralField) -> Self {
        Self { v }
    }

    pub fn kernel_part(&self, model: &ModelSpec) -> Result<SpectralField> {
        model.project_c(&self.v)
    }

    pub fn stable_part(&self, model: &ModelSpec) -> Result<SpectralField> {
        model.project_s(&self.v)
    }
}

/// Exact derivative of one exponential-Euler step with respect to the state.
#[derive(Clone, Debug)]
pub struct TangentStepper<'m> {
    model: &'m ModelSpec,
    decay: Vec<f64>,
    phi_dt: Vec<f64>,
    jac: Vec<f64>,
    jac_m: DMatrix<f64>,
    prod: DMatrix<f64>,
}

impl<'m> TangentStepper<'m> {
    pub fn new(model: &'m ModelSpec, nu: f64, dt: f64) -> Self {
        let base = ExpEuler::new(model, nu, 0.0, dt);
        let n = model.n();
        Self {
            model,
            decay: base.decay().to_vec(),
            phi_dt: base.phi_dt().to_vec(),
            jac: vec![0.0; n * n],
            jac_m: DMatrix::zeros(n, n),
            prod: DMatrix::zeros(n, n),
        }
    }

    fn load_jacobian(&mut self, u: &[f64]) {
        let n = self.model.n();
        self.model.coupling().jacobian(u, &mut self.jac);
        for r in 0..n {
            for c in 0..n {
                self.jac_m[(r, c)] = self.jac[r * n + c];
            }
        }
    }

    /// `v ← E v + Φdt · 2B(u, v)` for base state `u` at the start of the step.
    pub fn step_vector(&mut self, u: &[f64], v: &mut [f64]) {
        let n = self.model.n();
        self.model.coupling().jacobian(u, &mut self.jac);
        let jv: Vec<f64> = (0..n).map(|r| (0..n).map(|c| self.jac[r * n + c] * v[c]).sum()).collect();
        for k in 0..n {
            v[k] = self.decay[k] * v[k] + self.phi_dt[k] * jv[k];
        }
    }

    /// Same step applied to every column of `m`.
    pub fn step_matrix(&mut self, u: &[f64], m: &mut DMatrix<f64>) {
        self.load_jacobian(u);
        self.prod.gemm(1.0, &self.jac_m, m, 0.0);
        let n = self.model.n();
        for c in 0..m.ncols() {
            for r in 0..n {
                m[(r, c)] = self.decay[r] * m[(r, c)] + self.phi_dt[r] * self.prod[(r, c)];
            }
        }
    }
}

/// One tangent step `v(t) ↦ v(t + dt)` along base state `u(t)`.
pub fn tangent_step(
    model: &ModelSpec,
    nu: f64,
    u: &SpectralField,
    v: &SpectralField,
    dt: f64,
) -> Result<SpectralField> {
    model.check(u)?;
    model.check(v)?;
    let mut out = v.clone();
    TangentStepper::new(model, nu, dt).step_vector(u.coeffs(), out.coeffs_mut());
    Ok(out)
}

/// Largest singular value by power iteration on `MᵀM`.
///
/// Stops once the eigen-residual `‖Gx − ρx‖` falls below
/// [`POWER_TOLERANCE`]`·ρ` for the Gram matrix `G`.
pub fn largest_singular_value(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return Ok(0.0);
    }
    let gram = m.transpose() * m;
    let mut x = DVector::from_fn(n, |k, _| 1.0 + 0.37 * ((k as f64 + 1.0) * 0.61).sin());
    x /= x.norm();
    let mut residual = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let y = &gram * &x;
        let rho = x.dot(&y);
        if rho <= 0.0 {
            return Ok(0.0);
        }
        residual = (&y - &x * rho).norm() / rho;
        if residual <= POWER_TOLERANCE {
            return Ok(rho.sqrt());
        }
        x = &y / y.norm();
    }
    Err(Error::NonConverged { iterations: POWER_MAX_ITER, residual })
}

/// Linear map `v(0) ↦ v(t)` along one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagator {
    pub matrix: DMatrix<f64>,
    /// Fast time covered.
    pub time: f64,
}

impl Propagator {
    pub fn identity(n: usize) -> Self {
        Self { matrix: DMatrix::identity(n, n), time: 0.0 }
    }

    pub fn norm(&self) -> Result<f64> {
        largest_singular_value(&self.matrix)
    }

    /// Norm of the map restricted to kernel initial vectors.
    pub fn kernel_norm(&self, model: &ModelSpec) -> Result<f64> {
        largest_singular_value(&self.kernel_columns(model))
    }

    pub fn kernel_columns(&self, model: &ModelSpec) -> DMatrix<f64> {
        self.matrix.select_columns(model.kernel_modes())
    }

    /// `‖P_s M‖`: worst-case stable part of `V(t)` over unit `V(0)`.
    pub fn stable_norm(&self, model: &ModelSpec) -> Result<f64> {
        let mut m = self.matrix.clone();
        for &k in model.kernel_modes() {
            m.row_mut(k).fill(0.0);
        }
        largest_singular_value(&m)
    }

    /// `‖P_c M‖`.
    pub fn kernel_image_norm(&self, model: &ModelSpec) -> Result<f64> {
        largest_singular_value(&self.matrix.select_rows(model.kernel_modes()))
    }

    /// `(1/t) ln ‖M‖` in fast units.
    pub fn ftle(&self) -> Result<Ftle> {
        if !(self.time > 0.0) {
            return Err(Error::InvalidParameter(format!("FTLE horizon t = {} must be positive", self.time)));
        }
        Ok(Ftle::fast(self.norm()?.ln() / self.time))
    }
}

/// Re-simulate `u` from its noise key for `steps` fast steps while carrying
/// the full propagator. `observe` sees `(step, u, M)` after each step and
/// once before the first.
pub fn integrate_propagator<S, F>(
    model: &ModelSpec,
    params: &SimParams,
    noise: &mut S,
    u0: &SpectralField,
    steps: usize,
    mut observe: F,
) -> Result<Propagator>
where
    S: NoiseSource,
    F: FnMut(usize, &[f64], &DMatrix<f64>),
{
    model.check(u0)?;
    let n = model.n();
    let dt = noise.dt();
    let mut flow = ExpEuler::new(model, params.nu, params.sigma, dt);
    let mut lin = TangentStepper::new(model, params.nu, dt);
    let mut u = u0.coeffs().to_vec();
    let mut m = DMatrix::identity(n, n);
    let mut buf = StepNoise::zeros(n);
    observe(0, &u, &m);
    for step in 0..steps {
        lin.step_matrix(&u, &mut m);
        noise.draw(step as u64, &mut buf);
        if !flow.step(&mut u, &buf) {
            return Err(Error::Blowup { time: (step + 1) as f64 * dt });
        }
        observe(step + 1, &u, &m);
    }
    Ok(Propagator { matrix: m, time: steps as f64 * dt })
}

/// Propagator over fast time `t_fast` along `traj`, replayed from its key.
pub fn propagator(
    model: &ModelSpec,
    params: &SimParams,
    noise: &NoiseSpec,
    traj: &Trajectory,
    t_fast: f64,
) -> Result<Propagator> {
    let steps = checked_steps(params, traj, t_fast)?;
    let spec = NoiseSpec { key: traj.key, ..noise.clone() };
    let mut src = params.noise(model, &spec)?;
    integrate_propagator(model, params, &mut src, &traj.u0, steps, |_, _, _| {})
}

fn checked_steps(params: &SimParams, traj: &Trajectory, t_fast: f64) -> Result<usize> {
    if !(t_fast >= 0.0) {
        return Err(Error::InvalidParameter(format!("t = {t_fast} must be non-negative")));
    }
    let steps = (t_fast / params.dt).round() as usize;
    let covered = traj.times.last().copied().unwrap_or(0.0) / (params.eps * params.eps * params.dt);
    let available = covered.round() as usize;
    if steps > available {
        return Err(Error::InsufficientPath { required: steps, available });
    }
    Ok(steps)
}

/// `λ^u_t = (1/t) ln ‖U(t)‖`, fast units.
pub fn ftle_spde(
    model: &ModelSpec,
    params: &SimParams,
    noise: &NoiseSpec,
    traj: &Trajectory,
    t_fast: f64,
) -> Result<Ftle> {
    propagator(model, params, noise, traj, t_fast)?.ftle()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::KeyedNoise;

    fn burgers(n: usize) -> ModelSpec {
        ModelSpec::burgers(n).unwrap()
    }

    /// Model with the Burgers spectrum but no nonlinearity.
    fn linear(n: usize) -> ModelSpec {
        let m = burgers(n);
        ModelSpec::new(
            m.basis(),
            m.eigenvalues().to_vec(),
            m.alpha(),
            crate::spectral::BilinearKind::Custom,
            crate::spectral::CouplingTable::from_entries(n, []).unwrap(),
        )
        .unwrap()
    }

    fn field(m: &ModelSpec, f: impl Fn(usize) -> f64) -> SpectralField {
        SpectralField::new(m.basis(), (0..m.n()).map(f).collect())
    }

    #[test]
    fn frozen_zero_state_decays_per_mode() {
        let m = burgers(6);
        let v = field(&m, |_| 1.0);
        let mut w = v.clone();
        let dt = 1e-3;
        for _ in 0..500 {
            w = tangent_step(&m, 0.0, &m.zeros(), &w, dt).unwrap();
        }
        for k in 0..6 {
            let exact = (-m.eigenvalues()[k] * 0.5).exp();
            assert!((w.coeffs()[k] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_step_is_linear() {
        let m = burgers(10);
        let u = field(&m, |k| 0.3 / (k + 1) as f64);
        let v1 = field(&m, |k| (k as f64 * 0.7).sin());
        let v2 = field(&m, |k| (k as f64 * 1.3).cos());
        let (a, b) = (1.7, -0.4);
        let lhs = tangent_step(&m, 0.01, &u, &v1.lin_comb(a, &v2, b).unwrap(), 0.01).unwrap();
        let r1 = tangent_step(&m, 0.01, &u, &v1, 0.01).unwrap();
        let r2 = tangent_step(&m, 0.01, &u, &v2, 0.01).unwrap();
        let rhs = r1.lin_comb(a, &r2, b).unwrap();
        for (x, y) in lhs.coeffs().iter().zip(rhs.coeffs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_and_vector_steps_agree() {
        let m = burgers(8);
        let u = field(&m, |k| 0.2 - 0.03 * k as f64);
        let mut lin = TangentStepper::new(&m, 0.02, 0.05);
        let mut mat = DMatrix::identity(8, 8);
        lin.step_matrix(u.coeffs(), &mut mat);
        for c in 0..8 {
            let mut v = m.unit(c).into_coeffs();
            lin.step_vector(u.coeffs(), &mut v);
            for r in 0..8 {
                assert!((mat[(r, c)] - v[r]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn power_iteration_examples() {
        assert_eq!(largest_singular_value(&DMatrix::identity(5, 5)).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 3.0, -4.0]));
        assert!((largest_singular_value(&d).unwrap() - 4.0).abs() < 1e-9);
        assert_eq!(largest_singular_value(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn power_iteration_reports_stall() {
        let rot = nalgebra::Rotation2::new(0.3).into_inner();
        let m = rot * nalgebra::Matrix2::new(1.0, 0.0, 0.0, 1.0 - 1e-6);
        let m = DMatrix::from_column_slice(2, 2, m.as_slice());
        assert!(matches!(largest_singular_value(&m), Err(Error::NonConverged { iterations: 500, .. })));
    }

    #[test]
    fn power_iteration_matches_dense_svd() {
        let mut rng = 0x2545f4914f6cdd1du64;
        let mut next = || {
            rng ^= rng << 13;
            rng ^= rng >> 7;
            rng ^= rng << 17;
            (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for n in [3, 8, 17] {
            let m = DMatrix::from_fn(n, n, |_, _| next());
            let svd = m.clone().svd(false, false);
            let top = svd.singular_values.max();
            assert!((largest_singular_value(&m).unwrap() - top).abs() < 1e-8 * top);
        }
    }

    #[test]
    fn propagator_at_zero_time_is_identity() {
        let m = burgers(8);
        let p = SimParams::new(&m, 0.01, 0.01, 0.1, 1.0);
        let spec = NoiseSpec::uniform(8, 1.0, 3, 0).unwrap();
        let mut src = p.noise(&m, &spec).unwrap();
        let prop = integrate_propagator(&m, &p, &mut src, &m.zeros(), 0, |_, _, _| {}).unwrap();
        assert_eq!(prop.matrix, DMatrix::identity(8, 8));
        assert_eq!(prop.norm().unwrap(), 1.0);
        assert!(prop.ftle().is_err());
    }

    #[test]
    fn linear_flow_ftle_is_nu() {
        let m = linear(8);
        for nu in [-0.3, 0.0, 0.25] {
            let p = SimParams::new(&m, nu, 0.0, 1.0, 1.0).with_dt(0.01);
            let spec = NoiseSpec::uniform(8, 0.0, 0, 0).unwrap();
            let mut src = p.noise(&m, &spec).unwrap();
            let prop = integrate_propagator(&m, &p, &mut src, &m.zeros(), 300, |_, _, _| {}).unwrap();
            let l = prop.ftle().unwrap();
            assert_eq!(l.scale, TimeScale::Fast);
            assert!((l.value - nu).abs() < 1e-12, "ν = {nu}: {}", l.value);
            let mut src = p.noise(&m, &spec).unwrap();
            let twice = integrate_propagator(&m, &p, &mut src, &m.zeros(), 600, |_, _, _| {}).unwrap();
            assert!((twice.ftle().unwrap().value - l.value).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_conversion_round_trips() {
        let f = Ftle::fast(0.02);
        assert_eq!(f.to_slow(0.1).scale, TimeScale::Slow);
        assert!((f.to_slow(0.1).value - 2.0).abs() < 1e-12);
        assert!((f.to_slow(0.1).to_fast(0.1).value - 0.02).abs() < 1e-15);
        assert_eq!(f.to_fast(0.1), f);
    }

    #[test]
    fn finite_differences_match_tangent() {
        let m = burgers(12);
        let eps = 0.2;
        let p = SimParams::new(&m, eps * eps, eps * eps, eps, 1.0).with_dt(0.02);
        let spec = NoiseSpec::uniform(12, 1.0, 21, 4).unwrap();
        let u0 = m.unit(0).scaled(2.0 * eps).lin_comb(1.0, &m.unit(2), eps * eps).unwrap();
        let v0 = field(&m, |k| 1.0 / (k + 1) as f64);
        let v0 = v0.scaled(1.0 / v0.norm());
        let steps = 500;
        let run = |start: &SpectralField| {
            let mut src = p.noise(&m, &spec).unwrap();
            crate::spde::simulate_fast(&m, &p, &mut src, start, steps, steps).unwrap().values[1].clone()
        };
        let mut src = p.noise(&m, &spec).unwrap();
        let prop = integrate_propagator(&m, &p, &mut src, &u0, steps, |_, _, _| {}).unwrap();
        let v = &prop.matrix * DVector::from_column_slice(v0.coeffs());
        let base = run(&u0);
        let mut errs = Vec::new();
        for h in [1e-3, 1e-4] {
            let pert = run(&u0.lin_comb(1.0, &v0, h).unwrap());
            let e: f64 = (0..12).map(|k| ((pert[k] - base[k]) / h - v[k]).powi(2)).sum::<f64>().sqrt();
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 5.0, "{errs:?}");
    }

    #[test]
    fn propagator_replay_matches_direct_integration() {
        let m = burgers(8);
        let eps = 0.2;
        let p = SimParams::new(&m, eps * eps, eps * eps, eps, 0.1).with_subsample(10);
        let spec = NoiseSpec::uniform(8, 1.0, 2, 9).unwrap();
        let traj = crate::spde::simulate(&m, &p, &spec, &m.unit(0).scaled(eps)).unwrap();
        let t_fast = 0.05 / (eps * eps);
        let a = propagator(&m, &p, &spec, &traj, t_fast).unwrap();
        let mut src = KeyedNoise::new(&spec, &p.rates(&m), p.dt).unwrap();
        let b = integrate_propagator(&m, &p, &mut src, &traj.u0, p.fast_steps(0.05), |_, _, _| {}).unwrap();
        assert_eq!(a, b);
        assert!(matches!(propagator(&m, &p, &spec, &traj, 1.0 / (eps * eps)), Err(Error::InsufficientPath { .. })));
    }
}
