//! Exponential-Euler integration of `du = [Au + νu + B(u,u)]dt + σ dW` on
//! the fast time scale, with the slow-scale split `u = εU_c + ε²U_s`.

use log::warn;

use crate::error::{Error, Result};
use crate::noise::{KeyedNoise, NoiseKey, NoiseSource, NoiseSpec, SampledPath, StepNoise};
use crate::spectral::{norm, ModelSpec, SpectralField};

/// Default bound `C` on `|ν|ε⁻²` and `σε⁻²`.
pub const DEFAULT_SCALING_BOUND: f64 = 10.0;
/// `‖u‖_X` above which a run is declared blown up.
pub const BLOWUP_THRESHOLD: f64 = 1e6;

/// Largest fast step used by default.
pub const DEFAULT_DT_MAX: f64 = 0.01;

/// Default fast step: resolve the slowest stable mode and cap at
/// [`DEFAULT_DT_MAX`]; the exponential scheme needs no stiffness limit.
pub fn default_dt(model: &ModelSpec) -> f64 {
    (0.05 / model.mu()).min(DEFAULT_DT_MAX)
}

/// `φ₁(z) = (eᶻ − 1)/z` with `φ₁(0) = 1`.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 + 0.5 * z
    } else {
        z.exp_m1() / z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimParams {
    pub nu: f64,
    pub sigma: f64,
    pub eps: f64,
    /// Slow-time horizon `T₀`.
    pub horizon: f64,
    /// Fast-time step.
    pub dt: f64,
    pub r_c: f64,
    pub kappa: f64,
    /// Store every `subsample`-th fast step.
    pub subsample: usize,
    pub bound: f64,
}

impl SimParams {
    pub fn new(model: &ModelSpec, nu: f64, sigma: f64, eps: f64, horizon: f64) -> Self {
        Self {
            nu,
            sigma,
            eps,
            horizon,
            dt: default_dt(model),
            r_c: 10.0,
            kappa: 0.2,
            subsample: 1,
            bound: DEFAULT_SCALING_BOUND,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_subsample(mut self, every: usize) -> Self {
        self.subsample = every;
        self
    }

    pub fn with_stopping(mut self, r_c: f64, kappa: f64) -> Self {
        self.r_c = r_c;
        self.kappa = kappa;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            bad.push(format!("ε = {} not in (0, 1]", self.eps));
        }
        if !(self.dt > 0.0) {
            bad.push(format!("dt = {} must be positive", self.dt));
        }
        if !(self.horizon > 0.0) {
            bad.push(format!("horizon = {} must be positive", self.horizon));
        }
        if !(self.sigma >= 0.0) {
            bad.push(format!("σ = {} must be non-negative", self.sigma));
        }
        if !(self.r_c > 0.0) {
            bad.push(format!("r_c = {} must be positive", self.r_c));
        }
        if !(self.kappa > 0.0 && self.kappa <= 0.2) {
            bad.push(format!("κ = {} not in (0, 0.2]", self.kappa));
        }
        if self.subsample == 0 {
            bad.push("subsample must be ≥ 1".into());
        }
        if self.eps > 0.0 {
            let e2 = self.eps * self.eps;
            if (self.nu / e2).abs() > self.bound {
                bad.push(format!("|ν|ε⁻² = {} exceeds C = {}", (self.nu / e2).abs(), self.bound));
            }
            if self.sigma / e2 > self.bound {
                bad.push(format!("σε⁻² = {} exceeds C = {}", self.sigma / e2, self.bound));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(bad.join("; ")))
        }
    }

    /// Number of fast steps covering slow time `t_slow`.
    pub fn fast_steps(&self, t_slow: f64) -> usize {
        (t_slow / (self.eps * self.eps * self.dt)).round() as usize
    }

    /// Slow-time length of one fast step.
    pub fn slow_dt(&self) -> f64 {
        self.eps * self.eps * self.dt
    }

    /// Per-mode linear rates `λ_k − ν` seen by the noise.
    pub fn rates(&self, model: &ModelSpec) -> Vec<f64> {
        model.eigenvalues().iter().map(|l| l - self.nu).collect()
    }

    pub fn noise(&self, model: &ModelSpec, spec: &NoiseSpec) -> Result<KeyedNoise> {
        KeyedNoise::new(spec, &self.rates(model), self.dt)
    }
}

/// Precomputed exponential-Euler step for one `(model, ν, σ, dt)`.
#[derive(Clone, Debug)]
pub struct ExpEuler<'m> {
    model: &'m ModelSpec,
    decay: Vec<f64>,
    phi_dt: Vec<f64>,
    sigma: f64,
    buf: Vec<f64>,
}

impl<'m> ExpEuler<'m> {
    pub fn new(model: &'m ModelSpec, nu: f64, sigma: f64, dt: f64) -> Self {
        let z: Vec<f64> = model.eigenvalues().iter().map(|l| (nu - l) * dt).collect();
        Self {
            model,
            decay: z.iter().map(|z| z.exp()).collect(),
            phi_dt: z.iter().map(|&z| phi1(z) * dt).collect(),
            sigma,
            buf: vec![0.0; model.n()],
        }
    }

    pub fn from_params(model: &'m ModelSpec, p: &SimParams) -> Self {
        Self::new(model, p.nu, p.sigma, p.dt)
    }

    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    pub fn phi_dt(&self) -> &[f64] {
        &self.phi_dt
    }

    /// Advance `u` in place; returns `false` on blowup or non-finite state.
    pub fn step(&mut self, u: &mut [f64], noise: &StepNoise) -> bool {
        self.model.coupling().apply_square(u, &mut self.buf);
        for (k, x) in u.iter_mut().enumerate() {
            *x = self.decay[k] * *x + self.phi_dt[k] * self.buf[k] + self.sigma * noise.ou[k];
        }
        let r = norm(u);
        r.is_finite() && r <= BLOWUP_THRESHOLD
    }
}

/// One exponential-Euler step at fast time `t`.
pub fn step_exponential(
    model: &ModelSpec,
    params: &SimParams,
    t: f64,
    u: &SpectralField,
    noise: &StepNoise,
) -> Result<SpectralField> {
    model.check(u)?;
    if !u.is_finite() {
        return Err(Error::InvalidParameter("state is not finite".into()));
    }
    let mut next = u.clone();
    let mut s = ExpEuler::from_params(model, params);
    if !s.step(next.coeffs_mut(), noise) {
        return Err(Error::Blowup { time: t + params.dt });
    }
    Ok(next)
}

/// `(U_c, U_s) = (P_c u / ε, P_s u / ε²)`.
pub fn decompose_slow(model: &ModelSpec, u: &SpectralField, eps: f64) -> Result<(SpectralField, SpectralField)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("ε = {eps} must be positive")));
    }
    let uc = model.project_c(u)?.scaled(1.0 / eps);
    let us = model.project_s(u)?.scaled(1.0 / (eps * eps));
    Ok((uc, us))
}

/// `u = εU_c + ε²U_s`.
pub fn reconstruct_fast(uc: &SpectralField, us: &SpectralField, eps: f64) -> Result<SpectralField> {
    uc.lin_comb(eps, us, eps * eps)
}

/// Stored slow-scale states of one SPDE run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub eps: f64,
    pub dt_fast: f64,
    pub subsample: usize,
    /// Slow times of the stored states.
    pub times: Vec<f64>,
    /// First slow time with `‖U_c‖ ≥ r_c` or `‖U_s‖ ≥ ε^{−κ}`; `∞` if never.
    pub tau_star: f64,
    /// Slow time of blowup, if the run was cut short.
    pub blowup: Option<f64>,
    pub key: NoiseKey,
    pub u0: SpectralField,
    n: usize,
    kdim: usize,
    uc: Vec<f64>,
    us: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Kernel coordinates of `U_c` at stored index `i`.
    pub fn uc(&self, i: usize) -> &[f64] {
        &self.uc[i * self.kdim..(i + 1) * self.kdim]
    }

    /// All coefficients of `U_s` at stored index `i`.
    pub fn us(&self, i: usize) -> &[f64] {
        &self.us[i * self.n..(i + 1) * self.n]
    }

    pub fn modes(&self) -> usize {
        self.n
    }

    pub fn kernel_dim(&self) -> usize {
        self.kdim
    }

    /// Stored spacing in slow time.
    pub fn slow_spacing(&self) -> f64 {
        self.eps * self.eps * self.dt_fast * self.subsample as f64
    }

    /// Fast state `εU_c + ε²U_s` at stored index `i`.
    pub fn fast_state(&self, model: &ModelSpec, i: usize) -> SpectralField {
        let mut u: Vec<f64> = self.us(i).iter().map(|x| x * self.eps * self.eps).collect();
        for (&k, &x) in model.kernel_modes().iter().zip(self.uc(i)) {
            u[k] = self.eps * x;
        }
        SpectralField::new(model.basis(), u)
    }

    /// Number of stored points with time `≤ t` (at least one).
    pub fn points_until(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t + 1e-12).max(1)
    }
}

fn warn_initial_scaling(model: &ModelSpec, u0: &SpectralField, eps: f64) {
    let pc = model.project_c(u0).map(|f| f.norm()).unwrap_or(0.0);
    let ps = model.project_s(u0).map(|f| f.norm()).unwrap_or(0.0);
    if pc > 10.0 * eps || ps > 10.0 * eps * eps {
        warn!(
            "initial condition outside the O(ε)/O(ε²) regime: ‖P_c u0‖/ε = {:.3}, ‖P_s u0‖/ε² = {:.3}",
            pc / eps,
            ps / (eps * eps)
        );
    }
}

/// Integrate over slow time `[0, horizon]`, storing every `subsample` steps.
///
/// A blowup ends the run early; the returned trajectory is truncated and
/// carries the blowup time.
pub fn simulate(model: &ModelSpec, params: &SimParams, noise: &NoiseSpec, u0: &SpectralField) -> Result<Trajectory> {
    params.validate()?;
    model.check(u0)?;
    if noise.alphas.len() != model.n() {
        return Err(Error::DimensionMismatch { expected: model.n(), got: noise.alphas.len() });
    }
    warn_initial_scaling(model, u0, params.eps);

    let n = model.n();
    let kdim = model.kernel_dim();
    let eps = params.eps;
    let steps = params.fast_steps(params.horizon);
    let stored = steps / params.subsample + 2;
    let mut traj = Trajectory {
        eps,
        dt_fast: params.dt,
        subsample: params.subsample,
        times: Vec::with_capacity(stored),
        tau_star: f64::INFINITY,
        blowup: None,
        key: noise.key,
        u0: u0.clone(),
        n,
        kdim,
        uc: Vec::with_capacity(stored * kdim),
        us: Vec::with_capacity(stored * n),
    };
    let us_limit = eps.powf(-params.kappa);
    let mut u = u0.coeffs().to_vec();
    let mut src = params.noise(model, noise)?;
    let mut stepper = ExpEuler::from_params(model, params);
    let mut buf = StepNoise::zeros(n);

    let record = |traj: &mut Trajectory, u: &[f64], t_slow: f64, store: bool| {
        let uc_norm = model.kernel_modes().iter().map(|&k| u[k] * u[k]).sum::<f64>().sqrt() / eps;
        let mut us_sq = 0.0;
        for &k in model.stable_modes() {
            us_sq += u[k] * u[k];
        }
        let us_norm = us_sq.sqrt() / (eps * eps);
        if traj.tau_star.is_infinite() && (uc_norm >= params.r_c || us_norm >= us_limit) {
            traj.tau_star = t_slow;
        }
        if store {
            traj.times.push(t_slow);
            traj.uc.extend(model.kernel_modes().iter().map(|&k| u[k] / eps));
            traj.us.extend(u.iter().enumerate().map(|(k, &x)| if model.is_kernel(k) { 0.0 } else { x / (eps * eps) }));
        }
    };

    record(&mut traj, &u, 0.0, true);
    for step in 0..steps {
        src.draw(step as u64, &mut buf);
        let ok = stepper.step(&mut u, &buf);
        let t_slow = (step + 1) as f64 * params.slow_dt();
        if !ok {
            traj.blowup = Some(t_slow);
            if traj.tau_star.is_infinite() {
                traj.tau_star = t_slow;
            }
            break;
        }
        let store = (step + 1) % params.subsample == 0 || step + 1 == steps;
        record(&mut traj, &u, t_slow, store);
    }
    Ok(traj)
}

/// Fast-scale integration storing `u` itself every `every` steps.
pub fn simulate_fast<S: NoiseSource>(
    model: &ModelSpec,
    params: &SimParams,
    noise: &mut S,
    u0: &SpectralField,
    steps: usize,
    every: usize,
) -> Result<SampledPath> {
    model.check(u0)?;
    let every = every.max(1);
    let mut stepper = ExpEuler::new(model, params.nu, params.sigma, noise.dt());
    let mut u = u0.coeffs().to_vec();
    let mut buf = StepNoise::zeros(model.n());
    let mut values = vec![u.clone()];
    for step in 0..steps {
        noise.draw(step as u64, &mut buf);
        if !stepper.step(&mut u, &buf) {
            return Err(Error::Blowup { time: (step + 1) as f64 * noise.dt() });
        }
        if (step + 1) % every == 0 {
            values.push(u.clone());
        }
    }
    Ok(SampledPath { dt: noise.dt() * every as f64, values })
}
