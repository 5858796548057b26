//! Experiments comparing SPDE runs with the amplitude equation: residuals of
//! the Itô reduction, pathwise approximation errors, FTLE gaps and the sign
//! statistics of the exponents in the four scaling regimes.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amplitude::{
    ae_deterministic_ftle, ae_fundamental, ae_log_growth, ae_simulate_with, bernoulli_ftle, kernel_noise,
    AmplitudeParams, AmplitudePath, CubicForm,
};
use crate::error::{Error, Result};
use crate::noise::{KeyedNoise, NoiseSource, NoiseSpec, StepNoise};
use crate::spde::{simulate, SimParams, Trajectory};
use crate::spectral::{norm, ModelSpec};
use crate::stats::{loglog_slope, wilson, Proportion, SlopeFit, Summary};
use crate::tangent::{integrate_propagator, largest_singular_value, Ftle, Propagator};

/// Slack on the FTLE gap inequalities for rounding in the norms.
pub const GAP_TOLERANCE: f64 = 1e-9;
/// Relative change of `sup|R₂|` under halved resolution that triggers a warning.
pub const ITO_REFINEMENT_WARN: f64 = 0.1;
/// Number of profile samples of `‖V_s‖` recorded per tangent run.
pub const PROFILE_POINTS: usize = 64;

/// `R₂` and `R₁` of the Itô reduction at the stored times of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoResidual {
    pub times: Vec<f64>,
    dim: usize,
    r2: Vec<f64>,
    r1: Vec<f64>,
    /// Relative change of `sup|R₂|` when every other stored point is dropped.
    pub refinement: f64,
}

impl ItoResidual {
    pub fn r2(&self, i: usize) -> &[f64] {
        &self.r2[i * self.dim..(i + 1) * self.dim]
    }

    pub fn r1(&self, i: usize) -> &[f64] {
        &self.r1[i * self.dim..(i + 1) * self.dim]
    }

    /// `sup ‖R₂‖` over stored times `≤ t_max`.
    pub fn sup_r2(&self, t_max: f64) -> f64 {
        self.sup(&self.r2, t_max)
    }

    pub fn sup_r1(&self, t_max: f64) -> f64 {
        self.sup(&self.r1, t_max)
    }

    fn sup(&self, series: &[f64], t_max: f64) -> f64 {
        self.times
            .iter()
            .take_while(|&&t| t <= t_max + 1e-12)
            .enumerate()
            .map(|(i, _)| norm(&series[i * self.dim..(i + 1) * self.dim]))
            .fold(0.0, f64::max)
    }
}

/// Integrands `B_c(U_c,U_s) − F_c(U_c)` and `ε B_c(U_s,U_s)` at stored point `i`.
fn ito_integrands(
    model: &ModelSpec,
    cubic: &CubicForm,
    traj: &Trajectory,
    i: usize,
    buf: &mut Vec<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let n = model.n();
    let mut uc = vec![0.0; n];
    for (&k, &x) in model.kernel_modes().iter().zip(traj.uc(i)) {
        uc[k] = x;
    }
    let us = traj.us(i);
    buf.resize(n, 0.0);
    model.coupling().apply(&uc, us, buf);
    let mixed = model.kernel_coords(buf);
    model.coupling().apply_square(us, buf);
    let quad = model.kernel_coords(buf);
    let f = cubic.eval(traj.uc(i));
    let g2 = mixed.iter().zip(&f).map(|(b, f)| b - f).collect();
    let g1 = quad.iter().map(|b| traj.eps * b).collect();
    (g2, g1)
}

fn cumulative_trapezoid(dt: Vec<f64>, values: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    for i in 1..values.len() {
        for k in 0..dim {
            acc[k] += 0.5 * dt[i - 1] * (values[i - 1][k] + values[i][k]);
        }
        out.extend_from_slice(&acc);
    }
    out
}

/// `R₂(T) = ∫₀ᵀ [B_c(U_c,U_s) − F_c(U_c)] dS` and `R₁(T) = ε∫₀ᵀ B_c(U_s,U_s) dS`
/// by the trapezoidal rule on the stored grid.
pub fn ito_residual(model: &ModelSpec, cubic: &CubicForm, traj: &Trajectory) -> Result<ItoResidual> {
    if cubic.dim() != model.kernel_dim() || traj.kernel_dim() != model.kernel_dim() {
        return Err(Error::DimensionMismatch { expected: model.kernel_dim(), got: cubic.dim() });
    }
    let d = model.kernel_dim();
    let mut buf = Vec::new();
    let (g2, g1): (Vec<_>, Vec<_>) = (0..traj.len()).map(|i| ito_integrands(model, cubic, traj, i, &mut buf)).unzip();
    let dts: Vec<f64> = traj.times.windows(2).map(|w| w[1] - w[0]).collect();
    let r2 = cumulative_trapezoid(dts.clone(), &g2, d);
    let r1 = cumulative_trapezoid(dts, &g1, d);

    let idx: Vec<usize> = {
        let mut v: Vec<usize> = (0..traj.len()).step_by(2).collect();
        if v.last() != Some(&(traj.len() - 1)) {
            v.push(traj.len() - 1);
        }
        v
    };
    let coarse_vals: Vec<Vec<f64>> = idx.iter().map(|&i| g2[i].clone()).collect();
    let coarse_dt: Vec<f64> = idx.windows(2).map(|w| traj.times[w[1]] - traj.times[w[0]]).collect();
    let coarse = cumulative_trapezoid(coarse_dt, &coarse_vals, d);
    let fine_sup = idx.iter().map(|&i| norm(&r2[i * d..(i + 1) * d])).fold(0.0, f64::max);
    let coarse_sup = (0..idx.len()).map(|j| norm(&coarse[j * d..(j + 1) * d])).fold(0.0, f64::max);
    let refinement = if fine_sup > 0.0 { (fine_sup - coarse_sup).abs() / fine_sup } else { 0.0 };
    if refinement > ITO_REFINEMENT_WARN {
        warn!("Itô residual changes by {:.1}% under halved resolution; store states more often", 100.0 * refinement);
    }
    Ok(ItoResidual { times: traj.times.clone(), dim: d, r2, r1, refinement })
}

/// `sup ‖U_c(T) − a(T)‖` over stored times `≤ t_max`; both paths on the same grid.
pub fn approximation_error(traj: &Trajectory, ae: &AmplitudePath, t_max: f64) -> Result<f64> {
    if ae.len() != traj.len() {
        return Err(Error::DimensionMismatch { expected: traj.len(), got: ae.len() });
    }
    let mut sup = 0.0f64;
    for i in 0..traj.len() {
        if traj.times[i] > t_max + 1e-12 {
            break;
        }
        let d: Vec<f64> = traj.uc(i).iter().zip(ae.get(i)).map(|(x, y)| x - y).collect();
        sup = sup.max(norm(&d));
    }
    Ok(sup)
}

/// `sup ‖U_s − c·P_s Z‖` over stored times `≤ t_max` for `c = σε⁻²` and
/// `c = σ²ε⁻²`, with `Z` the stochastic convolution of the same noise under
/// the linear part `A + ν`.
pub fn stable_noise_residual(
    model: &ModelSpec,
    params: &SimParams,
    noise: &NoiseSpec,
    traj: &Trajectory,
    t_max: f64,
) -> Result<(f64, f64)> {
    let spec = NoiseSpec { key: traj.key, ..noise.clone() };
    let rates = params.rates(model);
    let decay: Vec<f64> = rates.iter().map(|r| (-r * params.dt).exp()).collect();
    let mut src = KeyedNoise::new(&spec, &rates, params.dt)?;
    let mut buf = StepNoise::zeros(model.n());
    let mut z = vec![0.0; model.n()];
    let e2 = params.eps * params.eps;
    let (c1, c2) = (params.sigma / e2, params.sigma * params.sigma / e2);
    let steps = params.fast_steps(params.horizon);
    let mut step = 0usize;
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for i in 0..traj.len() {
        if traj.times[i] > t_max + 1e-12 {
            break;
        }
        let target = (i * traj.subsample).min(steps);
        while step < target {
            src.draw(step as u64, &mut buf);
            for k in 0..z.len() {
                z[k] = decay[k] * z[k] + buf.ou[k];
            }
            step += 1;
        }
        let us = traj.us(i);
        let (mut a, mut b) = (0.0, 0.0);
        for &k in model.stable_modes() {
            a += (us[k] - c1 * z[k]).powi(2);
            b += (us[k] - c2 * z[k]).powi(2);
        }
        s1 = s1.max(a.sqrt());
        s2 = s2.max(b.sqrt());
    }
    Ok((s1, s2))
}

/// Error terms of the propagator against the amplitude linearization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCheck {
    pub lambda_spde: Ftle,
    pub lambda_ae: Ftle,
    pub k_x: f64,
    pub k_n: f64,
    pub upper_holds: bool,
    /// Whether `K_N e^{−Tλ^a} < 1/2`, the condition for the lower bound.
    pub lower_checked: bool,
    pub lower_holds: bool,
}

/// Compare the propagator `M` over slow time `t` with the fundamental matrix
/// `Φ` of the linearized amplitude equation embedded on the kernel.
pub fn ftle_gap(model: &ModelSpec, prop: &Propagator, phi: &DMatrix<f64>, eps: f64, t: f64) -> Result<GapCheck> {
    let kernel = model.kernel_modes();
    if phi.nrows() != kernel.len() || phi.ncols() != kernel.len() {
        return Err(Error::DimensionMismatch { expected: kernel.len(), got: phi.nrows() });
    }
    let mut diff = prop.matrix.clone();
    for (i, &r) in kernel.iter().enumerate() {
        for (j, &c) in kernel.iter().enumerate() {
            diff[(r, c)] -= phi[(i, j)];
        }
    }
    let k_x = largest_singular_value(&diff)?;
    let k_n = largest_singular_value(&diff.select_columns(kernel))?;
    let lambda_spde = prop.ftle()?.to_slow(eps);
    let lambda_ae = Ftle::slow(largest_singular_value(phi)?.ln() / t);
    let gap = lambda_spde.value - lambda_ae.value;
    let damp = (-t * lambda_ae.value).exp();
    let upper_holds = gap <= k_x * damp / t + GAP_TOLERANCE;
    let x = k_n * damp;
    let lower_checked = x < 0.5;
    let lower_holds = !lower_checked || gap >= -x / (1.0 - x) / t - GAP_TOLERANCE;
    Ok(GapCheck { lambda_spde, lambda_ae, k_x, k_n, upper_holds, lower_checked, lower_holds })
}

/// Two-component fit `‖V_s(t)‖ ≈ C e^{−rate·t} + tail`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted decay rate in fast units.
    pub rate: f64,
    pub amplitude: f64,
    pub tail: f64,
    pub points: usize,
}

/// Fit a `‖V_s‖` profile sampled at fast times; the tail is the supremum
/// after `t_transient`, the rate a log-linear fit of the excess before it.
pub fn vs_decay_profile(profile: &[(f64, f64)], t_transient: f64) -> Result<DecayFit> {
    let tail = profile.iter().filter(|p| p.0 >= t_transient).map(|p| p.1).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .filter(|p| p.0 < t_transient && p.1 - tail > 10.0 * tail && p.1 - tail > 1e-300)
        .map(|p| (p.0, (p.1 - tail).ln()))
        .collect();
    if pts.len() < 3 {
        return Ok(DecayFit { rate: f64::NAN, amplitude: 0.0, tail, points: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::FitFailed("profile times coincide".into()));
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    Ok(DecayFit { rate: -slope, amplitude: (my - slope * mx).exp(), tail, points: pts.len() })
}

/// `T_ε = factor · ε² |ln ε| / μ` in slow time.
pub fn transient_time(eps: f64, mu: f64, factor: f64) -> f64 {
    factor * eps * eps * eps.ln().abs() / mu
}

/// Everything needed to measure one member of an ensemble.
#[derive(Clone, Debug)]
pub struct PathSetup {
    pub model: ModelSpec,
    pub cubic: CubicForm,
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub params: SimParams,
    /// Slow-time FTLE window `T ≤ T₀`.
    pub window: f64,
    /// `U_c(0)` in kernel coordinates; `U_s(0) = 0`.
    pub a0: Vec<f64>,
    /// Amplitude initial condition if different from `a0`.
    pub ae_a0: Option<Vec<f64>>,
    /// Drive the amplitude equation with a different stream.
    pub ae_stream_offset: Option<u64>,
    pub transient_factor: f64,
    /// End the error windows at `τ*` instead of `T₀`.
    pub stop_at_tau: bool,
}

/// Per-path results of [`measure_path`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMeasurement {
    pub stream: u64,
    pub eps: f64,
    pub approx_error: f64,
    pub r2_sup: f64,
    pub r1_sup: f64,
    pub ito_refinement: f64,
    pub us_residual_sigma: f64,
    pub us_residual_sigma2: f64,
    pub window: f64,
    pub lambda_spde: Ftle,
    pub lambda_ae: Ftle,
    /// `|λ^u_{Tε⁻²} − ε²λ^a_T|`, fast units.
    pub ftle_gap: f64,
    pub k_x: f64,
    pub k_n: f64,
    pub upper_holds: bool,
    pub lower_checked: bool,
    pub lower_holds: bool,
    /// `sup ‖P_s M‖` over `[T_ε, T]`.
    pub vs_tail: f64,
    /// `sup ‖P_c M‖` over `[0, T]`.
    pub vc_sup: f64,
    pub tau_star: Option<f64>,
    pub blowup: bool,
    #[serde(skip)]
    pub vs_profile: Vec<(f64, f64)>,
}

impl PathMeasurement {
    fn failed(stream: u64, eps: f64, window: f64, tau: Option<f64>) -> Self {
        Self {
            stream,
            eps,
            approx_error: f64::NAN,
            r2_sup: f64::NAN,
            r1_sup: f64::NAN,
            ito_refinement: f64::NAN,
            us_residual_sigma: f64::NAN,
            us_residual_sigma2: f64::NAN,
            window,
            lambda_spde: Ftle::slow(f64::NAN),
            lambda_ae: Ftle::slow(f64::NAN),
            ftle_gap: f64::NAN,
            k_x: f64::NAN,
            k_n: f64::NAN,
            upper_holds: false,
            lower_checked: false,
            lower_holds: false,
            vs_tail: f64::NAN,
            vc_sup: f64::NAN,
            tau_star: tau,
            blowup: true,
            vs_profile: Vec::new(),
        }
    }

    pub fn metric(&self, m: Metric) -> f64 {
        match m {
            Metric::ApproxError => self.approx_error,
            Metric::ItoR2 => self.r2_sup,
            Metric::ItoR1 => self.r1_sup,
            Metric::FtleGap => self.ftle_gap,
            Metric::KX => self.k_x,
            Metric::KN => self.k_n,
            Metric::VsTail => self.vs_tail,
            Metric::VcSup => self.vc_sup,
            Metric::UsResidualSigma => self.us_residual_sigma,
            Metric::UsResidualSigma2 => self.us_residual_sigma2,
        }
    }
}

/// Run SPDE, amplitude equation and tangent system for one stream.
pub fn measure_path(setup: &PathSetup, stream: u64) -> Result<PathMeasurement> {
    let PathSetup { model, cubic, params, .. } = setup;
    let eps = params.eps;
    if !(setup.window > 0.0 && setup.window <= params.horizon + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "FTLE window {} must lie in (0, T₀ = {}]",
            setup.window, params.horizon
        )));
    }
    let spec = NoiseSpec::new(setup.alphas.clone(), setup.seed, stream)?;
    let u0 = model.embed_kernel(&setup.a0.iter().map(|a| a * eps).collect::<Vec<_>>())?;
    let traj = simulate(model, params, &spec, &u0)?;
    let tau = traj.tau_star.is_finite().then_some(traj.tau_star);
    if traj.blowup.is_some() {
        return Ok(PathMeasurement::failed(stream, eps, setup.window, tau));
    }

    let ap = AmplitudeParams::from_sim(params);
    let ae_spec = match setup.ae_stream_offset {
        Some(off) => spec.with_stream(stream.wrapping_add(off)),
        None => spec.clone(),
    };
    let mut ae_src = kernel_noise(model, params, &ae_spec)?;
    let steps = params.fast_steps(params.horizon);
    let ae_a0 = setup.ae_a0.as_deref().unwrap_or(&setup.a0);
    let ae_full = match ae_simulate_with(cubic, model, &ap, &mut ae_src, ae_a0, steps, 1) {
        Ok(p) => p,
        Err(Error::Blowup { .. }) => return Ok(PathMeasurement::failed(stream, eps, setup.window, tau)),
        Err(e) => return Err(e),
    };
    let ae = ae_full.subsampled(params.subsample);

    let t_stop = if setup.stop_at_tau { traj.tau_star.min(params.horizon) } else { params.horizon };
    let approx_error = approximation_error(&traj, &ae, t_stop)?;
    let ito = ito_residual(model, cubic, &traj)?;
    let (us_residual_sigma, us_residual_sigma2) = stable_noise_residual(model, params, &spec, &traj, t_stop)?;

    let window_steps = params.fast_steps(setup.window);
    let t_window = window_steps as f64 * params.slow_dt();
    let t_transient = transient_time(eps, model.mu(), setup.transient_factor) / (eps * eps);
    let every = (window_steps / PROFILE_POINTS).max(1);
    let mut profile = Vec::new();
    let mut vc_sup = 0.0f64;
    let mut src = params.noise(model, &spec)?;
    let dt = params.dt;
    let kernel = model.kernel_modes().to_vec();
    let prop = integrate_propagator(model, params, &mut src, &u0, window_steps, |step, _, m| {
        if step % every != 0 && step != window_steps {
            return;
        }
        let mut stable = m.clone();
        for &k in &kernel {
            stable.row_mut(k).fill(0.0);
        }
        let vs = largest_singular_value(&stable).unwrap_or(f64::NAN);
        let vc = largest_singular_value(&m.select_rows(&kernel)).unwrap_or(f64::NAN);
        vc_sup = vc_sup.max(vc);
        profile.push((step as f64 * dt, vs));
    });
    let prop = match prop {
        Ok(p) => p,
        Err(Error::Blowup { .. }) => return Ok(PathMeasurement::failed(stream, eps, setup.window, tau)),
        Err(e) => return Err(e),
    };
    let phi = if cubic.dim() == 1 {
        let g = ae_log_growth(cubic, ap.linear, &ae_full.until(t_window))?;
        DMatrix::from_element(1, 1, g.last().copied().unwrap_or(0.0).exp())
    } else {
        ae_fundamental(cubic, ap.linear, &ae_full, window_steps)
    };
    let gap = ftle_gap(model, &prop, &phi, eps, t_window)?;
    let vs_tail = profile.iter().filter(|p| p.0 >= t_transient).map(|p| p.1).fold(0.0, f64::max);

    Ok(PathMeasurement {
        stream,
        eps,
        approx_error,
        r2_sup: ito.sup_r2(t_stop),
        r1_sup: ito.sup_r1(t_stop),
        ito_refinement: ito.refinement,
        us_residual_sigma,
        us_residual_sigma2,
        window: t_window,
        lambda_spde: gap.lambda_spde,
        lambda_ae: gap.lambda_ae,
        ftle_gap: (gap.lambda_spde.to_fast(eps).value - gap.lambda_ae.to_fast(eps).value).abs(),
        k_x: gap.k_x,
        k_n: gap.k_n,
        upper_holds: gap.upper_holds,
        lower_checked: gap.lower_checked,
        lower_holds: gap.lower_holds,
        vs_tail,
        vc_sup,
        tau_star: tau,
        blowup: false,
        vs_profile: profile,
    })
}

/// Measure `paths` streams starting at `first_stream`, in stream order.
pub fn run_ensemble(setup: &PathSetup, first_stream: u64, paths: usize) -> Result<Vec<PathMeasurement>> {
    (0..paths as u64).into_par_iter().map(|p| measure_path(setup, first_stream + p)).collect()
}

/// Scalar error metrics reported by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ApproxError,
    ItoR2,
    ItoR1,
    FtleGap,
    KX,
    KN,
    VsTail,
    VcSup,
    UsResidualSigma,
    UsResidualSigma2,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::ApproxError,
        Metric::ItoR2,
        Metric::ItoR1,
        Metric::FtleGap,
        Metric::KX,
        Metric::KN,
        Metric::VsTail,
        Metric::VcSup,
        Metric::UsResidualSigma,
        Metric::UsResidualSigma2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::ApproxError => "approx_error",
            Metric::ItoR2 => "ito_r2",
            Metric::ItoR1 => "ito_r1",
            Metric::FtleGap => "ftle_gap",
            Metric::KX => "k_x",
            Metric::KN => "k_n",
            Metric::VsTail => "vs_tail",
            Metric::VcSup => "vc_sup",
            Metric::UsResidualSigma => "us_residual_sigma",
            Metric::UsResidualSigma2 => "us_residual_sigma2",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown metric {s:?}")))
    }
}

/// Ensemble statistics of one metric across the ε grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub metric: Metric,
    pub per_eps: Vec<Option<Summary>>,
    pub fit: Option<SlopeFit>,
}

/// Bound-violation counts at one ε.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub eps: f64,
    pub paths: usize,
    pub blowups: usize,
    pub stopped: usize,
    pub upper_violations: usize,
    pub lower_checked: usize,
    pub lower_violations: usize,
}

impl GapReport {
    pub fn from_samples(eps: f64, samples: &[PathMeasurement], horizon: f64) -> Self {
        let ok: Vec<&PathMeasurement> = samples.iter().filter(|s| !s.blowup).collect();
        Self {
            eps,
            paths: samples.len(),
            blowups: samples.len() - ok.len(),
            stopped: samples.iter().filter(|s| s.tau_star.is_some_and(|t| t <= horizon)).count(),
            upper_violations: ok.iter().filter(|s| !s.upper_holds).count(),
            lower_checked: ok.iter().filter(|s| s.lower_checked).count(),
            lower_violations: ok.iter().filter(|s| s.lower_checked && !s.lower_holds).count(),
        }
    }

    pub fn upper_rate(&self) -> f64 {
        self.upper_violations as f64 / (self.paths - self.blowups).max(1) as f64
    }

    pub fn lower_rate(&self) -> f64 {
        if self.lower_checked == 0 {
            0.0
        } else {
            self.lower_violations as f64 / self.lower_checked as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub eps: Vec<f64>,
    pub series: Vec<MetricSeries>,
    pub gaps: Vec<GapReport>,
    pub samples: Vec<PathMeasurement>,
}

impl SweepResult {
    pub fn series(&self, m: Metric) -> Option<&MetricSeries> {
        self.series.iter().find(|s| s.metric == m)
    }

    pub fn slope(&self, m: Metric) -> Option<f64> {
        self.series(m).and_then(|s| s.fit).map(|f| f.slope)
    }
}

/// Summaries and log-log slope fits from per-ε ensembles; needs ≥ 3 ε values.
pub fn summarize_sweep(groups: Vec<(f64, Vec<PathMeasurement>)>, horizon: f64) -> Result<SweepResult> {
    if groups.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "a sweep needs at least 3 ε values for a slope fit, got {}",
            groups.len()
        )));
    }
    let eps: Vec<f64> = groups.iter().map(|g| g.0).collect();
    let series = Metric::ALL
        .into_iter()
        .map(|metric| {
            let per_eps: Vec<Option<Summary>> = groups
                .iter()
                .map(|(_, s)| Summary::of(&s.iter().map(|p| p.metric(metric)).collect::<Vec<_>>()))
                .collect();
            let (x, y): (Vec<f64>, Vec<f64>) =
                eps.iter().zip(&per_eps).filter_map(|(e, s)| s.map(|s| (*e, s.median))).unzip();
            let fit = loglog_slope(&x, &y).ok();
            MetricSeries { metric, per_eps, fit }
        })
        .collect();
    let gaps = groups.iter().map(|(e, s)| GapReport::from_samples(*e, s, horizon)).collect();
    let samples = groups.into_iter().flat_map(|g| g.1).collect();
    Ok(SweepResult { eps, series, gaps, samples })
}

/// Sweep over several setups (one per ε) with `paths` streams each.
pub fn sweep(setups: &[PathSetup], paths: usize) -> Result<SweepResult> {
    if setups.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "a sweep needs at least 3 ε values for a slope fit, got {}",
            setups.len()
        )));
    }
    let horizon = setups[0].params.horizon;
    let mut groups = Vec::with_capacity(setups.len());
    for s in setups {
        groups.push((s.params.eps, run_ensemble(s, 0, paths)?));
    }
    summarize_sweep(groups, horizon)
}

/// The four scalings of `(ν, σ)` against ε.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeCase {
    /// `ν = σ = ε²`.
    Unstable,
    /// `−ν = σ = ε²`.
    Stable,
    /// `ν = ε²`, `σ = ε³`; amplitude equation without noise.
    Deterministic,
    /// `ν = 0`, `σ = ε²`; `a₀` drawn from a long amplitude run.
    Ergodic,
}

impl RegimeCase {
    pub const ALL: [RegimeCase; 4] =
        [RegimeCase::Unstable, RegimeCase::Stable, RegimeCase::Deterministic, RegimeCase::Ergodic];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeCase::Unstable => "unstable",
            RegimeCase::Stable => "stable",
            RegimeCase::Deterministic => "deterministic",
            RegimeCase::Ergodic => "ergodic",
        }
    }

    /// `(ν, σ)` at scale ε.
    pub fn scaling(self, eps: f64) -> (f64, f64) {
        let e2 = eps * eps;
        match self {
            RegimeCase::Unstable => (e2, e2),
            RegimeCase::Stable => (-e2, e2),
            RegimeCase::Deterministic => (e2, e2 * eps),
            RegimeCase::Ergodic => (0.0, e2),
        }
    }

    /// Whether the case carries asserted thresholds.
    pub fn is_exploratory(self) -> bool {
        matches!(self, RegimeCase::Deterministic | RegimeCase::Ergodic)
    }
}

impl fmt::Display for RegimeCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimeCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeCase::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown regime case {s:?}")))
    }
}

/// Inputs of a regime study.
#[derive(Clone, Debug)]
pub struct RegimeSetup {
    pub case: RegimeCase,
    pub model: ModelSpec,
    pub cubic: CubicForm,
    pub alphas: Vec<f64>,
    pub seed: u64,
    /// `ν, σ` are overwritten from the case.
    pub params: SimParams,
    /// Slow-time FTLE horizon.
    pub horizon: f64,
    pub a0: Vec<f64>,
    /// Slow burn-in for the ergodic case.
    pub burn_in: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSample {
    pub stream: u64,
    pub a0: f64,
    pub lambda_spde: Ftle,
    pub lambda_ae: Ftle,
    pub blowup: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub case: RegimeCase,
    pub eps: f64,
    pub nu: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub spde_positive: Proportion,
    pub spde_negative: Proportion,
    pub ae_positive: Proportion,
    pub ae_negative: Proportion,
    /// Largest amplitude exponent on the ensemble (slow units).
    pub ae_max: f64,
    /// `|RK4 − closed form|` of the noise-free amplitude exponent.
    pub deterministic_error: Option<f64>,
    pub samples: Vec<RegimeSample>,
}

const BURN_IN_STREAM: u64 = 1 << 40;

fn regime_sample(setup: &RegimeSetup, params: &SimParams, stream: u64) -> Result<RegimeSample> {
    let RegimeSetup { model, cubic, .. } = setup;
    let eps = params.eps;
    let spec = NoiseSpec::new(setup.alphas.clone(), setup.seed, stream)?;
    let mut ap = AmplitudeParams::from_sim(params);
    let mut a0 = setup.a0.clone();
    if setup.case == RegimeCase::Ergodic {
        let burn = params.fast_steps(setup.burn_in);
        let mut src = kernel_noise(model, params, &spec.with_stream(stream.wrapping_add(BURN_IN_STREAM)))?;
        let path = ae_simulate_with(cubic, model, &ap, &mut src, &a0, burn, burn.max(1))?;
        a0 = path.get(path.len() - 1).to_vec();
    }
    if setup.case == RegimeCase::Deterministic {
        ap = ap.without_noise();
    }
    let u0 = model.embed_kernel(&a0.iter().map(|a| a * eps).collect::<Vec<_>>())?;
    let steps = params.fast_steps(setup.horizon);
    let mut src = params.noise(model, &spec)?;
    let prop = match integrate_propagator(model, params, &mut src, &u0, steps, |_, _, _| {}) {
        Ok(p) => p,
        Err(Error::Blowup { .. }) => {
            return Ok(RegimeSample {
                stream,
                a0: a0[0],
                lambda_spde: Ftle::slow(f64::NAN),
                lambda_ae: Ftle::slow(f64::NAN),
                blowup: true,
            })
        }
        Err(e) => return Err(e),
    };
    let lambda_spde = prop.ftle()?.to_slow(eps);
    let mut src = kernel_noise(model, params, &spec)?;
    let t = steps as f64 * params.slow_dt();
    let path = ae_simulate_with(cubic, model, &ap, &mut src, &a0, steps, 1)?;
    let lambda_ae = crate::amplitude::ftle_ae(cubic, ap.linear, &path.until(t))?;
    Ok(RegimeSample { stream, a0: a0[0], lambda_spde, lambda_ae, blowup: false })
}

/// Sign statistics of SPDE and amplitude exponents over `paths` streams.
pub fn regime_study(setup: &RegimeSetup, paths: usize) -> Result<RegimeReport> {
    if setup.model.kernel_dim() != 1 {
        return Err(Error::InvalidModel("regime studies need a one-dimensional kernel".into()));
    }
    let eps = setup.params.eps;
    let (nu, sigma) = setup.case.scaling(eps);
    let params = SimParams { nu, sigma, ..setup.params.clone() };
    params.validate()?;
    let samples: Vec<RegimeSample> =
        (0..paths as u64).into_par_iter().map(|s| regime_sample(setup, &params, s)).collect::<Result<_>>()?;
    let ok: Vec<&RegimeSample> = samples.iter().filter(|s| !s.blowup).collect();
    let count = |f: &dyn Fn(&RegimeSample) -> bool| ok.iter().filter(|s| f(s)).count();
    let n = ok.len();
    let deterministic_error = if setup.case == RegimeCase::Deterministic {
        let c = setup.cubic.scalar_coefficient().unwrap_or(0.0);
        let l = nu / (eps * eps);
        let (_, rk) = ae_deterministic_ftle(&setup.cubic, l, setup.a0[0], setup.horizon, 20_000)?;
        Some((rk.value - bernoulli_ftle(l, 2.0 * c, setup.a0[0], setup.horizon)).abs())
    } else {
        None
    };
    Ok(RegimeReport {
        case: setup.case,
        eps,
        nu,
        sigma,
        horizon: setup.horizon,
        spde_positive: wilson(count(&|s| s.lambda_spde.value > 0.0), n),
        spde_negative: wilson(count(&|s| s.lambda_spde.value < 0.0), n),
        ae_positive: wilson(count(&|s| s.lambda_ae.value > 0.0), n),
        ae_negative: wilson(count(&|s| s.lambda_ae.value < 0.0), n),
        ae_max: ok.iter().map(|s| s.lambda_ae.value).fold(f64::NEG_INFINITY, f64::max),
        deterministic_error,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{BilinearKind, CouplingTable};

    fn setup(eps: f64, n: usize) -> PathSetup {
        let model = ModelSpec::burgers(n).unwrap();
        let cubic = CubicForm::from_model(&model).unwrap();
        let params = SimParams::new(&model, eps * eps, eps * eps, eps, 0.2).with_dt(0.02).with_subsample(5);
        PathSetup {
            alphas: vec![1.0; n],
            model,
            cubic,
            seed: 11,
            params,
            window: eps.sqrt().min(0.2),
            a0: vec![1.0],
            ae_a0: None,
            ae_stream_offset: None,
            transient_factor: 10.0,
            stop_at_tau: true,
        }
    }

    #[test]
    fn zero_noise_zero_data_gives_zero_residual() {
        let mut s = setup(0.2, 8);
        s.params.sigma = 0.0;
        s.a0 = vec![0.0];
        let m = measure_path(&s, 0).unwrap();
        assert_eq!(m.r2_sup, 0.0);
        assert_eq!(m.approx_error, 0.0);
    }

    #[test]
    fn measurement_is_deterministic() {
        let s = setup(0.2, 8);
        let a = measure_path(&s, 3).unwrap();
        let b = measure_path(&s, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.upper_holds);
    }

    #[test]
    fn ensemble_matches_sequential_order() {
        let s = setup(0.2, 8);
        let par = run_ensemble(&s, 5, 4).unwrap();
        for (i, m) in par.iter().enumerate() {
            assert_eq!(m.stream, 5 + i as u64);
            assert_eq!(*m, measure_path(&s, 5 + i as u64).unwrap());
        }
    }

    #[test]
    fn gap_is_zero_for_linear_kernel_flow() {
        let base = ModelSpec::burgers(6).unwrap();
        let model = ModelSpec::new(
            base.basis(),
            base.eigenvalues().to_vec(),
            0.5,
            BilinearKind::Custom,
            CouplingTable::from_entries(6, []).unwrap(),
        )
        .unwrap();
        let eps = 0.2;
        let p = SimParams::new(&model, 0.5 * eps * eps, 0.0, eps, 1.0).with_dt(0.01);
        let spec = NoiseSpec::uniform(6, 0.0, 0, 0).unwrap();
        let mut src = p.noise(&model, &spec).unwrap();
        let steps = p.fast_steps(0.5);
        let prop = integrate_propagator(&model, &p, &mut src, &model.zeros(), steps, |_, _, _| {}).unwrap();
        let t = steps as f64 * p.slow_dt();
        let phi = DMatrix::from_element(1, 1, (0.5 * t).exp());
        let g = ftle_gap(&model, &prop, &phi, eps, t).unwrap();
        assert!(g.k_n < 1e-12);
        assert!(g.upper_holds && g.lower_checked && g.lower_holds);
        assert!((g.lambda_spde.value - g.lambda_ae.value).abs() < 1e-9);
    }

    #[test]
    fn pure_decay_recovers_rate() {
        let mu = 3.0;
        let profile: Vec<(f64, f64)> =
            (0..60).map(|i| (i as f64 * 0.05, 2.0 * (-mu * i as f64 * 0.05).exp())).collect();
        let fit = vs_decay_profile(&profile, 10.0).unwrap();
        assert!((fit.rate - mu).abs() < 0.05 * mu);
        assert_eq!(fit.tail, 0.0);
        let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 0.01)).collect();
        let fit = vs_decay_profile(&flat, 0.0).unwrap();
        assert_eq!(fit.tail, 0.01);
        assert!(fit.rate.is_nan());
    }

    #[test]
    fn sweep_refuses_two_values() {
        let s = setup(0.2, 8);
        assert!(sweep(&[s.clone(), s], 1).is_err());
    }

    #[test]
    fn window_beyond_horizon_rejected() {
        let mut s = setup(0.2, 8);
        s.window = 1.0;
        assert!(measure_path(&s, 0).is_err());
    }

    #[test]
    fn regime_case_names_round_trip() {
        for c in RegimeCase::ALL {
            assert_eq!(c.as_str().parse::<RegimeCase>().unwrap(), c);
        }
        for m in Metric::ALL {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
        assert!("sideways".parse::<RegimeCase>().is_err());
    }

    #[test]
    fn transient_time_formula() {
        assert!((transient_time(0.1, 3.0, 10.0) - 10.0 * 0.01 * 10f64.ln() / 3.0).abs() < 1e-15);
    }
}
