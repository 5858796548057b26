//! Diagonal Wiener noise, exact Ornstein–Uhlenbeck increments per mode and
//! rescaling of the stochastic convolution to the slow time scale.
//!
//! Randomness is counter-addressed: the standard normal driving mode `k` at
//! step `n` of stream `(seed, stream_id)` is a pure function of those four
//! numbers, so SPDE runs, amplitude-equation runs and replays of either see
//! exactly the same Wiener path.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifies one Wiener path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NoiseKey {
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseKey {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }
}

/// Per-mode amplitudes `α_k` of `W = Σ α_k β_k e_k` plus the path key.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub alphas: Vec<f64>,
    pub key: NoiseKey,
}

impl NoiseSpec {
    pub fn new(alphas: Vec<f64>, seed: u64, stream_id: u64) -> Result<Self> {
        if let Some(a) = alphas.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return Err(Error::InvalidParameter(format!("noise amplitude {a} must be ≥ 0")));
        }
        Ok(Self { alphas, key: NoiseKey::new(seed, stream_id) })
    }

    pub fn uniform(n: usize, alpha: f64, seed: u64, stream_id: u64) -> Result<Self> {
        Self::new(vec![alpha; n], seed, stream_id)
    }

    pub fn with_stream(&self, stream_id: u64) -> Self {
        Self { alphas: self.alphas.clone(), key: NoiseKey { stream_id, ..self.key } }
    }
}

/// Standard normals addressed by `(step, mode)` within one key.
#[derive(Clone, Debug)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
    width: usize,
    words: Vec<u64>,
}

impl GaussianStream {
    pub fn new(key: NoiseKey, modes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(key.seed);
        rng.set_stream(key.stream_id);
        let width = modes + modes % 2;
        Self { rng, width, words: vec![0; width] }
    }

    /// Standard normals of step `step` for modes `0..out.len()`.
    pub fn fill(&mut self, step: u64, out: &mut [f64]) {
        debug_assert!(out.len() <= self.width);
        // One u64 per normal; ChaCha word positions count u32 words.
        self.rng.set_word_pos(2 * self.width as u128 * step as u128);
        let used = out.len() + out.len() % 2;
        for w in self.words[..used].iter_mut() {
            *w = self.rng.next_u64();
        }
        for (p, pair) in self.words[..used].chunks_exact(2).enumerate() {
            let (z0, z1) = box_muller(pair[0], pair[1]);
            let k = 2 * p;
            if k < out.len() {
                out[k] = z0;
            }
            if k + 1 < out.len() {
                out[k + 1] = z1;
            }
        }
    }
}

fn box_muller(a: u64, b: u64) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = ((a >> 11) + 1) as f64 * SCALE; // (0, 1]
    let u2 = (b >> 11) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Materialized Brownian increments `ΔW_k ~ N(0, α_k² dt)`, step-major.
#[derive(Clone, Debug)]
pub struct NoisePath {
    pub dt: f64,
    pub modes: usize,
    pub key: NoiseKey,
    increments: Vec<f64>,
}

impl NoisePath {
    pub fn steps(&self) -> usize {
        self.increments.len().checked_div(self.modes).unwrap_or(0)
    }

    pub fn step(&self, n: usize) -> &[f64] {
        &self.increments[n * self.modes..(n + 1) * self.modes]
    }

    /// Increments of one mode across all steps.
    pub fn mode(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.increments.iter().skip(k).step_by(self.modes.max(1)).copied()
    }
}

pub fn sample_path(spec: &NoiseSpec, dt: f64, n_steps: usize) -> Result<NoisePath> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    let modes = spec.alphas.len();
    let mut stream = GaussianStream::new(spec.key, modes);
    let mut g = vec![0.0; modes];
    let mut increments = Vec::with_capacity(modes * n_steps);
    let sd: Vec<f64> = spec.alphas.iter().map(|a| a * dt.sqrt()).collect();
    for n in 0..n_steps {
        stream.fill(n as u64, &mut g);
        increments.extend(g.iter().zip(&sd).map(|(g, s)| g * s));
    }
    Ok(NoisePath { dt, modes, key: spec.key, increments })
}

/// Variance of `∫₀^dt e^{−rate (dt−s)} α dβ_s`; `rate` may be of either sign.
pub fn ou_variance(rate: f64, alpha: f64, dt: f64) -> f64 {
    let a2 = alpha * alpha;
    if rate == 0.0 {
        a2 * dt
    } else {
        a2 * -(-2.0 * rate * dt).exp_m1() / (2.0 * rate)
    }
}

/// Stationary variance `α²/(2λ)` of a stable mode.
pub fn ou_stationary_variance(rate: f64, alpha: f64) -> f64 {
    alpha * alpha / (2.0 * rate)
}

/// One exact step of `dz = −λ z dt + α dβ` on a stable mode.
pub fn ou_exact_step(rate: f64, alpha: f64, z: f64, dt: f64, gauss: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::InvalidParameter(format!("OU step needs a stable rate, got λ = {rate}")));
    }
    Ok(exact_linear_step(rate, alpha, z, dt, gauss))
}

/// Exact step for any rate: OU for `rate > 0`, Brownian motion for `rate = 0`.
pub fn exact_linear_step(rate: f64, alpha: f64, z: f64, dt: f64, gauss: f64) -> f64 {
    (-rate * dt).exp() * z + ou_variance(rate, alpha, dt).sqrt() * gauss
}

/// Noise of one integrator step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepNoise {
    /// Exact stochastic-convolution increment per mode for the configured rates.
    pub ou: Vec<f64>,
    /// Brownian increment `α_k ΔW_k` per mode.
    pub bm: Vec<f64>,
}

impl StepNoise {
    pub fn zeros(n: usize) -> Self {
        Self { ou: vec![0.0; n], bm: vec![0.0; n] }
    }
}

/// Anything that can produce the noise of step `n` on a fixed grid.
pub trait NoiseSource {
    fn dt(&self) -> f64;
    fn modes(&self) -> usize;
    fn draw(&mut self, step: u64, out: &mut StepNoise);
}

/// Noise generated from a key at a fixed step size.
///
/// Mode `k` sees rate `rates[k]`; the OU increment and the Brownian
/// increment of a step come from the same standard normal.
#[derive(Clone, Debug)]
pub struct KeyedNoise {
    stream: GaussianStream,
    dt: f64,
    ou_sd: Vec<f64>,
    bm_sd: Vec<f64>,
    g: Vec<f64>,
    active: usize,
}

impl KeyedNoise {
    pub fn new(spec: &NoiseSpec, rates: &[f64], dt: f64) -> Result<Self> {
        if rates.len() != spec.alphas.len() {
            return Err(Error::DimensionMismatch { expected: spec.alphas.len(), got: rates.len() });
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
        }
        let n = rates.len();
        Ok(Self {
            stream: GaussianStream::new(spec.key, n),
            dt,
            ou_sd: rates.iter().zip(&spec.alphas).map(|(&r, &a)| ou_variance(r, a, dt).sqrt()).collect(),
            bm_sd: spec.alphas.iter().map(|a| a * dt.sqrt()).collect(),
            g: vec![0.0; n],
            active: n,
        })
    }

    /// Only generate modes `0..modes`; the rest read as zero. Values of the
    /// generated modes are unchanged.
    pub fn limited_to(mut self, modes: usize) -> Self {
        self.active = modes.min(self.g.len());
        self
    }
}

impl NoiseSource for KeyedNoise {
    fn dt(&self) -> f64 {
        self.dt
    }

    fn modes(&self) -> usize {
        self.g.len()
    }

    fn draw(&mut self, step: u64, out: &mut StepNoise) {
        let m = self.active;
        self.stream.fill(step, &mut self.g[..m]);
        for k in 0..m {
            out.ou[k] = self.ou_sd[k] * self.g[k];
            out.bm[k] = self.bm_sd[k] * self.g[k];
        }
        out.ou[m..].iter_mut().for_each(|x| *x = 0.0);
        out.bm[m..].iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Steps of size `2h` assembled exactly from a source of step `h`.
#[derive(Clone, Debug)]
pub struct Coarsened<S> {
    fine: S,
    half_decay: Vec<f64>,
    a: StepNoise,
    b: StepNoise,
}

impl<S: NoiseSource> Coarsened<S> {
    pub fn new(fine: S, rates: &[f64]) -> Self {
        let n = fine.modes();
        let h = fine.dt();
        Self {
            half_decay: rates.iter().map(|r| (-r * h).exp()).collect(),
            fine,
            a: StepNoise::zeros(n),
            b: StepNoise::zeros(n),
        }
    }
}

impl<S: NoiseSource> NoiseSource for Coarsened<S> {
    fn dt(&self) -> f64 {
        2.0 * self.fine.dt()
    }

    fn modes(&self) -> usize {
        self.fine.modes()
    }

    fn draw(&mut self, step: u64, out: &mut StepNoise) {
        self.fine.draw(2 * step, &mut self.a);
        self.fine.draw(2 * step + 1, &mut self.b);
        for k in 0..out.ou.len() {
            out.ou[k] = self.half_decay[k] * self.a.ou[k] + self.b.ou[k];
            out.bm[k] = self.a.bm[k] + self.b.bm[k];
        }
    }
}

/// A vector-valued process sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    pub dt: f64,
    pub values: Vec<Vec<f64>>,
}

impl SampledPath {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|n| n as f64 * self.dt)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| crate::spectral::norm(v)).fold(0.0, f64::max)
    }
}

/// Exact OU simulation of the stochastic convolution `Z` on a fast grid.
pub fn simulate_convolution(spec: &NoiseSpec, rates: &[f64], dt: f64, n_steps: usize) -> Result<SampledPath> {
    let mut src = KeyedNoise::new(spec, rates, dt)?;
    let n = rates.len();
    let decay: Vec<f64> = rates.iter().map(|r| (-r * dt).exp()).collect();
    let mut z = vec![0.0; n];
    let mut noise = StepNoise::zeros(n);
    let mut values = Vec::with_capacity(n_steps + 1);
    values.push(z.clone());
    for step in 0..n_steps {
        src.draw(step as u64, &mut noise);
        for k in 0..n {
            z[k] = decay[k] * z[k] + noise.ou[k];
        }
        values.push(z.clone());
    }
    Ok(SampledPath { dt, values })
}

/// `Z̃_ε(T) = ε Z_s(T ε⁻²)` on the slow grid `T_n = ε² n dt`, `T ≤ horizon`.
pub fn rescale_slow(fast: &SampledPath, eps: f64, horizon: f64) -> Result<SampledPath> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("ε = {eps} must be positive")));
    }
    let slow_dt = eps * eps * fast.dt;
    let required = (horizon / slow_dt + 1e-9).floor() as usize + 1;
    if fast.values.len() < required {
        return Err(Error::InsufficientPath { required, available: fast.values.len() });
    }
    let values = fast.values[..required].iter().map(|v| v.iter().map(|x| eps * x).collect()).collect();
    Ok(SampledPath { dt: slow_dt, values })
}
