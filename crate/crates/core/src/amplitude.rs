//! The cubic `F_c(a) = −P_c B(a, A_s⁻¹ B_s(a,a))` on the kernel, the
//! amplitude equation `da = [νε⁻²a + 2F_c(a)]dT + σε⁻² dW̃` and its
//! linearization.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::noise::{NoiseSource, NoiseSpec, StepNoise};
use crate::spde::{SimParams, BLOWUP_THRESHOLD};
use crate::spectral::{dot, norm, ModelSpec, SpectralField, KERNEL_TOLERANCE};
use crate::tangent::Ftle;

fn require_kernel(model: &ModelSpec, a: &SpectralField) -> Result<()> {
    model.check(a)?;
    for &k in model.stable_modes() {
        let x = a.coeffs()[k];
        if x.abs() > KERNEL_TOLERANCE {
            return Err(Error::InvalidParameter(format!("field has stable component {x:e} on mode {k}")));
        }
    }
    Ok(())
}

/// `F_c(a)` built from the spectral primitives.
pub fn derive_fc(model: &ModelSpec, a: &SpectralField) -> Result<SpectralField> {
    require_kernel(model, a)?;
    let square = model.project_s(&model.bilinear(a, a)?)?;
    let slaved = model.apply_as_inverse(&square)?;
    Ok(model.project_c(&model.bilinear(a, &slaved)?)?.scaled(-1.0))
}

/// Fréchet derivative `DF_c(a)b`.
pub fn derive_dfc(model: &ModelSpec, a: &SpectralField, b: &SpectralField) -> Result<SpectralField> {
    require_kernel(model, a)?;
    require_kernel(model, b)?;
    let aa = model.apply_as_inverse(&model.project_s(&model.bilinear(a, a)?)?)?;
    let ab = model.apply_as_inverse(&model.project_s(&model.bilinear(a, b)?)?)?;
    let first = model.bilinear(b, &aa)?;
    let second = model.bilinear(a, &ab)?;
    model.project_c(&first.lin_comb(-1.0, &second, -2.0)?)
}

/// `F_c` as a cubic tensor in kernel coordinates:
/// `F(a)_i = Σ T[i,j,k,l] a_j a_k a_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicForm {
    dim: usize,
    tensor: Vec<f64>,
}

impl CubicForm {
    /// Tensor of `model`'s cubic, checked for `⟨F(a),a⟩ ≤ 0` and
    /// `⟨DF(a)b,b⟩ ≤ 0` on a sampled grid.
    pub fn from_model(model: &ModelSpec) -> Result<Self> {
        let d = model.kernel_dim();
        let basis: Vec<SpectralField> = model.kernel_modes().iter().map(|&k| model.unit(k)).collect();
        let mut tensor = vec![0.0; d * d * d * d];
        for k in 0..d {
            for l in 0..d {
                let sq = model.project_s(&model.bilinear(&basis[k], &basis[l])?)?;
                let slaved = model.apply_as_inverse(&sq)?;
                for j in 0..d {
                    let out = model.bilinear(&basis[j], &slaved)?;
                    for (i, &m) in model.kernel_modes().iter().enumerate() {
                        tensor[((i * d + j) * d + k) * d + l] = -out.coeffs()[m];
                    }
                }
            }
        }
        let form = Self { dim: d, tensor };
        form.check_stability()?;
        Ok(form)
    }

    pub fn from_tensor(dim: usize, tensor: Vec<f64>) -> Result<Self> {
        if tensor.len() != dim.pow(4) {
            return Err(Error::DimensionMismatch { expected: dim.pow(4), got: tensor.len() });
        }
        let form = Self { dim, tensor };
        form.check_stability()?;
        Ok(form)
    }

    /// `F(a) = −c a³` in one dimension.
    pub fn scalar(c: f64) -> Result<Self> {
        Self::from_tensor(1, vec![-c])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tensor(&self) -> &[f64] {
        &self.tensor
    }

    pub fn is_zero(&self) -> bool {
        self.tensor.iter().all(|&t| t == 0.0)
    }

    /// `c` with `F(a) = −c a³` when the kernel is one-dimensional.
    pub fn scalar_coefficient(&self) -> Option<f64> {
        (self.dim == 1).then(|| -self.tensor[0])
    }

    fn t(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = self.dim;
        self.tensor[((i * d + j) * d + k) * d + l]
    }

    pub fn eval(&self, a: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        *o += self.t(i, j, k, l) * a[j] * a[k] * a[l];
                    }
                }
            }
        }
        out
    }

    /// `DF(a)` as a `d × d` matrix.
    pub fn jacobian(&self, a: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, m| {
            let mut s = 0.0;
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let t = self.t(i, j, k, l);
                        if t == 0.0 {
                            continue;
                        }
                        let dj = if j == m { a[k] * a[l] } else { 0.0 };
                        let dk = if k == m { a[j] * a[l] } else { 0.0 };
                        let dl = if l == m { a[j] * a[k] } else { 0.0 };
                        s += t * (dj + dk + dl);
                    }
                }
            }
            s
        })
    }

    pub fn derivative(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let j = self.jacobian(a);
        (0..self.dim).map(|i| (0..self.dim).map(|m| j[(i, m)] * b[m]).sum()).collect()
    }

    fn sample_directions(&self) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut dirs = Vec::new();
        let count = 24 * d.max(1);
        for s in 0..count {
            let v: Vec<f64> =
                (0..d).map(|k| ((s * (2 * k + 1)) as f64 * std::f64::consts::FRAC_PI_4 + k as f64).sin()).collect();
            let n = norm(&v);
            if n > 1e-3 {
                dirs.push(v.iter().map(|x| x / n).collect());
            }
        }
        for k in 0..d {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            dirs.push(e.clone());
            e[k] = -1.0;
            dirs.push(e);
        }
        dirs
    }

    fn check_stability(&self) -> Result<()> {
        let scale = self.tensor.iter().fold(0.0f64, |m, t| m.max(t.abs())).max(1.0);
        let tol = 1e-12 * scale;
        let dirs = self.sample_directions();
        for a in &dirs {
            for r in [0.5, 1.0, 3.0] {
                let ar: Vec<f64> = a.iter().map(|x| x * r).collect();
                let fa = dot(&self.eval(&ar), &ar);
                if fa > tol * r.powi(4) {
                    return Err(Error::InvalidModel(format!("⟨F_c(a),a⟩ = {fa:e} > 0 at a = {ar:?}")));
                }
                for b in &dirs {
                    let q = dot(&self.derivative(&ar, b), b);
                    if q > tol * r * r {
                        return Err(Error::InvalidModel(format!("⟨DF_c(a)b,b⟩ = {q:e} > 0 at a = {ar:?}, b = {b:?}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Fitted `(δ, C_δ)` with `⟨F(a+b),a⟩ ≤ −δ‖a‖⁴ + C_δ‖b‖⁴`: the largest
    /// excess over sampled directions and 400 radii `‖a‖/‖b‖ ∈ [10⁻², 10²]`,
    /// plus 1%. `None` if `F` is not strictly dissipative.
    pub fn sign_constants(&self) -> Option<(f64, f64)> {
        let dirs = self.sample_directions();
        let coercive = dirs.iter().map(|a| -dot(&self.eval(a), a)).fold(f64::INFINITY, f64::min);
        if !(coercive > 0.0) {
            return None;
        }
        let delta = coercive / 2.0;
        let mut c = 0.0f64;
        for a in &dirs {
            for b in &dirs {
                for ra in (0..400).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / 399.0)) {
                    let av: Vec<f64> = a.iter().map(|x| x * ra).collect();
                    let sum: Vec<f64> = av.iter().zip(b).map(|(x, y)| x + y).collect();
                    let excess = dot(&self.eval(&sum), &av) + delta * ra.powi(4);
                    c = c.max(excess);
                }
            }
        }
        Some((delta, 1.01 * c))
    }
}

/// Coefficients of the amplitude equation on one slow grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplitudeParams {
    /// `νε⁻²`.
    pub linear: f64,
    /// `σε⁻²`.
    pub noise_gain: f64,
    pub eps: f64,
    pub dt_fast: f64,
    /// Fast noise steps combined into one amplitude step.
    pub aggregate: usize,
}

impl AmplitudeParams {
    pub fn from_sim(p: &SimParams) -> Self {
        let e2 = p.eps * p.eps;
        Self { linear: p.nu / e2, noise_gain: p.sigma / e2, eps: p.eps, dt_fast: p.dt, aggregate: 1 }
    }

    pub fn without_noise(mut self) -> Self {
        self.noise_gain = 0.0;
        self
    }

    pub fn with_aggregate(mut self, steps: usize) -> Self {
        self.aggregate = steps.max(1);
        self
    }

    /// Slow-time length of one amplitude step.
    pub fn slow_dt(&self) -> f64 {
        self.eps * self.eps * self.dt_fast * self.aggregate as f64
    }
}

/// A stored amplitude path on a uniform slow grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudePath {
    /// Slow-time spacing of stored points.
    pub dt: f64,
    dim: usize,
    values: Vec<f64>,
}

impl AmplitudePath {
    pub fn from_values(dt: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: values.len() });
        }
        Ok(Self { dt, dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Prefix covering `[0, t]`.
    pub fn until(&self, t: f64) -> Self {
        let n = ((t / self.dt + 1e-9).floor() as usize + 1).min(self.len());
        Self { dt: self.dt, dim: self.dim, values: self.values[..n * self.dim].to_vec() }
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.len()).map(|i| norm(self.get(i))).fold(0.0, f64::max)
    }

    /// Every `every`-th point, always keeping the last one.
    pub fn subsampled(&self, every: usize) -> Self {
        let every = every.max(1);
        if every == 1 || self.is_empty() {
            return self.clone();
        }
        let last = self.len() - 1;
        let mut values = Vec::new();
        for i in (0..self.len()).step_by(every) {
            values.extend_from_slice(self.get(i));
        }
        if !last.is_multiple_of(every) {
            values.extend_from_slice(self.get(last));
        }
        Self { dt: self.dt * every as f64, dim: self.dim, values }
    }
}

/// One Euler–Maruyama step `a ← a + [la + 2F(a) + r]dT + ΔW̃`.
pub fn ae_step(cubic: &CubicForm, linear: f64, a: &mut [f64], dt_slow: f64, dw_slow: &[f64], residual: &[f64]) {
    let f = cubic.eval(a);
    for k in 0..a.len() {
        a[k] += dt_slow * (linear * a[k] + 2.0 * f[k] + residual[k]) + dw_slow[k];
    }
}

/// Integrate the amplitude equation with the kernel components of the
/// Brownian increments from `noise` (fast steps, rescaled to slow time).
pub fn ae_simulate_with<S: NoiseSource>(
    cubic: &CubicForm,
    model: &ModelSpec,
    ap: &AmplitudeParams,
    noise: &mut S,
    a0: &[f64],
    steps: usize,
    every: usize,
) -> Result<AmplitudePath> {
    ae_simulate_forced(cubic, model, ap, noise, a0, steps, every, |_, _| {})
}

/// As [`ae_simulate_with`] with an extra drift `residual(T, r)` written into `r`.
#[allow(clippy::too_many_arguments)]
pub fn ae_simulate_forced<S, R>(
    cubic: &CubicForm,
    model: &ModelSpec,
    ap: &AmplitudeParams,
    noise: &mut S,
    a0: &[f64],
    steps: usize,
    every: usize,
    mut residual: R,
) -> Result<AmplitudePath>
where
    S: NoiseSource,
    R: FnMut(f64, &mut [f64]),
{
    let d = cubic.dim();
    if a0.len() != d || model.kernel_dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: a0.len() });
    }
    let every = every.max(1);
    let dt_slow = ap.slow_dt();
    let gain = ap.noise_gain * ap.eps;
    let mut a = a0.to_vec();
    let mut values = a.clone();
    let mut buf = StepNoise::zeros(model.n());
    let mut dw = vec![0.0; d];
    let mut r = vec![0.0; d];
    for step in 0..steps {
        dw.iter_mut().for_each(|x| *x = 0.0);
        if gain != 0.0 {
            for sub in 0..ap.aggregate {
                noise.draw((step * ap.aggregate + sub) as u64, &mut buf);
                for (w, &k) in dw.iter_mut().zip(model.kernel_modes()) {
                    *w += gain * buf.bm[k];
                }
            }
        }
        r.iter_mut().for_each(|x| *x = 0.0);
        residual(step as f64 * dt_slow, &mut r);
        ae_step(cubic, ap.linear, &mut a, dt_slow, &dw, &r);
        let size = norm(&a);
        if !(size.is_finite() && size <= BLOWUP_THRESHOLD) {
            return Err(Error::Blowup { time: (step + 1) as f64 * dt_slow });
        }
        if (step + 1) % every == 0 {
            values.extend_from_slice(&a);
        }
    }
    AmplitudePath::from_values(dt_slow * every as f64, d, values)
}

/// Coefficient `c` of `F_c(a·φ) = −c a³ φ` with `φ` the plain kernel
/// function (`sin x` for Burgers, the constant for KS); one-dimensional
/// kernels only.
pub fn plain_cubic_coefficient(model: &ModelSpec, cubic: &CubicForm) -> Option<f64> {
    let c = cubic.scalar_coefficient()?;
    let &[k] = model.kernel_modes() else { return None };
    let s = 1.0 / crate::spectral::normalization(model.basis(), k);
    Some(c * s * s)
}

/// Keyed noise restricted to the modes up to the last kernel mode.
pub fn kernel_noise(model: &ModelSpec, params: &SimParams, noise: &NoiseSpec) -> Result<crate::noise::KeyedNoise> {
    let prefix = model.kernel_modes().iter().max().map_or(0, |k| k + 1);
    Ok(params.noise(model, noise)?.limited_to(prefix))
}

/// Amplitude path over `[0, params.horizon]` driven by the same Brownian
/// increments as [`crate::spde::simulate`] with the same key, stored on the
/// same slow grid as its trajectory.
pub fn ae_simulate(
    cubic: &CubicForm,
    model: &ModelSpec,
    params: &SimParams,
    noise: &NoiseSpec,
    a0: &[f64],
) -> Result<AmplitudePath> {
    let ap = AmplitudeParams::from_sim(params);
    let mut src = kernel_noise(model, params, noise)?;
    let steps = params.fast_steps(params.horizon);
    Ok(ae_simulate_with(cubic, model, &ap, &mut src, a0, steps, 1)?.subsampled(params.subsample))
}

/// `∫₀^{T_n} (l + 2F'(a(S))) dS` at every stored point (one-dimensional kernel).
pub fn ae_log_growth(cubic: &CubicForm, linear: f64, path: &AmplitudePath) -> Result<Vec<f64>> {
    if cubic.dim() != 1 || path.dim() != 1 {
        return Err(Error::InvalidParameter("log-growth quadrature needs a one-dimensional kernel".into()));
    }
    let rate = |a: f64| linear + 2.0 * cubic.jacobian(&[a])[(0, 0)];
    let mut out = Vec::with_capacity(path.len());
    let mut acc = 0.0;
    let mut prev = rate(path.get(0)[0]);
    out.push(0.0);
    for i in 1..path.len() {
        let next = rate(path.get(i)[0]);
        acc += 0.5 * path.dt * (prev + next);
        out.push(acc);
        prev = next;
    }
    Ok(out)
}

/// Fundamental matrix of `dφ = [l + 2DF_c(a)]φ dT` at stored index `upto`,
/// as the product of trapezoidal step exponentials.
pub fn ae_fundamental(cubic: &CubicForm, linear: f64, path: &AmplitudePath, upto: usize) -> DMatrix<f64> {
    let d = cubic.dim();
    let gen = |a: &[f64]| cubic.jacobian(a) * 2.0 + DMatrix::identity(d, d) * linear;
    let mut phi = DMatrix::identity(d, d);
    let mut prev = gen(path.get(0));
    for i in 1..=upto.min(path.len().saturating_sub(1)) {
        let next = gen(path.get(i));
        let step = ((&prev + &next) * (0.5 * path.dt)).exp();
        phi = step * phi;
        prev = next;
    }
    phi
}

/// `φ(T)` along `path` from `φ(0) = phi0`.
pub fn ae_linearized(cubic: &CubicForm, linear: f64, path: &AmplitudePath, phi0: &[f64]) -> Result<AmplitudePath> {
    let d = cubic.dim();
    if phi0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: phi0.len() });
    }
    let mut values = Vec::with_capacity(path.len() * d);
    if d == 1 {
        for g in ae_log_growth(cubic, linear, path)? {
            values.push(phi0[0] * g.exp());
        }
    } else {
        let gen = |a: &[f64]| cubic.jacobian(a) * 2.0 + DMatrix::identity(d, d) * linear;
        let mut phi = nalgebra::DVector::from_column_slice(phi0);
        values.extend_from_slice(phi.as_slice());
        let mut prev = gen(path.get(0));
        for i in 1..path.len() {
            let next = gen(path.get(i));
            phi = ((&prev + &next) * (0.5 * path.dt)).exp() * phi;
            values.extend_from_slice(phi.as_slice());
            prev = next;
        }
    }
    AmplitudePath::from_values(path.dt, d, values)
}

/// `λ^a_T = (1/T) ln ‖φ(T)‖` in slow units, `T` the end of `path`.
pub fn ftle_ae(cubic: &CubicForm, linear: f64, path: &AmplitudePath) -> Result<Ftle> {
    let t = path.time(path.len().saturating_sub(1));
    if !(t > 0.0) {
        return Err(Error::InvalidParameter("amplitude FTLE needs a positive horizon".into()));
    }
    let growth = if cubic.dim() == 1 {
        *ae_log_growth(cubic, linear, path)?.last().unwrap_or(&0.0)
    } else {
        crate::tangent::largest_singular_value(&ae_fundamental(cubic, linear, path, path.len() - 1))?.ln()
    };
    Ok(Ftle::slow(growth / t))
}

/// Noise-free amplitude FTLE by RK4 on `(a, ln φ)`; returns `(a(T), λ^a_T)`.
pub fn ae_deterministic_ftle(
    cubic: &CubicForm,
    linear: f64,
    a0: f64,
    horizon: f64,
    steps: usize,
) -> Result<(f64, Ftle)> {
    let c = cubic
        .scalar_coefficient()
        .ok_or_else(|| Error::InvalidParameter("deterministic FTLE needs a one-dimensional kernel".into()))?;
    if !(horizon > 0.0) || steps == 0 {
        return Err(Error::InvalidParameter("horizon and step count must be positive".into()));
    }
    let rhs = |a: f64| (linear * a - 2.0 * c * a * a * a, linear - 6.0 * c * a * a);
    let h = horizon / steps as f64;
    let (mut a, mut g) = (a0, 0.0);
    for _ in 0..steps {
        let k1 = rhs(a);
        let k2 = rhs(a + 0.5 * h * k1.0);
        let k3 = rhs(a + 0.5 * h * k2.0);
        let k4 = rhs(a + h * k3.0);
        a += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        g += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    Ok((a, Ftle::slow(g / horizon)))
}

/// Closed-form FTLE of `a' = la − ba³` with linearization `φ' = (l − 3ba²)φ`.
pub fn bernoulli_ftle(l: f64, b: f64, a0: f64, horizon: f64) -> f64 {
    // D/l with D = l + b a0² (e^{2lT} − 1), continuous at l = 0.
    let x = 2.0 * l * horizon;
    let growth = if x.abs() < 1e-8 { 2.0 * horizon * (1.0 + 0.5 * x) } else { x.exp_m1() / l };
    let ratio = 1.0 + b * a0 * a0 * growth;
    l - 1.5 * ratio.ln() / horizon
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn burgers(n: usize) -> ModelSpec {
        ModelSpec::burgers(n).unwrap()
    }

    /// Orthonormal coefficient of `a sin x`.
    fn coeff(a: f64) -> f64 {
        a * (PI / 2.0).sqrt()
    }

    #[test]
    fn burgers_fc_closed_form() {
        let m = burgers(16);
        for a in [0.0, 1.0, -0.7, 2.5] {
            let f = derive_fc(&m, &m.unit(0).scaled(coeff(a))).unwrap();
            let expect = coeff(-a * a * a / 24.0);
            assert!((f.coeffs()[0] - expect).abs() < 1e-10);
            assert!(f.coeffs()[1..].iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn ks_fc_vanishes() {
        let m = ModelSpec::kuramoto_sivashinsky(12).unwrap();
        let f = derive_fc(&m, &m.unit(0).scaled(1.3)).unwrap();
        assert!(f.norm() < 1e-12);
        assert!(CubicForm::from_model(&m).unwrap().is_zero());
    }

    #[test]
    fn fc_rejects_stable_input() {
        let m = burgers(8);
        assert!(derive_fc(&m, &m.unit(1)).is_err());
    }

    #[test]
    fn tensor_matches_composition() {
        let m = burgers(16);
        let cubic = CubicForm::from_model(&m).unwrap();
        let c = cubic.scalar_coefficient().unwrap();
        assert!((c - 1.0 / (12.0 * PI)).abs() < 1e-14);
        for x in [0.3, -1.9] {
            let direct = derive_fc(&m, &m.unit(0).scaled(x)).unwrap().coeffs()[0];
            assert!((cubic.eval(&[x])[0] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn fc_is_cubic() {
        let m = burgers(10);
        let a = m.unit(0).scaled(0.8);
        let base = derive_fc(&m, &a).unwrap().coeffs()[0];
        for s in [-2.0, 0.5, 3.0] {
            let scaled = derive_fc(&m, &a.scaled(s)).unwrap().coeffs()[0];
            assert!((scaled - s * s * s * base).abs() < 1e-12);
        }
    }

    #[test]
    fn dfc_examples() {
        let m = burgers(16);
        let e = m.unit(0);
        assert!(derive_dfc(&m, &m.zeros(), &e).unwrap().norm() == 0.0);
        for a in [1.0, 2.0, -0.5] {
            let d = derive_dfc(&m, &e.scaled(coeff(a)), &e.scaled(coeff(1.0))).unwrap();
            assert!((d.coeffs()[0] - coeff(-a * a / 8.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn dfc_matches_finite_differences() {
        let m = burgers(16);
        let h = 1e-6;
        let e = m.unit(0);
        for (a, b) in [(0.4, 1.0), (-1.2, 0.3), (2.0, -0.7)] {
            let av = e.scaled(a);
            let bv = e.scaled(b);
            let fp = derive_fc(&m, &av.lin_comb(1.0, &bv, h).unwrap()).unwrap().coeffs()[0];
            let fm = derive_fc(&m, &av.lin_comb(1.0, &bv, -h).unwrap()).unwrap().coeffs()[0];
            let fd = (fp - fm) / (2.0 * h);
            let an = derive_dfc(&m, &av, &bv).unwrap().coeffs()[0];
            assert!((fd - an).abs() <= 1e-5 * an.abs(), "{fd} vs {an}");
        }
    }

    #[test]
    fn dfc_linear_in_direction() {
        let m = burgers(12);
        let a = m.unit(0).scaled(0.9);
        let b1 = m.unit(0).scaled(0.3);
        let b2 = m.unit(0).scaled(-1.1);
        let sum = derive_dfc(&m, &a, &b1.lin_comb(1.0, &b2, 1.0).unwrap()).unwrap();
        let parts = derive_dfc(&m, &a, &b1).unwrap().lin_comb(1.0, &derive_dfc(&m, &a, &b2).unwrap(), 1.0).unwrap();
        assert!((sum.coeffs()[0] - parts.coeffs()[0]).abs() < 1e-12);
    }

    #[test]
    fn unstable_cubic_rejected() {
        assert!(CubicForm::scalar(-1.0).is_err());
        assert!(CubicForm::scalar(0.5).is_ok());
    }

    #[test]
    fn plain_coefficients_of_presets() {
        let m = burgers(16);
        let c = plain_cubic_coefficient(&m, &CubicForm::from_model(&m).unwrap()).unwrap();
        assert!((c - 1.0 / 24.0).abs() < 1e-12);
        let ks = ModelSpec::kuramoto_sivashinsky(9).unwrap();
        assert_eq!(plain_cubic_coefficient(&ks, &CubicForm::from_model(&ks).unwrap()), Some(0.0));
    }

    #[test]
    fn sign_constants_for_burgers() {
        let cubic = CubicForm::from_model(&burgers(8)).unwrap();
        let (delta, c) = cubic.sign_constants().unwrap();
        assert!(delta > 0.0 && c > 0.0);
        assert!(CubicForm::from_model(&ModelSpec::kuramoto_sivashinsky(8).unwrap())
            .unwrap()
            .sign_constants()
            .is_none());
    }

    #[test]
    fn deterministic_ae_reaches_fixed_point() {
        let m = burgers(8);
        let cubic = CubicForm::from_model(&m).unwrap();
        let ap = AmplitudeParams { linear: 1.0, noise_gain: 0.0, eps: 0.1, dt_fast: 0.1, aggregate: 1 };
        let mut quiet =
            crate::noise::KeyedNoise::new(&NoiseSpec::uniform(8, 1.0, 0, 0).unwrap(), &[1.0; 8], 0.1).unwrap();
        let steps = (40.0 / ap.slow_dt()) as usize;
        let path = ae_simulate_with(&cubic, &m, &ap, &mut quiet, &[coeff(1.0)], steps, steps).unwrap();
        let end = path.get(path.len() - 1)[0] / (PI / 2.0).sqrt();
        assert!((end - 12f64.sqrt()).abs() < 1e-6, "{end}");
    }

    #[test]
    fn zero_amplitude_stays_zero() {
        let m = burgers(8);
        let cubic = CubicForm::from_model(&m).unwrap();
        let p = SimParams::new(&m, 0.0, 0.0, 0.1, 0.5);
        let spec = NoiseSpec::uniform(8, 1.0, 1, 1).unwrap();
        let path = ae_simulate(&cubic, &m, &p, &spec, &[0.0]).unwrap();
        assert!(path.sup_norm() == 0.0);
    }

    #[test]
    fn linearization_examples() {
        let cubic = CubicForm::scalar(0.3).unwrap();
        let zero = AmplitudePath::from_values(0.01, 1, vec![0.0; 101]).unwrap();
        let phi = ae_linearized(&cubic, 0.7, &zero, &[2.0]).unwrap();
        assert!((phi.get(100)[0] - 2.0 * (0.7f64).exp()).abs() < 1e-12);
        assert!(ae_linearized(&cubic, 0.7, &zero, &[0.0]).unwrap().sup_norm() == 0.0);
        let l = ftle_ae(&cubic, 0.7, &zero).unwrap();
        assert!((l.value - 0.7).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_matches_product_of_exponentials() {
        let cubic = CubicForm::scalar(1.0 / (12.0 * PI)).unwrap();
        let vals: Vec<f64> = (0..400).map(|i| 1.5 * (i as f64 * 0.03).sin() + 0.2).collect();
        let path = AmplitudePath::from_values(0.005, 1, vals).unwrap();
        let g = ae_log_growth(&cubic, 0.8, &path).unwrap();
        for upto in [1, 57, 399] {
            let f = ae_fundamental(&cubic, 0.8, &path, upto)[(0, 0)];
            assert!((f.ln() - g[upto]).abs() < 1e-10);
        }
    }

    #[test]
    fn deterministic_ftle_matches_closed_form() {
        let c = 1.0 / (12.0 * PI);
        let cubic = CubicForm::scalar(c).unwrap();
        for (l, a0, t) in [(1.0, 0.7, 1.0), (-1.0, 1.2, 2.0), (0.0, 0.5, 1.5), (2.0, 3.0, 0.3)] {
            let (_, lam) = ae_deterministic_ftle(&cubic, l, a0, t, 4000).unwrap();
            let exact = bernoulli_ftle(l, 2.0 * c, a0, t);
            assert!((lam.value - exact).abs() < 1e-8, "l = {l}: {} vs {exact}", lam.value);
        }
    }

    #[test]
    fn stable_case_ftle_bounded_by_linear_rate() {
        let cubic = CubicForm::from_model(&burgers(8)).unwrap();
        let vals: Vec<f64> = (0..300).map(|i| 2.0 * (i as f64 * 0.1).cos()).collect();
        let path = AmplitudePath::from_values(0.01, 1, vals).unwrap();
        assert!(ftle_ae(&cubic, -1.0, &path).unwrap().value <= -1.0);
    }
}
