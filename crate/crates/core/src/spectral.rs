//! Eigenbasis representation of fields, the diagonal linear operator, the
//! kernel/stable projections and the quadratic nonlinearity.
//!
//! Coefficients are taken in an orthonormal eigenbasis of `A`, so the
//! Euclidean norm of a coefficient vector is the `L²` norm of the function.
//! The bilinear form is evaluated through a sparse coupling table built once
//! per [`ModelSpec`] from exact trigonometric product rules, with Galerkin
//! truncation of every output back to the retained modes.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel coefficients larger than this are rejected by `A_s⁻¹`.
pub const KERNEL_TOLERANCE: f64 = 1e-14;

/// Which orthonormal eigenbasis the coefficients refer to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    /// `e_k(x) = √(2/π) sin(kx)` on `[0, π]`, `k = 1..N`.
    DirichletSine,
    /// Real Fourier basis on `[0, 2π]`: the constant `1/√(2π)`, then
    /// `cos(kx)/√π`, `sin(kx)/√π` for `k = 1, 2, …`.
    Periodic,
}

/// Which quadratic form `B` a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BilinearKind {
    /// `B(u, v) = ½ ∂ₓ(uv)`.
    Burgers,
    /// `B(u, v) = ∂ₓu · ∂ₓv`.
    Ks,
    /// User-supplied coupling table.
    Custom,
}

/// Named model presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    Burgers,
    Ks,
}

impl ModelPreset {
    pub fn build(self, modes: usize) -> Result<ModelSpec> {
        match self {
            ModelPreset::Burgers => ModelSpec::burgers(modes),
            ModelPreset::Ks => ModelSpec::kuramoto_sivashinsky(modes),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelPreset::Burgers => "burgers",
            ModelPreset::Ks => "ks",
        }
    }
}

impl fmt::Display for ModelPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "burgers" => Ok(ModelPreset::Burgers),
            "ks" | "kuramoto-sivashinsky" => Ok(ModelPreset::Ks),
            other => Err(Error::InvalidParameter(format!("unknown model preset `{other}` (expected burgers | ks)"))),
        }
    }
}

/// Coefficient vector of a function in a model's eigenbasis.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    coeffs: Vec<f64>,
    basis: BasisKind,
}

impl SpectralField {
    pub fn new(basis: BasisKind, coeffs: Vec<f64>) -> Self {
        Self { coeffs, basis }
    }

    pub fn zeros(basis: BasisKind, n: usize) -> Self {
        Self::new(basis, vec![0.0; n])
    }

    /// Unit vector on mode index `k` (0-based).
    pub fn unit(basis: BasisKind, n: usize, k: usize) -> Self {
        let mut f = Self::zeros(basis, n);
        f.coeffs[k] = 1.0;
        f
    }

    pub fn basis(&self) -> BasisKind {
        self.basis
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// `‖·‖_X`, the ℓ² norm of the coefficients.
    pub fn norm(&self) -> f64 {
        norm(&self.coeffs)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.basis, self.coeffs.iter().map(|c| c * s).collect())
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.len() != other.len() || self.basis != other.basis {
            return Err(Error::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        Ok(Self::new(self.basis, self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| a * x + b * y).collect()))
    }

    /// Evaluate the represented function at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().enumerate().map(|(m, c)| c * basis_function(self.basis, m, x)).sum()
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value of basis function `m` (0-based) at `x`.
pub fn basis_function(basis: BasisKind, m: usize, x: f64) -> f64 {
    let w = basis_wave(basis, m);
    w.coef * w.eval(x)
}

/// Derivative of basis function `m` at `x`.
pub fn basis_derivative(basis: BasisKind, m: usize, x: f64) -> f64 {
    let w = basis_wave(basis, m).derivative();
    w.coef * w.eval(x)
}

/// Factor `n_m` with `e_m = n_m · trig_m`, where `trig_m` is the plain
/// `sin`, `cos` or constant.
pub fn normalization(basis: BasisKind, m: usize) -> f64 {
    basis_wave(basis, m).coef
}

/// Wavenumber of mode index `m`.
pub fn wavenumber(basis: BasisKind, m: usize) -> usize {
    basis_wave(basis, m).k as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Wave {
    Cos,
    Sin,
}

/// `coef · cos(kx)` or `coef · sin(kx)`.
#[derive(Clone, Copy, Debug)]
struct Term {
    wave: Wave,
    k: i64,
    coef: f64,
}

impl Term {
    fn eval(self, x: f64) -> f64 {
        let kx = self.k as f64 * x;
        match self.wave {
            Wave::Cos => kx.cos(),
            Wave::Sin => kx.sin(),
        }
    }

    fn derivative(self) -> Term {
        let k = self.k as f64;
        match self.wave {
            Wave::Cos => Term { wave: Wave::Sin, k: self.k, coef: -k * self.coef },
            Wave::Sin => Term { wave: Wave::Cos, k: self.k, coef: k * self.coef },
        }
    }

    /// Fold negative wavenumbers onto `k ≥ 0`.
    fn canonical(self) -> Term {
        if self.k >= 0 {
            return self;
        }
        match self.wave {
            Wave::Cos => Term { k: -self.k, ..self },
            Wave::Sin => Term { k: -self.k, coef: -self.coef, ..self },
        }
    }

    fn product(self, other: Term) -> [Term; 2] {
        let c = 0.5 * self.coef * other.coef;
        let (a, b) = (self.k, other.k);
        let pair = match (self.wave, other.wave) {
            (Wave::Cos, Wave::Cos) => {
                [Term { wave: Wave::Cos, k: a - b, coef: c }, Term { wave: Wave::Cos, k: a + b, coef: c }]
            }
            (Wave::Sin, Wave::Sin) => {
                [Term { wave: Wave::Cos, k: a - b, coef: c }, Term { wave: Wave::Cos, k: a + b, coef: -c }]
            }
            (Wave::Sin, Wave::Cos) => {
                [Term { wave: Wave::Sin, k: a + b, coef: c }, Term { wave: Wave::Sin, k: a - b, coef: c }]
            }
            (Wave::Cos, Wave::Sin) => {
                [Term { wave: Wave::Sin, k: a + b, coef: c }, Term { wave: Wave::Sin, k: b - a, coef: c }]
            }
        };
        pair.map(Term::canonical)
    }
}

fn basis_wave(basis: BasisKind, m: usize) -> Term {
    match basis {
        BasisKind::DirichletSine => Term { wave: Wave::Sin, k: m as i64 + 1, coef: (2.0 / PI).sqrt() },
        BasisKind::Periodic => {
            if m == 0 {
                Term { wave: Wave::Cos, k: 0, coef: 1.0 / (2.0 * PI).sqrt() }
            } else {
                let k = m.div_ceil(2) as i64;
                let wave = if m % 2 == 1 { Wave::Cos } else { Wave::Sin };
                Term { wave, k, coef: 1.0 / PI.sqrt() }
            }
        }
    }
}

/// Index and normalization of the basis function carrying `term`, if retained.
fn locate(basis: BasisKind, n: usize, term: Term) -> Option<(usize, f64)> {
    let m = match (basis, term.wave) {
        (_, Wave::Sin) if term.k == 0 => return None,
        (BasisKind::DirichletSine, Wave::Sin) => term.k as usize - 1,
        (BasisKind::DirichletSine, Wave::Cos) => return None,
        (BasisKind::Periodic, Wave::Cos) if term.k == 0 => 0,
        (BasisKind::Periodic, Wave::Cos) => 2 * term.k as usize - 1,
        (BasisKind::Periodic, Wave::Sin) => 2 * term.k as usize,
    };
    (m < n).then(|| (m, basis_wave(basis, m).coef))
}

/// One symmetric coupling `B(u,v)_out += c·(u_i v_j + u_j v_i)` (`i < j`)
/// or `c·u_i v_i` (`i == j`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub out: usize,
    pub i: usize,
    pub j: usize,
    pub c: f64,
}

/// Sparse mode-coupling table of a symmetric bilinear form.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CouplingTable {
    n: usize,
    entries: Vec<Coupling>,
    diag: Vec<Packed>,
    off: Vec<Packed>,
}

/// Evaluation form of a coupling with indices packed as `u32`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Packed {
    out: u32,
    i: u32,
    j: u32,
    c: f64,
}

impl CouplingTable {
    /// Build from entries with `i ≤ j`; entries for `i > j` are mirrored.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = Coupling>) -> Result<Self> {
        let mut out = Vec::new();
        for mut e in entries {
            if e.out >= n || e.i >= n || e.j >= n {
                return Err(Error::InvalidModel(format!(
                    "coupling ({}, {}, {}) out of range for {n} modes",
                    e.out, e.i, e.j
                )));
            }
            if e.i > e.j {
                std::mem::swap(&mut e.i, &mut e.j);
            }
            out.push(e);
        }
        out.sort_by_key(|e| (e.out, e.i, e.j));
        Ok(Self::packed(n, out))
    }

    /// Exact table for `scale · D_out(D_in u · D_in v)` on `basis`.
    fn trigonometric(basis: BasisKind, n: usize, scale: f64, diff_in: bool, diff_out: bool) -> Self {
        let mut acc = std::collections::BTreeMap::<(usize, usize, usize), f64>::new();
        for i in 0..n {
            for j in i..n {
                let mut a = basis_wave(basis, i);
                let mut b = basis_wave(basis, j);
                if diff_in {
                    a = a.derivative();
                    b = b.derivative();
                }
                for mut t in a.product(b) {
                    if diff_out {
                        t = t.derivative();
                    }
                    t.coef *= scale;
                    if t.coef == 0.0 {
                        continue;
                    }
                    // Orthonormal coefficient of `coef·trig_m` is `coef / n_m`.
                    if let Some((m, nm)) = locate(basis, n, t) {
                        *acc.entry((m, i, j)).or_insert(0.0) += t.coef / nm;
                    }
                }
            }
        }
        let entries = acc
            .into_iter()
            .filter(|(_, c)| c.abs() > 1e-15)
            .map(|((out, i, j), c)| Coupling { out, i, j, c })
            .collect();
        Self::packed(n, entries)
    }

    fn packed(n: usize, entries: Vec<Coupling>) -> Self {
        let pack = |e: &Coupling| Packed { out: e.out as u32, i: e.i as u32, j: e.j as u32, c: e.c };
        let diag = entries.iter().filter(|e| e.i == e.j).map(pack).collect();
        let off = entries.iter().filter(|e| e.i != e.j).map(pack).collect();
        Self { n, entries, diag, off }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Coupling] {
        &self.entries
    }

    /// `out = B(u, v)`; symmetric in `u, v` bit for bit.
    pub fn apply(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for e in &self.diag {
            let k = e.i as usize;
            out[e.out as usize] += e.c * (u[k] * v[k]);
        }
        for e in &self.off {
            let (i, j) = (e.i as usize, e.j as usize);
            out[e.out as usize] += e.c * (u[i] * v[j] + u[j] * v[i]);
        }
    }

    /// `out = B(u, u)`.
    pub fn apply_square(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for e in &self.diag {
            let k = e.i as usize;
            out[e.out as usize] += e.c * (u[k] * u[k]);
        }
        for e in &self.off {
            out[e.out as usize] += 2.0 * e.c * (u[e.i as usize] * u[e.j as usize]);
        }
    }

    /// Row-major Jacobian `J(u) = 2 B(u, ·)` into `jac` (`n × n`).
    pub fn jacobian(&self, u: &[f64], jac: &mut [f64]) {
        let n = self.n;
        jac.iter_mut().for_each(|x| *x = 0.0);
        for e in &self.diag {
            let k = e.i as usize;
            jac[e.out as usize * n + k] += 2.0 * e.c * u[k];
        }
        for e in &self.off {
            let (row, i, j) = (e.out as usize * n, e.i as usize, e.j as usize);
            let c2 = 2.0 * e.c;
            jac[row + j] += c2 * u[i];
            jac[row + i] += c2 * u[j];
        }
    }
}

/// Defines one SPDE instance: spectrum of `−A`, kernel, gap and nonlinearity.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    basis: BasisKind,
    eigenvalues: Vec<f64>,
    kernel: Vec<usize>,
    stable: Vec<usize>,
    mu: f64,
    alpha: f64,
    bilinear: BilinearKind,
    coupling: CouplingTable,
}

impl ModelSpec {
    /// Validate and assemble a model. `eigenvalues` are those of `−A`.
    pub fn new(
        basis: BasisKind,
        eigenvalues: Vec<f64>,
        alpha: f64,
        bilinear: BilinearKind,
        coupling: CouplingTable,
    ) -> Result<Self> {
        let n = eigenvalues.len();
        if n == 0 {
            return Err(Error::InvalidModel("model needs at least one mode".into()));
        }
        if coupling.n != n {
            return Err(Error::DimensionMismatch { expected: n, got: coupling.n });
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidModel(format!("smoothing exponent {alpha} not in [0, 1)")));
        }
        if let Some(bad) = eigenvalues.iter().find(|l| !l.is_finite() || **l < 0.0) {
            return Err(Error::InvalidModel(format!("eigenvalue {bad} of −A must be finite and non-negative")));
        }
        let kernel: Vec<usize> = (0..n).filter(|&k| eigenvalues[k] == 0.0).collect();
        let stable: Vec<usize> = (0..n).filter(|&k| eigenvalues[k] != 0.0).collect();
        if kernel.is_empty() {
            return Err(Error::InvalidModel("operator has a trivial kernel".into()));
        }
        let mu = stable.iter().map(|&k| eigenvalues[k]).fold(f64::INFINITY, f64::min);
        Ok(Self { basis, eigenvalues, kernel, stable, mu, alpha, bilinear, coupling })
    }

    /// Dirichlet Burgers on `[0, π]` with `A = ∂ₓ² + 1`, so `λ_k = k² − 1`.
    pub fn burgers(n: usize) -> Result<Self> {
        let basis = BasisKind::DirichletSine;
        let eig = (1..=n).map(|k| (k * k) as f64 - 1.0).collect();
        let table = CouplingTable::trigonometric(basis, n, 0.5, false, true);
        Self::new(basis, eig, 0.5, BilinearKind::Burgers, table)
    }

    /// Periodic Kuramoto–Sivashinsky on `[0, 2π]` with `A = −∂ₓ⁴`.
    pub fn kuramoto_sivashinsky(n: usize) -> Result<Self> {
        let basis = BasisKind::Periodic;
        let eig = (0..n).map(|m| (wavenumber(basis, m) as f64).powi(4)).collect();
        let table = CouplingTable::trigonometric(basis, n, 1.0, true, false);
        Self::new(basis, eig, 0.5, BilinearKind::Ks, table)
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn basis(&self) -> BasisKind {
        self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn kernel_modes(&self) -> &[usize] {
        &self.kernel
    }

    pub fn stable_modes(&self) -> &[usize] {
        &self.stable
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn bilinear_kind(&self) -> BilinearKind {
        self.bilinear
    }

    pub fn coupling(&self) -> &CouplingTable {
        &self.coupling
    }

    pub fn is_kernel(&self, k: usize) -> bool {
        self.eigenvalues[k] == 0.0
    }

    pub fn zeros(&self) -> SpectralField {
        SpectralField::zeros(self.basis, self.n())
    }

    pub fn unit(&self, k: usize) -> SpectralField {
        SpectralField::unit(self.basis, self.n(), k)
    }

    /// Field from its values on the kernel (in `kernel_modes` order).
    pub fn embed_kernel(&self, a: &[f64]) -> Result<SpectralField> {
        if a.len() != self.kernel_dim() {
            return Err(Error::DimensionMismatch { expected: self.kernel_dim(), got: a.len() });
        }
        let mut f = self.zeros();
        for (&k, &x) in self.kernel.iter().zip(a) {
            f.coeffs[k] = x;
        }
        Ok(f)
    }

    /// Kernel coordinates of a field.
    pub fn kernel_coords(&self, u: &[f64]) -> Vec<f64> {
        self.kernel.iter().map(|&k| u[k]).collect()
    }

    pub fn check(&self, u: &SpectralField) -> Result<()> {
        if u.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: u.len() });
        }
        if u.basis != self.basis {
            return Err(Error::BasisMismatch);
        }
        Ok(())
    }

    /// `A u`: mode `k` maps to `−λ_k u_k`.
    pub fn apply_a(&self, u: &SpectralField) -> Result<SpectralField> {
        self.check(u)?;
        let c = u.coeffs.iter().zip(&self.eigenvalues).map(|(x, l)| -l * x).collect();
        Ok(SpectralField::new(self.basis, c))
    }

    /// `A_s⁻¹ u` for `u ∈ S`.
    pub fn apply_as_inverse(&self, u: &SpectralField) -> Result<SpectralField> {
        self.check(u)?;
        let mut out = vec![0.0; self.n()];
        self.as_inverse_into(&u.coeffs, &mut out)?;
        Ok(SpectralField::new(self.basis, out))
    }

    pub(crate) fn as_inverse_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        for &k in &self.kernel {
            if u[k].abs() > KERNEL_TOLERANCE {
                return Err(Error::NonStableInput { mode: k, value: u[k] });
            }
            out[k] = 0.0;
        }
        for &k in &self.stable {
            out[k] = -u[k] / self.eigenvalues[k];
        }
        Ok(())
    }

    /// `B(u, v)` truncated to the retained modes.
    pub fn bilinear(&self, u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
        self.check(u)?;
        self.check(v)?;
        let mut out = vec![0.0; self.n()];
        self.coupling.apply(&u.coeffs, &v.coeffs, &mut out);
        Ok(SpectralField::new(self.basis, out))
    }

    pub fn project_c(&self, u: &SpectralField) -> Result<SpectralField> {
        self.check(u)?;
        let mut out = self.zeros();
        for &k in &self.kernel {
            out.coeffs[k] = u.coeffs[k];
        }
        Ok(out)
    }

    pub fn project_s(&self, u: &SpectralField) -> Result<SpectralField> {
        self.check(u)?;
        let mut out = u.clone();
        for &k in &self.kernel {
            out.coeffs[k] = 0.0;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn burgers(n: usize) -> ModelSpec {
        ModelSpec::burgers(n).unwrap()
    }

    #[test]
    fn burgers_spectrum_and_kernel() {
        let m = burgers(8);
        assert_eq!(m.kernel_modes(), &[0]);
        assert_eq!(m.eigenvalues()[1], 3.0);
        assert_eq!(m.mu(), 3.0);
    }

    #[test]
    fn apply_a_examples() {
        let m = burgers(8);
        assert_eq!(m.apply_a(&m.unit(0)).unwrap().coeffs(), m.zeros().coeffs());
        let a = m.apply_a(&m.unit(1)).unwrap();
        assert_eq!(a.coeffs()[1], -3.0);
        assert_eq!(m.apply_a(&m.zeros()).unwrap(), m.zeros());
    }

    #[test]
    fn apply_a_dimension_mismatch() {
        let m = burgers(8);
        let u = SpectralField::zeros(BasisKind::DirichletSine, 7);
        assert!(matches!(m.apply_a(&u), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn as_inverse_examples() {
        let m = burgers(8);
        let w = m.apply_as_inverse(&m.unit(1)).unwrap();
        assert!((w.coeffs()[1] + 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(m.apply_as_inverse(&m.zeros()).unwrap(), m.zeros());
        assert!(matches!(m.apply_as_inverse(&m.unit(0)), Err(Error::NonStableInput { mode: 0, .. })));
    }

    #[test]
    fn burgers_square_of_first_mode() {
        // B(sin x, sin x) = ½ sin 2x; with e₁ = s·sin x this is (s/2)·e₂.
        let m = burgers(8);
        let b = m.bilinear(&m.unit(0), &m.unit(0)).unwrap();
        let s = (2.0 / PI).sqrt();
        assert!((b.coeffs()[1] - s / 2.0).abs() < 1e-15);
        assert_eq!(b.coeffs()[0], 0.0);
        assert_eq!(m.project_c(&b).unwrap().norm(), 0.0);
    }

    #[test]
    fn bilinear_with_zero() {
        let m = burgers(8);
        let u = SpectralField::new(m.basis(), (0..8).map(|k| k as f64 * 0.1).collect());
        assert_eq!(m.bilinear(&u, &m.zeros()).unwrap().norm(), 0.0);
    }

    #[test]
    fn projections() {
        let m = burgers(8);
        let u = m.unit(0).lin_comb(1.0, &m.unit(1), 1.0).unwrap();
        assert_eq!(m.project_c(&u).unwrap(), m.unit(0));
        let pc = m.project_c(&u).unwrap();
        assert_eq!(m.project_c(&pc).unwrap(), pc);
    }

    #[test]
    fn ks_kernel_is_constant_mode() {
        let m = ModelSpec::kuramoto_sivashinsky(9).unwrap();
        assert_eq!(m.kernel_modes(), &[0]);
        assert_eq!(m.eigenvalues()[1], 1.0);
        assert_eq!(m.eigenvalues()[3], 16.0);
        // B(1, v) = 0 since the constant has no gradient.
        let b = m.bilinear(&m.unit(0), &m.unit(3)).unwrap();
        assert_eq!(b.norm(), 0.0);
    }

    #[test]
    fn ks_square_of_cos() {
        // (∂ₓ cos x/√π)² = sin²x/π = (1 − cos 2x)/(2π).
        let m = ModelSpec::kuramoto_sivashinsky(5).unwrap();
        let b = m.bilinear(&m.unit(1), &m.unit(1)).unwrap();
        let c0 = (2.0 * PI).sqrt() / (2.0 * PI);
        let c_cos2 = -PI.sqrt() / (2.0 * PI);
        assert!((b.coeffs()[0] - c0).abs() < 1e-15);
        assert!((b.coeffs()[3] - c_cos2).abs() < 1e-15);
    }

    #[test]
    fn invalid_models_rejected() {
        let t = CouplingTable::from_entries(2, []).unwrap();
        let e = ModelSpec::new(BasisKind::DirichletSine, vec![1.0, 2.0], 0.0, BilinearKind::Custom, t.clone());
        assert!(matches!(e, Err(Error::InvalidModel(_))));
        let e = ModelSpec::new(BasisKind::DirichletSine, vec![0.0, -2.0], 0.0, BilinearKind::Custom, t);
        assert!(e.is_err());
    }
}
