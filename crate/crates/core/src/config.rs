//! Experiment configuration: TOML sections, scaling rules in ε and a stable
//! content hash.
//!
//! ```toml
//! [model]
//! preset = "burgers"
//! modes = 32
//!
//! [scaling]
//! eps = [0.2, 0.1, 0.05, 0.025]
//! nu = "eps^2"
//! sigma = "eps^2"
//! ```
//!
//! Every key has a default, so the two sections above are a complete
//! configuration. Parsing reports all problems at once.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amplitude::CubicForm;
use crate::analysis::{PathSetup, RegimeCase, RegimeSetup};
use crate::error::{Error, Result};
use crate::spde::{SimParams, DEFAULT_DT_MAX, DEFAULT_SCALING_BOUND};
use crate::spectral::{ModelPreset, ModelSpec};

const MAX_MODES: usize = 256;

/// `coefficient · ε^power`; written `"eps^2"`, `"-eps^2"`, `"0.5*eps^3"`,
/// `"eps"` or a plain number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ScalingRule {
    coefficient: f64,
    power: f64,
}

impl ScalingRule {
    pub fn new(coefficient: f64, power: f64) -> Self {
        if coefficient == 0.0 {
            Self { coefficient: 0.0, power: 0.0 }
        } else {
            Self { coefficient, power }
        }
    }

    pub fn eps_squared() -> Self {
        Self::new(1.0, 2.0)
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn eval(&self, eps: f64) -> f64 {
        if self.power == 0.0 {
            self.coefficient
        } else {
            self.coefficient * eps.powf(self.power)
        }
    }
}

impl FromStr for ScalingRule {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot read scaling rule {text:?}"));
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let (sign, body) = match compact.strip_prefix('-') {
            Some(rest) => (-1.0, rest),
            None => (1.0, compact.strip_prefix('+').unwrap_or(&compact)),
        };
        let number = |s: &str| s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(bad);
        let (coefficient, term) = match body.split_once('*') {
            Some((c, rest)) => (number(c)?, rest),
            None if body.starts_with("eps") => (1.0, body),
            None => return Ok(Self::new(sign * number(body)?, 0.0)),
        };
        let power = match term.strip_prefix("eps").ok_or_else(bad)? {
            "" => 1.0,
            rest => number(rest.strip_prefix('^').ok_or_else(bad)?)?,
        };
        Ok(Self::new(sign * coefficient, power))
    }
}

impl TryFrom<String> for ScalingRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScalingRule> for String {
    fn from(r: ScalingRule) -> String {
        r.to_string()
    }
}

impl fmt::Display for ScalingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (c, p) = (self.coefficient, self.power);
        if p == 0.0 {
            return write!(f, "{c}");
        }
        match c {
            1.0 => {}
            -1.0 => f.write_str("-")?,
            _ => write!(f, "{c}*")?,
        }
        if p == 1.0 {
            f.write_str("eps")
        } else {
            write!(f, "eps^{p}")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: ModelPreset,
    /// Galerkin truncation `N`.
    pub modes: usize,
    /// Noise amplitudes `α_k = noise_scale · (k+1)^(−noise_decay)`.
    pub noise_scale: f64,
    pub noise_decay: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { preset: ModelPreset::Burgers, modes: 32, noise_scale: 1.0, noise_decay: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSection {
    pub eps: Vec<f64>,
    pub nu: ScalingRule,
    pub sigma: ScalingRule,
    /// Bound `C` on `|ν|ε⁻²` and `σε⁻²`.
    pub bound: f64,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            eps: vec![0.2, 0.1, 0.05, 0.025],
            nu: ScalingRule::eps_squared(),
            sigma: ScalingRule::eps_squared(),
            bound: DEFAULT_SCALING_BOUND,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Slow horizon `T₀`.
    pub horizon: f64,
    /// FTLE window `T = ε^window_exponent`, capped at `T₀`.
    pub window_exponent: f64,
    pub paths: usize,
    pub seed: u64,
    pub first_stream: u64,
    /// `U_c(0)` in kernel coordinates.
    pub a0: Vec<f64>,
    pub r_c: f64,
    pub kappa: f64,
    pub dt: f64,
    pub subsample: usize,
    pub transient_factor: f64,
    pub stop_at_tau: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            window_exponent: 0.5,
            paths: 200,
            seed: 1,
            first_stream: 0,
            a0: vec![1.0],
            r_c: 10.0,
            kappa: 0.2,
            dt: DEFAULT_DT_MAX,
            subsample: 5,
            transient_factor: 10.0,
            stop_at_tau: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSection {
    pub case: RegimeCase,
    pub eps: f64,
    pub paths: usize,
    /// Slow FTLE horizon.
    pub horizon: f64,
    /// Slow burn-in of the ergodic case.
    pub burn_in: f64,
}

impl Default for RegimeSection {
    fn default() -> Self {
        Self { case: RegimeCase::Stable, eps: 0.1, paths: 500, horizon: 1.0, burn_in: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "results".into() }
    }
}

/// First 16 hex digits of the SHA-256 of the canonical TOML form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigHash(String);

impl ConfigHash {
    /// Accept a 16-digit lowercase hex string.
    pub fn from_hex(s: &str) -> Option<Self> {
        (s.len() == 16 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
            .then(|| Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ConfigHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub scaling: ScalingSection,
    pub run: RunSection,
    pub regime: RegimeSection,
    pub output: OutputSection,
}

const SECTIONS: [(&str, &[&str]); 5] = [
    ("model", &["preset", "modes", "noise_scale", "noise_decay"]),
    ("scaling", &["eps", "nu", "sigma", "bound"]),
    (
        "run",
        &[
            "horizon",
            "window_exponent",
            "paths",
            "seed",
            "first_stream",
            "a0",
            "r_c",
            "kappa",
            "dt",
            "subsample",
            "transient_factor",
            "stop_at_tau",
        ],
    ),
    ("regime", &["case", "eps", "paths", "horizon", "burn_in"]),
    ("output", &["dir"]),
];

fn unknown_keys(table: &toml::Table) -> Vec<String> {
    let mut errors = Vec::new();
    for (name, value) in table {
        let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| s == name) else {
            errors.push(format!("unknown section [{name}]"));
            continue;
        };
        let Some(inner) = value.as_table() else {
            errors.push(format!("[{name}] must be a table"));
            continue;
        };
        for key in inner.keys().filter(|k| !keys.contains(&k.as_str())) {
            errors.push(format!("unknown key `{key}` in [{name}]"));
        }
    }
    errors
}

impl ExperimentConfig {
    /// Parse and validate; on failure every problem found is returned.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        let mut errors = unknown_keys(&table);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        errors.extend(config.problems());
        if errors.is_empty() {
            Ok(config)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical TOML with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Canonical TOML of everything except `[output]`, which only says
    /// where results go.
    pub fn content_toml(&self) -> String {
        Self { output: OutputSection::default(), ..self.clone() }.to_toml()
    }

    pub fn hash(&self) -> ConfigHash {
        let digest = Sha256::digest(self.content_toml().as_bytes());
        ConfigHash(hex::encode(digest)[..16].to_string())
    }

    /// All validation failures of an already-deserialized config.
    pub fn problems(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let m = &self.model;
        let min_modes = match m.preset {
            ModelPreset::Burgers => 2,
            ModelPreset::Ks => 3,
        };
        if m.modes < min_modes || m.modes > MAX_MODES {
            bad.push(format!("model.modes = {} not in [{min_modes}, {MAX_MODES}]", m.modes));
        }
        if !(m.noise_scale >= 0.0 && m.noise_scale.is_finite()) {
            bad.push(format!("model.noise_scale = {} must be finite and ≥ 0", m.noise_scale));
        }
        if !(m.noise_decay >= 0.0 && m.noise_decay.is_finite()) {
            bad.push(format!("model.noise_decay = {} must be finite and ≥ 0", m.noise_decay));
        }

        let s = &self.scaling;
        if !(s.bound > 0.0 && s.bound.is_finite()) {
            bad.push(format!("scaling.bound = {} must be positive", s.bound));
        }
        if s.eps.is_empty() {
            bad.push("scaling.eps needs at least one value".into());
        }
        for &eps in &s.eps {
            if !(eps > 0.0 && eps < 1.0) {
                bad.push(format!("scaling.eps value {eps} not in (0, 1)"));
                continue;
            }
            let e2 = eps * eps;
            let nu = s.nu.eval(eps);
            let sigma = s.sigma.eval(eps);
            if !((nu / e2).abs() <= s.bound) {
                bad.push(format!(
                    "scaling.nu = {}: |ν|ε⁻² = {:.4} exceeds C = {} at ε = {eps}",
                    s.nu,
                    (nu / e2).abs(),
                    s.bound
                ));
            }
            if !(sigma >= 0.0) {
                bad.push(format!("scaling.sigma = {}: σ = {sigma} is negative at ε = {eps}", s.sigma));
            } else if !(sigma / e2 <= s.bound) {
                bad.push(format!(
                    "scaling.sigma = {}: σε⁻² = {:.4} exceeds C = {} at ε = {eps}",
                    s.sigma,
                    sigma / e2,
                    s.bound
                ));
            }
        }
        let mut sorted = s.eps.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            bad.push("scaling.eps values must be distinct".into());
        }

        let r = &self.run;
        let positive = |name: &str, x: f64, bad: &mut Vec<String>| {
            if !(x > 0.0 && x.is_finite()) {
                bad.push(format!("run.{name} = {x} must be positive"));
            }
        };
        positive("horizon", r.horizon, &mut bad);
        positive("window_exponent", r.window_exponent, &mut bad);
        positive("r_c", r.r_c, &mut bad);
        positive("dt", r.dt, &mut bad);
        if !(r.kappa > 0.0 && r.kappa <= 0.2) {
            bad.push(format!("run.kappa = {} not in (0, 0.2]", r.kappa));
        }
        if !(r.transient_factor >= 0.0 && r.transient_factor.is_finite()) {
            bad.push(format!("run.transient_factor = {} must be ≥ 0", r.transient_factor));
        }
        if r.paths == 0 {
            bad.push("run.paths must be ≥ 1".into());
        }
        if r.subsample == 0 {
            bad.push("run.subsample must be ≥ 1".into());
        }
        if r.a0.len() != 1 {
            bad.push(format!("run.a0 has {} entries; both presets have a one-dimensional kernel", r.a0.len()));
        }
        if r.a0.iter().any(|a| !a.is_finite()) {
            bad.push("run.a0 must be finite".into());
        }

        let g = &self.regime;
        if !(g.eps > 0.0 && g.eps < 1.0) {
            bad.push(format!("regime.eps = {} not in (0, 1)", g.eps));
        }
        if !(g.horizon > 0.0 && g.horizon.is_finite()) {
            bad.push(format!("regime.horizon = {} must be positive", g.horizon));
        }
        if !(g.burn_in >= 0.0 && g.burn_in.is_finite()) {
            bad.push(format!("regime.burn_in = {} must be ≥ 0", g.burn_in));
        }
        if g.paths == 0 {
            bad.push("regime.paths must be ≥ 1".into());
        }
        if self.output.dir.is_empty() {
            bad.push("output.dir must not be empty".into());
        }
        bad
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        self.model.preset.build(self.model.modes)
    }

    pub fn alphas(&self) -> Vec<f64> {
        let m = &self.model;
        (0..m.modes).map(|k| m.noise_scale * ((k + 1) as f64).powf(-m.noise_decay)).collect()
    }

    /// FTLE window at scale ε.
    pub fn window(&self, eps: f64) -> f64 {
        eps.powf(self.run.window_exponent).min(self.run.horizon)
    }

    /// Simulation parameters at scale ε with the configured `(ν, σ)` rules.
    pub fn sim_params(&self, model: &ModelSpec, eps: f64) -> Result<SimParams> {
        let s = &self.scaling;
        self.sim_params_with(model, eps, s.nu.eval(eps), s.sigma.eval(eps), self.run.horizon)
    }

    fn sim_params_with(&self, model: &ModelSpec, eps: f64, nu: f64, sigma: f64, horizon: f64) -> Result<SimParams> {
        let r = &self.run;
        let mut p = SimParams::new(model, nu, sigma, eps, horizon)
            .with_dt(r.dt)
            .with_subsample(r.subsample)
            .with_stopping(r.r_c, r.kappa);
        p.bound = self.scaling.bound;
        p.validate()?;
        Ok(p)
    }

    pub fn path_setup(&self, model: &ModelSpec, cubic: &CubicForm, eps: f64) -> Result<PathSetup> {
        let r = &self.run;
        Ok(PathSetup {
            model: model.clone(),
            cubic: cubic.clone(),
            alphas: self.alphas(),
            seed: r.seed,
            params: self.sim_params(model, eps)?,
            window: self.window(eps),
            a0: r.a0.clone(),
            ae_a0: None,
            ae_stream_offset: None,
            transient_factor: r.transient_factor,
            stop_at_tau: r.stop_at_tau,
        })
    }

    /// One setup per ε of the grid, largest ε first.
    pub fn path_setups(&self) -> Result<Vec<PathSetup>> {
        let model = self.build_model()?;
        let cubic = CubicForm::from_model(&model)?;
        let mut grid = self.scaling.eps.clone();
        grid.sort_by(|a, b| b.total_cmp(a));
        grid.into_iter().map(|eps| self.path_setup(&model, &cubic, eps)).collect()
    }

    pub fn regime_setup(&self) -> Result<RegimeSetup> {
        let g = &self.regime;
        let model = self.build_model()?;
        let cubic = CubicForm::from_model(&model)?;
        let (nu, sigma) = g.case.scaling(g.eps);
        let params = self.sim_params_with(&model, g.eps, nu, sigma, g.horizon)?;
        Ok(RegimeSetup {
            case: g.case,
            alphas: self.alphas(),
            seed: self.run.seed,
            params,
            horizon: g.horizon,
            a0: self.run.a0.clone(),
            burn_in: g.burn_in,
            model,
            cubic,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\npreset = \"burgers\"\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.model.modes, 32);
        assert_eq!(c.scaling.eps.len(), 4);
        assert_eq!(c.hash(), ExperimentConfig::parse("").unwrap().hash());
        assert_eq!(c.hash().as_str().len(), 16);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output.dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.run.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn serialization_round_trips() {
        let text = "[model]\npreset = \"ks\"\nmodes = 12\nnoise_decay = 1.5\n\n[scaling]\neps = [0.3, 0.1, 0.03]\n\
                    nu = \"-0.5*eps^2\"\nsigma = \"eps^3\"\n\n[regime]\ncase = \"ergodic\"\n";
        let c = ExperimentConfig::parse(text).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_toml(), again.to_toml());
        assert_eq!(c.scaling.nu, ScalingRule::new(-0.5, 2.0));
    }

    #[test]
    fn scaling_rules_parse_and_print() {
        for (text, coefficient, power, shown) in [
            ("eps^2", 1.0, 2.0, "eps^2"),
            ("-eps^2", -1.0, 2.0, "-eps^2"),
            ("0", 0.0, 0.0, "0"),
            ("0.5 * eps^2", 0.5, 2.0, "0.5*eps^2"),
            ("eps", 1.0, 1.0, "eps"),
            ("+2*eps^1.5", 2.0, 1.5, "2*eps^1.5"),
            ("-0*eps^3", 0.0, 0.0, "0"),
        ] {
            let r: ScalingRule = text.parse().unwrap();
            assert_eq!((r.coefficient(), r.power()), (coefficient, power), "{text}");
            assert_eq!(r.to_string(), shown);
            assert_eq!(shown.parse::<ScalingRule>().unwrap(), r);
        }
        for bad in ["eps^", "eps2", "x", "2*", "epsilon", "1e400"] {
            assert!(bad.parse::<ScalingRule>().is_err(), "{bad}");
        }
        assert!((ScalingRule::new(-1.0, 2.0).eval(0.1) + 0.01).abs() < 1e-15);
    }

    #[test]
    fn unbounded_sigma_rule_is_rejected() {
        let text = "[scaling]\neps = [0.05]\nsigma = \"eps\"\nbound = 10\n";
        let Err(Error::Config(errors)) = ExperimentConfig::parse(text) else { panic!("accepted") };
        assert_eq!(errors.len(), 1);
        assert!(errors[0].contains("σε⁻² = 20"), "{errors:?}");
    }

    #[test]
    fn all_errors_are_reported() {
        let text = "[run]\npaths = 0\nkappa = 0.7\ndt = -1\n\n[model]\nmodes = 1\n";
        let Err(Error::Config(errors)) = ExperimentConfig::parse(text) else { panic!("accepted") };
        assert_eq!(errors.len(), 4, "{errors:?}");
    }

    #[test]
    fn unknown_keys_are_listed() {
        let text = "[model]\nmode = 3\nnoise = 1\n\n[plots]\nx = 1\n";
        let Err(Error::Config(errors)) = ExperimentConfig::parse(text) else { panic!("accepted") };
        assert_eq!(errors.len(), 3, "{errors:?}");
        assert!(errors.iter().any(|e| e.contains("`mode`")));
        assert!(errors.iter().any(|e| e.contains("[plots]")));
    }

    #[test]
    fn setups_follow_the_grid() {
        let c = ExperimentConfig::parse("[scaling]\neps = [0.05, 0.2, 0.1]\n[model]\nmodes = 8\n").unwrap();
        let setups = c.path_setups().unwrap();
        let eps: Vec<f64> = setups.iter().map(|s| s.params.eps).collect();
        assert_eq!(eps, vec![0.2, 0.1, 0.05]);
        assert!((setups[1].window - 0.1f64.sqrt()).abs() < 1e-15);
        assert!((setups[2].params.sigma - 0.0025).abs() < 1e-15);
        let r = c.regime_setup().unwrap();
        assert!((r.params.nu + 0.01).abs() < 1e-15);
    }

    #[test]
    fn noise_profile_decays() {
        let c = ExperimentConfig::parse("[model]\nmodes = 4\nnoise_scale = 2\nnoise_decay = 1\n").unwrap();
        assert_eq!(c.alphas(), vec![2.0, 1.0, 2.0 / 3.0, 0.5]);
    }
}
