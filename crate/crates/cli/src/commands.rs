use std::path::Path;

use spde_ftle::amplitude::{plain_cubic_coefficient, CubicForm};
use spde_ftle::analysis::{
    ito_residual, run_ensemble, summarize_sweep, GapReport, Metric, PathMeasurement, PathSetup, ITO_REFINEMENT_WARN,
};
use spde_ftle::output::{write_index, ArtifactWriter, FtleSample};
use spde_ftle::thresholds::{gap_checks, regime_checks, sweep_checks, Check};
use spde_ftle::{simulate, Error, ExperimentConfig, NoiseSpec, Result};

use crate::Command;

/// Summary lines and evaluated thresholds of one invocation.
#[derive(Debug, Default)]
pub struct Outcome {
    pub summaries: Vec<String>,
    pub checks: Vec<Check>,
}

impl Outcome {
    fn line(&mut self, s: String) {
        self.summaries.push(s);
    }
}

pub fn run(command: &Command, config: &ExperimentConfig) -> Result<Outcome> {
    if matches!(command, Command::Sweep { .. }) {
        require_sweep_grid(config)?;
    }
    let hash = config.hash();
    let writer = || -> Result<ArtifactWriter> {
        let w = ArtifactWriter::new(&config.output.dir, hash.clone())?;
        w.write_config(&config.content_toml())?;
        Ok(w)
    };
    match command {
        Command::Simulate { .. } => simulate_paths(config, &writer()?),
        Command::Ftle { .. } => ftle(config, &writer()?),
        Command::Sweep { .. } => sweep(config, &writer()?),
        Command::Regime { .. } => regime(config, &writer()?),
        Command::ValidateIto { .. } => validate_ito(config, &writer()?),
        Command::DeriveFc { .. } => derive_fc(config),
        Command::ReportIndex { input } => {
            let dir = input.as_deref().unwrap_or_else(|| Path::new(&config.output.dir));
            report_index(dir)
        }
    }
}

fn label(eps: f64, stream: u64) -> String {
    format!("e{eps}-s{stream}")
}

fn kernel_start(setup: &PathSetup) -> Result<spde_ftle::SpectralField> {
    let eps = setup.params.eps;
    setup.model.embed_kernel(&setup.a0.iter().map(|a| a * eps).collect::<Vec<_>>())
}

fn simulate_paths(config: &ExperimentConfig, writer: &ArtifactWriter) -> Result<Outcome> {
    let mut out = Outcome::default();
    let stream = config.run.first_stream;
    for setup in config.path_setups()? {
        let spec = NoiseSpec::new(setup.alphas.clone(), setup.seed, stream)?;
        let traj = simulate(&setup.model, &setup.params, &spec, &kernel_start(&setup)?)?;
        let path = writer.write_trajectory(&setup.model, &traj, Some(&label(setup.params.eps, stream)))?;
        let tau = if traj.tau_star.is_finite() { format!("{:.4}", traj.tau_star) } else { "none".into() };
        let status = match traj.blowup {
            Some(t) => format!("blowup at fast time {t:.3}"),
            None => "ok".into(),
        };
        out.line(format!(
            "simulate eps={} stream={stream} points={} tau_star={tau} {status} -> {}",
            setup.params.eps,
            traj.len(),
            path.display()
        ));
    }
    Ok(out)
}

fn ensembles(config: &ExperimentConfig) -> Result<Vec<(PathSetup, Vec<PathMeasurement>)>> {
    let r = &config.run;
    config
        .path_setups()?
        .into_iter()
        .map(|s| {
            let samples = run_ensemble(&s, r.first_stream, r.paths)?;
            Ok((s, samples))
        })
        .collect()
}

fn write_ensembles(
    config: &ExperimentConfig,
    writer: &ArtifactWriter,
    groups: &[(PathSetup, Vec<PathMeasurement>)],
) -> Result<Vec<String>> {
    let records: Vec<FtleSample> = groups
        .iter()
        .flat_map(|(s, ms)| ms.iter().map(|m| FtleSample::from_measurement(m, &s.params, s.seed, writer.hash())))
        .collect();
    let all: Vec<PathMeasurement> = groups.iter().flat_map(|g| g.1.iter().cloned()).collect();
    let gaps: Vec<GapReport> =
        groups.iter().map(|(s, ms)| GapReport::from_samples(s.params.eps, ms, config.run.horizon)).collect();
    Ok(vec![
        writer.write_samples(&records, None)?.display().to_string(),
        writer.write_gaps(&gaps, None)?.display().to_string(),
        writer.write_profiles(&all, 8, None)?.display().to_string(),
    ])
}

fn ftle(config: &ExperimentConfig, writer: &ArtifactWriter) -> Result<Outcome> {
    let mut out = Outcome::default();
    let groups = ensembles(config)?;
    for (s, ms) in &groups {
        let g = GapReport::from_samples(s.params.eps, ms, config.run.horizon);
        let median = |m: Metric| spde_ftle::stats::Summary::of(&ms.iter().map(|p| p.metric(m)).collect::<Vec<_>>());
        let gap = median(Metric::FtleGap).map_or(f64::NAN, |x| x.median);
        out.line(format!(
            "ftle eps={} paths={} window={:.4} median_gap={gap:.3e} upper_violations={} lower_checked={} lower_violations={} blowups={}",
            g.eps,
            g.paths,
            s.window,
            g.upper_violations,
            g.lower_checked,
            g.lower_violations,
            g.blowups
        ));
        out.checks.extend(gap_checks(&[g]));
    }
    let files = write_ensembles(config, writer, &groups)?;
    out.line(format!("ftle wrote {}", files.join(", ")));
    Ok(out)
}

fn require_sweep_grid(config: &ExperimentConfig) -> Result<()> {
    match config.scaling.eps.len() {
        n if n < 3 => {
            Err(Error::InvalidParameter(format!("a sweep needs at least 3 ε values for a slope fit, got {n}")))
        }
        _ => Ok(()),
    }
}

fn sweep(config: &ExperimentConfig, writer: &ArtifactWriter) -> Result<Outcome> {
    let mut out = Outcome::default();
    let groups = ensembles(config)?;
    let mut files = write_ensembles(config, writer, &groups)?;
    let result = summarize_sweep(groups.into_iter().map(|(s, ms)| (s.params.eps, ms)).collect(), config.run.horizon)?;
    files.insert(0, writer.write_sweep(&result)?.display().to_string());
    for m in [Metric::ApproxError, Metric::ItoR2, Metric::FtleGap, Metric::KX, Metric::VsTail] {
        if let Some(fit) = result.series(m).and_then(|s| s.fit) {
            out.line(format!(
                "sweep {m} slope={:.3} [{:.3}, {:.3}] over {} eps",
                fit.slope, fit.slope_lo, fit.slope_hi, fit.points
            ));
        }
    }
    out.checks.extend(sweep_checks(&result, config.run.window_exponent));
    out.checks.extend(gap_checks(&result.gaps));
    out.line(format!("sweep wrote {}", files.join(", ")));
    Ok(out)
}

fn regime(config: &ExperimentConfig, writer: &ArtifactWriter) -> Result<Outcome> {
    let mut out = Outcome::default();
    let setup = config.regime_setup()?;
    let report = spde_ftle::analysis::regime_study(&setup, config.regime.paths)?;
    let (summary, samples) = writer.write_regime(&report, setup.seed)?;
    let exploratory = if report.case.is_exploratory() { " (exploratory)" } else { "" };
    out.line(format!(
        "regime {}{exploratory} eps={} paths={} spde_positive={:.3} [{:.3}, {:.3}] spde_negative={:.3} [{:.3}, {:.3}] ae_max={:.4} -> {}, {}",
        report.case,
        report.eps,
        report.samples.len(),
        report.spde_positive.estimate,
        report.spde_positive.lo,
        report.spde_positive.hi,
        report.spde_negative.estimate,
        report.spde_negative.lo,
        report.spde_negative.hi,
        report.ae_max,
        summary.display(),
        samples.display()
    ));
    out.checks.extend(regime_checks(&report));
    Ok(out)
}

fn validate_ito(config: &ExperimentConfig, writer: &ArtifactWriter) -> Result<Outcome> {
    let mut out = Outcome::default();
    let stream = config.run.first_stream;
    for setup in config.path_setups()? {
        let spec = NoiseSpec::new(setup.alphas.clone(), setup.seed, stream)?;
        let traj = simulate(&setup.model, &setup.params, &spec, &kernel_start(&setup)?)?;
        if let Some(time) = traj.blowup {
            return Err(Error::Blowup { time });
        }
        let res = ito_residual(&setup.model, &setup.cubic, &traj)?;
        let eps = setup.params.eps;
        let path = writer.write_ito(&res, Some(&label(eps, stream)))?;
        let t = config.run.horizon;
        out.line(format!(
            "validate-ito eps={eps} sup_r2={:.4e} sup_r1={:.4e} refinement={:.3} -> {}",
            res.sup_r2(t),
            res.sup_r1(t),
            res.refinement,
            path.display()
        ));
        out.checks.push(Check::at_most(format!("ito_refinement@eps={eps}"), res.refinement, ITO_REFINEMENT_WARN));
    }
    Ok(out)
}

fn derive_fc(config: &ExperimentConfig) -> Result<Outcome> {
    let model = config.build_model()?;
    let cubic = CubicForm::from_model(&model)?;
    let c = plain_cubic_coefficient(&model, &cubic)
        .ok_or_else(|| Error::InvalidModel("derive-fc needs a one-dimensional kernel".into()))?;
    let preset = config.model.preset;
    let function = match model.basis() {
        spde_ftle::BasisKind::DirichletSine => "sin x",
        spde_ftle::BasisKind::Periodic => "1",
    };
    let mut out = Outcome::default();
    out.line(format!("derive-fc {preset} modes={} F_c(a·{function}) = {}·a³·{function}", model.n(), fraction(-c)));
    out.line(format!("derive-fc {preset} amplitude drift = {}·a³", fraction(-2.0 * c)));
    Ok(out)
}

/// `x` as a decimal, followed by `±1/n` when it is that close to one.
fn fraction(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let inv = 1.0 / x;
    if (inv - inv.round()).abs() < 1e-8 * inv.abs() {
        let sign = if x < 0.0 { "-" } else { "" };
        format!("{x:.12} ({sign}1/{})", inv.abs().round())
    } else {
        format!("{x:.12}")
    }
}

fn report_index(dir: &Path) -> Result<Outcome> {
    let (path, index) = write_index(dir)?;
    let files: usize = index.groups.values().map(Vec::len).sum();
    let mut out = Outcome::default();
    out.line(format!(
        "report-index groups={} files={files} unrecognized={} -> {}",
        index.groups.len(),
        index.unrecognized.len(),
        path.display()
    ));
    Ok(out)
}
