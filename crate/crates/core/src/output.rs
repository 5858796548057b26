//! Versioned CSV/JSONL artifacts and the index consumed by report tooling.
//!
//! Every CSV starts with a comment line
//! `# schema=<name> config_hash=<hash> version=<crate version>` followed by a
//! header row. Every JSONL record carries `schema` and `config_hash` fields.
//! File names are `<stem>-<config hash>[-<label>].<ext>`, and nothing in the
//! content depends on wall-clock time, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{GapReport, ItoResidual, Metric, PathMeasurement, RegimeCase, RegimeReport, SweepResult};
use crate::config::ConfigHash;
use crate::error::{Error, Result};
use crate::spde::{SimParams, Trajectory};
use crate::spectral::{norm, ModelSpec};
use crate::tangent::Ftle;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Leading coefficients written per trajectory row.
pub const TRAJECTORY_COEFFICIENTS: usize = 4;

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    Sweep,
    Gaps,
    Samples,
    Profiles,
    Trajectory,
    Ito,
    Regime,
    RegimeSamples,
    Config,
    Index,
}

impl Schema {
    pub const ALL: [Schema; 10] = [
        Schema::Sweep,
        Schema::Gaps,
        Schema::Samples,
        Schema::Profiles,
        Schema::Trajectory,
        Schema::Ito,
        Schema::Regime,
        Schema::RegimeSamples,
        Schema::Config,
        Schema::Index,
    ];

    pub fn stem(self) -> &'static str {
        match self {
            Schema::Sweep => "sweep",
            Schema::Gaps => "gaps",
            Schema::Samples => "samples",
            Schema::Profiles => "profiles",
            Schema::Trajectory => "trajectory",
            Schema::Ito => "ito",
            Schema::Regime => "regime",
            Schema::RegimeSamples => "regime-samples",
            Schema::Config => "config",
            Schema::Index => "index",
        }
    }

    /// Versioned name written into each artifact.
    pub fn tag(self) -> String {
        format!("{}-v1", self.stem())
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Schema::ALL.into_iter().find(|s| s.tag() == tag)
    }

    pub fn extension(self) -> &'static str {
        match self {
            Schema::Samples | Schema::RegimeSamples => "jsonl",
            Schema::Config => "toml",
            Schema::Index => "json",
            _ => "csv",
        }
    }

    /// Column names of CSV schemas.
    pub fn columns(self) -> Vec<String> {
        let fixed: &[&str] = match self {
            Schema::Sweep => &["metric", "eps", "samples", "median", "q05", "q95", "slope", "slope_lo", "slope_hi"],
            Schema::Gaps => &[
                "eps",
                "paths",
                "blowups",
                "stopped",
                "upper_violations",
                "upper_rate",
                "lower_checked",
                "lower_violations",
                "lower_rate",
            ],
            Schema::Profiles => &["eps", "stream", "t_fast", "vs_norm"],
            Schema::Trajectory => &["T", "norm_uc", "norm_us"],
            Schema::Ito => &["T", "norm_r2", "norm_r1"],
            Schema::Regime => &[
                "case",
                "eps",
                "nu",
                "sigma",
                "horizon",
                "paths",
                "blowups",
                "spde_positive",
                "spde_positive_lo",
                "spde_positive_hi",
                "spde_negative",
                "spde_negative_lo",
                "spde_negative_hi",
                "ae_positive",
                "ae_negative",
                "ae_max",
                "deterministic_error",
            ],
            Schema::Samples | Schema::RegimeSamples | Schema::Config | Schema::Index => &[],
        };
        let mut cols: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
        if self == Schema::Trajectory {
            cols.extend((0..TRAJECTORY_COEFFICIENTS).map(|k| format!("u_{k}")));
        }
        cols
    }
}

/// Identity line of an artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub schema: String,
    pub config_hash: ConfigHash,
    pub version: String,
}

impl ArtifactHeader {
    pub fn comment_line(&self) -> String {
        format!("# schema={} config_hash={} version={}", self.schema, self.config_hash, self.version)
    }

    /// Read the identity of a CSV comment line or a JSONL record.
    pub fn from_first_line(line: &str) -> Option<Self> {
        if let Some(rest) = line.strip_prefix("# ") {
            let mut fields = BTreeMap::new();
            for part in rest.split_whitespace() {
                let (k, v) = part.split_once('=')?;
                fields.insert(k, v);
            }
            return Some(Self {
                schema: fields.get("schema")?.to_string(),
                config_hash: ConfigHash::from_hex(fields.get("config_hash")?)?,
                version: fields.get("version")?.to_string(),
            });
        }
        let value: serde_json::Value = serde_json::from_str(line).ok()?;
        Some(Self {
            schema: value.get("schema")?.as_str()?.to_string(),
            config_hash: ConfigHash::from_hex(value.get("config_hash")?.as_str()?)?,
            version: value.get("version")?.as_str()?.to_string(),
        })
    }
}

/// Status bits of one FTLE sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFlags {
    pub blowup: bool,
    pub stopped: bool,
    pub upper_holds: bool,
    pub lower_checked: bool,
    pub lower_holds: bool,
}

/// JSONL record of one ensemble member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtleSample {
    pub schema: String,
    pub config_hash: ConfigHash,
    pub version: String,
    pub seed: u64,
    pub stream: u64,
    pub eps: f64,
    pub nu: f64,
    pub sigma: f64,
    /// Slow FTLE window `T`.
    pub window: f64,
    pub lambda_spde: Ftle,
    pub lambda_ae: Ftle,
    pub k_x: f64,
    pub k_n: f64,
    pub r2_sup: f64,
    pub approx_error: f64,
    pub ftle_gap: f64,
    pub tau_star: Option<f64>,
    pub flags: SampleFlags,
}

impl FtleSample {
    pub fn from_measurement(m: &PathMeasurement, params: &SimParams, seed: u64, hash: &ConfigHash) -> Self {
        Self {
            schema: Schema::Samples.tag(),
            config_hash: hash.clone(),
            version: ARTIFACT_VERSION.into(),
            seed,
            stream: m.stream,
            eps: m.eps,
            nu: params.nu,
            sigma: params.sigma,
            window: m.window,
            lambda_spde: m.lambda_spde,
            lambda_ae: m.lambda_ae,
            k_x: m.k_x,
            k_n: m.k_n,
            r2_sup: m.r2_sup,
            approx_error: m.approx_error,
            ftle_gap: m.ftle_gap,
            tau_star: m.tau_star,
            flags: SampleFlags {
                blowup: m.blowup,
                stopped: m.tau_star.is_some_and(|t| t <= params.horizon),
                upper_holds: m.upper_holds,
                lower_checked: m.lower_checked,
                lower_holds: m.lower_holds,
            },
        }
    }
}

/// JSONL record of one regime-study member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeRecord {
    pub schema: String,
    pub config_hash: ConfigHash,
    pub version: String,
    pub case: RegimeCase,
    pub seed: u64,
    pub stream: u64,
    pub eps: f64,
    pub a0: f64,
    pub lambda_spde: Ftle,
    pub lambda_ae: Ftle,
    pub blowup: bool,
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else {
        format!("{x}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Writes the artifacts of one configuration into a directory.
#[derive(Clone, Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    hash: ConfigHash,
}

impl ArtifactWriter {
    pub fn new(dir: impl Into<PathBuf>, hash: ConfigHash) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, hash })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &ConfigHash {
        &self.hash
    }

    pub fn path(&self, schema: Schema, label: Option<&str>) -> PathBuf {
        let mut name = format!("{}-{}", schema.stem(), self.hash);
        if let Some(l) = label {
            name.push('-');
            name.push_str(l);
        }
        name.push('.');
        name.push_str(schema.extension());
        self.dir.join(name)
    }

    fn header(&self, schema: Schema) -> ArtifactHeader {
        ArtifactHeader { schema: schema.tag(), config_hash: self.hash.clone(), version: ARTIFACT_VERSION.into() }
    }

    fn csv(&self, schema: Schema, label: Option<&str>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
        let path = self.path(schema, label);
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{}", self.header(schema).comment_line())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(schema.columns()).map_err(csv_error)?;
        for row in rows {
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(path)
    }

    fn jsonl<T: Serialize>(&self, schema: Schema, label: Option<&str>, records: &[T]) -> Result<PathBuf> {
        let path = self.path(schema, label);
        let mut out = BufWriter::new(File::create(&path)?);
        for r in records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(path)
    }

    /// Canonical configuration the artifacts were produced from.
    pub fn write_config(&self, canonical_toml: &str) -> Result<PathBuf> {
        let path = self.path(Schema::Config, None);
        fs::write(&path, format!("{}\n{canonical_toml}", self.header(Schema::Config).comment_line()))?;
        Ok(path)
    }

    /// Per-ε quantiles and slope fit of every metric.
    pub fn write_sweep(&self, sweep: &SweepResult) -> Result<PathBuf> {
        let mut rows = Vec::new();
        for series in &sweep.series {
            let (slope, lo, hi) = match series.fit {
                Some(f) => (num(f.slope), num(f.slope_lo), num(f.slope_hi)),
                None => Default::default(),
            };
            for (eps, summary) in sweep.eps.iter().zip(&series.per_eps) {
                let (n, med, q05, q95) = match summary {
                    Some(s) => (s.samples.to_string(), num(s.median), num(s.q05), num(s.q95)),
                    None => ("0".into(), String::new(), String::new(), String::new()),
                };
                rows.push(vec![
                    series.metric.to_string(),
                    num(*eps),
                    n,
                    med,
                    q05,
                    q95,
                    slope.clone(),
                    lo.clone(),
                    hi.clone(),
                ]);
            }
        }
        self.csv(Schema::Sweep, None, rows)
    }

    pub fn write_gaps(&self, gaps: &[GapReport], label: Option<&str>) -> Result<PathBuf> {
        let rows = gaps.iter().map(|g| {
            vec![
                num(g.eps),
                g.paths.to_string(),
                g.blowups.to_string(),
                g.stopped.to_string(),
                g.upper_violations.to_string(),
                num(g.upper_rate()),
                g.lower_checked.to_string(),
                g.lower_violations.to_string(),
                num(g.lower_rate()),
            ]
        });
        self.csv(Schema::Gaps, label, rows)
    }

    pub fn write_samples(&self, samples: &[FtleSample], label: Option<&str>) -> Result<PathBuf> {
        self.jsonl(Schema::Samples, label, samples)
    }

    /// `‖V_s‖` profiles of the first `per_eps` streams at each ε.
    pub fn write_profiles(&self, samples: &[PathMeasurement], per_eps: usize, label: Option<&str>) -> Result<PathBuf> {
        let mut count = BTreeMap::<u64, usize>::new();
        let mut rows = Vec::new();
        for m in samples {
            let seen = count.entry(m.eps.to_bits()).or_default();
            if *seen >= per_eps {
                continue;
            }
            *seen += 1;
            for &(t, vs) in &m.vs_profile {
                rows.push(vec![num(m.eps), m.stream.to_string(), num(t), num(vs)]);
            }
        }
        self.csv(Schema::Profiles, label, rows)
    }

    /// Stored slow-time states: norms of `U_c`, `U_s` and leading coefficients of `u`.
    pub fn write_trajectory(&self, model: &ModelSpec, traj: &Trajectory, label: Option<&str>) -> Result<PathBuf> {
        let rows = (0..traj.len()).map(|i| {
            let u = traj.fast_state(model, i);
            let mut row = vec![num(traj.times[i]), num(norm(traj.uc(i))), num(norm(traj.us(i)))];
            row.extend((0..TRAJECTORY_COEFFICIENTS).map(|k| u.coeffs().get(k).map_or_else(String::new, |&x| num(x))));
            row
        });
        self.csv(Schema::Trajectory, label, rows)
    }

    pub fn write_ito(&self, residual: &ItoResidual, label: Option<&str>) -> Result<PathBuf> {
        let rows = residual
            .times
            .iter()
            .enumerate()
            .map(|(i, t)| vec![num(*t), num(norm(residual.r2(i))), num(norm(residual.r1(i)))]);
        self.csv(Schema::Ito, label, rows)
    }

    /// Summary row plus per-path JSONL of a regime study.
    pub fn write_regime(&self, report: &RegimeReport, seed: u64) -> Result<(PathBuf, PathBuf)> {
        let label = Some(report.case.as_str());
        let blowups = report.samples.iter().filter(|s| s.blowup).count();
        let row = vec![
            report.case.to_string(),
            num(report.eps),
            num(report.nu),
            num(report.sigma),
            num(report.horizon),
            report.samples.len().to_string(),
            blowups.to_string(),
            num(report.spde_positive.estimate),
            num(report.spde_positive.lo),
            num(report.spde_positive.hi),
            num(report.spde_negative.estimate),
            num(report.spde_negative.lo),
            num(report.spde_negative.hi),
            num(report.ae_positive.estimate),
            num(report.ae_negative.estimate),
            num(report.ae_max),
            opt(report.deterministic_error),
        ];
        let summary = self.csv(Schema::Regime, label, [row])?;
        let records: Vec<RegimeRecord> = report
            .samples
            .iter()
            .map(|s| RegimeRecord {
                schema: Schema::RegimeSamples.tag(),
                config_hash: self.hash.clone(),
                version: ARTIFACT_VERSION.into(),
                case: report.case,
                seed,
                stream: s.stream,
                eps: report.eps,
                a0: s.a0,
                lambda_spde: s.lambda_spde,
                lambda_ae: s.lambda_ae,
                blowup: s.blowup,
            })
            .collect();
        let samples = self.jsonl(Schema::RegimeSamples, label, &records)?;
        Ok((summary, samples))
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub schema: String,
    pub version: String,
}

/// Result files of a directory grouped by config hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportIndex {
    pub schema: String,
    pub version: String,
    pub metrics: Vec<String>,
    pub groups: BTreeMap<ConfigHash, Vec<IndexEntry>>,
    /// Files without a recognizable artifact header.
    pub unrecognized: Vec<String>,
}

/// Scan `dir` (not recursively) for artifacts.
pub fn build_index(dir: &Path) -> Result<ReportIndex> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n != INDEX_FILE && [".csv", ".jsonl", ".toml"].iter().any(|ext| n.ends_with(ext)))
        .collect();
    names.sort();
    let mut groups = BTreeMap::<ConfigHash, Vec<IndexEntry>>::new();
    let mut unrecognized = Vec::new();
    for name in names {
        let mut first = String::new();
        BufReader::new(File::open(dir.join(&name))?).read_line(&mut first)?;
        match ArtifactHeader::from_first_line(first.trim_end()).filter(|h| Schema::from_tag(&h.schema).is_some()) {
            Some(h) => groups.entry(h.config_hash).or_default().push(IndexEntry {
                file: name,
                schema: h.schema,
                version: h.version,
            }),
            None => unrecognized.push(name),
        }
    }
    Ok(ReportIndex {
        schema: Schema::Index.tag(),
        version: ARTIFACT_VERSION.into(),
        metrics: Metric::ALL.iter().map(|m| m.to_string()).collect(),
        groups,
        unrecognized,
    })
}

/// Build the index of `dir` and write it to `dir/index.json`.
pub fn write_index(dir: &Path) -> Result<(PathBuf, ReportIndex)> {
    let index = build_index(dir)?;
    let path = dir.join(INDEX_FILE);
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok((path, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{wilson, SlopeFit, Summary};

    fn hash() -> ConfigHash {
        ConfigHash::from_hex("0123456789abcdef").unwrap()
    }

    #[test]
    fn header_round_trips_through_both_formats() {
        let h = ArtifactHeader { schema: Schema::Sweep.tag(), config_hash: hash(), version: "9.9.9".into() };
        assert_eq!(ArtifactHeader::from_first_line(&h.comment_line()), Some(h.clone()));
        let json = serde_json::to_string(&h).unwrap();
        assert_eq!(ArtifactHeader::from_first_line(&json), Some(h));
        assert!(ArtifactHeader::from_first_line("metric,eps").is_none());
    }

    #[test]
    fn schema_tags_are_unique() {
        for s in Schema::ALL {
            assert_eq!(Schema::from_tag(&s.tag()), Some(s));
        }
        assert_eq!(Schema::Trajectory.columns().len(), 3 + TRAJECTORY_COEFFICIENTS);
    }

    #[test]
    fn sweep_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let w = ArtifactWriter::new(dir.path(), hash()).unwrap();
        let summary = Summary { samples: 3, median: 0.5, q05: 0.25, q95: 1.0 };
        let fit = SlopeFit { slope: 1.0, intercept: 0.0, slope_lo: 0.9, slope_hi: 1.1, points: 3 };
        let sweep = SweepResult {
            eps: vec![0.2, 0.1, 0.05],
            series: vec![crate::analysis::MetricSeries {
                metric: Metric::ApproxError,
                per_eps: vec![Some(summary), None, Some(summary)],
                fit: Some(fit),
            }],
            gaps: vec![],
            samples: vec![],
        };
        let path = w.write_sweep(&sweep).unwrap();
        assert_eq!(path.file_name().unwrap(), "sweep-0123456789abcdef.csv");
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# schema=sweep-v1 config_hash=0123456789abcdef version={ARTIFACT_VERSION}"));
        assert_eq!(lines[1], "metric,eps,samples,median,q05,q95,slope,slope_lo,slope_hi");
        assert_eq!(lines[2], "approx_error,0.2,3,0.5,0.25,1,1,0.9,1.1");
        assert_eq!(lines[3], "approx_error,0.1,0,,,,1,0.9,1.1");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn samples_are_one_json_object_per_line() {
        let dir = tempfile::tempdir().unwrap();
        let w = ArtifactWriter::new(dir.path(), hash()).unwrap();
        let report = RegimeReport {
            case: RegimeCase::Stable,
            eps: 0.1,
            nu: -0.01,
            sigma: 0.01,
            horizon: 1.0,
            spde_positive: wilson(0, 2),
            spde_negative: wilson(2, 2),
            ae_positive: wilson(0, 2),
            ae_negative: wilson(2, 2),
            ae_max: -1.5,
            deterministic_error: None,
            samples: (0..2)
                .map(|s| crate::analysis::RegimeSample {
                    stream: s,
                    a0: 1.0,
                    lambda_spde: Ftle::slow(-1.2),
                    lambda_ae: Ftle::slow(f64::NAN),
                    blowup: false,
                })
                .collect(),
        };
        let (csv_path, jsonl_path) = w.write_regime(&report, 7).unwrap();
        assert!(csv_path.ends_with("regime-0123456789abcdef-stable.csv"));
        let text = fs::read_to_string(&jsonl_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["stream"], 1);
        assert_eq!(v["schema"], "regime-samples-v1");
        assert_eq!(v["lambda_spde"]["scale"], "slow");
        assert!(v["lambda_ae"]["value"].is_null());

        fs::write(dir.path().join("notes.csv"), "a,b\n").unwrap();
        let (_, index) = write_index(dir.path()).unwrap();
        let files: Vec<&str> = index.groups[&hash()].iter().map(|e| e.file.as_str()).collect();
        assert_eq!(files, vec!["regime-0123456789abcdef-stable.csv", "regime-samples-0123456789abcdef-stable.jsonl"]);
        assert_eq!(index.unrecognized, vec!["notes.csv".to_string()]);
    }
}
