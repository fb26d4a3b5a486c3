//! Parameter sweeps: TOML experiment configs, per-point evaluation and
//! CSV/JSON output with a fixed schema.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{BathSpec, ProbeChain, Scenario};
use crate::error::{Error, Result};
use crate::gaussian::{log_negativity, mutual_information};
use crate::metrology::FisherResult;
use crate::ness::{Method, NessSolver, QuadratureConfig};

pub const CSV_HEADER: [&str; 14] = [
    "scenario",
    "N",
    "T",
    "gamma2",
    "Omega_cutoff",
    "spacing",
    "qfi",
    "cfi_x",
    "cfi_p",
    "min_rel_error",
    "log_negativity_halfcut",
    "mutual_info_1_rest",
    "quad_err_est",
    "error_code",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Qfi,
    CfiX,
    CfiP,
    Negativity,
    MutualInformation,
}

impl Quantity {
    pub const ALL: [Quantity; 5] = [
        Quantity::Qfi,
        Quantity::CfiX,
        Quantity::CfiP,
        Quantity::Negativity,
        Quantity::MutualInformation,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeDefaults {
    #[serde(default = "one")]
    pub omega0: f64,
    #[serde(default = "one")]
    pub mass: f64,
}

impl Default for ProbeDefaults {
    fn default() -> Self {
        Self { omega0: 1.0, mass: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathDefaults {
    #[serde(default = "one")]
    pub gamma2: f64,
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    /// Nearest-neighbour delay `r21 / c`.
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "yes")]
    pub renormalize: bool,
}

impl Default for BathDefaults {
    fn default() -> Self {
        Self {
            gamma2: 1.0,
            cutoff: 100.0,
            spacing: 0.1,
            renormalize: true,
        }
    }
}

/// An axis is either an explicit list or `{ from, to, points, log }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    List(Vec<f64>),
    Range {
        from: f64,
        to: f64,
        points: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Axis::List(v) => v.clone(),
            Axis::Range { from, to, points, log } => {
                let n = *points;
                if n == 1 {
                    return vec![*from];
                }
                if *log {
                    return crate::figures::log_space(*from, *to, n);
                }
                (0..n)
                    .map(|k| match k {
                        0 => *from,
                        _ if k == n - 1 => *to,
                        _ => from + k as f64 / (n - 1) as f64 * (to - from),
                    })
                    .collect()
            }
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            Axis::List(v) => v.is_empty(),
            Axis::Range { points, .. } => *points == 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    /// `"a"` (independent baths) or `"b"` (common bath).
    pub scenario: Option<Vec<String>>,
    pub n_probes: Option<Vec<usize>>,
    pub temperature: Option<Axis>,
    pub gamma2: Option<Axis>,
    pub cutoff: Option<Axis>,
    pub spacing: Option<Axis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    #[serde(default = "csv_format")]
    pub format: OutputFormat,
    #[serde(default = "all_quantities")]
    pub quantities: Vec<Quantity>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            path: None,
            format: OutputFormat::Csv,
            quantities: Quantity::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSection {
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    /// `"matsubara"` or `"real_axis"`.
    #[serde(default = "default_method")]
    pub method: String,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        Self {
            rel_tol: default_rel_tol(),
            abs_tol: default_abs_tol(),
            method: default_method(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub probe: ProbeDefaults,
    #[serde(default)]
    pub bath: BathDefaults,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub quadrature: QuadratureSection,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_cutoff() -> f64 {
    100.0
}
fn default_spacing() -> f64 {
    0.1
}
fn csv_format() -> OutputFormat {
    OutputFormat::Csv
}
fn all_quantities() -> Vec<Quantity> {
    Quantity::ALL.to_vec()
}
fn default_rel_tol() -> f64 {
    QuadratureConfig::default().rel_tol
}
fn default_abs_tol() -> f64 {
    QuadratureConfig::default().abs_tol
}
fn default_method() -> String {
    "matsubara".into()
}

/// 1-based line and column of byte `offset` in `text`.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn config_error(text: &str, offset: usize, message: impl Into<String>) -> Error {
    let (line, column) = line_column(text, offset);
    Error::Config {
        line,
        column,
        message: message.into(),
    }
}

/// Byte offset of the first `key = ` assignment inside `[section]`, for
/// pointing validation errors at the offending line.
fn key_offset(text: &str, section: &str, key: &str) -> usize {
    let mut offset = 0;
    let mut current = String::new();
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix('[') {
            current = rest.split(']').next().unwrap_or("").trim().to_string();
        } else if current == section {
            let name = trimmed.split('=').next().unwrap_or("").trim();
            if name == key && trimmed.contains('=') {
                return offset + (line.len() - trimmed.len());
            }
        }
        offset += line.len();
    }
    0
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let offset = e.span().map_or(0, |s| s.start);
            config_error(text, offset, e.message().to_string())
        })?;
        cfg.validate(text)?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self, text: &str) -> Result<()> {
        let at = |section: &str, key: &str, msg: String| config_error(text, key_offset(text, section, key), msg);
        let positive = |section: &str, key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(at(section, key, format!("{key} must be positive, got {v}")))
            }
        };
        positive("probe", "omega0", self.probe.omega0)?;
        positive("probe", "mass", self.probe.mass)?;
        positive("bath", "gamma2", self.bath.gamma2)?;
        positive("bath", "cutoff", self.bath.cutoff)?;
        positive("bath", "spacing", self.bath.spacing)?;
        positive("quadrature", "rel_tol", self.quadrature.rel_tol)?;
        if !(self.quadrature.abs_tol >= 0.0) {
            return Err(at("quadrature", "abs_tol", "abs_tol must be nonnegative".into()));
        }
        self.method().map_err(|_| {
            at(
                "quadrature",
                "method",
                format!("unknown method {:?}; use \"matsubara\" or \"real_axis\"", self.quadrature.method),
            )
        })?;

        let s = &self.sweep;
        let any = s.scenario.as_ref().is_some_and(|v| !v.is_empty())
            || s.n_probes.as_ref().is_some_and(|v| !v.is_empty())
            || [&s.temperature, &s.gamma2, &s.cutoff, &s.spacing]
                .iter()
                .any(|a| a.as_ref().is_some_and(|a| !a.is_empty()));
        if !any {
            return Err(config_error(text, text.find("[sweep]").unwrap_or(0), "at least one sweep axis must be nonempty"));
        }
        if let Some(list) = &s.scenario {
            for name in list {
                parse_scenario(name).map_err(|e| at("sweep", "scenario", e.to_string()))?;
            }
        }
        if let Some(ns) = &s.n_probes {
            if ns.contains(&0) {
                return Err(at("sweep", "n_probes", "n_probes entries must be at least 1".into()));
            }
        }
        for (key, axis) in [
            ("temperature", &s.temperature),
            ("gamma2", &s.gamma2),
            ("cutoff", &s.cutoff),
            ("spacing", &s.spacing),
        ] {
            let Some(axis) = axis else { continue };
            if let Axis::Range { from, to, log, .. } = axis {
                if *log && !(*from > 0.0 && *to > 0.0) {
                    return Err(at("sweep", key, format!("log-spaced {key} needs positive bounds")));
                }
            }
            if let Some(v) = axis.values().into_iter().find(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(at("sweep", key, format!("{key} values must be positive, got {v}")));
            }
        }
        if self.temperatures().is_empty() {
            return Err(at("sweep", "temperature", "no temperature given".into()));
        }
        Ok(())
    }

    fn method(&self) -> Result<Method> {
        match self.quadrature.method.as_str() {
            "matsubara" => Ok(Method::Matsubara),
            "real_axis" => Ok(Method::RealAxis),
            other => Err(Error::Domain(format!("unknown method {other}"))),
        }
    }

    pub fn quadrature_config(&self) -> QuadratureConfig {
        QuadratureConfig {
            rel_tol: self.quadrature.rel_tol,
            abs_tol: self.quadrature.abs_tol,
            method: self.method().unwrap_or_default(),
            ..QuadratureConfig::default()
        }
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        match &self.sweep.scenario {
            Some(v) if !v.is_empty() => v.iter().filter_map(|s| parse_scenario(s).ok()).collect(),
            _ => vec![Scenario::IndependentBaths, Scenario::CommonBath],
        }
    }

    fn temperatures(&self) -> Vec<f64> {
        axis_or(&self.sweep.temperature, 0.01)
    }

    /// The cartesian product in output order: scenario, N, T, gamma2,
    /// cutoff, spacing, with the last varying fastest.
    pub fn grid(&self) -> Vec<GridPoint> {
        let ns = match &self.sweep.n_probes {
            Some(v) if !v.is_empty() => v.clone(),
            _ => vec![1],
        };
        let ts = self.temperatures();
        let gs = axis_or(&self.sweep.gamma2, self.bath.gamma2);
        let cs = axis_or(&self.sweep.cutoff, self.bath.cutoff);
        let ss = axis_or(&self.sweep.spacing, self.bath.spacing);
        let mut out = Vec::new();
        for scenario in self.scenarios() {
            for &n in &ns {
                for &temperature in &ts {
                    for &gamma2 in &gs {
                        for &cutoff in &cs {
                            for &spacing in &ss {
                                out.push(GridPoint {
                                    scenario,
                                    n,
                                    temperature,
                                    gamma2,
                                    cutoff,
                                    spacing,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn axis_or(axis: &Option<Axis>, default: f64) -> Vec<f64> {
    match axis {
        Some(a) if !a.is_empty() => a.values(),
        _ => vec![default],
    }
}

pub fn parse_scenario(name: &str) -> Result<Scenario> {
    match name {
        "a" | "independent" => Ok(Scenario::IndependentBaths),
        "b" | "common" => Ok(Scenario::CommonBath),
        other => Err(Error::Domain(format!("unknown scenario {other:?}; use \"a\" or \"b\""))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub scenario: Scenario,
    pub n: usize,
    pub temperature: f64,
    pub gamma2: f64,
    pub cutoff: f64,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub scenario: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub gamma2: f64,
    #[serde(rename = "Omega_cutoff")]
    pub cutoff: f64,
    pub spacing: f64,
    pub qfi: f64,
    pub cfi_x: f64,
    pub cfi_p: f64,
    pub min_rel_error: f64,
    pub log_negativity_halfcut: f64,
    pub mutual_info_1_rest: f64,
    pub quad_err_est: f64,
    pub error_code: String,
    /// Only in JSON output; CSV stays byte-reproducible.
    pub wall_time_s: f64,
}

impl SweepRecord {
    fn failed(p: &GridPoint, e: &Error, wall: f64) -> Self {
        Self {
            scenario: p.scenario.label().into(),
            n: p.n,
            temperature: p.temperature,
            gamma2: p.gamma2,
            cutoff: p.cutoff,
            spacing: p.spacing,
            qfi: f64::NAN,
            cfi_x: f64::NAN,
            cfi_p: f64::NAN,
            min_rel_error: f64::NAN,
            log_negativity_halfcut: f64::NAN,
            mutual_info_1_rest: f64::NAN,
            quad_err_est: f64::NAN,
            error_code: e.code().into(),
            wall_time_s: wall,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error_code == "ok"
    }

    fn csv_row(&self) -> [String; 14] {
        let f = |v: f64| format!("{v:.16e}");
        [
            self.scenario.clone(),
            self.n.to_string(),
            f(self.temperature),
            f(self.gamma2),
            f(self.cutoff),
            f(self.spacing),
            f(self.qfi),
            f(self.cfi_x),
            f(self.cfi_p),
            f(self.min_rel_error),
            f(self.log_negativity_halfcut),
            f(self.mutual_info_1_rest),
            f(self.quad_err_est),
            self.error_code.clone(),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct PointSettings {
    pub omega0: f64,
    pub mass: f64,
    pub renormalize: bool,
    pub quadrature: QuadratureConfig,
    pub quantities: Vec<Quantity>,
}

impl PointSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            omega0: cfg.probe.omega0,
            mass: cfg.probe.mass,
            renormalize: cfg.bath.renormalize,
            quadrature: cfg.quadrature_config(),
            quantities: cfg.output.quantities.clone(),
        }
    }
}

impl Default for PointSettings {
    fn default() -> Self {
        Self::from_config(&ExperimentConfig::default())
    }
}

fn evaluate_inner(p: &GridPoint, s: &PointSettings) -> Result<SweepRecord> {
    let probes = ProbeChain::uniform(p.n, s.mass, s.omega0, p.spacing)?;
    let bath = BathSpec::for_chain(&probes, p.gamma2, p.cutoff, p.scenario)?.with_renormalization(s.renormalize);
    let sol = NessSolver::new(bath, probes, s.quadrature.clone())?.solve(p.temperature)?;
    let wants = |q: Quantity| s.quantities.contains(&q);

    let fisher = FisherResult::evaluate(p.temperature, p.scenario, &sol.covariance, &sol.derivative)?;
    let half: Vec<usize> = (0..p.n / 2).collect();
    let (negativity, mutual) = if p.n == 1 {
        (0.0, 0.0)
    } else {
        let neg = if wants(Quantity::Negativity) {
            log_negativity(&sol.covariance, &half)?
        } else {
            f64::NAN
        };
        let mi = if wants(Quantity::MutualInformation) {
            mutual_information(&sol.covariance, &[0])?
        } else {
            f64::NAN
        };
        (neg, mi)
    };
    let pick = |q: Quantity, v: f64| if wants(q) { v } else { f64::NAN };
    Ok(SweepRecord {
        scenario: p.scenario.label().into(),
        n: p.n,
        temperature: p.temperature,
        gamma2: p.gamma2,
        cutoff: p.cutoff,
        spacing: p.spacing,
        qfi: pick(Quantity::Qfi, fisher.qfi),
        cfi_x: pick(Quantity::CfiX, fisher.cfi_x),
        cfi_p: pick(Quantity::CfiP, fisher.cfi_p),
        min_rel_error: pick(Quantity::Qfi, fisher.min_rel_error),
        log_negativity_halfcut: negativity,
        mutual_info_1_rest: mutual,
        quad_err_est: sol.error_estimate.max(sol.derivative_error_estimate),
        error_code: "ok".into(),
        wall_time_s: 0.0,
    })
}

/// Evaluates one grid point; solver failures land in `error_code`.
pub fn evaluate_point(p: &GridPoint, s: &PointSettings) -> SweepRecord {
    let start = Instant::now();
    let mut rec = evaluate_inner(p, s).unwrap_or_else(|e| SweepRecord::failed(p, &e, 0.0));
    rec.wall_time_s = start.elapsed().as_secs_f64();
    rec
}

/// Evaluates `points` on up to `jobs` threads (0 = all cores); output order
/// follows `points`.
pub fn evaluate_points(points: &[GridPoint], settings: &PointSettings, jobs: usize) -> Result<Vec<SweepRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| points.par_iter().map(|p| evaluate_point(p, settings)).collect()))
}

pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<SweepRecord>> {
    evaluate_points(&cfg.grid(), &PointSettings::from_config(cfg), jobs)
}

pub fn write_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        w.write_record(r.csv_row()).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(records: &[SweepRecord], mut out: W) -> Result<()> {
    // serde_json writes non-finite floats as null, which keeps failed cells visible.
    serde_json::to_writer_pretty(&mut out, records).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

pub fn write_records<W: Write>(records: &[SweepRecord], format: OutputFormat, out: W) -> Result<()> {
    match format {
        OutputFormat::Csv => write_csv(records, out),
        OutputFormat::Json => write_json(records, out),
    }
}

/// Reads back a sweep CSV (any file with the standard header).
pub fn read_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let io = |e: csv::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let header: Vec<String> = r.headers().map_err(io)?.iter().map(String::from).collect();
    if header != CSV_HEADER {
        return Err(Error::Io(format!(
            "{}: unexpected header; expected {}",
            path.display(),
            CSV_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(io)?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::Io(format!("{}: column {}: {e}", path.display(), CSV_HEADER[i])))
        };
        out.push(SweepRecord {
            scenario: row[0].to_string(),
            n: row[1]
                .parse()
                .map_err(|e| Error::Io(format!("{}: column N: {e}", path.display())))?,
            temperature: num(2)?,
            gamma2: num(3)?,
            cutoff: num(4)?,
            spacing: num(5)?,
            qfi: num(6)?,
            cfi_x: num(7)?,
            cfi_p: num(8)?,
            min_rel_error: num(9)?,
            log_negativity_halfcut: num(10)?,
            mutual_info_1_rest: num(11)?,
            quad_err_est: num(12)?,
            error_code: row[13].to_string(),
            wall_time_s: f64::NAN,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[sweep]\nn_probes = [1]\ntemperature = [0.01]\n";

    #[test]
    fn minimal_config_gives_both_scenarios() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let g = cfg.grid();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].scenario, Scenario::IndependentBaths);
        assert_eq!(g[0].gamma2, 1.0);
        assert_eq!(g[0].cutoff, 100.0);
        assert_eq!(g[0].spacing, 0.1);
    }

    #[test]
    fn single_point_gives_single_record() {
        let cfg = ExperimentConfig::parse("[sweep]\nscenario = [\"a\"]\nn_probes = [1]\ntemperature = [0.01]\n").unwrap();
        let recs = run_sweep(&cfg, 1).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].is_ok());
        assert!(recs[0].qfi > 0.0);
    }

    #[test]
    fn grid_order_is_lexicographic() {
        let cfg = ExperimentConfig::parse(
            "[sweep]\nscenario = [\"b\", \"a\"]\nn_probes = [2, 1]\ntemperature = [0.1, 0.2]\n",
        )
        .unwrap();
        let g = cfg.grid();
        let keys: Vec<(&str, usize, f64)> = g.iter().map(|p| (p.scenario.label(), p.n, p.temperature)).collect();
        assert_eq!(
            keys,
            vec![
                ("b", 2, 0.1),
                ("b", 2, 0.2),
                ("b", 1, 0.1),
                ("b", 1, 0.2),
                ("a", 2, 0.1),
                ("a", 2, 0.2),
                ("a", 1, 0.1),
                ("a", 1, 0.2),
            ]
        );
    }

    #[test]
    fn log_range_axis() {
        let a = Axis::Range {
            from: 0.01,
            to: 10.0,
            points: 4,
            log: true,
        };
        let v = a.values();
        assert_eq!(v.len(), 4);
        for (x, e) in v.iter().zip([0.01, 0.1, 1.0, 10.0]) {
            assert!((x / e - 1.0).abs() < 1e-12);
        }
        let cfg = ExperimentConfig::parse(
            "[sweep]\nn_probes = [1, 5, 10, 15]\ntemperature = { from = 0.01, to = 10.0, points = 40, log = true }\nscenario = [\"b\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.grid().len(), 160);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = ExperimentConfig::parse("[sweep]\nn_probes = [1,\ntemperature = 0.1\n").unwrap_err();
        let Error::Config { line, .. } = err else { panic!("{err:?}") };
        assert!(line >= 2);
    }

    #[test]
    fn validation_errors_point_at_the_key() {
        let err = ExperimentConfig::parse("[bath]\ngamma2 = 1.0\ncutoff = -5.0\n[sweep]\nn_probes = [1]\n").unwrap_err();
        let Error::Config { line, column, message } = err else { panic!() };
        assert_eq!((line, column), (3, 1));
        assert!(message.contains("cutoff"));

        let err = ExperimentConfig::parse("[sweep]\nscenario = [\"c\"]\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
    }

    #[test]
    fn unknown_keys_and_empty_sweeps_are_rejected() {
        assert!(matches!(
            ExperimentConfig::parse("[sweep]\nn_probes = [1]\ncolour = 3\n"),
            Err(Error::Config { .. })
        ));
        assert!(matches!(ExperimentConfig::parse("[sweep]\n"), Err(Error::Config { .. })));
        assert!(matches!(ExperimentConfig::parse("[sweep]\nn_probes = []\n"), Err(Error::Config { .. })));
        assert!(matches!(
            ExperimentConfig::parse("[sweep]\ntemperature = [0.1, 0.0]\n"),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn failed_points_stay_in_the_output() {
        let settings = PointSettings {
            renormalize: false,
            ..PointSettings::default()
        };
        let p = GridPoint {
            scenario: Scenario::CommonBath,
            n: 2,
            temperature: 0.1,
            gamma2: 1.0,
            cutoff: 100.0,
            spacing: 0.1,
        };
        let recs = evaluate_points(&[p], &settings, 1).unwrap();
        assert_eq!(recs[0].error_code, "unstable_model");
        assert!(recs[0].qfi.is_nan());
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert_eq!(row.split(',').count(), 14);
        assert!(row.ends_with(",NaN,unstable_model"));
    }

    #[test]
    fn csv_round_trip() {
        let cfg = ExperimentConfig::parse("[sweep]\nn_probes = [1, 2]\ntemperature = [0.5]\n").unwrap();
        let recs = run_sweep(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_csv(&recs, std::fs::File::create(&path).unwrap()).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.qfi, b.qfi);
            assert_eq!(a.mutual_info_1_rest, b.mutual_info_1_rest);
            assert_eq!(a.error_code, b.error_code);
        }
    }
}
