use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use nessthermo::bath::{BathSpec, ProbeChain, Scenario};
use nessthermo::figures::{self, ProfileRow};
use nessthermo::fit::{fit_power_law, windowed_slope};
use nessthermo::ness::{NessSolver, QuadratureConfig};
use nessthermo::oracle::{evolve_covariance_with, DiscreteBath, OracleSettings};
use nessthermo::sweep::{self, ExperimentConfig, GridPoint, OutputFormat, SweepRecord};
use nessthermo::{Error, Result};

#[derive(Parser)]
#[command(name = "nessthermo", version, about = "Steady-state thermometry with harmonic probes in bosonic baths")]
struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steady-state covariance (and its temperature derivative) of one setup.
    Ness(PointArgs),
    /// Run a parameter sweep from a TOML config.
    Sweep(SweepArgs),
    /// Fit power laws in N to a sweep CSV.
    Fit(FitArgs),
    /// Position and momentum correlations of probe 1 with every probe.
    Profile(PointArgs),
    /// Compare the steady state against a finite-bath time evolution.
    Oracle(OracleArgs),
    /// Write the CSV tables behind every figure.
    Figures(FiguresArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    A,
    B,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::A => Scenario::IndependentBaths,
            ScenarioArg::B => Scenario::CommonBath,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

#[derive(Args)]
struct PointArgs {
    #[arg(long, short = 'n', default_value_t = 2)]
    n: usize,
    #[arg(long, short = 't', default_value_t = 0.01)]
    temperature: f64,
    #[arg(long, value_enum, default_value = "b")]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 1.0)]
    gamma2: f64,
    #[arg(long, default_value_t = 100.0)]
    cutoff: f64,
    /// Nearest-neighbour delay r21/c.
    #[arg(long, default_value_t = 0.1)]
    spacing: f64,
    #[arg(long)]
    no_renormalization: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl PointArgs {
    fn setup(&self) -> Result<(BathSpec, ProbeChain)> {
        let p = ProbeChain::uniform(self.n, 1.0, 1.0, self.spacing)?;
        let b = BathSpec::for_chain(&p, self.gamma2, self.cutoff, self.scenario.into())?
            .with_renormalization(!self.no_renormalization);
        Ok((b, p))
    }

    fn grid_point(&self) -> GridPoint {
        GridPoint {
            scenario: self.scenario.into(),
            n: self.n,
            temperature: self.temperature,
            gamma2: self.gamma2,
            cutoff: self.cutoff,
            spacing: self.spacing,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.path`; stdout when neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    no_renormalization: bool,
    /// Restrict the sweep to one scenario.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitQuantity {
    Qfi,
    CfiX,
    CfiP,
}

#[derive(Args)]
struct FitArgs {
    /// Sweep CSV to read.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "qfi")]
    quantity: FitQuantity,
    /// Also report sliding-window slopes over this many points.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    min_n: Option<usize>,
    #[arg(long)]
    max_n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    Uniform,
    Graded,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    point: PointArgs,
    #[arg(long, default_value_t = 4000)]
    modes: usize,
    /// Bath band edge in units of the cutoff.
    #[arg(long, default_value_t = 10.0)]
    omega_max_factor: f64,
    #[arg(long, value_enum, default_value = "graded")]
    grid: GridArg,
    /// Knee of the graded grid, in units of the probe frequency.
    #[arg(long, default_value_t = 1.0)]
    knee: f64,
    #[arg(long, default_value_t = 1000.0)]
    t_final: f64,
    #[arg(long, default_value_t = 300.0)]
    window: f64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Start the bath thermal about y = 0 instead of the displaced equilibrium.
    #[arg(long)]
    unpolarized: bool,
}

#[derive(Args)]
struct FiguresArgs {
    #[arg(long, default_value = "figures")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn write_matrix_csv(w: &mut dyn Write, label: &str, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let cells: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{label},{i},{}", cells.join(","))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct NessDump {
    scenario: String,
    n: usize,
    temperature: f64,
    covariance: Vec<Vec<f64>>,
    derivative: Vec<Vec<f64>>,
    error_estimate: f64,
    derivative_error_estimate: f64,
}

fn cmd_ness(a: &PointArgs) -> Result<ExitCode> {
    let (b, p) = a.setup()?;
    let sol = NessSolver::new(b, p, QuadratureConfig::default())?.solve(a.temperature)?;
    let mut w = open_out(a.out.as_deref())?;
    match a.format {
        FormatArg::Json => {
            let dump = NessDump {
                scenario: Scenario::from(a.scenario).label().into(),
                n: a.n,
                temperature: a.temperature,
                covariance: matrix_rows(sol.covariance.matrix()),
                derivative: matrix_rows(&sol.derivative),
                error_estimate: sol.error_estimate,
                derivative_error_estimate: sol.derivative_error_estimate,
            };
            serde_json::to_writer_pretty(&mut w, &dump).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(w)?;
        }
        FormatArg::Csv => {
            let cols: Vec<String> = (0..2 * a.n).map(|j| format!("c{j}")).collect();
            writeln!(w, "block,row,{}", cols.join(","))?;
            write_matrix_csv(&mut w, "gamma", sol.covariance.matrix())?;
            write_matrix_csv(&mut w, "dgamma_dT", &sol.derivative)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: &SweepArgs, quiet: bool) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::from_path(&a.config)?;
    if a.no_renormalization {
        cfg.bath.renormalize = false;
    }
    if let Some(s) = a.scenario {
        cfg.sweep.scenario = Some(vec![Scenario::from(s).label().into()]);
    }
    let format = a.format.map(OutputFormat::from).unwrap_or(cfg.output.format);
    let points = cfg.grid();
    if !quiet {
        eprintln!("sweep: {} points", points.len());
    }
    let records = sweep::run_sweep(&cfg, a.jobs)?;
    let path = a.out.clone().or_else(|| cfg.output.path.clone());
    sweep::write_records(&records, format, open_out(path.as_deref())?)?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if !quiet && failed > 0 {
        eprintln!("sweep: {failed} of {} points failed", records.len());
    }
    if failed == records.len() {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FitRow {
    scenario: String,
    temperature: f64,
    gamma2: f64,
    cutoff: f64,
    spacing: f64,
    points: usize,
    exponent: f64,
    intercept: f64,
    r_squared: f64,
}

fn cmd_fit(a: &FitArgs) -> Result<ExitCode> {
    let records = sweep::read_csv(&a.input)?;
    let value = |r: &SweepRecord| match a.quantity {
        FitQuantity::Qfi => r.qfi,
        FitQuantity::CfiX => r.cfi_x,
        FitQuantity::CfiP => r.cfi_p,
    };
    // Group by everything except N; bit patterns keep the keys exact.
    let mut groups: BTreeMap<(String, u64, u64, u64, u64), Vec<(f64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        if a.min_n.is_some_and(|m| r.n < m) || a.max_n.is_some_and(|m| r.n > m) {
            continue;
        }
        let key = (
            r.scenario.clone(),
            r.temperature.to_bits(),
            r.gamma2.to_bits(),
            r.cutoff.to_bits(),
            r.spacing.to_bits(),
        );
        groups.entry(key).or_default().push((r.n as f64, value(r)));
    }
    let mut w = open_out(a.out.as_deref())?;
    writeln!(w, "scenario,T,gamma2,Omega_cutoff,spacing,points,exponent,intercept,r_squared")?;
    let mut windows = Vec::new();
    for ((scenario, t, g, c, s), mut pts) in groups {
        pts.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (t, g, c, s) = (f64::from_bits(t), f64::from_bits(g), f64::from_bits(c), f64::from_bits(s));
        match fit_power_law(&pts) {
            Ok(f) => {
                let row = FitRow {
                    scenario: scenario.clone(),
                    temperature: t,
                    gamma2: g,
                    cutoff: c,
                    spacing: s,
                    points: pts.len(),
                    exponent: f.exponent,
                    intercept: f.intercept,
                    r_squared: f.r_squared,
                };
                writeln!(
                    w,
                    "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}",
                    row.scenario, row.temperature, row.gamma2, row.cutoff, row.spacing, row.points, row.exponent,
                    row.intercept, row.r_squared
                )?;
            }
            Err(e) => eprintln!("fit: skipping {scenario} T={t}: {e}"),
        }
        if let Some(k) = a.window {
            if pts.len() >= k {
                for (center, slope) in windowed_slope(&pts, k)? {
                    windows.push(format!("{scenario},{t:.16e},{center:.16e},{slope:.16e}"));
                }
            }
        }
    }
    if a.window.is_some() {
        writeln!(w)?;
        writeln!(w, "scenario,T,N_center,local_exponent")?;
        for line in windows {
            writeln!(w, "{line}")?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_profile(a: &PointArgs) -> Result<ExitCode> {
    let rows: Vec<ProfileRow> = figures::profile(&a.grid_point(), &QuadratureConfig::default())?;
    let mut w = open_out(a.out.as_deref())?;
    match a.format {
        FormatArg::Csv => figures::write_profiles(&rows, w)?,
        FormatArg::Json => {
            let v: Vec<_> = rows.iter().map(|r| serde_json::json!({"n": r.n, "xx": r.xx, "pp": r.pp})).collect();
            serde_json::to_writer_pretty(&mut w, &v).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(w)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(a: &OracleArgs, quiet: bool) -> Result<ExitCode> {
    let (b, p) = a.point.setup()?;
    let omega_max = a.omega_max_factor * a.point.cutoff;
    let db = match a.grid {
        GridArg::Uniform => DiscreteBath::new(a.modes, omega_max)?,
        GridArg::Graded => DiscreteBath::graded(a.modes, omega_max, a.knee)?,
    };
    let settings = OracleSettings {
        t_final: a.t_final,
        window: a.window,
        samples: a.samples,
        polarized: !a.unpolarized,
    };
    let ness = NessSolver::new(b.clone(), p.clone(), QuadratureConfig::default())?.covariance(a.point.temperature)?;
    if !quiet {
        eprintln!("oracle: evolving {} probes with {} bath frequencies", a.point.n, a.modes);
    }
    let r = evolve_covariance_with(&p, &b, &db, a.point.temperature, &settings)?;
    let (g, o) = (ness.matrix(), r.covariance.matrix());
    let mut w = open_out(a.point.out.as_deref())?;
    writeln!(w, "row,col,ness,oracle,normalized_deviation")?;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let d = (g[(i, j)] - o[(i, j)]).abs() / (g[(i, i)] * g[(j, j)]).sqrt();
            worst = worst.max(d);
            writeln!(w, "{i},{j},{:.16e},{:.16e},{d:.3e}", g[(i, j)], o[(i, j)])?;
        }
    }
    if !quiet {
        eprintln!(
            "oracle: worst normalized deviation {worst:.3e}, trace fluctuation {:.3e}, {} bath modes",
            r.trace_fluctuation, r.bath_modes
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_figures(a: &FiguresArgs, quiet: bool) -> Result<ExitCode> {
    let written = figures::write_all(&a.out, a.jobs, |name| {
        if !quiet {
            eprintln!("figures: {name}");
        }
    })?;
    if !quiet {
        for p in written {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ness(a) => cmd_ness(a),
        Command::Sweep(a) => cmd_sweep(a, cli.quiet),
        Command::Fit(a) => cmd_fit(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Oracle(a) => cmd_oracle(a, cli.quiet),
        Command::Figures(a) => cmd_figures(a, cli.quiet),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
