//! Data tables behind the figures: Fisher-information sweeps in the sweep
//! schema and correlation profiles in [`PROFILE_HEADER`] form.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bath::{BathSpec, ProbeChain, Scenario};
use crate::error::{Error, Result};
use crate::ness::{profile_from, CorrelationKind, NessSolver, QuadratureConfig};
use crate::sweep::{evaluate_points, write_csv, GridPoint, PointSettings};

pub const PROFILE_HEADER: [&str; 7] = ["scenario", "N", "T", "spacing", "n", "xx", "pp"];

/// Coupling strengths for the error-versus-temperature figure; the source
/// figure does not list its values.
pub const FIG1_GAMMA2: [f64; 3] = [0.25, 1.0, 4.0];
pub const LOW_T: f64 = 0.01;

const SCENARIOS: [Scenario; 2] = [Scenario::IndependentBaths, Scenario::CommonBath];

pub fn log_space(from: f64, to: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![from];
    }
    (0..points)
        .map(|k| match k {
            0 => from,
            _ if k == points - 1 => to,
            _ => (from.ln() + (to.ln() - from.ln()) * k as f64 / (points - 1) as f64).exp(),
        })
        .collect()
}

fn canonical(scenario: Scenario, n: usize, temperature: f64) -> GridPoint {
    GridPoint {
        scenario,
        n,
        temperature,
        gamma2: 1.0,
        cutoff: 100.0,
        spacing: 0.1,
    }
}

pub fn fig1_points() -> Vec<GridPoint> {
    let mut out = Vec::new();
    for scenario in SCENARIOS {
        for t in log_space(0.01, 10.0, 40) {
            for gamma2 in FIG1_GAMMA2 {
                out.push(GridPoint {
                    gamma2,
                    ..canonical(scenario, 10, t)
                });
            }
        }
    }
    out
}

pub fn fig2_points() -> Vec<GridPoint> {
    let mut out = Vec::new();
    for scenario in SCENARIOS {
        for n in [1, 5, 10, 15] {
            for t in log_space(0.01, 10.0, 40) {
                out.push(canonical(scenario, n, t));
            }
        }
    }
    out
}

/// `N = 1..=30`, then every 10 up to 80 for the slope decay.
pub fn fig3_sizes() -> Vec<usize> {
    (1..=30).chain((40..=80).step_by(10)).collect()
}

pub fn fig3_points() -> Vec<GridPoint> {
    SCENARIOS
        .iter()
        .flat_map(|&s| fig3_sizes().into_iter().map(move |n| canonical(s, n, LOW_T)))
        .collect()
}

pub fn fig_b_points() -> Vec<GridPoint> {
    let mut out = Vec::new();
    for scenario in SCENARIOS {
        for n in 1..=30 {
            for t in [0.1, 1.0] {
                out.push(canonical(scenario, n, t));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub scenario: Scenario,
    pub n_probes: usize,
    pub temperature: f64,
    pub spacing: f64,
    /// One-based probe index.
    pub n: usize,
    pub xx: f64,
    pub pp: f64,
}

/// `<x_1 x_n>` and `<p_1 p_n>` for every `n` of one chain.
pub fn profile(p: &GridPoint, quadrature: &QuadratureConfig) -> Result<Vec<ProfileRow>> {
    let probes = ProbeChain::uniform(p.n, 1.0, 1.0, p.spacing)?;
    let bath = BathSpec::for_chain(&probes, p.gamma2, p.cutoff, p.scenario)?;
    let g = NessSolver::new(bath, probes, quadrature.clone())?.covariance(p.temperature)?;
    let xx = profile_from(&g, CorrelationKind::XX, 0);
    let pp = profile_from(&g, CorrelationKind::PP, 0);
    Ok(xx
        .into_iter()
        .zip(pp)
        .map(|((m, x), (_, q))| ProfileRow {
            scenario: p.scenario,
            n_probes: p.n,
            temperature: p.temperature,
            spacing: p.spacing,
            n: m + 1,
            xx: x,
            pp: q,
        })
        .collect())
}

pub fn write_profiles<W: Write>(rows: &[ProfileRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(PROFILE_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.scenario.label().to_string(),
            r.n_probes.to_string(),
            format!("{:.16e}", r.temperature),
            format!("{:.16e}", r.spacing),
            r.n.to_string(),
            format!("{:.16e}", r.xx),
            format!("{:.16e}", r.pp),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn profiles(points: &[GridPoint], jobs: usize) -> Result<Vec<ProfileRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?;
    let quad = QuadratureConfig::default();
    let chunks: Vec<Result<Vec<ProfileRow>>> = pool.install(|| points.par_iter().map(|p| profile(p, &quad)).collect());
    let mut out = Vec::new();
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn corr_t_points() -> Vec<GridPoint> {
    SCENARIOS
        .iter()
        .flat_map(|&s| log_space(0.01, 10.0, 40).into_iter().map(move |t| canonical(s, 10, t)))
        .collect()
}

pub fn corr_r_points() -> Vec<GridPoint> {
    let mut out: Vec<GridPoint> = log_space(0.01, 100.0, 41)
        .into_iter()
        .map(|a| GridPoint {
            spacing: a,
            ..canonical(Scenario::CommonBath, 10, LOW_T)
        })
        .collect();
    // independent-bath reference (distance independent)
    out.push(canonical(Scenario::IndependentBaths, 10, LOW_T));
    out
}

/// Writes all six tables into `dir`; returns the paths written.
pub fn write_all(dir: &Path, jobs: usize, mut progress: impl FnMut(&str)) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let settings = PointSettings::default();
    let mut written = Vec::new();
    let sweeps: [(&str, Vec<GridPoint>); 4] = [
        ("fig1", fig1_points()),
        ("fig2", fig2_points()),
        ("fig3", fig3_points()),
        ("figB_intermediate_T", fig_b_points()),
    ];
    for (name, points) in sweeps {
        progress(name);
        let recs = evaluate_points(&points, &settings, jobs)?;
        let path = dir.join(format!("{name}.csv"));
        write_csv(&recs, File::create(&path)?)?;
        written.push(path);
    }
    for (name, points) in [("figA_corr_T", corr_t_points()), ("figA_corr_r", corr_r_points())] {
        progress(name);
        let rows = profiles(&points, jobs)?;
        let path = dir.join(format!("{name}.csv"));
        write_profiles(&rows, File::create(&path)?)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_have_expected_sizes() {
        assert_eq!(fig1_points().len(), 240);
        assert_eq!(fig2_points().len(), 320);
        assert_eq!(fig3_points().len(), 2 * 35);
        assert_eq!(fig_b_points().len(), 120);
        let t = log_space(0.01, 10.0, 40);
        assert!((t[0] - 0.01).abs() < 1e-15 && (t[39] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn profile_rows_are_one_based() {
        let p = GridPoint {
            scenario: Scenario::CommonBath,
            n: 3,
            temperature: 0.5,
            gamma2: 1.0,
            cutoff: 100.0,
            spacing: 0.1,
        };
        let rows = profile(&p, &QuadratureConfig::default()).unwrap();
        assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(rows[0].xx > rows[1].xx.abs());
        let mut buf = Vec::new();
        write_profiles(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("scenario,N,T,spacing,n,xx,pp\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
