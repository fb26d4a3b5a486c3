use std::f64::consts::PI;

use nessthermo::bath::{BathSpec, ProbeChain, Scenario};
use nessthermo::ness::{NessSolver, QuadratureConfig};
use nessthermo::oracle::{evolve_covariance, evolve_covariance_with, DiscreteBath, OracleSettings};

fn single_probe() -> (ProbeChain, BathSpec) {
    let p = ProbeChain::uniform(1, 1.0, 1.0, 0.1).unwrap();
    let b = BathSpec::for_chain(&p, 1.0, 100.0, Scenario::CommonBath).unwrap();
    (p, b)
}

#[test]
fn single_probe_uniform_grid_matches_steady_state() {
    let (p, b) = single_probe();
    let t = 0.01;
    let db = DiscreteBath::new(4000, 1000.0).unwrap();
    let oracle = evolve_covariance(&p, &b, &db, t, 12.0, 8.0).unwrap();
    let ness = NessSolver::new(b, p, QuadratureConfig::default()).unwrap().covariance(t).unwrap();
    for (i, j) in [(0, 0), (1, 1), (0, 1)] {
        let scale = (ness.matrix()[(i, i)] * ness.matrix()[(j, j)]).sqrt();
        let d = (ness.matrix()[(i, j)] - oracle.matrix()[(i, j)]).abs() / scale;
        assert!(d < 0.02, "({i},{j}): {d}");
    }
}

#[test]
fn probe_trace_settles_over_twenty_periods() {
    let (p, b) = single_probe();
    let db = DiscreteBath::graded(4000, 1000.0, 1.0).unwrap();
    let settings = OracleSettings {
        t_final: 50.0,
        window: 20.0 * 2.0 * PI,
        samples: 120,
        polarized: true,
    };
    let r = evolve_covariance_with(&p, &b, &db, 0.5, &settings).unwrap();
    assert!(r.trace_fluctuation < 0.01, "{}", r.trace_fluctuation);
    let ness = NessSolver::new(b, p, QuadratureConfig::default()).unwrap().covariance(0.5).unwrap();
    assert!((r.covariance.xx(0, 0) / ness.xx(0, 0) - 1.0).abs() < 0.02);
}
