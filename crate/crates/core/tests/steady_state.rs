use nessthermo::bath::{BathSpec, ProbeChain, Scenario};
use nessthermo::gaussian::{momentum_block, position_block, CovMatrix};
use nessthermo::ness::{
    correlation_profile, CorrelationKind, NessProblem, NessSolver, QuadratureConfig,
};
use proptest::prelude::*;

fn problem(n: usize, scenario: Scenario, gamma2: f64, spacing: f64, t: f64) -> NessProblem {
    let p = ProbeChain::uniform(n, 1.0, 1.0, spacing).unwrap();
    let b = BathSpec::for_chain(&p, gamma2, 100.0, scenario).unwrap();
    NessProblem::new(b, p, t).unwrap()
}

fn cross_block_max(g: &CovMatrix) -> f64 {
    let m = g.matrix();
    let mut worst: f64 = 0.0;
    for i in 0..g.n_modes() {
        for j in 0..g.n_modes() {
            worst = worst.max(m[(2 * i, 2 * j + 1)].abs());
        }
    }
    worst
}

// Frozen once the prefactor was fixed by the Gibbs limit and the finite-bath
// evolution; guards against silent changes of the overall normalization.
#[test]
fn single_probe_low_temperature_regression() {
    let s = NessSolver::from_problem(&problem(1, Scenario::CommonBath, 1.0, 0.1, 0.01)).unwrap();
    let g = s.covariance(0.01).unwrap();
    assert!((g.xx(0, 0) / 0.3864113240396155 - 1.0).abs() < 1e-9, "{}", g.xx(0, 0));
    assert!((g.pp(0, 0) / 1.684120462569174 - 1.0).abs() < 1e-9, "{}", g.pp(0, 0));
}

#[test]
fn correlations_fall_off_along_the_chain() {
    let prob = problem(10, Scenario::CommonBath, 1.0, 0.1, 0.01);
    let prof = correlation_profile(&prob, CorrelationKind::XX, 0).unwrap();
    let mags: Vec<f64> = prof.iter().skip(1).map(|(_, v)| v.abs()).collect();
    for w in mags.windows(2) {
        assert!(w[1] <= 1.05 * w[0], "{mags:?}");
    }
    assert!(mags[0] > 0.05 * prof[0].1);

    let indep = problem(10, Scenario::IndependentBaths, 1.0, 0.1, 0.01);
    for kind in [CorrelationKind::XX, CorrelationKind::PP] {
        let prof = correlation_profile(&indep, kind, 3).unwrap();
        for (m, v) in prof {
            if m != 3 {
                assert_eq!(v, 0.0);
            }
        }
    }
    assert!(correlation_profile(&indep, CorrelationKind::XX, 10).is_err());
}

#[test]
fn high_temperature_removes_inter_probe_correlations() {
    let g = NessSolver::from_problem(&problem(10, Scenario::CommonBath, 1.0, 0.1, 10.0))
        .unwrap()
        .covariance(10.0)
        .unwrap();
    let m = g.matrix();
    let mut on: f64 = 0.0;
    let mut off: f64 = 0.0;
    for r in 0..20 {
        for c in 0..20 {
            if r / 2 == c / 2 {
                on = on.max(m[(r, c)].abs());
            } else {
                off = off.max(m[(r, c)].abs());
            }
        }
    }
    assert!(off / on < 1e-2, "{off} / {on}");
}

#[test]
fn tighter_tolerance_stays_within_the_error_estimate() {
    for (n, t) in [(2usize, 0.01), (5, 0.1), (3, 2.0)] {
        let prob = problem(n, Scenario::CommonBath, 1.0, 0.1, t);
        let base = NessSolver::from_problem(&prob).unwrap();
        let (g, err) = base.covariance_with_error(t).unwrap();
        let tight = QuadratureConfig {
            rel_tol: 0.5 * prob.quadrature.rel_tol,
            ..prob.quadrature.clone()
        };
        let g2 = NessSolver::new(prob.bath.clone(), prob.probes.clone(), tight)
            .unwrap()
            .covariance(t)
            .unwrap();
        let diff = (g.matrix() - g2.matrix()).amax();
        assert!(diff <= err, "N={n} T={t}: change {diff:.3e} vs estimate {err:.3e}");
    }
}

#[test]
fn weak_coupling_position_variance_grows_with_temperature() {
    let p = ProbeChain::uniform(1, 1.0, 1.0, 0.1).unwrap();
    let b = BathSpec::for_chain(&p, 0.01, 100.0, Scenario::CommonBath).unwrap();
    let s = NessSolver::new(b, p, QuadratureConfig::default()).unwrap();
    for t in [1.0, 2.0, 5.0, 20.0] {
        let d = s.derivative(t).unwrap();
        assert!(d[(0, 0)] >= -1e-10, "T={t}: {}", d[(0, 0)]);
    }
}

#[test]
fn classical_limit_is_linear_in_temperature() {
    let s = NessSolver::from_problem(&problem(1, Scenario::CommonBath, 1.0, 0.1, 50.0)).unwrap();
    let sol = s.solve(50.0).unwrap();
    let ratio = 50.0 * sol.derivative[(0, 0)] / sol.covariance.xx(0, 0);
    assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
    assert!((sol.covariance.xx(0, 0) / 50.0 - 1.0).abs() < 0.02);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn steady_states_are_physical_and_unskewed(
        n in 1usize..5,
        common in any::<bool>(),
        gamma2 in 0.05f64..4.0,
        spacing in 0.02f64..3.0,
        log_t in -2.0f64..1.0,
    ) {
        let t = 10f64.powf(log_t);
        let scenario = if common { Scenario::CommonBath } else { Scenario::IndependentBaths };
        let sol = NessSolver::from_problem(&problem(n, scenario, gamma2, spacing, t)).unwrap().solve(t).unwrap();
        let g = &sol.covariance;
        prop_assert!(g.is_physical(1e-6).unwrap());
        let m = g.matrix();
        prop_assert_eq!(m, &m.transpose());
        let scale = position_block(g).amax().max(momentum_block(g).amax());
        prop_assert!(cross_block_max(g) <= 1e-8 * scale);
        prop_assert!(sol.derivative.iter().all(|v| v.is_finite()));
        prop_assert_eq!(&sol.derivative, &sol.derivative.transpose());
    }
}
