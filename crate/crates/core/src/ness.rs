//! Steady-state covariance of the probes and its temperature derivative.
//!
//! With `G(w) = alpha(w)^-1` the symmetrized moments are
//!
//! ```text
//! <x_i x_j> = (1/pi) int_0^inf coth(w/2T) Im G_ij(w) dw
//! <p_i p_j> = (1/pi) int_0^inf coth(w/2T) m_i m_j w^2 Im G_ij(w) dw
//! ```
//!
//! and the position-momentum block vanishes identically. `G` is analytic in
//! the upper half plane, so rotating the contour onto the poles of coth gives
//! the equivalent Matsubara sums
//!
//! ```text
//! <x x> = T G(0) + 2T sum_{n>=1} G(i nu_n)
//! <p p> = T F(0) + 2T sum_{n>=1} F(i nu_n),   F = (K - chi) G diag(m)
//! ```
//!
//! with `nu_n = 2 pi n T`. `alpha(i xi)` is real and positive definite, so the
//! summand is smooth even when weakly damped collective modes make the
//! real-axis integrand sharply peaked. The sum is carried out term by term up
//! to a frequency well above every internal scale; the remainder is an
//! Euler-Maclaurin midpoint correction to an adaptive tail integral.
//!
//! The real-axis integrals are kept as [`Method::RealAxis`] for cross-checks.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::bath::{self, BathSpec, ProbeChain};
use crate::error::{Error, Result};
use crate::gaussian::CovMatrix;
use crate::quadrature::{self, Tolerance};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Finite integration range is `[0, omega_max_factor * cutoff]`; the rest
    /// is integrated after the substitution `w = w_max / u`.
    pub omega_max_factor: f64,
    pub max_subdivisions: usize,
    /// Extra mandatory split points, on top of the resonance-guided ones.
    pub split_points: Vec<f64>,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Imaginary-frequency sum (default).
    #[default]
    Matsubara,
    /// Real-frequency quadrature; only practical while every normal mode has
    /// an appreciable linewidth.
    RealAxis,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            omega_max_factor: 20.0,
            max_subdivisions: 100_000,
            split_points: Vec::new(),
            method: Method::default(),
        }
    }
}

impl QuadratureConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.omega_max_factor > 0.0 && self.max_subdivisions > 0) {
            return Err(Error::Domain("quadrature tolerances must be positive".into()));
        }
        Ok(())
    }

    fn tolerance(&self) -> Tolerance {
        Tolerance {
            rel: self.rel_tol,
            abs: self.abs_tol,
            max_intervals: self.max_subdivisions,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NessProblem {
    pub bath: BathSpec,
    pub probes: ProbeChain,
    pub temperature: f64,
    pub quadrature: QuadratureConfig,
}

impl NessProblem {
    pub fn new(bath: BathSpec, probes: ProbeChain, temperature: f64) -> Result<Self> {
        if bath.n() != probes.n() {
            return Err(Error::Domain(format!(
                "bath describes {} probes but the chain has {}",
                bath.n(),
                probes.n()
            )));
        }
        check_temperature(temperature)?;
        Ok(Self {
            bath,
            probes,
            temperature,
            quadrature: QuadratureConfig::default(),
        })
    }

    pub fn with_quadrature(mut self, quadrature: QuadratureConfig) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn at_temperature(&self, temperature: f64) -> Result<Self> {
        check_temperature(temperature)?;
        Ok(Self {
            temperature,
            ..self.clone()
        })
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

/// Covariance, its temperature derivative and the quadrature error budget.
#[derive(Debug, Clone)]
pub struct NessSolution {
    pub temperature: f64,
    pub covariance: CovMatrix,
    pub derivative: DMatrix<f64>,
    /// Summed absolute error estimate of the covariance integrals.
    pub error_estimate: f64,
    pub derivative_error_estimate: f64,
}

#[derive(Debug, Clone)]
struct Moments {
    xx: DMatrix<f64>,
    pp: DMatrix<f64>,
    error: f64,
}

impl Moments {
    fn into_matrix(self) -> DMatrix<f64> {
        let n = self.xx.nrows();
        let mut g = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                g[(2 * i, 2 * j)] = self.xx[(i, j)];
                g[(2 * i + 1, 2 * j + 1)] = self.pp[(i, j)];
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy)]
enum Weight {
    Vacuum,
    Thermal(f64),
    Derivative(f64),
}

impl Weight {
    /// Multiplies `K(w)` in the position integrand; already includes the
    /// factor `w` from `J = w * (J/w)`.
    fn at(self, w: f64) -> f64 {
        match self {
            Weight::Vacuum => w,
            Weight::Thermal(t) => {
                // 2 w n(w) = 2w / (e^{w/T} - 1) -> 2T as w -> 0
                let y = w / t;
                if w < 1e-8 {
                    2.0 * t * (1.0 - 0.5 * y)
                } else if y > 700.0 {
                    0.0
                } else {
                    2.0 * w / y.exp_m1()
                }
            }
            Weight::Derivative(t) => {
                // w * d/dT coth(w/2T) = w^2 / (2 T^2 sinh^2(w/2T)) = 2 (x / sinh x)^2
                let x = w / (2.0 * t);
                if w < 1e-8 {
                    2.0 * (1.0 - x * x / 3.0)
                } else if x > 350.0 {
                    0.0
                } else {
                    2.0 * (x / x.sinh()).powi(2)
                }
            }
        }
    }
}

/// Frequency-domain steady-state solver for one bath/probe configuration.
///
/// The temperature independent part of the covariance is computed on first
/// use and shared by every subsequent temperature.
#[derive(Debug)]
pub struct NessSolver {
    bath: BathSpec,
    probes: ProbeChain,
    quadrature: QuadratureConfig,
    stiffness: DMatrix<f64>,
    splits: Vec<f64>,
    omega_max: f64,
    /// Lower bound for the start of the summation tail.
    tail_start: f64,
    vacuum: OnceLock<Result<Moments>>,
}

/// Most Matsubara terms summed explicitly before giving up.
const MAX_MATSUBARA_TERMS: usize = 2_000_000;

struct ImagPoint {
    g: DMatrix<f64>,
    f: DMatrix<f64>,
    dg: DMatrix<f64>,
    df: DMatrix<f64>,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

impl NessSolver {
    pub fn new(bath: BathSpec, probes: ProbeChain, quadrature: QuadratureConfig) -> Result<Self> {
        if bath.n() != probes.n() {
            return Err(Error::Domain("bath and probe chain sizes differ".into()));
        }
        quadrature.validate()?;
        let stiffness = bath::stiffness(&bath, &probes);

        // alpha(0) is real; a non positive definite static kernel means the
        // probes have no stable equilibrium.
        let static_kernel = bath::alpha_with_stiffness(&bath, &probes, &stiffness, 0.0).map(|c| c.re);
        if static_kernel.cholesky().is_none() {
            return Err(Error::UnstableModel(
                "static kernel alpha(0) is not positive definite; the bath-induced shift \
                 exceeds the bare confinement (enable renormalization or weaken the coupling)"
                    .into(),
            ));
        }

        let omega_max = quadrature.omega_max_factor * bath.cutoff();
        let splits = resonance_splits(&bath, &probes, &stiffness, omega_max, &quadrature.split_points);

        // The summand varies on the scale of the stiffest probe mode and, for
        // coupled pairs, of 1/a_ij; start the tail well beyond both.
        let n = probes.n();
        let w_char = SymmetricEigen::new(mass_weighted(&stiffness, probes.masses()))
            .eigenvalues
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.max(0.0).sqrt()))
            .max(probes.frequencies().iter().fold(0.0f64, |m, &v| m.max(v)));
        let mut tail_start = 20.0 * w_char;
        if bath.scenario() == bath::Scenario::CommonBath {
            for i in 0..n {
                for j in 0..i {
                    let a = bath.delays()[(i, j)];
                    if a > 0.0 {
                        tail_start = tail_start.max(40.0 / a);
                    }
                }
            }
        }
        Ok(Self {
            bath,
            probes,
            quadrature,
            stiffness,
            splits,
            omega_max,
            tail_start,
            vacuum: OnceLock::new(),
        })
    }

    pub fn from_problem(prob: &NessProblem) -> Result<Self> {
        Self::new(prob.bath.clone(), prob.probes.clone(), prob.quadrature.clone())
    }

    pub fn n(&self) -> usize {
        self.probes.n()
    }

    /// `Re[alpha^-1 (J/w) alpha^-1^dagger]` at a real frequency.
    pub fn kernel(&self, omega: f64) -> Result<DMatrix<f64>> {
        let alpha = bath::alpha_with_stiffness(&self.bath, &self.probes, &self.stiffness, omega);
        let inv = alpha.lu().try_inverse().ok_or_else(|| {
            Error::UnstableModel(format!("alpha(w) is singular at w = {omega}"))
        })?;
        let jow = bath::spectral_density_over_omega(&self.bath, omega).map(|v| Complex::new(v, 0.0));
        let k = &inv * jow * inv.adjoint();
        let k = k.map(|c| c.re);
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::UnstableModel(format!("alpha(w) is numerically singular at w = {omega}")));
        }
        Ok(k)
    }

    fn moments(&self, weight: Weight) -> Result<Moments> {
        let n = self.n();
        let tri = n * (n + 1) / 2;
        let masses = self.probes.masses().to_vec();
        let mut pts = self.splits.clone();
        if let Weight::Thermal(t) | Weight::Derivative(t) = weight {
            pts.extend(
                [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0]
                    .iter()
                    .map(|s| s * t)
                    .filter(|&w| w < self.omega_max),
            );
        }
        let integrand = |w: f64, out: &mut [f64]| -> Result<()> {
            let wt = weight.at(w) / PI;
            if wt == 0.0 {
                out.iter_mut().for_each(|v| *v = 0.0);
                return Ok(());
            }
            let k = self.kernel(w)?;
            let mut idx = 0;
            for i in 0..n {
                for j in i..n {
                    out[idx] = wt * k[(i, j)];
                    out[tri + idx] = wt * w * w * masses[i] * masses[j] * k[(i, j)];
                    idx += 1;
                }
            }
            Ok(())
        };
        let tail = matches!(weight, Weight::Vacuum);
        let r = quadrature::integrate(integrand, 2 * tri, &pts, tail, self.quadrature.tolerance())?;

        let mut xx = DMatrix::zeros(n, n);
        let mut pp = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                xx[(i, j)] = r.value[idx];
                xx[(j, i)] = r.value[idx];
                pp[(i, j)] = r.value[tri + idx];
                pp[(j, i)] = r.value[tri + idx];
                idx += 1;
            }
        }
        Ok(Moments {
            xx,
            pp,
            error: r.abs_error,
        })
    }

    fn vacuum(&self) -> Result<&Moments> {
        self.vacuum
            .get_or_init(|| self.moments(Weight::Vacuum))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// `G(i xi)`, `F(i xi)` and their `xi` derivatives.
    fn imag_point(&self, xi: f64) -> Result<ImagPoint> {
        let n = self.n();
        let m = self.probes.masses();
        let (chi, dchi) = bath::susceptibility_imaginary(&self.bath, xi);
        let kc = &self.stiffness - &chi;
        let mut alpha = kc.clone();
        let mut dalpha = -&dchi;
        for i in 0..n {
            alpha[(i, i)] += m[i] * xi * xi;
            dalpha[(i, i)] += 2.0 * m[i] * xi;
        }
        let g = alpha
            .cholesky()
            .ok_or_else(|| Error::UnstableModel(format!("alpha(i xi) is not positive definite at xi = {xi}")))?
            .inverse();
        let dg = -(&g * dalpha * &g);
        let scale_cols = |mut a: DMatrix<f64>| {
            for j in 0..n {
                a.column_mut(j).scale_mut(m[j]);
            }
            a
        };
        let f = scale_cols(&kc * &g);
        let df = scale_cols(&kc * &dg - &dchi * &g);
        let out = ImagPoint {
            g: symmetrize(g),
            f: symmetrize(f),
            dg: symmetrize(dg),
            df: symmetrize(df),
        };
        if out.g.iter().chain(out.f.iter()).any(|v| !v.is_finite()) {
            return Err(Error::UnstableModel(format!("non-finite response at xi = {xi}")));
        }
        Ok(out)
    }

    /// Covariance and derivative moments from the Matsubara sum.
    fn matsubara(&self, t: f64) -> Result<(Moments, Moments)> {
        let n = self.n();
        let h = 2.0 * PI * t;
        let terms = (self.tail_start / h).ceil().max(200.0);
        if terms > MAX_MATSUBARA_TERMS as f64 {
            return Err(Error::Domain(format!(
                "temperature {t} needs {terms:.0} Matsubara terms (limit {MAX_MATSUBARA_TERMS})"
            )));
        }
        let terms = terms as usize;

        let p0 = self.imag_point(0.0)?;
        let mut xx = &p0.g * t;
        let mut pp = &p0.f * t;
        let mut dxx = p0.g.clone();
        let mut dpp = p0.f.clone();
        for k in 1..=terms {
            let nu = h * k as f64;
            let p = self.imag_point(nu)?;
            xx += &p.g * (2.0 * t);
            pp += &p.f * (2.0 * t);
            dxx += (&p.g + &p.dg * nu) * 2.0;
            dpp += (&p.f + &p.df * nu) * 2.0;
        }

        // Remainder: sum_{n>terms} h f(nu_n) is the midpoint rule on
        // [xi0, inf) with xi0 = (terms + 1/2) h, which equals
        // int f + h^2/24 f'(xi0) up to O(h^4) corrections.
        let xi0 = (terms as f64 + 0.5) * h;
        let tri = n * (n + 1) / 2;
        let mut pts = vec![xi0];
        pts.extend(
            [self.bath.cutoff(), self.omega_max]
                .iter()
                .chain(self.quadrature.split_points.iter())
                .copied()
                .filter(|&x| x > xi0),
        );
        let integrand = |xi: f64, out: &mut [f64]| -> Result<()> {
            let p = self.imag_point(xi)?;
            let mut idx = 0;
            for i in 0..n {
                for j in i..n {
                    out[idx] = p.g[(i, j)];
                    out[tri + idx] = p.f[(i, j)];
                    idx += 1;
                }
            }
            Ok(())
        };
        let tail = quadrature::integrate(integrand, 2 * tri, &pts, true, self.quadrature.tolerance())?;
        let unpack = |offset: usize| {
            let mut m = DMatrix::zeros(n, n);
            let mut idx = 0;
            for i in 0..n {
                for j in i..n {
                    m[(i, j)] = tail.value[offset + idx];
                    m[(j, i)] = tail.value[offset + idx];
                    idx += 1;
                }
            }
            m
        };
        let (int_g, int_f) = (unpack(0), unpack(tri));

        let e0 = self.imag_point(xi0)?;
        // second derivatives only enter the T-derivative of the h^2 term
        let step = 1e-3 * xi0;
        let (ep, em) = (self.imag_point(xi0 + step)?, self.imag_point(xi0 - step)?);
        let d2g = (&ep.dg - &em.dg) / (2.0 * step);
        let d2f = (&ep.df - &em.df) / (2.0 * step);
        let c = h * h / 24.0;

        xx += (&int_g + &e0.dg * c) / PI;
        pp += (&int_f + &e0.df * c) / PI;
        // d/dT at fixed term count: xi0 and h both scale with T.
        dxx += (-&e0.g * (xi0 / t) + &e0.dg * (2.0 * c / t) + &d2g * (c * xi0 / t)) / PI;
        dpp += (-&e0.f * (xi0 / t) + &e0.df * (2.0 * c / t) + &d2f * (c * xi0 / t)) / PI;

        let remainder = |d: &DMatrix<f64>| d.amax() * c * (h / xi0).powi(2) / PI;
        let rounding = |a: &DMatrix<f64>, b: &DMatrix<f64>| terms as f64 * f64::EPSILON * (a.amax() + b.amax());
        let error = tail.abs_error / PI + remainder(&e0.dg).max(remainder(&e0.df)) + rounding(&xx, &pp);
        let derror = remainder(&d2g).max(remainder(&d2f)) * xi0 / t + rounding(&dxx, &dpp);
        Ok((
            Moments {
                xx: symmetrize(xx),
                pp: symmetrize(pp),
                error,
            },
            Moments {
                xx: symmetrize(dxx),
                pp: symmetrize(dpp),
                error: derror,
            },
        ))
    }

    fn real_axis_covariance(&self, t: f64) -> Result<Moments> {
        let vac = self.vacuum()?;
        let th = self.moments(Weight::Thermal(t))?;
        Ok(Moments {
            xx: &vac.xx + &th.xx,
            pp: &vac.pp + &th.pp,
            error: vac.error + th.error,
        })
    }

    /// Steady-state covariance at temperature `t` and its error estimate.
    pub fn covariance_with_error(&self, t: f64) -> Result<(CovMatrix, f64)> {
        check_temperature(t)?;
        let total = match self.quadrature.method {
            Method::Matsubara => self.matsubara(t)?.0,
            Method::RealAxis => self.real_axis_covariance(t)?,
        };
        let error = total.error;
        Ok((CovMatrix::new(total.into_matrix())?, error))
    }

    pub fn covariance(&self, t: f64) -> Result<CovMatrix> {
        Ok(self.covariance_with_error(t)?.0)
    }

    /// `dGamma/dT` at temperature `t` and its error estimate.
    pub fn derivative_with_error(&self, t: f64) -> Result<(DMatrix<f64>, f64)> {
        check_temperature(t)?;
        let m = match self.quadrature.method {
            Method::Matsubara => self.matsubara(t)?.1,
            Method::RealAxis => self.moments(Weight::Derivative(t))?,
        };
        let err = m.error;
        Ok((m.into_matrix(), err))
    }

    pub fn derivative(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.derivative_with_error(t)?.0)
    }

    pub fn solve(&self, t: f64) -> Result<NessSolution> {
        check_temperature(t)?;
        let (cov, der) = match self.quadrature.method {
            Method::Matsubara => self.matsubara(t)?,
            Method::RealAxis => (self.real_axis_covariance(t)?, self.moments(Weight::Derivative(t))?),
        };
        let (error_estimate, derivative_error_estimate) = (cov.error, der.error);
        Ok(NessSolution {
            temperature: t,
            covariance: CovMatrix::new(cov.into_matrix())?,
            derivative: der.into_matrix(),
            error_estimate,
            derivative_error_estimate,
        })
    }
}

fn mass_weighted(m: &DMatrix<f64>, masses: &[f64]) -> DMatrix<f64> {
    let n = masses.len();
    DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (masses[i] * masses[j]).sqrt())
}

/// Mandatory split points: bare and renormalized eigenfrequencies, an estimate
/// of the dressed normal modes, a uniform grid over the resonance band and the
/// cutoff.
fn resonance_splits(
    b: &BathSpec,
    p: &ProbeChain,
    stiffness: &DMatrix<f64>,
    omega_max: f64,
    extra: &[f64],
) -> Vec<f64> {
    let n = p.n();
    let mut freqs: Vec<f64> = p.frequencies().to_vec();

    let mut push_modes = |m: &DMatrix<f64>| {
        for ev in SymmetricEigen::new(mass_weighted(m, p.masses())).eigenvalues.iter() {
            if *ev > 0.0 {
                freqs.push(ev.sqrt());
            }
        }
    };
    push_modes(stiffness);
    push_modes(&bath::renormalized_couplings(b, p));

    // Dressed modes: zeros of Re alpha(w) + m w^2 evaluated near the bare band.
    let w_ref = p.frequencies().iter().sum::<f64>() / n as f64;
    let mut dressed = bath::alpha_with_stiffness(b, p, stiffness, w_ref).map(|c| c.re);
    for i in 0..n {
        dressed[(i, i)] += p.masses()[i] * w_ref * w_ref;
    }
    push_modes(&dressed);

    let band_top = 2.0
        * freqs
            .iter()
            .copied()
            .filter(|&f| f < omega_max)
            .fold(w_ref, f64::max);
    let mut pts = vec![0.0, omega_max];
    pts.extend(freqs.into_iter().filter(|&f| f > 0.0 && f < omega_max));
    pts.extend((1..32).map(|k| band_top * k as f64 / 32.0).filter(|&f| f < omega_max));
    if b.cutoff() < omega_max {
        pts.push(b.cutoff());
    }
    pts.extend(extra.iter().copied().filter(|&f| f > 0.0 && f < omega_max));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

pub fn steady_state_covariance(prob: &NessProblem) -> Result<CovMatrix> {
    NessSolver::from_problem(prob)?.covariance(prob.temperature)
}

pub fn covariance_temperature_derivative(prob: &NessProblem) -> Result<DMatrix<f64>> {
    NessSolver::from_problem(prob)?.derivative(prob.temperature)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationKind {
    XX,
    PP,
}

/// `<x_ref x_n>` (or `<p_ref p_n>`) for every mode `n`, zero-based.
pub fn correlation_profile(
    prob: &NessProblem,
    kind: CorrelationKind,
    reference: usize,
) -> Result<Vec<(usize, f64)>> {
    let n = prob.probes.n();
    if reference >= n {
        return Err(Error::Domain(format!("reference mode {reference} out of range for {n} probes")));
    }
    let g = steady_state_covariance(prob)?;
    Ok(profile_from(&g, kind, reference))
}

pub(crate) fn profile_from(g: &CovMatrix, kind: CorrelationKind, reference: usize) -> Vec<(usize, f64)> {
    (0..g.n_modes())
        .map(|m| {
            let v = match kind {
                CorrelationKind::XX => g.xx(reference, m),
                CorrelationKind::PP => g.pp(reference, m),
            };
            (m, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::Scenario;

    fn problem(n: usize, scenario: Scenario, gamma2: f64, t: f64) -> NessProblem {
        let p = ProbeChain::uniform(n, 1.0, 1.0, 0.1).unwrap();
        let b = BathSpec::for_chain(&p, gamma2, 100.0, scenario).unwrap();
        NessProblem::new(b, p, t).unwrap()
    }

    #[test]
    fn weights_have_finite_small_frequency_limits() {
        let t = 0.3;
        assert!((Weight::Thermal(t).at(1e-9) - 2.0 * t).abs() < 1e-8);
        assert!((Weight::Thermal(t).at(2e-8) - 2.0 * t).abs() < 1e-7);
        assert!((Weight::Derivative(t).at(1e-9) - 2.0).abs() < 1e-12);
        assert!((Weight::Derivative(t).at(2e-8) - 2.0).abs() < 1e-12);
        assert_eq!(Weight::Derivative(t).at(1e6), 0.0);
        assert_eq!(Weight::Thermal(t).at(1e6), 0.0);
    }

    #[test]
    fn derivative_weight_is_d_dt_of_thermal_weight() {
        let (w, t, h) = (0.7, 0.4, 1e-6);
        let fd = (Weight::Thermal(t + h).at(w) - Weight::Thermal(t - h).at(w)) / (2.0 * h);
        assert!((fd - Weight::Derivative(t).at(w)).abs() < 1e-7);
    }

    #[test]
    fn unrenormalized_strong_coupling_is_unstable() {
        let p = ProbeChain::uniform(1, 1.0, 1.0, 0.1).unwrap();
        let b = BathSpec::for_chain(&p, 1.0, 100.0, Scenario::CommonBath)
            .unwrap()
            .with_renormalization(false);
        let prob = NessProblem::new(b, p, 0.1).unwrap();
        assert!(matches!(steady_state_covariance(&prob), Err(Error::UnstableModel(_))));
    }

    #[test]
    fn rejects_bad_temperature_and_sizes() {
        let p = ProbeChain::uniform(2, 1.0, 1.0, 0.1).unwrap();
        let b = BathSpec::for_chain(&p, 1.0, 100.0, Scenario::CommonBath).unwrap();
        assert!(NessProblem::new(b.clone(), p.clone(), 0.0).is_err());
        let p3 = ProbeChain::uniform(3, 1.0, 1.0, 0.1).unwrap();
        assert!(NessProblem::new(b, p3, 1.0).is_err());
    }

    #[test]
    fn independent_scenario_profile_is_local() {
        let prob = problem(3, Scenario::IndependentBaths, 1.0, 0.05);
        let prof = correlation_profile(&prob, CorrelationKind::XX, 0).unwrap();
        assert!(prof[0].1 > 0.0);
        assert_eq!(prof[1].1, 0.0);
        assert_eq!(prof[2].1, 0.0);
        assert!(correlation_profile(&prob, CorrelationKind::PP, 3).is_err());
    }

    #[test]
    fn high_temperature_equipartition() {
        let prob = problem(1, Scenario::CommonBath, 1.0, 50.0);
        let g = steady_state_covariance(&prob).unwrap();
        let ratio = g.xx(0, 0) / 50.0;
        assert!((ratio - 1.0).abs() < 0.02, "m w0^2 <x^2>/T = {ratio}");
        let d = covariance_temperature_derivative(&prob).unwrap();
        let lin = 50.0 * d[(0, 0)] / g.xx(0, 0);
        assert!((lin - 1.0).abs() < 0.02, "T d<x^2>/dT / <x^2> = {lin}");
    }

    #[test]
    fn weak_coupling_gives_thermal_position_variance() {
        let t = 1.0;
        let prob = problem(1, Scenario::CommonBath, 0.01, t);
        let g = steady_state_covariance(&prob).unwrap();
        let gibbs = 0.5 / (0.5 / t as f64).tanh();
        assert!((g.xx(0, 0) / gibbs - 1.0).abs() < 0.02);
    }

    #[test]
    fn position_variance_grows_with_temperature() {
        for t in [1.0, 2.0, 5.0] {
            let prob = problem(1, Scenario::CommonBath, 0.01, t);
            let d = covariance_temperature_derivative(&prob).unwrap();
            assert!(d[(0, 0)] >= -1e-10);
        }
    }

    #[test]
    fn matsubara_sum_matches_real_axis_integrals() {
        for (n, t) in [(1, 0.01), (2, 0.01), (2, 1.0)] {
            let prob = problem(n, Scenario::CommonBath, 1.0, t);
            let fast = NessSolver::from_problem(&prob).unwrap().solve(t).unwrap();
            let mut q = QuadratureConfig::default();
            q.method = Method::RealAxis;
            let slow = NessSolver::new(prob.bath, prob.probes, q).unwrap().solve(t).unwrap();
            let dg = (fast.covariance.matrix() - slow.covariance.matrix()).amax();
            let dd = (&fast.derivative - &slow.derivative).amax();
            assert!(dg < 1e-9 * fast.covariance.matrix().amax(), "N={n} T={t}: {dg:e}");
            assert!(dd < 1e-9 * fast.derivative.amax(), "N={n} T={t}: {dd:e}");
        }
    }

    #[test]
    fn independent_baths_are_copies_of_one_probe() {
        let one = steady_state_covariance(&problem(1, Scenario::IndependentBaths, 1.0, 0.05)).unwrap();
        let many = steady_state_covariance(&problem(4, Scenario::IndependentBaths, 1.0, 0.05)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect_xx = if i == j { one.xx(0, 0) } else { 0.0 };
                let expect_pp = if i == j { one.pp(0, 0) } else { 0.0 };
                assert!((many.xx(i, j) - expect_xx).abs() <= 1e-14 * one.xx(0, 0));
                assert!((many.pp(i, j) - expect_pp).abs() <= 1e-14 * one.pp(0, 0));
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let t = 0.2;
        let prob = problem(2, Scenario::CommonBath, 1.0, t);
        let s = NessSolver::from_problem(&prob).unwrap();
        let h = 1e-4 * t;
        let fd = (s.covariance(t + h).unwrap().into_matrix() - s.covariance(t - h).unwrap().into_matrix()) / (2.0 * h);
        let d = s.derivative(t).unwrap();
        assert!((&d - &fd).amax() < 1e-6 * d.amax());
    }

    #[test]
    fn position_momentum_block_vanishes_and_state_is_physical() {
        let g = steady_state_covariance(&problem(3, Scenario::CommonBath, 1.0, 0.01)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.matrix()[(2 * i, 2 * j + 1)], 0.0);
            }
        }
        let nu = crate::gaussian::symplectic_eigenvalues(&g).unwrap();
        assert!(nu.iter().all(|&v| v >= 0.5 - 1e-6));
    }

    #[test]
    fn equipartition_of_momentum_at_high_temperature() {
        let t = 50.0;
        let g = steady_state_covariance(&problem(1, Scenario::CommonBath, 1.0, t)).unwrap();
        // <p^2>/m approaches T from above (quantum corrections are positive)
        assert!(g.pp(0, 0) > t && g.pp(0, 0) < 1.1 * t);
    }

    #[test]
    fn extremely_low_temperature_is_rejected_not_hung() {
        let prob = problem(1, Scenario::CommonBath, 1.0, 1e-9);
        assert!(matches!(steady_state_covariance(&prob), Err(Error::Domain(_))));
    }
}
