//! Ohmic bath with Lorentzian cutoff and propagation delays between probes.
//!
//! All quantities are closed forms: the spectral density matrix `J(w)`, the
//! frequency-domain susceptibility `chi(w)`, the counter-term shifted
//! couplings and the kernel `alpha(w)` of the Langevin equation
//! `alpha(w) x(w) = F(w)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// (a) each probe sees its own bath.
    #[serde(rename = "a")]
    IndependentBaths,
    /// (b) all probes share one bath.
    #[serde(rename = "b")]
    CommonBath,
}

impl Scenario {
    pub fn label(&self) -> &'static str {
        match self {
            Scenario::IndependentBaths => "a",
            Scenario::CommonBath => "b",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" | "independent" | "independent_baths" => Ok(Scenario::IndependentBaths),
            "b" | "common" | "common_bath" => Ok(Scenario::CommonBath),
            other => Err(Error::Domain(format!("unknown scenario '{other}' (expected a or b)"))),
        }
    }
}

/// N harmonic probes on an equally spaced line.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeChain {
    masses: Vec<f64>,
    frequencies: Vec<f64>,
    couplings: DMatrix<f64>,
    spacing: f64,
}

impl ProbeChain {
    /// `n` identical, directly uncoupled probes; `spacing` is the travel time
    /// of a bath excitation between neighbours (|r_21|/c).
    pub fn uniform(n: usize, mass: f64, omega: f64, spacing: f64) -> Result<Self> {
        Self::new(vec![mass; n], vec![omega; n], DMatrix::zeros(n, n), spacing)
    }

    pub fn new(masses: Vec<f64>, frequencies: Vec<f64>, couplings: DMatrix<f64>, spacing: f64) -> Result<Self> {
        let n = masses.len();
        if n == 0 {
            return Err(Error::Domain("probe chain needs at least one probe".into()));
        }
        if frequencies.len() != n || couplings.shape() != (n, n) {
            return Err(Error::Domain("probe parameter dimensions disagree".into()));
        }
        if masses.iter().chain(&frequencies).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("masses and frequencies must be positive".into()));
        }
        if !(spacing >= 0.0 && spacing.is_finite()) {
            return Err(Error::Domain(format!("spacing must be nonnegative, got {spacing}")));
        }
        for i in 0..n {
            if couplings[(i, i)] != 0.0 {
                return Err(Error::Domain("direct couplings must have a zero diagonal".into()));
            }
            for j in 0..i {
                if couplings[(i, j)] != couplings[(j, i)] {
                    return Err(Error::Domain("direct couplings must be symmetric".into()));
                }
            }
        }
        Ok(Self {
            masses,
            frequencies,
            couplings,
            spacing,
        })
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn couplings(&self) -> &DMatrix<f64> {
        &self.couplings
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Equilibrium positions in time units, `r_i / c = i * spacing`.
    pub fn positions(&self) -> Vec<f64> {
        (0..self.n()).map(|i| i as f64 * self.spacing).collect()
    }

    /// `a_ij = |i - j| * spacing`.
    pub fn delays(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| i.abs_diff(j) as f64 * self.spacing)
    }

    /// Potential matrix of the isolated probes: `g` with `g_ii = m_i w_i^2`.
    pub fn bare_stiffness(&self) -> DMatrix<f64> {
        let mut g = self.couplings.clone();
        for i in 0..self.n() {
            g[(i, i)] = self.masses[i] * self.frequencies[i].powi(2);
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathSpec {
    gamma2: f64,
    cutoff: f64,
    delays: DMatrix<f64>,
    scenario: Scenario,
    renormalize: bool,
}

impl BathSpec {
    pub fn new(gamma2: f64, cutoff: f64, delays: DMatrix<f64>, scenario: Scenario) -> Result<Self> {
        if !(gamma2 > 0.0 && gamma2.is_finite()) {
            return Err(Error::Domain(format!("gamma2 must be positive, got {gamma2}")));
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::Domain(format!("cutoff must be positive, got {cutoff}")));
        }
        let n = delays.nrows();
        if delays.ncols() != n || n == 0 {
            return Err(Error::Domain("delay matrix must be square and nonempty".into()));
        }
        for i in 0..n {
            if delays[(i, i)] != 0.0 {
                return Err(Error::Domain("delay matrix must have a zero diagonal".into()));
            }
            for j in 0..n {
                let a = delays[(i, j)];
                if !(a >= 0.0) || a != delays[(j, i)] {
                    return Err(Error::Domain("delays must be nonnegative and symmetric".into()));
                }
            }
        }
        Ok(Self {
            gamma2,
            cutoff,
            delays,
            scenario,
            renormalize: true,
        })
    }

    pub fn for_chain(probes: &ProbeChain, gamma2: f64, cutoff: f64, scenario: Scenario) -> Result<Self> {
        Self::new(gamma2, cutoff, probes.delays(), scenario)
    }

    /// Toggles the counter-term (on by default).
    pub fn with_renormalization(mut self, on: bool) -> Self {
        self.renormalize = on;
        self
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn delays(&self) -> &DMatrix<f64> {
        &self.delays
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn renormalize(&self) -> bool {
        self.renormalize
    }

    pub fn n(&self) -> usize {
        self.delays.nrows()
    }

    fn couples(&self, i: usize, j: usize) -> bool {
        i == j || self.scenario == Scenario::CommonBath
    }

    fn lorentzian(&self, omega: f64) -> f64 {
        let c2 = self.cutoff * self.cutoff;
        self.gamma2 * c2 / (omega * omega + c2)
    }
}

/// `J(w) / w`, finite at `w = 0`.
pub fn spectral_density_over_omega(b: &BathSpec, omega: f64) -> DMatrix<f64> {
    let n = b.n();
    let lor = b.lorentzian(omega);
    DMatrix::from_fn(n, n, |i, j| {
        if b.couples(i, j) {
            lor * (omega * b.delays[(i, j)]).cos()
        } else {
            0.0
        }
    })
}

/// `J_ij(w) = gamma^2 w Omega^2 / (w^2 + Omega^2) cos(w a_ij)`.
pub fn spectral_density(b: &BathSpec, omega: f64) -> Result<DMatrix<f64>> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("spectral density needs omega > 0, got {omega}")));
    }
    Ok(spectral_density_over_omega(b, omega) * omega)
}

/// `chi_ij(w) = gamma^2 Omega^2/(w^2 + Omega^2) (Omega e^{-Omega a_ij} + i w e^{i w a_ij})`.
pub fn susceptibility(b: &BathSpec, omega: f64) -> DMatrix<Complex<f64>> {
    let n = b.n();
    let lor = b.lorentzian(omega);
    DMatrix::from_fn(n, n, |i, j| {
        if !b.couples(i, j) {
            return Complex::new(0.0, 0.0);
        }
        let a = b.delays[(i, j)];
        let re_static = b.cutoff * (-b.cutoff * a).exp();
        let phase = Complex::new(0.0, omega * a).exp();
        (Complex::new(re_static, 0.0) + Complex::new(0.0, omega) * phase) * lor
    })
}

/// `g^R_ij = g_ij + gamma^2 Omega e^{-Omega a_ij}` with `g_ii = m_i w_i^2`.
pub fn renormalized_couplings(b: &BathSpec, p: &ProbeChain) -> DMatrix<f64> {
    assert_eq!(b.n(), p.n(), "bath and probe chain sizes differ");
    let mut g = p.bare_stiffness();
    for i in 0..p.n() {
        for j in 0..p.n() {
            if b.couples(i, j) {
                g[(i, j)] += b.gamma2 * b.cutoff * (-b.cutoff * b.delays[(i, j)]).exp();
            }
        }
    }
    g
}

/// Stiffness matrix entering `alpha`: `g^R` when renormalization is on, the
/// bare `g` otherwise.
pub fn stiffness(b: &BathSpec, p: &ProbeChain) -> DMatrix<f64> {
    if b.renormalize {
        renormalized_couplings(b, p)
    } else {
        p.bare_stiffness()
    }
}

/// `alpha(w) = K - diag(m) w^2 - chi(w)` with `K` from [`stiffness`].
pub fn alpha_matrix(b: &BathSpec, p: &ProbeChain, omega: f64) -> DMatrix<Complex<f64>> {
    alpha_with_stiffness(b, p, &stiffness(b, p), omega)
}

pub(crate) fn alpha_with_stiffness(
    b: &BathSpec,
    p: &ProbeChain,
    k: &DMatrix<f64>,
    omega: f64,
) -> DMatrix<Complex<f64>> {
    let mut alpha = -susceptibility(b, omega);
    for i in 0..p.n() {
        for j in 0..p.n() {
            alpha[(i, j)].re += k[(i, j)];
        }
        alpha[(i, i)].re -= p.masses()[i] * omega * omega;
    }
    alpha
}

/// `(e^z - 1) / z` and its derivative, accurate near `z = 0`.
fn phi1(z: f64) -> (f64, f64) {
    if z.abs() < 0.5 {
        // sum_k z^k/(k+1)!  and  sum_k k z^(k-1)/(k+1)!
        let (mut v, mut d) = (0.0, 0.0);
        let mut zk = 1.0;
        let mut zkm1 = 0.0;
        let mut fact = 1.0;
        for k in 0..24 {
            fact *= (k + 1) as f64;
            v += zk / fact;
            d += k as f64 * zkm1 / fact;
            zkm1 = zk;
            zk *= z;
        }
        (v, d)
    } else {
        let e = z.exp();
        ((e - 1.0) / z, (e * (z - 1.0) + 1.0) / (z * z))
    }
}

/// Susceptibility continued to the positive imaginary axis, `chi(i xi)`, and
/// its derivative with respect to `xi`. Both are real.
///
/// `chi(i xi) = gamma^2 Omega^2 (Omega e^{-Omega a} - xi e^{-xi a}) / (Omega^2 - xi^2)`,
/// whose apparent pole at `xi = Omega` is removable.
pub fn susceptibility_imaginary(b: &BathSpec, xi: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = b.n();
    let om = b.cutoff;
    let pref = b.gamma2 * om * om;
    let mut chi = DMatrix::zeros(n, n);
    let mut dchi = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            if !b.couples(i, j) {
                continue;
            }
            let a = b.delays[(i, j)];
            let delta = xi - om;
            let (v, dv) = if (delta * a).abs() < 0.5 {
                // q = [h(Omega) - h(xi)] / (Omega - xi) with h(x) = x e^{-x a}
                //   = e^{-Omega a} (1 + xi E),  E = (e^{-delta a} - 1) / delta
                let (p, dp) = phi1(-delta * a);
                let e = -a * p;
                let de = a * a * dp;
                let scale = (-om * a).exp();
                let q = scale * (1.0 + xi * e);
                let dq = scale * (e + xi * de);
                (q / (om + xi), dq / (om + xi) - q / ((om + xi) * (om + xi)))
            } else {
                let den = om * om - xi * xi;
                let v = (om * (-om * a).exp() - xi * (-xi * a).exp()) / den;
                let dv = (-(-xi * a).exp() * (1.0 - xi * a) + 2.0 * xi * v) / den;
                (v, dv)
            };
            chi[(i, j)] = pref * v;
            chi[(j, i)] = pref * v;
            dchi[(i, j)] = pref * dv;
            dchi[(j, i)] = pref * dv;
        }
    }
    (chi, dchi)
}
