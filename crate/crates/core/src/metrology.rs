//! Fisher information for temperature estimation from a zero-mean Gaussian
//! state and its temperature derivative.

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::bath::Scenario;
use crate::error::{Error, Result};
use crate::gaussian::{self, CovMatrix, SymplecticForm};

/// Relative residual accepted for the SLD equation.
pub const SLD_RESIDUAL_TOL: f64 = 1e-10;
/// Below `DEGENERATE_RATIO * |Gamma|` the derivative is treated as zero.
pub const DEGENERATE_RATIO: f64 = 1e-14;

/// Coefficients of the quadratic SLD `L0 + L1.R + R.L2.R` (zero displacement).
#[derive(Debug, Clone)]
pub struct SldQuadratic {
    pub l2: DMatrix<f64>,
    pub l0: f64,
    pub l1: Vec<f64>,
    /// `|dGamma - 2 Gamma L2 Gamma - S L2 S / 2|_F / |dGamma|_F`.
    pub residual: f64,
}

impl SldQuadratic {
    /// Frobenius norm of the inter-mode 2x2 blocks of `L2` over that of the
    /// on-site blocks. Zero for a locally measurable SLD.
    pub fn nonlocality(&self) -> f64 {
        let mut on = 0.0;
        let mut off = 0.0;
        for i in 0..self.l2.nrows() {
            for j in 0..self.l2.ncols() {
                let v = self.l2[(i, j)].powi(2);
                if i / 2 == j / 2 {
                    on += v;
                } else {
                    off += v;
                }
            }
        }
        if on == 0.0 {
            0.0
        } else {
            (off / on).sqrt()
        }
    }
}

fn check_inputs(gamma: &CovMatrix, dgamma: &DMatrix<f64>) -> Result<()> {
    let d = gamma.matrix().nrows();
    if dgamma.nrows() != d || dgamma.ncols() != d {
        return Err(Error::Domain(format!(
            "derivative is {}x{}, expected {d}x{d}",
            dgamma.nrows(),
            dgamma.ncols()
        )));
    }
    if dgamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("derivative has non-finite entries".into()));
    }
    Ok(())
}

fn sld_residual(gamma: &DMatrix<f64>, s: &DMatrix<f64>, l2: &DMatrix<f64>, dgamma: &DMatrix<f64>) -> DMatrix<f64> {
    dgamma - 2.0 * gamma * l2 * gamma - 0.5 * s * l2 * s
}

fn finish(gamma: &CovMatrix, dgamma: &DMatrix<f64>, l2: DMatrix<f64>) -> SldQuadratic {
    let s = SymplecticForm::new(gamma.n_modes()).matrix();
    let l2 = (&l2 + l2.transpose()) * 0.5;
    let res = sld_residual(gamma.matrix(), &s, &l2, dgamma).norm();
    let scale = dgamma.norm();
    let residual = if scale > 0.0 { res / scale } else { res };
    let l0 = -0.5 * (&l2 * gamma.matrix()).trace();
    SldQuadratic {
        l0,
        l1: vec![0.0; l2.nrows()],
        l2,
        residual,
    }
}

fn is_degenerate(gamma: &CovMatrix, dgamma: &DMatrix<f64>) -> bool {
    dgamma.norm() < DEGENERATE_RATIO * gamma.matrix().norm()
}

/// Solves `dGamma = 2 Gamma L2 Gamma + S L2 S / 2` for symmetric `L2`.
///
/// Works in the basis where `Gamma^{-1/2} S Gamma^{-1/2}` is diagonal, which
/// decouples the equation entrywise; a few steps of residual correction
/// polish the result.
pub fn solve_sld(gamma: &CovMatrix, dgamma: &DMatrix<f64>) -> Result<SldQuadratic> {
    check_inputs(gamma, dgamma)?;
    let d = gamma.matrix().nrows();
    if is_degenerate(gamma, dgamma) {
        return Ok(finish(gamma, dgamma, DMatrix::zeros(d, d)));
    }
    let g = gamma.matrix();
    let eig = SymmetricEigen::new(g.clone());
    if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateState("covariance is not positive definite".into()));
    }
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()))
        * eig.eigenvectors.transpose();
    let s = SymplecticForm::new(gamma.n_modes()).matrix();
    let a = &inv_sqrt * &s * &inv_sqrt;
    // i A is Hermitian with eigenvalues +-1/nu.
    let ia = a.map(|v| Complex::new(0.0, v));
    let he = ia.symmetric_eigen();
    let u = he.eigenvectors;
    let mu = he.eigenvalues;
    let ut = u.adjoint();

    let mut denom = DMatrix::<f64>::zeros(d, d);
    for k in 0..d {
        for l in 0..d {
            let den = 2.0 - 0.5 * mu[k] * mu[l];
            if den.abs() < 1e-12 {
                return Err(Error::SldSingular(format!(
                    "modes with symplectic eigenvalues {:.6e} and {:.6e} are pure; the SLD equation is singular",
                    1.0 / mu[k].abs(),
                    1.0 / mu[l].abs()
                )));
            }
            denom[(k, l)] = den;
        }
    }

    let solve = |rhs: &DMatrix<f64>| -> DMatrix<f64> {
        let r = (&inv_sqrt * rhs * &inv_sqrt).map(|v| Complex::new(v, 0.0));
        let mut rt = &ut * r * &u;
        for k in 0..d {
            for l in 0..d {
                rt[(k, l)] /= denom[(k, l)];
            }
        }
        let z = (&u * rt * &ut).map(|c| c.re);
        let l = &inv_sqrt * z * &inv_sqrt;
        (&l + l.transpose()) * 0.5
    };

    let mut l2 = solve(dgamma);
    let scale = dgamma.norm();
    for _ in 0..3 {
        let res = sld_residual(g, &s, &l2, dgamma);
        if res.norm() <= 1e-3 * SLD_RESIDUAL_TOL * scale {
            break;
        }
        l2 += solve(&res);
    }
    let out = finish(gamma, dgamma, l2);
    if !(out.residual <= SLD_RESIDUAL_TOL) {
        return Err(Error::SldSingular(format!(
            "SLD residual {:.3e} exceeds {SLD_RESIDUAL_TOL:.0e}",
            out.residual
        )));
    }
    Ok(out)
}

/// Stacking convention for `vec(L2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecOrdering {
    RowMajor,
    ColumnMajor,
}

/// Reference solver: dense LU of the `4N^2 x 4N^2` vectorized equation.
///
/// With row stacking `vec(A X B) = (A (x) B^T) vec(X)`, with column stacking
/// `vec(A X B) = (B^T (x) A) vec(X)`.
pub fn solve_sld_vectorized(gamma: &CovMatrix, dgamma: &DMatrix<f64>, ordering: VecOrdering) -> Result<SldQuadratic> {
    check_inputs(gamma, dgamma)?;
    let d = gamma.matrix().nrows();
    if is_degenerate(gamma, dgamma) {
        return Ok(finish(gamma, dgamma, DMatrix::zeros(d, d)));
    }
    let g = gamma.matrix();
    let s = SymplecticForm::new(gamma.n_modes()).matrix();
    let (system, rhs) = match ordering {
        VecOrdering::RowMajor => (
            g.kronecker(&g.transpose()) * 2.0 + s.kronecker(&s.transpose()) * 0.5,
            DMatrix::from_row_slice(d * d, 1, dgamma.transpose().as_slice()),
        ),
        VecOrdering::ColumnMajor => (
            g.transpose().kronecker(g) * 2.0 + s.transpose().kronecker(&s) * 0.5,
            DMatrix::from_column_slice(d * d, 1, dgamma.as_slice()),
        ),
    };
    let x = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SldSingular("vectorized SLD system is singular".into()))?;
    let l2 = match ordering {
        VecOrdering::RowMajor => DMatrix::from_row_slice(d, d, x.as_slice()),
        VecOrdering::ColumnMajor => DMatrix::from_column_slice(d, d, x.as_slice()),
    };
    let out = finish(gamma, dgamma, l2);
    if !(out.residual <= SLD_RESIDUAL_TOL) {
        return Err(Error::SldSingular(format!("SLD residual {:.3e}", out.residual)));
    }
    Ok(out)
}

/// QFI together with both trace forms and the SLD it came from.
#[derive(Debug, Clone)]
pub struct QfiDetail {
    /// `2 Tr[L2 G L2 G + L2 S L2 S / 4]`.
    pub qfi: f64,
    /// `Tr[L2 dG]`.
    pub qfi_trace: f64,
    pub sld: SldQuadratic,
}

impl QfiDetail {
    pub fn form_mismatch(&self) -> f64 {
        let scale = self.qfi.abs().max(self.qfi_trace.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.qfi - self.qfi_trace).abs() / scale
        }
    }
}

pub fn qfi_detail(gamma: &CovMatrix, dgamma: &DMatrix<f64>) -> Result<QfiDetail> {
    let sld = solve_sld(gamma, dgamma)?;
    let g = gamma.matrix();
    let s = SymplecticForm::new(gamma.n_modes()).matrix();
    let l = &sld.l2;
    let lg = l * g;
    let ls = l * &s;
    let qfi = 2.0 * ((&lg * &lg).trace() + 0.25 * (&ls * &ls).trace());
    let qfi_trace = (l * dgamma).trace();
    Ok(QfiDetail { qfi, qfi_trace, sld })
}

pub fn qfi(gamma: &CovMatrix, dgamma: &DMatrix<f64>) -> Result<f64> {
    Ok(qfi_detail(gamma, dgamma)?.qfi.max(0.0))
}

/// Gaussian (general-dyne) measurement model.
#[derive(Debug, Clone)]
pub enum Measurement {
    /// Homodyne of every position quadrature.
    Position,
    /// Homodyne of every momentum quadrature.
    Momentum,
    /// Measurement with seed covariance `Gamma^s`; outcomes have covariance
    /// `Gamma + Gamma^s`.
    Explicit(DMatrix<f64>),
}

/// `Gamma^s = (+) diag(1/R, R)`; approaches position homodyne as `R -> inf`.
pub fn position_measurement_covariance(n_modes: usize, r: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n_modes, 2 * n_modes);
    for i in 0..n_modes {
        m[(2 * i, 2 * i)] = 1.0 / r;
        m[(2 * i + 1, 2 * i + 1)] = r;
    }
    m
}

fn gaussian_fisher(cov: &DMatrix<f64>, dcov: &DMatrix<f64>) -> Result<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateMeasurement("outcome covariance is singular".into()))?;
    let m = chol.solve(dcov);
    Ok(0.5 * (&m * &m).trace())
}

/// Classical Fisher information of the outcome distribution
/// `N(0, Gamma + Gamma^s)`: `Tr[C^-1 dC C^-1 dC] / 2`.
pub fn cfi_gaussian_measurement(gamma: &CovMatrix, dgamma: &DMatrix<f64>, meas: &Measurement) -> Result<f64> {
    check_inputs(gamma, dgamma)?;
    let f = match meas {
        Measurement::Position => gaussian_fisher(
            &gaussian::position_block(gamma),
            &gaussian::quadrature_block(dgamma, 0),
        )?,
        Measurement::Momentum => gaussian_fisher(
            &gaussian::momentum_block(gamma),
            &gaussian::quadrature_block(dgamma, 1),
        )?,
        Measurement::Explicit(seed) => {
            let seed_state = CovMatrix::new(seed.clone())?;
            if seed_state.n_modes() != gamma.n_modes() {
                return Err(Error::Domain("measurement covariance has the wrong dimension".into()));
            }
            if !seed_state.is_physical(gaussian::PHYSICALITY_TOL)? {
                return Err(Error::DegenerateMeasurement(
                    "measurement seed covariance is not a physical state".into(),
                ));
            }
            gaussian_fisher(&(gamma.matrix() + seed_state.matrix()), dgamma)?
        }
    };
    Ok(f.max(0.0))
}

/// `1 / (nu T sqrt(F))`: the Cramer-Rao bound on `dT / T` after `nu` shots.
pub fn min_relative_error(temperature: f64, fisher: f64, nu: u32) -> Result<f64> {
    if !(fisher > 0.0) {
        return Err(Error::Domain(format!("Fisher information must be positive, got {fisher}")));
    }
    if !(temperature > 0.0) || nu == 0 {
        return Err(Error::Domain("temperature and shot count must be positive".into()));
    }
    Ok(1.0 / (nu as f64 * temperature * fisher.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherResult {
    pub temperature: f64,
    pub scenario: Scenario,
    pub n_probes: usize,
    pub qfi: f64,
    pub cfi_x: f64,
    pub cfi_p: f64,
    pub min_rel_error: f64,
}

impl FisherResult {
    pub fn evaluate(
        temperature: f64,
        scenario: Scenario,
        gamma: &CovMatrix,
        dgamma: &DMatrix<f64>,
    ) -> Result<Self> {
        let qfi = qfi(gamma, dgamma)?;
        let cfi_x = cfi_gaussian_measurement(gamma, dgamma, &Measurement::Position)?;
        let cfi_p = cfi_gaussian_measurement(gamma, dgamma, &Measurement::Momentum)?;
        let min_rel_error = if qfi > 0.0 {
            min_relative_error(temperature, qfi, 1)?
        } else {
            f64::INFINITY
        };
        Ok(Self {
            temperature,
            scenario,
            n_probes: gamma.n_modes(),
            qfi,
            cfi_x,
            cfi_p,
            min_rel_error,
        })
    }
}
