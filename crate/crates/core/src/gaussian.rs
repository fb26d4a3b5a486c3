//! Covariance-matrix algebra for zero-mean N-mode Gaussian states.
//!
//! Conventions: hbar = 1, quadratures interleaved as (x1, p1, ..., xN, pN),
//! `Gamma_ij = <{R_i, R_j}>/2`. The vacuum has symplectic eigenvalue 1/2 and a
//! physical state satisfies `Gamma + (i/2) S >= 0`, i.e. every symplectic
//! eigenvalue is at least 1/2.

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance used when pairing the +/- nu eigenvalues of `i S Gamma`.
pub const PAIRING_TOL: f64 = 1e-9;

/// Tolerance on `nu - 1/2` below which a state is still considered physical.
pub const PHYSICALITY_TOL: f64 = 1e-9;

/// The block-diagonal symplectic form with 2x2 blocks `[[0, 1], [-1, 0]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticForm {
    n_modes: usize,
}

impl SymplecticForm {
    pub fn new(n_modes: usize) -> Self {
        Self { n_modes }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let dim = 2 * self.n_modes;
        let mut s = DMatrix::zeros(dim, dim);
        for k in 0..self.n_modes {
            s[(2 * k, 2 * k + 1)] = 1.0;
            s[(2 * k + 1, 2 * k)] = -1.0;
        }
        s
    }
}

/// Symmetric 2N x 2N covariance matrix in interleaved ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    data: DMatrix<f64>,
}

impl CovMatrix {
    /// Wraps a square matrix of even dimension, storing its symmetric part.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (r, c) = data.shape();
        if r != c || r == 0 || r % 2 != 0 {
            return Err(Error::DegenerateState(format!(
                "covariance matrix must be square with even positive dimension, got {r}x{c}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateState("non-finite covariance entry".into()));
        }
        let data = (&data + data.transpose()) * 0.5;
        Ok(Self { data })
    }

    /// Assembles a covariance matrix from its position, momentum and
    /// position-momentum blocks (`xp[(i, j)] = <{x_i, p_j}>/2`).
    pub fn from_blocks(xx: &DMatrix<f64>, pp: &DMatrix<f64>, xp: Option<&DMatrix<f64>>) -> Result<Self> {
        let n = xx.nrows();
        if xx.shape() != (n, n) || pp.shape() != (n, n) || xp.is_some_and(|m| m.shape() != (n, n)) {
            return Err(Error::DegenerateState("block shapes do not agree".into()));
        }
        let mut g = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                g[(2 * i, 2 * j)] = xx[(i, j)];
                g[(2 * i + 1, 2 * j + 1)] = pp[(i, j)];
                if let Some(xp) = xp {
                    g[(2 * i, 2 * j + 1)] = xp[(i, j)];
                    g[(2 * j + 1, 2 * i)] = xp[(i, j)];
                }
            }
        }
        Self::new(g)
    }

    /// Vacuum of N unit-frequency, unit-mass oscillators.
    pub fn vacuum(n_modes: usize) -> Self {
        Self {
            data: DMatrix::identity(2 * n_modes, 2 * n_modes) * 0.5,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.data.nrows() / 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// `<x_i x_j>` (symmetrized).
    pub fn xx(&self, i: usize, j: usize) -> f64 {
        self.data[(2 * i, 2 * j)]
    }

    /// `<p_i p_j>` (symmetrized).
    pub fn pp(&self, i: usize, j: usize) -> f64 {
        self.data[(2 * i + 1, 2 * j + 1)]
    }

    /// Reduced state of the listed modes, in the order given.
    pub fn modes(&self, modes: &[usize]) -> Result<CovMatrix> {
        let n = self.n_modes();
        if modes.is_empty() || modes.iter().any(|&m| m >= n) {
            return Err(Error::InvalidPartition(format!("mode list {modes:?} invalid for {n} modes")));
        }
        let idx: Vec<usize> = modes.iter().flat_map(|&m| [2 * m, 2 * m + 1]).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.data[(idx[r], idx[c])]);
        Ok(CovMatrix { data: sub })
    }

    /// Partial transpose on the listed modes: flips the sign of their momenta.
    pub fn partial_transpose(&self, modes: &[usize]) -> CovMatrix {
        let mut data = self.data.clone();
        let dim = data.nrows();
        for &m in modes {
            let p = 2 * m + 1;
            for k in 0..dim {
                data[(p, k)] = -data[(p, k)];
            }
            for k in 0..dim {
                data[(k, p)] = -data[(k, p)];
            }
        }
        CovMatrix { data }
    }

    pub fn is_physical(&self, tol: f64) -> Result<bool> {
        let nu = symplectic_eigenvalues(self)?;
        Ok(nu.iter().all(|&v| v >= 0.5 - tol))
    }
}

/// Symmetric square root of a symmetric positive definite matrix.
fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.clone().cholesky().is_none() {
        return Err(Error::DegenerateState("matrix is not positive definite".into()));
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&e| e <= 0.0) {
        return Err(Error::DegenerateState("matrix is not positive definite".into()));
    }
    let root = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Williamson spectrum: the N symplectic eigenvalues of `g`, in descending order.
///
/// Computed as the spectrum of the Hermitian matrix `i g^{1/2} S g^{1/2}`, which
/// is similar to `i S g` and has eigenvalues `+/- nu_k`.
pub fn symplectic_eigenvalues(g: &CovMatrix) -> Result<Vec<f64>> {
    let n = g.n_modes();
    let root = spd_sqrt(g.matrix())?;
    let s = SymplecticForm::new(n).matrix();
    let a = &root * s * &root;
    let h = a.map(|v| Complex::new(0.0, v));
    let mut eig: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let mut nu = Vec::with_capacity(n);
    for k in 0..n {
        let plus = eig[k];
        let minus = -eig[2 * n - 1 - k];
        let scale = plus.abs().max(minus.abs()).max(f64::MIN_POSITIVE);
        if (plus - minus).abs() > PAIRING_TOL * scale.max(1.0) {
            return Err(Error::DegenerateState(format!(
                "symplectic spectrum not paired: {plus} vs {minus}"
            )));
        }
        nu.push(0.5 * (plus + minus));
    }
    Ok(nu)
}

fn check_partition(n: usize, part: &[usize]) -> Result<()> {
    if part.is_empty() || part.len() >= n {
        return Err(Error::InvalidPartition(format!(
            "partition of size {} is not a nonempty proper subset of {n} modes",
            part.len()
        )));
    }
    let mut seen = vec![false; n];
    for &m in part {
        if m >= n || seen[m] {
            return Err(Error::InvalidPartition(format!("bad or repeated mode index {m}")));
        }
        seen[m] = true;
    }
    Ok(())
}

fn complement(n: usize, part: &[usize]) -> Vec<usize> {
    (0..n).filter(|m| !part.contains(m)).collect()
}

/// Logarithmic negativity (natural log) across the bipartition `partition | rest`.
pub fn log_negativity(g: &CovMatrix, partition: &[usize]) -> Result<f64> {
    check_partition(g.n_modes(), partition)?;
    let nu = symplectic_eigenvalues(&g.partial_transpose(partition))?;
    Ok(nu.iter().map(|&v| (-(2.0 * v).ln()).max(0.0)).sum())
}

/// Smallest symplectic eigenvalue of the partially transposed state.
pub fn min_transposed_eigenvalue(g: &CovMatrix, partition: &[usize]) -> Result<f64> {
    check_partition(g.n_modes(), partition)?;
    let nu = symplectic_eigenvalues(&g.partial_transpose(partition))?;
    Ok(nu.last().copied().unwrap_or(f64::NAN))
}

/// Bosonic entropy of a single symplectic eigenvalue; zero at and below 1/2.
pub fn mode_entropy(nu: f64) -> f64 {
    if nu <= 0.5 {
        return 0.0;
    }
    let (a, b) = (nu + 0.5, nu - 0.5);
    a * a.ln() - b * b.ln()
}

/// Von Neumann entropy of the Gaussian state.
pub fn entropy(g: &CovMatrix) -> Result<f64> {
    Ok(symplectic_eigenvalues(g)?.into_iter().map(mode_entropy).sum())
}

/// `S(A) + S(B) - S(AB)` for `A = partition`, `B` its complement.
pub fn mutual_information(g: &CovMatrix, partition: &[usize]) -> Result<f64> {
    let n = g.n_modes();
    check_partition(n, partition)?;
    let rest = complement(n, partition);
    let sa = entropy(&g.modes(partition)?)?;
    let sb = entropy(&g.modes(&rest)?)?;
    let sab = entropy(g)?;
    Ok(sa + sb - sab)
}

/// N x N block of position covariances `<x_i x_j>`.
pub fn position_block(g: &CovMatrix) -> DMatrix<f64> {
    let n = g.n_modes();
    DMatrix::from_fn(n, n, |i, j| g.xx(i, j))
}

/// N x N block of momentum covariances `<p_i p_j>`.
pub fn momentum_block(g: &CovMatrix) -> DMatrix<f64> {
    let n = g.n_modes();
    DMatrix::from_fn(n, n, |i, j| g.pp(i, j))
}

/// Position (offset 0) or momentum (offset 1) block of an arbitrary 2N x 2N matrix.
pub(crate) fn quadrature_block(m: &DMatrix<f64>, offset: usize) -> DMatrix<f64> {
    let n = m.nrows() / 2;
    DMatrix::from_fn(n, n, |i, j| m[(2 * i + offset, 2 * j + offset)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> CovMatrix {
        CovMatrix::new(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(v))).unwrap()
    }

    /// Two-mode squeezed vacuum in standard form.
    fn tms(r: f64) -> CovMatrix {
        let (c, s) = ((2.0 * r).cosh() * 0.5, (2.0 * r).sinh() * 0.5);
        #[rustfmt::skip]
        let m = DMatrix::from_row_slice(4, 4, &[
            c, 0.0, s, 0.0,
            0.0, c, 0.0, -s,
            s, 0.0, c, 0.0,
            0.0, -s, 0.0, c,
        ]);
        CovMatrix::new(m).unwrap()
    }

    #[test]
    fn vacuum_eigenvalue() {
        let nu = symplectic_eigenvalues(&diag(&[0.5, 0.5])).unwrap();
        assert!((nu[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn thermal_eigenvalue() {
        let c = 1.0 / (0.5f64).tanh();
        let nu = symplectic_eigenvalues(&diag(&[c / 2.0, c / 2.0])).unwrap();
        assert!((nu[0] - 1.0820).abs() < 1e-4);
        assert!((nu[0] - c / 2.0).abs() < 1e-13);
    }

    #[test]
    fn squeezed_vacuum_is_pure() {
        let w = 3.0;
        let nu = symplectic_eigenvalues(&diag(&[1.0 / (2.0 * w), w / 2.0])).unwrap();
        assert!((nu[0] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn rejects_indefinite() {
        let g = diag(&[0.5, -0.5]);
        assert!(matches!(symplectic_eigenvalues(&g), Err(Error::DegenerateState(_))));
    }

    #[test]
    fn rejects_odd_dimension() {
        assert!(CovMatrix::new(DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn product_state_has_no_negativity() {
        let g = diag(&[0.7, 0.9, 1.5, 0.4]);
        assert_eq!(log_negativity(&g, &[0]).unwrap(), 0.0);
        assert_eq!(log_negativity(&g, &[1]).unwrap(), 0.0);
        assert!(mutual_information(&g, &[0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_mode_squeezed_negativity_matches_invariants() {
        let r = 0.5;
        let g = tms(r);
        // Oracle: for two modes, the transposed symplectic eigenvalues solve
        // x^2 - D x + det(g) = 0 with D = det A + det B - 2 det C.
        let m = g.matrix();
        let det2 = |i: usize, j: usize| m[(i, j)] * m[(i + 1, j + 1)] - m[(i, j + 1)] * m[(i + 1, j)];
        let delta_t = det2(0, 0) + det2(2, 2) - 2.0 * det2(0, 2);
        let det = m.determinant();
        let nu_min = ((delta_t - (delta_t * delta_t - 4.0 * det).sqrt()) / 2.0).sqrt();
        let expected = (-(2.0 * nu_min).ln()).max(0.0);
        let got = log_negativity(&g, &[0]).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        assert!((got - 2.0 * r).abs() < 1e-10);
    }

    #[test]
    fn invalid_partitions() {
        let g = CovMatrix::vacuum(3);
        assert!(matches!(log_negativity(&g, &[]), Err(Error::InvalidPartition(_))));
        assert!(matches!(log_negativity(&g, &[0, 1, 2]), Err(Error::InvalidPartition(_))));
        assert!(matches!(mutual_information(&g, &[5]), Err(Error::InvalidPartition(_))));
        assert!(matches!(mutual_information(&g, &[1, 1]), Err(Error::InvalidPartition(_))));
    }

    #[test]
    fn position_block_extracts_x_entries() {
        let g = diag(&[1.0, 2.0, 3.0, 4.0]);
        let x = position_block(&g);
        assert_eq!(x, DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[1.0, 3.0])));
        let p = momentum_block(&g);
        assert_eq!(p[(1, 1)], 4.0);
    }

    #[test]
    fn entropy_function() {
        assert_eq!(mode_entropy(0.5), 0.0);
        assert!(mode_entropy(0.5 + 1e-12) >= 0.0);
        assert!(mode_entropy(2.0) > mode_entropy(1.0));
    }

    #[test]
    fn tms_mutual_information() {
        // Pure global state: I = 2 S(A) with nu_A = cosh(2r)/2.
        let r = 0.5;
        let mi = mutual_information(&tms(r), &[0]).unwrap();
        let expected = 2.0 * mode_entropy((2.0 * r).cosh() / 2.0);
        assert!((mi - expected).abs() < 1e-10);
    }
}
