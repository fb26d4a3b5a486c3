//! Brute-force reference: the continuum bath replaced by finitely many
//! oscillators and the closed system evolved exactly.
//!
//! The band `(0, w_max]` is cut into `M` cells, either uniform or graded with
//! widths growing linearly in frequency, and every cell midpoint `w_k` of width
//! `dw_k` carries a `+k`/`-k` pair of travelling modes with equal coupling
//! `G_k`, `G_k^2 = w_k J_ii(w_k) dw_k / pi` (unit bath masses). The pair is
//! rewritten as a cosine and a sine standing wave, which couple to probe `i`
//! through `sqrt(2) G_k cos(w_k tau_i)` and `sqrt(2) G_k sin(w_k tau_i)` with
//! `tau_i` the probe position in time units. Summed over the pair this gives
//! `J_ij` with the `cos(w a_ij)` factor. Independent baths give every probe its
//! own cosine modes.
//!
//! The counter-term is the discrete sum `sum_k c_ik c_jk / w_k^2`, so the total
//! Hamiltonian is positive and the static probe stiffness is the bare one.
//!
//! In mass-weighted coordinates `u` the equations of motion are
//! `u'' = -K u` with an arrowhead `K`. Solutions obey the exact recurrence
//! `u(t + d) = 2 cos(d sqrt K) u(t) - u(t - d)`, with `cos(d sqrt K)` applied
//! as a Chebyshev expansion in `K` over its Gershgorin interval.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::bath::{self, BathSpec, ProbeChain, Scenario};
use crate::error::{Error, Result};
use crate::gaussian::CovMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grid {
    Uniform,
    /// Cell widths proportional to `w + knee`, which resolves the band below
    /// `knee` finely and the far tail coarsely.
    Graded { knee: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBath {
    modes: usize,
    omega_max: f64,
    grid: Grid,
    coupling_scale: f64,
}

impl DiscreteBath {
    /// `modes` uniform cells on `(0, omega_max]`.
    pub fn new(modes: usize, omega_max: f64) -> Result<Self> {
        if modes == 0 {
            return Err(Error::OracleConfig("need at least one bath frequency".into()));
        }
        if !(omega_max > 0.0 && omega_max.is_finite()) {
            return Err(Error::OracleConfig(format!("omega_max must be positive, got {omega_max}")));
        }
        Ok(Self {
            modes,
            omega_max,
            grid: Grid::Uniform,
            coupling_scale: 1.0,
        })
    }

    pub fn graded(modes: usize, omega_max: f64, knee: f64) -> Result<Self> {
        if !(knee > 0.0 && knee.is_finite()) {
            return Err(Error::OracleConfig(format!("grid knee must be positive, got {knee}")));
        }
        let mut db = Self::new(modes, omega_max)?;
        db.grid = Grid::Graded { knee };
        Ok(db)
    }

    /// Multiplies every coupling; zero decouples probes and bath.
    pub fn with_coupling_scale(mut self, scale: f64) -> Self {
        self.coupling_scale = scale;
        self
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn omega_max(&self) -> f64 {
        self.omega_max
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    fn edges(&self) -> Vec<f64> {
        let m = self.modes as f64;
        let mut e: Vec<f64> = match self.grid {
            Grid::Uniform => (0..=self.modes).map(|k| k as f64 * self.omega_max / m).collect(),
            Grid::Graded { knee } => {
                let span = (self.omega_max / knee).ln_1p();
                (0..=self.modes).map(|k| knee * (k as f64 / m * span).exp_m1()).collect()
            }
        };
        e[self.modes] = self.omega_max;
        e
    }

    /// `(midpoint, width)` of every cell.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.edges().windows(2).map(|w| (0.5 * (w[0] + w[1]), w[1] - w[0])).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.cells().into_iter().map(|(w, _)| w).collect()
    }

    /// Width of the cell containing `omega` (the last cell beyond `omega_max`).
    pub fn spacing_at(&self, omega: f64) -> f64 {
        let e = self.edges();
        let k = e.partition_point(|&x| x <= omega).clamp(1, self.modes);
        e[k] - e[k - 1]
    }

    /// Time after which modes near `omega` visibly rephase.
    pub fn recurrence_time_at(&self, omega: f64) -> f64 {
        2.0 * PI / self.spacing_at(omega)
    }

    /// `G_k` for a cell at `omega` of width `width`.
    pub fn coupling_amplitude(&self, b: &BathSpec, omega: f64, width: f64) -> f64 {
        let j = bath::spectral_density_over_omega(b, omega)[(0, 0)] * omega;
        self.coupling_scale * (omega * j * width / PI).sqrt()
    }
}

/// Thermal `(<y^2>, <q^2>)` of a unit-mass bath oscillator.
pub fn bath_initial_variance(omega: f64, temperature: f64) -> (f64, f64) {
    let coth = 1.0 / (omega / (2.0 * temperature)).tanh();
    (coth / (2.0 * omega), omega * coth / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    pub t_final: f64,
    pub window: f64,
    pub samples: usize,
    /// Start the bath thermal about the equilibrium displaced by the probe
    /// (`y_k - sum_i c_ik x_i / w_k^2` thermal) instead of about `y_k = 0`.
    /// Avoids the kick from switching the coupling on at `t = 0`, which weakly
    /// damped collective modes would otherwise carry through the window.
    pub polarized: bool,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            t_final: 12.0,
            window: 8.0,
            samples: 200,
            polarized: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Probe covariance averaged over the window.
    pub covariance: CovMatrix,
    /// `(max - min) / mean` of the probe covariance trace over the window.
    pub trace_fluctuation: f64,
    pub bath_modes: usize,
    pub step: f64,
}

/// Closed probe + bath system in mass-weighted coordinates.
struct System {
    n: usize,
    masses: Vec<f64>,
    /// Probe block of `K`.
    a: DMatrix<f64>,
    /// Probe-bath block of `K`, one row per probe.
    b: Vec<Vec<f64>>,
    omega2: Vec<f64>,
    /// Initial probe covariances (mass-weighted).
    sigma_u: DMatrix<f64>,
    sigma_pi: DMatrix<f64>,
    bath_u: Vec<f64>,
    bath_pi: Vec<f64>,
    polarized: bool,
}

impl System {
    fn build(p: &ProbeChain, b: &BathSpec, db: &DiscreteBath, temperature: f64, polarized: bool) -> Result<Self> {
        let n = p.n();
        if b.n() != n {
            return Err(Error::OracleConfig("bath and probe chain sizes differ".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::Domain(format!("temperature must be positive, got {temperature}")));
        }
        let tau = p.positions();
        for i in 0..n {
            for j in 0..n {
                if (b.delays()[(i, j)] - (tau[i] - tau[j]).abs()).abs() > 1e-12 * (1.0 + b.delays()[(i, j)]) {
                    return Err(Error::OracleConfig(
                        "bath delays must match the probe chain geometry".into(),
                    ));
                }
            }
        }

        // (frequency, coupling to each probe)
        let mut modes: Vec<(f64, Vec<f64>)> = Vec::new();
        for (w, width) in db.cells() {
            let g = std::f64::consts::SQRT_2 * db.coupling_amplitude(b, w, width);
            match b.scenario() {
                Scenario::CommonBath => {
                    let c: Vec<f64> = tau.iter().map(|t| g * (w * t).cos()).collect();
                    let s: Vec<f64> = tau.iter().map(|t| g * (w * t).sin()).collect();
                    for v in [c, s] {
                        if v.iter().any(|x| *x != 0.0) {
                            modes.push((w, v));
                        }
                    }
                }
                Scenario::IndependentBaths => {
                    if g != 0.0 {
                        for i in 0..n {
                            let mut v = vec![0.0; n];
                            v[i] = g;
                            modes.push((w, v));
                        }
                    }
                }
            }
        }

        let masses = p.masses().to_vec();
        let nb = modes.len();
        let bare = p.bare_stiffness();
        let mut counter = DMatrix::zeros(n, n);
        let mut bmat = vec![vec![0.0; nb]; n];
        let mut omega2 = Vec::with_capacity(nb);
        let mut bath_u = Vec::with_capacity(nb);
        let mut bath_pi = Vec::with_capacity(nb);
        for (k, (w, c)) in modes.iter().enumerate() {
            for i in 0..n {
                bmat[i][k] = -c[i] / masses[i].sqrt();
                for j in 0..n {
                    counter[(i, j)] += c[i] * c[j] / (w * w);
                }
            }
            omega2.push(w * w);
            let (y2, q2) = bath_initial_variance(*w, temperature);
            bath_u.push(y2);
            bath_pi.push(q2);
        }
        let mw = |m: &DMatrix<f64>| DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (masses[i] * masses[j]).sqrt());
        let a = mw(&(&bare + &counter));

        // Probe starts in the ground state of its bare stiffness, the static
        // stiffness it feels once the counter-term cancels the bath shift.
        let eig = SymmetricEigen::new(mw(&bare));
        if eig.eigenvalues.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::UnstableModel("bare probe stiffness is not positive definite".into()));
        }
        let f = |pow: f64| {
            &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 0.5 * v.powf(pow)))
                * eig.eigenvectors.transpose()
        };
        Ok(Self {
            n,
            masses,
            a,
            b: bmat,
            omega2,
            sigma_u: f(-0.5),
            sigma_pi: f(0.5),
            bath_u,
            bath_pi,
            polarized,
        })
    }

    fn dim(&self) -> usize {
        self.n + self.omega2.len()
    }

    fn apply_k(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        let (vp, vb) = v.split_at(n);
        let (op, ob) = out.split_at_mut(n);
        for (o, (w2, x)) in ob.iter_mut().zip(self.omega2.iter().zip(vb)) {
            *o = w2 * x;
        }
        for i in 0..n {
            let row = &self.b[i];
            let direct: f64 = (0..n).map(|j| self.a[(i, j)] * vp[j]).sum();
            op[i] = direct + row.iter().zip(vb).map(|(r, x)| r * x).sum::<f64>();
            let xi = vp[i];
            for (o, r) in ob.iter_mut().zip(row) {
                *o += r * xi;
            }
        }
    }

    /// Gershgorin bound on the largest eigenvalue of `K`.
    fn spectral_bound(&self) -> f64 {
        let n = self.n;
        let mut bound: f64 = 0.0;
        for i in 0..n {
            let mut r: f64 = (0..n).map(|j| self.a[(i, j)].abs()).sum();
            r += &self.b[i].iter().map(|x| x.abs()).sum::<f64>();
            bound = bound.max(r);
        }
        for k in 0..self.omega2.len() {
            let r = self.omega2[k] + (0..n).map(|i| self.b[i][k].abs()).sum::<f64>();
            bound = bound.max(r);
        }
        bound
    }

    /// Initial position covariance applied to `v`. With polarization the
    /// bath coordinates are `u_b = u~_b - D u_p`, `D_ki = K_ik / w_k^2`, with
    /// `u~` block diagonal.
    fn sigma_u_apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let nb = self.omega2.len();
        let mut w = v.to_vec();
        if self.polarized {
            for i in 0..n {
                let row = &self.b[i];
                w[i] -= (0..nb).map(|k| row[k] / self.omega2[k] * v[n + k]).sum::<f64>();
            }
        }
        let mut out = vec![0.0; v.len()];
        for i in 0..n {
            out[i] = (0..n).map(|j| self.sigma_u[(i, j)] * w[j]).sum();
        }
        for k in 0..nb {
            out[n + k] = self.bath_u[k] * w[n + k];
        }
        if self.polarized {
            for k in 0..nb {
                out[n + k] -= (0..n).map(|i| self.b[i][k] / self.omega2[k] * out[i]).sum::<f64>();
            }
        }
        out
    }

    fn sigma_pi_apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; v.len()];
        for i in 0..n {
            out[i] = (0..n).map(|j| self.sigma_pi[(i, j)] * v[j]).sum();
        }
        for k in 0..self.omega2.len() {
            out[n + k] = self.bath_pi[k] * v[n + k];
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Chebyshev expansion of `f(K)` with the spectrum of `K` inside `[0, lmax]`.
struct Chebyshev {
    coef: Vec<f64>,
    lmax: f64,
}

impl Chebyshev {
    /// `bandwidth` bounds the oscillation of `f` in the angle variable.
    fn new(f: impl Fn(f64) -> f64, lmax: f64, bandwidth: f64) -> Self {
        let nodes = bandwidth.ceil() as usize + 40;
        let theta: Vec<f64> = (0..nodes).map(|k| PI * (k as f64 + 0.5) / nodes as f64).collect();
        let vals: Vec<f64> = theta.iter().map(|t| f(0.5 * lmax * (1.0 + t.cos()))).collect();
        let mut coef: Vec<f64> = (0..nodes)
            .map(|j| {
                let sum: f64 = theta.iter().zip(&vals).map(|(t, v)| v * (j as f64 * t).cos()).sum();
                2.0 * sum / nodes as f64
            })
            .collect();
        coef[0] *= 0.5;
        let scale = coef.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        while coef.len() > 1 && coef[coef.len() - 1].abs() < 1e-18 * scale {
            coef.pop();
        }
        Self { coef, lmax }
    }

    /// Clenshaw evaluation; `work` holds three scratch vectors of length `dim`.
    fn apply(&self, sys: &System, v: &[f64], out: &mut [f64], work: &mut [Vec<f64>; 3]) {
        let [b1, b2, kb] = work;
        b1.iter_mut().for_each(|x| *x = 0.0);
        b2.iter_mut().for_each(|x| *x = 0.0);
        let s = 2.0 / self.lmax;
        for &c in self.coef[1..].iter().rev() {
            sys.apply_k(b1, kb);
            // b2 <- 2 (s K - 1) b1 - b2 + c v, then swap so b1 holds the newest
            for (((y, x), kx), vk) in b2.iter_mut().zip(b1.iter()).zip(kb.iter()).zip(v) {
                *y = 2.0 * (s * kx - x) - *y + c * vk;
            }
            std::mem::swap(b1, b2);
        }
        sys.apply_k(b1, kb);
        for ((((o, vk), kx), x), y) in out.iter_mut().zip(v).zip(kb.iter()).zip(b1.iter()).zip(b2.iter()) {
            *o = self.coef[0] * vk + (s * kx - x) - y;
        }
    }
}

/// Largest step with a cheap expansion: `d sqrt(lmax)` at most this.
const STEP_PHASE: f64 = 100.0;

/// Propagates `cos(t sqrt K) e_p` and `sin(t sqrt K)/sqrt(K) e_p` for the
/// columns `cols`, calling `visit(step_index, c, s)` on every step.
fn propagate<F>(sys: &System, cols: &[usize], d: f64, steps: usize, mut visit: F)
where
    F: FnMut(usize, &[Vec<f64>], &[Vec<f64>]),
{
    let dim = sys.dim();
    let lmax = sys.spectral_bound().max(1e-300);
    let phase = d * lmax.sqrt();
    let cos_step = Chebyshev::new(|l| (d * l.max(0.0).sqrt()).cos(), lmax, phase);
    let sin_step = Chebyshev::new(
        |l| {
            let r = l.max(0.0).sqrt();
            if d * r < 1e-4 {
                d * (1.0 - d * d * r * r / 6.0)
            } else {
                (d * r).sin() / r
            }
        },
        lmax,
        phase,
    );
    let mut work = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    let mut c_prev: Vec<Vec<f64>> = Vec::new();
    let mut s_prev: Vec<Vec<f64>> = Vec::new();
    let mut c_cur: Vec<Vec<f64>> = Vec::new();
    let mut s_cur: Vec<Vec<f64>> = Vec::new();
    for &p in cols {
        let mut e = vec![0.0; dim];
        e[p] = 1.0;
        let mut c1 = vec![0.0; dim];
        cos_step.apply(sys, &e, &mut c1, &mut work);
        let mut s1 = vec![0.0; dim];
        sin_step.apply(sys, &e, &mut s1, &mut work);
        c_prev.push(e);
        s_prev.push(vec![0.0; dim]);
        c_cur.push(c1);
        s_cur.push(s1);
    }
    visit(0, &c_prev, &s_prev);
    if steps == 0 {
        return;
    }
    visit(1, &c_cur, &s_cur);
    let mut buf = vec![0.0; dim];
    for step in 2..=steps {
        for idx in 0..cols.len() {
            for (cur, prev) in [(&mut c_cur[idx], &mut c_prev[idx]), (&mut s_cur[idx], &mut s_prev[idx])] {
                cos_step.apply(sys, cur, &mut buf, &mut work);
                for k in 0..dim {
                    let next = 2.0 * buf[k] - prev[k];
                    prev[k] = cur[k];
                    cur[k] = next;
                }
            }
        }
        visit(step, &c_cur, &s_cur);
    }
}

/// Probe-block covariance (interleaved `x, p`) at the current propagator columns.
fn probe_block(sys: &System, c: &[Vec<f64>], s: &[Vec<f64>]) -> DMatrix<f64> {
    let n = sys.n;
    let dim = sys.dim();
    let mut ks = Vec::with_capacity(n);
    for sp in s {
        let mut out = vec![0.0; dim];
        sys.apply_k(sp, &mut out);
        ks.push(out);
    }
    let su_c: Vec<Vec<f64>> = c.iter().map(|v| sys.sigma_u_apply(v)).collect();
    let sp_s: Vec<Vec<f64>> = s.iter().map(|v| sys.sigma_pi_apply(v)).collect();
    let su_ks: Vec<Vec<f64>> = ks.iter().map(|v| sys.sigma_u_apply(v)).collect();
    let sp_c: Vec<Vec<f64>> = c.iter().map(|v| sys.sigma_pi_apply(v)).collect();

    let mut g = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let uu = dot(&c[i], &su_c[j]) + dot(&s[i], &sp_s[j]);
            let pp = dot(&ks[i], &su_ks[j]) + dot(&c[i], &sp_c[j]);
            let up = -dot(&c[i], &su_ks[j]) + dot(&s[i], &sp_c[j]);
            let (mi, mj) = (sys.masses[i], sys.masses[j]);
            g[(2 * i, 2 * j)] = uu / (mi * mj).sqrt();
            g[(2 * i + 1, 2 * j + 1)] = pp * (mi * mj).sqrt();
            g[(2 * i, 2 * j + 1)] = up * (mj / mi).sqrt();
            g[(2 * j + 1, 2 * i)] = up * (mj / mi).sqrt();
        }
    }
    g
}

fn base_step(sys: &System) -> f64 {
    STEP_PHASE / sys.spectral_bound().max(1e-300).sqrt()
}

/// Probe covariance averaged over `[t_final, t_final + window]`.
pub fn evolve_covariance(
    p: &ProbeChain,
    b: &BathSpec,
    db: &DiscreteBath,
    temperature: f64,
    t_final: f64,
    window: f64,
) -> Result<CovMatrix> {
    let settings = OracleSettings {
        t_final,
        window,
        ..OracleSettings::default()
    };
    Ok(evolve_covariance_with(p, b, db, temperature, &settings)?.covariance)
}

pub fn evolve_covariance_with(
    p: &ProbeChain,
    b: &BathSpec,
    db: &DiscreteBath,
    temperature: f64,
    settings: &OracleSettings,
) -> Result<OracleResult> {
    let OracleSettings {
        t_final,
        window,
        samples,
        polarized,
    } = *settings;
    if !(t_final >= 0.0 && window >= 0.0) || samples == 0 {
        return Err(Error::OracleConfig("t_final, window and samples must be nonnegative/positive".into()));
    }
    // Probe dynamics live at the probe frequencies; the grid must be fine there.
    let omega_ref = p.frequencies().iter().fold(0.0f64, |m, &w| m.max(w));
    let recurrence = db.recurrence_time_at(omega_ref);
    if t_final + window >= recurrence {
        return Err(Error::OracleConfig(format!(
            "t_final + window = {} reaches the recurrence time {recurrence:.4} of the discrete bath",
            t_final + window,
        )));
    }
    let sys = System::build(p, b, db, temperature, polarized)?;
    let spacing = if samples > 1 { window / (samples - 1) as f64 } else { 0.0 };
    let d0 = base_step(&sys);
    let (d, per_sample) = if spacing > 0.0 {
        let k = (spacing / d0).ceil().max(1.0);
        (spacing / k, k as usize)
    } else {
        (d0.min(t_final.max(d0)), 1)
    };
    let start = (t_final / d).round() as usize;
    let steps = start + per_sample * (samples - 1);

    let cols: Vec<usize> = (0..sys.n).collect();
    let mut acc = DMatrix::zeros(2 * sys.n, 2 * sys.n);
    let mut traces = Vec::with_capacity(samples);
    propagate(&sys, &cols, d, steps, |step, c, s| {
        if step >= start && (step - start) % per_sample == 0 {
            let g = probe_block(&sys, c, s);
            traces.push(g.trace());
            acc += g;
        }
    });
    let count = traces.len() as f64;
    let mean_trace = traces.iter().sum::<f64>() / count;
    let (lo, hi) = traces
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    Ok(OracleResult {
        covariance: CovMatrix::new(acc / count)?,
        trace_fluctuation: (hi - lo) / mean_trace,
        bath_modes: sys.omega2.len(),
        step: d,
    })
}

/// Covariance of the whole probe + bath system at time `t`, interleaved with
/// the probes first. Dense; meant for small baths.
pub fn full_covariance_at(
    p: &ProbeChain,
    b: &BathSpec,
    db: &DiscreteBath,
    temperature: f64,
    t: f64,
    polarized: bool,
) -> Result<CovMatrix> {
    let sys = System::build(p, b, db, temperature, polarized)?;
    let dim = sys.dim();
    if dim > 2000 {
        return Err(Error::OracleConfig(format!("full covariance of {dim} modes is too large")));
    }
    let d0 = base_step(&sys);
    let steps = (t / d0).ceil() as usize;
    let d = if steps > 0 { t / steps as f64 } else { d0 };
    let cols: Vec<usize> = (0..dim).collect();
    let mut result = DMatrix::zeros(2 * dim, 2 * dim);
    propagate(&sys, &cols, d, steps, |step, c, s| {
        if step != steps {
            return;
        }
        let cm = DMatrix::from_fn(dim, dim, |i, j| c[j][i]);
        let sm = DMatrix::from_fn(dim, dim, |i, j| s[j][i]);
        let mut kmat = DMatrix::zeros(dim, dim);
        let mut col = vec![0.0; dim];
        for j in 0..dim {
            let mut e = vec![0.0; dim];
            e[j] = 1.0;
            sys.apply_k(&e, &mut col);
            kmat.set_column(j, &DVector::from_column_slice(&col));
        }
        let mut su = DMatrix::zeros(dim, dim);
        let mut sp = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            su.set_column(i, &DVector::from_vec(sys.sigma_u_apply(&e)));
            sp.set_column(i, &DVector::from_vec(sys.sigma_pi_apply(&e)));
        }
        let ks = &kmat * &sm;
        let uu = &cm * &su * cm.transpose() + &sm * &sp * sm.transpose();
        let pp = &ks * &su * ks.transpose() + &cm * &sp * cm.transpose();
        let up = -(&cm * &su * ks.transpose()) + &sm * &sp * cm.transpose();
        let mass = |i: usize| if i < sys.n { sys.masses[i] } else { 1.0 };
        for i in 0..dim {
            for j in 0..dim {
                let (mi, mj) = (mass(i), mass(j));
                result[(2 * i, 2 * j)] = uu[(i, j)] / (mi * mj).sqrt();
                result[(2 * i + 1, 2 * j + 1)] = pp[(i, j)] * (mi * mj).sqrt();
                result[(2 * i, 2 * j + 1)] = up[(i, j)] * (mj / mi).sqrt();
                result[(2 * j + 1, 2 * i)] = up[(i, j)] * (mj / mi).sqrt();
            }
        }
    });
    CovMatrix::new(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::symplectic_eigenvalues;

    fn chain(n: usize) -> (ProbeChain, BathSpec) {
        let p = ProbeChain::uniform(n, 1.0, 1.0, 0.1).unwrap();
        let b = BathSpec::for_chain(&p, 1.0, 100.0, Scenario::CommonBath).unwrap();
        (p, b)
    }

    #[test]
    fn grid_and_recurrence() {
        let db = DiscreteBath::new(4000, 1000.0).unwrap();
        assert_eq!(db.spacing_at(1.0), 0.25);
        let w = db.frequencies();
        assert_eq!(w[0], 0.125);
        assert_eq!(*w.last().unwrap(), 999.875);
        assert!((db.recurrence_time_at(3.0) - 8.0 * PI).abs() < 1e-12);
        assert!(DiscreteBath::new(0, 1.0).is_err());
        assert!(DiscreteBath::new(10, 0.0).is_err());
        assert!(DiscreteBath::graded(10, 1.0, 0.0).is_err());

        let g = DiscreteBath::graded(4000, 1000.0, 1.0).unwrap();
        let cells = g.cells();
        let total: f64 = cells.iter().map(|c| c.1).sum();
        assert!((total - 1000.0).abs() < 1e-9);
        // widths grow like w + knee
        let ratio = |(w, dw): (f64, f64)| dw / (w + 1.0);
        assert!((ratio(cells[0]) / ratio(cells[3999]) - 1.0).abs() < 1e-2);
        assert!(g.recurrence_time_at(1.0) > 1500.0);
        assert!(g.recurrence_time_at(1000.0) < 5.0);
    }

    #[test]
    fn discrete_couplings_reproduce_spectral_density() {
        let (p, b) = chain(2);
        let db = DiscreteBath::new(100, 1000.0).unwrap();
        let (w, dw) = db.cells()[7];
        let g = db.coupling_amplitude(&b, w, dw);
        // pi/2 * sum_pair c_i c_j / w / dw
        let tau = p.positions();
        let pair = 2.0 * g * g * ((w * tau[0]).cos() * (w * tau[1]).cos() + (w * tau[0]).sin() * (w * tau[1]).sin());
        let j01 = PI / 2.0 * pair / (w * dw);
        let exact = bath::spectral_density(&b, w).unwrap()[(0, 1)];
        assert!((j01 - exact).abs() < 1e-12 * exact.abs());
    }

    #[test]
    fn bath_marginal_is_thermal() {
        let (y2, q2) = bath_initial_variance(2.0, 0.5);
        let coth = 1.0 / 2.0f64.tanh();
        assert!((y2 - coth / 4.0).abs() < 1e-15);
        assert!((q2 - coth).abs() < 1e-15);
        let (p, b) = chain(1);
        let db = DiscreteBath::new(5, 10.0).unwrap();
        let g = full_covariance_at(&p, &b, &db, 0.5, 0.0, false).unwrap();
        for (k, w) in db.frequencies().iter().enumerate() {
            let (y2, _) = bath_initial_variance(*w, 0.5);
            assert!((g.xx(k + 1, k + 1) - y2).abs() < 1e-15);
        }
    }

    #[test]
    fn polarized_bath_is_thermal_about_displaced_equilibrium() {
        let (p, b) = chain(2);
        let db = DiscreteBath::new(6, 30.0).unwrap();
        let t = 0.4;
        let g = full_covariance_at(&p, &b, &db, t, 0.0, true).unwrap();
        // the first bath mode is the cosine wave at the lowest frequency
        let (w, dw) = db.cells()[0];
        let c = std::f64::consts::SQRT_2 * db.coupling_amplitude(&b, w, dw);
        let coeff = [c * (w * 0.0).cos() / (w * w), c * (w * 0.1).cos() / (w * w)];
        // Var(y - sum_i coeff_i x_i) with y at index 2
        let mut var = g.xx(2, 2);
        for i in 0..2 {
            var -= 2.0 * coeff[i] * g.xx(2, i);
            for j in 0..2 {
                var += coeff[i] * coeff[j] * g.xx(i, j);
            }
        }
        let (y2, _) = bath_initial_variance(w, t);
        assert!((var - y2).abs() < 1e-12 * y2);
    }

    #[test]
    fn decoupled_probe_stays_put() {
        let (p, b) = chain(2);
        let db = DiscreteBath::new(200, 200.0).unwrap().with_coupling_scale(0.0);
        let settings = OracleSettings {
            t_final: 3.0,
            window: 2.0,
            samples: 7,
            polarized: true,
        };
        let r = evolve_covariance_with(&p, &b, &db, 0.3, &settings).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5; 4]));
        assert!((r.covariance.matrix() - expect).amax() < 1e-12);
        assert!(r.trace_fluctuation < 1e-12);
    }

    #[test]
    fn symplectic_spectrum_is_conserved() {
        let (p, b) = chain(2);
        let db = DiscreteBath::new(12, 300.0).unwrap();
        for polarized in [false, true] {
            let at = |t| full_covariance_at(&p, &b, &db, 0.7, t, polarized).unwrap();
            let before = symplectic_eigenvalues(&at(0.0)).unwrap();
            let after = symplectic_eigenvalues(&at(4.0)).unwrap();
            for (x, y) in before.iter().zip(after.iter()) {
                assert!((x - y).abs() < 1e-8, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn window_past_recurrence_is_rejected() {
        let (p, b) = chain(1);
        let db = DiscreteBath::new(4000, 1000.0).unwrap();
        let r = evolve_covariance(&p, &b, &db, 0.01, 20.0, 8.0);
        assert!(matches!(r, Err(Error::OracleConfig(_))));
    }

    #[test]
    fn geometry_mismatch_is_rejected() {
        let p = ProbeChain::uniform(2, 1.0, 1.0, 0.1).unwrap();
        let other = ProbeChain::uniform(2, 1.0, 1.0, 0.2).unwrap();
        let b = BathSpec::for_chain(&other, 1.0, 100.0, Scenario::CommonBath).unwrap();
        let db = DiscreteBath::new(10, 100.0).unwrap();
        assert!(matches!(evolve_covariance(&p, &b, &db, 0.1, 1.0, 1.0), Err(Error::OracleConfig(_))));
    }
}
