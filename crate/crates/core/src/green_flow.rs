//! Linearized resolvent, the interpolation flow `Sigma(t) -> I`, its sum rules,
//! and Monte Carlo checks of the decoupling expansion behind the edge comparison.
//!
//! Conventions: `X` is `M x N` with entries of variance `1/N`, `T = diag(t_alpha)`,
//! `Q = X^T T X` is `N x N` and `G = (Q - z)^{-1}`. Products of `G` entries are
//! bilinear (no complex conjugation); `G` is complex symmetric.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ensemble_sim::{gram_matrix, sample_data_matrix, wishart_eigenvalues_bidiagonal, EntryDistribution};
use crate::error::{EdgeError, Result};
use crate::linalg::{sym_eigen, sym_eigenvalues};
use crate::par;
use crate::population::{checked_edge_params, edge_params, PopulationSpectrum, MARGIN_THRESHOLD, XI_TOL};
use crate::rng::{replicate_rng, DOMAIN_COMPARE, DOMAIN_CORPUS, DOMAIN_FLOW, DOMAIN_TRACES};
use crate::stats::{bootstrap_se, mean};
use crate::stieltjes::{solve_mfc, MFC_TOL};

type CMatrix = DMatrix<Complex64>;

pub const DEFAULT_EPS: f64 = 0.05;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Required suppression of the residual below the leading term.
pub const SUPPRESSION: f64 = 10.0;
/// Outer draws of the frozen matrix in the decoupling check.
pub const DECOUPLING_ROWS_PER_CLUSTER: usize = 4;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn complexify(a: &DMatrix<f64>) -> CMatrix {
    a.map(c)
}

fn max_abs(a: &CMatrix) -> f64 {
    a.iter().fold(0.0, |acc, v| acc.max(v.norm()))
}

#[derive(Debug, Clone)]
pub struct Linearization {
    x: DMatrix<f64>,
    t: Vec<f64>,
    z: Complex64,
}

pub fn build_linearization(x: DMatrix<f64>, t: Vec<f64>, z: Complex64) -> Result<Linearization> {
    if x.nrows() != t.len() || x.nrows() == 0 || x.ncols() == 0 {
        return Err(EdgeError::invalid(format!(
            "X is {}x{} but T has {} entries",
            x.nrows(),
            x.ncols(),
            t.len()
        )));
    }
    if let Some((index, &value)) = t.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(EdgeError::NonPositiveEigenvalue { index, value });
    }
    if !(z.re.is_finite() && z.im.is_finite()) {
        return Err(EdgeError::invalid("spectral parameter must be finite"));
    }
    Ok(Linearization { x, t, z })
}

impl Linearization {
    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    pub fn z(&self) -> Complex64 {
        self.z
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    /// The `(N+M) x (N+M)` block matrix `[[-z, X^T], [X, -T^{-1}]]`.
    pub fn matrix(&self) -> CMatrix {
        let (n, m) = (self.n(), self.m());
        let mut h = CMatrix::zeros(n + m, n + m);
        for i in 0..n {
            h[(i, i)] = -self.z;
        }
        for a in 0..m {
            h[(n + a, n + a)] = c(-1.0 / self.t[a]);
            for i in 0..n {
                h[(n + a, i)] = c(self.x[(a, i)]);
                h[(i, n + a)] = c(self.x[(a, i)]);
            }
        }
        h
    }

    fn q(&self) -> DMatrix<f64> {
        let mut y = self.x.clone();
        for (mut row, t) in y.row_iter_mut().zip(&self.t) {
            row *= *t;
        }
        self.x.tr_mul(&y)
    }

    /// `G = (X^T T X - z)^{-1}`.
    pub fn resolvent(&self) -> Result<CMatrix> {
        let mut a = complexify(&self.q());
        for i in 0..self.n() {
            a[(i, i)] -= self.z;
        }
        a.try_inverse()
            .ok_or_else(|| EdgeError::invalid("X^T T X - z is singular"))
    }

    /// `(-z T^{-1} + X X^T)^{-1}`, the Greek block of `H^{-1}` divided by `z`.
    pub fn greek_resolvent(&self) -> Result<CMatrix> {
        let mut a = complexify(&(&self.x * self.x.transpose()));
        for al in 0..self.m() {
            a[(al, al)] -= self.z / self.t[al];
        }
        a.try_inverse()
            .ok_or_else(|| EdgeError::invalid("-z T^{-1} + X X^T is singular"))
    }
}

/// Residuals of the two Schur-complement identities, each side obtained by a
/// separate dense inversion: the Roman block of `H^{-1}` against
/// `(X^T T X - z)^{-1}`, and `z^{-1}` times the Greek block against
/// `(-z T^{-1} + X X^T)^{-1}`.
pub fn verify_schur(lin: &Linearization) -> Result<(f64, f64)> {
    let n = lin.n();
    let m = lin.m();
    let hinv = lin
        .matrix()
        .try_inverse()
        .ok_or_else(|| EdgeError::invalid("linearization is singular"))?;
    let roman = hinv.view((0, 0), (n, n)).into_owned() - lin.resolvent()?;
    let greek = hinv.view((n, n), (m, m)).into_owned() / lin.z - lin.greek_resolvent()?;
    Ok((max_abs(&roman), max_abs(&greek)))
}

/// `max_a |sum_b |G_ab|^2 - Im G_aa / eta|`.
pub fn ward_check(lin: &Linearization) -> Result<f64> {
    if !(lin.z.im > 0.0) {
        return Err(EdgeError::invalid("Ward identity needs Im z > 0"));
    }
    let g = lin.resolvent()?;
    let mut worst: f64 = 0.0;
    for a in 0..lin.n() {
        let lhs: f64 = g.row(a).iter().map(|v| v.norm_sqr()).sum();
        worst = worst.max((lhs - g[(a, a)].im / lin.z.im).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub t: f64,
    pub n: usize,
    pub sigma_t: Vec<f64>,
    pub t_alpha: Vec<f64>,
    pub xi_plus: f64,
    pub e_plus: f64,
    pub gamma: f64,
    pub tau: f64,
    pub l_plus: f64,
    pub gamma_dot: f64,
    /// `A_k` for `k = 1..=4`, stored at index `k - 1`.
    pub a: [f64; 4],
}

fn flowed_sigma(s0: f64, t: f64) -> f64 {
    if t == 0.0 {
        s0
    } else {
        1.0 / ((-t).exp() / s0 - (-t).exp_m1())
    }
}

/// `1/sigma(t) = e^{-t}/sigma(0) + 1 - e^{-t}`.
pub fn flowed_spectrum(spec: &PopulationSpectrum, t: f64) -> Result<PopulationSpectrum> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(EdgeError::invalid(format!("flow time must be finite and non-negative, got {t}")));
    }
    flowed_unchecked(spec, t)
}

fn flowed_unchecked(spec: &PopulationSpectrum, t: f64) -> Result<PopulationSpectrum> {
    PopulationSpectrum::new(spec.eigenvalues().iter().map(|&s| flowed_sigma(s, t)).collect(), spec.n())
}

pub fn flow_state(spec: &PopulationSpectrum, t: f64) -> Result<FlowState> {
    checked_edge_params(spec, MARGIN_THRESHOLD)?;
    flowed_spectrum(spec, t)?;
    state_at(spec, t)
}

fn state_at(spec: &PopulationSpectrum, t: f64) -> Result<FlowState> {
    let st = flowed_unchecked(spec, t)?;
    let edge = edge_params(&st, XI_TOL)?;
    let (xi, gamma) = (edge.xi_plus, edge.gamma0);
    let n = spec.n() as f64;
    let mut a = [0.0; 4];
    for &s in st.eigenvalues() {
        let k = gamma * s / (1.0 - s * xi);
        let mut p = 1.0;
        for ak in a.iter_mut() {
            p *= k;
            *ak += p;
        }
    }
    for ak in a.iter_mut() {
        *ak /= n;
    }
    let tau = xi / gamma;
    let gamma_dot = a[2] / tau.powi(4) + a[3] / tau.powi(3) - gamma;
    Ok(FlowState {
        t,
        n: spec.n(),
        t_alpha: st.eigenvalues().iter().map(|s| gamma * s).collect(),
        sigma_t: st.eigenvalues().to_vec(),
        xi_plus: xi,
        e_plus: edge.e_plus,
        gamma,
        tau,
        l_plus: gamma * edge.e_plus,
        gamma_dot,
        a,
    })
}

impl FlowState {
    pub fn a_k(&self, k: usize) -> f64 {
        self.a[k - 1]
    }

    pub fn m(&self) -> usize {
        self.t_alpha.len()
    }

    /// `(t_alpha^{-1} - tau)^{-1}`.
    pub fn coefficients(&self) -> Vec<f64> {
        self.sigma_t
            .iter()
            .map(|s| self.gamma * s / (1.0 - s * self.xi_plus))
            .collect()
    }

    /// `d t_alpha / dt`, using `d sigma/dt = sigma - sigma^2`.
    pub fn dt_alpha(&self) -> Vec<f64> {
        self.sigma_t
            .iter()
            .map(|s| self.gamma_dot * s + self.gamma * (s - s * s))
            .collect()
    }

    /// Flow weights `(d t_alpha/dt) / t_alpha^2`.
    pub fn weights(&self) -> Vec<f64> {
        self.dt_alpha()
            .iter()
            .zip(&self.t_alpha)
            .map(|(dt, t)| dt / (t * t))
            .collect()
    }

    /// `(1/N) sum_alpha w_alpha (t_alpha^{-1} - tau)^{-2}`.
    pub fn zdot(&self) -> f64 {
        self.weights()
            .iter()
            .zip(self.coefficients())
            .map(|(w, k)| w * k * k)
            .sum::<f64>()
            / self.n as f64
    }

    /// The two sum rules, `A_2 - tau^{-2}` and `A_3 + tau^{-3} - 1`.
    pub fn sum_rule_residuals(&self) -> (f64, f64) {
        (
            (self.a_k(2) - self.tau.powi(-2)).abs(),
            (self.a_k(3) + self.tau.powi(-3) - 1.0).abs(),
        )
    }

    /// Population of `t_alpha`, whose deformed law has its edge at `L_+`.
    pub fn spectrum(&self) -> Result<PopulationSpectrum> {
        PopulationSpectrum::new(self.t_alpha.clone(), self.n)
    }
}

/// Residuals of
/// `(gd + g) tau^-2 + (gd tau + g tau - 1) A_3 = tau^-2 A_4 - A_3^2` and
/// `(gd + g) A_3 + (gd tau + g tau - 1) A_4 = (tau^-2 A_4 - A_3^2)(A_4 - tau^-4)`,
/// optionally with a substitute value for `gd = d gamma/dt`.
pub fn coefficient_identities_check(state: &FlowState, gamma_dot: Option<f64>) -> (f64, f64) {
    let gd = gamma_dot.unwrap_or(state.gamma_dot);
    let (g, tau) = (state.gamma, state.tau);
    let (a3, a4) = (state.a_k(3), state.a_k(4));
    let r = a4 / (tau * tau) - a3 * a3;
    let b = gd * tau + g * tau - 1.0;
    let lhs1 = (gd + g) / (tau * tau) + b * a3;
    let lhs2 = (gd + g) * a3 + b * a4;
    ((lhs1 - r).abs(), (lhs2 - r * (a4 - tau.powi(-4))).abs())
}

/// `|(L_+(t + dt) - L_+(t - dt)) / (2 dt) - zdot(t)|`.
pub fn zdot_check(spec: &PopulationSpectrum, t: f64, dt: f64) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&dt) {
        return Err(EdgeError::invalid(format!("dt must lie in [1e-6, 1e-3], got {dt}")));
    }
    let state = flow_state(spec, t)?;
    let up = state_at(spec, t + dt)?.l_plus;
    let down = state_at(spec, t - dt)?.l_plus;
    Ok(((up - down) / (2.0 * dt) - state.zdot()).abs())
}

/// Spectral parameter `z = L_+ + y + i eta` near the edge, with
/// `eta = N^{-2/3 - eps}` unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeWindow {
    pub eps: f64,
    pub y: f64,
    pub eta: Option<f64>,
}

impl Default for EdgeWindow {
    fn default() -> Self {
        EdgeWindow {
            eps: DEFAULT_EPS,
            y: 0.0,
            eta: None,
        }
    }
}

impl EdgeWindow {
    pub fn eta(&self, n: usize) -> f64 {
        self.eta.unwrap_or_else(|| (n as f64).powf(-2.0 / 3.0 - self.eps))
    }

    pub fn z(&self, l_plus: f64, n: usize) -> Complex64 {
        Complex64::new(l_plus + self.y, self.eta(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenObservables {
    pub m: Complex64,
    pub m_tilde: Complex64,
    pub x22: Complex64,
    pub x32: Complex64,
    pub x33: Complex64,
    pub x42: Complex64,
    pub x43: Complex64,
    pub x44: Complex64,
    pub x44p: Complex64,
    pub psi: f64,
}

/// Control parameter `sqrt(Im m / (N eta)) + 1/(N eta)` for the deterministic law at `z`.
pub fn psi(state: &FlowState, z: Complex64) -> Result<f64> {
    let m = solve_mfc(&state.spectrum()?, z, MFC_TOL)?.m;
    let neta = state.n as f64 * z.im;
    Ok((m.im / neta).sqrt() + 1.0 / neta)
}

fn bilinear(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Green-function observables at Roman index `i`, by nested products with
/// the column `G e_i`.
pub fn observables(lin: &Linearization, state: &FlowState, i: usize) -> Result<GreenObservables> {
    let n = lin.n();
    if i >= n {
        return Err(EdgeError::invalid(format!("index {i} out of range for N={n}")));
    }
    let g = lin.resolvent()?;
    let col: Vec<Complex64> = g.column(i).iter().copied().collect();
    let g2: Vec<Complex64> = (&g * nalgebra::DVector::from_column_slice(&col)).iter().copied().collect();
    let nf = n as f64;
    let g2ii = bilinear(&col, &col);
    let g3ii = bilinear(&col, &g2);
    let g4ii = bilinear(&g2, &g2);
    let tr2: Complex64 = g.iter().map(|v| v * v).sum();
    let m = g.diagonal().iter().sum::<Complex64>() / nf;
    let m_tilde = lin.greek_resolvent()?.diagonal().iter().sum::<Complex64>() * lin.z / lin.m() as f64;
    let shift = m + state.tau;
    let x22 = g2ii / nf;
    let x33 = g3ii / (nf * nf);
    Ok(GreenObservables {
        m,
        m_tilde,
        x22,
        x32: shift * x22,
        x33,
        x42: shift * shift * x22,
        x43: shift * x33,
        x44: g4ii / (nf * nf * nf),
        x44p: g2ii * tr2 / (nf * nf * nf),
        psi: psi(state, lin.z)?,
    })
}

/// Observables averaged over the Roman index, which only need `Tr G^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedObservables {
    pub m: Complex64,
    pub x22: Complex64,
    pub x32: Complex64,
    pub x33: Complex64,
    pub x42: Complex64,
    pub x43: Complex64,
    pub x44: Complex64,
    pub x44p: Complex64,
}

impl AveragedObservables {
    /// From `[Tr G, Tr G^2, Tr G^3, Tr G^4]`.
    pub fn from_traces(tr: [Complex64; 4], n: usize, tau: f64) -> Self {
        let nf = n as f64;
        let m = tr[0] / nf;
        let shift = m + tau;
        let x22 = tr[1] / (nf * nf);
        let x33 = tr[2] / nf.powi(3);
        AveragedObservables {
            m,
            x22,
            x32: shift * x22,
            x33,
            x42: shift * shift * x22,
            x43: shift * x33,
            x44: tr[3] / nf.powi(4),
            x44p: tr[1] * tr[1] / nf.powi(4),
        }
    }

    pub fn from_eigenvalues(lambda: &[f64], z: Complex64, tau: f64) -> Self {
        let mut tr = [Complex64::new(0.0, 0.0); 4];
        for &l in lambda {
            let d = 1.0 / (l - z);
            let mut p = c(1.0);
            for t in tr.iter_mut() {
                p *= d;
                *t += p;
            }
        }
        Self::from_traces(tr, lambda.len(), tau)
    }

    /// `X_3 = 2 (X32 + X33)`.
    pub fn x3(&self) -> Complex64 {
        2.0 * (self.x32 + self.x33)
    }

    /// `X_4 = 3 (X42 + 2 X43 + 4 X44 + X44')`.
    pub fn x4(&self) -> Complex64 {
        3.0 * (self.x42 + 2.0 * self.x43 + 4.0 * self.x44 + self.x44p)
    }

    /// Right side of the decoupling expansion with coefficient `k = (t^{-1} - tau)^{-1}`.
    pub fn expansion(&self, k: f64) -> Complex64 {
        k * k * self.x22 - k.powi(3) * self.x3() + k.powi(4) * self.x4()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    /// Compares the interval `residual +- ci` with `threshold`.
    pub fn judge(residual: f64, ci: f64, threshold: f64) -> Status {
        if residual + ci <= threshold {
            Status::Pass
        } else if residual - ci > threshold {
            Status::Fail
        } else {
            Status::Inconclusive
        }
    }

    pub fn exact(residual: f64, tolerance: f64) -> Status {
        if residual <= tolerance {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// `ci` is three bootstrap standard errors (zero for deterministic checks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub t: f64,
    pub leading: f64,
    pub residual: f64,
    pub ci: f64,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub draws: Option<usize>,
}

impl VerificationReport {
    fn exact(check: &str, n: usize, t: f64, residual: f64, tolerance: f64) -> Self {
        VerificationReport {
            check: check.to_string(),
            n,
            t,
            leading: 1.0,
            residual,
            ci: 0.0,
            status: Status::exact(residual, tolerance),
            tolerance: Some(tolerance),
            psi: None,
            draws: None,
        }
    }

    fn statistical(check: &str, state: &FlowState, leading: f64, residual: f64, ci: f64) -> Self {
        VerificationReport {
            check: check.to_string(),
            n: state.n,
            t: state.t,
            leading,
            residual,
            ci,
            status: Status::judge(residual, ci, leading / SUPPRESSION),
            tolerance: None,
            psi: None,
            draws: None,
        }
    }

    /// `(residual + ci) / leading`, the certified suppression ratio.
    pub fn bound_ratio(&self) -> f64 {
        (self.residual + self.ci) / self.leading
    }
}

/// Three bootstrap standard errors of the mean, real and imaginary parts combined.
fn complex_ci(values: &[Complex64], seed: u64) -> f64 {
    let re: Vec<f64> = values.iter().map(|v| v.re).collect();
    let im: Vec<f64> = values.iter().map(|v| v.im).collect();
    let se_re = bootstrap_se(&re, mean, BOOTSTRAP_RESAMPLES, seed);
    let se_im = bootstrap_se(&im, mean, BOOTSTRAP_RESAMPLES, seed ^ 1);
    3.0 * se_re.hypot(se_im)
}

fn complex_mean(values: &[Complex64]) -> Complex64 {
    values.iter().sum::<Complex64>() / values.len() as f64
}

fn check_reps(reps: usize, min: usize) -> Result<()> {
    if reps < min {
        return Err(EdgeError::invalid(format!("need at least {min} Monte Carlo draws, got {reps}")));
    }
    Ok(())
}

/// Eigenvalues of `X^T T X` for a fresh Gaussian `X`, zero-padded to length `N`.
fn flow_eigenvalues(state: &FlowState, seed: u64, domain: u64, replicate: u64) -> Result<Vec<f64>> {
    let t0 = state.t_alpha[0];
    if state.t_alpha.iter().all(|&t| t == t0) {
        // same law as the dense path, O(N^2) instead of O(N^3)
        let mut rng = replicate_rng(seed, domain, replicate);
        let mut ev = wishart_eigenvalues_bidiagonal(state.m(), state.n, &mut rng)?;
        ev.iter_mut().for_each(|v| *v *= t0);
        return Ok(ev);
    }
    let x = sample_data_matrix(state.m(), state.n, EntryDistribution::Gaussian, seed, domain, replicate);
    let mut ev = sym_eigenvalues(&gram_matrix(&x, &state.t_alpha))?;
    ev.resize(state.n, 0.0);
    Ok(ev)
}

const ROW_PANEL: f64 = 1.0;
const ROW_NODES: usize = 16;
const ROW_U_MAX: f64 = 1e6;

/// `E[sum_j d_j^2 y_j^2 / (N (a + sum_j d_j y_j^2)^2)]` for `y ~ N(0, I/N)` and
/// `Im d_j > 0`, from `w^{-2} = -int_0^inf u e^{i u w} du` (valid for `Im w > 0`)
/// and the Gaussian moments
/// `E[y_k^2 e^{i u q}] = N^{-1} (1 - 2iu d_k/N)^{-1} prod_j (1 - 2iu d_j/N)^{-1/2}`.
pub fn gaussian_row_lhs(d: &[Complex64], a: f64) -> Result<Complex64> {
    let n = d.len() as f64;
    let (nodes, weights) = crate::tracy_widom::gauss_legendre(ROW_NODES);
    let i = Complex64::i();
    let integrand = |u: f64| -> Complex64 {
        let mut log_p = c(0.0);
        let mut s = c(0.0);
        for dk in d {
            let f = 1.0 - 2.0 * i * u * dk / n;
            log_p -= 0.5 * f.ln();
            s += dk * dk / f;
        }
        u * (i * u * a + log_p).exp() * s
    };
    let mut total = c(0.0);
    let mut quiet = 0;
    let mut u0 = 0.0;
    while quiet < 3 {
        if u0 > ROW_U_MAX {
            return Err(EdgeError::convergence("row expectation integral", format!("no decay by u = {u0}")));
        }
        let mut panel = c(0.0);
        for (x, w) in nodes.iter().zip(&weights) {
            panel += *w * integrand(u0 + 0.5 * ROW_PANEL * (x + 1.0));
        }
        panel *= 0.5 * ROW_PANEL;
        total += panel;
        quiet = if panel.norm() <= 1e-15 * total.norm() { quiet + 1 } else { 0 };
        u0 += ROW_PANEL;
    }
    Ok(-total / (n * n))
}

/// Estimate of `E_alpha[(1/N) sum_i G_{i alpha} G_{alpha i}]` minus the
/// expansion in `X22 ... X44'`, where `E_alpha` averages over row `alpha` of `X`
/// with the other rows frozen.
///
/// The draws are grouped in frozen matrices of `DECOUPLING_ROWS_PER_CLUSTER` rows. For each,
/// `Q^(alpha)` (row `alpha` removed) is diagonalized once. With `y = V^T x` for
/// the row `x`, `d_j = 1/(lambda_j - z)` and `q = sum d_j y_j^2`, one has
/// `G_{i alpha} = (V D y)_i / (t^{-1} + q)` and `G = V (D - w w^T/(t^{-1} + q)) V^T`
/// with `w = D y`. The left side is then integrated exactly over Gaussian `x`
/// by `gaussian_row_lhs`; the right side, whose observables depend on `x` only
/// through a rank-one update, is averaged over resampled rows, each costing
/// `O(N^2)` for the projection and `O(N)` for the traces.
pub fn decoupling_residual(state: &FlowState, window: &EdgeWindow, reps: usize, seed: u64) -> Result<VerificationReport> {
    decoupling_with_clusters(state, window, reps, reps.div_ceil(DECOUPLING_ROWS_PER_CLUSTER), seed)
}

pub fn decoupling_with_clusters(
    state: &FlowState,
    window: &EdgeWindow,
    reps: usize,
    clusters_n: usize,
    seed: u64,
) -> Result<VerificationReport> {
    check_reps(reps, clusters_n)?;
    let n = state.n;
    let nf = n as f64;
    let z = window.z(state.l_plus, n);
    let inner = reps.div_ceil(clusters_n);
    let ks = state.coefficients();
    let clusters = par::try_map_indexed(clusters_n, |cl| -> Result<(Complex64, Complex64)> {
        let alpha = cl % state.m();
        let mut rng = replicate_rng(seed, DOMAIN_FLOW, cl as u64);
        let mut y = DMatrix::from_fn(state.m(), n, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g / nf.sqrt()
        });
        for (row, mut r) in y.row_iter_mut().enumerate() {
            if row == alpha {
                r.fill(0.0);
            } else {
                r *= state.t_alpha[row].sqrt();
            }
        }
        let eig = sym_eigen(&y.tr_mul(&y))?;
        let dj: Vec<Complex64> = eig.values.iter().map(|l| 1.0 / (l - z)).collect();
        let mut tr_d = [c(0.0); 4];
        for d in &dj {
            let mut p = c(1.0);
            for t in tr_d.iter_mut() {
                p *= d;
                *t += p;
            }
        }
        let t_inv = 1.0 / state.t_alpha[alpha];
        let k = ks[alpha];
        let lhs = gaussian_row_lhs(&dj, t_inv)?;
        let mut x = nalgebra::DVector::zeros(n);
        let (mut sum_diff, mut sum_lead) = (c(0.0), c(0.0));
        for _ in 0..inner {
            for v in x.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *v = g / nf.sqrt();
            }
            let proj = eig.vectors.tr_mul(&x);
            let mut s = [c(0.0); 4];
            let mut q = c(0.0);
            for (d, yj) in dj.iter().zip(proj.iter()) {
                let w2 = d * d * yj * yj;
                q += d * yj * yj;
                s[0] += w2;
                s[1] += w2 * d;
                s[2] += w2 * d * d;
                s[3] += w2 * d * d * d;
            }
            let cc = 1.0 / (t_inv + q);
            let tr = [
                tr_d[0] - cc * s[0],
                tr_d[1] - 2.0 * cc * s[1] + cc * cc * s[0] * s[0],
                tr_d[2] - 3.0 * cc * s[2] + 3.0 * cc * cc * s[0] * s[1] - cc.powi(3) * s[0].powi(3),
                tr_d[3] - 4.0 * cc * s[3] + cc * cc * (4.0 * s[0] * s[2] + 2.0 * s[1] * s[1])
                    - 4.0 * cc.powi(3) * s[0] * s[0] * s[1]
                    + cc.powi(4) * s[0].powi(4),
            ];
            let obs = AveragedObservables::from_traces(tr, n, state.tau);
            sum_diff += lhs - obs.expansion(k);
            sum_lead += k * k * obs.x22;
        }
        Ok((sum_diff / inner as f64, sum_lead / inner as f64))
    })?;
    let diffs: Vec<Complex64> = clusters.iter().map(|c| c.0).collect();
    let leads: Vec<Complex64> = clusters.iter().map(|c| c.1).collect();
    let mut report = VerificationReport::statistical(
        "decoupling",
        state,
        complex_mean(&leads).norm(),
        complex_mean(&diffs).norm(),
        complex_ci(&diffs, seed),
    );
    report.psi = Some(psi(state, z)?);
    report.draws = Some(inner * clusters_n);
    Ok(report)
}

/// Averaged observables at the edge window over `reps` independent draws of `X`.
pub fn edge_observable_draws(state: &FlowState, window: &EdgeWindow, reps: usize, seed: u64) -> Result<Vec<AveragedObservables>> {
    let z = window.z(state.l_plus, state.n);
    par::try_map_indexed(reps, |r| {
        let ev = flow_eigenvalues(state, seed, DOMAIN_TRACES, r as u64)?;
        Ok(AveragedObservables::from_eigenvalues(&ev, z, state.tau))
    })
}

/// `|E X_3 - 1/N - (A_4 - tau^{-4}) E X_4|` against `|E X_3|`.
pub fn optical_from_draws(state: &FlowState, window: &EdgeWindow, draws: &[AveragedObservables], seed: u64) -> Result<VerificationReport> {
    check_reps(draws.len(), 2)?;
    let kappa = state.a_k(4) - state.tau.powi(-4);
    let inv_n = 1.0 / state.n as f64;
    let vals: Vec<Complex64> = draws.iter().map(|o| o.x3() - inv_n - kappa * o.x4()).collect();
    let x3: Vec<Complex64> = draws.iter().map(|o| o.x3()).collect();
    let mut report = VerificationReport::statistical(
        "optical",
        state,
        complex_mean(&x3).norm(),
        complex_mean(&vals).norm(),
        complex_ci(&vals, seed),
    );
    report.psi = Some(psi(state, window.z(state.l_plus, state.n))?);
    report.draws = Some(draws.len());
    Ok(report)
}

/// Imaginary part of `sum_alpha w_alpha E[k_alpha^3 X_3 - k_alpha^4 X_4]`
/// against the power-counting size `M (Psi^3 <4|w| k^3> + Psi^4 <24|w| k^4>)`,
/// where 4 and 24 count the terms of `X_3` and `X_4`.
pub fn cancellation_from_draws(state: &FlowState, window: &EdgeWindow, draws: &[AveragedObservables], seed: u64) -> Result<VerificationReport> {
    check_reps(draws.len(), 2)?;
    let ks = state.coefficients();
    let ws = state.weights();
    let (mut b3, mut b4, mut n3, mut n4) = (0.0, 0.0, 0.0, 0.0);
    for (w, k) in ws.iter().zip(&ks) {
        b3 += w * k.powi(3);
        b4 += w * k.powi(4);
        n3 += 4.0 * w.abs() * k.powi(3);
        n4 += 24.0 * w.abs() * k.powi(4);
    }
    let psi = psi(state, window.z(state.l_plus, state.n))?;
    let leading = n3 * psi.powi(3) + n4 * psi.powi(4);
    let vals: Vec<f64> = draws.iter().map(|o| (b3 * o.x3() - b4 * o.x4()).im).collect();
    let ci = 3.0 * bootstrap_se(&vals, mean, BOOTSTRAP_RESAMPLES, seed);
    let mut report = VerificationReport::statistical("cancellation", state, leading, mean(&vals).abs(), ci);
    report.psi = Some(psi);
    report.draws = Some(draws.len());
    Ok(report)
}

pub fn optical_residual(state: &FlowState, window: &EdgeWindow, reps: usize, seed: u64) -> Result<VerificationReport> {
    let draws = edge_observable_draws(state, window, reps, seed)?;
    optical_from_draws(state, window, &draws, seed)
}

pub fn cancellation_check(
    spec: &PopulationSpectrum,
    t: f64,
    window: &EdgeWindow,
    reps: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let state = flow_state(spec, t)?;
    let draws = edge_observable_draws(&state, window, reps, seed)?;
    cancellation_from_draws(&state, window, &draws, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub e1: f64,
    pub e2: f64,
    pub eta: f64,
    pub l_plus: f64,
    pub m_plus: f64,
    pub mean_q: f64,
    pub mean_w: f64,
    pub gap: f64,
    pub ci: f64,
    pub draws: usize,
}

/// `N int_{E1}^{E2} Im m(x + L + i eta) dx` for the eigenvalues `lambda`.
pub fn smoothed_window_count(lambda: &[f64], l: f64, e1: f64, e2: f64, eta: f64) -> f64 {
    lambda
        .iter()
        .map(|v| ((e2 + l - v) / eta).atan() - ((e1 + l - v) / eta).atan())
        .sum()
}

/// Compares the edge functional of `gamma_0 X^T Sigma X` around `L_+` with
/// that of `gamma_inf X^T X` around its own edge `M_+`, on the same `X`.
pub fn comparison_functional(
    spec: &PopulationSpectrum,
    e1: f64,
    e2: f64,
    window: &EdgeWindow,
    reps: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    if !(e1 <= e2) {
        return Err(EdgeError::invalid(format!("need E1 <= E2, got {e1} > {e2}")));
    }
    check_reps(reps, 2)?;
    let state = flow_state(spec, 0.0)?;
    let n = spec.n();
    let limit = (n as f64).powf(-2.0 / 3.0 + window.eps);
    if e1.abs() > limit || e2.abs() > limit {
        return Err(EdgeError::invalid(format!(
            "E1, E2 must lie within N^(-2/3+eps) = {limit:.4e} of the edge"
        )));
    }
    let d = spec.d();
    let gamma_inf = d.sqrt() * (1.0 + d.sqrt()).powf(-4.0 / 3.0);
    let m_plus = gamma_inf * (1.0 + d.sqrt()).powi(2) / d;
    let eta = window.eta(n);
    let ones = vec![gamma_inf; spec.m()];
    let pairs = par::try_map_indexed(reps, |r| -> Result<(f64, f64)> {
        let x = sample_data_matrix(spec.m(), n, EntryDistribution::Gaussian, seed, DOMAIN_COMPARE, r as u64);
        let q = sym_eigenvalues(&gram_matrix(&x, &state.t_alpha))?;
        let w = sym_eigenvalues(&gram_matrix(&x, &ones))?;
        Ok((
            smoothed_window_count(&q, state.l_plus, e1, e2, eta),
            smoothed_window_count(&w, m_plus, e1, e2, eta),
        ))
    })?;
    let qs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ws: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let gaps: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    Ok(ComparisonReport {
        n,
        e1,
        e2,
        eta,
        l_plus: state.l_plus,
        m_plus,
        mean_q: mean(&qs),
        mean_w: mean(&ws),
        gap: mean(&gaps),
        ci: 3.0 * bootstrap_se(&gaps, mean, BOOTSTRAP_RESAMPLES, seed),
        draws: reps,
    })
}

/// Small random linearization: `N, M <= 8`, `t_alpha in [0.5, 2]`,
/// `z` in the upper half plane with `Im z >= 0.1`.
pub fn random_instance(seed: u64, index: u64) -> Result<Linearization> {
    let mut rng = replicate_rng(seed, DOMAIN_CORPUS, index);
    let n = rng.random_range(1..=8usize);
    let m = rng.random_range(1..=8usize);
    let x = DMatrix::from_fn(m, n, |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        g / (n as f64).sqrt()
    });
    let t = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
    let z = Complex64::new(rng.random_range(-1.0..5.0), rng.random_range(0.1..2.0));
    build_linearization(x, t, z)
}

pub fn default_corpus() -> Result<Vec<(String, PopulationSpectrum)>> {
    Ok(vec![
        ("identity d=1".into(), PopulationSpectrum::identity(40, 40)?),
        ("identity d=2".into(), PopulationSpectrum::identity(20, 40)?),
        ("twopoint(1,2,1/2)".into(), PopulationSpectrum::two_point(1.0, 2.0, 0.5, 40, 40)?),
        ("twopoint(1,3,1/4) d=1/2".into(), PopulationSpectrum::two_point(1.0, 3.0, 0.25, 80, 40)?),
        ("uniform(0.5,2.5)".into(), PopulationSpectrum::uniform(0.5, 2.5, 60, 40)?),
    ])
}

/// `t = 0` and 49 log-spaced times in `[1e-3, 30]`.
pub fn flow_time_grid() -> Vec<f64> {
    let mut ts = vec![0.0];
    ts.extend((0..49).map(|k| 1e-3 * (30.0f64 / 1e-3).powf(k as f64 / 48.0)));
    ts
}

pub const IDENTITY_TOL: f64 = 1e-10;
pub const COEFFICIENT_TOL: f64 = 1e-9;
pub const ZDOT_TOL: f64 = 1e-6;
pub const ZDOT_STEP: f64 = 1e-4;
pub const INITIAL_STATE_TOL: f64 = 1e-12;

/// Deterministic checks: Schur and Ward on 100 random small linearizations;
/// sum rules, coefficient identities, `zdot` and the `t = 0` state on every
/// corpus spectrum.
pub fn exact_identity_suite(seed: u64) -> Result<Vec<VerificationReport>> {
    let mut reports = Vec::new();
    let (mut schur, mut ward) = (0.0f64, 0.0f64);
    let mut nmax = 0;
    for k in 0..100 {
        let lin = random_instance(seed, k)?;
        let (a, b) = verify_schur(&lin)?;
        schur = schur.max(a).max(b);
        ward = ward.max(ward_check(&lin)?);
        nmax = nmax.max(lin.n());
    }
    reports.push(VerificationReport::exact("schur", nmax, 0.0, schur, IDENTITY_TOL));
    reports.push(VerificationReport::exact("ward", nmax, 0.0, ward, IDENTITY_TOL));
    for (name, spec) in default_corpus()? {
        let (mut sum_rules, mut coeff) = (0.0f64, 0.0f64);
        for &t in &flow_time_grid() {
            let st = flow_state(&spec, t)?;
            let (a, b) = st.sum_rule_residuals();
            sum_rules = sum_rules.max(a).max(b);
            let (c1, c2) = coefficient_identities_check(&st, None);
            coeff = coeff.max(c1).max(c2);
        }
        let mut zdot = 0.0f64;
        for t in [0.0, 0.5, 1.0, 2.0] {
            zdot = zdot.max(zdot_check(&spec, t, ZDOT_STEP)?);
        }
        let st0 = flow_state(&spec, 0.0)?;
        let e0 = edge_params(&spec, XI_TOL)?;
        let init = (st0.xi_plus - e0.xi_plus)
            .abs()
            .max((st0.e_plus - e0.e_plus).abs())
            .max((st0.gamma - e0.gamma0).abs());
        let n = spec.n();
        reports.push(VerificationReport::exact(&format!("sum_rules [{name}]"), n, 30.0, sum_rules, IDENTITY_TOL));
        reports.push(VerificationReport::exact(&format!("coefficient_identities [{name}]"), n, 30.0, coeff, COEFFICIENT_TOL));
        reports.push(VerificationReport::exact(&format!("zdot [{name}]"), n, 2.0, zdot, ZDOT_TOL));
        reports.push(VerificationReport::exact(&format!("initial_state [{name}]"), n, 0.0, init, INITIAL_STATE_TOL));
    }
    Ok(reports)
}

/// One entry of a verification manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum CheckSpec {
    ExactIdentities {
        #[serde(default)]
        seed: u64,
    },
    Decoupling(McCheck),
    Optical(McCheck),
    Cancellation(McCheck),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCheck {
    pub spectrum: String,
    #[serde(default)]
    pub t: f64,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub window: EdgeWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckManifest {
    pub checks: Vec<CheckSpec>,
}

impl Default for CheckManifest {
    fn default() -> Self {
        let mc = |spectrum: &str, t: f64, reps: usize| McCheck {
            spectrum: spectrum.to_string(),
            t,
            reps,
            seed: 1,
            window: EdgeWindow::default(),
        };
        CheckManifest {
            checks: vec![
                CheckSpec::ExactIdentities { seed: 1 },
                CheckSpec::Decoupling(mc("identity:M=200,N=200", 0.0, 3600)),
                CheckSpec::Optical(mc("identity:M=200,N=200", 0.0, 40000)),
                CheckSpec::Cancellation(mc("twopoint:a=1,b=2,w=0.5,M=200,N=200", 0.5, 2000)),
            ],
        }
    }
}

pub fn run_check(check: &CheckSpec) -> Result<Vec<VerificationReport>> {
    match check {
        CheckSpec::ExactIdentities { seed } => exact_identity_suite(*seed),
        CheckSpec::Decoupling(c) | CheckSpec::Optical(c) | CheckSpec::Cancellation(c) => {
            let spec = PopulationSpectrum::from_arg(&c.spectrum)?;
            let state = flow_state(&spec, c.t)?;
            let report = match check {
                CheckSpec::Decoupling(_) => decoupling_residual(&state, &c.window, c.reps, c.seed)?,
                CheckSpec::Optical(_) => optical_residual(&state, &c.window, c.reps, c.seed)?,
                _ => {
                    let draws = edge_observable_draws(&state, &c.window, c.reps, c.seed)?;
                    cancellation_from_draws(&state, &c.window, &draws, c.seed)?
                }
            };
            Ok(vec![report])
        }
    }
}

pub fn run_manifest(manifest: &CheckManifest) -> Result<Vec<VerificationReport>> {
    let mut out = Vec::new();
    for check in &manifest.checks {
        out.extend(run_check(check)?);
    }
    Ok(out)
}
