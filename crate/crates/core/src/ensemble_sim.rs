//! Monte Carlo sampling of sample covariance and Gaussian orthogonal
//! ensembles, edge rescaling and goodness-of-fit against Tracy-Widom.

use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EdgeError, Result};
use crate::linalg::{sym_eigen, sym_eigenvalues, tridiagonal_eigenvalues};
use crate::par;
use crate::population::{checked_edge_params, EdgeParams, PopulationSpectrum, MARGIN_THRESHOLD};
use crate::rng::{replicate_rng, DOMAIN_GOE, DOMAIN_NULL_W, DOMAIN_WISHART};
use crate::stats::ks_one_sample;
use crate::stieltjes::{solve_mfc, MFC_TOL};
use crate::tracy_widom::TwTable;

/// Law of the standardized entries `sqrt(N) x_{alpha i}` (mean 0, variance 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum EntryDistribution {
    Gaussian,
    Rademacher,
    /// Takes `sqrt((1-p)/p)` with probability `p`, else `-sqrt(p/(1-p))`.
    SkewedTwoPoint { p: f64 },
}

impl EntryDistribution {
    pub const DEFAULT_SKEW_P: f64 = 0.2;

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            EntryDistribution::Gaussian => StandardNormal.sample(rng),
            EntryDistribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryDistribution::SkewedTwoPoint { p } => {
                if rng.random::<f64>() < p {
                    ((1.0 - p) / p).sqrt()
                } else {
                    -(p / (1.0 - p)).sqrt()
                }
            }
        }
    }

    pub fn third_moment(&self) -> f64 {
        match *self {
            EntryDistribution::Gaussian | EntryDistribution::Rademacher => 0.0,
            EntryDistribution::SkewedTwoPoint { p } => (1.0 - 2.0 * p) / (p * (1.0 - p)).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            EntryDistribution::SkewedTwoPoint { p } if !(p > 0.0 && p < 1.0) => {
                Err(EdgeError::invalid(format!("skewed law needs 0 < p < 1, got {p}")))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for EntryDistribution {
    type Err = EdgeError;
    fn from_str(s: &str) -> Result<Self> {
        let d = match s {
            "gaussian" => EntryDistribution::Gaussian,
            "rademacher" => EntryDistribution::Rademacher,
            "skewed" => EntryDistribution::SkewedTwoPoint {
                p: Self::DEFAULT_SKEW_P,
            },
            other => match other.strip_prefix("skewed:p=") {
                Some(p) => EntryDistribution::SkewedTwoPoint {
                    p: p.parse()
                        .map_err(|_| EdgeError::invalid(format!("bad skew parameter {p:?}")))?,
                },
                None => return Err(EdgeError::invalid(format!("unknown entry law {other:?}"))),
            },
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub spectrum: PopulationSpectrum,
    pub entries: EntryDistribution,
    pub replicates: usize,
    /// Number of top eigenvalues kept per replicate.
    pub k: usize,
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub margin_threshold: f64,
}

fn default_threshold() -> f64 {
    MARGIN_THRESHOLD
}

impl EnsembleConfig {
    pub fn new(spectrum: PopulationSpectrum, entries: EntryDistribution, replicates: usize, k: usize, seed: u64) -> Self {
        EnsembleConfig {
            spectrum,
            entries,
            replicates,
            k,
            seed,
            margin_threshold: MARGIN_THRESHOLD,
        }
    }

    fn validate(&self) -> Result<()> {
        self.entries.validate()?;
        let rank = self.spectrum.m().min(self.spectrum.n());
        if self.k == 0 || self.k > rank {
            return Err(EdgeError::invalid(format!("k={} must lie in 1..={rank}", self.k)));
        }
        if self.replicates == 0 {
            return Err(EdgeError::invalid("at least one replicate is required"));
        }
        Ok(())
    }
}

/// `M x N` matrix with independent entries of variance `1/N`, drawn from
/// the replicate's own stream in column-major order.
pub fn sample_data_matrix(
    m: usize,
    n: usize,
    entries: EntryDistribution,
    seed: u64,
    domain: u64,
    replicate: u64,
) -> DMatrix<f64> {
    let mut rng = replicate_rng(seed, domain, replicate);
    let scale = 1.0 / (n as f64).sqrt();
    let data: Vec<f64> = (0..m * n).map(|_| scale * entries.sample(&mut rng)).collect();
    DMatrix::from_vec(m, n, data)
}

/// The smaller of `X^T D X` (N x N) and `D^{1/2} X X^T D^{1/2}` (M x M);
/// both share their nonzero eigenvalues.
pub fn gram_matrix(x: &DMatrix<f64>, sigma: &[f64]) -> DMatrix<f64> {
    let mut y = x.clone();
    for (mut row, s) in y.row_iter_mut().zip(sigma) {
        row *= s.sqrt();
    }
    if x.ncols() <= x.nrows() {
        y.tr_mul(&y)
    } else {
        &y * y.transpose()
    }
}

/// Top `k` eigenvalues of `X^T D X`, largest first.
pub fn top_eigenvalues(x: &DMatrix<f64>, spectrum: &PopulationSpectrum, k: usize) -> Result<Vec<f64>> {
    if x.nrows() != spectrum.m() || x.ncols() != spectrum.n() {
        return Err(EdgeError::invalid(format!(
            "data matrix is {}x{}, spectrum wants {}x{}",
            x.nrows(),
            x.ncols(),
            spectrum.m(),
            spectrum.n()
        )));
    }
    let evs = sym_eigenvalues(&gram_matrix(x, spectrum.eigenvalues()))?;
    Ok(evs.iter().rev().take(k).copied().collect())
}

/// Top `k` eigenvalues of `X^T Sigma X` for a dense population covariance.
pub fn top_eigenvalues_dense(x: &DMatrix<f64>, sigma: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let q = x.tr_mul(&(sigma * x));
    let evs = sym_eigenvalues(&q)?;
    Ok(evs.iter().rev().take(k).copied().collect())
}

/// `s = gamma0 N^{2/3} (mu - E_+)`.
pub fn rescale_edge(mus: &[f64], edge: &EdgeParams, n: usize) -> Vec<f64> {
    let c = edge.gamma0 * (n as f64).powf(2.0 / 3.0);
    mus.iter().map(|mu| c * (mu - edge.e_plus)).collect()
}

pub fn unrescale_edge(s: &[f64], edge: &EdgeParams, n: usize) -> Vec<f64> {
    let c = edge.gamma0 * (n as f64).powf(2.0 / 3.0);
    s.iter().map(|v| edge.e_plus + v / c).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSamples {
    pub edge: EdgeParams,
    pub n: usize,
    /// Rescaled top eigenvalues per replicate.
    pub rows: Vec<Vec<f64>>,
    /// Unscaled top eigenvalues per replicate.
    pub raw: Vec<Vec<f64>>,
}

impl EdgeSamples {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn to_csv(&self) -> String {
        let k = self.rows.first().map_or(0, Vec::len);
        let mut out = String::from("replicate");
        for j in 1..=k {
            out.push_str(&format!(",s{j}"));
        }
        out.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            out.push_str(&r.to_string());
            for v in row {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
        out
    }
}

fn replicate_top(config: &EnsembleConfig, r: usize) -> Result<Vec<f64>> {
    let x = sample_data_matrix(
        config.spectrum.m(),
        config.spectrum.n(),
        config.entries,
        config.seed,
        DOMAIN_WISHART,
        r as u64,
    );
    top_eigenvalues(&x, &config.spectrum, config.k)
}

fn collect_samples(config: &EnsembleConfig, edge: EdgeParams, raw: Vec<Vec<f64>>) -> EdgeSamples {
    let n = config.spectrum.n();
    let rows = raw.iter().map(|mus| rescale_edge(mus, &edge, n)).collect();
    EdgeSamples { edge, n, rows, raw }
}

/// Rescaled top-`k` eigenvalues over all replicates, in replicate order.
pub fn run_monte_carlo(config: &EnsembleConfig) -> Result<EdgeSamples> {
    config.validate()?;
    let edge = checked_edge_params(&config.spectrum, config.margin_threshold)?;
    let raw = par::try_map_indexed(config.replicates, |r| replicate_top(config, r))?;
    Ok(collect_samples(config, edge, raw))
}

/// Same as [`run_monte_carlo`] but always on the calling thread.
pub fn run_monte_carlo_seq(config: &EnsembleConfig) -> Result<EdgeSamples> {
    config.validate()?;
    let edge = checked_edge_params(&config.spectrum, config.margin_threshold)?;
    let raw = par::map_indexed_seq(config.replicates, |r| replicate_top(config, r))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_samples(config, edge, raw))
}

/// Dense symmetric matrix with off-diagonal variance `1/N` and diagonal `2/N`.
pub fn sample_goe(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let off = 1.0 / (n as f64).sqrt();
    let diag = (2.0 / n as f64).sqrt();
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let g: f64 = StandardNormal.sample(rng);
            if i == j {
                a[(i, i)] = diag * g;
            } else {
                a[(i, j)] = off * g;
                a[(j, i)] = off * g;
            }
        }
    }
    a
}

fn check_goe_args(n: usize, k: usize, reps: usize) -> Result<()> {
    if n < 2 || k == 0 || k > n || reps == 0 {
        return Err(EdgeError::invalid(format!("GOE sampling needs n >= 2, 1 <= k <= n, reps > 0 (n={n}, k={k})")));
    }
    Ok(())
}

fn goe_rescale(n: usize, evs: &[f64], k: usize) -> Vec<f64> {
    let c = (n as f64).powf(2.0 / 3.0);
    evs.iter().rev().take(k).map(|mu| c * (mu - 2.0)).collect()
}

/// Rescaled top `k` GOE eigenvalues `N^{2/3}(mu - 2)` from dense matrices.
pub fn sample_goe_top(n: usize, k: usize, reps: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_goe_args(n, k, reps)?;
    par::try_map_indexed(reps, |r| {
        let mut rng = replicate_rng(seed, DOMAIN_GOE, r as u64);
        let evs = sym_eigenvalues(&sample_goe(n, &mut rng))?;
        Ok(goe_rescale(n, &evs, k))
    })
}

/// Same law as [`sample_goe_top`] through the tridiagonal model of the GOE:
/// diagonal `N(0, 2)`, off-diagonal `chi_{n-1}, ..., chi_1`, all over `sqrt(N)`.
/// Costs `O(N^2)` per replicate instead of `O(N^3)`.
pub fn sample_goe_top_tridiagonal(n: usize, k: usize, reps: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_goe_args(n, k, reps)?;
    let scale = 1.0 / (n as f64).sqrt();
    par::try_map_indexed(reps, |r| {
        let mut rng = replicate_rng(seed, DOMAIN_GOE, r as u64);
        let diag: Vec<f64> = (0..n)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                scale * 2f64.sqrt() * g
            })
            .collect();
        let off: Vec<f64> = (1..n)
            .map(|i| {
                let chi2 = ChiSquared::new((n - i) as f64).expect("positive degrees of freedom");
                scale * chi2.sample(&mut rng).sqrt()
            })
            .collect();
        let evs = tridiagonal_eigenvalues(&diag, &off)?;
        Ok(goe_rescale(n, &evs, k))
    })
}

/// Eigenvalues of `X^T X` (`N x N`, zero-padded, ascending) for Gaussian `X`
/// of shape `M x N` with variance `1/N`, from the bidiagonal model `B B^T`
/// whose `min(M, N)` eigenvalues are the nonzero ones of the Wishart matrix.
pub fn wishart_eigenvalues_bidiagonal(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if m == 0 || n == 0 {
        return Err(EdgeError::invalid("bidiagonal Wishart needs positive dimensions"));
    }
    let (small, big) = (m.min(n), m.max(n));
    let mut chi = |dof: usize| ChiSquared::new(dof as f64).expect("positive degrees of freedom").sample(rng).sqrt();
    let a: Vec<f64> = (0..small).map(|i| chi(big - i)).collect();
    let b: Vec<f64> = (1..small).map(|i| chi(small - i)).collect();
    let scale = 1.0 / n as f64;
    let diag: Vec<f64> = (0..small)
        .map(|i| scale * (a[i] * a[i] + if i > 0 { b[i - 1] * b[i - 1] } else { 0.0 }))
        .collect();
    let off: Vec<f64> = (0..small - 1).map(|i| scale * a[i] * b[i]).collect();
    let mut ev = tridiagonal_eigenvalues(&diag, &off)?;
    let mut out = vec![0.0; n - small];
    out.append(&mut ev);
    Ok(out)
}

/// Edge law of `W = gamma X^T X` with `gamma = sqrt(d)(1+sqrt(d))^{-4/3}`:
/// `N^{2/3}(mu_1(W) - M_+)` with `M_+ = gamma (1+sqrt(d))^2 / d`.
pub fn null_reference_w(n: usize, m: usize, reps: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 || m == 0 || reps == 0 {
        return Err(EdgeError::invalid("null reference needs positive N, M and reps"));
    }
    let d = n as f64 / m as f64;
    let sd = d.sqrt();
    let gamma = sd * (1.0 + sd).powf(-4.0 / 3.0);
    let m_plus = gamma * (1.0 + sd).powi(2) / d;
    let ones = vec![1.0; m];
    let c = (n as f64).powf(2.0 / 3.0);
    par::try_map_indexed(reps, |r| {
        let x = sample_data_matrix(m, n, EntryDistribution::Gaussian, seed, DOMAIN_NULL_W, r as u64);
        let evs = sym_eigenvalues(&gram_matrix(&x, &ones))?;
        Ok(c * (gamma * evs[evs.len() - 1] - m_plus))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub n: usize,
    pub beta: u8,
    /// Where the reference CDF came from (cache path or "in-memory").
    pub reference: String,
}

pub fn ks_against_tw(samples: &[f64], table: &TwTable, beta: u8, reference: &str) -> Result<KsReport> {
    let (lo, hi) = (table.grid[0], table.grid[table.grid.len() - 1]);
    if !samples.iter().any(|s| (lo..=hi).contains(s)) {
        return Err(EdgeError::invalid(format!("no sample falls inside the table grid [{lo}, {hi}]")));
    }
    table.cdf(beta, 0.0)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let statistic = ks_one_sample(&sorted, |s| table.cdf(beta, s).unwrap_or(f64::NAN))?;
    Ok(KsReport {
        statistic,
        n: samples.len(),
        beta,
        reference: reference.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedCount {
    /// `pi^{-1} sum_j [atan((E* - mu_j)/eta) - atan((E - mu_j)/eta)]`
    pub smoothed: f64,
    /// `#{j : E < mu_j <= E*}`
    pub exact: usize,
}

pub const E_STAR_EXP: f64 = 0.1;

/// Upper end `E_* = E_+ + N^{-2/3 + 0.1}` of the counting window.
pub fn default_e_star(e_plus: f64, n: usize) -> f64 {
    e_plus + (n as f64).powf(-2.0 / 3.0 + E_STAR_EXP)
}

pub fn smoothed_count(eigs: &[f64], e: f64, e_star: f64, eta: f64) -> SmoothedCount {
    let mut smoothed = 0.0;
    let mut exact = 0;
    for &mu in eigs {
        smoothed += ((e_star - mu) / eta).atan() - ((e - mu) / eta).atan();
        if mu > e && mu <= e_star {
            exact += 1;
        }
    }
    SmoothedCount {
        smoothed: smoothed / std::f64::consts::PI,
        exact,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalLawProbe {
    /// `max_{a,b} |G_ab - delta_ab m|`
    pub max_entry_dev: f64,
    /// `|N^{-1} Tr G - m|`
    pub avg_dev: f64,
    /// `sqrt(Im m / (N eta)) + 1/(N eta)`
    pub psi: f64,
    pub m_empirical: Complex64,
    pub m_deterministic: Complex64,
}

/// Compares the resolvent of `X^T D X` at `z` with the deterministic Stieltjes transform.
pub fn local_law_probe(x: &DMatrix<f64>, spectrum: &PopulationSpectrum, z: Complex64) -> Result<LocalLawProbe> {
    if !(z.im > 0.0) {
        return Err(EdgeError::invalid("local law probe needs Im z > 0"));
    }
    let n = x.ncols();
    let mut y = x.clone();
    for (mut row, s) in y.row_iter_mut().zip(spectrum.eigenvalues()) {
        row *= s.sqrt();
    }
    let eig = sym_eigen(&y.tr_mul(&y))?;
    let inv: Vec<Complex64> = eig.values.iter().map(|l| 1.0 / (l - z)).collect();
    let mut vr = eig.vectors.clone();
    let mut vi = eig.vectors.clone();
    for (j, g) in inv.iter().enumerate() {
        vr.column_mut(j).scale_mut(g.re);
        vi.column_mut(j).scale_mut(g.im);
    }
    let gr = vr * eig.vectors.transpose();
    let gi = vi * eig.vectors.transpose();
    let m_det = solve_mfc(spectrum, z, MFC_TOL)?.m;
    let mut max_dev: f64 = 0.0;
    for b in 0..n {
        for a in 0..n {
            let mut g = Complex64::new(gr[(a, b)], gi[(a, b)]);
            if a == b {
                g -= m_det;
            }
            max_dev = max_dev.max(g.norm());
        }
    }
    let m_emp = inv.iter().sum::<Complex64>() / n as f64;
    let neta = n as f64 * z.im;
    Ok(LocalLawProbe {
        max_entry_dev: max_dev,
        avg_dev: (m_emp - m_det).norm(),
        psi: (m_det.im / neta).sqrt() + 1.0 / neta,
        m_empirical: m_emp,
        m_deterministic: m_det,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bidiagonal_wishart_matches_dense_law() {
        let (m, n, reps) = (30, 20, 2000);
        let ones = vec![1.0; m];
        let stats = |dense: bool| -> (Vec<f64>, Vec<f64>) {
            (0..reps)
                .map(|r| {
                    let ev = if dense {
                        let x = sample_data_matrix(m, n, EntryDistribution::Gaussian, 5, DOMAIN_WISHART, r);
                        sym_eigenvalues(&gram_matrix(&x, &ones)).unwrap()
                    } else {
                        let mut rng = replicate_rng(6, DOMAIN_WISHART, r);
                        wishart_eigenvalues_bidiagonal(m, n, &mut rng).unwrap()
                    };
                    (ev[n - 1], ev.iter().map(|v| v * v).sum::<f64>())
                })
                .unzip()
        };
        let (top_a, sq_a) = stats(true);
        let (top_b, sq_b) = stats(false);
        for (a, b) in [(top_a, top_b), (sq_a, sq_b)] {
            let (ma, mb) = (crate::stats::mean(&a), crate::stats::mean(&b));
            let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
            let se = ((var(&a, ma) + var(&b, mb)) / reps as f64).sqrt();
            assert!((ma - mb).abs() < 4.0 * se, "{ma} vs {mb}");
        }
        let mut rng = replicate_rng(7, DOMAIN_WISHART, 0);
        let ev = wishart_eigenvalues_bidiagonal(10, 40, &mut rng).unwrap();
        assert_eq!(ev.len(), 40);
        assert!(ev[..30].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn entry_laws_are_standardized() {
        let mut rng = replicate_rng(3, 99, 0);
        for law in [
            EntryDistribution::Gaussian,
            EntryDistribution::Rademacher,
            EntryDistribution::SkewedTwoPoint { p: 0.2 },
        ] {
            let xs: Vec<f64> = (0..200_000).map(|_| law.sample(&mut rng)).collect();
            let n = xs.len() as f64;
            let m1 = xs.iter().sum::<f64>() / n;
            let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
            let m3 = xs.iter().map(|x| x * x * x).sum::<f64>() / n;
            assert!(m1.abs() < 0.01, "{law:?} mean {m1}");
            assert!((m2 - 1.0).abs() < 0.02, "{law:?} var {m2}");
            assert!((m3 - law.third_moment()).abs() < 0.05, "{law:?} skew {m3}");
        }
        assert!((EntryDistribution::SkewedTwoPoint { p: 0.2 }.third_moment() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn parses_entry_laws() {
        assert_eq!("gaussian".parse::<EntryDistribution>().unwrap(), EntryDistribution::Gaussian);
        assert_eq!(
            "skewed:p=0.1".parse::<EntryDistribution>().unwrap(),
            EntryDistribution::SkewedTwoPoint { p: 0.1 }
        );
        assert!("skewed:p=1.5".parse::<EntryDistribution>().is_err());
        assert!("cauchy".parse::<EntryDistribution>().is_err());
    }

    #[test]
    fn identity_rescaling_matches_closed_form() {
        let spec = PopulationSpectrum::identity(50, 50).unwrap();
        let edge = checked_edge_params(&spec, MARGIN_THRESHOLD).unwrap();
        let s = rescale_edge(&[4.0, 3.9], &edge, 50);
        assert_eq!(s[0], 0.0);
        let back = unrescale_edge(&s, &edge, 50);
        assert!((back[1] - 3.9).abs() < 1e-14);
        assert!((s[1] - 2f64.powf(-4.0 / 3.0) * 50f64.powf(2.0 / 3.0) * -0.1).abs() < 1e-12);
    }

    #[test]
    fn gram_matrices_share_spectrum() {
        let spec = PopulationSpectrum::two_point(1.0, 3.0, 0.5, 12, 30).unwrap();
        let x = sample_data_matrix(12, 30, EntryDistribution::Gaussian, 5, DOMAIN_WISHART, 0);
        let small = top_eigenvalues(&x, &spec, 12).unwrap();
        let big = top_eigenvalues_dense(&x, &DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(spec.eigenvalues())), 12)
            .unwrap();
        for (a, b) in small.iter().zip(&big) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn tridiagonal_goe_matches_dense_law() {
        let dense = sample_goe_top(60, 3, 800, 3).unwrap();
        let tri = sample_goe_top_tridiagonal(60, 3, 800, 4).unwrap();
        for j in 0..3 {
            let a: Vec<f64> = dense.iter().map(|r| r[j]).collect();
            let b: Vec<f64> = tri.iter().map(|r| r[j]).collect();
            // 5% critical value of the two-sample statistic is 0.068 here
            assert!(crate::stats::ks_two_sample(&a, &b) < 0.08, "coordinate {j}");
        }
    }

    #[test]
    fn e_star_sits_above_the_edge() {
        let e = default_e_star(4.0, 1000);
        assert!((e - 4.0 - 1000f64.powf(-2.0 / 3.0 + 0.1)).abs() < 1e-15);
        assert!(default_e_star(4.0, 4000) < e);
    }

    #[test]
    fn smoothed_count_limits() {
        let eigs = [0.5, 1.0, 1.5, 2.5];
        let c = smoothed_count(&eigs, 0.75, 2.0, 1e-9);
        assert_eq!(c.exact, 2);
        assert!((c.smoothed - 2.0).abs() < 1e-8);
    }

    #[test]
    fn ks_needs_overlap() {
        let table = TwTable {
            grid: vec![-1.0, 0.0, 1.0],
            f1: vec![0.0, 0.5, 1.0],
            f2: vec![0.0, 0.5, 1.0],
        };
        let far: Vec<f64> = (0..30).map(|i| 10.0 + i as f64).collect();
        assert!(ks_against_tw(&far, &table, 1, "mem").is_err());
        let near: Vec<f64> = (0..30).map(|i| -0.9 + i as f64 * 0.06).collect();
        assert!(ks_against_tw(&near, &table, 1, "mem").unwrap().statistic < 0.1);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_ordered() {
        let spec = PopulationSpectrum::identity(30, 20).unwrap();
        let cfg = EnsembleConfig::new(spec, EntryDistribution::Rademacher, 12, 3, 17);
        let a = run_monte_carlo(&cfg).unwrap();
        let b = run_monte_carlo_seq(&cfg).unwrap();
        assert_eq!(a, b);
        for row in &a.raw {
            assert!(row[0] >= row[1] && row[1] >= row[2]);
        }
        let mut bad = cfg.clone();
        bad.k = 21;
        assert!(run_monte_carlo(&bad).is_err());
    }
}
