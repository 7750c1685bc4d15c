//! Population spectra and the deterministic edge parameters derived from them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{EdgeError, Result};

/// Default tolerance on the edge equation residual.
pub const XI_TOL: f64 = 1e-12;
/// Default threshold on `1 - sigma_1 * xi_plus` below which a spectrum is rejected.
pub const MARGIN_THRESHOLD: f64 = 1e-6;

const MAX_ITER: usize = 200;

/// Eigenvalues of the population covariance (sorted descending) together with
/// the sample dimension `N`. The population dimension `M` is the number of
/// eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpectrum", into = "RawSpectrum")]
pub struct PopulationSpectrum {
    sigma: Vec<f64>,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSpectrum {
    eigenvalues: Vec<f64>,
    n: usize,
}

impl TryFrom<RawSpectrum> for PopulationSpectrum {
    type Error = EdgeError;
    fn try_from(raw: RawSpectrum) -> Result<Self> {
        PopulationSpectrum::new(raw.eigenvalues, raw.n)
    }
}

impl From<PopulationSpectrum> for RawSpectrum {
    fn from(p: PopulationSpectrum) -> Self {
        RawSpectrum {
            eigenvalues: p.sigma,
            n: p.n,
        }
    }
}

impl PopulationSpectrum {
    pub fn new(mut sigma: Vec<f64>, n: usize) -> Result<Self> {
        if sigma.is_empty() {
            return Err(EdgeError::invalid("population spectrum is empty"));
        }
        if n == 0 {
            return Err(EdgeError::invalid("sample dimension N must be positive"));
        }
        for (index, &value) in sigma.iter().enumerate() {
            if !(value.is_finite() && value > 0.0) {
                return Err(EdgeError::NonPositiveEigenvalue { index, value });
            }
        }
        sigma.sort_by(|a, b| b.total_cmp(a));
        Ok(PopulationSpectrum { sigma, n })
    }

    pub fn identity(m: usize, n: usize) -> Result<Self> {
        Self::new(vec![1.0; m], n)
    }

    /// `round(w * M)` eigenvalues equal to `a`, the rest equal to `b`.
    pub fn two_point(a: f64, b: f64, w: f64, m: usize, n: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(EdgeError::invalid(format!("weight w={w} must lie in [0, 1]")));
        }
        let na = (w * m as f64).round() as usize;
        let mut sigma = vec![a; na];
        sigma.resize(m, b);
        Self::new(sigma, n)
    }

    /// Midpoint quantiles of the uniform law on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, m: usize, n: usize) -> Result<Self> {
        if !(hi >= lo) {
            return Err(EdgeError::invalid(format!("uniform range [{lo}, {hi}] is empty")));
        }
        let sigma = (0..m)
            .map(|j| lo + (hi - lo) * (j as f64 + 0.5) / m as f64)
            .collect();
        Self::new(sigma, n)
    }

    /// Reads a spectrum file: a `# N=<int>` header followed by one eigenvalue per line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EdgeError::io(path, e))?;
        let mut n = None;
        let mut sigma = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("N=") {
                    let parsed = v.trim().parse::<usize>().map_err(|_| {
                        EdgeError::format(path, format!("line {}: bad N header", lineno + 1))
                    })?;
                    n = Some(parsed);
                }
                continue;
            }
            let v = line.parse::<f64>().map_err(|_| {
                EdgeError::format(path, format!("line {}: cannot parse {line:?}", lineno + 1))
            })?;
            sigma.push(v);
        }
        let n = n.ok_or_else(|| EdgeError::format(path, "missing '# N=<int>' header"))?;
        Self::new(sigma, n)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = format!("# N={}\n", self.n);
        for s in &self.sigma {
            out.push_str(&format!("{s:e}\n"));
        }
        std::fs::write(path, out).map_err(|e| EdgeError::io(path, e))
    }

    /// Accepts either a descriptor (`identity:M=..,N=..`, `twopoint:a=..,b=..,w=..,M=..,N=..`,
    /// `uniform:lo=..,hi=..,M=..,N=..`) or a path to a spectrum file.
    pub fn from_arg(arg: &str) -> Result<Self> {
        match arg.split_once(':') {
            Some((kind, _)) if matches!(kind, "identity" | "twopoint" | "uniform") => arg.parse(),
            _ => Self::from_file(Path::new(arg)),
        }
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.sigma
    }

    pub fn m(&self) -> usize {
        self.sigma.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Aspect ratio `d = N / M`.
    pub fn d(&self) -> f64 {
        self.n as f64 / self.sigma.len() as f64
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma[0]
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.sigma.iter().map(|s| s * c).collect(), self.n)
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.sigma.clone(), n)
    }

    /// Average of `g(sigma)` over the population.
    pub fn mean_of(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.sigma.iter().map(|&s| g(s)).sum::<f64>() / self.m() as f64
    }
}

impl FromStr for PopulationSpectrum {
    type Err = EdgeError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| EdgeError::invalid(format!("descriptor {s:?} has no ':'")))?;
        let mut fields = std::collections::HashMap::new();
        for kv in rest.split(',').filter(|kv| !kv.trim().is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| EdgeError::invalid(format!("field {kv:?} is not key=value")))?;
            fields.insert(k.trim(), v.trim());
        }
        let num = |key: &str| -> Result<f64> {
            let v = fields
                .get(key)
                .ok_or_else(|| EdgeError::invalid(format!("descriptor {s:?} lacks {key}")))?;
            v.parse::<f64>()
                .map_err(|_| EdgeError::invalid(format!("{key}={v} is not a number")))
        };
        let dim = |key: &str| -> Result<usize> {
            let v = fields
                .get(key)
                .ok_or_else(|| EdgeError::invalid(format!("descriptor {s:?} lacks {key}")))?;
            v.parse::<usize>()
                .map_err(|_| EdgeError::invalid(format!("{key}={v} is not a positive integer")))
        };
        match kind {
            "identity" => Self::identity(dim("M")?, dim("N")?),
            "twopoint" => Self::two_point(num("a")?, num("b")?, num("w")?, dim("M")?, dim("N")?),
            "uniform" => Self::uniform(num("lo")?, num("hi")?, dim("M")?, dim("N")?),
            other => Err(EdgeError::invalid(format!("unknown spectrum kind {other:?}"))),
        }
    }
}

impl fmt::Display for PopulationSpectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "M={} N={} sigma in [{}, {}]",
            self.m(),
            self.n,
            self.sigma[self.m() - 1],
            self.sigma[0]
        )
    }
}

/// Deterministic edge quantities of a population spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeParams {
    pub xi_plus: f64,
    pub e_plus: f64,
    pub gamma0: f64,
    /// `1 - sigma_1 * xi_plus`
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubcriticalReport {
    pub margin: f64,
    pub threshold: f64,
    pub subcritical: bool,
}

fn edge_equation(spec: &PopulationSpectrum, xi: f64) -> (f64, f64) {
    let m = spec.m() as f64;
    let mut f = 0.0;
    let mut df = 0.0;
    for &s in spec.eigenvalues() {
        let r = 1.0 / (1.0 - s * xi);
        let u = s * xi * r;
        f += u * u;
        df += 2.0 * u * s * r * r;
    }
    (f / m - spec.d(), df / m)
}

/// Root in `(0, 1/sigma_1)` of `mean((sigma xi / (1 - sigma xi))^2) = d`.
///
/// Bisection narrows the bracket to a thousandth of its width, then a
/// bracketed Newton iteration finishes to `|residual| <= tol`.
pub fn solve_xi_plus(spec: &PopulationSpectrum, tol: f64) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = 1.0 / spec.sigma_max();
    let width = hi;
    let mut iter = 0;
    while hi - lo > 1e-3 * width {
        let mid = 0.5 * (lo + hi);
        let (f, _) = edge_equation(spec, mid);
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iter += 1;
    }
    let mut x = 0.5 * (lo + hi);
    while iter < MAX_ITER {
        let (f, df) = edge_equation(spec, x);
        if f.abs() <= tol {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - f / df;
        x = if newton > lo && newton < hi && df > 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        iter += 1;
    }
    let (f, _) = edge_equation(spec, x);
    if f.abs() <= tol {
        return Ok(x);
    }
    Err(EdgeError::convergence(
        "edge equation",
        format!("residual {f:.3e} > tol {tol:.1e}; bracket [{lo:.17e}, {hi:.17e}]"),
    ))
}

/// Right endpoint of the deterministic spectrum, evaluated at `xi`.
pub fn edge_location(spec: &PopulationSpectrum, xi: f64) -> f64 {
    let mean = spec.mean_of(|s| s * xi / (1.0 - s * xi));
    (1.0 + mean / spec.d()) / xi
}

/// Scale making the fluctuations of the top eigenvalue order one at size `N^{-2/3}`.
pub fn scaling_factor(spec: &PopulationSpectrum, xi: f64) -> f64 {
    let cube = spec.mean_of(|s| (s / (1.0 - s * xi)).powi(3)) / spec.d() + xi.powi(-3);
    cube.powf(-1.0 / 3.0)
}

pub fn check_subcritical(
    spec: &PopulationSpectrum,
    xi: f64,
    threshold: f64,
) -> Result<SubcriticalReport> {
    let margin = 1.0 - spec.sigma_max() * xi;
    let report = SubcriticalReport {
        margin,
        threshold,
        subcritical: margin > threshold,
    };
    if report.subcritical {
        Ok(report)
    } else {
        Err(EdgeError::Supercritical { margin, threshold })
    }
}

pub fn edge_params(spec: &PopulationSpectrum, tol: f64) -> Result<EdgeParams> {
    let xi_plus = solve_xi_plus(spec, tol)?;
    Ok(EdgeParams {
        xi_plus,
        e_plus: edge_location(spec, xi_plus),
        gamma0: scaling_factor(spec, xi_plus),
        margin: 1.0 - spec.sigma_max() * xi_plus,
    })
}

/// Edge parameters after rejecting spectra too close to criticality.
pub fn checked_edge_params(spec: &PopulationSpectrum, threshold: f64) -> Result<EdgeParams> {
    let params = edge_params(spec, XI_TOL)?;
    check_subcritical(spec, params.xi_plus, threshold)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_matches_closed_form() {
        for &(m, n) in &[(100, 100), (200, 400), (300, 100)] {
            let spec = PopulationSpectrum::identity(m, n).unwrap();
            let p = edge_params(&spec, XI_TOL).unwrap();
            let sd = spec.d().sqrt();
            assert_relative_eq!(p.xi_plus, sd / (1.0 + sd), max_relative = 1e-12);
            assert_relative_eq!(p.e_plus, (1.0 + sd).powi(2) / spec.d(), max_relative = 1e-12);
            assert_relative_eq!(p.gamma0, sd * (1.0 + sd).powf(-4.0 / 3.0), max_relative = 1e-12);
        }
    }

    #[test]
    fn identity_square_values() {
        let spec: PopulationSpectrum = "identity:M=100,N=100".parse().unwrap();
        let p = edge_params(&spec, XI_TOL).unwrap();
        assert_relative_eq!(p.xi_plus, 0.5, max_relative = 1e-12);
        assert_relative_eq!(p.e_plus, 4.0, max_relative = 1e-12);
        assert_relative_eq!(p.gamma0, 2f64.powf(-4.0 / 3.0), max_relative = 1e-12);
    }

    #[test]
    fn two_point_against_bisection_oracle() {
        // 64-bit bisection of the edge equation, computed separately.
        let spec = PopulationSpectrum::two_point(1.0, 2.0, 0.5, 4, 4).unwrap();
        assert_eq!(spec.eigenvalues(), &[2.0, 2.0, 1.0, 1.0]);
        let p = edge_params(&spec, XI_TOL).unwrap();
        assert_relative_eq!(p.xi_plus, 0.2877129438687698, max_relative = 1e-11);
        assert_relative_eq!(p.e_plus, 6.532952096412179, max_relative = 1e-11);
        assert_relative_eq!(p.gamma0, 0.218672703808301, max_relative = 1e-11);
        assert!(p.margin > 0.4);
    }

    #[test]
    fn rejects_nonpositive_eigenvalue() {
        let err = PopulationSpectrum::new(vec![1.0, 2.0, -0.5], 3).unwrap_err();
        match err {
            EdgeError::NonPositiveEigenvalue { index, value } => {
                assert_eq!(index, 2);
                assert_eq!(value, -0.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn supercritical_rejected_by_threshold() {
        let mut sigma = vec![1.0; 400];
        sigma[0] = 4.0;
        let spec = PopulationSpectrum::new(sigma, 400).unwrap();
        let xi = solve_xi_plus(&spec, XI_TOL).unwrap();
        assert!(check_subcritical(&spec, xi, MARGIN_THRESHOLD).is_ok());
        let err = check_subcritical(&spec, xi, 0.1).unwrap_err();
        assert!(matches!(err, EdgeError::Supercritical { .. }));
        assert!(err.is_domain_rejection());
    }

    #[test]
    fn unreachable_tolerance_is_reported() {
        let spec = PopulationSpectrum::identity(10, 10).unwrap();
        let err = solve_xi_plus(&spec, 0.0).unwrap_err();
        assert!(matches!(err, EdgeError::Convergence { .. }));
    }

    #[test]
    fn descriptor_and_file_round_trip() {
        let spec: PopulationSpectrum = "uniform:lo=1,hi=3,M=5,N=7".parse().unwrap();
        assert_eq!(spec.eigenvalues(), &[2.8, 2.4, 2.0, 1.6, 1.2]);
        assert_eq!(spec.n(), 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.txt");
        spec.write_file(&path).unwrap();
        let back = PopulationSpectrum::from_arg(path.to_str().unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!("twopoint:a=1,b=2,M=4,N=4".parse::<PopulationSpectrum>().is_err());
        assert!("gamma:k=1".parse::<PopulationSpectrum>().is_err());
    }

    #[test]
    fn json_validates() {
        let ok: PopulationSpectrum = serde_json::from_str(r#"{"eigenvalues":[1,2],"n":3}"#).unwrap();
        assert_eq!(ok.eigenvalues(), &[2.0, 1.0]);
        assert!(serde_json::from_str::<PopulationSpectrum>(r#"{"eigenvalues":[0],"n":3}"#).is_err());
    }
}
