//! Stieltjes transform of the deterministic equivalent law and its density.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{EdgeError, Result};
use crate::par;
use crate::population::{edge_params, PopulationSpectrum, XI_TOL};

pub const MFC_TOL: f64 = 1e-13;
pub const DEFAULT_ETA0: f64 = 1e-6;
const MAX_ITER: usize = 20_000;
const LAMBDA_FLOOR: f64 = 1.0 / 64.0;
/// Grid points per independently warm-started block. Fixed so that the
/// result never depends on the number of worker threads.
const DENSITY_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StieltjesValue {
    pub z: Complex64,
    pub m: Complex64,
    pub iterations: usize,
    pub residual: f64,
}

/// Population eigenvalues collapsed to distinct values with multiplicities.
#[derive(Debug, Clone)]
pub struct MfcKernel {
    atoms: Vec<(f64, f64)>,
    inv_d: f64,
}

impl MfcKernel {
    pub fn new(spec: &PopulationSpectrum) -> Self {
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let w = 1.0 / spec.m() as f64;
        for &s in spec.eigenvalues() {
            match atoms.last_mut() {
                Some((v, wt)) if *v == s => *wt += w,
                _ => atoms.push((s, w)),
            }
        }
        MfcKernel {
            atoms,
            inv_d: 1.0 / spec.d(),
        }
    }

    /// Right-hand side of the fixed-point equation and its derivative in `m`.
    fn map(&self, z: Complex64, m: Complex64) -> (Complex64, Complex64) {
        let mut s = Complex64::new(0.0, 0.0);
        let mut ds = Complex64::new(0.0, 0.0);
        for &(sig, w) in &self.atoms {
            let r = 1.0 / (sig * m + 1.0);
            s += w * sig * r;
            ds -= w * sig * sig * r * r;
        }
        let f = 1.0 / (-z + self.inv_d * s);
        (f, -self.inv_d * ds * f * f)
    }

    fn residual(&self, z: Complex64, m: Complex64) -> f64 {
        (m - self.map(z, m).0).norm() / m.norm().max(1.0)
    }

    /// Damped fixed-point iteration from `guess`, with a Newton step tried
    /// first at every iterate and kept whenever it lowers the residual.
    pub fn solve_from(&self, z: Complex64, guess: Complex64, tol: f64) -> Result<StieltjesValue> {
        if z.im < 0.0 {
            let v = self.solve_from(z.conj(), guess.conj(), tol)?;
            return Ok(StieltjesValue {
                z,
                m: v.m.conj(),
                ..v
            });
        }
        if !(z.im > 0.0) || !z.re.is_finite() {
            return Err(EdgeError::invalid(format!("spectral parameter {z} must have Im z != 0")));
        }
        let mut m = if guess.im > 0.0 && guess.is_finite() {
            guess
        } else {
            -1.0 / z
        };
        let mut lambda = 1.0;
        let mut r = self.residual(z, m);
        for it in 0..MAX_ITER {
            if r <= tol {
                return Ok(StieltjesValue {
                    z,
                    m,
                    iterations: it,
                    residual: r,
                });
            }
            let (f, df) = self.map(z, m);
            let newton = m - (m - f) / (1.0 - df);
            if newton.im > 0.0 && newton.is_finite() {
                let rn = self.residual(z, newton);
                if rn < r {
                    m = newton;
                    r = rn;
                    continue;
                }
            }
            let damped = (1.0 - lambda) * m + lambda * f;
            let rd = self.residual(z, damped);
            if rd > r {
                lambda = (0.5 * lambda).max(LAMBDA_FLOOR);
            }
            m = damped;
            r = rd;
        }
        Err(EdgeError::convergence(
            "self-consistent equation",
            format!("z={z}: residual {r:.3e} after {MAX_ITER} iterations"),
        ))
    }

    /// Cold solve: continuation in `Im z` from 1 down to the requested value.
    pub fn solve(&self, z: Complex64, tol: f64) -> Result<StieltjesValue> {
        if z.im < 0.0 {
            let v = self.solve(z.conj(), tol)?;
            return Ok(StieltjesValue {
                z,
                m: v.m.conj(),
                ..v
            });
        }
        let mut eta = z.im.max(1.0);
        let mut m = -1.0 / Complex64::new(z.re, eta);
        let mut iterations = 0;
        while eta > z.im {
            let v = self.solve_from(Complex64::new(z.re, eta), m, tol.max(1e-10))?;
            m = v.m;
            iterations += v.iterations;
            eta = (eta * 0.1).max(z.im);
        }
        let mut v = self.solve_from(z, m, tol)?;
        v.iterations += iterations;
        Ok(v)
    }
}

pub fn solve_mfc(spec: &PopulationSpectrum, z: Complex64, tol: f64) -> Result<StieltjesValue> {
    MfcKernel::new(spec).solve(z, tol)
}

/// Closed-form Stieltjes transform for the identity population:
/// the root of `z m^2 + (z + 1 - 1/d) m + 1 = 0` in the upper half-plane.
pub fn mp_reference(d: f64, z: Complex64) -> Complex64 {
    if z.im < 0.0 {
        return mp_reference(d, z.conj()).conj();
    }
    let b = z + 1.0 - 1.0 / d;
    let disc = (b * b - 4.0 * z).sqrt();
    let r1 = (-b + disc) / (2.0 * z);
    let r2 = (-b - disc) / (2.0 * z);
    if r1.im >= r2.im {
        r1
    } else {
        r2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub energies: Vec<f64>,
    pub rho: Vec<f64>,
    pub eta0: f64,
    /// Grid indices where the solver failed; the density there is NaN.
    pub failures: Vec<usize>,
}

impl DensityCurve {
    /// Trapezoid-rule mass of the curve.
    pub fn mass(&self) -> f64 {
        self.energies
            .windows(2)
            .zip(self.rho.windows(2))
            .map(|(e, r)| 0.5 * (e[1] - e[0]) * (r[0] + r[1]))
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("E,rho\n");
        for (e, r) in self.energies.iter().zip(&self.rho) {
            out.push_str(&format!("{e:e},{r:e}\n"));
        }
        out
    }
}

/// `pi^{-1} Im m(E + i eta0)` on a grid, continuing the solution along each
/// block of the grid.
pub fn density(spec: &PopulationSpectrum, grid: &[f64], eta0: f64) -> Result<DensityCurve> {
    if !(eta0 > 0.0) {
        return Err(EdgeError::invalid(format!("eta0={eta0} must be positive")));
    }
    let kernel = MfcKernel::new(spec);
    let blocks: Vec<&[f64]> = grid.chunks(DENSITY_BLOCK).collect();
    let solved: Vec<Vec<Option<f64>>> = par::map_indexed(blocks.len(), |b| {
        let mut prev: Option<Complex64> = None;
        blocks[b]
            .iter()
            .map(|&e| {
                let z = Complex64::new(e, eta0);
                let attempt = match prev {
                    Some(g) => kernel.solve_from(z, g, MFC_TOL).or_else(|_| kernel.solve(z, MFC_TOL)),
                    None => kernel.solve(z, MFC_TOL),
                };
                match attempt {
                    Ok(v) => {
                        prev = Some(v.m);
                        Some((v.m.im / std::f64::consts::PI).max(0.0))
                    }
                    Err(_) => {
                        prev = None;
                        None
                    }
                }
            })
            .collect()
    });
    let mut rho = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for (i, v) in solved.into_iter().flatten().enumerate() {
        match v {
            Some(r) => rho.push(r),
            None => {
                failures.push(i);
                rho.push(f64::NAN);
            }
        }
    }
    Ok(DensityCurve {
        energies: grid.to_vec(),
        rho,
        eta0,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeProbe {
    pub e_plus: f64,
    /// Slope of `log rho` against `log(E_+ - E)`.
    pub exponent: f64,
    /// Prefactor `A` of `rho ~ A sqrt(E_+ - E)`, fitted with the exponent held at 1/2.
    pub amplitude: f64,
    pub points: usize,
}

/// Fits the density over `E_+ - E` in `[1e-4, 1e-2]`.
pub fn edge_exponent_probe(spec: &PopulationSpectrum, eta0: f64) -> Result<EdgeProbe> {
    let e_plus = edge_params(spec, XI_TOL)?.e_plus;
    edge_fit(&MfcKernel::new(spec), e_plus, eta0)
}

pub(crate) fn edge_fit(kernel: &MfcKernel, e_plus: f64, eta0: f64) -> Result<EdgeProbe> {
    const POINTS: usize = 41;
    let mut xs = Vec::with_capacity(POINTS);
    let mut ys = Vec::with_capacity(POINTS);
    for k in 0..POINTS {
        let log_kappa = (1e-2f64).ln() + (k as f64 / (POINTS - 1) as f64) * (1e-4f64 / 1e-2).ln();
        let kappa = log_kappa.exp();
        let v = kernel.solve(Complex64::new(e_plus - kappa, eta0), MFC_TOL)?;
        let rho = v.m.im / std::f64::consts::PI;
        if !(rho > 0.0) {
            return Err(EdgeError::convergence(
                "edge fit",
                format!("density vanished at distance {kappa:.2e} below the edge"),
            ));
        }
        xs.push(log_kappa);
        ys.push(rho.ln());
    }
    let n = POINTS as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let log_amp = ys.iter().zip(&xs).map(|(y, x)| y - 0.5 * x).sum::<f64>() / n;
    Ok(EdgeProbe {
        e_plus,
        exponent: sxy / sxx,
        amplitude: log_amp.exp(),
        points: POINTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_matches_quadratic_root() {
        let spec = PopulationSpectrum::identity(100, 100).unwrap();
        let z = c(1.0, 0.1);
        let v = solve_mfc(&spec, z, MFC_TOL).unwrap();
        let exact = mp_reference(1.0, z);
        assert!((v.m - exact).norm() < 1e-10);
        assert!((z * v.m * v.m + z * v.m + 1.0).norm() < 1e-10);
    }

    #[test]
    fn value_at_edge() {
        let spec = PopulationSpectrum::identity(100, 100).unwrap();
        let v = solve_mfc(&spec, c(4.0, 1e-6), MFC_TOL).unwrap();
        assert!((v.m - c(-0.5, 0.0)).norm() < 5e-3, "{}", v.m);
        assert!((v.m - mp_reference(1.0, c(4.0, 1e-6))).norm() < 1e-8);
    }

    #[test]
    fn edge_value_equals_minus_xi() {
        let spec = PopulationSpectrum::two_point(1.0, 2.0, 0.5, 100, 100).unwrap();
        let p = edge_params(&spec, XI_TOL).unwrap();
        let v = solve_mfc(&spec, c(p.e_plus, 1e-10), MFC_TOL).unwrap();
        assert!((v.m.re + p.xi_plus).abs() < 1e-4, "{} vs {}", v.m, p.xi_plus);
    }

    #[test]
    fn lower_half_plane_by_conjugation() {
        let spec = PopulationSpectrum::uniform(0.5, 2.0, 50, 80).unwrap();
        let up = solve_mfc(&spec, c(1.3, 0.2), MFC_TOL).unwrap();
        let down = solve_mfc(&spec, c(1.3, -0.2), MFC_TOL).unwrap();
        assert_eq!(up.m, down.m.conj());
        assert!(solve_mfc(&spec, c(1.3, 0.0), MFC_TOL).is_err());
    }

    #[test]
    fn mass_is_one_for_square_identity() {
        let spec = PopulationSpectrum::identity(100, 100).unwrap();
        let grid: Vec<f64> = (0..=9000).map(|i| 4.5 * i as f64 / 9000.0).collect();
        // At eta0 = 1e-6 the node E = 0 sits on the 1/sqrt(E) singularity and
        // the trapezoid overshoots by about 4.6%; 1e-4 smooths it enough.
        let curve = density(&spec, &grid, 1e-4).unwrap();
        assert!(curve.failures.is_empty());
        assert!((curve.mass() - 1.0).abs() < 0.02, "mass {}", curve.mass());
    }

    #[test]
    fn two_point_density_is_a_probability() {
        let spec = PopulationSpectrum::two_point(1.0, 2.0, 0.5, 100, 100).unwrap();
        let grid: Vec<f64> = (0..=9000).map(|i| 7.0 * i as f64 / 9000.0).collect();
        let curve = density(&spec, &grid, 1e-4).unwrap();
        assert!(curve.failures.is_empty());
        assert!(curve.rho.iter().all(|&r| r >= 0.0));
        assert!((curve.mass() - 1.0).abs() < 0.02, "mass {}", curve.mass());
    }

    #[test]
    fn square_root_edge() {
        let spec = PopulationSpectrum::identity(100, 100).unwrap();
        let probe = edge_exponent_probe(&spec, DEFAULT_ETA0).unwrap();
        assert!((0.47..=0.53).contains(&probe.exponent), "{probe:?}");
        // rho ~ sqrt(4 - E) / (4 pi) near E = 4
        assert_relative_eq!(probe.amplitude, 0.25 / std::f64::consts::PI, max_relative = 0.02);
    }
}
