//! Tracy-Widom distribution functions for the real (beta = 1) and complex
//! (beta = 2) ensembles, computed from the Hastings-McLeod solution of
//! Painleve II.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::airy::airy_ai;
use crate::error::{EdgeError, Result};

pub const RTOL: f64 = 1e-10;
const ATOL: f64 = 1e-300;
const BLOW_UP: f64 = 1e6;
/// Extra distance integrated past `s_min` so that a trajectory off the
/// separatrix shows its direction unambiguously.
const PROBE_MARGIN: f64 = 4.0;
const SHOOTING_STEPS: usize = 120;

pub const CACHE_ENV: &str = "EDGEKIT_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PainleveSolution {
    /// Descending from `s_max` to `s_min`.
    pub grid: Vec<f64>,
    pub q: Vec<f64>,
    pub qprime: Vec<f64>,
    /// Multiplier `k` of the boundary data `q(s_max) = k Ai(s_max)` that keeps
    /// the numerical trajectory on the separatrix.
    pub amplitude: f64,
}

fn rhs(s: f64, y: [f64; 2]) -> [f64; 2] {
    [y[1], s * y[0] + 2.0 * y[0] * y[0] * y[0]]
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Advances `y` from `s0` to `s1` with adaptive Dormand-Prince steps.
fn dopri_advance(y: &mut [f64; 2], s0: f64, s1: f64, h_hint: &mut f64) -> Result<()> {
    let dir = (s1 - s0).signum();
    let mut s = s0;
    let mut h = h_hint.abs().min((s1 - s0).abs()) * dir;
    let mut steps = 0;
    while (s1 - s) * dir > 0.0 {
        if (s + h - s1) * dir > 0.0 {
            h = s1 - s;
        }
        let mut k = [[0.0; 2]; 7];
        k[0] = rhs(s, *y);
        for i in 1..7 {
            let mut yi = *y;
            for (j, kj) in k.iter().enumerate().take(i) {
                yi[0] += h * A[i][j] * kj[0];
                yi[1] += h * A[i][j] * kj[1];
            }
            k[i] = rhs(s + C[i] * h, yi);
        }
        let mut y5 = *y;
        let mut err: f64 = 0.0;
        for c in 0..2 {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for i in 0..7 {
                d5 += B5[i] * k[i][c];
                d4 += B4[i] * k[i][c];
            }
            y5[c] += h * d5;
            let scale = ATOL + RTOL * y[c].abs().max(y5[c].abs());
            err = err.max((h * (d5 - d4)).abs() / scale);
        }
        if err <= 1.0 {
            s += h;
            *y = y5;
            if !(y[0].abs() <= BLOW_UP) {
                return Ok(());
            }
            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            *h_hint = (h * grow).abs();
            h *= grow;
        } else {
            let shrink = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= shrink;
        }
        steps += 1;
        if steps > 1_000_000 || !y[0].is_finite() {
            return Err(EdgeError::convergence("Painleve integration", format!("stalled near s={s}")));
        }
    }
    Ok(())
}

#[derive(Debug, PartialEq)]
enum Fate {
    /// Stayed positive and bounded down to the probe point.
    Bounded { q_end: f64, s_end: f64 },
    BlowUp,
    SignChange,
}

/// Integrates from `s_max` down the uniform grid and on to the probe point,
/// recording grid values.
fn shoot(
    amplitude: f64,
    s_max: f64,
    step: f64,
    nodes: usize,
    probe_nodes: usize,
    record: Option<(&mut Vec<f64>, &mut Vec<f64>)>,
) -> Result<Fate> {
    let (a, ap) = airy_ai(s_max);
    let mut y = [amplitude * a, amplitude * ap];
    let mut h_hint = step;
    let mut record = record;
    if let Some((q, qp)) = record.as_mut() {
        q.push(y[0]);
        qp.push(y[1]);
    }
    let mut s = s_max;
    for j in 1..nodes + probe_nodes {
        let next = s_max - j as f64 * step;
        dopri_advance(&mut y, s, next, &mut h_hint)?;
        s = next;
        if !(y[0].abs() <= BLOW_UP) {
            return Ok(Fate::BlowUp);
        }
        if y[0] <= 0.0 {
            return Ok(Fate::SignChange);
        }
        if j < nodes {
            if let Some((q, qp)) = record.as_mut() {
                q.push(y[0]);
                qp.push(y[1]);
            }
        }
    }
    Ok(Fate::Bounded { q_end: y[0], s_end: s })
}

/// True when the trajectory ends above the separatrix.
fn is_high(fate: &Fate) -> bool {
    match fate {
        Fate::BlowUp => true,
        Fate::SignChange => false,
        Fate::Bounded { q_end, s_end } => *q_end > (-s_end / 2.0).sqrt(),
    }
}

/// Hastings-McLeod solution `q'' = s q + 2 q^3`, `q ~ Ai` as `s -> +inf`,
/// tabulated on a uniform descending grid.
///
/// Backward integration is unstable: any error excites a mode that either
/// blows up or drives `q` through zero. The boundary amplitude is therefore
/// refined by bisection between those two fates, starting from `k = 1`.
pub fn hastings_mcleod(s_min: f64, s_max: f64, step: f64) -> Result<PainleveSolution> {
    if !(s_max >= 6.0 && s_min <= -10.0 && step > 0.0) {
        return Err(EdgeError::invalid(format!(
            "Painleve grid needs s_max >= 6, s_min <= -10, step > 0; got [{s_min}, {s_max}] step {step}"
        )));
    }
    let intervals = ((s_max - s_min) / step).round() as usize;
    if ((s_max - s_min) / step - intervals as f64).abs() > 1e-6 {
        return Err(EdgeError::invalid("step must divide s_max - s_min"));
    }
    let nodes = intervals + 1;
    let probe = (PROBE_MARGIN / step).round() as usize;

    let first = shoot(1.0, s_max, step, nodes, probe, None)?;
    let (mut lo, mut hi) = if is_high(&first) { (1.0 - 1e-6, 1.0) } else { (1.0, 1.0 + 1e-6) };
    let mut widen = 0;
    while is_high(&shoot(lo, s_max, step, nodes, probe, None)?) {
        lo = 1.0 - 2.0 * (1.0 - lo);
        widen += 1;
        if widen > 20 {
            return Err(EdgeError::convergence("Painleve shooting", "no trajectory below separatrix"));
        }
    }
    while !is_high(&shoot(hi, s_max, step, nodes, probe, None)?) {
        hi = 1.0 + 2.0 * (hi - 1.0);
        widen += 1;
        if widen > 40 {
            return Err(EdgeError::convergence("Painleve shooting", "no trajectory above separatrix"));
        }
    }
    for _ in 0..SHOOTING_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if is_high(&shoot(mid, s_max, step, nodes, probe, None)?) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let amplitude = 0.5 * (lo + hi);
    let mut q = Vec::with_capacity(nodes);
    let mut qp = Vec::with_capacity(nodes);
    let fate = shoot(amplitude, s_max, step, nodes, 0, Some((&mut q, &mut qp)))?;
    if q.len() != nodes || matches!(fate, Fate::BlowUp | Fate::SignChange) {
        return Err(EdgeError::convergence(
            "Painleve integration",
            format!("trajectory left the separatrix inside the grid ({fate:?})"),
        ));
    }
    let grid = (0..nodes).map(|j| s_max - j as f64 * step).collect();
    Ok(PainleveSolution {
        grid,
        q,
        qprime: qp,
        amplitude,
    })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `integral_{a}^{a + 24} f` by 8 Gauss-Legendre panels; enough for the
/// super-exponentially decaying Airy tails used here.
fn tail_integral(a: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_legendre(20);
    let mut total = 0.0;
    for p in 0..8 {
        let (l, r) = (a + 3.0 * p as f64, a + 3.0 * (p + 1) as f64);
        for (xi, wi) in x.iter().zip(&w) {
            total += 0.5 * (r - l) * wi * f(0.5 * (r - l) * xi + 0.5 * (r + l));
        }
    }
    total
}

/// Cumulative integrals from each node to the right end of an ascending
/// uniform grid. Adjacent interval pairs reproduce composite Simpson exactly.
fn cumulative_right(h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    for k in (0..n - 1).rev() {
        let piece = if k + 2 < n {
            h / 12.0 * (5.0 * f[k] + 8.0 * f[k + 1] - f[k + 2])
        } else if k >= 1 {
            h / 12.0 * (-f[k - 1] + 8.0 * f[k] + 5.0 * f[k + 1])
        } else {
            0.5 * h * (f[k] + f[k + 1])
        };
        out[k] = out[k + 1] + piece;
    }
    out
}

/// Log-CDFs and their derivatives on the ascending solution grid.
#[derive(Debug, Clone)]
pub struct TwDistribution {
    s: Vec<f64>,
    step: f64,
    log_f: [Vec<f64>; 2],
    dlog_f: [Vec<f64>; 2],
}

impl TwDistribution {
    pub fn new(sol: &PainleveSolution) -> Self {
        let s: Vec<f64> = sol.grid.iter().rev().copied().collect();
        let q: Vec<f64> = sol.q.iter().rev().copied().collect();
        let n = s.len();
        let step = s[1] - s[0];
        let s_max = s[n - 1];
        let k = sol.amplitude;
        let q2: Vec<f64> = q.iter().map(|v| v * v).collect();
        let xq2: Vec<f64> = q2.iter().zip(&s).map(|(v, x)| v * x).collect();
        let tail_q = k * tail_integral(s_max, |x| airy_ai(x).0);
        let tail_q2 = k * k * tail_integral(s_max, |x| airy_ai(x).0.powi(2));
        let tail_xq2 = k * k * tail_integral(s_max, |x| x * airy_ai(x).0.powi(2));
        let iq = cumulative_right(step, &q);
        let iq2 = cumulative_right(step, &q2);
        let ixq2 = cumulative_right(step, &xq2);
        let mut log_f2 = Vec::with_capacity(n);
        let mut log_f1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        let mut d1 = Vec::with_capacity(n);
        for j in 0..n {
            let i0 = iq[j] + tail_q;
            let i2 = iq2[j] + tail_q2;
            let i3 = ixq2[j] + tail_xq2;
            let lf2 = -(i3 - s[j] * i2);
            log_f2.push(lf2);
            log_f1.push(-0.5 * i0 + 0.5 * lf2);
            d2.push(i2);
            d1.push(0.5 * q[j] + 0.5 * i2);
        }
        TwDistribution {
            s,
            step,
            log_f: [log_f1, log_f2],
            dlog_f: [d1, d2],
        }
    }

    pub fn range(&self) -> (f64, f64) {
        (self.s[0], self.s[self.s.len() - 1])
    }

    /// CDF at any `s` inside the grid: cubic Hermite interpolation of `log F`.
    pub fn cdf(&self, beta: u8, s: f64) -> Result<f64> {
        let b = match beta {
            1 => 0,
            2 => 1,
            _ => return Err(EdgeError::invalid(format!("beta must be 1 or 2, got {beta}"))),
        };
        let (lo, hi) = self.range();
        if !(s >= lo && s <= hi) {
            return Err(EdgeError::invalid(format!(
                "s={s} outside tabulated range [{lo}, {hi}]; extrapolation refused"
            )));
        }
        let n = self.s.len();
        let j = (((s - lo) / self.step).floor() as usize).min(n - 2);
        let t = (s - self.s[j]) / self.step;
        let h = self.step;
        let (y0, y1) = (self.log_f[b][j], self.log_f[b][j + 1]);
        let (m0, m1) = (self.dlog_f[b][j], self.dlog_f[b][j + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * m1;
        Ok(v.exp())
    }
}

pub fn tw_cdf(beta: u8, s: f64, sol: &PainleveSolution) -> Result<f64> {
    TwDistribution::new(sol).cdf(beta, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwGrid {
    pub s_min: f64,
    pub s_max: f64,
    pub step: f64,
}

impl Default for TwGrid {
    fn default() -> Self {
        TwGrid {
            s_min: -10.0,
            s_max: 6.0,
            step: 0.01,
        }
    }
}

impl TwGrid {
    pub fn cache_key(&self) -> String {
        let spec = format!("tw-v1:{:e}:{:e}:{:e}", self.s_min, self.s_max, self.step);
        let digest = Sha256::digest(spec.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cache_file_name(&self) -> String {
        format!("tw_table_{}.csv", self.cache_key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwTable {
    pub grid: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

pub fn tw_table(spec: &TwGrid) -> Result<TwTable> {
    let sol = hastings_mcleod(spec.s_min, spec.s_max, spec.step)?;
    let dist = TwDistribution::new(&sol);
    let n = dist.s.len();
    let mut table = TwTable {
        grid: dist.s.clone(),
        f1: Vec::with_capacity(n),
        f2: Vec::with_capacity(n),
    };
    for j in 0..n {
        table.f1.push(dist.log_f[0][j].exp());
        table.f2.push(dist.log_f[1][j].exp());
    }
    Ok(table)
}

impl TwTable {
    fn column(&self, beta: u8) -> Result<&[f64]> {
        match beta {
            1 => Ok(&self.f1),
            2 => Ok(&self.f2),
            _ => Err(EdgeError::invalid(format!("beta must be 1 or 2, got {beta}"))),
        }
    }

    /// Linear interpolation inside the grid, 0 below and 1 above it.
    pub fn cdf(&self, beta: u8, s: f64) -> Result<f64> {
        let col = self.column(beta)?;
        let n = self.grid.len();
        if s <= self.grid[0] {
            return Ok(if s == self.grid[0] { col[0] } else { 0.0 });
        }
        if s >= self.grid[n - 1] {
            return Ok(if s == self.grid[n - 1] { col[n - 1] } else { 1.0 });
        }
        let j = self.grid.partition_point(|&x| x <= s) - 1;
        let t = (s - self.grid[j]) / (self.grid[j + 1] - self.grid[j]);
        Ok(col[j] + t * (col[j + 1] - col[j]))
    }

    /// Inverse of the interpolated CDF for `p` strictly inside the tabulated range.
    pub fn quantile(&self, beta: u8, p: f64) -> Result<f64> {
        let col = self.column(beta)?;
        let n = self.grid.len();
        if !(p > col[0] && p < col[n - 1]) {
            return Err(EdgeError::invalid(format!("probability {p} outside tabulated range")));
        }
        let j = col.partition_point(|&x| x < p);
        let (a, b) = (col[j - 1], col[j]);
        let t = if b > a { (p - a) / (b - a) } else { 0.0 };
        Ok(self.grid[j - 1] + t * (self.grid[j] - self.grid[j - 1]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,F1,F2\n");
        for j in 0..self.grid.len() {
            out.push_str(&format!("{:e},{:e},{:e}\n", self.grid[j], self.f1[j], self.f2[j]));
        }
        out
    }

    pub fn from_csv(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("s,F1,F2") {
            return Err(EdgeError::format(origin, "expected header s,F1,F2"));
        }
        let mut table = TwTable {
            grid: Vec::new(),
            f1: Vec::new(),
            f2: Vec::new(),
        };
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| EdgeError::format(origin, format!("row {}: bad number", i + 2)))?;
            if vals.len() != 3 {
                return Err(EdgeError::format(origin, format!("row {}: expected 3 columns", i + 2)));
            }
            table.grid.push(vals[0]);
            table.f1.push(vals[1]);
            table.f2.push(vals[2]);
        }
        if table.grid.len() < 2 {
            return Err(EdgeError::format(origin, "table has fewer than two rows"));
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| EdgeError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EdgeError::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

/// Directory named by `EDGEKIT_CACHE`, if set.
pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Loads the table for `spec` from `dir` or builds and stores it there.
/// Returns the table and the cache path it lives at.
pub fn cached_tw_table(spec: &TwGrid, dir: Option<&Path>) -> Result<(TwTable, Option<PathBuf>)> {
    let Some(dir) = dir else {
        return Ok((tw_table(spec)?, None));
    };
    let path = dir.join(spec.cache_file_name());
    if path.exists() {
        match TwTable::read(&path) {
            Ok(t) => return Ok((t, Some(path))),
            Err(e) => log::warn!("ignoring unreadable cached table {}: {e}", path.display()),
        }
    }
    let table = tw_table(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| EdgeError::io(dir, e))?;
    table.write(&path)?;
    Ok((table, Some(path)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((s - 2.0 / 13.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn cumulative_right_integrates_quadratics_exactly() {
        let h = 0.1;
        let f: Vec<f64> = (0..11).map(|i| (i as f64 * h).powi(2)).collect();
        let c = cumulative_right(h, &f);
        for k in 0..11 {
            let x = k as f64 * h;
            assert!((c[k] - (1.0 - x.powi(3)) / 3.0).abs() < 1e-14, "k={k}");
        }
        let g: Vec<f64> = (0..11).map(|i| (i as f64 * h).powi(3)).collect();
        assert!((cumulative_right(h, &g)[0] - 0.25).abs() < 1e-3);
    }

    #[test]
    fn bad_grid_is_rejected() {
        assert!(hastings_mcleod(-5.0, 6.0, 0.01).is_err());
        assert!(hastings_mcleod(-10.0, 5.0, 0.01).is_err());
        assert!(tw_cdf(3, 0.0, &hastings_mcleod(-10.0, 6.0, 0.05).unwrap()).is_err());
    }
}
