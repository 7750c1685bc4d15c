//! Slow, direct reference computations for the edgekit test suites. Nothing
//! here shares code with the library under test.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

/// `(Ai(x), Ai'(x))` from `Ai(x) = (2 pi)^{-1} int exp(i (w^3/3 + x w)) dt`
/// along `w = t + i c`, where the integrand is a Gaussian in `t` and the
/// trapezoid rule converges geometrically.
pub fn airy_contour(x: f64) -> (f64, f64) {
    let c = x.max(0.0).sqrt().max(1.0);
    let width = (40.0 / c).sqrt();
    let steps = 4000;
    let h = 2.0 * width / steps as f64;
    let i = Complex64::i();
    let (mut a, mut da) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for k in 0..=steps {
        let w = Complex64::new(-width + k as f64 * h, c);
        let e = (i * (w * w * w / 3.0 + x * w)).exp();
        a += e;
        da += i * w * e;
    }
    (a.re * h / (2.0 * PI), da.re * h / (2.0 * PI))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton on `P_n`.
pub fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for k in 0..n {
        let mut t = (PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * t * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let step = p1 / dp;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        x[k] = t;
        w[k] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

/// `F_2(s) = det(I - K_Ai)` on `L^2(s, s + 16)`, Nystrom with `nodes` points.
pub fn fredholm_f2(s: f64, nodes: usize) -> f64 {
    let (x, w) = legendre_rule(nodes);
    let (a, b) = (s, s + 16.0);
    let xs: Vec<f64> = x.iter().map(|t| 0.5 * (b - a) * t + 0.5 * (a + b)).collect();
    let sw: Vec<f64> = w.iter().map(|t| (0.5 * (b - a) * t).sqrt()).collect();
    let ai: Vec<(f64, f64)> = xs.iter().map(|&v| airy_contour(v)).collect();
    let m = DMatrix::from_fn(nodes, nodes, |i, j| {
        let k = if i == j {
            ai[i].1 * ai[i].1 - xs[i] * ai[i].0 * ai[i].0
        } else {
            (ai[i].0 * ai[j].1 - ai[i].1 * ai[j].0) / (xs[i] - xs[j])
        };
        f64::from(u8::from(i == j)) - sw[i] * k * sw[j]
    });
    m.lu().determinant()
}

/// `[X22, X32, X33, X42, X43, X44, X44']` at row `i` of `g` by explicit loops.
pub fn loop_observables(g: &DMatrix<Complex64>, i: usize, tau: f64) -> [Complex64; 7] {
    let n = g.nrows();
    let nf = n as f64;
    let zero = Complex64::new(0.0, 0.0);
    let m = (0..n).map(|k| g[(k, k)]).sum::<Complex64>() / nf;
    let (mut x22, mut x33, mut x44, mut tr2) = (zero, zero, zero, zero);
    for s in 0..n {
        x22 += g[(i, s)] * g[(s, i)];
        for r in 0..n {
            x33 += g[(i, r)] * g[(r, s)] * g[(s, i)];
            for k in 0..n {
                x44 += g[(i, r)] * g[(r, s)] * g[(s, k)] * g[(k, i)];
            }
        }
    }
    for k in 0..n {
        for l in 0..n {
            tr2 += g[(k, l)] * g[(l, k)];
        }
    }
    let x22 = x22 / nf;
    let x33 = x33 / (nf * nf);
    let mut x44p = zero;
    for s in 0..n {
        x44p += g[(i, s)] * g[(s, i)] * tr2;
    }
    let sh = m + tau;
    [x22, sh * x22, x33, sh * sh * x22, sh * x33, x44 / nf.powi(3), x44p / nf.powi(3)]
}

/// Stieltjes transform of the Marchenko-Pastur law for `X^T X`, `d = N/M`,
/// as the root of `d z m^2 + (z d + d - 1) m + d = 0` with `Im m >= 0`,
/// found by brute-force iteration of `m = 1/(-z + d^{-1}/(1 + m))`.
pub fn mp_fixed_point(d: f64, z: Complex64) -> Complex64 {
    let mut m = Complex64::new(0.0, 1.0);
    for _ in 0..200_000 {
        let next = 1.0 / (-z + 1.0 / (d * (1.0 + m)));
        if (next - m).norm() < 1e-15 {
            return next;
        }
        m = 0.5 * (m + next);
    }
    m
}

/// Same transform from the quadratic formula, choosing the root with `Im m >= 0`.
pub fn mp_quadratic(d: f64, z: Complex64) -> Complex64 {
    let (a, b, c) = (d * z, z * d + d - 1.0, Complex64::new(d, 0.0));
    let disc = (b * b - 4.0 * a * c).sqrt();
    let r1 = (-b + disc) / (2.0 * a);
    let r2 = (-b - disc) / (2.0 * a);
    if r1.im >= r2.im {
        r1
    } else {
        r2
    }
}

/// Largest root of `mean((s xi/(1 - s xi))^2) = d` on `(0, 1/max s)` by bisection.
pub fn xi_bisection(sigma: &[f64], d: f64) -> f64 {
    let smax = sigma.iter().cloned().fold(f64::MIN, f64::max);
    let f = |xi: f64| sigma.iter().map(|s| (s * xi / (1.0 - s * xi)).powi(2)).sum::<f64>() / sigma.len() as f64 - d;
    let (mut lo, mut hi) = (0.0, 1.0 / smax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}
