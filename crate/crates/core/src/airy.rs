//! Airy function Ai and its derivative on the real line.
//!
//! Maclaurin series near the origin and the standard asymptotic expansions
//! further out. On the positive axis the series loses digits to cancellation
//! (the result is `exp(-4/3 x^{3/2})` times smaller than its terms), so between
//! `SERIES_POS` and `ASYMPTOTIC_POS` the value is carried in from the asymptotic
//! region by Taylor steps of `y'' = x y`, which is stable in that direction.

use std::f64::consts::{FRAC_PI_4, PI};

const AI0: f64 = 0.355_028_053_887_817_239_3;
const AIP0: f64 = 0.258_819_403_792_806_798_4;
const SERIES_POS: f64 = 2.0;
const ASYMPTOTIC_POS: f64 = 10.0;
const SWITCH_NEG: f64 = 8.0;
const TAYLOR_STEP: f64 = 0.5;

/// `(Ai(x), Ai'(x))`.
pub fn airy_ai(x: f64) -> (f64, f64) {
    if x > ASYMPTOTIC_POS {
        asymptotic_pos(x)
    } else if x > SERIES_POS {
        continued_from_asymptotic(x)
    } else if x < -SWITCH_NEG {
        asymptotic_neg(-x)
    } else {
        series(x)
    }
}

pub fn ai(x: f64) -> f64 {
    airy_ai(x).0
}

fn series(x: f64) -> (f64, f64) {
    let x3 = x * x * x;
    let mut f = 1.0;
    let mut g = x;
    let mut df = 0.0;
    let mut dg = 1.0;
    let mut a = 1.0;
    let mut b = x;
    let mut c = 0.5 * x * x;
    let mut e = 1.0;
    df += c;
    for k in 1..200 {
        let kf = k as f64;
        a *= x3 / ((3.0 * kf - 1.0) * (3.0 * kf));
        b *= x3 / ((3.0 * kf) * (3.0 * kf + 1.0));
        e *= x3 / ((3.0 * kf) * (3.0 * kf - 2.0));
        f += a;
        g += b;
        dg += e;
        if k > 1 {
            c *= x3 / ((3.0 * kf - 1.0) * (3.0 * kf - 3.0));
            df += c;
        }
        let scale = f.abs() + g.abs() + 1.0;
        if a.abs() + b.abs() + c.abs() + e.abs() < 1e-18 * scale {
            break;
        }
    }
    (AI0 * f - AIP0 * g, AI0 * df - AIP0 * dg)
}

fn continued_from_asymptotic(x: f64) -> (f64, f64) {
    let (mut y, mut dy) = asymptotic_pos(ASYMPTOTIC_POS);
    let mut x0 = ASYMPTOTIC_POS;
    while x0 > x {
        let h = -(x0 - x).min(TAYLOR_STEP);
        (y, dy) = taylor_step(x0, y, dy, h);
        x0 += h;
    }
    (y, dy)
}

/// One Taylor step of `y'' = x y` from `x0`, using
/// `(n+2)(n+1) c_{n+2} = x0 c_n + c_{n-1}`.
fn taylor_step(x0: f64, y: f64, dy: f64, h: f64) -> (f64, f64) {
    let mut c = [y, dy, 0.5 * x0 * y];
    let mut val = c[0] + c[1] * h + c[2] * h * h;
    let mut der = c[1] + 2.0 * c[2] * h;
    let mut hp = h * h;
    for n in 1..80 {
        let next = (x0 * c[1] + c[0]) / ((n + 2) as f64 * (n + 1) as f64);
        c = [c[1], c[2], next];
        der += (n + 2) as f64 * next * hp;
        hp *= h;
        val += next * hp;
        if (next * hp).abs() < 1e-18 * val.abs() && n > 4 {
            break;
        }
    }
    (val, der)
}

/// Coefficients `u_k`, `v_k` of the large-argument expansions, up to the
/// point where the terms at `zeta` stop decreasing.
fn asymptotic_terms(zeta: f64) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![1.0];
    let mut v = vec![1.0];
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        let uk = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
            / ((2.0 * kf - 1.0) * 216.0 * kf);
        let vk = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * uk;
        let size = uk.abs().max(vk.abs()) / zeta.powi(k as i32);
        if size > prev || size < 1e-17 {
            break;
        }
        prev = size;
        u.push(uk);
        v.push(vk);
    }
    (u, v)
}

fn asymptotic_pos(x: f64) -> (f64, f64) {
    let zeta = 2.0 / 3.0 * x * x.sqrt();
    let (u, v) = asymptotic_terms(zeta);
    let mut su = 0.0;
    let mut sv = 0.0;
    let mut p = 1.0;
    for k in 0..u.len() {
        su += u[k] * p;
        sv += v[k] * p;
        p *= -1.0 / zeta;
    }
    let pref = (-zeta).exp() / (2.0 * PI.sqrt());
    let x4 = x.powf(0.25);
    (pref / x4 * su, -pref * x4 * sv)
}

/// Expansion of `(Ai(-x), Ai'(-x))` for large positive `x`.
fn asymptotic_neg(x: f64) -> (f64, f64) {
    let zeta = 2.0 / 3.0 * x * x.sqrt();
    let (u, v) = asymptotic_terms(zeta);
    let (mut ue, mut uo, mut ve, mut vo) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..u.len() {
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        let t = sign / zeta.powi(k as i32);
        if k % 2 == 0 {
            ue += u[k] * t;
            ve += v[k] * t;
        } else {
            uo += u[k] * t;
            vo += v[k] * t;
        }
    }
    let (s, c) = (zeta - FRAC_PI_4).sin_cos();
    let x4 = x.powf(0.25);
    let sp = PI.sqrt();
    ((c * ue + s * uo) / (x4 * sp), x4 / sp * (s * ve - c * vo))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from 30-digit arbitrary precision evaluation.
    const REFERENCE: [(f64, f64, f64); 13] = [
        (-8.0, -0.052705050356386202622, 0.93556093819830655103),
        (-5.5, 0.017781541276574975603, 0.86419721777139839077),
        (-5.0, 0.35076100902411431979, 0.32719281855444313679),
        (-4.9, 0.37453635470583874724, 0.14695742731095672695),
        (-2.0, 0.22740742820168557599, 0.61825902074169104141),
        (-0.5, 0.4757280916105395888, -0.20408167033954738614),
        (0.0, 0.35502805388781723926, -0.25881940379280679841),
        (0.5, 0.23169360648083348977, -0.22491053266468389314),
        (2.0, 0.034924130423274379135, -0.053090384433653631704),
        (4.9, 0.00013599211701506742767, -0.00030761599633764950659),
        (5.0, 0.00010834442813607441735, -0.000247413890868462476),
        (5.5, 0.000033685311908599814425, -0.00008046339130556514338),
        (8.0, 4.6922076160992316256e-8, -1.3414392979067865743e-7),
    ];

    #[test]
    fn matches_reference_values() {
        for &(x, a, ap) in &REFERENCE {
            let (ours, oursp) = airy_ai(x);
            assert!((ours - a).abs() <= 1e-10 * a.abs().max(1e-3), "Ai({x}) = {ours} vs {a}");
            assert!((oursp - ap).abs() <= 1e-10 * ap.abs().max(1e-3), "Ai'({x}) = {oursp} vs {ap}");
        }
    }

    #[test]
    fn continuous_across_switch_points() {
        let pairs = [
            (SERIES_POS, series(SERIES_POS), continued_from_asymptotic(SERIES_POS)),
            (ASYMPTOTIC_POS, continued_from_asymptotic(ASYMPTOTIC_POS - 1e-12), asymptotic_pos(ASYMPTOTIC_POS)),
            (-SWITCH_NEG, series(-SWITCH_NEG), asymptotic_neg(SWITCH_NEG)),
        ];
        for (x0, (a, ap), (b, bp)) in pairs {
            assert!((a - b).abs() < 1e-10 * a.abs().max(1e-3), "{x0}: {a} vs {b}");
            assert!((ap - bp).abs() < 1e-10 * ap.abs().max(1e-3), "{x0}: {ap} vs {bp}");
        }
    }

    #[test]
    fn wronskian_like_ode_check() {
        // Ai'' = x Ai, checked by central differences of the derivative.
        for &x in &[-9.0, -3.0, 0.7, 3.0, 7.0] {
            let h = 1e-5;
            let d2 = (airy_ai(x + h).1 - airy_ai(x - h).1) / (2.0 * h);
            assert!((d2 - x * ai(x)).abs() < 1e-7 * (1.0 + ai(x).abs()), "x={x}");
        }
    }
}
