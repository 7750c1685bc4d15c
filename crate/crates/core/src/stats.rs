//! Small statistical helpers: Kolmogorov-Smirnov distances, medians and
//! bootstrap standard errors.

use rand::Rng;

use crate::error::{EdgeError, Result};
use crate::rng::{replicate_rng, DOMAIN_BOOTSTRAP};

pub const MIN_KS_SAMPLES: usize = 20;

/// One-sample KS distance of sorted `samples` against `cdf`.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(EdgeError::invalid(format!(
            "KS needs at least {MIN_KS_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(EdgeError::invalid("KS samples must be sorted ascending"));
    }
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Two-sample KS distance; inputs need not be sorted.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn std_err(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Bootstrap standard error of `stat` over `resamples` resamples with replacement.
pub fn bootstrap_se(xs: &[f64], stat: impl Fn(&[f64]) -> f64, resamples: usize, seed: u64) -> f64 {
    let mut rng = replicate_rng(seed, DOMAIN_BOOTSTRAP, 0);
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let values: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.random_range(0..n)];
            }
            stat(&buf)
        })
        .collect();
    let m = mean(&values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (resamples as f64 - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_uniform_grid() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let d = ks_one_sample(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!((d - 0.005).abs() < 1e-12);
    }

    #[test]
    fn ks_rejects_bad_input() {
        assert!(ks_one_sample(&[0.1; 5], |x| x).is_err());
        let mut xs: Vec<f64> = (0..30).map(|i| i as f64).collect();
        xs.swap(3, 4);
        assert!(ks_one_sample(&xs, |x| x).is_err());
    }

    #[test]
    fn two_sample_extremes() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(ks_two_sample(&a, &[4.0, 5.0]), 1.0);
        assert!((ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
