//! Dense real symmetric eigensolver: Householder reduction to tridiagonal form
//! followed by implicit QL with Wilkinson-style shifts (the EISPACK tred2/tql2
//! pair). Storage is column-major, so eigenvector `j` is column `j`.

use nalgebra::DMatrix;

use crate::error::{EdgeError, Result};

const QL_MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

/// Householder tridiagonalization in place. `v` is `n x n` column-major and
/// holds the symmetric input; on return `d` is the diagonal, `e[1..]` the
/// subdiagonal. With `accumulate`, `v` holds the orthogonal transform.
fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64], accumulate: bool) {
    // v[k][j] in the row-major original is v[j * n + k] here.
    let at = |k: usize, j: usize| j * n + k;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                let col = &v[j * n..j * n + i];
                g = e[j] + col[j] * f;
                for k in j + 1..i {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                let col = &mut v[j * n..j * n + i];
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    if !accumulate {
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = v[at(j, j)];
        }
        e[0] = 0.0;
        return;
    }
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let (left, right) = v.split_at_mut((i + 1) * n);
                let src = &right[..=i];
                let dst = &mut left[j * n..j * n + i + 1];
                let g: f64 = src.iter().zip(dst.iter()).map(|(a, b)| a * b).sum();
                for (x, dk) in dst.iter_mut().zip(&d[..=i]) {
                    *x -= g * dk;
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal `(d, e)` with `e[1..]` the subdiagonal.
/// When `v` is given the rotations are applied to its columns.
fn tql2(n: usize, d: &mut [f64], e: &mut [f64], mut v: Option<&mut [f64]>) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > QL_MAX_SWEEPS {
                    return Err(EdgeError::convergence(
                        "tridiagonal QL",
                        format!("eigenvalue {l} not isolated after {QL_MAX_SWEEPS} sweeps"),
                    ));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..n] {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(v) = v.as_deref_mut() {
                        let (a, b) = v.split_at_mut((i + 1) * n);
                        let ci = &mut a[i * n..];
                        let ci1 = &mut b[..n];
                        for (x, y) in ci.iter_mut().zip(ci1.iter_mut()) {
                            let t = *y;
                            *y = s * *x + c * t;
                            *x = c * *x - s * t;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

fn check_input(a: &DMatrix<f64>) -> Result<usize> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(EdgeError::invalid(format!(
            "eigensolver needs a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(EdgeError::invalid("matrix has non-finite entries"));
    }
    Ok(n)
}

/// Eigenvalues of a symmetric matrix in ascending order. Only the lower
/// triangle is trusted to be meaningful if the input is slightly asymmetric.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = check_input(a)?;
    let mut v = a.as_slice().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e, false);
    tql2(n, &mut d, &mut e, None)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

pub fn sym_eigen(a: &DMatrix<f64>) -> Result<SymEigen> {
    let n = check_input(a)?;
    let mut v = a.as_slice().to_vec();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e, true);
    tql2(n, &mut d, &mut e, Some(&mut v))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors
            .column_mut(dst)
            .copy_from_slice(&v[src * n..(src + 1) * n]);
    }
    Ok(SymEigen { values, vectors })
}

/// Eigenvalues (ascending) of the symmetric tridiagonal matrix with diagonal
/// `diag` and off-diagonal `off` (`off.len() == diag.len() - 1`).
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return Err(EdgeError::invalid("tridiagonal shape mismatch"));
    }
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[1..].copy_from_slice(off);
    tql2(n, &mut d, &mut e, None)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        &a + a.transpose()
    }

    #[test]
    fn matches_independent_solver() {
        for (n, seed) in [(1, 1), (2, 2), (7, 3), (50, 4), (120, 5)] {
            let a = random_symmetric(n, seed);
            let ours = sym_eigenvalues(&a).unwrap();
            let mut reference: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
            reference.sort_by(f64::total_cmp);
            for (x, y) in ours.iter().zip(&reference) {
                assert!((x - y).abs() < 1e-11 * (1.0 + y.abs()), "n={n}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn eigenpairs_have_small_residual() {
        let a = random_symmetric(80, 9);
        let eig = sym_eigen(&a).unwrap();
        let norm = a.norm();
        for j in 0..80 {
            let v = eig.vectors.column(j);
            let r = &a * v - eig.values[j] * v;
            assert!(r.norm() <= 1e-12 * norm);
        }
        let vtv = eig.vectors.transpose() * &eig.vectors;
        assert!((vtv - DMatrix::identity(80, 80)).amax() < 1e-12);
    }

    #[test]
    fn diagonal_and_degenerate_inputs() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -1.0, 2.0, 2.0]));
        assert_eq!(sym_eigenvalues(&a).unwrap(), vec![-1.0, 2.0, 2.0, 3.0]);
        let zero = DMatrix::zeros(5, 5);
        assert_eq!(sym_eigenvalues(&zero).unwrap(), vec![0.0; 5]);
        assert!(sym_eigenvalues(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn tridiagonal_path_agrees_with_dense() {
        let diag = [1.0, -2.0, 0.5, 3.0];
        let off = [0.3, 1.1, -0.7];
        let mut dense = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&diag));
        for (i, &o) in off.iter().enumerate() {
            dense[(i, i + 1)] = o;
            dense[(i + 1, i)] = o;
        }
        let a = tridiagonal_eigenvalues(&diag, &off).unwrap();
        let b = sym_eigenvalues(&dense).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-13);
        }
    }
}
