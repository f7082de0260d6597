//! Dense eigensolvers: Francis double-shift QR for general real matrices and
//! cyclic Jacobi for symmetric ones.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

const MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "square matrix required");
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let mut converged = n <= 1;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigenNonConvergence {
            iterations: MAX_SWEEPS,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn symmetric_min(a: &DMatrix<f64>) -> Result<f64> {
    let (vals, _) = symmetric_eigen(a)?;
    Ok(vals.first().copied().unwrap_or(f64::INFINITY))
}

/// Diagonal similarity scaling by powers of two that equalizes row and
/// column norms; leaves the spectrum unchanged.
fn balance(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= g;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form.
pub fn hessenberg(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut h = a.clone();
    for k in 0..n.saturating_sub(2) {
        let alpha_norm: f64 = ((k + 1)..n)
            .map(|i| h[(i, k)] * h[(i, k)])
            .sum::<f64>()
            .sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let alpha = if h[(k + 1, k)] > 0.0 {
            -alpha_norm
        } else {
            alpha_norm
        };
        let mut v = vec![0.0; n];
        for i in (k + 1)..n {
            v[i] = h[(i, k)];
        }
        v[k + 1] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // H ← (I − 2vvᵀ/vᵀv) H (I − 2vvᵀ/vᵀv)
        for j in 0..n {
            let dot: f64 = ((k + 1)..n).map(|i| v[i] * h[(i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in (k + 1)..n {
                h[(i, j)] -= f * v[i];
            }
        }
        for i in 0..n {
            let dot: f64 = ((k + 1)..n).map(|j| h[(i, j)] * v[j]).sum();
            let f = 2.0 * dot / vnorm2;
            for j in (k + 1)..n {
                h[(i, j)] -= f * v[j];
            }
        }
        for i in (k + 2)..n {
            h[(i, k)] = 0.0;
        }
    }
    h
}

/// All eigenvalues of a real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<C64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "square matrix required");
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let mut b = a.clone();
    balance(&mut b);
    let mut h = hessenberg(&b);
    hqr(&mut h)
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (destroyed).
fn hqr(a: &mut DMatrix<f64>) -> Result<Vec<C64>> {
    const MAX_ITS: usize = 60;
    let n = a.nrows();
    let mut wr = vec![C64::new(0.0, 0.0); n];
    if n == 0 {
        return Ok(wr);
    }
    let eps = f64::EPSILON;
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let mut total_its = 0usize;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            // Look for a single small subdiagonal element.
            let mut l = nu;
            while l > 0 {
                let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[(l, l - 1)].abs() <= eps * s {
                    a[(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[(nu, nu)];
            if l == nu {
                wr[nu] = C64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = a[(nu - 1, nu - 1)];
            let mut w = a[(nu, nu - 1)] * a[(nu - 1, nu)];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    let z = p + sign(z, p);
                    wr[nu - 1] = C64::new(x + z, 0.0);
                    wr[nu] = C64::new(x + z, 0.0);
                    if z != 0.0 {
                        wr[nu] = C64::new(x - w / z, 0.0);
                    }
                } else {
                    wr[nu] = C64::new(x + p, -z);
                    wr[nu - 1] = C64::new(x + p, z);
                }
                nn -= 2;
                break;
            }
            if its == MAX_ITS {
                return Err(Error::EigenNonConvergence {
                    iterations: total_its,
                });
            }
            if its > 0 && its % 10 == 0 {
                // Exceptional shift.
                t += x;
                for i in 0..=nu {
                    a[(i, i)] -= x;
                }
                let s = a[(nu, nu - 1)].abs() + a[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            total_its += 1;
            let mut m = nu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
                q = a[(m + 1, m + 1)] - z - rr - ss;
                r = a[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m..(nu - 1) {
                a[(i + 2, i)] = 0.0;
                if i != m {
                    a[(i + 2, i - 1)] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[(k, k - 1)];
                    q = a[(k + 1, k - 1)];
                    r = 0.0;
                    if k + 1 != nu {
                        r = a[(k + 2, k - 1)];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[(k, k - 1)] = -a[(k, k - 1)];
                        }
                    } else {
                        a[(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                        if k + 1 != nu {
                            pp += r * a[(k + 2, j)];
                            a[(k + 2, j)] -= pp * z;
                        }
                        a[(k + 1, j)] -= pp * y;
                        a[(k, j)] -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                        if k + 1 != nu {
                            pp += z * a[(i, k + 2)];
                            a[(i, k + 2)] -= pp * r;
                        }
                        a[(i, k + 1)] -= pp * q;
                        a[(i, k)] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr)
}

/// Eigenvector for an eigenvalue estimate by inverse iteration, unit 2-norm.
pub fn eigenvector(a: &DMatrix<f64>, lambda: C64) -> DVector<C64> {
    let n = a.nrows();
    let scale = a.norm().max(1.0);
    let shift = lambda + C64::new(1.0, 1.0) * (1e-13 * scale);
    let m = DMatrix::from_fn(n, n, |i, j| {
        let d = if i == j { shift } else { C64::new(0.0, 0.0) };
        C64::new(a[(i, j)], 0.0) - d
    });
    let lu = m.lu();
    let mut v = DVector::from_fn(n, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64));
    for _ in 0..3 {
        match lu.solve(&v) {
            Some(x) => {
                let nrm = x.norm();
                if !(nrm.is_finite() && nrm > 0.0) {
                    break;
                }
                v = x.unscale(nrm);
            }
            None => break,
        }
    }
    let nrm = v.norm();
    v.unscale(nrm)
}

/// `‖Av − λv‖₂` for a unit eigenvector from inverse iteration.
pub fn residual(a: &DMatrix<f64>, lambda: C64) -> f64 {
    let v = eigenvector(a, lambda);
    let ac = a.map(|x| C64::new(x, 0.0));
    (ac * &v - v.scale(1.0) * lambda).norm()
}

/// Largest residual relative to the Frobenius norm of `a`.
pub fn max_relative_residual(a: &DMatrix<f64>, values: &[C64]) -> f64 {
    let scale = a.norm().max(f64::MIN_POSITIVE);
    values
        .iter()
        .map(|&l| residual(a, l) / scale)
        .fold(0.0, f64::max)
}

/// Order by real part descending, then imaginary part descending.
pub fn sort_descending(values: &mut [C64]) {
    values.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// Bottleneck distance between two multisets of equal size: the smallest
/// achievable maximum pairwise distance over all matchings.
pub fn multiset_distance(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len(), "multisets differ in size");
    let n = a.len();
    let d: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| (x - y).norm()).collect())
        .collect();
    let mut cands: Vec<f64> = d.iter().flatten().copied().collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    // Smallest threshold admitting a perfect matching.
    let feasible = |thr: f64| -> bool {
        let mut match_b: Vec<Option<usize>> = vec![None; n];
        fn augment(
            i: usize,
            thr: f64,
            d: &[Vec<f64>],
            seen: &mut [bool],
            match_b: &mut [Option<usize>],
        ) -> bool {
            for j in 0..d.len() {
                if d[i][j] <= thr && !seen[j] {
                    seen[j] = true;
                    if match_b[j].is_none_or(|k| augment(k, thr, d, seen, match_b)) {
                        match_b[j] = Some(i);
                        return true;
                    }
                }
            }
            false
        }
        (0..n).all(|i| {
            let mut seen = vec![false; n];
            augment(i, thr, &d, &mut seen, &mut match_b)
        })
    };
    let (mut lo, mut hi) = (0usize, cands.len().saturating_sub(1));
    if n == 0 {
        return 0.0;
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(cands[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    cands[lo]
}

/// Pair each element of `from` with a distinct element of `to`, taking the
/// globally closest remaining pair first. Returns indices into `to`.
pub fn nearest_assignment(from: &[C64], to: &[C64]) -> Vec<usize> {
    assert_eq!(from.len(), to.len(), "multisets differ in size");
    let mut pairs: Vec<(f64, usize, usize)> = from
        .iter()
        .enumerate()
        .flat_map(|(i, x)| {
            to.iter()
                .enumerate()
                .map(move |(j, y)| ((x - y).norm(), i, j))
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![usize::MAX; from.len()];
    let mut used = vec![false; to.len()];
    for (_, i, j) in pairs {
        if out[i] == usize::MAX && !used[j] {
            out[i] = j;
            used[j] = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn rotation_block() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let mut ev = eigenvalues(&a).unwrap();
        sort_descending(&mut ev);
        assert!(multiset_distance(&ev, &[c(0.0, 1.0), c(0.0, -1.0)]) < 1e-14);
    }

    #[test]
    fn companion_matrix_roots() {
        // (s−1)(s−2)(s+3)(s²+2s+5) = s⁵ + 2s⁴ − 2s³ − 8s² − 23s + 30
        let coeffs = [2.0, -2.0, -8.0, -23.0, 30.0];
        let n = 5;
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == 0 {
                -coeffs[j]
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        let ev = eigenvalues(&a).unwrap();
        let want = [
            c(1.0, 0.0),
            c(2.0, 0.0),
            c(-3.0, 0.0),
            c(-1.0, 2.0),
            c(-1.0, -2.0),
        ];
        assert!(multiset_distance(&ev, &want) < 1e-10);
        assert!(max_relative_residual(&a, &ev) < 1e-8);
    }

    #[test]
    fn triangular_and_defective() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 2.0, 1.0, 0.0, 0.0, -1.0]);
        let ev = eigenvalues(&a).unwrap();
        assert!(multiset_distance(&ev, &[c(2.0, 0.0), c(2.0, 0.0), c(-1.0, 0.0)]) < 1e-7);
        assert!(eigenvalues(&DMatrix::zeros(0, 0)).unwrap().is_empty());
        let one = DMatrix::from_element(1, 1, -4.5);
        assert_eq!(eigenvalues(&one).unwrap(), vec![c(-4.5, 0.0)]);
    }

    #[test]
    fn jacobi_known_spectrum() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        let r2 = 2f64.sqrt();
        for (v, w) in vals.iter().zip([2.0 - r2, 2.0, 2.0 + r2]) {
            assert!((v - w).abs() < 1e-14);
        }
        let recon =
            &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals.clone())) * vecs.transpose();
        assert!((recon - a).norm() < 1e-13);
    }

    #[test]
    fn bottleneck_matching() {
        let a = [c(0.0, 0.0), c(1.0, 0.0)];
        let b = [c(1.0, 1e-9), c(0.0, 0.0)];
        assert!(multiset_distance(&a, &b) <= 1e-9);
        let b = [c(0.0, 0.0), c(0.0, 0.0)];
        assert!((multiset_distance(&a, &b) - 1.0).abs() < 1e-15);
    }

    fn random_matrix(vals: &[f64], n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| vals[i * n + j])
    }

    proptest! {
        #[test]
        fn qr_agrees_with_library_and_residuals_small(
            vals in proptest::collection::vec(-10.0f64..10.0, 36),
            n in 1usize..=6,
        ) {
            let a = random_matrix(&vals, n);
            let ev = eigenvalues(&a).unwrap();
            let lib: Vec<C64> = a.complex_eigenvalues().iter().copied().collect();
            let scale = a.norm().max(1.0);
            prop_assert!(multiset_distance(&ev, &lib) < 1e-6 * scale);
            prop_assert!(max_relative_residual(&a, &ev) < 1e-8);
            let tr: f64 = ev.iter().map(|z| z.re).sum();
            prop_assert!((tr - a.trace()).abs() < 1e-9 * scale);
        }

        #[test]
        fn jacobi_agrees_with_library(
            vals in proptest::collection::vec(-10.0f64..10.0, 36),
            n in 1usize..=6,
        ) {
            let a = random_matrix(&vals, n);
            let s = &a + a.transpose();
            let (mine, vecs) = symmetric_eigen(&s).unwrap();
            let mut lib: Vec<f64> = s.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            lib.sort_by(f64::total_cmp);
            for (x, y) in mine.iter().zip(&lib) {
                prop_assert!((x - y).abs() < 1e-10 * s.norm().max(1.0));
            }
            for k in 0..n {
                let v = vecs.column(k);
                let r = (&s * v - v * mine[k]).norm();
                prop_assert!(r < 1e-10 * s.norm().max(1.0));
            }
        }
    }
}
