//! Dense helpers on `faer` matrices.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64 as c64;

use crate::error::{Error, Result};

/// Largest absolute column sum.
pub(crate) fn norm_one(m: &Mat<c64>) -> f64 {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖m‖₂`, the largest singular value.
pub(crate) fn norm_two(m: &Mat<c64>) -> Result<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    let s = m.singular_values().map_err(|_| Error::Svd {
        rows: m.nrows(),
        cols: m.ncols(),
    })?;
    Ok(s[0])
}

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// `θ_13`: the degree-13 diagonal Padé approximant is accurate to unit
/// roundoff for `‖A‖₁ ≤ θ_13`.
const THETA13: f64 = 5.371920351148152;

fn combine(terms: &[(f64, &Mat<c64>)], identity: f64, n: usize) -> Mat<c64> {
    Mat::from_fn(n, n, |i, j| {
        let mut v = if i == j { c64::new(identity, 0.0) } else { c64::new(0.0, 0.0) };
        for (c, m) in terms {
            v += m[(i, j)] * *c;
        }
        v
    })
}

/// Matrix exponential by scaling and squaring with the `[13/13]` Padé
/// approximant.
pub(crate) fn expm(a: &Mat<c64>) -> Result<Mat<c64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!("expm of a {}x{} matrix", n, a.ncols())));
    }
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let norm = norm_one(a);
    if !norm.is_finite() {
        return Err(crate::error::invalid("matrix", "non-finite entries"));
    }
    let s = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
    let scale = c64::new(2f64.powi(-s), 0.0);
    let a = Mat::from_fn(n, n, |i, j| a[(i, j)] * scale);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let inner_u = combine(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)], 0.0, n);
    let tail_u = combine(&[(b[7], &a6), (b[5], &a4), (b[3], &a2)], b[1], n);
    let u = &a * &(&(&a6 * &inner_u) + &tail_u);
    let inner_v = combine(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)], 0.0, n);
    let tail_v = combine(&[(b[6], &a6), (b[4], &a4), (b[2], &a2)], b[0], n);
    let v = &(&a6 * &inner_v) + &tail_v;
    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom.partial_piv_lu().solve(&numer);
    for _ in 0..s {
        r = &r * &r;
    }
    if r.as_ref().col_iter().any(|c| c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
        return Err(crate::error::invalid("matrix", "exponential overflowed"));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn to_faer(m: &DMatrix<c64>) -> Mat<c64> {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    #[test]
    fn diagonal_and_nilpotent() {
        let d = Mat::from_fn(3, 3, |i, j| if i == j { c64::new(i as f64 - 1.0, 2.0 * i as f64) } else { c64::new(0.0, 0.0) });
        let e = expm(&d).unwrap();
        for i in 0..3 {
            let want = d[(i, i)].exp();
            assert!((e[(i, i)] - want).norm() < 1e-14 * want.norm());
        }
        // exp([[0, 1], [0, 0]]) = [[1, 1], [0, 1]]
        let mut n = Mat::<c64>::zeros(2, 2);
        n[(0, 1)] = c64::new(1.0, 0.0);
        let e = expm(&n).unwrap();
        assert!((e[(0, 0)] - 1.0).norm() + (e[(0, 1)] - 1.0).norm() + e[(1, 0)].norm() + (e[(1, 1)] - 1.0).norm() < 1e-15);
    }

    #[test]
    fn rotation_generator() {
        let t = 7.3;
        let mut m = Mat::<c64>::zeros(2, 2);
        m[(0, 1)] = c64::new(t, 0.0);
        m[(1, 0)] = c64::new(-t, 0.0);
        let e = expm(&m).unwrap();
        assert!((e[(0, 0)].re - t.cos()).abs() < 1e-13);
        assert!((e[(0, 1)].re - t.sin()).abs() < 1e-13);
    }

    #[test]
    fn agrees_with_taylor_oracle_and_inverts() {
        let m = DMatrix::from_fn(6, 6, |i, j| c64::new(((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6, ((i + 2 * j) % 3) as f64 * 0.2));
        // truncated Taylor series with 200 terms on the halved matrix, squared once
        let half = &m * c64::new(0.5, 0.0);
        let mut term = DMatrix::<c64>::identity(6, 6);
        let mut sum = term.clone();
        for k in 1..200 {
            term = &term * &half / c64::new(k as f64, 0.0);
            sum += &term;
        }
        let oracle = &sum * &sum;
        let e = expm(&to_faer(&m)).unwrap();
        let e_neg = expm(&to_faer(&(-&m))).unwrap();
        let mut diff = 0.0f64;
        for i in 0..6 {
            for j in 0..6 {
                diff = diff.max((e[(i, j)] - oracle[(i, j)]).norm());
            }
        }
        assert!(diff < 1e-10 * oracle.norm(), "{diff}");
        let id = &e * &e_neg;
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn norms() {
        let m = Mat::from_fn(2, 2, |i, j| c64::new(if i == j { 3.0 } else { 0.0 }, if i == 0 && j == 1 { 4.0 } else { 0.0 }));
        assert_eq!(norm_one(&m), 7.0);
        // [[3, 4i], [0, 3]]: M†M has eigenvalues 17 ± √208, so σ_max = 2 + √13
        assert!((norm_two(&m).unwrap() - (2.0 + 13f64.sqrt())).abs() < 1e-12);
    }
}
