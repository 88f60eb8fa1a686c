//! Symmetric eigendecomposition, PSD square roots and Fréchet distance.
//! Matrices are dense row-major `n × n` slices of `f64`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigenvalues below `-NEG_EIG_TOL · max(1, max |λ|)` are an error; the
/// rest are clamped to zero.
pub const NEG_EIG_TOL: f64 = 1e-10;
/// Allowed `|a_ij − a_ji|` relative to `max(1, max |a|)`.
pub const SYMMETRY_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100;

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

fn check_square(a: &[f64], n: usize) -> Result<()> {
    if n == 0 || a.len() != n * n {
        return Err(Error::MatrixSqrt(format!(
            "expected {n}×{n} matrix, got {} values",
            a.len()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entry".into()));
    }
    Ok(())
}

fn check_symmetric(a: &[f64], n: usize) -> Result<()> {
    let tol = SYMMETRY_TOL * max_abs(a).max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = (a[i * n + j] - a[j * n + i]).abs();
            if d > tol {
                return Err(Error::MatrixSqrt(format!("asymmetry {d:e} at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// `(a + aᵀ) / 2`
pub fn symmetrize(a: &[f64], n: usize) -> Vec<f64> {
    let mut out = a.to_vec();
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            out[i * n + j] = m;
            out[j * n + i] = m;
        }
    }
    out
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns the
/// eigenvalues and the row-major matrix whose columns are the eigenvectors.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_square(a, n)?;
    check_symmetric(a, n)?;
    let mut a = symmetrize(a, n);
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum();
    let target = (f64::EPSILON * f64::EPSILON) * total;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let tau = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * kp - s * kq;
                    a[k * n + q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * pk - s * qk;
                    a[q * n + k] = s * pk + c * qk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let (kp, kq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * kp - s * kq;
                    v[k * n + q] = s * kp + c * kq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::MatrixSqrt(format!(
            "Jacobi iteration did not converge in {MAX_SWEEPS} sweeps"
        )));
    }
    Ok(((0..n).map(|i| a[i * n + i]).collect(), v))
}

fn clamp_eigenvalues(lambda: &mut [f64]) -> Result<()> {
    let floor = -NEG_EIG_TOL * max_abs(lambda).max(1.0);
    for l in lambda.iter_mut() {
        if *l < floor {
            return Err(Error::MatrixSqrt(format!("negative eigenvalue {l:e}")));
        }
        *l = l.max(0.0);
    }
    Ok(())
}

/// Symmetric `S` with `S·S = a` for symmetric positive semidefinite `a`.
pub fn matrix_sqrt_psd(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let (mut lambda, v) = symmetric_eigen(a, n)?;
    clamp_eigenvalues(&mut lambda)?;
    let roots: Vec<f64> = lambda.iter().map(|l| l.sqrt()).collect();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let x: f64 = (0..n).map(|k| v[i * n + k] * roots[k] * v[j * n + k]).sum();
            s[i * n + j] = x;
            s[j * n + i] = x;
        }
    }
    Ok(s)
}

pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    let s = n as isize;
    f64::gemm(n, n, n, a, (s, 1), b, (s, 1), &mut c);
    c
}

/// Mean and unbiased covariance of a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Statistics of `rows` row-major samples of width `dim`.
    pub fn from_rows(data: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        let n = data.len() / dim;
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "covariance needs at least 2 samples, got {n}"
            )));
        }
        let mut mean = vec![0.0; dim];
        for row in data.chunks(dim) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let centered: Vec<f64> = data
            .chunks(dim)
            .flat_map(|row| row.iter().zip(&mean).map(|(x, m)| x - m))
            .collect();
        let mut cov = vec![0.0; dim * dim];
        let d = dim as isize;
        f64::gemm(dim, n, dim, &centered, (1, d), &centered, (d, 1), &mut cov);
        for c in &mut cov {
            *c /= (n - 1) as f64;
        }
        let cov = symmetrize(&cov, dim);
        Ok(Self {
            mean,
            cov,
            count: n,
        })
    }
}

/// `‖μa − μb‖² + Tr Σa + Tr Σb − 2 Tr (√Σa Σb √Σa)^{1/2}`, clamped at 0.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::FeatureMismatch {
            what: "frechet_distance",
            expected: n,
            got: b.dim(),
        });
    }
    if a.mean == b.mean && a.cov == b.cov {
        return Ok(0.0);
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let trace = |m: &[f64]| (0..n).map(|i| m[i * n + i]).sum::<f64>();
    let root_a = matrix_sqrt_psd(&a.cov, n)?;
    let inner = matmul(&matmul(&root_a, &b.cov, n), &root_a, n);
    let (mut lambda, _) = symmetric_eigen(&symmetrize(&inner, n), n)?;
    clamp_eigenvalues(&mut lambda)?;
    let tr_cross: f64 = lambda.iter().map(|l| l.sqrt()).sum();
    let fd = mean_term + trace(&a.cov) + trace(&b.cov) - 2.0 * tr_cross;
    if !fd.is_finite() {
        return Err(Error::Numerical("non-finite Fréchet distance".into()));
    }
    Ok(fd.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
        GaussianStats {
            mean,
            cov,
            count: 2,
        }
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn sqrt_examples() {
        assert_eq!(
            matrix_sqrt_psd(&[1.0, 0.0, 0.0, 1.0], 2).unwrap(),
            vec![1.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(
            matrix_sqrt_psd(&[4.0, 0.0, 0.0, 9.0], 2).unwrap(),
            vec![2.0, 0.0, 0.0, 3.0]
        );
        let a = [2.0, 1.0, 1.0, 2.0];
        let s = matrix_sqrt_psd(&a, 2).unwrap();
        assert!(max_diff(&matmul(&s, &s, 2), &a) < 1e-8);
        let (mut l, _) = symmetric_eigen(&a, 2).unwrap();
        l.sort_by(f64::total_cmp);
        assert!(max_diff(&l, &[1.0, 3.0]) < 1e-12);
    }

    #[test]
    fn sqrt_errors() {
        assert!(matches!(
            matrix_sqrt_psd(&[1.0, 0.5, 0.0, 1.0], 2),
            Err(Error::MatrixSqrt(_))
        ));
        assert!(matches!(
            matrix_sqrt_psd(&[-1.0, 0.0, 0.0, 1.0], 2),
            Err(Error::MatrixSqrt(_))
        ));
        assert_eq!(
            matrix_sqrt_psd(&[-1e-14, 0.0, 0.0, 1.0], 2).unwrap()[0],
            0.0
        );
    }

    #[test]
    fn frechet_closed_forms() {
        let a = stats(vec![0.0], vec![1.0]);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        let b = stats(vec![1.0], vec![1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let i2 = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        let i4 = stats(vec![0.0, 0.0], vec![4.0, 0.0, 0.0, 4.0]);
        assert!((frechet_distance(&i2, &i4).unwrap() - 2.0).abs() < 1e-12);
        assert!(frechet_distance(&a, &i2).is_err());
    }

    #[test]
    fn unbiased_covariance() {
        let s = GaussianStats::from_rows(&[1.0, 2.0, 3.0, 6.0], 2).unwrap();
        assert_eq!(s.mean, vec![2.0, 4.0]);
        assert_eq!(s.cov, vec![2.0, 4.0, 4.0, 8.0]);
        assert!(GaussianStats::from_rows(&[1.0, 2.0], 2).is_err());
    }

    fn psd(n: usize, entries: &[f64], rank: usize) -> Vec<f64> {
        // A·Aᵀ with A of shape n × rank is PSD (singular when rank < n).
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..rank)
                    .map(|k| entries[i * rank + k] * entries[j * rank + k])
                    .sum();
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn sqrt_reconstructs_psd(
            n in 1usize..=16,
            rank_frac in 0.3f64..=1.0,
            entries in prop::collection::vec(-1.0f64..1.0, 256),
        ) {
            let rank = ((n as f64 * rank_frac).ceil() as usize).max(1);
            let a = psd(n, &entries, rank);
            let s = matrix_sqrt_psd(&a, n).unwrap();
            prop_assert!(max_diff(&matmul(&s, &s, n), &a) < 1e-8);
            prop_assert!(max_diff(&s, &symmetrize(&s, n)) == 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn frechet_symmetric_nonnegative(
            n in 1usize..=6,
            ea in prop::collection::vec(-1.0f64..1.0, 36),
            eb in prop::collection::vec(-1.0f64..1.0, 36),
            ma in prop::collection::vec(-2.0f64..2.0, 6),
            mb in prop::collection::vec(-2.0f64..2.0, 6),
        ) {
            let a = stats(ma[..n].to_vec(), psd(n, &ea, n));
            let b = stats(mb[..n].to_vec(), psd(n, &eb, n));
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-7 * (1.0 + ab));
            prop_assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        }
    }
}
