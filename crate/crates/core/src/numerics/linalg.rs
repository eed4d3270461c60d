use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Result of orthonormalizing the rows of a matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Orthonormalized {
    /// Same shape as the input; dependent rows are zero.
    pub rows: Tensor,
    /// `dependent[i]` is set when row `i` had residual norm below the tolerance.
    pub dependent: Vec<bool>,
}

/// Modified Gram–Schmidt over the rows of `vectors`, with one
/// reorthogonalization pass per row.
pub fn gram_schmidt(vectors: &Tensor, tol: f64) -> Orthonormalized {
    let (k, d) = (vectors.rows(), vectors.cols());
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut out = vec![0.0; k * d];
    let mut dependent = vec![false; k];
    for i in 0..k {
        let mut v = vectors.row(i).to_vec();
        for _ in 0..2 {
            for q in &basis {
                let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(q) {
                    *a -= proj * b;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < tol {
            dependent[i] = true;
            continue;
        }
        for a in v.iter_mut() {
            *a /= norm;
        }
        out[i * d..(i + 1) * d].copy_from_slice(&v);
        basis.push(v);
    }
    Orthonormalized {
        rows: Tensor::from_parts(k, d, out),
        dependent,
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as rows. Each eigenvector's largest-magnitude component is
/// made positive.
pub fn symmetric_eigen(matrix: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let n = matrix.rows();
    if matrix.cols() != n {
        return Err(Error::Shape("eigen-decomposition needs a square matrix".into()));
    }
    let mut a: Vec<f64> = matrix.values().to_vec();
    for i in 0..n {
        for j in 0..i {
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-9 * (1.0 + a[i * n + j].abs()) {
                return Err(Error::InvalidArgument("matrix is not symmetric".into()));
            }
        }
    }
    // v holds eigenvectors as columns
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut rows = Vec::with_capacity(n * n);
    for &col in &order {
        let mut vec: Vec<f64> = (0..n).map(|k| v[k * n + col]).collect();
        let mut pivot = 0.0_f64;
        for &x in &vec {
            if x.abs() > pivot.abs() + 1e-12 {
                pivot = x;
            }
        }
        if pivot < 0.0 {
            vec.iter_mut().for_each(|x| *x = -*x);
        }
        rows.extend(vec);
    }
    Ok((values, Tensor::from_parts(n, n, rows)))
}

/// Principal-component projection of the rows of `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `d x D`, orthonormal rows in descending-variance order.
    pub basis: Tensor,
    /// `N x d`, centered data times `basis^T`.
    pub projected: Tensor,
    pub mean: Vec<f64>,
    /// Covariance eigenvalues of the kept components.
    pub variances: Vec<f64>,
}

/// Projects onto the top `min(target_dim, D, N)` covariance eigenvectors.
pub fn pca_project(data: &Tensor, target_dim: usize) -> Result<Projection> {
    let (n, d_in) = (data.rows(), data.cols());
    if n == 0 || data.is_empty() {
        return Err(Error::Empty("pca_project needs at least one row"));
    }
    let d = target_dim.min(d_in).min(n).max(1).min(d_in);
    let mean: Vec<f64> = (0..d_in)
        .map(|j| (0..n).map(|i| data.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<f64> = (0..n)
        .flat_map(|i| (0..d_in).map(move |j| (i, j)))
        .map(|(i, j)| data.get(i, j) - mean[j])
        .collect();
    let centered = Tensor::from_parts(n, d_in, centered);
    let mut cov = centered.transpose().matmul(&centered)?;
    cov.values_mut().iter_mut().for_each(|x| *x /= n as f64);
    // exact symmetry for the Jacobi check
    for i in 0..d_in {
        for j in 0..i {
            let avg = 0.5 * (cov.get(i, j) + cov.get(j, i));
            cov.values_mut()[i * d_in + j] = avg;
            cov.values_mut()[j * d_in + i] = avg;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    let basis = Tensor::from_parts(d, d_in, vectors.values()[..d * d_in].to_vec());
    let projected = centered.matmul(&basis.transpose())?;
    Ok(Projection {
        basis,
        projected,
        mean,
        variances: values[..d].iter().map(|v| v.max(0.0)).collect(),
    })
}
