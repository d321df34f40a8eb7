//! Small dense linear-algebra helpers shared by the solver, PCA and simulation code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest eigenvalue of a symmetric positive semidefinite `d x d` matrix
/// stored row-major, by power iteration.
pub fn power_iteration(mat: &[f64], d: usize, tol: f64, max_iter: usize) -> f64 {
    assert_eq!(mat.len(), d * d);
    if d == 0 {
        return 0.0;
    }
    if d == 1 {
        return mat[0].max(0.0);
    }
    // Start from the all-ones direction plus a small tilt so that a start
    // orthogonal to the top eigenvector is unlikely.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * i as f64).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut w = vec![0.0; d];
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        for i in 0..d {
            w[i] = (0..d).map(|j| mat[i * d + j] * v[j]).sum();
        }
        let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        // Rayleigh quotient with the unit-norm iterate.
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        for i in 0..d {
            v[i] = w[i] / wn;
        }
        if (next - lambda).abs() <= tol * next.abs().max(1e-300) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // The Rayleigh quotient approaches the top eigenvalue from below; the
    // iterate norm bounds it from above for PSD input.
    let mut av = vec![0.0; d];
    for i in 0..d {
        av[i] = (0..d).map(|j| mat[i * d + j] * v[j]).sum();
    }
    let upper = av.iter().map(|x| x * x).sum::<f64>().sqrt();
    lambda.max(upper)
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order. Eigenvector signs are fixed so that the entry with the
/// largest magnitude is positive.
pub fn sorted_symmetric_eigen(mat: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = mat.nrows();
    let eig = SymmetricEigen::new(mat);
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(d, d);
    for (col, &i) in idx.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let (mut best, mut best_abs) = (0usize, -1.0f64);
        for (r, x) in v.iter().enumerate() {
            if x.abs() > best_abs + 1e-12 {
                best = r;
                best_abs = x.abs();
            }
        }
        if v[best] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

/// Solve `(A + ridge I) x = b` for symmetric positive definite `A` by Cholesky.
pub fn cholesky_solve(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    let mut m = a.clone();
    if ridge != 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
    }
    m.cholesky().map(|c| c.solve(b))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
