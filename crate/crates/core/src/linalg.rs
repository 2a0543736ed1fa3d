use nalgebra::{DMatrix, SymmetricEigen};

pub type Vec6 = nalgebra::Vector6<f64>;
pub type Mat6 = nalgebra::Matrix6<f64>;

pub(crate) fn symmetrize(p: &Mat6) -> Mat6 {
    (p + p.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub(crate) fn min_eigenvalue(p: &Mat6) -> f64 {
    SymmetricEigen::new(*p)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// PSD test with a tolerance relative to the matrix scale.
pub(crate) fn is_psd(p: &Mat6) -> bool {
    let scale = p.diagonal().iter().map(|d| d.abs()).fold(1e-300, f64::max);
    min_eigenvalue(p) >= -1e-9 * scale
}

/// Inverse of a symmetric PSD matrix, falling back to the eigen
/// pseudo-inverse when it is singular.
pub(crate) fn psd_inverse(p: &Mat6) -> Mat6 {
    if let Some(chol) = p.cholesky() {
        let inv = chol.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            return inv;
        }
    }
    let eig = SymmetricEigen::new(*p);
    let largest = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let cutoff = largest * 1e-13;
    let mut inv = Mat6::zeros();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(k);
            inv += v * v.transpose() / lambda;
        }
    }
    inv
}

/// Eigenvalues of a dense symmetric matrix, ascending.
pub(crate) fn dense_eigenvalues(m: &DMatrix<f64>) -> alloc::vec::Vec<f64> {
    let mut ev: alloc::vec::Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}
