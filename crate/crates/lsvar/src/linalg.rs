//! Small dense matrix norms and spectra used across the crate.

use nalgebra::DMatrix;

/// Entrywise max-abs norm (the vectorized `l_inf` norm).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

/// Entrywise `l1` norm of the vectorized matrix.
pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// Sum of singular values.
pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().iter().sum()
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, c| acc.max(c.norm()))
}

/// Count of non-zero entries above `threshold` in absolute value.
pub fn support_size(m: &DMatrix<f64>, threshold: f64) -> usize {
    m.iter().filter(|x| x.abs() > threshold).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn norms_on_diagonal_matrix() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, -1.0]));
        assert_relative_eq!(max_abs(&m), 3.0);
        assert_relative_eq!(l1_norm(&m), 4.0);
        assert_relative_eq!(spectral_norm(&m), 3.0);
        assert_relative_eq!(nuclear_norm(&m), 4.0);
        assert_relative_eq!(spectral_radius(&m), 3.0);
        assert_eq!(support_size(&m, 1e-12), 2);
    }
}
