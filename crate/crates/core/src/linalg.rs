//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Eigendecomposition of a Hermitian complex matrix with eigenpairs sorted by
/// ascending eigenvalue. Returns `(eigenvalues, eigenvectors)`; eigenvector
/// `i` is column `i`.
pub fn eigh(matrix: &DMatrix<Complex64>) -> (DVector<f64>, DMatrix<Complex64>) {
    let eig = nalgebra::SymmetricEigen::new(matrix.clone());
    sort_eigenpairs(eig.eigenvalues, eig.eigenvectors)
}

/// Eigendecomposition of a real symmetric matrix, sorted ascending.
pub fn eigh_real(matrix: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = nalgebra::SymmetricEigen::new(matrix.clone());
    sort_eigenpairs(eig.eigenvalues, eig.eigenvectors)
}

fn sort_eigenpairs<T: nalgebra::Scalar + Copy>(
    values: DVector<f64>,
    vectors: DMatrix<T>,
) -> (DVector<f64>, DMatrix<T>) {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let sorted_values = DVector::from_fn(n, |i, _| values[order[i]]);
    let mut sorted_vectors = vectors.clone();
    for (dst, &src) in order.iter().enumerate() {
        sorted_vectors.set_column(dst, &vectors.column(src));
    }
    (sorted_values, sorted_vectors)
}

/// Largest entry magnitude of a complex matrix.
pub fn max_abs(matrix: &DMatrix<Complex64>) -> f64 {
    matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest entry magnitude of `A - A^dagger`.
pub fn hermiticity_defect(matrix: &DMatrix<Complex64>) -> f64 {
    let n = matrix.nrows();
    let mut defect = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (matrix[(i, j)] - matrix[(j, i)].conj()).norm();
            defect = defect.max(d);
        }
    }
    defect
}

/// Largest entry magnitude of the commutator `AB - BA`.
pub fn commutator_max_abs(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    max_abs(&(a * b - b * a))
}

/// Trace distance (1/2)*||A - B||_1 between two Hermitian matrices.
pub fn trace_distance(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let diff = a - b;
    let (values, _) = eigh(&diff);
    0.5 * values.iter().map(|v| v.abs()).sum::<f64>()
}

/// In-place modified Gram-Schmidt on the columns of `m`. The input columns
/// are assumed linearly independent (eigenvector blocks).
pub fn orthonormalize_columns(m: &mut DMatrix<Complex64>) {
    let cols = m.ncols();
    for j in 0..cols {
        for i in 0..j {
            let overlap = m.column(i).dotc(&m.column(j));
            let correction = m.column(i) * overlap;
            let mut col = m.column_mut(j);
            col -= correction;
        }
        let norm = m.column(j).norm();
        let mut col = m.column_mut(j);
        col /= Complex64::new(norm, 0.0);
    }
}

/// Promote a real matrix to a complex one.
pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Largest |imaginary part| over all entries.
pub fn max_imag(matrix: &DMatrix<Complex64>) -> f64 {
    matrix.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hermitian_test_matrix(n: usize) -> DMatrix<Complex64> {
        let m = DMatrix::from_fn(n, n, |i, j| {
            Complex64::new(((i * 3 + j) % 7) as f64, (i as f64) - (j as f64))
        });
        (&m + m.adjoint()) * Complex64::new(0.5, 0.0)
    }

    #[test]
    fn eigh_reconstructs_hermitian_matrix() {
        let h = hermitian_test_matrix(12);
        let (values, vectors) = eigh(&h);
        let lambda = DMatrix::from_diagonal(&values.map(|v| Complex64::new(v, 0.0)));
        let recon = &vectors * lambda * vectors.adjoint();
        assert!(max_abs(&(recon - &h)) < 1e-11);
        for i in 1..values.len() {
            assert!(values[i] >= values[i - 1]);
        }
    }

    #[test]
    fn trace_distance_of_orthogonal_pure_states() {
        let mut a = DMatrix::<Complex64>::zeros(3, 3);
        let mut b = DMatrix::<Complex64>::zeros(3, 3);
        a[(0, 0)] = Complex64::new(1.0, 0.0);
        b[(1, 1)] = Complex64::new(1.0, 0.0);
        assert!((trace_distance(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gram_schmidt_produces_orthonormal_columns() {
        let mut m = DMatrix::from_fn(5, 3, |i, j| {
            Complex64::new(
                ((i + 1) as f64).powi(j as i32 + 1),
                (i as f64) * 0.3 - (j as f64) * (i as f64),
            )
        });
        orthonormalize_columns(&mut m);
        let gram = m.adjoint() * &m;
        assert!(max_abs(&(gram - DMatrix::identity(3, 3))) < 1e-12);
    }
}
