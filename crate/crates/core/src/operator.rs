//! Sparse complex operators on a fixed-particle-number Fock basis.
//!
//! Operators are built sparse (they carry O(M * dim) nonzeros) and converted
//! to dense form only where an eigendecomposition or a density-matrix product
//! needs it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::FockBasis;
use crate::linalg;

/// Entries below this magnitude are dropped when assembling sparse matrices.
const ASSEMBLY_DROP_TOL: f64 = 0.0;

/// Compressed sparse row storage for a square complex matrix.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<Complex64>,
}

impl CsrMatrix {
    /// Assemble from (row, col, value) triplets; duplicate coordinates are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut rows_seen = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if let (Some(&last_r), Some(&last_c)) = (rows_seen.last(), col_idx.last()) {
                if last_r == r && last_c as usize == c {
                    *values.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows_seen.push(r);
            col_idx.push(c as u32);
            values.push(v);
        }
        // Drop exact zeros produced by cancellation.
        let mut keep_col = Vec::with_capacity(col_idx.len());
        let mut keep_val = Vec::with_capacity(values.len());
        for ((r, c), v) in rows_seen.iter().zip(&col_idx).zip(&values) {
            if v.norm() > ASSEMBLY_DROP_TOL {
                row_ptr[r + 1] += 1;
                keep_col.push(*c);
                keep_val.push(*v);
            }
        }
        for i in 1..=dim {
            row_ptr[i] += row_ptr[i - 1];
        }
        CsrMatrix {
            dim,
            row_ptr,
            col_idx: keep_col,
            values: keep_val,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        CsrMatrix {
            dim,
            row_ptr: vec![0; dim + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y = A x
    pub fn mul_vec(&self, x: &DVector<Complex64>, y: &mut DVector<Complex64>) {
        debug_assert_eq!(x.len(), self.dim);
        for row in 0..self.dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            y[row] = acc;
        }
    }

    /// y += alpha * A x
    pub fn mul_vec_acc(&self, alpha: Complex64, x: &DVector<Complex64>, y: &mut DVector<Complex64>) {
        for row in 0..self.dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.values[k] * x[self.col_idx[k] as usize];
            }
            y[row] += alpha * acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for row in 0..self.dim {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                m[(row, self.col_idx[k] as usize)] += self.values[k];
            }
        }
        m
    }

    fn get(&self, row: usize, col: usize) -> Complex64 {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        match self.col_idx[lo..hi].binary_search(&(col as u32)) {
            Ok(k) => self.values[lo + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Largest entry magnitude of `A - A^dagger`, computed sparsely.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut defect = 0.0f64;
        for row in 0..self.dim {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                let col = self.col_idx[k] as usize;
                let d = (self.values[k] - self.get(col, row).conj()).norm();
                defect = defect.max(d);
            }
        }
        defect
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for row in 0..self.dim {
            for k in self.row_ptr[row]..self.row_ptr[row + 1] {
                out.push((row, self.col_idx[k] as usize, self.values[k]));
            }
        }
        out
    }
}

/// A complex operator tied to a [`FockBasis`], with a Hermitian marker.
#[derive(Debug, Clone)]
pub struct MatrixOperator {
    basis: Arc<FockBasis>,
    entries: CsrMatrix,
    hermitian: bool,
}

impl MatrixOperator {
    pub fn from_triplets(
        basis: Arc<FockBasis>,
        triplets: Vec<(usize, usize, Complex64)>,
        hermitian: bool,
    ) -> Self {
        let entries = CsrMatrix::from_triplets(basis.dim(), triplets);
        let op = MatrixOperator {
            basis,
            entries,
            hermitian,
        };
        debug_assert!(
            !op.hermitian || op.hermiticity_defect() <= 1e-12 * op.norm_scale(),
            "operator flagged Hermitian violates the flag"
        );
        op
    }

    pub fn zeros(basis: Arc<FockBasis>) -> Self {
        MatrixOperator {
            entries: CsrMatrix::zeros(basis.dim()),
            basis,
            hermitian: true,
        }
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    pub fn nnz(&self) -> usize {
        self.entries.nnz()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn entries(&self) -> &CsrMatrix {
        &self.entries
    }

    /// Scale used to normalize zero tolerances: the largest entry magnitude,
    /// floored at 1 so that zero operators still compare cleanly.
    pub fn norm_scale(&self) -> f64 {
        self.entries.max_abs().max(1.0)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        self.entries.hermiticity_defect()
    }

    /// Checks that `other` acts on a structurally identical basis.
    pub fn same_basis(&self, other: &MatrixOperator) -> Result<()> {
        if self.basis.n_atoms() == other.basis.n_atoms()
            && self.basis.n_sites() == other.basis.n_sites()
        {
            Ok(())
        } else {
            Err(Error::BasisMismatch)
        }
    }

    pub fn apply(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        let mut y = DVector::zeros(self.dim());
        self.entries.mul_vec(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &DVector<Complex64>, y: &mut DVector<Complex64>) {
        self.entries.mul_vec(x, y);
    }

    /// <psi| A |psi> for a not-necessarily-normalized state.
    pub fn expectation(&self, psi: &DVector<Complex64>) -> Complex64 {
        psi.dotc(&self.apply(psi))
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        self.entries.to_dense()
    }

    pub fn scaled(&self, factor: Complex64) -> MatrixOperator {
        let triplets = self
            .entries
            .triplets()
            .into_iter()
            .map(|(r, c, v)| (r, c, v * factor))
            .collect();
        MatrixOperator::from_triplets(
            self.basis.clone(),
            triplets,
            self.hermitian && factor.im == 0.0,
        )
    }

    pub fn add(&self, other: &MatrixOperator) -> Result<MatrixOperator> {
        self.same_basis(other)?;
        let mut triplets = self.entries.triplets();
        triplets.extend(other.entries.triplets());
        Ok(MatrixOperator::from_triplets(
            self.basis.clone(),
            triplets,
            self.hermitian && other.hermitian,
        ))
    }

    pub fn sub(&self, other: &MatrixOperator) -> Result<MatrixOperator> {
        self.add(&other.scaled(Complex64::new(-1.0, 0.0)))
    }

    /// Largest entry magnitude of the difference with `other`.
    pub fn max_abs_diff(&self, other: &MatrixOperator) -> Result<f64> {
        Ok(self.sub(other)?.entries.max_abs())
    }

    /// Largest entry magnitude of the commutator with `other` (dense).
    pub fn commutator_max_abs(&self, other: &MatrixOperator) -> Result<f64> {
        self.same_basis(other)?;
        Ok(linalg::commutator_max_abs(
            &self.to_dense(),
            &other.to_dense(),
        ))
    }

    /// Spectral-norm upper bound estimated by power iteration on A^dagger A.
    /// Used for integrator step caps; overestimates are harmless.
    pub fn spectral_norm_estimate(&self) -> f64 {
        let n = self.dim();
        if self.nnz() == 0 {
            return 0.0;
        }
        let mut v = DVector::from_fn(n, |i, _| {
            Complex64::new(1.0 + (i as f64 * 0.7).sin() * 0.1, (i as f64 * 0.3).cos() * 0.1)
        });
        v /= Complex64::new(v.norm(), 0.0);
        let mut y = DVector::zeros(n);
        let mut estimate = 0.0;
        for _ in 0..30 {
            self.entries.mul_vec(&v, &mut y);
            // A^dagger y: if Hermitian reuse A, else apply conjugate transpose densely
            let next = if self.hermitian {
                let mut z = DVector::zeros(n);
                self.entries.mul_vec(&y, &mut z);
                z
            } else {
                let mut z = DVector::zeros(n);
                for row in 0..n {
                    for k in self.entries.row_ptr[row]..self.entries.row_ptr[row + 1] {
                        let col = self.entries.col_idx[k] as usize;
                        z[col] += self.entries.values[k].conj() * y[row];
                    }
                }
                z
            };
            let norm = next.norm();
            if norm == 0.0 {
                return 0.0;
            }
            estimate = norm.sqrt();
            v = next / Complex64::new(norm, 0.0);
        }
        // 5% headroom for non-converged power iterations
        estimate * 1.05
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockBasis;

    fn small_basis() -> Arc<FockBasis> {
        Arc::new(FockBasis::new(2, 3).unwrap())
    }

    #[test]
    fn triplets_accumulate_and_cancel() {
        let basis = small_basis();
        let one = Complex64::new(1.0, 0.0);
        let m = CsrMatrix::from_triplets(
            basis.dim(),
            vec![(0, 1, one), (0, 1, one), (2, 2, one), (2, 2, -one)],
        );
        assert_eq!(m.get(0, 1), Complex64::new(2.0, 0.0));
        assert_eq!(m.get(2, 2), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn matvec_matches_dense() {
        let basis = small_basis();
        let dim = basis.dim();
        let mut triplets = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                if (i + 2 * j) % 3 == 0 {
                    triplets.push((i, j, Complex64::new(i as f64 + 0.5, j as f64 - 1.0)));
                }
            }
        }
        let m = CsrMatrix::from_triplets(dim, triplets);
        let x = DVector::from_fn(dim, |i, _| Complex64::new(0.1 * i as f64, 1.0 - 0.2 * i as f64));
        let mut y = DVector::zeros(dim);
        m.mul_vec(&x, &mut y);
        let dense_y = m.to_dense() * &x;
        assert!((y - dense_y).norm() < 1e-13);
    }

    #[test]
    fn hermiticity_defect_detects_asymmetry() {
        let basis = small_basis();
        let m = CsrMatrix::from_triplets(
            basis.dim(),
            vec![
                (0, 1, Complex64::new(1.0, 2.0)),
                (1, 0, Complex64::new(1.0, -2.0)),
                (2, 3, Complex64::new(0.5, 0.0)),
            ],
        );
        // (2,3) entry has no conjugate partner
        assert!((m.hermiticity_defect() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn spectral_norm_estimate_bounds_known_value() {
        let basis = small_basis();
        let dim = basis.dim();
        let mut triplets = Vec::new();
        for i in 0..dim {
            triplets.push((i, i, Complex64::new(-(i as f64) - 1.0, 0.0)));
        }
        let op = MatrixOperator::from_triplets(basis, triplets, true);
        let est = op.spectral_norm_estimate();
        assert!(est >= dim as f64 - 1e-9, "estimate {est} too small");
        assert!(est <= (dim as f64) * 1.1, "estimate {est} too loose");
    }

    #[test]
    fn basis_mismatch_is_reported() {
        let a = MatrixOperator::zeros(small_basis());
        let b = MatrixOperator::zeros(Arc::new(FockBasis::new(1, 3).unwrap()));
        assert!(matches!(a.add(&b), Err(Error::BasisMismatch)));
    }
}
