//! Density-matrix evolution under the photodetection master equation
//! `rho' = -i [H0, rho] + 2 kappa (a rho a^dag - {a^dag a, rho} / 2)`.
//!
//! Integration is classical RK4 on a fixed step chosen from the spectral
//! scales of the generator. When both `H0` and the matter part of the jump
//! operator are real symmetric (every engineered geometry here), the
//! integrator works in the eigenbasis of the measured observable, where the
//! dissipator is an elementwise decay `-kappa |C|^2 (b_i - b_j)^2` and one
//! derivative costs four real matrix products instead of four complex ones.
//! The state is split as `rho = X + i Y` with `X` symmetric and `Y`
//! antisymmetric; both are projected back onto their symmetry class after
//! every step to shed floating-point drift.

use std::ops::ControlFlow;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::FockBasis;
use crate::lightmatter::JumpOperator;
use crate::linalg;
use crate::operator::MatrixOperator;
use crate::subspace::ProjectorSet;

/// Dense density matrices are kept to desk scale.
pub const MASTER_DIMENSION_CAP: usize = 400;
/// Allowed trace drift over a run.
const TRACE_TOL: f64 = 1e-8;
/// Oscillation-resolution cap: max |E_i - E_j| * dt per step.
const PHASE_STEP_CAP: f64 = 0.5;
/// Stability cap on |generator| * dt.
const STABILITY_STEP_CAP: f64 = 1.5;

/// Validated density matrix tied to a Fock basis.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    basis: Arc<FockBasis>,
    rho: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(basis: Arc<FockBasis>, rho: DMatrix<Complex64>) -> Result<Self> {
        let dm = DensityMatrix { basis, rho };
        dm.validate()?;
        Ok(dm)
    }

    /// Pure-state density matrix `|psi><psi|`.
    pub fn pure(basis: Arc<FockBasis>, psi: &DVector<Complex64>) -> Result<Self> {
        let norm = psi.norm();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::NotNormalized { norm });
        }
        let rho = psi * psi.adjoint();
        Ok(DensityMatrix { basis, rho })
    }

    /// Equal-weight classical mixture of pure states.
    pub fn mixture(basis: Arc<FockBasis>, states: &[DVector<Complex64>]) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let dim = basis.dim();
        let mut rho = DMatrix::zeros(dim, dim);
        let weight = Complex64::new(1.0 / states.len() as f64, 0.0);
        for psi in states {
            let mut normalized = psi.clone();
            normalized /= Complex64::new(normalized.norm(), 0.0);
            rho += (&normalized * normalized.adjoint()) * weight;
        }
        Ok(DensityMatrix { basis, rho })
    }

    fn trusted(basis: Arc<FockBasis>, rho: DMatrix<Complex64>) -> Self {
        DensityMatrix { basis, rho }
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        linalg::hermiticity_defect(&self.rho)
    }

    /// Hermiticity within 1e-10, unit trace within 1e-8, spectrum above
    /// -1e-10, and a matching basis dimension.
    pub fn validate(&self) -> Result<()> {
        if self.rho.nrows() != self.basis.dim() || !self.rho.is_square() {
            return Err(Error::BasisMismatch);
        }
        let herm = self.hermiticity_defect();
        if herm > 1e-10 {
            return Err(Error::NonHermitian { defect: herm });
        }
        let trace = self.trace();
        if (trace.re - 1.0).abs() > 1e-8 || trace.im.abs() > 1e-8 {
            return Err(Error::ToleranceBreach {
                quantity: "density-matrix trace",
                value: (trace - Complex64::new(1.0, 0.0)).norm(),
                tol: 1e-8,
                time: 0.0,
            });
        }
        let (values, _) = linalg::eigh(&self.rho);
        if values[0] < -1e-10 {
            return Err(Error::ToleranceBreach {
                quantity: "density-matrix minimum eigenvalue",
                value: values[0],
                tol: -1e-10,
                time: 0.0,
            });
        }
        Ok(())
    }
}

/// Integration controls for [`run_master`].
#[derive(Debug, Clone, Copy)]
pub struct MasterOptions {
    /// Fixed step; `None` picks one from the generator's spectral scales.
    pub dt: Option<f64>,
    /// Spacing of emitted snapshots.
    pub snapshot_interval: f64,
    /// Skip the real-symmetric fast path (diagnostics).
    pub force_generic: bool,
}

impl MasterOptions {
    pub fn with_interval(snapshot_interval: f64) -> Self {
        MasterOptions {
            dt: None,
            snapshot_interval,
            force_generic: false,
        }
    }
}

/// Integrate the master equation, emitting `(time, state)` snapshots on a
/// uniform grid through the observer. `ControlFlow::Break` stops the run
/// after the current snapshot without error.
pub fn run_master_observed<F>(
    rho0: &DensityMatrix,
    h0: &MatrixOperator,
    jump: &JumpOperator,
    kappa: f64,
    total_time: f64,
    opts: &MasterOptions,
    mut observer: F,
) -> Result<()>
where
    F: FnMut(f64, &DensityMatrix) -> ControlFlow<()>,
{
    let dim = rho0.dim();
    if dim > MASTER_DIMENSION_CAP {
        return Err(Error::MasterDimensionCap {
            dim,
            cap: MASTER_DIMENSION_CAP,
        });
    }
    h0.same_basis(jump.base())?;
    if h0.dim() != dim {
        return Err(Error::BasisMismatch);
    }
    if !(total_time > 0.0) || !(opts.snapshot_interval > 0.0) {
        return Err(Error::Config(
            "total_time and snapshot_interval must be positive".into(),
        ));
    }
    if kappa < 0.0 {
        return Err(Error::Config(format!("kappa must be >= 0, got {kappa}")));
    }

    let h_dense = h0.to_dense();
    let base_dense = jump.base().to_dense();
    let real_symmetric = h0.is_hermitian()
        && jump.base().is_hermitian()
        && linalg::max_imag(&h_dense) <= 1e-12 * h0.norm_scale()
        && linalg::max_imag(&base_dense) <= 1e-12 * jump.base().norm_scale();

    if real_symmetric && !opts.force_generic {
        run_fast(
            rho0, h0, &h_dense, &base_dense, jump, kappa, total_time, opts, &mut observer,
        )
    } else {
        run_generic(rho0, h0, &h_dense, jump, kappa, total_time, opts, &mut observer)
    }
}

/// Integrate and collect the snapshot series.
pub fn run_master(
    rho0: &DensityMatrix,
    h0: &MatrixOperator,
    jump: &JumpOperator,
    kappa: f64,
    total_time: f64,
    opts: &MasterOptions,
) -> Result<Vec<(f64, DensityMatrix)>> {
    let mut series = Vec::new();
    run_master_observed(rho0, h0, jump, kappa, total_time, opts, |t, dm| {
        series.push((t, dm.clone()));
        ControlFlow::Continue(())
    })?;
    Ok(series)
}

/// Frobenius norms of every projector-sandwiched block `P_M rho P_N`.
pub fn block_decompose(rho: &DensityMatrix, projectors: &ProjectorSet) -> Result<DMatrix<f64>> {
    let dim = rho.dim();
    if projectors.space_dim() != dim {
        return Err(Error::BasisMismatch);
    }
    let covered: usize = projectors.iter().map(|p| p.dim()).sum();
    if covered != dim {
        return Err(Error::IncompleteProjectors {
            defect: (dim as f64 - covered as f64).abs(),
        });
    }
    let n_blocks = projectors.len();
    let mut norms = DMatrix::zeros(n_blocks, n_blocks);
    for (n_idx, pn) in projectors.iter().enumerate() {
        let right = rho.matrix() * pn.columns();
        for (m_idx, pm) in projectors.iter().enumerate() {
            let block = pm.columns().adjoint() * &right;
            norms[(m_idx, n_idx)] = block.norm();
        }
    }
    Ok(norms)
}

/// y += alpha * x, elementwise over contiguous matrix storage.
fn mat_axpy(y: &mut DMatrix<f64>, alpha: f64, x: &DMatrix<f64>) {
    let ys = y.as_mut_slice();
    let xs = x.as_slice();
    for (yi, xi) in ys.iter_mut().zip(xs) {
        *yi += alpha * xi;
    }
}

fn mat_axpy_complex(y: &mut DMatrix<Complex64>, alpha: f64, x: &DMatrix<Complex64>) {
    let ys = y.as_mut_slice();
    let xs = x.as_slice();
    for (yi, xi) in ys.iter_mut().zip(xs) {
        *yi += alpha * xi;
    }
}

struct RealPair {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl RealPair {
    fn zeros(dim: usize) -> Self {
        RealPair {
            x: DMatrix::zeros(dim, dim),
            y: DMatrix::zeros(dim, dim),
        }
    }

    fn copy_from(&mut self, other: &RealPair) {
        self.x.copy_from(&other.x);
        self.y.copy_from(&other.y);
    }

    fn axpy(&mut self, alpha: f64, other: &RealPair) {
        mat_axpy(&mut self.x, alpha, &other.x);
        mat_axpy(&mut self.y, alpha, &other.y);
    }

    /// Project X onto symmetric and Y onto antisymmetric matrices.
    fn resymmetrize(&mut self) {
        let n = self.x.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let xs = 0.5 * (self.x[(i, j)] + self.x[(j, i)]);
                self.x[(i, j)] = xs;
                self.x[(j, i)] = xs;
                let ya = 0.5 * (self.y[(i, j)] - self.y[(j, i)]);
                self.y[(i, j)] = ya;
                self.y[(j, i)] = -ya;
            }
            self.y[(j, j)] = 0.0;
        }
    }
}

/// d/dt (X + iY) = -i [H, X + iY] + E o (X + iY), with H real symmetric in
/// the measured-observable eigenbasis and E the elementwise decay matrix.
fn fast_derivative(h: &DMatrix<f64>, decay: &DMatrix<f64>, state: &RealPair, out: &mut RealPair) {
    out.x.gemm(1.0, h, &state.y, 0.0);
    out.x.gemm(-1.0, &state.y, h, 1.0);
    out.y.gemm(-1.0, h, &state.x, 0.0);
    out.y.gemm(1.0, &state.x, h, 1.0);
    let n = h.nrows();
    for j in 0..n {
        for i in 0..n {
            let e = decay[(i, j)];
            out.x[(i, j)] += e * state.x[(i, j)];
            out.y[(i, j)] += e * state.y[(i, j)];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_fast<F>(
    rho0: &DensityMatrix,
    h0: &MatrixOperator,
    h_dense: &DMatrix<Complex64>,
    base_dense: &DMatrix<Complex64>,
    jump: &JumpOperator,
    kappa: f64,
    total_time: f64,
    opts: &MasterOptions,
    observer: &mut F,
) -> Result<()>
where
    F: FnMut(f64, &DensityMatrix) -> ControlFlow<()>,
{
    let dim = rho0.dim();
    let kappa_eff = kappa * jump.intensity_scale();
    let h_real = h_dense.map(|z| z.re);
    let b_real = base_dense.map(|z| z.re);
    let (b_values, modes) = linalg::eigh_real(&b_real);
    let h_tilde = modes.transpose() * &h_real * &modes;
    let mut decay = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        for i in 0..dim {
            let diff = b_values[i] - b_values[j];
            decay[(i, j)] = -kappa_eff * diff * diff;
        }
    }

    // rho in the measured-observable eigenbasis, split into real parts
    let rho_re = rho0.matrix().map(|z| z.re);
    let rho_im = rho0.matrix().map(|z| z.im);
    let mut state = RealPair {
        x: modes.transpose() * &rho_re * &modes,
        y: modes.transpose() * &rho_im * &modes,
    };
    state.resymmetrize();
    let trace0: f64 = state.x.trace();

    let h_range = 2.0 * h0.spectral_norm_estimate();
    let decay_max = kappa_eff * {
        let spread = b_values[dim - 1] - b_values[0];
        spread * spread
    };
    let dt = opts
        .dt
        .unwrap_or_else(|| {
            (PHASE_STEP_CAP / h_range.max(1e-300))
                .min(STABILITY_STEP_CAP / (h_range + decay_max).max(1e-300))
        })
        .min(opts.snapshot_interval);

    let mut k1 = RealPair::zeros(dim);
    let mut k2 = RealPair::zeros(dim);
    let mut k3 = RealPair::zeros(dim);
    let mut k4 = RealPair::zeros(dim);
    let mut stage = RealPair::zeros(dim);

    let emit = |state: &RealPair, observer: &mut F, t: f64| -> Result<ControlFlow<()>> {
        let trace: f64 = state.x.trace();
        if (trace - trace0).abs() > TRACE_TOL {
            return Err(Error::ToleranceBreach {
                quantity: "density-matrix trace",
                value: (trace - trace0).abs(),
                tol: TRACE_TOL,
                time: t,
            });
        }
        let back_re = &modes * &state.x * modes.transpose();
        let back_im = &modes * &state.y * modes.transpose();
        let rho = DMatrix::from_fn(dim, dim, |i, j| {
            Complex64::new(back_re[(i, j)], back_im[(i, j)])
        });
        Ok(observer(
            t,
            &DensityMatrix::trusted(rho0.basis().clone(), rho),
        ))
    };

    if let ControlFlow::Break(()) = emit(&state, observer, 0.0)? {
        return Ok(());
    }
    let n_snapshots = (total_time / opts.snapshot_interval + 1e-9).floor() as usize + 1;
    for grid_index in 1..n_snapshots {
        let grid_time = grid_index as f64 * opts.snapshot_interval;
        let mut time = (grid_index - 1) as f64 * opts.snapshot_interval;
        while time < grid_time - 1e-12 * grid_time.max(1.0) {
            let step = dt.min(grid_time - time);
            fast_derivative(&h_tilde, &decay, &state, &mut k1);
            stage.copy_from(&state);
            stage.axpy(0.5 * step, &k1);
            fast_derivative(&h_tilde, &decay, &stage, &mut k2);
            stage.copy_from(&state);
            stage.axpy(0.5 * step, &k2);
            fast_derivative(&h_tilde, &decay, &stage, &mut k3);
            stage.copy_from(&state);
            stage.axpy(step, &k3);
            fast_derivative(&h_tilde, &decay, &stage, &mut k4);
            state.axpy(step / 6.0, &k1);
            state.axpy(step / 3.0, &k2);
            state.axpy(step / 3.0, &k3);
            state.axpy(step / 6.0, &k4);
            state.resymmetrize();
            time += step;
        }
        if let ControlFlow::Break(()) = emit(&state, observer, grid_time)? {
            return Ok(());
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_generic<F>(
    rho0: &DensityMatrix,
    h0: &MatrixOperator,
    h_dense: &DMatrix<Complex64>,
    jump: &JumpOperator,
    kappa: f64,
    total_time: f64,
    opts: &MasterOptions,
    observer: &mut F,
) -> Result<()>
where
    F: FnMut(f64, &DensityMatrix) -> ControlFlow<()>,
{
    let dim = rho0.dim();
    let a = jump.matrix().to_dense();
    let a_dag = a.adjoint();
    // drift G = -i H - kappa a^dag a; rho' = G rho + rho G^dag + 2 kappa a rho a^dag
    let minus_i = Complex64::new(0.0, -1.0);
    let drift = h_dense.map(|z| minus_i * z) - (&a_dag * &a) * Complex64::new(kappa, 0.0);
    let drift_dag = drift.adjoint();
    let two_kappa = Complex64::new(2.0 * kappa, 0.0);

    let derivative = |rho: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>| {
        out.gemm(Complex64::new(1.0, 0.0), &drift, rho, Complex64::new(0.0, 0.0));
        out.gemm(Complex64::new(1.0, 0.0), rho, &drift_dag, Complex64::new(1.0, 0.0));
        let middle = &a * rho;
        out.gemm(two_kappa, &middle, &a_dag, Complex64::new(1.0, 0.0));
    };

    let base_norm = jump.base().spectral_norm_estimate() * jump.scale().norm();
    let h_range = 2.0 * h0.spectral_norm_estimate();
    let decay_max = 4.0 * kappa * base_norm * base_norm;
    let dt = opts
        .dt
        .unwrap_or_else(|| {
            (PHASE_STEP_CAP / h_range.max(1e-300))
                .min(STABILITY_STEP_CAP / (h_range + decay_max).max(1e-300))
        })
        .min(opts.snapshot_interval);

    let mut rho = rho0.matrix().clone();
    let trace0 = rho.trace().re;
    let mut k1 = DMatrix::zeros(dim, dim);
    let mut k2 = DMatrix::zeros(dim, dim);
    let mut k3 = DMatrix::zeros(dim, dim);
    let mut k4 = DMatrix::zeros(dim, dim);
    let mut stage = DMatrix::zeros(dim, dim);

    let emit = |rho: &DMatrix<Complex64>, observer: &mut F, t: f64| -> Result<ControlFlow<()>> {
        let trace = rho.trace();
        if (trace.re - trace0).abs() > TRACE_TOL || trace.im.abs() > TRACE_TOL {
            return Err(Error::ToleranceBreach {
                quantity: "density-matrix trace",
                value: (trace.re - trace0).abs().max(trace.im.abs()),
                tol: TRACE_TOL,
                time: t,
            });
        }
        Ok(observer(
            t,
            &DensityMatrix::trusted(rho0.basis().clone(), rho.clone()),
        ))
    };

    if let ControlFlow::Break(()) = emit(&rho, observer, 0.0)? {
        return Ok(());
    }

    let n_snapshots = (total_time / opts.snapshot_interval + 1e-9).floor() as usize + 1;
    for grid_index in 1..n_snapshots {
        let grid_time = grid_index as f64 * opts.snapshot_interval;
        let mut time = (grid_index - 1) as f64 * opts.snapshot_interval;
        while time < grid_time - 1e-12 * grid_time.max(1.0) {
            let step = dt.min(grid_time - time);
            derivative(&rho, &mut k1);
            stage.copy_from(&rho);
            mat_axpy_complex(&mut stage, 0.5 * step, &k1);
            derivative(&stage, &mut k2);
            stage.copy_from(&rho);
            mat_axpy_complex(&mut stage, 0.5 * step, &k2);
            derivative(&stage, &mut k3);
            stage.copy_from(&rho);
            mat_axpy_complex(&mut stage, step, &k3);
            derivative(&stage, &mut k4);
            mat_axpy_complex(&mut rho, step / 6.0, &k1);
            mat_axpy_complex(&mut rho, step / 3.0, &k2);
            mat_axpy_complex(&mut rho, step / 3.0, &k3);
            mat_axpy_complex(&mut rho, step / 6.0, &k4);
            // project back onto Hermitian matrices
            for j in 0..dim {
                for i in (j + 1)..dim {
                    let avg = 0.5 * (rho[(i, j)] + rho[(j, i)].conj());
                    rho[(i, j)] = avg;
                    rho[(j, i)] = avg.conj();
                }
                rho[(j, j)] = Complex64::new(rho[(j, j)].re, 0.0);
            }
            time += step;
        }
        if let ControlFlow::Break(()) = emit(&rho, observer, grid_time)? {
            return Ok(());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::trajectory::{run_ensemble, TrajectoryConfig};
    use crate::fock::{build_hamiltonian, Boundary, LatticeSpec};
    use crate::lightmatter::{build_bond_operator, CouplingCoefficients};
    use crate::subspace::{
        eigenspace_projectors, find_emergent_subspaces, DEFAULT_DEGENERACY_TOL,
        DEFAULT_OVERLAP_TOL,
    };

    const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

    fn basis(n: usize, m: usize) -> Arc<FockBasis> {
        Arc::new(FockBasis::new(n, m).unwrap())
    }

    fn free_hamiltonian(b: &Arc<FockBasis>) -> MatrixOperator {
        build_hamiltonian(
            b,
            &LatticeSpec {
                j: 1.0,
                u: 0.0,
                boundary: Boundary::Periodic,
            },
        )
    }

    fn uniform_jump(b: &Arc<FockBasis>, c: Complex64) -> JumpOperator {
        JumpOperator::new(
            c,
            build_bond_operator(
                &CouplingCoefficients::uniform(1.0, b.n_sites()),
                b,
                Boundary::Periodic,
            )
            .unwrap(),
        )
    }

    fn staggered_jump(b: &Arc<FockBasis>, c: Complex64) -> JumpOperator {
        JumpOperator::new(
            c,
            build_bond_operator(
                &CouplingCoefficients::alternating(1.0, b.n_sites()).unwrap(),
                b,
                Boundary::Periodic,
            )
            .unwrap(),
        )
    }

    fn mixed_initial_state(b: &Arc<FockBasis>) -> DVector<Complex64> {
        let dim = b.dim();
        let mut psi = DVector::from_fn(dim, |i, _| {
            Complex64::new(
                1.0 + ((i * 29 + 7) % 13) as f64 * 0.21,
                ((i * 17 + 3) % 11) as f64 * 0.13 - 0.6,
            )
        });
        psi /= Complex64::new(psi.norm(), 0.0);
        psi
    }

    #[test]
    fn closed_hamiltonian_eigenprojector_is_stationary() {
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let (_, vectors) = linalg::eigh(&h.to_dense());
        let psi = DVector::from_column_slice(vectors.column(0).as_slice());
        let rho0 = DensityMatrix::pure(b.clone(), &psi).unwrap();
        let jump = staggered_jump(&b, C_ONE);
        let series = run_master(
            &rho0,
            &h,
            &jump,
            0.0,
            2.0,
            &MasterOptions::with_interval(0.5),
        )
        .unwrap();
        for (t, dm) in &series {
            let diff = linalg::max_abs(&(dm.matrix() - rho0.matrix()));
            assert!(diff < 1e-8, "state moved by {diff} at t = {t}");
        }
    }

    /// Exact dephasing law when the measured observable commutes with the
    /// Hamiltonian: in the joint eigenbasis
    /// `rho_ij(t) = exp[(-i(E_i - E_j) - kappa |C|^2 (B_i - B_j)^2) t] rho_ij(0)`.
    fn qnd_closed_form(
        h: &MatrixOperator,
        jump: &JumpOperator,
        kappa: f64,
        rho0: &DMatrix<Complex64>,
        t: f64,
    ) -> DMatrix<Complex64> {
        let h_dense = h.to_dense();
        let b_dense = jump.base().to_dense();
        let kappa_eff = kappa * jump.intensity_scale();
        // generic combination resolves the joint eigenbasis
        let combo = &h_dense + &b_dense * Complex64::new(0.3713719, 0.0);
        let (_, w) = linalg::eigh(&combo);
        let dim = h_dense.nrows();
        let mut energies = Vec::with_capacity(dim);
        let mut b_values = Vec::with_capacity(dim);
        for i in 0..dim {
            let v = w.column(i);
            let hv = &h_dense * v;
            let e = v.dotc(&hv).re;
            let residual = (hv - v * Complex64::new(e, 0.0)).norm();
            assert!(residual < 1e-8, "not a joint eigenbasis ({residual})");
            energies.push(e);
            let bv = &b_dense * v;
            b_values.push(v.dotc(&bv).re);
        }
        let rho_tilde = w.adjoint() * rho0 * &w;
        let evolved = DMatrix::from_fn(dim, dim, |i, j| {
            let phase = -(energies[i] - energies[j]) * t;
            let decay = -kappa_eff * (b_values[i] - b_values[j]).powi(2) * t;
            rho_tilde[(i, j)] * Complex64::from_polar(decay.exp(), phase)
        });
        &w * evolved * w.adjoint()
    }

    #[test]
    fn qnd_dephasing_matches_closed_form_on_both_paths() {
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let c_amp = Complex64::new(0.3, -0.4); // |C|^2 = 0.25
        let jump = uniform_jump(&b, c_amp);
        let kappa = 0.4;
        let psi = mixed_initial_state(&b);
        let rho0 = DensityMatrix::pure(b.clone(), &psi).unwrap();
        let t_final = 1.5;
        let expected = qnd_closed_form(&h, &jump, kappa, rho0.matrix(), t_final);
        for force_generic in [false, true] {
            let opts = MasterOptions {
                dt: Some(0.002),
                snapshot_interval: t_final,
                force_generic,
            };
            let series = run_master(&rho0, &h, &jump, kappa, t_final, &opts).unwrap();
            let (_, last) = series.last().unwrap();
            let diff = linalg::max_abs(&(last.matrix() - &expected));
            assert!(
                diff < 1e-6,
                "force_generic = {force_generic}: deviation {diff}"
            );
        }
    }

    #[test]
    fn fast_and_generic_paths_agree_for_noncommuting_pair() {
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let jump = staggered_jump(&b, C_ONE);
        let psi = mixed_initial_state(&b);
        let rho0 = DensityMatrix::pure(b.clone(), &psi).unwrap();
        let run = |force_generic: bool| {
            let opts = MasterOptions {
                dt: Some(0.002),
                snapshot_interval: 1.0,
                force_generic,
            };
            run_master(&rho0, &h, &jump, 0.1, 1.0, &opts).unwrap()
        };
        let fast = run(false);
        let generic = run(true);
        let diff = linalg::max_abs(&(fast.last().unwrap().1.matrix() - generic.last().unwrap().1.matrix()));
        assert!(diff < 1e-9, "paths disagree by {diff}");
    }

    #[test]
    fn trace_and_hermiticity_are_preserved() {
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let jump = staggered_jump(&b, C_ONE);
        let psi = mixed_initial_state(&b);
        let rho0 = DensityMatrix::pure(b.clone(), &psi).unwrap();
        let series = run_master(
            &rho0,
            &h,
            &jump,
            0.1,
            10.0,
            &MasterOptions::with_interval(2.0),
        )
        .unwrap();
        for (t, dm) in &series {
            assert!((dm.trace().re - 1.0).abs() < 1e-8, "trace drift at t = {t}");
            assert!(dm.hermiticity_defect() < 1e-12);
        }
    }

    #[test]
    fn cross_blocks_evolve_autonomously() {
        // The generator maps each projector-sandwiched block to itself:
        // P_M L[rho] P_N = L[P_M rho P_N].
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let jump = staggered_jump(&b, C_ONE);
        let kappa = 0.1;
        let measurement =
            eigenspace_projectors(jump.base(), DEFAULT_DEGENERACY_TOL).unwrap();
        let emergent = find_emergent_subspaces(&measurement, &h, DEFAULT_OVERLAP_TOL).unwrap();
        assert!(emergent.len() > 1, "need a nontrivial decomposition");
        let dim = b.dim();
        let h_dense = h.to_dense();
        let a = jump.matrix().to_dense();
        let a_dag = a.adjoint();
        let ada = &a_dag * &a;
        let lindblad = |rho: &DMatrix<Complex64>| -> DMatrix<Complex64> {
            let minus_i = Complex64::new(0.0, 1.0) * Complex64::new(-1.0, 0.0);
            let comm = &h_dense * rho - rho * &h_dense;
            let sandwich = &a * rho * &a_dag;
            let anti = &ada * rho + rho * &ada;
            comm.map(|z| minus_i * z) + (sandwich - anti * Complex64::new(0.5, 0.0)) * Complex64::new(2.0 * kappa, 0.0)
        };
        let psi = mixed_initial_state(&b);
        let rho = &psi * psi.adjoint();
        let full = lindblad(&rho);
        for pm in emergent.iter() {
            for pn in emergent.iter() {
                let proj_m = pm.matrix();
                let proj_n = pn.matrix();
                let block = &proj_m * &rho * &proj_n;
                let lhs = &proj_m * &full * &proj_n;
                let rhs = lindblad(&block);
                let diff = linalg::max_abs(&(lhs - rhs));
                assert!(diff < 1e-10, "block coupling leak {diff}");
            }
        }
    }

    #[test]
    fn trajectory_average_approaches_master_solution() {
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let jump = staggered_jump(&b, C_ONE);
        let kappa = 0.1;
        let psi0 = b.fock_state(&[0, 1, 1, 0]).unwrap();
        let total_time = 1.5;
        let cfg = TrajectoryConfig {
            kappa,
            total_time,
            max_dt: 0.005,
            seed: 2024,
            record_stride: 300,
        };
        let ensemble = run_ensemble(&psi0, &h, &jump, &cfg, 250).unwrap();
        let finals: Vec<DVector<Complex64>> = ensemble
            .iter()
            .map(|t| t.states.last().unwrap().clone())
            .collect();
        let averaged = DensityMatrix::mixture(b.clone(), &finals).unwrap();
        let rho0 = DensityMatrix::pure(b.clone(), &psi0).unwrap();
        let series = run_master(
            &rho0,
            &h,
            &jump,
            kappa,
            total_time,
            &MasterOptions::with_interval(total_time),
        )
        .unwrap();
        let exact = &series.last().unwrap().1;
        let dist = linalg::trace_distance(averaged.matrix(), exact.matrix());
        assert!(dist < 0.1, "trace distance {dist} too large for 250 samples");
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let b = basis(2, 28); // dimension 406
        assert_eq!(b.dim(), 406);
        let h = free_hamiltonian(&b);
        let jump = staggered_jump(&b, C_ONE);
        let psi = b.fock_state(&{
            let mut occ = vec![0u8; 28];
            occ[0] = 2;
            occ
        })
        .unwrap();
        let rho0 = DensityMatrix::pure(b.clone(), &psi).unwrap();
        assert!(matches!(
            run_master(
                &rho0,
                &h,
                &jump,
                0.1,
                1.0,
                &MasterOptions::with_interval(0.5)
            ),
            Err(Error::MasterDimensionCap { dim: 406, cap: 400 })
        ));
    }

    #[test]
    fn block_norm_bookkeeping() {
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let jump = staggered_jump(&b, C_ONE);
        let measurement =
            eigenspace_projectors(jump.base(), DEFAULT_DEGENERACY_TOL).unwrap();
        let emergent = find_emergent_subspaces(&measurement, &h, DEFAULT_OVERLAP_TOL).unwrap();
        // block-diagonal state: projector-weighted mixture
        let dim = b.dim();
        let mut rho = DMatrix::zeros(dim, dim);
        let mut weight_total = 0.0;
        for (i, p) in emergent.iter().enumerate() {
            let w = (i + 1) as f64;
            rho += p.matrix() * Complex64::new(w, 0.0);
            weight_total += w * p.dim() as f64;
        }
        rho /= Complex64::new(weight_total, 0.0);
        let dm = DensityMatrix::new(b.clone(), rho).unwrap();
        let norms = block_decompose(&dm, &emergent).unwrap();
        for i in 0..emergent.len() {
            for j in 0..emergent.len() {
                if i != j {
                    assert!(norms[(i, j)] < 1e-12);
                } else {
                    assert!(norms[(i, i)] > 0.0);
                }
            }
        }
        // diagonal-block traces of any valid state sum to one
        let psi = mixed_initial_state(&b);
        let pure = DensityMatrix::pure(b.clone(), &psi).unwrap();
        let mut population = 0.0;
        for p in emergent.iter() {
            population += (p.columns().adjoint() * pure.matrix() * p.columns()).trace().re;
        }
        assert!((population - 1.0).abs() < 1e-10);
    }
}
