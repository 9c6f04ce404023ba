//! Scattered-light operator construction.
//!
//! Two standing waves (probe and detected mode) illuminate the lattice; the
//! light couples to on-site densities through `D = Sum_m J_{m,m} n_m` and to
//! inter-site bonds through `B = Sum_m J_{m,m+1} p_m`. The coefficients come
//! from the convolution of the light-mode product with Wannier-function
//! overlaps, which for standing waves reduces to two cosine terms evaluated
//! at the sum and difference wavevectors. Two preset arrangements null the
//! density signal entirely: a uniform bond pattern (`B1`) and a staggered
//! sign pattern (`B2`).
//!
//! All lengths are in units of the lattice period; wavevector components are
//! stored in units of `pi/a`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fock::{self, Boundary, FockBasis};
use crate::operator::MatrixOperator;

/// Lowest-band Wannier function model. Only the gaussian approximation is
/// supported; every coupling below depends on the Wannier functions solely
/// through the Fourier transforms of `W0 = w^2` and of the nearest-neighbour
/// overlap `W1`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct WannierModel {
    /// Gaussian width in units of the lattice period.
    pub sigma: f64,
}

impl Default for WannierModel {
    fn default() -> Self {
        WannierModel { sigma: 0.2 }
    }
}

/// Which Wannier overlap to transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlap {
    /// Single-site density `w^2(x)`.
    W0,
    /// Nearest-neighbour product `w(x - a/2) w(x + a/2)`.
    W1,
}

/// Fourier transform of a Wannier overlap at wavevector `ka` (dimensionless).
///
/// For the gaussian model: `F[W0](k) = exp(-k^2 sigma^2 / 4)` and
/// `F[W1](k) = exp(-1/(4 sigma^2)) F[W0](k)`, normalized so `F[W0](0) = 1`.
pub fn fourier_overlap(model: &WannierModel, which: Overlap, ka: f64) -> f64 {
    let envelope = (-ka * ka * model.sigma * model.sigma / 4.0).exp();
    match which {
        Overlap::W0 => envelope,
        Overlap::W1 => (-1.0 / (4.0 * model.sigma * model.sigma)).exp() * envelope,
    }
}

/// Standing-wave illumination geometry.
#[derive(Debug, Clone, Copy)]
pub struct BeamGeometry {
    /// x-component of the incoming wavevector, in units of `pi/a`.
    pub kx_in: f64,
    /// x-component of the outgoing wavevector, in units of `pi/a`.
    pub kx_out: f64,
    /// Phase shift of the incoming standing wave (radians).
    pub phi_in: f64,
    /// Phase shift of the outgoing standing wave (radians).
    pub phi_out: f64,
    /// Rayleigh scattering amplitude.
    pub c_amp: Complex64,
    /// Number of illuminated sites (`K <= M`).
    pub illuminated: usize,
}

impl BeamGeometry {
    /// Sum and difference wavevectors `k_pm a = (kx_in +- kx_out) pi`.
    pub fn k_pm(&self) -> (f64, f64) {
        ((self.kx_in + self.kx_out) * PI, (self.kx_in - self.kx_out) * PI)
    }

    /// Sum and difference phases `phi_pm = phi_in +- phi_out`.
    pub fn phi_pm(&self) -> (f64, f64) {
        (self.phi_in + self.phi_out, self.phi_in - self.phi_out)
    }

    /// Crossed beams at the diffraction maximum with the density signal
    /// nulled by interference; every bond couples with the same strength.
    ///
    /// The difference phase is fixed by requiring the on-site term to vanish:
    /// `cos(phi_minus) = F[W0](2 pi/a) / F[W0](0)`.
    pub fn uniform_b1(model: &WannierModel, c_amp: Complex64, sites: usize) -> Self {
        let ratio = fourier_overlap(model, Overlap::W0, 2.0 * PI)
            / fourier_overlap(model, Overlap::W0, 0.0);
        let phi_minus = ratio.clamp(-1.0, 1.0).acos();
        let phi_plus = PI;
        BeamGeometry {
            kx_in: 1.0,
            kx_out: 1.0,
            phi_in: 0.5 * (phi_plus + phi_minus),
            phi_out: 0.5 * (phi_plus - phi_minus),
            c_amp,
            illuminated: sites,
        }
    }

    /// Probe along the lattice normal, detection at the diffraction minimum
    /// with sites at the nodes of the detected mode; bonds couple with
    /// alternating signs `(-1)^m J2`, `J2 = -F[W1](pi/a) cos(phi_in)`.
    pub fn alternating_b2(phi_in: f64, c_amp: Complex64, sites: usize) -> Self {
        BeamGeometry {
            kx_in: 0.0,
            kx_out: 1.0,
            phi_in,
            phi_out: PI / 2.0,
            c_amp,
            illuminated: sites,
        }
    }
}

/// Site-resolved coupling coefficients of the scattered-light operator.
///
/// `diag[m] = J_{m,m}` for the illuminated sites; `bond[m] = J_{m,m+1}` for
/// the bonds between them. Full illumination of a ring (`K = M`) includes
/// the wrap-around bond, partial illumination leaves `K - 1` interior bonds.
#[derive(Debug, Clone)]
pub struct CouplingCoefficients {
    pub diag: Vec<f64>,
    pub bond: Vec<f64>,
}

impl CouplingCoefficients {
    /// Direct uniform bond pattern with the density term suppressed.
    pub fn uniform(j1: f64, sites: usize) -> Self {
        CouplingCoefficients {
            diag: vec![0.0; sites],
            bond: vec![j1; sites],
        }
    }

    /// Direct alternating bond pattern `(-1)^m j2`. Needs an even site count
    /// for the sign pattern to close around the ring.
    pub fn alternating(j2: f64, sites: usize) -> Result<Self> {
        if sites % 2 != 0 {
            return Err(Error::OddSiteCount { n_sites: sites });
        }
        Ok(CouplingCoefficients {
            diag: vec![0.0; sites],
            bond: (0..sites)
                .map(|m| if m % 2 == 0 { j2 } else { -j2 })
                .collect(),
        })
    }

    pub fn illuminated_sites(&self) -> usize {
        self.diag.len()
    }
}

/// Evaluate the standing-wave coupling coefficients
///
/// `J_{m,m}   = (1/2) [ F[W0](k-) cos(k- x_m + phi-) + F[W0](k+) cos(k+ x_m + phi+) ]`
/// `J_{m,m+1} = (1/2) [ F[W1](k-) cos(k- (x_m + 1/2) + phi-) + F[W1](k+) cos(k+ (x_m + 1/2) + phi+) ]`
///
/// with `x_m = m` in lattice-period units.
pub fn coupling_coefficients(
    geom: &BeamGeometry,
    model: &WannierModel,
    n_sites: usize,
) -> Result<CouplingCoefficients> {
    let k = geom.illuminated;
    if k > n_sites || k == 0 {
        return Err(Error::Config(format!(
            "illuminated site count {k} invalid for a {n_sites}-site lattice"
        )));
    }
    let (k_plus, k_minus) = geom.k_pm();
    let (phi_plus, phi_minus) = geom.phi_pm();
    let f0_minus = fourier_overlap(model, Overlap::W0, k_minus);
    let f0_plus = fourier_overlap(model, Overlap::W0, k_plus);
    let f1_minus = fourier_overlap(model, Overlap::W1, k_minus);
    let f1_plus = fourier_overlap(model, Overlap::W1, k_plus);

    let diag = (0..k)
        .map(|m| {
            let x = m as f64;
            0.5 * (f0_minus * (k_minus * x + phi_minus).cos()
                + f0_plus * (k_plus * x + phi_plus).cos())
        })
        .collect();
    let n_bonds = if k == n_sites { n_sites } else { k - 1 };
    let bond = (0..n_bonds)
        .map(|m| {
            let x = m as f64 + 0.5;
            0.5 * (f1_minus * (k_minus * x + phi_minus).cos()
                + f1_plus * (k_plus * x + phi_plus).cos())
        })
        .collect();
    Ok(CouplingCoefficients { diag, bond })
}

/// Density-coupling operator `D = Sum_m J_{m,m} n_m`.
pub fn build_density_operator(
    coeffs: &CouplingCoefficients,
    basis: &Arc<FockBasis>,
) -> Result<MatrixOperator> {
    let m_sites = basis.n_sites();
    if coeffs.diag.len() > m_sites {
        return Err(Error::CoefficientLengthMismatch {
            expected: m_sites,
            got: coeffs.diag.len(),
        });
    }
    let mut c = DMatrix::zeros(m_sites, m_sites);
    for (m, &j) in coeffs.diag.iter().enumerate() {
        c[(m, m)] = Complex64::new(j, 0.0);
    }
    Ok(fock::one_body_operator(basis, &c))
}

/// Bond-coupling operator `B = Sum_m J_{m,m+1} p_m`.
pub fn build_bond_operator(
    coeffs: &CouplingCoefficients,
    basis: &Arc<FockBasis>,
    boundary: Boundary,
) -> Result<MatrixOperator> {
    let m_sites = basis.n_sites();
    if coeffs.bond.len() > m_sites {
        return Err(Error::CoefficientLengthMismatch {
            expected: m_sites,
            got: coeffs.bond.len(),
        });
    }
    let mut c = DMatrix::zeros(m_sites, m_sites);
    for (bond, &j) in coeffs.bond.iter().enumerate() {
        if j == 0.0 {
            continue;
        }
        let hi = if bond == m_sites - 1 {
            match boundary {
                Boundary::Periodic => 0,
                Boundary::Open => return Err(Error::OpenBoundaryWrap { site: bond }),
            }
        } else {
            bond + 1
        };
        c[(bond, hi)] += Complex64::new(j, 0.0);
        c[(hi, bond)] += Complex64::new(j, 0.0);
    }
    Ok(fock::one_body_operator(basis, &c))
}

/// The scattered-light jump operator `a = C (D + B)`.
///
/// The complex amplitude is kept factored from the Hermitian matter part:
/// photodetection physics only sees `|C|^2` and the Hermitian part, which
/// downstream integrators exploit.
#[derive(Debug, Clone)]
pub struct JumpOperator {
    scale: Complex64,
    base: MatrixOperator,
}

impl JumpOperator {
    pub fn new(scale: Complex64, base: MatrixOperator) -> Self {
        JumpOperator { scale, base }
    }

    /// Hermitian matter part `D + B`.
    pub fn base(&self) -> &MatrixOperator {
        &self.base
    }

    pub fn scale(&self) -> Complex64 {
        self.scale
    }

    pub fn basis(&self) -> &Arc<FockBasis> {
        self.base.basis()
    }

    /// |C|^2, the intensity factor multiplying every detection rate.
    pub fn intensity_scale(&self) -> f64 {
        self.scale.norm_sqr()
    }

    /// Materialize `a = C (D + B)` as a matrix operator.
    pub fn matrix(&self) -> MatrixOperator {
        self.base.scaled(self.scale)
    }

    /// `a |psi>`.
    pub fn apply(&self, psi: &nalgebra::DVector<Complex64>) -> nalgebra::DVector<Complex64> {
        let mut out = self.base.apply(psi);
        out *= self.scale;
        out
    }
}

/// Assemble `a = C (D + B)` from separately built parts.
pub fn build_jump_operator(
    c_amp: Complex64,
    density: &MatrixOperator,
    bond: &MatrixOperator,
) -> Result<JumpOperator> {
    density.same_basis(bond)?;
    Ok(JumpOperator::new(c_amp, density.add(bond)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_hamiltonian, FockBasis, LatticeSpec};
    use crate::linalg;
    use nalgebra::DVector;

    const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

    fn basis(n: usize, m: usize) -> Arc<FockBasis> {
        Arc::new(FockBasis::new(n, m).unwrap())
    }

    /// Composite Simpson quadrature on [-half_width, half_width].
    fn simpson<F: Fn(f64) -> f64>(f: F, half_width: f64, intervals: usize) -> f64 {
        let n = intervals + intervals % 2;
        let h = 2.0 * half_width / n as f64;
        let mut acc = f(-half_width) + f(half_width);
        for i in 1..n {
            let x = -half_width + i as f64 * h;
            acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    fn wannier(model: &WannierModel, x: f64) -> f64 {
        let s2 = model.sigma * model.sigma;
        (PI * s2).powf(-0.25) * (-x * x / (2.0 * s2)).exp()
    }

    #[test]
    fn w0_transform_is_normalized_and_matches_quadrature() {
        let model = WannierModel { sigma: 0.2 };
        assert!((fourier_overlap(&model, Overlap::W0, 0.0) - 1.0).abs() < 1e-14);
        for ka in [0.0, 1.0, PI, 2.0 * PI] {
            let numeric = simpson(
                |x| wannier(&model, x).powi(2) * (ka * x).cos(),
                3.0,
                4000,
            );
            let analytic = fourier_overlap(&model, Overlap::W0, ka);
            assert!(
                (numeric - analytic).abs() < 1e-8 * analytic.abs().max(1.0),
                "F[W0]({ka}) quadrature {numeric} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn w1_transform_matches_quadrature_and_ratio() {
        let model = WannierModel { sigma: 0.2 };
        let ratio = fourier_overlap(&model, Overlap::W1, 0.0)
            / fourier_overlap(&model, Overlap::W0, 0.0);
        assert!((ratio - (-1.0f64 / (4.0 * 0.04)).exp()).abs() < 1e-14);
        for ka in [0.0, PI, 2.0 * PI] {
            let numeric = simpson(
                |x| wannier(&model, x - 0.5) * wannier(&model, x + 0.5) * (ka * x).cos(),
                3.5,
                4000,
            );
            let analytic = fourier_overlap(&model, Overlap::W1, ka);
            assert!(
                (numeric - analytic).abs() < 1e-8 * analytic.abs().max(1e-3),
                "F[W1]({ka}) quadrature {numeric} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn w0_plugin_value_at_twice_recoil() {
        let model = WannierModel { sigma: 0.2 };
        let value = fourier_overlap(&model, Overlap::W0, 2.0 * PI);
        assert!((value - (-(2.0 * PI * 0.2f64).powi(2) / 4.0).exp()).abs() < 1e-14);
        assert!((value - 0.674).abs() < 1e-3);
    }

    #[test]
    fn uniform_geometry_suppresses_density_coupling() {
        let model = WannierModel { sigma: 0.2 };
        let geom = BeamGeometry::uniform_b1(&model, C_ONE, 8);
        let coeffs = coupling_coefficients(&geom, &model, 8).unwrap();
        let max_bond = coeffs.bond.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for &d in &coeffs.diag {
            assert!(d.abs() < 1e-12 * max_bond, "diag {d} not suppressed");
        }
        // Every bond carries the same J1; for the gaussian model the nulling
        // phase gives J1 = F[W1](2 pi / a).
        let expected = fourier_overlap(&model, Overlap::W1, 2.0 * PI);
        for &b in &coeffs.bond {
            assert!((b - expected).abs() < 1e-12, "bond {b} vs {expected}");
        }
    }

    #[test]
    fn alternating_geometry_gives_staggered_bonds() {
        let model = WannierModel { sigma: 0.2 };
        let phi_in = 0.3;
        let geom = BeamGeometry::alternating_b2(phi_in, C_ONE, 8);
        let coeffs = coupling_coefficients(&geom, &model, 8).unwrap();
        let j2 = -fourier_overlap(&model, Overlap::W1, PI) * phi_in.cos();
        for (m, &b) in coeffs.bond.iter().enumerate() {
            let expected = if m % 2 == 0 { j2 } else { -j2 };
            assert!((b - expected).abs() < 1e-12, "bond {m}: {b} vs {expected}");
        }
        for &d in &coeffs.diag {
            assert!(d.abs() < 1e-14);
        }
        for m in 0..coeffs.bond.len() - 1 {
            assert!(coeffs.bond[m] * coeffs.bond[m + 1] < 0.0);
        }
    }

    #[test]
    fn generic_angles_match_direct_quadrature() {
        let model = WannierModel { sigma: 0.2 };
        let geom = BeamGeometry {
            kx_in: 0.3,
            kx_out: 0.7,
            phi_in: 0.0,
            phi_out: 0.0,
            c_amp: C_ONE,
            illuminated: 6,
        };
        let coeffs = coupling_coefficients(&geom, &model, 6).unwrap();
        let mode = |x: f64, kx: f64, phi: f64| (kx * PI * x + phi).cos();
        let j_quad = |site_m: usize, site_n: usize| {
            simpson(
                |x| {
                    wannier(&model, x - site_m as f64)
                        * mode(x, geom.kx_out, geom.phi_out)
                        * mode(x, geom.kx_in, geom.phi_in)
                        * wannier(&model, x - site_n as f64)
                },
                10.0,
                20000,
            )
        };
        for m in 0..6 {
            let direct = j_quad(m, m);
            assert!(
                (coeffs.diag[m] - direct).abs() < 1e-8,
                "diag {m}: {} vs quadrature {direct}",
                coeffs.diag[m]
            );
        }
        for m in 0..5 {
            let direct = j_quad(m, m + 1);
            assert!(
                (coeffs.bond[m] - direct).abs() < 1e-8,
                "bond {m}: {} vs quadrature {direct}",
                coeffs.bond[m]
            );
        }
        // bond couplings carry the nearest-neighbour overlap suppression
        // exp(-1/(4 sigma^2)); nonzero is all that matters here
        assert!(coeffs.diag.iter().any(|d| d.abs() > 1e-3));
        assert!(coeffs.bond.iter().any(|b| b.abs() > 1e-4));
    }

    #[test]
    fn uniform_bond_operator_is_proportional_to_free_hamiltonian() {
        let b = basis(2, 6);
        let j1 = 0.8;
        let coeffs = CouplingCoefficients::uniform(j1, 6);
        let b1 = build_bond_operator(&coeffs, &b, Boundary::Periodic).unwrap();
        let h = build_hamiltonian(
            &b,
            &LatticeSpec {
                j: 1.3,
                u: 0.0,
                boundary: Boundary::Periodic,
            },
        );
        // B1 = -(J1 / J) H0 at U = 0
        let scaled_h = h.scaled(Complex64::new(-j1 / 1.3, 0.0));
        assert!(b1.max_abs_diff(&scaled_h).unwrap() < 1e-12);
    }

    #[test]
    fn uniform_bond_matches_momentum_form() {
        let b = basis(2, 6);
        let j1 = 0.7;
        let real_space =
            build_bond_operator(&CouplingCoefficients::uniform(j1, 6), &b, Boundary::Periodic)
                .unwrap();
        let momentum = fock::uniform_bond_momentum(&b, j1).unwrap();
        assert!(real_space.max_abs_diff(&momentum).unwrap() < 1e-10);
    }

    #[test]
    fn alternating_bond_matches_momentum_and_beta_forms() {
        let b = basis(2, 8);
        let j2 = 1.0;
        let real_space = build_bond_operator(
            &CouplingCoefficients::alternating(j2, 8).unwrap(),
            &b,
            Boundary::Periodic,
        )
        .unwrap();
        let momentum = fock::alternating_bond_momentum(&b, j2).unwrap();
        let beta = fock::alternating_bond_beta(&b, j2).unwrap();
        assert!(real_space.max_abs_diff(&momentum).unwrap() < 1e-10);
        assert!(real_space.max_abs_diff(&beta).unwrap() < 1e-10);
    }

    #[test]
    fn staggered_bond_signal_vanishes_in_mean_but_not_in_variance() {
        // single particle spread uniformly over the ring: zero mean (and in
        // fact a dark state, since the k = 0 mode carries no sine signal)
        let b = basis(1, 4);
        let dim = b.dim();
        let psi = DVector::from_element(dim, Complex64::new(0.5, 0.0));
        let b2 = build_bond_operator(
            &CouplingCoefficients::alternating(1.0, 4).unwrap(),
            &b,
            Boundary::Periodic,
        )
        .unwrap();
        assert!(b2.expectation(&psi).norm() < 1e-12);

        // unit-filled Fock state: zero mean but finite variance
        let b4 = basis(4, 4);
        let fock_state = b4.fock_state(&[1, 1, 1, 1]).unwrap();
        let b2_full = build_bond_operator(
            &CouplingCoefficients::alternating(1.0, 4).unwrap(),
            &b4,
            Boundary::Periodic,
        )
        .unwrap();
        assert!(b2_full.expectation(&fock_state).norm() < 1e-12);
        assert!(b2_full.apply(&fock_state).norm_squared() > 0.1);
    }

    #[test]
    fn zero_coefficients_build_zero_operator() {
        let b = basis(2, 4);
        let coeffs = CouplingCoefficients {
            diag: vec![0.0; 4],
            bond: vec![0.0; 4],
        };
        let d = build_density_operator(&coeffs, &b).unwrap();
        let bond = build_bond_operator(&coeffs, &b, Boundary::Periodic).unwrap();
        assert_eq!(d.nnz(), 0);
        assert_eq!(bond.nnz(), 0);
    }

    #[test]
    fn jump_operator_reduces_to_bond_part() {
        let b = basis(2, 4);
        let coeffs = CouplingCoefficients::alternating(1.0, 4).unwrap();
        let d = build_density_operator(&coeffs, &b).unwrap();
        let bond = build_bond_operator(&coeffs, &b, Boundary::Periodic).unwrap();
        let jump = build_jump_operator(C_ONE, &d, &bond).unwrap();
        assert!(jump.matrix().max_abs_diff(&bond).unwrap() < 1e-15);
    }

    #[test]
    fn jump_operator_rejects_mismatched_bases() {
        let d = MatrixOperator::zeros(basis(2, 4));
        let bond = MatrixOperator::zeros(basis(1, 4));
        assert!(matches!(
            build_jump_operator(C_ONE, &d, &bond),
            Err(Error::BasisMismatch)
        ));
    }

    #[test]
    fn intensity_operator_is_positive_semidefinite() {
        let b = basis(2, 4);
        let coeffs = CouplingCoefficients::alternating(1.0, 4).unwrap();
        let bond = build_bond_operator(&coeffs, &b, Boundary::Periodic).unwrap();
        let d = build_density_operator(&coeffs, &b).unwrap();
        let jump = build_jump_operator(Complex64::new(0.4, -0.9), &d, &bond).unwrap();
        let a = jump.matrix().to_dense();
        let intensity = a.adjoint() * &a;
        assert!(linalg::hermiticity_defect(&intensity) < 1e-12);
        let (values, _) = linalg::eigh(&intensity);
        assert!(values[0] > -1e-10);
    }

    #[test]
    fn free_hamiltonian_commutes_with_uniform_but_not_staggered_pattern() {
        // On four sites the staggered pattern happens to commute too (the
        // only modes with a sine signal sit where the dispersion vanishes),
        // so the non-commutation statement needs six or more sites.
        let b = basis(2, 8);
        let h = build_hamiltonian(
            &b,
            &LatticeSpec {
                j: 1.0,
                u: 0.0,
                boundary: Boundary::Periodic,
            },
        );
        let b1 =
            build_bond_operator(&CouplingCoefficients::uniform(1.0, 8), &b, Boundary::Periodic)
                .unwrap();
        let b2 = build_bond_operator(
            &CouplingCoefficients::alternating(1.0, 8).unwrap(),
            &b,
            Boundary::Periodic,
        )
        .unwrap();
        assert!(h.commutator_max_abs(&b1).unwrap() < 1e-12);
        assert!(h.commutator_max_abs(&b2).unwrap() > 0.1);
        let b4 = basis(2, 4);
        let h4 = build_hamiltonian(
            &b4,
            &LatticeSpec {
                j: 1.0,
                u: 0.0,
                boundary: Boundary::Periodic,
            },
        );
        let b2_four = build_bond_operator(
            &CouplingCoefficients::alternating(1.0, 4).unwrap(),
            &b4,
            Boundary::Periodic,
        )
        .unwrap();
        assert!(h4.commutator_max_abs(&b2_four).unwrap() < 1e-12);
        // both patterns conserve total atom number
        let n_tot = fock::number_operator(&b);
        assert!(b1.commutator_max_abs(&n_tot).unwrap() < 1e-12);
        assert!(b2.commutator_max_abs(&n_tot).unwrap() < 1e-12);
    }

    #[test]
    fn partial_illumination_truncates_bond_list() {
        let model = WannierModel::default();
        let geom = BeamGeometry {
            kx_in: 0.3,
            kx_out: 0.7,
            phi_in: 0.1,
            phi_out: 0.2,
            c_amp: C_ONE,
            illuminated: 3,
        };
        let coeffs = coupling_coefficients(&geom, &model, 8).unwrap();
        assert_eq!(coeffs.diag.len(), 3);
        assert_eq!(coeffs.bond.len(), 2);
        let b = basis(2, 8);
        assert!(build_bond_operator(&coeffs, &b, Boundary::Open).is_ok());
        assert!(build_density_operator(&coeffs, &b).is_ok());
    }
}
