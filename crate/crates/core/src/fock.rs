//! Fock-space representation of bosons on a one-dimensional lattice.
//!
//! The basis enumerates all occupation vectors of `N` atoms on `M` sites in
//! lexicographically descending order, so indices (and everything derived
//! from them: golden files, seeded runs) are stable across runs. Operators
//! are assembled from one-body coefficient matrices `C_{mn}` through
//! `Sum_{m,n} C_{mn} b^dag_m b_n`.
//!
//! Momentum modes live on the discrete grid `k_j a = 2 pi j / M` with
//! `j in {-M/2+1, ..., M/2}`; the reduced zone is `j in {1, ..., M/2}`
//! (even `M` puts `pi/a` on the grid, which the mode-pair observables need).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::MatrixOperator;

/// Default cap on the Fock-space dimension.
pub const DEFAULT_DIMENSION_CAP: usize = 20_000;

/// Lattice boundary condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Bose-Hubbard parameters. Energies are in units of the inverse time of the
/// evolution (hbar = 1); lengths enter only through dimensionless `k a`.
#[derive(Debug, Clone, Copy)]
pub struct LatticeSpec {
    /// Hopping amplitude.
    pub j: f64,
    /// On-site interaction.
    pub u: f64,
    pub boundary: Boundary,
}

/// Ordered basis of occupation states for `N` bosons on `M` sites.
#[derive(Debug)]
pub struct FockBasis {
    n_atoms: usize,
    n_sites: usize,
    states: Vec<Vec<u8>>,
    index_of: HashMap<Vec<u8>, usize>,
}

/// Binomial coefficient in u128, saturating on overflow.
fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

impl FockBasis {
    /// Build the complete basis with the default dimension cap.
    pub fn new(n_atoms: usize, n_sites: usize) -> Result<Self> {
        Self::with_cap(n_atoms, n_sites, DEFAULT_DIMENSION_CAP)
    }

    pub fn with_cap(n_atoms: usize, n_sites: usize, cap: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::NoSites);
        }
        let required = binomial((n_atoms + n_sites - 1) as u64, n_atoms as u64);
        if required > cap as u128 {
            return Err(Error::DimensionOverflow { required, cap });
        }
        let mut states = Vec::with_capacity(required as usize);
        let mut current = vec![0u8; n_sites];
        fill_descending(&mut states, &mut current, 0, n_atoms);
        let index_of = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(FockBasis {
            n_atoms,
            n_sites,
            states,
            index_of,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Vec<u8>] {
        &self.states
    }

    pub fn state(&self, index: usize) -> &[u8] {
        &self.states[index]
    }

    pub fn index_of(&self, occupations: &[u8]) -> Option<usize> {
        self.index_of.get(occupations).copied()
    }

    /// Unit vector for a single occupation state.
    pub fn fock_state(&self, occupations: &[u8]) -> Result<nalgebra::DVector<Complex64>> {
        let idx = self.index_of(occupations).ok_or_else(|| {
            Error::Config(format!(
                "occupation vector {occupations:?} is not a state of {} atoms on {} sites",
                self.n_atoms, self.n_sites
            ))
        })?;
        let mut v = nalgebra::DVector::zeros(self.dim());
        v[idx] = Complex64::new(1.0, 0.0);
        Ok(v)
    }
}

fn fill_descending(out: &mut Vec<Vec<u8>>, current: &mut Vec<u8>, site: usize, remaining: usize) {
    if site == current.len() - 1 {
        current[site] = remaining as u8;
        out.push(current.clone());
        current[site] = 0;
        return;
    }
    for occ in (0..=remaining).rev() {
        current[site] = occ as u8;
        fill_descending(out, current, site + 1, remaining - occ);
    }
    current[site] = 0;
}

/// Triplets of `Sum_{m,n} C_{mn} b^dag_m b_n` in the given basis.
fn one_body_triplets(
    basis: &FockBasis,
    coeffs: &DMatrix<Complex64>,
) -> Vec<(usize, usize, Complex64)> {
    let m_sites = basis.n_sites();
    assert_eq!(coeffs.nrows(), m_sites);
    assert_eq!(coeffs.ncols(), m_sites);
    let mut nonzero = Vec::new();
    for m in 0..m_sites {
        for n in 0..m_sites {
            if coeffs[(m, n)] != Complex64::new(0.0, 0.0) {
                nonzero.push((m, n, coeffs[(m, n)]));
            }
        }
    }
    let mut triplets = Vec::with_capacity(basis.dim() * nonzero.len());
    let mut scratch = vec![0u8; m_sites];
    for (col, state) in basis.states().iter().enumerate() {
        for &(m, n, c) in &nonzero {
            if m == n {
                if state[m] > 0 {
                    triplets.push((col, col, c * state[m] as f64));
                }
            } else if state[n] > 0 {
                scratch.copy_from_slice(state);
                scratch[n] -= 1;
                scratch[m] += 1;
                let amp = ((state[m] as f64 + 1.0) * state[n] as f64).sqrt();
                let row = basis
                    .index_of(&scratch)
                    .expect("one-body move stays in the fixed-N basis");
                triplets.push((row, col, c * amp));
            }
        }
    }
    triplets
}

/// `Sum_{m,n} C_{mn} b^dag_m b_n` as a sparse operator. The Hermitian flag is
/// inherited from the coefficient matrix.
pub fn one_body_operator(basis: &Arc<FockBasis>, coeffs: &DMatrix<Complex64>) -> MatrixOperator {
    let scale = coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let hermitian = crate::linalg::hermiticity_defect(coeffs) <= 1e-13 * scale;
    MatrixOperator::from_triplets(basis.clone(), one_body_triplets(basis, coeffs), hermitian)
}

/// Total-number operator.
pub fn number_operator(basis: &Arc<FockBasis>) -> MatrixOperator {
    let m = basis.n_sites();
    one_body_operator(basis, &DMatrix::identity(m, m))
}

/// On-site number operator for one site.
pub fn site_number_operator(basis: &Arc<FockBasis>, site: usize) -> Result<MatrixOperator> {
    let m = basis.n_sites();
    if site >= m {
        return Err(Error::SiteOutOfRange {
            site,
            n_sites: m,
        });
    }
    let mut coeffs = DMatrix::zeros(m, m);
    coeffs[(site, site)] = Complex64::new(1.0, 0.0);
    Ok(one_body_operator(basis, &coeffs))
}

/// Resolve a bond index to its site pair, honoring the boundary condition.
fn bond_sites(m_sites: usize, bond: usize, boundary: Boundary) -> Result<(usize, usize)> {
    if bond >= m_sites || m_sites == 1 {
        return Err(Error::SiteOutOfRange {
            site: bond,
            n_sites: m_sites,
        });
    }
    if bond == m_sites - 1 {
        match boundary {
            Boundary::Periodic => Ok((bond, 0)),
            Boundary::Open => Err(Error::OpenBoundaryWrap { site: bond }),
        }
    } else {
        Ok((bond, bond + 1))
    }
}

/// Bond indices available for a boundary condition.
pub fn bond_range(m_sites: usize, boundary: Boundary) -> std::ops::Range<usize> {
    match boundary {
        Boundary::Periodic if m_sites > 1 => 0..m_sites,
        _ => 0..m_sites.saturating_sub(1),
    }
}

/// Symmetric hop on one bond, `b^dag_m b_{m+1} + b_m b^dag_{m+1}`.
pub fn hopping_operator(
    basis: &Arc<FockBasis>,
    bond: usize,
    boundary: Boundary,
) -> Result<MatrixOperator> {
    let m_sites = basis.n_sites();
    let (lo, hi) = bond_sites(m_sites, bond, boundary)?;
    let mut coeffs = DMatrix::zeros(m_sites, m_sites);
    coeffs[(lo, hi)] = Complex64::new(1.0, 0.0);
    coeffs[(hi, lo)] = Complex64::new(1.0, 0.0);
    Ok(one_body_operator(basis, &coeffs))
}

/// Bose-Hubbard Hamiltonian `-J Sum_m p_m + (U/2) Sum_m n_m (n_m - 1)`.
pub fn build_hamiltonian(basis: &Arc<FockBasis>, spec: &LatticeSpec) -> MatrixOperator {
    let m_sites = basis.n_sites();
    let mut coeffs = DMatrix::zeros(m_sites, m_sites);
    for bond in bond_range(m_sites, spec.boundary) {
        let (lo, hi) = bond_sites(m_sites, bond, spec.boundary).expect("bond range is valid");
        coeffs[(lo, hi)] += Complex64::new(-spec.j, 0.0);
        coeffs[(hi, lo)] += Complex64::new(-spec.j, 0.0);
    }
    let mut triplets = one_body_triplets(basis, &coeffs);
    if spec.u != 0.0 {
        for (idx, state) in basis.states().iter().enumerate() {
            let interaction: f64 = state
                .iter()
                .map(|&n| (n as f64) * (n as f64 - 1.0))
                .sum();
            if interaction != 0.0 {
                triplets.push((idx, idx, Complex64::new(0.5 * spec.u * interaction, 0.0)));
            }
        }
    }
    MatrixOperator::from_triplets(basis.clone(), triplets, true)
}

/// Discrete momentum grid for an `M`-site ring.
#[derive(Debug, Clone, Copy)]
pub struct MomentumGrid {
    n_sites: usize,
}

impl MomentumGrid {
    pub fn new(n_sites: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::NoSites);
        }
        Ok(MomentumGrid { n_sites })
    }

    /// All grid indices `j`, with `k_j a = 2 pi j / M`.
    pub fn indices(&self) -> Vec<i64> {
        let m = self.n_sites as i64;
        (-((m - 1) / 2)..=(m / 2)).collect()
    }

    pub fn contains(&self, j: i64) -> bool {
        let m = self.n_sites as i64;
        j >= -((m - 1) / 2) && j <= m / 2
    }

    pub fn ka(&self, j: i64) -> f64 {
        2.0 * PI * j as f64 / self.n_sites as f64
    }

    /// Reduced-zone indices `j in {1, ..., M/2}` (`0 < k a <= pi`); requires
    /// even `M` so that the paired mode `k - pi/a` stays on the grid.
    pub fn rbz_indices(&self) -> Result<Vec<i64>> {
        if self.n_sites % 2 != 0 {
            return Err(Error::OddSiteCount {
                n_sites: self.n_sites,
            });
        }
        Ok((1..=(self.n_sites as i64 / 2)).collect())
    }

    fn check(&self, j: i64) -> Result<()> {
        if self.contains(j) {
            Ok(())
        } else {
            Err(Error::MomentumOffGrid {
                index: j,
                n_sites: self.n_sites,
            })
        }
    }
}

/// exp(2 pi i numerator / m), with the angle reduced exactly first.
fn unit_phase(numerator: i64, m: usize) -> Complex64 {
    let r = numerator.rem_euclid(m as i64);
    Complex64::from_polar(1.0, 2.0 * PI * r as f64 / m as f64)
}

/// Coefficient matrix of `c^dag_{k_dst} c_{k_src}` in the site basis,
/// with `c_k = M^{-1/2} Sum_m e^{i k m a} b_m`.
fn momentum_hop_coeffs(m_sites: usize, j_dst: i64, j_src: i64) -> DMatrix<Complex64> {
    let norm = 1.0 / m_sites as f64;
    DMatrix::from_fn(m_sites, m_sites, |m, n| {
        unit_phase(-j_dst * m as i64 + j_src * n as i64, m_sites) * norm
    })
}

/// Momentum-mode hop `c^dag_{k_dst} c_{k_src}`.
pub fn momentum_hop_operator(
    basis: &Arc<FockBasis>,
    j_dst: i64,
    j_src: i64,
) -> Result<MatrixOperator> {
    let grid = MomentumGrid::new(basis.n_sites())?;
    grid.check(j_dst)?;
    grid.check(j_src)?;
    Ok(one_body_operator(
        basis,
        &momentum_hop_coeffs(basis.n_sites(), j_dst, j_src),
    ))
}

/// Momentum-mode number operator `n_k = c^dag_k c_k`.
pub fn momentum_number_operator(basis: &Arc<FockBasis>, j: i64) -> Result<MatrixOperator> {
    momentum_hop_operator(basis, j, j)
}

/// Conserved pair-occupation observable `O_k = n_k + n_{k - pi/a}` for `k` in
/// the reduced zone. Requires an even site count.
pub fn conserved_observable(basis: &Arc<FockBasis>, j: i64) -> Result<MatrixOperator> {
    let m_sites = basis.n_sites();
    if m_sites % 2 != 0 {
        return Err(Error::OddSiteCount { n_sites: m_sites });
    }
    let half = m_sites as i64 / 2;
    if j < 1 || j > half {
        return Err(Error::OutsideReducedZone {
            index: j,
            n_sites: m_sites,
        });
    }
    let coeffs = momentum_hop_coeffs(m_sites, j, j) + momentum_hop_coeffs(m_sites, j - half, j - half);
    Ok(one_body_operator(basis, &coeffs))
}

/// Uniform bond observable in its momentum form,
/// `2 J1 Sum_k cos(k a) n_k`.
pub fn uniform_bond_momentum(basis: &Arc<FockBasis>, j1: f64) -> Result<MatrixOperator> {
    let m_sites = basis.n_sites();
    let grid = MomentumGrid::new(m_sites)?;
    let mut coeffs = DMatrix::zeros(m_sites, m_sites);
    for j in grid.indices() {
        coeffs += momentum_hop_coeffs(m_sites, j, j) * Complex64::new(2.0 * j1 * grid.ka(j).cos(), 0.0);
    }
    Ok(one_body_operator(basis, &coeffs))
}

/// Alternating bond observable in its momentum form,
/// `2 i J2 Sum_k sin(k a) c^dag_k c_{k - pi/a}`. Requires even `M`.
pub fn alternating_bond_momentum(basis: &Arc<FockBasis>, j2: f64) -> Result<MatrixOperator> {
    let m_sites = basis.n_sites();
    if m_sites % 2 != 0 {
        return Err(Error::OddSiteCount { n_sites: m_sites });
    }
    let grid = MomentumGrid::new(m_sites)?;
    let half = m_sites as i64 / 2;
    let mut coeffs = DMatrix::zeros(m_sites, m_sites);
    for j in grid.indices() {
        let weight = Complex64::new(0.0, 2.0 * j2 * grid.ka(j).sin());
        if weight.norm() == 0.0 {
            continue;
        }
        coeffs += momentum_hop_coeffs(m_sites, j, j - half) * weight;
    }
    Ok(one_body_operator(basis, &coeffs))
}

/// Alternating bond observable in its paired-mode diagonal form,
/// `2 J2 Sum_RBZ sin(k a) (beta^dag_k beta_k - betat^dag_k betat_k)` with
/// `beta_k = (c_k + i c_{k - pi/a}) / sqrt(2)`. Requires even `M`.
pub fn alternating_bond_beta(basis: &Arc<FockBasis>, j2: f64) -> Result<MatrixOperator> {
    let m_sites = basis.n_sites();
    let grid = MomentumGrid::new(m_sites)?;
    let rbz = grid.rbz_indices()?;
    let half = m_sites as i64 / 2;
    let sqrt_m = (m_sites as f64).sqrt();
    let mut coeffs = DMatrix::<Complex64>::zeros(m_sites, m_sites);
    for &j in &rbz {
        // Site-space mode functions of c_k and c_{k - pi/a}.
        let vk: Vec<Complex64> = (0..m_sites)
            .map(|m| unit_phase(j * m as i64, m_sites) / sqrt_m)
            .collect();
        let vp: Vec<Complex64> = (0..m_sites)
            .map(|m| unit_phase((j - half) * m as i64, m_sites) / sqrt_m)
            .collect();
        let i_unit = Complex64::new(0.0, 1.0);
        let beta: Vec<Complex64> = (0..m_sites)
            .map(|m| (vk[m] + i_unit * vp[m]) / 2.0f64.sqrt())
            .collect();
        let beta_t: Vec<Complex64> = (0..m_sites)
            .map(|m| (vk[m] - i_unit * vp[m]) / 2.0f64.sqrt())
            .collect();
        let weight = 2.0 * j2 * grid.ka(j).sin();
        for m in 0..m_sites {
            for n in 0..m_sites {
                let occupation_term =
                    beta[m].conj() * beta[n] - beta_t[m].conj() * beta_t[n];
                coeffs[(m, n)] += weight * occupation_term;
            }
        }
    }
    Ok(one_body_operator(basis, &coeffs))
}
