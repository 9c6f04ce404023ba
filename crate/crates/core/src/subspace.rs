//! Eigenspace projectors and emergent measurement-projection subspaces.
//!
//! Three projector families appear:
//! - measurement eigenspaces `P_m` of the (Hermitian part of the) jump
//!   operator, one per clustered eigenvalue;
//! - conserved-observable joint eigenspaces `R_m` of the pair occupations
//!   `O_k = n_k + n_{k - pi/a}`, labelled by integer occupation tuples;
//! - emergent subspaces `PP_M`: the finest unions of `P_m` left invariant by
//!   the Hamiltonian, found either by connected components of an overlap
//!   graph or, for the staggered bond observable, by an analytic parity rule
//!   on the conserved occupations.
//!
//! Projectors are stored as orthonormal column bases; matrices are
//! materialized on demand.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fock::{self, FockBasis, MomentumGrid};
use crate::linalg;
use crate::operator::MatrixOperator;

/// Default relative tolerance for clustering nearby eigenvalues.
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;
/// Default threshold on squared overlaps when building the subspace graph.
pub const DEFAULT_OVERLAP_TOL: f64 = 1e-10;
/// Commutator bound the emergent projectors must satisfy.
pub const COMMUTATOR_TOL: f64 = 1e-8;
/// Orthogonality / completeness / idempotency bound for projector sets.
pub const PROJECTOR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorKind {
    Measurement,
    Conserved,
    Emergent,
}

/// Parity signature of the conserved pair occupations: one bit per class of
/// momenta indistinguishable to the staggered bond signal (the pair
/// `(k, pi/a - k)` shares `sin(ka)`); the `k = pi/a` mode carries no signal
/// and is excluded from the signature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ParitySignature {
    /// Parity (0 even, 1 odd) of the summed occupation of each class,
    /// ordered by the smallest reduced-zone index in the class.
    pub bits: Vec<u8>,
}

/// Metadata attached to each projector.
#[derive(Debug, Clone, Serialize, Default)]
pub struct ProjectorLabel {
    /// Mean eigenvalue of the clustered eigenspace (measurement kind).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvalue: Option<f64>,
    /// Conserved pair-occupation tuple over the reduced zone (conserved kind).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupations: Option<Vec<u32>>,
    /// Indices of the member projectors in the parent set (emergent kind).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<usize>>,
    /// Eigenvalues of the member measurement eigenspaces (emergent kind).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub member_eigenvalues: Option<Vec<f64>>,
    /// Parity signature (analytic staggered-bond construction).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parity: Option<ParitySignature>,
}

/// One subspace, stored as an orthonormal column basis.
#[derive(Debug, Clone)]
pub struct Projector {
    columns: DMatrix<Complex64>,
    pub label: ProjectorLabel,
}

impl Projector {
    pub fn new(columns: DMatrix<Complex64>, label: ProjectorLabel) -> Self {
        Projector { columns, label }
    }

    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn space_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn columns(&self) -> &DMatrix<Complex64> {
        &self.columns
    }

    /// Dense projector matrix `Q Q^dagger`.
    pub fn matrix(&self) -> DMatrix<Complex64> {
        &self.columns * self.columns.adjoint()
    }

    /// `<psi| Pi |psi>` for a normalized state.
    pub fn population(&self, psi: &DVector<Complex64>) -> f64 {
        (self.columns.adjoint() * psi).norm_squared()
    }

    /// Project a state into the subspace (not renormalized).
    pub fn apply(&self, psi: &DVector<Complex64>) -> DVector<Complex64> {
        &self.columns * (self.columns.adjoint() * psi)
    }
}

/// A family of mutually orthogonal projectors covering the whole space.
#[derive(Debug, Clone)]
pub struct ProjectorSet {
    pub kind: ProjectorKind,
    items: Vec<Projector>,
    space_dim: usize,
}

impl ProjectorSet {
    pub fn new(kind: ProjectorKind, items: Vec<Projector>, space_dim: usize) -> Self {
        ProjectorSet {
            kind,
            items,
            space_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn space_dim(&self) -> usize {
        self.space_dim
    }

    pub fn get(&self, index: usize) -> &Projector {
        &self.items[index]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Projector> {
        self.items.iter()
    }

    /// Populations of a normalized state over every projector.
    pub fn populations(&self, psi: &DVector<Complex64>) -> Vec<f64> {
        self.items.iter().map(|p| p.population(psi)).collect()
    }

    /// Verify orthogonality, idempotency (orthonormal bases) and
    /// completeness at the standard tolerance.
    pub fn validate(&self) -> Result<()> {
        self.validate_with(PROJECTOR_TOL)
    }

    pub fn validate_with(&self, tol: f64) -> Result<()> {
        for (i, p) in self.items.iter().enumerate() {
            let gram = p.columns.adjoint() * &p.columns;
            let defect = linalg::max_abs(&(gram - DMatrix::identity(p.dim(), p.dim())));
            if defect > tol {
                return Err(Error::ProjectorCheckFailed {
                    check: "idempotency",
                    value: defect,
                    tol,
                });
            }
            for q in &self.items[i + 1..] {
                let cross = p.columns.adjoint() * &q.columns;
                let overlap = linalg::max_abs(&cross);
                if overlap > tol {
                    return Err(Error::ProjectorCheckFailed {
                        check: "orthogonality",
                        value: overlap,
                        tol,
                    });
                }
            }
        }
        let total: usize = self.items.iter().map(|p| p.dim()).sum();
        if total != self.space_dim {
            return Err(Error::IncompleteProjectors {
                defect: (self.space_dim as f64 - total as f64).abs(),
            });
        }
        let mut sum = DMatrix::<Complex64>::zeros(self.space_dim, self.space_dim);
        for p in &self.items {
            sum += p.matrix();
        }
        let defect = linalg::max_abs(&(sum - DMatrix::identity(self.space_dim, self.space_dim)));
        if defect > tol {
            return Err(Error::IncompleteProjectors { defect });
        }
        Ok(())
    }

    /// Index of the unique projector containing the given subspace.
    pub fn find_containing(&self, columns: &DMatrix<Complex64>) -> Result<usize> {
        let target = columns.ncols() as f64;
        let mut hits = Vec::new();
        for (i, p) in self.items.iter().enumerate() {
            let cross = p.columns.adjoint() * columns;
            let captured = cross.norm_squared();
            if (captured - target).abs() < 1e-8 {
                hits.push(i);
            } else if captured > 1e-8 {
                // partial overlap: not contained in any single projector
                return Err(Error::ProjectorCheckFailed {
                    check: "containment",
                    value: captured,
                    tol: 1e-8,
                });
            }
        }
        match hits.as_slice() {
            [unique] => Ok(*unique),
            _ => Err(Error::ProjectorCheckFailed {
                check: "containment",
                value: hits.len() as f64,
                tol: 1.0,
            }),
        }
    }

    /// Serializable description (labels, dimensions, eigenvalues).
    pub fn summary(&self) -> ProjectorSetSummary {
        ProjectorSetSummary {
            kind: self.kind,
            space_dimension: self.space_dim,
            projectors: self
                .items
                .iter()
                .enumerate()
                .map(|(index, p)| ProjectorSummary {
                    index,
                    dimension: p.dim(),
                    label: p.label.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectorSetSummary {
    pub kind: ProjectorKind,
    pub space_dimension: usize,
    pub projectors: Vec<ProjectorSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectorSummary {
    pub index: usize,
    pub dimension: usize,
    pub label: ProjectorLabel,
}

/// Cluster a sorted eigenvalue list by gaps below `tol * spectral_range`.
/// Returns half-open index ranges.
fn cluster_sorted(values: &DVector<f64>, tol: f64) -> Vec<(usize, usize)> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    let range = values[n - 1] - values[0];
    let threshold = tol * range;
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 1..n {
        if values[i] - values[i - 1] > threshold {
            clusters.push((start, i));
            start = i;
        }
    }
    clusters.push((start, n));
    clusters
}

/// Projectors onto the eigenspaces of a Hermitian operator, one per cluster
/// of nearby eigenvalues, labelled by the cluster-mean eigenvalue.
pub fn eigenspace_projectors(
    operator: &MatrixOperator,
    degeneracy_tol: f64,
) -> Result<ProjectorSet> {
    let defect = operator.hermiticity_defect();
    if !operator.is_hermitian() || defect > 1e-10 * operator.norm_scale() {
        return Err(Error::NonHermitian { defect });
    }
    let dense = operator.to_dense();
    let (values, vectors) = linalg::eigh(&dense);
    let mut items = Vec::new();
    for (lo, hi) in cluster_sorted(&values, degeneracy_tol) {
        let mut cols = DMatrix::zeros(dense.nrows(), hi - lo);
        for (dst, src) in (lo..hi).enumerate() {
            cols.set_column(dst, &vectors.column(src));
        }
        linalg::orthonormalize_columns(&mut cols);
        let mean = values.as_slice()[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        items.push(Projector::new(
            cols,
            ProjectorLabel {
                eigenvalue: Some(mean),
                ..Default::default()
            },
        ));
    }
    let set = ProjectorSet::new(ProjectorKind::Measurement, items, dense.nrows());
    set.validate()?;
    Ok(set)
}

/// Joint eigenspaces `R_m` of the conserved pair occupations
/// `{O_k : k in RBZ}`, labelled by their integer occupation tuples and
/// ordered lexicographically descending (so tuple `{N,0,...}` comes first).
///
/// The joint spectrum is resolved through a single weighted sum
/// `O = Sum_k g_k O_k`. Weights must separate all occupation tuples; the
/// default `g_j = (N+1)^(j-1)` encodes tuples positionally and is collision
/// free.
pub fn conserved_eigenspaces(
    basis: &Arc<FockBasis>,
    weights: Option<&[f64]>,
) -> Result<ProjectorSet> {
    let grid = MomentumGrid::new(basis.n_sites())?;
    let rbz = grid.rbz_indices()?;
    let observables: Vec<MatrixOperator> = rbz
        .iter()
        .map(|&j| fock::conserved_observable(basis, j))
        .collect::<Result<_>>()?;
    let default_weights: Vec<f64> = {
        let base = (basis.n_atoms() + 1) as f64;
        (0..rbz.len()).map(|i| base.powi(i as i32)).collect()
    };
    let weights = weights.unwrap_or(&default_weights);
    if weights.len() != rbz.len() {
        return Err(Error::CoefficientLengthMismatch {
            expected: rbz.len(),
            got: weights.len(),
        });
    }
    let mut combined = MatrixOperator::zeros(basis.clone());
    for (op, &g) in observables.iter().zip(weights) {
        combined = combined.add(&op.scaled(Complex64::new(g, 0.0)))?;
    }
    let (values, vectors) = linalg::eigh(&combined.to_dense());
    let dim = basis.dim();
    let mut items = Vec::new();
    for (lo, hi) in cluster_sorted(&values, DEFAULT_DEGENERACY_TOL) {
        let mut cols = DMatrix::zeros(dim, hi - lo);
        for (dst, src) in (lo..hi).enumerate() {
            cols.set_column(dst, &vectors.column(src));
        }
        linalg::orthonormalize_columns(&mut cols);
        // label with the integer occupation tuple, verified to be integral
        let mut occupations = Vec::with_capacity(observables.len());
        for op in &observables {
            let mut mean = 0.0;
            for c in 0..cols.ncols() {
                let col = DVector::from_column_slice(cols.column(c).as_slice());
                mean += op.expectation(&col).re;
            }
            mean /= cols.ncols() as f64;
            let rounded = mean.round();
            if (mean - rounded).abs() > 1e-6 {
                return Err(Error::ProjectorCheckFailed {
                    check: "integer pair occupation",
                    value: (mean - rounded).abs(),
                    tol: 1e-6,
                });
            }
            occupations.push(rounded as u32);
        }
        items.push(Projector::new(
            cols,
            ProjectorLabel {
                occupations: Some(occupations),
                ..Default::default()
            },
        ));
    }
    items.sort_by(|a, b| {
        b.label
            .occupations
            .as_ref()
            .unwrap()
            .cmp(a.label.occupations.as_ref().unwrap())
    });
    let set = ProjectorSet::new(ProjectorKind::Conserved, items, dim);
    set.validate()?;
    Ok(set)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Emergent subspaces of a measurement/Hamiltonian pair: connected
/// components of the bipartite graph linking measurement eigenspaces to the
/// Hamiltonian eigenspaces they overlap.
///
/// Hamiltonian eigenvalues are clustered first and each degenerate cluster
/// enters the graph as a single node, so the arbitrary eigenvector choice
/// inside a degenerate eigenspace cannot change the components: eigenspace
/// `W` links every measurement space with `|| Q_m^dag W ||_F^2 > tol`.
///
/// The result satisfies `[PP_M, H] = [PP_M, B] = 0` within [`COMMUTATOR_TOL`]
/// or an error is returned.
pub fn find_emergent_subspaces(
    measurement: &ProjectorSet,
    hamiltonian: &MatrixOperator,
    overlap_tol: f64,
) -> Result<ProjectorSet> {
    let defect = hamiltonian.hermiticity_defect();
    if !hamiltonian.is_hermitian() || defect > 1e-10 * hamiltonian.norm_scale() {
        return Err(Error::NonHermitian { defect });
    }
    let dim = measurement.space_dim();
    if hamiltonian.dim() != dim {
        return Err(Error::BasisMismatch);
    }
    let dense = hamiltonian.to_dense();
    let (values, vectors) = linalg::eigh(&dense);
    let p = measurement.len();
    let mut uf = UnionFind::new(p);
    for (lo, hi) in cluster_sorted(&values, DEFAULT_DEGENERACY_TOL) {
        let cluster = vectors.columns(lo, hi - lo);
        let touched: Vec<usize> = measurement
            .iter()
            .enumerate()
            .filter(|(_, proj)| (proj.columns().adjoint() * cluster).norm_squared() > overlap_tol)
            .map(|(m, _)| m)
            .collect();
        for pair in touched.windows(2) {
            uf.union(pair[0], pair[1]);
        }
    }
    let mut component_of = vec![0usize; p];
    let mut roots: Vec<usize> = Vec::new();
    for m in 0..p {
        let root = uf.find(m);
        let id = match roots.iter().position(|&r| r == root) {
            Some(i) => i,
            None => {
                roots.push(root);
                roots.len() - 1
            }
        };
        component_of[m] = id;
    }
    let n_components = roots.len();
    let mut items = Vec::with_capacity(n_components);
    for comp in 0..n_components {
        let members: Vec<usize> = (0..p).filter(|&m| component_of[m] == comp).collect();
        let total: usize = members.iter().map(|&m| measurement.get(m).dim()).sum();
        let mut cols = DMatrix::zeros(dim, total);
        let mut offset = 0;
        for &m in &members {
            let q = measurement.get(m).columns();
            cols.view_mut((0, offset), (dim, q.ncols())).copy_from(q);
            offset += q.ncols();
        }
        let member_eigenvalues = members
            .iter()
            .filter_map(|&m| measurement.get(m).label.eigenvalue)
            .collect();
        items.push(Projector::new(
            cols,
            ProjectorLabel {
                members: Some(members),
                member_eigenvalues: Some(member_eigenvalues),
                ..Default::default()
            },
        ));
    }
    let set = ProjectorSet::new(ProjectorKind::Emergent, items, dim);
    set.validate()?;
    check_commutators(&set, measurement, &dense)?;
    Ok(set)
}

fn check_commutators(
    emergent: &ProjectorSet,
    measurement: &ProjectorSet,
    hamiltonian: &DMatrix<Complex64>,
) -> Result<()> {
    let dim = emergent.space_dim();
    // reconstruct the measured observable from its eigenspaces
    let mut observable = DMatrix::<Complex64>::zeros(dim, dim);
    for proj in measurement.iter() {
        if let Some(value) = proj.label.eigenvalue {
            observable += proj.matrix() * Complex64::new(value, 0.0);
        }
    }
    for proj in emergent.iter() {
        let pi = proj.matrix();
        let h_norm = linalg::commutator_max_abs(&pi, hamiltonian);
        if h_norm > COMMUTATOR_TOL {
            return Err(Error::CommutatorCheckFailed {
                lhs: "emergent projector",
                rhs: "hamiltonian",
                norm: h_norm,
                tol: COMMUTATOR_TOL,
            });
        }
        let b_norm = linalg::commutator_max_abs(&pi, &observable);
        if b_norm > COMMUTATOR_TOL {
            return Err(Error::CommutatorCheckFailed {
                lhs: "emergent projector",
                rhs: "measured observable",
                norm: b_norm,
                tol: COMMUTATOR_TOL,
            });
        }
    }
    Ok(())
}

/// Classes of reduced-zone indices sharing the same `sin(ka)` (pairs `j` and
/// `M/2 - j`), excluding the signal-free `k = pi/a` mode.
fn sin_degenerate_classes(m_sites: usize) -> Vec<Vec<usize>> {
    let half = m_sites / 2;
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for j in 1..half {
        let partner = half - j;
        if partner < j {
            break;
        }
        if partner == j {
            classes.push(vec![j]);
        } else {
            classes.push(vec![j, partner]);
        }
    }
    classes.sort();
    classes
}

/// Analytic emergent subspaces for the staggered bond measurement: group the
/// conserved eigenspaces `R_m` by the parities of their class-summed pair
/// occupations, excluding the `k = pi/a` mode.
pub fn parity_subspaces(basis: &Arc<FockBasis>, weights: Option<&[f64]>) -> Result<ProjectorSet> {
    let m_sites = basis.n_sites();
    if m_sites % 2 != 0 {
        return Err(Error::OddSiteCount { n_sites: m_sites });
    }
    let conserved = conserved_eigenspaces(basis, weights)?;
    let classes = sin_degenerate_classes(m_sites);
    let signature = |occ: &[u32]| -> ParitySignature {
        // occupation tuple is indexed by RBZ position j - 1
        ParitySignature {
            bits: classes
                .iter()
                .map(|class| {
                    (class.iter().map(|&j| occ[j - 1]).sum::<u32>() % 2) as u8
                })
                .collect(),
        }
    };
    let mut groups: Vec<(ParitySignature, Vec<usize>)> = Vec::new();
    for (i, proj) in conserved.iter().enumerate() {
        let occ = proj.label.occupations.as_ref().expect("conserved label");
        let sig = signature(occ);
        match groups.iter_mut().find(|(s, _)| *s == sig) {
            Some((_, members)) => members.push(i),
            None => groups.push((sig, vec![i])),
        }
    }
    let dim = basis.dim();
    let mut items = Vec::with_capacity(groups.len());
    for (sig, members) in groups {
        let total: usize = members.iter().map(|&m| conserved.get(m).dim()).sum();
        let mut cols = DMatrix::zeros(dim, total);
        let mut offset = 0;
        for &m in &members {
            let q = conserved.get(m).columns();
            cols.view_mut((0, offset), (dim, q.ncols())).copy_from(q);
            offset += q.ncols();
        }
        items.push(Projector::new(
            cols,
            ProjectorLabel {
                members: Some(members),
                parity: Some(sig),
                ..Default::default()
            },
        ));
    }
    items.sort_by_key(|p| p.label.members.as_ref().unwrap()[0]);
    let set = ProjectorSet::new(ProjectorKind::Emergent, items, dim);
    set.validate()?;
    Ok(set)
}

/// Eigenvalues of a Hermitian operator restricted to one subspace.
pub fn eigenvalues_within(operator: &MatrixOperator, projector: &Projector) -> Vec<f64> {
    let q = projector.columns();
    let dense = operator.to_dense();
    let restricted = q.adjoint() * dense * q;
    let (values, _) = linalg::eigh(&restricted);
    values.iter().copied().collect()
}

/// Distinct values of a sorted list, merged below an absolute tolerance.
pub fn distinct_values(sorted: &[f64], tol: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &v in sorted {
        match out.last() {
            Some(&last) if (v - last).abs() <= tol => {}
            _ => out.push(v),
        }
    }
    out
}
