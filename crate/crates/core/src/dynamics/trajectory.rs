//! Stochastic quantum trajectories with photodetection jumps.
//!
//! Between detections the unnormalized state follows
//! `d psi/dt = (-i H0 - kappa a^dag a) psi`; a photon is detected when the
//! squared norm falls to a uniform random threshold (waiting-time sampling,
//! statistically exact), at which point the jump operator is applied and the
//! state renormalized. Integration is classical RK4 with the step capped by
//! the effective-Hamiltonian norm and by the per-step norm loss; threshold
//! crossings are located by bisection inside the step.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lightmatter::JumpOperator;
use crate::operator::MatrixOperator;

/// Cap on `||H_eff|| * dt` per integration step.
const OPERATOR_STEP_CAP: f64 = 0.05;
/// Cap on the relative squared-norm decrement per step.
const NORM_DECREMENT_CAP: f64 = 0.01;
/// Relative bisection tolerance for locating a jump inside a step.
const JUMP_BISECTION_TOL: f64 = 1e-10;
/// Below this `||a psi||^2 / ||psi||^2` a requested jump is a numerical
/// dark-state edge and the run aborts.
const DARK_STATE_RATIO: f64 = 1e-14;

/// Trajectory evolution parameters. Times are in units of the inverse
/// Hamiltonian scale (`hbar = 1`).
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryConfig {
    /// Cavity decay rate `kappa` (the photodetection rate carries an extra
    /// `|C|^2` from the jump-operator amplitude).
    pub kappa: f64,
    pub total_time: f64,
    /// Upper bound on the integrator step.
    pub max_dt: f64,
    /// Ensemble seed; trajectory `stream` indices key independent RNG
    /// streams of a counter-based generator.
    pub seed: u64,
    /// Snapshots are emitted every `record_stride * max_dt` units of time.
    pub record_stride: usize,
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kappa < 0.0 {
            return Err(Error::Config(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.total_time > 0.0) {
            return Err(Error::Config(format!(
                "total_time must be > 0, got {}",
                self.total_time
            )));
        }
        if !(self.max_dt > 0.0) {
            return Err(Error::Config(format!("max_dt must be > 0, got {}", self.max_dt)));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Spacing of the snapshot grid.
    pub fn snapshot_interval(&self) -> f64 {
        self.max_dt * self.record_stride as f64
    }

    /// Number of snapshots emitted, including `t = 0`.
    pub fn snapshot_count(&self) -> usize {
        (self.total_time / self.snapshot_interval() + 1e-9).floor() as usize + 1
    }
}

/// One realized quantum trajectory sampled on the snapshot grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Normalized states at the snapshot times; empty if the run was
    /// observer-only.
    pub states: Vec<DVector<Complex64>>,
    /// Running photocount at each snapshot time.
    pub photocounts: Vec<u64>,
    pub jump_times: Vec<f64>,
    pub seed: u64,
    pub stream: u64,
}

impl Trajectory {
    pub fn total_jumps(&self) -> u64 {
        self.jump_times.len() as u64
    }
}

struct Rk4Workspace {
    k1: DVector<Complex64>,
    k2: DVector<Complex64>,
    k3: DVector<Complex64>,
    k4: DVector<Complex64>,
    stage: DVector<Complex64>,
    base_psi: DVector<Complex64>,
    base2_psi: DVector<Complex64>,
}

impl Rk4Workspace {
    fn new(dim: usize) -> Self {
        Rk4Workspace {
            k1: DVector::zeros(dim),
            k2: DVector::zeros(dim),
            k3: DVector::zeros(dim),
            k4: DVector::zeros(dim),
            stage: DVector::zeros(dim),
            base_psi: DVector::zeros(dim),
            base2_psi: DVector::zeros(dim),
        }
    }
}

struct Propagator<'a> {
    h0: &'a MatrixOperator,
    base: &'a MatrixOperator,
    /// kappa |C|^2
    kappa_eff: f64,
}

impl Propagator<'_> {
    /// out = (-i H0 - kappa_eff B^dag B) psi
    fn derivative(&self, psi: &DVector<Complex64>, ws: &mut Rk4Workspace, out_is: Stage) {
        let minus_i = Complex64::new(0.0, -1.0);
        self.base.apply_into(psi, &mut ws.base_psi);
        // base is Hermitian for all engineered jump operators; adjoint apply
        // would be needed for a non-Hermitian matter part
        self.base.apply_into(&ws.base_psi, &mut ws.base2_psi);
        let out = match out_is {
            Stage::K1 => &mut ws.k1,
            Stage::K2 => &mut ws.k2,
            Stage::K3 => &mut ws.k3,
            Stage::K4 => &mut ws.k4,
        };
        self.h0.apply_into(psi, out);
        for i in 0..out.len() {
            out[i] = minus_i * out[i] - self.kappa_eff * ws.base2_psi[i];
        }
    }

    /// RK4 step of size `dt` from `psi` into `out`.
    fn step(&self, psi: &DVector<Complex64>, dt: f64, ws: &mut Rk4Workspace, out: &mut DVector<Complex64>) {
        let half = 0.5 * dt;
        self.derivative(psi, ws, Stage::K1);
        ws.stage.copy_from(psi);
        ws.stage.axpy(Complex64::new(half, 0.0), &ws.k1, Complex64::new(1.0, 0.0));
        let stage = ws.stage.clone();
        self.derivative(&stage, ws, Stage::K2);
        ws.stage.copy_from(psi);
        ws.stage.axpy(Complex64::new(half, 0.0), &ws.k2, Complex64::new(1.0, 0.0));
        let stage = ws.stage.clone();
        self.derivative(&stage, ws, Stage::K3);
        ws.stage.copy_from(psi);
        ws.stage.axpy(Complex64::new(dt, 0.0), &ws.k3, Complex64::new(1.0, 0.0));
        let stage = ws.stage.clone();
        self.derivative(&stage, ws, Stage::K4);
        out.copy_from(psi);
        let sixth = Complex64::new(dt / 6.0, 0.0);
        let third = Complex64::new(dt / 3.0, 0.0);
        out.axpy(sixth, &ws.k1, Complex64::new(1.0, 0.0));
        out.axpy(third, &ws.k2, Complex64::new(1.0, 0.0));
        out.axpy(third, &ws.k3, Complex64::new(1.0, 0.0));
        out.axpy(sixth, &ws.k4, Complex64::new(1.0, 0.0));
    }
}

#[derive(Clone, Copy)]
enum Stage {
    K1,
    K2,
    K3,
    K4,
}

/// Run one trajectory, storing normalized states on the snapshot grid.
pub fn run_trajectory(
    psi0: &DVector<Complex64>,
    h0: &MatrixOperator,
    jump: &JumpOperator,
    cfg: &TrajectoryConfig,
    stream: u64,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(cfg.snapshot_count());
    let mut traj = integrate(psi0, h0, jump, cfg, stream, |_, psi, _| {
        states.push(psi.clone());
    })?;
    traj.states = states;
    Ok(traj)
}

/// Run one trajectory, streaming `(time, normalized state, photocount)` to
/// the observer instead of storing states.
pub fn run_trajectory_with<F>(
    psi0: &DVector<Complex64>,
    h0: &MatrixOperator,
    jump: &JumpOperator,
    cfg: &TrajectoryConfig,
    stream: u64,
    observer: F,
) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<Complex64>, u64),
{
    integrate(psi0, h0, jump, cfg, stream, observer)
}

/// Run `n_trajectories` independent trajectories in parallel. Trajectory `i`
/// uses RNG stream `i`; results are identical regardless of scheduling.
pub fn run_ensemble(
    psi0: &DVector<Complex64>,
    h0: &MatrixOperator,
    jump: &JumpOperator,
    cfg: &TrajectoryConfig,
    n_trajectories: usize,
) -> Result<Vec<Trajectory>> {
    (0..n_trajectories as u64)
        .into_par_iter()
        .map(|stream| run_trajectory(psi0, h0, jump, cfg, stream))
        .collect()
}

fn integrate<F>(
    psi0: &DVector<Complex64>,
    h0: &MatrixOperator,
    jump: &JumpOperator,
    cfg: &TrajectoryConfig,
    stream: u64,
    mut observer: F,
) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<Complex64>, u64),
{
    cfg.validate()?;
    h0.same_basis(jump.base())?;
    let norm = psi0.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized { norm });
    }
    let dim = h0.dim();
    if psi0.len() != dim {
        return Err(Error::BasisMismatch);
    }

    let kappa_eff = cfg.kappa * jump.intensity_scale();
    let jumps_active = kappa_eff > 0.0 && jump.base().nnz() > 0;
    let prop = Propagator {
        h0,
        base: jump.base(),
        kappa_eff,
    };
    let mut ws = Rk4Workspace::new(dim);

    // step cap from the effective-Hamiltonian norm
    let base_norm = jump.base().spectral_norm_estimate();
    let h_eff_norm = h0.spectral_norm_estimate() + kappa_eff * base_norm * base_norm;
    let dt_cap = cfg.max_dt.min(OPERATOR_STEP_CAP / h_eff_norm.max(1e-300));

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);

    let interval = cfg.snapshot_interval();
    let n_snapshots = cfg.snapshot_count();
    let mut psi = psi0.clone();
    let mut next = psi.clone();
    let mut time = 0.0f64;
    let mut threshold: f64 = rng.random();
    let mut photocount: u64 = 0;
    let mut jump_times = Vec::new();
    let mut emitted = Vec::with_capacity(n_snapshots);
    let mut counts = Vec::with_capacity(n_snapshots);

    let emit = |grid_index: usize,
                    psi: &DVector<Complex64>,
                    n: u64,
                    times: &mut Vec<f64>,
                    counts: &mut Vec<u64>,
                    observer: &mut F| {
        let t = grid_index as f64 * interval;
        let mut normalized = psi.clone();
        normalized /= Complex64::new(normalized.norm(), 0.0);
        observer(t, &normalized, n);
        times.push(t);
        counts.push(n);
    };

    emit(0, &psi, photocount, &mut emitted, &mut counts, &mut observer);

    for grid_index in 1..n_snapshots {
        let grid_time = grid_index as f64 * interval;
        while time < grid_time - 1e-12 * grid_time.max(1.0) {
            // norm-loss step cap from the current detection rate
            let mut dt = dt_cap.min(grid_time - time);
            if jumps_active {
                prop.base.apply_into(&psi, &mut ws.base_psi);
                let rate = 2.0 * kappa_eff * ws.base_psi.norm_squared() / psi.norm_squared();
                if rate > 0.0 {
                    dt = dt.min(NORM_DECREMENT_CAP / rate);
                }
            }
            if dt < 1e-14 {
                return Err(Error::StepSizeUnderflow { time, dt });
            }
            prop.step(&psi, dt, &mut ws, &mut next);
            if jumps_active && next.norm_squared() <= threshold {
                // bisect the crossing time within [0, dt]
                let mut lo = 0.0f64;
                let mut hi = dt;
                while hi - lo > JUMP_BISECTION_TOL * dt {
                    let mid = 0.5 * (lo + hi);
                    prop.step(&psi, mid, &mut ws, &mut next);
                    if next.norm_squared() <= threshold {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                prop.step(&psi, hi, &mut ws, &mut next);
                let jump_time = time + hi;
                // apply the jump operator and renormalize
                let state_norm2 = next.norm_squared();
                let mut jumped = jump.apply(&next);
                let jump_norm2 = jumped.norm_squared();
                if jump_norm2 < DARK_STATE_RATIO * state_norm2 {
                    return Err(Error::DarkStateEdge {
                        time: jump_time,
                        ratio: jump_norm2 / state_norm2,
                    });
                }
                jumped /= Complex64::new(jumped.norm(), 0.0);
                psi.copy_from(&jumped);
                time = jump_time;
                photocount += 1;
                jump_times.push(jump_time);
                threshold = rng.random();
            } else {
                std::mem::swap(&mut psi, &mut next);
                time += dt;
            }
        }
        time = grid_time;
        emit(
            grid_index,
            &psi,
            photocount,
            &mut emitted,
            &mut counts,
            &mut observer,
        );
    }

    Ok(Trajectory {
        times: emitted,
        states: Vec::new(),
        photocounts: counts,
        jump_times,
        seed: cfg.seed,
        stream,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_hamiltonian, Boundary, FockBasis, LatticeSpec};
    use crate::lightmatter::{build_bond_operator, CouplingCoefficients, JumpOperator};
    use crate::linalg;
    use crate::subspace::{eigenspace_projectors, DEFAULT_DEGENERACY_TOL};
    use std::sync::Arc;

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
        let bond = build_bond_operator(
            &CouplingCoefficients::uniform(1.0, b.n_sites()),
            b,
            Boundary::Periodic,
        )
        .unwrap();
        JumpOperator::new(c, bond)
    }

    fn staggered_jump(b: &Arc<FockBasis>, c: Complex64) -> JumpOperator {
        let bond = build_bond_operator(
            &CouplingCoefficients::alternating(1.0, b.n_sites()).unwrap(),
            b,
            Boundary::Periodic,
        )
        .unwrap();
        JumpOperator::new(c, bond)
    }

    #[test]
    fn closed_system_is_unitary_and_jump_free() {
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let jump = staggered_jump(&b, C_ONE);
        let psi0 = b.fock_state(&[1, 1, 0, 0]).unwrap();
        let cfg = TrajectoryConfig {
            kappa: 0.0,
            total_time: 5.0,
            max_dt: 0.01,
            seed: 7,
            record_stride: 50,
        };
        let traj = run_trajectory(&psi0, &h, &jump, &cfg, 0).unwrap();
        assert!(traj.jump_times.is_empty());
        let e0 = h.expectation(&traj.states[0]).re;
        for state in &traj.states {
            assert!((state.norm() - 1.0).abs() < 1e-8);
            let e = h.expectation(state).re;
            assert!((e - e0).abs() < 1e-8, "energy drifted: {e} vs {e0}");
        }
    }

    #[test]
    fn dark_state_never_jumps_and_stays_put() {
        // zero-eigenvalue eigenstate of the uniform bond observable
        let b = basis(1, 4);
        let h = free_hamiltonian(&b);
        let jump = uniform_jump(&b, C_ONE);
        let set = eigenspace_projectors(
            &jump.base().clone(),
            DEFAULT_DEGENERACY_TOL,
        )
        .unwrap();
        let zero_space = set
            .iter()
            .find(|p| p.label.eigenvalue.unwrap().abs() < 1e-10)
            .unwrap();
        let psi0 = DVector::from_column_slice(zero_space.columns().column(0).as_slice());
        let cfg = TrajectoryConfig {
            kappa: 0.4,
            total_time: 8.0,
            max_dt: 0.01,
            seed: 3,
            record_stride: 100,
        };
        let traj = run_trajectory(&psi0, &h, &jump, &cfg, 0).unwrap();
        assert!(traj.jump_times.is_empty());
        // stationary up to a global phase
        let last = traj.states.last().unwrap();
        let overlap = psi0.dotc(last).norm();
        assert!((overlap - 1.0).abs() < 1e-7, "overlap {overlap}");
    }

    #[test]
    fn same_seed_and_stream_reproduce_bitwise() {
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let jump = staggered_jump(&b, C_ONE);
        let psi0 = b.fock_state(&[1, 0, 1, 0]).unwrap();
        let cfg = TrajectoryConfig {
            kappa: 0.3,
            total_time: 4.0,
            max_dt: 0.01,
            seed: 42,
            record_stride: 25,
        };
        let a = run_trajectory(&psi0, &h, &jump, &cfg, 5).unwrap();
        let c = run_trajectory(&psi0, &h, &jump, &cfg, 5).unwrap();
        assert_eq!(a.jump_times, c.jump_times);
        for (sa, sc) in a.states.iter().zip(&c.states) {
            assert_eq!(sa.as_slice(), sc.as_slice());
        }
        let other_stream = run_trajectory(&psi0, &h, &jump, &cfg, 6).unwrap();
        assert_ne!(a.jump_times, other_stream.jump_times);
    }

    #[test]
    fn photon_rate_scales_with_intensity() {
        // For an eigenstate of the measured observable the counts are exactly
        // Poisson with mean 2 kappa |C|^2 B^2 t; check the mean against an
        // ensemble at two different |C|.
        let b = basis(1, 4);
        let h = free_hamiltonian(&b);
        let set = eigenspace_projectors(
            &uniform_jump(&b, C_ONE).base().clone(),
            DEFAULT_DEGENERACY_TOL,
        )
        .unwrap();
        let top = set
            .iter()
            .find(|p| (p.label.eigenvalue.unwrap() - 2.0).abs() < 1e-10)
            .unwrap();
        let psi0 = DVector::from_column_slice(top.columns().column(0).as_slice());
        let total_time = 2.0;
        let mut means = Vec::new();
        for c_amp in [0.5f64, 1.0] {
            let jump = uniform_jump(&b, Complex64::new(c_amp, 0.0));
            let cfg = TrajectoryConfig {
                kappa: 0.2,
                total_time,
                max_dt: 0.02,
                seed: 11,
                record_stride: 100,
            };
            let ensemble = run_ensemble(&psi0, &h, &jump, &cfg, 400).unwrap();
            let mean: f64 = ensemble.iter().map(|t| t.total_jumps() as f64).sum::<f64>() / 400.0;
            let expected = 2.0 * 0.2 * c_amp * c_amp * 4.0 * total_time;
            assert!(
                (mean - expected).abs() < 0.25 * expected,
                "|C| = {c_amp}: mean {mean} vs {expected}"
            );
            means.push(mean);
        }
        let ratio = means[1] / means[0];
        assert!((ratio - 4.0).abs() < 0.8, "intensity scaling ratio {ratio}");
    }

    #[test]
    fn qnd_trajectory_matches_conditional_distribution() {
        // With the uniform bond observable the populations at time t after n
        // detections are a deterministic function of (n, t): proportional to
        // B^(2n) exp(-2 kappa |C|^2 B^2 t) p0(B).
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let jump = uniform_jump(&b, C_ONE);
        let kappa = 0.1;
        let set = eigenspace_projectors(&jump.base().clone(), DEFAULT_DEGENERACY_TOL).unwrap();
        // uniform superposition over one representative per eigenspace
        let dim = b.dim();
        let mut psi0 = DVector::zeros(dim);
        for p in set.iter() {
            let v = p.columns().column(0);
            psi0 += DVector::from_column_slice(v.as_slice());
        }
        psi0 /= Complex64::new(psi0.norm(), 0.0);
        let p0: Vec<f64> = set.populations(&psi0);
        let cfg = TrajectoryConfig {
            kappa,
            total_time: 6.0,
            max_dt: 0.005,
            seed: 9,
            record_stride: 200,
        };
        let traj = run_trajectory(&psi0, &h, &jump, &cfg, 1).unwrap();
        for ((&t, state), &n) in traj
            .times
            .iter()
            .zip(&traj.states)
            .zip(&traj.photocounts)
        {
            let mut expected: Vec<f64> = set
                .iter()
                .zip(&p0)
                .map(|(p, &w0)| {
                    let b_val = p.label.eigenvalue.unwrap();
                    let log_w = if b_val.abs() < 1e-300 && n > 0 {
                        f64::NEG_INFINITY
                    } else if n > 0 {
                        2.0 * n as f64 * b_val.abs().ln()
                    } else {
                        0.0
                    };
                    w0 * (log_w - 2.0 * kappa * b_val * b_val * t).exp()
                })
                .collect();
            let total: f64 = expected.iter().sum();
            expected.iter_mut().for_each(|w| *w /= total);
            let measured = set.populations(state);
            for (m, e) in measured.iter().zip(&expected) {
                assert!(
                    (m - e).abs() < 1e-6,
                    "t = {t}, n = {n}: population {m} vs conditional {e}"
                );
            }
        }
    }

    #[test]
    fn populations_move_only_at_jumps_after_decay_compensation() {
        // Between detections, eigenspace weights change only by the known
        // no-click reweighting exp(-2 kappa |C|^2 B^2 dt); undoing it must
        // freeze the populations because the observable commutes with H0.
        let b = basis(2, 4);
        let h = free_hamiltonian(&b);
        let jump = uniform_jump(&b, C_ONE);
        let kappa = 0.1;
        let set = eigenspace_projectors(&jump.base().clone(), DEFAULT_DEGENERACY_TOL).unwrap();
        let dim = b.dim();
        let mut psi0 = DVector::zeros(dim);
        for p in set.iter() {
            psi0 += DVector::from_column_slice(p.columns().column(0).as_slice());
        }
        psi0 /= Complex64::new(psi0.norm(), 0.0);
        let cfg = TrajectoryConfig {
            kappa,
            total_time: 5.0,
            max_dt: 0.005,
            seed: 21,
            record_stride: 20,
        };
        let traj = run_trajectory(&psi0, &h, &jump, &cfg, 0).unwrap();
        let b_values: Vec<f64> = set.iter().map(|p| p.label.eigenvalue.unwrap()).collect();
        for w in traj.times.windows(2).zip(traj.states.windows(2)).zip(traj.photocounts.windows(2))
        {
            let ((ts, states), counts) = w;
            if counts[0] != counts[1] {
                continue; // a jump happened inside this interval
            }
            let dt = ts[1] - ts[0];
            let before = set.populations(&states[0]);
            let after = set.populations(&states[1]);
            // undo the no-click reweighting
            let mut compensated: Vec<f64> = after
                .iter()
                .zip(&b_values)
                .map(|(&p, &bv)| p * (2.0 * kappa * bv * bv * dt).exp())
                .collect();
            let total: f64 = compensated.iter().sum();
            compensated.iter_mut().for_each(|p| *p /= total);
            for (c, bef) in compensated.iter().zip(&before) {
                assert!(
                    (c - bef).abs() < 1e-8,
                    "population mixed between detections: {c} vs {bef}"
                );
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = TrajectoryConfig {
            kappa: -1.0,
            total_time: 1.0,
            max_dt: 0.01,
            seed: 0,
            record_stride: 1,
        };
        assert!(cfg.validate().is_err());
        let b = basis(1, 2);
        let h = build_hamiltonian(
            &b,
            &LatticeSpec {
                j: 1.0,
                u: 0.0,
                boundary: Boundary::Open,
            },
        );
        let jump = JumpOperator::new(C_ONE, MatrixOperator::zeros(b.clone()));
        let unnormalized = DVector::from_element(b.dim(), Complex64::new(1.0, 0.0));
        let good_cfg = TrajectoryConfig {
            kappa: 0.1,
            total_time: 1.0,
            max_dt: 0.01,
            seed: 0,
            record_stride: 1,
        };
        assert!(matches!(
            run_trajectory(&unnormalized, &h, &jump, &good_cfg, 0),
            Err(Error::NotNormalized { .. })
        ));
    }
}
