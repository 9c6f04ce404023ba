//! Analytic oracles and ensemble statistics for trajectory runs.
//!
//! The conditional eigenspace distribution after `n` detections in time `t`
//! under a measured observable that commutes with the Hamiltonian is
//! `p(B, n, t) ~ B^(2n) exp(-2 kappa |C|^2 B^2 t) p0(B)`; it is evaluated on
//! the discrete spectrum of the finite system and used as the reference
//! channel when summarizing ensembles.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::operator::MatrixOperator;
use crate::subspace::ProjectorSet;

/// Discrete probability distribution over measurement eigenvalues, tagged
/// with the conditioning record `(photocount, time)`.
#[derive(Debug, Clone, Serialize)]
pub struct EigenspaceDistribution {
    pub values: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub time: f64,
    pub photocount: u64,
}

impl EigenspaceDistribution {
    pub fn new(values: Vec<f64>, probabilities: Vec<f64>) -> Result<Self> {
        let dist = EigenspaceDistribution {
            values,
            probabilities,
            time: 0.0,
            photocount: 0,
        };
        dist.validate()?;
        Ok(dist)
    }

    /// Equal weight on every eigenvalue.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidDistribution {
                reason: "no support points".into(),
            });
        }
        EigenspaceDistribution::new(values, vec![1.0 / n as f64; n])
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.probabilities.len() {
            return Err(Error::InvalidDistribution {
                reason: "values and probabilities differ in length".into(),
            });
        }
        if self.probabilities.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidDistribution {
                reason: "negative probability".into(),
            });
        }
        let total: f64 = self.probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidDistribution {
                reason: format!("probabilities sum to {total}"),
            });
        }
        Ok(())
    }
}

/// Conditional update of an eigenvalue distribution after `n` detections in
/// time `t` at rate scale `kappa_c2 = kappa |C|^2`. Weights are evaluated in
/// log space so large photocounts stay finite.
pub fn qnd_distribution(
    p0: &EigenspaceDistribution,
    n: u64,
    t: f64,
    kappa_c2: f64,
) -> Result<EigenspaceDistribution> {
    p0.validate()?;
    if t < 0.0 || kappa_c2 < 0.0 {
        return Err(Error::Config(
            "time and rate scale must be nonnegative".into(),
        ));
    }
    let log_weights: Vec<f64> = p0
        .values
        .iter()
        .zip(&p0.probabilities)
        .map(|(&b, &p)| {
            if p == 0.0 {
                return f64::NEG_INFINITY;
            }
            let detection = if n == 0 {
                0.0
            } else if b == 0.0 {
                f64::NEG_INFINITY
            } else {
                2.0 * n as f64 * b.abs().ln()
            };
            p.ln() + detection - 2.0 * kappa_c2 * b * b * t
        })
        .collect();
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::AllZeroWeight);
    }
    let mut probabilities: Vec<f64> = log_weights.iter().map(|&w| (w - max).exp()).collect();
    let total: f64 = probabilities.iter().sum();
    probabilities.iter_mut().for_each(|p| *p /= total);
    Ok(EigenspaceDistribution {
        values: p0.values.clone(),
        probabilities,
        time: p0.time + t,
        photocount: p0.photocount + n,
    })
}

/// Continuum estimate of where the conditional distribution peaks,
/// `B = +- sqrt(n / (2 kappa |C|^2 t))`; a diagnostic label only, the
/// discrete support carries the real weights.
pub fn qnd_peak_estimate(n: u64, t: f64, kappa_c2: f64) -> f64 {
    (n as f64 / (2.0 * kappa_c2 * t)).sqrt()
}

/// Populations `<psi| Pi_i |psi>` over a complete projector set.
pub fn eigenspace_populations(
    state: &DVector<Complex64>,
    set: &ProjectorSet,
) -> Result<Vec<f64>> {
    if set.space_dim() != state.len() {
        return Err(Error::BasisMismatch);
    }
    let covered: usize = set.iter().map(|p| p.dim()).sum();
    if covered != set.space_dim() {
        return Err(Error::IncompleteProjectors {
            defect: (set.space_dim() as f64 - covered as f64).abs(),
        });
    }
    let norm = state.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotNormalized { norm });
    }
    Ok(set.populations(state))
}

/// L1 distance between two probability vectors on the same support.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Per-observable mean/std series across an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct ObservableSeries {
    pub name: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean populations (trajectory-averaged) for one projector set.
#[derive(Debug, Clone, Serialize)]
pub struct PopulationSeries {
    pub name: String,
    /// `mean[t][i]` = average population of projector `i` at snapshot `t`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

/// Histogram of the per-trajectory maximum population over one projector
/// set ("how pure is the selected subspace"), per snapshot.
#[derive(Debug, Clone, Serialize)]
pub struct PurityHistogram {
    pub name: String,
    pub bin_edges: Vec<f64>,
    /// `counts[t][b]` = trajectories whose max population falls in bin `b`.
    pub counts: Vec<Vec<u32>>,
}

/// One conditioning stratum of the detection-record comparison.
#[derive(Debug, Clone, Serialize)]
pub struct StratumReport {
    pub time: f64,
    pub photocount: u64,
    pub samples: usize,
    pub l1_distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub trajectory_count: usize,
    pub observables: Vec<ObservableSeries>,
    pub populations: Vec<PopulationSeries>,
    pub purity: Vec<PurityHistogram>,
    pub mean_photocount: Vec<f64>,
    pub qnd_strata: Option<Vec<StratumReport>>,
}

/// Observables to aggregate over an ensemble.
pub struct ObservableSet<'a> {
    pub operators: Vec<(String, &'a MatrixOperator)>,
    pub projector_sets: Vec<(String, &'a ProjectorSet)>,
}

/// Reference channel comparing detection-conditioned eigenspace histograms
/// against the analytic conditional distribution.
pub struct QndReference<'a> {
    /// Initial distribution over the measured eigenvalues.
    pub p0: &'a EigenspaceDistribution,
    /// `kappa |C|^2`.
    pub kappa_c2: f64,
    /// Name of the projector set (in `ObservableSet::projector_sets`) whose
    /// populations realize the measured observable.
    pub set_name: String,
    /// Strata below this occupancy are skipped.
    pub min_samples: usize,
}

const PURITY_BINS: usize = 20;

/// Aggregate an ensemble of trajectories (shared snapshot grid required)
/// into deterministic per-snapshot statistics.
pub fn ensemble_statistics(
    trajectories: &[Trajectory],
    observables: &ObservableSet<'_>,
    qnd: Option<&QndReference<'_>>,
) -> Result<EnsembleSummary> {
    if trajectories.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let times = trajectories[0].times.clone();
    for traj in trajectories {
        if traj.times != times {
            return Err(Error::SnapshotGridMismatch);
        }
        if traj.states.len() != times.len() {
            return Err(Error::Config(
                "ensemble statistics need stored snapshot states".into(),
            ));
        }
    }
    let n_times = times.len();
    let n_traj = trajectories.len();

    let mut observable_series = Vec::with_capacity(observables.operators.len());
    for (name, op) in &observables.operators {
        let mut mean = vec![0.0; n_times];
        let mut second = vec![0.0; n_times];
        for traj in trajectories {
            for (ti, state) in traj.states.iter().enumerate() {
                let value = op.expectation(state).re;
                mean[ti] += value;
                second[ti] += value * value;
            }
        }
        for ti in 0..n_times {
            mean[ti] /= n_traj as f64;
            second[ti] /= n_traj as f64;
        }
        let std = mean
            .iter()
            .zip(&second)
            .map(|(&m, &s)| (s - m * m).max(0.0).sqrt())
            .collect();
        observable_series.push(ObservableSeries {
            name: name.clone(),
            mean,
            std,
        });
    }

    let mut population_series = Vec::new();
    let mut purity_series = Vec::new();
    let mut qnd_populations: Option<Vec<Vec<Vec<f64>>>> = None; // [traj][time][proj]
    for (name, set) in &observables.projector_sets {
        let n_proj = set.len();
        let mut mean = vec![vec![0.0; n_proj]; n_times];
        let mut second = vec![vec![0.0; n_proj]; n_times];
        let mut purity_counts = vec![vec![0u32; PURITY_BINS]; n_times];
        let mut per_traj: Vec<Vec<Vec<f64>>> = Vec::new();
        let keep_for_qnd = qnd.map(|q| &q.set_name == name).unwrap_or(false);
        for traj in trajectories {
            let mut this_traj = Vec::with_capacity(if keep_for_qnd { n_times } else { 0 });
            for (ti, state) in traj.states.iter().enumerate() {
                let pops = set.populations(state);
                let mut max_pop = 0.0f64;
                for (pi, &p) in pops.iter().enumerate() {
                    mean[ti][pi] += p;
                    second[ti][pi] += p * p;
                    max_pop = max_pop.max(p);
                }
                let bin = ((max_pop * PURITY_BINS as f64) as usize).min(PURITY_BINS - 1);
                purity_counts[ti][bin] += 1;
                if keep_for_qnd {
                    this_traj.push(pops);
                }
            }
            if keep_for_qnd {
                per_traj.push(this_traj);
            }
        }
        for ti in 0..n_times {
            for pi in 0..n_proj {
                mean[ti][pi] /= n_traj as f64;
                second[ti][pi] /= n_traj as f64;
            }
        }
        let std = mean
            .iter()
            .zip(&second)
            .map(|(ms, ss)| {
                ms.iter()
                    .zip(ss)
                    .map(|(&m, &s)| (s - m * m).max(0.0).sqrt())
                    .collect()
            })
            .collect();
        population_series.push(PopulationSeries {
            name: name.clone(),
            mean,
            std,
        });
        purity_series.push(PurityHistogram {
            name: name.clone(),
            bin_edges: (0..=PURITY_BINS)
                .map(|b| b as f64 / PURITY_BINS as f64)
                .collect(),
            counts: purity_counts,
        });
        if keep_for_qnd {
            qnd_populations = Some(per_traj);
        }
    }

    let mut mean_photocount = vec![0.0; n_times];
    for traj in trajectories {
        for (ti, &n) in traj.photocounts.iter().enumerate() {
            mean_photocount[ti] += n as f64;
        }
    }
    mean_photocount.iter_mut().for_each(|m| *m /= n_traj as f64);

    let qnd_strata = match qnd {
        None => None,
        Some(reference) => {
            let per_traj = qnd_populations.ok_or_else(|| {
                Error::Config(format!(
                    "projector set '{}' for the detection-record comparison not found",
                    reference.set_name
                ))
            })?;
            let mut reports = Vec::new();
            for ti in 0..n_times {
                // stratify by photocount at this snapshot
                let mut by_count: Vec<(u64, Vec<usize>)> = Vec::new();
                for (traj_idx, traj) in trajectories.iter().enumerate() {
                    let n = traj.photocounts[ti];
                    match by_count.iter_mut().find(|(c, _)| *c == n) {
                        Some((_, members)) => members.push(traj_idx),
                        None => by_count.push((n, vec![traj_idx])),
                    }
                }
                by_count.sort_by_key(|(c, _)| *c);
                for (count, members) in by_count {
                    if members.len() < reference.min_samples {
                        continue;
                    }
                    let n_proj = per_traj[members[0]][ti].len();
                    let mut empirical = vec![0.0; n_proj];
                    for &traj_idx in &members {
                        for (pi, &p) in per_traj[traj_idx][ti].iter().enumerate() {
                            empirical[pi] += p;
                        }
                    }
                    empirical
                        .iter_mut()
                        .for_each(|p| *p /= members.len() as f64);
                    let predicted =
                        qnd_distribution(reference.p0, count, times[ti], reference.kappa_c2)?;
                    reports.push(StratumReport {
                        time: times[ti],
                        photocount: count,
                        samples: members.len(),
                        l1_distance: l1_distance(&empirical, &predicted.probabilities),
                    });
                }
            }
            Some(reports)
        }
    };

    Ok(EnsembleSummary {
        times,
        trajectory_count: n_traj,
        observables: observable_series,
        populations: population_series,
        purity: purity_series,
        mean_photocount,
        qnd_strata,
    })
}

/// Small numerical statistics helpers.
pub mod stats {
    /// ln Gamma(x) by Lanczos approximation.
    pub fn ln_gamma(x: f64) -> f64 {
        const COEFFS: [f64; 6] = [
            76.180_091_729_471_46,
            -86.505_320_329_416_77,
            24.014_098_240_830_91,
            -1.231_739_572_450_155,
            0.120_865_097_386_617_7e-2,
            -0.539_523_938_495_3e-5,
        ];
        let mut y = x;
        let tmp = x + 5.5;
        let tmp = tmp - (x + 0.5) * tmp.ln();
        let mut ser = 1.000_000_000_190_015;
        for c in COEFFS {
            y += 1.0;
            ser += c / y;
        }
        -tmp + (2.506_628_274_631_000_5 * ser / x).ln()
    }

    /// Regularized lower incomplete gamma P(a, x).
    pub fn gamma_p(a: f64, x: f64) -> f64 {
        assert!(a > 0.0 && x >= 0.0);
        if x == 0.0 {
            return 0.0;
        }
        if x < a + 1.0 {
            // series representation
            let mut ap = a;
            let mut sum = 1.0 / a;
            let mut del = sum;
            for _ in 0..500 {
                ap += 1.0;
                del *= x / ap;
                sum += del;
                if del.abs() < sum.abs() * 1e-15 {
                    break;
                }
            }
            sum * (-x + a * x.ln() - ln_gamma(a)).exp()
        } else {
            1.0 - gamma_q_cf(a, x)
        }
    }

    /// Regularized upper incomplete gamma Q(a, x) by continued fraction,
    /// valid for x >= a + 1.
    fn gamma_q_cf(a: f64, x: f64) -> f64 {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-15 {
                break;
            }
        }
        h * (-x + a * x.ln() - ln_gamma(a)).exp()
    }

    /// Survival function of the chi-squared distribution with `dof` degrees
    /// of freedom.
    pub fn chi_squared_sf(x: f64, dof: f64) -> f64 {
        (1.0 - gamma_p(0.5 * dof, 0.5 * x)).clamp(0.0, 1.0)
    }

    /// Poisson probability mass function.
    pub fn poisson_pmf(k: u64, mean: f64) -> f64 {
        if mean == 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        (k as f64 * mean.ln() - mean - ln_gamma(k as f64 + 1.0)).exp()
    }

    /// Pearson chi-squared goodness-of-fit p-value of observed counts
    /// against a Poisson law. Bins with expected occupancy below 5 are
    /// pooled.
    pub fn poisson_chi_squared_pvalue(counts: &[u64], mean: f64) -> f64 {
        let n = counts.len() as f64;
        let max_count = counts.iter().copied().max().unwrap_or(0);
        let mut observed = vec![0.0; max_count as usize + 1];
        for &c in counts {
            observed[c as usize] += 1.0;
        }
        let mut expected: Vec<f64> = (0..=max_count)
            .map(|k| n * poisson_pmf(k, mean))
            .collect();
        // tail mass beyond max_count folds into the last bin
        let covered: f64 = expected.iter().sum();
        if let Some(last) = expected.last_mut() {
            *last += (n - covered).max(0.0);
        }
        // pool sparse bins left to right
        let mut pooled_obs = Vec::new();
        let mut pooled_exp = Vec::new();
        let mut acc_o = 0.0;
        let mut acc_e = 0.0;
        for (o, e) in observed.iter().zip(&expected) {
            acc_o += o;
            acc_e += e;
            if acc_e >= 5.0 {
                pooled_obs.push(acc_o);
                pooled_exp.push(acc_e);
                acc_o = 0.0;
                acc_e = 0.0;
            }
        }
        if acc_e > 0.0 {
            if let (Some(o), Some(e)) = (pooled_obs.last_mut(), pooled_exp.last_mut()) {
                *o += acc_o;
                *e += acc_e;
            } else {
                pooled_obs.push(acc_o);
                pooled_exp.push(acc_e);
            }
        }
        if pooled_obs.len() < 2 {
            return 1.0;
        }
        let statistic: f64 = pooled_obs
            .iter()
            .zip(&pooled_exp)
            .map(|(o, e)| (o - e) * (o - e) / e)
            .sum();
        chi_squared_sf(statistic, (pooled_obs.len() - 1) as f64)
    }

}
