//! Run configuration: one TOML file is the single source of truth for an
//! experiment; command-line flags may override the seed and output paths.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{build_hamiltonian, Boundary, FockBasis, LatticeSpec};
use crate::lightmatter::{
    build_bond_operator, build_density_operator, build_jump_operator, coupling_coefficients,
    BeamGeometry, CouplingCoefficients, JumpOperator, WannierModel,
};
use crate::operator::MatrixOperator;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub lattice: LatticeConfig,
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub wannier: WannierConfig,
    pub dynamics: DynamicsConfig,
    #[serde(default)]
    pub initial_state: InitialStateConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub n_atoms: usize,
    pub n_sites: usize,
    #[serde(default = "default_hopping")]
    pub j: f64,
    #[serde(default)]
    pub u: f64,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
}

fn default_hopping() -> f64 {
    1.0
}

fn default_boundary() -> Boundary {
    Boundary::Periodic
}

/// Geometry preset names accepted in config files.
pub const PRESET_UNIFORM: &str = "uniform-B1";
pub const PRESET_ALTERNATING: &str = "alternating-B2";
pub const PRESET_CUSTOM: &str = "custom";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// "uniform-B1", "alternating-B2" or "custom".
    pub preset: String,
    /// Direct bond coefficient for the uniform preset.
    #[serde(default = "default_unit")]
    pub j1: f64,
    /// Direct bond coefficient for the alternating preset.
    #[serde(default = "default_unit")]
    pub j2: f64,
    /// Rayleigh amplitude C.
    #[serde(default = "default_unit")]
    pub c_re: f64,
    #[serde(default)]
    pub c_im: f64,
    /// Illuminated sites; defaults to the whole lattice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub illuminated: Option<usize>,
    /// Standing-wave parameters for the custom preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomBeam>,
}

fn default_unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomBeam {
    /// x-wavevector components in units of pi/a.
    pub kx_in: f64,
    pub kx_out: f64,
    /// Phase shifts in radians.
    pub phi_in: f64,
    pub phi_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WannierConfig {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    0.2
}

impl Default for WannierConfig {
    fn default() -> Self {
        WannierConfig { sigma: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// kappa |C|^2, the photodetection rate scale.
    pub kappa_c2: f64,
    pub total_time: f64,
    pub max_dt: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default = "default_trajectories")]
    pub n_trajectories: usize,
    #[serde(default)]
    pub seed: u64,
    /// Master-equation step; derived from the generator scales when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_dt: Option<f64>,
    /// Master-equation snapshot spacing; defaults to the trajectory grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_snapshot_interval: Option<f64>,
}

fn default_stride() -> usize {
    100
}

fn default_trajectories() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialStateConfig {
    /// Occupation string, e.g. "0,0,1,1,1,1,0,0".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occupations: Option<String>,
    /// Superposition terms (amplitude, occupation string); normalized after
    /// assembly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superposition: Option<Vec<AmplitudeTerm>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeTerm {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
    pub occupations: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: String,
    /// "csv" or "json" for tabular artifacts.
    #[serde(default = "default_format")]
    pub format: String,
}

fn default_directory() -> String {
    "out".into()
}

fn default_format() -> String {
    "csv".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_directory(),
            format: default_format(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Projector families to compute and track: any of "measurement",
    /// "hamiltonian", "conserved", "emergent", "parity".
    #[serde(default = "default_subspaces")]
    pub subspaces: Vec<String>,
    /// Compare detection-conditioned histograms against the analytic update.
    #[serde(default)]
    pub qnd_check: bool,
    /// Track pair-occupation observables O_k along trajectories.
    #[serde(default = "default_true")]
    pub track_pair_occupations: bool,
    /// Compare the trajectory average against the master equation.
    #[serde(default)]
    pub compare_master: bool,
    #[serde(default = "default_min_samples")]
    pub min_stratum_samples: usize,
}

fn default_subspaces() -> Vec<String> {
    vec!["measurement".into(), "emergent".into()]
}

fn default_true() -> bool {
    true
}

fn default_min_samples() -> usize {
    100
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            subspaces: default_subspaces(),
            qnd_check: false,
            track_pair_occupations: true,
            compare_master: false,
            min_stratum_samples: default_min_samples(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        match self.geometry.preset.as_str() {
            PRESET_UNIFORM | PRESET_ALTERNATING => {}
            PRESET_CUSTOM => {
                if self.geometry.custom.is_none() {
                    return Err(Error::Config(
                        "custom geometry preset needs a [geometry.custom] table".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown geometry preset '{other}' \
                     (expected uniform-B1, alternating-B2 or custom)"
                )))
            }
        }
        if self.dynamics.kappa_c2 < 0.0 {
            return Err(Error::Config("kappa_c2 must be >= 0".into()));
        }
        if let Some(k) = self.geometry.illuminated {
            if k == 0 || k > self.lattice.n_sites {
                return Err(Error::Config(format!(
                    "illuminated = {k} outside 1..={}",
                    self.lattice.n_sites
                )));
            }
        }
        Ok(())
    }

    pub fn lattice_spec(&self) -> LatticeSpec {
        LatticeSpec {
            j: self.lattice.j,
            u: self.lattice.u,
            boundary: self.lattice.boundary,
        }
    }

    pub fn rayleigh_amplitude(&self) -> Complex64 {
        Complex64::new(self.geometry.c_re, self.geometry.c_im)
    }

    /// Bare cavity rate kappa recovered from kappa |C|^2.
    pub fn kappa(&self) -> Result<f64> {
        let c2 = self.rayleigh_amplitude().norm_sqr();
        if self.dynamics.kappa_c2 == 0.0 {
            return Ok(0.0);
        }
        if c2 == 0.0 {
            return Err(Error::Config(
                "kappa_c2 > 0 requires a nonzero Rayleigh amplitude C".into(),
            ));
        }
        Ok(self.dynamics.kappa_c2 / c2)
    }

    pub fn coupling(&self) -> Result<CouplingCoefficients> {
        let m = self.lattice.n_sites;
        let k = self.geometry.illuminated.unwrap_or(m);
        match self.geometry.preset.as_str() {
            PRESET_UNIFORM => {
                if k != m {
                    return Err(Error::Config(
                        "direct uniform preset assumes full illumination; \
                         use the custom preset for partial coverage"
                            .into(),
                    ));
                }
                Ok(CouplingCoefficients::uniform(self.geometry.j1, m))
            }
            PRESET_ALTERNATING => {
                if k != m {
                    return Err(Error::Config(
                        "direct alternating preset assumes full illumination; \
                         use the custom preset for partial coverage"
                            .into(),
                    ));
                }
                CouplingCoefficients::alternating(self.geometry.j2, m)
            }
            PRESET_CUSTOM => {
                let custom = self.geometry.custom.as_ref().expect("validated");
                let geom = BeamGeometry {
                    kx_in: custom.kx_in,
                    kx_out: custom.kx_out,
                    phi_in: custom.phi_in,
                    phi_out: custom.phi_out,
                    c_amp: self.rayleigh_amplitude(),
                    illuminated: k,
                };
                coupling_coefficients(
                    &geom,
                    &WannierModel {
                        sigma: self.wannier.sigma,
                    },
                    m,
                )
            }
            _ => unreachable!("validated"),
        }
    }

    /// Assemble the basis, Hamiltonian and jump operator.
    pub fn build_system(&self) -> Result<System> {
        let basis = Arc::new(FockBasis::new(self.lattice.n_atoms, self.lattice.n_sites)?);
        let h0 = build_hamiltonian(&basis, &self.lattice_spec());
        let coeffs = self.coupling()?;
        let density = build_density_operator(&coeffs, &basis)?;
        let bond = build_bond_operator(&coeffs, &basis, self.lattice.boundary)?;
        let jump = build_jump_operator(self.rayleigh_amplitude(), &density, &bond)?;
        Ok(System {
            basis,
            h0,
            jump,
            kappa: self.kappa()?,
        })
    }

    /// Resolve the configured initial state in the given basis.
    pub fn initial_state(&self, basis: &Arc<FockBasis>) -> Result<DVector<Complex64>> {
        match (&self.initial_state.occupations, &self.initial_state.superposition) {
            (Some(_), Some(_)) => Err(Error::Config(
                "specify either occupations or superposition, not both".into(),
            )),
            (Some(occ), None) => {
                let occupations = parse_occupations(occ, basis.n_sites(), basis.n_atoms())?;
                basis.fock_state(&occupations)
            }
            (None, Some(terms)) => {
                if terms.is_empty() {
                    return Err(Error::Config("superposition list is empty".into()));
                }
                let mut psi = DVector::zeros(basis.dim());
                for term in terms {
                    let occupations =
                        parse_occupations(&term.occupations, basis.n_sites(), basis.n_atoms())?;
                    let idx = basis.index_of(&occupations).expect("parse checked the sum");
                    psi[idx] += Complex64::new(term.re, term.im);
                }
                let norm = psi.norm();
                if norm == 0.0 {
                    return Err(Error::Config("superposition sums to zero".into()));
                }
                psi /= Complex64::new(norm, 0.0);
                Ok(psi)
            }
            (None, None) => Err(Error::Config(
                "no initial state configured (set initial_state.occupations)".into(),
            )),
        }
    }
}

/// Assembled operators for one configured experiment.
pub struct System {
    pub basis: Arc<FockBasis>,
    pub h0: MatrixOperator,
    pub jump: JumpOperator,
    pub kappa: f64,
}

/// Parse "0,0,1,1,1,1,0,0" into occupations, checking length and atom count.
pub fn parse_occupations(text: &str, n_sites: usize, n_atoms: usize) -> Result<Vec<u8>> {
    let occupations: Vec<u8> = text
        .split(',')
        .map(|part| {
            part.trim().parse::<u8>().map_err(|_| {
                Error::Config(format!("bad occupation entry '{}' in '{text}'", part.trim()))
            })
        })
        .collect::<Result<_>>()?;
    if occupations.len() != n_sites {
        return Err(Error::Config(format!(
            "occupation string '{text}' has {} sites, lattice has {n_sites}",
            occupations.len()
        )));
    }
    let total: usize = occupations.iter().map(|&n| n as usize).sum();
    if total != n_atoms {
        return Err(Error::Config(format!(
            "occupation string '{text}' holds {total} atoms, config says {n_atoms}"
        )));
    }
    Ok(occupations)
}
