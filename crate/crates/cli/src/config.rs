//! JSON run configurations, schema-validated with unknown keys rejected.

use std::collections::BTreeMap;
use std::path::PathBuf;

use adcfit::concentration::MprageParams;
use adcfit::inverse::OptimizeOpts;
use adcfit::mesh::{generate_phantom, read_mesh, Mesh, PhantomVariant, DEFAULT_SHELL_FRACTIONS};
use adcfit::AssembledSystem;
use serde::Deserialize;

use crate::CliError;

/// Where a command gets its mesh from.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    Path {
        path: PathBuf,
    },
    Phantom {
        resolution: usize,
        box_length_mm: f64,
        variant: Variant,
        #[serde(default)]
        shell_fractions: Option<[f64; 2]>,
    },
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    TwoDomain,
    ThreeDomain,
}

impl From<Variant> for PhantomVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::TwoDomain => PhantomVariant::TwoDomain,
            Variant::ThreeDomain => PhantomVariant::ThreeDomain,
        }
    }
}

impl MeshSource {
    pub fn load(&self, base: &std::path::Path) -> Result<Mesh, CliError> {
        match self {
            MeshSource::Path { path } => {
                read_mesh(resolve(base, path)).map_err(|e| CliError::Config(e.to_string()))
            }
            MeshSource::Phantom {
                resolution,
                box_length_mm,
                variant,
                shell_fractions,
            } => generate_phantom(
                *resolution,
                *box_length_mm,
                (*variant).into(),
                shell_fractions.unwrap_or(DEFAULT_SHELL_FRACTIONS),
            )
            .map_err(|e| CliError::Config(e.to_string())),
        }
    }
}

/// Paths inside configs and manifests resolve relative to the file that
/// names them.
pub fn resolve(base: &std::path::Path, path: &std::path::Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Subdomain diffusion keyed by name.
pub type DiffusionMap = BTreeMap<String, f64>;

pub fn label_for_name(name: &str) -> Option<u8> {
    match name {
        "csf" => Some(adcfit::mesh::SUBDOMAIN_CSF),
        "grey" => Some(adcfit::mesh::SUBDOMAIN_GREY),
        "white" => Some(adcfit::mesh::SUBDOMAIN_WHITE),
        _ => None,
    }
}

pub fn name_for_label(label: u8) -> &'static str {
    match label {
        adcfit::mesh::SUBDOMAIN_CSF => "csf",
        adcfit::mesh::SUBDOMAIN_GREY => "grey",
        _ => "white",
    }
}

/// Orders a named diffusion map along the system's subdomain labels.
pub fn diffusion_vector(map: &DiffusionMap, system: &AssembledSystem) -> Result<Vec<f64>, CliError> {
    for key in map.keys() {
        let label = label_for_name(key)
            .ok_or_else(|| CliError::Config(format!("unknown subdomain name '{key}'")))?;
        if !system.labels.contains(&label) {
            return Err(CliError::Config(format!(
                "subdomain '{key}' is not present in the mesh"
            )));
        }
    }
    system
        .labels
        .iter()
        .map(|&label| {
            let name = name_for_label(label);
            map.get(name).copied().ok_or_else(|| {
                CliError::Config(format!("missing diffusion coefficient for '{name}'"))
            })
        })
        .collect()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    /// The quadratic-in-time ramp used by the manufactured test case.
    Manufactured,
    Constant {
        value: f64,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        value: f64,
    },
    Field {
        path: PathBuf,
    },
    /// The earliest observation doubles as the initial state.
    FirstObservation,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub rtol: Option<f64>,
    #[serde(default)]
    pub memory: Option<usize>,
    #[serde(default)]
    pub max_halvings: Option<usize>,
}

impl OptimizerConfig {
    pub fn build(&self) -> OptimizeOpts {
        let mut opts = OptimizeOpts::default();
        if let Some(v) = self.max_iterations {
            opts.max_iterations = v;
        }
        if let Some(v) = self.rtol {
            opts.rtol = v;
        }
        if let Some(v) = self.memory {
            opts.memory = v;
        }
        if let Some(v) = self.max_halvings {
            opts.max_halvings = v;
        }
        opts
    }
}

fn default_lin_tol() -> f64 {
    adcfit::DEFAULT_LIN_TOL
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshGenConfig {
    pub resolution: usize,
    pub box_length_mm: f64,
    pub variant: Variant,
    #[serde(default)]
    pub shell_fractions: Option<[f64; 2]>,
    #[serde(default = "default_mesh_file")]
    pub mesh_file: String,
    #[serde(default)]
    pub export_vtk: bool,
}

fn default_mesh_file() -> String {
    "phantom.mesh".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub mesh: MeshSource,
    pub diffusion_mm2_h: DiffusionMap,
    pub boundary: BoundarySpec,
    pub initial: InitialSpec,
    pub dt_hours: f64,
    pub steps: usize,
    #[serde(default)]
    pub lumped_mass: bool,
    #[serde(default = "default_lin_tol")]
    pub lin_tol: f64,
    #[serde(default)]
    pub export_vtk: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub mesh: MeshSource,
    pub d_true_mm2_h: DiffusionMap,
    /// Generation grid; 0.24 h reproduces the manufactured protocol.
    #[serde(default = "default_dt_gen")]
    pub dt_gen_hours: f64,
    pub n_obs: usize,
    #[serde(default = "default_t_final")]
    pub t_final_hours: f64,
    #[serde(default)]
    pub noise_amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dt_gen() -> f64 {
    0.24
}

fn default_t_final() -> f64 {
    24.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_tilde: f64,
}

/// Ground truth for error reporting; the boundary truth is always the
/// manufactured ramp (the only generator the synthetic pipeline produces).
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub d_true_mm2_h: DiffusionMap,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvertConfig {
    pub mesh: MeshSource,
    /// Observation manifest written by `synth`.
    pub observations: PathBuf,
    #[serde(default = "default_initial")]
    pub initial: InitialSpec,
    pub reg: RegConfig,
    pub dt_hours: f64,
    pub steps: usize,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default = "default_lin_tol")]
    pub lin_tol: f64,
    #[serde(default)]
    pub truth: Option<TruthConfig>,
    #[serde(default)]
    pub export_vtk: bool,
}

fn default_initial() -> InitialSpec {
    InitialSpec::Constant { value: 0.0 }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub steps: Vec<usize>,
    pub noise_amps: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mesh: MeshSource,
    pub d_true_mm2_h: DiffusionMap,
    #[serde(default = "default_t_final")]
    pub t_final_hours: f64,
    pub n_obs: usize,
    /// Fixed generation grid; omit to generate on each cell's inversion grid
    /// (the committed inverse crime).
    #[serde(default)]
    pub dt_gen_hours: Option<f64>,
    pub grid: GridConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default = "default_lin_tol")]
    pub lin_tol: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    /// Baseline (pre-contrast) signal grid; its `.mask` companion, when
    /// present, marks CSF voxels.
    pub baseline_signal: PathBuf,
    pub contrast_signal: PathBuf,
    /// Baseline T1 map (ms).
    pub t1_map: PathBuf,
    pub params: MprageParams,
    #[serde(default = "default_csf_t1")]
    pub csf_t1_ms: f64,
    #[serde(default = "default_concentration_file")]
    pub output_file: String,
}

fn default_csf_t1() -> f64 {
    adcfit::concentration::CSF_BASELINE_T1_MS
}

fn default_concentration_file() -> String {
    "concentration.voxel".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtiConfig {
    pub lambda1: PathBuf,
    pub lambda2: PathBuf,
    pub lambda3: PathBuf,
    /// Region labels per voxel (0 = background).
    pub mask: PathBuf,
    #[serde(default = "default_water_free")]
    pub water_free_mm2_s: f64,
    #[serde(default = "default_agent_free")]
    pub agent_free_mm2_s: f64,
}

fn default_water_free() -> f64 {
    adcfit::dti::WATER_SELF_DIFFUSION_MM2_S
}

fn default_agent_free() -> f64 {
    adcfit::dti::CONTRAST_FREE_DIFFUSION_MM2_S
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessMethod {
    Raw,
    Gs,
    Cp,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SampleModeName {
    Trilinear,
    Nearest,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Signal grid; CP additionally needs its `.mask` companion.
    pub signal: PathBuf,
    pub method: PreprocessMethod,
    #[serde(default = "default_sigma")]
    pub sigma_mm: f64,
    pub mesh: MeshSource,
    #[serde(default = "default_sample_mode")]
    pub sample_mode: SampleModeName,
    #[serde(default = "default_field_file")]
    pub output_file: String,
}

fn default_sigma() -> f64 {
    1.5
}

fn default_sample_mode() -> SampleModeName {
    SampleModeName::Trilinear
}

fn default_field_file() -> String {
    "sampled.field".into()
}
