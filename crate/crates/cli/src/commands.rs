//! One function per subcommand. Loading and validation failures are config
//! errors (exit 2); solver and model failures are numerical (exit 3).

use std::path::Path;

use adcfit::concentration::{build_lookup, concentration_from_ratio, mprage_f};
use adcfit::dti::region_stats;
use adcfit::fem::{assemble, MassLumping};
use adcfit::forward::{forward_solve_tol, BoundaryControl, ControlState};
use adcfit::inverse::{
    default_initial_control, optimize, sweep, sweep_csv, InverseProblem, ObservationSeries,
    RegParams, SweepBase, SweepCell, SweepGrid, SweepRow,
};
use adcfit::mesh::{export_vtk, read_field, write_field, write_mesh, Mesh};
use adcfit::synthetic::{make_synthetic_observations, manufactured_control, manufactured_g, NoiseSpec};
use adcfit::voxel::{csf_project, gaussian_smooth, read_voxel_grid, sample_to_mesh, write_voxel_grid, SampleMode, VoxelGrid};
use adcfit::Marker;
use serde::{Deserialize, Serialize};

use crate::config::*;
use crate::manifest::RunManifest;
use crate::CliError;

fn cfg<T>(r: adcfit::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(e.to_string()))
}

fn num<T>(r: adcfit::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Numeric(e.to_string()))
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("writing {}: {e}", path.display()))
}

pub fn mesh_gen(cfg_json: MeshGenConfig, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let mesh = cfg(adcfit::mesh::generate_phantom(
        cfg_json.resolution,
        cfg_json.box_length_mm,
        cfg_json.variant.into(),
        cfg_json.shell_fractions.unwrap_or(adcfit::mesh::DEFAULT_SHELL_FRACTIONS),
    ))?;
    let path = out.join(&cfg_json.mesh_file);
    cfg(write_mesh(&mesh, &path))?;
    manifest.record(out, &path);
    if cfg_json.export_vtk {
        let vtk = path.with_extension("vtk");
        cfg(export_vtk(&mesh, &[], &vtk))?;
        manifest.record(out, &vtk);
    }
    Ok(())
}

fn boundary_rows(spec: &BoundarySpec, dofs: usize, dt: f64, steps: usize) -> BoundaryControl {
    BoundaryControl::from_rows(steps + 1, dofs, |j, _| match spec {
        BoundarySpec::Manufactured => manufactured_g(j as f64 * dt),
        BoundarySpec::Constant { value } => *value,
    })
}

/// Per-step field files plus the series manifest `{dt, k, files[]}`.
#[derive(Serialize, Deserialize)]
struct StateManifest {
    dt: f64,
    k: usize,
    files: Vec<String>,
}

pub fn forward(config: ForwardConfig, base: &Path, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let mesh = config.mesh.load(base)?;
    let lumping = if config.lumped_mass {
        MassLumping::Lumped
    } else {
        MassLumping::Consistent
    };
    let system = cfg(assemble(&mesh, lumping))?;
    let diffusion = diffusion_vector(&config.diffusion_mm2_h, &system)?;
    let control = ControlState {
        diffusion,
        g: boundary_rows(&config.boundary, system.num_dirichlet(), config.dt_hours, config.steps),
    };
    let u0 = match &config.initial {
        InitialSpec::Constant { value } => vec![*value; mesh.num_vertices()],
        InitialSpec::Field { path } => cfg(read_field(resolve(base, path), &mesh))?.values,
        InitialSpec::FirstObservation => {
            return Err(CliError::Config(
                "initial.type = first_observation only applies to invert".into(),
            ))
        }
    };
    let series = num(forward_solve_tol(&system, &control, &u0, config.dt_hours, config.steps, config.lin_tol))?;

    let fields_dir = out.join("fields");
    std::fs::create_dir_all(&fields_dir).map_err(|e| write_err(&fields_dir, e))?;
    let mut files = Vec::new();
    for (j, state) in series.states.iter().enumerate() {
        let path = fields_dir.join(format!("state_{j:04}.field"));
        let field = cfg(mesh.field(state.clone()))?;
        cfg(write_field(&field, &path))?;
        if config.export_vtk {
            let vtk = path.with_extension("vtk");
            cfg(export_vtk(&mesh, &[("u", &field)], &vtk))?;
        }
        files.push(format!("fields/state_{j:04}.field"));
        manifest.record(out, &path);
    }
    let states = StateManifest {
        dt: config.dt_hours,
        k: config.steps,
        files,
    };
    let path = out.join("states.json");
    std::fs::write(&path, serde_json::to_string_pretty(&states).unwrap() + "\n")
        .map_err(|e| write_err(&path, e))?;
    manifest.record(out, &path);
    Ok(())
}

/// Observation manifest: `{mesh, dt_gen, times_hours[], noise_amp, seed,
/// field_files[]}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationManifest {
    pub mesh: String,
    pub dt_gen: f64,
    pub times_hours: Vec<f64>,
    pub noise_amp: f64,
    pub seed: u64,
    pub field_files: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    d_true_mm2_h: DiffusionMap,
    boundary: String,
}

pub fn synth(config: SynthConfig, base: &Path, out: &Path, seed_flag: Option<u64>, manifest: &mut RunManifest) -> Result<(), CliError> {
    let mesh = config.mesh.load(base)?;
    let system = cfg(assemble(&mesh, MassLumping::Consistent))?;
    let d_true = diffusion_vector(&config.d_true_mm2_h, &system)?;
    let seed = seed_flag.unwrap_or(config.seed);
    manifest.seed = seed;
    let noise = NoiseSpec {
        amplitude: config.noise_amplitude,
        seed,
    };
    let obs = num(make_synthetic_observations(
        &system,
        &d_true,
        config.dt_gen_hours,
        config.n_obs,
        config.t_final_hours,
        &noise,
    ))?;

    let mesh_path = out.join("synth.mesh");
    cfg(write_mesh(&mesh, &mesh_path))?;
    manifest.record(out, &mesh_path);

    let mut field_files = Vec::new();
    for (i, values) in obs.fields().iter().enumerate() {
        let name = format!("obs_{i:03}.field");
        let path = out.join(&name);
        cfg(write_field(&cfg(mesh.field(values.clone()))?, &path))?;
        manifest.record(out, &path);
        field_files.push(name);
    }
    let record = ObservationManifest {
        mesh: "synth.mesh".into(),
        dt_gen: config.dt_gen_hours,
        times_hours: obs.times().to_vec(),
        noise_amp: config.noise_amplitude,
        seed,
        field_files,
    };
    let path = out.join("observations.json");
    std::fs::write(&path, serde_json::to_string_pretty(&record).unwrap() + "\n")
        .map_err(|e| write_err(&path, e))?;
    manifest.record(out, &path);

    let truth = TruthRecord {
        d_true_mm2_h: config.d_true_mm2_h.clone(),
        boundary: "manufactured".into(),
    };
    let path = out.join("truth.json");
    std::fs::write(&path, serde_json::to_string_pretty(&truth).unwrap() + "\n")
        .map_err(|e| write_err(&path, e))?;
    manifest.record(out, &path);
    Ok(())
}

fn load_observations(manifest_path: &Path, mesh: &Mesh) -> Result<(ObservationSeries, ObservationManifest), CliError> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", manifest_path.display())))?;
    let record: ObservationManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", manifest_path.display())))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut fields = Vec::new();
    for name in &record.field_files {
        fields.push(cfg(read_field(dir.join(name), mesh))?.values);
    }
    let series = cfg(ObservationSeries::new(record.times_hours.clone(), fields))?;
    Ok((series, record))
}

pub fn invert(config: InvertConfig, base: &Path, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let mesh = config.mesh.load(base)?;
    let system = cfg(assemble(&mesh, MassLumping::Consistent))?;
    let obs_path = resolve(base, &config.observations);
    let (observations, record) = load_observations(&obs_path, &mesh)?;

    let u0 = match &config.initial {
        InitialSpec::Constant { value } => vec![*value; mesh.num_vertices()],
        InitialSpec::Field { path } => cfg(read_field(resolve(base, path), &mesh))?.values,
        InitialSpec::FirstObservation => observations.fields()[0].clone(),
    };
    let reg = cfg(RegParams::new(config.reg.alpha, config.reg.beta, config.reg.gamma_tilde))?;
    let problem = cfg(InverseProblem::new(
        &system,
        u0,
        observations,
        reg,
        config.dt_hours,
        config.steps,
        config.lin_tol,
    ))?;
    let opts = config.optimizer.as_ref().map(|o| o.build()).unwrap_or_default();
    let init = default_initial_control(&system, config.steps);
    let truth = match &config.truth {
        Some(t) => {
            let d = diffusion_vector(&t.d_true_mm2_h, &system)?;
            Some(manufactured_control(&system, d, config.dt_hours, config.steps))
        }
        None => None,
    };
    let result = num(optimize(&problem, &init, &opts, truth.as_ref()))?;

    // Single-row CSV mirroring the sweep schema.
    let mut d_rel = [None, None, None];
    let mut g_rel = None;
    if let Some(errors) = &result.errors {
        for (slot, &label) in system.labels.iter().enumerate() {
            d_rel[(label - 1) as usize] = Some(errors.d_rel[slot]);
        }
        g_rel = Some(errors.g_rel);
    }
    let row = SweepRow {
        cell: SweepCell {
            alpha: config.reg.alpha,
            beta: config.reg.beta,
            gamma: config.reg.gamma_tilde,
            steps: config.steps,
            noise_amp: record.noise_amp,
        },
        iterations: result.iterations,
        converged: result.converged,
        d_rel,
        g_rel,
        objective: result.objective_history.last().copied(),
        error: None,
    };
    let path = out.join("results.csv");
    std::fs::write(&path, sweep_csv(std::slice::from_ref(&row))).map_err(|e| write_err(&path, e))?;
    manifest.record(out, &path);

    // Recovered boundary table: header line "rows dofs", one row per line.
    let path = out.join("g_recovered.txt");
    let mut text = format!("{} {}\n", result.control.g.rows(), result.control.g.dofs());
    for j in 0..result.control.g.rows() {
        let row: Vec<String> = result.control.g.row(j).iter().map(|v| format!("{v:.16e}")).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| write_err(&path, e))?;
    manifest.record(out, &path);

    #[derive(Serialize)]
    struct Recovered {
        d_mm2_h: DiffusionMap,
        d_mm2_s: DiffusionMap,
        iterations: usize,
        converged: bool,
        objective: f64,
    }
    let mut d_mm2_h = DiffusionMap::new();
    let mut d_mm2_s = DiffusionMap::new();
    for (slot, &label) in system.labels.iter().enumerate() {
        let name = name_for_label(label).to_string();
        d_mm2_h.insert(name.clone(), result.control.diffusion[slot]);
        d_mm2_s.insert(name, result.control.diffusion[slot] * adcfit::MM2_PER_H_IN_MM2_PER_S);
    }
    let recovered = Recovered {
        d_mm2_h,
        d_mm2_s,
        iterations: result.iterations,
        converged: result.converged,
        objective: result.objective_history.last().copied().unwrap_or(f64::NAN),
    };
    let path = out.join("recovered.json");
    std::fs::write(&path, serde_json::to_string_pretty(&recovered).unwrap() + "\n")
        .map_err(|e| write_err(&path, e))?;
    manifest.record(out, &path);

    if config.export_vtk {
        let series = num(problem.forward(&result.control))?;
        let last = cfg(mesh.field(series.states.last().unwrap().clone()))?;
        let path = out.join("reconstruction_final.vtk");
        cfg(export_vtk(&mesh, &[("u", &last)], &path))?;
        manifest.record(out, &path);
    }
    Ok(())
}

pub fn run_sweep(config: SweepConfig, base: &Path, out: &Path, seed_flag: Option<u64>, manifest: &mut RunManifest) -> Result<(), CliError> {
    let mesh = config.mesh.load(base)?;
    let system = cfg(assemble(&mesh, MassLumping::Consistent))?;
    let d_true = diffusion_vector(&config.d_true_mm2_h, &system)?;
    let seed = seed_flag.unwrap_or(config.seed);
    manifest.seed = seed;
    let sweep_base = SweepBase {
        system: &system,
        d_true,
        t_final: config.t_final_hours,
        n_obs: config.n_obs,
        dt_gen: config.dt_gen_hours,
        seed,
        opts: config.optimizer.as_ref().map(|o| o.build()).unwrap_or_default(),
        lin_tol: config.lin_tol,
    };
    let grid = SweepGrid {
        alphas: config.grid.alphas.clone(),
        betas: config.grid.betas.clone(),
        gammas: config.grid.gammas.clone(),
        steps: config.grid.steps.clone(),
        noise_amps: config.grid.noise_amps.clone(),
    };
    let rows = sweep(&sweep_base, &grid);
    for row in &rows {
        if let Some(err) = &row.error {
            eprintln!(
                "cell (alpha={:e}, beta={:e}, gamma={:e}, k={}, noise={}) failed: {err}",
                row.cell.alpha, row.cell.beta, row.cell.gamma, row.cell.steps, row.cell.noise_amp
            );
        }
    }
    let path = out.join("results.csv");
    std::fs::write(&path, sweep_csv(&rows)).map_err(|e| write_err(&path, e))?;
    manifest.record(out, &path);
    Ok(())
}

pub fn concentration(config: ConcentrationConfig, base: &Path, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let baseline = cfg(read_voxel_grid(resolve(base, &config.baseline_signal)))?;
    let contrast = cfg(read_voxel_grid(resolve(base, &config.contrast_signal)))?;
    let t1_map = cfg(read_voxel_grid(resolve(base, &config.t1_map)))?;
    if baseline.dims != contrast.dims || baseline.dims != t1_map.dims {
        return Err(CliError::Config("signal and T1 grids differ in shape".into()));
    }
    cfg(config.params.validate())?;
    let lut = num(build_lookup(&config.params))?;
    // Fluid voxels (from the baseline mask) use the fixed CSF baseline T1.
    let csf = baseline.labels.clone();

    let mut values = Vec::with_capacity(baseline.len());
    let mut clamped_negative = 0usize;
    let mut saturated = 0usize;
    let mut skipped_nonpositive_signal = 0usize;
    let mut t1_out_of_range = 0usize;
    let (t1_lo, t1_hi) = (
        adcfit::concentration::LOOKUP_T1_MIN_MS,
        adcfit::concentration::LOOKUP_T1_MAX_MS,
    );
    for v in 0..baseline.len() {
        let s0 = baseline.values[v];
        let st = contrast.values[v];
        if !(s0 > 0.0 && st > 0.0) {
            skipped_nonpositive_signal += 1;
            values.push(0.0);
            continue;
        }
        let is_csf = csf.as_ref().map(|l| l[v] != 0).unwrap_or(false);
        let mut t1_0 = if is_csf { config.csf_t1_ms } else { t1_map.values[v] };
        if t1_0 < t1_lo || t1_0 > t1_hi {
            t1_out_of_range += 1;
            t1_0 = t1_0.clamp(t1_lo, t1_hi);
        }
        let est = num(concentration_from_ratio(st / s0, t1_0, &config.params, &lut))?;
        if est.clamped_negative {
            clamped_negative += 1;
        }
        if est.saturated {
            saturated += 1;
        }
        values.push(est.concentration_mm);
    }
    let grid = cfg(VoxelGrid::new(baseline.dims, baseline.affine, values, baseline.labels.clone()))?;
    let path = out.join(&config.output_file);
    cfg(write_voxel_grid(&grid, &path))?;
    manifest.record(out, &path);
    manifest.stats = serde_json::json!({
        "clamped_negative": clamped_negative,
        "saturated": saturated,
        "skipped_nonpositive_signal": skipped_nonpositive_signal,
        "t1_out_of_range": t1_out_of_range,
        "f_baseline_tissue_1200ms": mprage_f(1200.0, &config.params).ok(),
    });
    Ok(())
}

pub fn dti(config: DtiConfig, base: &Path, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let l1 = cfg(read_voxel_grid(resolve(base, &config.lambda1)))?;
    let l2 = cfg(read_voxel_grid(resolve(base, &config.lambda2)))?;
    let l3 = cfg(read_voxel_grid(resolve(base, &config.lambda3)))?;
    let mask = cfg(read_voxel_grid(resolve(base, &config.mask)))?;
    if l1.dims != l2.dims || l1.dims != l3.dims || l1.dims != mask.dims {
        return Err(CliError::Config("eigenvalue and mask grids differ in shape".into()));
    }
    let labels: Vec<u8> = mask.values.iter().map(|&v| v.max(0.0).min(255.0) as u8).collect();
    let stats = num(region_stats(
        [&l1.values, &l2.values, &l3.values],
        &labels,
        config.water_free_mm2_s,
        config.agent_free_mm2_s,
    ))?;
    let mut text = String::from(
        "region,voxels,md_median_mm2_s,md_mad_mm2_s,fa_median,fa_mad,tortuosity,gadobutrol_adc_mm2_s,sub_unity_tortuosity\n",
    );
    for s in &stats {
        text.push_str(&format!(
            "{},{},{:.6e},{:.6e},{:.6},{:.6},{:.6},{:.6e},{}\n",
            s.label,
            s.voxels,
            s.md_median,
            s.md_mad,
            s.fa_median,
            s.fa_mad,
            s.tortuosity,
            s.gadobutrol_adc,
            s.tortuosity < 1.0
        ));
    }
    let path = out.join("dti.csv");
    std::fs::write(&path, text).map_err(|e| write_err(&path, e))?;
    manifest.record(out, &path);
    Ok(())
}

pub fn preprocess(config: PreprocessConfig, base: &Path, out: &Path, manifest: &mut RunManifest) -> Result<(), CliError> {
    let signal = cfg(read_voxel_grid(resolve(base, &config.signal)))?;
    let mesh = config.mesh.load(base)?;
    let mode = match config.sample_mode {
        SampleModeName::Trilinear => SampleMode::Trilinear,
        SampleModeName::Nearest => SampleMode::Nearest,
    };
    let mut cp_fallback = 0usize;
    let sampled = match config.method {
        PreprocessMethod::Raw => num(sample_to_mesh(&signal, &mesh, mode))?,
        PreprocessMethod::Gs => {
            let smoothed = num(gaussian_smooth(&signal, config.sigma_mm))?;
            num(sample_to_mesh(&smoothed, &mesh, mode))?
        }
        PreprocessMethod::Cp => {
            let mut sampled = num(sample_to_mesh(&signal, &mesh, mode))?;
            let projection = num(csf_project(
                &signal,
                &signal,
                &mesh,
                &[Marker::RSas, Marker::BVentricle],
            ))?;
            cp_fallback = projection.fallback.len();
            for (&vertex, &value) in projection.vertices.iter().zip(&projection.values) {
                sampled.field.values[vertex] = value;
            }
            sampled
        }
    };
    let path = out.join(&config.output_file);
    cfg(write_field(&sampled.field, &path))?;
    manifest.record(out, &path);
    manifest.stats = serde_json::json!({
        "clamped_vertices": sampled.clamped.len(),
        "cp_fallback_vertices": cp_fallback,
    });
    Ok(())
}
