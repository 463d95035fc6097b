//! End-to-end case execution.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.resolved.toml   rerunnable echo of every setting
//! true_model.csv/.png      core grid in the inversion domain
//! data_clean.csv           noise-free forward data
//! data_observed.csv        noisy data with uncertainties
//! nfs/                     model.csv/.png, history.csv, weights.bin
//! conventional/            model.csv/.png, history.csv
//! svd/                     spectrum.csv, u_###.csv/.png, svd.json
//! metrics.json
//! ```
//!
//! Tomography models are slowness (s/m); DC models are log10 conductivity.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use nfinv_core::checkpoint::write_checkpoint;
use nfinv_core::dcr_forward::{build_dipole_dipole_survey, DcrSimulation};
use nfinv_core::encoding::{encode, EncodedInput};
use nfinv_core::inversion::{
    artifact_energy, conventional_invert, high_frequency_energy, nfs_invert, rmse, CoolingSchedule, DataSet,
    InversionResult, NfsOptions, Regularization, StopReason,
};
use nfinv_core::mesh::{build_dcr_mesh, build_tomo_mesh, TensorMesh};
use nfinv_core::neural_field::{Mlp, MlpConfig};
use nfinv_core::scenarios::{add_noise, make_case1, make_case2, make_case3, make_case4, NoisyData, TrueModel};
use nfinv_core::seeds::derive_seed;
use nfinv_core::simulation::Simulation;
use nfinv_core::svd_analysis::{analyze_trained_network, SvdMode, SvdResult};
use nfinv_core::tomo_forward::{build_crosshole_survey, CrossholeSurvey, TomoSimulation};
use serde::Serialize;

use crate::error::CliError;
use crate::io::{self, Grid};
use crate::manifest::{self, CaseId, RunManifest, SvdMethod};
use crate::render::{render_heatmap, RenderOptions};

/// Radial cutoff for the high-frequency metric: a quarter of the grid Nyquist.
pub const HIGH_FREQUENCY_CUTOFF: f64 = 0.125;

/// Sub-seeds fanned out from the manifest seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub init: u64,
    pub noise: u64,
    pub grf: u64,
    pub svd: u64,
    pub probe: u64,
}

impl Seeds {
    pub fn from_global(seed: u64) -> Self {
        Self {
            init: derive_seed(seed, "init"),
            noise: derive_seed(seed, "noise"),
            grf: derive_seed(seed, "grf"),
            svd: derive_seed(seed, "svd"),
            probe: derive_seed(seed, "probe"),
        }
    }
}

pub enum Physics {
    Tomo { sim: TomoSimulation, survey: CrossholeSurvey },
    Dcr { sim: DcrSimulation },
}

impl Physics {
    pub fn n_data(&self) -> usize {
        match self {
            Physics::Tomo { sim, .. } => sim.n_data(),
            Physics::Dcr { sim } => sim.n_data(),
        }
    }

    pub fn predict(&self, model: &[f64]) -> nfinv_core::Result<Vec<f64>> {
        match self {
            Physics::Tomo { sim, .. } => Ok(sim.predicted(&sim.fields(model)?)),
            Physics::Dcr { sim } => Ok(sim.predicted(&sim.fields(model)?)),
        }
    }
}

pub struct Scenario {
    pub manifest: RunManifest,
    pub seeds: Seeds,
    pub mesh: TensorMesh,
    pub truth: TrueModel,
    pub physics: Physics,
    pub clean: Vec<f64>,
    pub noisy: NoisyData,
}

pub fn build_mesh(m: &RunManifest) -> Result<TensorMesh, CliError> {
    let s = &m.mesh;
    let mesh = if m.case.is_tomography() {
        build_tomo_mesh(s.nx, s.nz, s.dx, s.dz)
    } else {
        build_dcr_mesh(s.nx, s.nz, s.dx, s.dz, s.n_pad, s.pad_factor)
    };
    mesh.map_err(|e| CliError::Schema { path: "mesh".into(), message: e.to_string() })
}

pub fn build_truth(m: &RunManifest, mesh: &TensorMesh, seeds: &Seeds) -> Result<TrueModel, CliError> {
    let t = &m.truth;
    let missing = || CliError::Schema { path: format!("truth.{}", m.case.name()), message: "missing".into() };
    let truth = match m.case {
        CaseId::Case1 => make_case1(mesh, t.case1.as_ref().ok_or_else(missing)?),
        CaseId::Case2 => make_case2(mesh, t.case2.as_ref().ok_or_else(missing)?, seeds.grf),
        CaseId::Case3 => make_case3(mesh, t.case3.as_ref().ok_or_else(missing)?),
        CaseId::Case4 => make_case4(mesh, t.case4.as_ref().ok_or_else(missing)?),
    };
    truth.map_err(|e| CliError::Schema { path: format!("truth.{}", m.case.name()), message: e.to_string() })
}

pub fn build_physics(m: &RunManifest, mesh: &TensorMesh, truth: &TrueModel) -> Result<Physics, CliError> {
    let geometry = |path: &str, e: nfinv_core::Error| CliError::Schema { path: path.into(), message: e.to_string() };
    if m.case.is_tomography() {
        let spec = m.survey.crosshole.as_ref().expect("validated");
        let survey = build_crosshole_survey(mesh, spec.spacing).map_err(|e| geometry("survey.crosshole", e))?;
        let sim = TomoSimulation::new(mesh.clone(), &survey, truth.background)?;
        Ok(Physics::Tomo { sim, survey })
    } else {
        let spec = m.survey.dipole_dipole.as_ref().expect("validated");
        let mut survey = build_dipole_dipole_survey(spec.line_length, spec.station_spacing, spec.max_receivers)
            .map_err(|e| geometry("survey.dipole_dipole", e))?;
        survey.current = spec.current;
        let survey = survey.centered_on(mesh).map_err(|e| geometry("survey.dipole_dipole", e))?;
        let sim = DcrSimulation::new(mesh.clone(), survey, 10f64.powf(truth.background))?;
        Ok(Physics::Dcr { sim })
    }
}

/// True model, physics and (clean, noisy) data for a manifest.
pub fn build_scenario(m: &RunManifest) -> Result<Scenario, CliError> {
    manifest::validate(m)?;
    let seeds = Seeds::from_global(m.seed);
    let mesh = build_mesh(m)?;
    let truth = build_truth(m, &mesh, &seeds)?;
    let physics = build_physics(m, &mesh, &truth)?;
    let clean = physics.predict(&truth.values)?;
    let noisy = add_noise(&clean, &m.noise, seeds.noise)?;
    Ok(Scenario { manifest: m.clone(), seeds, mesh, truth, physics, clean, noisy })
}

pub fn encoded_input(m: &RunManifest, mesh: &TensorMesh) -> Result<EncodedInput, CliError> {
    let [lo, hi] = m.network.coordinate_range;
    Ok(encode(&m.encoding, &mesh.normalized_centers(lo, hi)?)?)
}

pub fn network_config(m: &RunManifest) -> MlpConfig {
    MlpConfig::new(m.encoding.output_dim(2), &m.network.hidden, m.network.head)
}

fn reference_value(scn: &Scenario, m_ref: Option<f64>) -> Vec<f64> {
    vec![m_ref.unwrap_or(scn.truth.background); scn.truth.values.len()]
}

fn regularization(
    scn: &Scenario,
    cfg: Option<&nfinv_core::inversion::RegularizationConfig>,
) -> Result<Option<Regularization>, CliError> {
    cfg.map(|c| Regularization::new(c.clone(), &scn.mesh, reference_value(scn, c.m_ref)))
        .transpose()
        .map_err(CliError::from)
}

fn target(chi2: Option<f64>, n_data: usize) -> Option<f64> {
    chi2.map(|c| 0.5 * c * n_data as f64)
}

/// Neural-field inversion; returns the result and the trained network.
pub fn run_nfs(scn: &Scenario, checkpoint_dir: Option<PathBuf>) -> Result<(InversionResult, Mlp), CliError> {
    let m = &scn.manifest;
    let z = encoded_input(m, &scn.mesh)?;
    let mut mlp = Mlp::init_kaiming(network_config(m), scn.seeds.init)?;
    let opts = NfsOptions {
        epochs: m.nfs.epochs,
        adam: m.nfs.adam,
        schedule: m.nfs.tau.map(CoolingSchedule::new).transpose()?,
        regularization: regularization(scn, m.nfs.regularization.as_ref())?,
        target_misfit: target(m.nfs.target_chi2, scn.physics.n_data()),
        checkpoint_dir,
        checkpoint_every: m.nfs.checkpoint_every,
    };
    let data = DataSet { observed: &scn.noisy.observed, weights: &scn.noisy.weights };
    let result = match &scn.physics {
        Physics::Tomo { sim, .. } => nfs_invert(sim, data, &mut mlp, &z, opts),
        Physics::Dcr { sim } => nfs_invert(sim, data, &mut mlp, &z, opts),
    }?;
    Ok((result, mlp))
}

/// Cell-space baseline started from the reference model.
pub fn run_conventional(scn: &Scenario) -> Result<InversionResult, CliError> {
    let m = &scn.manifest;
    let reg = regularization(scn, m.conventional.regularization.as_ref())?;
    let m0 = reference_value(scn, m.conventional.regularization.as_ref().and_then(|r| r.m_ref));
    let mut cfg = m.conventional.solver.clone();
    cfg.target_misfit = target(m.conventional.target_chi2, scn.physics.n_data());
    let data = DataSet { observed: &scn.noisy.observed, weights: &scn.noisy.weights };
    let result = match &scn.physics {
        Physics::Tomo { sim, .. } => conventional_invert(sim, data, m0, reg, &cfg, scn.seeds.probe),
        Physics::Dcr { sim } => conventional_invert(sim, data, m0, reg, &cfg, scn.seeds.probe),
    }?;
    Ok(result)
}

pub fn svd_mode(m: &RunManifest, seed: u64) -> SvdMode {
    match m.svd.method {
        SvdMethod::Exact => SvdMode::Exact,
        SvdMethod::Gram => SvdMode::Gram,
        SvdMethod::Randomized => SvdMode::Randomized {
            oversampling: m.svd.oversampling,
            power_iterations: m.svd.power_iterations,
            seed,
        },
    }
}

pub fn run_svd(m: &RunManifest, mesh: &TensorMesh, mlp: &Mlp, seed: u64) -> Result<SvdResult, CliError> {
    let z = encoded_input(m, mesh)?;
    Ok(analyze_trained_network(mlp, &z, m.svd.k, svd_mode(m, seed), m.svd.budget_mib << 20)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct MethodMetrics {
    pub rmse: f64,
    pub final_misfit: f64,
    /// `2 φ_d / n_data`
    pub chi2: f64,
    pub artifact_energy: f64,
    pub high_frequency_energy: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub converged: bool,
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SvdSummary {
    pub mode: SvdMode,
    pub k: usize,
    pub singular_values: Vec<f64>,
    pub decay_ratio_1_10: Option<f64>,
    pub orthonormality_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    pub case: CaseId,
    pub seed: u64,
    pub n_data: usize,
    pub n_model: usize,
    pub methods: BTreeMap<String, MethodMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub svd: Option<SvdSummary>,
}

pub fn method_metrics(scn: &Scenario, result: &InversionResult, runtime_seconds: f64) -> Result<MethodMetrics, CliError> {
    let t = &scn.truth;
    Ok(MethodMetrics {
        rmse: rmse(&result.model, &t.values),
        final_misfit: result.final_misfit,
        chi2: 2.0 * result.final_misfit / scn.physics.n_data() as f64,
        artifact_energy: artifact_energy(&result.model, &t.values, &t.target_mask),
        high_frequency_energy: high_frequency_energy(
            &result.model,
            scn.mesh.nx_core,
            scn.mesh.nz_core,
            HIGH_FREQUENCY_CUTOFF,
        )?,
        iterations: result.misfit_history.len(),
        stop: result.stop,
        converged: result.converged,
        runtime_seconds,
    })
}

fn core_grid(mesh: &TensorMesh, values: Vec<f64>) -> Grid {
    Grid::new(mesh.nx_core, mesh.nz_core, mesh.dx_core, mesh.dz_core, values)
}

/// Truth-range colour scale so recovered models compare directly.
fn truth_scale(truth: &TrueModel) -> RenderOptions {
    let (lo, hi) = truth.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    RenderOptions { vmin: Some(lo), vmax: Some(hi), pixels_per_cell: 0 }
}

pub fn write_grid_and_image(dir: &Path, stem: &str, grid: &Grid, opts: &RenderOptions) -> Result<(), CliError> {
    io::write_grid(&dir.join(format!("{stem}.csv")), grid)?;
    render_heatmap(grid, opts, &dir.join(format!("{stem}.png")))
}

pub fn write_manifest_echo(dir: &Path, m: &RunManifest) -> Result<(), CliError> {
    io::write_text(&dir.join("manifest.resolved.toml"), &manifest::to_toml(m))
}

/// Truth grid and image plus the manifest echo.
pub fn write_truth(dir: &Path, scn_manifest: &RunManifest, mesh: &TensorMesh, truth: &TrueModel) -> Result<(), CliError> {
    write_manifest_echo(dir, scn_manifest)?;
    write_grid_and_image(dir, "true_model", &core_grid(mesh, truth.values.clone()), &truth_scale(truth))
}

pub fn write_data(dir: &Path, scn: &Scenario) -> Result<(), CliError> {
    let zeros = vec![0.0; scn.clean.len()];
    match &scn.physics {
        Physics::Tomo { survey, .. } => {
            io::write_tomo_data(&dir.join("data_clean.csv"), survey, &scn.clean, &zeros)?;
            io::write_tomo_data(&dir.join("data_observed.csv"), survey, &scn.noisy.observed, &scn.noisy.uncertainty)
        }
        Physics::Dcr { sim } => {
            io::write_dcr_data(&dir.join("data_clean.csv"), sim.survey(), &scn.clean, &zeros)?;
            io::write_dcr_data(&dir.join("data_observed.csv"), sim.survey(), &scn.noisy.observed, &scn.noisy.uncertainty)
        }
    }
}

fn write_method(dir: &Path, scn: &Scenario, result: &InversionResult) -> Result<(), CliError> {
    write_grid_and_image(dir, "model", &core_grid(&scn.mesh, result.model.clone()), &truth_scale(&scn.truth))?;
    io::write_history(&dir.join("history.csv"), result)
}

pub fn write_svd(dir: &Path, mesh: &TensorMesh, svd: &SvdResult, export_vectors: usize) -> Result<SvdSummary, CliError> {
    io::write_spectrum(&dir.join("spectrum.csv"), &svd.singular_values)?;
    for c in 0..export_vectors.min(svd.k()) {
        let grid = core_grid(mesh, svd.u.column(c).iter().copied().collect());
        write_grid_and_image(dir, &format!("u_{:03}", c + 1), &grid, &RenderOptions::default())?;
    }
    let summary = SvdSummary {
        mode: svd.mode,
        k: svd.k(),
        singular_values: svd.singular_values.clone(),
        decay_ratio_1_10: svd.decay_ratio(1, 10),
        orthonormality_error: svd.orthonormality_error(),
    };
    io::write_text(&dir.join("svd.json"), &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(summary)
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub metrics: Metrics,
    pub nfs: Option<InversionResult>,
    pub conventional: Option<InversionResult>,
}

/// Run everything the manifest asks for and write the run directory.
pub fn run_case(m: &RunManifest, out: &Path) -> Result<RunSummary, CliError> {
    let scn = build_scenario(m)?;
    write_truth(out, m, &scn.mesh, &scn.truth)?;
    write_data(out, &scn)?;
    let mut metrics = Metrics {
        case: m.case,
        seed: m.seed,
        n_data: scn.physics.n_data(),
        n_model: scn.truth.values.len(),
        methods: BTreeMap::new(),
        svd: None,
    };
    let mut summary = RunSummary { out_dir: out.to_path_buf(), metrics: metrics.clone(), nfs: None, conventional: None };

    if m.method.runs_nfs() {
        let dir = out.join("nfs");
        let clock = Instant::now();
        let (result, mlp) = run_nfs(&scn, Some(dir.join("checkpoints")))?;
        let secs = clock.elapsed().as_secs_f64();
        info!("nfs: {} epochs, final misfit {:.4e}, {secs:.1} s", result.misfit_history.len(), result.final_misfit);
        write_method(&dir, &scn, &result)?;
        write_checkpoint(&dir.join("weights.bin"), &mlp, result.misfit_history.len())?;
        metrics.methods.insert("nfs".into(), method_metrics(&scn, &result, secs)?);
        if m.svd.enabled {
            let svd = run_svd(m, &scn.mesh, &mlp, scn.seeds.svd)?;
            metrics.svd = Some(write_svd(&out.join("svd"), &scn.mesh, &svd, m.svd.export_vectors)?);
        }
        summary.nfs = Some(result);
    }
    if m.method.runs_conventional() {
        let dir = out.join("conventional");
        let clock = Instant::now();
        let result = run_conventional(&scn)?;
        let secs = clock.elapsed().as_secs_f64();
        info!(
            "conventional: {} iterations, final misfit {:.4e}, {secs:.1} s",
            result.misfit_history.len(),
            result.final_misfit
        );
        write_method(&dir, &scn, &result)?;
        metrics.methods.insert("conventional".into(), method_metrics(&scn, &result, secs)?);
        summary.conventional = Some(result);
    }
    io::write_text(&out.join("metrics.json"), &serde_json::to_string_pretty(&metrics).expect("metrics serialize"))?;
    summary.metrics = metrics;
    Ok(summary)
}
