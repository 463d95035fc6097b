//! Run manifests.
//!
//! A manifest is a TOML document. Only `schema_version` and `case` are
//! required; every other key falls back to the defaults of the selected
//! `case` and `scale`, and the fully resolved document is echoed next to the
//! run outputs so it can be rerun as is.

use std::path::PathBuf;

use nfinv_core::encoding::EncodingConfig;
use nfinv_core::inversion::{AdamConfig, ConventionalConfig, Optimizer, RegularizationConfig};
use nfinv_core::neural_field::OutputHead;
use nfinv_core::scenarios::{Case1Params, Case2Params, Case3Params, Case4Params, NoiseSpec};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseId {
    Case1,
    Case2,
    Case3,
    Case4,
}

impl CaseId {
    pub fn is_tomography(self) -> bool {
        matches!(self, CaseId::Case1 | CaseId::Case2)
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseId::Case1 => "case1",
            CaseId::Case2 => "case2",
            CaseId::Case3 => "case3",
            CaseId::Case4 => "case4",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nfs,
    Conventional,
    Both,
}

impl Method {
    pub fn runs_nfs(self) -> bool {
        matches!(self, Method::Nfs | Method::Both)
    }

    pub fn runs_conventional(self) -> bool {
        matches!(self, Method::Conventional | Method::Both)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub case: CaseId,
    pub scale: Scale,
    pub seed: u64,
    pub method: Method,
    /// Relative paths resolve against the working directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub mesh: MeshSpec,
    pub survey: SurveySpec,
    pub truth: TruthSpec,
    pub noise: NoiseSpec,
    pub encoding: EncodingConfig,
    pub network: NetworkSpec,
    pub nfs: NfsSpec,
    pub conventional: ConventionalSpec,
    pub svd: SvdSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub dz: f64,
    #[serde(default)]
    pub n_pad: usize,
    #[serde(default = "one")]
    pub pad_factor: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SurveySpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crosshole: Option<CrossholeSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dipole_dipole: Option<DipoleDipoleSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossholeSpec {
    /// Source and receiver spacing down the boreholes (m).
    pub spacing: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipoleDipoleSpec {
    pub line_length: f64,
    pub station_spacing: f64,
    pub max_receivers: usize,
    /// Injected line current (A/m).
    pub current: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case1: Option<Case1Params>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case2: Option<Case2Params>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case3: Option<Case3Params>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case4: Option<Case4Params>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub head: OutputHead,
    /// Core cell centres are mapped affinely onto this interval per axis.
    pub coordinate_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NfsSpec {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// β-cooling constant; absent means β = 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regularization: Option<RegularizationConfig>,
    /// Stop once `2 φ_d / n_data` drops to this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_chi2: Option<f64>,
    /// Checkpoint cadence in epochs; 0 keeps only the final weights.
    pub checkpoint_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConventionalSpec {
    pub solver: ConventionalConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regularization: Option<RegularizationConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_chi2: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvdMethod {
    Exact,
    Gram,
    Randomized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvdSpec {
    pub enabled: bool,
    pub k: usize,
    pub method: SvdMethod,
    pub oversampling: usize,
    pub power_iterations: usize,
    /// Memory budget for an explicit Jacobian (MiB).
    pub budget_mib: usize,
    /// Number of U columns exported as grids.
    pub export_vectors: usize,
}

impl Default for SvdSpec {
    fn default() -> Self {
        Self {
            enabled: false,
            k: 10,
            method: SvdMethod::Gram,
            oversampling: 10,
            power_iterations: 2,
            budget_mib: 1024,
            export_vectors: 10,
        }
    }
}

pub const DESK_HIDDEN: [usize; 6] = [32, 64, 64, 64, 64, 32];
pub const FULL_HIDDEN: [usize; 6] = [128, 256, 256, 256, 256, 128];

/// Fully populated manifest for a case at a scale.
pub fn defaults(case: CaseId, scale: Scale) -> RunManifest {
    let desk = scale == Scale::Desk;
    let hidden = if desk { DESK_HIDDEN.to_vec() } else { FULL_HIDDEN.to_vec() };
    let mut truth = TruthSpec::default();
    let mut survey = SurveySpec::default();
    let (mesh, noise, encoding, network, nfs, conventional) = if case.is_tomography() {
        // desk keeps the 64 m x 128 m section with 2 m cells
        let (nx, nz, h) = if desk { (32, 64, 2.0) } else { (64, 128, 1.0) };
        let mesh = MeshSpec { nx, nz, dx: h, dz: h, n_pad: 0, pad_factor: 1.0 };
        survey.crosshole = Some(CrossholeSpec { spacing: h });
        let (encoding, range) = match case {
            CaseId::Case1 => {
                truth.case1 = Some(Case1Params::default());
                (EncodingConfig::Basic, [0.0, 1.0])
            }
            _ => {
                truth.case2 = Some(Case2Params::default());
                (EncodingConfig::Gaussian { b_rows: 128, b_std: 0.5, seed: 0 }, [-1.0, 1.0])
            }
        };
        let network = NetworkSpec { hidden, head: OutputHead::tanh_window(0.001, 0.005), coordinate_range: range };
        let nfs = NfsSpec {
            epochs: if desk { 1000 } else { 2000 },
            adam: AdamConfig::default(),
            tau: None,
            regularization: None,
            target_chi2: desk.then_some(1.0),
            checkpoint_every: 0,
        };
        let conventional = ConventionalSpec {
            solver: ConventionalConfig {
                optimizer: Optimizer::GradientDescent,
                max_iterations: 2000,
                beta: if desk { 0.0 } else { 1.0 },
                ..ConventionalConfig::default()
            },
            regularization: (!desk).then(|| RegularizationConfig::smoothness_l2(0.5)),
            target_chi2: Some(1.0),
        };
        (mesh, NoiseSpec::AbsoluteGaussian { std: 0.02, floor: 0.0 }, encoding, network, nfs, conventional)
    } else {
        let mesh = if desk {
            MeshSpec { nx: 100, nz: 24, dx: 10.0, dz: 10.0, n_pad: 7, pad_factor: 1.5 }
        } else {
            MeshSpec { nx: 200, nz: 45, dx: 5.0, dz: 5.0, n_pad: 7, pad_factor: 1.5 }
        };
        survey.dipole_dipole =
            Some(DipoleDipoleSpec { line_length: 700.0, station_spacing: 25.0, max_receivers: 24, current: 1.0 });
        let mut conv_reg = RegularizationConfig::dcr_sparse();
        let nfs_reg = match case {
            CaseId::Case3 => {
                truth.case3 = Some(Case3Params::default());
                Some(RegularizationConfig::dcr_sparse())
            }
            _ => {
                truth.case4 = Some(Case4Params::default());
                conv_reg.alpha_s = 0.0;
                None
            }
        };
        let network = NetworkSpec { hidden, head: OutputHead::sigmoid_range(-4.0, 0.0), coordinate_range: [-1.0, 1.0] };
        let nfs = NfsSpec {
            epochs: if desk { 500 } else { 1000 },
            adam: AdamConfig::default(),
            tau: nfs_reg.as_ref().map(|_| 800.0),
            regularization: nfs_reg,
            target_chi2: None,
            checkpoint_every: 0,
        };
        let conventional = ConventionalSpec {
            solver: ConventionalConfig {
                optimizer: Optimizer::GaussNewton,
                max_iterations: 50,
                beta: 1e2,
                ..ConventionalConfig::default()
            },
            regularization: Some(conv_reg),
            target_chi2: Some(1.0),
        };
        (
            mesh,
            NoiseSpec::RelativeGaussian { fraction: 0.05, floor: 1e-6 },
            EncodingConfig::Identity,
            network,
            nfs,
            conventional,
        )
    };
    RunManifest {
        schema_version: SCHEMA_VERSION,
        case,
        scale,
        seed: 0,
        method: Method::Both,
        output_dir: None,
        mesh,
        survey,
        truth,
        noise,
        encoding,
        network,
        nfs,
        conventional,
        svd: SvdSpec::default(),
    }
}

/// Recursive table merge. A table whose `kind` tag changes replaces the
/// base table outright so fields of the old variant do not leak through.
pub fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            let retag = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if retag {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Schema { path: path.into(), message: message.into() }
}

/// Parse, merge over the case defaults and validate.
pub fn parse_manifest(text: &str) -> Result<RunManifest, CliError> {
    let user: toml::Value = toml::from_str(text).map_err(|e| schema("<document>", e.message().to_string()))?;
    let table = user.as_table().ok_or_else(|| schema("<document>", "manifest must be a table"))?;
    match table.get("schema_version") {
        None => return Err(schema("schema_version", "missing required field")),
        Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => {}
        Some(v) => return Err(schema("schema_version", format!("unsupported version {v}, expected {SCHEMA_VERSION}"))),
    }
    let case: CaseId = match table.get("case") {
        None => return Err(schema("case", "missing required field")),
        Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| schema("case", e.message().to_string()))?,
    };
    let scale: Scale = match table.get("scale") {
        None => Scale::default(),
        Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| schema("scale", e.message().to_string()))?,
    };
    let mut merged = toml::Value::try_from(defaults(case, scale)).expect("defaults serialize");
    merge(&mut merged, user);
    let manifest: RunManifest =
        serde_path_to_error::deserialize(merged).map_err(|e| schema(e.path().to_string(), e.inner().message().to_string()))?;
    validate(&manifest)?;
    Ok(manifest)
}

pub fn to_toml(manifest: &RunManifest) -> String {
    toml::to_string_pretty(manifest).expect("manifest serializes")
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(schema(path, format!("must be positive and finite, got {v}")))
    }
}

fn core_check<T>(path: &str, r: nfinv_core::Result<T>) -> Result<(), CliError> {
    r.map(|_| ()).map_err(|e| schema(path, e.to_string()))
}

pub fn validate(m: &RunManifest) -> Result<(), CliError> {
    if m.schema_version != SCHEMA_VERSION {
        return Err(schema("schema_version", format!("expected {SCHEMA_VERSION}")));
    }
    if m.mesh.nx == 0 || m.mesh.nz == 0 {
        return Err(schema("mesh", "nx and nz must be at least 1"));
    }
    positive("mesh.dx", m.mesh.dx)?;
    positive("mesh.dz", m.mesh.dz)?;
    if m.case.is_tomography() {
        if m.mesh.n_pad != 0 {
            return Err(schema("mesh.n_pad", "tomography meshes have no padding"));
        }
        let s = m.survey.crosshole.as_ref().ok_or_else(|| schema("survey.crosshole", "required for tomography"))?;
        positive("survey.crosshole.spacing", s.spacing)?;
        if m.survey.dipole_dipole.is_some() {
            return Err(schema("survey.dipole_dipole", "not used by tomography cases"));
        }
    } else {
        if m.mesh.pad_factor < 1.0 {
            return Err(schema("mesh.pad_factor", "must be >= 1"));
        }
        let s = m.survey.dipole_dipole.as_ref().ok_or_else(|| schema("survey.dipole_dipole", "required for DC cases"))?;
        positive("survey.dipole_dipole.line_length", s.line_length)?;
        positive("survey.dipole_dipole.station_spacing", s.station_spacing)?;
        positive("survey.dipole_dipole.current", s.current)?;
        if m.survey.crosshole.is_some() {
            return Err(schema("survey.crosshole", "not used by DC cases"));
        }
    }
    let truth_sections = [
        ("case1", m.truth.case1.is_some()),
        ("case2", m.truth.case2.is_some()),
        ("case3", m.truth.case3.is_some()),
        ("case4", m.truth.case4.is_some()),
    ];
    for (name, present) in truth_sections {
        if present != (name == m.case.name()) {
            let msg = if present { "does not belong to the selected case" } else { "required by the selected case" };
            return Err(schema(format!("truth.{name}"), msg));
        }
    }
    core_check("noise", m.noise.validate())?;
    core_check("encoding", m.encoding.validate())?;
    if m.network.hidden.iter().any(|h| *h == 0) {
        return Err(schema("network.hidden", "widths must be positive"));
    }
    positive("network.head.scale", m.network.head.scale.abs())?;
    let [lo, hi] = m.network.coordinate_range;
    if !(hi > lo) {
        return Err(schema("network.coordinate_range", "upper bound must exceed lower bound"));
    }
    core_check("nfs.adam", m.nfs.adam.validate())?;
    if let Some(tau) = m.nfs.tau {
        positive("nfs.tau", tau)?;
    }
    if let Some(reg) = &m.nfs.regularization {
        core_check("nfs.regularization", reg.validate())?;
    }
    if m.nfs.tau.is_some() != m.nfs.regularization.is_some() {
        return Err(schema("nfs.tau", "tau and regularization must be given together"));
    }
    for (path, t) in [("nfs.target_chi2", m.nfs.target_chi2), ("conventional.target_chi2", m.conventional.target_chi2)] {
        if let Some(t) = t {
            positive(path, t)?;
        }
    }
    core_check("conventional.solver", m.conventional.solver.validate())?;
    if let Some(reg) = &m.conventional.regularization {
        core_check("conventional.regularization", reg.validate())?;
    }
    if m.svd.enabled && m.svd.k == 0 {
        return Err(schema("svd.k", "must be at least 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_manifest_resolves_to_defaults() {
        let m = parse_manifest("schema_version = 1\ncase = \"case1\"\n").unwrap();
        assert_eq!(m, defaults(CaseId::Case1, Scale::Desk));
    }

    #[test]
    fn echo_round_trips() {
        for case in [CaseId::Case1, CaseId::Case2, CaseId::Case3, CaseId::Case4] {
            for scale in [Scale::Desk, Scale::Full] {
                let d = defaults(case, scale);
                assert_eq!(parse_manifest(&to_toml(&d)).unwrap(), d, "{case:?} {scale:?}");
            }
        }
    }

    #[test]
    fn overrides_merge() {
        let m = parse_manifest(
            "schema_version = 1\ncase = \"case2\"\nseed = 7\n[truth.case2.ellipse]\nvelocity = 500.0\n[encoding]\nkind = \"identity\"\n",
        )
        .unwrap();
        assert_eq!(m.seed, 7);
        assert_eq!(m.truth.case2.as_ref().unwrap().ellipse.velocity, 500.0);
        assert_eq!(m.truth.case2.as_ref().unwrap().ellipse.angle_deg, 30.0);
        assert_eq!(m.encoding, EncodingConfig::Identity);
    }

    fn schema_path(text: &str) -> String {
        match parse_manifest(text) {
            Err(CliError::Schema { path, .. }) => path,
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_field() {
        assert_eq!(schema_path("case = \"case1\""), "schema_version");
        assert_eq!(schema_path("schema_version = 2\ncase = \"case1\""), "schema_version");
        assert_eq!(schema_path("schema_version = 1\ncase = \"case9\""), "case");
        assert_eq!(schema_path("schema_version = 1\ncase = \"case3\"\n[nfs]\ntau = -5.0"), "nfs.tau");
        assert_eq!(schema_path("schema_version = 1\ncase = \"case1\"\n[mesh]\nbogus = 1"), "mesh.bogus");
        assert_eq!(schema_path("schema_version = 1\ncase = \"case1\"\n[mesh]\nnx = \"wide\""), "mesh.nx");
        assert_eq!(schema_path("schema_version = 1\ncase = \"case1\"\n[truth.case3]\n"), "truth.case3");
        assert_eq!(schema_path("schema_version = 1\ncase = \"case1\"\n[nfs.adam]\nlearning_rate = 0.0"), "nfs.adam");
    }
}
