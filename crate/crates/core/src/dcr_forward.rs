//! 2D DC resistivity: cell-centred finite volumes for `∇·σ∇φ = −∇·j`.
//!
//! Sources are infinite line currents perpendicular to the section (pure 2D),
//! so a point electrode injects `I` amperes per metre. The discrete operator
//! is `L = Σ_faces T_f (e_i − e_j)(e_i − e_j)ᵀ + Σ_boundary T_b e_i e_iᵀ` with
//! harmonic face transmissibilities, a no-flux top and `φ = 0` on the outer
//! left, right and bottom faces of the padded mesh.
//!
//! All sources are handled through pole potentials `G_e = L⁻¹ e_e`, one per
//! electrode, which also serve as adjoint fields since `L` is symmetric.

use std::f64::consts::LN_10;

use log::{debug, warn};

use crate::error::{invalid, Error, Result};
use crate::mesh::TensorMesh;
use crate::simulation::Simulation;
use crate::sparse::{conjugate_gradient, dot, BandCholesky, CsrMatrix};

const CG_RTOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DcrSurvey {
    /// Surface electrode positions (m).
    pub electrodes: Vec<f64>,
    pub sources: Vec<SourceDipole>,
    /// Line-source current (A/m).
    pub current: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceDipole {
    pub a: usize,
    pub b: usize,
    /// Receiver dipoles `(m, n)`; datum is `φ(m) − φ(n)`.
    pub receivers: Vec<(usize, usize)>,
}

impl DcrSurvey {
    pub fn n_data(&self) -> usize {
        self.sources.iter().map(|s| s.receivers.len()).sum()
    }

    /// `(a, b, m, n)` electrode indices per datum, in data order.
    pub fn quadrupoles(&self) -> Vec<(usize, usize, usize, usize)> {
        self.sources
            .iter()
            .flat_map(|s| s.receivers.iter().map(move |(m, n)| (s.a, s.b, *m, *n)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ne = self.electrodes.len();
        if !(self.current.is_finite() && self.current != 0.0) {
            return Err(invalid(format!("source current must be finite and nonzero, got {}", self.current)));
        }
        for s in &self.sources {
            if s.a == s.b || s.a >= ne || s.b >= ne {
                return Err(invalid(format!("bad source dipole ({}, {})", s.a, s.b)));
            }
            for &(m, n) in &s.receivers {
                if m == n || m >= ne || n >= ne {
                    return Err(invalid(format!("bad receiver dipole ({m}, {n})")));
                }
                if [m, n].iter().any(|e| *e == s.a || *e == s.b) {
                    return Err(invalid(format!(
                        "receiver ({m}, {n}) shares an electrode with source ({}, {})",
                        s.a, s.b
                    )));
                }
            }
        }
        Ok(())
    }

    /// Shift the line so it sits centred on the core with every electrode on
    /// a surface cell centre.
    pub fn centered_on(&self, mesh: &TensorMesh) -> Result<DcrSurvey> {
        let Some((first, last)) = self.electrodes.first().zip(self.electrodes.last()) else {
            return Ok(self.clone());
        };
        let line = last - first;
        let core_x0 = mesh.x_edges()[mesh.n_pad];
        let slack = mesh.core_width() - line;
        if slack < 0.0 {
            return Err(Error::Geometry(format!(
                "survey line of {line} m does not fit in a core {} m wide",
                mesh.core_width()
            )));
        }
        let dx = mesh.dx_core;
        let mut start = core_x0 + (slack / 2.0 / dx).floor() * dx + dx / 2.0;
        if start + line > core_x0 + mesh.core_width() {
            start = core_x0 + (slack / 2.0 / dx).floor() * dx;
        }
        let mut out = self.clone();
        for e in &mut out.electrodes {
            *e = *e - first + start;
        }
        Ok(out)
    }
}

/// Standard dipole-dipole enumeration: electrodes every `station_sep` along
/// `[0, line_length]`, sources on adjacent pairs `(i, i+1)`, receivers on
/// adjacent pairs further along the line, at most `max_rx` per source.
pub fn build_dipole_dipole_survey(line_length: f64, station_sep: f64, max_rx: usize) -> Result<DcrSurvey> {
    if !(station_sep > 0.0) || !(line_length >= 0.0) {
        return Err(invalid(format!(
            "need positive station separation and nonnegative line length, got {station_sep}, {line_length}"
        )));
    }
    let n_e = (line_length / station_sep + 1e-9).floor() as usize + 1;
    let electrodes: Vec<f64> = (0..n_e).map(|k| k as f64 * station_sep).collect();
    let mut sources = Vec::new();
    for a in 0..n_e.saturating_sub(1) {
        let receivers: Vec<(usize, usize)> =
            (a + 2..n_e.saturating_sub(1)).take(max_rx).map(|m| (m, m + 1)).collect();
        if !receivers.is_empty() {
            sources.push(SourceDipole { a, b: a + 1, receivers });
        }
    }
    let survey = DcrSurvey { electrodes, sources, current: 1.0 };
    if survey.n_data() == 0 {
        warn!("dipole-dipole survey with {n_e} electrodes has no data");
    }
    Ok(survey)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    Neumann,
    Dirichlet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryConditions {
    pub top: BoundaryKind,
    pub left: BoundaryKind,
    pub right: BoundaryKind,
    pub bottom: BoundaryKind,
}

impl Default for BoundaryConditions {
    fn default() -> Self {
        Self {
            top: BoundaryKind::Neumann,
            left: BoundaryKind::Dirichlet,
            right: BoundaryKind::Dirichlet,
            bottom: BoundaryKind::Dirichlet,
        }
    }
}

/// A face between cells `i` and `j` (`j = None` for a Dirichlet boundary
/// face of cell `i`). `di`, `dj` are centre-to-face distances.
#[derive(Clone, Copy, Debug)]
struct Face {
    i: usize,
    j: Option<usize>,
    di: f64,
    dj: f64,
    len: f64,
}

impl Face {
    fn transmissibility(&self, sigma: &[f64]) -> f64 {
        match self.j {
            Some(j) => self.len / (self.di / sigma[self.i] + self.dj / sigma[j]),
            None => sigma[self.i] * self.len / self.di,
        }
    }

    /// `(∂T/∂σ_i, ∂T/∂σ_j)`
    fn transmissibility_derivs(&self, sigma: &[f64]) -> (f64, f64) {
        match self.j {
            Some(j) => {
                let t = self.transmissibility(sigma);
                let (si, sj) = (sigma[self.i], sigma[j]);
                (t * t * self.di / (self.len * si * si), t * t * self.dj / (self.len * sj * sj))
            }
            None => (self.len / self.di, 0.0),
        }
    }
}

fn mesh_faces(mesh: &TensorMesh, bc: &BoundaryConditions) -> Vec<Face> {
    let (nx, nz) = (mesh.nx(), mesh.nz());
    let mut faces = Vec::with_capacity(2 * nx * nz + nx + 2 * nz);
    for iz in 0..nz {
        let h = mesh.cell_height(iz);
        for ix in 0..nx {
            let w = mesh.cell_width(ix);
            let i = mesh.cell_index(ix, iz);
            if ix + 1 < nx {
                let dj = mesh.cell_width(ix + 1) / 2.0;
                faces.push(Face { i, j: Some(mesh.cell_index(ix + 1, iz)), di: w / 2.0, dj, len: h });
            }
            if iz + 1 < nz {
                let dj = mesh.cell_height(iz + 1) / 2.0;
                faces.push(Face { i, j: Some(mesh.cell_index(ix, iz + 1)), di: h / 2.0, dj, len: w });
            }
            let boundary = [
                (ix == 0, bc.left, w / 2.0, h),
                (ix + 1 == nx, bc.right, w / 2.0, h),
                (iz == 0, bc.top, h / 2.0, w),
                (iz + 1 == nz, bc.bottom, h / 2.0, w),
            ];
            for (on_edge, kind, di, len) in boundary {
                if on_edge && kind == BoundaryKind::Dirichlet {
                    faces.push(Face { i, j: None, di, len, dj: 0.0 });
                }
            }
        }
    }
    faces
}

#[derive(Clone, Debug)]
enum Solver {
    Band { factor: BandCholesky, perm: Vec<usize> },
    Iterative,
}

/// Assembled operator for one conductivity model, with its factorization.
#[derive(Clone, Debug)]
pub struct FvSystem {
    mesh: TensorMesh,
    sigma: Vec<f64>,
    bc: BoundaryConditions,
    faces: Vec<Face>,
    matrix: CsrMatrix,
    solver: Solver,
}

pub fn assemble_system(mesh: &TensorMesh, sigma: &[f64]) -> Result<FvSystem> {
    assemble_with_bc(mesh, sigma, BoundaryConditions::default())
}

pub fn assemble_with_bc(mesh: &TensorMesh, sigma: &[f64], bc: BoundaryConditions) -> Result<FvSystem> {
    let n = mesh.n_cells();
    if sigma.len() != n {
        return Err(invalid(format!("sigma has {} cells, mesh has {n}", sigma.len())));
    }
    if let Some((i, s)) = sigma.iter().enumerate().find(|(_, s)| !(**s > 0.0 && s.is_finite())) {
        return Err(invalid(format!("conductivity must be positive, cell {i} has {s}")));
    }
    let faces = mesh_faces(mesh, &bc);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(5); n];
    for f in &faces {
        let t = f.transmissibility(sigma);
        rows[f.i].push((f.i, t));
        if let Some(j) = f.j {
            rows[j].push((j, t));
            rows[f.i].push((j, -t));
            rows[j].push((f.i, -t));
        }
    }
    let matrix = CsrMatrix::from_rows(n, rows);

    // z-fastest numbering keeps the band at the column height
    let (nx, nz) = (mesh.nx(), mesh.nz());
    let mut perm = vec![0; n];
    for iz in 0..nz {
        for ix in 0..nx {
            perm[mesh.cell_index(ix, iz)] = ix * nz + iz;
        }
    }
    let mut prow: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        prow[perm[i]] = matrix.row(i).map(|(c, v)| (perm[c], v)).collect();
    }
    let solver = match BandCholesky::factor(&CsrMatrix::from_rows(n, prow)) {
        Ok(factor) => Solver::Band { factor, perm },
        Err(e) => {
            warn!("band factorization failed ({e}); falling back to conjugate gradients");
            Solver::Iterative
        }
    };
    Ok(FvSystem { mesh: mesh.clone(), sigma: sigma.to_vec(), bc, faces, matrix, solver })
}

impl FvSystem {
    pub fn mesh(&self) -> &TensorMesh {
        &self.mesh
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn boundary_conditions(&self) -> &BoundaryConditions {
        &self.bc
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match &self.solver {
            Solver::Band { factor, perm } => {
                let mut b = vec![0.0; rhs.len()];
                for (i, v) in rhs.iter().enumerate() {
                    b[perm[i]] = *v;
                }
                let x = factor.solve(&b);
                Ok(perm.iter().map(|p| x[*p]).collect())
            }
            Solver::Iterative => {
                let res = conjugate_gradient(|v| self.matrix.matvec(v), rhs, CG_RTOL, 20 * rhs.len());
                if res.relative_residual > CG_RTOL {
                    return Err(Error::Numerical(format!(
                        "conjugate gradients stopped at relative residual {:e} after {} iterations",
                        res.relative_residual, res.iterations
                    )));
                }
                Ok(res.x)
            }
        }
    }

    /// `Σ_faces ∂T/∂σ · …` contracted with two potentials: the derivative of
    /// `aᵀ L b` with respect to every cell conductivity.
    fn bilinear_sigma_derivative(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        for f in &self.faces {
            let (dti, dtj) = f.transmissibility_derivs(&self.sigma);
            match f.j {
                Some(j) => {
                    let c = (a[f.i] - a[j]) * (b[f.i] - b[j]);
                    out[f.i] += dti * c;
                    out[j] += dtj * c;
                }
                None => out[f.i] += dti * a[f.i] * b[f.i],
            }
        }
    }

    /// `(∂L/∂σ · δσ) b`
    fn apply_sigma_perturbation(&self, dsigma: &[f64], b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; b.len()];
        for f in &self.faces {
            let (dti, dtj) = f.transmissibility_derivs(&self.sigma);
            match f.j {
                Some(j) => {
                    let dt = dti * dsigma[f.i] + dtj * dsigma[j];
                    let g = dt * (b[f.i] - b[j]);
                    y[f.i] += g;
                    y[j] -= g;
                }
                None => y[f.i] += dti * dsigma[f.i] * b[f.i],
            }
        }
        y
    }
}

/// Full-mesh cells under each electrode (top row), checking that every
/// electrode lies over the core.
pub fn electrode_cells(mesh: &TensorMesh, survey: &DcrSurvey) -> Result<Vec<usize>> {
    let x0 = mesh.x_edges()[mesh.n_pad];
    let x1 = x0 + mesh.core_width();
    survey
        .electrodes
        .iter()
        .map(|&x| {
            if x < x0 || x > x1 {
                return Err(Error::Geometry(format!("electrode at x = {x} m lies outside the core [{x0}, {x1}]")));
            }
            let (ix, _) = mesh.locate(x, 0.0).expect("inside core");
            let snap = (mesh.x_center(ix) - x).abs();
            if snap > 0.0 {
                debug!("electrode at x = {x} m snapped {snap} m to cell centre {}", mesh.x_center(ix));
            }
            Ok(mesh.cell_index(ix, 0))
        })
        .collect()
}

/// Forward solution for one model: unit pole potentials at every electrode.
#[derive(Clone, Debug)]
pub struct DcrFields {
    pub system: FvSystem,
    survey: DcrSurvey,
    cells: Vec<usize>,
    poles: Vec<Vec<f64>>,
    pub data: Vec<f64>,
}

impl DcrFields {
    pub fn compute(system: FvSystem, survey: &DcrSurvey) -> Result<Self> {
        survey.validate()?;
        let cells = electrode_cells(system.mesh(), survey)?;
        let n = system.mesh().n_cells();
        let mut poles = Vec::with_capacity(cells.len());
        for &c in &cells {
            let mut rhs = vec![0.0; n];
            rhs[c] = 1.0;
            poles.push(system.solve(&rhs)?);
        }
        let mut fields = Self { system, survey: survey.clone(), cells, poles, data: Vec::new() };
        fields.data = fields
            .survey
            .quadrupoles()
            .iter()
            .map(|&(a, b, m, n)| {
                let (cm, cn) = (fields.cells[m], fields.cells[n]);
                let pa = &fields.poles[a];
                let pb = &fields.poles[b];
                fields.survey.current * ((pa[cm] - pb[cm]) - (pa[cn] - pb[cn]))
            })
            .collect();
        Ok(fields)
    }

    /// Potential on the full mesh from source dipole `s`.
    pub fn source_potential(&self, s: usize) -> Vec<f64> {
        let src = &self.survey.sources[s];
        let i = self.survey.current;
        self.poles[src.a].iter().zip(&self.poles[src.b]).map(|(a, b)| i * (a - b)).collect()
    }

    /// Potential on the full mesh from a unit pole at electrode `e`.
    pub fn pole_potential(&self, e: usize) -> &[f64] {
        &self.poles[e]
    }

    /// `∂(uᵀd)/∂σ` for every full-mesh cell.
    pub fn sigma_gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_data_len(u)?;
        let n = self.system.mesh().n_cells();
        let mut g = vec![0.0; n];
        let mut k = 0;
        for (s, src) in self.survey.sources.iter().enumerate() {
            let phi = self.source_potential(s);
            let mut lambda = vec![0.0; n];
            for &(m, nn) in &src.receivers {
                let w = u[k];
                k += 1;
                if w != 0.0 {
                    for (l, (pm, pn)) in lambda.iter_mut().zip(self.poles[m].iter().zip(&self.poles[nn])) {
                        *l += w * (pm - pn);
                    }
                }
            }
            self.system.bilinear_sigma_derivative(&lambda, &phi, &mut g);
        }
        for v in &mut g {
            *v = -*v;
        }
        Ok(g)
    }

    /// `∂d/∂σ · δσ` for a full-mesh conductivity perturbation.
    pub fn sigma_jvec(&self, dsigma: &[f64]) -> Result<Vec<f64>> {
        if dsigma.len() != self.system.mesh().n_cells() {
            return Err(invalid("conductivity perturbation has the wrong length"));
        }
        let mut out = Vec::with_capacity(self.data.len());
        for (s, src) in self.survey.sources.iter().enumerate() {
            let y = self.system.apply_sigma_perturbation(dsigma, &self.source_potential(s));
            for &(m, n) in &src.receivers {
                out.push(-(dot(&self.poles[m], &y) - dot(&self.poles[n], &y)));
            }
        }
        Ok(out)
    }

    fn check_data_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.data.len() {
            return Err(invalid(format!("cotangent has {} entries, survey has {} data", u.len(), self.data.len())));
        }
        Ok(())
    }
}

/// Potential differences (V) for every survey datum.
pub fn dcr_predict(system: &FvSystem, survey: &DcrSurvey) -> Result<Vec<f64>> {
    Ok(DcrFields::compute(system.clone(), survey)?.data)
}

/// Gradient of `uᵀ d` with respect to log10 conductivity of the core cells.
pub fn dcr_gradient(system: &FvSystem, survey: &DcrSurvey, cotangent: &[f64]) -> Result<Vec<f64>> {
    let fields = DcrFields::compute(system.clone(), survey)?;
    log10_core_gradient(&fields, cotangent)
}

fn log10_core_gradient(fields: &DcrFields, u: &[f64]) -> Result<Vec<f64>> {
    let g = fields.sigma_gradient(u)?;
    let mesh = fields.system.mesh();
    let chain: Vec<f64> = g.iter().zip(fields.system.sigma()).map(|(g, s)| g * s * LN_10).collect();
    mesh.extract_core(&chain)
}

/// DC resistivity as a function of core log10 conductivity, padding frozen
/// at a background value.
#[derive(Clone, Debug)]
pub struct DcrSimulation {
    mesh: TensorMesh,
    survey: DcrSurvey,
    background_sigma: f64,
}

impl DcrSimulation {
    pub fn new(mesh: TensorMesh, survey: DcrSurvey, background_sigma: f64) -> Result<Self> {
        survey.validate()?;
        electrode_cells(&mesh, &survey)?;
        if !(background_sigma > 0.0) {
            return Err(invalid(format!("background conductivity must be positive, got {background_sigma}")));
        }
        Ok(Self { mesh, survey, background_sigma })
    }

    pub fn mesh(&self) -> &TensorMesh {
        &self.mesh
    }

    pub fn survey(&self) -> &DcrSurvey {
        &self.survey
    }

    pub fn background_sigma(&self) -> f64 {
        self.background_sigma
    }

    /// Full-mesh conductivity for a core log10 model.
    pub fn sigma_full(&self, log10_sigma: &[f64]) -> Result<Vec<f64>> {
        let core: Vec<f64> = log10_sigma.iter().map(|m| 10f64.powf(*m)).collect();
        self.mesh.embed_core(&core, self.background_sigma)
    }
}

impl Simulation for DcrSimulation {
    type Fields = DcrFields;

    fn n_data(&self) -> usize {
        self.survey.n_data()
    }

    fn n_model(&self) -> usize {
        self.mesh.n_active()
    }

    fn fields(&self, model: &[f64]) -> Result<DcrFields> {
        let system = assemble_system(&self.mesh, &self.sigma_full(model)?)?;
        DcrFields::compute(system, &self.survey)
    }

    fn predicted(&self, fields: &DcrFields) -> Vec<f64> {
        fields.data.clone()
    }

    fn jvec(&self, fields: &DcrFields, v: &[f64]) -> Result<Vec<f64>> {
        let dcore = self.mesh.embed_core(v, 0.0)?;
        let dsigma: Vec<f64> = dcore.iter().zip(fields.system.sigma()).map(|(d, s)| d * s * LN_10).collect();
        fields.sigma_jvec(&dsigma)
    }

    fn jtvec(&self, fields: &DcrFields, u: &[f64]) -> Result<Vec<f64>> {
        log10_core_gradient(fields, u)
    }
}
