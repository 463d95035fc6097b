//! Straight-ray cross-hole travel-time modelling.
//!
//! Travel times are `t = A s` with `A[i, j]` the length of ray `i` inside
//! cell `j` and `s` the slowness. Times are in seconds here; files use ms.

use log::debug;

use crate::error::{invalid, Error, Result};
use crate::mesh::TensorMesh;
use crate::simulation::Simulation;
use crate::sparse::CsrMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct CrossholeSurvey {
    pub sources: Vec<(f64, f64)>,
    pub receivers: Vec<(f64, f64)>,
    pub separation: f64,
}

impl CrossholeSurvey {
    /// One datum per (source, receiver) pair, source-major.
    pub fn n_data(&self) -> usize {
        self.sources.len() * self.receivers.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.sources.iter().flat_map(move |s| self.receivers.iter().map(move |r| (*s, *r)))
    }
}

/// Sources down the left edge of the core, receivers down the right edge,
/// both at `(k + 1/2) * spacing`.
pub fn build_crosshole_survey(mesh: &TensorMesh, spacing: f64) -> Result<CrossholeSurvey> {
    let depth = mesh.core_depth();
    if !(spacing > 0.0) {
        return Err(invalid(format!("station spacing must be positive, got {spacing}")));
    }
    if spacing > depth {
        return Err(invalid(format!("spacing {spacing} m exceeds borehole depth {depth} m")));
    }
    let count = (depth / spacing).round();
    if (count * spacing - depth).abs() > 1e-9 * depth {
        return Err(invalid(format!("spacing {spacing} m does not divide borehole depth {depth} m")));
    }
    let n = count as usize;
    let x_left = mesh.x_edges()[mesh.n_pad];
    let x_right = x_left + mesh.core_width();
    let depths: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) * spacing).collect();
    Ok(CrossholeSurvey {
        sources: depths.iter().map(|z| (x_left, *z)).collect(),
        receivers: depths.iter().map(|z| (x_right, *z)).collect(),
        separation: x_right - x_left,
    })
}

/// Sparse ray-path matrix over full-mesh cells.
#[derive(Clone, Debug)]
pub struct RayMatrix {
    pub a: CsrMatrix,
    /// Euclidean source-receiver distance per ray.
    pub lengths: Vec<f64>,
}

impl RayMatrix {
    pub fn n_rays(&self) -> usize {
        self.a.nrows()
    }

    /// `A s` without the positivity check (inversion iterates may go negative).
    pub fn apply(&self, slowness: &[f64]) -> Vec<f64> {
        self.a.matvec(slowness)
    }

    pub fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        self.a.rmatvec(u)
    }
}

/// Intersection lengths of the segment `p -> q` with every mesh cell it
/// crosses, by sorting all grid-line crossing parameters. Segments of zero
/// length (corner touches) are dropped.
pub fn trace_ray(mesh: &TensorMesh, p: (f64, f64), q: (f64, f64)) -> Result<Vec<(usize, f64)>> {
    let xe = mesh.x_edges();
    let ze = mesh.z_edges();
    let tol = 1e-9 * (xe[xe.len() - 1] - xe[0]).max(ze[ze.len() - 1] - ze[0]);
    for (x, z) in [p, q] {
        if x < xe[0] - tol || x > xe[xe.len() - 1] + tol || z < ze[0] - tol || z > ze[ze.len() - 1] + tol {
            return Err(Error::Geometry(format!("ray endpoint ({x}, {z}) lies outside the mesh")));
        }
    }
    let (dx, dz) = (q.0 - p.0, q.1 - p.1);
    let length = (dx * dx + dz * dz).sqrt();
    if length == 0.0 {
        return Ok(Vec::new());
    }
    let mut alphas = vec![0.0, 1.0];
    for (edges, start, delta) in [(xe, p.0, dx), (ze, p.1, dz)] {
        if delta != 0.0 {
            alphas.extend(edges.iter().map(|e| (e - start) / delta).filter(|a| *a > 0.0 && *a < 1.0));
        }
    }
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut out: Vec<(usize, f64)> = Vec::new();
    for w in alphas.windows(2) {
        let seg = (w[1] - w[0]) * length;
        if seg <= 1e-12 * length {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let (x, z) = (p.0 + mid * dx, p.1 + mid * dz);
        let (ix, iz) = mesh
            .locate(x.clamp(xe[0], xe[xe.len() - 1]), z.clamp(ze[0], ze[ze.len() - 1]))
            .ok_or_else(|| Error::Geometry(format!("ray leaves the mesh near ({x}, {z})")))?;
        let cell = mesh.cell_index(ix, iz);
        match out.last_mut() {
            Some((c, l)) if *c == cell => *l += seg,
            _ => out.push((cell, seg)),
        }
    }
    Ok(out)
}

pub fn build_ray_matrix(mesh: &TensorMesh, survey: &CrossholeSurvey) -> Result<RayMatrix> {
    let mut rows = Vec::with_capacity(survey.n_data());
    let mut lengths = Vec::with_capacity(survey.n_data());
    for (s, r) in survey.pairs() {
        rows.push(trace_ray(mesh, s, r)?);
        lengths.push(((r.0 - s.0).powi(2) + (r.1 - s.1).powi(2)).sqrt());
    }
    let a = CsrMatrix::from_rows(mesh.n_cells(), rows);
    debug!("ray matrix: {} rays, {} nonzeros", a.nrows(), a.nnz());
    Ok(RayMatrix { a, lengths })
}

/// Travel times (s) for a strictly positive slowness model (s/m).
pub fn tomo_predict(rays: &RayMatrix, slowness: &[f64]) -> Result<Vec<f64>> {
    if slowness.len() != rays.a.ncols() {
        return Err(invalid(format!(
            "slowness has {} cells, ray matrix has {}",
            slowness.len(),
            rays.a.ncols()
        )));
    }
    if let Some((i, s)) = slowness.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(invalid(format!("slowness must be positive, cell {i} has {s}")));
    }
    Ok(rays.apply(slowness))
}

/// Linear travel-time simulation on the core slowness vector.
#[derive(Clone, Debug)]
pub struct TomoSimulation {
    mesh: TensorMesh,
    rays: RayMatrix,
    background: f64,
}

impl TomoSimulation {
    pub fn new(mesh: TensorMesh, survey: &CrossholeSurvey, background_slowness: f64) -> Result<Self> {
        let rays = build_ray_matrix(&mesh, survey)?;
        Ok(Self { mesh, rays, background: background_slowness })
    }

    pub fn rays(&self) -> &RayMatrix {
        &self.rays
    }

    pub fn mesh(&self) -> &TensorMesh {
        &self.mesh
    }

    fn full(&self, core: &[f64]) -> Result<Vec<f64>> {
        self.mesh.embed_core(core, self.background)
    }
}

impl Simulation for TomoSimulation {
    type Fields = Vec<f64>;

    fn n_data(&self) -> usize {
        self.rays.n_rays()
    }

    fn n_model(&self) -> usize {
        self.mesh.n_active()
    }

    fn fields(&self, model: &[f64]) -> Result<Vec<f64>> {
        Ok(self.rays.apply(&self.full(model)?))
    }

    fn predicted(&self, fields: &Vec<f64>) -> Vec<f64> {
        fields.clone()
    }

    fn jvec(&self, _fields: &Vec<f64>, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.rays.apply(&self.mesh.embed_core(v, 0.0)?))
    }

    fn jtvec(&self, _fields: &Vec<f64>, u: &[f64]) -> Result<Vec<f64>> {
        self.mesh.extract_core(&self.rays.apply_transpose(u))
    }
}
