//! Synthetic true models, Gaussian random fields and data noise.
//!
//! Cases 1 and 2 are slowness models (s/m) for cross-hole tomography; cases
//! 3 and 4 are log10-conductivity models for DC resistivity. Geometry that
//! the reference figures only show qualitatively (block size, ellipse,
//! field statistics, layer and dike dimensions) is parameterized with
//! defaults expressed as fractions of the core or in metres.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mesh::TensorMesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    /// s/m
    Slowness,
    Log10Conductivity,
}

/// A true model on the core grid with the cells that make up the target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueModel {
    pub property: Property,
    pub values: Vec<f64>,
    pub target_mask: Vec<bool>,
    /// Value assigned to padding cells (DC resistivity) and used as the
    /// uniform reference model.
    pub background: f64,
}

impl TrueModel {
    pub fn target_fraction(&self) -> f64 {
        self.target_mask.iter().filter(|t| **t).count() as f64 / self.target_mask.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Case1Params {
    pub background_velocity: f64,
    pub block_velocity: f64,
    /// Block side as a fraction of the core width.
    pub block_size_fraction: f64,
    /// Block centre as fractions of core width and depth.
    pub block_center_fraction: [f64; 2],
}

impl Default for Case1Params {
    fn default() -> Self {
        Self {
            background_velocity: 1000.0,
            block_velocity: 200.0,
            block_size_fraction: 0.25,
            block_center_fraction: [0.5, 0.5],
        }
    }
}

/// Stationary Gaussian random field with Gaussian covariance
/// `variance * exp(-(hx/len_x)^2 - (hz/len_z)^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrfSpec {
    pub variance: f64,
    pub len_x: f64,
    pub len_z: f64,
}

impl Default for GrfSpec {
    fn default() -> Self {
        Self { variance: 100.0 * 100.0, len_x: 6.0, len_z: 6.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ellipse {
    pub center_fraction: [f64; 2],
    /// Semi-axes as fractions of core width and depth (before rotation).
    pub semi_axes_fraction: [f64; 2],
    /// Rotation of the first axis from horizontal, degrees.
    pub angle_deg: f64,
    pub velocity: f64,
}

impl Default for Ellipse {
    fn default() -> Self {
        Self { center_fraction: [0.5, 0.45], semi_axes_fraction: [0.3, 0.1], angle_deg: 30.0, velocity: 600.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Case2Params {
    pub background_velocity: f64,
    /// Velocity perturbation field (m/s).
    pub grf: GrfSpec,
    pub ellipse: Ellipse,
}

impl Default for Case2Params {
    fn default() -> Self {
        Self { background_velocity: 1000.0, grf: GrfSpec::default(), ellipse: Ellipse::default() }
    }
}

/// A dipping tabular body. The centreline passes through
/// `center_x_fraction` of the core width at the mid-depth of the body and
/// dips toward +x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DikeGeometry {
    pub sigma: f64,
    pub top: f64,
    pub bottom: f64,
    /// Horizontal width (m).
    pub width: f64,
    pub dip_deg: f64,
    pub center_x_fraction: f64,
}

impl Default for DikeGeometry {
    fn default() -> Self {
        Self { sigma: 0.1, top: 20.0, bottom: 125.0, width: 40.0, dip_deg: 63.0, center_x_fraction: 0.5 }
    }
}

impl DikeGeometry {
    fn validate(&self) -> Result<()> {
        if !(self.dip_deg > 0.0 && self.dip_deg <= 90.0) {
            return Err(invalid(format!("dip angle must be in (0, 90] degrees, got {}", self.dip_deg)));
        }
        if !(self.bottom > self.top && self.width > 0.0 && self.sigma > 0.0) {
            return Err(invalid("dike needs bottom > top, positive width and conductivity"));
        }
        Ok(())
    }

    fn contains(&self, mesh: &TensorMesh, x: f64, z: f64) -> bool {
        if z < self.top || z > self.bottom {
            return false;
        }
        let x_mid = mesh.x_edges()[mesh.n_pad] + self.center_x_fraction * mesh.core_width();
        let z_mid = 0.5 * (self.top + self.bottom);
        let cot = if self.dip_deg == 90.0 { 0.0 } else { 1.0 / self.dip_deg.to_radians().tan() };
        (x - (x_mid + (z - z_mid) * cot)).abs() <= 0.5 * self.width
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Case3Params {
    pub background_sigma: f64,
    pub layer_sigma: f64,
    pub layer_thickness: f64,
    pub dike: DikeGeometry,
}

impl Default for Case3Params {
    fn default() -> Self {
        Self { background_sigma: 0.01, layer_sigma: 0.02, layer_thickness: 20.0, dike: DikeGeometry::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Case4Params {
    /// Conductivity of the top core row.
    pub top_sigma: f64,
    /// Conductivity of the bottom core row.
    pub bottom_sigma: f64,
    /// Frozen padding conductivity.
    pub padding_sigma: f64,
    pub dike: DikeGeometry,
}

impl Default for Case4Params {
    fn default() -> Self {
        Self { top_sigma: 0.02, bottom_sigma: 0.001, padding_sigma: 0.0105, dike: DikeGeometry::default() }
    }
}

fn core_cells(mesh: &TensorMesh) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
    (0..mesh.nz_core).flat_map(move |izc| {
        (0..mesh.nx_core).map(move |ixc| (ixc, izc, mesh.x_center(ixc + mesh.n_pad), mesh.z_center(izc)))
    })
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Square low-velocity block in a uniform background.
pub fn make_case1(mesh: &TensorMesh, p: &Case1Params) -> Result<TrueModel> {
    check_positive("background velocity", p.background_velocity)?;
    check_positive("block velocity", p.block_velocity)?;
    let x0 = mesh.x_edges()[mesh.n_pad];
    let half = 0.5 * p.block_size_fraction * mesh.core_width();
    let cx = x0 + p.block_center_fraction[0] * mesh.core_width();
    let cz = p.block_center_fraction[1] * mesh.core_depth();
    let mut values = Vec::with_capacity(mesh.n_active());
    let mut mask = Vec::with_capacity(mesh.n_active());
    for (_, _, x, z) in core_cells(mesh) {
        let inside = (x - cx).abs() < half && (z - cz).abs() < half;
        mask.push(inside);
        values.push(1.0 / if inside { p.block_velocity } else { p.background_velocity });
    }
    Ok(TrueModel {
        property: Property::Slowness,
        values,
        target_mask: mask,
        background: 1.0 / p.background_velocity,
    })
}

/// Elliptical target over a random-field velocity background.
pub fn make_case2(mesh: &TensorMesh, p: &Case2Params, seed: u64) -> Result<TrueModel> {
    check_positive("background velocity", p.background_velocity)?;
    check_positive("ellipse velocity", p.ellipse.velocity)?;
    let field = gaussian_random_field(mesh.nx_core, mesh.nz_core, mesh.dx_core, mesh.dz_core, &p.grf, seed)?;
    let e = &p.ellipse;
    let x0 = mesh.x_edges()[mesh.n_pad];
    let (cx, cz) = (x0 + e.center_fraction[0] * mesh.core_width(), e.center_fraction[1] * mesh.core_depth());
    let (a, b) = (e.semi_axes_fraction[0] * mesh.core_width(), e.semi_axes_fraction[1] * mesh.core_depth());
    check_positive("ellipse semi-axis", a)?;
    check_positive("ellipse semi-axis", b)?;
    let (s, c) = e.angle_deg.to_radians().sin_cos();
    let mut values = Vec::with_capacity(mesh.n_active());
    let mut mask = Vec::with_capacity(mesh.n_active());
    for (k, (_, _, x, z)) in core_cells(mesh).enumerate() {
        let (dx, dz) = (x - cx, z - cz);
        let (u, w) = (c * dx + s * dz, -s * dx + c * dz);
        let inside = (u / a).powi(2) + (w / b).powi(2) <= 1.0;
        let v = if inside { e.velocity } else { p.background_velocity + field[k] };
        if !(v > 0.0) {
            return Err(invalid(format!(
                "random field drives velocity to {v} m/s at cell {k}; reduce the field variance"
            )));
        }
        mask.push(inside);
        values.push(1.0 / v);
    }
    Ok(TrueModel {
        property: Property::Slowness,
        values,
        target_mask: mask,
        background: 1.0 / p.background_velocity,
    })
}

/// Conductive surface layer and a dipping dike in a uniform half-space.
pub fn make_case3(mesh: &TensorMesh, p: &Case3Params) -> Result<TrueModel> {
    p.dike.validate()?;
    check_positive("background conductivity", p.background_sigma)?;
    check_positive("layer conductivity", p.layer_sigma)?;
    let mut values = Vec::with_capacity(mesh.n_active());
    let mut mask = Vec::with_capacity(mesh.n_active());
    for (_, _, x, z) in core_cells(mesh) {
        let dike = p.dike.contains(mesh, x, z);
        let sigma = if z < p.layer_thickness {
            p.layer_sigma
        } else if dike {
            p.dike.sigma
        } else {
            p.background_sigma
        };
        mask.push(dike && z >= p.layer_thickness);
        values.push(sigma.log10());
    }
    Ok(TrueModel {
        property: Property::Log10Conductivity,
        values,
        target_mask: mask,
        background: p.background_sigma.log10(),
    })
}

/// Dipping dike in a background whose conductivity falls linearly with
/// depth from the top to the bottom core row.
pub fn make_case4(mesh: &TensorMesh, p: &Case4Params) -> Result<TrueModel> {
    p.dike.validate()?;
    check_positive("top conductivity", p.top_sigma)?;
    check_positive("bottom conductivity", p.bottom_sigma)?;
    check_positive("padding conductivity", p.padding_sigma)?;
    let z_top = mesh.z_center(0);
    let z_bot = mesh.z_center(mesh.nz_core - 1);
    let mut values = Vec::with_capacity(mesh.n_active());
    let mut mask = Vec::with_capacity(mesh.n_active());
    for (_, _, x, z) in core_cells(mesh) {
        let t = if z_bot > z_top { (z - z_top) / (z_bot - z_top) } else { 0.0 };
        let dike = p.dike.contains(mesh, x, z);
        let sigma = if dike { p.dike.sigma } else { p.top_sigma + t * (p.bottom_sigma - p.top_sigma) };
        mask.push(dike);
        values.push(sigma.log10());
    }
    Ok(TrueModel {
        property: Property::Log10Conductivity,
        values,
        target_mask: mask,
        background: p.padding_sigma.log10(),
    })
}

/// Zero-mean stationary field on an `nx x nz` grid (row-major, x fastest)
/// by circulant embedding on a doubled periodic grid.
pub fn gaussian_random_field(nx: usize, nz: usize, dx: f64, dz: f64, spec: &GrfSpec, seed: u64) -> Result<Vec<f64>> {
    if !(spec.len_x > 0.0 && spec.len_z > 0.0) {
        return Err(invalid(format!(
            "correlation lengths must be positive, got ({}, {})",
            spec.len_x, spec.len_z
        )));
    }
    if !(spec.variance >= 0.0 && spec.variance.is_finite()) {
        return Err(invalid(format!("variance must be nonnegative, got {}", spec.variance)));
    }
    if spec.variance == 0.0 {
        return Ok(vec![0.0; nx * nz]);
    }
    let (mx, mz) = (2 * nx, 2 * nz);
    let mut grid: Vec<Complex<f64>> = Vec::with_capacity(mx * mz);
    for j in 0..mz {
        let hz = j.min(mz - j) as f64 * dz / spec.len_z;
        for i in 0..mx {
            let hx = i.min(mx - i) as f64 * dx / spec.len_x;
            grid.push(Complex::new(spec.variance * (-(hx * hx) - hz * hz).exp(), 0.0));
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    fft2(&mut planner, &mut grid, mx, mz);
    let n = (mx * mz) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in grid.iter_mut() {
        let lambda = c.re.max(0.0);
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *c = Complex::new(re, im) * (lambda / n).sqrt();
    }
    fft2(&mut planner, &mut grid, mx, mz);
    let mut out = Vec::with_capacity(nx * nz);
    for j in 0..nz {
        for i in 0..nx {
            out.push(grid[j * mx + i].re);
        }
    }
    Ok(out)
}

fn fft2(planner: &mut FftPlanner<f64>, data: &mut [Complex<f64>], mx: usize, mz: usize) {
    let row = planner.plan_fft_forward(mx);
    for chunk in data.chunks_mut(mx) {
        row.process(chunk);
    }
    let col = planner.plan_fft_forward(mz);
    let mut buf = vec![Complex::new(0.0, 0.0); mz];
    for i in 0..mx {
        for j in 0..mz {
            buf[j] = data[j * mx + i];
        }
        col.process(&mut buf);
        for j in 0..mz {
            data[j * mx + i] = buf[j];
        }
    }
}

/// Gaussian data noise. The per-datum noise standard deviation is `std`
/// (absolute) or `fraction * |d|` (relative); the assigned uncertainty is
/// that standard deviation plus `floor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    AbsoluteGaussian {
        std: f64,
        #[serde(default)]
        floor: f64,
    },
    RelativeGaussian {
        fraction: f64,
        #[serde(default)]
        floor: f64,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, floor) = match self {
            NoiseSpec::AbsoluteGaussian { std, floor } => (*std, *floor),
            NoiseSpec::RelativeGaussian { fraction, floor } => (*fraction, *floor),
        };
        if !(a >= 0.0 && floor >= 0.0 && a.is_finite() && floor.is_finite()) {
            return Err(invalid("noise level and floor must be finite and nonnegative"));
        }
        if let NoiseSpec::AbsoluteGaussian { std, floor } = self {
            if *std == 0.0 && *floor == 0.0 {
                return Err(invalid("absolute noise with zero std needs a positive floor"));
            }
        }
        Ok(())
    }

    fn std_for(&self, d: f64) -> f64 {
        match self {
            NoiseSpec::AbsoluteGaussian { std, .. } => *std,
            NoiseSpec::RelativeGaussian { fraction, .. } => fraction * d.abs(),
        }
    }

    fn floor(&self) -> f64 {
        match self {
            NoiseSpec::AbsoluteGaussian { floor, .. } | NoiseSpec::RelativeGaussian { floor, .. } => *floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyData {
    pub observed: Vec<f64>,
    pub uncertainty: Vec<f64>,
    /// Diagonal of W_d.
    pub weights: Vec<f64>,
}

pub fn add_noise(data: &[f64], spec: &NoiseSpec, seed: u64) -> Result<NoisyData> {
    spec.validate()?;
    if let Some(i) = data.iter().position(|d| !d.is_finite()) {
        return Err(invalid(format!("datum {i} is not finite")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = Vec::with_capacity(data.len());
    let mut uncertainty = Vec::with_capacity(data.len());
    for d in data {
        let std = spec.std_for(*d);
        let e: f64 = StandardNormal.sample(&mut rng);
        observed.push(d + std * e);
        let u = std + spec.floor();
        if !(u > 0.0) {
            return Err(invalid("a datum has zero uncertainty; set a noise floor"));
        }
        uncertainty.push(u);
    }
    let weights = uncertainty.iter().map(|u| 1.0 / u).collect();
    Ok(NoisyData { observed, uncertainty, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_dcr_mesh, build_tomo_mesh};
    use approx::assert_relative_eq;

    #[test]
    fn case1_values() {
        let mesh = build_tomo_mesh(64, 128, 1.0, 1.0).unwrap();
        let t = make_case1(&mesh, &Case1Params::default()).unwrap();
        assert!(t.values.iter().all(|v| *v == 0.001 || *v == 0.005));
        for (v, m) in t.values.iter().zip(&t.target_mask) {
            assert_eq!(*v == 0.005, *m);
        }
        let f = t.target_fraction();
        assert!(f > 0.0 && f < 1.0);
        assert_eq!(t.target_mask.iter().filter(|m| **m).count(), 256);
    }

    #[test]
    fn case2_zero_variance_is_background_plus_ellipse() {
        let mesh = build_tomo_mesh(32, 64, 1.0, 1.0).unwrap();
        let p = Case2Params { grf: GrfSpec { variance: 0.0, ..GrfSpec::default() }, ..Case2Params::default() };
        let t = make_case2(&mesh, &p, 3).unwrap();
        for (v, m) in t.values.iter().zip(&t.target_mask) {
            assert_relative_eq!(*v, if *m { 1.0 / 600.0 } else { 0.001 });
        }
        assert!(t.target_fraction() > 0.0);
    }

    #[test]
    fn case2_deterministic_per_seed() {
        let mesh = build_tomo_mesh(32, 64, 1.0, 1.0).unwrap();
        let p = Case2Params::default();
        assert_eq!(make_case2(&mesh, &p, 5).unwrap(), make_case2(&mesh, &p, 5).unwrap());
        assert_ne!(make_case2(&mesh, &p, 5).unwrap(), make_case2(&mesh, &p, 6).unwrap());
    }

    #[test]
    fn grf_rejects_bad_lengths() {
        let spec = GrfSpec { len_x: 0.0, ..GrfSpec::default() };
        assert!(gaussian_random_field(8, 8, 1.0, 1.0, &spec, 0).is_err());
        let spec = GrfSpec { len_z: -1.0, ..GrfSpec::default() };
        assert!(gaussian_random_field(8, 8, 1.0, 1.0, &spec, 0).is_err());
    }

    #[test]
    fn grf_variance_monte_carlo() {
        let spec = GrfSpec { variance: 4.0, len_x: 6.0, len_z: 6.0 };
        let mut acc = 0.0;
        let runs = 40;
        for seed in 0..runs {
            let f = gaussian_random_field(64, 128, 1.0, 1.0, &spec, seed).unwrap();
            acc += f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
        }
        let var = acc / runs as f64;
        assert!((var - 4.0).abs() < 0.4, "ensemble variance {var}");
    }

    #[test]
    fn grf_correlation_decays() {
        let spec = GrfSpec { variance: 1.0, len_x: 5.0, len_z: 5.0 };
        let (nx, nz) = (64, 64);
        let (mut c0, mut c5, mut c20) = (0.0, 0.0, 0.0);
        for seed in 0..20 {
            let f = gaussian_random_field(nx, nz, 1.0, 1.0, &spec, seed).unwrap();
            for j in 0..nz {
                for i in 0..nx - 20 {
                    let a = f[j * nx + i];
                    c0 += a * a;
                    c5 += a * f[j * nx + i + 5];
                    c20 += a * f[j * nx + i + 20];
                }
            }
        }
        // exp(-1) at one correlation length, ~0 at four
        assert!((c5 / c0 - (-1f64).exp()).abs() < 0.08, "{}", c5 / c0);
        assert!((c20 / c0).abs() < 0.08);
    }

    #[test]
    fn case3_values_and_vertical_dike() {
        let mesh = build_dcr_mesh(200, 45, 5.0, 5.0, 7, 1.5).unwrap();
        let p = Case3Params { dike: DikeGeometry { dip_deg: 90.0, ..DikeGeometry::default() }, ..Default::default() };
        let t = make_case3(&mesh, &p).unwrap();
        assert_eq!(t.values.len(), 9000);
        let at = |ix: usize, iz: usize| t.values[iz * 200 + ix];
        assert_relative_eq!(at(0, 30), -2.0);
        assert_relative_eq!(at(0, 0), 0.02f64.log10());
        assert_relative_eq!(at(100, 10), -1.0);
        // constant horizontal extent with depth
        let extent = |iz: usize| (0..200).filter(|ix| t.target_mask[iz * 200 + ix]).collect::<Vec<_>>();
        let first = extent(5);
        assert!(!first.is_empty());
        for iz in 5..25 {
            assert_eq!(extent(iz), first);
        }
        assert!(extent(26).is_empty());
    }

    #[test]
    fn case3_dip_shifts_dike() {
        let mesh = build_dcr_mesh(200, 45, 5.0, 5.0, 7, 1.5).unwrap();
        let p = Case3Params { dike: DikeGeometry { dip_deg: 45.0, ..DikeGeometry::default() }, ..Default::default() };
        let t = make_case3(&mesh, &p).unwrap();
        let left = |iz: usize| (0..200).find(|ix| t.target_mask[iz * 200 + ix]).unwrap();
        assert!(left(22) > left(5));
        let bad = Case3Params { dike: DikeGeometry { dip_deg: 0.0, ..DikeGeometry::default() }, ..Default::default() };
        assert!(make_case3(&mesh, &bad).is_err());
    }

    #[test]
    fn case4_gradient() {
        let mesh = build_dcr_mesh(200, 45, 5.0, 5.0, 7, 1.5).unwrap();
        let t = make_case4(&mesh, &Case4Params::default()).unwrap();
        let at = |ix: usize, iz: usize| 10f64.powf(t.values[iz * 200 + ix]);
        assert_relative_eq!(at(0, 0), 0.02, max_relative = 1e-12);
        assert_relative_eq!(at(0, 44), 0.001, max_relative = 1e-12);
        assert_relative_eq!(at(0, 22), 0.0105, max_relative = 1e-12);
        assert_relative_eq!(at(100, 10), 0.1, max_relative = 1e-12);
    }

    #[test]
    fn noise_absolute_and_weights() {
        let d = vec![0.05; 10];
        let n = add_noise(&d, &NoiseSpec::AbsoluteGaussian { std: 0.02, floor: 0.0 }, 1).unwrap();
        assert!(n.weights.iter().all(|w| (*w - 50.0).abs() < 1e-12));
        assert_ne!(n.observed, d);
        let again = add_noise(&d, &NoiseSpec::AbsoluteGaussian { std: 0.02, floor: 0.0 }, 1).unwrap();
        assert_eq!(n, again);
    }

    #[test]
    fn noise_zero_std_uses_floor() {
        let d = vec![1.0, -2.0, 3.0];
        let n = add_noise(&d, &NoiseSpec::RelativeGaussian { fraction: 0.0, floor: 1e-6 }, 0).unwrap();
        assert_eq!(n.observed, d);
        assert!(n.weights.iter().all(|w| *w == 1e6));
        assert!(add_noise(&d, &NoiseSpec::AbsoluteGaussian { std: 0.0, floor: 0.0 }, 0).is_err());
    }

    #[test]
    fn noise_relative_statistics() {
        let d: Vec<f64> = (0..10_000).map(|i| 1e-3 * (1.0 + (i % 17) as f64)).collect();
        let n = add_noise(&d, &NoiseSpec::RelativeGaussian { fraction: 0.05, floor: 0.0 }, 9).unwrap();
        let rel: Vec<f64> = n.observed.iter().zip(&d).map(|(o, c)| (o - c) / c).collect();
        let mean = rel.iter().sum::<f64>() / rel.len() as f64;
        let std = (rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rel.len() - 1) as f64).sqrt();
        assert!((std - 0.05).abs() < 0.0025, "{std}");
    }

    #[test]
    fn noise_rejects_non_finite() {
        assert!(add_noise(&[f64::NAN], &NoiseSpec::AbsoluteGaussian { std: 1.0, floor: 0.0 }, 0).is_err());
    }
}
