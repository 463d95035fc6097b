//! 2D tensor meshes with a uniform core and geometrically expanding padding.
//!
//! Coordinates: x grows to the right, z grows downward from the ground
//! surface at z = 0. The core occupies `[0, nx_core*dx] x [0, nz_core*dz]`;
//! padding extends left (negative x), right, and below the core. The top is
//! never padded.
//!
//! Cell ordering everywhere in this crate is row-major with x fastest:
//! `index = iz * nx + ix`. Core vectors use the same convention over the
//! core block only.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorMesh {
    pub dx_core: f64,
    pub dz_core: f64,
    pub nx_core: usize,
    pub nz_core: usize,
    pub n_pad: usize,
    pub pad_factor: f64,
    x_edges: Vec<f64>,
    z_edges: Vec<f64>,
}

/// Cell-center coordinates of the core cells, in core ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct CoreGrid {
    pub width: usize,
    pub height: usize,
    pub centers: Vec<(f64, f64)>,
}

fn check_dims(nx: usize, nz: usize, dx: f64, dz: f64) -> Result<()> {
    if nx == 0 || nz == 0 {
        return Err(invalid(format!("mesh needs at least one cell per axis, got {nx}x{nz}")));
    }
    if !(dx > 0.0 && dz > 0.0) || !dx.is_finite() || !dz.is_finite() {
        return Err(invalid(format!("cell sizes must be positive, got dx={dx}, dz={dz}")));
    }
    Ok(())
}

/// Uniform mesh without padding, used for cross-hole tomography.
pub fn build_tomo_mesh(nx: usize, nz: usize, dx: f64, dz: f64) -> Result<TensorMesh> {
    build_dcr_mesh(nx, nz, dx, dz, 0, 1.0)
}

/// Core mesh padded left, right and below with `n_pad` cells growing by
/// `pad_factor` each step outward.
pub fn build_dcr_mesh(
    nx_core: usize,
    nz_core: usize,
    dx: f64,
    dz: f64,
    n_pad: usize,
    pad_factor: f64,
) -> Result<TensorMesh> {
    check_dims(nx_core, nz_core, dx, dz)?;
    if !(pad_factor >= 1.0) || !pad_factor.is_finite() {
        return Err(invalid(format!("pad_factor must be >= 1, got {pad_factor}")));
    }
    let pad = |h: f64| -> Vec<f64> { (1..=n_pad).map(|k| h * pad_factor.powi(k as i32)).collect() };

    let left: Vec<f64> = pad(dx).into_iter().rev().collect();
    let widths: Vec<f64> = left
        .iter()
        .copied()
        .chain(std::iter::repeat_n(dx, nx_core))
        .chain(pad(dx))
        .collect();
    let x0 = -left.iter().sum::<f64>();
    let x_edges = cumulative(x0, &widths);

    let heights: Vec<f64> = std::iter::repeat_n(dz, nz_core).chain(pad(dz)).collect();
    let z_edges = cumulative(0.0, &heights);

    Ok(TensorMesh { dx_core: dx, dz_core: dz, nx_core, nz_core, n_pad, pad_factor, x_edges, z_edges })
}

fn cumulative(start: f64, sizes: &[f64]) -> Vec<f64> {
    let mut edges = Vec::with_capacity(sizes.len() + 1);
    edges.push(start);
    let mut acc = start;
    for s in sizes {
        acc += s;
        edges.push(acc);
    }
    edges
}

impl TensorMesh {
    /// Full-mesh cell count along x.
    pub fn nx(&self) -> usize {
        self.x_edges.len() - 1
    }

    /// Full-mesh cell count along z.
    pub fn nz(&self) -> usize {
        self.z_edges.len() - 1
    }

    pub fn n_cells(&self) -> usize {
        self.nx() * self.nz()
    }

    pub fn n_active(&self) -> usize {
        self.nx_core * self.nz_core
    }

    pub fn x_edges(&self) -> &[f64] {
        &self.x_edges
    }

    pub fn z_edges(&self) -> &[f64] {
        &self.z_edges
    }

    pub fn cell_width(&self, ix: usize) -> f64 {
        self.x_edges[ix + 1] - self.x_edges[ix]
    }

    pub fn cell_height(&self, iz: usize) -> f64 {
        self.z_edges[iz + 1] - self.z_edges[iz]
    }

    pub fn x_center(&self, ix: usize) -> f64 {
        0.5 * (self.x_edges[ix] + self.x_edges[ix + 1])
    }

    pub fn z_center(&self, iz: usize) -> f64 {
        0.5 * (self.z_edges[iz] + self.z_edges[iz + 1])
    }

    #[inline]
    pub fn cell_index(&self, ix: usize, iz: usize) -> usize {
        iz * self.nx() + ix
    }

    /// Full-mesh index of core cell `(ixc, izc)`.
    #[inline]
    pub fn core_to_full(&self, ixc: usize, izc: usize) -> usize {
        self.cell_index(ixc + self.n_pad, izc)
    }

    pub fn is_active(&self, ix: usize, iz: usize) -> bool {
        ix >= self.n_pad && ix < self.n_pad + self.nx_core && iz < self.nz_core
    }

    /// One flag per full-mesh cell; true marks the core.
    pub fn active_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.n_cells());
        for iz in 0..self.nz() {
            for ix in 0..self.nx() {
                mask.push(self.is_active(ix, iz));
            }
        }
        mask
    }

    /// Full-mesh indices of the active cells, in core order.
    pub fn active_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_active());
        for izc in 0..self.nz_core {
            for ixc in 0..self.nx_core {
                out.push(self.core_to_full(ixc, izc));
            }
        }
        out
    }

    /// Scatter core values into a full-mesh vector filled with `background`.
    pub fn embed_core(&self, core_values: &[f64], background: f64) -> Result<Vec<f64>> {
        if core_values.len() != self.n_active() {
            return Err(invalid(format!(
                "core vector has {} entries, mesh has {} active cells",
                core_values.len(),
                self.n_active()
            )));
        }
        let mut full = vec![background; self.n_cells()];
        for (v, idx) in core_values.iter().zip(self.active_indices()) {
            full[idx] = *v;
        }
        Ok(full)
    }

    pub fn extract_core(&self, full: &[f64]) -> Result<Vec<f64>> {
        if full.len() != self.n_cells() {
            return Err(invalid(format!(
                "full vector has {} entries, mesh has {} cells",
                full.len(),
                self.n_cells()
            )));
        }
        Ok(self.active_indices().into_iter().map(|i| full[i]).collect())
    }

    /// Physical core cell centers (m), core ordering.
    pub fn core_centers(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.n_active());
        for izc in 0..self.nz_core {
            for ixc in 0..self.nx_core {
                out.push((self.x_center(ixc + self.n_pad), self.z_center(izc)));
            }
        }
        out
    }

    /// Core centers mapped affinely per axis so the extreme centers land on
    /// `lo` and `hi`. An axis with a single cell maps to the midpoint.
    pub fn normalized_centers(&self, lo: f64, hi: f64) -> Result<CoreGrid> {
        if !(hi > lo) {
            return Err(invalid(format!("normalization range needs hi > lo, got [{lo}, {hi}]")));
        }
        let xs: Vec<f64> = (0..self.nx_core).map(|i| self.x_center(i + self.n_pad)).collect();
        let zs: Vec<f64> = (0..self.nz_core).map(|j| self.z_center(j)).collect();
        let xs = affine_to(&xs, lo, hi);
        let zs = affine_to(&zs, lo, hi);
        let mut centers = Vec::with_capacity(self.n_active());
        for z in &zs {
            for x in &xs {
                centers.push((*x, *z));
            }
        }
        Ok(CoreGrid { width: self.nx_core, height: self.nz_core, centers })
    }

    /// Horizontal extent of the core.
    pub fn core_width(&self) -> f64 {
        self.nx_core as f64 * self.dx_core
    }

    pub fn core_depth(&self) -> f64 {
        self.nz_core as f64 * self.dz_core
    }

    /// Locate the cell containing `(x, z)`; points on interior edges belong
    /// to the cell below/right of the edge, points on the outer boundary to
    /// the adjacent cell.
    pub fn locate(&self, x: f64, z: f64) -> Option<(usize, usize)> {
        Some((locate_1d(&self.x_edges, x)?, locate_1d(&self.z_edges, z)?))
    }
}

fn locate_1d(edges: &[f64], v: f64) -> Option<usize> {
    let n = edges.len() - 1;
    if v < edges[0] || v > edges[n] {
        return None;
    }
    let i = edges.partition_point(|e| *e <= v);
    Some(i.saturating_sub(1).min(n - 1))
}

fn affine_to(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if values.len() < 2 || max <= min {
        return vec![0.5 * (lo + hi); values.len()];
    }
    values.iter().map(|v| lo + (hi - lo) * (v - min) / (max - min)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn tomo_mesh_full_size() {
        let m = build_tomo_mesh(64, 128, 1.0, 1.0).unwrap();
        assert_eq!(m.n_active(), 8192);
        assert_eq!(m.n_cells(), 8192);
        assert!((0..64).all(|i| m.cell_width(i) == 1.0));
        assert!((0..128).all(|j| m.cell_height(j) == 1.0));
    }

    #[test]
    fn single_cell_mesh() {
        let m = build_tomo_mesh(1, 1, 2.0, 2.0).unwrap();
        assert_eq!(m.n_active(), 1);
        assert_eq!(m.x_edges(), &[0.0, 2.0]);
    }

    #[test]
    fn small_mesh_edges() {
        let m = build_tomo_mesh(3, 2, 1.0, 0.5).unwrap();
        assert_eq!(m.n_active(), 6);
        assert_eq!(m.z_edges(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(build_tomo_mesh(0, 4, 1.0, 1.0).is_err());
        assert!(build_tomo_mesh(4, 4, -1.0, 1.0).is_err());
        assert!(build_tomo_mesh(4, 4, 1.0, 0.0).is_err());
        assert!(build_dcr_mesh(4, 4, 1.0, 1.0, 2, 0.9).is_err());
    }

    #[test]
    fn dcr_mesh_full_size() {
        let m = build_dcr_mesh(200, 45, 5.0, 5.0, 7, 1.5).unwrap();
        assert_eq!(m.n_active(), 9000);
        assert_eq!((m.nx(), m.nz()), (214, 52));
        assert_eq!(m.active_mask().iter().filter(|a| **a).count(), 9000);
    }

    #[test]
    fn zero_padding_is_core() {
        let m = build_dcr_mesh(10, 5, 1.0, 1.0, 0, 1.5).unwrap();
        assert_eq!(m.n_cells(), 50);
        assert_eq!(m.n_active(), 50);
        let v: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert_eq!(m.embed_core(&v, -1.0).unwrap(), v);
    }

    #[test]
    fn padding_grows_geometrically() {
        let m = build_dcr_mesh(4, 4, 2.0, 2.0, 2, 1.5).unwrap();
        assert_relative_eq!(m.cell_width(m.nx() - 1), 4.5, epsilon = 1e-12);
        assert_relative_eq!(m.cell_width(0), 4.5, epsilon = 1e-12);
        assert_relative_eq!(m.cell_width(1), 3.0, epsilon = 1e-12);
        assert_relative_eq!(m.cell_height(m.nz() - 1), 4.5, epsilon = 1e-12);
        // top is the air interface, never padded
        assert_eq!(m.z_edges()[0], 0.0);
        assert_relative_eq!(m.cell_height(0), 2.0);
    }

    #[test]
    fn total_width_matches_geometric_sum() {
        let (nx, dx, npad, f) = (200usize, 5.0, 7usize, 1.5f64);
        let m = build_dcr_mesh(nx, 45, dx, 5.0, npad, f).unwrap();
        let series = f * (f.powi(npad as i32) - 1.0) / (f - 1.0);
        let expected = nx as f64 * dx + 2.0 * dx * series;
        let got = m.x_edges().last().unwrap() - m.x_edges()[0];
        assert_relative_eq!(got, expected, max_relative = 1e-12);
        assert_relative_eq!(m.x_edges()[npad], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn uniform_embed_on_dcr_mesh() {
        let m = build_dcr_mesh(200, 45, 5.0, 5.0, 7, 1.5).unwrap();
        let full = m.embed_core(&vec![0.01; 9000], 0.01).unwrap();
        assert_eq!(full.len(), 214 * 52);
        assert!(full.iter().all(|v| *v == 0.01));
    }

    #[test]
    fn embed_rejects_wrong_length() {
        let m = build_dcr_mesh(4, 4, 1.0, 1.0, 2, 1.5).unwrap();
        assert!(m.embed_core(&[0.0; 3], 0.0).is_err());
        assert!(m.extract_core(&[0.0; 3]).is_err());
    }

    #[test]
    fn normalized_unit_square() {
        let m = build_tomo_mesh(2, 2, 1.0, 1.0).unwrap();
        let g = m.normalized_centers(0.0, 1.0).unwrap();
        assert_eq!(g.centers, vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn normalized_step_tomo() {
        let m = build_tomo_mesh(64, 128, 1.0, 1.0).unwrap();
        let g = m.normalized_centers(0.0, 1.0).unwrap();
        assert_eq!(g.centers.len(), 8192);
        for ix in 0..64 {
            assert_relative_eq!(g.centers[ix].0, ix as f64 / 63.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn normalized_dcr_core_extremes() {
        let m = build_dcr_mesh(200, 45, 5.0, 5.0, 7, 1.5).unwrap();
        let g = m.normalized_centers(-1.0, 1.0).unwrap();
        let (mut xmin, mut xmax, mut zmin, mut zmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, z) in &g.centers {
            xmin = xmin.min(*x);
            xmax = xmax.max(*x);
            zmin = zmin.min(*z);
            zmax = zmax.max(*z);
        }
        assert_relative_eq!(xmin, -1.0);
        assert_relative_eq!(xmax, 1.0);
        assert_relative_eq!(zmin, -1.0);
        assert_relative_eq!(zmax, 1.0);
    }

    #[test]
    fn degenerate_axis_maps_to_midpoint() {
        let m = build_tomo_mesh(1, 3, 1.0, 1.0).unwrap();
        let g = m.normalized_centers(-1.0, 1.0).unwrap();
        assert!(g.centers.iter().all(|(x, _)| *x == 0.0));
        assert!(m.normalized_centers(1.0, 1.0).is_err());
    }

    #[test]
    fn locate_cells() {
        let m = build_tomo_mesh(4, 4, 1.0, 1.0).unwrap();
        assert_eq!(m.locate(0.0, 0.0), Some((0, 0)));
        assert_eq!(m.locate(4.0, 4.0), Some((3, 3)));
        assert_eq!(m.locate(1.5, 2.0), Some((1, 2)));
        assert_eq!(m.locate(4.1, 1.0), None);
    }

    proptest! {
        #[test]
        fn embed_extract_roundtrip(
            nx in 1usize..12, nz in 1usize..12, npad in 0usize..4,
            seed in proptest::collection::vec(-10.0f64..10.0, 144),
            bg in -5.0f64..5.0,
        ) {
            let m = build_dcr_mesh(nx, nz, 1.0, 2.0, npad, 1.3).unwrap();
            let v: Vec<f64> = seed.into_iter().take(nx * nz).collect();
            let full = m.embed_core(&v, bg).unwrap();
            prop_assert_eq!(m.extract_core(&full).unwrap(), v);
        }

        #[test]
        fn normalized_is_monotone_affine(nx in 2usize..20, nz in 2usize..20, npad in 0usize..4) {
            let m = build_dcr_mesh(nx, nz, 3.0, 1.5, npad, 1.4).unwrap();
            let g = m.normalized_centers(-1.0, 1.0).unwrap();
            let xs: Vec<f64> = g.centers[..nx].iter().map(|c| c.0).collect();
            for w in xs.windows(3) {
                prop_assert!(w[1] > w[0]);
                prop_assert!(((w[2] - w[1]) - (w[1] - w[0])).abs() < 1e-12);
            }
            let zs: Vec<f64> = (0..nz).map(|j| g.centers[j * nx].1).collect();
            for w in zs.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }

        #[test]
        fn edges_strictly_increasing(nx in 1usize..30, nz in 1usize..30, npad in 0usize..8, f in 1.0f64..2.0) {
            let m = build_dcr_mesh(nx, nz, 2.0, 1.0, npad, f).unwrap();
            prop_assert!(m.x_edges().windows(2).all(|w| w[1] > w[0]));
            prop_assert!(m.z_edges().windows(2).all(|w| w[1] > w[0]));
            prop_assert_eq!(m.n_active(), nx * nz);
        }
    }
}
