//! PNG heatmaps of grids (viridis, one solid block per cell, depth down).

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::CliError;
use crate::io::Grid;

const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

pub fn viridis(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let x = t * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let a = VIRIDIS[i][c] as f64;
        let b = VIRIDIS[i + 1][c] as f64;
        out[c] = (a + f * (b - a)).round() as u8;
    }
    out
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RenderOptions {
    /// Colour range; defaults to the grid's own min and max.
    pub vmin: Option<f64>,
    pub vmax: Option<f64>,
    /// Pixels per cell side; 0 picks a size giving roughly 512 px on the
    /// long side.
    pub pixels_per_cell: usize,
}

/// RGB raster with its dimensions.
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    pub vmin: f64,
    pub vmax: f64,
}

pub fn rasterize(grid: &Grid, opts: &RenderOptions) -> Raster {
    let (lo, hi) = grid.range();
    let vmin = opts.vmin.unwrap_or(lo);
    let vmax = opts.vmax.unwrap_or(hi);
    let ppc = if opts.pixels_per_cell > 0 {
        opts.pixels_per_cell
    } else {
        (512 / grid.nx.max(grid.nz)).max(1)
    };
    let (width, height) = (grid.nx * ppc, grid.nz * ppc);
    let mut rgb = vec![0u8; width * height * 3];
    for iz in 0..grid.nz {
        for ix in 0..grid.nx {
            let v = grid.values[iz * grid.nx + ix];
            // a constant grid maps to the middle of the colour scale
            let t = if vmax > vmin { (v - vmin) / (vmax - vmin) } else { 0.5 };
            let c = viridis(t);
            for py in iz * ppc..(iz + 1) * ppc {
                for px in ix * ppc..(ix + 1) * ppc {
                    let o = (py * width + px) * 3;
                    rgb[o..o + 3].copy_from_slice(&c);
                }
            }
        }
    }
    Raster { width, height, rgb, vmin, vmax }
}

/// Write the heatmap; the colour range is stored in `vmin`/`vmax` text chunks.
pub fn render_heatmap(grid: &Grid, opts: &RenderOptions, out: &Path) -> Result<(), CliError> {
    let raster = rasterize(grid, opts);
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
    }
    let file = File::create(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    let png_err = |e: png::EncodingError| CliError::io(format!("encoding {}", out.display()), std::io::Error::other(e));
    let mut enc = png::Encoder::new(BufWriter::new(file), raster.width as u32, raster.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk("colormap".into(), "viridis".into()).map_err(png_err)?;
    enc.add_text_chunk("vmin".into(), format!("{}", raster.vmin)).map_err(png_err)?;
    enc.add_text_chunk("vmax".into(), format!("{}", raster.vmax)).map_err(png_err)?;
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&raster.rgb).map_err(png_err)?;
    writer.finish().map_err(png_err)
}
