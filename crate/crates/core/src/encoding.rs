//! Positional encodings γ and the encoded input matrix Z.
//!
//! Column layout of a row of Z, for a coordinate vector `x = (x, z)`:
//!
//! * identity: `[x, z]`
//! * basic:    `[cos 2πx, cos 2πz, sin 2πx, sin 2πz]`
//! * linear:   one group per frequency `k_i = i/2`, `i = 1..=m`, each group
//!   laid out as `[cos 2πk_i x, cos 2πk_i z, sin 2πk_i x, sin 2πk_i z]`
//! * gaussian: `[cos 2πBx (ĥ entries), sin 2πBx (ĥ entries)]`

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mesh::CoreGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodingConfig {
    Identity,
    Basic,
    Linear {
        m: usize,
    },
    Gaussian {
        b_rows: usize,
        #[serde(default = "default_b_std")]
        b_std: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_b_std() -> f64 {
    0.5
}

impl EncodingConfig {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            EncodingConfig::Identity => input_dim,
            EncodingConfig::Basic => 2 * input_dim,
            EncodingConfig::Linear { m } => 2 * m * input_dim,
            EncodingConfig::Gaussian { b_rows, .. } => 2 * b_rows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EncodingConfig::Linear { m } if *m == 0 => {
                Err(invalid("linear encoding needs at least one frequency"))
            }
            EncodingConfig::Gaussian { b_rows, b_std, .. } => {
                if *b_rows == 0 {
                    Err(invalid("gaussian encoding needs b_rows > 0"))
                } else if !(*b_std >= 0.0) || !b_std.is_finite() {
                    Err(invalid(format!("gaussian encoding needs b_std >= 0, got {b_std}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn is_trigonometric(&self) -> bool {
        !matches!(self, EncodingConfig::Identity)
    }
}

/// An encoding with its random projection (gaussian kind) drawn once.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncodingConfig,
    input_dim: usize,
    projection: Option<DMatrix<f64>>,
}

impl Encoder {
    pub fn new(config: EncodingConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(invalid("input dimension must be at least 1"));
        }
        let projection = match &config {
            EncodingConfig::Gaussian { b_rows, b_std, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let normal = Normal::new(0.0, *b_std).map_err(|e| invalid(e.to_string()))?;
                // filled row by row so the draw order is independent of storage layout
                let mut b = DMatrix::zeros(*b_rows, input_dim);
                for r in 0..*b_rows {
                    for c in 0..input_dim {
                        b[(r, c)] = normal.sample(&mut rng);
                    }
                }
                Some(b)
            }
            _ => None,
        };
        Ok(Self { config, input_dim, projection })
    }

    pub fn config(&self) -> &EncodingConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim(self.input_dim)
    }

    /// The Gaussian projection matrix B (ĥ x w), if any.
    pub fn projection(&self) -> Option<&DMatrix<f64>> {
        self.projection.as_ref()
    }

    /// γ applied to one coordinate vector.
    pub fn encode_point(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.input_dim);
        out.clear();
        match &self.config {
            EncodingConfig::Identity => out.extend_from_slice(x),
            EncodingConfig::Basic => push_frequency_group(1.0, x, out),
            EncodingConfig::Linear { m } => {
                for i in 1..=*m {
                    push_frequency_group(i as f64 / 2.0, x, out);
                }
            }
            EncodingConfig::Gaussian { .. } => {
                let b = self.projection.as_ref().expect("gaussian encoder always has B");
                let phases: Vec<f64> = (0..b.nrows())
                    .map(|r| TAU * (0..x.len()).map(|c| b[(r, c)] * x[c]).sum::<f64>())
                    .collect();
                out.extend(phases.iter().map(|p| p.cos()));
                out.extend(phases.iter().map(|p| p.sin()));
            }
        }
    }

    pub fn encode(&self, coords: &CoreGrid) -> Result<EncodedInput> {
        if self.input_dim != 2 {
            return Err(invalid(format!("grid coordinates are 2D, encoder expects {}", self.input_dim)));
        }
        let h = self.output_dim();
        let n = coords.centers.len();
        let mut z = DMatrix::zeros(n, h);
        let mut row = Vec::with_capacity(h);
        for (i, (x, zc)) in coords.centers.iter().enumerate() {
            self.encode_point(&[*x, *zc], &mut row);
            for (j, v) in row.iter().enumerate() {
                z[(i, j)] = *v;
            }
        }
        Ok(EncodedInput { z, width: coords.width, height: coords.height })
    }
}

fn push_frequency_group(k: f64, x: &[f64], out: &mut Vec<f64>) {
    out.extend(x.iter().map(|v| (TAU * k * v).cos()));
    out.extend(x.iter().map(|v| (TAU * k * v).sin()));
}

/// Z: one row per core cell, one column per encoded feature.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedInput {
    pub z: DMatrix<f64>,
    pub width: usize,
    pub height: usize,
}

impl EncodedInput {
    pub fn n_rows(&self) -> usize {
        self.z.nrows()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }
}

/// Build the encoder for `config` and apply it to `coords`.
pub fn encode(config: &EncodingConfig, coords: &CoreGrid) -> Result<EncodedInput> {
    Encoder::new(config.clone(), 2)?.encode(coords)
}
