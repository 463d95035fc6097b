//! Coordinate MLP mapping encoded cell coordinates to a physical property.
//!
//! Every hidden layer is affine followed by LeakyReLU; the last layer is
//! affine followed by the output head `offset + scale * act(raw)`.
//! Weight matrices are stored `(out, in)`. The flat parameter vector lists,
//! layer by layer, the weight matrix in row-major order followed by the bias.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoding::EncodedInput;
use crate::error::{invalid, Error, Result};

pub const FULL_HIDDEN: [usize; 6] = [128, 256, 256, 256, 256, 128];
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
/// Default ceiling on the explicit Jacobian size.
pub const DEFAULT_JACOBIAN_BUDGET_BYTES: usize = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Tanh,
    Sigmoid,
    Relu,
    None,
}

impl OutputActivation {
    fn apply(self, x: f64) -> f64 {
        match self {
            OutputActivation::Tanh => x.tanh(),
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            OutputActivation::Relu => x.max(0.0),
            OutputActivation::None => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            OutputActivation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            OutputActivation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            OutputActivation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            OutputActivation::None => 1.0,
        }
    }
}

/// Maps the raw network output to property units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputHead {
    pub activation: OutputActivation,
    pub scale: f64,
    pub offset: f64,
}

impl OutputHead {
    /// Sigmoid head spanning `(lo, hi)`.
    pub fn sigmoid_range(lo: f64, hi: f64) -> Self {
        Self { activation: OutputActivation::Sigmoid, scale: hi - lo, offset: lo }
    }

    /// Tanh head spanning `(center - half_width, center + half_width)`.
    pub fn tanh_window(center: f64, half_width: f64) -> Self {
        Self { activation: OutputActivation::Tanh, scale: half_width, offset: center }
    }

    pub fn linear() -> Self {
        Self { activation: OutputActivation::None, scale: 1.0, offset: 0.0 }
    }

    #[inline]
    pub fn value(&self, raw: f64) -> f64 {
        self.offset + self.scale * self.activation.apply(raw)
    }

    #[inline]
    pub fn slope(&self, raw: f64) -> f64 {
        self.scale * self.activation.derivative(raw)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input width, hidden widths, then the output width (always 1).
    pub layer_dims: Vec<usize>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    pub head: OutputHead,
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden: &[usize], head: OutputHead) -> Self {
        let mut layer_dims = Vec::with_capacity(hidden.len() + 2);
        layer_dims.push(input_dim);
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(1);
        Self { layer_dims, leaky_slope: DEFAULT_LEAKY_SLOPE, head }
    }

    /// Six hidden layers 128-256-256-256-256-128.
    pub fn full(input_dim: usize, head: OutputHead) -> Self {
        Self::new(input_dim, &FULL_HIDDEN, head)
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(invalid("layer_dims needs at least an input and an output width"));
        }
        if self.layer_dims.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        if *self.layer_dims.last().unwrap() != 1 {
            return Err(invalid("the network output must be scalar"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(invalid(format!("leaky slope must lie in [0, 1), got {}", self.leaky_slope)));
        }
        if !self.head.scale.is_finite() || !self.head.offset.is_finite() {
            return Err(invalid("output head scale/offset must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    seed: u64,
}

/// Activations recorded by a forward pass, reused by `vjp`/`jvp`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer: `inputs[0]` is Z, `inputs[l]` the post-activation of hidden layer l.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of every layer, the last being the raw scalar output.
    pre: Vec<DMatrix<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn n_rows(&self) -> usize {
        self.output.len()
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_slope_at(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

impl Mlp {
    /// Kaiming-normal weights, `std = gain / sqrt(fan_in)` with the LeakyReLU
    /// gain `sqrt(2 / (1 + slope^2))`, zero biases.
    pub fn init_kaiming(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let gain = (2.0 / (1.0 + config.leaky_slope.powi(2))).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in config.layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).map_err(|e| invalid(e.to_string()))?;
            let mut mat = DMatrix::zeros(fan_out, fan_in);
            for o in 0..fan_out {
                for i in 0..fan_in {
                    mat[(o, i)] = normal.sample(&mut rng);
                }
            }
            weights.push(mat);
            biases.push(DVector::zeros(fan_out));
        }
        Ok(Self { config, weights, biases, seed })
    }

    /// All weights and biases zero.
    pub fn zeros(config: MlpConfig) -> Result<Self> {
        let mut mlp = Self::init_kaiming(config, 0)?;
        let n = mlp.param_count();
        mlp.set_params(&vec![0.0; n])?;
        Ok(mlp)
    }

    pub fn from_params(config: MlpConfig, params: &[f64], seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(config)?;
        mlp.seed = seed;
        mlp.set_params(params)?;
        Ok(mlp)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.config.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.config.layer_dims[0]
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for o in 0..w.nrows() {
                out.extend(w.row(o).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(invalid(format!(
                "parameter vector has {} entries, network has {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for o in 0..w.nrows() {
                for i in 0..w.ncols() {
                    w[(o, i)] = params[k];
                    k += 1;
                }
            }
            for o in 0..b.len() {
                b[o] = params[k];
                k += 1;
            }
        }
        Ok(())
    }

    /// `params += delta`, in flat order.
    pub fn add_to_params(&mut self, delta: &[f64]) -> Result<()> {
        let mut p = self.params();
        if delta.len() != p.len() {
            return Err(invalid("parameter delta has the wrong length"));
        }
        for (a, d) in p.iter_mut().zip(delta) {
            *a += d;
        }
        self.set_params(&p)
    }

    fn check_input(&self, z: &EncodedInput) -> Result<()> {
        if z.dim() != self.input_dim() {
            return Err(invalid(format!(
                "encoded input has {} columns, network expects {}",
                z.dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, z: &EncodedInput) -> Result<ForwardCache> {
        self.check_input(z)?;
        let slope = self.config.leaky_slope;
        let n_layers = self.weights.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut current = z.z.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut p = &current * w.transpose();
            for (j, bj) in b.iter().enumerate() {
                p.column_mut(j).add_scalar_mut(*bj);
            }
            let next = if l + 1 < n_layers { p.map(|v| leaky(v, slope)) } else { DMatrix::zeros(0, 0) };
            inputs.push(current);
            pre.push(p);
            current = next;
        }
        let head = self.config.head;
        let output = pre.last().unwrap().column(0).iter().map(|r| head.value(*r)).collect();
        Ok(ForwardCache { inputs, pre, output })
    }

    /// Property model m = f_w(Z), one value per row of Z.
    pub fn forward(&self, z: &EncodedInput) -> Result<Vec<f64>> {
        Ok(self.forward_cached(z)?.output)
    }

    /// Per-layer output deltas for a row-wise cotangent on m.
    fn backprop_deltas(&self, cache: &ForwardCache, cotangent: &[f64]) -> Vec<DMatrix<f64>> {
        let slope = self.config.leaky_slope;
        let head = self.config.head;
        let n_layers = self.weights.len();
        let raw = &cache.pre[n_layers - 1];
        let mut g = DMatrix::from_iterator(
            raw.nrows(),
            1,
            raw.column(0).iter().zip(cotangent).map(|(r, c)| c * head.slope(*r)),
        );
        let mut deltas = vec![DMatrix::zeros(0, 0); n_layers];
        for l in (0..n_layers).rev() {
            let next = if l > 0 {
                let mut back = &g * &self.weights[l];
                back.zip_apply(&cache.pre[l - 1], |gv, p| *gv *= leaky_slope_at(p, slope));
                Some(back)
            } else {
                None
            };
            deltas[l] = std::mem::replace(&mut g, next.unwrap_or_else(|| DMatrix::zeros(0, 0)));
        }
        deltas
    }

    /// Gradient of `cotangent · m(w)` with respect to the flat weights.
    pub fn vjp_cached(&self, cache: &ForwardCache, cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != cache.n_rows() {
            return Err(invalid(format!(
                "cotangent has {} entries, model has {}",
                cotangent.len(),
                cache.n_rows()
            )));
        }
        let deltas = self.backprop_deltas(cache, cotangent);
        let mut grad = Vec::with_capacity(self.param_count());
        for (l, delta) in deltas.iter().enumerate() {
            let gw = delta.tr_mul(&cache.inputs[l]);
            for o in 0..gw.nrows() {
                grad.extend(gw.row(o).iter());
            }
            for o in 0..delta.ncols() {
                grad.push(delta.column(o).iter().sum::<f64>());
            }
        }
        Ok(grad)
    }

    pub fn vjp(&self, z: &EncodedInput, cotangent: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_cached(z)?;
        self.vjp_cached(&cache, cotangent)
    }

    /// Directional derivative `J · tangent` of m with respect to the weights.
    pub fn jvp_cached(&self, cache: &ForwardCache, tangent: &[f64]) -> Result<Vec<f64>> {
        if tangent.len() != self.param_count() {
            return Err(invalid("tangent has the wrong length"));
        }
        let slope = self.config.leaky_slope;
        let n_layers = self.weights.len();
        let n = cache.n_rows();
        let mut offset = 0;
        let mut t_in: Option<DMatrix<f64>> = None;
        let mut out = Vec::new();
        for l in 0..n_layers {
            let w = &self.weights[l];
            let (n_out, n_in) = (w.nrows(), w.ncols());
            let dw = DMatrix::from_row_slice(n_out, n_in, &tangent[offset..offset + n_out * n_in]);
            offset += n_out * n_in;
            let db = &tangent[offset..offset + n_out];
            offset += n_out;

            let mut dp = &cache.inputs[l] * dw.transpose();
            if let Some(t) = &t_in {
                dp += t * w.transpose();
            }
            for (j, bj) in db.iter().enumerate() {
                dp.column_mut(j).add_scalar_mut(*bj);
            }
            if l + 1 < n_layers {
                dp.zip_apply(&cache.pre[l], |d, p| *d *= leaky_slope_at(p, slope));
                t_in = Some(dp);
            } else {
                let head = self.config.head;
                out = (0..n).map(|i| dp[(i, 0)] * head.slope(cache.pre[l][(i, 0)])).collect();
            }
        }
        Ok(out)
    }

    /// Explicit `∂m/∂w`, shape `(cells, params)`. Fails with a capacity error
    /// when the dense matrix would exceed `budget_bytes`; use
    /// [`JacobianOperator`] instead in that case.
    pub fn weight_jacobian(&self, z: &EncodedInput, budget_bytes: usize) -> Result<DMatrix<f64>> {
        let n = z.n_rows();
        let p = self.param_count();
        let bytes = n.saturating_mul(p).saturating_mul(std::mem::size_of::<f64>());
        if bytes > budget_bytes {
            return Err(Error::Capacity(format!(
                "explicit Jacobian {n}x{p} needs {bytes} bytes, budget is {budget_bytes}; use the matrix-free operator"
            )));
        }
        let cache = self.forward_cached(z)?;
        // with a unit cotangent every row of each delta is that sample's own derivative
        let deltas = self.backprop_deltas(&cache, &vec![1.0; n]);
        let mut jac = DMatrix::zeros(n, p);
        let mut col = 0;
        for (l, delta) in deltas.iter().enumerate() {
            let a = &cache.inputs[l];
            for o in 0..delta.ncols() {
                let d = delta.column(o);
                for i in 0..a.ncols() {
                    let mut c = jac.column_mut(col);
                    c.copy_from(&d);
                    c.component_mul_assign(&a.column(i));
                    col += 1;
                }
            }
            for o in 0..delta.ncols() {
                jac.column_mut(col).copy_from(&delta.column(o));
                col += 1;
            }
        }
        Ok(jac)
    }

    pub fn jacobian_operator<'a>(&'a self, z: &EncodedInput) -> Result<JacobianOperator<'a>> {
        Ok(JacobianOperator { mlp: self, cache: self.forward_cached(z)? })
    }
}

/// Matrix-free `∂m/∂w` at fixed weights: `J v` by forward mode, `Jᵀ u` by reverse mode.
pub struct JacobianOperator<'a> {
    mlp: &'a Mlp,
    cache: ForwardCache,
}

impl JacobianOperator<'_> {
    pub fn nrows(&self) -> usize {
        self.cache.n_rows()
    }

    pub fn ncols(&self) -> usize {
        self.mlp.param_count()
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.mlp.jvp_cached(&self.cache, v).expect("operator dimensions are fixed")
    }

    pub fn rmatvec(&self, u: &[f64]) -> Vec<f64> {
        self.mlp.vjp_cached(&self.cache, u).expect("operator dimensions are fixed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{encode, EncodingConfig};
    use crate::mesh::build_tomo_mesh;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn grid_input(nx: usize, nz: usize, enc: EncodingConfig) -> EncodedInput {
        let mesh = build_tomo_mesh(nx, nz, 1.0, 1.0).unwrap();
        encode(&enc, &mesh.normalized_centers(-1.0, 1.0).unwrap()).unwrap()
    }

    fn small_net(head: OutputHead, seed: u64) -> Mlp {
        Mlp::init_kaiming(MlpConfig::new(4, &[7, 9, 5], head), seed).unwrap()
    }

    #[test]
    fn full_size_param_counts() {
        let head = OutputHead::sigmoid_range(-4.0, 0.0);
        assert_eq!(MlpConfig::full(2, head).param_count(), 263809);
        assert_eq!(MlpConfig::full(4, head).param_count(), 263809 + 2 * 128);
        assert_eq!(MlpConfig::new(2, &[], head).param_count(), 3);
        let mlp = Mlp::init_kaiming(MlpConfig::full(2, head), 0).unwrap();
        assert_eq!(mlp.params().len(), 263809);
    }

    #[test]
    fn rejects_bad_configs() {
        let head = OutputHead::linear();
        assert!(Mlp::init_kaiming(MlpConfig { layer_dims: vec![], leaky_slope: 0.01, head }, 0).is_err());
        assert!(Mlp::init_kaiming(MlpConfig { layer_dims: vec![2, 3, 2], leaky_slope: 0.01, head }, 0).is_err());
    }

    #[test]
    fn kaiming_statistics_and_determinism() {
        let cfg = MlpConfig::new(256, &[256], OutputHead::linear());
        let a = Mlp::init_kaiming(cfg.clone(), 5).unwrap();
        let b = Mlp::init_kaiming(cfg, 5).unwrap();
        assert_eq!(a, b);
        let w = &a.weights()[0];
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / (1.0 + 0.01f64.powi(2)) / 256.0;
        assert!((var / expected - 1.0).abs() < 0.03, "var {var} vs {expected}");
        assert!(a.biases().iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn zero_weights_give_head_constant() {
        let z = grid_input(3, 2, EncodingConfig::Basic);
        let tanh = Mlp::zeros(MlpConfig::new(4, &[8, 8], OutputHead::tanh_window(0.001, 0.005))).unwrap();
        assert!(tanh.forward(&z).unwrap().iter().all(|v| *v == 0.001));
        let sig = Mlp::zeros(MlpConfig::new(4, &[8, 8], OutputHead::sigmoid_range(-4.0, 0.0))).unwrap();
        assert!(sig.forward(&z).unwrap().iter().all(|v| (*v + 2.0).abs() < 1e-15));
    }

    #[test]
    fn forward_matches_scalar_reevaluation() {
        let z = grid_input(2, 2, EncodingConfig::Basic);
        let mlp = small_net(OutputHead::tanh_window(0.3, 2.0), 9);
        let m = mlp.forward(&z).unwrap();
        for (i, mi) in m.iter().enumerate() {
            let mut a: Vec<f64> = z.z.row(i).iter().copied().collect();
            let n_layers = mlp.weights().len();
            for (l, (w, b)) in mlp.weights().iter().zip(mlp.biases()).enumerate() {
                let mut next = vec![0.0; w.nrows()];
                for o in 0..w.nrows() {
                    let mut s = b[o];
                    for k in 0..w.ncols() {
                        s += w[(o, k)] * a[k];
                    }
                    next[o] = if l + 1 < n_layers { if s > 0.0 { s } else { 0.01 * s } } else { s };
                }
                a = next;
            }
            let expected = 0.3 + 2.0 * a[0].tanh();
            assert_relative_eq!(*mi, expected, max_relative = 1e-13);
        }
    }

    #[test]
    fn sigmoid_head_stays_in_interval() {
        let z = grid_input(8, 8, EncodingConfig::Basic);
        for seed in 0..5 {
            let mlp = small_net(OutputHead::sigmoid_range(-4.0, 0.0), seed);
            assert!(mlp.forward(&z).unwrap().iter().all(|v| *v > -4.0 && *v < 0.0));
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let z = grid_input(2, 2, EncodingConfig::Identity);
        assert!(small_net(OutputHead::linear(), 0).forward(&z).is_err());
    }

    #[test]
    fn zero_cotangent_zero_gradient() {
        let z = grid_input(3, 3, EncodingConfig::Basic);
        let mlp = small_net(OutputHead::tanh_window(0.0, 1.0), 1);
        assert!(mlp.vjp(&z, &[0.0; 9]).unwrap().iter().all(|g| *g == 0.0));
    }

    fn central_difference(mlp: &Mlp, z: &EncodedInput, c: &[f64], k: usize, h: f64) -> f64 {
        let f = |delta: f64| {
            let mut p = mlp.params();
            p[k] += delta;
            let mut m = mlp.clone();
            m.set_params(&p).unwrap();
            m.forward(z).unwrap().iter().zip(c).map(|(a, b)| a * b).sum::<f64>()
        };
        (f(h) - f(-h)) / (2.0 * h)
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let z = grid_input(4, 3, EncodingConfig::Basic);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for head in [OutputHead::tanh_window(0.1, 0.5), OutputHead::sigmoid_range(-4.0, 0.0), OutputHead::linear()] {
            let mlp = small_net(head, 3);
            let c: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = mlp.vjp(&z, &c).unwrap();
            for _ in 0..20 {
                let k = rng.random_range(0..mlp.param_count());
                let fd = central_difference(&mlp, &z, &c, k, 1e-4);
                let err = (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-300);
                assert!(err < 1e-5 || (g[k] - fd).abs() < 1e-12, "param {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn vjp_is_linear() {
        let z = grid_input(3, 3, EncodingConfig::Basic);
        let mlp = small_net(OutputHead::tanh_window(0.0, 1.0), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (1.7, -0.3);
        let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let gm = mlp.vjp(&z, &mix).unwrap();
        let gu = mlp.vjp(&z, &u).unwrap();
        let gv = mlp.vjp(&z, &v).unwrap();
        for k in 0..gm.len() {
            assert_relative_eq!(gm[k], a * gu[k] + b * gv[k], epsilon = 1e-13, max_relative = 1e-12);
        }
    }

    #[test]
    fn affine_network_jacobian_rows() {
        let z = grid_input(3, 2, EncodingConfig::Identity);
        let mlp = Mlp::init_kaiming(MlpConfig::new(2, &[], OutputHead::linear()), 0).unwrap();
        let j = mlp.weight_jacobian(&z, DEFAULT_JACOBIAN_BUDGET_BYTES).unwrap();
        for i in 0..6 {
            assert_eq!(j[(i, 0)], z.z[(i, 0)]);
            assert_eq!(j[(i, 1)], z.z[(i, 1)]);
            assert_eq!(j[(i, 2)], 1.0);
        }
    }

    #[test]
    fn jacobian_rows_equal_unit_vjps_and_jvp() {
        let z = grid_input(3, 3, EncodingConfig::Basic);
        let mlp = small_net(OutputHead::tanh_window(0.0, 1.0), 8);
        let j = mlp.weight_jacobian(&z, DEFAULT_JACOBIAN_BUDGET_BYTES).unwrap();
        for i in 0..9 {
            let mut e = vec![0.0; 9];
            e[i] = 1.0;
            let g = mlp.vjp(&z, &e).unwrap();
            for k in 0..g.len() {
                assert_relative_eq!(j[(i, k)], g[k], epsilon = 1e-14, max_relative = 1e-12);
            }
        }
        let op = mlp.jacobian_operator(&z).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..mlp.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let jv = op.matvec(&v);
        let dense = &j * DVector::from_vec(v);
        for i in 0..9 {
            assert_relative_eq!(jv[i], dense[i], max_relative = 1e-12, epsilon = 1e-14);
        }
    }

    #[test]
    fn jacobian_directional_finite_difference() {
        let z = grid_input(4, 4, EncodingConfig::Basic);
        let mlp = small_net(OutputHead::sigmoid_range(-4.0, 0.0), 12);
        let j = mlp.weight_jacobian(&z, DEFAULT_JACOBIAN_BUDGET_BYTES).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dw: Vec<f64> = (0..mlp.param_count()).map(|_| 1e-6 * rng.random_range(-1.0..1.0)).collect();
        let base = mlp.forward(&z).unwrap();
        let mut moved = mlp.clone();
        moved.add_to_params(&dw).unwrap();
        let after = moved.forward(&z).unwrap();
        let diff = DVector::from_iterator(16, after.iter().zip(&base).map(|(a, b)| a - b));
        let lin = &j * DVector::from_vec(dw);
        assert!((&lin - &diff).norm() / diff.norm() < 1e-4);
    }

    #[test]
    fn jacobian_budget_is_enforced() {
        let z = grid_input(4, 4, EncodingConfig::Basic);
        let mlp = small_net(OutputHead::linear(), 0);
        assert!(matches!(mlp.weight_jacobian(&z, 100), Err(Error::Capacity(_))));
    }

    #[test]
    fn jacobian_row_count_case1_grid() {
        let z = grid_input(64, 128, EncodingConfig::Basic);
        let mlp = Mlp::init_kaiming(MlpConfig::new(4, &[4], OutputHead::linear()), 0).unwrap();
        let j = mlp.weight_jacobian(&z, DEFAULT_JACOBIAN_BUDGET_BYTES).unwrap();
        assert_eq!(j.nrows(), 8192);
    }

    #[test]
    fn params_roundtrip() {
        let mlp = small_net(OutputHead::linear(), 17);
        let p = mlp.params();
        let back = Mlp::from_params(mlp.config().clone(), &p, 17).unwrap();
        assert_eq!(back, mlp);
    }
}
