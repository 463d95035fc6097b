//! Objective functions and the two inversion drivers.
//!
//! * [`nfs_invert`]: the model is the output of a coordinate MLP; each epoch
//!   pulls the physics gradient back through the network and takes an Adam
//!   step on the weights.
//! * [`conventional_invert`]: the model is the cell vector itself; gradient
//!   descent with backtracking (linear tomography) or inexact Gauss-Newton
//!   with β-cooling and IRLS sparse norms (DC resistivity).

use std::path::PathBuf;
use std::time::Instant;

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{write_checkpoint, AsyncCheckpointWriter};
use crate::encoding::EncodedInput;
use crate::error::{invalid, Error, Result};
use crate::mesh::TensorMesh;
use crate::neural_field::Mlp;
use crate::simulation::Simulation;
use crate::sparse::{conjugate_gradient, dot, norm};

/// `½‖W(d_obs − d_pred)‖²` and its gradient with respect to `d_pred`,
/// `W²(d_pred − d_obs)`.
pub fn data_misfit(weights: &[f64], d_obs: &[f64], d_pred: &[f64]) -> Result<(f64, Vec<f64>)> {
    if weights.len() != d_obs.len() || d_obs.len() != d_pred.len() {
        return Err(invalid(format!(
            "misfit needs equal lengths, got weights {}, observed {}, predicted {}",
            weights.len(),
            d_obs.len(),
            d_pred.len()
        )));
    }
    let mut phi = 0.0;
    let mut cot = Vec::with_capacity(d_obs.len());
    for ((w, o), p) in weights.iter().zip(d_obs).zip(d_pred) {
        let r = w * (p - o);
        phi += r * r;
        cot.push(w * r);
    }
    Ok((0.5 * phi, cot))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationConfig {
    pub alpha_s: f64,
    pub alpha_x: f64,
    pub alpha_z: f64,
    pub p_s: f64,
    pub p_x: f64,
    pub p_z: f64,
    /// Uniform reference model; `None` uses the scenario background.
    pub m_ref: Option<f64>,
    pub irls_epsilon: f64,
    pub irls_cooling: f64,
    pub irls_epsilon_floor: f64,
    pub sensitivity_weighting: bool,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            alpha_s: 0.0,
            alpha_x: 0.0,
            alpha_z: 0.0,
            p_s: 2.0,
            p_x: 2.0,
            p_z: 2.0,
            m_ref: None,
            irls_epsilon: 1e-4,
            irls_cooling: 0.5,
            irls_epsilon_floor: 1e-6,
            sensitivity_weighting: false,
        }
    }
}

impl RegularizationConfig {
    pub fn smoothness_l2(alpha: f64) -> Self {
        Self { alpha_x: alpha, alpha_z: alpha, ..Self::default() }
    }

    pub fn l1_smallness(alpha: f64) -> Self {
        Self { alpha_s: alpha, p_s: 1.0, ..Self::default() }
    }

    /// Sparse-norm configuration used for the DC resistivity baseline.
    pub fn dcr_sparse() -> Self {
        Self {
            alpha_s: 0.005,
            alpha_x: 0.5,
            alpha_z: 0.5,
            p_s: 0.0,
            p_x: 1.0,
            p_z: 1.0,
            sensitivity_weighting: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha_s", self.alpha_s), ("alpha_x", self.alpha_x), ("alpha_z", self.alpha_z)] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(invalid(format!("{name} must be finite and >= 0, got {a}")));
            }
        }
        for (name, p) in [("p_s", self.p_s), ("p_x", self.p_x), ("p_z", self.p_z)] {
            if !(0.0..=2.0).contains(&p) {
                return Err(invalid(format!("{name} must lie in [0, 2], got {p}")));
            }
        }
        if self.is_sparse() && !(self.irls_epsilon > 0.0) {
            return Err(invalid("norms below 2 need irls_epsilon > 0"));
        }
        if !(self.irls_cooling > 0.0 && self.irls_cooling <= 1.0) || !(self.irls_epsilon_floor >= 0.0) {
            return Err(invalid("irls_cooling must lie in (0, 1] and the epsilon floor be >= 0"));
        }
        Ok(())
    }

    pub fn is_sparse(&self) -> bool {
        self.p_s < 2.0 || self.p_x < 2.0 || self.p_z < 2.0
    }

    pub fn is_zero(&self) -> bool {
        self.alpha_s == 0.0 && self.alpha_x == 0.0 && self.alpha_z == 0.0
    }
}

/// `φ_m = α_s Σ A w q_s r² + α_x Σ A w q_x (∂m/∂x)² + α_z Σ A w q_z (∂m/∂z)²`
/// on the core grid, with `A` the cell area, `w` cell weights (averaged onto
/// faces) and `q = (r² + ε²)^{p/2 − 1}` IRLS weights frozen between
/// [`Regularization::update_irls`] calls.
#[derive(Clone, Debug)]
pub struct Regularization {
    config: RegularizationConfig,
    nx: usize,
    nz: usize,
    dx: f64,
    dz: f64,
    m_ref: Vec<f64>,
    cell_weights: Vec<f64>,
    epsilon: f64,
    qs: Vec<f64>,
    qx: Vec<f64>,
    qz: Vec<f64>,
}

impl Regularization {
    pub fn new(config: RegularizationConfig, mesh: &TensorMesh, m_ref: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (nx, nz) = (mesh.nx_core, mesh.nz_core);
        if m_ref.len() != nx * nz {
            return Err(invalid(format!("reference model has {} cells, core has {}", m_ref.len(), nx * nz)));
        }
        let epsilon = config.irls_epsilon;
        Ok(Self {
            config,
            nx,
            nz,
            dx: mesh.dx_core,
            dz: mesh.dz_core,
            m_ref,
            cell_weights: vec![1.0; nx * nz],
            epsilon,
            qs: vec![1.0; nx * nz],
            qx: vec![1.0; nx.saturating_sub(1) * nz],
            qz: vec![1.0; nx * nz.saturating_sub(1)],
        })
    }

    pub fn config(&self) -> &RegularizationConfig {
        &self.config
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn cell_weights(&self) -> &[f64] {
        &self.cell_weights
    }

    pub fn set_cell_weights(&mut self, w: Vec<f64>) -> Result<()> {
        if w.len() != self.m_ref.len() || w.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("cell weights must be nonnegative, one per core cell"));
        }
        self.cell_weights = w;
        Ok(())
    }

    fn area(&self) -> f64 {
        self.dx * self.dz
    }

    /// Visit every term as `(alpha, weight, residual, derivative-of-residual
    /// pattern)`: smallness on cells, then x faces, then z faces.
    fn terms(&self, m: &[f64], use_ref: bool, mut f: impl FnMut(f64, f64, f64, Term)) {
        let (nx, nz) = (self.nx, self.nz);
        let a = self.area();
        let c = &self.config;
        let w = &self.cell_weights;
        if c.alpha_s > 0.0 {
            for i in 0..nx * nz {
                let r = if use_ref { m[i] - self.m_ref[i] } else { m[i] };
                f(c.alpha_s, a * w[i] * self.qs[i], r, Term::Cell(i));
            }
        }
        if c.alpha_x > 0.0 {
            let mut k = 0;
            for iz in 0..nz {
                for ix in 0..nx.saturating_sub(1) {
                    let (i, j) = (iz * nx + ix, iz * nx + ix + 1);
                    let wf = 0.5 * (w[i] + w[j]);
                    f(c.alpha_x, a * wf * self.qx[k], (m[j] - m[i]) / self.dx, Term::Face(i, j, self.dx));
                    k += 1;
                }
            }
        }
        if c.alpha_z > 0.0 {
            let mut k = 0;
            for iz in 0..nz.saturating_sub(1) {
                for ix in 0..nx {
                    let (i, j) = (iz * nx + ix, (iz + 1) * nx + ix);
                    let wf = 0.5 * (w[i] + w[j]);
                    f(c.alpha_z, a * wf * self.qz[k], (m[j] - m[i]) / self.dz, Term::Face(i, j, self.dz));
                    k += 1;
                }
            }
        }
    }

    fn check(&self, m: &[f64]) -> Result<()> {
        if m.len() != self.m_ref.len() {
            return Err(invalid(format!("model has {} cells, regularization expects {}", m.len(), self.m_ref.len())));
        }
        Ok(())
    }

    pub fn value(&self, m: &[f64]) -> Result<f64> {
        self.check(m)?;
        let mut total = 0.0;
        self.terms(m, true, |alpha, w, r, _| total += alpha * w * r * r);
        Ok(total)
    }

    pub fn gradient(&self, m: &[f64]) -> Result<Vec<f64>> {
        self.check(m)?;
        let mut g = vec![0.0; m.len()];
        self.terms(m, true, |alpha, w, r, term| {
            let s = 2.0 * alpha * w * r;
            match term {
                Term::Cell(i) => g[i] += s,
                Term::Face(i, j, h) => {
                    g[j] += s / h;
                    g[i] -= s / h;
                }
            }
        });
        Ok(g)
    }

    /// Hessian of φ_m at frozen IRLS weights applied to `v`.
    pub fn apply_hessian(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let mut h = vec![0.0; v.len()];
        self.terms(v, false, |alpha, w, r, term| {
            let s = 2.0 * alpha * w * r;
            match term {
                Term::Cell(i) => h[i] += s,
                Term::Face(i, j, hh) => {
                    h[j] += s / hh;
                    h[i] -= s / hh;
                }
            }
        });
        Ok(h)
    }

    /// Refresh IRLS weights at `m` with the current ε, then cool ε.
    pub fn update_irls(&mut self, m: &[f64]) -> Result<()> {
        self.check(m)?;
        if !self.config.is_sparse() {
            return Ok(());
        }
        let eps2 = self.epsilon * self.epsilon;
        let q = |r: f64, p: f64| if p >= 2.0 { 1.0 } else { (r * r + eps2).powf(p / 2.0 - 1.0) };
        let (nx, nz) = (self.nx, self.nz);
        let c = self.config.clone();
        for i in 0..nx * nz {
            self.qs[i] = q(m[i] - self.m_ref[i], c.p_s);
        }
        let mut k = 0;
        for iz in 0..nz {
            for ix in 0..nx.saturating_sub(1) {
                let i = iz * nx + ix;
                self.qx[k] = q((m[i + 1] - m[i]) / self.dx, c.p_x);
                k += 1;
            }
        }
        let mut k = 0;
        for iz in 0..nz.saturating_sub(1) {
            for ix in 0..nx {
                let i = iz * nx + ix;
                self.qz[k] = q((m[i + nx] - m[i]) / self.dz, c.p_z);
                k += 1;
            }
        }
        self.epsilon = (self.epsilon * c.irls_cooling).max(c.irls_epsilon_floor);
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Term {
    Cell(usize),
    /// `(i, j, h)`: residual `(m_j − m_i) / h`
    Face(usize, usize, f64),
}

/// `β(t) = e^{−t/τ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoolingSchedule {
    pub tau: f64,
}

impl CoolingSchedule {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!("cooling constant tau must be positive, got {tau}")));
        }
        Ok(Self { tau })
    }

    pub fn beta(&self, t: f64) -> f64 {
        beta(t, self)
    }
}

pub fn beta(t: f64, schedule: &CoolingSchedule) -> f64 {
    (-t / schedule.tau).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.epsilon > 0.0)
        {
            return Err(invalid("Adam needs lr > 0, moment decays in [0, 1), epsilon > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Self { config, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// In-place bias-corrected Adam update of `params`.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Epoch/iteration budget used up.
    Budget,
    TargetMisfit,
    LineSearchFailed,
    /// Gradient vanished.
    Stationary,
}

#[derive(Clone, Debug)]
pub struct InversionResult {
    /// Recovered core model.
    pub model: Vec<f64>,
    /// Final network weights (neural-field runs).
    pub params: Option<Vec<f64>>,
    /// φ_d of the model entering each epoch/iteration.
    pub misfit_history: Vec<f64>,
    pub beta_history: Vec<f64>,
    /// φ_m (unscaled) of the model entering each epoch/iteration.
    pub regularization_history: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
    pub final_misfit: f64,
    pub converged: bool,
    pub stop: StopReason,
}

pub struct NfsOptions {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// `None` fixes β = 0 (no explicit regularization).
    pub schedule: Option<CoolingSchedule>,
    pub regularization: Option<Regularization>,
    /// Stop once φ_d drops to this value.
    pub target_misfit: Option<f64>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Write a checkpoint every this many epochs (0: final only).
    pub checkpoint_every: usize,
}

impl Default for NfsOptions {
    fn default() -> Self {
        Self {
            epochs: 1000,
            adam: AdamConfig::default(),
            schedule: None,
            regularization: None,
            target_misfit: None,
            checkpoint_dir: None,
            checkpoint_every: 0,
        }
    }
}

/// Observed data with the diagonal of W_d.
#[derive(Clone, Debug)]
pub struct DataSet<'a> {
    pub observed: &'a [f64],
    pub weights: &'a [f64],
}

/// Neural-field inversion: per epoch, `m = f_w(Z)`, physics gradient
/// `J_v = ∂φ_d/∂m`, surrogate cotangent `(1 − β) J_v + β ∇φ_m(m)` pulled back
/// through the network, then one Adam step.
pub fn nfs_invert<S: Simulation>(
    sim: &S,
    data: DataSet<'_>,
    mlp: &mut Mlp,
    z: &EncodedInput,
    mut opts: NfsOptions,
) -> Result<InversionResult> {
    opts.adam.validate()?;
    if z.n_rows() != sim.n_model() {
        return Err(invalid(format!("network evaluates {} cells, simulation has {}", z.n_rows(), sim.n_model())));
    }
    if data.observed.len() != sim.n_data() {
        return Err(invalid(format!("{} observed data, simulation predicts {}", data.observed.len(), sim.n_data())));
    }
    let writer = match &opts.checkpoint_dir {
        Some(dir) if opts.checkpoint_every > 0 => Some(AsyncCheckpointWriter::new(dir)?),
        _ => None,
    };
    let mut adam = AdamState::new(opts.adam, mlp.param_count());
    let mut params = mlp.params();
    let mut res = InversionResult {
        model: Vec::new(),
        params: None,
        misfit_history: Vec::with_capacity(opts.epochs),
        beta_history: Vec::with_capacity(opts.epochs),
        regularization_history: Vec::with_capacity(opts.epochs),
        epoch_seconds: Vec::with_capacity(opts.epochs),
        checkpoints: Vec::new(),
        final_misfit: f64::NAN,
        converged: false,
        stop: StopReason::Budget,
    };
    let mut last_good = params.clone();
    let mut stopped_early = false;

    for t in 1..=opts.epochs {
        let clock = Instant::now();
        let beta_t = opts.schedule.map_or(0.0, |s| s.beta(t as f64));
        let cache = mlp.forward_cached(z)?;
        let m = cache.output().to_vec();
        let fields = sim.fields(&m)?;
        let (phi_d, r) = data_misfit(data.weights, data.observed, &sim.predicted(&fields))?;
        let phi_m = match &opts.regularization {
            Some(reg) => reg.value(&m)?,
            None => 0.0,
        };
        if !phi_d.is_finite() || !phi_m.is_finite() {
            return Err(abort(mlp, &last_good, &opts, t, phi_d));
        }
        res.misfit_history.push(phi_d);
        res.beta_history.push(beta_t);
        res.regularization_history.push(phi_m);
        if opts.target_misfit.is_some_and(|target| phi_d <= target) {
            res.epoch_seconds.push(clock.elapsed().as_secs_f64());
            res.final_misfit = phi_d;
            res.model = m;
            res.converged = true;
            res.stop = StopReason::TargetMisfit;
            stopped_early = true;
            info!("epoch {t}: target misfit reached ({phi_d:.4e})");
            break;
        }

        let mut cot = sim.jtvec(&fields, &r)?;
        if beta_t != 0.0 {
            for c in cot.iter_mut() {
                *c *= 1.0 - beta_t;
            }
            if let Some(reg) = &opts.regularization {
                for (c, g) in cot.iter_mut().zip(reg.gradient(&m)?) {
                    *c += beta_t * g;
                }
            }
        }
        let grad = mlp.vjp_cached(&cache, &cot)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(abort(mlp, &last_good, &opts, t, phi_d));
        }
        last_good.copy_from_slice(&params);
        adam.update(&mut params, &grad);
        mlp.set_params(&params)?;
        if let Some(reg) = opts.regularization.as_mut() {
            if reg.config().is_sparse() && beta_t != 0.0 {
                reg.update_irls(&m)?;
            }
        }
        if let Some(w) = &writer {
            if t % opts.checkpoint_every == 0 {
                w.submit(mlp, t);
            }
        }
        res.epoch_seconds.push(clock.elapsed().as_secs_f64());
        if t == 1 || t % 100 == 0 {
            debug!("epoch {t}: phi_d {phi_d:.4e} beta {beta_t:.3e}");
        }
    }

    if !stopped_early {
        let m = mlp.forward(z)?;
        let (phi_d, _) = data_misfit(data.weights, data.observed, &sim.predicted(&sim.fields(&m)?))?;
        res.final_misfit = phi_d;
        res.model = m;
    }
    if let Some(w) = writer {
        res.checkpoints = w.finish()?;
    }
    res.params = Some(params);
    Ok(res)
}

fn abort(mlp: &Mlp, last_good: &[f64], opts: &NfsOptions, epoch: usize, phi_d: f64) -> Error {
    let mut msg = format!("non-finite objective at epoch {epoch} (phi_d = {phi_d})");
    if let Some(dir) = &opts.checkpoint_dir {
        let path = dir.join(format!("diagnostic_epoch_{epoch:06}.bin"));
        let snapshot = Mlp::from_params(mlp.config().clone(), last_good, mlp.seed());
        match snapshot.and_then(|s| {
            std::fs::create_dir_all(dir)?;
            write_checkpoint(&path, &s, epoch - 1)
        }) {
            Ok(()) => msg.push_str(&format!("; last finite weights in {}", path.display())),
            Err(e) => msg.push_str(&format!("; diagnostic checkpoint failed: {e}")),
        }
    }
    Error::Numerical(msg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    GradientDescent,
    GaussNewton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConventionalConfig {
    pub optimizer: Optimizer,
    pub max_iterations: usize,
    /// Trade-off ratio: `β₀ = beta · (xᵀJᵀW²Jx)/(xᵀ∇²φ_m x)` for a random
    /// `x`. Gradient descent keeps β₀ fixed; Gauss-Newton cools it.
    pub beta: f64,
    /// β is divided by this after every Gauss-Newton iteration.
    pub beta_cooling: f64,
    pub cg_max_iterations: usize,
    pub cg_rtol: f64,
    pub max_line_search: usize,
    /// Probes for the sensitivity-weight estimate.
    pub sensitivity_probes: usize,
    /// Set per run from the data count; not part of the serialized config.
    #[serde(skip)]
    pub target_misfit: Option<f64>,
}

impl Default for ConventionalConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::GradientDescent,
            max_iterations: 500,
            beta: 0.0,
            beta_cooling: 2.0,
            cg_max_iterations: 20,
            cg_rtol: 1e-3,
            max_line_search: 10,
            sensitivity_probes: 64,
            target_misfit: None,
        }
    }
}

impl ConventionalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) || !(self.beta_cooling >= 1.0) {
            return Err(invalid("beta must be >= 0 and beta_cooling >= 1"));
        }
        if self.cg_max_iterations == 0 || !(self.cg_rtol > 0.0) {
            return Err(invalid("inner CG needs at least one iteration and a positive tolerance"));
        }
        Ok(())
    }
}

/// `sqrt(diag(JᵀW²J))` normalized to a maximum of 1, estimated from
/// Rademacher probes `u` in data space: `E[(JᵀWu)²] = diag(JᵀW²J)`.
pub fn sensitivity_weights<S: Simulation>(
    sim: &S,
    fields: &S::Fields,
    weights: &[f64],
    probes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diag = vec![0.0; sim.n_model()];
    for _ in 0..probes.max(1) {
        let u: Vec<f64> = weights.iter().map(|w| if rng.random::<bool>() { *w } else { -*w }).collect();
        for (d, g) in diag.iter_mut().zip(sim.jtvec(fields, &u)?) {
            *d += g * g;
        }
    }
    let mut w: Vec<f64> = diag.iter().map(|d| (d / probes.max(1) as f64).sqrt()).collect();
    let max = w.iter().fold(0.0f64, |a, v| a.max(*v));
    if max > 0.0 {
        for v in w.iter_mut() {
            *v = (*v / max).max(1e-12);
        }
    }
    Ok(w)
}

/// Cell-space inversion started from `m0`.
pub fn conventional_invert<S: Simulation>(
    sim: &S,
    data: DataSet<'_>,
    m0: Vec<f64>,
    mut regularization: Option<Regularization>,
    config: &ConventionalConfig,
    seed: u64,
) -> Result<InversionResult> {
    config.validate()?;
    if m0.len() != sim.n_model() || data.observed.len() != sim.n_data() {
        return Err(invalid("starting model or data length does not match the simulation"));
    }
    if let Some(reg) = regularization.as_mut() {
        if reg.config().sensitivity_weighting {
            let fields = sim.fields(&m0)?;
            let w = sensitivity_weights(sim, &fields, data.weights, config.sensitivity_probes, seed)?;
            reg.set_cell_weights(w)?;
        }
    }
    match config.optimizer {
        Optimizer::GradientDescent => gradient_descent(sim, data, m0, regularization, config, seed),
        Optimizer::GaussNewton => gauss_newton(sim, data, m0, regularization, config, seed),
    }
}

struct Objective<'a, S: Simulation> {
    sim: &'a S,
    data: DataSet<'a>,
    reg: Option<&'a Regularization>,
    beta: f64,
}

impl<S: Simulation> Objective<'_, S> {
    /// `(φ_d, φ_m, fields, data cotangent)`
    fn eval(&self, m: &[f64]) -> Result<(f64, f64, S::Fields, Vec<f64>)> {
        let fields = self.sim.fields(m)?;
        let (phi_d, r) = data_misfit(self.data.weights, self.data.observed, &self.sim.predicted(&fields))?;
        let phi_m = match self.reg {
            Some(reg) if self.beta > 0.0 => reg.value(m)?,
            _ => 0.0,
        };
        Ok((phi_d, phi_m, fields, r))
    }

    fn total(&self, phi_d: f64, phi_m: f64) -> f64 {
        phi_d + self.beta * phi_m
    }

    fn gradient(&self, m: &[f64], fields: &S::Fields, r: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.sim.jtvec(fields, r)?;
        if let Some(reg) = self.reg {
            if self.beta > 0.0 {
                for (gi, ri) in g.iter_mut().zip(reg.gradient(m)?) {
                    *gi += self.beta * ri;
                }
            }
        }
        Ok(g)
    }

    /// `(JᵀW²J + β∇²φ_m) v`
    fn gauss_newton_hessian(&self, fields: &S::Fields, v: &[f64]) -> Result<Vec<f64>> {
        let jv = self.sim.jvec(fields, v)?;
        let wjv: Vec<f64> = jv.iter().zip(self.data.weights).map(|(a, w)| a * w * w).collect();
        let mut h = self.sim.jtvec(fields, &wjv)?;
        if let Some(reg) = self.reg {
            if self.beta > 0.0 {
                for (hi, ri) in h.iter_mut().zip(reg.apply_hessian(v)?) {
                    *hi += self.beta * ri;
                }
            }
        }
        Ok(h)
    }
}

fn empty_result(capacity: usize) -> InversionResult {
    InversionResult {
        model: Vec::new(),
        params: None,
        misfit_history: Vec::with_capacity(capacity),
        beta_history: Vec::with_capacity(capacity),
        regularization_history: Vec::with_capacity(capacity),
        epoch_seconds: Vec::with_capacity(capacity),
        checkpoints: Vec::new(),
        final_misfit: f64::NAN,
        converged: false,
        stop: StopReason::Budget,
    }
}

/// Largest eigenvalue of the (symmetric PSD) Gauss-Newton Hessian.
fn lipschitz_estimate<S: Simulation>(obj: &Objective<'_, S>, fields: &S::Fields, n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut lambda = 0.0;
    for _ in 0..30 {
        let nv = norm(&v);
        if nv == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let hv = obj.gauss_newton_hessian(fields, &v)?;
        lambda = dot(&v, &hv);
        v = hv;
    }
    Ok(lambda)
}

fn gradient_descent<S: Simulation>(
    sim: &S,
    data: DataSet<'_>,
    mut m: Vec<f64>,
    reg: Option<Regularization>,
    config: &ConventionalConfig,
    seed: u64,
) -> Result<InversionResult> {
    let beta = initial_beta(sim, data.weights, &m, reg.as_ref(), config.beta, seed)?;
    let obj = Objective { sim, data, reg: reg.as_ref(), beta };
    let mut res = empty_result(config.max_iterations);
    let (mut phi_d, mut phi_m, mut fields, mut r) = obj.eval(&m)?;
    let lipschitz = lipschitz_estimate(&obj, &fields, m.len(), seed)?;
    // φ_d = ½‖W(Jm − d)‖² has Hessian JᵀW²J; its step 1/L is the classical choice
    let mut step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
    debug!("gradient descent: Lipschitz estimate {lipschitz:.4e}, initial step {step:.4e}");
    for _ in 0..config.max_iterations {
        let clock = Instant::now();
        res.misfit_history.push(phi_d);
        res.beta_history.push(beta);
        res.regularization_history.push(phi_m);
        if config.target_misfit.is_some_and(|t| phi_d <= t) {
            res.converged = true;
            res.stop = StopReason::TargetMisfit;
            res.epoch_seconds.push(clock.elapsed().as_secs_f64());
            break;
        }
        let g = obj.gradient(&m, &fields, &r)?;
        let gg = dot(&g, &g);
        if gg == 0.0 {
            res.stop = StopReason::Stationary;
            res.epoch_seconds.push(clock.elapsed().as_secs_f64());
            break;
        }
        let f0 = obj.total(phi_d, phi_m);
        let mut accepted = None;
        let mut trial_step = step;
        for _ in 0..=config.max_line_search {
            let trial: Vec<f64> = m.iter().zip(&g).map(|(mi, gi)| mi - trial_step * gi).collect();
            let eval = obj.eval(&trial)?;
            if obj.total(eval.0, eval.1) <= f0 - 1e-4 * trial_step * gg {
                accepted = Some((trial, eval));
                break;
            }
            trial_step *= 0.5;
        }
        res.epoch_seconds.push(clock.elapsed().as_secs_f64());
        match accepted {
            Some((trial, eval)) => {
                m = trial;
                (phi_d, phi_m, fields, r) = eval;
                step = trial_step;
            }
            None => {
                warn!("gradient descent: line search failed after {} halvings", config.max_line_search);
                res.stop = StopReason::LineSearchFailed;
                break;
            }
        }
    }
    res.final_misfit = phi_d;
    res.model = m;
    Ok(res)
}

/// Curvature-balanced trade-off: `ratio · (xᵀJᵀW²Jx)/(xᵀ∇²φ_m x)`.
fn initial_beta<S: Simulation>(
    sim: &S,
    weights: &[f64],
    m: &[f64],
    reg: Option<&Regularization>,
    ratio: f64,
    seed: u64,
) -> Result<f64> {
    let Some(r) = reg else { return Ok(0.0) };
    if r.config().is_zero() || ratio == 0.0 {
        return Ok(0.0);
    }
    let fields = sim.fields(m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let x: Vec<f64> = (0..m.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let jx = sim.jvec(&fields, &x)?;
    let num: f64 = jx.iter().zip(weights).map(|(a, w)| (a * w).powi(2)).sum();
    let den = dot(&x, &r.apply_hessian(&x)?);
    let beta = if den > 0.0 { ratio * num / den } else { 0.0 };
    info!("initial beta {beta:.4e} (ratio {ratio})");
    Ok(beta)
}

fn gauss_newton<S: Simulation>(
    sim: &S,
    data: DataSet<'_>,
    mut m: Vec<f64>,
    mut reg: Option<Regularization>,
    config: &ConventionalConfig,
    seed: u64,
) -> Result<InversionResult> {
    let mut res = empty_result(config.max_iterations);
    let mut beta_t = initial_beta(sim, data.weights, &m, reg.as_ref(), config.beta, seed)?;
    for it in 0..config.max_iterations {
        let clock = Instant::now();
        let obj = Objective { sim, data: data.clone(), reg: reg.as_ref(), beta: beta_t };
        let (phi_d, phi_m, fields, r) = obj.eval(&m)?;
        res.misfit_history.push(phi_d);
        res.beta_history.push(beta_t);
        res.regularization_history.push(phi_m);
        if config.target_misfit.is_some_and(|t| phi_d <= t) {
            res.converged = true;
            res.stop = StopReason::TargetMisfit;
            res.epoch_seconds.push(clock.elapsed().as_secs_f64());
            break;
        }
        let g = obj.gradient(&m, &fields, &r)?;
        if norm(&g) == 0.0 {
            res.stop = StopReason::Stationary;
            res.epoch_seconds.push(clock.elapsed().as_secs_f64());
            break;
        }
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let hess_err = std::cell::RefCell::new(None);
        let cg = conjugate_gradient(
            |v| match obj.gauss_newton_hessian(&fields, v) {
                Ok(h) => h,
                Err(e) => {
                    hess_err.borrow_mut().get_or_insert(e);
                    vec![0.0; v.len()]
                }
            },
            &neg_g,
            config.cg_rtol,
            config.cg_max_iterations,
        );
        if let Some(e) = hess_err.into_inner() {
            return Err(e);
        }
        let mut p = cg.x;
        if dot(&p, &g) >= 0.0 {
            p = neg_g;
        }
        let f0 = obj.total(phi_d, phi_m);
        let slope = dot(&p, &g);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_line_search {
            let trial: Vec<f64> = m.iter().zip(&p).map(|(a, b)| a + alpha * b).collect();
            let ok = match obj.eval(&trial) {
                Ok((d, mm, _, _)) => obj.total(d, mm) <= f0 + 1e-4 * alpha * slope,
                Err(Error::Numerical(_)) | Err(Error::InvalidArgument(_)) => false,
                Err(e) => return Err(e),
            };
            if ok {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        res.epoch_seconds.push(clock.elapsed().as_secs_f64());
        debug!(
            "GN iteration {it}: phi_d {phi_d:.4e}, beta {beta_t:.3e}, cg {} its (rel res {:.2e}), step {alpha}",
            cg.iterations, cg.relative_residual
        );
        match accepted {
            Some(trial) => m = trial,
            None => {
                warn!("Gauss-Newton: line search failed at iteration {it}");
                res.stop = StopReason::LineSearchFailed;
                break;
            }
        }
        beta_t /= config.beta_cooling;
        if let Some(r) = reg.as_mut() {
            r.update_irls(&m)?;
        }
    }
    let (phi_d, _) = data_misfit(data.weights, data.observed, &sim.predicted(&sim.fields(&m)?))?;
    res.final_misfit = phi_d;
    res.model = m;
    Ok(res)
}

/// Root-mean-square difference between two models.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}

/// `Σ (m − m_true)²` over cells outside the target.
pub fn artifact_energy(model: &[f64], truth: &[f64], target_mask: &[bool]) -> f64 {
    model
        .iter()
        .zip(truth)
        .zip(target_mask)
        .filter(|(_, t)| !**t)
        .map(|((m, tr), _)| (m - tr).powi(2))
        .sum()
}

/// Energy of the mean-removed model above a radial frequency cutoff,
/// `Σ_{f > cutoff} |F(k)|² / (nx·nz)` with `f` in cycles per cell (the grid
/// Nyquist frequency is 0.5).
pub fn high_frequency_energy(values: &[f64], nx: usize, nz: usize, cutoff: f64) -> Result<f64> {
    use rustfft::num_complex::Complex64;
    use rustfft::FftPlanner;
    if values.len() != nx * nz || nx == 0 {
        return Err(invalid(format!("{} values do not fill a {nx}x{nz} grid", values.len())));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut buf: Vec<Complex64> = values.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let fx = planner.plan_fft_forward(nx);
    for row in buf.chunks_mut(nx) {
        fx.process(row);
    }
    let fz = planner.plan_fft_forward(nz);
    let mut col = vec![Complex64::new(0.0, 0.0); nz];
    for ix in 0..nx {
        for iz in 0..nz {
            col[iz] = buf[iz * nx + ix];
        }
        fz.process(&mut col);
        for iz in 0..nz {
            buf[iz * nx + ix] = col[iz];
        }
    }
    let freq = |k: usize, n: usize| {
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        signed / n as f64
    };
    let mut energy = 0.0;
    for iz in 0..nz {
        for ix in 0..nx {
            let f = freq(ix, nx).hypot(freq(iz, nz));
            if f > cutoff {
                energy += buf[iz * nx + ix].norm_sqr();
            }
        }
    }
    Ok(energy / (nx * nz) as f64)
}
