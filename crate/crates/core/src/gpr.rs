//! Gaussian process regression as an alternative pair regressor.
//!
//! One zero-mean GP per (vascular corner, non-vascular corner, axis)
//! triple maps the non-vascular displacement on that axis to the vascular
//! one. Hyperparameters `(c, eta)` maximize the log marginal likelihood
//!
//! ```text
//! log p(Y) = -1/2 log|K + sn^2 I| - 1/2 Y^T (K + sn^2 I)^-1 Y - N/2 log 2pi
//! ```
//!
//! by multi-start gradient ascent in log-parameter space. At prediction
//! time each pair's predictive mean is weighted by its inverse predictive
//! variance, and corners whose combined variance exceeds a threshold are
//! dropped.
//!
//! The default kernel, [`Kernel::Exponential`], uses the un-squared distance
//! `c * exp(-|x - x'| / (2 eta^2))` (an exponential, Ornstein-Uhlenbeck
//! style kernel). [`Kernel::Squared`] is the conventional squared
//! exponential.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{bail, Error, Result};
use crate::features::CornerSet;
use crate::geom::Vec2;
use crate::math;
use crate::mrc::{CornerSeries, check_live};
use crate::tracking::FlowSet;

/// Floor applied to predictive variances before inverse-variance weighting.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Default additive noise standard deviation.
pub const DEFAULT_SIGMA_N: f64 = 0.01;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;
const MAX_ITERATIONS: usize = 200;
const CONVERGENCE: f64 = 1e-8;
const START_EPS: f64 = 1e-6;
const LOG_C_RANGE: (f64, f64) = (-18.420680743952367, 18.420680743952367); // 1e-8 .. 1e8
const LOG_ETA_RANGE: (f64, f64) = (-6.907755278982137, 9.210340371976184); // 1e-3 .. 1e4

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    /// `c * exp(-|d| / (2 eta^2))`.
    #[default]
    Exponential,
    /// `c * exp(-d^2 / (2 eta^2))`.
    Squared,
}

impl Kernel {
    #[inline]
    fn distance(self, a: f64, b: f64) -> f64 {
        let d = math::abs(a - b);
        match self {
            Kernel::Exponential => d,
            Kernel::Squared => d * d,
        }
    }

    #[inline]
    pub fn eval(self, a: f64, b: f64, c: f64, eta: f64) -> f64 {
        c * math::exp(-self.distance(a, b) / (2.0 * eta * eta))
    }
}

/// The exponential kernel exactly as used by [`Kernel::Exponential`].
#[inline]
pub fn rbf(x: f64, x2: f64, c: f64, eta: f64) -> f64 {
    Kernel::Exponential.eval(x, x2, c, eta)
}

fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = math::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

// Solve L z = b in place.
fn forward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

// Solve L^T z = b in place.
fn backward(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// One trained GP for a single axis of a single corner pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GprPairModel {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub c: f64,
    pub eta: f64,
    pub sigma_n: f64,
    pub kernel: Kernel,
    /// Diagonal jitter that made the factorization succeed.
    pub jitter: f64,
    chol: Vec<f64>,
    alpha: Vec<f64>,
}

impl GprPairModel {
    /// Factorize `K + sigma_n^2 I` for the given hyperparameters, escalating
    /// diagonal jitter from 1e-10 to 1e-6 on failure.
    pub fn new(train_x: Vec<f64>, train_y: Vec<f64>, c: f64, eta: f64, sigma_n: f64, kernel: Kernel) -> Result<Self> {
        if train_x.len() != train_y.len() || train_x.is_empty() {
            bail!(Structure, "GP needs equal-length non-empty inputs, got {} and {}", train_x.len(), train_y.len());
        }
        if !(c > 0.0 && eta > 0.0 && sigma_n >= 0.0) || !c.is_finite() || !eta.is_finite() {
            bail!(Config, "GP hyperparameters must satisfy c>0, eta>0, sigma_n>=0 (c={c}, eta={eta}, sigma_n={sigma_n})");
        }
        let n = train_x.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = kernel.eval(train_x[i], train_x[j], c, eta);
            }
            k[i * n + i] += sigma_n * sigma_n;
        }
        let mut jitter = 0.0;
        let chol = loop {
            if jitter > 0.0 {
                for i in 0..n {
                    k[i * n + i] += jitter - if jitter > JITTER_START { jitter / 10.0 } else { 0.0 };
                }
            }
            if let Some(l) = cholesky(&k, n) {
                break l;
            }
            jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
            if jitter > JITTER_MAX * 1.000001 {
                return Err(Error::NotPositiveDefinite { c, eta });
            }
        };
        let mut alpha = train_y.clone();
        forward(&chol, n, &mut alpha);
        backward(&chol, n, &mut alpha);
        Ok(GprPairModel { train_x, train_y, c, eta, sigma_n, kernel, jitter, chol, alpha })
    }

    pub fn len(&self) -> usize {
        self.train_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_x.is_empty()
    }

    /// Predictive mean and latent variance at `x_star`; variance clamped at 0.
    pub fn predict(&self, x_star: f64) -> (f64, f64) {
        let n = self.len();
        let mut ks: Vec<f64> = self.train_x.iter().map(|x| self.kernel.eval(*x, x_star, self.c, self.eta)).collect();
        let mean = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        forward(&self.chol, n, &mut ks);
        let var = self.c - ks.iter().map(|v| v * v).sum::<f64>();
        (mean, var.max(0.0))
    }

    fn inverse(&self) -> Vec<f64> {
        let n = self.len();
        let mut inv = vec![0.0; n * n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.fill(0.0);
            col[j] = 1.0;
            forward(&self.chol, n, &mut col);
            backward(&self.chol, n, &mut col);
            for i in 0..n {
                inv[i * n + j] = col[i];
            }
        }
        inv
    }

    /// Objective only; cheaper than [`GprPairModel::log_marginal_likelihood`].
    pub fn objective(&self) -> f64 {
        let n = self.len();
        let log_det: f64 = (0..n).map(|i| 2.0 * math::ln(self.chol[i * n + i])).sum();
        let fit: f64 = self.train_y.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        -0.5 * log_det - 0.5 * fit - 0.5 * n as f64 * math::ln(2.0 * PI)
    }

    /// Log marginal likelihood and its gradient with respect to `(c, eta)`,
    /// from `1/2 tr((alpha alpha^T - K^-1) dK)`.
    pub fn log_marginal_likelihood(&self) -> (f64, [f64; 2]) {
        let n = self.len();
        let inv = self.inverse();
        let (mut gc, mut geta) = (0.0, 0.0);
        let eta3 = self.eta * self.eta * self.eta;
        for i in 0..n {
            for j in 0..n {
                let kij = self.kernel.eval(self.train_x[i], self.train_x[j], self.c, self.eta);
                let dij = self.kernel.distance(self.train_x[i], self.train_x[j]);
                let a = self.alpha[i] * self.alpha[j] - inv[i * n + j];
                gc += a * kij / self.c;
                geta += a * kij * dij / eta3;
            }
        }
        (self.objective(), [0.5 * gc, 0.5 * geta])
    }

    /// Leave-one-out latent variance at each training input, from the
    /// diagonal of `(K + sigma_n^2 I)^-1`.
    pub fn loo_variances(&self) -> Vec<f64> {
        let n = self.len();
        let inv = self.inverse();
        let noise = self.sigma_n * self.sigma_n + self.jitter;
        (0..n).map(|i| (1.0 / inv[i * n + i] - noise).max(0.0)).collect()
    }
}

pub fn log_marginal_likelihood(m: &GprPairModel) -> (f64, [f64; 2]) {
    m.log_marginal_likelihood()
}

pub fn gpr_predict(m: &GprPairModel, x_star: f64) -> (f64, f64) {
    m.predict(x_star)
}

fn median_abs_gap(x: &[f64]) -> f64 {
    let mut gaps: Vec<f64> = Vec::with_capacity(x.len() * x.len() / 2);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            gaps.push(math::abs(x[i] - x[j]));
        }
    }
    math::percentile(&mut gaps, 0.5).unwrap_or(0.0)
}

fn population_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

struct Ascent<'a> {
    x: &'a [f64],
    y: &'a [f64],
    sigma_n: f64,
    kernel: Kernel,
}

impl Ascent<'_> {
    fn model(&self, theta: [f64; 2]) -> Option<GprPairModel> {
        GprPairModel::new(self.x.to_vec(), self.y.to_vec(), math::exp(theta[0]), math::exp(theta[1]), self.sigma_n, self.kernel).ok()
    }

    fn clamp(theta: [f64; 2]) -> [f64; 2] {
        [theta[0].clamp(LOG_C_RANGE.0, LOG_C_RANGE.1), theta[1].clamp(LOG_ETA_RANGE.0, LOG_ETA_RANGE.1)]
    }

    /// Backtracking gradient ascent; accepted steps never lower the objective.
    fn run(&self, start: [f64; 2]) -> Option<([f64; 2], f64)> {
        let mut theta = Self::clamp(start);
        let mut model = self.model(theta)?;
        let mut obj = model.objective();
        let mut rate = 0.1;
        for _ in 0..MAX_ITERATIONS {
            let (_, g) = model.log_marginal_likelihood();
            let grad = [g[0] * model.c, g[1] * model.eta];
            if !(grad[0].is_finite() && grad[1].is_finite()) {
                break;
            }
            let mut accepted = None;
            for _ in 0..40 {
                let trial = Self::clamp([theta[0] + rate * grad[0], theta[1] + rate * grad[1]]);
                if trial == theta {
                    break;
                }
                if let Some(m) = self.model(trial) {
                    let o = m.objective();
                    if o >= obj {
                        accepted = Some((trial, m, o));
                        break;
                    }
                }
                rate *= 0.5;
            }
            let Some((t, m, o)) = accepted else { break };
            let gain = o - obj;
            theta = t;
            model = m;
            obj = o;
            rate = (rate * 2.0).min(1e3);
            if gain < CONVERGENCE {
                break;
            }
        }
        Some((theta, obj))
    }
}

/// Maximize the log marginal likelihood over `(c, eta)` from a 3x3 grid of
/// starts scaled by the target variance and the median input gap.
pub fn optimize_hyperparams(train_x: &[f64], train_y: &[f64], sigma_n: f64, kernel: Kernel) -> Result<(f64, f64)> {
    if train_x.len() != train_y.len() {
        bail!(Structure, "GP inputs differ in length");
    }
    if train_x.len() < 3 {
        bail!(Structure, "need at least 3 training points, got {}", train_x.len());
    }
    let c0 = population_variance(train_y) + START_EPS;
    let e0 = median_abs_gap(train_x) + START_EPS;
    let ascent = Ascent { x: train_x, y: train_y, sigma_n, kernel };
    let mut best: Option<([f64; 2], f64)> = None;
    for cs in [0.1, 1.0, 10.0] {
        for es in [0.1, 1.0, 10.0] {
            let start = [math::ln(cs * c0), math::ln(es * e0)];
            if let Some((theta, obj)) = ascent.run(start) {
                if best.is_none_or(|(_, b)| obj > b) {
                    best = Some((theta, obj));
                }
            }
        }
    }
    match best {
        Some((theta, _)) => Ok((math::exp(theta[0]), math::exp(theta[1]))),
        None => bail!(Optimization, "every start failed to factorize K + sigma_n^2 I"),
    }
}

/// Optimize hyperparameters and return the factorized model.
pub fn fit_pair_model(train_x: &[f64], train_y: &[f64], sigma_n: f64, kernel: Kernel) -> Result<GprPairModel> {
    let (c, eta) = optimize_hyperparams(train_x, train_y, sigma_n, kernel)?;
    GprPairModel::new(train_x.to_vec(), train_y.to_vec(), c, eta, sigma_n, kernel)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceThreshold {
    /// 95th percentile of leave-one-frame-out combined training variances.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GprSettings {
    pub sigma_n: f64,
    pub kernel: Kernel,
    pub v_threshold: VarianceThreshold,
}

impl Default for GprSettings {
    fn default() -> Self {
        GprSettings { sigma_n: DEFAULT_SIGMA_N, kernel: Kernel::Exponential, v_threshold: VarianceThreshold::Auto }
    }
}

/// Inputs for one (vascular, non-vascular, axis) model.
#[derive(Debug, Clone, PartialEq)]
pub struct PairData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Training-frame positions of each sample.
    pub frames: Vec<usize>,
}

/// Training data for every triple, in `(i, j, axis)` row-major order.
pub fn pair_data(train_v: &[FlowSet], train_n: &[FlowSet], corners: &CornerSet) -> Result<Vec<PairData>> {
    crate::mrc::check_training_shapes(train_v, train_n, corners)?;
    let (nv, nn) = (corners.n_vascular(), corners.n_non_vascular());
    let ys = CornerSeries::from_frames(train_v, nv);
    let xs = CornerSeries::from_frames(train_n, nn);
    let mut out = Vec::with_capacity(nv * nn * 2);
    for i in 0..nv {
        for j in 0..nn {
            let frames: Vec<usize> = (0..train_v.len()).filter(|&m| ys.valid[i][m] && xs.valid[j][m]).collect();
            for axis in 0..2 {
                out.push(PairData {
                    x: frames.iter().map(|&m| xs.disp[j][m].axis(axis)).collect(),
                    y: frames.iter().map(|&m| ys.disp[i][m].axis(axis)).collect(),
                    frames: frames.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Fit one triple; `None` marks it untrained.
pub fn fit_pair_data(data: &PairData, settings: &GprSettings) -> Option<GprPairModel> {
    if data.x.len() < 3 {
        return None;
    }
    fit_pair_model(&data.x, &data.y, settings.sigma_n, settings.kernel).ok()
}

/// Inverse-variance combination of per-pair predictions on one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub weights: Vec<f64>,
    pub mean: f64,
    /// `sum_j w_j v_j` with normalized weights.
    pub variance: f64,
}

/// Combine `(mean, variance)` pairs with weights `1 / max(v, floor)`.
pub fn combine(preds: &[(f64, f64)]) -> Option<Combined> {
    if preds.is_empty() {
        return None;
    }
    let raw: Vec<f64> = preds.iter().map(|(_, v)| 1.0 / v.max(VARIANCE_FLOOR)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mean = weights.iter().zip(preds).map(|(w, (p, _))| w * p).sum();
    let variance = weights.iter().zip(preds).map(|(w, (_, v))| w * v).sum();
    Some(Combined { weights, mean, variance })
}

/// Grid of `n_vascular x n_non_vascular x 2` pair models.
#[derive(Debug, Clone, PartialEq)]
pub struct GprEnsemble {
    n_vascular: usize,
    n_non_vascular: usize,
    models: Vec<Option<GprPairModel>>,
    pub v_threshold: f64,
    pub sigma_n: f64,
    pub kernel: Kernel,
    pub corners: CornerSet,
}

impl GprEnsemble {
    /// Assemble from per-triple fits in `(i, j, axis)` order. With
    /// [`VarianceThreshold::Auto`] the threshold is derived from
    /// leave-one-out variances of the fitted models.
    pub fn assemble(data: &[PairData], models: Vec<Option<GprPairModel>>, corners: CornerSet, settings: &GprSettings) -> Result<Self> {
        let (nv, nn) = (corners.n_vascular(), corners.n_non_vascular());
        if models.len() != nv * nn * 2 || data.len() != models.len() {
            bail!(Structure, "expected {} pair models, got {}", nv * nn * 2, models.len());
        }
        let v_threshold = match settings.v_threshold {
            VarianceThreshold::Fixed(t) => t,
            VarianceThreshold::Auto => auto_threshold(data, &models, nv, nn),
        };
        Ok(GprEnsemble { n_vascular: nv, n_non_vascular: nn, models, v_threshold, sigma_n: settings.sigma_n, kernel: settings.kernel, corners })
    }

    /// Deserialized parts; no threshold derivation.
    pub fn from_parts(models: Vec<Option<GprPairModel>>, corners: CornerSet, v_threshold: f64, sigma_n: f64, kernel: Kernel) -> Result<Self> {
        let (nv, nn) = (corners.n_vascular(), corners.n_non_vascular());
        if models.len() != nv * nn * 2 {
            bail!(Structure, "expected {} pair models, got {}", nv * nn * 2, models.len());
        }
        Ok(GprEnsemble { n_vascular: nv, n_non_vascular: nn, models, v_threshold, sigma_n, kernel, corners })
    }

    pub fn n_vascular(&self) -> usize {
        self.n_vascular
    }

    pub fn n_non_vascular(&self) -> usize {
        self.n_non_vascular
    }

    pub fn models(&self) -> &[Option<GprPairModel>] {
        &self.models
    }

    pub fn model(&self, i: usize, j: usize, axis: usize) -> Option<&GprPairModel> {
        self.models[(i * self.n_non_vascular + j) * 2 + axis].as_ref()
    }

    pub fn trained_count(&self) -> usize {
        self.models.iter().filter(|m| m.is_some()).count()
    }
}

fn auto_threshold(data: &[PairData], models: &[Option<GprPairModel>], nv: usize, nn: usize) -> f64 {
    let frames = data.iter().flat_map(|d| d.frames.iter().copied()).max().map_or(0, |m| m + 1);
    let loo: Vec<Option<Vec<f64>>> = models.iter().map(|m| m.as_ref().map(GprPairModel::loo_variances)).collect();
    let mut combined = Vec::new();
    let mut preds = Vec::with_capacity(nn);
    for i in 0..nv {
        for axis in 0..2 {
            for frame in 0..frames {
                preds.clear();
                for j in 0..nn {
                    let k = (i * nn + j) * 2 + axis;
                    if let (Some(v), Some(pos)) = (&loo[k], data[k].frames.iter().position(|f| *f == frame)) {
                        preds.push((0.0, v[pos]));
                    }
                }
                if let Some(c) = combine(&preds) {
                    combined.push(c.variance);
                }
            }
        }
    }
    math::percentile(&mut combined, 0.95).unwrap_or(f64::INFINITY)
}

/// Train every triple sequentially.
pub fn train_ensemble(train_v: &[FlowSet], train_n: &[FlowSet], corners: &CornerSet, settings: &GprSettings) -> Result<GprEnsemble> {
    let data = pair_data(train_v, train_n, corners)?;
    let models = data.iter().map(|d| fit_pair_data(d, settings)).collect();
    GprEnsemble::assemble(&data, models, corners.clone(), settings)
}

/// GPR prediction for one live frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GprPrediction {
    pub flow: FlowSet,
    /// Combined variance per vascular corner (zero where no pair was usable).
    pub variance: Vec<Vec2>,
    /// Corners dropped because their combined variance exceeded the threshold.
    pub deleted: Vec<bool>,
}

pub fn predict_ensemble(e: &GprEnsemble, live: &FlowSet) -> Result<GprPrediction> {
    check_live(e.n_non_vascular, live)?;
    let mut out = Vec::with_capacity(e.n_vascular);
    let mut variance = Vec::with_capacity(e.n_vascular);
    let mut deleted = vec![false; e.n_vascular];
    let mut preds: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for i in 0..e.n_vascular {
        for (axis, p) in preds.iter_mut().enumerate() {
            p.clear();
            for j in 0..e.n_non_vascular {
                if let (true, Some(m)) = (live.valid[j], e.model(i, j, axis)) {
                    p.push(m.predict(live.displacements[j].axis(axis)));
                }
            }
        }
        match (combine(&preds[0]), combine(&preds[1])) {
            (Some(cx), Some(cy)) => {
                variance.push(Vec2::new(cx.variance, cy.variance));
                if cx.variance > e.v_threshold || cy.variance > e.v_threshold {
                    deleted[i] = true;
                    out.push(None);
                } else {
                    out.push(Some(Vec2::new(cx.mean, cy.mean)));
                }
            }
            _ => {
                variance.push(Vec2::ZERO);
                out.push(None);
            }
        }
    }
    Ok(GprPrediction { flow: FlowSet::from_results(out, live.target_index), variance, deleted })
}
