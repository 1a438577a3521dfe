//! Motion-related model: Pearson-gated per-pair linear regression from
//! non-vascular to vascular corner motion.
//!
//! For every (vascular `i`, non-vascular `j`) pair the training flows give
//! two series over the contrasted frames. The pair is kept when the product
//! of the per-axis Pearson coefficients exceeds `rho_th`; its weight is that
//! product and an affine law `y = a * x + b` is fitted per axis. A live
//! vascular flow is the weighted mean of every kept pair's affine prediction.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::features::CornerSet;
use crate::geom::Vec2;
use crate::math;
use crate::tracking::FlowSet;

/// Variances at or below this are treated as constant series.
const MIN_VARIANCE: f64 = 1e-20;

/// Displacement series of one non-vascular (`xs`) and one vascular (`ys`)
/// corner over the training frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSeries {
    pub xs: Vec<Vec2>,
    pub ys: Vec<Vec2>,
    pub valid_frames: Vec<bool>,
}

impl PairSeries {
    /// All frames valid.
    pub fn new(xs: Vec<Vec2>, ys: Vec<Vec2>) -> Self {
        let valid_frames = vec![true; xs.len()];
        PairSeries { xs, ys, valid_frames }
    }

    fn view(&self) -> SeriesView<'_> {
        SeriesView { xs: &self.xs, ys: &self.ys, valid: &self.valid_frames }
    }
}

#[derive(Clone, Copy)]
struct SeriesView<'a> {
    xs: &'a [Vec2],
    ys: &'a [Vec2],
    valid: &'a [bool],
}

/// Population moments of one axis over the jointly valid frames.
#[derive(Debug, Clone, Copy)]
struct AxisMoments {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

impl SeriesView<'_> {
    fn count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    fn moments(&self, axis: usize) -> AxisMoments {
        let pairs = || {
            self.xs
                .iter()
                .zip(self.ys)
                .zip(self.valid)
                .filter(|(_, v)| **v)
                .map(|((x, y), _)| (x.axis(axis), y.axis(axis)))
        };
        let n = self.count() as f64;
        let (sx, sy) = pairs().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mean_x, mean_y) = (sx / n, sy / n);
        let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
        for (x, y) in pairs() {
            let (dx, dy) = (x - mean_x, y - mean_y);
            var_x += dx * dx;
            var_y += dy * dy;
            cov += dx * dy;
        }
        AxisMoments { mean_x, mean_y, var_x: var_x / n, var_y: var_y / n, cov: cov / n }
    }

    fn pearson(&self) -> Option<f64> {
        if self.count() < 3 {
            return None;
        }
        let mut rho = 1.0;
        for axis in 0..2 {
            let m = self.moments(axis);
            if m.var_x <= MIN_VARIANCE || m.var_y <= MIN_VARIANCE {
                return None;
            }
            rho *= (m.cov / math::sqrt(m.var_x * m.var_y)).clamp(-1.0, 1.0);
        }
        Some(rho)
    }

    fn fit(&self) -> Result<AffineFit> {
        if self.count() < 2 {
            bail!(Fit, "need at least 2 jointly valid frames, got {}", self.count());
        }
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        for axis in 0..2 {
            let m = self.moments(axis);
            if m.var_x <= MIN_VARIANCE {
                bail!(Fit, "regressor constant on axis {axis}");
            }
            a[axis] = m.cov / m.var_x;
            b[axis] = m.mean_y - a[axis] * m.mean_x;
        }
        Ok(AffineFit { slope: Vec2::new(a[0], a[1]), intercept: Vec2::new(b[0], b[1]) })
    }
}

/// Product of the x- and y-axis Pearson coefficients over jointly valid
/// frames, population convention.
///
/// `None` when fewer than three frames are jointly valid or either series
/// is constant on either axis; callers treat that as a rejected pair.
pub fn pearson(series: &PairSeries) -> Option<f64> {
    series.view().pearson()
}

/// Per-axis least-squares law `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub slope: Vec2,
    pub intercept: Vec2,
}

impl AffineFit {
    pub const IDENTITY: AffineFit = AffineFit { slope: Vec2::new(1.0, 1.0), intercept: Vec2::ZERO };

    #[inline]
    pub fn apply(&self, x: Vec2) -> Vec2 {
        self.slope.hadamard(x) + self.intercept
    }
}

/// Ordinary least squares per axis via the closed-form normal equations.
pub fn fit_pair(series: &PairSeries) -> Result<AffineFit> {
    series.view().fit()
}

/// Trained correlation model.
#[derive(Debug, Clone, PartialEq)]
pub struct MrcModel {
    n_vascular: usize,
    n_non_vascular: usize,
    /// Row-major `n_vascular x n_non_vascular`; nonzero rows sum to 1.
    weights: Vec<f64>,
    slopes: Vec<Vec2>,
    intercepts: Vec<Vec2>,
    pub rho_th: f64,
    pub corners: CornerSet,
}

impl MrcModel {
    /// Assemble from raw parts. Slopes and intercepts are ignored where the
    /// weight is zero.
    pub fn from_parts(weights: Vec<f64>, slopes: Vec<Vec2>, intercepts: Vec<Vec2>, rho_th: f64, corners: CornerSet) -> Result<Self> {
        let (nv, nn) = (corners.n_vascular(), corners.n_non_vascular());
        if weights.len() != nv * nn || slopes.len() != nv * nn || intercepts.len() != nv * nn {
            bail!(Structure, "model tensors do not match {nv}x{nn} corners");
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            bail!(Structure, "model weights must be finite and non-negative");
        }
        Ok(MrcModel { n_vascular: nv, n_non_vascular: nn, weights, slopes, intercepts, rho_th, corners })
    }

    pub fn n_vascular(&self) -> usize {
        self.n_vascular
    }

    pub fn n_non_vascular(&self) -> usize {
        self.n_non_vascular
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn slopes(&self) -> &[Vec2] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[Vec2] {
        &self.intercepts
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_non_vascular..(i + 1) * self.n_non_vascular]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_non_vascular + j]
    }

    pub fn fit(&self, i: usize, j: usize) -> AffineFit {
        let k = i * self.n_non_vascular + j;
        AffineFit { slope: self.slopes[k], intercept: self.intercepts[k] }
    }

    /// A row with no correlated partner cannot be predicted.
    pub fn is_predictable(&self, i: usize) -> bool {
        self.weight_row(i).iter().any(|w| *w > 0.0)
    }

    pub fn predictable_count(&self) -> usize {
        (0..self.n_vascular).filter(|&i| self.is_predictable(i)).count()
    }
}

pub(crate) fn check_training_shapes(train_v: &[FlowSet], train_n: &[FlowSet], corners: &CornerSet) -> Result<()> {
    if train_v.len() != train_n.len() {
        bail!(Structure, "{} vascular vs {} non-vascular training frames", train_v.len(), train_n.len());
    }
    if train_v.len() < 3 {
        bail!(Structure, "need at least 3 training frames, got {}", train_v.len());
    }
    if train_v.iter().any(|f| f.len() != corners.n_vascular()) || train_n.iter().any(|f| f.len() != corners.n_non_vascular()) {
        bail!(Structure, "training flows not aligned with corner sets");
    }
    Ok(())
}

/// Per-corner series across frames, transposed from per-frame flow sets.
pub(crate) struct CornerSeries {
    pub disp: Vec<Vec<Vec2>>,
    pub valid: Vec<Vec<bool>>,
}

impl CornerSeries {
    pub(crate) fn from_frames(frames: &[FlowSet], n: usize) -> Self {
        let disp = (0..n).map(|c| frames.iter().map(|f| f.displacements[c]).collect()).collect();
        let valid = (0..n).map(|c| frames.iter().map(|f| f.valid[c]).collect()).collect();
        CornerSeries { disp, valid }
    }
}

/// Train from per-frame vascular and non-vascular flows (same frame order).
///
/// Fails when no vascular row keeps any pair.
pub fn train(train_v: &[FlowSet], train_n: &[FlowSet], corners: &CornerSet, rho_th: f64) -> Result<MrcModel> {
    check_training_shapes(train_v, train_n, corners)?;
    if !(rho_th > 0.0 && rho_th <= 1.0) {
        bail!(Config, "rho_th must lie in (0,1], got {rho_th}");
    }
    let (nv, nn) = (corners.n_vascular(), corners.n_non_vascular());
    let ys = CornerSeries::from_frames(train_v, nv);
    let xs = CornerSeries::from_frames(train_n, nn);
    let frames = train_v.len();

    let mut weights = vec![0.0; nv * nn];
    let mut slopes = vec![Vec2::ZERO; nv * nn];
    let mut intercepts = vec![Vec2::ZERO; nv * nn];
    let mut joint = vec![false; frames];
    for i in 0..nv {
        let row = i * nn;
        for j in 0..nn {
            for (m, v) in joint.iter_mut().enumerate() {
                *v = ys.valid[i][m] && xs.valid[j][m];
            }
            let view = SeriesView { xs: &xs.disp[j], ys: &ys.disp[i], valid: &joint };
            let Some(rho) = view.pearson() else { continue };
            if rho > rho_th {
                let fit = view.fit()?;
                weights[row + j] = rho;
                slopes[row + j] = fit.slope;
                intercepts[row + j] = fit.intercept;
            }
        }
        let sum: f64 = weights[row..row + nn].iter().sum();
        if sum > 0.0 {
            weights[row..row + nn].iter_mut().for_each(|w| *w /= sum);
        }
    }
    let model = MrcModel { n_vascular: nv, n_non_vascular: nn, weights, slopes, intercepts, rho_th, corners: corners.clone() };
    if model.predictable_count() == 0 {
        return Err(Error::TrainingFailure(alloc::format!(
            "no pair exceeds rho_th={rho_th}; motion uncorrelated or threshold too high"
        )));
    }
    Ok(model)
}

pub(crate) fn check_live(model_nn: usize, live: &FlowSet) -> Result<()> {
    if live.len() != model_nn {
        bail!(Structure, "live flow has {} corners, model expects {model_nn}", live.len());
    }
    if live.valid_count() == 0 {
        bail!(PredictionFailure, "all live tracks invalid for frame {}", live.target_index);
    }
    Ok(())
}

/// Weighted mean of the kept pairs' affine predictions for row `i`, with
/// weights renormalized over valid live tracks.
pub(crate) fn predict_row(model: &MrcModel, live: &FlowSet, i: usize) -> Option<Vec2> {
    let mut acc = Vec2::ZERO;
    let mut total = 0.0;
    for (j, &w) in model.weight_row(i).iter().enumerate() {
        if w > 0.0 && live.valid[j] {
            acc += model.fit(i, j).apply(live.displacements[j]) * w;
            total += w;
        }
    }
    (total > 0.0).then(|| acc * (1.0 / total))
}

/// Predict vascular flows for one live frame without outlier filtering.
pub fn predict_plain(model: &MrcModel, live: &FlowSet) -> Result<FlowSet> {
    check_live(model.n_non_vascular, live)?;
    let out = (0..model.n_vascular).map(|i| predict_row(model, live, i));
    Ok(FlowSet::from_results(out, live.target_index))
}
