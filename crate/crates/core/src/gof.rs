//! Gaussian-based outlier filtering of per-pair predictions.
//!
//! Each kept (vascular, non-vascular) pair yields one candidate prediction
//! for the vascular corner. Candidates outside the open `mu +- 3 sigma` band
//! on either axis lose their weight; the survivors' weights are
//! renormalized and averaged. Statistics are computed once over all active
//! candidates, suspects included.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::geom::Vec2;
use crate::math;
use crate::mrc::{check_live, predict_row, MrcModel};
use crate::tracking::FlowSet;

/// Spread below which an axis counts as perfect agreement; the band test
/// is skipped on that axis.
pub const DEGENERATE_SIGMA: f64 = 1e-9;

/// Per-pair predictions for one vascular corner.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// One entry per non-vascular corner; meaningful only where active.
    pub predictions: Vec<Vec2>,
    pub active: Vec<bool>,
}

impl CandidateSet {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn active_predictions(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.predictions.iter().zip(&self.active).filter(|(_, a)| **a).map(|(p, _)| *p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussStats {
    pub mu: Vec2,
    pub sigma: Vec2,
}

impl GaussStats {
    /// Whether `p` lies inside the open 3-sigma band on both axes.
    pub fn admits(&self, p: Vec2) -> bool {
        let inside = |v: f64, mu: f64, sigma: f64| sigma < DEGENERATE_SIGMA || (v > mu - 3.0 * sigma && v < mu + 3.0 * sigma);
        inside(p.x, self.mu.x, self.sigma.x) && inside(p.y, self.mu.y, self.sigma.y)
    }
}

/// Candidates `slope * f_j + intercept` for every pair with positive weight
/// and a valid live track.
pub fn candidates(model: &MrcModel, live: &FlowSet, i: usize) -> Result<CandidateSet> {
    if i >= model.n_vascular() {
        bail!(Structure, "vascular index {i} out of range {}", model.n_vascular());
    }
    if live.len() != model.n_non_vascular() {
        bail!(Structure, "live flow has {} corners, model expects {}", live.len(), model.n_non_vascular());
    }
    let mut predictions = Vec::with_capacity(live.len());
    let mut active = Vec::with_capacity(live.len());
    for (j, &w) in model.weight_row(i).iter().enumerate() {
        let on = w > 0.0 && live.valid[j];
        predictions.push(if on { model.fit(i, j).apply(live.displacements[j]) } else { Vec2::ZERO });
        active.push(on);
    }
    if !active.iter().any(|a| *a) {
        bail!(PredictionFailure, "vascular corner {i} has no active candidate");
    }
    Ok(CandidateSet { predictions, active })
}

/// Population mean and standard deviation per axis over active candidates.
pub fn gauss_stats(cands: &CandidateSet) -> Result<GaussStats> {
    let n = cands.active_count();
    if n == 0 {
        bail!(PredictionFailure, "no active candidate");
    }
    let inv = 1.0 / n as f64;
    let mut mu = Vec2::ZERO;
    for p in cands.active_predictions() {
        mu += p;
    }
    let mu = mu * inv;
    let mut var = Vec2::ZERO;
    for p in cands.active_predictions() {
        let d = p - mu;
        var += d.hadamard(d);
    }
    let var = var * inv;
    Ok(GaussStats { mu, sigma: Vec2::new(math::sqrt(var.x), math::sqrt(var.y)) })
}

/// Filtered prediction of one live frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedFlow {
    pub flow: FlowSet,
    /// Rows where every candidate was deleted and the unfiltered mean was
    /// used instead.
    pub degraded: Vec<bool>,
    /// Candidates deleted per row.
    pub deleted: Vec<usize>,
}

/// Surviving weights for row `i`, normalized to sum to 1, and the number
/// of deleted candidates. `None` when nothing survives.
pub fn surviving_weights(model: &MrcModel, cands: &CandidateSet, stats: &GaussStats, i: usize) -> (Option<Vec<f64>>, usize) {
    let row = model.weight_row(i);
    let mut w: Vec<f64> = Vec::with_capacity(row.len());
    let mut deleted = 0;
    for (j, &wj) in row.iter().enumerate() {
        if !cands.active[j] {
            w.push(0.0);
        } else if stats.admits(cands.predictions[j]) {
            w.push(wj);
        } else {
            w.push(0.0);
            deleted += 1;
        }
    }
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
        (Some(w), deleted)
    } else {
        (None, deleted)
    }
}

/// Predict vascular flows for one live frame with 3-sigma filtering.
///
/// Fused form of [`candidates`], [`gauss_stats`] and [`surviving_weights`]
/// over one scratch buffer; the arithmetic and its order are the same.
pub fn filter_predict(model: &MrcModel, live: &FlowSet) -> Result<RefinedFlow> {
    check_live(model.n_non_vascular(), live)?;
    let nv = model.n_vascular();
    let nn = model.n_non_vascular();
    let mut out = Vec::with_capacity(nv);
    let mut degraded = alloc::vec![false; nv];
    let mut deleted = alloc::vec![0; nv];
    let mut scratch: Vec<(f64, Vec2)> = Vec::with_capacity(nn);
    for i in 0..nv {
        scratch.clear();
        let row = i * nn..(i + 1) * nn;
        let pairs = model.weights()[row.clone()].iter().zip(&model.slopes()[row.clone()]).zip(&model.intercepts()[row]);
        for (((&w, &slope), &intercept), (&f, &ok)) in pairs.zip(live.displacements.iter().zip(&live.valid)) {
            if w > 0.0 && ok {
                scratch.push((w, slope.hadamard(f) + intercept));
            }
        }
        if scratch.is_empty() {
            out.push(None);
            continue;
        }
        let inv = 1.0 / scratch.len() as f64;
        let mut mu = Vec2::ZERO;
        for (_, p) in &scratch {
            mu += *p;
        }
        let mu = mu * inv;
        let mut var = Vec2::ZERO;
        for (_, p) in &scratch {
            let d = *p - mu;
            var += d.hadamard(d);
        }
        let var = var * inv;
        let stats = GaussStats { mu, sigma: Vec2::new(math::sqrt(var.x), math::sqrt(var.y)) };
        // Same accumulation order as the unfiltered path so that a frame
        // without deletions reproduces it.
        let mut acc = Vec2::ZERO;
        let mut total = 0.0;
        for (w, p) in &scratch {
            if stats.admits(*p) {
                acc += *p * *w;
                total += *w;
            } else {
                deleted[i] += 1;
            }
        }
        if total > 0.0 {
            out.push(Some(acc * (1.0 / total)));
        } else {
            degraded[i] = true;
            out.push(predict_row(model, live, i));
        }
    }
    Ok(RefinedFlow { flow: FlowSet::from_results(out, live.target_index), degraded, deleted })
}
