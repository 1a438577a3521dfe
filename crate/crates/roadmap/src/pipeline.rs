//! Learn on the contrasted segment, then predict and warp each live frame.
//!
//! Corner tracking and GP pair fits run on the current rayon pool; results
//! are collected in input order, so a one-thread pool is bit-identical to
//! the sequential computation.

use std::time::Duration;

use mrc_core::features::detect_corners;
use mrc_core::tracking::{Pyramid, Roi, Tracker};
use mrc_core::warp::warp_mask;
use mrc_core::{codec, gof, gpr, morph, mrc};
use mrc_core::{CornerSet, FlowSet, FluoroSequence, Frame, GprEnsemble, MrcModel, SparseField, Vec2, VesselMask};
use rand::Rng;
use rayon::prelude::*;

pub use crate::config::{Mode, Regressor};
use crate::config::RunConfig;
use crate::error::{AppError, AppResult};
use crate::timing::time_once;

/// Tracked points: detected corners or grid points, split by the mask.
pub fn select_points(reference: &Frame, mask: &VesselMask, cfg: &RunConfig) -> AppResult<CornerSet> {
    match cfg.mode {
        Mode::Sparse => Ok(detect_corners(reference, mask, &cfg.corners)?),
        Mode::Dense => {
            if !mask.matches(reference) {
                return Err(AppError::Data("mask does not match reference frame".into()));
            }
            let margin = cfg.corners.border_margin.max(cfg.lk.half_window());
            let grown = morph::dilate_disk(mask, cfg.corners.mask_dilation);
            let (mut v, mut n) = (Vec::new(), Vec::new());
            for p in Roi::full(reference).inset(margin).grid(cfg.dense_stride) {
                if grown.get(p.x as usize, p.y as usize) {
                    v.push(p);
                } else {
                    n.push(p);
                }
            }
            if v.is_empty() || n.is_empty() {
                return Err(AppError::Core(mrc_core::Error::Detection(format!(
                    "dense grid gave {} vascular and {} non-vascular points",
                    v.len(),
                    n.len()
                ))));
            }
            Ok(CornerSet::new(v, n))
        }
    }
}

/// Track `points` into a prepared pyramid in parallel.
pub fn track_points(tracker: &Tracker, pyr: &Pyramid, points: &[Vec2], target_index: usize) -> FlowSet {
    let out: Vec<Option<Vec2>> = points.par_iter().map(|p| tracker.track_point(pyr, *p)).collect();
    FlowSet::from_results(out, target_index)
}

/// Flows of both corner sets into one frame.
pub fn track_frame(tracker: &Tracker, frame: &Frame, corners: &CornerSet) -> AppResult<(FlowSet, FlowSet)> {
    let pyr = tracker.target_pyramid(frame)?;
    Ok((track_points(tracker, &pyr, &corners.vascular, frame.index), track_points(tracker, &pyr, &corners.non_vascular, frame.index)))
}

/// Per-frame flows over the contrasted segment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFlows {
    pub vascular: Vec<FlowSet>,
    pub non_vascular: Vec<FlowSet>,
}

pub fn training_flows(tracker: &Tracker, seq: &FluoroSequence, corners: &CornerSet) -> AppResult<TrainingFlows> {
    let mut vascular = Vec::with_capacity(seq.contrasted_count());
    let mut non_vascular = Vec::with_capacity(seq.contrasted_count());
    for f in seq.contrasted() {
        let (v, n) = track_frame(tracker, f, corners)?;
        vascular.push(v);
        non_vascular.push(n);
    }
    Ok(TrainingFlows { vascular, non_vascular })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mrc(MrcModel),
    Gpr(GprEnsemble),
}

impl Model {
    pub fn corners(&self) -> &CornerSet {
        match self {
            Model::Mrc(m) => &m.corners,
            Model::Gpr(g) => &g.corners,
        }
    }

    pub fn regressor(&self) -> Regressor {
        match self {
            Model::Mrc(_) => Regressor::Mrc,
            Model::Gpr(_) => Regressor::Gpr,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Model::Mrc(m) => codec::encode_mrc(m),
            Model::Gpr(g) => codec::encode_gpr(g),
        }
    }

    /// Decode by magic.
    pub fn decode(buf: &[u8]) -> AppResult<Self> {
        if buf.starts_with(codec::GPR_MAGIC) {
            Ok(Model::Gpr(codec::decode_gpr(buf)?))
        } else {
            Ok(Model::Mrc(codec::decode_mrc(buf)?))
        }
    }
}

/// Fit the configured regressor to tracked training flows.
pub fn fit(flows: &TrainingFlows, corners: &CornerSet, cfg: &RunConfig) -> AppResult<Model> {
    match cfg.regressor {
        Regressor::Mrc => Ok(Model::Mrc(mrc::train(&flows.vascular, &flows.non_vascular, corners, cfg.rho_th)?)),
        Regressor::Gpr => {
            let data = gpr::pair_data(&flows.vascular, &flows.non_vascular, corners)?;
            let fits: Vec<_> = data.par_iter().map(|d| gpr::fit_pair_data(d, &cfg.gpr)).collect();
            Ok(Model::Gpr(GprEnsemble::assemble(&data, fits, corners.clone(), &cfg.gpr)?))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Learned {
    pub model: Model,
    pub flows: TrainingFlows,
    /// Point selection, training-frame tracking and fitting.
    pub learn_time: Duration,
    /// Fitting only.
    pub fit_time: Duration,
}

pub fn learn(seq: &FluoroSequence, mask: &VesselMask, cfg: &RunConfig) -> AppResult<Learned> {
    cfg.validate()?;
    let reference = seq.reference();
    let (out, learn_time) = time_once(|| -> AppResult<_> {
        let corners = select_points(reference, mask, cfg)?;
        let tracker = Tracker::new(reference, &cfg.lk)?;
        let flows = training_flows(&tracker, seq, &corners)?;
        let (model, fit_time) = time_once(|| fit(&flows, &corners, cfg));
        Ok((model?, flows, fit_time))
    });
    let (model, flows, fit_time) = out?;
    Ok(Learned { model, flows, learn_time, fit_time })
}

/// Vascular flow from live non-vascular flow.
pub fn regress(model: &Model, live: &FlowSet, use_gof: bool) -> AppResult<FlowSet> {
    Ok(match model {
        Model::Mrc(m) if use_gof => gof::filter_predict(m, live)?.flow,
        Model::Mrc(m) => mrc::predict_plain(m, live)?,
        Model::Gpr(g) => gpr::predict_ensemble(g, live)?.flow,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub frame_index: usize,
    pub non_vascular: FlowSet,
    pub vascular: FlowSet,
    pub warped: VesselMask,
    /// Regression only.
    pub regress_time: Duration,
}

/// Live-frame predictor bound to one model and reference.
pub struct Predictor<'a> {
    pub model: &'a Model,
    pub tracker: Tracker,
    pub mask: &'a VesselMask,
    pub cfg: &'a RunConfig,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a Model, reference: &Frame, mask: &'a VesselMask, cfg: &'a RunConfig) -> AppResult<Self> {
        if !mask.matches(reference) {
            return Err(AppError::Data("mask does not match reference frame".into()));
        }
        Ok(Predictor { model, tracker: Tracker::new(reference, &cfg.lk)?, mask, cfg })
    }

    pub fn track_live(&self, frame: &Frame) -> AppResult<FlowSet> {
        let pyr = self.tracker.target_pyramid(frame)?;
        Ok(track_points(&self.tracker, &pyr, &self.model.corners().non_vascular, frame.index))
    }

    /// Regress and warp from an already tracked (or substituted) live flow.
    pub fn from_flow(&self, non_vascular: FlowSet) -> AppResult<FramePrediction> {
        let (vascular, regress_time) = time_once(|| regress(self.model, &non_vascular, self.cfg.gof));
        let vascular = vascular?;
        let field = SparseField::from_flow(&self.model.corners().vascular, &vascular)?;
        let warped = warp_mask(self.mask, &field, &self.cfg.warp)?;
        Ok(FramePrediction { frame_index: non_vascular.target_index, non_vascular, vascular, warped, regress_time })
    }

    pub fn predict(&self, frame: &Frame) -> AppResult<FramePrediction> {
        self.from_flow(self.track_live(frame)?)
    }
}

/// Displace `fraction` of the valid tracks by `±px` on each axis, signs and
/// victims drawn from `rng`.
pub fn corrupt_flow(flow: &FlowSet, fraction: f64, px: f64, rng: &mut impl Rng) -> FlowSet {
    let mut out = flow.clone();
    let mut valid: Vec<usize> = (0..flow.len()).filter(|&j| flow.valid[j]).collect();
    let n = (fraction * valid.len() as f64).round() as usize;
    for k in 0..n.min(valid.len()) {
        let pick = rng.random_range(k..valid.len());
        valid.swap(k, pick);
        let sx = if rng.random::<bool>() { px } else { -px };
        let sy = if rng.random::<bool>() { px } else { -px };
        out.displacements[valid[k]] += Vec2::new(sx, sy);
    }
    out
}
