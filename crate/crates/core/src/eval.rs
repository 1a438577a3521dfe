//! Accuracy scores of a warped vessel mask against a labeled centerline.
//!
//! - `R`: fraction of ground-truth centerline pixels covered by the warped
//!   mask.
//! - `MD`: mean distance from each ground-truth centerline pixel to the
//!   nearest pixel of the warped mask's thinned centerline, in millimeters.
//!   It is one-directional (ground truth to prediction).

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::imaging::VesselMask;
use crate::math;
use crate::morph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub frame_index: usize,
    pub r: f64,
    /// Millimeters.
    pub md: f64,
    pub n_gt_points: usize,
}

/// Centerline of a mask by Zhang-Suen thinning.
pub fn centerline(mask: &VesselMask) -> VesselMask {
    morph::zhang_suen(mask)
}

pub fn ratio_r(gt: &VesselMask, warped: &VesselMask) -> Result<f64> {
    if !gt.same_shape(warped) {
        bail!(Structure, "gt {}x{} vs warped {}x{}", gt.width(), gt.height(), warped.width(), warped.height());
    }
    let n = gt.count();
    if n == 0 {
        bail!(Evaluation, "empty ground-truth centerline");
    }
    let hit = gt.points().filter(|&(x, y)| warped.get(x, y)).count();
    Ok(hit as f64 / n as f64)
}

/// Mean nearest-point distance between two point sets, in pixels.
pub fn mean_nearest_distance(gt: &VesselMask, line: &VesselMask) -> Result<f64> {
    if !gt.same_shape(line) {
        bail!(Structure, "gt {}x{} vs line {}x{}", gt.width(), gt.height(), line.width(), line.height());
    }
    if gt.is_empty() {
        bail!(Evaluation, "empty ground-truth centerline");
    }
    let targets: Vec<(f64, f64)> = line.points().map(|(x, y)| (x as f64, y as f64)).collect();
    if targets.is_empty() {
        bail!(Evaluation, "empty warped centerline");
    }
    let mut sum = 0.0;
    for (x, y) in gt.points() {
        let (x, y) = (x as f64, y as f64);
        let best = targets.iter().map(|(tx, ty)| (tx - x) * (tx - x) + (ty - y) * (ty - y)).fold(f64::INFINITY, f64::min);
        sum += math::sqrt(best);
    }
    Ok(sum / gt.count() as f64)
}

/// MD in millimeters; the warped mask is thinned first.
pub fn mean_distance(gt: &VesselMask, warped: &VesselMask, pixel_spacing: f64) -> Result<f64> {
    if !(pixel_spacing > 0.0) {
        bail!(Config, "pixel spacing must be positive, got {pixel_spacing}");
    }
    Ok(mean_nearest_distance(gt, &centerline(warped))? * pixel_spacing)
}

pub fn score_frame(frame_index: usize, gt: &VesselMask, warped: &VesselMask, pixel_spacing: f64) -> Result<FrameScore> {
    Ok(FrameScore {
        frame_index,
        r: ratio_r(gt, warped)?,
        md: mean_distance(gt, warped, pixel_spacing)?,
        n_gt_points: gt.count(),
    })
}
