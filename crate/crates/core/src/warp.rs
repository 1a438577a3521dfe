//! Sparse-to-dense mapping of the reference vessel mask onto a live frame.
//!
//! Each set mask pixel is pushed forward by an inverse-distance-weighted
//! blend of the nearest valid corner flows, rounded, and the result closed
//! with a 3x3 structuring element to seal rounding holes.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::imaging::VesselMask;
use crate::math;
use crate::morph;
use crate::tracking::FlowSet;

const WEIGHT_EPS: f64 = 1e-6;

/// Predicted displacements at vascular corner positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseField {
    pub anchors: Vec<Vec2>,
    pub vectors: Vec<Vec2>,
    pub valid: Vec<bool>,
}

impl SparseField {
    pub fn new(anchors: Vec<Vec2>, vectors: Vec<Vec2>, valid: Vec<bool>) -> Result<Self> {
        if anchors.len() != vectors.len() || anchors.len() != valid.len() {
            return Err(Error::Structure(alloc::format!(
                "field lengths differ: {} anchors, {} vectors, {} flags",
                anchors.len(),
                vectors.len(),
                valid.len()
            )));
        }
        Ok(SparseField { anchors, vectors, valid })
    }

    /// Pair corner positions with a predicted flow set.
    pub fn from_flow(anchors: &[Vec2], flow: &FlowSet) -> Result<Self> {
        SparseField::new(anchors.to_vec(), flow.displacements.clone(), flow.valid.clone())
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpParams {
    /// Nearest valid anchors blended per point.
    pub k: usize,
    pub power: f64,
}

impl Default for WarpParams {
    fn default() -> Self {
        WarpParams { k: 4, power: 2.0 }
    }
}

impl WarpParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("warp_k must be at least 1".into()));
        }
        if !(self.power >= 0.0) || !self.power.is_finite() {
            return Err(Error::Config(alloc::format!("warp_power must be finite and non-negative, got {}", self.power)));
        }
        Ok(())
    }
}

struct Anchors {
    pos: Vec<Vec2>,
    vec: Vec<Vec2>,
}

impl Anchors {
    fn from_field(field: &SparseField) -> Result<Self> {
        let mut pos = Vec::new();
        let mut vec = Vec::new();
        for ((p, v), ok) in field.anchors.iter().zip(&field.vectors).zip(&field.valid) {
            if *ok {
                pos.push(*p);
                vec.push(*v);
            }
        }
        if pos.is_empty() {
            return Err(Error::WarpFailure);
        }
        Ok(Anchors { pos, vec })
    }

    fn at(&self, p: Vec2, params: &WarpParams, nearest: &mut Vec<(f64, usize)>) -> Vec2 {
        let k = params.k.min(self.pos.len());
        nearest.clear();
        for (idx, a) in self.pos.iter().enumerate() {
            let d2 = (*a - p).norm_sq();
            if d2 == 0.0 {
                return self.vec[idx];
            }
            if nearest.len() < k {
                nearest.push((d2, idx));
                nearest.sort_by(|a, b| a.0.total_cmp(&b.0));
            } else if d2 < nearest[k - 1].0 {
                nearest[k - 1] = (d2, idx);
                nearest.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
        }
        let mut acc = Vec2::ZERO;
        let mut total = 0.0;
        for &(d2, idx) in nearest.iter() {
            let w = 1.0 / (math::powf(math::sqrt(d2), params.power) + WEIGHT_EPS);
            acc += self.vec[idx] * w;
            total += w;
        }
        acc * (1.0 / total)
    }
}

/// Inverse-distance-weighted displacement at every point.
pub fn interpolate_at(field: &SparseField, points: &[Vec2], params: &WarpParams) -> Result<Vec<Vec2>> {
    params.validate()?;
    let anchors = Anchors::from_field(field)?;
    let mut scratch = Vec::with_capacity(params.k);
    Ok(points.iter().map(|p| anchors.at(*p, params, &mut scratch)).collect())
}

/// Forward-map mask pixels by the interpolated field, then close 3x3.
pub fn warp_mask(mask: &VesselMask, field: &SparseField, params: &WarpParams) -> Result<VesselMask> {
    params.validate()?;
    let anchors = Anchors::from_field(field)?;
    let (w, h) = (mask.width(), mask.height());
    let mut out = VesselMask::empty(w, h, mask.kind);
    let mut scratch = Vec::with_capacity(params.k);
    for (x, y) in mask.points() {
        let p = Vec2::new(x as f64, y as f64);
        let q = p + anchors.at(p, params, &mut scratch);
        let (tx, ty) = (math::round(q.x), math::round(q.y));
        if tx >= 0.0 && ty >= 0.0 && tx < w as f64 && ty < h as f64 {
            out.set(tx as usize, ty as usize, true);
        }
    }
    Ok(morph::closing3(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::MaskKind;
    use alloc::vec;

    fn v(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn single_anchor_everywhere() {
        let f = SparseField::new(vec![v(5.0, 5.0)], vec![v(1.5, -2.0)], vec![true]).unwrap();
        let out = interpolate_at(&f, &[v(0.0, 0.0), v(100.0, 3.0), v(5.0, 5.0)], &WarpParams::default()).unwrap();
        assert!(out.iter().all(|d| *d == v(1.5, -2.0)));
    }

    #[test]
    fn equidistant_midpoint() {
        let f = SparseField::new(vec![v(0.0, 0.0), v(4.0, 0.0)], vec![v(2.0, 0.0), v(0.0, 6.0)], vec![true; 2]).unwrap();
        let out = interpolate_at(&f, &[v(2.0, 7.0)], &WarpParams::default()).unwrap();
        assert!((out[0] - v(1.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn coincident_point_is_exact() {
        let f = SparseField::new(vec![v(0.0, 0.0), v(3.0, 1.0)], vec![v(2.0, 0.0), v(-1.0, 0.5)], vec![true; 2]).unwrap();
        let out = interpolate_at(&f, &[v(3.0, 1.0)], &WarpParams::default()).unwrap();
        assert_eq!(out[0], v(-1.0, 0.5));
    }

    #[test]
    fn invalid_anchors_ignored() {
        let f = SparseField::new(vec![v(0.0, 0.0), v(1.0, 0.0)], vec![v(9.0, 9.0), v(1.0, 0.0)], vec![false, true]).unwrap();
        let out = interpolate_at(&f, &[v(0.0, 0.0)], &WarpParams::default()).unwrap();
        assert_eq!(out[0], v(1.0, 0.0));
        let none = SparseField::new(vec![v(0.0, 0.0)], vec![v(0.0, 0.0)], vec![false]).unwrap();
        assert_eq!(interpolate_at(&none, &[v(0.0, 0.0)], &WarpParams::default()), Err(Error::WarpFailure));
    }

    fn block() -> VesselMask {
        let mut m = VesselMask::empty(20, 16, MaskKind::Mask);
        for y in 4..9 {
            for x in 3..12 {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn zero_field_is_closing() {
        let m = block();
        let f = SparseField::new(vec![v(7.0, 6.0)], vec![Vec2::ZERO], vec![true]).unwrap();
        assert_eq!(warp_mask(&m, &f, &WarpParams::default()).unwrap(), morph::closing3(&m));
    }

    #[test]
    fn integer_shift_translates() {
        let m = block();
        let f = SparseField::new(vec![v(0.0, 0.0), v(19.0, 15.0)], vec![v(3.0, 2.0); 2], vec![true; 2]).unwrap();
        assert_eq!(warp_mask(&m, &f, &WarpParams::default()).unwrap(), m.translated(3, 2));
    }
}
