//! Shi-Tomasi corners on the reference frame, split into vascular and
//! non-vascular sets by the (dilated) vessel mask.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::geom::Vec2;
use crate::imaging::{Frame, VesselMask};
use crate::math;
use crate::morph;

#[derive(Debug, Clone, PartialEq)]
pub struct CornerParams {
    /// Cap per set.
    pub max_corners: usize,
    /// Fraction of the strongest response a candidate must exceed.
    pub quality_level: f64,
    pub min_distance: f64,
    pub block_size: usize,
    /// Disk radius by which the mask grows before classification.
    pub mask_dilation: usize,
    /// Corners closer than this to the frame border are discarded. Should be
    /// at least the tracker window half-size.
    pub border_margin: usize,
}

impl Default for CornerParams {
    fn default() -> Self {
        CornerParams {
            max_corners: 200,
            quality_level: 0.05,
            min_distance: 8.0,
            block_size: 5,
            mask_dilation: 3,
            border_margin: 10,
        }
    }
}

impl CornerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.quality_level > 0.0 && self.quality_level < 1.0) {
            bail!(Config, "quality_level must lie in (0,1), got {}", self.quality_level);
        }
        if !(self.min_distance >= 1.0) {
            bail!(Config, "min_distance must be >= 1, got {}", self.min_distance);
        }
        if self.block_size < 3 || self.block_size % 2 == 0 {
            bail!(Config, "block_size must be odd and >= 3, got {}", self.block_size);
        }
        if self.max_corners == 0 {
            bail!(Config, "max_corners must be positive");
        }
        Ok(())
    }
}

/// Corners extracted from the reference frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CornerSet {
    pub vascular: Vec<Vec2>,
    pub non_vascular: Vec<Vec2>,
}

impl CornerSet {
    pub fn new(vascular: Vec<Vec2>, non_vascular: Vec<Vec2>) -> Self {
        CornerSet { vascular, non_vascular }
    }

    pub fn n_vascular(&self) -> usize {
        self.vascular.len()
    }

    pub fn n_non_vascular(&self) -> usize {
        self.non_vascular.len()
    }
}

/// Per-pixel minimum eigenvalue of the block-summed structure tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ResponseMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Smaller eigenvalue of the symmetric matrix `[[a, b], [b, c]]`.
#[inline]
pub fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let half_tr = 0.5 * (a + c);
    let d = 0.5 * (a - c);
    half_tr - math::sqrt(d * d + b * b)
}

/// Shi-Tomasi response: central-difference gradients (edge-replicated), the
/// structure tensor summed over a `block_size` square, and its smaller
/// eigenvalue. Pixels within half a block of the border are zero.
pub fn min_eig_response(frame: &Frame, block_size: usize) -> Result<ResponseMap> {
    if block_size < 3 || block_size % 2 == 0 {
        bail!(Config, "block_size must be odd and >= 3, got {block_size}");
    }
    let (w, h) = (frame.width(), frame.height());
    if w < block_size || h < block_size {
        bail!(Structure, "frame {w}x{h} smaller than block {block_size}");
    }
    let px = frame.pixels();
    let mut gxx = Vec::with_capacity(w * h);
    let mut gxy = Vec::with_capacity(w * h);
    let mut gyy = Vec::with_capacity(w * h);
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let gx = 0.5 * (px[y * w + xp] - px[y * w + xm]);
            let gy = 0.5 * (px[yp * w + x] - px[ym * w + x]);
            gxx.push(gx * gx);
            gxy.push(gx * gy);
            gyy.push(gy * gy);
        }
    }
    let half = block_size / 2;
    let sxx = box_sum(&gxx, w, h, half);
    let sxy = box_sum(&gxy, w, h, half);
    let syy = box_sum(&gyy, w, h, half);
    let mut values = alloc::vec![0.0; w * h];
    for y in half..h - half {
        for x in half..w - half {
            let i = y * w + x;
            values[i] = min_eigenvalue(sxx[i], sxy[i], syy[i]).max(0.0);
        }
    }
    Ok(ResponseMap { width: w, height: h, values })
}

// Separable box sum of radius `half`; only interior pixels are meaningful.
fn box_sum(src: &[f64], w: usize, h: usize, half: usize) -> Vec<f64> {
    let mut rows = alloc::vec![0.0; w * h];
    for y in 0..h {
        for x in half..w - half {
            rows[y * w + x] = src[y * w + x - half..=y * w + x + half].iter().sum();
        }
    }
    let mut out = alloc::vec![0.0; w * h];
    for y in half..h - half {
        for x in half..w - half {
            out[y * w + x] = (y - half..=y + half).map(|yy| rows[yy * w + x]).sum();
        }
    }
    out
}

/// Detect corners, classify them by mask membership and enforce spacing
/// within each set.
///
/// Candidates above `quality_level * max` are visited by descending
/// response (ties in row-major order) and greedily accepted.
pub fn detect_corners(frame: &Frame, mask: &VesselMask, params: &CornerParams) -> Result<CornerSet> {
    params.validate()?;
    if !mask.matches(frame) {
        bail!(
            Structure,
            "mask {}x{} does not match frame {}x{}",
            mask.width(),
            mask.height(),
            frame.width(),
            frame.height()
        );
    }
    let response = min_eig_response(frame, params.block_size)?;
    let region = morph::dilate_disk(mask, params.mask_dilation);
    let (w, h) = (frame.width(), frame.height());
    let threshold = params.quality_level * response.max();
    let m = params.border_margin;

    let mut candidates: Vec<(usize, f64)> = Vec::new();
    if w > 2 * m && h > 2 * m {
        for y in m..h - m {
            for x in m..w - m {
                let r = response.get(x, y);
                if r > threshold && r > 0.0 {
                    candidates.push((y * w + x, r));
                }
            }
        }
    }
    // Stable sort keeps row-major order among equal responses.
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));

    let min_d2 = params.min_distance * params.min_distance;
    let mut set = CornerSet::default();
    for (idx, _) in candidates {
        let (x, y) = (idx % w, idx / w);
        let p = Vec2::new(x as f64, y as f64);
        let target = if region.get(x, y) { &mut set.vascular } else { &mut set.non_vascular };
        if target.len() >= params.max_corners {
            continue;
        }
        if target.iter().all(|q| (*q - p).norm_sq() >= min_d2) {
            target.push(p);
        }
        if set.vascular.len() >= params.max_corners && set.non_vascular.len() >= params.max_corners {
            break;
        }
    }
    if set.vascular.is_empty() || set.non_vascular.is_empty() {
        bail!(
            Detection,
            "found {} vascular and {} non-vascular corners; both sets must be non-empty",
            set.vascular.len(),
            set.non_vascular.len()
        );
    }
    Ok(set)
}
