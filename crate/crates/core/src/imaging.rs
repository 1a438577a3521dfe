//! Frames, vessel masks and fluoroscopy sequences.
//!
//! Intensities are `f64` in `[0, 1]`, row-major. Masks are boolean grids of
//! the same shape as the frame they annotate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::geom::Vec2;
use crate::math;

/// One grayscale X-ray frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    /// Ordinal of the frame in its sequence.
    pub index: usize,
    /// Whether the contrast agent is visible (training segment).
    pub contrasted: bool,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            bail!(Structure, "frame dimensions must be positive, got {width}x{height}");
        }
        if pixels.len() != width * height {
            bail!(
                Structure,
                "frame {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            );
        }
        if let Some(p) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            bail!(Structure, "intensity {} at pixel {p} outside [0,1]", pixels[p]);
        }
        Ok(Frame { width, height, pixels, index: 0, contrasted: false })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Frame::new(width, height, vec![value; width * height])
    }

    pub fn with_index(mut self, index: usize, contrasted: bool) -> Self {
        self.index = index;
        self.contrasted = contrasted;
        self
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear sample; `None` outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        bilinear(&self.pixels, self.width, self.height, x, y)
    }

    /// Bilinear sample with edge replication.
    #[inline]
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        bilinear_clamped(&self.pixels, self.width, self.height, x, y)
    }
}

#[inline]
pub(crate) fn bilinear(data: &[f64], w: usize, h: usize, x: f64, y: f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    Some(bilinear_clamped(data, w, h, x, y))
}

#[inline]
pub(crate) fn bilinear_clamped(data: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = math::floor(x) as usize;
    let y0 = math::floor(y) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = data[y0 * w + x0] * (1.0 - fx) + data[y0 * w + x1] * fx;
    let bottom = data[y1 * w + x0] * (1.0 - fx) + data[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Whether a mask marks a filled vessel region or its one-pixel centerline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Mask,
    Centerline,
}

/// Binary occupancy grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VesselMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    pub kind: MaskKind,
}

impl VesselMask {
    pub fn empty(width: usize, height: usize, kind: MaskKind) -> Self {
        VesselMask { width, height, bits: vec![false; width * height], kind }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>, kind: MaskKind) -> Result<Self> {
        if bits.len() != width * height {
            bail!(Structure, "mask {width}x{height} needs {} bits, got {}", width * height, bits.len());
        }
        Ok(VesselMask { width, height, bits, kind })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-range coordinates read as unset.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    /// Set pixels in row-major order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(move |(i, _)| (i % w, i / w))
    }

    pub fn matches(&self, frame: &Frame) -> bool {
        self.width == frame.width() && self.height == frame.height()
    }

    pub fn same_shape(&self, other: &VesselMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Whether every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &VesselMask) -> bool {
        self.same_shape(other) && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Integer translation; pixels shifted out of the grid are dropped.
    pub fn translated(&self, dx: isize, dy: isize) -> VesselMask {
        let mut out = VesselMask::empty(self.width, self.height, self.kind);
        for (x, y) in self.points() {
            let tx = x as isize + dx;
            let ty = y as isize + dy;
            if tx >= 0 && ty >= 0 && (tx as usize) < self.width && (ty as usize) < self.height {
                out.set(tx as usize, ty as usize, true);
            }
        }
        out
    }
}

/// Contrasted frames followed by live frames, anchored on one reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FluoroSequence {
    frames: Vec<Frame>,
    reference_index: usize,
    /// Millimetres per pixel.
    pub pixel_spacing: f64,
}

impl FluoroSequence {
    pub fn new(frames: Vec<Frame>, reference_index: usize, pixel_spacing: f64) -> Result<Self> {
        let Some(first) = frames.first() else {
            bail!(Structure, "sequence has no frames");
        };
        if let Some(bad) = frames.iter().find(|f| !f.same_shape(first)) {
            bail!(
                Structure,
                "frame {} is {}x{}, expected {}x{}",
                bad.index,
                bad.width(),
                bad.height(),
                first.width(),
                first.height()
            );
        }
        if frames.windows(2).any(|w| !w[0].contrasted && w[1].contrasted) {
            bail!(Structure, "contrasted frames must precede live frames");
        }
        match frames.get(reference_index) {
            Some(f) if f.contrasted => {}
            _ => bail!(Structure, "reference index {reference_index} does not address a contrasted frame"),
        }
        if !(pixel_spacing > 0.0 && pixel_spacing.is_finite()) {
            bail!(Config, "pixel spacing must be positive, got {pixel_spacing}");
        }
        Ok(FluoroSequence { frames, reference_index, pixel_spacing })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn reference(&self) -> &Frame {
        &self.frames[self.reference_index]
    }

    pub fn contrasted(&self) -> &[Frame] {
        &self.frames[..self.contrasted_count()]
    }

    pub fn live(&self) -> &[Frame] {
        &self.frames[self.contrasted_count()..]
    }

    pub fn contrasted_count(&self) -> usize {
        self.frames.iter().take_while(|f| f.contrasted).count()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}

/// Dense per-pixel displacement field, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub width: usize,
    pub height: usize,
    pub vectors: Vec<Vec2>,
}

impl DisplacementField {
    pub fn zeros(width: usize, height: usize) -> Self {
        DisplacementField { width, height, vectors: vec![Vec2::ZERO; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Vec2 {
        self.vectors[y * self.width + x]
    }

    /// Bilinear interpolation with edge replication.
    pub fn sample(&self, p: Vec2) -> Vec2 {
        let x = p.x.clamp(0.0, (self.width - 1) as f64);
        let y = p.y.clamp(0.0, (self.height - 1) as f64);
        let x0 = math::floor(x) as usize;
        let y0 = math::floor(y) as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let lerp = |a: Vec2, b: Vec2, t: f64| a * (1.0 - t) + b * t;
        let top = lerp(self.at(x0, y0), self.at(x1, y0), fx);
        let bottom = lerp(self.at(x0, y1), self.at(x1, y1), fx);
        lerp(top, bottom, fy)
    }
}

pub(crate) fn check_same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if !a.same_shape(b) {
        return Err(crate::Error::Structure(format!(
            "frame dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contrasted(i: usize) -> Frame {
        Frame::filled(4, 4, 0.5).unwrap().with_index(i, true)
    }

    #[test]
    fn frame_rejects_bad_length_and_range() {
        assert!(matches!(Frame::new(2, 2, vec![0.0; 3]), Err(crate::Error::Structure(_))));
        assert!(Frame::new(1, 1, vec![1.5]).is_err());
        assert!(Frame::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn bilinear_exact_at_grid_and_midpoint() {
        let f = Frame::new(2, 2, vec![0.0, 1.0, 0.5, 0.5]).unwrap();
        assert_eq!(f.sample(1.0, 0.0), Some(1.0));
        assert_eq!(f.sample(0.5, 0.0), Some(0.5));
        assert_eq!(f.sample(1.0, 1.0), Some(0.5));
        assert_eq!(f.sample(1.01, 0.0), None);
        assert_eq!(f.sample_clamped(5.0, -3.0), 1.0);
    }

    #[test]
    fn sequence_ordering_rules() {
        let live = Frame::filled(4, 4, 0.5).unwrap().with_index(2, false);
        assert!(FluoroSequence::new(vec![contrasted(0), contrasted(1), live.clone()], 1, 0.3).is_ok());
        // live before contrasted
        assert!(FluoroSequence::new(vec![contrasted(0), live.clone(), contrasted(2)], 0, 0.3).is_err());
        // reference on a live frame
        assert!(FluoroSequence::new(vec![contrasted(0), live.clone()], 1, 0.3).is_err());
        let odd = Frame::filled(5, 4, 0.5).unwrap().with_index(1, true);
        assert!(FluoroSequence::new(vec![contrasted(0), odd], 0, 0.3).is_err());
    }

    #[test]
    fn mask_translate_and_subset() {
        let mut m = VesselMask::empty(5, 5, MaskKind::Mask);
        m.set(1, 1, true);
        m.set(4, 4, true);
        let t = m.translated(1, 0);
        assert!(t.get(2, 1));
        assert_eq!(t.count(), 1);
        assert!(!m.is_subset_of(&t));
        let mut c = VesselMask::empty(5, 5, MaskKind::Centerline);
        c.set(1, 1, true);
        assert!(c.is_subset_of(&m));
    }
}
