//! Synthetic fluoroscopy phantom with analytically known breathing motion.
//!
//! Motion is a sinusoid whose amplitude grows linearly with image row, so
//! the top of the image moves less than the bottom when `gamma < 1`. The
//! displacement of a reference point `(x, y)` at frame `t` is
//!
//! ```text
//! s(y)   = gamma + (1 - gamma) * y / height
//! d(y,t) = (A s(y) sin(2 pi t / T), 0.4 A s(y) sin(2 pi t / T + phase))
//! ```
//!
//! Truth flows are taken relative to the reference frame (frame 0), so the
//! reference has zero flow for any phase.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::geom::Vec2;
use crate::imaging::{bilinear_clamped, DisplacementField, FluoroSequence, Frame, MaskKind, VesselMask};
use crate::math;
use crate::morph;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub width: usize,
    pub height: usize,
    /// Peak horizontal displacement in pixels at the bottom row.
    pub amplitude_px: f64,
    /// Breathing period in frames.
    pub period_frames: f64,
    /// Motion scale at the top row relative to the bottom row, in `[0, 1]`.
    pub gamma: f64,
    /// Phase offset of the vertical component, radians.
    pub phase: f64,
    pub contrasted_frames: usize,
    pub live_frames: usize,
    pub seed: u64,
    pub pixel_spacing_mm: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            width: 256,
            height: 256,
            amplitude_px: 8.0,
            period_frames: 12.0,
            gamma: 0.5,
            phase: 1.0,
            contrasted_frames: 12,
            live_frames: 20,
            seed: 1,
            pixel_spacing_mm: 1.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            bail!(Config, "phantom must be at least 32x32, got {}x{}", self.width, self.height);
        }
        let limit = self.width.min(self.height) as f64 / 4.0;
        if !(self.amplitude_px >= 0.0 && self.amplitude_px < limit) {
            bail!(Config, "amplitude {} px must lie in [0, {limit}) for a {}x{} frame", self.amplitude_px, self.width, self.height);
        }
        if !(self.period_frames > 0.0 && self.period_frames.is_finite()) {
            bail!(Config, "period must be positive, got {}", self.period_frames);
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            bail!(Config, "gamma must lie in [0,1], got {}", self.gamma);
        }
        if !self.phase.is_finite() {
            bail!(Config, "phase must be finite");
        }
        if self.contrasted_frames == 0 {
            bail!(Config, "need at least one contrasted frame");
        }
        if !(self.pixel_spacing_mm > 0.0 && self.pixel_spacing_mm.is_finite()) {
            bail!(Config, "pixel spacing must be positive, got {}", self.pixel_spacing_mm);
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.contrasted_frames + self.live_frames
    }

    /// Absolute breathing displacement of reference row `y` at frame time `t`.
    pub fn displacement(&self, y: f64, t: f64) -> Vec2 {
        let s = self.gamma + (1.0 - self.gamma) * y / self.height as f64;
        let w = 2.0 * PI * t / self.period_frames;
        let a = self.amplitude_px * s;
        Vec2::new(a * math::sin(w), 0.4 * a * math::sin(w + self.phase))
    }

    /// Displacement of reference point `p` between frame 0 and frame `t`.
    pub fn truth_flow(&self, p: Vec2, t: usize) -> Vec2 {
        self.displacement(p.y, t as f64) - self.displacement(p.y, 0.0)
    }
}

/// Generated sequence plus everything needed to score it.
#[derive(Debug, Clone)]
pub struct PhantomDataset {
    pub config: PhantomConfig,
    pub sequence: FluoroSequence,
    /// One dense field per frame; zero for the reference.
    pub truth_flows: Vec<DisplacementField>,
    pub reference_mask: VesselMask,
    pub reference_centerline: VesselMask,
    /// One centerline per live frame, in live-frame order.
    pub gt_centerlines: Vec<VesselMask>,
    /// Reference rendering without vessels.
    pub texture: Frame,
}

impl PhantomDataset {
    /// Index into `gt_centerlines` for a sequence frame index, if live.
    pub fn gt_for_frame(&self, frame_index: usize) -> Option<&VesselMask> {
        frame_index
            .checked_sub(self.config.contrasted_frames)
            .and_then(|i| self.gt_centerlines.get(i))
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: Vec2,
    b: Vec2,
    radius: f64,
}

impl Segment {
    fn distance(&self, p: Vec2) -> f64 {
        let ab = self.b - self.a;
        let ap = p - self.a;
        let len2 = ab.norm_sq();
        let t = if len2 > 0.0 { ((ap.x * ab.x + ap.y * ab.y) / len2).clamp(0.0, 1.0) } else { 0.0 };
        (self.a + ab * t - p).norm()
    }
}

/// Sum of value-noise octaves, smooth (C2) and band-limited.
struct ValueNoise {
    octaves: Vec<(f64, f64, usize, Vec<f64>)>, // (spacing, weight, lattice width, values)
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Self {
        let octave_table = [(32.0, 0.45), (16.0, 0.35), (8.0, 0.20)];
        let octaves = octave_table
            .iter()
            .map(|&(spacing, weight)| {
                let lw = (width as f64 / spacing) as usize + 3;
                let lh = (height as f64 / spacing) as usize + 3;
                let values = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
                (spacing, weight, lw, values)
            })
            .collect();
        ValueNoise { octaves }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        self.octaves
            .iter()
            .map(|(spacing, weight, lw, values)| {
                let gx = x / spacing;
                let gy = y / spacing;
                let x0 = math::floor(gx) as usize;
                let y0 = math::floor(gy) as usize;
                let tx = fade(gx - x0 as f64);
                let ty = fade(gy - y0 as f64);
                let v = |i: usize, j: usize| values[j * lw + i];
                let top = v(x0, y0) * (1.0 - tx) + v(x0 + 1, y0) * tx;
                let bottom = v(x0, y0 + 1) * (1.0 - tx) + v(x0 + 1, y0 + 1) * tx;
                weight * (top * (1.0 - ty) + bottom * ty)
            })
            .sum()
    }
}

fn random_walk(
    rng: &mut ChaCha8Rng,
    start: Vec2,
    mut angle: f64,
    steps: usize,
    step_len: f64,
    radius: f64,
    bounds: (f64, f64, f64, f64),
    out: &mut Vec<Segment>,
) -> Vec<Vec2> {
    let (x0, y0, x1, y1) = bounds;
    let mut pts = alloc::vec![start];
    let mut p = start;
    for _ in 0..steps {
        angle += rng.random_range(-0.35..0.35);
        let next = Vec2::new(p.x + step_len * libm::cos(angle), p.y + step_len * math::sin(angle));
        if next.x < x0 || next.x > x1 || next.y < y0 || next.y > y1 {
            break;
        }
        out.push(Segment { a: p, b: next, radius });
        pts.push(next);
        p = next;
    }
    pts
}

fn vessel_tree(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Vec<Segment> {
    let (w, h) = (width as f64, height as f64);
    let bounds = (0.12 * w, 0.1 * h, 0.88 * w, 0.9 * h);
    let mut segs = Vec::new();
    let start = Vec2::new(rng.random_range(0.35 * w..0.65 * w), 0.12 * h);
    let trunk = random_walk(rng, start, PI / 2.0, 14, h / 18.0, 3.0, bounds, &mut segs);
    let branches = 3.min(trunk.len().saturating_sub(2));
    for b in 0..branches {
        let at = trunk[1 + (b + 1) * (trunk.len() - 2) / (branches + 1)];
        let side = if b % 2 == 0 { 1.0 } else { -1.0 };
        let angle = PI / 2.0 - side * rng.random_range(0.6..1.1);
        random_walk(rng, at, angle, 7, h / 22.0, 2.2, bounds, &mut segs);
    }
    segs
}

fn render_field(ref_img: &[f64], w: usize, h: usize, cfg: &PhantomConfig, t: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * h);
    for qy in 0..h {
        for qx in 0..w {
            let q = Vec2::new(qx as f64, qy as f64);
            // Solve p + flow(p) = q; flow depends weakly on p.y so the
            // fixed-point iteration contracts fast.
            let mut p = q;
            for _ in 0..8 {
                p = q - cfg.truth_flow(p, t);
            }
            out.push(bilinear_clamped(ref_img, w, h, p.x, p.y).clamp(0.0, 1.0));
        }
    }
    out
}

/// Build a seeded phantom sequence with its ground truth.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<PhantomDataset> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut tex_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x7465_7874);
    let mut tree_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ 0x7472_6565);
    let noise = ValueNoise::new(&mut tex_rng, w, h);
    let segments = vessel_tree(&mut tree_rng, w, h);

    let mut texture = Vec::with_capacity(w * h);
    let mut contrast = Vec::with_capacity(w * h);
    let mut raw_mask = VesselMask::empty(w, h, MaskKind::Mask);
    for y in 0..h {
        for x in 0..w {
            let p = Vec2::new(x as f64, y as f64);
            let tv = (0.15 + 0.7 * noise.eval(x as f64, y as f64)).clamp(0.0, 1.0);
            let mut cover: f64 = 0.0;
            for s in &segments {
                let d = s.distance(p);
                if d <= s.radius {
                    raw_mask.set(x, y, true);
                }
                cover = cover.max((s.radius + 0.5 - d).clamp(0.0, 1.0));
            }
            texture.push(tv);
            contrast.push(tv * (1.0 - 0.5 * cover));
        }
    }
    let reference_mask = morph::closing3(&raw_mask);
    let reference_centerline = morph::zhang_suen(&reference_mask);

    let n = cfg.frame_count();
    let mut frames = Vec::with_capacity(n);
    let mut truth_flows = Vec::with_capacity(n);
    for t in 0..n {
        let contrasted = t < cfg.contrasted_frames;
        let mut field = DisplacementField::zeros(w, h);
        for y in 0..h {
            let v = cfg.truth_flow(Vec2::new(0.0, y as f64), t);
            field.vectors[y * w..(y + 1) * w].fill(v);
        }
        let src = if contrasted { &contrast } else { &texture };
        let pixels = if t == 0 { src.clone() } else { render_field(src, w, h, cfg, t) };
        frames.push(Frame::new(w, h, pixels)?.with_index(t, contrasted));
        truth_flows.push(field);
    }

    let gt_centerlines = (cfg.contrasted_frames..n)
        .map(|t| displace_mask(&reference_centerline, &truth_flows[t]))
        .collect();

    Ok(PhantomDataset {
        config: cfg.clone(),
        sequence: FluoroSequence::new(frames, 0, cfg.pixel_spacing_mm)?,
        truth_flows,
        reference_mask,
        reference_centerline,
        gt_centerlines,
        texture: Frame::new(w, h, texture)?,
    })
}

/// Move every set pixel by the field at that pixel, rounding to the nearest
/// pixel and dropping targets outside the grid.
pub fn displace_mask(mask: &VesselMask, field: &DisplacementField) -> VesselMask {
    let mut out = VesselMask::empty(mask.width(), mask.height(), mask.kind);
    for (x, y) in mask.points() {
        let d = field.at(x, y);
        let tx = math::round(x as f64 + d.x);
        let ty = math::round(y as f64 + d.y);
        if tx >= 0.0 && ty >= 0.0 && tx < mask.width() as f64 && ty < mask.height() as f64 {
            out.set(tx as usize, ty as usize, true);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomConfig {
        PhantomConfig { width: 96, height: 96, contrasted_frames: 4, live_frames: 4, ..Default::default() }
    }

    #[test]
    fn zero_amplitude_is_static() {
        let cfg = PhantomConfig { amplitude_px: 0.0, ..small() };
        let ds = generate_phantom(&cfg).unwrap();
        for f in &ds.truth_flows {
            assert!(f.vectors.iter().all(|v| *v == Vec2::ZERO));
        }
        let r = ds.sequence.reference();
        assert_eq!(ds.sequence.frames()[1].pixels(), r.pixels());
        for live in ds.sequence.live() {
            assert_eq!(live.pixels(), ds.texture.pixels());
        }
    }

    #[test]
    fn displacement_analytic_points() {
        let a = 6.0;
        let phase = 0.7;
        let uniform = PhantomConfig { gamma: 1.0, amplitude_px: a, phase, ..small() };
        let t = uniform.period_frames / 2.0;
        for y in [0.0, 40.0, 95.0] {
            let d = uniform.displacement(y, t);
            assert!(d.x.abs() < 1e-12);
            assert!((d.y - 0.4 * a * libm::sin(PI + phase)).abs() < 1e-12);
        }
        let graded = PhantomConfig { gamma: 0.0, amplitude_px: a, ..small() };
        let d = graded.displacement(graded.height as f64 / 2.0, graded.period_frames / 4.0);
        assert_eq!(d.x, a / 2.0);
    }

    #[test]
    fn rejects_large_amplitude() {
        let cfg = PhantomConfig { amplitude_px: 24.0, ..small() };
        assert!(matches!(generate_phantom(&cfg), Err(crate::Error::Config(_))));
    }

    #[test]
    fn reference_flow_is_zero_and_centerline_in_mask() {
        let ds = generate_phantom(&small()).unwrap();
        assert!(ds.truth_flows[0].vectors.iter().all(|v| *v == Vec2::ZERO));
        assert!(ds.reference_centerline.is_subset_of(&ds.reference_mask));
        assert!(ds.reference_centerline.count() > 20);
        assert_eq!(ds.gt_centerlines.len(), 4);
        assert_eq!(ds.sequence.contrasted().len(), 4);
    }

    #[test]
    fn gt_centerline_is_rounded_displacement() {
        let ds = generate_phantom(&small()).unwrap();
        for (k, gt) in ds.gt_centerlines.iter().enumerate() {
            let t = ds.config.contrasted_frames + k;
            let expect = displace_mask(&ds.reference_centerline, &ds.truth_flows[t]);
            assert_eq!(gt, &expect);
        }
    }

    #[test]
    fn live_frames_are_warped_texture() {
        let ds = generate_phantom(&small()).unwrap();
        let (w, h) = (ds.config.width, ds.config.height);
        for live in ds.sequence.live() {
            let t = live.index;
            let mut worst: f64 = 0.0;
            for y in 12..h - 12 {
                for x in 12..w - 12 {
                    let p = Vec2::new(x as f64, y as f64);
                    let q = p + ds.config.truth_flow(p, t);
                    let s = live.sample(q.x, q.y).unwrap();
                    worst = worst.max((s - ds.texture.get(x, y)).abs());
                }
            }
            assert!(worst <= 0.02, "frame {t}: photometric error {worst}");
        }
    }

    #[test]
    fn seeds_differ() {
        let a = generate_phantom(&small()).unwrap();
        let b = generate_phantom(&PhantomConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.sequence.reference().pixels(), b.sequence.reference().pixels());
        let a2 = generate_phantom(&small()).unwrap();
        assert_eq!(a.sequence.frames(), a2.sequence.frames());
    }
}
