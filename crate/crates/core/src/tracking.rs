//! Pyramidal Lucas-Kanade tracking of reference corners into other frames.
//!
//! Pyramids are built by 2x box-filter downsampling. At each level the
//! template is sampled bilinearly around the corner in the reference image
//! and the normal equations are iterated until the update norm drops below
//! `epsilon`. Coarse levels replicate edges when the window crosses the
//! border; the finest level rejects instead, so a track whose window leaves
//! the frame is reported invalid.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::features::min_eigenvalue;
use crate::geom::Vec2;
use crate::imaging::{bilinear, bilinear_clamped, check_same_shape, Frame};

#[derive(Debug, Clone, PartialEq)]
pub struct LkParams {
    /// Odd window side, pixels.
    pub window: usize,
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the per-iteration step norm, pixels.
    pub epsilon: f64,
    /// Track-quality gate on the finest-level structure tensor's smaller
    /// eigenvalue divided by the window area.
    pub min_eig_threshold: f64,
}

impl Default for LkParams {
    fn default() -> Self {
        LkParams { window: 21, pyramid_levels: 3, max_iterations: 30, epsilon: 0.01, min_eig_threshold: 1e-6 }
    }
}

impl LkParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 5 || self.window % 2 == 0 {
            bail!(Config, "LK window must be odd and >= 5, got {}", self.window);
        }
        if self.pyramid_levels == 0 {
            bail!(Config, "LK needs at least one pyramid level");
        }
        if !(self.epsilon > 0.0) {
            bail!(Config, "LK epsilon must be positive, got {}", self.epsilon);
        }
        if !(self.min_eig_threshold >= 0.0) {
            bail!(Config, "LK min_eig threshold must be non-negative");
        }
        Ok(())
    }

    pub fn half_window(&self) -> usize {
        self.window / 2
    }
}

/// Per-corner displacements from the reference frame to `target_index`.
///
/// Invalid entries hold `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSet {
    pub displacements: Vec<Vec2>,
    pub valid: Vec<bool>,
    pub target_index: usize,
}

impl FlowSet {
    pub fn new(displacements: Vec<Vec2>, valid: Vec<bool>, target_index: usize) -> Self {
        debug_assert_eq!(displacements.len(), valid.len());
        let displacements = displacements
            .into_iter()
            .zip(&valid)
            .map(|(d, ok)| if *ok { d } else { Vec2::ZERO })
            .collect();
        FlowSet { displacements, valid, target_index }
    }

    pub fn from_results(results: impl IntoIterator<Item = Option<Vec2>>, target_index: usize) -> Self {
        let (displacements, valid) = results
            .into_iter()
            .map(|r| match r {
                Some(d) => (d, true),
                None => (Vec2::ZERO, false),
            })
            .unzip();
        FlowSet { displacements, valid, target_index }
    }

    /// All-valid flow.
    pub fn exact(displacements: Vec<Vec2>, target_index: usize) -> Self {
        let valid = alloc::vec![true; displacements.len()];
        FlowSet { displacements, valid, target_index }
    }

    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<Vec2> {
        self.valid[i].then(|| self.displacements[i])
    }
}

#[derive(Debug, Clone)]
struct Level {
    w: usize,
    h: usize,
    img: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl Level {
    fn new(w: usize, h: usize, img: Vec<f64>, with_gradients: bool) -> Self {
        let (mut gx, mut gy) = (Vec::new(), Vec::new());
        if with_gradients {
            gx.reserve(w * h);
            gy.reserve(w * h);
            for y in 0..h {
                let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
                for x in 0..w {
                    let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
                    gx.push(0.5 * (img[y * w + xp] - img[y * w + xm]));
                    gy.push(0.5 * (img[yp * w + x] - img[ym * w + x]));
                }
            }
        }
        Level { w, h, img, gx, gy }
    }

    #[inline]
    fn sample(&self, data: &[f64], x: f64, y: f64, strict: bool) -> Option<f64> {
        if strict {
            bilinear(data, self.w, self.h, x, y)
        } else {
            Some(bilinear_clamped(data, self.w, self.h, x, y))
        }
    }
}

/// Image pyramid; level 0 is full resolution.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<Level>,
}

impl Pyramid {
    fn build(frame: &Frame, levels: usize, with_gradients: bool) -> Self {
        let mut out = Vec::with_capacity(levels);
        out.push(Level::new(frame.width(), frame.height(), frame.pixels().to_vec(), with_gradients));
        while out.len() < levels {
            let prev = out.last().unwrap();
            let (w, h) = (prev.w / 2, prev.h / 2);
            if w < 2 || h < 2 {
                break;
            }
            let mut img = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let i = 2 * y * prev.w + 2 * x;
                    img.push(0.25 * (prev.img[i] + prev.img[i + 1] + prev.img[i + prev.w] + prev.img[i + prev.w + 1]));
                }
            }
            out.push(Level::new(w, h, img, with_gradients));
        }
        Pyramid { levels: out }
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }
}

// Level-l coordinate of a level-0 position under 2x box downsampling.
#[inline]
fn to_level(p: Vec2, level: usize) -> Vec2 {
    let s = (1u64 << level) as f64;
    Vec2::new((p.x + 0.5) / s - 0.5, (p.y + 0.5) / s - 0.5)
}

/// Tracks corners of one reference frame into any number of frames.
#[derive(Debug, Clone)]
pub struct Tracker {
    reference: Pyramid,
    params: LkParams,
    width: usize,
    height: usize,
}

impl Tracker {
    pub fn new(reference: &Frame, params: &LkParams) -> Result<Self> {
        params.validate()?;
        Ok(Tracker {
            reference: Pyramid::build(reference, params.pyramid_levels, true),
            params: params.clone(),
            width: reference.width(),
            height: reference.height(),
        })
    }

    pub fn params(&self) -> &LkParams {
        &self.params
    }

    /// Pyramid of a target frame, shared by all corners tracked into it.
    pub fn target_pyramid(&self, cur: &Frame) -> Result<Pyramid> {
        if cur.width() != self.width || cur.height() != self.height {
            bail!(
                Structure,
                "target frame {}x{} does not match reference {}x{}",
                cur.width(),
                cur.height(),
                self.width,
                self.height
            );
        }
        Ok(Pyramid::build(cur, self.reference.levels(), false))
    }

    /// Track one corner. `None` marks a lost track.
    pub fn track_point(&self, cur: &Pyramid, pos: Vec2) -> Option<Vec2> {
        let half = self.params.half_window() as isize;
        let n = self.params.window * self.params.window;
        let mut tmpl = Vec::with_capacity(n);
        let mut guess = Vec2::ZERO;
        let top = self.reference.levels().min(cur.levels());
        for level in (0..top).rev() {
            let rl = &self.reference.levels[level];
            let cl = &cur.levels[level];
            let strict = level == 0;
            let u = to_level(pos, level);

            tmpl.clear();
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for dy in -half..=half {
                for dx in -half..=half {
                    let (x, y) = (u.x + dx as f64, u.y + dy as f64);
                    let t = rl.sample(&rl.img, x, y, strict)?;
                    let ix = rl.sample(&rl.gx, x, y, strict)?;
                    let iy = rl.sample(&rl.gy, x, y, strict)?;
                    sxx += ix * ix;
                    sxy += ix * iy;
                    syy += iy * iy;
                    tmpl.push((t, ix, iy));
                }
            }
            let det = sxx * syy - sxy * sxy;
            if strict && min_eigenvalue(sxx, sxy, syy) / (n as f64) < self.params.min_eig_threshold {
                return None;
            }
            if !(det > 1e-18 * (sxx + syy) * (sxx + syy)) || det <= 0.0 {
                if strict {
                    return None;
                }
                guess = guess * 2.0;
                continue;
            }

            let mut step = Vec2::ZERO;
            for _ in 0..self.params.max_iterations {
                let p = u + guess + step;
                let (mut bx, mut by) = (0.0, 0.0);
                let mut k = 0;
                for dy in -half..=half {
                    for dx in -half..=half {
                        let j = cl.sample(&cl.img, p.x + dx as f64, p.y + dy as f64, strict)?;
                        let (t, ix, iy) = tmpl[k];
                        let e = t - j;
                        bx += e * ix;
                        by += e * iy;
                        k += 1;
                    }
                }
                let eta = Vec2::new((syy * bx - sxy * by) / det, (sxx * by - sxy * bx) / det);
                step += eta;
                if eta.norm() < self.params.epsilon {
                    break;
                }
            }
            let d = guess + step;
            guess = if level > 0 { d * 2.0 } else { d };
        }
        let end = pos + guess;
        let h = half as f64;
        let inside = end.x - h >= 0.0
            && end.y - h >= 0.0
            && end.x + h <= (self.width - 1) as f64
            && end.y + h <= (self.height - 1) as f64;
        (inside && guess.is_finite()).then_some(guess)
    }

    pub fn track(&self, cur: &Frame, corners: &[Vec2]) -> Result<FlowSet> {
        let pyr = self.target_pyramid(cur)?;
        Ok(FlowSet::from_results(corners.iter().map(|c| self.track_point(&pyr, *c)), cur.index))
    }
}

/// Track `corners` from `reference` into `cur`.
pub fn track_sparse(reference: &Frame, cur: &Frame, corners: &[Vec2], params: &LkParams) -> Result<FlowSet> {
    check_same_shape(reference, cur)?;
    Tracker::new(reference, params)?.track(cur, corners)
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn full(frame: &Frame) -> Self {
        Roi { x: 0, y: 0, width: frame.width(), height: frame.height() }
    }

    /// Shrink by `m` on every side.
    pub fn inset(self, m: usize) -> Self {
        Roi {
            x: self.x + m,
            y: self.y + m,
            width: self.width.saturating_sub(2 * m),
            height: self.height.saturating_sub(2 * m),
        }
    }

    /// Grid points at `stride`, row-major, starting at the top-left corner.
    pub fn grid(&self, stride: usize) -> Vec<Vec2> {
        let stride = stride.max(1);
        (self.y..self.y + self.height)
            .step_by(stride)
            .flat_map(|y| (self.x..self.x + self.width).step_by(stride).map(move |x| Vec2::new(x as f64, y as f64)))
            .collect()
    }
}

/// Flow at every grid point of a rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFlow {
    pub points: Vec<Vec2>,
    pub flow: FlowSet,
}

/// Dense-grid mode: [`track_sparse`] on every `stride`-th pixel of `roi`.
pub fn track_dense_grid(reference: &Frame, cur: &Frame, roi: Roi, stride: usize, params: &LkParams) -> Result<GridFlow> {
    if stride == 0 {
        bail!(Config, "grid stride must be >= 1");
    }
    if roi.width == 0 || roi.height == 0 || roi.x + roi.width > reference.width() || roi.y + roi.height > reference.height() {
        bail!(Structure, "roi {roi:?} not within {}x{} frame", reference.width(), reference.height());
    }
    let points = roi.grid(stride);
    let flow = track_sparse(reference, cur, &points, params)?;
    Ok(GridFlow { points, flow })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, PhantomConfig};

    fn texture(w: usize, h: usize) -> Frame {
        let cfg = PhantomConfig { width: w, height: h, amplitude_px: 0.0, contrasted_frames: 1, live_frames: 0, seed: 5, ..Default::default() };
        generate_phantom(&cfg).unwrap().texture
    }

    fn shifted(f: &Frame, sx: isize, sy: isize) -> Frame {
        let (w, h) = (f.width() as isize, f.height() as isize);
        let px = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                f.get(((x - sx).rem_euclid(w)) as usize, ((y - sy).rem_euclid(h)) as usize)
            })
            .collect();
        Frame::new(f.width(), f.height(), px).unwrap()
    }

    fn interior(w: usize, h: usize) -> Vec<Vec2> {
        Roi { x: 0, y: 0, width: w, height: h }.inset(24).grid(9)
    }

    #[test]
    fn identity_is_exact_zero() {
        let f = texture(96, 96);
        let pts = interior(96, 96);
        let flow = track_sparse(&f, &f, &pts, &LkParams::default()).unwrap();
        assert!(flow.valid.iter().all(|v| *v));
        assert!(flow.displacements.iter().all(|d| *d == Vec2::ZERO));
    }

    #[test]
    fn integer_circular_shift() {
        let f = texture(128, 128);
        let g = shifted(&f, 3, 2);
        let pts = interior(128, 128);
        let flow = track_sparse(&f, &g, &pts, &LkParams::default()).unwrap();
        let mut checked = 0;
        for d in flow.displacements.iter().zip(&flow.valid).filter(|(_, v)| **v).map(|(d, _)| d) {
            assert!((d.x - 3.0).abs() < 0.05 && (d.y - 2.0).abs() < 0.05, "{d:?}");
            checked += 1;
        }
        assert!(checked > pts.len() / 2);
    }

    #[test]
    fn half_pixel_bilinear_shift() {
        let f = texture(96, 96);
        let px = (0..96 * 96)
            .map(|i| {
                let (x, y) = ((i % 96) as f64, (i / 96) as f64);
                f.sample_clamped(x - 0.5, y)
            })
            .collect();
        let g = Frame::new(96, 96, px).unwrap();
        let flow = track_sparse(&f, &g, &interior(96, 96), &LkParams::default()).unwrap();
        for (d, _) in flow.displacements.iter().zip(&flow.valid).filter(|(_, v)| **v) {
            assert!((d.x - 0.5).abs() < 0.1 && d.y.abs() < 0.1, "{d:?}");
        }
        assert!(flow.valid_count() > 0);
    }

    #[test]
    fn window_leaving_frame_is_invalid() {
        let f = texture(64, 64);
        let flow = track_sparse(&f, &f, &[Vec2::new(3.0, 30.0), Vec2::new(30.0, 30.0)], &LkParams::default()).unwrap();
        assert_eq!(flow.valid, [false, true]);
        assert_eq!(flow.displacements[0], Vec2::ZERO);
    }

    #[test]
    fn flat_patch_fails_quality_gate() {
        let f = Frame::filled(64, 64, 0.3).unwrap();
        let flow = track_sparse(&f, &f, &[Vec2::new(32.0, 32.0)], &LkParams::default()).unwrap();
        assert_eq!(flow.valid, [false]);
    }

    #[test]
    fn dimension_mismatch() {
        let a = Frame::filled(64, 64, 0.3).unwrap();
        let b = Frame::filled(64, 63, 0.3).unwrap();
        assert!(matches!(track_sparse(&a, &b, &[], &LkParams::default()), Err(crate::Error::Structure(_))));
    }

    #[test]
    fn dense_grid_shapes_and_shift() {
        let f = texture(128, 128);
        let roi = Roi { x: 30, y: 30, width: 60, height: 60 };
        let same = track_dense_grid(&f, &f, roi, 10, &LkParams::default()).unwrap();
        assert_eq!(same.points.len(), 36);
        assert!(same.flow.displacements.iter().all(|d| *d == Vec2::ZERO));

        let column = track_dense_grid(&f, &f, roi, roi.width, &LkParams::default()).unwrap();
        assert!(column.points.iter().all(|p| p.x == 30.0));
        assert_eq!(column.points.len(), 1);

        let g = shifted(&f, 3, 2);
        let grid = track_dense_grid(&f, &g, roi, 6, &LkParams::default()).unwrap();
        let median = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        let ok: Vec<Vec2> = grid.flow.displacements.iter().zip(&grid.flow.valid).filter(|(_, v)| **v).map(|(d, _)| *d).collect();
        assert!((median(ok.iter().map(|d| d.x).collect()) - 3.0).abs() < 0.05);
        assert!((median(ok.iter().map(|d| d.y).collect()) - 2.0).abs() < 0.05);
        assert!(track_dense_grid(&f, &f, roi, 0, &LkParams::default()).is_err());
        assert!(track_dense_grid(&f, &f, Roi { x: 100, y: 0, width: 40, height: 10 }, 1, &LkParams::default()).is_err());
    }
}
