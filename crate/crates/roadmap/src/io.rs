//! Frames, masks and sequences on disk.
//!
//! Grayscale input is binary PGM (`P5`, 8 or 16 bit) or PNG; intensities
//! are divided by the format's maximum value. Masks are any such image with
//! nonzero pixels set. Overlays are 8-bit RGB PNG.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Rgb};
use mrc_core::codec;
use mrc_core::imaging::DisplacementField;
use mrc_core::{FluoroSequence, Frame, MaskKind, PhantomDataset, VesselMask};

use crate::config::{parse_value, read_kv_file, RunConfig};
use crate::error::{AppError, AppResult};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Raw grayscale raster with its maximum value.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub max_value: u16,
    pub samples: Vec<u16>,
}

impl Gray {
    pub fn to_frame(&self) -> AppResult<Frame> {
        let scale = 1.0 / self.max_value as f64;
        let px = self.samples.iter().map(|v| (*v as f64 * scale).min(1.0)).collect();
        Ok(Frame::new(self.width, self.height, px)?)
    }

    pub fn to_mask(&self, kind: MaskKind) -> AppResult<VesselMask> {
        Ok(VesselMask::from_bits(self.width, self.height, self.samples.iter().map(|v| *v != 0).collect(), kind)?)
    }
}

fn header_token(buf: &[u8], pos: &mut usize) -> Option<usize> {
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < buf.len() && buf[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&buf[start..*pos]).ok()?.parse().ok()
}

pub fn decode_pgm(buf: &[u8]) -> Result<Gray, String> {
    if !buf.starts_with(b"P5") {
        return Err("not a binary PGM (P5)".into());
    }
    let mut pos = 2;
    let width = header_token(buf, &mut pos).ok_or("bad width")?;
    let height = header_token(buf, &mut pos).ok_or("bad height")?;
    let max = header_token(buf, &mut pos).ok_or("bad max value")?;
    if width == 0 || height == 0 {
        return Err(format!("empty image {width}x{height}"));
    }
    if max == 0 || max > 65535 {
        return Err(format!("max value {max} outside 1..=65535"));
    }
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        return Err("missing raster separator".into());
    }
    pos += 1;
    let n = width.checked_mul(height).ok_or("size overflow")?;
    let bytes = if max < 256 { 1 } else { 2 };
    let raster = &buf[pos..];
    if raster.len() < n * bytes {
        return Err(format!("raster truncated: {} of {} bytes", raster.len(), n * bytes));
    }
    let samples: Vec<u16> = if bytes == 1 {
        raster[..n].iter().map(|b| *b as u16).collect()
    } else {
        raster[..2 * n].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    if samples.iter().any(|s| *s as usize > max) {
        return Err(format!("sample exceeds max value {max}"));
    }
    Ok(Gray { width, height, max_value: max as u16, samples })
}

pub fn encode_pgm(g: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", g.width, g.height, g.max_value).into_bytes();
    if g.max_value < 256 {
        out.extend(g.samples.iter().map(|v| *v as u8));
    } else {
        out.extend(g.samples.iter().flat_map(|v| v.to_be_bytes()));
    }
    out
}

/// Quantize a frame to `max_value` levels.
pub fn frame_to_gray(frame: &Frame, max_value: u16) -> Gray {
    let m = max_value as f64;
    Gray {
        width: frame.width(),
        height: frame.height(),
        max_value,
        samples: frame.pixels().iter().map(|v| (v * m).round() as u16).collect(),
    }
}

pub fn mask_to_gray(mask: &VesselMask) -> Gray {
    Gray {
        width: mask.width(),
        height: mask.height(),
        max_value: 255,
        samples: mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect(),
    }
}

pub fn decode_png(buf: &[u8]) -> Result<Gray, String> {
    let img = image::load_from_memory_with_format(buf, ImageFormat::Png).map_err(|e| e.to_string())?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    if img.color().bytes_per_pixel() / img.color().channel_count() > 1 {
        let l = img.into_luma16();
        Ok(Gray { width, height, max_value: u16::MAX, samples: l.into_raw() })
    } else {
        let l = img.into_luma8();
        Ok(Gray { width, height, max_value: 255, samples: l.into_raw().into_iter().map(u16::from).collect() })
    }
}

/// Read a PGM or PNG file, chosen by its signature.
pub fn read_gray(path: &Path) -> AppResult<Gray> {
    let buf = fs::read(path).map_err(|e| AppError::io(path, e))?;
    let decoded = if buf.starts_with(PNG_SIGNATURE) { decode_png(&buf) } else { decode_pgm(&buf) };
    decoded.map_err(|message| AppError::Image { path: path.into(), message })
}

pub fn read_frame(path: &Path) -> AppResult<Frame> {
    read_gray(path)?.to_frame()
}

pub fn read_mask(path: &Path, kind: MaskKind) -> AppResult<VesselMask> {
    read_gray(path)?.to_mask(kind)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> AppResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn write_frame_pgm(frame: &Frame, path: &Path, max_value: u16) -> AppResult<()> {
    write_file(path, &encode_pgm(&frame_to_gray(frame, max_value)))
}

pub fn write_mask_pgm(mask: &VesselMask, path: &Path) -> AppResult<()> {
    write_file(path, &encode_pgm(&mask_to_gray(mask)))
}

/// Frame in gray with mask pixels tinted red.
pub fn overlay_rgb(frame: &Frame, mask: &VesselMask) -> AppResult<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    if !mask.matches(frame) {
        return Err(AppError::Data(format!(
            "mask {}x{} does not match frame {}x{}",
            mask.width(),
            mask.height(),
            frame.width(),
            frame.height()
        )));
    }
    let (w, h) = (frame.width(), frame.height());
    let q = |v: f64| (255.0 * v).round() as u8;
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = frame.get(x as usize, y as usize);
        if mask.get(x as usize, y as usize) {
            Rgb([q(0.5 * v + 0.5), q(0.5 * v), q(0.5 * v)])
        } else {
            let g = q(v);
            Rgb([g, g, g])
        }
    }))
}

pub fn write_overlay(frame: &Frame, mask: &VesselMask, path: &Path) -> AppResult<()> {
    let img = overlay_rgb(frame, mask)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    img.save_with_format(path, ImageFormat::Png).map_err(|e| AppError::Image { path: path.into(), message: e.to_string() })
}

/// Sequence description read from `manifest.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub contrasted_count: usize,
    pub reference_index: usize,
    pub pixel_spacing_mm: f64,
    /// Glob, relative to the sequence directory, matched in sorted order.
    pub frame_glob: String,
    pub mask: Option<String>,
    /// Ground-truth centerlines of the live frames, in live order.
    pub gt_centerline_glob: Option<String>,
}

impl Manifest {
    pub fn parse(pairs: &[(String, String)]) -> AppResult<Self> {
        let mut contrasted = None;
        let mut reference = 0;
        let mut spacing = 1.0;
        let mut glob = None;
        let mut mask = None;
        let mut gt = None;
        for (k, v) in pairs {
            match k.as_str() {
                "contrasted_count" => contrasted = Some(parse_value(k, v)?),
                "reference_index" => reference = parse_value(k, v)?,
                "pixel_spacing_mm" => spacing = parse_value(k, v)?,
                "frame_glob" => glob = Some(v.clone()),
                "mask" => mask = Some(v.clone()),
                "gt_centerline_glob" => gt = Some(v.clone()),
                _ => return Err(AppError::Config(format!("manifest: unknown key {k:?}"))),
            }
        }
        Ok(Manifest {
            contrasted_count: contrasted.ok_or_else(|| AppError::Config("manifest: contrasted_count missing".into()))?,
            reference_index: reference,
            pixel_spacing_mm: spacing,
            frame_glob: glob.ok_or_else(|| AppError::Config("manifest: frame_glob missing".into()))?,
            mask,
            gt_centerline_glob: gt,
        })
    }

    pub fn read(path: &Path) -> AppResult<Self> {
        Manifest::parse(&read_kv_file(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "contrasted_count={}\nreference_index={}\npixel_spacing_mm={}\nframe_glob={}\n",
            self.contrasted_count, self.reference_index, self.pixel_spacing_mm, self.frame_glob
        );
        if let Some(m) = &self.mask {
            s += &format!("mask={m}\n");
        }
        if let Some(g) = &self.gt_centerline_glob {
            s += &format!("gt_centerline_glob={g}\n");
        }
        s
    }
}

/// Files in `dir` matching `pattern`, sorted.
pub fn glob_files(dir: &Path, pattern: &str) -> AppResult<Vec<PathBuf>> {
    let full = dir.join(pattern);
    let full = full.to_str().ok_or_else(|| AppError::Config(format!("non UTF-8 path {}", full.display())))?;
    let mut out: Vec<PathBuf> = glob::glob(full)
        .map_err(|e| AppError::Config(format!("bad glob {pattern:?}: {e}")))?
        .filter_map(Result::ok)
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    Ok(out)
}

pub fn load_sequence(dir: &Path, manifest: &Manifest) -> AppResult<FluoroSequence> {
    let paths = glob_files(dir, &manifest.frame_glob)?;
    if paths.len() < manifest.contrasted_count {
        return Err(AppError::Data(format!(
            "manifest declares {} contrasted frames but {} images match {:?} in {}",
            manifest.contrasted_count,
            paths.len(),
            manifest.frame_glob,
            dir.display()
        )));
    }
    let frames = paths
        .iter()
        .enumerate()
        .map(|(i, p)| Ok(read_frame(p)?.with_index(i, i < manifest.contrasted_count)))
        .collect::<AppResult<Vec<_>>>()?;
    Ok(FluoroSequence::new(frames, manifest.reference_index, manifest.pixel_spacing_mm)?)
}

/// Ground-truth centerlines declared by the manifest, in live order.
pub fn load_gt_centerlines(dir: &Path, manifest: &Manifest) -> AppResult<Option<Vec<VesselMask>>> {
    let Some(pattern) = &manifest.gt_centerline_glob else { return Ok(None) };
    let masks = glob_files(dir, pattern)?
        .iter()
        .map(|p| read_mask(p, MaskKind::Centerline))
        .collect::<AppResult<Vec<_>>>()?;
    Ok(Some(masks))
}

/// Everything needed to train, predict and score one sequence directory.
pub struct SequenceInputs {
    pub manifest: Manifest,
    pub sequence: FluoroSequence,
    pub mask: VesselMask,
    pub gt: Option<Vec<VesselMask>>,
}

/// Load the sequence, reference mask (the run's `mask` key wins over the
/// manifest's) and optional ground truth.
pub fn load_inputs(cfg: &RunConfig) -> AppResult<SequenceInputs> {
    let dir = &cfg.sequence_dir;
    if dir.as_os_str().is_empty() {
        return Err(AppError::Config("sequence_dir is not set".into()));
    }
    let manifest = Manifest::read(&cfg.manifest_path())?;
    let sequence = load_sequence(dir, &manifest)?;
    let mask_path = match (&cfg.mask, &manifest.mask) {
        (Some(p), _) => p.clone(),
        (None, Some(m)) => dir.join(m),
        (None, None) => return Err(AppError::Config("no reference mask: set mask or add it to the manifest".into())),
    };
    let mask = read_mask(&mask_path, MaskKind::Mask)?;
    if !mask.matches(sequence.reference()) {
        return Err(AppError::Data(format!("mask {} does not match the frame size", mask_path.display())));
    }
    let gt = load_gt_centerlines(dir, &manifest)?;
    Ok(SequenceInputs { manifest, sequence, mask, gt })
}

pub fn write_flows(fields: &[DisplacementField], path: &Path) -> AppResult<()> {
    write_file(path, &codec::encode_flows(fields)?)
}

pub fn read_flows(path: &Path) -> AppResult<Vec<DisplacementField>> {
    let buf = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Ok(codec::decode_flows(&buf)?)
}

/// Write a phantom as a loadable sequence directory: 16-bit frames, the
/// reference mask, live centerlines, truth flows and the manifest.
pub fn write_phantom(ds: &PhantomDataset, dir: &Path) -> AppResult<Manifest> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    for f in ds.sequence.frames() {
        write_frame_pgm(f, &dir.join(format!("frame_{:04}.pgm", f.index)), u16::MAX)?;
    }
    write_mask_pgm(&ds.reference_mask, &dir.join("reference_mask.pgm"))?;
    write_mask_pgm(&ds.reference_centerline, &dir.join("reference_centerline.pgm"))?;
    for (i, gt) in ds.gt_centerlines.iter().enumerate() {
        let t = ds.config.contrasted_frames + i;
        write_mask_pgm(gt, &dir.join(format!("gt_{t:04}.pgm")))?;
    }
    write_flows(&ds.truth_flows, &dir.join("truth_flows.bin"))?;
    let c = &ds.config;
    let cfg = format!(
        "width={}\nheight={}\namplitude_px={}\nperiod_frames={}\ngamma={}\nphase={}\ncontrasted_frames={}\nlive_frames={}\nseed={}\npixel_spacing_mm={}\n",
        c.width, c.height, c.amplitude_px, c.period_frames, c.gamma, c.phase, c.contrasted_frames, c.live_frames, c.seed, c.pixel_spacing_mm
    );
    write_file(&dir.join("phantom.txt"), cfg.as_bytes())?;
    let manifest = Manifest {
        contrasted_count: c.contrasted_frames,
        reference_index: ds.sequence.reference_index(),
        pixel_spacing_mm: c.pixel_spacing_mm,
        frame_glob: "frame_*.pgm".into(),
        mask: Some("reference_mask.pgm".into()),
        gt_centerline_glob: Some("gt_*.pgm".into()),
    };
    write_file(&dir.join("manifest.txt"), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

/// CSV field formatting with `.` decimals and full round-trip precision.
pub fn csv_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}
