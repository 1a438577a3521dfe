//! `key=value` configuration.
//!
//! One key per line, `#` starts a comment, surrounding whitespace is
//! trimmed. Unknown keys are errors. The same format serves run
//! configurations, sequence manifests and phantom settings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mrc_core::gpr::VarianceThreshold;
use mrc_core::{CornerParams, GprSettings, Kernel, LkParams, PhantomConfig, WarpParams};

use crate::error::{AppError, AppResult};

/// Parse `key=value` lines in order. Later duplicates win when applied.
pub fn parse_kv(text: &str) -> AppResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(AppError::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)));
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(AppError::Config(format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_kv_file(path: &Path) -> AppResult<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_kv(&text)
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> AppResult<T> {
    value.parse().map_err(|_| AppError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> AppResult<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(AppError::Config(format!("{key}: expected true/false, got {value:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regressor {
    Mrc,
    Gpr,
}

/// Tracked point layout: detected corners or a regular grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sparse,
    Dense,
}

pub struct KeyDoc {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(key: &'static str, default: &'static str, help: &'static str) -> KeyDoc {
    KeyDoc { key, default, help }
}

/// Every accepted key with its default.
pub const KEYS: &[KeyDoc] = &[
    key("sequence_dir", "", "directory holding frames and manifest"),
    key("manifest", "manifest.txt", "manifest file name inside sequence_dir"),
    key("mask", "", "reference vessel mask image; empty uses the manifest's mask"),
    key("output_dir", "out", "directory for generated files"),
    key("model_file", "model.bin", "serialized model path"),
    key("regressor", "mrc", "mrc | gpr"),
    key("mode", "sparse", "sparse | dense (grid points instead of corners)"),
    key("gof", "true", "Gaussian 3-sigma outlier filtering of candidates"),
    key("rho_th", "0.9", "Pearson threshold for keeping a pair, in (0,1]"),
    key("dense_stride", "8", "grid spacing in pixels for mode=dense"),
    key("max_corners", "200", "corner cap per set"),
    key("quality_level", "0.05", "corner threshold relative to the strongest response"),
    key("min_distance", "8", "minimum spacing between corners of one set, pixels"),
    key("block_size", "5", "structure tensor window, odd"),
    key("mask_dilation", "3", "mask dilation radius before vascular classification, pixels"),
    key("border_margin", "10", "corners closer than this to the border are dropped"),
    key("lk_window", "21", "tracking window, odd"),
    key("lk_levels", "3", "pyramid levels"),
    key("lk_iters", "30", "iterations per level"),
    key("lk_eps", "0.01", "convergence step, pixels"),
    key("lk_min_eig", "1e-6", "minimum structure tensor eigenvalue per window pixel"),
    key("warp_k", "4", "nearest anchors blended per mask pixel"),
    key("warp_power", "2", "inverse distance weighting exponent"),
    key("gpr_sigma_n", "0.01", "GP noise standard deviation"),
    key("gpr_kernel", "exponential", "exponential (exp of |d|) | squared (exp of d^2)"),
    key("gpr_vbar_th", "auto", "combined variance threshold; auto = 95th percentile of leave-one-out variances"),
    key("corrupt_fraction", "0", "fraction of live non-vascular tracks corrupted in ablate"),
    key("corrupt_px", "20", "corruption magnitude, pixels"),
    key("width", "256", "phantom width"),
    key("height", "256", "phantom height"),
    key("amplitude_px", "8", "phantom peak displacement, pixels"),
    key("period_frames", "12", "phantom breathing period, frames"),
    key("gamma", "0.5", "phantom motion scale at the top row"),
    key("phase", "1", "phantom vertical phase offset, radians"),
    key("contrasted_frames", "12", "phantom contrasted frame count"),
    key("live_frames", "20", "phantom live frame count"),
    key("seed", "1", "phantom and corruption seed"),
    key("pixel_spacing_mm", "1", "phantom pixel spacing"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sequence_dir: PathBuf,
    pub manifest: String,
    pub mask: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub model_file: PathBuf,
    pub regressor: Regressor,
    pub mode: Mode,
    pub gof: bool,
    pub rho_th: f64,
    pub dense_stride: usize,
    pub corners: CornerParams,
    pub lk: LkParams,
    pub warp: WarpParams,
    pub gpr: GprSettings,
    pub corrupt_fraction: f64,
    pub corrupt_px: f64,
    pub phantom: PhantomConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sequence_dir: PathBuf::new(),
            manifest: "manifest.txt".into(),
            mask: None,
            output_dir: "out".into(),
            model_file: "model.bin".into(),
            regressor: Regressor::Mrc,
            mode: Mode::Sparse,
            gof: true,
            rho_th: 0.9,
            dense_stride: 8,
            corners: CornerParams::default(),
            lk: LkParams::default(),
            warp: WarpParams::default(),
            gpr: GprSettings::default(),
            corrupt_fraction: 0.0,
            corrupt_px: 20.0,
            phantom: PhantomConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> AppResult<()> {
        let p = &mut self.phantom;
        match key {
            "sequence_dir" => self.sequence_dir = value.into(),
            "manifest" => self.manifest = value.into(),
            "mask" => self.mask = (!value.is_empty()).then(|| value.into()),
            "output_dir" => self.output_dir = value.into(),
            "model_file" => self.model_file = value.into(),
            "regressor" => {
                self.regressor = match value {
                    "mrc" => Regressor::Mrc,
                    "gpr" => Regressor::Gpr,
                    _ => return Err(AppError::Config(format!("regressor: expected mrc or gpr, got {value:?}"))),
                }
            }
            "mode" => {
                self.mode = match value {
                    "sparse" => Mode::Sparse,
                    "dense" => Mode::Dense,
                    _ => return Err(AppError::Config(format!("mode: expected sparse or dense, got {value:?}"))),
                }
            }
            "gof" => self.gof = parse_bool(key, value)?,
            "rho_th" => self.rho_th = parse_value(key, value)?,
            "dense_stride" => self.dense_stride = parse_value(key, value)?,
            "max_corners" => self.corners.max_corners = parse_value(key, value)?,
            "quality_level" => self.corners.quality_level = parse_value(key, value)?,
            "min_distance" => self.corners.min_distance = parse_value(key, value)?,
            "block_size" => self.corners.block_size = parse_value(key, value)?,
            "mask_dilation" => self.corners.mask_dilation = parse_value(key, value)?,
            "border_margin" => self.corners.border_margin = parse_value(key, value)?,
            "lk_window" => self.lk.window = parse_value(key, value)?,
            "lk_levels" => self.lk.pyramid_levels = parse_value(key, value)?,
            "lk_iters" => self.lk.max_iterations = parse_value(key, value)?,
            "lk_eps" => self.lk.epsilon = parse_value(key, value)?,
            "lk_min_eig" => self.lk.min_eig_threshold = parse_value(key, value)?,
            "warp_k" => self.warp.k = parse_value(key, value)?,
            "warp_power" => self.warp.power = parse_value(key, value)?,
            "gpr_sigma_n" => self.gpr.sigma_n = parse_value(key, value)?,
            "gpr_kernel" => {
                self.gpr.kernel = match value {
                    "exponential" => Kernel::Exponential,
                    "squared" => Kernel::Squared,
                    _ => return Err(AppError::Config(format!("gpr_kernel: expected exponential or squared, got {value:?}"))),
                }
            }
            "gpr_vbar_th" => {
                self.gpr.v_threshold = match value {
                    "auto" => VarianceThreshold::Auto,
                    v => VarianceThreshold::Fixed(parse_value(key, v)?),
                }
            }
            "corrupt_fraction" => self.corrupt_fraction = parse_value(key, value)?,
            "corrupt_px" => self.corrupt_px = parse_value(key, value)?,
            "width" => p.width = parse_value(key, value)?,
            "height" => p.height = parse_value(key, value)?,
            "amplitude_px" => p.amplitude_px = parse_value(key, value)?,
            "period_frames" => p.period_frames = parse_value(key, value)?,
            "gamma" => p.gamma = parse_value(key, value)?,
            "phase" => p.phase = parse_value(key, value)?,
            "contrasted_frames" => p.contrasted_frames = parse_value(key, value)?,
            "live_frames" => p.live_frames = parse_value(key, value)?,
            "seed" => p.seed = parse_value(key, value)?,
            "pixel_spacing_mm" => p.pixel_spacing_mm = parse_value(key, value)?,
            _ => return Err(AppError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> AppResult<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_file(path: &Path) -> AppResult<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply(&read_kv_file(path)?)?;
        Ok(cfg)
    }

    /// Range checks for every parameter group.
    pub fn validate(&self) -> AppResult<()> {
        self.corners.validate()?;
        self.lk.validate()?;
        self.warp.validate()?;
        if !(self.rho_th > 0.0 && self.rho_th <= 1.0) {
            return Err(AppError::Config(format!("rho_th must lie in (0,1], got {}", self.rho_th)));
        }
        if self.dense_stride == 0 {
            return Err(AppError::Config("dense_stride must be positive".into()));
        }
        if !(self.gpr.sigma_n >= 0.0 && self.gpr.sigma_n.is_finite()) {
            return Err(AppError::Config(format!("gpr_sigma_n must be finite and non-negative, got {}", self.gpr.sigma_n)));
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return Err(AppError::Config(format!("corrupt_fraction must lie in [0,1], got {}", self.corrupt_fraction)));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.sequence_dir.join(&self.manifest)
    }
}

/// Key reference for `--help`.
pub fn help_text() -> String {
    let mut s = String::from("Configuration keys (key=value, default in brackets):\n");
    for k in KEYS {
        let _ = writeln!(s, "  {:<18} [{}] {}", k.key, k.default, k.help);
    }
    s
}
