//! Scoring of predicted frames and the point-layout by filtering ablation.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use mrc_core::eval::{score_frame, FrameScore};
use mrc_core::{FluoroSequence, VesselMask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Mode, RunConfig};
use crate::error::{AppError, AppResult};
use crate::io::csv_f64;
use crate::pipeline::{corrupt_flow, learn, Predictor};
use crate::timing::millis;

/// Sequence, reference mask and one centerline per live frame.
pub struct Labeled<'a> {
    pub sequence: &'a FluoroSequence,
    pub mask: &'a VesselMask,
    pub gt: &'a [VesselMask],
}

/// Seeded generator for the corruption of one frame, shared across variants.
pub fn frame_rng(seed: u64, frame_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-frame scores CSV with mean and median summary rows.
pub fn scores_csv(scores: &[FrameScore], predict_ms: &[f64]) -> String {
    let mut s = String::from("frame_index,R,MD_mm,predict_ms\n");
    for (sc, t) in scores.iter().zip(predict_ms) {
        let _ = writeln!(s, "{},{},{},{}", sc.frame_index, csv_f64(sc.r), csv_f64(sc.md), csv_f64(*t));
    }
    let r: Vec<f64> = scores.iter().map(|s| s.r).collect();
    let md: Vec<f64> = scores.iter().map(|s| s.md).collect();
    if !scores.is_empty() {
        let _ = writeln!(s, "mean,{},{},{}", csv_f64(mean(&r)), csv_f64(mean(&md)), csv_f64(mean(predict_ms)));
        let _ = writeln!(s, "median,{},{},{}", csv_f64(median(&r)), csv_f64(median(&md)), csv_f64(median(predict_ms)));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub scores: Vec<FrameScore>,
    pub predict_times: Vec<Duration>,
    pub learn_time: Duration,
}

impl Run {
    pub fn mean_md(&self) -> f64 {
        mean(&self.scores.iter().map(|s| s.md).collect::<Vec<_>>())
    }

    pub fn median_md(&self) -> f64 {
        median(&self.scores.iter().map(|s| s.md).collect::<Vec<_>>())
    }

    pub fn mean_r(&self) -> f64 {
        mean(&self.scores.iter().map(|s| s.r).collect::<Vec<_>>())
    }

    pub fn predict_ms(&self) -> Vec<f64> {
        self.predict_times.iter().map(|d| millis(*d)).collect()
    }
}

/// Learn once, then predict and score every live frame with and without
/// filtering. Live non-vascular flows are corrupted per `cfg` before
/// regression; both variants see the same corruption.
pub fn run_pair(data: &Labeled, cfg: &RunConfig) -> AppResult<(Run, Run)> {
    let live = data.sequence.live();
    if live.len() != data.gt.len() {
        return Err(AppError::Data(format!("{} live frames but {} ground-truth centerlines", live.len(), data.gt.len())));
    }
    let learned = learn(data.sequence, data.mask, cfg)?;
    let mut runs = Vec::with_capacity(2);
    for gof in [true, false] {
        let vcfg = RunConfig { gof, ..cfg.clone() };
        let predictor = Predictor::new(&learned.model, data.sequence.reference(), data.mask, &vcfg)?;
        let mut scores = Vec::with_capacity(live.len());
        let mut times = Vec::with_capacity(live.len());
        if let Some(first) = live.first() {
            std::hint::black_box(predictor.predict(first)?);
        }
        for (frame, gt) in live.iter().zip(data.gt) {
            let start = Instant::now();
            let mut flow = predictor.track_live(frame)?;
            if cfg.corrupt_fraction > 0.0 {
                flow = corrupt_flow(&flow, cfg.corrupt_fraction, cfg.corrupt_px, &mut frame_rng(cfg.phantom.seed, frame.index));
            }
            let pred = predictor.from_flow(flow)?;
            times.push(start.elapsed());
            scores.push(score_frame(frame.index, gt, &pred.warped, data.sequence.pixel_spacing)?);
        }
        runs.push(Run { scores, predict_times: times, learn_time: learned.learn_time });
    }
    let off = runs.pop().unwrap();
    let on = runs.pop().unwrap();
    Ok((on, off))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: Mode,
    pub gof: bool,
    /// Mean over live frames, millimeters.
    pub md: f64,
    pub r: f64,
    /// Mean per-frame predict time, seconds.
    pub predict_time: f64,
    pub learn_time: f64,
}

pub fn run_ablation(data: &Labeled, cfg: &RunConfig) -> AppResult<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(4);
    for mode in [Mode::Sparse, Mode::Dense] {
        let (on, off) = run_pair(data, &RunConfig { mode, ..cfg.clone() })?;
        for (gof, run) in [(true, on), (false, off)] {
            rows.push(AblationRow {
                mode,
                gof,
                md: run.mean_md(),
                r: run.mean_r(),
                predict_time: mean(&run.predict_times.iter().map(Duration::as_secs_f64).collect::<Vec<_>>()),
                learn_time: run.learn_time.as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("mode,gof,MD,R,predict_time,learn_time\n");
    for r in rows {
        let mode = match r.mode {
            Mode::Sparse => "sparse",
            Mode::Dense => "dense",
        };
        let _ = writeln!(s, "{mode},{},{},{},{},{}", if r.gof { "on" } else { "off" }, csv_f64(r.md), csv_f64(r.r), csv_f64(r.predict_time), csv_f64(r.learn_time));
    }
    s
}
