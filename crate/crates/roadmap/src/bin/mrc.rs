//! `mrc`: phantom generation, training, live prediction, scoring and the
//! ablation table.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mrc_core::eval::score_frame;
use mrc_core::phantom::generate_phantom;
use mrc_core::MaskKind;
use mrc_roadmap::ablation::{ablation_csv, run_ablation, scores_csv, Labeled};
use mrc_roadmap::config::{help_text, parse_kv, RunConfig};
use mrc_roadmap::io::{self, load_inputs};
use mrc_roadmap::pipeline::{learn, Model, Predictor};
use mrc_roadmap::timing::{millis, time_once};
use mrc_roadmap::{AppError, AppResult};

#[derive(Parser)]
#[command(name = "mrc", version, about = "Vascular respiratory motion compensation for X-ray roadmapping", after_help = help_text())]
struct Cli {
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for tracking and GP fitting (0 = all cores).
    #[arg(long, default_value_t = 0, global = true)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic sequence with ground truth to output_dir.
    Phantom,
    /// Learn the model from the contrasted frames and write model_file.
    Train,
    /// Predict every live frame; writes warped masks, overlays and scores.csv.
    Predict {
        /// Model file; defaults to the model_file key.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score warped_*.pgm in output_dir against the manifest's centerlines.
    Evaluate,
    /// Sparse/dense by GOF on/off table; uses a phantom when sequence_dir is unset.
    Ablate,
}

fn load_config(cli: &Cli) -> AppResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply(&parse_kv(o)?)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_phantom(cfg: &RunConfig) -> AppResult<()> {
    let ds = generate_phantom(&cfg.phantom)?;
    io::write_phantom(&ds, &cfg.output_dir)?;
    println!("wrote {} frames to {}", ds.sequence.frames().len(), cfg.output_dir.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> AppResult<()> {
    let inputs = load_inputs(cfg)?;
    let learned = learn(&inputs.sequence, &inputs.mask, cfg)?;
    io::write_file(&cfg.model_file, &learned.model.encode())?;
    let c = learned.model.corners();
    println!(
        "trained on {} frames: {} vascular, {} non-vascular points, learn {:.3} s; wrote {}",
        inputs.sequence.contrasted_count(),
        c.n_vascular(),
        c.n_non_vascular(),
        learned.learn_time.as_secs_f64(),
        cfg.model_file.display()
    );
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, model: Option<PathBuf>) -> AppResult<()> {
    let path = model.unwrap_or_else(|| cfg.model_file.clone());
    let buf = std::fs::read(&path).map_err(|e| AppError::io(&path, e))?;
    let model = Model::decode(&buf)?;
    let inputs = load_inputs(cfg)?;
    let predictor = Predictor::new(&model, inputs.sequence.reference(), &inputs.mask, cfg)?;
    let live = inputs.sequence.live();
    let mut scores = Vec::new();
    let mut times = Vec::new();
    let mut rows = String::from("frame_index,valid_vascular,predict_ms\n");
    for (k, frame) in live.iter().enumerate() {
        let (pred, t) = time_once(|| predictor.predict(frame));
        let pred = pred?;
        io::write_mask_pgm(&pred.warped, &cfg.output_dir.join(format!("warped_{:04}.pgm", frame.index)))?;
        io::write_overlay(frame, &pred.warped, &cfg.output_dir.join(format!("overlay_{:04}.png", frame.index)))?;
        rows += &format!("{},{},{}\n", frame.index, pred.vascular.valid_count(), io::csv_f64(millis(t)));
        if let Some(gt) = inputs.gt.as_ref().and_then(|g| g.get(k)) {
            scores.push(score_frame(frame.index, gt, &pred.warped, inputs.sequence.pixel_spacing)?);
            times.push(millis(t));
        }
    }
    io::write_file(&cfg.output_dir.join("predictions.csv"), rows.as_bytes())?;
    if !scores.is_empty() {
        let csv = scores_csv(&scores, &times);
        io::write_file(&cfg.output_dir.join("scores.csv"), csv.as_bytes())?;
        print!("{csv}");
    }
    println!("predicted {} live frames into {}", live.len(), cfg.output_dir.display());
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig) -> AppResult<()> {
    let inputs = load_inputs(cfg)?;
    let Some(gt) = inputs.gt else {
        return Err(AppError::Config("manifest has no gt_centerline_glob".into()));
    };
    let warped = io::glob_files(&cfg.output_dir, "warped_*.pgm")?;
    if warped.len() != gt.len() {
        return Err(AppError::Data(format!("{} warped masks but {} ground-truth centerlines", warped.len(), gt.len())));
    }
    let live = inputs.sequence.live();
    let mut scores = Vec::with_capacity(gt.len());
    for ((p, g), frame) in warped.iter().zip(&gt).zip(live) {
        let m = io::read_mask(p, MaskKind::Mask)?;
        scores.push(score_frame(frame.index, g, &m, inputs.sequence.pixel_spacing)?);
    }
    let csv = scores_csv(&scores, &vec![f64::NAN; scores.len()]);
    io::write_file(&cfg.output_dir.join("evaluation.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> AppResult<()> {
    let rows = if cfg.sequence_dir.as_os_str().is_empty() {
        let ds = generate_phantom(&cfg.phantom)?;
        let data = Labeled { sequence: &ds.sequence, mask: &ds.reference_mask, gt: &ds.gt_centerlines };
        run_ablation(&data, cfg)?
    } else {
        let inputs = load_inputs(cfg)?;
        let Some(gt) = &inputs.gt else {
            return Err(AppError::Config("manifest has no gt_centerline_glob".into()));
        };
        run_ablation(&Labeled { sequence: &inputs.sequence, mask: &inputs.mask, gt }, cfg)?
    };
    let csv = ablation_csv(&rows);
    io::write_file(&cfg.output_dir.join("ablation.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli) -> AppResult<()> {
    let cfg = load_config(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Phantom => cmd_phantom(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Predict { model } => cmd_predict(&cfg, model),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Ablate => cmd_ablate(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
