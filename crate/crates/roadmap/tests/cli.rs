use std::path::Path;
use std::process::{Command, Output};

fn mrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrc")).args(args).output().unwrap()
}

fn set(kv: String) -> [String; 2] {
    ["--set".into(), kv]
}

fn run(sets: &[String], cmd: &[&str]) -> Output {
    let mut args: Vec<String> = sets.iter().flat_map(|s| set(s.clone())).collect();
    args.extend(cmd.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    mrc(&refs)
}

fn small(dir: &Path, seed: u64, amplitude: f64) -> Vec<String> {
    vec![
        format!("output_dir={}", dir.display()),
        "width=128".into(),
        "height=128".into(),
        "contrasted_frames=6".into(),
        "live_frames=4".into(),
        format!("seed={seed}"),
        format!("amplitude_px={amplitude}"),
    ]
}

fn phantom(dir: &Path, seed: u64, amplitude: f64) {
    let out = run(&small(dir, seed, amplitude), &["phantom"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn phantom_is_deterministic() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    phantom(a.path(), 7, 4.0);
    phantom(b.path(), 7, 4.0);
    phantom(c.path(), 8, 4.0);
    for name in ["frame_0000.pgm", "frame_0008.pgm", "truth_flows.bin", "reference_mask.pgm", "gt_0006.pgm", "manifest.txt"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    assert_ne!(read(a.path(), "frame_0000.pgm"), read(c.path(), "frame_0000.pgm"));
}

#[test]
fn zero_amplitude_freezes_live_frames() {
    let d = tempfile::tempdir().unwrap();
    phantom(d.path(), 3, 0.0);
    let first = read(d.path(), "frame_0006.pgm");
    for t in 7..10 {
        assert_eq!(read(d.path(), &format!("frame_{t:04}.pgm")), first);
    }
}

#[test]
fn train_predict_evaluate() {
    let d = tempfile::tempdir().unwrap();
    phantom(d.path(), 1, 4.0);
    let out_dir = d.path().join("out");
    let mut sets = small(&out_dir, 1, 4.0);
    sets.push(format!("sequence_dir={}", d.path().display()));
    sets.push(format!("model_file={}", d.path().join("model.bin").display()));
    let o = run(&sets, &["train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(&read(d.path(), "model.bin")[..4], b"MRC1");

    let o = run(&sets, &["predict"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let preds = String::from_utf8(read(&out_dir, "predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 4);
    let scores = String::from_utf8(read(&out_dir, "scores.csv")).unwrap();
    assert_eq!(scores.lines().next().unwrap(), "frame_index,R,MD_mm,predict_ms");
    assert_eq!(scores.lines().count(), 1 + 4 + 2);
    for t in 6..10 {
        assert!(out_dir.join(format!("warped_{t:04}.pgm")).exists());
        assert!(out_dir.join(format!("overlay_{t:04}.png")).exists());
    }

    let o = run(&sets, &["evaluate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval = String::from_utf8(read(&out_dir, "evaluation.csv")).unwrap();
    assert_eq!(eval.lines().count(), 1 + 4 + 2);
    let md = |csv: &str| -> Vec<String> { csv.lines().skip(1).take(4).map(|l| l.split(',').nth(2).unwrap().to_string()).collect() };
    assert_eq!(md(&eval), md(&scores));

    let o = run(&sets, &["predict", "--model", d.path().join("missing.bin").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gpr_model_magic() {
    let d = tempfile::tempdir().unwrap();
    phantom(d.path(), 2, 4.0);
    let mut sets = small(d.path(), 2, 4.0);
    sets.push(format!("sequence_dir={}", d.path().display()));
    sets.push(format!("model_file={}", d.path().join("gpr.bin").display()));
    sets.push("regressor=gpr".into());
    sets.push("max_corners=20".into());
    let o = run(&sets, &["train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(&read(d.path(), "gpr.bin")[..4], b"GPR1");
}

#[test]
fn strict_threshold_is_training_failure() {
    let d = tempfile::tempdir().unwrap();
    phantom(d.path(), 1, 4.0);
    let mut sets = small(d.path(), 1, 4.0);
    sets.push(format!("sequence_dir={}", d.path().display()));
    sets.push(format!("model_file={}", d.path().join("model.bin").display()));
    sets.push("rho_th=1.0".into());
    let o = run(&sets, &["train"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).to_lowercase().contains("training failure"), "{}", stderr(&o));
    assert!(!d.path().join("model.bin").exists());
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(mrc(&["--set", "no_such_key=1", "phantom"]).status.code(), Some(2));
    assert_eq!(mrc(&["--set", "rho_th=abc", "phantom"]).status.code(), Some(2));
    assert_eq!(mrc(&["--set", "rho_th=0", "phantom"]).status.code(), Some(2));
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\nwidth = 96\nbogus line\n").unwrap();
    assert_eq!(mrc(&["--config", cfg.to_str().unwrap(), "phantom"]).status.code(), Some(2));
}

#[test]
fn config_file_is_applied() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, format!("# phantom\noutput_dir = {}\nwidth = 96\nheight = 64\ncontrasted_frames = 2\nlive_frames = 1\n", d.path().display())).unwrap();
    let o = mrc(&["--config", cfg.to_str().unwrap(), "phantom"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let frame = read(d.path(), "frame_0000.pgm");
    assert!(frame.starts_with(b"P5\n96 64\n"), "{:?}", &frame[..12]);
    assert!(d.path().join("frame_0002.pgm").exists() && !d.path().join("frame_0003.pgm").exists());
}

#[test]
fn help_lists_every_key() {
    let o = mrc(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for key in mrc_roadmap::config::KEYS.iter().map(|k| k.key) {
        assert!(text.contains(key), "help is missing {key}");
    }
    for cmd in ["phantom", "train", "predict", "evaluate", "ablate"] {
        assert!(text.contains(cmd));
    }
}

#[test]
fn ablate_writes_four_rows_and_threads_agree() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a");
    let b = d.path().join("b");
    let o = run(&small(&a, 1, 4.0), &["--threads", "1", "ablate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&small(&b, 1, 4.0), &["--threads", "2", "ablate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(read(&a, "ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "mode,gof,MD,R,predict_time,learn_time");
    assert_eq!(lines.len(), 5);
    let head = |s: &str| -> Vec<String> { s.lines().skip(1).map(|l| l.split(',').take(4).collect::<Vec<_>>().join(",")).collect() };
    let other = String::from_utf8(read(&b, "ablation.csv")).unwrap();
    assert_eq!(head(&csv), head(&other));
}
