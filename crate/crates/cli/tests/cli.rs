use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fusionnet_core::data::{build_manifest, load_image, rgb_to_luminance};
use fusionnet_core::model::ForwardOptions;
use fusionnet_core::trainer::{evaluate, load_checkpoint};

fn fusionnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusionnet")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(root: &Path, count: usize, seed: u64, size: &str) {
    let o = fusionnet(&["synth", "--out", p(root), "--count", &count.to_string(), "--seed", &seed.to_string(), "--size", size]);
    assert!(o.status.success(), "{}", stderr(&o));
}

/// Trains with `extra` TOML lines appended to a tiny base config and returns
/// the final checkpoint path.
fn train(dir: &Path, data: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("cfg.toml");
    fs::write(&cfg, format!("epochs = 1\nchannels = 4\nheight = 16\nwidth = 16\n{extra}")).unwrap();
    let out = dir.join("run");
    let o = fusionnet(&["train", "--config", p(&cfg), "--data", p(data), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("final.fnck")
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["ir", "vis", "ann"] {
        let mut entries: Vec<_> = fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for e in entries {
            out.push((e.strip_prefix(root).unwrap().to_path_buf(), fs::read(&e).unwrap()));
        }
    }
    out
}

#[test]
fn synth_writes_discoverable_deterministic_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, 5, 3, "64x80");
    synth(&b, 5, 3, "64x80");
    assert_eq!(build_manifest(&a).unwrap().len(), 5);
    assert_eq!(tree(&a), tree(&b));
    let img = image::open(a.join("ir").join("synth_00000.png")).unwrap();
    assert_eq!((img.height(), img.width()), (64, 80));
    let img = image::open(a.join("vis").join("synth_00004.png")).unwrap();
    assert_eq!((img.height(), img.width()), (64, 80));
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 2, 1, "16x16");
    let ckpt = train(dir.path(), &data, "");
    assert!(ckpt.is_file());
    assert!(dir.path().join("run").join("loss_log.csv").is_file());
}

#[test]
fn train_reports_missing_data_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "epochs = 1\n").unwrap();
    let missing = dir.path().join("no_such_root");
    let o = fusionnet(&["train", "--config", p(&cfg), "--data", p(&missing), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_root"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    let o = fusionnet(&["train", "--data", "x", "--out", "y"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = fusionnet(&["train", "--config", "c", "--data", "x", "--out", "y", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = fusionnet(&["synth", "--out", "x", "--count", "1", "--seed", "1", "--size", "64"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(fusionnet(&[]).status.code(), Some(1));
    assert_eq!(fusionnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_and_diverging_training_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1, 2, "16x16");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "epochs = \"many\"\n").unwrap();
    let o = fusionnet(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(&cfg, "epochs = 5\nchannels = 4\nheight = 16\nwidth = 16\nlr = 1e30\n").unwrap();
    let o = fusionnet(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn zero_checkpoint_fuses_to_the_midpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1, 4, "24x20");
    // Zero epochs: the checkpoint holds the zero initialisation.
    let cfg = dir.path().join("zero.toml");
    fs::write(&cfg, "epochs = 0\nchannels = 4\ninit = \"zeros\"\n").unwrap();
    let zero_dir = dir.path().join("zero");
    let o = fusionnet(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&zero_dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let zero = zero_dir.join("final.fnck");

    let (ir, vis) = (data.join("ir").join("synth_00000.png"), data.join("vis").join("synth_00000.png"));
    let fused = dir.path().join("fused.png");
    let o = fusionnet(&["fuse", "--ckpt", p(&zero), "--ir", p(&ir), "--vis", p(&vis), "--out", p(&fused)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!dir.path().join("alpha.png").exists());

    let ir_t = load_image(&ir).unwrap();
    let y = rgb_to_luminance(&load_image(&vis).unwrap().cast::<f64>()).unwrap();
    let got = image::open(&fused).unwrap().into_luma8().into_raw();
    let mut ties = 0;
    for ((g, i), v) in got.iter().zip(ir_t.data()).zip(y.data()) {
        let exact = 255.0 * (f64::from(*i) + v) / 2.0;
        if (exact.fract() - 0.5).abs() < 1e-4 {
            // Half-way values may round either way in single precision.
            assert!(*g == exact.floor() as u8 || *g == exact.ceil() as u8, "{g} vs {exact}");
            ties += 1;
        } else {
            assert_eq!(*g, exact.round() as u8, "{exact}");
        }
    }
    assert!(ties < got.len() / 20, "{ties} ties");

    let alpha = dir.path().join("alpha.png");
    let o = fusionnet(&["fuse", "--ckpt", p(&zero), "--ir", p(&ir), "--vis", p(&vis), "--out", p(&fused), "--alpha", p(&alpha)]);
    assert!(o.status.success());
    assert!(image::open(&alpha).unwrap().into_luma8().into_raw().iter().all(|&a| a == 128));
}

#[test]
fn fuse_rejects_mismatched_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, 1, 1, "16x16");
    synth(&b, 1, 1, "16x20");
    let ckpt = train(dir.path(), &a, "");
    let out = dir.path().join("f.png");
    let o = fusionnet(&[
        "fuse", "--ckpt", p(&ckpt),
        "--ir", p(&a.join("ir").join("synth_00000.png")),
        "--vis", p(&b.join("vis").join("synth_00000.png")),
        "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("16x16") && msg.contains("16x20"), "{msg}");
    assert!(!out.exists());
    let o = fusionnet(&[
        "fuse", "--ckpt", p(&ckpt),
        "--ir", p(&a.join("ir").join("synth_00000.png")),
        "--vis", p(&b.join("vis").join("synth_00000.png")),
        "--out", p(&out), "--size", "16x16",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn fused_pixels_stay_between_quantised_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 6, 11, "16x16");
    let ckpt = train(dir.path(), &data, "lr = 0.01\n");
    for i in 0..6 {
        let ir = data.join("ir").join(format!("synth_{i:05}.png"));
        let vis = data.join("vis").join(format!("synth_{i:05}.png"));
        let out = dir.path().join(format!("f{i}.png"));
        let o = fusionnet(&["fuse", "--ckpt", p(&ckpt), "--ir", p(&ir), "--vis", p(&vis), "--out", p(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let ir_b = image::open(&ir).unwrap().into_luma8().into_raw();
        let y = rgb_to_luminance(&load_image(&vis).unwrap()).unwrap();
        let fused = image::open(&out).unwrap().into_luma8().into_raw();
        for ((f, a), v) in fused.iter().zip(&ir_b).zip(y.data()) {
            let b = (f64::from(*v) * 255.0).round();
            let (lo, hi) = (f64::from(*a).min(b), f64::from(*a).max(b));
            let f = f64::from(*f);
            assert!(f >= lo - 1.0 && f <= hi + 1.0, "{f} outside [{lo}, {hi}]");
        }
    }
}

#[test]
fn export_alpha_writes_a_grayscale_map() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1, 5, "16x16");
    let ckpt = train(dir.path(), &data, "");
    let out = dir.path().join("alpha.png");
    let o = fusionnet(&[
        "export-alpha", "--ckpt", p(&ckpt),
        "--ir", p(&data.join("ir").join("synth_00000.png")),
        "--vis", p(&data.join("vis").join("synth_00000.png")),
        "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = image::open(&out).unwrap();
    assert_eq!(img.color(), image::ColorType::L8);
}

#[test]
fn eval_writes_rows_and_mean_matching_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 3, 6, "16x16");
    let ckpt = train(dir.path(), &data, "");
    let csv = dir.path().join("m.csv");
    let o = fusionnet(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--out", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,ssim,mse,entropy,roi_ssim");
    assert_eq!(lines.len(), 5);
    assert!(String::from_utf8_lossy(&o.stdout).contains(lines[4]));

    let rows: Vec<Vec<f64>> = lines[1..4]
        .iter()
        .map(|l| l.split(',').skip(1).take(3).map(|v| v.parse().unwrap()).collect())
        .collect();
    let mean: Vec<f64> = lines[4].split(',').skip(1).take(3).map(|v| v.parse().unwrap()).collect();
    for c in 0..3 {
        assert_eq!(mean[c], (rows[0][c] + rows[1][c] + rows[2][c]) / 3.0);
    }

    let report = evaluate(&load_checkpoint(&ckpt).unwrap(), &build_manifest(&data).unwrap(), ForwardOptions::default()).unwrap();
    assert_eq!(report.to_csv(), text);
}

#[test]
fn eval_of_an_empty_dataset_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 1, 7, "16x16");
    let ckpt = train(dir.path(), &data, "");
    let empty = dir.path().join("empty");
    fs::create_dir_all(empty.join("ir")).unwrap();
    fs::create_dir_all(empty.join("vis")).unwrap();
    let o = fusionnet(&["eval", "--ckpt", p(&ckpt), "--data", p(&empty), "--out", p(&dir.path().join("m.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = fusionnet(&["eval", "--ckpt", p(&dir.path().join("nope.fnck")), "--data", p(&data), "--out", p(&dir.path().join("m.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.fnck"));
}
