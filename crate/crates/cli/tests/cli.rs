use std::path::Path;
use std::process::{Command, Output};

use scatclr::datasets::{synth_dataset, SynthKind};
use scatclr::featfile::read_features;

fn scatclr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scatclr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn export_synth(dir: &Path, kind: SynthKind, n: usize, size: usize) {
    synth_dataset(kind, n, 0, size).unwrap().export(dir).unwrap();
}

const TINY: &[&str] = &[
    "--preset", "desk", "--image-size", "16", "--batch-size", "4", "--hidden-dim", "16", "--repr-dim", "16", "-q",
];

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&scatclr(&["--help"])), 0);
    assert_eq!(code(&scatclr(&["pretrain", "--help"])), 0);
    let missing = scatclr(&["pretrain"]);
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("--data"));
    let typo = scatclr(&["pretrain", "--data", "x", "--epocs", "3"]);
    assert_eq!(code(&typo), 1);
    assert!(stderr(&typo).contains("--epochs"), "{}", stderr(&typo));
    assert_eq!(code(&scatclr(&["frobnicate"])), 1);
}

#[test]
fn invalid_config_is_usage_and_missing_data_is_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let bad = scatclr(&["pretrain", "--data", p(dir.path()), "--batch-size", "1"]);
    assert_eq!(code(&bad), 1, "{}", stderr(&bad));
    let gone = dir.path().join("nothing-here");
    let out = scatclr(&["pretrain", "--data", p(&gone), "--preset", "desk", "-q"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn sweep_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let mut args = vec![
        "sweep", "--synth", "two-blob-separable", "--synth-count", "8", "--scales", "1,2", "--orientations", "4,8",
        "--steps", "1", "--probe-steps", "5", "--out", p(&csv),
    ];
    args.extend(TINY);
    let out = scatclr(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scales,orientations,block_count,channels_per_plane,adapter_params,total_params,final_contrastive_loss,probe_accuracy");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,4,2,5,"));
    assert!(lines[4].starts_with("2,8,2,81,"));
    assert!(dir.path().join("sweep.config.toml").exists());
}

#[test]
fn pretrain_eval_and_reproduce_from_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    export_synth(&data, SynthKind::TwoBlobSeparable, 8, 16);
    let run1 = dir.path().join("run1");
    let mut args = vec!["pretrain", "--data", p(&data), "--out", p(&run1), "--epochs", "2", "--seed", "5", "--orientations", "4"];
    args.extend(TINY);
    let out = scatclr(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["config.toml", "metrics.csv", "checkpoint.ckpt"] {
        assert!(run1.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(run1.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "epoch,contrastive_loss,pretext_loss,lambda,wall_time");
    assert_eq!(metrics.lines().count(), 3);

    let run2 = dir.path().join("run2");
    let cfg = run1.join("config.toml");
    let out = scatclr(&["pretrain", "--data", p(&data), "--out", p(&run2), "--config", p(&cfg), "-q"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        std::fs::read(run1.join("checkpoint.ckpt")).unwrap(),
        std::fs::read(run2.join("checkpoint.ckpt")).unwrap()
    );

    let csv = dir.path().join("eval/probe.csv");
    let feats = dir.path().join("eval/h.bin");
    let ckpt = run1.join("checkpoint.ckpt");
    let out = scatclr(&[
        "linear-eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--runs", "3", "--steps", "20", "--test-fraction",
        "0.25", "--out", p(&csv), "--features", p(&feats), "-q",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains("top-1 accuracy over 3 runs"));
    assert!(dir.path().join("eval/probe.config.toml").exists());
    assert_eq!(read_features(&feats).unwrap().dims, [8, 16, 1, 1]);
}

#[test]
fn report_params_grows_with_blocks() {
    let count = |blocks: &str| -> usize {
        let out = scatclr(&["pretrain", "--data", "unused", "--report-params", "--blocks", blocks]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        let line = text.lines().find(|l| l.trim_start().starts_with("adapter")).unwrap().to_string();
        line.split_whitespace().last().unwrap().parse().unwrap()
    };
    assert!(count("8") < count("12"));
}

#[test]
fn scatter_export_writes_features_and_paths() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("imgs");
    export_synth(&data, SynthKind::Noise, 3, 20);
    let out_file = dir.path().join("scat.bin");
    let out = scatclr(&[
        "scatter-export", "--input", p(&data), "--scales", "2", "--orientations", "4", "--size", "16", "--out",
        p(&out_file), "-q",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let f = read_features(&out_file).unwrap();
    assert_eq!(f.dims, [3, 3 * 25, 4, 4]);
    let paths = std::fs::read_to_string(dir.path().join("scat.bin.paths.txt")).unwrap();
    assert_eq!(paths.lines().count(), 1 + 75);

    let padded = dir.path().join("pad.bin");
    let out = scatclr(&[
        "scatter-export", "--input", p(&data), "--scales", "2", "--orientations", "4", "--order", "1", "--zero-pad",
        "--out", p(&padded), "-q",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_features(&padded).unwrap().dims, [3, 3 * 9, 8, 8]);
}

#[test]
fn filters_dump_counts_images() {
    let dir = tempfile::tempdir().unwrap();
    let out = scatclr(&["filters-dump", "--scales", "1", "--orientations", "4", "--size", "32", "--out", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("wrote 9 filter images"), "{stdout}");
    assert!(dir.path().join("config.toml").exists());
}

#[test]
fn augment_preview_writes_views_and_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("in.png");
    synth_dataset(SynthKind::OrientedTextures, 1, 0, 24).unwrap().images[0].save_png(&img).unwrap();
    let out_dir = dir.path().join("preview");
    let run = |seed: &str| {
        let out = scatclr(&[
            "augment-preview", "--input", p(&img), "--policy", "baseline", "--seed", seed, "--pretext", "jigsaw",
            "--jigsaw-classes", "6", "--out", p(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        std::fs::read_to_string(out_dir.join("params.txt")).unwrap()
    };
    let a = run("3");
    for f in ["view1.png", "view2.png", "view1_pretext.png", "view2_pretext.png", "config.toml"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    assert!(a.contains("pretext_label"));
    assert_eq!(a, run("3"));
    assert_ne!(a, run("4"));
}
