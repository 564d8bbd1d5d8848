//! Behavior tests for the `llcaps` binary: artifacts on disk, exit codes,
//! determinism, and report structure for each subcommand.

mod common;

use std::fs;
use std::path::Path;

use common::{
    code, corpus, csv_rows, identity_checkpoint, llcaps_bin as llcaps, stderr_text,
    stochastic_checkpoint, write_ppm, TINY_CFG,
};
use tempfile::tempdir;

#[test]
fn help_exits_zero() {
    assert_eq!(code(&llcaps(&["--help"])), 0);
}

#[test]
fn degrade_writes_images_and_manifest() {
    let tmp = tempdir().unwrap();
    let clean = tmp.path().join("clean");
    let dark = tmp.path().join("dark");
    corpus(&clean, 3, 16);

    let out = llcaps(&[
        "degrade",
        "--input",
        clean.to_str().unwrap(),
        "--output",
        dark.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));

    for i in 0..3 {
        let original = fs::read(clean.join(format!("img{i}.ppm"))).unwrap();
        let degraded = fs::read(dark.join(format!("img{i}.ppm"))).unwrap();
        assert_eq!(degraded.len(), original.len());
        let sum = |b: &[u8]| b[15..].iter().map(|&v| v as u64).sum::<u64>();
        assert!(
            sum(&degraded) < sum(&original),
            "degraded image {i} is not darker"
        );
    }
    let manifest = fs::read_to_string(dark.join("manifest.csv")).unwrap();
    let rows = csv_rows(&manifest);
    assert_eq!(rows[0], ["filename", "split", "gamma", "s", "seed"]);
    assert_eq!(rows.len(), 4, "header plus one row per image");
    for row in &rows[1..] {
        assert!(row[2].parse::<f64>().unwrap() >= 2.0);
        assert!(row[3].parse::<f64>().unwrap() <= 0.5);
    }
}

#[test]
fn degrade_is_deterministic_per_seed() {
    let tmp = tempdir().unwrap();
    let clean = tmp.path().join("clean");
    corpus(&clean, 2, 16);

    let run = |out_dir: &Path, seed: &str| {
        let out = llcaps(&[
            "degrade",
            "--input",
            clean.to_str().unwrap(),
            "--output",
            out_dir.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    };
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    run(&a, "7");
    run(&b, "7");
    run(&c, "8");

    for name in ["img0.ppm", "img1.ppm", "manifest.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between identical seeds"
        );
    }
    assert_ne!(
        fs::read(a.join("img0.ppm")).unwrap(),
        fs::read(c.join("img0.ppm")).unwrap(),
        "different seed should change the degradation"
    );
}

#[test]
fn degrade_rejects_inverted_gamma_range() {
    let tmp = tempdir().unwrap();
    let clean = tmp.path().join("clean");
    corpus(&clean, 1, 16);
    let out = llcaps(&[
        "degrade",
        "--input",
        clean.to_str().unwrap(),
        "--output",
        tmp.path().join("dark").to_str().unwrap(),
        "--gamma-min",
        "3",
        "--gamma-max",
        "2",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr_text(&out).contains("gamma"));
}

#[test]
fn degrade_missing_input_dir_fails_with_path() {
    let tmp = tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = llcaps(&[
        "degrade",
        "--input",
        missing.to_str().unwrap(),
        "--output",
        tmp.path().join("dark").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr_text(&out).contains("nope"));
}

#[test]
fn train_smoke_run_writes_artifacts() {
    let tmp = tempdir().unwrap();
    let clean = tmp.path().join("clean");
    corpus(&clean, 4, 16);
    let cfg = tmp.path().join("tiny.cfg");
    fs::write(&cfg, TINY_CFG).unwrap();
    let ckpt = tmp.path().join("model.ckpt");

    let out = llcaps(&[
        "train",
        "--data",
        clean.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--seed",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));

    let model = llcaps::checkpoint::load_checkpoint::<f32>(&ckpt).unwrap();
    assert_eq!(model.cfg.base_channels, 8);
    assert_eq!(model.cfg.n_msrb, 1);

    let log = fs::read_to_string(tmp.path().join("model.ckpt.log.csv")).unwrap();
    let rows = csv_rows(&log);
    assert_eq!(rows[0], ["epoch", "loss", "psnr_db", "ssim_pct"]);
    assert_eq!(rows.len(), 3, "header plus two epochs");
    for row in &rows[1..] {
        assert!(row[1].parse::<f64>().unwrap().is_finite());
        assert!(row[2].parse::<f64>().unwrap().is_finite());
    }

    let manifest = fs::read_to_string(tmp.path().join("model.ckpt.manifest.csv")).unwrap();
    assert_eq!(csv_rows(&manifest).len(), 5, "header plus four images");
}

#[test]
fn train_flags_override_config_file() {
    let tmp = tempdir().unwrap();
    let clean = tmp.path().join("clean");
    corpus(&clean, 4, 16);
    let cfg = tmp.path().join("tiny.cfg");
    fs::write(&cfg, TINY_CFG).unwrap();
    let ckpt = tmp.path().join("model.ckpt");

    let out = llcaps(&[
        "train",
        "--data",
        clean.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    let log = fs::read_to_string(tmp.path().join("model.ckpt.log.csv")).unwrap();
    assert_eq!(csv_rows(&log).len(), 2, "config says 2 epochs, flag says 1");
}

#[test]
fn train_missing_data_flag_is_usage_error() {
    let tmp = tempdir().unwrap();
    let out = llcaps(&[
        "train",
        "--out",
        tmp.path().join("m.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_unknown_config_key_is_usage_error() {
    let tmp = tempdir().unwrap();
    let clean = tmp.path().join("clean");
    corpus(&clean, 2, 16);
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "bogus_knob = 1\n").unwrap();
    let out = llcaps(&[
        "train",
        "--data",
        clean.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("m.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr_text(&out).contains("bogus_knob"));
}

#[test]
fn enhance_identity_checkpoint_reproduces_input() {
    let tmp = tempdir().unwrap();
    let ckpt = tmp.path().join("identity.ckpt");
    identity_checkpoint(&ckpt);
    let input = tmp.path().join("in.ppm");
    write_ppm(&input, 16, 16, |x, y| {
        (((x * 16) % 256) as u8, ((y * 16) % 256) as u8, 128)
    });
    let output = tmp.path().join("out.ppm");

    let out = llcaps(&[
        "enhance",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--deterministic",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    assert_eq!(
        fs::read(&input).unwrap(),
        fs::read(&output).unwrap(),
        "identity model should reproduce the 8-bit input exactly"
    );
}

#[test]
fn enhance_is_reproducible_per_seed() {
    let tmp = tempdir().unwrap();
    let ckpt = tmp.path().join("model.ckpt");
    stochastic_checkpoint(&ckpt);
    let input = tmp.path().join("in.ppm");
    write_ppm(&input, 16, 16, |x, y| {
        ((40 + x * 9) as u8, (40 + y * 9) as u8, 90)
    });

    let run = |name: &str, extra: &[&str]| {
        let output = tmp.path().join(name);
        let mut args = vec![
            "enhance",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--output",
            output.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let out = llcaps(&args);
        assert_eq!(code(&out), 0, "{}", stderr_text(&out));
        fs::read(&output).unwrap()
    };

    let det1 = run("det1.ppm", &["--deterministic"]);
    let det2 = run("det2.ppm", &["--deterministic"]);
    assert_eq!(det1, det2, "deterministic runs must match bitwise");

    let s7a = run("s7a.ppm", &["--seed", "7"]);
    let s7b = run("s7b.ppm", &["--seed", "7"]);
    let s8 = run("s8.ppm", &["--seed", "8"]);
    assert_eq!(s7a, s7b, "same seed must reproduce the same sample");
    assert_ne!(s7a, s8, "different seeds should sample different noise");
}

#[test]
fn eval_ground_truth_hits_cap_on_every_row() {
    let tmp = tempdir().unwrap();
    let clean = tmp.path().join("clean");
    corpus(&clean, 3, 16);
    let ckpt = tmp.path().join("identity.ckpt");
    identity_checkpoint(&ckpt);
    let cfg = tmp.path().join("id.cfg");
    fs::write(
        &cfg,
        "degrade.gamma_min = 1\ndegrade.gamma_max = 1\ndegrade.s_min = 1\ndegrade.s_max = 1\n",
    )
    .unwrap();
    let report = tmp.path().join("report.csv");

    let out = llcaps(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        clean.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--deterministic",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));

    let rows = csv_rows(&fs::read_to_string(&report).unwrap());
    assert_eq!(rows[0], ["image", "psnr_db", "ssim_pct", "ag_mean", "ag_var"]);
    assert_eq!(rows.len(), 5, "header, three images, mean row");
    assert_eq!(rows[4][0], "mean");
    for row in &rows[1..] {
        assert_eq!(row[1].parse::<f64>().unwrap(), 99.0, "PSNR capped");
        assert_eq!(row[2].parse::<f64>().unwrap(), 100.0, "SSIM percent");
    }
}

#[test]
fn eval_mean_row_is_the_column_mean_and_reruns_identically() {
    let tmp = tempdir().unwrap();
    let clean = tmp.path().join("clean");
    corpus(&clean, 4, 16);
    let ckpt = tmp.path().join("identity.ckpt");
    identity_checkpoint(&ckpt);
    let report1 = tmp.path().join("r1.csv");
    let report2 = tmp.path().join("r2.csv");

    for report in [&report1, &report2] {
        let out = llcaps(&[
            "eval",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--data",
            clean.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
            "--deterministic",
            "--seed",
            "5",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    }
    assert_eq!(
        fs::read(&report1).unwrap(),
        fs::read(&report2).unwrap(),
        "deterministic eval must regenerate the same report"
    );

    let rows = csv_rows(&fs::read_to_string(&report1).unwrap());
    assert_eq!(rows.len(), 6, "header, four images, mean row");
    let last = rows.len() - 1;
    for col in 1..5 {
        let mean: f64 = rows[1..last]
            .iter()
            .map(|r| r[col].parse::<f64>().unwrap())
            .sum::<f64>()
            / 4.0;
        let reported: f64 = rows[last][col].parse().unwrap();
        assert!(
            (mean - reported).abs() < 1e-12,
            "column {col}: mean row {reported} vs recomputed {mean}"
        );
    }
}

#[test]
fn ablate_emits_the_eight_configurations_in_order() {
    let tmp = tempdir().unwrap();
    let clean = tmp.path().join("clean");
    corpus(&clean, 4, 16);
    let cfg = tmp.path().join("tiny.cfg");
    fs::write(&cfg, TINY_CFG).unwrap();
    let out_dir = tmp.path().join("ablation");

    let out = llcaps(&[
        "ablate",
        "--data",
        clean.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr_text(&out));
    assert!(
        stderr_text(&out).contains("best PSNR"),
        "relative ordering must be logged"
    );

    let rows = csv_rows(&fs::read_to_string(out_dir.join("ablation.csv")).unwrap());
    assert_eq!(
        rows[0],
        ["wavelet", "curve", "diffusion", "psnr_db", "ssim_pct", "ag_mean", "ag_var"]
    );
    let expected = [
        ["off", "off", "off"],
        ["on", "off", "off"],
        ["off", "on", "off"],
        ["off", "off", "on"],
        ["on", "on", "off"],
        ["on", "off", "on"],
        ["off", "on", "on"],
        ["on", "on", "on"],
    ];
    assert_eq!(rows.len(), 9, "header plus eight configurations");
    for (row, flags) in rows[1..].iter().zip(expected) {
        assert_eq!(&row[..3], &flags, "grid order is part of the contract");
        assert!(row[3].parse::<f64>().unwrap().is_finite());
    }
}
