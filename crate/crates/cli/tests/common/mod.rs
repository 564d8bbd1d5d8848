//! Helpers shared by the binary-level test suites.

#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use llcaps::checkpoint::save_checkpoint;
use llcaps::{Model32, ModelConfig};

pub fn llcaps_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llcaps"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

pub fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn write_ppm(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> (u8, u8, u8)) {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = f(x, y);
            bytes.extend_from_slice(&[r, g, b]);
        }
    }
    fs::write(path, bytes).unwrap();
}

/// Deterministic textured corpus, values kept off the 8-bit extremes.
pub fn corpus(dir: &Path, n: usize, size: usize) {
    fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        write_ppm(&dir.join(format!("img{i}.ppm")), size, size, move |x, y| {
            let r = 40 + ((x * 13 + y * 7 + i * 31) % 200) as u8;
            let g = 40 + ((x * 5 + y * 11 + i * 17) % 200) as u8;
            let b = 40 + ((x * 3 + y * 9 + i * 7) % 200) as u8;
            (r, g, b)
        });
    }
}

pub const TINY_CFG: &str = "base_channels = 8\n\
                            n_msrb = 1\n\
                            diffusion.steps = 1\n\
                            diffusion.denoiser_width = 8\n\
                            train.epochs = 2\n\
                            train.batch_size = 2\n\
                            train.lr = 1e-3\n";

/// Zero residual terminals plus an empty refinement chain: output == input.
pub fn identity_checkpoint(path: &Path) {
    let mut cfg = ModelConfig::desk();
    cfg.n_msrb = 1;
    cfg.diffusion.steps = 0;
    let model = Model32::from_seed(cfg, 0).unwrap();
    save_checkpoint(&model, path).unwrap();
}

/// Random weights and a two-step chain, so stochastic sampling matters.
pub fn stochastic_checkpoint(path: &Path) {
    let mut cfg = ModelConfig::desk();
    cfg.n_msrb = 1;
    cfg.diffusion.steps = 2;
    cfg.zero_init_residual = false;
    let model = Model32::from_seed(cfg, 5).unwrap();
    save_checkpoint(&model, path).unwrap();
}

pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
