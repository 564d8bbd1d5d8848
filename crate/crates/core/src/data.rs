//! Image I/O, synthetic low-light degradation, and dataset assembly.
//!
//! The only codec is binary PPM (P6, 8-bit), which keeps the crate free of
//! image-format dependencies. Training pairs are generated by darkening
//! clean frames with a per-image gamma curve and illumination scale, both
//! drawn from seeded per-image streams so regeneration is reproducible and
//! order independent.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone)]
pub struct DegradeConfig {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub seed: u64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            gamma_min: 2.0,
            gamma_max: 3.5,
            s_min: 0.1,
            s_max: 0.5,
            seed: 0,
        }
    }
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1.0 <= self.gamma_min && self.gamma_min <= self.gamma_max) {
            return Err(Error::InvalidArgument(format!(
                "gamma range must satisfy 1 <= min <= max, got [{}, {}]",
                self.gamma_min, self.gamma_max
            )));
        }
        if !(0.0 < self.s_min && self.s_min <= self.s_max && self.s_max <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "illumination range must satisfy 0 < min <= max <= 1, got [{}, {}]",
                self.s_min, self.s_max
            )));
        }
        Ok(())
    }
}

/// Degradation parameters actually drawn for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMeta {
    pub file: String,
    pub gamma: f64,
    pub s: f64,
    pub seed: u64,
}

pub struct ImagePair<T: Scalar> {
    pub low: Tensor<T>,
    pub target: Tensor<T>,
    pub meta: PairMeta,
}

/// Elementwise s * x^gamma. Darkens every pixel: for gamma >= 1 and
/// s <= 1 the output never exceeds the input on [0, 1].
pub fn degrade<T: Scalar>(img: &Tensor<T>, gamma: f64, s: f64) -> Result<Tensor<T>> {
    if gamma < 1.0 {
        return Err(Error::InvalidArgument(format!("gamma must be >= 1, got {gamma}")));
    }
    if !(0.0 < s && s <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "illumination scale must be in (0, 1], got {s}"
        )));
    }
    let data = img.to_vec();
    if data
        .iter()
        .any(|v| v.to_f64_lossy() < 0.0 || v.to_f64_lossy() > 1.0)
    {
        return Err(Error::InvalidArgument(
            "degrade expects image values in [0, 1]".into(),
        ));
    }
    let out = data
        .iter()
        .map(|v| T::from_f64_lossy(s * v.to_f64_lossy().powf(gamma)))
        .collect();
    Tensor::from_vec(img.shape(), out)
}

fn image_err(what: impl Into<String>) -> Error {
    Error::Image(what.into())
}

/// Parses a binary P6 PPM with maxval 255. Header comments (`#` to end of
/// line) are allowed anywhere whitespace is.
pub fn parse_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    fn skip_separators(bytes: &[u8], pos: &mut usize) {
        while *pos < bytes.len() {
            match bytes[*pos] {
                b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
                b'#' => {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                }
                _ => break,
            }
        }
    }
    fn read_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(image_err("truncated header"));
        }
        Ok(&bytes[start..*pos])
    }

    let mut pos = 0usize;
    skip_separators(bytes, &mut pos);
    let magic = read_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(image_err(format!(
            "unsupported format {:?}, only binary P6 is handled",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        skip_separators(bytes, &mut pos);
        let tok = read_token(bytes, &mut pos)?;
        *d = std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| image_err("bad header integer"))?;
    }
    let (w, h, maxval) = (dims[0], dims[1], dims[2]);
    if maxval != 255 {
        return Err(image_err(format!("maxval must be 255, got {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(image_err("degenerate image dimensions"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(image_err("missing header terminator"));
    }
    pos += 1;
    let need = w * h * 3;
    let payload = &bytes[pos..];
    if payload.len() < need {
        return Err(image_err(format!(
            "truncated payload: need {need} bytes, have {}",
            payload.len()
        )));
    }

    let shape = Shape::new(1, 3, h, w);
    let mut data = vec![T::zero(); shape.count()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let byte = payload[(y * w + x) * 3 + c];
                data[shape.index(0, c, y, x)] = T::from_f64_lossy(byte as f64 / 255.0);
            }
        }
    }
    Tensor::from_vec(shape, data)
}

pub fn load_ppm<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    parse_ppm(&bytes).map_err(|e| image_err(format!("{}: {e}", path.display())))
}

/// Serializes an N=1, C=3 tensor, clamping to [0, 1] and rounding to the
/// nearest 8-bit level.
pub fn ppm_bytes<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(image_err(format!("ppm needs a 1x3xHxW tensor, got {s}")));
    }
    let data = t.to_vec();
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.reserve(s.h * s.w * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                let v = data[s.index(0, c, y, x)].to_f64_lossy().clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn save_ppm<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    fs::write(path, ppm_bytes(t)?)?;
    Ok(())
}

/// Data-domain bilinear resample to an arbitrary size (half-pixel centers,
/// clamped edges). No gradient support; intended for dataset preparation.
pub fn resize_to<T: Scalar>(t: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target must be nonzero".into()));
    }
    let taps = |out_len: usize, in_len: usize, o: usize| -> (usize, usize, f64) {
        let scale = in_len as f64 / out_len as f64;
        let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(in_len - 1);
        (lo, hi, src - lo as f64)
    };
    let data = t.to_vec();
    let out_shape = Shape::new(s.n, s.c, out_h, out_w);
    let mut out = vec![T::zero(); out_shape.count()];
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..out_h {
                let (y0, y1, fy) = taps(out_h, s.h, oy);
                for ox in 0..out_w {
                    let (x0, x1, fx) = taps(out_w, s.w, ox);
                    let g = |y: usize, x: usize| data[s.index(n, c, y, x)].to_f64_lossy();
                    let top = g(y0, x0) * (1.0 - fx) + g(y0, x1) * fx;
                    let bot = g(y1, x0) * (1.0 - fx) + g(y1, x1) * fx;
                    out[out_shape.index(n, c, oy, ox)] =
                        T::from_f64_lossy(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Largest centered square crop.
pub fn center_square<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let s = t.shape();
    let side = s.h.min(s.w);
    let (oy, ox) = ((s.h - side) / 2, (s.w - side) / 2);
    let data = t.to_vec();
    let out_shape = Shape::new(s.n, s.c, side, side);
    let mut out = vec![T::zero(); out_shape.count()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..side {
                for x in 0..side {
                    out[out_shape.index(n, c, y, x)] = data[s.index(n, c, y + oy, x + ox)];
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("crop preserves finiteness")
}

fn mean_value<T: Scalar>(t: &Tensor<T>) -> f64 {
    let v = t.to_vec();
    v.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / v.len() as f64
}

/// Stable per-image stream: mixes the dataset seed with the image's rank
/// in sorted filename order, so content is independent of split order and
/// safe to generate in parallel.
fn image_seed(dataset_seed: u64, sorted_index: usize) -> u64 {
    dataset_seed ^ (sorted_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn make_pair<T: Scalar>(
    path: &Path,
    file: String,
    seed: u64,
    cfg: &DegradeConfig,
    patch: Option<usize>,
) -> Result<ImagePair<T>> {
    let mut target = load_ppm::<T>(path)?;
    if let Some(size) = patch {
        let square = center_square(&target);
        target = resize_to(&square, size, size)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = rng.random_range(cfg.gamma_min..=cfg.gamma_max);
    let s = rng.random_range(cfg.s_min..=cfg.s_max);
    let low = degrade(&target, gamma, s)?;
    debug_assert!(mean_value(&low) <= mean_value(&target) + 1e-9);
    Ok(ImagePair {
        low,
        target,
        meta: PairMeta { file, gamma, s, seed },
    })
}

/// Splits the sorted .ppm files of `dir` into train/test by seeded shuffle
/// and degrades each image with its own recorded (gamma, s) draw.
pub fn make_dataset<T: Scalar>(
    dir: &Path,
    cfg: &DegradeConfig,
    split: (u32, u32),
    patch: Option<usize>,
) -> Result<(Vec<ImagePair<T>>, Vec<ImagePair<T>>)> {
    cfg.validate()?;
    if split.0 + split.1 != 100 {
        return Err(Error::InvalidArgument(format!(
            "split percentages must sum to 100, got {} + {}",
            split.0, split.1
        )));
    }
    let mut files: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|name| name.to_ascii_lowercase().ends_with(".ppm"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "no .ppm images found in {}",
            dir.display()
        )));
    }

    let mut order: Vec<usize> = (0..files.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_train = (files.len() * split.0 as usize + 50) / 100;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (rank, &idx) in order.iter().enumerate() {
        let file = files[idx].clone();
        let pair = make_pair(
            &dir.join(&file),
            file,
            image_seed(cfg.seed, idx),
            cfg,
            patch,
        )?;
        if rank < n_train {
            train.push(pair);
        } else {
            test.push(pair);
        }
    }
    Ok((train, test))
}

/// Text manifest: one `filename,split,gamma,s,seed` row per image.
pub fn manifest_text<T: Scalar>(train: &[ImagePair<T>], test: &[ImagePair<T>]) -> String {
    let mut out = String::from("filename,split,gamma,s,seed\n");
    for (set, label) in [(train, "train"), (test, "test")] {
        for p in set {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.meta.file, label, p.meta.gamma, p.meta.s, p.meta.seed
            ));
        }
    }
    out
}

pub fn write_manifest<T: Scalar>(
    path: &Path,
    train: &[ImagePair<T>],
    test: &[ImagePair<T>],
) -> Result<()> {
    fs::write(path, manifest_text(train, test))?;
    Ok(())
}
