//! Checkpoint serialization: magic, version, the config as text, then a
//! named-tensor table holding every parameter plus the noise-schedule
//! betas, all little-endian.
//!
//! Loading rebuilds the model from the embedded config and then demands
//! that the stored table matches the rebuilt parameter list name by name,
//! shape by shape; the first disagreement aborts with that parameter named.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{LLCapsModel, ModelConfig};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"LLCAPS01";
pub const VERSION: u32 = 1;

/// Name under which the schedule betas ride along in the tensor table.
const SCHEDULE_BETA: &str = "schedule.beta";

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("corrupt checkpoint: {what}"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(corrupt("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn sized(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| corrupt("length overflows usize"))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.sized()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("non-utf8 string"))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn push_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn push_tensor_f64(out: &mut Vec<u8>, name: &str, shape: Shape, data: &[f64]) {
    push_string(out, name);
    out.push(Dtype::F64.code());
    for d in [shape.n, shape.c, shape.h, shape.w] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    push_string(out, name);
    out.push(T::DTYPE.code());
    let s = t.shape();
    for d in [s.n, s.c, s.h, s.w] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.to_vec() {
        match T::DTYPE {
            Dtype::F32 => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
        }
    }
}

pub fn checkpoint_bytes<T: Scalar>(model: &LLCapsModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_string(&mut out, &model.cfg.to_text());
    let params = model.parameters();
    out.extend_from_slice(&((params.len() + 1) as u64).to_le_bytes());
    for p in &params {
        push_tensor(&mut out, &p.name, &p.tensor);
    }
    push_tensor_f64(
        &mut out,
        SCHEDULE_BETA,
        Shape::new(1, 1, 1, model.schedule.beta.len()),
        &model.schedule.beta,
    );
    out
}

pub fn save_checkpoint<T: Scalar>(model: &LLCapsModel<T>, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

struct Entry {
    name: String,
    dtype: u8,
    shape: Shape,
    payload: Vec<u8>,
}

fn read_entry<'a>(r: &mut Reader<'a>) -> Result<Entry> {
    let name = r.string()?;
    let dtype = r.u8()?;
    let width = match Dtype::from_code(dtype) {
        Some(Dtype::F32) => 4,
        Some(Dtype::F64) => 8,
        None => return Err(corrupt(&format!("unknown dtype code {dtype}"))),
    };
    let dims: Vec<usize> = (0..4).map(|_| r.sized()).collect::<Result<_>>()?;
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let payload = r.take(shape.count() * width)?.to_vec();
    Ok(Entry {
        name,
        dtype,
        shape,
        payload,
    })
}

fn decode_payload<T: Scalar>(e: &Entry) -> Vec<T> {
    match Dtype::from_code(e.dtype).expect("validated dtype") {
        Dtype::F32 => e
            .payload
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect(),
        Dtype::F64 => e
            .payload
            .chunks_exact(8)
            .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    }
}

pub fn load_checkpoint_bytes<T: Scalar>(bytes: &[u8]) -> Result<LLCapsModel<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let cfg_text = r.string()?;
    let cfg = ModelConfig::from_text(&cfg_text)
        .map_err(|e| Error::Checkpoint(format!("embedded config invalid: {e}")))?;
    let model = LLCapsModel::<T>::from_seed(cfg, 0)?;
    let n_entries = r.sized()?;
    let params = model.parameters();
    if n_entries != params.len() + 1 {
        return Err(Error::Checkpoint(format!(
            "tensor table holds {} entries, config implies {}",
            n_entries,
            params.len() + 1
        )));
    }
    for p in &params {
        let e = read_entry(&mut r)?;
        if e.name != p.name {
            return Err(Error::Checkpoint(format!(
                "parameter {} missing: table has {} in its place",
                p.name, e.name
            )));
        }
        if e.shape != p.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {} has shape {}, checkpoint stores {}",
                p.name,
                p.tensor.shape(),
                e.shape
            )));
        }
        if e.dtype != T::DTYPE.code() {
            return Err(Error::Checkpoint(format!(
                "parameter {} has dtype code {}, expected {}",
                p.name,
                e.dtype,
                T::DTYPE.code()
            )));
        }
        p.tensor.set_data(decode_payload(&e))?;
    }
    let beta_entry = read_entry(&mut r)?;
    if beta_entry.name != SCHEDULE_BETA {
        return Err(Error::Checkpoint(format!(
            "expected {SCHEDULE_BETA} entry, found {}",
            beta_entry.name
        )));
    }
    if beta_entry.dtype != Dtype::F64.code() {
        return Err(corrupt("schedule betas must be stored at f64"));
    }
    let steps = model.schedule.steps;
    let stored: Vec<f64> = decode_payload::<f64>(&beta_entry);
    if stored.len() != steps {
        return Err(Error::Checkpoint(format!(
            "schedule stores {} betas, config implies {}",
            stored.len(),
            steps
        )));
    }
    for (i, (a, b)) in stored.iter().zip(&model.schedule.beta).enumerate() {
        if a != b {
            return Err(Error::Checkpoint(format!(
                "schedule beta {} is {}, config implies {}",
                i, a, b
            )));
        }
    }
    if !r.done() {
        return Err(corrupt("trailing bytes after tensor table"));
    }
    Ok(model)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<LLCapsModel<T>> {
    let bytes = fs::read(path)?;
    load_checkpoint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64) -> LLCapsModel<f32> {
        let mut cfg = ModelConfig::desk();
        cfg.n_msrb = 1;
        cfg.diffusion.steps = 2;
        cfg.diffusion.denoiser_width = 4;
        cfg.zero_init_residual = false;
        LLCapsModel::from_seed(cfg, seed).unwrap()
    }

    #[test]
    fn round_trip_restores_every_parameter_bit_exactly() {
        let model = tiny_model(1);
        let bytes = checkpoint_bytes(&model);
        let back = load_checkpoint_bytes::<f32>(&bytes).unwrap();
        let a = model.parameters();
        let b = back.parameters();
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.name, q.name);
            let pv = p.tensor.to_vec();
            let qv = q.tensor.to_vec();
            assert!(
                pv.iter().zip(&qv).all(|(x, y)| x.to_bits() == y.to_bits()),
                "parameter {} not bit-identical",
                p.name
            );
        }
        assert_eq!(model.schedule.beta, back.schedule.beta);
    }

    #[test]
    fn restored_model_reproduces_eval_outputs() {
        let model = tiny_model(2);
        let back = load_checkpoint_bytes::<f32>(&checkpoint_bytes(&model)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..3 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
        let x = Tensor::from_vec(Shape::new(1, 3, 8, 8), data).unwrap();
        let y1 = model.llcaps_forward(&x, Mode::EvalStochastic, 9).unwrap();
        let y2 = back.llcaps_forward(&x, Mode::EvalStochastic, 9).unwrap();
        assert_eq!(y1.to_vec(), y2.to_vec());
    }

    #[test]
    fn file_round_trip_works() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(4);
        save_checkpoint(&model, &path).unwrap();
        let back = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(model.parameter_count(), back.parameter_count());
    }

    #[test]
    fn truncated_files_fail_loudly() {
        let model = tiny_model(5);
        let bytes = checkpoint_bytes(&model);
        for cut in [0, 4, 11, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = load_checkpoint_bytes::<f32>(&bytes[..cut]).unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains("checkpoint"), "unexpected error: {msg}");
        }
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let model = tiny_model(6);
        let mut bytes = checkpoint_bytes(&model);
        bytes[0] = b'X';
        assert!(load_checkpoint_bytes::<f32>(&bytes).is_err());

        let mut bytes = checkpoint_bytes(&model);
        bytes[8] = 99;
        let msg = load_checkpoint_bytes::<f32>(&bytes).unwrap_err().to_string();
        assert!(msg.contains("version"));
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let model = tiny_model(7);
        let bytes = checkpoint_bytes(&model);
        let msg = load_checkpoint_bytes::<f64>(&bytes).unwrap_err().to_string();
        assert!(msg.contains("dtype"), "unexpected error: {msg}");
    }

    #[test]
    fn spliced_config_names_the_first_mismatched_parameter() {
        let model = tiny_model(8);
        let bytes = checkpoint_bytes(&model);

        // Re-pack the file around a config whose first layer is wider.
        let mut r = Reader { buf: &bytes, pos: 12 };
        let cfg_text = r.string().unwrap();
        let rest = &bytes[r.pos..];
        let swapped = cfg_text.replace("base_channels=8", "base_channels=12");
        assert_ne!(swapped, cfg_text);
        let mut forged = Vec::new();
        forged.extend_from_slice(MAGIC);
        forged.extend_from_slice(&VERSION.to_le_bytes());
        push_string(&mut forged, &swapped);
        forged.extend_from_slice(rest);

        let msg = load_checkpoint_bytes::<f32>(&forged).unwrap_err().to_string();
        assert!(msg.contains("sfe.weight"), "unexpected error: {msg}");
    }

    #[test]
    fn zero_step_schedules_survive_the_round_trip() {
        let mut cfg = ModelConfig::desk();
        cfg.n_msrb = 1;
        cfg.diffusion.steps = 0;
        cfg.diffusion.denoiser_width = 4;
        let model = LLCapsModel::<f32>::from_seed(cfg, 9).unwrap();
        let back = load_checkpoint_bytes::<f32>(&checkpoint_bytes(&model)).unwrap();
        assert_eq!(back.schedule.steps, 0);
        assert!(back.schedule.beta.is_empty());
    }
}
