//! Binary checkpoint container.
//!
//! Layout (all integers little-endian `u32`, all floats little-endian
//! `f64`):
//!
//! ```text
//! magic    8 bytes  b"MOLGRAD\0"
//! version  u32      currently 1
//! config   u32 length + that many bytes of ModelConfig JSON
//! scaler   u8 flag  (1 => two f64 follow: label min, label max)
//! vocab    u32 count, then per token: u32 length + UTF-8 bytes
//! tensors  u32 count, then per tensor:
//!          u32 name length + name bytes
//!          u32 rank, then rank x u32 dimensions
//!          numel x f64 values, row-major
//! ```
//!
//! Writes are atomic: the file is assembled under a temporary name in the
//! destination directory and renamed into place, so a crash mid-write never
//! leaves a half-checkpoint behind.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{EncoderError, Model, ModelConfig};
use crate::smiles::Vocabulary;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MOLGRAD\0";
const VERSION: u32 = 1;

/// Errors from reading or writing checkpoints.
#[derive(Debug, Error)]
pub enum CheckpointError {
    /// Filesystem failure.
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    /// The file does not start with the checkpoint magic.
    #[error("not a molgrad checkpoint (bad magic bytes)")]
    BadMagic,
    /// A version this build cannot read.
    #[error("unsupported checkpoint version {0} (this build reads version {VERSION})")]
    BadVersion(u32),
    /// Structurally broken contents.
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    /// The stored tensors or config do not form a valid model.
    #[error("checkpoint does not describe a valid model: {0}")]
    Model(#[from] EncoderError),
}

/// Serializes `model` to `path` atomically.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    write_u32(&mut buf, VERSION);

    let config_json = serde_json::to_vec(model.config())
        .map_err(|e| CheckpointError::Corrupt(format!("config serialization: {e}")))?;
    write_u32(&mut buf, config_json.len() as u32);
    buf.extend_from_slice(&config_json);

    match model.label_scaler() {
        Some((min, max)) => {
            buf.push(1);
            buf.extend_from_slice(&min.to_le_bytes());
            buf.extend_from_slice(&max.to_le_bytes());
        }
        None => buf.push(0),
    }

    let vocab = model.vocab();
    write_u32(&mut buf, vocab.len() as u32);
    for token in vocab.tokens() {
        write_u32(&mut buf, token.len() as u32);
        buf.extend_from_slice(token.as_bytes());
    }

    let named = model.named_parameters();
    write_u32(&mut buf, named.len() as u32);
    for (name, tensor) in named {
        write_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        write_u32(&mut buf, tensor.shape().len() as u32);
        for &d in tensor.shape() {
            write_u32(&mut buf, d as u32);
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    atomic_write(path, &buf)?;
    Ok(())
}

/// Writes `bytes` to `path` via a same-directory temporary file + rename.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Loads a model previously written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Model, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }

    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| CheckpointError::Corrupt(format!("config JSON: {e}")))?;

    let scaler = match r.take(1)?[0] {
        0 => None,
        1 => Some((r.f64()?, r.f64()?)),
        b => return Err(CheckpointError::Corrupt(format!("bad scaler flag {b}"))),
    };

    let vocab_len = r.u32()? as usize;
    let mut tokens = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        let len = r.u32()? as usize;
        let s = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Corrupt("vocabulary token is not UTF-8".into()))?;
        tokens.push(s.to_string());
    }
    let vocab = Vocabulary::from_token_list(tokens)
        .ok_or_else(|| CheckpointError::Corrupt("vocabulary layout invalid".into()))?;

    let tensor_count = r.u32()? as usize;
    let mut named = HashMap::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 4 {
            return Err(CheckpointError::Corrupt(format!("tensor '{name}' has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::Corrupt(format!("tensor '{name}': {e}")))?;
        if named.insert(name.clone(), tensor).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate tensor '{name}'")));
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }

    Ok(Model::from_parts(config, vocab, named, scaler)?)
}

fn write_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "truncated at byte {} (needed {} more)",
                self.pos, n
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::{prepare_input, tokenize};

    fn model_with_brackets() -> Model {
        let corpus = [tokenize("[NH4+]CC[O-]").unwrap()];
        let vocab = Vocabulary::from_sequences(corpus.iter());
        let mut m = Model::init(ModelConfig::desk(vocab.len()), vocab, 42).unwrap();
        m.set_label_scaler(-11.6, 1.7);
        m
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = model_with_brackets();
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        assert_eq!(loaded.config(), model.config());
        assert_eq!(loaded.vocab(), model.vocab());
        assert_eq!(loaded.label_scaler(), Some((-11.6, 1.7)));
        for ((na, ta), (nb, tb)) in model.named_parameters().iter().zip(loaded.named_parameters()) {
            assert_eq!(na, &nb);
            assert_eq!(ta.shape(), tb.shape());
            assert_eq!(ta.data(), tb.data(), "parameter {na} changed in round trip");
        }

        // Loaded model predicts identically.
        let seq = prepare_input(&tokenize("CC[O-]").unwrap(), None).unwrap();
        let (y0, _) = crate::encoder::forward(&model, &seq, None).unwrap();
        let (y1, _) = crate::encoder::forward(&loaded, &seq, None).unwrap();
        assert_eq!(y0.to_bits(), y1.to_bits());
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTMINE\0rest").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));

        let model = model_with_brackets();
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // version field
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadVersion(99))));
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = model_with_brackets();
        save_checkpoint(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn trailing_garbage_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = model_with_brackets();
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(b"xx");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn no_scaler_round_trips_as_none() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let vocab = Vocabulary::base();
        let model = Model::init(ModelConfig::desk(vocab.len()), vocab, 7).unwrap();
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().label_scaler(), None);
    }
}
