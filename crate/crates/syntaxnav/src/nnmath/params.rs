//! Named parameter storage plus the versioned binary checkpoint container.
//!
//! Checkpoint byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SNAVCKP1"
//! 8       4     u32 format version (currently 1)
//! 12      8     u64 creation seed
//! 20      8     u64 FNV-1a hash of the config text
//! 28      8     u64 iteration counter
//! 36      4     u32 config text length, then that many UTF-8 bytes
//! ..      4     u32 vocabulary entry count, then per entry:
//!                 u32 byte length + UTF-8 token
//! ..      4     u32 parameter entry count, then per entry:
//!                 u32 name length + UTF-8 name
//!                 u8 rank, rank x u64 dims
//!                 n x f64 value payload (row-major, LE bits)
//!                 n x f64 optimizer accumulator payload
//! ```
//!
//! Round-tripping a checkpoint is bitwise exact: floats are stored via
//! `to_le_bytes` of their IEEE-754 representation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use super::tensor::Tensor;
use super::MathError;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    /// RMSProp squared-gradient accumulator, same shape as `value`.
    pub accum: Tensor,
}

/// Named map from parameter path (e.g. `encoder.treelstm.w_x`) to tensor
/// plus optimizer state. Iteration order is the sorted name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), MathError> {
        if self.entries.contains_key(name) {
            return Err(MathError::DuplicateParameter {
                name: name.to_string(),
            });
        }
        let accum = Tensor::zeros_like(&value);
        self.entries.insert(name.to_string(), Param { value, accum });
        Ok(())
    }

    /// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) matrix, fan_in = cols.
    pub fn add_matrix(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> Result<(), MathError> {
        let bound = 1.0 / (cols as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    /// Zero-initialized bias vector.
    pub fn add_bias(&mut self, name: &str, len: usize) -> Result<(), MathError> {
        self.insert(name, Tensor::vector(vec![0.0; len]))
    }

    /// Embedding table whose padding row (row 0) is all-zero by construction.
    pub fn add_embedding(
        &mut self,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<(), MathError> {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut data = vec![0.0; vocab * dim];
        for v in data.iter_mut().skip(dim) {
            *v = rng.gen_range(-bound..bound);
        }
        self.insert(name, Tensor::matrix(vocab, dim, data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameter values.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Parameter count under a dotted prefix, e.g. `encoder.`.
    pub fn scalar_count_prefixed(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("config hash mismatch: header says {expected:#x}, text hashes to {actual:#x}")]
    HashMismatch { expected: u64, actual: u64 },
    #[error("invalid payload: {0}")]
    Invalid(String),
}

const MAGIC: &[u8; 8] = b"SNAVCKP1";
const VERSION: u32 = 1;

/// Everything needed to resume or evaluate a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub iteration: u64,
    /// Flat key=value config text, one pair per line.
    pub config_text: String,
    pub vocab: Vec<String>,
    pub params: ParameterSet,
}

/// FNV-1a 64-bit hash, used for the config fingerprint in headers.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&ckpt.seed.to_le_bytes());
    buf.extend_from_slice(&fnv1a64(ckpt.config_text.as_bytes()).to_le_bytes());
    buf.extend_from_slice(&ckpt.iteration.to_le_bytes());

    let cfg = ckpt.config_text.as_bytes();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg);

    buf.extend_from_slice(&(ckpt.vocab.len() as u32).to_le_bytes());
    for tok in &ckpt.vocab {
        let b = tok.as_bytes();
        buf.extend_from_slice(&(b.len() as u32).to_le_bytes());
        buf.extend_from_slice(b);
    }

    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for (name, param) in ckpt.params.iter() {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        buf.extend_from_slice(nb);
        let shape = param.value.shape();
        buf.push(shape.len() as u8);
        for d in shape {
            buf.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in param.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in param.accum.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|e| CheckpointError::Invalid(format!("bad utf8: {e}")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { buf: &bytes, pos: 0 };

    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let seed = r.u64()?;
    let config_hash = r.u64()?;
    let iteration = r.u64()?;
    let config_text = r.string()?;
    let actual = fnv1a64(config_text.as_bytes());
    if actual != config_hash {
        return Err(CheckpointError::HashMismatch {
            expected: config_hash,
            actual,
        });
    }

    let vocab_n = r.u32()? as usize;
    let mut vocab = Vec::with_capacity(vocab_n);
    for _ in 0..vocab_n {
        vocab.push(r.string()?);
    }

    let n = r.u32()? as usize;
    let mut params = ParameterSet::new();
    for _ in 0..n {
        let name = r.string()?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let count: usize = shape.iter().product();
        let value = Tensor::new(shape.clone(), r.f64s(count)?)
            .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        let accum = Tensor::new(shape, r.f64s(count)?)
            .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        params
            .insert(&name, value)
            .map_err(|e| CheckpointError::Invalid(e.to_string()))?;
        params.get_mut(&name).unwrap().accum = accum;
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Invalid(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        seed,
        iteration,
        config_text,
        vocab,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let mut params = ParameterSet::new();
        params.add_matrix("encoder.treelstm.w_x", 3, 4, &mut rng).unwrap();
        params.add_bias("encoder.treelstm.b", 3).unwrap();
        params.add_embedding("encoder.embed.table", 5, 2, &mut rng).unwrap();
        Checkpoint {
            seed: 42,
            iteration: 17,
            config_text: "lr = 0.001\nbatch = 8\n".to_string(),
            vocab: vec!["<pad>".into(), "<unk>".into(), "walk".into()],
            params,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        // Re-saving the loaded checkpoint reproduces identical bytes.
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &back).unwrap();
        assert_eq!(bytes1, std::fs::read(&path2).unwrap());
    }

    #[test]
    fn duplicate_parameter_rejected() {
        let mut params = ParameterSet::new();
        params.add_bias("x", 2).unwrap();
        assert!(matches!(
            params.add_bias("x", 2).unwrap_err(),
            MathError::DuplicateParameter { .. }
        ));
    }

    #[test]
    fn embedding_padding_row_is_zero() {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let mut params = ParameterSet::new();
        params.add_embedding("e", 4, 3, &mut rng).unwrap();
        let table = &params.get("e").unwrap().value;
        assert_eq!(&table.data()[..3], &[0.0, 0.0, 0.0]);
        assert!(table.data()[3..].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            CheckpointError::BadMagic
        ));
    }

    #[test]
    fn truncated_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &sample_checkpoint()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            CheckpointError::Truncated
        ));
    }
}
