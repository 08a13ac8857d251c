//! Binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//! magic `HSEQ1`, schema version u32, variant u8, layers u32, hidden u32,
//! input dim u32, attention dim u32 (0 for the baseline), dropout f64,
//! rng id (u8 length + ASCII), training seed u64, sequence length u32, then
//! every parameter tensor in [`ModelParams::tensors`] order as row-major f64.
//! The file ends with the FNV-1a 64 hash of all preceding bytes.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::RNG_ALGORITHM;

use super::params::{ModelConfig, ModelParams, Variant};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"HSEQ1";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub rng_algorithm: String,
    pub training_seed: u64,
    /// Number of windows per input sequence used in training.
    pub seq_len: usize,
}

impl Checkpoint {
    pub fn new(params: ModelParams, training_seed: u64, seq_len: usize) -> Self {
        Checkpoint {
            params,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            training_seed,
            seq_len,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.params.config;
        let mut b = Vec::with_capacity(64 + 8 * self.params.parameter_count());
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_SCHEMA_VERSION.to_le_bytes());
        b.push(cfg.variant.code());
        for v in [cfg.layers, cfg.hidden, cfg.input_dim] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let a = if cfg.variant.has_attention() { cfg.attention_dim } else { 0 };
        b.extend_from_slice(&(a as u32).to_le_bytes());
        b.extend_from_slice(&cfg.dropout.to_le_bytes());
        b.push(self.rng_algorithm.len() as u8);
        b.extend_from_slice(self.rng_algorithm.as_bytes());
        b.extend_from_slice(&self.training_seed.to_le_bytes());
        b.extend_from_slice(&(self.seq_len as u32).to_le_bytes());
        for (_, t) in self.params.tensors() {
            for v in t {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv1a64(&b);
        b.extend_from_slice(&sum.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a64(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch; file is corrupt".into()));
        }
        let mut r = Cursor { buf: body, pos: 5 };
        let version = r.u32()?;
        if version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!("unsupported schema version {version}")));
        }
        let variant = Variant::from_code(r.u8()?)
            .ok_or_else(|| Error::Checkpoint("unknown model variant code".into()))?;
        let layers = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let input_dim = r.u32()? as usize;
        let attention_dim = r.u32()? as usize;
        let dropout = r.f64()?;
        let n = r.u8()? as usize;
        let rng_algorithm = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("rng id is not UTF-8".into()))?;
        let training_seed = r.u64()?;
        let seq_len = r.u32()? as usize;

        let config = ModelConfig {
            variant,
            layers,
            hidden,
            input_dim,
            attention_dim: if variant.has_attention() { attention_dim } else { hidden },
            dropout,
        };
        let mut params = ModelParams::zeros(config).map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = r.f64()?;
            }
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after parameter tensors",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            params,
            rng_algorithm,
            training_seed,
            seq_len,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Checkpoint::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    /// Hex digest of the serialized form, used as a checkpoint id.
    pub fn id(&self) -> String {
        format!("{:016x}", fnv1a64(&self.to_bytes()))
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn sample(variant: Variant) -> Checkpoint {
        let cfg = ModelConfig::new(variant, 8).with_hidden(6);
        Checkpoint::new(ModelParams::init(cfg, &mut Rng::new(2)).unwrap(), 42, 15)
    }

    #[test]
    fn round_trip_is_exact() {
        for v in [Variant::Lstm, Variant::LstmAttention] {
            let ck = sample(v);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
            assert_eq!(back.rng_algorithm, "chacha20");
        }
    }

    #[test]
    fn header_layout() {
        let bytes = sample(Variant::LstmAttention).to_bytes();
        assert_eq!(&bytes[..5], b"HSEQ1");
        assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 1);
        assert_eq!(bytes[9], 1);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample(Variant::Lstm).to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
        let good = sample(Variant::Lstm).to_bytes();
        assert!(Checkpoint::from_bytes(&good[..good.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
