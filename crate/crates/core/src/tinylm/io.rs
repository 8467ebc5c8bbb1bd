//! Model file container.
//!
//! Layout (all little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `TLM1` |
//! | 4     | vocab_size (u32) |
//! | 4     | d_model (u32) |
//! | 4     | n_heads (u32) |
//! | 4     | n_layers (u32) |
//! | 4     | d_ff (u32) |
//! | 4     | trained_len (u32) |
//! | 8     | seed (u64) |
//! | 4·N   | parameters as f32, tensors in declaration order |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, TinyModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TLM1";
const HEADER_LEN: usize = 4 + 6 * 4 + 8;

impl TinyModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        for field in [
            c.vocab_size,
            c.d_model,
            c.n_heads,
            c.n_layers,
            c.d_ff,
            c.trained_len,
        ] {
            out.extend_from_slice(&(field as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.seed.to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("truncated header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let word = |i: usize| {
            let at = 4 + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
        };
        let seed = u64::from_le_bytes(bytes[28..36].try_into().unwrap());
        let config = ModelConfig {
            vocab_size: word(0),
            d_model: word(1),
            n_heads: word(2),
            n_layers: word(3),
            d_ff: word(4),
            trained_len: word(5),
            seed,
        };
        config.validate()?;
        let expected = super::ParamLayout::new(&config).total;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * expected {
            return Err(Error::Format(format!(
                "expected {} parameter bytes, found {}",
                4 * expected,
                body.len()
            )));
        }
        let params = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_parts(config, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TinyModel {
        TinyModel::init(ModelConfig {
            vocab_size: 30,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 12,
            trained_len: 8,
            seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let m = small();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"TLM1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 30);
        let back = TinyModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corrupt_files() {
        let mut bytes = small().to_bytes();
        assert!(TinyModel::from_bytes(&bytes[..10]).is_err());
        bytes.pop();
        assert!(TinyModel::from_bytes(&bytes).is_err());
        let mut bad = small().to_bytes();
        bad[0] = b'X';
        assert!(matches!(TinyModel::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tlm");
        let m = small();
        m.save(&path).unwrap();
        assert_eq!(TinyModel::load(&path).unwrap(), m);
    }
}
