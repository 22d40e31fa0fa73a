//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"SVGENCKP"  u32 version  [u8; 32] config hash  u64 step  u64 count
//! count × { u32 name_len  name (utf-8)  u32 rank  rank × u64 dim  Π dims × f64 }
//! ```

use std::path::Path;

use svgen_core::train::NamedArray;

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"SVGENCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: [u8; 32],
    pub step: u64,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(config_hash: [u8; 32], step: u64, arrays: Vec<NamedArray>) -> Self {
        Self { version: VERSION, config_hash, step, arrays }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for (name, shape, values) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(CliError::Checkpoint(String::from("not a checkpoint file")));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::Checkpoint(format!("unsupported version {version}")));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let step = r.u64()?;
        let count = r.u64()?;
        let mut arrays = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| CliError::Checkpoint(String::from("array name is not utf-8")))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| CliError::Checkpoint(String::from("dimension too large")))?);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| CliError::Checkpoint(format!("{name}: element count overflows")))?;
            if n.checked_mul(8).is_none_or(|b| b > r.remaining()) {
                return Err(CliError::Checkpoint(format!("{name}: truncated data")));
            }
            let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            arrays.push((name, shape, values));
        }
        if r.remaining() != 0 {
            return Err(CliError::Checkpoint(String::from("trailing bytes")));
        }
        Ok(Self { version, config_hash, step, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and refuses a checkpoint written under a different configuration.
    pub fn load_matching(path: &Path, config_hash: &[u8; 32]) -> Result<Self, CliError> {
        let ck = Self::load(path)?;
        if &ck.config_hash != config_hash {
            return Err(CliError::Checkpoint(format!(
                "{} was written with config hash {} but the current config hashes to {}",
                path.display(),
                hex(&ck.config_hash),
                hex(config_hash)
            )));
        }
        Ok(ck)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.at
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        if n > self.remaining() {
            return Err(CliError::Checkpoint(String::from("unexpected end of file")));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
