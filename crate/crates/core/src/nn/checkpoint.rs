//! Binary checkpoint format.
//!
//! ```text
//! "BCKP" | version u8 | variant u8 | colorspace u8 | channels u32 | res_blocks u32
//! tensor_count u32
//! per tensor: name_len u32 | name (UTF-8) | rank u32 | dims u32 × rank | data f32 × Π dims
//! ```
//!
//! All integers and floats are little-endian.

use super::network::Network;
use super::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BCKP";
pub const VERSION: u8 = 1;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid tensor record at byte {offset}: {reason}")]
    InvalidRecord { offset: usize, reason: String },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
}

/// Architecture fields stored in the checkpoint header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchRecord {
    pub variant: u8,
    pub colorspace: u8,
    pub channels: u32,
    pub n_res_blocks: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchRecord,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.arch.variant);
        out.push(self.arch.colorspace);
        out.extend_from_slice(&self.arch.channels.to_le_bytes());
        out.extend_from_slice(&self.arch.n_res_blocks.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&4u32.to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let arch = ArchRecord {
            variant: r.u8()?,
            colorspace: r.u8()?,
            channels: r.u32()?,
            n_res_blocks: r.u32()?,
        };
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let offset = r.pos;
            let invalid = |reason: &str| CheckpointError::InvalidRecord {
                offset,
                reason: reason.to_string(),
            };
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| invalid("name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 4 {
                return Err(invalid("rank must be 1 to 4"));
            }
            let mut shape = [1usize; 4];
            for d in &mut shape[4 - rank..] {
                *d = r.u32()? as usize;
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| invalid("tensor too large"))?;
            let raw = r.take(len.checked_mul(4).ok_or_else(|| invalid("tensor too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::from_vec(shape, data).map_err(|e| invalid(&e.to_string()))?;
            tensors.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { arch, tensors })
    }

    /// Snapshot of a network's persistent tensors.
    pub fn capture(arch: ArchRecord, net: &mut Network<f32>) -> Self {
        let tensors = net
            .state_mut()
            .into_iter()
            .map(|(name, t)| (name, t.clone()))
            .collect();
        Self { arch, tensors }
    }

    /// Copies tensors into `net`, which must have the same names and shapes
    /// in the same order.
    pub fn restore(&self, net: &mut Network<f32>) -> Result<(), CheckpointError> {
        let mut state = net.state_mut();
        if state.len() != self.tensors.len() {
            return Err(CheckpointError::ArchitectureMismatch(format!(
                "network has {} tensors, checkpoint has {}",
                state.len(),
                self.tensors.len()
            )));
        }
        for ((name, dst), (src_name, src)) in state.iter_mut().zip(&self.tensors) {
            if name != src_name || dst.shape() != src.shape() {
                return Err(CheckpointError::ArchitectureMismatch(format!(
                    "expected {name} {:?}, found {src_name} {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
        }
        for ((_, dst), (_, src)) in state.iter_mut().zip(&self.tensors) {
            **dst = src.clone();
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
