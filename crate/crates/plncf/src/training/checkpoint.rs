//! Versioned binary checkpoints: run metadata, every parameter tensor, the
//! optimizer moments, and the training RNG position, byte-exact on reload.
//!
//! Layout (all integers little-endian):
//! magic "PLNC", version u32, arch tag, protocol tag, seed u64, n_users u64,
//! n_groups u64, epoch u64, config digest (32 bytes), optimizer step u64,
//! RNG block (seed 32 bytes, word position u128, stream u64), then three
//! tensor blocks — parameters, first moments, second moments — each a u64
//! count followed by (name, u64 length, f64 values) entries. Strings are a
//! u64 length plus UTF-8 bytes. Tensor order matches
//! [`ModelState::tensors`], which is part of the format.

use std::path::Path;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{OptimizerState, TrainError};
use crate::models::{init_model, Arch, ModelState};
use crate::splits::Protocol;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PLNC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything identifying a run, stored in the checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub arch: Arch,
    pub protocol: Protocol,
    pub seed: u64,
    pub n_users: usize,
    pub n_groups: usize,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
    /// Digest of the full training recipe; a mismatch on reload means the
    /// file belongs to a different experiment.
    pub config_digest: [u8; 32],
}

/// Snapshot of a counter-based RNG: enough to resume its stream exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngCheckpoint {
    pub seed: [u8; 32],
    pub word_pos: u128,
    pub stream: u64,
}

impl RngCheckpoint {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngCheckpoint {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos(),
            stream: rng.get_stream(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// A fully materialized checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelState,
    pub opt: OptimizerState,
    pub rng: RngCheckpoint,
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let meta = &checkpoint.meta;
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    write_str(&mut buf, meta.arch.tag());
    write_str(&mut buf, meta.protocol.tag());
    buf.extend_from_slice(&meta.seed.to_le_bytes());
    buf.extend_from_slice(&(meta.n_users as u64).to_le_bytes());
    buf.extend_from_slice(&(meta.n_groups as u64).to_le_bytes());
    buf.extend_from_slice(&(meta.epoch as u64).to_le_bytes());
    buf.extend_from_slice(&meta.config_digest);
    buf.extend_from_slice(&checkpoint.opt.step.to_le_bytes());
    buf.extend_from_slice(&checkpoint.rng.seed);
    buf.extend_from_slice(&checkpoint.rng.word_pos.to_le_bytes());
    buf.extend_from_slice(&checkpoint.rng.stream.to_le_bytes());
    for state in [&checkpoint.params, &checkpoint.opt.m, &checkpoint.opt.v] {
        let tensors = state.tensors();
        buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, values) in tensors {
            write_str(&mut buf, &name);
            buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(TrainError::Schema("bad magic".into()));
    }
    let version = r.read_u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Schema(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let arch_tag = r.read_str()?;
    let arch = Arch::from_str(&arch_tag)
        .map_err(|_| TrainError::Schema(format!("unknown arch tag {arch_tag:?}")))?;
    let protocol_tag = r.read_str()?;
    let protocol = Protocol::from_str(&protocol_tag)
        .map_err(|_| TrainError::Schema(format!("unknown protocol tag {protocol_tag:?}")))?;
    let seed = r.read_u64()?;
    let n_users = r.read_u64()? as usize;
    let n_groups = r.read_u64()? as usize;
    let epoch = r.read_u64()? as usize;
    let mut config_digest = [0u8; 32];
    config_digest.copy_from_slice(r.take(32)?);
    let step = r.read_u64()?;
    let mut rng_seed = [0u8; 32];
    rng_seed.copy_from_slice(r.take(32)?);
    let word_pos = r.read_u128()?;
    let stream = r.read_u64()?;
    if n_users == 0 || n_groups == 0 {
        return Err(TrainError::Schema("empty model dimensions".into()));
    }

    let template = init_model(arch, n_users, n_groups, 0).zeros_like();
    let mut states = Vec::with_capacity(3);
    for _ in 0..3 {
        let mut state = template.clone();
        let count = r.read_u64()? as usize;
        let mut tensors = state.tensors_mut();
        if count != tensors.len() {
            return Err(TrainError::Schema(format!(
                "{count} tensors on disk, {} expected for {arch}",
                tensors.len()
            )));
        }
        for (name, values) in tensors.iter_mut() {
            let disk_name = r.read_str()?;
            if &disk_name != name {
                return Err(TrainError::Schema(format!(
                    "tensor {disk_name:?} on disk where {name:?} expected"
                )));
            }
            let len = r.read_u64()? as usize;
            if len != values.len() {
                return Err(TrainError::Schema(format!(
                    "tensor {name}: {len} values on disk, {} expected",
                    values.len()
                )));
            }
            for v in values.iter_mut() {
                *v = r.read_f64()?;
            }
        }
        drop(tensors);
        states.push(state);
    }
    if r.pos != buf.len() {
        return Err(TrainError::Schema(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }

    let v = states.pop().expect("three states");
    let m = states.pop().expect("three states");
    let params = states.pop().expect("three states");
    Ok(Checkpoint {
        meta: CheckpointMeta {
            arch,
            protocol,
            seed,
            n_users,
            n_groups,
            epoch,
            config_digest,
        },
        params,
        opt: OptimizerState { m, v, step },
        rng: RngCheckpoint {
            seed: rng_seed,
            word_pos,
            stream,
        },
    })
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.buf.len() {
            return Err(TrainError::Schema("unexpected end of file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn read_u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn read_u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn read_u128(&mut self) -> Result<u128, TrainError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn read_f64(&mut self) -> Result<f64, TrainError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn read_str(&mut self) -> Result<String, TrainError> {
        let len = self.read_u64()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| TrainError::Schema("non-UTF-8 string".into()))
    }
}
