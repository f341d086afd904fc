//! Binary checkpoint format.
//!
//! Little-endian throughout. Header: magic `HYSP`, format version, the
//! model's (D, V, blocks, curvature), the sha256 of the producing config,
//! and the epoch count. Then a JSON meta block (model config + graph edges)
//! followed by named f32 tensors: all model parameters in canonical order,
//! then the optimizer's momentum buffers. Parameters live as f64 in memory
//! but are quantized through f32 at every epoch boundary, so the on-disk
//! narrowing loses nothing and save → load → save is byte-identical.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SkeletonGraph, TwinModel};
use crate::trainer::LabConfig;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CKPT_MAGIC: [u8; 4] = *b"HYSP";
pub const CKPT_VERSION: u32 = 1;

/// Everything needed to resume training or run evaluation.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TwinModel,
    /// Momentum buffers, aligned with `TwinModel::online_params_mut` order.
    pub momentum: Vec<(String, Vec<f64>)>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub config_hash: [u8; 32],
}

/// sha256 over the compact JSON rendering of the full config.
pub fn config_hash(cfg: &LabConfig) -> [u8; 32] {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.finalize().into()
}

pub fn hash_hex(h: &[u8; 32]) -> String {
    let mut s = String::with_capacity(64);
    for b in h {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Meta {
    model: ModelConfig,
    v: usize,
    edges: Vec<(usize, usize)>,
}

fn write_blob(buf: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f64]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(dims.len() as u8);
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let m = &ckpt.model;
    let mut buf = Vec::new();
    buf.extend_from_slice(&CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.config.feature_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(m.graph.v as u32).to_le_bytes());
    buf.extend_from_slice(&(m.online_encoder.blocks.len() as u32).to_le_bytes());
    buf.extend_from_slice(&m.config.curvature.to_le_bytes());
    buf.extend_from_slice(&ckpt.config_hash);
    buf.extend_from_slice(&(ckpt.epoch as u32).to_le_bytes());

    let meta = Meta { model: m.config.clone(), v: m.graph.v, edges: m.graph.edges.clone() };
    let meta_json = serde_json::to_vec(&meta).expect("meta serializes");
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);

    let params = m.named_params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, dims, data) in &params {
        write_blob(&mut buf, name, dims, data);
    }
    buf.extend_from_slice(&(ckpt.momentum.len() as u32).to_le_bytes());
    for (name, data) in &ckpt.momentum {
        write_blob(&mut buf, name, &[data.len()], data);
    }
    buf
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(ckpt))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn blob(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let name_len = self.u16()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|_| Error::Corrupt("checkpoint tensor name is not UTF-8".into()))?;
        let ndim = self.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(self.u32()? as usize);
        }
        let len: usize = dims.iter().product();
        let raw = self.take(len * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok((name, dims, data))
    }
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4)? != CKPT_MAGIC {
        return Err(Error::Corrupt("not a checkpoint file (bad magic)".into()));
    }
    let version = cur.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Corrupt(format!("unsupported checkpoint version {version}")));
    }
    let feature_dim = cur.u32()? as usize;
    let v = cur.u32()? as usize;
    let n_blocks = cur.u32()? as usize;
    let curvature = cur.f64()?;
    let config_hash: [u8; 32] = cur.take(32)?.try_into().unwrap();
    let epoch = cur.u32()? as usize;

    let meta_len = cur.u32()? as usize;
    let meta: Meta = serde_json::from_slice(cur.take(meta_len)?)
        .map_err(|e| Error::Corrupt(format!("checkpoint meta block: {e}")))?;
    if meta.model.feature_dim != feature_dim
        || meta.v != v
        || meta.model.curvature != curvature
    {
        return Err(Error::Corrupt("checkpoint header disagrees with meta block".into()));
    }
    let graph = SkeletonGraph::new(meta.v, &meta.edges)?;
    // Build the right parameter structure, then overwrite every tensor.
    let mut model = TwinModel::init(meta.model, graph, 0)?;
    if model.online_encoder.blocks.len() != n_blocks {
        return Err(Error::Corrupt("checkpoint header disagrees with block count".into()));
    }

    let n_params = cur.u32()? as usize;
    let mut blobs = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        blobs.push(cur.blob()?);
    }
    {
        let slots = model.named_params_mut();
        if blobs.len() != slots.len() {
            return Err(Error::Corrupt(format!(
                "checkpoint has {} parameter tensors, model wants {}",
                blobs.len(),
                slots.len()
            )));
        }
        for ((name, dims, data), (want_name, slot)) in blobs.into_iter().zip(slots) {
            if name != want_name {
                return Err(Error::Corrupt(format!(
                    "checkpoint tensor {name:?} where {want_name:?} was expected"
                )));
            }
            let len: usize = dims.iter().product();
            if len != slot.len() || data.len() != slot.len() {
                return Err(Error::Corrupt(format!(
                    "checkpoint tensor {name:?} has {len} elements, model wants {}",
                    slot.len()
                )));
            }
            *slot = data;
        }
    }

    let n_momentum = cur.u32()? as usize;
    let mut momentum = Vec::with_capacity(n_momentum);
    for _ in 0..n_momentum {
        let (name, _dims, data) = cur.blob()?;
        momentum.push((name, data));
    }
    {
        let online = model.online_params_mut();
        if momentum.len() != online.len() {
            return Err(Error::Corrupt(format!(
                "checkpoint has {} momentum buffers, optimizer wants {}",
                momentum.len(),
                online.len()
            )));
        }
        for ((name, data), (want_name, slot)) in momentum.iter().zip(online) {
            if name != &want_name || data.len() != slot.len() {
                return Err(Error::Corrupt(format!(
                    "momentum buffer {name:?} does not line up with parameter {want_name:?}"
                )));
            }
        }
    }

    if cur.pos != buf.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after checkpoint payload",
            buf.len() - cur.pos
        )));
    }
    Ok(Checkpoint { model, momentum, epoch, config_hash })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path)?;
    checkpoint_from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::trainer::LabConfig;

    fn tiny_checkpoint() -> Checkpoint {
        let config = ModelConfig { feature_dim: 8, hidden_channels: 4, ..ModelConfig::default() };
        let mut model =
            TwinModel::init(config, SkeletonGraph::default_desk(), 11).unwrap();
        // Checkpoints hold f32-quantized state; mirror that here.
        for (_, p) in model.named_params_mut() {
            for x in p.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
        let momentum: Vec<(String, Vec<f64>)> = model
            .online_params_mut()
            .into_iter()
            .map(|(name, p)| {
                let buf = p.iter().enumerate().map(|(i, x)| (x * 0.5 + i as f64 * 1e-3) as f32 as f64).collect();
                (name, buf)
            })
            .collect();
        Checkpoint { model, momentum, epoch: 3, config_hash: config_hash(&LabConfig::desk()) }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ckpt = tiny_checkpoint();
        let bytes = checkpoint_bytes(&ckpt);
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(checkpoint_bytes(&back), bytes);
        assert_eq!(back.epoch, 3);
        assert_eq!(back.config_hash, ckpt.config_hash);
        let a = ckpt.model.named_params();
        let b = back.model.named_params();
        assert_eq!(a.len(), b.len());
        for ((na, da, va), (nb, db, vb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert_eq!(da, db);
            assert_eq!(va, vb, "parameter {na} changed across the round trip");
        }
        assert_eq!(back.momentum, ckpt.momentum);
    }

    #[test]
    fn corrupt_files_are_rejected_with_a_reason() {
        let ckpt = tiny_checkpoint();
        let mut bytes = checkpoint_bytes(&ckpt);

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(checkpoint_from_bytes(&wrong_magic), Err(Error::Corrupt(_))));

        let truncated = &bytes[..bytes.len() / 2];
        assert!(matches!(checkpoint_from_bytes(truncated), Err(Error::Corrupt(_))));

        bytes.push(0);
        assert!(matches!(checkpoint_from_bytes(&bytes), Err(Error::Corrupt(_))));

        assert!(matches!(checkpoint_from_bytes(b"HY"), Err(Error::Corrupt(_))));
    }

    #[test]
    fn hash_distinguishes_configs_and_renders_as_hex() {
        let a = config_hash(&LabConfig::desk());
        let b = config_hash(&LabConfig::paper());
        assert_ne!(a, b);
        assert_eq!(a, config_hash(&LabConfig::desk()), "hash is a pure function of the config");
        let hex = hash_hex(&a);
        assert_eq!(hex.len(), 64);
        assert!(hex.chars().all(|c| c.is_ascii_hexdigit()));
    }

    #[test]
    fn file_round_trip_works() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let ckpt = tiny_checkpoint();
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(checkpoint_bytes(&back), checkpoint_bytes(&ckpt));
    }
}
