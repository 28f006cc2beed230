//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic (8 bytes) | version u32 | header_len u64 | header JSON
//! array_count u32 | { len u64 | len × f64 } ... | sha256 of everything before (32 bytes)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{write_atomic, TrainError, TrainingHistory};
use crate::architectures::{build, ArchitectureSpec};
use crate::nn::Network;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SRTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: ArchitectureSpec,
    history: TrainingHistory,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network,
    pub spec: ArchitectureSpec,
    pub history: TrainingHistory,
}

fn err(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

pub fn write_checkpoint(
    network: &Network,
    spec: &ArchitectureSpec,
    history: &TrainingHistory,
) -> Result<Vec<u8>, TrainError> {
    let header = serde_json::to_vec(&Header {
        format_version: CHECKPOINT_VERSION,
        spec: spec.clone(),
        history: history.clone(),
    })
    .map_err(|e| err(e.to_string()))?;
    let params = network.params();
    let mut buf = Vec::with_capacity(64 + header.len() + 8 * network.count_params());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(err(format!("truncated while reading {what}")));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 32 || !bytes.starts_with(CHECKPOINT_MAGIC) {
        return Err(err("not a checkpoint file"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(err("checksum mismatch (file truncated or corrupted)"));
    }
    let mut cur = Cursor { bytes: body, pos: CHECKPOINT_MAGIC.len() };
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(err(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let header_len = usize::try_from(cur.u64("header length")?).map_err(|_| err("header too large"))?;
    let header: Header =
        serde_json::from_slice(cur.take(header_len, "header")?).map_err(|e| err(format!("header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(err(format!("header format_version {} mismatch", header.format_version)));
    }
    let mut network = build(&header.spec)?;
    let count = cur.u32("array count")? as usize;
    let mut params = network.params_mut();
    if count != params.len() {
        return Err(err(format!(
            "shape mismatch: file has {count} arrays, architecture needs {}",
            params.len()
        )));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let len = cur.u64("array length")? as usize;
        if len != p.len() {
            return Err(err(format!(
                "shape mismatch: array {i} has {len} values, architecture needs {}",
                p.len()
            )));
        }
        let raw = cur.take(len.checked_mul(8).ok_or_else(|| err("array too large"))?, "weights")?;
        for (dst, chunk) in p.iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if cur.pos != body.len() {
        return Err(err("trailing bytes after weight arrays"));
    }
    network.set_dropout_rate(header.spec.dropout_rate)?;
    Ok(Checkpoint {
        network,
        spec: header.spec,
        history: header.history,
    })
}

pub fn save_checkpoint(
    network: &Network,
    spec: &ArchitectureSpec,
    history: &TrainingHistory,
    path: impl AsRef<Path>,
) -> Result<(), TrainError> {
    let bytes = write_checkpoint(network, spec, history)?;
    write_atomic(path.as_ref(), &bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> ArchitectureSpec {
        let mut s = ArchitectureSpec::shallow(12);
        s.embed_dim = 10;
        s.seed = 5;
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = spec();
        let mut net = build(&spec).unwrap();
        // perturb so the weights differ from a fresh build
        for p in net.params_mut() {
            for v in p.iter_mut() {
                *v = *v * 1.000_001 + 1e-9;
            }
        }
        let history = TrainingHistory { best_epoch: 3, stopped_epoch: 7, ..Default::default() };
        let bytes = write_checkpoint(&net, &spec, &history).unwrap();
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back.network, net);
        assert_eq!(back.spec, spec);
        assert_eq!(back.history, history);
        assert_eq!(back.network.count_params(), net.count_params());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(vec![12, 10], (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        assert_eq!(
            net.infer(&x).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.network.infer(&x).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(write_checkpoint(&back.network, &back.spec, &back.history).unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let spec = spec();
        let net = build(&spec).unwrap();
        let bytes = write_checkpoint(&net, &spec, &TrainingHistory::default()).unwrap();
        assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(read_checkpoint(&[]).is_err());
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(read_checkpoint(&flipped).is_err());
    }

    fn reseal(mut body: Vec<u8>) -> Vec<u8> {
        let digest = Sha256::digest(&body);
        body.extend_from_slice(&digest);
        body
    }

    #[test]
    fn version_and_shape_mismatch() {
        let spec = spec();
        let net = build(&spec).unwrap();
        let bytes = write_checkpoint(&net, &spec, &TrainingHistory::default()).unwrap();
        let mut body = bytes[..bytes.len() - 32].to_vec();
        body[8..12].copy_from_slice(&99u32.to_le_bytes());
        let e = read_checkpoint(&reseal(body)).unwrap_err().to_string();
        assert!(e.contains("version"), "{e}");

        // weights for a different filter count under the original spec
        let mut other = spec.clone();
        other.kernel_plan[0].filters = 3;
        let other_net = build(&other).unwrap();
        let alien = write_checkpoint(&other_net, &other, &TrainingHistory::default()).unwrap();
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let alien_header_len = u64::from_le_bytes(alien[12..20].try_into().unwrap()) as usize;
        let mut body = bytes[..20 + header_len].to_vec();
        body.extend_from_slice(&alien[20 + alien_header_len..alien.len() - 32]);
        let e = read_checkpoint(&reseal(body)).unwrap_err().to_string();
        assert!(e.contains("shape mismatch"), "{e}");
    }
}
