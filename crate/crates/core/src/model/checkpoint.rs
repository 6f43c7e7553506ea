//! Checkpoint files, little-endian:
//!
//! ```text
//! "AVC1" | u32 config_len | config JSON
//! u32 n_params
//! per param: u32 name_len | name | u32 ndim | ndim x u32 dim | f32 payload
//! ```

use std::path::Path;

use crate::bytes::Reader;
use crate::error::{Error, Result};
use crate::ndnum::Array;

use super::{ModelConfig, ModelParams, Param};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AVC1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn checkpoint_bytes(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let config = serde_json::to_vec(&params.config)?;
    put_u32(&mut out, config.len());
    out.extend_from_slice(&config);
    put_u32(&mut out, params.params.len());
    for p in &params.params {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.shape().len());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        for x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn parse_checkpoint(bytes: &[u8]) -> std::result::Result<ModelParams<f32>, String> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err("bad magic, expected AVC1".into());
    }
    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?).map_err(|e| format!("config: {e}"))?;
    let n = r.u32()? as usize;
    let mut params = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "name is not UTF-8")?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let data = r.f32s(shape.iter().product())?;
        let value = Array::new(shape, data).map_err(|e| e.to_string())?;
        params.push(Param { name, value });
    }
    if r.remaining() != 0 {
        return Err(format!("{} trailing bytes", r.remaining()));
    }
    ModelParams::from_parts(config, params).map_err(|e| e.to_string())
}

/// Writes via a temporary file and rename.
pub fn save_checkpoint(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(params)?;
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes).map_err(|d| Error::load(path, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnum::{Rng, Stream};

    fn params() -> ModelParams<f32> {
        let cfg = ModelConfig {
            d_seg: 4,
            d_text: 3,
            embed: 4,
            heads: 2,
            mlp_hidden: 5,
            mlp_hidden_layers: 2,
            dropout: 0.0,
            num_adverbs: 3,
        };
        ModelParams::init(&cfg, &mut Rng::new(1, Stream::Init)).unwrap()
    }

    #[test]
    fn round_trip_exact() {
        let p = params();
        let back = parse_checkpoint(&checkpoint_bytes(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&params(), &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), params());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let mut b = checkpoint_bytes(&params()).unwrap();
        assert!(parse_checkpoint(&b[..b.len() - 2]).is_err());
        b.push(0);
        assert!(parse_checkpoint(&b).unwrap_err().contains("trailing"));
        b[0] = b'Z';
        assert!(parse_checkpoint(&b).unwrap_err().contains("magic"));
    }
}
