//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "GINT"
//! version      u32      1
//! field count  u32      11
//! fields       u32 × 11 nodes, node_dim, channels, embed_dim, classes,
//!                       widths[0..3], stride, gi_mode, semantic_adjacency
//! tensor count u32
//! per tensor   u32 name length, name bytes (UTF-8), u32 rows, u32 cols,
//!              rows·cols f32 values in row-major order
//! ```
//!
//! Tensors appear in [`PARAM_NAMES`] order.

use std::fs;
use std::path::Path;

use super::{AdjacencyInit, GINetConfig, GINetParams, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::gi_unit::GiMode;
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"GINT";
pub const VERSION: u32 = 1;
const CONFIG_FIELDS: u32 = 11;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: GINetConfig,
    pub params: GINetParams<f32>,
}

pub fn encode(config: &GINetConfig, params: &GINetParams<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let put = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
    put(&mut out, VERSION);
    put(&mut out, CONFIG_FIELDS);
    for v in [
        config.nodes as u32,
        config.node_dim as u32,
        config.channels as u32,
        config.embed_dim as u32,
        config.classes as u32,
        config.widths[0] as u32,
        config.widths[1] as u32,
        config.widths[2] as u32,
        config.stride as u32,
        config.gi_mode.code(),
        config.semantic_adjacency.code(),
    ] {
        put(&mut out, v);
    }
    let tensors = params.tensors();
    put(&mut out, tensors.len() as u32);
    for (name, m) in tensors {
        put(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put(&mut out, m.rows() as u32);
        put(&mut out, m.cols() as u32);
        for &x in m.as_slice() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic bytes (not a GINT checkpoint)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let nfields = r.u32()?;
    if nfields != CONFIG_FIELDS {
        return Err(format!("expected {CONFIG_FIELDS} config fields, found {nfields}"));
    }
    let mut f = [0usize; CONFIG_FIELDS as usize];
    for v in f.iter_mut() {
        *v = r.u32()? as usize;
    }
    let config = GINetConfig {
        nodes: f[0],
        node_dim: f[1],
        channels: f[2],
        embed_dim: f[3],
        classes: f[4],
        widths: [f[5], f[6], f[7]],
        stride: f[8],
        gi_mode: GiMode::from_code(f[9] as u32).ok_or_else(|| format!("unknown gi mode code {}", f[9]))?,
        semantic_adjacency: AdjacencyInit::from_code(f[10] as u32)
            .ok_or_else(|| format!("unknown adjacency code {}", f[10]))?,
    };
    config.validate().map_err(|e| e.to_string())?;

    // shapes come from a fresh instance; adjacency init mode is irrelevant here
    let shape_cfg = GINetConfig {
        semantic_adjacency: AdjacencyInit::Random,
        ..config.clone()
    };
    let mut params = GINetParams::<f32>::init(&shape_cfg, 0, None).map_err(|e| e.to_string())?;
    let count = r.u32()? as usize;
    if count != PARAM_NAMES.len() {
        return Err(format!("expected {} tensors, found {count}", PARAM_NAMES.len()));
    }
    for (expected, slot) in params.tensors_mut() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "tensor name is not UTF-8".to_string())?;
        if name != expected {
            return Err(format!("expected tensor `{expected}`, found `{name}`"));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if (rows, cols) != slot.shape() {
            return Err(format!(
                "tensor `{name}` has shape {rows}x{cols}, config implies {}x{}",
                slot.rows(),
                slot.cols()
            ));
        }
        let raw = r.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        *slot = Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())?;
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(Checkpoint { config, params })
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &GINetConfig, params: &GINetParams<f32>) -> Result<()> {
    fs::write(path, encode(config, params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    decode(&bytes).map_err(|msg| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let cfg = GINetConfig::default();
        let p = GINetParams::<f32>::init(&cfg, 1, None).unwrap();
        let bytes = encode(&cfg, &p);
        assert_eq!(&bytes[..4], b"GINT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 11);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 8);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let cfg = GINetConfig::default();
        let p = GINetParams::<f32>::init(&cfg, 1, None).unwrap();
        let mut bytes = encode(&cfg, &p);
        bytes[0] = b'X';
        assert!(decode(&bytes).unwrap_err().contains("magic"));
    }

    #[test]
    fn truncation_rejected() {
        let cfg = GINetConfig::default();
        let p = GINetParams::<f32>::init(&cfg, 1, None).unwrap();
        let bytes = encode(&cfg, &p);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn byte_exact_round_trip(seed in any::<u64>(), nodes in 1usize..6, half in 1usize..5, mode in 0u32..3) {
            let cfg = GINetConfig {
                nodes,
                node_dim: 2 * half,
                channels: 5,
                embed_dim: 3,
                classes: 3,
                widths: [2, 3, 4],
                gi_mode: GiMode::from_code(mode).unwrap(),
                ..GINetConfig::default()
            };
            let p = GINetParams::<f32>::init(&cfg, seed, None).unwrap();
            let bytes = encode(&cfg, &p);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back.config, &cfg);
            prop_assert_eq!(encode(&back.config, &back.params), bytes);
        }
    }
}
