//! Network checkpoints.
//!
//! Layout (little-endian): magic `PCCKPT01`; `u32` manifest length; manifest
//! JSON (topology, training metadata); `u32` tensor count; then per tensor a
//! `u16` name length, the UTF-8 name, a `u8` dtype (0 = f32, 1 = f64), a `u8`
//! rank, `u32` dimensions and the row-major values.

use std::path::Path;

use partcount_core::net::{BlockSpec, CountingNet, NetConfig, ParamTensor, Real};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const MAGIC: &[u8; 8] = b"PCCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockManifest {
    pub channels: usize,
    pub resample: bool,
}

/// Serializable mirror of [`NetConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyManifest {
    pub input_channels: usize,
    pub backbone: Vec<BlockManifest>,
    pub correlation_pool: usize,
    pub head: Vec<BlockManifest>,
    pub roi_size: usize,
    pub exemplar_scales: Vec<f64>,
    pub output_gain: f64,
    pub seed: u64,
}

impl From<&NetConfig> for TopologyManifest {
    fn from(c: &NetConfig) -> Self {
        let blocks = |b: &[BlockSpec]| {
            b.iter().map(|s| BlockManifest { channels: s.channels, resample: s.resample }).collect()
        };
        Self {
            input_channels: c.input_channels,
            backbone: blocks(&c.backbone),
            correlation_pool: c.correlation_pool,
            head: blocks(&c.head),
            roi_size: c.roi_size,
            exemplar_scales: c.exemplar_scales.clone(),
            output_gain: c.output_gain,
            seed: c.seed,
        }
    }
}

impl From<&TopologyManifest> for NetConfig {
    fn from(m: &TopologyManifest) -> Self {
        let blocks = |b: &[BlockManifest]| b.iter().map(|s| BlockSpec::new(s.channels, s.resample)).collect();
        NetConfig {
            input_channels: m.input_channels,
            backbone: blocks(&m.backbone),
            correlation_pool: m.correlation_pool,
            head: blocks(&m.head),
            roi_size: m.roi_size,
            exemplar_scales: m.exemplar_scales.clone(),
            output_gain: m.output_gain,
            seed: m.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub topology: TopologyManifest,
    /// Training configuration and progress at save time, free-form.
    #[serde(default)]
    pub training: serde_json::Value,
}

fn dtype_code(name: &str) -> u8 {
    match name {
        "f32" => 0,
        _ => 1,
    }
}

pub fn encode_checkpoint<T: Real>(net: &CountingNet<T>, training: serde_json::Value) -> Vec<u8> {
    let manifest = Manifest { topology: net.config().into(), training };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(net.params().len() as u32).to_le_bytes());
    let code = dtype_code(T::DTYPE);
    for p in net.params() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(code);
        out.push(p.shape.len() as u8);
        for d in &p.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &p.data {
            if code == 0 {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.path, format!("truncated checkpoint at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a checkpoint into a network of element type `T`; stored values of
/// the other width are converted.
pub fn decode_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<(CountingNet<T>, Manifest)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let len = r.u32()? as usize;
    let manifest: Manifest =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(path, format!("manifest: {e}")))?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = match dtype {
            0 => r.take(4 * len)?.chunks_exact(4).map(|c| T::from_f64(f64::from(f32::from_le_bytes(c.try_into().expect("4"))))).collect(),
            1 => r.take(8 * len)?.chunks_exact(8).map(|c| T::from_f64(f64::from_le_bytes(c.try_into().expect("8")))).collect(),
            other => return Err(Error::format(path, format!("unknown dtype code {other} for {name}"))),
        };
        params.push(ParamTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let config = NetConfig::from(&manifest.topology);
    Ok((CountingNet::from_params(config, params)?, manifest))
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    net: &CountingNet<T>,
    training: serde_json::Value,
) -> Result<()> {
    atomic_write(path, &encode_checkpoint(net, training))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(CountingNet<T>, Manifest)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
