//! Density map files.
//!
//! Layout: the 8 magic bytes `PCDENS01`, height and width as little-endian
//! `u32`, then `height × width` little-endian `f32` values in row-major order.

use std::path::Path;

use partcount_core::density::DensityMap;
use partcount_core::image::RgbImage;

use crate::error::{Error, Result};
use crate::io::{atomic_write, write_png};

pub const MAGIC: &[u8; 8] = b"PCDENS01";
const HEADER: usize = 16;

pub fn encode_density(map: &DensityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * map.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    for v in &map.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_density(bytes: &[u8], path: &Path) -> Result<DensityMap> {
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a density file"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[HEADER..];
    if body.len() != 4 * w * h {
        return Err(Error::format(path, format!("expected {} value bytes, found {}", 4 * w * h, body.len())));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Ok(DensityMap::from_raw(w, h, values)?)
}

pub fn write_density(path: impl AsRef<Path>, map: &DensityMap) -> Result<()> {
    atomic_write(path, &encode_density(map))
}

pub fn read_density(path: impl AsRef<Path>) -> Result<DensityMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_density(&bytes, path)
}

/// Black → purple → orange → pale yellow ramp.
fn ramp(t: f64) -> [u8; 3] {
    const STOPS: [(f64, [f64; 3]); 4] = [
        (0.0, [0.0, 0.0, 4.0]),
        (0.35, [120.0, 28.0, 109.0]),
        (0.7, [237.0, 105.0, 37.0]),
        (1.0, [252.0, 255.0, 164.0]),
    ];
    let t = t.clamp(0.0, 1.0);
    let i = STOPS.windows(2).position(|w| t <= w[1].0).unwrap_or(STOPS.len() - 2);
    let ((t0, a), (t1, b)) = (STOPS[i], STOPS[i + 1]);
    let u = (t - t0) / (t1 - t0);
    std::array::from_fn(|c| (a[c] + u * (b[c] - a[c])).round() as u8)
}

/// Renders a map scaled by its own maximum.
pub fn false_color(map: &DensityMap) -> RgbImage {
    let max = map.max_value();
    let mut img = RgbImage::new(map.width, map.height);
    for (px, v) in img.data.chunks_exact_mut(3).zip(&map.values) {
        let t = if max > 0.0 { v / max } else { 0.0 };
        px.copy_from_slice(&ramp(t));
    }
    img
}

pub fn write_false_color(path: impl AsRef<Path>, map: &DensityMap) -> Result<()> {
    write_png(path, &false_color(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_f32() {
        let map = DensityMap::from_raw(3, 2, vec![0.0, 0.1, 0.25, 1e-7, 3.5, 0.0]).unwrap();
        let back = decode_density(&encode_density(&map), Path::new("x")).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        for (a, b) in map.values.iter().zip(&back.values) {
            assert_eq!(*b, f64::from(*a as f32));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_density(&DensityMap::zeros(5, 7));
        assert_eq!(&bytes[..8], b"PCDENS01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 5);
        assert_eq!(bytes.len(), 16 + 4 * 35);
    }

    #[test]
    fn truncated_file_rejected() {
        let mut bytes = encode_density(&DensityMap::zeros(2, 2));
        bytes.pop();
        assert_eq!(decode_density(&bytes, Path::new("t")).unwrap_err().kind(), "format");
        assert!(decode_density(b"PCDENS", Path::new("t")).is_err());
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), [0, 0, 4]);
        assert_eq!(ramp(1.0), [252, 255, 164]);
        let img = false_color(&DensityMap::from_raw(2, 1, vec![0.0, 2.0]).unwrap());
        assert_eq!(img.get(1, 0), [252, 255, 164]);
    }
}
