//! On-disk tensor formats.
//!
//! Canvases use a tiny binary container: the magic bytes `SAFA`, three
//! little-endian `u32` dimensions (channels, height, width), then
//! `channels * height * width` little-endian `f32` values in
//! `(channel, row, column)` order. Quick-look renders use binary PGM, one
//! file per channel, min-max normalized.

use crate::error::{Error, Result};
use crate::grid::LatentMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SAFA";

pub fn write_tensor<W: Write>(map: &LatentMap, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(map.channels() as u32).to_le_bytes())?;
    out.write_all(&(map.height() as u32).to_le_bytes())?;
    out.write_all(&(map.width() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(map.numel() * 4);
    for &v in map.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut input: R) -> Result<LatentMap> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut dim = [0u8; 4];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        input
            .read_exact(&mut dim)
            .map_err(|_| Error::Format("truncated header".into()))?;
        *d = u32::from_le_bytes(dim) as usize;
    }
    let [c, h, w] = dims;
    let numel = c
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    if numel == 0 {
        return Err(Error::Format(format!("empty tensor {c}x{h}x{w}")));
    }
    let mut bytes = vec![0u8; numel * 4];
    input
        .read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated payload".into()))?;
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    LatentMap::from_vec(c, h, w, data)
}

pub fn save_tensor<P: AsRef<Path>>(map: &LatentMap, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_tensor(map, std::io::BufWriter::new(file))
}

pub fn load_tensor<P: AsRef<Path>>(path: P) -> Result<LatentMap> {
    let file = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(file))
}

/// Renders one channel as an 8-bit binary PGM, min-max normalized.
/// A constant channel renders as black.
pub fn write_pgm<W: Write>(map: &LatentMap, channel: usize, mut out: W) -> Result<()> {
    if channel >= map.channels() {
        return Err(Error::Index { index: channel, limit: map.channels() });
    }
    let (h, w) = (map.height(), map.width());
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for row in 0..h {
        for col in 0..w {
            let v = map.get(channel, row, col);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = hi - lo;
    write!(out, "P5\n{w} {h}\n255\n")?;
    let mut pixels = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let v = map.get(channel, row, col);
            let p = if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 };
            pixels.push(p);
        }
    }
    out.write_all(&pixels)?;
    Ok(())
}
