//! The dense tensor file format: magic "RTEN", little-endian u32 header
//! (version, width, height, channels) and float32 row-major payload.

use std::io::{Read, Write};
use std::path::Path;

use super::CueError;
use crate::grid::Grid2;

const MAGIC: &[u8; 4] = b"RTEN";
const VERSION: u32 = 1;

fn corrupt(path: &Path, reason: impl Into<String>) -> CueError {
    CueError::CorruptTensor { path: path.display().to_string(), reason: reason.into() }
}

pub fn load_rten(path: &Path) -> Result<Grid2<f32>, CueError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 20 {
        return Err(corrupt(path, format!("only {} bytes, header needs 20", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    let width = u32_at(8) as usize;
    let height = u32_at(12) as usize;
    let channels = u32_at(16) as usize;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| corrupt(path, "dimension overflow"))?;
    let want = 20 + count * 4;
    if bytes.len() != want {
        return Err(corrupt(
            path,
            format!("payload is {} bytes, header implies {}", bytes.len() - 20, want - 20),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = 20 + i * 4;
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    Grid2::from_data(width, height, channels, data)
        .ok_or_else(|| corrupt(path, "internal size mismatch"))
}

pub fn save_rten(path: &Path, grid: &Grid2<f32>) -> Result<(), CueError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.width as u32).to_le_bytes())?;
    w.write_all(&(grid.height as u32).to_le_bytes())?;
    w.write_all(&(grid.channels as u32).to_le_bytes())?;
    for v in &grid.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads all bytes of a file; test helper for byte-exactness checks.
pub fn read_bytes(path: &Path) -> std::io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}
