//! Binary (P5) PGM masks: nonzero pixels are foreground.

use std::io::Write;
use std::path::Path;

use super::CueError;
use crate::grid::Mask;

fn corrupt(path: &Path, reason: impl Into<String>) -> CueError {
    CueError::CorruptMask { path: path.display().to_string(), reason: reason.into() }
}

/// Parses a P5 PGM with maxval <= 255. Comments (`#` to end of line) are
/// allowed anywhere whitespace is.
pub fn load_pgm(path: &Path) -> Result<Mask, CueError> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;

    let mut token = |bytes: &[u8]| -> Result<String, CueError> {
        // Skip whitespace and comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(corrupt(path, "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(&bytes)? != "P5" {
        return Err(corrupt(path, "not a P5 PGM"));
    }
    let width: usize =
        token(&bytes)?.parse().map_err(|_| corrupt(path, "bad width"))?;
    let height: usize =
        token(&bytes)?.parse().map_err(|_| corrupt(path, "bad height"))?;
    let maxval: usize =
        token(&bytes)?.parse().map_err(|_| corrupt(path, "bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(corrupt(path, format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    pos += 1;
    let count = width * height;
    if bytes.len() < pos + count {
        return Err(corrupt(
            path,
            format!("pixel data truncated: have {}, need {count}", bytes.len().saturating_sub(pos)),
        ));
    }
    let data = bytes[pos..pos + count].iter().map(|&b| (b != 0) as u8).collect();
    Ok(Mask { width, height, channels: 1, data })
}

/// Writes foreground as 255, background as 0, with a fixed canonical header.
pub fn save_pgm(path: &Path, mask: &Mask) -> Result<(), CueError> {
    if mask.channels != 1 {
        return Err(CueError::Invalid("mask must be single-channel".into()));
    }
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    let bytes: Vec<u8> = mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
