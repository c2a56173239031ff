//! Binary portable any-map (P5 graymap, P6 pixmap) reading and writing.

use std::path::Path;

use crate::error::{Error, Result};

/// Decoded raster: interleaved samples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

fn ingest(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ingest(path, "truncated header"));
        }
        Ok(&bytes[start..pos])
    };
    let channels = match token()? {
        b"P5" => 1,
        b"P6" => 3,
        m => {
            return Err(ingest(
                path,
                format!("unsupported magic {:?}", String::from_utf8_lossy(m)),
            ))
        }
    };
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ingest(path, format!("bad {what} in header")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(ingest(path, "invalid dimensions or maxval"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let wide = maxval > 255;
    let n = width * height * channels;
    let need = n * if wide { 2 } else { 1 };
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        ingest(
            path,
            format!(
                "truncated raster: need {need} bytes, have {}",
                bytes.len().saturating_sub(pos)
            ),
        )
    })?;
    let samples: Vec<u16> = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster.iter().map(|&b| b as u16).collect()
    };
    if samples.iter().any(|&s| s as usize > maxval) {
        return Err(ingest(path, "sample exceeds maxval"));
    }
    Ok(Raster {
        width,
        height,
        channels,
        maxval: maxval as u16,
        samples,
    })
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| ingest(path, e.to_string()))?;
    decode(&bytes, path)
}

/// Encodes 8-bit samples; `channels` selects P5 (1) or P6 (3).
pub fn encode(width: usize, height: usize, channels: usize, samples: &[u8]) -> Result<Vec<u8>> {
    let magic = match channels {
        1 => "P5",
        3 => "P6",
        c => return Err(crate::error::contract(format!("cannot encode {c} channels as PNM"))),
    };
    if samples.len() != width * height * channels {
        return Err(crate::error::contract("sample count does not match raster size"));
    }
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(samples);
    Ok(out)
}

pub fn write(path: &Path, width: usize, height: usize, channels: usize, samples: &[u8]) -> Result<()> {
    std::fs::write(path, encode(width, height, channels, samples)?)?;
    Ok(())
}
