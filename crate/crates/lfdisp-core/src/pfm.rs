//! Grayscale PFM (portable float map) I/O.
//!
//! Header is `Pf\n{W} {H}\n{scale}\n`; a negative scale marks little-endian
//! payload. Rows are stored bottom-to-top as raw 32-bit floats. Values round
//! trip bit-exactly (including signed zeros and denormals) because they move
//! through raw bit patterns.

use crate::error::{Error, Result};
use crate::lightfield::DisparityMap;
use std::fs;
use std::path::Path;

pub fn write_pfm(path: &Path, map: &DisparityMap) -> Result<()> {
    let bytes = encode_pfm(map);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_pfm(map: &DisparityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + map.values.len() * 4);
    out.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", map.width, map.height).as_bytes());
    for y in (0..map.height).rev() {
        for x in 0..map.width {
            out.extend_from_slice(&map.values[y * map.width + x].to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(path: &Path) -> Result<DisparityMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DisparityMap> {
    if bytes.len() < 2 {
        return Err(Error::NotPfm("file shorter than magic".into()));
    }
    match &bytes[..2] {
        b"Pf" => {}
        b"PF" => {
            return Err(Error::NotPfm(
                "color PFM (magic 'PF'); only grayscale 'Pf' is supported".into(),
            ))
        }
        other => {
            return Err(Error::NotPfm(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    }
    let mut pos = 2;
    let width = parse_token(bytes, &mut pos)?
        .parse::<usize>()
        .map_err(|e| Error::NotPfm(format!("bad width: {e}")))?;
    let height = parse_token(bytes, &mut pos)?
        .parse::<usize>()
        .map_err(|e| Error::NotPfm(format!("bad height: {e}")))?;
    let scale = parse_token(bytes, &mut pos)?
        .parse::<f64>()
        .map_err(|e| Error::NotPfm(format!("bad scale: {e}")))?;
    if scale == 0.0 {
        return Err(Error::NotPfm("scale must be nonzero".into()));
    }
    let little_endian = scale < 0.0;
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::NotPfm("missing header terminator".into()));
    }
    pos += 1;
    let expected = width * height * 4;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::PfmTruncated {
            expected,
            actual: payload.len(),
        });
    }
    let mut values = vec![0.0f32; width * height];
    for (row_idx, row) in payload[..expected].chunks_exact(width * 4).enumerate() {
        let y = height - 1 - row_idx;
        for (x, quad) in row.chunks_exact(4).enumerate() {
            let raw = [quad[0], quad[1], quad[2], quad[3]];
            let bits = if little_endian {
                u32::from_le_bytes(raw)
            } else {
                u32::from_be_bytes(raw)
            };
            values[y * width + x] = f32::from_bits(bits);
        }
    }
    Ok(DisparityMap {
        height,
        width,
        values,
        mask: None,
    })
}

fn parse_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::NotPfm("truncated header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|e| Error::NotPfm(format!("header: {e}")))
}
