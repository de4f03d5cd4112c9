//! Thin PNG helpers: 8-bit RGB and grayscale, fixed encoder settings so
//! output bytes are reproducible.

use crate::error::{Error, Result};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

pub fn read_png_rgb8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(file);
    let mut reader = decoder.read_info().map_err(|e| Error::ImageFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::ImageFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::ImageFormat {
            path: path.to_path_buf(),
            message: format!("expected 8-bit PNG, got {:?}", info.bit_depth),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let rgb = match info.color_type {
        png::ColorType::Rgb => buf[..w * h * 3].to_vec(),
        png::ColorType::Rgba => {
            let mut out = Vec::with_capacity(w * h * 3);
            for px in buf[..w * h * 4].chunks_exact(4) {
                out.extend_from_slice(&px[..3]);
            }
            out
        }
        png::ColorType::Grayscale => {
            let mut out = Vec::with_capacity(w * h * 3);
            for &g in &buf[..w * h] {
                out.extend_from_slice(&[g, g, g]);
            }
            out
        }
        other => {
            return Err(Error::ImageFormat {
                path: path.to_path_buf(),
                message: format!("unsupported PNG color type {other:?}"),
            })
        }
    };
    Ok((w, h, rgb))
}

pub fn read_png_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let (w, h, rgb) = read_png_rgb8(path)?;
    let gray = rgb.chunks_exact(3).map(|px| px[0]).collect();
    Ok((w, h, gray))
}

pub fn write_png_rgb8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    debug_assert_eq!(data.len(), width * height * 3);
    write_png(path, width, height, png::ColorType::Rgb, data)
}

pub fn write_png_gray8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    debug_assert_eq!(data.len(), width * height);
    write_png(path, width, height, png::ColorType::Grayscale, data)
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_compression(png::Compression::Default);
    let mut writer = encoder.write_header().map_err(|e| Error::ImageFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    writer.write_image_data(data).map_err(|e| Error::ImageFormat {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(())
}
