//! 8-bit PNG reading and writing.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

pub fn read(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND | Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| format_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e))?;
    if info.bit_depth != BitDepth::Eight {
        return Err(format_err(path, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(format_err(path, "palette was not expanded")),
    };
    buf.truncate(info.buffer_size());
    Ok(Raster {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        data: buf,
    })
}

/// Read an RGB image; alpha is dropped and grayscale is replicated.
pub fn read_rgb(path: &Path) -> Result<Raster> {
    let r = read(path)?;
    let data = match r.channels {
        3 => return Ok(r),
        4 => r.data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        1 => r.data.iter().flat_map(|&v| [v, v, v]).collect(),
        _ => r.data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
    };
    Ok(Raster { channels: 3, data, ..r })
}

/// Read a single-channel label map holding class ids.
pub fn read_gray(path: &Path) -> Result<Raster> {
    let r = read(path)?;
    if r.channels != 1 {
        return Err(format_err(path, format!("label map has {} channels, expected 1", r.channels)));
    }
    Ok(r)
}

pub fn encode(raster: &Raster) -> Result<Vec<u8>> {
    let color = match raster.channels {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        4 => ColorType::Rgba,
        c => return Err(Error::Format(format!("cannot encode {c}-channel raster"))),
    };
    if raster.data.len() != raster.width * raster.height * raster.channels {
        return Err(Error::Dimension("raster buffer does not match its extent".into()));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), raster.width as u32, raster.height as u32);
        enc.set_color(color);
        enc.set_depth(BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        w.write_image_data(&raster.data).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

pub fn write(path: &Path, raster: &Raster) -> Result<()> {
    let bytes = encode(raster)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
