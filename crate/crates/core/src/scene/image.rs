//! 8-bit RGB, 8-bit mask and 16-bit depth PNG files.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType};

use super::SceneError;

/// Byte for a unit-interval value: `floor(255·clamp(x, 0, 1) + 0.5)`, so
/// halves round up and 0.5 maps to 128.
pub fn encode_unit(x: f64) -> u8 {
    (255.0 * x.clamp(0.0, 1.0) + 0.5).floor() as u8
}

pub fn decode_unit(b: u8) -> f64 {
    b as f64 / 255.0
}

/// Decoded 8-bit RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// `H·W·3`, row-major.
    pub data: Vec<f64>,
}

fn image_err(path: &Path, message: impl Into<String>) -> SceneError {
    SceneError::Image {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn write_png(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, bytes: &[u8]) -> Result<(), SceneError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| SceneError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| SceneError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| image_err(path, e.to_string()))?;
    writer.write_image_data(bytes).map_err(|e| image_err(path, e.to_string()))?;
    writer.finish().map_err(|e| image_err(path, e.to_string()))
}

fn read_png(path: &Path, color: ColorType, depth: BitDepth) -> Result<(usize, usize, Vec<u8>), SceneError> {
    let file = File::open(path).map_err(|e| SceneError::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != color || info.bit_depth != depth {
        return Err(image_err(
            path,
            format!("unsupported format {:?}/{:?}, expected {color:?}/{depth:?}", info.color_type, info.bit_depth),
        ));
    }
    let size = reader.output_buffer_size().ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| image_err(path, e.to_string()))?;
    buf.truncate(frame.buffer_size());
    Ok((frame.width as usize, frame.height as usize, buf))
}

pub fn write_rgb8(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<(), SceneError> {
    if bytes.len() != width * height * 3 {
        return Err(image_err(path, "byte count does not match the resolution"));
    }
    write_png(path, width, height, ColorType::Rgb, BitDepth::Eight, bytes)
}

pub fn read_rgb8(path: &Path) -> Result<(usize, usize, Vec<u8>), SceneError> {
    read_png(path, ColorType::Rgb, BitDepth::Eight)
}

/// Writes linear values quantized with [`encode_unit`].
pub fn write_rgb(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<(), SceneError> {
    let bytes: Vec<u8> = data.iter().map(|&x| encode_unit(x)).collect();
    write_rgb8(path, width, height, &bytes)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, SceneError> {
    let (width, height, bytes) = read_rgb8(path)?;
    Ok(RgbImage {
        width,
        height,
        data: bytes.into_iter().map(decode_unit).collect(),
    })
}

/// Grayscale mask, 255 for set pixels.
pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<(), SceneError> {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    write_png(path, width, height, ColorType::Grayscale, BitDepth::Eight, &bytes)
}

/// Pixels brighter than 127 are set.
pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>), SceneError> {
    let (w, h, bytes) = read_png(path, ColorType::Grayscale, BitDepth::Eight)?;
    Ok((w, h, bytes.into_iter().map(|b| b > 127).collect()))
}

/// Depth in thousandths of a world unit as 16-bit grayscale; 0 marks
/// background.
pub fn write_depth(path: &Path, width: usize, height: usize, depth: &[f64]) -> Result<(), SceneError> {
    let mut bytes = Vec::with_capacity(depth.len() * 2);
    for &d in depth {
        let v = (d * 1000.0 + 0.5).floor().clamp(0.0, u16::MAX as f64) as u16;
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    write_png(path, width, height, ColorType::Grayscale, BitDepth::Sixteen, &bytes)
}

pub fn read_depth(path: &Path) -> Result<(usize, usize, Vec<f64>), SceneError> {
    let (w, h, bytes) = read_png(path, ColorType::Grayscale, BitDepth::Sixteen)?;
    let depth = bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0)
        .collect();
    Ok((w, h, depth))
}

/// Unit normals stored as `(n + 1)/2` in 8-bit RGB; zero normals are
/// written black.
pub fn write_normals(path: &Path, width: usize, height: usize, normals: &[[f64; 3]]) -> Result<(), SceneError> {
    let bytes: Vec<u8> = normals
        .iter()
        .flat_map(|n| {
            if *n == [0.0; 3] {
                [0; 3]
            } else {
                n.map(|c| encode_unit((c + 1.0) / 2.0))
            }
        })
        .collect();
    write_rgb8(path, width, height, &bytes)
}

/// Decoded normals, renormalized; black pixels decode to zero.
pub fn read_normals(path: &Path) -> Result<(usize, usize, Vec<[f64; 3]>), SceneError> {
    let (w, h, bytes) = read_rgb8(path)?;
    let normals = bytes
        .chunks_exact(3)
        .map(|c| {
            if c == [0, 0, 0] {
                return [0.0; 3];
            }
            let n = [c[0], c[1], c[2]].map(|b| 2.0 * decode_unit(b) - 1.0);
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if len > 0.0 {
                n.map(|v| v / len)
            } else {
                [0.0; 3]
            }
        })
        .collect();
    Ok((w, h, normals))
}
