use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::DataError;
use crate::autodiff::Tensor;

/// Reads an 8-bit RGB or RGBA PNG as `[C, H, W]` in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Tensor<f32>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match (info.color_type, info.bit_depth) {
        (ColorType::Rgb, BitDepth::Eight) => 3,
        (ColorType::Rgba, BitDepth::Eight) => 4,
        (ct, bd) => {
            return Err(DataError::Format(format!(
                "{}: unsupported PNG {ct:?} at {bd:?} bits, need 8-bit RGB or RGBA",
                path.display()
            )))
        }
    };
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(w * h * channels)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
    let stride = frame.line_size;
    let hw = h * w;
    let mut data = vec![0f32; channels * hw];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                data[c * hw + y * w + x] = buf[y * stride + x * channels + c] as f32 / 255.0;
            }
        }
    }
    Ok(Tensor::new(&[channels, h, w], data)?)
}

/// Writes a `[C, H, W]` tensor (C = 1, 3 or 4) as an 8-bit PNG, clamping to
/// `[0, 1]` and rounding to the nearest level.
pub fn save_png(image: &Tensor<f32>, path: &Path) -> Result<(), DataError> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(DataError::Format(format!("image must be [C,H,W], got {s:?}"))),
    };
    let color = match c {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        4 => ColorType::Rgba,
        _ => return Err(DataError::Format(format!("cannot write {c}-channel PNG"))),
    };
    let bytes = to_interleaved_u8(image);
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
    writer
        .finish()
        .map_err(|e| DataError::Format(format!("{}: {e}", path.display())))
}

/// Quantizes one channel value to a byte.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `[C, H, W]` → row-major interleaved bytes.
pub fn to_interleaved_u8(image: &Tensor<f32>) -> Vec<u8> {
    let s = image.shape();
    let (c, hw) = (s[0], s[1] * s[2]);
    let d = image.data();
    let mut out = Vec::with_capacity(c * hw);
    for p in 0..hw {
        for ch in 0..c {
            out.push(quantize(d[ch * hw + p]));
        }
    }
    out
}
