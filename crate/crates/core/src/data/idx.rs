use std::path::Path;

use super::{DataError, LabeledImages};
use crate::autodiff::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Corrupt(format!("{what}: truncated header")))
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|e| DataError::io(path, e))
}

/// Parses IDX image bytes into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8]), DataError> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::Format(format!(
            "images: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(DataError::Corrupt(format!(
            "images: payload has {} bytes, header declares {need}",
            body.len()
        )));
    }
    Ok((n, rows, cols, &body[..need]))
}

/// Parses IDX label bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8], DataError> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(DataError::Format(format!(
            "labels: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(DataError::Corrupt(format!(
            "labels: payload has {} bytes, header declares {n}",
            body.len()
        )));
    }
    Ok(&body[..n])
}

/// Loads an IDX image/label pair as `[1, rows, cols]` images in `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledImages, DataError> {
    let ib = read(images)?;
    let lb = read(labels)?;
    let (n, rows, cols, px) = parse_idx_images(&ib)?;
    let ls = parse_idx_labels(&lb)?;
    if ls.len() != n {
        return Err(DataError::Format(format!(
            "{n} images but {} labels",
            ls.len()
        )));
    }
    let hw = rows * cols;
    let imgs = (0..n)
        .map(|i| {
            let data = px[i * hw..(i + 1) * hw].iter().map(|&b| b as f32 / 255.0).collect();
            Tensor::new(&[1, rows, cols], data)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<usize> = ls.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledImages::new(imgs, labels, classes)
}

/// Encodes images (`[1, H, W]`, values in `[0, 1]`) in IDX format.
pub fn encode_idx_images(images: &[Tensor<f32>]) -> Result<Vec<u8>, DataError> {
    let (rows, cols) = match images.first().map(|t| t.shape()) {
        Some(&[1, r, c]) => (r, c),
        Some(s) => return Err(DataError::Format(format!("IDX images must be [1,H,W], got {s:?}"))),
        None => (0, 0),
    };
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for img in images {
        if img.shape() != [1, rows, cols] {
            return Err(DataError::Format("IDX images must share one shape".into()));
        }
        out.extend(img.data().iter().map(|&v| super::png_io::quantize(v)));
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| DataError::Format(format!("label {l} exceeds 255")))?;
        out.push(b);
    }
    Ok(out)
}
