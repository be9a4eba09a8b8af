//! Procedural RGBA targets with transparent margins.

use crate::autodiff::Tensor;

pub const GLYPH_NAMES: [&str; 6] = ["heart", "ring", "diamond", "cross", "disc", "drop"];

/// Signed-ish inside test and colour for a glyph at normalized `(u, v)` in
/// `[-1, 1]²` (v grows downwards).
fn shade(name: &str, u: f64, v: f64) -> Option<Option<[f64; 3]>> {
    let r = (u * u + v * v).sqrt();
    let inside = match name {
        "heart" => {
            let (x, y) = (u * 1.25, -v * 1.25 + 0.25);
            let a = x * x + y * y - 1.0;
            a * a * a - x * x * y * y * y <= 0.0
        }
        "ring" => (0.45..=0.95).contains(&r),
        "diamond" => u.abs() + v.abs() <= 0.95,
        "cross" => (u.abs() <= 0.3 || v.abs() <= 0.3) && u.abs() <= 0.92 && v.abs() <= 0.92,
        "disc" => r <= 0.9,
        "drop" => {
            let t = (v + 1.0) / 2.0;
            r <= 0.9 && u.abs() <= 0.9 * t.sqrt()
        }
        _ => return None,
    };
    if !inside {
        return Some(None);
    }
    let c = match name {
        "heart" => [0.9, 0.15 + 0.3 * (1.0 - r).max(0.0), 0.25],
        "ring" => {
            let a = v.atan2(u);
            [0.2, 0.5 + 0.4 * a.cos(), 0.9]
        }
        "diamond" => [0.95, 0.75 - 0.4 * (u.abs() + v.abs()), 0.1],
        "cross" => [0.2, 0.75, 0.3 + 0.4 * (u.abs().max(v.abs()))],
        "disc" => [0.5 + 0.4 * u, 0.3, 0.6 - 0.3 * v],
        _ => [0.2, 0.45 + 0.3 * v, 0.95],
    };
    Some(Some(c))
}

/// Renders the named built-in glyph as a `[4, size, size]` tensor of
/// premultiplied RGBA in `[0, 1]`. The shape fills the central two thirds of
/// the canvas; edges are antialiased by 4×4 supersampling.
pub fn builtin_glyph(name: &str, size: usize) -> Option<Tensor<f32>> {
    shade(name, 0.0, 0.0)?;
    let margin = size as f64 / 6.0;
    let inner = size as f64 - 2.0 * margin;
    let hw = size * size;
    let mut data = vec![0f32; 4 * hw];
    const SS: usize = 4;
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0f64; 4];
            for sy in 0..SS {
                for sx in 0..SS {
                    let px = x as f64 + (sx as f64 + 0.5) / SS as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / SS as f64;
                    let u = (px - margin) / inner * 2.0 - 1.0;
                    let v = (py - margin) / inner * 2.0 - 1.0;
                    if let Some(Some(c)) = shade(name, u, v) {
                        for k in 0..3 {
                            acc[k] += c[k].clamp(0.0, 1.0);
                        }
                        acc[3] += 1.0;
                    }
                }
            }
            let n = (SS * SS) as f64;
            for (k, a) in acc.iter().enumerate() {
                data[k * hw + y * size + x] = (a / n) as f32;
            }
        }
    }
    Some(Tensor::new(&[4, size, size], data).expect("glyph shape"))
}
