use super::CellState;
use crate::autodiff::Tensor;

/// Class colours for classification views, cycled for more than ten classes.
pub const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 128, 0],
    [0, 128, 128],
];

fn q(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major RGBA bytes (`H·W·4`) of batch item `b`.
///
/// Premultiplied RGBA states are composited over white; three visible
/// channels are shown as RGB, any other count shows the last visible channel
/// in grey. Without visible channels, cells whose fixed input exceeds 0.1 are
/// coloured by their argmax class and the rest are white.
pub fn render_rgba(state: &CellState<f32>, b: usize) -> Vec<u8> {
    let l = &state.layout;
    let (h, w) = (state.height(), state.width());
    let hw = h * w;
    let c = l.total();
    let d = state.grid.data();
    let ch = |k: usize, p: usize| d[(b * c + k) * hw + p];
    let mut out = Vec::with_capacity(hw * 4);
    for p in 0..hw {
        let rgb = if l.visible == 0 {
            let ink = (0..l.fixed_input).map(|k| ch(k, p)).fold(0f32, f32::max);
            if l.classes > 0 && ink > 0.1 {
                let best = (0..l.classes)
                    .max_by(|&x, &y| {
                        ch(l.class_start() + x, p)
                            .total_cmp(&ch(l.class_start() + y, p))
                            .then(y.cmp(&x))
                    })
                    .unwrap_or(0);
                PALETTE[best % PALETTE.len()]
            } else {
                [255; 3]
            }
        } else if l.visible == 4 && l.alpha_index == Some(3) {
            let a = ch(l.visible_start() + 3, p).clamp(0.0, 1.0);
            let f = |k| q(ch(l.visible_start() + k, p) + 1.0 - a);
            [f(0), f(1), f(2)]
        } else if l.visible >= 3 && l.visible <= 4 {
            let f = |k| q(ch(l.visible_start() + k, p));
            [f(0), f(1), f(2)]
        } else {
            let g = q(ch(l.visible_start() + l.visible - 1, p));
            [g; 3]
        };
        out.extend_from_slice(&[rgb[0], rgb[1], rgb[2], 255]);
    }
    out
}

/// One channel of batch item `b` in grey, mapping `[-1, 1]` to `[0, 255]`.
pub fn render_channel(state: &CellState<f32>, b: usize, channel: usize) -> Vec<u8> {
    let (h, w) = (state.height(), state.width());
    let hw = h * w;
    let off = (b * state.layout.total() + channel) * hw;
    let mut out = Vec::with_capacity(hw * 4);
    for &v in &state.grid.data()[off..off + hw] {
        let g = q(0.5 + 0.5 * v);
        out.extend_from_slice(&[g, g, g, 255]);
    }
    out
}

/// RGBA bytes as a `[4, H, W]` tensor in `[0, 1]`.
pub fn rgba_tensor(bytes: &[u8], h: usize, w: usize) -> Tensor<f32> {
    let hw = h * w;
    let mut data = vec![0f32; 4 * hw];
    for p in 0..hw {
        for k in 0..4 {
            data[k * hw + p] = f32::from(bytes[p * 4 + k]) / 255.0;
        }
    }
    Tensor::new(&[4, h, w], data).expect("rgba shape")
}
