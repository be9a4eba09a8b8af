//! Bitmap digits: a synthetic labelled corpus and moving-digit videos.

use rand::Rng;

use crate::autodiff::Tensor;

const FONT: [[&str; 7]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

/// `scale`-times enlarged bitmap of `digit` as `[H, W]` rows of 0/1.
pub fn digit_sprite(digit: usize, scale: usize) -> Vec<Vec<f32>> {
    let rows = &FONT[digit % 10];
    let scale = scale.max(1);
    (0..GLYPH_H * scale)
        .map(|y| {
            let row = rows[y / scale].as_bytes();
            (0..GLYPH_W * scale)
                .map(|x| if row[x / scale] == b'#' { 1.0 } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Options for the synthetic digit corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitCorpusSpec {
    pub count: usize,
    pub size: usize,
    pub classes: usize,
    /// Sprite scale factor.
    pub scale: usize,
    /// Maximum placement offset from the centre, in cells.
    pub jitter: usize,
    /// Per-pixel intensity noise amplitude.
    pub noise: f32,
}

impl Default for DigitCorpusSpec {
    fn default() -> Self {
        Self {
            count: 2000,
            size: 16,
            classes: 10,
            scale: 1,
            jitter: 2,
            noise: 0.1,
        }
    }
}

/// Balanced corpus of jittered, noisy digit images (`[1, size, size]`) with
/// labels cycling through the classes.
pub fn digit_corpus(spec: &DigitCorpusSpec, rng: &mut impl Rng) -> (Vec<Tensor<f32>>, Vec<usize>) {
    let classes = spec.classes.clamp(1, 10);
    let (sh, sw) = (GLYPH_H * spec.scale.max(1), GLYPH_W * spec.scale.max(1));
    assert!(sh <= spec.size && sw <= spec.size, "canvas too small for sprite");
    let mut images = Vec::with_capacity(spec.count);
    let mut labels = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let label = i % classes;
        let sprite = digit_sprite(label, spec.scale);
        let (cy, cx) = ((spec.size - sh) / 2, (spec.size - sw) / 2);
        let j = spec.jitter as i64;
        let oy = (cy as i64 + rng.random_range(-j..=j)).clamp(0, (spec.size - sh) as i64) as usize;
        let ox = (cx as i64 + rng.random_range(-j..=j)).clamp(0, (spec.size - sw) as i64) as usize;
        let ink: f32 = rng.random_range(0.7..=1.0);
        let mut data = vec![0f32; spec.size * spec.size];
        for (y, row) in sprite.iter().enumerate() {
            for (x, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let n = if spec.noise > 0.0 {
                        rng.random_range(-spec.noise..=spec.noise)
                    } else {
                        0.0
                    };
                    data[(oy + y) * spec.size + ox + x] = (ink + n).clamp(0.0, 1.0);
                }
            }
        }
        images.push(Tensor::new(&[1, spec.size, spec.size], data).expect("digit shape"));
        labels.push(label);
    }
    (images, labels)
}

/// Options for moving-digit videos.
#[derive(Clone, Debug, PartialEq)]
pub struct MovingDigitsSpec {
    pub sequences: usize,
    pub length: usize,
    pub canvas: usize,
    pub digits: usize,
    /// Velocity components are drawn uniformly from `[-max_speed, max_speed]`.
    pub max_speed: i64,
    pub scale: usize,
}

impl Default for MovingDigitsSpec {
    fn default() -> Self {
        Self {
            sequences: 64,
            length: 12,
            canvas: 20,
            digits: 2,
            max_speed: 1,
            scale: 1,
        }
    }
}

/// Position after one step of reflective motion inside `[0, max]`.
pub fn bounce_step(p: i64, v: i64, max: i64) -> (i64, i64) {
    if max == 0 {
        return (0, v);
    }
    let (mut p, mut v) = (p + v, v);
    loop {
        if p < 0 {
            p = -p;
            v = -v;
        } else if p > max {
            p = 2 * max - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

/// One digit's trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    pub digit: usize,
    pub pos: (i64, i64),
    pub vel: (i64, i64),
}

/// Renders frames `[1, canvas, canvas]` for sprites moving with constant
/// velocity and bouncing off the borders; overlapping ink combines by max.
pub fn render_moving(sprites: &[Sprite], length: usize, canvas: usize, scale: usize) -> Vec<Tensor<f32>> {
    let (sh, sw) = (GLYPH_H * scale, GLYPH_W * scale);
    assert!(sh <= canvas && sw <= canvas, "canvas too small for sprite");
    let (maxy, maxx) = ((canvas - sh) as i64, (canvas - sw) as i64);
    let bitmaps: Vec<_> = sprites.iter().map(|s| digit_sprite(s.digit, scale)).collect();
    let mut state: Vec<Sprite> = sprites.to_vec();
    let mut frames = Vec::with_capacity(length);
    for _ in 0..length {
        let mut data = vec![0f32; canvas * canvas];
        for (s, bmp) in state.iter().zip(&bitmaps) {
            let (px, py) = (s.pos.0 as usize, s.pos.1 as usize);
            for (y, row) in bmp.iter().enumerate() {
                for (x, &p) in row.iter().enumerate() {
                    let cell = &mut data[(py + y) * canvas + px + x];
                    *cell = cell.max(p);
                }
            }
        }
        frames.push(Tensor::new(&[1, canvas, canvas], data).expect("frame shape"));
        for s in state.iter_mut() {
            let (x, vx) = bounce_step(s.pos.0, s.vel.0, maxx);
            let (y, vy) = bounce_step(s.pos.1, s.vel.1, maxy);
            s.pos = (x, y);
            s.vel = (vx, vy);
        }
    }
    frames
}

/// Random moving-digit sequences, deterministic for a given `rng` state.
pub fn gen_moving_digits(spec: &MovingDigitsSpec, rng: &mut impl Rng) -> Vec<Vec<Tensor<f32>>> {
    let scale = spec.scale.max(1);
    let (sh, sw) = (GLYPH_H * scale, GLYPH_W * scale);
    assert!(sh <= spec.canvas && sw <= spec.canvas, "canvas too small for sprite");
    let (maxy, maxx) = ((spec.canvas - sh) as i64, (spec.canvas - sw) as i64);
    (0..spec.sequences)
        .map(|_| {
            let sprites: Vec<Sprite> = (0..spec.digits)
                .map(|_| {
                    let m = spec.max_speed;
                    Sprite {
                        digit: rng.random_range(0..10),
                        pos: (rng.random_range(0..=maxx), rng.random_range(0..=maxy)),
                        vel: (rng.random_range(-m..=m), rng.random_range(-m..=m)),
                    }
                })
                .collect();
            render_moving(&sprites, spec.length, spec.canvas, scale)
        })
        .collect()
}
