//! Synthetic trap imagery: dark textured moth silhouettes on gradient
//! backgrounds, plus clutter (dirt specks, leaves, twigs, glue-board grid
//! lines) used as hard negatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::imaging::GrayImage;
use crate::integral::Rect;
use crate::trainer::NegativeSource;

pub const PATCH_SIDE: u32 = 20;
/// Board area per clutter item, in pixels.
pub const CLUTTER_AREA: u32 = 1500;

/// Float canvas that is quantized once at the end.
struct Canvas {
    w: u32,
    h: u32,
    px: Vec<f64>,
}

impl Canvas {
    fn background(rng: &mut ChaCha8Rng, w: u32, h: u32, soft_blobs: usize) -> Canvas {
        let base = rng.random_range(110.0..200.0);
        let gx = rng.random_range(-0.3..0.3) * 20.0 / w as f64;
        let gy = rng.random_range(-0.3..0.3) * 20.0 / h as f64;
        let blobs: Vec<(f64, f64, f64, f64)> = (0..soft_blobs)
            .map(|_| {
                (
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0.0..h as f64),
                    rng.random_range(30.0..90.0),
                    rng.random_range(-18.0..18.0),
                )
            })
            .collect();
        let mut px = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                let mut v = base + gx * fx * 10.0 + gy * fy * 10.0;
                for &(bx, by, r, amp) in &blobs {
                    let d2 = (fx - bx).powi(2) + (fy - by).powi(2);
                    v += amp * (-d2 / (2.0 * r * r)).exp();
                }
                px.push(v);
            }
        }
        Canvas { w, h, px }
    }

    #[inline]
    fn add(&mut self, x: u32, y: u32, dv: f64) {
        self.px[(y * self.w + x) as usize] += dv;
    }

    fn bbox_iter(&self, cx: f64, cy: f64, r: f64) -> impl Iterator<Item = (u32, u32)> {
        self.span_iter(cx - r, cy - r, cx + r, cy + r)
    }

    fn span_iter(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> impl Iterator<Item = (u32, u32)> {
        let x0 = x0.floor().max(0.0) as u32;
        let y0 = y0.floor().max(0.0) as u32;
        let x1 = (x1.ceil() as i64).clamp(0, self.w as i64 - 1) as u32;
        let y1 = (y1.ceil() as i64).clamp(0, self.h as i64 - 1) as u32;
        (y0..=y1).flat_map(move |y| (x0..=x1).map(move |x| (x, y)))
    }

    // Filled ellipse with a one-pixel soft edge; `shade` maps the normalized
    // in-body coordinates (u along the major axis, v across) to a delta.
    fn ellipse(
        &mut self,
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        angle: f64,
        shade: impl Fn(f64, f64) -> f64,
    ) {
        let (s, c) = angle.sin_cos();
        let pts: Vec<_> = self.bbox_iter(cx, cy, a.max(b) + 1.0).collect();
        for (x, y) in pts {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
            let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
            let edge = b.min(a);
            let cover = ((1.0 - rho) * edge + 0.5).clamp(0.0, 1.0);
            if cover > 0.0 {
                self.add(x, y, cover * shade(u / a, v / b));
            }
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64, delta: f64) {
        self.ellipse(cx, cy, r, r, 0.0, |_, _| delta);
    }

    // Straight stroke of the given width from (x0,y0) to (x1,y1).
    fn stroke(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, width: f64, delta: f64) {
        let (lx, ly) = (x1 - x0, y1 - y0);
        let len2 = (lx * lx + ly * ly).max(1e-9);
        let pad = width / 2.0 + 1.0;
        let pts: Vec<_> = self
            .span_iter(
                x0.min(x1) - pad,
                y0.min(y1) - pad,
                x0.max(x1) + pad,
                y0.max(y1) + pad,
            )
            .collect();
        for (x, y) in pts {
            let (px, py) = (x as f64 + 0.5 - x0, y as f64 + 0.5 - y0);
            let t = ((px * lx + py * ly) / len2).clamp(0.0, 1.0);
            let d = ((px - t * lx).powi(2) + (py - t * ly).powi(2)).sqrt();
            let cover = (width / 2.0 - d + 0.5).clamp(0.0, 1.0);
            if cover > 0.0 {
                self.add(x, y, cover * delta);
            }
        }
    }

    fn noise(&mut self, rng: &mut ChaCha8Rng, sigma: f64) {
        let n = Normal::new(0.0, sigma).expect("finite sigma");
        for p in &mut self.px {
            *p += n.sample(rng);
        }
    }

    fn quantize(self) -> GrayImage {
        let px = self
            .px
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::new(self.w, self.h, px).expect("canvas dims are non-zero")
    }
}

/// Draws one moth whose bounding window is `20 * scale` pixels wide,
/// centred at `(cx, cy)`.
fn draw_moth(canvas: &mut Canvas, rng: &mut ChaCha8Rng, cx: f64, cy: f64, scale: f64) {
    let a = rng.random_range(6.3..7.6) * scale;
    let b = rng.random_range(3.2..4.1) * scale;
    let angle = rng.random_range(-0.3..0.3);
    let depth = rng.random_range(50.0..100.0);
    let band = rng.random_range(0.25..0.45);
    canvas.ellipse(cx, cy, a, b, angle, |u, v| {
        let mut d = -depth;
        // lighter transverse wing band, darker dorsal line
        if (u - band).abs() < 0.12 {
            d += 18.0;
        }
        if v.abs() < 0.22 {
            d -= 14.0;
        }
        d
    });
}

/// A 20x20 positive training patch: one moth near the centre.
pub fn moth_patch(rng: &mut ChaCha8Rng) -> GrayImage {
    let mut c = Canvas::background(rng, PATCH_SIDE, PATCH_SIDE, 0);
    // same clutter density as a full board, so patches look like scene crops
    if rng.random_bool((PATCH_SIDE * PATCH_SIDE) as f64 / CLUTTER_AREA as f64) {
        draw_clutter(&mut c, rng, 1);
    }
    let cx = 10.0 + rng.random_range(-0.8..0.8);
    let cy = 10.0 + rng.random_range(-0.8..0.8);
    let scale = rng.random_range(0.95..1.05);
    draw_moth(&mut c, rng, cx, cy, scale);
    c.noise(rng, 4.0);
    c.quantize()
}

// Moth-like decoys differ from a moth in size (semi-major axis under 6 px
// or over 12 px, off the positive band at every pyramid level), shape
// (round discs, upright bodies) or markings (no wing band, no dorsal line).
fn draw_clutter(c: &mut Canvas, rng: &mut ChaCha8Rng, count: usize) {
    let (w, h) = (c.w as f64, c.h as f64);
    for _ in 0..count {
        let (x, y) = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        match rng.random_range(0..13) {
            0 => {
                let r = rng.random_range(1.0..3.0);
                c.disc(x, y, r, -rng.random_range(40.0..110.0));
            }
            1 => {
                let r = rng.random_range(18.0..40.0);
                c.disc(x, y, r, -rng.random_range(30.0..80.0));
            }
            2 => {
                let len = rng.random_range(18.0..45.0);
                let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let (dx, dy) = (t.cos() * len / 2.0, t.sin() * len / 2.0);
                c.stroke(
                    x - dx,
                    y - dy,
                    x + dx,
                    y + dy,
                    rng.random_range(1.0..2.5),
                    -rng.random_range(40.0..90.0),
                );
            }
            3 => {
                let delta = if rng.random_bool(0.5) { -30.0 } else { 25.0 };
                if rng.random_bool(0.5) {
                    c.stroke(0.0, y, w, y, rng.random_range(1.0..2.0), delta);
                } else {
                    c.stroke(x, 0.0, x, h, rng.random_range(1.0..2.0), delta);
                }
            }
            4 | 5 => {
                let r = rng.random_range(3.5..7.5);
                c.disc(x, y, r, -rng.random_range(40.0..100.0));
            }
            6 => {
                let a = rng.random_range(3.0..5.5);
                let angle = rng.random_range(-0.4..0.4);
                c.ellipse(x, y, a, a * rng.random_range(0.45..0.6), angle, |_, _| {
                    -rng_free_depth(a)
                });
            }
            7 => {
                let a = rng.random_range(12.5..16.0);
                let angle = rng.random_range(-0.4..0.4);
                c.ellipse(x, y, a, a * rng.random_range(0.45..0.6), angle, |_, _| {
                    -70.0
                });
            }
            8 => {
                // upright body
                let a = rng.random_range(5.5..9.0);
                let angle = std::f64::consts::FRAC_PI_2 + rng.random_range(-0.3..0.3);
                c.ellipse(x, y, a, a * rng.random_range(0.45..0.6), angle, |_, _| {
                    -75.0
                });
            }
            11 | 12 => {
                // unmarked body: moth outline without wing band or dorsal line
                let a = rng.random_range(6.0..8.0);
                let depth = rng.random_range(50.0..100.0);
                c.ellipse(
                    x,
                    y,
                    a,
                    a * rng.random_range(0.42..0.6),
                    rng.random_range(-0.3..0.3),
                    |_, _| -depth,
                );
            }
            9 => {
                let r = rng.random_range(1.0..2.5);
                c.disc(x, y, r, rng.random_range(30.0..60.0));
            }
            _ => {
                // pale moth-shaped stain
                let a = rng.random_range(6.0..8.0);
                c.ellipse(x, y, a, a * 0.5, rng.random_range(-0.2..0.2), |_, _| {
                    rng_free_depth(a)
                });
            }
        }
    }
}

fn rng_free_depth(a: f64) -> f64 {
    40.0 + 6.0 * a
}

/// A moth-free trap image with clutter, for hard-negative mining.
pub fn background_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> GrayImage {
    let mut c = Canvas::background(rng, w, h, 3);
    let clutter = (w * h / CLUTTER_AREA) as usize;
    draw_clutter(&mut c, rng, clutter);
    c.noise(rng, 4.0);
    c.quantize()
}

/// A trap image holding `moths` non-overlapping moths, returned with their
/// ground-truth boxes. Moth windows span 20 to 29 pixels.
pub fn trap_scene(rng: &mut ChaCha8Rng, w: u32, h: u32, moths: usize) -> (GrayImage, Vec<Rect>) {
    let mut c = Canvas::background(rng, w, h, 3);
    let clutter = (w * h / CLUTTER_AREA) as usize;
    draw_clutter(&mut c, rng, clutter);
    let mut boxes: Vec<Rect> = Vec::new();
    let mut attempts = 0;
    while boxes.len() < moths && attempts < 1000 {
        attempts += 1;
        let scale = rng.random_range(1.0..1.45);
        let side = (PATCH_SIDE as f64 * scale).round() as u32;
        if side + 2 > w || side + 2 > h {
            break;
        }
        let x = rng.random_range(1..w - side - 1);
        let y = rng.random_range(1..h - side - 1);
        let r = Rect::new(x, y, side, side);
        let clear = boxes.iter().all(|b| {
            r.right() + 4 <= b.x
                || b.right() + 4 <= r.x
                || r.bottom() + 4 <= b.y
                || b.bottom() + 4 <= r.y
        });
        if !clear {
            continue;
        }
        let (cx, cy) = (x as f64 + side as f64 / 2.0, y as f64 + side as f64 / 2.0);
        draw_moth(&mut c, rng, cx, cy, scale);
        boxes.push(r);
    }
    c.noise(rng, 4.0);
    (c.quantize(), boxes)
}

/// Negative trap boards generated on demand: board `i` depends only on
/// `(seed, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticBoards {
    pub seed: u64,
    pub count: usize,
    pub width: u32,
    pub height: u32,
}

impl SyntheticBoards {
    pub fn board(&self, index: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, index as u64));
        background_image(&mut rng, self.width, self.height)
    }
}

impl NegativeSource for SyntheticBoards {
    fn count(&self) -> usize {
        self.count
    }

    fn image(&self, index: usize) -> GrayImage {
        self.board(index)
    }

    fn dims(&self, _index: usize) -> (u32, u32) {
        (self.width, self.height)
    }
}

fn mix(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ k.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(29)
}

/// Deterministic corpus: training and held-out positives plus negative boards.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train_pos: Vec<GrayImage>,
    pub heldout_pos: Vec<GrayImage>,
    pub train_neg: SyntheticBoards,
    pub heldout_neg: SyntheticBoards,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSpec {
    pub train_pos: usize,
    pub heldout_pos: usize,
    pub train_neg: usize,
    pub heldout_neg: usize,
    pub neg_w: u32,
    pub neg_h: u32,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            train_pos: 2000,
            heldout_pos: 500,
            train_neg: 100,
            heldout_neg: 8,
            neg_w: 320,
            neg_h: 240,
            seed: 2024,
        }
    }
}

pub fn corpus(spec: &CorpusSpec) -> Corpus {
    let stream = |k: u64| ChaCha8Rng::seed_from_u64(mix(spec.seed, k));
    let mut r = stream(u64::MAX);
    let train_pos = (0..spec.train_pos).map(|_| moth_patch(&mut r)).collect();
    let mut r = stream(u64::MAX - 1);
    let heldout_pos = (0..spec.heldout_pos).map(|_| moth_patch(&mut r)).collect();
    let boards = |seed: u64, count: usize| SyntheticBoards {
        seed,
        count,
        width: spec.neg_w,
        height: spec.neg_h,
    };
    Corpus {
        train_pos,
        heldout_pos,
        train_neg: boards(mix(spec.seed, 3), spec.train_neg),
        heldout_neg: boards(mix(spec.seed, 4), spec.heldout_neg),
    }
}
