//! Procedural demo datasets.
//!
//! Self-contained stand-ins for runs where no benchmark files are on disk:
//! a 10-class glyph classification set (digit shapes rendered with random
//! scale, rotation, offset, contrast, and pixel noise) and an unlabeled
//! smooth-texture set usable as an OOD probe source. Both are pure functions
//! of (seed, index). They are fixtures for tests and smoke runs, not
//! benchmark replacements.

use crate::data::{Dataset, Split};
use crate::error::Result;
use crate::rng::StreamRng;

/// 5x7 digit bitmaps, one row per byte, low 5 bits used.
const DIGITS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110], // 0
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110], // 1
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111], // 2
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110], // 3
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010], // 4
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110], // 5
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110], // 6
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000], // 7
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110], // 8
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100], // 9
];

fn bitmap_at(digit: usize, v: f32, u: f32) -> f32 {
    // Bilinear sample of the 5x7 bitmap; outside is background.
    let sample = |r: i32, c: i32| -> f32 {
        if !(0..7).contains(&r) || !(0..5).contains(&c) {
            return 0.0;
        }
        ((DIGITS[digit][r as usize] >> (4 - c as usize)) & 1) as f32
    };
    let r0 = v.floor();
    let c0 = u.floor();
    let dr = v - r0;
    let dc = u - c0;
    let (r0, c0) = (r0 as i32, c0 as i32);
    sample(r0, c0) * (1.0 - dr) * (1.0 - dc)
        + sample(r0, c0 + 1) * (1.0 - dr) * dc
        + sample(r0 + 1, c0) * dr * (1.0 - dc)
        + sample(r0 + 1, c0 + 1) * dr * dc
}

/// Labeled glyph classification set: `n` images of h x w x channels.
/// Balanced classes assigned round-robin; every image is a pure function of
/// (seed, index).
pub fn glyph_classification(
    n: usize,
    seed: u64,
    h: usize,
    w: usize,
    channels: usize,
    split: Split,
) -> Result<Dataset> {
    let mut images = Vec::with_capacity(n * h * w * channels);
    let mut labels = Vec::with_capacity(n);
    let split_tag = match split {
        Split::Train => 0u64,
        Split::Test => 1,
        Split::Probe => 2,
    };
    for i in 0..n {
        let mut rng = StreamRng::stream(seed, "synth-glyph", &[split_tag, i as u64]);
        let digit = i % 10;
        labels.push(digit as u8);
        render_glyph_image(digit, &mut rng, h, w, channels, &mut images);
    }
    let name = if channels == 3 { "synth-rgb" } else { "synth" };
    Dataset::new(name, split, h, w, channels, images, Some(labels))
}

fn render_glyph_image(
    digit: usize,
    rng: &mut StreamRng,
    h: usize,
    w: usize,
    channels: usize,
    out: &mut Vec<f32>,
) {
    let scale = rng.range_f64(0.50, 0.85) as f32 * h as f32 / 7.0; // px per cell
    let theta = rng.range_f64(-0.35, 0.35) as f32;
    let cx = w as f32 / 2.0 + rng.range_f64(-3.0, 3.0) as f32;
    let cy = h as f32 / 2.0 + rng.range_f64(-3.0, 3.0) as f32;
    let intensity = rng.range_f64(0.50, 1.0) as f32;
    let noise_sigma = rng.range_f64(0.05, 0.12) as f32;
    // Clutter blobs make the task non-trivial: they mimic stroke fragments.
    let clutter: Vec<(f32, f32, f32, f32)> = (0..2)
        .map(|_| {
            (
                rng.range_f64(0.0, h as f64) as f32,
                rng.range_f64(0.0, w as f64) as f32,
                rng.range_f64(1.0, 2.5) as f32,
                rng.range_f64(0.10, 0.35) as f32,
            )
        })
        .collect();
    let (sin_t, cos_t) = theta.sin_cos();
    let tint: [f32; 3] = if channels == 3 {
        [
            rng.range_f64(0.6, 1.0) as f32,
            rng.range_f64(0.6, 1.0) as f32,
            rng.range_f64(0.6, 1.0) as f32,
        ]
    } else {
        [1.0, 1.0, 1.0]
    };
    for y in 0..h {
        for x in 0..w {
            let px = x as f32 - cx;
            let py = y as f32 - cy;
            let u = (px * cos_t + py * sin_t) / scale + 2.0;
            let v = (-px * sin_t + py * cos_t) / scale + 3.0;
            let mut g = bitmap_at(digit, v, u) * intensity;
            for (by, bx, r, a) in &clutter {
                let d2 = (y as f32 - by).powi(2) + (x as f32 - bx).powi(2);
                g += a * (-d2 / (2.0 * r * r)).exp();
            }
            for t in tint.iter().take(channels) {
                let noise = (rng.next_gaussian() as f32) * noise_sigma;
                out.push((g * t + noise).clamp(0.0, 1.0));
            }
        }
    }
}

/// Unlabeled smooth-texture images (sums of random soft blobs plus noise),
/// shaped for use as an OOD probe source.
pub fn texture_probe_source(n: usize, seed: u64, h: usize, w: usize, channels: usize) -> Result<Dataset> {
    let mut images = Vec::with_capacity(n * h * w * channels);
    for i in 0..n {
        let mut rng = StreamRng::stream(seed, "synth-texture", &[i as u64]);
        let blobs: Vec<(f32, f32, f32, f32)> = (0..4)
            .map(|_| {
                (
                    rng.range_f64(0.0, h as f64) as f32,
                    rng.range_f64(0.0, w as f64) as f32,
                    rng.range_f64(2.0, h as f64 / 2.0) as f32,
                    rng.range_f64(0.3, 1.0) as f32,
                )
            })
            .collect();
        let channel_gain: Vec<f32> = (0..channels)
            .map(|_| rng.range_f64(0.5, 1.0) as f32)
            .collect();
        for y in 0..h {
            for x in 0..w {
                let mut v = 0.0f32;
                for (by, bx, r, a) in &blobs {
                    let d2 = (y as f32 - by).powi(2) + (x as f32 - bx).powi(2);
                    v += a * (-d2 / (2.0 * r * r)).exp();
                }
                for g in &channel_gain {
                    let noise = (rng.next_gaussian() as f32) * 0.05;
                    images.push((v * g + noise).clamp(0.0, 1.0));
                }
            }
        }
    }
    let name = if channels == 3 {
        "synth-texture-rgb"
    } else {
        "synth-texture"
    };
    Dataset::new(name, Split::Probe, h, w, channels, images, None)
}
