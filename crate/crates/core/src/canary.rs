//! Canary construction: unique/random feature patches, injection, canary
//! training sets, and aligned probe triples.
//!
//! The 5x5 A-Z bitmap font below is the toolkit's fixed definition of the
//! unique features; the glyph bitmaps are part of the reproducibility
//! contract (same letter, same pixels, always).

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Default patch side length.
pub const PATCH_SIZE: usize = 5;
/// Default injection offset from the top-left corner, (row, col).
pub const PATCH_OFFSET: (usize, usize) = (1, 1);

/// 5x5 glyph bitmaps for A-Z, one row per byte, low 5 bits used.
const FONT: [[u8; 5]; 26] = [
    [0b01110, 0b10001, 0b11111, 0b10001, 0b10001], // A
    [0b11110, 0b10001, 0b11110, 0b10001, 0b11110], // B
    [0b01111, 0b10000, 0b10000, 0b10000, 0b01111], // C
    [0b11110, 0b10001, 0b10001, 0b10001, 0b11110], // D
    [0b11111, 0b10000, 0b11110, 0b10000, 0b11111], // E
    [0b11111, 0b10000, 0b11110, 0b10000, 0b10000], // F
    [0b01111, 0b10000, 0b10011, 0b10001, 0b01111], // G
    [0b10001, 0b10001, 0b11111, 0b10001, 0b10001], // H
    [0b11111, 0b00100, 0b00100, 0b00100, 0b11111], // I
    [0b00111, 0b00010, 0b00010, 0b10010, 0b01100], // J
    [0b10001, 0b10010, 0b11100, 0b10010, 0b10001], // K
    [0b10000, 0b10000, 0b10000, 0b10000, 0b11111], // L
    [0b10001, 0b11011, 0b10101, 0b10001, 0b10001], // M
    [0b10001, 0b11001, 0b10101, 0b10011, 0b10001], // N
    [0b01110, 0b10001, 0b10001, 0b10001, 0b01110], // O
    [0b11110, 0b10001, 0b11110, 0b10000, 0b10000], // P
    [0b01110, 0b10001, 0b10101, 0b10010, 0b01101], // Q
    [0b11110, 0b10001, 0b11110, 0b10010, 0b10001], // R
    [0b01111, 0b10000, 0b01110, 0b00001, 0b11110], // S
    [0b11111, 0b00100, 0b00100, 0b00100, 0b00100], // T
    [0b10001, 0b10001, 0b10001, 0b10001, 0b01110], // U
    [0b10001, 0b10001, 0b10001, 0b01010, 0b00100], // V
    [0b10001, 0b10001, 0b10101, 0b11011, 0b10001], // W
    [0b10001, 0b01010, 0b00100, 0b01010, 0b10001], // X
    [0b10001, 0b01010, 0b00100, 0b00100, 0b00100], // Y
    [0b11111, 0b00010, 0b00100, 0b01000, 0b11111], // Z
];

/// Whether a patch is the unique feature or a random calibration draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchKind {
    Unique,
    Random,
}

/// An m x m pixel feature plus its injection offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pixels: Vec<f32>,
    size: usize,
    offset: (usize, usize),
    kind: PatchKind,
    glyph: Option<char>,
    rng_seed: Option<u64>,
}

impl Patch {
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn offset(&self) -> (usize, usize) {
        self.offset
    }

    pub fn kind(&self) -> PatchKind {
        self.kind
    }

    pub fn glyph(&self) -> Option<char> {
        self.glyph
    }

    pub fn rng_seed(&self) -> Option<u64> {
        self.rng_seed
    }

    pub fn with_offset(mut self, offset: (usize, usize)) -> Patch {
        self.offset = offset;
        self
    }

    /// Identifier for reports: the letter for glyph patches, the seed for
    /// random ones.
    pub fn describe(&self) -> String {
        match (self.kind, self.glyph, self.rng_seed) {
            (PatchKind::Unique, Some(g), _) => format!("glyph-{g}"),
            (PatchKind::Random, _, Some(s)) => format!("random-{s}"),
            _ => "patch".into(),
        }
    }
}

/// Render a letter A-Z as a binary 5x5 unique-feature patch at offset (1,1):
/// glyph pixels 1.0, background pixels 0.0.
pub fn render_glyph(letter: char) -> Result<Patch> {
    let upper = letter.to_ascii_uppercase();
    if !upper.is_ascii_uppercase() {
        return Err(Error::UnsupportedGlyph(letter));
    }
    let rows = FONT[(upper as u8 - b'A') as usize];
    let mut pixels = Vec::with_capacity(PATCH_SIZE * PATCH_SIZE);
    for row in rows {
        for col in 0..PATCH_SIZE {
            pixels.push(((row >> (PATCH_SIZE - 1 - col)) & 1) as f32);
        }
    }
    Ok(Patch {
        pixels,
        size: PATCH_SIZE,
        offset: PATCH_OFFSET,
        kind: PatchKind::Unique,
        glyph: Some(upper),
        rng_seed: None,
    })
}

/// Draw a 5x5 random patch with i.i.d. uniform [0,1) pixels.
pub fn sample_random_patch(seed: u64) -> Patch {
    let mut rng = StreamRng::stream(seed, "random-patch", &[]);
    let pixels = (0..PATCH_SIZE * PATCH_SIZE)
        .map(|_| rng.next_f64() as f32)
        .collect();
    Patch {
        pixels,
        size: PATCH_SIZE,
        offset: PATCH_OFFSET,
        kind: PatchKind::Random,
        glyph: None,
        rng_seed: Some(seed),
    }
}

/// Overwrite the patch region of an interleaved h x w x c image, the patch
/// value replicated across channels. The input is modified in place; use
/// [`inject`] for a copying version.
pub fn inject_into(img: &mut [f32], h: usize, w: usize, c: usize, patch: &Patch) -> Result<()> {
    let (r0, c0) = patch.offset;
    let m = patch.size;
    if r0 + m > h || c0 + m > w {
        return Err(Error::PatchOutOfBounds {
            offset: patch.offset,
            size: m,
            dims: (h, w),
        });
    }
    for py in 0..m {
        for px in 0..m {
            let v = patch.pixels[py * m + px];
            for ch in 0..c {
                img[((r0 + py) * w + (c0 + px)) * c + ch] = v;
            }
        }
    }
    Ok(())
}

/// Copy of `img` with the patch region overwritten.
pub fn inject(img: &[f32], h: usize, w: usize, c: usize, patch: &Patch) -> Result<Vec<f32>> {
    let mut out = img.to_vec();
    inject_into(&mut out, h, w, c, patch)?;
    Ok(out)
}

/// Copy of the training set with exactly one image replaced by its injected
/// version; labels untouched.
pub fn build_canary_dataset(train: &Dataset, canary_index: usize, patch: &Patch) -> Result<Dataset> {
    if canary_index >= train.len() {
        return Err(Error::IndexOutOfRange {
            index: canary_index,
            size: train.len(),
        });
    }
    let mut out = train.clone();
    let (h, w, c) = out.shape();
    inject_into(out.image_mut(canary_index), h, w, c, patch)?;
    Ok(out)
}

/// Aligned OOD probe sets: clean, unique-injected, random-injected.
#[derive(Clone, Debug)]
pub struct ProbeTriple {
    pub clean: Dataset,
    pub unique: Dataset,
    pub random: Dataset,
    pub z_u: Patch,
    /// Seed the per-image random patches were derived from.
    pub seed: u64,
}

impl ProbeTriple {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

/// The A/A negative control: both injected probe sets receive fresh
/// independent random patches per image, so the per-image divergences are
/// exchangeable between the "unique" and "random" sets by construction. Under
/// this null the M score must not report memorisation; it calibrates the
/// score's false-positive behaviour.
pub fn build_null_probe_triple(ood: &Dataset, seed: u64) -> Result<ProbeTriple> {
    let (h, w, c) = ood.shape();
    let mut unique = ood.clone();
    let mut random = ood.clone();
    for i in 0..ood.len() {
        let zu = sample_random_patch(crate::rng::derive_seed(seed, "null-zu", &[i as u64]));
        inject_into(unique.image_mut(i), h, w, c, &zu)?;
        let zr = sample_random_patch(crate::rng::derive_seed(seed, "probe-zr", &[i as u64]));
        inject_into(random.image_mut(i), h, w, c, &zr)?;
    }
    Ok(ProbeTriple {
        clean: ood.clone(),
        unique,
        random,
        z_u: sample_random_patch(crate::rng::derive_seed(seed, "null-zu", &[0])),
        seed,
    })
}

/// Build the probe triple for a base OOD set: D_c is the set itself, D_u
/// injects `z_u` into every image, D_r injects a fresh random patch per image
/// (seeds derived from `seed` by image index).
pub fn build_probe_triple(ood: &Dataset, z_u: &Patch, seed: u64) -> Result<ProbeTriple> {
    let (h, w, c) = ood.shape();
    let mut unique = ood.clone();
    let mut random = ood.clone();
    for i in 0..ood.len() {
        inject_into(unique.image_mut(i), h, w, c, z_u)?;
        let zr = sample_random_patch(crate::rng::derive_seed(seed, "probe-zr", &[i as u64]))
            .with_offset(z_u.offset());
        inject_into(random.image_mut(i), h, w, c, &zr)?;
    }
    Ok(ProbeTriple {
        clean: ood.clone(),
        unique,
        random,
        z_u: z_u.clone(),
        seed,
    })
}
