//! Dataset loading, OOD probe construction, and training-time augmentation.

pub mod cifar;
pub mod idx;
pub mod synth;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

pub use cifar::{load_cifar10, write_cifar10};
pub use idx::{load_idx, write_idx};

/// Which split a dataset represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    /// Unlabeled probe images (OOD sets).
    Probe,
}

/// An in-memory image dataset: N images of h x w x c float pixels in [0,1],
/// row-major NHWC, with optional byte labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    name: String,
    split: Split,
    height: usize,
    width: usize,
    channels: usize,
    images: Vec<f32>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        name: &str,
        split: Split,
        height: usize,
        width: usize,
        channels: usize,
        images: Vec<f32>,
        labels: Option<Vec<u8>>,
    ) -> Result<Dataset> {
        let img_len = height * width * channels;
        if img_len == 0 || images.len() % img_len != 0 {
            return Err(Error::DatasetFormat(format!(
                "{} pixel values do not tile {height}x{width}x{channels} images",
                images.len()
            )));
        }
        let n = images.len() / img_len;
        let labels = labels.unwrap_or_default();
        if !labels.is_empty() && labels.len() != n {
            return Err(Error::DatasetFormat(format!(
                "{n} images but {} labels",
                labels.len()
            )));
        }
        for v in &images {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::DatasetFormat(format!(
                    "pixel value {v} outside [0,1]"
                )));
            }
        }
        Ok(Dataset {
            name: name.to_string(),
            split,
            height,
            width,
            channels,
            images,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.images.len() / self.image_len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn is_labeled(&self) -> bool {
        !self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let l = self.image_len();
        &self.images[i * l..(i + 1) * l]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f32] {
        let l = self.image_len();
        &mut self.images[i * l..(i + 1) * l]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Number of classes, inferred as max label + 1.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// Indices of every image with the given label.
    pub fn indices_with_label(&self, label: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l as usize == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy the images at `indices` into a [n, h, w, c] tensor.
    pub fn gather_batch(&self, indices: &[usize]) -> Tensor<f32> {
        let l = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * l);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(vec![indices.len(), self.height, self.width, self.channels], data)
            .expect("gather shapes are consistent")
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.label(i)).collect()
    }

    /// New dataset holding the selected rows.
    pub fn subset(&self, indices: &[usize], name: &str) -> Dataset {
        let l = self.image_len();
        let mut images = Vec::with_capacity(indices.len() * l);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        let labels = if self.is_labeled() {
            indices.iter().map(|&i| self.labels[i]).collect()
        } else {
            Vec::new()
        };
        Dataset {
            name: name.to_string(),
            split: self.split,
            height: self.height,
            width: self.width,
            channels: self.channels,
            images,
            labels,
        }
    }

    /// Per-class counts over all labels.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for l in &self.labels {
            counts[*l as usize] += 1;
        }
        counts
    }
}

/// Recipe for an OOD probe base set.
#[derive(Clone, Debug, PartialEq)]
pub struct OODSpec {
    pub source: String,
    pub target: (usize, usize, usize),
}

/// Build an unlabeled OOD probe base set of `n` seeded-sampled images,
/// converted to the audited model's input shape.
///
/// Supported conversions: 3-channel sources to single-channel targets via
/// BT.601 luma then bilinear resize; single-channel sources to 3-channel
/// targets via bilinear resize then channel tripling. Same-channel sources
/// are resized only.
pub fn make_ood_set(source: &Dataset, target: (usize, usize, usize), n: usize, seed: u64) -> Result<Dataset> {
    if n > source.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {n} OOD images from a source of {}",
            source.len()
        )));
    }
    let (th, tw, tc) = target;
    if !(tc == 1 && source.channels == 3
        || tc == 3 && source.channels == 1
        || tc == source.channels)
    {
        return Err(Error::InvalidArgument(format!(
            "unsupported channel conversion {} -> {tc}",
            source.channels
        )));
    }
    let mut rng = StreamRng::stream(seed, "ood-select", &[]);
    let mut picked = rng.sample_indices(source.len(), n);
    picked.sort_unstable();

    let mut images = Vec::with_capacity(n * th * tw * tc);
    for &i in &picked {
        let img = source.image(i);
        let grey;
        let (src, sc) = if source.channels == 3 && tc == 1 {
            grey = greyscale(img, source.height, source.width);
            (grey.as_slice(), 1)
        } else {
            (img, source.channels)
        };
        let resized = resize_bilinear(src, source.height, source.width, sc, th, tw);
        if sc == 1 && tc == 3 {
            for v in resized {
                images.extend_from_slice(&[v, v, v]);
            }
        } else {
            images.extend(resized);
        }
    }
    Dataset::new(
        &format!("{}-ood", source.name),
        Split::Probe,
        th,
        tw,
        tc,
        images,
        None,
    )
}

/// BT.601 luma conversion of an interleaved RGB image.
pub fn greyscale(img: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(h * w);
    for p in img.chunks(3) {
        out.push(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
    }
    out
}

/// Bilinear resize of an interleaved h x w x c image.
pub fn resize_bilinear(
    img: &[f32],
    h: usize,
    w: usize,
    c: usize,
    th: usize,
    tw: usize,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(th * tw * c);
    let sy = h as f32 / th as f32;
    let sx = w as f32 / tw as f32;
    for oy in 0..th {
        // Half-pixel centers.
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f32;
        for ox in 0..tw {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f32;
            for ch in 0..c {
                let at = |y: usize, x: usize| img[(y * w + x) * c + ch];
                let top = at(y0, x0) * (1.0 - dx) + at(y0, x1) * dx;
                let bot = at(y1, x0) * (1.0 - dx) + at(y1, x1) * dx;
                out.push((top * (1.0 - dy) + bot * dy).clamp(0.0, 1.0));
            }
        }
    }
    out
}

/// Training-time augmentation switches. `flip` is enabled for CIFAR-style
/// datasets only.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentConfig {
    pub contrast: bool,
    pub crop: bool,
    pub flip: bool,
}

impl AugmentConfig {
    /// The augmentation set used when the augmentation regulariser is on:
    /// contrast jitter and patch-preserving crop everywhere, plus horizontal
    /// flips for CIFAR.
    pub fn for_dataset(dataset_name: &str) -> AugmentConfig {
        let cifar_like = dataset_name.to_ascii_lowercase().contains("cifar")
            || dataset_name.to_ascii_lowercase().contains("rgb");
        AugmentConfig {
            contrast: true,
            crop: true,
            flip: cifar_like,
        }
    }

    pub fn disabled() -> AugmentConfig {
        AugmentConfig::default()
    }

    pub fn any(&self) -> bool {
        self.contrast || self.crop || self.flip
    }
}

/// Augment one mini-batch in place. Per image, in fixed draw order:
///
/// 1. contrast jitter with a factor drawn from [0.8, 1.2], about the
///    per-channel mean, clamped back to [0,1];
/// 2. crop to (h-1, w-1) with the retained window kept at its original
///    coordinates and the cropped-away row/column zeroed; the crop origin is
///    restricted to {0,1} so the patch region (rows/cols 1-5) always
///    survives;
/// 3. horizontal flip with probability 1/2 (CIFAR only).
pub fn augment_batch(
    batch: &mut Tensor<f32>,
    h: usize,
    w: usize,
    c: usize,
    cfg: AugmentConfig,
    rng: &mut StreamRng,
) {
    if !cfg.any() {
        return;
    }
    let img_len = h * w * c;
    let n = batch.len() / img_len;
    let data = batch.data_mut();
    for i in 0..n {
        let img = &mut data[i * img_len..(i + 1) * img_len];
        if cfg.contrast {
            let factor = rng.range_f64(0.8, 1.2) as f32;
            contrast_about_mean(img, h * w, c, factor);
        }
        if cfg.crop {
            let r0 = rng.below(2);
            let c0 = rng.below(2);
            crop_in_place(img, h, w, c, r0, c0);
        }
        if cfg.flip && rng.bernoulli(0.5) {
            flip_horizontal(img, h, w, c);
        }
    }
}

fn contrast_about_mean(img: &mut [f32], pixels: usize, c: usize, factor: f32) {
    for ch in 0..c {
        let mut mean = 0.0f32;
        for p in 0..pixels {
            mean += img[p * c + ch];
        }
        mean /= pixels as f32;
        for p in 0..pixels {
            let v = &mut img[p * c + ch];
            *v = ((*v - mean) * factor + mean).clamp(0.0, 1.0);
        }
    }
}

/// Keep the (h-1) x (w-1) window at origin (r0, c0), zero the rest. Content
/// keeps its original coordinates, so a patch at offset (1,1) is untouched
/// for either origin choice.
fn crop_in_place(img: &mut [f32], h: usize, w: usize, c: usize, r0: usize, c0: usize) {
    let (ch_, cw) = (h - 1, w - 1);
    for y in 0..h {
        for x in 0..w {
            let inside = y >= r0 && y < r0 + ch_ && x >= c0 && x < c0 + cw;
            if !inside {
                for chn in 0..c {
                    img[(y * w + x) * c + chn] = 0.0;
                }
            }
        }
    }
}

fn flip_horizontal(img: &mut [f32], h: usize, w: usize, c: usize) {
    for y in 0..h {
        for x in 0..w / 2 {
            for chn in 0..c {
                let a = (y * w + x) * c + chn;
                let b = (y * w + (w - 1 - x)) * c + chn;
                img.swap(a, b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb_source(n: usize) -> Dataset {
        let mut rng = StreamRng::new(10);
        let images: Vec<f32> = (0..n * 32 * 32 * 3).map(|_| rng.next_f64() as f32).collect();
        Dataset::new("cifar-like", Split::Train, 32, 32, 3, images, None).unwrap()
    }

    fn grey_source(n: usize) -> Dataset {
        let mut rng = StreamRng::new(11);
        let images: Vec<f32> = (0..n * 28 * 28).map(|_| rng.next_f64() as f32).collect();
        Dataset::new("mnist-like", Split::Train, 28, 28, 1, images, None).unwrap()
    }

    #[test]
    fn ood_rgb_to_grey_shape_and_range() {
        let src = rgb_source(50);
        let ood = make_ood_set(&src, (28, 28, 1), 20, 3).unwrap();
        assert_eq!(ood.len(), 20);
        assert_eq!(ood.shape(), (28, 28, 1));
        assert!(ood.images().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(!ood.is_labeled());
    }

    #[test]
    fn ood_grey_to_rgb_triples_channels() {
        let src = grey_source(30);
        let ood = make_ood_set(&src, (32, 32, 3), 10, 3).unwrap();
        assert_eq!(ood.shape(), (32, 32, 3));
        for px in ood.images().chunks(3) {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
    }

    #[test]
    fn ood_same_seed_is_identical() {
        let src = rgb_source(40);
        let a = make_ood_set(&src, (28, 28, 1), 15, 7).unwrap();
        let b = make_ood_set(&src, (28, 28, 1), 15, 7).unwrap();
        assert_eq!(a.images(), b.images());
        let c = make_ood_set(&src, (28, 28, 1), 15, 8).unwrap();
        assert_ne!(a.images(), c.images());
    }

    #[test]
    fn ood_oversample_is_an_error() {
        let src = grey_source(5);
        assert!(make_ood_set(&src, (32, 32, 3), 6, 0).is_err());
    }

    #[test]
    fn greyscale_uses_luma_weights() {
        let img = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let g = greyscale(&img, 2, 2);
        assert!((g[0] - 0.299).abs() < 1e-6);
        assert!((g[1] - 0.587).abs() < 1e-6);
        assert!((g[2] - 0.114).abs() < 1e-6);
        assert!((g[3] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn resize_identity_when_same_size() {
        let img: Vec<f32> = (0..16).map(|i| i as f32 / 15.0).collect();
        let out = resize_bilinear(&img, 4, 4, 1, 4, 4);
        assert_eq!(out, img);
    }

    #[test]
    fn resize_constant_image_stays_constant() {
        let img = vec![0.42f32; 32 * 32 * 3];
        let out = resize_bilinear(&img, 32, 32, 3, 28, 28);
        assert!(out.iter().all(|v| (v - 0.42).abs() < 1e-6));
        assert_eq!(out.len(), 28 * 28 * 3);
    }

    #[test]
    fn augment_disabled_is_identity() {
        let src = grey_source(4);
        let mut batch = src.gather_batch(&[0, 1, 2, 3]);
        let orig = batch.data().to_vec();
        let mut rng = StreamRng::new(0);
        augment_batch(&mut batch, 28, 28, 1, AugmentConfig::disabled(), &mut rng);
        assert_eq!(batch.data(), orig.as_slice());
    }

    #[test]
    fn flip_fraction_close_to_half() {
        let n = 10_000;
        let mut rng = StreamRng::new(77);
        // A marker image: asymmetric so flips are observable.
        let mut batch = Tensor::zeros(vec![n, 4, 4, 1]);
        for i in 0..n {
            batch.data_mut()[i * 16] = 1.0; // top-left corner pixel
        }
        let cfg = AugmentConfig {
            contrast: false,
            crop: false,
            flip: true,
        };
        augment_batch(&mut batch, 4, 4, 1, cfg, &mut rng);
        let flipped = (0..n)
            .filter(|i| batch.data()[i * 16 + 3] == 1.0)
            .count();
        let frac = flipped as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "flip fraction {frac}");
    }

    #[test]
    fn crop_preserves_patch_region_every_draw() {
        let mut rng = StreamRng::new(5);
        for _ in 0..200 {
            let mut img = vec![0.0f32; 28 * 28];
            // Patch region rows/cols 1-5.
            for y in 1..6 {
                for x in 1..6 {
                    img[y * 28 + x] = 1.0;
                }
            }
            let r0 = rng.below(2);
            let c0 = rng.below(2);
            crop_in_place(&mut img, 28, 28, 1, r0, c0);
            for y in 1..6 {
                for x in 1..6 {
                    assert_eq!(img[y * 28 + x], 1.0, "patch pixel lost at {y},{x}");
                }
            }
        }
    }

    #[test]
    fn contrast_keeps_patch_pixels_bright() {
        let mut rng = StreamRng::new(6);
        let mut batch = Tensor::zeros(vec![1, 28, 28, 1]);
        for y in 1..6 {
            for x in 1..6 {
                batch.data_mut()[y * 28 + x] = 1.0;
            }
        }
        let cfg = AugmentConfig {
            contrast: true,
            crop: true,
            flip: false,
        };
        augment_batch(&mut batch, 28, 28, 1, cfg, &mut rng);
        for y in 1..6 {
            for x in 1..6 {
                assert!(batch.data()[y * 28 + x] > 0.75);
            }
        }
    }

    #[test]
    fn label_histogram_counts() {
        let ds = Dataset::new(
            "t",
            Split::Train,
            1,
            1,
            1,
            vec![0.0; 6],
            Some(vec![0, 1, 1, 2, 2, 2]),
        )
        .unwrap();
        assert_eq!(ds.label_histogram(), vec![1, 2, 3]);
        assert_eq!(ds.indices_with_label(1), vec![1, 2]);
    }

    #[test]
    fn out_of_range_pixels_rejected() {
        assert!(Dataset::new("t", Split::Train, 1, 1, 1, vec![1.5], None).is_err());
        assert!(Dataset::new("t", Split::Train, 1, 1, 1, vec![-0.1], None).is_err());
    }
}
