//! Dataset containers and bit-exact loaders for the MNIST IDX and CIFAR-10
//! binary formats, a deterministic synthetic generator for fast tests, and a
//! raw-tensor directory format for user-supplied data.
//!
//! Loaded pixel bytes are divided by 255, so file-backed datasets hold values
//! in `[0, 1]`. The pipeline's scale invariance makes that choice immaterial
//! to decisions, which the test suite exploits.

use std::path::Path;

use rand::Rng;

use crate::convnet::zero_pad;
use crate::error::{Error, Result};
use crate::rng::{seeded, standard_normal};
use crate::scalar::{real, Real};
use crate::tensor::Image;

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;
const CIFAR_RECORD_LEN: usize = 3073;

/// Labeled images with uniform shape and 1-based labels in `1..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<R: Real> {
    images: Vec<Image<R>>,
    labels: Vec<usize>,
    k: usize,
}

impl<R: Real> LabeledDataset<R> {
    pub fn new(images: Vec<Image<R>>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dimension("dataset must be nonempty".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if k < 2 {
            return Err(Error::Dimension(format!("need at least 2 classes, got {k}")));
        }
        let (c, h, w) = (images[0].channels(), images[0].height(), images[0].width());
        for (i, img) in images.iter().enumerate() {
            if img.channels() != c || img.height() != h || img.width() != w {
                return Err(Error::Dimension(format!(
                    "image {i} is {}x{}x{}, expected {c}x{h}x{w}",
                    img.channels(),
                    img.height(),
                    img.width()
                )));
            }
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l < 1 || l > k)
        {
            return Err(Error::Consistency(format!(
                "label {l} of sample {i} outside 1..={k}"
            )));
        }
        Ok(Self { images, labels, k })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn image(&self, i: usize) -> &Image<R> {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Image<R>, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// `count` samples drawn without replacement by a seeded partial shuffle;
    /// deterministic per seed.
    pub fn seeded_subset(&self, count: usize, seed: u64) -> Result<Self> {
        if count == 0 || count > self.len() {
            return Err(Error::Dimension(format!(
                "subset of {count} from a dataset of {}",
                self.len()
            )));
        }
        let mut rng = seeded(seed);
        let mut indices: Vec<usize> = (0..self.len()).collect();
        for i in 0..count {
            let j = rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }
        let images = indices[..count].iter().map(|&i| self.images[i].clone()).collect();
        let labels = indices[..count].iter().map(|&i| self.labels[i]).collect();
        Self::new(images, labels, self.k)
    }

    /// Every image zero-padded by `pad` pixels per side (the MNIST 28→32
    /// shim).
    pub fn zero_padded(&self, pad: usize) -> Self {
        Self {
            images: self.images.iter().map(|img| zero_pad(img, pad)).collect(),
            labels: self.labels.clone(),
            k: self.k,
        }
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format("file shorter than its header".into()))
}

/// Parses an IDX image file (big-endian magic 2051, count, rows=28, cols=28,
/// then `count·784` pixel bytes).
pub fn parse_idx_images<R: Real>(bytes: &[u8]) -> Result<Vec<Image<R>>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "IDX image magic {magic}, expected {IDX_IMAGES_MAGIC}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if rows != 28 || cols != 28 {
        return Err(Error::Format(format!(
            "IDX images are {rows}x{cols}, expected 28x28"
        )));
    }
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "IDX image file is {} bytes, expected {expected} for {count} images",
            bytes.len()
        )));
    }
    bytes[16..]
        .chunks_exact(rows * cols)
        .map(|chunk| {
            Image::new(
                1,
                rows,
                cols,
                chunk.iter().map(|&b| real::<R>(b as f64 / 255.0)).collect(),
            )
        })
        .collect()
}

/// Parses an IDX label file (big-endian magic 2049, count, then `count` bytes
/// in 0..9); labels are shifted to `1..=10`.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "IDX label magic {magic}, expected {IDX_LABELS_MAGIC}"
        )));
    }
    let count = be_u32(bytes, 4)? as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "IDX label file is {} bytes, expected {expected} for {count} labels",
            bytes.len()
        )));
    }
    bytes[8..]
        .iter()
        .map(|&b| {
            if b > 9 {
                Err(Error::Format(format!("label byte {b} outside 0..9")))
            } else {
                Ok(b as usize + 1)
            }
        })
        .collect()
}

/// Loads the MNIST pair of IDX files; image and label counts must match.
pub fn load_mnist<R: Real>(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset<R>> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    LabeledDataset::new(images, labels, 10)
}

/// Parses one CIFAR-10 binary batch: 3073-byte records of a label byte
/// followed by 32×32 R, G, B planes.
pub fn parse_cifar_batch<R: Real>(bytes: &[u8]) -> Result<Vec<(Image<R>, usize)>> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "CIFAR batch length {} is not a positive multiple of {CIFAR_RECORD_LEN}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(CIFAR_RECORD_LEN)
        .map(|record| {
            let label = record[0];
            if label > 9 {
                return Err(Error::Format(format!("label byte {label} outside 0..9")));
            }
            let image = Image::new(
                3,
                32,
                32,
                record[1..]
                    .iter()
                    .map(|&b| real::<R>(b as f64 / 255.0))
                    .collect(),
            )?;
            Ok((image, label as usize + 1))
        })
        .collect()
}

/// Loads and concatenates CIFAR-10 binary batches in the order given.
pub fn load_cifar10<R: Real>(batch_paths: &[impl AsRef<Path>]) -> Result<LabeledDataset<R>> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        for (image, label) in parse_cifar_batch(&std::fs::read(path.as_ref())?)? {
            images.push(image);
            labels.push(label);
        }
    }
    LabeledDataset::new(images, labels, 10)
}

/// Linearly separable toy data: class `j` samples are `e_j` plus i.i.d.
/// normal noise of standard deviation 0.05, packaged as degenerate
/// `1×1×n_features` images. Class-major order, deterministic per seed.
pub fn synthetic_separable<R: Real>(
    n_features: usize,
    k: usize,
    samples_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset<R>> {
    if n_features < k {
        return Err(Error::Dimension(format!(
            "need n_features >= k, got {n_features} < {k}"
        )));
    }
    if samples_per_class == 0 {
        return Err(Error::Dimension("need at least one sample per class".into()));
    }
    let mut rng = seeded(seed);
    let noise = real::<R>(0.05);
    let mut images = Vec::with_capacity(k * samples_per_class);
    let mut labels = Vec::with_capacity(k * samples_per_class);
    for class in 1..=k {
        for _ in 0..samples_per_class {
            let data: Vec<R> = (0..n_features)
                .map(|f| {
                    let base = if f == class - 1 { R::one() } else { R::zero() };
                    base + noise * real::<R>(standard_normal(&mut rng))
                })
                .collect();
            images.push(Image::new(1, 1, n_features, data)?);
            labels.push(class);
        }
    }
    LabeledDataset::new(images, labels, k)
}

/// Seven-segment bar extents on a 28×28 canvas: inclusive
/// (row_lo, row_hi, col_lo, col_hi) per segment A..G.
const GLYPH_SEGMENTS: [(usize, usize, usize, usize); 7] = [
    (2, 4, 6, 21),    // A: top
    (4, 13, 19, 21),  // B: upper right
    (14, 24, 19, 21), // C: lower right
    (23, 25, 6, 21),  // D: bottom
    (14, 24, 6, 8),   // E: lower left
    (4, 13, 6, 8),    // F: upper left
    (12, 14, 6, 21),  // G: middle
];

/// Lit segments per digit 0..9.
const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 6, 4, 2, 3],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[0, 1, 2, 3, 5, 6],
];

/// Renders a digit as lit seven-segment strokes at a uniform brightness.
fn digit_glyph(digit: usize, amplitude: f64) -> [f64; 28 * 28] {
    let mut canvas = [0.0f64; 28 * 28];
    for &segment in DIGIT_SEGMENTS[digit] {
        let (r0, r1, c0, c1) = GLYPH_SEGMENTS[segment];
        for row in r0..=r1 {
            for col in c0..=c1 {
                canvas[row * 28 + col] = amplitude;
            }
        }
    }
    canvas
}

/// A deterministic digit-recognition stand-in: class `j` renders the digit
/// `j-1` as a seven-segment glyph on a 1×28×28 canvas with per-sample
/// variation — random shift up to ±3 pixels, stroke brightness on `[0.7, 1]`,
/// and uniform pixel noise on `[0, 0.08]`; pixels are clamped to `[0, 1]`.
/// Bright strokes on a near-black background, matching digit scans in
/// contrast. Class-major order, 10 classes, deterministic per seed.
pub fn synthetic_digits<R: Real>(
    samples_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset<R>> {
    if samples_per_class == 0 {
        return Err(Error::Dimension("need at least one sample per class".into()));
    }
    let mut rng = seeded(seed);
    let mut images = Vec::with_capacity(10 * samples_per_class);
    let mut labels = Vec::with_capacity(10 * samples_per_class);
    for digit in 0..10 {
        for _ in 0..samples_per_class {
            let amplitude = 0.7 + 0.3 * rng.gen::<f64>();
            let glyph = digit_glyph(digit, amplitude);
            let dy = rng.gen_range(-3i64..=3);
            let dx = rng.gen_range(-3i64..=3);
            let mut data = Vec::with_capacity(28 * 28);
            for row in 0..28i64 {
                for col in 0..28i64 {
                    let (src_r, src_c) = (row - dy, col - dx);
                    let ink = if (0..28).contains(&src_r) && (0..28).contains(&src_c) {
                        glyph[(src_r * 28 + src_c) as usize]
                    } else {
                        0.0
                    };
                    let noise = 0.08 * rng.gen::<f64>();
                    data.push(real::<R>((ink + noise).clamp(0.0, 1.0)));
                }
            }
            images.push(Image::new(1, 28, 28, data)?);
            labels.push(digit + 1);
        }
    }
    LabeledDataset::new(images, labels, 10)
}

/// Quantizes pixels back to bytes and emits the IDX image layout; exact
/// round-trip for byte-quantized pixels.
pub fn encode_idx_images<R: Real>(images: &[Image<R>]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&28u32.to_be_bytes());
    out.extend_from_slice(&28u32.to_be_bytes());
    for img in images {
        if img.channels() != 1 || img.height() != 28 || img.width() != 28 {
            return Err(Error::Dimension(
                "IDX encoding expects 1x28x28 images".into(),
            ));
        }
        out.extend(
            img.data()
                .iter()
                .map(|&v| (v.to_f64().unwrap() * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        if l < 1 || l > 10 {
            return Err(Error::Consistency(format!("label {l} outside 1..=10")));
        }
        out.push((l - 1) as u8);
    }
    Ok(out)
}

/// Emits the CIFAR-10 binary batch layout for 3×32×32 images.
pub fn encode_cifar_batch<R: Real>(samples: &[(Image<R>, usize)]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(samples.len() * CIFAR_RECORD_LEN);
    for (img, label) in samples {
        if img.channels() != 3 || img.height() != 32 || img.width() != 32 {
            return Err(Error::Dimension(
                "CIFAR encoding expects 3x32x32 images".into(),
            ));
        }
        if *label < 1 || *label > 10 {
            return Err(Error::Consistency(format!("label {label} outside 1..=10")));
        }
        out.push((label - 1) as u8);
        out.extend(
            img.data()
                .iter()
                .map(|&v| (v.to_f64().unwrap() * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    Ok(out)
}

/// Raw-tensor directory layout, for user-supplied datasets of any shape:
///
/// * `images.bin` — little-endian u64 header `channels, height, width, count`
///   followed by `count·channels·height·width` little-endian f64 pixels,
///   channel-major per image;
/// * `labels.bin` — little-endian u64 `k, count` followed by `count`
///   little-endian u64 labels in `1..=k`.
pub fn save_raw_dir<R: Real>(dataset: &LabeledDataset<R>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut images = Vec::new();
    for v in [
        dataset.channels() as u64,
        dataset.height() as u64,
        dataset.width() as u64,
        dataset.len() as u64,
    ] {
        images.extend_from_slice(&v.to_le_bytes());
    }
    for img in &dataset.images {
        for &px in img.data() {
            images.extend_from_slice(&px.to_f64().unwrap().to_le_bytes());
        }
    }
    std::fs::write(dir.join("images.bin"), images)?;

    let mut labels = Vec::new();
    labels.extend_from_slice(&(dataset.k() as u64).to_le_bytes());
    labels.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for &l in &dataset.labels {
        labels.extend_from_slice(&(l as u64).to_le_bytes());
    }
    std::fs::write(dir.join("labels.bin"), labels)?;
    Ok(())
}

pub fn load_raw_dir<R: Real>(dir: &Path) -> Result<LabeledDataset<R>> {
    let images_bytes = std::fs::read(dir.join("images.bin"))?;
    let labels_bytes = std::fs::read(dir.join("labels.bin"))?;

    let le_u64 = |bytes: &[u8], offset: usize| -> Result<u64> {
        bytes
            .get(offset..offset + 8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Format("raw file shorter than its header".into()))
    };

    let channels = le_u64(&images_bytes, 0)? as usize;
    let height = le_u64(&images_bytes, 8)? as usize;
    let width = le_u64(&images_bytes, 16)? as usize;
    let count = le_u64(&images_bytes, 24)? as usize;
    let pixels_per_image = channels * height * width;
    let expected = 32 + count * pixels_per_image * 8;
    if images_bytes.len() != expected {
        return Err(Error::Format(format!(
            "images.bin is {} bytes, expected {expected} for {count} images of {channels}x{height}x{width}",
            images_bytes.len()
        )));
    }
    let images: Vec<Image<R>> = images_bytes[32..]
        .chunks_exact(pixels_per_image * 8)
        .map(|chunk| {
            Image::new(
                channels,
                height,
                width,
                chunk
                    .chunks_exact(8)
                    .map(|b| real(f64::from_le_bytes(b.try_into().unwrap())))
                    .collect(),
            )
        })
        .collect::<Result<_>>()?;

    let k = le_u64(&labels_bytes, 0)? as usize;
    let label_count = le_u64(&labels_bytes, 8)? as usize;
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let expected = 16 + label_count * 8;
    if labels_bytes.len() != expected {
        return Err(Error::Format(format!(
            "labels.bin is {} bytes, expected {expected}",
            labels_bytes.len()
        )));
    }
    let labels: Vec<usize> = labels_bytes[16..]
        .chunks_exact(8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    LabeledDataset::new(images, labels, k)
}
