//! Dataset ingestion and the digit preprocessing chain.
//!
//! Raw digit images of arbitrary size go through: Otsu binarization at the
//! original size, aspect-preserving bicubic resize so the larger dimension
//! is 20, center-of-mass placement into a 28x28 field (integer shift), and
//! a one-pixel zero border on top and left to reach the 29x29 network
//! input. Inputs that are already 28x28 only receive the border; 29x29
//! inputs pass through untouched. Training images are then z-scored with a
//! single mean/std taken over all training pixels, and those statistics are
//! reused for validation and test data.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const NUM_CLASSES: usize = 10;
pub const FIELD: usize = 28;
pub const INPUT: usize = 29;
pub const FIT_BOX: usize = 20;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// 8-bit grayscale image of arbitrary size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), rows * cols);
        GrayImage { rows, cols, pixels }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> u8 {
        self.pixels[r * self.cols + c]
    }
}

/// Loaded dataset before preprocessing.
#[derive(Clone, Debug, Default)]
pub struct RawDataset {
    pub images: Vec<GrayImage>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Global z-score statistics recorded from a training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// 29x29 z-scored images ready for the network.
#[derive(Clone, Debug)]
pub struct PreparedDataset {
    pub images: Vec<Matrix>,
    pub labels: Vec<u8>,
    pub stats: NormStats,
}

impl PreparedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn read_u32_be(buf: &[u8], offset: usize, path: &Path) -> Result<u32> {
    if buf.len() < offset + 4 {
        return Err(Error::IdxParse {
            path: path.to_path_buf(),
            offset: buf.len() as u64,
            message: format!("file truncated while reading u32 at byte {offset}"),
        });
    }
    Ok(u32::from_be_bytes([buf[offset], buf[offset + 1], buf[offset + 2], buf[offset + 3]]))
}

/// Parse big-endian IDX image + label files (magics 0x00000803/0x00000801).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDataset> {
    let img_buf = fs::read(images_path)?;
    let lab_buf = fs::read(labels_path)?;

    let img_magic = read_u32_be(&img_buf, 0, images_path)?;
    if img_magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxParse {
            path: images_path.to_path_buf(),
            offset: 0,
            message: format!("bad images magic 0x{img_magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        });
    }
    let count = read_u32_be(&img_buf, 4, images_path)? as usize;
    let rows = read_u32_be(&img_buf, 8, images_path)? as usize;
    let cols = read_u32_be(&img_buf, 12, images_path)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::IdxParse {
            path: images_path.to_path_buf(),
            offset: 8,
            message: format!("degenerate image dimensions {rows}x{cols}"),
        });
    }
    let need = 16 + count * rows * cols;
    if img_buf.len() < need {
        return Err(Error::IdxParse {
            path: images_path.to_path_buf(),
            offset: img_buf.len() as u64,
            message: format!("file truncated: need {need} bytes for {count} images of {rows}x{cols}"),
        });
    }

    let lab_magic = read_u32_be(&lab_buf, 0, labels_path)?;
    if lab_magic != IDX_LABELS_MAGIC {
        return Err(Error::IdxParse {
            path: labels_path.to_path_buf(),
            offset: 0,
            message: format!("bad labels magic 0x{lab_magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        });
    }
    let lab_count = read_u32_be(&lab_buf, 4, labels_path)? as usize;
    if lab_count != count {
        return Err(Error::IdxParse {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!("label count {lab_count} does not match image count {count}"),
        });
    }
    if lab_buf.len() < 8 + count {
        return Err(Error::IdxParse {
            path: labels_path.to_path_buf(),
            offset: lab_buf.len() as u64,
            message: format!("file truncated: need {} bytes for {count} labels", 8 + count),
        });
    }

    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        images.push(GrayImage::new(rows, cols, img_buf[start..start + rows * cols].to_vec()));
    }
    let labels = lab_buf[8..8 + count].to_vec();
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= NUM_CLASSES {
            return Err(Error::IdxParse {
                path: labels_path.to_path_buf(),
                offset: (8 + i) as u64,
                message: format!("label {l} out of range 0..{NUM_CLASSES}"),
            });
        }
    }
    Ok(RawDataset { images, labels })
}

/// Write a dataset back out in IDX form. All images must share one shape.
pub fn write_idx(dataset: &RawDataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (rows, cols) = match dataset.images.first() {
        Some(img) => (img.rows, img.cols),
        None => (0, 0),
    };
    if dataset.images.iter().any(|im| im.rows != rows || im.cols != cols) {
        return Err(Error::invalid_argument(
            "write_idx requires uniformly shaped images",
        ));
    }
    let mut img_out = fs::File::create(images_path)?;
    img_out.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    img_out.write_all(&(dataset.len() as u32).to_be_bytes())?;
    img_out.write_all(&(rows as u32).to_be_bytes())?;
    img_out.write_all(&(cols as u32).to_be_bytes())?;
    for img in &dataset.images {
        img_out.write_all(&img.pixels)?;
    }
    let mut lab_out = fs::File::create(labels_path)?;
    lab_out.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lab_out.write_all(&(dataset.len() as u32).to_be_bytes())?;
    lab_out.write_all(&dataset.labels)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OtsuResult {
    pub threshold: u8,
    /// Set when the image has a single intensity and no split exists.
    pub degenerate: bool,
}

/// Threshold maximizing between-class variance over the 256-bin histogram.
/// Ties break toward the smallest threshold. The split is
/// `[0..=t]` background vs `[t+1..=255]` foreground.
pub fn otsu_threshold(image: &GrayImage) -> Result<OtsuResult> {
    if image.pixels.is_empty() {
        return Err(Error::invalid_argument("cannot threshold an empty image"));
    }
    let mut hist = [0u64; 256];
    for &p in &image.pixels {
        hist[p as usize] += 1;
    }
    let nonzero = hist.iter().filter(|&&h| h > 0).count();
    if nonzero == 1 {
        let v = image.pixels[0];
        return Ok(OtsuResult { threshold: v, degenerate: true });
    }

    let total = image.pixels.len() as f64;
    let sum_total: f64 = hist.iter().enumerate().map(|(v, &h)| v as f64 * h as f64).sum();
    let mut w_b = 0.0;
    let mut sum_b = 0.0;
    let mut best = (f64::NEG_INFINITY, 0u8);
    for t in 0..255usize {
        w_b += hist[t] as f64;
        sum_b += t as f64 * hist[t] as f64;
        if w_b == 0.0 {
            continue;
        }
        let w_f = total - w_b;
        if w_f == 0.0 {
            break;
        }
        let m_b = sum_b / w_b;
        let m_f = (sum_total - sum_b) / w_f;
        let between = w_b * w_f * (m_b - m_f) * (m_b - m_f);
        if between > best.0 {
            best = (between, t as u8);
        }
    }
    Ok(OtsuResult { threshold: best.1, degenerate: false })
}

/// Pixels above the threshold become 255, the rest 0.
pub fn binarize(image: &GrayImage, threshold: u8) -> GrayImage {
    GrayImage {
        rows: image.rows,
        cols: image.cols,
        pixels: image.pixels.iter().map(|&p| if p > threshold { 255 } else { 0 }).collect(),
    }
}

/// Catmull-Rom cubic interpolation weight (Keys kernel with a = -0.5).
#[inline]
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Separable bicubic resize with clamped edges. Output stays in [0, 255].
pub fn resize_bicubic(image: &GrayImage, out_rows: usize, out_cols: usize) -> Matrix {
    assert!(out_rows > 0 && out_cols > 0);
    let (in_r, in_c) = (image.rows as isize, image.cols as isize);
    let scale_r = image.rows as f64 / out_rows as f64;
    let scale_c = image.cols as f64 / out_cols as f64;
    let mut out = Matrix::zeros(out_rows, out_cols);
    for orow in 0..out_rows {
        let src_r = (orow as f64 + 0.5) * scale_r - 0.5;
        let base_r = src_r.floor() as isize;
        let fr = src_r - base_r as f64;
        for ocol in 0..out_cols {
            let src_c = (ocol as f64 + 0.5) * scale_c - 0.5;
            let base_c = src_c.floor() as isize;
            let fc = src_c - base_c as f64;
            let mut acc = 0.0;
            for di in -1..=2isize {
                let wr = cubic_weight(di as f64 - fr);
                if wr == 0.0 {
                    continue;
                }
                let r = (base_r + di).clamp(0, in_r - 1) as usize;
                let mut row_acc = 0.0;
                for dj in -1..=2isize {
                    let wc = cubic_weight(dj as f64 - fc);
                    if wc == 0.0 {
                        continue;
                    }
                    let c = (base_c + dj).clamp(0, in_c - 1) as usize;
                    row_acc += wc * image.at(r, c) as f64;
                }
                acc += wr * row_acc;
            }
            out[(orow, ocol)] = acc.clamp(0.0, 255.0);
        }
    }
    out
}

fn centroid(m: &Matrix) -> Option<(f64, f64)> {
    let mut total = 0.0;
    let mut ri = 0.0;
    let mut ci = 0.0;
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let v = m[(r, c)];
            total += v;
            ri += r as f64 * v;
            ci += c as f64 * v;
        }
    }
    if total <= 0.0 {
        None
    } else {
        Some((ri / total, ci / total))
    }
}

fn pad_to_input(field: &Matrix) -> Matrix {
    debug_assert_eq!(field.rows(), FIELD);
    debug_assert_eq!(field.cols(), FIELD);
    let mut out = Matrix::zeros(INPUT, INPUT);
    for r in 0..FIELD {
        for c in 0..FIELD {
            out[(r + 1, c + 1)] = field[(r, c)];
        }
    }
    out
}

/// Normalize one digit image to the 29x29 network input.
///
/// A 28x28 input is assumed to already follow the field convention and only
/// receives the top/left zero border. Anything else is resized so its larger
/// dimension is 20 (aspect preserved), placed in the 28x28 field with its
/// intensity centroid moved to the field center by an integer shift, then
/// bordered. All-zero images are rejected.
pub fn normalize_digit(image: &GrayImage) -> Result<Matrix> {
    if image.pixels.iter().all(|&p| p == 0) {
        return Err(Error::EmptyImage);
    }
    if image.rows == FIELD && image.cols == FIELD {
        let field = Matrix::from_vec(
            FIELD,
            FIELD,
            image.pixels.iter().map(|&p| p as f64).collect(),
        );
        return Ok(pad_to_input(&field));
    }

    let (out_r, out_c) = if image.rows >= image.cols {
        let c = ((FIT_BOX * image.cols) as f64 / image.rows as f64).round() as usize;
        (FIT_BOX, c.max(1))
    } else {
        let r = ((FIT_BOX * image.rows) as f64 / image.cols as f64).round() as usize;
        (r.max(1), FIT_BOX)
    };
    let resized = resize_bicubic(image, out_r, out_c);
    let (cr, cc) = centroid(&resized).ok_or(Error::EmptyImage)?;

    let target = (FIELD as f64 - 1.0) / 2.0;
    let max_r = (FIELD - out_r) as isize;
    let max_c = (FIELD - out_c) as isize;
    let shift_r = ((target - cr).round() as isize).clamp(0, max_r);
    let shift_c = ((target - cc).round() as isize).clamp(0, max_c);

    let mut field = Matrix::zeros(FIELD, FIELD);
    for r in 0..out_r {
        for c in 0..out_c {
            field[((r as isize + shift_r) as usize, (c as isize + shift_c) as usize)] =
                resized[(r, c)];
        }
    }
    Ok(pad_to_input(&field))
}

/// Full per-image preprocessing to a raw-intensity 29x29 matrix.
/// 29x29 inputs pass through; 28x28 inputs are bordered; all other shapes go
/// through Otsu binarization, resize and centering.
pub fn prepare_image(image: &GrayImage) -> Result<Matrix> {
    if image.rows == INPUT && image.cols == INPUT {
        return Ok(Matrix::from_vec(
            INPUT,
            INPUT,
            image.pixels.iter().map(|&p| p as f64).collect(),
        ));
    }
    if image.rows == FIELD && image.cols == FIELD {
        return normalize_digit(image);
    }
    let otsu = otsu_threshold(image)?;
    let binary = binarize(image, otsu.threshold);
    normalize_digit(&binary)
}

/// Mean/std over every pixel of a set of images (population std).
pub fn compute_norm_stats(images: &[Matrix]) -> Result<NormStats> {
    let mut count = 0usize;
    let mut sum = 0.0;
    for img in images {
        for &v in img.as_slice() {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid_argument("cannot normalize an empty dataset"));
    }
    let mean = sum / count as f64;
    let mut ss = 0.0;
    for img in images {
        for &v in img.as_slice() {
            ss += (v - mean) * (v - mean);
        }
    }
    let std = (ss / count as f64).sqrt();
    if std == 0.0 {
        return Err(Error::invalid_argument("dataset has zero variance"));
    }
    Ok(NormStats { mean, std })
}

pub fn apply_norm_stats(images: &mut [Matrix], stats: &NormStats) {
    for img in images {
        for v in img.as_mut_slice() {
            *v = (*v - stats.mean) / stats.std;
        }
    }
}

/// Deterministic stratified split by label. Per-class allocations follow the
/// largest-remainder rule so the total train size is `round(fraction * n)`
/// and every class stays within one example of its proportional share.
pub fn stratified_split_indices(labels: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(fraction > 0.0 && fraction < 1.0, "fraction must be in (0, 1)");
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for list in per_class.iter_mut() {
        list.shuffle(&mut rng);
    }

    let target_total = (fraction * labels.len() as f64).round() as usize;
    let mut take: Vec<usize> = per_class
        .iter()
        .map(|l| (fraction * l.len() as f64).floor() as usize)
        .collect();
    let mut remainders: Vec<(f64, usize)> = per_class
        .iter()
        .enumerate()
        .map(|(c, l)| (fraction * l.len() as f64 - take[c] as f64, c))
        .collect();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut deficit = target_total.saturating_sub(take.iter().sum::<usize>());
    for &(_, c) in &remainders {
        if deficit == 0 {
            break;
        }
        if take[c] < per_class[c].len() {
            take[c] += 1;
            deficit -= 1;
        }
    }

    let mut train = Vec::with_capacity(target_total);
    let mut val = Vec::with_capacity(labels.len() - target_total);
    for (c, list) in per_class.iter().enumerate() {
        train.extend_from_slice(&list[..take[c]]);
        val.extend_from_slice(&list[take[c]..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Split a raw dataset into train/validation parts.
pub fn split_train_val(dataset: &RawDataset, fraction: f64, seed: u64) -> (RawDataset, RawDataset) {
    let (ti, vi) = stratified_split_indices(&dataset.labels, fraction, seed);
    let pick = |idx: &[usize]| RawDataset {
        images: idx.iter().map(|&i| dataset.images[i].clone()).collect(),
        labels: idx.iter().map(|&i| dataset.labels[i]).collect(),
    };
    (pick(&ti), pick(&vi))
}

/// Deterministic stratified subset of `per_class` examples per class.
pub fn stratified_subset(dataset: &RawDataset, per_class: usize, seed: u64) -> RawDataset {
    let mut per: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in dataset.labels.iter().enumerate() {
        per[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for list in per.iter_mut() {
        list.shuffle(&mut rng);
        keep.extend_from_slice(&list[..per_class.min(list.len())]);
    }
    keep.sort_unstable();
    RawDataset {
        images: keep.iter().map(|&i| dataset.images[i].clone()).collect(),
        labels: keep.iter().map(|&i| dataset.labels[i]).collect(),
    }
}

/// Train/val/test splits after preprocessing and z-scoring.
#[derive(Clone, Debug)]
pub struct PreparedSplits {
    pub train: PreparedDataset,
    pub val: PreparedDataset,
    pub test: PreparedDataset,
}

/// Run the full pipeline: preprocess every image, split the training data,
/// compute z-score statistics on the training portion and apply them
/// everywhere.
pub fn prepare_splits(
    train_raw: &RawDataset,
    test_raw: &RawDataset,
    fraction: f64,
    split_seed: u64,
) -> Result<PreparedSplits> {
    let (train_part, val_part) = split_train_val(train_raw, fraction, split_seed);

    let prep = |raw: &RawDataset| -> Result<Vec<Matrix>> {
        raw.images.iter().map(prepare_image).collect()
    };
    let mut train_images = prep(&train_part)?;
    let mut val_images = prep(&val_part)?;
    let mut test_images = prep(test_raw)?;

    let stats = compute_norm_stats(&train_images)?;
    apply_norm_stats(&mut train_images, &stats);
    apply_norm_stats(&mut val_images, &stats);
    apply_norm_stats(&mut test_images, &stats);

    Ok(PreparedSplits {
        train: PreparedDataset { images: train_images, labels: train_part.labels, stats },
        val: PreparedDataset { images: val_images, labels: val_part.labels, stats },
        test: PreparedDataset { images: test_images, labels: test_raw.labels.clone(), stats },
    })
}

fn draw_segment(img: &mut Matrix, r0: f64, c0: f64, r1: f64, c1: f64, thickness: f64, level: f64) {
    let rows = img.rows();
    let cols = img.cols();
    let (dr, dc) = (r1 - r0, c1 - c0);
    let len2 = dr * dr + dc * dc;
    for r in 0..rows {
        for c in 0..cols {
            let (pr, pc) = (r as f64 - r0, c as f64 - c0);
            let t = if len2 > 0.0 { ((pr * dr + pc * dc) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (qr, qc) = (pr - t * dr, pc - t * dc);
            let dist = (qr * qr + qc * qc).sqrt();
            let v = level * (1.0 + thickness - dist).clamp(0.0, 1.0);
            if v > img[(r, c)] {
                img[(r, c)] = v;
            }
        }
    }
}

fn draw_ring(img: &mut Matrix, r0: f64, c0: f64, radius: f64, thickness: f64, level: f64) {
    for r in 0..img.rows() {
        for c in 0..img.cols() {
            let d = ((r as f64 - r0).powi(2) + (c as f64 - c0).powi(2)).sqrt();
            let v = level * (1.0 + thickness - (d - radius).abs()).clamp(0.0, 1.0);
            if v > img[(r, c)] {
                img[(r, c)] = v;
            }
        }
    }
}

fn draw_disc(img: &mut Matrix, r0: f64, c0: f64, radius: f64, level: f64) {
    for r in 0..img.rows() {
        for c in 0..img.cols() {
            let d = ((r as f64 - r0).powi(2) + (c as f64 - c0).powi(2)).sqrt();
            let v = level * (radius + 1.0 - d).clamp(0.0, 1.0);
            if v > img[(r, c)] {
                img[(r, c)] = v;
            }
        }
    }
}

/// Synthetic 10-class dataset of oriented bars, crosses, blobs and rings on
/// 29x29 canvases. Classes 0-5 are bars at 30-degree steps; 6 and 7 are
/// upright and diagonal crosses; 8 is a filled disc; 9 is a ring. Jittered
/// position/orientation plus mild pixel noise keep runs from being
/// memorizable while the classes stay separable by edge orientation.
pub fn generate_synthetic(n_per_class: usize, seed: u64) -> RawDataset {
    assert!(n_per_class >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n_per_class * NUM_CLASSES;
    let mut images = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let class = (i % NUM_CLASSES) as u8;
        let mut canvas = Matrix::zeros(INPUT, INPUT);
        let cr = 14.0 + rng.random_range(-2.0..2.0);
        let cc = 14.0 + rng.random_range(-2.0..2.0);
        let level = rng.random_range(200.0..255.0);
        let thick = rng.random_range(1.0..1.8);
        match class {
            0..=5 => {
                let angle = class as f64 * 30.0f64.to_radians() + rng.random_range(-0.06..0.06);
                let half = rng.random_range(8.0..11.0);
                let (dr, dc) = (angle.sin() * half, angle.cos() * half);
                draw_segment(&mut canvas, cr - dr, cc - dc, cr + dr, cc + dc, thick, level);
            }
            6 => {
                let half = rng.random_range(7.0..10.0);
                draw_segment(&mut canvas, cr - half, cc, cr + half, cc, thick, level);
                draw_segment(&mut canvas, cr, cc - half, cr, cc + half, thick, level);
            }
            7 => {
                let half = rng.random_range(5.5..7.5);
                draw_segment(&mut canvas, cr - half, cc - half, cr + half, cc + half, thick, level);
                draw_segment(&mut canvas, cr - half, cc + half, cr + half, cc - half, thick, level);
            }
            8 => {
                draw_disc(&mut canvas, cr, cc, rng.random_range(4.0..6.0), level);
            }
            _ => {
                draw_ring(&mut canvas, cr, cc, rng.random_range(6.0..8.0), thick, level);
            }
        }
        let pixels = canvas
            .as_slice()
            .iter()
            .map(|&v| {
                let noise: f64 = rng.random_range(-8.0..8.0);
                (v + noise).clamp(0.0, 255.0).round() as u8
            })
            .collect();
        images.push(GrayImage::new(INPUT, INPUT, pixels));
        labels.push(class);
    }
    RawDataset { images, labels }
}

/// Read a binary PGM (P5) image with maxval <= 255.
pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut pos = 0usize;

    let token = |buf: &[u8], pos: &mut usize| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < buf.len() && buf[*pos] == b'#' {
                while *pos < buf.len() && buf[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Parse(format!("{}: unexpected end of header", path.display())));
        }
        Ok(String::from_utf8_lossy(&buf[start..*pos]).into_owned())
    };

    let magic = token(&buf, &mut pos)?;
    if magic != "P5" {
        return Err(Error::Parse(format!("{}: not a P5 PGM (magic {magic})", path.display())));
    }
    let cols: usize = token(&buf, &mut pos)?
        .parse()
        .map_err(|e| Error::Parse(format!("{}: bad width: {e}", path.display())))?;
    let rows: usize = token(&buf, &mut pos)?
        .parse()
        .map_err(|e| Error::Parse(format!("{}: bad height: {e}", path.display())))?;
    let maxval: usize = token(&buf, &mut pos)?
        .parse()
        .map_err(|e| Error::Parse(format!("{}: bad maxval: {e}", path.display())))?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("{}: unsupported maxval {maxval}", path.display())));
    }
    pos += 1; // single whitespace after maxval
    if buf.len() < pos + rows * cols {
        return Err(Error::Parse(format!(
            "{}: truncated pixel data ({} of {} bytes)",
            path.display(),
            buf.len().saturating_sub(pos),
            rows * cols
        )));
    }
    let mut pixels = buf[pos..pos + rows * cols].to_vec();
    if maxval != 255 {
        for p in pixels.iter_mut() {
            *p = ((*p as usize * 255) / maxval) as u8;
        }
    }
    Ok(GrayImage::new(rows, cols, pixels))
}

/// Load a directory of PGM images listed in a `filename,label` manifest
/// (UTF-8, one entry per line).
pub fn load_pgm_manifest(dir: &Path, manifest: &Path) -> Result<RawDataset> {
    let text = fs::read_to_string(manifest)?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, label) = line.split_once(',').ok_or_else(|| {
            Error::Parse(format!(
                "{}:{}: expected `filename,label`",
                manifest.display(),
                lineno + 1
            ))
        })?;
        let label: u8 = label.trim().parse().map_err(|e| {
            Error::Parse(format!("{}:{}: bad label: {e}", manifest.display(), lineno + 1))
        })?;
        if label as usize >= NUM_CLASSES {
            return Err(Error::Parse(format!(
                "{}:{}: label {label} out of range 0..{NUM_CLASSES}",
                manifest.display(),
                lineno + 1
            )));
        }
        images.push(load_pgm(&dir.join(name.trim()))?);
        labels.push(label);
    }
    Ok(RawDataset { images, labels })
}
