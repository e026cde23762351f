//! Datasets: IDX ingestion, synthetic Gaussian blobs, channel normalisation,
//! mini-batching and seeded label corruption.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::binio::{self, Reader};
use crate::{Error, Result, Tensor};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Shape("dataset must hold at least one sample".into()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!("{} inputs but {} labels", inputs.rows(), labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Label { label, classes: num_classes });
        }
        if inputs.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("dataset inputs contain non-finite values".into()));
        }
        Ok(Dataset { inputs, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn with_num_classes(self, num_classes: usize) -> Result<Self> {
        Dataset::new(self.inputs, self.labels, num_classes)
    }

    /// Keeps the first `n` samples.
    pub fn truncate(self, n: usize) -> Result<Self> {
        if n >= self.len() {
            return Ok(self);
        }
        let idx: Vec<usize> = (0..n).collect();
        let inputs = self.inputs.select_rows(&idx)?;
        Dataset::new(inputs, self.labels[..n].to_vec(), self.num_classes)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let inputs = self.inputs.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(inputs, labels, self.num_classes)
    }

    /// Per-channel mean and standard deviation. Image tensors `N x C x H x W`
    /// have `C` channels; flat `N x F` inputs treat every feature as a channel.
    pub fn channel_stats(&self) -> ChannelStats {
        let (channels, per_channel) = self.channel_layout();
        let n = self.len();
        let count = (n * per_channel) as f64;
        let mut mean = vec![0.0; channels];
        let mut std = vec![0.0; channels];
        for c in 0..channels {
            let mut sum = 0.0;
            for i in 0..n {
                sum += crate::linalg::pairwise_sum(self.channel_slice(i, c, channels, per_channel));
            }
            let m = sum / count;
            let mut sq = 0.0;
            for i in 0..n {
                for x in self.channel_slice(i, c, channels, per_channel) {
                    sq += (x - m) * (x - m);
                }
            }
            mean[c] = m;
            std[c] = (sq / count).sqrt();
        }
        ChannelStats { mean, std }
    }

    /// Applies `(x - mean) / std` channel-wise; zero-variance channels are only centred.
    pub fn normalize(&mut self, stats: &ChannelStats) -> Result<()> {
        let (channels, per_channel) = self.channel_layout();
        if stats.mean.len() != channels {
            return Err(Error::Shape(format!("{} channel stats for {channels} channels", stats.mean.len())));
        }
        let row_len = self.inputs.row_len();
        for row in self.inputs.data_mut().chunks_exact_mut(row_len) {
            for (c, block) in row.chunks_exact_mut(per_channel).enumerate() {
                let scale = if stats.std[c] > 0.0 { stats.std[c] } else { 1.0 };
                for x in block {
                    *x = (*x - stats.mean[c]) / scale;
                }
            }
        }
        Ok(())
    }

    fn channel_layout(&self) -> (usize, usize) {
        let shape = self.inputs.shape();
        if shape.len() == 4 {
            (shape[1], shape[2] * shape[3])
        } else {
            (self.inputs.row_len(), 1)
        }
    }

    fn channel_slice(&self, i: usize, c: usize, channels: usize, per_channel: usize) -> &[f64] {
        let row = self.inputs.row(i);
        debug_assert_eq!(row.len(), channels * per_channel);
        &row[c * per_channel..(c + 1) * per_channel]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = binio::read_file(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], at: usize, what: &str) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("{what}: truncated IDX header")))
}

/// Parses an IDX image/label pair; a `.gz` suffix selects gzip decoding.
/// Pixels are scaled to `[0, 1]`; inputs are shaped `N x 1 x rows x cols`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_maybe_gz(images_path)?;
    let labels = read_maybe_gz(labels_path)?;
    parse_idx(&images, &labels)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("images: magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    let magic = be_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("labels: magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    if n != n_labels {
        return Err(Error::Format(format!("{n} images but {n_labels} labels")));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty IDX payload ({n} x {rows} x {cols})")));
    }
    let pixels = n
        .checked_mul(rows)
        .and_then(|x| x.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    if images.len() != 16 + pixels {
        return Err(Error::Format(format!("images: expected {} bytes, found {}", 16 + pixels, images.len())));
    }
    if labels.len() != 8 + n {
        return Err(Error::Format(format!("labels: expected {} bytes, found {}", 8 + n, labels.len())));
    }
    let data = images[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels[8..].iter().map(|&b| usize::from(b)).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(Tensor::new(vec![n, 1, rows, cols], data)?, labels, classes)
}

/// Gaussian clusters around `num_classes` standard-normal centres, class-major order.
pub fn synthetic_blobs(num_classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<Dataset> {
    Ok(blobs_with_holdout(num_classes, per_class, 0, dim, spread, seed)?.0)
}

/// Like [`synthetic_blobs`], also drawing `holdout_per_class` test samples per class
/// from the same centres.
pub fn blobs_with_holdout(
    num_classes: usize,
    per_class: usize,
    holdout_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(Dataset, Option<Dataset>)> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::Shape("blob counts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..num_classes * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let draw = |rng: &mut ChaCha8Rng, count: usize, x: &mut Vec<f64>, y: &mut Vec<usize>, c: usize| {
        for _ in 0..count {
            for j in 0..dim {
                let z: f64 = StandardNormal.sample(rng);
                x.push(centers[c * dim + j] + spread * z);
            }
            y.push(c);
        }
    };
    let (mut tx, mut ty, mut hx, mut hy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for c in 0..num_classes {
        draw(&mut rng, per_class, &mut tx, &mut ty, c);
        draw(&mut rng, holdout_per_class, &mut hx, &mut hy, c);
    }
    let train = Dataset::new(Tensor::new(vec![ty.len(), dim], tx)?, ty, num_classes)?;
    let holdout = if holdout_per_class > 0 {
        Some(Dataset::new(Tensor::new(vec![hy.len(), dim], hx)?, hy, num_classes)?)
    } else {
        None
    };
    Ok((train, holdout))
}

/// Which training labels were replaced, and by what.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRecord {
    pub fraction: f64,
    pub seed: u64,
    pub corrupted_mask: Vec<bool>,
    /// Replacement labels for the masked positions, in index order.
    pub resampled: Vec<usize>,
}

const NOISE_MAGIC: &[u8; 4] = b"DLNZ";
const NOISE_VERSION: u32 = 1;

impl NoiseRecord {
    pub fn corrupted_count(&self) -> usize {
        self.corrupted_mask.iter().filter(|&&m| m).count()
    }

    /// Replays the corruption on a clean copy of the dataset it was drawn from.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.len() != self.corrupted_mask.len() {
            return Err(Error::Shape(format!(
                "noise record covers {} samples, dataset has {}",
                self.corrupted_mask.len(),
                ds.len()
            )));
        }
        let mut labels = ds.labels.clone();
        let mut replacements = self.resampled.iter();
        for (label, _) in labels.iter_mut().zip(&self.corrupted_mask).filter(|(_, &m)| m) {
            *label = *replacements
                .next()
                .ok_or_else(|| Error::Format("noise record has fewer labels than mask bits".into()))?;
        }
        Dataset::new(ds.inputs.clone(), labels, ds.num_classes)
    }

    /// `DLNZ`, version u32, N u64, fraction f64, seed u64, LSB-first mask
    /// bitset of `ceil(N/8)` bytes, then one u32 per corrupted index. Little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.corrupted_mask.len();
        let mut buf = Vec::with_capacity(32 + n / 8 + 4 * self.resampled.len());
        buf.extend_from_slice(NOISE_MAGIC);
        buf.extend_from_slice(&NOISE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(n as u64).to_le_bytes());
        buf.extend_from_slice(&self.fraction.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        let mut bits = vec![0u8; n.div_ceil(8)];
        for (i, _) in self.corrupted_mask.iter().enumerate().filter(|(_, &m)| m) {
            bits[i / 8] |= 1 << (i % 8);
        }
        buf.extend_from_slice(&bits);
        for &l in &self.resampled {
            buf.extend_from_slice(&(l as u32).to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "noise record");
        r.magic(NOISE_MAGIC)?;
        let version = r.u32()?;
        if version != NOISE_VERSION {
            return Err(Error::Format(format!("noise record: unsupported version {version}")));
        }
        let n = r.usize_from_u64()?;
        let fraction = r.f64()?;
        let seed = r.u64()?;
        let bits = r.take(n.div_ceil(8))?;
        let corrupted_mask: Vec<bool> = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        let count = corrupted_mask.iter().filter(|&&m| m).count();
        let resampled = (0..count).map(|_| r.u32().map(|l| l as usize)).collect::<Result<_>>()?;
        r.finish()?;
        Ok(NoiseRecord { fraction, seed, corrupted_mask, resampled })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        NoiseRecord::from_bytes(&binio::read_file(path)?)
    }
}

/// Replaces exactly `round(fraction * N)` labels, chosen without replacement,
/// with labels drawn uniformly over all classes. The input is left untouched.
pub fn corrupt_labels(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, NoiseRecord)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::config("noise.fraction", format!("{fraction} is outside [0, 1]")));
    }
    let n = ds.len();
    let count = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    let mut mask = vec![false; n];
    let mut resampled = Vec::with_capacity(count);
    for &i in &chosen {
        mask[i] = true;
        resampled.push(rng.gen_range(0..ds.num_classes as u32) as usize);
    }
    let record = NoiseRecord { fraction, seed, corrupted_mask: mask, resampled };
    let noisy = record.apply(ds)?;
    Ok((noisy, record))
}

/// Permutation of `0..n` for a given shuffle seed and epoch.
pub fn epoch_permutation(n: usize, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

/// Mini-batches over one epoch; the final batch may be short.
pub struct Batches<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let inputs = self.ds.inputs.select_rows(&indices).expect("permutation indices are in range");
        let labels = indices.iter().map(|&i| self.ds.labels[i]).collect();
        Some(Batch { indices, inputs, labels })
    }
}

pub fn batches(ds: &Dataset, batch_size: usize, shuffle_seed: u64, epoch: u64) -> Batches<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    Batches { ds, order: epoch_permutation(ds.len(), shuffle_seed, epoch), batch_size, cursor: 0 }
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, classes: usize) -> Dataset {
        let x = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(x, (0..n).map(|i| i % classes).collect(), classes).unwrap()
    }

    #[test]
    fn parse_rejects_swapped_magic() {
        let labels = [0, 0, 8, 1, 0, 0, 0, 1, 3];
        let mut images = vec![0, 0, 8, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 7];
        assert!(matches!(parse_idx(&images, &labels), Err(Error::Format(_))));
        images[3] = 3;
        assert!(parse_idx(&images, &labels).is_ok());
        assert!(matches!(parse_idx(&[], &labels), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&images, &labels[..8]), Err(Error::Format(_))));
    }

    #[test]
    fn blobs_with_zero_spread_sit_on_centres() {
        let ds = synthetic_blobs(3, 4, 5, 0.0, 1).unwrap();
        for c in 0..3 {
            let first = ds.inputs.row(c * 4).to_vec();
            for i in 0..4 {
                assert_eq!(ds.inputs.row(c * 4 + i), first.as_slice());
            }
        }
    }

    #[test]
    fn blob_counts_are_balanced() {
        let ds = synthetic_blobs(3, 10, 2, 0.1, 5).unwrap();
        assert_eq!(ds.len(), 30);
        for c in 0..3 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == c).count(), 10);
        }
        assert_eq!(ds, synthetic_blobs(3, 10, 2, 0.1, 5).unwrap());
    }

    #[test]
    fn corruption_extremes() {
        let ds = tiny(100, 4);
        let (same, rec) = corrupt_labels(&ds, 0.0, 3).unwrap();
        assert_eq!(same, ds);
        assert!(rec.corrupted_mask.iter().all(|&m| !m));

        let (_, rec) = corrupt_labels(&ds, 1.0, 3).unwrap();
        assert!(rec.corrupted_mask.iter().all(|&m| m));
        assert_eq!(rec.resampled.len(), 100);
        assert!(corrupt_labels(&ds, 1.5, 3).is_err());
    }

    #[test]
    fn noise_record_round_trips() {
        let ds = tiny(37, 5);
        let (noisy, rec) = corrupt_labels(&ds, 0.3, 9).unwrap();
        assert_eq!(rec.corrupted_count(), 11);
        let back = NoiseRecord::from_bytes(&rec.to_bytes()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(back.apply(&ds).unwrap(), noisy);
        let mut bytes = rec.to_bytes();
        bytes.push(0);
        assert!(NoiseRecord::from_bytes(&bytes).is_err());
    }

    #[test]
    fn single_batch_when_batch_exceeds_dataset() {
        let ds = tiny(7, 2);
        let all: Vec<Batch> = batches(&ds, 100, 1, 0).collect();
        assert_eq!(all.len(), 1);
        let mut idx = all[0].indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn short_last_batch() {
        let ds = tiny(10, 2);
        let sizes: Vec<usize> = batches(&ds, 4, 1, 0).map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(steps_per_epoch(10, 4), 3);
    }

    #[test]
    fn normalization_gives_zero_mean_unit_std() {
        let mut ds = synthetic_blobs(2, 20, 3, 0.7, 2).unwrap();
        let stats = ds.channel_stats();
        ds.normalize(&stats).unwrap();
        let after = ds.channel_stats();
        for c in 0..3 {
            assert!(after.mean[c].abs() < 1e-12);
            assert!((after.std[c] - 1.0).abs() < 1e-12);
        }
    }
}
