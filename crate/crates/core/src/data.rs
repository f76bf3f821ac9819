//! Synthetic mixtures, label-noise injection, IDX ingestion and snapshots.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::channel::ConfusionMatrix;
use crate::diffcomp::Tensor;
use crate::error::{invalid, Error, Result};
use crate::seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureSpec {
    pub m: usize,
    pub d_x: usize,
    /// Explicit class means; `None` spaces them on a circle of `radius` in
    /// the first two coordinates.
    pub means: Option<Vec<Vec<f64>>>,
    pub radius: f64,
    pub sigma: f64,
    pub n_per_class: usize,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec { m: 3, d_x: 2, means: None, radius: 1.0, sigma: 0.3, n_per_class: 2000 }
    }
}

impl MixtureSpec {
    pub fn class_means(&self) -> Result<Vec<Vec<f64>>> {
        if self.m == 0 {
            return Err(invalid!("mixture needs at least one class"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(invalid!("sigma must be finite and non-negative, got {}", self.sigma));
        }
        match &self.means {
            Some(means) => {
                if means.len() != self.m || means.iter().any(|mu| mu.len() != self.d_x) {
                    return Err(invalid!("means must be {}×{}", self.m, self.d_x));
                }
                Ok(means.clone())
            }
            None => {
                if self.d_x < 2 {
                    return Err(invalid!("circle means need d_x ≥ 2"));
                }
                Ok((0..self.m)
                    .map(|k| {
                        let angle = 2.0 * std::f64::consts::PI * k as f64 / self.m as f64;
                        let mut mu = vec![0.0; self.d_x];
                        mu[0] = self.radius * angle.cos();
                        mu[1] = self.radius * angle.sin();
                        mu
                    })
                    .collect())
            }
        }
    }

    /// Smallest distance between two class means.
    pub fn min_separation(&self) -> Result<f64> {
        let means = self.class_means()?;
        let mut best = f64::INFINITY;
        for (i, a) in means.iter().enumerate() {
            for b in &means[i + 1..] {
                let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                best = best.min(d);
            }
        }
        Ok(best)
    }
}

/// Samples with observed labels and, when known, their clean labels.
///
/// `ids` travel with the rows under shuffling; label noise is seeded per id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    x: Tensor,
    m: usize,
    ids: Vec<u64>,
    clean_labels: Option<Vec<usize>>,
    noisy_labels: Vec<usize>,
    channel_used: Option<ConfusionMatrix>,
    seed: u64,
}

/// What training code sees: inputs and observed labels only.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub x: &'a Tensor,
    pub labels: &'a [usize],
    pub m: usize,
}

impl TrainingView<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Empirical observed-label marginal.
    pub fn label_marginal(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.m];
        self.labels.iter().for_each(|&y| counts[y] += 1.0);
        let n = self.labels.len().max(1) as f64;
        counts.iter().map(|c| c / n).collect()
    }
}

fn check_labels(labels: &[usize], m: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= m) {
        Some(y) => Err(invalid!("label {y} out of range for {m} classes")),
        None => Ok(()),
    }
}

impl LabeledDataset {
    pub fn new(
        x: Tensor,
        m: usize,
        clean_labels: Option<Vec<usize>>,
        noisy_labels: Vec<usize>,
        channel_used: Option<ConfusionMatrix>,
        seed: u64,
    ) -> Result<Self> {
        let (n, _) = x.dims2()?;
        if noisy_labels.len() != n {
            return Err(invalid!("{n} rows but {} labels", noisy_labels.len()));
        }
        check_labels(&noisy_labels, m)?;
        if let Some(clean) = &clean_labels {
            if clean.len() != n {
                return Err(invalid!("{n} rows but {} clean labels", clean.len()));
            }
            check_labels(clean, m)?;
        }
        if let Some(c) = &channel_used {
            if c.m() != m {
                return Err(invalid!("channel over {} classes for {m}-class data", c.m()));
            }
            if c.is_identity() && clean_labels.as_ref().is_some_and(|cl| *cl != noisy_labels) {
                return Err(invalid!("identity channel but noisy labels differ from clean"));
            }
        }
        Ok(LabeledDataset { x, m, ids: (0..n as u64).collect(), clean_labels, noisy_labels, channel_used, seed })
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.shape().get(1).copied().unwrap_or(0)
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    /// Clean labels, for evaluation code only.
    pub fn clean_labels(&self) -> Option<&[usize]> {
        self.clean_labels.as_deref()
    }

    pub fn channel_used(&self) -> Option<&ConfusionMatrix> {
        self.channel_used.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView { x: &self.x, labels: &self.noisy_labels, m: self.m }
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            x: self.x.select_rows(idx),
            m: self.m,
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            clean_labels: self.clean_labels.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
            noisy_labels: idx.iter().map(|&i| self.noisy_labels[i]).collect(),
            channel_used: self.channel_used.clone(),
            seed: self.seed,
        }
    }

    pub fn shuffled(&self, seed: u64) -> LabeledDataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seed::substream(seed, "shuffle", 0));
        self.subset(&idx)
    }

    /// Fraction of rows whose observed label differs from the clean one.
    pub fn flip_rate(&self) -> Option<f64> {
        let clean = self.clean_labels.as_ref()?;
        if clean.is_empty() {
            return Some(0.0);
        }
        let flips = clean.iter().zip(&self.noisy_labels).filter(|(a, b)| a != b).count();
        Some(flips as f64 / clean.len() as f64)
    }
}

/// Gaussian mixture with `n_per_class` rows per class, grouped by class.
pub fn make_mixture(spec: &MixtureSpec, seed: u64) -> Result<LabeledDataset> {
    let means = spec.class_means()?;
    let d = spec.d_x;
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| invalid!("{e}"))?;
    let mut data = Vec::with_capacity(spec.m * spec.n_per_class * d);
    let mut labels = Vec::with_capacity(spec.m * spec.n_per_class);
    for (k, mu) in means.iter().enumerate() {
        let mut rng = seed::substream(seed, "mixture", k as u64);
        for _ in 0..spec.n_per_class {
            data.extend(mu.iter().map(|c| c + noise.sample(&mut rng)));
            labels.push(k);
        }
    }
    let x = Tensor::matrix(labels.len(), d, data)?;
    LabeledDataset::new(x, spec.m, Some(labels.clone()), labels, None, seed)
}

/// Re-draws the observed labels by passing each clean label through `c`.
/// Each row uses its own stream keyed by its id, so the result commutes
/// with shuffling.
pub fn inject_noise(ds: &LabeledDataset, c: &ConfusionMatrix, seed: u64) -> Result<LabeledDataset> {
    let clean = ds.clean_labels.as_ref().ok_or_else(|| invalid!("noise injection needs clean labels"))?;
    if c.m() != ds.m {
        return Err(invalid!("channel over {} classes for {}-class data", c.m(), ds.m));
    }
    let noisy = clean
        .iter()
        .zip(&ds.ids)
        .map(|(&y, &id)| c.corrupt(y, &mut seed::substream(seed, "label-noise", id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset { noisy_labels: noisy, channel_used: Some(c.clone()), seed, ..ds.clone() })
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl ByteCursor<'_> {
    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Format(format!(
                "{}: truncated at byte {} (wanted {n} more, {} left)",
                self.what,
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{}: {} trailing bytes", self.what, self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

/// Parses an IDX image file: `(count, rows·cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let mut cur = ByteCursor { bytes, pos: 0, what: "idx images" };
    let magic = cur.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("idx images: bad magic {magic:#010x}")));
    }
    let count = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let width = rows * cols;
    let pixels = cur.take(count * width)?.iter().map(|&b| f64::from(b) / 255.0).collect();
    cur.finish()?;
    Ok((count, width, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut cur = ByteCursor { bytes, pos: 0, what: "idx labels" };
    let magic = cur.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("idx labels: bad magic {magic:#010x}")));
    }
    let count = cur.u32_be()? as usize;
    let labels = cur.take(count)?.iter().map(|&b| usize::from(b)).collect();
    cur.finish()?;
    Ok(labels)
}

/// Loads an IDX image/label pair. The class count is one past the largest
/// label (at least 1); labels are taken as clean and observed alike.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (count, width, pixels) = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if labels.len() != count {
        return Err(Error::Format(format!("{count} images but {} labels", labels.len())));
    }
    let m = labels.iter().max().map_or(1, |&y| y + 1);
    let x = Tensor::matrix(count, width, pixels)?;
    LabeledDataset::new(x, m, Some(labels.clone()), labels, None, 0)
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotMeta {
    rows: usize,
    cols: usize,
    m: usize,
    ids: Vec<u64>,
    clean_labels: Option<Vec<usize>>,
    noisy_labels: Vec<usize>,
    channel_used: Option<ConfusionMatrix>,
    seed: u64,
}

fn snapshot_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes `<stem>.json` (metadata and labels) and `<stem>.bin` (row-major
/// little-endian f64 matrix).
pub fn save_snapshot(ds: &LabeledDataset, stem: &Path) -> Result<()> {
    let (meta_path, bin_path) = snapshot_paths(stem);
    let (rows, cols) = ds.x.dims2()?;
    let meta = SnapshotMeta {
        rows,
        cols,
        m: ds.m,
        ids: ds.ids.clone(),
        clean_labels: ds.clean_labels.clone(),
        noisy_labels: ds.noisy_labels.clone(),
        channel_used: ds.channel_used.clone(),
        seed: ds.seed,
    };
    serde_json::to_writer_pretty(BufWriter::new(fs::File::create(meta_path)?), &meta)?;
    let mut w = BufWriter::new(fs::File::create(bin_path)?);
    for v in ds.x.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_snapshot(stem: &Path) -> Result<LabeledDataset> {
    let (meta_path, bin_path) = snapshot_paths(stem);
    let meta: SnapshotMeta = serde_json::from_reader(BufReader::new(fs::File::open(meta_path)?))?;
    let mut raw = Vec::new();
    BufReader::new(fs::File::open(bin_path)?).read_to_end(&mut raw)?;
    if raw.len() != meta.rows * meta.cols * 8 {
        return Err(Error::Format(format!(
            "snapshot matrix has {} bytes, expected {}",
            raw.len(),
            meta.rows * meta.cols * 8
        )));
    }
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if meta.ids.len() != meta.rows {
        return Err(Error::Format("snapshot ids do not match row count".into()));
    }
    let mut ds = LabeledDataset::new(
        Tensor::matrix(meta.rows, meta.cols, data)?,
        meta.m,
        meta.clean_labels,
        meta.noisy_labels,
        meta.channel_used,
        meta.seed,
    )?;
    ds.ids = meta.ids;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn default_means_on_circle() {
        let spec = MixtureSpec::default();
        let means = spec.class_means().unwrap();
        let angles: Vec<f64> = means.iter().map(|mu| mu[1].atan2(mu[0]).to_degrees().rem_euclid(360.0)).collect();
        for (a, want) in angles.iter().zip([0.0, 120.0, 240.0]) {
            assert!((a - want).abs() < 1e-9);
        }
        assert!(spec.min_separation().unwrap() >= 4.0 * spec.sigma);
    }

    #[test]
    fn class_sample_means_near_spec() {
        let spec = MixtureSpec::default();
        let ds = make_mixture(&spec, 5).unwrap();
        let means = spec.class_means().unwrap();
        let n = spec.n_per_class as f64;
        for (k, mu) in means.iter().enumerate() {
            for (j, &mj) in mu.iter().enumerate() {
                let avg = (0..ds.len())
                    .filter(|&i| ds.clean_labels().unwrap()[i] == k)
                    .map(|i| ds.x().get2(i, j))
                    .sum::<f64>()
                    / n;
                assert!((avg - mj).abs() <= 4.0 * spec.sigma / n.sqrt());
            }
        }
    }

    #[test]
    fn empty_mixture() {
        let spec = MixtureSpec { n_per_class: 0, ..MixtureSpec::default() };
        assert!(make_mixture(&spec, 0).unwrap().is_empty());
    }

    #[test]
    fn noise_injection_examples() {
        let spec = MixtureSpec { n_per_class: 100, ..MixtureSpec::default() };
        let ds = make_mixture(&spec, 1).unwrap();
        let same = inject_noise(&ds, &ConfusionMatrix::identity(3).unwrap(), 2).unwrap();
        assert_eq!(same.noisy_labels(), ds.clean_labels().unwrap());

        let two = MixtureSpec { m: 2, n_per_class: 50, ..MixtureSpec::default() };
        let ds2 = make_mixture(&two, 1).unwrap();
        let flipped = inject_noise(&ds2, &ConfusionMatrix::uniform_flip(2, 0.0).unwrap(), 3).unwrap();
        assert_eq!(flipped.flip_rate(), Some(1.0));

        let c4 = ConfusionMatrix::uniform_flip(4, 0.5).unwrap();
        assert!(inject_noise(&ds, &c4, 0).is_err());
    }

    #[test]
    fn flip_rate_concentrates() {
        let spec = MixtureSpec { n_per_class: 100_000 / 3 + 1, ..MixtureSpec::default() };
        let ds = make_mixture(&spec, 8).unwrap();
        let noisy = inject_noise(&ds, &ConfusionMatrix::uniform_flip(3, 0.7).unwrap(), 9).unwrap();
        let rate = noisy.flip_rate().unwrap();
        assert!((rate - 0.3).abs() <= 0.005, "flip rate {rate}");
    }

    #[test]
    fn noise_commutes_with_shuffle() {
        let spec = MixtureSpec { n_per_class: 200, ..MixtureSpec::default() };
        let ds = make_mixture(&spec, 3).unwrap();
        let c = ConfusionMatrix::uniform_flip(3, 0.6).unwrap();
        let a = inject_noise(&ds.shuffled(11), &c, 4).unwrap();
        let b = inject_noise(&ds, &c, 4).unwrap().shuffled(11);
        assert_eq!(a, b);
    }

    #[test]
    fn training_view_has_only_observed_labels() {
        let ds = make_mixture(&MixtureSpec { n_per_class: 10, ..MixtureSpec::default() }, 0).unwrap();
        let noisy = inject_noise(&ds, &ConfusionMatrix::uniform_flip(3, 0.5).unwrap(), 1).unwrap();
        let view = noisy.training_view();
        assert_eq!(view.labels, noisy.noisy_labels());
        assert!((view.label_marginal().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn idx_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..4 * 784).map(|i| (i % 256) as u8).collect();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, idx_images(4, 28, 28, &pixels)).unwrap();
        fs::write(&lp, idx_labels(&[7, 0, 3, 9])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.x().shape(), &[4, 784]);
        assert_eq!(ds.noisy_labels(), &[7, 0, 3, 9]);
        assert_eq!(ds.x().get2(0, 255), 1.0);
        assert_eq!(ds.m(), 10);
    }

    #[test]
    fn idx_errors() {
        let good = idx_images(2, 2, 2, &[0; 8]);
        assert!(matches!(parse_idx_images(&good[..good.len() - 1]), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Format(_))));
        assert!(matches!(parse_idx_labels(&[0, 0, 8, 1, 0, 0]), Err(Error::Format(_))));

        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, &good).unwrap();
        fs::write(&lp, idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format(_))));
    }

    #[test]
    fn idx_empty() {
        assert!(parse_idx_labels(&idx_labels(&[])).unwrap().is_empty());
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, idx_images(0, 28, 28, &[])).unwrap();
        fs::write(&lp, idx_labels(&[])).unwrap();
        assert!(load_idx(&ip, &lp).unwrap().is_empty());
    }

    #[test]
    fn snapshot_round_trip() {
        let ds = make_mixture(&MixtureSpec { n_per_class: 20, ..MixtureSpec::default() }, 2).unwrap();
        let ds = inject_noise(&ds.shuffled(1), &ConfusionMatrix::uniform_flip(3, 0.8).unwrap(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("snap");
        save_snapshot(&ds, &stem).unwrap();
        assert_eq!(load_snapshot(&stem).unwrap(), ds);
        let bin = stem.with_extension("bin");
        let raw = fs::read(&bin).unwrap();
        fs::write(&bin, &raw[..raw.len() - 3]).unwrap();
        assert!(matches!(load_snapshot(&stem), Err(Error::Format(_))));
    }
}
