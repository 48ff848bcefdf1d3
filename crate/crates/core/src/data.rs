//! Dataset loading (IDX, CSV), transforms, splits and minibatches.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_len, Error, Result};
use crate::optim::Batch;
use crate::outputs::TargetRef;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    /// One real target vector per row.
    Values(Array2<f64>),
    /// The target is the input itself.
    Reconstruction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    targets: Targets,
}

impl Dataset {
    pub fn new(features: Array2<f64>, targets: Targets) -> Result<Self> {
        let n = features.nrows();
        match &targets {
            Targets::Classes { labels, classes } => {
                check_len("labels", n, labels.len())?;
                if let Some(&bad) = labels.iter().find(|&&c| c >= *classes) {
                    return Err(Error::InvalidTarget(format!(
                        "class {bad} out of range for {classes} classes"
                    )));
                }
            }
            Targets::Values(v) => check_len("target rows", n, v.nrows())?,
            Targets::Reconstruction => {}
        }
        let targets = match targets {
            Targets::Values(v) => Targets::Values(standard(v)),
            t => t,
        };
        Ok(Self {
            features: standard(features),
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Number of network outputs the targets call for.
    pub fn target_dim(&self) -> usize {
        match &self.targets {
            Targets::Classes { classes, .. } => *classes,
            Targets::Values(v) => v.ncols(),
            Targets::Reconstruction => self.dim(),
        }
    }

    pub fn target(&self, n: usize) -> TargetRef<'_> {
        match &self.targets {
            Targets::Classes { labels, .. } => TargetRef::Class(labels[n]),
            Targets::Values(v) => TargetRef::Values(row_slice(v.view(), n)),
            Targets::Reconstruction => TargetRef::Values(row_slice(self.features.view(), n)),
        }
    }

    /// Same inputs, reconstruction targets.
    pub fn into_autoencoder(self) -> Self {
        Self {
            features: self.features,
            targets: Targets::Reconstruction,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch<'_> {
        let inputs = self.features.select(Axis(0), indices);
        let targets = indices.iter().map(|&n| self.target(n)).collect();
        Batch { inputs, targets }
    }

    pub fn full_batch(&self) -> Batch<'_> {
        Batch {
            inputs: self.features.clone(),
            targets: (0..self.len()).map(|n| self.target(n)).collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let targets = match &self.targets {
            Targets::Classes { labels, classes } => Targets::Classes {
                labels: indices.iter().map(|&n| labels[n]).collect(),
                classes: *classes,
            },
            Targets::Values(v) => Targets::Values(standard(v.select(Axis(0), indices))),
            Targets::Reconstruction => Targets::Reconstruction,
        };
        Self {
            features: standard(self.features.select(Axis(0), indices)),
            targets,
        }
    }

    /// First `n_train` rows and the rest.
    pub fn split_at(&self, n_train: usize) -> Result<(Self, Self)> {
        if n_train > self.len() {
            return Err(Error::Config(format!(
                "cannot take {n_train} training rows out of {}",
                self.len()
            )));
        }
        let train: Vec<_> = (0..n_train).collect();
        let valid: Vec<_> = (n_train..self.len()).collect();
        Ok((self.subset(&train), self.subset(&valid)))
    }

    /// Holds out the last `n_valid` rows.
    pub fn split_tail(&self, n_valid: usize) -> Result<(Self, Self)> {
        self.split_at(self.len().saturating_sub(n_valid))
    }

    /// First `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<_> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn row_slice(a: ArrayView2<'_, f64>, n: usize) -> &[f64] {
    let (_, cols) = a.dim();
    let flat = a.to_slice().expect("dataset arrays are row-major");
    &flat[n * cols..(n + 1) * cols]
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))
}

fn check_magic(bytes: &[u8], path: &Path, magic: u32) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::Format(format!(
            "{}: magic {found:#010x}, expected {magic:#010x}",
            path.display()
        )));
    }
    Ok(())
}

fn idx_payload<'a>(bytes: &'a [u8], path: &Path, header: usize, len: usize) -> Result<&'a [u8]> {
    bytes
        .get(header..header + len)
        .ok_or_else(|| Error::Format(format!("{}: truncated data", path.display())))
}

/// Reads an IDX image/label pair (optionally gzipped); pixels are scaled by
/// 1/255 and the class count is 1 + the largest label.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read_maybe_gz(images)?;
    check_magic(&img, images, IDX_IMAGES)?;
    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let pixels = idx_payload(&img, images, 16, n * rows * cols)?;

    let lab = read_maybe_gz(labels)?;
    check_magic(&lab, labels, IDX_LABELS)?;
    let m = be_u32(&lab, 4, labels)? as usize;
    if m != n {
        return Err(Error::Format(format!("{n} images but {m} labels")));
    }
    let raw_labels = idx_payload(&lab, labels, 8, n)?;

    let features = Array2::from_shape_vec(
        (n, rows * cols),
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .expect("shape matches payload");
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, Targets::Classes { labels, classes })
}

/// Writes an IDX image/label pair (uncompressed). Pixel values are
/// `round(255 v)`.
pub fn write_idx(ds: &Dataset, rows: usize, cols: usize, images: &Path, labels: &Path) -> Result<()> {
    check_len("image size", rows * cols, ds.dim())?;
    let Targets::Classes { labels: classes, .. } = ds.targets() else {
        return Err(Error::InvalidTarget("IDX needs class labels".into()));
    };
    let n = ds.len() as u32;
    let mut img = Vec::with_capacity(16 + ds.len() * ds.dim());
    for v in [IDX_IMAGES, n, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(ds.features.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    std::fs::write(images, img)?;
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(classes.iter().map(|&c| c as u8));
    std::fs::write(labels, lab)?;
    Ok(())
}

/// Locates `train-images-idx3-ubyte` and `train-labels-idx1-ubyte` in `dir`,
/// gzipped or not.
pub fn mnist_paths(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let find = |stem: &str| {
        [stem.to_string(), format!("{stem}.gz")]
            .into_iter()
            .map(|f| dir.join(f))
            .find(|p| p.is_file())
            .ok_or_else(|| Error::Config(format!("no {stem}[.gz] in {}", dir.display())))
    };
    Ok((find("train-images-idx3-ubyte")?, find("train-labels-idx1-ubyte")?))
}

pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let (images, labels) = mnist_paths(dir)?;
    load_idx(&images, &labels)
}

/// Per-column min-max scaling to `[0, 1]`; constant columns map to 0.
pub fn normalize_min_max(x: &mut Array2<f64>) {
    for mut col in x.columns_mut() {
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if range > 0.0 {
            col.mapv_inplace(|v| (v - lo) / range);
        } else {
            col.fill(0.0);
        }
    }
}

/// Parses a numeric CSV. Columns listed in `target_columns` become real
/// targets (unscaled); an empty list gives an autoencoding dataset. The
/// remaining columns are min-max normalized.
pub fn load_csv(path: &Path, target_columns: &[usize], has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let mut cells = Vec::new();
    let mut width = None;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Format(format!(
                    "row {}: {} cells, expected {w}",
                    r + 1,
                    record.len()
                )))
            }
            _ => {}
        }
        for cell in &record {
            cells.push(cell.parse::<f64>().map_err(|_| {
                Error::Format(format!("row {}: non-numeric cell `{cell}`", r + 1))
            })?);
        }
    }
    let width = width.unwrap_or(0);
    let n = cells.len().checked_div(width).unwrap_or(0);
    let table = Array2::from_shape_vec((n, width), cells).expect("rectangular");
    if let Some(&bad) = target_columns.iter().find(|&&c| c >= width) {
        return Err(Error::Config(format!("target column {bad} out of range")));
    }
    let feature_cols: Vec<usize> = (0..width).filter(|c| !target_columns.contains(c)).collect();
    let mut features = table.select(Axis(1), &feature_cols);
    normalize_min_max(&mut features);
    let targets = if target_columns.is_empty() {
        Targets::Reconstruction
    } else {
        Targets::Values(table.select(Axis(1), target_columns))
    };
    Dataset::new(features, targets)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => Error::Format(format!(
            "row {}: {len} cells, expected {expected_len}",
            pos.map_or(0, |p| p.record())
        )),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Writes features, then real targets if any, one row per line.
pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for n in 0..ds.len() {
        let mut row: Vec<String> = ds.features.row(n).iter().map(f64::to_string).collect();
        if let Targets::Values(v) = &ds.targets {
            row.extend(v.row(n).iter().map(f64::to_string));
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Shuffled index batches covering `0..n` once; the last batch may be short.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransformSpec {
    /// `x -> 1 - x` on every feature.
    pub invert: bool,
    /// Per-feature `a x + b`, applied after inversion.
    pub scale_shift: Option<(Vec<f64>, Vec<f64>)>,
    /// Permutes the rows.
    pub shuffle_seed: Option<u64>,
}

pub fn apply_transform(ds: &Dataset, spec: &TransformSpec) -> Result<Dataset> {
    let mut out = ds.clone();
    if spec.invert {
        if out.features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("inversion needs features in [0, 1]".into()));
        }
        out.features.mapv_inplace(|v| 1.0 - v);
    }
    if let Some((a, b)) = &spec.scale_shift {
        check_len("scale vector", out.dim(), a.len())?;
        check_len("shift vector", out.dim(), b.len())?;
        for mut row in out.features.rows_mut() {
            for ((v, a), b) in row.iter_mut().zip(a).zip(b) {
                *v = a * *v + b;
            }
        }
    }
    if let Some(seed) = spec.shuffle_seed {
        let mut order: Vec<usize> = (0..out.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        out = out.subset(&order);
    }
    Ok(out)
}

/// Luma of interleaved `r, g, b` triples.
pub fn grayscale(rgb: &[f64]) -> Result<Vec<f64>> {
    if !rgb.len().is_multiple_of(3) {
        return Err(Error::Format(format!("{} values are not RGB triples", rgb.len())));
    }
    Ok(rgb
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect())
}

/// Parameters of the multichannel signal generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalSpec {
    pub samples: usize,
    pub channels: usize,
    /// Latent sinusoids mixed into every channel.
    pub sources: usize,
    /// Standard deviation of additive Gaussian noise (before normalization).
    pub noise: f64,
    pub seed: u64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            samples: 2000,
            channels: 56,
            sources: 8,
            noise: 0.1,
            seed: 1,
        }
    }
}

/// Random mixtures of sinusoids plus noise, one time step per row, scaled
/// to `[0, 1]` per channel. Returns an autoencoding dataset.
pub fn synthetic_signals(spec: &SignalSpec) -> Result<Dataset> {
    if spec.channels == 0 || spec.sources == 0 {
        return Err(Error::Config("need at least one channel and one source".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let freqs: Vec<f64> = (0..spec.sources).map(|_| rng.random_range(0.002..0.1)).collect();
    let phases: Vec<f64> = (0..spec.sources)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let mixing: Vec<f64> = (0..spec.channels * spec.sources)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let noise = Normal::new(0.0, spec.noise.max(0.0))
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    let mut x = Array2::zeros((spec.samples, spec.channels));
    for (t, mut row) in x.rows_mut().into_iter().enumerate() {
        let s: Vec<f64> = (0..spec.sources)
            .map(|k| (std::f64::consts::TAU * freqs[k] * t as f64 + phases[k]).sin())
            .collect();
        for (c, v) in row.iter_mut().enumerate() {
            let mix = &mixing[c * spec.sources..(c + 1) * spec.sources];
            *v = mix.iter().zip(&s).map(|(m, s)| m * s).sum::<f64>() + noise.sample(&mut rng);
        }
    }
    normalize_min_max(&mut x);
    Dataset::new(x, Targets::Reconstruction)
}
