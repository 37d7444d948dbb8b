//! Datasets, IDX ingestion, synthetic blobs, and Dirichlet non-IID partitioning.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt};
use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed::{self, Stream};
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

const MAX_REDRAWS: usize = 100;

/// A labelled dataset with features stored row-major and scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Vec<f64>,
        labels: Vec<usize>,
        input_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidDataset("input_dim must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidDataset("num_classes must be >= 2".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * input_dim,
                actual: features.len(),
                context: "dataset features",
            });
        }
        let mut seen = vec![false; num_classes];
        for &label in &labels {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
            seen[label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!(
                "class {missing} has no samples"
            )));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            input_dim,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.features[index * self.input_dim..(index + 1) * self.input_dim]
    }

    /// Borrowed view over a subset of rows.
    pub fn view<'a>(&'a self, indices: &'a [usize]) -> DataView<'a> {
        DataView {
            dataset: self,
            indices,
        }
    }

    /// Sample indices grouped by class, ascending within each class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &label) in self.labels.iter().enumerate() {
            by_class[label].push(i);
        }
        by_class
    }

    /// Keeps the first `cap` samples. Fails if a class disappears.
    pub fn truncate(self, cap: usize) -> Result<Self> {
        if cap >= self.len() {
            return Ok(self);
        }
        let name = format!("{}[..{cap}]", self.name);
        let mut features = self.features;
        let mut labels = self.labels;
        features.truncate(cap * self.input_dim);
        labels.truncate(cap);
        Dataset::new(name, features, labels, self.input_dim, self.num_classes)
    }

    /// Writes `f0,...,f{d-1},label` CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = (0..self.input_dim).map(|k| format!("f{k}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for i in 0..self.len() {
            for v in self.row(i) {
                write!(out, "{v},")?;
            }
            writeln!(out, "{}", self.labels[i])?;
        }
        Ok(())
    }
}

/// A dataset restricted to a list of row indices.
#[derive(Debug, Clone, Copy)]
pub struct DataView<'a> {
    dataset: &'a Dataset,
    indices: &'a [usize],
}

impl<'a> DataView<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn indices(&self) -> &'a [usize] {
        self.indices
    }

    pub fn input_dim(&self) -> usize {
        self.dataset.input_dim
    }

    pub fn row(&self, position: usize) -> &'a [f64] {
        self.dataset.row(self.indices[position])
    }

    pub fn label(&self, position: usize) -> usize {
        self.dataset.labels[self.indices[position]]
    }
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("gzip: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_header(
    path: &Path,
    cur: &mut &[u8],
    expected_magic: u32,
    dims: usize,
) -> Result<Vec<usize>> {
    let truncated = |what: &str| Error::Truncated {
        path: path.to_path_buf(),
        detail: format!("missing {what}"),
    };
    let magic = cur
        .read_u32::<BigEndian>()
        .map_err(|_| truncated("magic"))?;
    if magic != expected_magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: expected_magic,
            found: magic,
        });
    }
    (0..dims)
        .map(|_| {
            cur.read_u32::<BigEndian>()
                .map(|v| v as usize)
                .map_err(|_| truncated("dimension"))
        })
        .collect()
}

/// Decodes an IDX image/label file pair (big-endian; either file may be gzipped).
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let image_bytes = read_maybe_gz(images_path)?;
    let mut cur = image_bytes.as_slice();
    let dims = read_header(images_path, &mut cur, IDX_IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = rows * cols;
    if cur.len() < count * pixels {
        return Err(Error::Truncated {
            path: images_path.to_path_buf(),
            detail: format!(
                "expected {} pixel bytes, found {}",
                count * pixels,
                cur.len()
            ),
        });
    }

    let label_bytes = read_maybe_gz(labels_path)?;
    let mut lcur = label_bytes.as_slice();
    let label_count = read_header(labels_path, &mut lcur, IDX_LABELS_MAGIC, 1)?[0];
    if lcur.len() < label_count {
        return Err(Error::Truncated {
            path: labels_path.to_path_buf(),
            detail: format!("expected {label_count} label bytes, found {}", lcur.len()),
        });
    }
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }

    let features = cur[..count * pixels]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels = lcur[..count].iter().map(|&b| usize::from(b)).collect();
    let name = images_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(name, features, labels, pixels, MNIST_CLASSES)
}

/// Locates `train-images-idx3-ubyte` / `train-labels-idx1-ubyte` (optionally `.gz`) in `dir`.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let find = |stem: &str| -> Result<PathBuf> {
        [stem.to_string(), format!("{stem}.gz")]
            .into_iter()
            .map(|name| dir.join(name))
            .find(|p| p.is_file())
            .ok_or_else(|| {
                Error::io(
                    dir.join(stem),
                    io::Error::new(io::ErrorKind::NotFound, "IDX file not found"),
                )
            })
    };
    let images = find("train-images-idx3-ubyte")?;
    let labels = find("train-labels-idx1-ubyte")?;
    let mut ds = load_mnist_idx(images, labels)?;
    ds.name = "mnist".into();
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Synthetic blobs
// ---------------------------------------------------------------------------

/// Center of class `class` for blob datasets; independent of the sampling seed.
pub fn blob_center(class: usize, num_classes: usize, dims: usize) -> Vec<f64> {
    if dims == 1 {
        let t = class as f64 / (num_classes - 1).max(1) as f64;
        return vec![0.2 + 0.6 * t];
    }
    let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
    (0..dims)
        .map(|k| 0.5 + 0.3 * (angle + k as f64 * std::f64::consts::FRAC_PI_2).cos())
        .collect()
}

/// Isotropic Gaussian blobs, one per class, clamped to `[0, 1]`.
pub fn make_blobs(
    num_classes: usize,
    dims: usize,
    samples_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || dims == 0 || samples_per_class == 0 {
        return Err(Error::InvalidDataset(
            "blobs need >= 2 classes, dims > 0 and samples_per_class > 0".into(),
        ));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidDataset(format!("invalid spread {spread}")));
    }
    let mut rng = seed::rng(seed);
    let n = num_classes * samples_per_class;
    let mut features = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for c in 0..num_classes {
        let center = blob_center(c, num_classes, dims);
        for _ in 0..samples_per_class {
            for &mu in &center {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push((mu + spread * z).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    Dataset::new(
        format!("blobs-{num_classes}x{dims}"),
        features,
        labels,
        dims,
        num_classes,
    )
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

/// One node's private data: disjoint train and test index lists, both sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub node_id: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Shard {
    pub fn train_view<'a>(&'a self, dataset: &'a Dataset) -> DataView<'a> {
        dataset.view(&self.train)
    }

    pub fn test_view<'a>(&'a self, dataset: &'a Dataset) -> DataView<'a> {
        dataset.view(&self.test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub num_nodes: usize,
    pub alpha_dir: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::InvalidPartition("num_nodes must be >= 1".into()));
        }
        if !(self.alpha_dir > 0.0 && self.alpha_dir.is_finite()) {
            return Err(Error::InvalidPartition(format!(
                "alpha_dir must be positive and finite, got {}",
                self.alpha_dir
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidPartition(format!(
                "test_fraction must be in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }
}

/// Splits `total` into integer parts proportional to `weights` (largest remainder,
/// ties to the lower index). The parts always sum to `total`.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        parts[k] += 1;
    }
    parts
}

fn dirichlet_sample<R: Rng>(rng: &mut R, alpha: f64, n: usize) -> Option<Vec<f64>> {
    if n == 1 {
        return Some(vec![1.0]);
    }
    let gamma = Gamma::new(alpha, 1.0).ok()?;
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    (total > 0.0 && total.is_finite()).then(|| draws.iter().map(|g| g / total).collect())
}

fn try_partition(
    dataset: &Dataset,
    spec: &PartitionSpec,
    attempt: usize,
) -> std::result::Result<Vec<Shard>, String> {
    let n = spec.num_nodes;
    let mut rng = seed::stream_rng(spec.seed, Stream::Partition, &[attempt as u64]);
    let mut per_node: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); dataset.num_classes()]; n];

    for (class, mut indices) in dataset.class_indices().into_iter().enumerate() {
        indices.shuffle(&mut rng);
        let proportions = dirichlet_sample(&mut rng, spec.alpha_dir, n)
            .ok_or_else(|| format!("degenerate Dirichlet draw for class {class}"))?;
        let quotas = largest_remainder(indices.len(), &proportions);
        let mut start = 0;
        for (node, quota) in quotas.into_iter().enumerate() {
            per_node[node][class].extend_from_slice(&indices[start..start + quota]);
            start += quota;
        }
    }

    let mut shards = Vec::with_capacity(n);
    for (node, classes) in per_node.into_iter().enumerate() {
        let total: usize = classes.iter().map(Vec::len).sum();
        if total < 2 {
            return Err(format!("node {node} received {total} samples"));
        }
        let n_test = ((total as f64 * spec.test_fraction).round() as usize).clamp(1, total - 1);
        let weights: Vec<f64> = classes.iter().map(|c| c.len() as f64).collect();
        let test_quota = largest_remainder(n_test, &weights);
        let mut train = Vec::with_capacity(total - n_test);
        let mut test = Vec::with_capacity(n_test);
        for (members, quota) in classes.into_iter().zip(test_quota) {
            test.extend_from_slice(&members[..quota]);
            train.extend_from_slice(&members[quota..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        shards.push(Shard {
            node_id: node,
            train,
            test,
        });
    }
    Ok(shards)
}

/// Per-class Dirichlet(alpha_dir * 1_N) split of `dataset` over `N` nodes, followed by
/// a per-node class-stratified train/test split. Redraws with a fresh stream when any
/// node ends up with an empty train or test list.
pub fn dirichlet_partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Vec<Shard>> {
    spec.validate()?;
    let mut last = String::new();
    for attempt in 0..=MAX_REDRAWS {
        match try_partition(dataset, spec, attempt) {
            Ok(shards) => return Ok(shards),
            Err(reason) => last = reason,
        }
    }
    Err(Error::RedrawLimit {
        attempts: MAX_REDRAWS,
        reason: last,
    })
}

/// Consolidates all shards into one (node id 0).
pub fn joint_view(shards: &[Shard]) -> Shard {
    if let [only] = shards {
        return only.clone();
    }
    let mut train: Vec<usize> = shards
        .iter()
        .flat_map(|s| s.train.iter().copied())
        .collect();
    let mut test: Vec<usize> = shards.iter().flat_map(|s| s.test.iter().copied()).collect();
    train.sort_unstable();
    test.sort_unstable();
    Shard {
        node_id: 0,
        train,
        test,
    }
}

/// Class histogram of the given rows.
pub fn class_counts(dataset: &Dataset, indices: &[usize]) -> Vec<usize> {
    let mut counts = vec![0; dataset.num_classes()];
    for &i in indices {
        counts[dataset.labels()[i]] += 1;
    }
    counts
}

/// Shannon entropy (nats) of a count histogram; 0 for an empty histogram.
pub fn entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

/// Mean over shards of the label entropy of each shard's full (train + test) data.
pub fn mean_label_entropy(dataset: &Dataset, shards: &[Shard]) -> f64 {
    let total: f64 = shards
        .iter()
        .map(|s| {
            let mut counts = class_counts(dataset, &s.train);
            for (c, k) in counts.iter_mut().zip(class_counts(dataset, &s.test)) {
                *c += k;
            }
            entropy(&counts)
        })
        .sum();
    total / shards.len() as f64
}
