//! Dataset acquisition and Dirichlet label-skew partitioning.
//!
//! Two sources: a seeded Gaussian-blob generator for desk-scale runs, and an
//! IDX container parser for MNIST-format files. Partitioning draws per-class
//! client proportions from Dir(beta) and splits each shard into train and
//! validation, stratified by class.

use std::io::{self, Read};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{derive_rng, stream};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Usage("empty dataset".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidValue(format!(
                "label {bad} out of range 0..{num_classes}"
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidValue("non-finite feature value".into()));
        }
        Ok(Dataset { features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order. Indices must be in range.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: Dataset,
    pub validation: Dataset,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub beta: f64,
    pub seed: u64,
    pub val_fraction: f64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Usage("num_clients must be >= 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Usage("beta must be > 0".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Usage("val_fraction must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// K Gaussian blobs with seeded centers in [0,1]^dim; per-class standard
/// deviation `spread`, features clamped to [0,1]. Labels are class-major.
pub fn generate_synthetic(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Usage("need at least 2 classes".into()));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::Usage("per_class and dim must be >= 1".into()));
    }
    if !(spread >= 0.0) {
        return Err(Error::Usage("spread must be >= 0".into()));
    }
    let mut rng = derive_rng(seed, &[stream::SYNTHETIC]);
    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let n = num_classes * per_class;
    let mut features = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let normal = rand_distr::StandardNormal;
    for (k, center) in centers.iter().enumerate() {
        for s in 0..per_class {
            let row = features.row_mut(k * per_class + s);
            for (v, c) in row.iter_mut().zip(center) {
                let noise: f64 = normal.sample(&mut rng);
                *v = (c + spread * noise).clamp(0.0, 1.0);
            }
            labels.push(k);
        }
    }
    Dataset::new(features, labels, num_classes)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parse an MNIST-format IDX image/label file pair. Pixel bytes are scaled
/// to [0,1]; the class count is inferred as max label + 1.
pub fn parse_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let img_magic = read_be_u32(&images, 0, images_path)?;
    if img_magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: magic {img_magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let lbl_magic = read_be_u32(&labels, 0, labels_path)?;
    if lbl_magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: magic {lbl_magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }

    let n_images = read_be_u32(&images, 4, images_path)? as usize;
    let rows = read_be_u32(&images, 8, images_path)? as usize;
    let cols = read_be_u32(&images, 12, images_path)? as usize;
    let n_labels = read_be_u32(&labels, 4, labels_path)? as usize;
    if n_images != n_labels {
        return Err(Error::Format(format!(
            "{} images vs {} labels",
            n_images, n_labels
        )));
    }
    let pixel_count = n_images * rows * cols;
    if images.len() < 16 + pixel_count {
        return Err(Error::Io(truncated(images_path)));
    }
    if labels.len() < 8 + n_labels {
        return Err(Error::Io(truncated(labels_path)));
    }

    let dim = rows * cols;
    let mut features = Matrix::zeros(n_images, dim);
    for (v, &byte) in features
        .as_mut_slice()
        .iter_mut()
        .zip(&images[16..16 + pixel_count])
    {
        *v = byte as f64 / 255.0;
    }
    let label_values: Vec<usize> = labels[8..8 + n_labels].iter().map(|&b| b as usize).collect();
    let num_classes = label_values.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(features, label_values, num_classes)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Io(truncated(path)));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

fn truncated(path: &Path) -> io::Error {
    io::Error::new(
        io::ErrorKind::UnexpectedEof,
        format!("{}: truncated", path.display()),
    )
}

/// Split a dataset into (rest, held_out) with `fraction` held out,
/// stratified by class. Seeded and deterministic.
pub fn stratified_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Usage("split fraction must lie in (0,1)".into()));
    }
    let mut rng = derive_rng(seed, &[stream::TEST_SPLIT]);
    let mut held = Vec::new();
    let mut rest = Vec::new();
    for k in 0..data.num_classes {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == k).collect();
        shuffle(&mut idx, &mut rng);
        let n_held = ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
        held.extend_from_slice(&idx[..n_held]);
        rest.extend_from_slice(&idx[n_held..]);
    }
    held.sort_unstable();
    rest.sort_unstable();
    if held.is_empty() || rest.is_empty() {
        return Err(Error::Usage("split produced an empty side".into()));
    }
    Ok((data.subset(&rest), data.subset(&held)))
}

/// Dirichlet label-skew partition into per-client shards.
///
/// For every class, proportions over clients are drawn from Dir(beta) via
/// Gamma(beta, 1) normalization and converted to integer counts with
/// largest-remainder rounding, so per-class totals are preserved exactly.
/// Draws leaving any client empty are retried up to 100 times.
pub fn dirichlet_partition(data: &Dataset, spec: &PartitionSpec) -> Result<Vec<ClientShard>> {
    spec.validate()?;
    if data.len() < spec.num_clients {
        return Err(Error::Usage(format!(
            "{} samples cannot cover {} clients",
            data.len(),
            spec.num_clients
        )));
    }
    let c = spec.num_clients;
    let mut rng = derive_rng(spec.seed, &[stream::PARTITION]);
    let gamma = Gamma::new(spec.beta, 1.0)
        .map_err(|e| Error::Usage(format!("bad beta for Gamma sampling: {e}")))?;

    // Class index pools, shuffled once so assignment ignores dataset order.
    let mut class_indices: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for (i, &y) in data.labels.iter().enumerate() {
        class_indices[y].push(i);
    }
    for pool in &mut class_indices {
        shuffle(pool, &mut rng);
    }

    let mut assignment: Vec<Vec<usize>> = Vec::new();
    let mut ok = false;
    for _attempt in 0..100 {
        let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); c];
        for pool in &class_indices {
            if pool.is_empty() {
                continue;
            }
            let props = dirichlet_draw(&gamma, c, &mut rng);
            let counts = largest_remainder(&props, pool.len());
            let mut cursor = 0;
            for (client, &cnt) in counts.iter().enumerate() {
                per_client[client].extend_from_slice(&pool[cursor..cursor + cnt]);
                cursor += cnt;
            }
        }
        if per_client.iter().all(|ids| !ids.is_empty()) {
            assignment = per_client;
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::Usage(
            "a client received zero samples in 100 Dirichlet draws; \
             use a larger dataset or a larger beta"
                .into(),
        ));
    }

    let mut shards = Vec::with_capacity(c);
    for (client_id, mut indices) in assignment.into_iter().enumerate() {
        indices.sort_unstable();
        let mut val_rng = derive_rng(spec.seed, &[stream::PARTITION, client_id as u64 + 1]);
        let (train_idx, val_idx) = split_validation(data, &indices, spec.val_fraction, &mut val_rng);
        let train = data.subset(&train_idx);
        let validation = if val_idx.is_empty() {
            // Shard of one sample: validation stays empty; Dataset::new
            // rejects empties, so synthesize a zero-row carrier via subset.
            Dataset {
                features: data.features.select_rows(&[]),
                labels: Vec::new(),
                num_classes: data.num_classes,
            }
        } else {
            data.subset(&val_idx)
        };
        shards.push(ClientShard { client_id, train, validation });
    }
    Ok(shards)
}

fn dirichlet_draw<R: Rng>(gamma: &Gamma<f64>, c: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let draws: Vec<f64> = (0..c).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.iter().map(|&g| g / sum).collect();
        }
    }
}

/// Convert proportions to integer counts summing to `total` exactly.
/// Remainders are awarded by descending fractional part, lower index first.
fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = props
        .iter()
        .map(|&p| (p * total as f64).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = props[a] * total as f64 - (props[a] * total as f64).floor();
        let fb = props[b] * total as f64 - (props[b] * total as f64).floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Stratified train/validation split of one shard's indices. Classes with a
/// single sample go to train; if that leaves validation empty while the
/// shard has >= 2 samples, one seeded sample is moved over.
fn split_validation<R: Rng>(
    data: &Dataset,
    indices: &[usize],
    val_fraction: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for &i in indices {
        by_class[data.labels[i]].push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for pool in &mut by_class {
        if pool.len() < 2 {
            train.extend_from_slice(pool);
            continue;
        }
        shuffle(pool, rng);
        let n_val = ((pool.len() as f64 * val_fraction).round() as usize)
            .max(1)
            .min(pool.len() - 1);
        val.extend_from_slice(&pool[..n_val]);
        train.extend_from_slice(&pool[n_val..]);
    }
    if val.is_empty() && indices.len() >= 2 {
        let pick = rng.random_range(0..train.len());
        val.push(train.swap_remove(pick));
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(c: usize, beta: f64, seed: u64) -> PartitionSpec {
        PartitionSpec { num_clients: c, beta, seed, val_fraction: 0.1 }
    }

    #[test]
    fn synthetic_zero_spread_samples_equal_centers() {
        let data = generate_synthetic(3, 4, 5, 0.0, 9).unwrap();
        for k in 0..3 {
            let first = data.features.row(k * 5).to_vec();
            for s in of_class(&data, k) {
                assert_eq!(data.features.row(s), &first[..]);
            }
        }
    }

    #[test]
    fn synthetic_counts_per_class() {
        let data = generate_synthetic(2, 3, 5, 0.1, 1).unwrap();
        assert_eq!(data.len(), 10);
        assert_eq!(data.class_counts(), vec![5, 5]);
    }

    #[test]
    fn synthetic_deterministic_and_bounded() {
        let a = generate_synthetic(4, 8, 20, 0.3, 77).unwrap();
        let b = generate_synthetic(4, 8, 20, 0.3, 77).unwrap();
        assert_eq!(a.features, b.features);
        assert!(a.features.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn synthetic_is_linearly_separable_at_small_spread() {
        use crate::mlp::{sgd_train, Activation, MlpModel, SgdConfig};
        let data = generate_synthetic(4, 16, 50, 0.05, 3).unwrap();
        let mut rng = derive_rng(3, &[99]);
        let model = MlpModel::init(&[16, 4], Activation::Relu, &mut rng).unwrap();
        let cfg = SgdConfig { epochs: 60, lr: 0.5, batch_size: 32 };
        let trained = sgd_train(&model, &data.features, &data.labels, &cfg, None, &mut rng).unwrap();
        let logits = trained.forward(&data.features).unwrap();
        let correct = (0..data.len())
            .filter(|&i| argmax(logits.row(i)) == data.labels[i])
            .count();
        let acc = correct as f64 / data.len() as f64;
        assert!(acc > 0.95, "train accuracy {acc}");
    }

    #[test]
    fn partition_single_client_gets_everything() {
        let data = generate_synthetic(3, 2, 10, 0.1, 5).unwrap();
        let shards = dirichlet_partition(&data, &spec(1, 0.5, 1)).unwrap();
        assert_eq!(shards.len(), 1);
        assert_eq!(shards[0].len(), data.len());
    }

    #[test]
    fn partition_is_exact_and_deterministic() {
        let data = generate_synthetic(5, 3, 40, 0.2, 11).unwrap();
        let s = spec(7, 0.4, 42);
        let a = dirichlet_partition(&data, &s).unwrap();
        let b = dirichlet_partition(&data, &s).unwrap();

        // Determinism, byte for byte.
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.train.features, y.train.features);
            assert_eq!(x.train.labels, y.train.labels);
            assert_eq!(x.validation.features, y.validation.features);
        }

        // True partition: sizes add up and per-class totals are conserved.
        let total: usize = a.iter().map(|sh| sh.len()).sum();
        assert_eq!(total, data.len());
        let mut per_class = vec![0usize; data.num_classes];
        for sh in &a {
            for &y in sh.train.labels.iter().chain(&sh.validation.labels) {
                per_class[y] += 1;
            }
        }
        assert_eq!(per_class, data.class_counts());

        // Validation nonempty whenever the shard has >= 2 samples.
        for sh in &a {
            if sh.len() >= 2 {
                assert!(!sh.validation.is_empty(), "client {}", sh.client_id);
            }
        }
    }

    #[test]
    fn partition_disjointness_via_feature_totals() {
        // Each synthetic row is unique with overwhelming probability, so a
        // multiset equality check over rows validates disjoint coverage.
        let data = generate_synthetic(4, 3, 25, 0.3, 13).unwrap();
        let shards = dirichlet_partition(&data, &spec(5, 0.7, 8)).unwrap();
        let mut seen: Vec<Vec<u64>> = Vec::new();
        for sh in &shards {
            for ds in [&sh.train, &sh.validation] {
                for r in 0..ds.len() {
                    seen.push(ds.features.row(r).iter().map(|v| v.to_bits()).collect());
                }
            }
        }
        seen.sort();
        let mut all: Vec<Vec<u64>> = (0..data.len())
            .map(|r| data.features.row(r).iter().map(|v| v.to_bits()).collect())
            .collect();
        all.sort();
        assert_eq!(seen, all);
    }

    #[test]
    fn partition_concentrated_beta_is_near_uniform() {
        let data = generate_synthetic(10, 2, 200, 0.2, 21).unwrap();
        let shards = dirichlet_partition(&data, &spec(5, 10_000.0, 3)).unwrap();
        let expect = 200.0 / 5.0;
        for sh in &shards {
            let mut hist = vec![0usize; 10];
            for &y in sh.train.labels.iter().chain(&sh.validation.labels) {
                hist[y] += 1;
            }
            for (k, &cnt) in hist.iter().enumerate() {
                let rel = (cnt as f64 - expect).abs() / expect;
                assert!(rel < 0.2, "client {} class {k}: {cnt} vs {expect}", sh.client_id);
            }
        }
    }

    #[test]
    fn partition_low_beta_skews_harder_than_beta_one() {
        // Mean over clients of the max class share, averaged over 20 seeds.
        let data = generate_synthetic(10, 2, 100, 0.2, 31).unwrap();
        let mean_max_share = |beta: f64| -> f64 {
            let mut acc = 0.0;
            for seed in 0..20u64 {
                let shards =
                    dirichlet_partition(&data, &spec(10, beta, 1000 + seed)).unwrap();
                let mut per_run = 0.0;
                for sh in &shards {
                    let mut hist = vec![0usize; 10];
                    for &y in sh.train.labels.iter().chain(&sh.validation.labels) {
                        hist[y] += 1;
                    }
                    let max = *hist.iter().max().unwrap() as f64;
                    per_run += max / sh.len() as f64;
                }
                acc += per_run / shards.len() as f64;
            }
            acc / 20.0
        };
        let skewed = mean_max_share(0.1);
        let mild = mean_max_share(1.0);
        assert!(
            skewed > mild,
            "max class share at beta=0.1 ({skewed}) should exceed beta=1 ({mild})"
        );
    }

    #[test]
    fn idx_round_trip_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lbl_path = dir.path().join("lbl.idx");
        // Two 2x2 images with pixel bytes {0, 255, 128, 64} and {255, 0, 0, 255}.
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[0, 255, 128, 64, 255, 0, 0, 255]);
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[1, 0]);
        std::fs::write(&img_path, &img).unwrap();
        std::fs::write(&lbl_path, &lbl).unwrap();

        let data = parse_idx(&img_path, &lbl_path).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 4);
        assert_eq!(data.num_classes, 2);
        assert_eq!(data.labels, vec![1, 0]);
        assert_eq!(data.features.row(0)[0], 0.0);
        assert_eq!(data.features.row(0)[1], 1.0);
        assert_eq!(data.features.row(0)[2], 128.0 / 255.0);
        assert_eq!(data.features.row(1)[0], 1.0);
    }

    #[test]
    fn idx_swapped_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lbl_path = dir.path().join("lbl.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0801u32.to_be_bytes()); // labels magic
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.push(0);
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0803u32.to_be_bytes()); // images magic
        lbl.extend_from_slice(&1u32.to_be_bytes());
        lbl.push(0);
        std::fs::write(&img_path, &img).unwrap();
        std::fs::write(&lbl_path, &lbl).unwrap();
        assert!(matches!(
            parse_idx(&img_path, &lbl_path),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn idx_truncated_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lbl_path = dir.path().join("lbl.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&4u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&[7; 3]); // promises 16 pixel bytes, delivers 3
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&4u32.to_be_bytes());
        lbl.extend_from_slice(&[0, 1, 2, 3]);
        std::fs::write(&img_path, &img).unwrap();
        std::fs::write(&lbl_path, &lbl).unwrap();
        assert!(matches!(parse_idx(&img_path, &lbl_path), Err(Error::Io(_))));
    }

    #[test]
    fn idx_count_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img.idx");
        let lbl_path = dir.path().join("lbl.idx");
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.extend_from_slice(&1u32.to_be_bytes());
        img.push(5);
        let mut lbl = Vec::new();
        lbl.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lbl.extend_from_slice(&2u32.to_be_bytes());
        lbl.extend_from_slice(&[0, 1]);
        std::fs::write(&img_path, &img).unwrap();
        std::fs::write(&lbl_path, &lbl).unwrap();
        assert!(matches!(
            parse_idx(&img_path, &lbl_path),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn stratified_split_keeps_class_balance() {
        let data = generate_synthetic(4, 2, 50, 0.2, 6).unwrap();
        let (rest, held) = stratified_split(&data, 0.2, 17).unwrap();
        assert_eq!(rest.len() + held.len(), data.len());
        assert_eq!(held.class_counts(), vec![10, 10, 10, 10]);
    }

    fn of_class(data: &Dataset, k: usize) -> Vec<usize> {
        (0..data.len()).filter(|&i| data.labels[i] == k).collect()
    }

    fn argmax(row: &[f64]) -> usize {
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }
}
