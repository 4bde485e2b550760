//! Per-client dataset construction.
//!
//! * [`SynthSpec`] draws class-sorted Gaussian clusters around mutually
//!   equidistant unit-norm class means.
//! * [`shard_partition`] reproduces the sort-and-shard non-IID split: data is
//!   ordered by class, cut into equal contiguous shards, and each client takes
//!   a fixed number of shards without replacement.
//! * [`load_idx`] reads MNIST-style IDX image/label files.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClientDataset, LabeledData, Matrix};
use crate::error::{Error, Result};
use crate::seeding::{rng_for, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Fraction of each client's examples used for training.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Gaussian-cluster classification data.
///
/// Class `c` has standard deviation
/// `cluster_spread * (1 - spread_skew + 2 * spread_skew * c / (C - 1))`,
/// so `spread_skew = 0` gives every class the same spread and larger values
/// make high-index classes noisier than low-index ones while keeping the
/// average spread fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub examples_per_class: usize,
    pub feature_dim: usize,
    pub cluster_spread: f64,
    #[serde(default)]
    pub spread_skew: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("data.num_classes", "must be positive"));
        }
        if self.examples_per_class == 0 {
            return Err(Error::config("data.examples_per_class", "must be positive"));
        }
        if self.feature_dim == 0 || self.feature_dim + 1 < self.num_classes {
            return Err(Error::config(
                "data.feature_dim",
                format!(
                    "must be at least num_classes - 1 = {}",
                    self.num_classes.saturating_sub(1).max(1)
                ),
            ));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::config("data.cluster_spread", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.spread_skew) {
            return Err(Error::config("data.spread_skew", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn class_spread(&self, class: usize) -> f64 {
        if self.num_classes < 2 {
            return self.cluster_spread;
        }
        let ramp = class as f64 / (self.num_classes - 1) as f64;
        self.cluster_spread * (1.0 - self.spread_skew + 2.0 * self.spread_skew * ramp)
    }

    /// Class means: rows are unit vectors with pairwise cosine `-1/(C-1)`.
    pub fn class_means(&self) -> Result<Matrix> {
        self.validate()?;
        let mut rng = rng_for(self.seed, Stream::Synth, &[0]);
        let rows = simplex_directions(self.num_classes, self.feature_dim, &mut rng);
        Matrix::from_rows(&rows)
    }

    pub fn generate(&self) -> Result<LabeledData> {
        let means = self.class_means()?;
        let mut rng = rng_for(self.seed, Stream::Synth, &[1]);
        let n = self.num_classes * self.examples_per_class;
        let mut data = Vec::with_capacity(n * self.feature_dim);
        let mut labels = Vec::with_capacity(n);
        for class in 0..self.num_classes {
            let spread = self.class_spread(class);
            for _ in 0..self.examples_per_class {
                for &m in means.row(class) {
                    let z: f64 = rng.sample(StandardNormal);
                    data.push(m + spread * z);
                }
                labels.push(class);
            }
        }
        LabeledData::new(Matrix::new(n, self.feature_dim, data)?, labels)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gram_schmidt(vectors: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        for u in &out {
            let c = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
        let n = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        out.push(v);
    }
    out
}

fn random_orthonormal(dim: usize, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let raw = (0..count)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    gram_schmidt(raw)
}

/// `count` unit vectors in `R^dim` with pairwise cosine `-1/(count-1)`,
/// randomly rotated. Needs `dim >= count - 1`.
pub(crate) fn simplex_directions(count: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let basis = random_orthonormal(dim, count.max(2) - 1, rng);
    if count == 1 {
        return vec![basis[0].clone()];
    }
    // Simplex vertices e_i - 1/count, expressed in an orthonormal basis of
    // the sum-zero subspace of R^count, then mapped into R^dim.
    let sub = sum_zero_basis(count);
    (0..count)
        .map(|i| {
            let mut vertex = vec![-1.0 / count as f64; count];
            vertex[i] += 1.0;
            let coords: Vec<f64> = sub.iter().map(|b| dot(b, &vertex)).collect();
            let scale = dot(&coords, &coords).sqrt();
            let mut row = vec![0.0; dim];
            for (coef, b) in coords.iter().zip(&basis) {
                for (r, v) in row.iter_mut().zip(b) {
                    *r += coef / scale * v;
                }
            }
            row
        })
        .collect()
}

/// Orthonormal basis of `{x in R^c : sum(x) = 0}` built from `e_i - e_{c-1}`.
fn sum_zero_basis(c: usize) -> Vec<Vec<f64>> {
    let raw = (0..c - 1)
        .map(|i| {
            let mut v = vec![0.0; c];
            v[i] = 1.0;
            v[c - 1] = -1.0;
            v
        })
        .collect();
    gram_schmidt(raw)
}

/// Class-sorted Gaussian clusters with a common spread.
pub fn synth_classification(
    num_classes: usize,
    examples_per_class: usize,
    feature_dim: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<LabeledData> {
    SynthSpec {
        num_classes,
        examples_per_class,
        feature_dim,
        cluster_spread,
        spread_skew: 0.0,
        seed,
    }
    .generate()
}

/// Shape of a sharded federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationSpec {
    pub num_clients: usize,
    pub shards_per_client: usize,
    pub seed: u64,
}

impl FederationSpec {
    pub fn total_shards(&self) -> usize {
        self.num_clients * self.shards_per_client
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::config("data.num_clients", "must be positive"));
        }
        if self.shards_per_client == 0 {
            return Err(Error::config("data.shards_per_client", "must be positive"));
        }
        Ok(())
    }
}

/// Deals class-sorted shards to clients and splits each client 80/20.
///
/// When the example count is not a multiple of the shard count, the
/// remainder is trimmed from the end of the class-sorted order. Shards are
/// drawn from one seeded permutation: client `k` receives permutation slots
/// `k * shards_per_client ..`. Each client's pooled examples are shuffled and
/// the first `round(0.8 * n)` become its training set.
pub fn shard_partition(data: &LabeledData, spec: &FederationSpec) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    let shards = spec.total_shards();
    if data.len() < shards {
        return Err(Error::config(
            "data.shards_per_client",
            format!("{} examples cannot fill {shards} shards", data.len()),
        ));
    }
    let shard_size = data.len() / shards;

    let mut sorted: Vec<usize> = (0..data.len()).collect();
    sorted.sort_by_key(|&i| data.labels[i]);

    let mut perm: Vec<usize> = (0..shards).collect();
    perm.shuffle(&mut rng_for(spec.seed, Stream::Partition, &[0]));

    let mut clients = Vec::with_capacity(spec.num_clients);
    for (client_id, picks) in perm.chunks(spec.shards_per_client).enumerate() {
        let mut members: Vec<usize> = picks
            .iter()
            .flat_map(|&s| sorted[s * shard_size..(s + 1) * shard_size].iter().copied())
            .collect();
        members.shuffle(&mut rng_for(
            spec.seed,
            Stream::Partition,
            &[1, client_id as u64],
        ));
        let n_train = (TRAIN_FRACTION * members.len() as f64).round() as usize;
        let (train, test) = members.split_at(n_train);
        clients.push(ClientDataset {
            client_id,
            train: data.subset(train),
            test: data.subset(test),
        });
    }
    Ok(clients)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0).unwrap_or(0);
    if found != expected {
        return Err(Error::IdxBadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn header(bytes: &[u8], words: usize, path: &Path) -> Result<Vec<usize>> {
    (1..=words)
        .map(|w| {
            be_u32(bytes, 4 * w)
                .map(|v| v as usize)
                .ok_or_else(|| Error::IdxTruncated {
                    path: path.to_path_buf(),
                    needed: 4 * (words + 1),
                    available: bytes.len(),
                })
        })
        .collect()
}

fn payload<'a>(bytes: &'a [u8], start: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(start..start + len).ok_or(Error::IdxTruncated {
        path: path.to_path_buf(),
        needed: start + len,
        available: bytes.len(),
    })
}

/// Reads an IDX image file and its label file. Pixels are scaled to `[0, 1]`
/// and each image is flattened row-major.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledData> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let img = read_file(images_path)?;
    check_magic(&img, IDX_IMAGES_MAGIC, images_path)?;
    let dims = header(&img, 3, images_path)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let width = rows * cols;
    let pixels = payload(&img, 16, count * width, images_path)?;

    let lab = read_file(labels_path)?;
    check_magic(&lab, IDX_LABELS_MAGIC, labels_path)?;
    let label_count = header(&lab, 1, labels_path)?[0];
    let labels = payload(&lab, 8, label_count, labels_path)?;

    if count != label_count {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let features = Matrix::new(
        count,
        width,
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    LabeledData::new(features, labels.iter().map(|&l| usize::from(l)).collect())
}
