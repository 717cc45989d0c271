//! Datasets and task streams: IDX ingestion, permuted and split image tasks,
//! and the synthetic 1-D linear regression sequence.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::math::{Rng, Tensor2};

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Observation noise variance of the regression tasks.
pub const LINREG_NOISE_VAR: f64 = 0.1;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: wrong magic number {found} (expected {expected})")]
    WrongMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated, header promises {expected} bytes but {available} are present")]
    Truncated {
        path: PathBuf,
        expected: usize,
        available: usize,
    },
    #[error("image file holds {images} examples but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes {
        labels: Vec<usize>,
        n_classes: usize,
    },
    Real(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Real(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, n_classes } => Targets::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
            Targets::Real(y) => Targets::Real(indices.iter().map(|&i| y[i]).collect()),
        }
    }
}

/// One task's labelled examples and the output head that serves it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub name: String,
    pub inputs: Tensor2,
    pub targets: Targets,
    pub head: usize,
}

impl TaskData {
    pub fn classification(
        name: impl Into<String>,
        inputs: Tensor2,
        labels: Vec<usize>,
        n_classes: usize,
        head: usize,
    ) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::shape("TaskData labels", inputs.rows(), labels.len()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: n_classes,
            });
        }
        Ok(Self {
            name: name.into(),
            inputs,
            targets: Targets::Classes { labels, n_classes },
            head,
        })
    }

    pub fn regression(
        name: impl Into<String>,
        inputs: Tensor2,
        y: Vec<f64>,
        head: usize,
    ) -> Result<Self> {
        if y.len() != inputs.rows() {
            return Err(Error::shape("TaskData targets", inputs.rows(), y.len()));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            targets: Targets::Real(y),
            head,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Real(_) => None,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes { n_classes, .. } => Some(*n_classes),
            Targets::Real(_) => None,
        }
    }

    /// The listed examples, in the listed order.
    pub fn select(&self, indices: &[usize]) -> TaskData {
        TaskData {
            name: self.name.clone(),
            inputs: self.inputs.select_rows(indices),
            targets: self.targets.select(indices),
            head: self.head,
        }
    }

    /// Splits into (`indices` in the given order, everything else in original order).
    pub fn partition(&self, indices: &[usize]) -> (TaskData, TaskData) {
        let mut taken = vec![false; self.len()];
        for &i in indices {
            taken[i] = true;
        }
        let rest: Vec<usize> = (0..self.len()).filter(|&i| !taken[i]).collect();
        (self.select(indices), self.select(&rest))
    }

    /// A seeded draw of `n` examples without replacement; the whole set if `n ≥ len`.
    pub fn subsample(&self, n: usize, rng: &mut Rng) -> Result<TaskData> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let mut idx = rng.sample_indices(self.len(), n)?;
        idx.sort_unstable();
        Ok(self.select(&idx))
    }

    pub fn all_pixels_in_unit_range(&self) -> bool {
        self.inputs.data().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| IdxError::Truncated {
            path: path.to_path_buf(),
            expected: offset + 4,
            available: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), IdxError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(IdxError::WrongMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(
    bytes: &'a [u8],
    header: usize,
    len: usize,
    path: &Path,
) -> Result<&'a [u8], IdxError> {
    bytes
        .get(header..header + len)
        .ok_or_else(|| IdxError::Truncated {
            path: path.to_path_buf(),
            expected: header + len,
            available: bytes.len(),
        })
}

/// Reads an IDX image/label file pair. Pixels are scaled to `[0, 1]`.
///
/// Either file may be gzip-compressed; compression is detected from the
/// `1f 8b` prefix.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<(Tensor2, Vec<usize>), IdxError> {
    let images = read_maybe_gz(images_path)?;
    check_magic(&images, IDX_IMAGES_MAGIC, images_path)?;
    let n = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let pixels = payload(&images, 16, n * rows * cols, images_path)?;

    let labels = read_maybe_gz(labels_path)?;
    check_magic(&labels, IDX_LABELS_MAGIC, labels_path)?;
    let n_labels = be_u32(&labels, 4, labels_path)? as usize;
    let label_bytes = payload(&labels, 8, n_labels, labels_path)?;

    if n != n_labels {
        return Err(IdxError::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let inputs = Tensor2::from_vec(n, rows * cols, data).expect("payload length checked");
    Ok((
        inputs,
        label_bytes.iter().map(|&l| usize::from(l)).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

fn resolve(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        return plain;
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        plain
    }
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `dir` as a
/// 10-class task on head 0.
pub fn load_mnist_split(dir: &Path, split: Split) -> Result<TaskData> {
    let images = resolve(dir, &format!("{}-images-idx3-ubyte", split.prefix()));
    let labels = resolve(dir, &format!("{}-labels-idx1-ubyte", split.prefix()));
    let (inputs, labels) = load_idx(&images, &labels)?;
    let name = format!("{}:{}", dir.display(), split.prefix());
    TaskData::classification(name, inputs, labels, 10, 0)
}

/// Pixel permutations for `n_tasks` tasks; the first is the identity.
pub fn pixel_permutations(n_tasks: usize, dim: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..n_tasks)
        .map(|t| {
            if t == 0 {
                (0..dim).collect()
            } else {
                Rng::derived(seed, "permutation", t as u64).permutation(dim)
            }
        })
        .collect()
}

/// Output pixel `j` takes input pixel `perm[j]`.
pub fn apply_permutation(inputs: &Tensor2, perm: &[usize]) -> Result<Tensor2> {
    if perm.len() != inputs.cols() {
        return Err(Error::shape("apply_permutation", inputs.cols(), perm.len()));
    }
    Ok(Tensor2::from_fn(inputs.rows(), inputs.cols(), |r, c| {
        inputs.get(r, perm[c])
    }))
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        inv[p] = j;
    }
    inv
}

/// Permuted-pixel task stream sharing a single head.
pub fn permuted_tasks(base: &TaskData, n_tasks: usize, seed: u64) -> Result<Vec<TaskData>> {
    if n_tasks == 0 {
        return Err(Error::Contract(
            "permuted_tasks needs at least one task".into(),
        ));
    }
    pixel_permutations(n_tasks, base.input_dim(), seed)
        .iter()
        .enumerate()
        .map(|(t, perm)| {
            Ok(TaskData {
                name: format!("permuted-{t}"),
                inputs: apply_permutation(&base.inputs, perm)?,
                targets: base.targets.clone(),
                head: 0,
            })
        })
        .collect()
}

pub const DEFAULT_SPLIT_PAIRS: [(usize, usize); 5] = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)];

/// Binary tasks, one per label pair, each on its own head. The first label of a
/// pair maps to 0, the second to 1.
pub fn split_tasks(base: &TaskData, pairs: &[(usize, usize)]) -> Result<Vec<TaskData>> {
    let labels = base
        .labels()
        .ok_or_else(|| Error::Contract("split_tasks needs a classification dataset".into()))?;
    let mut seen = BTreeSet::new();
    for &(a, b) in pairs {
        if !seen.insert(a) || !seen.insert(b) {
            return Err(Error::Contract(format!(
                "label pairs overlap at ({a}, {b})"
            )));
        }
    }
    pairs
        .iter()
        .enumerate()
        .map(|(t, &(a, b))| {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == a || labels[i] == b)
                .collect();
            for l in [a, b] {
                if !idx.iter().any(|&i| labels[i] == l) {
                    return Err(Error::Contract(format!(
                        "label {l} does not occur in the base dataset"
                    )));
                }
            }
            let remapped = idx.iter().map(|&i| usize::from(labels[i] == b)).collect();
            TaskData::classification(
                format!("split-{a}{b}"),
                base.inputs.select_rows(&idx),
                remapped,
                2,
                t,
            )
        })
        .collect()
}

/// One task of the synthetic sequence `y = w·x + b + N(0, noise_var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegTask {
    pub w: f64,
    pub b: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub noise_var: f64,
}

impl LinRegTask {
    pub fn to_task_data(&self, index: usize) -> TaskData {
        let inputs = Tensor2::from_vec(self.x.len(), 1, self.x.clone()).expect("column vector");
        TaskData::regression(format!("linreg-{index}"), inputs, self.y.clone(), 0)
            .expect("aligned by construction")
    }

    /// Mean squared error of the line `w·x + b` on this task.
    pub fn mse(&self, w: f64, b: f64) -> f64 {
        let n = self.x.len() as f64;
        self.x
            .iter()
            .zip(&self.y)
            .map(|(x, y)| {
                let r = y - (w * x + b);
                r * r
            })
            .sum::<f64>()
            / n
    }
}

pub fn linreg_sequence(
    true_params: &[(f64, f64)],
    n_per_task: usize,
    seed: u64,
) -> Result<Vec<LinRegTask>> {
    linreg_sequence_with_noise(true_params, n_per_task, LINREG_NOISE_VAR, seed)
}

/// As [`linreg_sequence`] with an explicit noise variance (zero gives noiseless lines).
pub fn linreg_sequence_with_noise(
    true_params: &[(f64, f64)],
    n_per_task: usize,
    noise_var: f64,
    seed: u64,
) -> Result<Vec<LinRegTask>> {
    if n_per_task == 0 {
        return Err(Error::Contract(
            "linreg tasks need at least one point".into(),
        ));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::Contract(format!(
            "noise variance must be >= 0, got {noise_var}"
        )));
    }
    let noise_std = noise_var.sqrt();
    Ok(true_params
        .iter()
        .enumerate()
        .map(|(t, &(w, b))| {
            let mut rng = Rng::derived(seed, "linreg", t as u64);
            let x: Vec<f64> = (0..n_per_task).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let y = x
                .iter()
                .map(|&xi| w * xi + b + noise_std * rng.standard_normal())
                .collect();
            LinRegTask {
                w,
                b,
                x,
                y,
                noise_var,
            }
        })
        .collect())
}
