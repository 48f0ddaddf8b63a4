//! Synthetic labeled vector datasets, CSV ingestion, epoch batching, and the
//! vector-space analog of multi-crop augmentation.
//!
//! Augmentation stands in for the photometric/crop pipeline of image SSL:
//! global views get mild scale jitter and noise, local views get aggressive
//! noise plus coordinate dropout (the "crop" analog). Labels ride along for
//! evaluation only; training never reads them.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::numkernel::Mat;
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset shape (classes {classes}, per_class {per_class}, dim {dim})")]
    InvalidShape {
        classes: usize,
        per_class: usize,
        dim: usize,
    },
    #[error("augmentation dropout probability {0} must lie in [0, 1)")]
    InvalidDropout(f64),
    #[error("{path}: parse error on line {line}: {msg}")]
    ParseError {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{0}: file contains no data rows")]
    EmptyFile(String),
    #[error("label {label} exceeds declared class count {classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An n x d feature matrix with one integer label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Mat,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    /// Assemble from parts. With `declared_classes` the labels must fit;
    /// otherwise the class count is inferred as max label + 1.
    pub fn from_parts(
        features: Mat,
        labels: Vec<usize>,
        declared_classes: Option<usize>,
    ) -> Result<Self, DataError> {
        assert_eq!(features.rows(), labels.len(), "row/label count mismatch");
        let max_label = labels.iter().copied().max().unwrap_or(0);
        let classes = match declared_classes {
            Some(c) => {
                if max_label >= c {
                    return Err(DataError::LabelOutOfRange {
                        label: max_label,
                        classes: c,
                    });
                }
                c
            }
            None => max_label + 1,
        };
        Ok(Dataset {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Copy the given rows into a dense batch matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Mat {
        let mut m = Mat::zeros(indices.len(), self.dim());
        for (r, &i) in indices.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.row(i));
        }
        m
    }

    /// Split by taking the first `n_train` occurrences of each class for the
    /// left side and the rest for the right. Keeps the two sides identically
    /// distributed when the source interleaves or groups classes.
    pub fn split_per_class(&self, n_train: usize) -> (Dataset, Dataset) {
        let mut taken = vec![0usize; self.classes];
        let mut left = Vec::new();
        let mut right = Vec::new();
        for i in 0..self.len() {
            let c = self.labels[i];
            if taken[c] < n_train {
                taken[c] += 1;
                left.push(i);
            } else {
                right.push(i);
            }
        }
        let build = |idx: &[usize]| Dataset {
            features: self.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        };
        (build(&left), build(&right))
    }

    /// Write as CSV: d feature columns then the label.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        for r in 0..self.len() {
            for v in self.row(r) {
                // f32 precision is plenty for interchange.
                let _ = write!(out, "{},", *v as f32);
            }
            let _ = writeln!(out, "{}", self.labels[r]);
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Isotropic Gaussian blobs: C class centers drawn uniformly on the sphere of
/// radius `separation`, points scattered around them with std `noise`.
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes < 2 || per_class < 1 || dim < 2 || separation <= 0.0 {
        return Err(DataError::InvalidShape {
            classes,
            per_class,
            dim,
        });
    }
    let mut rng = Rng::from_seed(seed);
    let mut centers = Mat::zeros(classes, dim);
    for c in 0..classes {
        let row = centers.row_mut(c);
        loop {
            for x in row.iter_mut() {
                *x = rng.normal();
            }
            let norm = crate::numkernel::l2_norm(row);
            if norm > 1e-9 {
                for x in row.iter_mut() {
                    *x *= separation / norm;
                }
                break;
            }
        }
    }
    let n = classes * per_class;
    let mut features = Mat::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        for p in 0..per_class {
            let r = c * per_class + p;
            let row = features.row_mut(r);
            row.copy_from_slice(centers.row(c));
            for x in row.iter_mut() {
                *x += noise * rng.normal();
            }
            labels.push(c);
        }
    }
    Dataset::from_parts(features, labels, Some(classes))
}

/// Augmentation knobs for one view family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub noise_sigma: f64,
    pub dropout_prob: f64,
    pub scale_jitter: f64,
}

impl AugmentSpec {
    pub fn new(noise_sigma: f64, dropout_prob: f64, scale_jitter: f64) -> Result<Self, DataError> {
        if !(0.0..1.0).contains(&dropout_prob) {
            return Err(DataError::InvalidDropout(dropout_prob));
        }
        Ok(AugmentSpec {
            noise_sigma,
            dropout_prob,
            scale_jitter,
        })
    }

    pub fn identity() -> Self {
        AugmentSpec {
            noise_sigma: 0.0,
            dropout_prob: 0.0,
            scale_jitter: 0.0,
        }
    }
}

/// Per row: scale by (1 + u * jitter) with u ~ U[-1,1), add Gaussian noise,
/// then zero each coordinate independently with `dropout_prob`.
pub fn augment(rows: &Mat, spec: &AugmentSpec, rng: &mut Rng) -> Mat {
    let mut out = rows.clone();
    let cols = rows.cols();
    for r in 0..rows.rows() {
        let row = out.row_mut(r);
        let scale = 1.0 + rng.uniform_signed() * spec.scale_jitter;
        for x in row.iter_mut() {
            *x *= scale;
            if spec.noise_sigma > 0.0 {
                *x += spec.noise_sigma * rng.normal();
            }
        }
        if spec.dropout_prob > 0.0 {
            for x in row.iter_mut().take(cols) {
                if rng.uniform() < spec.dropout_prob {
                    *x = 0.0;
                }
            }
        }
    }
    out
}

/// Load a CSV of `d` floats followed by an integer label per row. A first
/// line whose cells do not parse as numbers is treated as a header.
pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut dim: Option<usize> = None;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(DataError::ParseError {
                path: path_str,
                line: line_no,
                msg: "expected at least one feature and a label".into(),
            });
        }
        let parsed: Result<Vec<f64>, _> = cells[..cells.len() - 1]
            .iter()
            .map(|c| c.parse::<f64>())
            .collect();
        let feats = match parsed {
            Ok(f) => f,
            Err(e) => {
                if rows.is_empty() && idx == 0 {
                    continue; // header line
                }
                return Err(DataError::ParseError {
                    path: path_str,
                    line: line_no,
                    msg: format!("non-numeric feature cell: {e}"),
                });
            }
        };
        let label: usize = cells[cells.len() - 1]
            .parse()
            .map_err(|e| DataError::ParseError {
                path: path_str.clone(),
                line: line_no,
                msg: format!("bad label: {e}"),
            })?;
        if let Some(d) = dim {
            if feats.len() != d {
                return Err(DataError::ParseError {
                    path: path_str,
                    line: line_no,
                    msg: format!("expected {d} features, got {}", feats.len()),
                });
            }
        } else {
            dim = Some(feats.len());
        }
        rows.push(feats);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(DataError::EmptyFile(path_str));
    }
    Dataset::from_parts(Mat::from_rows(&rows), labels, None)
}

/// Epoch-deterministic shuffled index batches; the trailing short batch is
/// dropped so every step feeds the memory the same number of vectors.
pub fn batches(n: usize, batch_size: usize, shuffle_seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = Rng::derive(shuffle_seed, &[0x5F_u64, epoch]);
    rng.shuffle(&mut indices);
    indices
        .chunks(batch_size)
        .filter(|c| c.len() == batch_size)
        .map(|c| c.to_vec())
        .collect()
}

/// How many views to build per batch and how to corrupt them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewRecipe {
    pub n_global: usize,
    pub n_local: usize,
    pub global_spec: AugmentSpec,
    pub local_spec: AugmentSpec,
}

/// Augmented views of one batch: `n_global` mild and `n_local` aggressive
/// copies, all row-aligned with `source_indices`.
#[derive(Debug, Clone)]
pub struct ViewBatch {
    pub globals: Vec<Mat>,
    pub locals: Vec<Mat>,
    pub source_indices: Vec<usize>,
}

impl ViewBatch {
    /// Build views with one RNG stream per view, derived from
    /// (seed, epoch, batch index, view index) so workers can fan out without
    /// losing determinism.
    pub fn generate(
        dataset: &Dataset,
        indices: &[usize],
        recipe: &ViewRecipe,
        seed: u64,
        epoch: u64,
        batch_index: u64,
    ) -> ViewBatch {
        let src = dataset.gather_rows(indices);
        let make = |spec: &AugmentSpec, view_idx: u64| {
            let mut rng = Rng::derive(seed, &[0xA6_u64, epoch, batch_index, view_idx]);
            augment(&src, spec, &mut rng)
        };
        let globals = (0..recipe.n_global)
            .map(|v| make(&recipe.global_spec, v as u64))
            .collect();
        let locals = (0..recipe.n_local)
            .map(|v| make(&recipe.local_spec, (recipe.n_global + v) as u64))
            .collect();
        ViewBatch {
            globals,
            locals,
            source_indices: indices.to_vec(),
        }
    }

    pub fn n_views(&self) -> usize {
        self.globals.len() + self.locals.len()
    }
}
