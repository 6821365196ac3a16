//! In-memory datasets, the IDX image/label format and a Gaussian-blob
//! generator with optional rare hard points.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::Target;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes {
        labels: Vec<usize>,
        num_classes: usize,
    },
    Values {
        values: Vec<f64>,
        dims: usize,
    },
}

/// Row-major features plus class labels or regression targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dims: usize,
    targets: Targets,
}

impl Dataset {
    pub fn classification(
        features: Vec<f64>,
        dims: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if dims == 0 {
            return Err(Error::InvalidArgument(
                "feature dimension must be positive".into(),
            ));
        }
        check_len("feature rows", labels.len() * dims, features.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Index {
                what: "label",
                index: bad,
                len: num_classes,
            });
        }
        Ok(Dataset {
            features,
            dims,
            targets: Targets::Classes {
                labels,
                num_classes,
            },
        })
    }

    pub fn regression(
        features: Vec<f64>,
        dims: usize,
        values: Vec<f64>,
        target_dims: usize,
    ) -> Result<Self> {
        if dims == 0 || target_dims == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        let rows = features.len() / dims;
        check_len("feature rows", rows * dims, features.len())?;
        check_len("target rows", rows * target_dims, values.len())?;
        Ok(Dataset {
            features,
            dims,
            targets: Targets::Values {
                values,
                dims: target_dims,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn target(&self, i: usize) -> Target<'_> {
        match &self.targets {
            Targets::Classes { labels, .. } => Target::Class(labels[i]),
            Targets::Values { values, dims } => Target::Values(&values[i * dims..(i + 1) * dims]),
        }
    }

    /// Class used by the loss predictor's embedding; regression data has a
    /// single pseudo-class.
    pub fn class_of(&self, i: usize) -> usize {
        match &self.targets {
            Targets::Classes { labels, .. } => labels[i],
            Targets::Values { .. } => 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        match &self.targets {
            Targets::Classes { num_classes, .. } => *num_classes,
            Targets::Values { .. } => 1,
        }
    }

    /// Width of the model output layer.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Classes { num_classes, .. } => *num_classes,
            Targets::Values { dims, .. } => *dims,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            needed: offset + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::Magic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Pixel bytes of an IDX image file: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    check_magic(&bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok((count, rows, cols, bytes[16..needed].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    check_magic(&bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

/// Loads an IDX image/label pair; pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (count, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::classification(features, rows * cols, labels, num_classes)
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let per = rows * cols;
    if per == 0 || !pixels.len().is_multiple_of(per) {
        return Err(Error::InvalidArgument(
            "pixel buffer is not a whole number of images".into(),
        ));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [
        IDX_IMAGES_MAGIC,
        (pixels.len() / per) as u32,
        rows as u32,
        cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Gaussian blobs: class means evenly spaced on a circle of `radius` in the
/// first two coordinates, isotropic noise `noise` in every coordinate.
///
/// A `hard_fraction` of the points of each class is moved to a rare cluster
/// centred at `hard_scale` times the mean of the next class, keeping its
/// label. Those points are learnable but sit beyond another class's blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub dims: usize,
    pub classes: usize,
    pub radius: f64,
    pub noise: f64,
    pub hard_fraction: f64,
    pub hard_scale: f64,
    pub hard_noise: f64,
    /// Relative class frequencies; equal when empty.
    pub proportions: Vec<f64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 1024,
            dims: 2,
            classes: 2,
            radius: 2.0,
            noise: 0.5,
            hard_fraction: 0.0,
            hard_scale: 1.75,
            hard_noise: 0.15,
            proportions: Vec::new(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.classes < 2 {
            return Err(format!("classes = {} must be >= 2", self.classes));
        }
        if self.n < self.classes {
            return Err(format!(
                "n = {} must be >= classes = {}",
                self.n, self.classes
            ));
        }
        if self.dims < 2 {
            return Err(format!("dims = {} must be >= 2", self.dims));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("hard_noise", self.hard_noise),
            ("radius", self.radius),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(format!(
                "hard_fraction = {} outside [0, 1]",
                self.hard_fraction
            ));
        }
        if !self.proportions.is_empty() {
            if self.proportions.len() != self.classes {
                return Err(format!(
                    "{} proportions given for {} classes",
                    self.proportions.len(),
                    self.classes
                ));
            }
            if self
                .proportions
                .iter()
                .any(|p| !(*p > 0.0 && p.is_finite()))
            {
                return Err("proportions must be positive".into());
            }
        }
        Ok(())
    }

    /// Exact per-class counts: largest-remainder rounding of the requested
    /// proportions, ties to the lower class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let weights: Vec<f64> = if self.proportions.is_empty() {
            vec![1.0; self.classes]
        } else {
            self.proportions.clone()
        };
        let total: f64 = weights.iter().sum();
        let quotas: Vec<f64> = weights.iter().map(|w| w / total * self.n as f64).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..self.classes).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let missing = self.n - counts.iter().sum::<usize>();
        for &c in order.iter().take(missing) {
            counts[c] += 1;
        }
        counts
    }

    fn class_mean(&self, class: usize) -> [f64; 2] {
        let angle = 2.0 * std::f64::consts::PI * class as f64 / self.classes as f64;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }
}

/// Generates the dataset described by `spec`; deterministic per seed.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate().map_err(|m| Error::config("dataset", m))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = spec.class_counts();
    let noise =
        Normal::new(0.0, spec.noise).map_err(|e| Error::config("dataset.noise", e.to_string()))?;
    let hard_noise = Normal::new(0.0, spec.hard_noise)
        .map_err(|e| Error::config("dataset.hard_noise", e.to_string()))?;

    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(spec.n);
    for (class, &count) in counts.iter().enumerate() {
        let hard = (spec.hard_fraction * count as f64).round() as usize;
        let mean = spec.class_mean(class);
        let far = spec.class_mean((class + 1) % spec.classes);
        for i in 0..count {
            let is_hard = i < hard;
            let (center, dist) = if is_hard {
                (
                    [far[0] * spec.hard_scale, far[1] * spec.hard_scale],
                    &hard_noise,
                )
            } else {
                (mean, &noise)
            };
            let x: Vec<f64> = (0..spec.dims)
                .map(|d| {
                    let c = if d < 2 { center[d] } else { 0.0 };
                    c + dist.sample(&mut rng)
                })
                .collect();
            rows.push((x, class));
        }
    }
    rows.shuffle(&mut rng);
    let labels = rows.iter().map(|(_, c)| *c).collect();
    let features = rows.into_iter().flat_map(|(x, _)| x).collect();
    Dataset::classification(features, spec.dims, labels, spec.classes)
}
