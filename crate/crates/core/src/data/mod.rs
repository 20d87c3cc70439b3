//! Datasets: readers, seeded subsets, normalization, the traditional-DA
//! batch stream, and synthetic generators.

mod augment;
mod idx;
mod synth;
mod ucr;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::rng_from_seed;

pub use augment::{sample_prior_theta, traditional_da, BatchStream, DaSpec};
pub use idx::{read_idx, read_idx_tensor, write_idx, IdxFile, TYPE_U8};
pub use synth::{synth_dataset, SynthKind, SynthSpec};
pub use ucr::{format_ucr, parse_ucr, parse_ucr_pair, read_ucr, read_ucr_pair};

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Inputs `[n, C, ...spatial]` with class-index labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Stats applied to `inputs`, if normalized.
    pub norm: Option<NormStats>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Tensor<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.shape().len() < 3 {
            return Err(Error::Data(format!("inputs must be [n, C, ...], got {:?}", inputs.shape())));
        }
        if inputs.batch() != labels.len() {
            return Err(Error::Data(format!("{} inputs but {} labels", inputs.batch(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            norm: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example shape `[C, ...spatial]`.
    pub fn item_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn channels(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            norm: self.norm.clone(),
        }
    }

    /// Indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.class_indices().iter().map(Vec::len).collect()
    }
}

/// MNIST-style pair of IDX files as a `[n, 1, H, W]` dataset; the class
/// count is one past the largest label.
pub fn load_idx_pair<T: Scalar>(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset<T>> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?.to_labels()?;
    let mut shape = img.dims.clone();
    match shape.len() {
        3 => shape.insert(1, 1),
        4 => {}
        _ => return Err(Error::Data(format!("image file must be rank 3 or 4, got dims {:?}", img.dims))),
    }
    let inputs = img.to_tensor::<T>().reshape(&shape)?;
    let classes = lab.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(inputs, lab, classes)
}

/// The standard split file names inside an MNIST directory.
pub fn load_mnist<T: Scalar>(dir: impl AsRef<Path>, train: bool) -> Result<Dataset<T>> {
    let dir = dir.as_ref();
    let prefix = if train { "train" } else { "test" };
    load_idx_pair(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub size: usize,
    pub seed: u64,
    pub balanced: bool,
}

/// Seeded subset of `size` examples in shuffled order. Balanced subsets hold
/// `⌊k/C⌋` or `⌈k/C⌉` examples of every class.
pub fn subsample<T: Scalar>(data: &Dataset<T>, spec: SubsetSpec) -> Result<Dataset<T>> {
    let k = spec.size;
    if k == 0 || k > data.len() {
        return Err(Error::Config(format!("subset size {k} not in 1..={}", data.len())));
    }
    let mut rng = rng_from_seed(spec.seed);
    let mut chosen = if spec.balanced {
        let c = data.classes;
        if k < c {
            return Err(Error::Config(format!("balanced subset of {k} cannot cover {c} classes")));
        }
        let mut extra: Vec<usize> = (0..c).collect();
        extra.shuffle(&mut rng);
        let mut wants = vec![k / c; c];
        for &cls in &extra[..k % c] {
            wants[cls] += 1;
        }
        let mut chosen = Vec::with_capacity(k);
        for (cls, mut idx) in data.class_indices().into_iter().enumerate() {
            if idx.len() < wants[cls] {
                return Err(Error::Config(format!(
                    "class {cls} has {} examples, balanced subset needs {}",
                    idx.len(),
                    wants[cls]
                )));
            }
            idx.shuffle(&mut rng);
            chosen.extend_from_slice(&idx[..wants[cls]]);
        }
        chosen
    } else {
        let mut all: Vec<usize> = (0..data.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(k);
        all
    };
    chosen.shuffle(&mut rng);
    Ok(data.select(&chosen))
}

/// Seeded split into `(first, second)` with `round(fraction · n)` examples in
/// the second part.
pub fn split<T: Scalar>(data: &Dataset<T>, fraction: f64, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("split fraction {fraction} not in [0, 1)")));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let second = (fraction * data.len() as f64).round() as usize;
    let (b, a) = idx.split_at(second);
    Ok((data.select(a), data.select(b)))
}

impl NormStats {
    /// Population mean and std per channel; a zero std is replaced by 1.
    pub fn fit<T: Scalar>(data: &Dataset<T>) -> Self {
        let c = data.channels();
        let per = data.inputs.item_len() / c;
        let mut sum = vec![0.0; c];
        for i in 0..data.len() {
            for (ch, chunk) in data.inputs.item(i).chunks(per).enumerate() {
                sum[ch] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
        let n = (data.len() * per) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = (0..c)
            .map(|ch| {
                let mut acc = 0.0;
                for i in 0..data.len() {
                    for v in &data.inputs.item(i)[ch * per..(ch + 1) * per] {
                        let d = v.as_f64() - mean[ch];
                        acc += d * d;
                    }
                }
                let s = (acc / n).sqrt();
                if s > 1e-12 && s.is_finite() {
                    s
                } else {
                    log::warn!("channel {ch} has zero variance; leaving its scale unchanged");
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply<T: Scalar>(&self, data: &mut Dataset<T>) -> Result<()> {
        let c = data.channels();
        if self.mean.len() != c || self.std.len() != c {
            return Err(Error::Data(format!("normalization stats for {} channels, data has {c}", self.mean.len())));
        }
        let per = data.inputs.item_len() / c;
        for (j, v) in data.inputs.data_mut().iter_mut().enumerate() {
            let ch = (j / per) % c;
            *v = T::lit((v.as_f64() - self.mean[ch]) / self.std[ch]);
        }
        data.norm = Some(self.clone());
        Ok(())
    }
}

/// Normalizes `data` with `stats` if given, otherwise with its own fitted stats.
pub fn normalize<T: Scalar>(data: &Dataset<T>, stats: Option<&NormStats>) -> Result<Dataset<T>> {
    if data.norm.is_some() {
        return Err(Error::State("dataset is already normalized".into()));
    }
    let stats = stats.cloned().unwrap_or_else(|| NormStats::fit(data));
    let mut out = data.clone();
    stats.apply(&mut out)?;
    Ok(out)
}

