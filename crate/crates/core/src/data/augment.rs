use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transform::Warper;
use crate::{rng_from_seed, Rng};

use super::Dataset;

/// Traditional augmentation: warp every example with `θ ~ N(0, σ_DA² I)`
/// drawn independently, `samples` times per example.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaSpec {
    pub sigma_da: f64,
    pub samples: usize,
}

impl Default for DaSpec {
    fn default() -> Self {
        Self {
            sigma_da: 0.05,
            samples: 1,
        }
    }
}

impl DaSpec {
    fn validate(&self) -> Result<()> {
        if !(self.sigma_da >= 0.0) || !self.sigma_da.is_finite() {
            return Err(Error::Config(format!("sigma_da must be finite and >= 0, got {}", self.sigma_da)));
        }
        if self.samples == 0 {
            return Err(Error::Config("augmentation needs at least one sample per example".into()));
        }
        Ok(())
    }
}

pub fn sample_prior_theta<T: Scalar>(dim: usize, sigma: f64, rng: &mut Rng) -> Vec<T> {
    if sigma == 0.0 {
        return vec![T::zero(); dim];
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    (0..dim).map(|_| T::lit(normal.sample(rng))).collect()
}

/// Warps a batch `[B, ...]` with independent prior draws. Returns
/// `[B · samples, ...]` (sample-major) and the correspondingly repeated labels.
pub fn traditional_da<T: Scalar>(
    inputs: &Tensor<T>,
    labels: &[usize],
    warper: &Warper<T>,
    spec: DaSpec,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Vec<usize>)> {
    spec.validate()?;
    if spec.sigma_da == 0.0 && spec.samples == 1 {
        return Ok((inputs.clone(), labels.to_vec()));
    }
    let item_shape = &inputs.shape()[1..];
    let d = warper.num_params();
    let mut parts = Vec::with_capacity(spec.samples * inputs.batch());
    for _ in 0..spec.samples {
        for b in 0..inputs.batch() {
            let x = Tensor::from_vec(item_shape, inputs.item(b).to_vec())?;
            let theta = sample_prior_theta::<T>(d, spec.sigma_da, rng);
            parts.push(warper.warp(&x, &theta)?);
        }
    }
    let mut shape = inputs.shape().to_vec();
    shape[0] *= spec.samples;
    let data = parts.into_iter().flat_map(|t| t.into_vec()).collect();
    let labels = (0..spec.samples).flat_map(|_| labels.iter().copied()).collect();
    Ok((Tensor::from_vec(&shape, data)?, labels))
}

/// Shuffled mini-batches over one epoch, optionally augmented.
pub struct BatchStream<'a, T> {
    data: &'a Dataset<T>,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    da: Option<(&'a Warper<T>, DaSpec)>,
    rng: Rng,
}

impl<'a, T: Scalar> BatchStream<'a, T> {
    pub fn new(data: &'a Dataset<T>, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            data,
            order,
            pos: 0,
            batch_size,
            da: None,
            rng,
        })
    }

    pub fn with_augmentation(mut self, warper: &'a Warper<T>, spec: DaSpec) -> Result<Self> {
        spec.validate()?;
        self.da = Some((warper, spec));
        Ok(self)
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl<T: Scalar> Iterator for BatchStream<'_, T> {
    type Item = Result<(Tensor<T>, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let x = self.data.inputs.select(idx);
        let y: Vec<usize> = idx.iter().map(|&i| self.data.labels[i]).collect();
        Some(match self.da {
            Some((warper, spec)) => traditional_da(&x, &y, warper, spec, &mut self.rng),
            None => Ok((x, y)),
        })
    }
}
