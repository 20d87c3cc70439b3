//! Synthetic datasets whose only nuisance is a random warp from one of the
//! model's transformation families.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cpab::{Boundary, Tessellation};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::transform::Warper;
use crate::rng_from_seed;

use super::augment::sample_prior_theta;
use super::Dataset;

pub const SHAPE_SIZE: usize = 16;
pub const SERIES_LEN: usize = 64;
/// Cells of the interval tessellation used for the 1D nuisance warps.
pub const SERIES_CELLS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Ten seven-segment glyphs on a 16×16 canvas under random affine warps.
    WarpedShapes2d,
    /// Five bump waveforms of length 64 under random CPAB time warps.
    WarpedSeries1d,
}

impl SynthKind {
    pub fn classes(self) -> usize {
        match self {
            SynthKind::WarpedShapes2d => 10,
            SynthKind::WarpedSeries1d => 5,
        }
    }

    /// Per-example shape `[1, ...spatial]`.
    pub fn item_shape(self) -> Vec<usize> {
        match self {
            SynthKind::WarpedShapes2d => vec![1, SHAPE_SIZE, SHAPE_SIZE],
            SynthKind::WarpedSeries1d => vec![1, SERIES_LEN],
        }
    }

    pub fn default_warp_scale(self) -> f64 {
        match self {
            SynthKind::WarpedShapes2d => 0.1,
            SynthKind::WarpedSeries1d => 1.0,
        }
    }

    /// The family and tessellation generating the nuisance warps.
    pub fn warper<T: Scalar>(self) -> Result<Warper<T>> {
        match self {
            SynthKind::WarpedShapes2d => Warper::affine(&[SHAPE_SIZE, SHAPE_SIZE]),
            SynthKind::WarpedSeries1d => Warper::cpab(
                &[SERIES_LEN],
                Tessellation::Intervals { cells: SERIES_CELLS },
                Boundary::ZeroVelocity,
                crate::cpab::DEFAULT_STEPS,
            ),
        }
    }

    /// Un-warped class templates `[classes, 1, ...spatial]`.
    pub fn templates<T: Scalar>(self) -> Tensor<T> {
        let c = self.classes();
        let mut shape = vec![c];
        shape.extend(self.item_shape());
        let data: Vec<f64> = match self {
            SynthKind::WarpedShapes2d => (0..c).flat_map(glyph).collect(),
            SynthKind::WarpedSeries1d => (0..c).flat_map(waveform).collect(),
        };
        Tensor::from_vec(&shape, data.into_iter().map(T::lit).collect()).expect("template shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n: usize,
    pub seed: u64,
    /// Standard deviation of every warp parameter.
    pub warp_scale: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            seed,
            warp_scale: kind.default_warp_scale(),
            noise: 0.0,
        }
    }
}

/// Segments a..g of a seven-segment display lit for each digit.
const SEGMENTS: [&str; 10] = ["abcdef", "bc", "abdeg", "abcdg", "bcfg", "acdfg", "acdefg", "abc", "abcdefg", "abcdfg"];

fn glyph(class: usize) -> Vec<f64> {
    let n = SHAPE_SIZE;
    let mut img = vec![0.0; n * n];
    let (l, r, t, m, b) = (4usize, 10usize, 2usize, 7usize, 12usize);
    let mut hline = |y: usize, x0: usize, x1: usize| {
        for yy in y..y + 2 {
            for x in x0..x1 + 2 {
                img[yy * n + x] = 1.0;
            }
        }
    };
    let segs: Vec<char> = SEGMENTS[class].chars().collect();
    for &s in &segs {
        match s {
            'a' => hline(t, l, r),
            'g' => hline(m, l, r),
            'd' => hline(b, l, r),
            _ => {}
        }
    }
    for &s in &segs {
        let (x, y0, y1) = match s {
            'f' => (l, t, m),
            'b' => (r, t, m),
            'e' => (l, m, b),
            'c' => (r, m, b),
            _ => continue,
        };
        for y in y0..y1 + 2 {
            for xx in x..x + 2 {
                img[y * n + xx] = 1.0;
            }
        }
    }
    img
}

/// `(center, amplitude, width)` bumps per class.
const BUMPS: [&[(f64, f64, f64)]; 5] = [
    &[(0.5, 1.0, 0.08)],
    &[(0.35, 1.0, 0.06), (0.65, -1.0, 0.06)],
    &[(0.35, 1.0, 0.06), (0.65, 1.0, 0.06)],
    &[(0.35, -1.0, 0.06), (0.65, 1.0, 0.06)],
    &[(0.5, 1.0, 0.03)],
];

fn waveform(class: usize) -> Vec<f64> {
    (0..SERIES_LEN)
        .map(|i| {
            let t = (i as f64 + 0.5) / SERIES_LEN as f64;
            BUMPS[class]
                .iter()
                .map(|&(c, a, w)| a * (-0.5 * ((t - c) / w).powi(2)).exp())
                .sum()
        })
        .collect()
}

/// `n` examples with labels cycling through the classes, each a template
/// warped by `θ ~ N(0, warp_scale² I)` plus optional pixel noise.
pub fn synth_dataset<T: Scalar>(spec: SynthSpec) -> Result<Dataset<T>> {
    let kind = spec.kind;
    let c = kind.classes();
    if spec.n < 2 * c {
        return Err(Error::Config(format!("need at least 2 examples per class ({}), got {}", 2 * c, spec.n)));
    }
    if !(spec.warp_scale >= 0.0 && spec.noise >= 0.0) {
        return Err(Error::Config("warp scale and noise must be non-negative".into()));
    }
    let warper = kind.warper::<T>()?;
    let templates = kind.templates::<T>();
    let item_shape = kind.item_shape();
    let mut rng = rng_from_seed(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut data = Vec::with_capacity(spec.n * templates.item_len());
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let y = i % c;
        let template = Tensor::from_vec(&item_shape, templates.item(y).to_vec())?;
        let theta = sample_prior_theta::<T>(warper.num_params(), spec.warp_scale, &mut rng);
        let mut x = warper.warp(&template, &theta)?;
        if spec.noise > 0.0 {
            for v in x.data_mut() {
                *v += T::lit(noise.sample(&mut rng));
            }
        }
        data.extend(x.into_vec());
        labels.push(y);
    }
    let mut shape = vec![spec.n];
    shape.extend(item_shape);
    Dataset::new(Tensor::from_vec(&shape, data)?, labels, c)
}
