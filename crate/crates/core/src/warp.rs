//! Affine warp parameters, sampling grids, and differentiable
//! linear (1D) / bilinear (2D) interpolation with zero padding.
//!
//! Coordinates are normalized to `[-1, 1]` per axis with pixel-center
//! alignment: pixel `i` of an axis of size `n` sits at `-1 + (2i + 1) / n`.
//! Warps are inverse maps: each target pixel reads the source at its
//! displaced coordinate.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rotation, isotropic scale and translation: `θ = (α, s, t_x, t_y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams<T> {
    pub angle: T,
    pub scale: T,
    pub tx: T,
    pub ty: T,
}

impl<T: Scalar> AffineParams<T> {
    pub fn identity() -> Self {
        Self {
            angle: T::zero(),
            scale: T::one(),
            tx: T::zero(),
            ty: T::zero(),
        }
    }

    /// From an unconstrained 4-vector `(α, ln s, t_x, t_y)` as emitted by a
    /// localizer. The exponential keeps `s > 0`, so the zero vector is the identity.
    pub fn from_raw(raw: &[T]) -> Self {
        Self {
            angle: raw[0],
            scale: raw[1].exp(),
            tx: raw[2],
            ty: raw[3],
        }
    }

    pub fn matrix(&self) -> [[T; 3]; 3] {
        affine_matrix(self)
    }
}

/// Homogeneous matrix `[[s cos α, -s sin α, t_x], [s sin α, s cos α, t_y], [0, 0, 1]]`.
pub fn affine_matrix<T: Scalar>(p: &AffineParams<T>) -> [[T; 3]; 3] {
    let (sin, cos) = p.angle.sin_cos();
    let (z, o) = (T::zero(), T::one());
    [
        [p.scale * cos, -p.scale * sin, p.tx],
        [p.scale * sin, p.scale * cos, p.ty],
        [z, z, o],
    ]
}

/// Closed-form inverse: rotation by `-α`, scale `1/s`, translation `-R(-α) t / s`.
pub fn affine_matrix_inverse<T: Scalar>(p: &AffineParams<T>) -> [[T; 3]; 3] {
    let (sin, cos) = p.angle.sin_cos();
    let inv_s = p.scale.recip();
    let (a, b) = (inv_s * cos, inv_s * sin);
    let (z, o) = (T::zero(), T::one());
    [
        [a, b, -(a * p.tx + b * p.ty)],
        [-b, a, -(-b * p.tx + a * p.ty)],
        [z, z, o],
    ]
}

/// Points in normalized coordinates, `dim` values per point, with the
/// spatial shape of the target they were laid out for.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid<T> {
    dim: usize,
    shape: Vec<usize>,
    coords: Vec<T>,
}

impl<T: Scalar> SampleGrid<T> {
    pub fn from_coords(shape: &[usize], coords: Vec<T>) -> Result<Self> {
        let dim = shape.len();
        let n: usize = shape.iter().product();
        if !(1..=2).contains(&dim) || coords.len() != n * dim {
            return Err(Error::Config(format!(
                "grid of shape {shape:?} needs {} coordinates, got {}",
                n * dim,
                coords.len()
            )));
        }
        Ok(Self {
            dim,
            shape: shape.to_vec(),
            coords,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Target spatial shape (`[len]` or `[height, width]`).
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Applies a homogeneous 2D matrix to every point.
    pub fn transformed(&self, m: &[[T; 3]; 3]) -> Result<Self> {
        if self.dim != 2 {
            return Err(Error::Config("affine warps need a 2D grid".into()));
        }
        let coords = self
            .coords
            .chunks(2)
            .flat_map(|p| {
                [
                    m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
                    m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
                ]
            })
            .collect();
        Ok(Self {
            dim: 2,
            shape: self.shape.clone(),
            coords,
        })
    }
}

fn pixel_center<T: Scalar>(i: usize, n: usize) -> T {
    -T::one() + T::from_usize_lossy(2 * i + 1) / T::from_usize_lossy(n)
}

/// Pixel-center grid of a `height × width` image, row-major, points stored as `(x, y)`.
pub fn make_grid_2d<T: Scalar>(height: usize, width: usize) -> Result<SampleGrid<T>> {
    if height == 0 || width == 0 {
        return Err(Error::Config(format!("grid dimensions must be positive, got {height}x{width}")));
    }
    let mut coords = Vec::with_capacity(2 * height * width);
    for r in 0..height {
        let y = pixel_center(r, height);
        for c in 0..width {
            coords.push(pixel_center(c, width));
            coords.push(y);
        }
    }
    SampleGrid::from_coords(&[height, width], coords)
}

/// Pixel-center grid of a length-`len` series.
pub fn make_grid_1d<T: Scalar>(len: usize) -> Result<SampleGrid<T>> {
    if len == 0 {
        return Err(Error::Config("grid length must be positive".into()));
    }
    SampleGrid::from_coords(&[len], (0..len).map(|i| pixel_center(i, len)).collect())
}

/// Nonzero interpolation taps for one output sample.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpJacobianRow<T> {
    /// Flat spatial indices into the source (per channel).
    pub indices: Vec<usize>,
    pub weights: Vec<T>,
}

/// Continuous pixel index of normalized coordinate `u` on an axis of size `n`,
/// snapped onto an exact integer when within a few ulps of one so that
/// identity and whole-pixel warps reproduce the source bit-exactly.
fn to_pixel<T: Scalar>(u: T, n: usize) -> T {
    let nn = T::from_usize_lossy(n);
    let p = ((u + T::one()) * nn - T::one()) / T::lit(2.0);
    let r = p.round();
    if (p - r).abs() <= T::epsilon() * T::lit(64.0) * nn {
        r
    } else {
        p
    }
}

/// Index `i` if inside `[0, n)`.
fn tap(i: i64, n: usize) -> Option<usize> {
    usize::try_from(i).ok().filter(|&i| i < n)
}

/// Linear taps: `(index, weight, d weight / d pixel)` for up to two neighbors.
fn taps_1d<T: Scalar>(p: T, n: usize) -> [(Option<usize>, T, T); 2] {
    let f0 = p.floor();
    let i0 = f0.to_i64().unwrap_or(i64::MIN / 2);
    let frac = p - f0;
    [
        (tap(i0, n), T::one() - frac, -T::one()),
        (tap(i0 + 1, n), frac, T::one()),
    ]
}

/// Bilinear taps: `(index, weight, d weight / d px, d weight / d py)`.
fn taps_2d<T: Scalar>(px: T, py: T, h: usize, w: usize) -> [(Option<usize>, T, T, T); 4] {
    let [(cx0, wx0, dx0), (cx1, wx1, dx1)] = taps_1d(px, w);
    let [(ry0, wy0, dy0), (ry1, wy1, dy1)] = taps_1d(py, h);
    let idx = |r: Option<usize>, c: Option<usize>| match (r, c) {
        (Some(r), Some(c)) => Some(r * w + c),
        _ => None,
    };
    [
        (idx(ry0, cx0), wy0 * wx0, wy0 * dx0, dy0 * wx0),
        (idx(ry0, cx1), wy0 * wx1, wy0 * dx1, dy0 * wx1),
        (idx(ry1, cx0), wy1 * wx0, wy1 * dx0, dy1 * wx0),
        (idx(ry1, cx1), wy1 * wx1, wy1 * dx1, dy1 * wx1),
    ]
}

fn check_source<T: Scalar>(source: &Tensor<T>, grid: &SampleGrid<T>) -> Result<(usize, Vec<usize>)> {
    let s = source.shape();
    if s.len() != grid.dim() + 1 {
        return Err(Error::Config(format!(
            "{}D grid cannot sample a source of shape {s:?} (expected [C, ...spatial])",
            grid.dim()
        )));
    }
    if let Some(i) = grid.coords().iter().position(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("NaN sample coordinate at index {i}")));
    }
    Ok((s[0], s[1..].to_vec()))
}

/// Interpolation taps of every grid point against a source of spatial shape `spatial`.
pub fn interp_rows<T: Scalar>(spatial: &[usize], grid: &SampleGrid<T>) -> Vec<InterpJacobianRow<T>> {
    (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            let mut row = InterpJacobianRow {
                indices: Vec::new(),
                weights: Vec::new(),
            };
            let mut push = |idx: Option<usize>, wgt: T| {
                if let Some(idx) = idx {
                    if wgt != T::zero() {
                        row.indices.push(idx);
                        row.weights.push(wgt);
                    }
                }
            };
            if grid.dim() == 1 {
                for (idx, wgt, _) in taps_1d(to_pixel(p[0], spatial[0]), spatial[0]) {
                    push(idx, wgt);
                }
            } else {
                let (h, w) = (spatial[0], spatial[1]);
                for (idx, wgt, _, _) in taps_2d(to_pixel(p[0], w), to_pixel(p[1], h), h, w) {
                    push(idx, wgt);
                }
            }
            row
        })
        .collect()
}

/// Samples `source` (`[C, L]` or `[C, H, W]`) at the grid points.
/// Output has shape `[C, ...grid.shape()]`; samples outside the source read zeros.
pub fn sample<T: Scalar>(source: &Tensor<T>, grid: &SampleGrid<T>) -> Result<Tensor<T>> {
    let (channels, spatial) = check_source(source, grid)?;
    let src_len: usize = spatial.iter().product();
    let n = grid.len();
    let mut out_shape = vec![channels];
    out_shape.extend_from_slice(grid.shape());
    let mut out = Tensor::zeros(&out_shape);
    let sd = source.data();
    let od = out.data_mut();
    for i in 0..n {
        let p = grid.point(i);
        if grid.dim() == 1 {
            let taps = taps_1d(to_pixel(p[0], spatial[0]), spatial[0]);
            for c in 0..channels {
                let mut acc = T::zero();
                for &(idx, wgt, _) in &taps {
                    if let Some(idx) = idx {
                        acc += wgt * sd[c * src_len + idx];
                    }
                }
                od[c * n + i] = acc;
            }
        } else {
            let (h, w) = (spatial[0], spatial[1]);
            let taps = taps_2d(to_pixel(p[0], w), to_pixel(p[1], h), h, w);
            for c in 0..channels {
                let mut acc = T::zero();
                for &(idx, wgt, _, _) in &taps {
                    if let Some(idx) = idx {
                        acc += wgt * sd[c * src_len + idx];
                    }
                }
                od[c * n + i] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of `sample` given the output gradient: `(d source, d grid coordinates)`.
///
/// The coordinate gradient has the grid's layout (`dim` values per point).
pub fn sample_backward<T: Scalar>(
    source: &Tensor<T>,
    grid: &SampleGrid<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (channels, spatial) = check_source(source, grid)?;
    let src_len: usize = spatial.iter().product();
    let n = grid.len();
    if grad_out.len() != channels * n {
        return Err(Error::Config(format!(
            "output gradient has {} values, expected {}",
            grad_out.len(),
            channels * n
        )));
    }
    let mut gsrc = Tensor::zeros(source.shape());
    let mut gcoord = vec![T::zero(); grid.coords().len()];
    let sd = source.data();
    let gd = grad_out.data();
    let gs = gsrc.data_mut();
    for i in 0..n {
        let p = grid.point(i);
        if grid.dim() == 1 {
            let len = spatial[0];
            let taps = taps_1d(to_pixel(p[0], len), len);
            let du = T::from_usize_lossy(len) / T::lit(2.0);
            let mut g = T::zero();
            for c in 0..channels {
                let go = gd[c * n + i];
                for &(idx, wgt, dw) in &taps {
                    if let Some(idx) = idx {
                        gs[c * src_len + idx] += wgt * go;
                        g += go * dw * sd[c * src_len + idx];
                    }
                }
            }
            gcoord[i] = g * du;
        } else {
            let (h, w) = (spatial[0], spatial[1]);
            let taps = taps_2d(to_pixel(p[0], w), to_pixel(p[1], h), h, w);
            let (dux, duy) = (T::from_usize_lossy(w) / T::lit(2.0), T::from_usize_lossy(h) / T::lit(2.0));
            let (mut gx, mut gy) = (T::zero(), T::zero());
            for c in 0..channels {
                let go = gd[c * n + i];
                for &(idx, wgt, dwx, dwy) in &taps {
                    if let Some(idx) = idx {
                        let s = sd[c * src_len + idx];
                        gs[c * src_len + idx] += wgt * go;
                        gx += go * dwx * s;
                        gy += go * dwy * s;
                    }
                }
            }
            gcoord[2 * i] = gx * dux;
            gcoord[2 * i + 1] = gy * duy;
        }
    }
    Ok((gsrc, gcoord))
}

/// Affine-warps `source` (`[C, H, W]`) with raw parameters `(α, ln s, t_x, t_y)`.
pub fn warp_affine<T: Scalar>(source: &Tensor<T>, grid: &SampleGrid<T>, raw: &[T]) -> Result<Tensor<T>> {
    check_raw(raw)?;
    let moved = grid.transformed(&affine_matrix(&AffineParams::from_raw(raw)))?;
    sample(source, &moved)
}

fn check_raw<T: Scalar>(raw: &[T]) -> Result<()> {
    if raw.len() != 4 {
        return Err(Error::Config(format!("affine warp needs 4 parameters, got {}", raw.len())));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite affine parameters {raw:?}")));
    }
    Ok(())
}

/// Displaced points of an affine warp and their Jacobian w.r.t. the raw
/// parameters, laid out `[point][axis][param]`.
pub fn affine_points_with_jacobian<T: Scalar>(grid: &SampleGrid<T>, raw: &[T]) -> Result<(SampleGrid<T>, Vec<T>)> {
    check_raw(raw)?;
    let p = AffineParams::from_raw(raw);
    let moved = grid.transformed(&affine_matrix(&p))?;
    let mut jac = Vec::with_capacity(moved.len() * 8);
    for i in 0..moved.len() {
        let q = moved.point(i);
        let (rx, ry) = (q[0] - p.tx, q[1] - p.ty);
        // x' = s(cos α u - sin α v) + t_x, y' = s(sin α u + cos α v) + t_y, s = exp(raw[1])
        jac.extend_from_slice(&[-ry, rx, T::one(), T::zero()]);
        jac.extend_from_slice(&[rx, ry, T::zero(), T::one()]);
    }
    Ok((moved, jac))
}
