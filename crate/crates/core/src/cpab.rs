//! Continuous piecewise-affine (CPA) velocity fields and the diffeomorphisms
//! obtained by integrating them.
//!
//! The warp domain is the unit interval / unit square. A [`Tessellation`]
//! splits it into cells; every cell carries an affine velocity. Continuity
//! across shared cell boundaries and a zero-velocity boundary condition are
//! linear constraints `L a = 0` on the stacked cell parameters `a`; an
//! orthonormal basis `B` of `null(L)` gives the low-dimensional
//! parametrization `a = B θ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative singular-value cutoff for the null-space rank decision.
pub const RANK_TOL: f64 = 1e-9;

pub const DEFAULT_STEPS: usize = 100;

/// Cell decomposition of `[0, 1]` (intervals) or `[0, 1]²` (each rectangle
/// of an `nx × ny` grid cut into 4 triangles by its diagonals).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "dim", rename_all = "snake_case")]
pub enum Tessellation {
    #[serde(rename = "1d")]
    Intervals { cells: usize },
    #[serde(rename = "2d")]
    Triangles { nx: usize, ny: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// The field vanishes on the domain boundary, so the domain maps onto itself.
    #[default]
    ZeroVelocity,
    /// Only continuity constraints.
    Free,
}

impl Tessellation {
    pub fn dim(&self) -> usize {
        match self {
            Tessellation::Intervals { .. } => 1,
            Tessellation::Triangles { .. } => 2,
        }
    }

    pub fn num_cells(&self) -> usize {
        match *self {
            Tessellation::Intervals { cells } => cells,
            Tessellation::Triangles { nx, ny } => 4 * nx * ny,
        }
    }

    /// Affine parameters per cell: 2 in 1D (`a x + b`), 6 in 2D.
    pub fn params_per_cell(&self) -> usize {
        match self {
            Tessellation::Intervals { .. } => 2,
            Tessellation::Triangles { .. } => 6,
        }
    }

    pub fn num_raw_params(&self) -> usize {
        self.num_cells() * self.params_per_cell()
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Tessellation::Intervals { cells } => cells > 0,
            Tessellation::Triangles { nx, ny } => nx > 0 && ny > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("empty tessellation {self:?}")))
        }
    }

    /// Cell containing `x`. Points outside the domain go to the nearest cell.
    pub fn cell_of<T: Scalar>(&self, x: &[T]) -> usize {
        match *self {
            Tessellation::Intervals { cells } => axis_cell(x[0], cells),
            Tessellation::Triangles { nx, ny } => {
                let x = [x[0].max(T::zero()).min(T::one()), x[1].max(T::zero()).min(T::one())];
                let (i, j) = (axis_cell(x[0], nx), axis_cell(x[1], ny));
                let (w, h) = (T::from_usize_lossy(nx).recip(), T::from_usize_lossy(ny).recip());
                let half = T::lit(0.5);
                let cx = (T::from_usize_lossy(i) + half) * w;
                let cy = (T::from_usize_lossy(j) + half) * h;
                let dx = (x[0] - cx) / w;
                let dy = (x[1] - cy) / h;
                let tri = if dx.abs() >= dy.abs() {
                    if dx < T::zero() {
                        0
                    } else {
                        1
                    }
                } else if dy < T::zero() {
                    2
                } else {
                    3
                };
                4 * (j * nx + i) + tri
            }
        }
    }

    /// Vertices of a triangle in doubled integer coordinates (corners at even,
    /// rectangle centers at odd positions), so shared vertices compare exactly.
    fn triangle_vertices(&self, cell: usize) -> [(i64, i64); 3] {
        let Tessellation::Triangles { nx, .. } = *self else {
            unreachable!("triangle_vertices on a 1D tessellation")
        };
        let rect = cell / 4;
        let (i, j) = ((rect % nx) as i64, (rect / nx) as i64);
        let c = (2 * i + 1, 2 * j + 1);
        let (x0, x1, y0, y1) = (2 * i, 2 * i + 2, 2 * j, 2 * j + 2);
        match cell % 4 {
            0 => [c, (x0, y0), (x0, y1)],
            1 => [c, (x1, y0), (x1, y1)],
            2 => [c, (x0, y0), (x1, y0)],
            _ => [c, (x0, y1), (x1, y1)],
        }
    }

    /// Constraint matrix rows (each of length `num_raw_params`).
    pub fn constraints(&self, boundary: Boundary) -> Vec<Vec<f64>> {
        let n = self.num_raw_params();
        let mut rows = Vec::new();
        match *self {
            Tessellation::Intervals { cells } => {
                // v_c(x) = a_c x + b_c with params (a_c, b_c) at (2c, 2c+1)
                for k in 1..cells {
                    let x = k as f64 / cells as f64;
                    let mut r = vec![0.0; n];
                    r[2 * (k - 1)] = x;
                    r[2 * (k - 1) + 1] = 1.0;
                    r[2 * k] = -x;
                    r[2 * k + 1] = -1.0;
                    rows.push(r);
                }
                if boundary == Boundary::ZeroVelocity {
                    let mut left = vec![0.0; n];
                    left[1] = 1.0;
                    let mut right = vec![0.0; n];
                    right[2 * (cells - 1)] = 1.0;
                    right[2 * (cells - 1) + 1] = 1.0;
                    rows.push(left);
                    rows.push(right);
                }
            }
            Tessellation::Triangles { nx, ny } => {
                let to_unit = |(a, b): (i64, i64)| (a as f64 / (2 * nx) as f64, b as f64 / (2 * ny) as f64);
                // evaluation row of component `comp` of cell `c` at point p
                let eval = |c: usize, comp: usize, p: (f64, f64), sign: f64, row: &mut [f64]| {
                    let base = 6 * c + 3 * comp;
                    row[base] += sign * p.0;
                    row[base + 1] += sign * p.1;
                    row[base + 2] += sign;
                };
                let mut edges: std::collections::BTreeMap<((i64, i64), (i64, i64)), Vec<usize>> = Default::default();
                for c in 0..self.num_cells() {
                    let v = self.triangle_vertices(c);
                    for (a, b) in [(v[0], v[1]), (v[1], v[2]), (v[0], v[2])] {
                        let key = if a <= b { (a, b) } else { (b, a) };
                        edges.entry(key).or_default().push(c);
                    }
                }
                for ((a, b), cells) in &edges {
                    for p in [to_unit(*a), to_unit(*b)] {
                        for comp in 0..2 {
                            match cells.as_slice() {
                                [c1, c2] => {
                                    let mut r = vec![0.0; n];
                                    eval(*c1, comp, p, 1.0, &mut r);
                                    eval(*c2, comp, p, -1.0, &mut r);
                                    rows.push(r);
                                }
                                [c1] if boundary == Boundary::ZeroVelocity => {
                                    let mut r = vec![0.0; n];
                                    eval(*c1, comp, p, 1.0, &mut r);
                                    rows.push(r);
                                }
                                _ => {}
                            }
                        }
                    }
                }
            }
        }
        rows
    }
}

fn axis_cell<T: Scalar>(x: T, cells: usize) -> usize {
    let k = (x * T::from_usize_lossy(cells)).floor().to_i64().unwrap_or(0);
    k.clamp(0, cells as i64 - 1) as usize
}

/// Orthonormal basis of the constraint null space.
#[derive(Clone, Debug)]
pub struct ConstraintBasis {
    tessellation: Tessellation,
    boundary: Boundary,
    constraints: Vec<Vec<f64>>,
    /// `num_raw_params × dim` row-major.
    basis: Vec<f64>,
    dim: usize,
}

/// Builds `L` for the tessellation and extracts an orthonormal basis of `null(L)`
/// from a full SVD, treating singular values below `RANK_TOL · σ_max` as zero.
pub fn build_basis(tessellation: Tessellation, boundary: Boundary) -> Result<ConstraintBasis> {
    tessellation.validate()?;
    let n = tessellation.num_raw_params();
    let constraints = tessellation.constraints(boundary);
    let basis_cols: Vec<Vec<f64>> = if constraints.is_empty() {
        (0..n)
            .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        // pad to at least n rows so the thin SVD yields a full right basis
        let m = constraints.len().max(n);
        let l = DMatrix::from_fn(m, n, |r, c| constraints.get(r).map_or(0.0, |row| row[c]));
        let svd = l.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not return V".into()))?;
        let sigma_max = svd.singular_values.max();
        (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] <= RANK_TOL * sigma_max)
            .map(|k| v_t.row(k).iter().copied().collect())
            .collect()
    };
    let dim = basis_cols.len();
    if dim == 0 {
        return Err(Error::Config(format!(
            "tessellation {tessellation:?} with {boundary:?} boundary leaves no free parameters"
        )));
    }
    let mut basis = vec![0.0; n * dim];
    for (j, col) in basis_cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            basis[i * dim + j] = v;
        }
    }
    Ok(ConstraintBasis {
        tessellation,
        boundary,
        constraints,
        basis,
        dim,
    })
}

impl ConstraintBasis {
    pub fn tessellation(&self) -> Tessellation {
        self.tessellation
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Number of free parameters `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constraints(&self) -> &[Vec<f64>] {
        &self.constraints
    }

    /// `B[i][j]` for raw parameter `i` and basis direction `j`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.basis[i * self.dim + j]
    }

    /// Raw cell parameters `B θ`.
    pub fn cell_params<T: Scalar>(&self, theta: &[T]) -> Vec<T> {
        let n = self.tessellation.num_raw_params();
        (0..n)
            .map(|i| {
                let row = &self.basis[i * self.dim..(i + 1) * self.dim];
                row.iter().zip(theta).map(|(&b, &t)| T::lit(b) * t).sum()
            })
            .collect()
    }

    /// Velocity field for `θ`.
    pub fn field<T: Scalar>(&self, theta: &[T]) -> Result<VelocityField<'_, T>> {
        if theta.len() != self.dim {
            return Err(Error::Config(format!("expected {} CPA parameters, got {}", self.dim, theta.len())));
        }
        if let Some(i) = theta.iter().position(|t| !t.is_finite()) {
            return Err(Error::Numeric(format!("non-finite CPA parameter at index {i}")));
        }
        Ok(VelocityField {
            basis: self,
            params: self.cell_params(theta),
            basis_t: self.basis.iter().map(|&b| T::lit(b)).collect(),
        })
    }
}

/// `v(x) = A_c [x; 1]` for the cell `c` containing `x`.
pub struct VelocityField<'a, T> {
    basis: &'a ConstraintBasis,
    params: Vec<T>,
    basis_t: Vec<T>,
}

impl<T: Scalar> VelocityField<'_, T> {
    fn dim(&self) -> usize {
        self.basis.tessellation.dim()
    }

    pub fn eval(&self, x: &[T], out: &mut [T]) {
        let c = self.basis.tessellation.cell_of(x);
        self.eval_in_cell(c, x, out);
    }

    pub fn eval_in_cell(&self, c: usize, x: &[T], out: &mut [T]) {
        if self.dim() == 1 {
            let p = &self.params[2 * c..2 * c + 2];
            out[0] = p[0] * x[0] + p[1];
        } else {
            let p = &self.params[6 * c..6 * c + 6];
            out[0] = p[0] * x[0] + p[1] * x[1] + p[2];
            out[1] = p[3] * x[0] + p[4] * x[1] + p[5];
        }
    }

    /// Velocity, spatial Jacobian `dv/dx` (row-major `dim × dim`) and
    /// parameter Jacobian `dv/dθ` (row-major `dim × D`) at `x`.
    fn eval_with_jacobians(&self, x: &[T], v: &mut [T], dvdx: &mut [T], dvdt: &mut [T]) {
        let c = self.basis.tessellation.cell_of(x);
        self.eval_in_cell(c, x, v);
        let d = self.basis.dim;
        let b = &self.basis_t;
        if self.dim() == 1 {
            dvdx[0] = self.params[2 * c];
            for j in 0..d {
                dvdt[j] = b[2 * c * d + j] * x[0] + b[(2 * c + 1) * d + j];
            }
        } else {
            let p = &self.params[6 * c..6 * c + 6];
            dvdx.copy_from_slice(&[p[0], p[1], p[3], p[4]]);
            for comp in 0..2 {
                let r = 6 * c + 3 * comp;
                for j in 0..d {
                    dvdt[comp * d + j] = b[r * d + j] * x[0] + b[(r + 1) * d + j] * x[1] + b[(r + 2) * d + j];
                }
            }
        }
    }
}

fn clamp_unit<T: Scalar>(x: &mut [T]) -> [bool; 2] {
    let mut clamped = [false; 2];
    for (k, v) in x.iter_mut().enumerate() {
        if *v < T::zero() {
            *v = T::zero();
            clamped[k] = true;
        } else if *v > T::one() {
            *v = T::one();
            clamped[k] = true;
        }
    }
    clamped
}

fn check_points<T: Scalar>(points: &[T], dim: usize, n_steps: usize) -> Result<()> {
    if n_steps == 0 {
        return Err(Error::Config("integration needs at least one step".into()));
    }
    if !points.len().is_multiple_of(dim) {
        return Err(Error::Config(format!("{} coordinates is not a multiple of dim {dim}", points.len())));
    }
    Ok(())
}

impl ConstraintBasis {
    /// `φ^θ(x; t)`: fixed-step RK4 flow of every point (unit-domain coordinates,
    /// `dim` per point) over `[0, t]`, clamped to the closed domain.
    pub fn integrate_for<T: Scalar>(&self, theta: &[T], points: &[T], n_steps: usize, t: T) -> Result<Vec<T>> {
        let dim = self.tessellation.dim();
        check_points(points, dim, n_steps)?;
        let field = self.field(theta)?;
        let h = t / T::from_usize_lossy(n_steps);
        let half = h / T::lit(2.0);
        let sixth = h / T::lit(6.0);
        let two = T::lit(2.0);
        let mut out = points.to_vec();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) = ([T::zero(); 2], [T::zero(); 2], [T::zero(); 2], [T::zero(); 2], [T::zero(); 2]);
        for x in out.chunks_mut(dim) {
            for _ in 0..n_steps {
                field.eval(x, &mut k1[..dim]);
                for k in 0..dim {
                    tmp[k] = x[k] + half * k1[k];
                }
                field.eval(&tmp[..dim], &mut k2[..dim]);
                for k in 0..dim {
                    tmp[k] = x[k] + half * k2[k];
                }
                field.eval(&tmp[..dim], &mut k3[..dim]);
                for k in 0..dim {
                    tmp[k] = x[k] + h * k3[k];
                }
                field.eval(&tmp[..dim], &mut k4[..dim]);
                for k in 0..dim {
                    x[k] += sixth * (k1[k] + two * k2[k] + two * k3[k] + k4[k]);
                }
                clamp_unit(x);
            }
        }
        Ok(out)
    }

    /// `φ^θ(x; 1)` for every point.
    pub fn integrate<T: Scalar>(&self, theta: &[T], points: &[T], n_steps: usize) -> Result<Vec<T>> {
        self.integrate_for(theta, points, n_steps, T::one())
    }

    /// `φ^θ(x; 1)` and `∂φ/∂θ`, the latter laid out `[point][axis][param]`.
    ///
    /// The sensitivity is the exact derivative of the discrete RK4 recursion
    /// (cell assignments held fixed, which is exact almost everywhere since the
    /// field is continuous).
    pub fn integrate_with_grad<T: Scalar>(&self, theta: &[T], points: &[T], n_steps: usize) -> Result<(Vec<T>, Vec<T>)> {
        let dim = self.tessellation.dim();
        check_points(points, dim, n_steps)?;
        let field = self.field(theta)?;
        let d = self.dim;
        let h = T::one() / T::from_usize_lossy(n_steps);
        let half = h / T::lit(2.0);
        let sixth = h / T::lit(6.0);
        let two = T::lit(2.0);
        let n_points = points.len() / dim;
        let mut out = points.to_vec();
        let mut jac = vec![T::zero(); n_points * dim * d];

        let mut v = [[T::zero(); 2]; 4];
        let mut dvdx = [T::zero(); 4];
        let mut dvdt = vec![T::zero(); 2 * d];
        // stage sensitivities K_s = dv/dx · S_stage + dv/dθ
        let mut ks = vec![vec![T::zero(); dim * d]; 4];
        let mut stage_s = vec![T::zero(); dim * d];
        let mut stage_x = [T::zero(); 2];

        for (x, s) in out.chunks_mut(dim).zip(jac.chunks_mut(dim * d)) {
            for _ in 0..n_steps {
                for stage in 0..4 {
                    let (coef, prev) = match stage {
                        0 => (T::zero(), 0),
                        1 | 2 => (half, stage - 1),
                        _ => (h, 2),
                    };
                    for k in 0..dim {
                        stage_x[k] = x[k] + coef * v[prev][k];
                    }
                    for idx in 0..dim * d {
                        stage_s[idx] = s[idx] + coef * ks[prev][idx];
                    }
                    field.eval_with_jacobians(&stage_x[..dim], &mut v[stage][..dim], &mut dvdx[..dim * dim], &mut dvdt[..dim * d]);
                    let k_stage = &mut ks[stage];
                    for r in 0..dim {
                        for j in 0..d {
                            let mut acc = dvdt[r * d + j];
                            for m in 0..dim {
                                acc += dvdx[r * dim + m] * stage_s[m * d + j];
                            }
                            k_stage[r * d + j] = acc;
                        }
                    }
                }
                for k in 0..dim {
                    x[k] += sixth * (v[0][k] + two * v[1][k] + two * v[2][k] + v[3][k]);
                }
                for idx in 0..dim * d {
                    s[idx] += sixth * (ks[0][idx] + two * ks[1][idx] + two * ks[2][idx] + ks[3][idx]);
                }
                let clamped = clamp_unit(x);
                for k in 0..dim {
                    if clamped[k] {
                        s[k * d..(k + 1) * d].iter_mut().for_each(|g| *g = T::zero());
                    }
                }
            }
        }
        Ok((out, jac))
    }
}
