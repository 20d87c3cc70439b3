//! Transformation families behind one interface: map `θ` to displaced
//! sampling points (with `∂points/∂θ`) and warp inputs with them.

use serde::{Deserialize, Serialize};

use crate::cpab::{build_basis, Boundary, ConstraintBasis, Tessellation};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::warp::{self, make_grid_1d, make_grid_2d, SampleGrid};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// No warp (plain CNN).
    None,
    /// Rotation, log-scale, translation (2D only).
    #[default]
    Affine,
    /// CPAB diffeomorphism on the configured tessellation.
    Diffeo,
}

/// Displaced sampling points for one `θ`, optionally with their Jacobian
/// laid out `[point][axis][param]`.
#[derive(Clone, Debug)]
pub struct Displacement<T> {
    pub points: SampleGrid<T>,
    pub jacobian: Option<Vec<T>>,
}

#[derive(Clone, Debug)]
enum Kind {
    Identity,
    Affine,
    Cpab { basis: ConstraintBasis, n_steps: usize },
}

/// A transformation family bound to one input spatial shape.
#[derive(Clone, Debug)]
pub struct Warper<T> {
    kind: Kind,
    grid: SampleGrid<T>,
}

fn grid_for<T: Scalar>(spatial: &[usize]) -> Result<SampleGrid<T>> {
    match *spatial {
        [len] => make_grid_1d(len),
        [h, w] => make_grid_2d(h, w),
        _ => Err(Error::Config(format!("warps need 1D or 2D inputs, got spatial shape {spatial:?}"))),
    }
}

impl<T: Scalar> Warper<T> {
    pub fn identity(spatial: &[usize]) -> Result<Self> {
        Ok(Self {
            kind: Kind::Identity,
            grid: grid_for(spatial)?,
        })
    }

    pub fn affine(spatial: &[usize]) -> Result<Self> {
        if spatial.len() != 2 {
            return Err(Error::Config("the affine family is defined for 2D inputs only".into()));
        }
        Ok(Self {
            kind: Kind::Affine,
            grid: grid_for(spatial)?,
        })
    }

    pub fn cpab(spatial: &[usize], tessellation: Tessellation, boundary: Boundary, n_steps: usize) -> Result<Self> {
        if tessellation.dim() != spatial.len() {
            return Err(Error::Config(format!(
                "{}D tessellation does not match {}D input",
                tessellation.dim(),
                spatial.len()
            )));
        }
        if n_steps == 0 {
            return Err(Error::Config("CPAB integration needs at least one step".into()));
        }
        Ok(Self {
            kind: Kind::Cpab {
                basis: build_basis(tessellation, boundary)?,
                n_steps,
            },
            grid: grid_for(spatial)?,
        })
    }

    pub fn build(family: Family, spatial: &[usize], tessellation: Tessellation, n_steps: usize) -> Result<Self> {
        match family {
            Family::None => Self::identity(spatial),
            Family::Affine => Self::affine(spatial),
            Family::Diffeo => Self::cpab(spatial, tessellation, Boundary::ZeroVelocity, n_steps),
        }
    }

    pub fn family(&self) -> Family {
        match self.kind {
            Kind::Identity => Family::None,
            Kind::Affine => Family::Affine,
            Kind::Cpab { .. } => Family::Diffeo,
        }
    }

    /// Dimension `D` of `θ`.
    pub fn num_params(&self) -> usize {
        match &self.kind {
            Kind::Identity => 0,
            Kind::Affine => 4,
            Kind::Cpab { basis, .. } => basis.dim(),
        }
    }

    pub fn basis(&self) -> Option<&ConstraintBasis> {
        match &self.kind {
            Kind::Cpab { basis, .. } => Some(basis),
            _ => None,
        }
    }

    pub fn grid(&self) -> &SampleGrid<T> {
        &self.grid
    }

    pub fn spatial(&self) -> &[usize] {
        self.grid.shape()
    }

    fn check_theta(&self, theta: &[T]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::Config(format!(
                "{:?} warp needs {} parameters, got {}",
                self.family(),
                self.num_params(),
                theta.len()
            )));
        }
        if let Some(i) = theta.iter().position(|t| t.is_nan()) {
            return Err(Error::Numeric(format!("NaN warp parameter at index {i}")));
        }
        Ok(())
    }

    pub fn displace(&self, theta: &[T], with_jacobian: bool) -> Result<Displacement<T>> {
        self.check_theta(theta)?;
        match &self.kind {
            Kind::Identity => Ok(Displacement {
                points: self.grid.clone(),
                jacobian: with_jacobian.then(Vec::new),
            }),
            Kind::Affine => {
                let (points, jac) = warp::affine_points_with_jacobian(&self.grid, theta)?;
                Ok(Displacement {
                    points,
                    jacobian: with_jacobian.then_some(jac),
                })
            }
            Kind::Cpab { basis, n_steps } => {
                let half = T::lit(0.5);
                let two = T::lit(2.0);
                let unit: Vec<T> = self.grid.coords().iter().map(|&u| (u + T::one()) * half).collect();
                let (moved, jac) = if with_jacobian {
                    let (m, j) = basis.integrate_with_grad(theta, &unit, *n_steps)?;
                    (m, Some(j.into_iter().map(|v| v * two).collect()))
                } else {
                    (basis.integrate(theta, &unit, *n_steps)?, None)
                };
                let coords = moved.into_iter().map(|x| x * two - T::one()).collect();
                Ok(Displacement {
                    points: SampleGrid::from_coords(self.grid.shape(), coords)?,
                    jacobian: jac,
                })
            }
        }
    }

    /// Warps one input `[C, ...spatial]`.
    pub fn warp(&self, source: &Tensor<T>, theta: &[T]) -> Result<Tensor<T>> {
        if let Kind::Identity = self.kind {
            self.check_theta(theta)?;
            return Ok(source.clone());
        }
        let disp = self.displace(theta, false)?;
        warp::sample(source, &disp.points)
    }

    pub fn warp_displaced(&self, source: &Tensor<T>, disp: &Displacement<T>) -> Result<Tensor<T>> {
        if let Kind::Identity = self.kind {
            return Ok(source.clone());
        }
        warp::sample(source, &disp.points)
    }

    /// `(d source, d θ)` for an output gradient of a warp computed from `disp`.
    pub fn backward_displaced(&self, source: &Tensor<T>, disp: &Displacement<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
        if let Kind::Identity = self.kind {
            return Ok((grad_out.clone().reshape(source.shape())?, Vec::new()));
        }
        let jac = disp
            .jacobian
            .as_ref()
            .ok_or_else(|| Error::State("warp backward needs a displacement computed with its Jacobian".into()))?;
        let (gsrc, gpoints) = warp::sample_backward(source, &disp.points, grad_out)?;
        let d = self.num_params();
        let mut gtheta = vec![T::zero(); d];
        for (g, row) in gpoints.iter().zip(jac.chunks(d)) {
            if *g == T::zero() {
                continue;
            }
            for (gt, &j) in gtheta.iter_mut().zip(row) {
                *gt += *g * j;
            }
        }
        Ok((gsrc, gtheta))
    }

    /// Convenience: gradients of `warp(source, θ)` for an output gradient.
    pub fn warp_backward(&self, source: &Tensor<T>, theta: &[T], grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
        let disp = self.displace(theta, true)?;
        self.backward_displaced(source, &disp, grad_out)
    }
}
