//! Conservation-law models: linear advection and isothermal Euler.
//!
//! Euler states are ordered `(ρ, ρu_x, ρu_y[, ρu_z])` and the pressure is
//! `ρ a²` with a constant sound speed `a`.

use thiserror::Error;

/// Largest variable count of any model (3D Euler).
pub const MAX_VARS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("nonpositive density {density:e}{}", fmt_cell(.cell))]
    NonPositiveDensity {
        density: f64,
        cell: Option<[usize; 3]>,
    },
    #[error("axis {axis} out of range for a {dim}D model")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
}

fn fmt_cell(cell: &Option<[usize; 3]>) -> String {
    match cell {
        Some(c) => format!(" in cell ({}, {}, {})", c[0], c[1], c[2]),
        None => String::new(),
    }
}

impl ModelError {
    /// Attaches a cell index to a density error.
    pub fn at_cell(self, cell: [usize; 3]) -> Self {
        match self {
            ModelError::NonPositiveDensity { density, .. } => ModelError::NonPositiveDensity {
                density,
                cell: Some(cell),
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquationKind {
    Advection,
    IsothermalEuler,
}

/// Flux, wavespeed and variable count of a conservation law.
///
/// Implemented by the concrete models so the solver kernels can be
/// monomorphized, and by [`EquationModel`] for the dynamic public API.
pub trait Physics: Copy + Send + Sync {
    fn n_var(&self) -> usize;

    /// Physical flux along `axis`, written to `out[..n_var]`.
    fn flux(&self, u: &[f64], axis: usize, out: &mut [f64]) -> Result<(), ModelError>;

    /// Largest absolute eigenvalue of the flux Jacobian along `axis` at `u`.
    fn wavespeed(&self, u: &[f64], axis: usize) -> Result<f64, ModelError>;

    /// Fluxes along the first `dim` axes, `out[axis * n_var + var]`.
    #[inline(always)]
    fn fluxes(&self, u: &[f64], dim: usize, out: &mut [f64]) -> Result<(), ModelError> {
        let nv = self.n_var();
        for axis in 0..dim {
            self.flux(u, axis, &mut out[axis * nv..(axis + 1) * nv])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advection {
    pub velocity: [f64; 3],
}

impl Physics for Advection {
    #[inline(always)]
    fn n_var(&self) -> usize {
        1
    }

    #[inline(always)]
    fn flux(&self, u: &[f64], axis: usize, out: &mut [f64]) -> Result<(), ModelError> {
        out[0] = self.velocity[axis] * u[0];
        Ok(())
    }

    #[inline(always)]
    fn wavespeed(&self, _u: &[f64], axis: usize) -> Result<f64, ModelError> {
        Ok(self.velocity[axis].abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsothermalEuler {
    pub sound_speed: f64,
    pub dim: usize,
}

impl IsothermalEuler {
    #[inline(always)]
    fn density(u: &[f64]) -> Result<f64, ModelError> {
        let rho = u[0];
        if rho > 0.0 {
            Ok(rho)
        } else {
            Err(ModelError::NonPositiveDensity {
                density: rho,
                cell: None,
            })
        }
    }
}

impl Physics for IsothermalEuler {
    #[inline(always)]
    fn n_var(&self) -> usize {
        self.dim + 1
    }

    #[inline(always)]
    fn flux(&self, u: &[f64], axis: usize, out: &mut [f64]) -> Result<(), ModelError> {
        let rho = Self::density(u)?;
        let m = u[1 + axis];
        let un = m / rho;
        out[0] = m;
        for i in 0..self.dim {
            out[1 + i] = un * u[1 + i];
        }
        out[1 + axis] += rho * self.sound_speed * self.sound_speed;
        Ok(())
    }

    #[inline(always)]
    fn wavespeed(&self, u: &[f64], axis: usize) -> Result<f64, ModelError> {
        let rho = Self::density(u)?;
        Ok((u[1 + axis] / rho).abs() + self.sound_speed)
    }
}

/// Isothermal Euler with the dimension fixed at compile time, so loops over
/// components unroll in the solver kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EulerFixed<const D: usize> {
    pub sound_speed: f64,
}

impl<const D: usize> Physics for EulerFixed<D> {
    #[inline(always)]
    fn n_var(&self) -> usize {
        D + 1
    }

    #[inline(always)]
    fn flux(&self, u: &[f64], axis: usize, out: &mut [f64]) -> Result<(), ModelError> {
        let rho = IsothermalEuler::density(u)?;
        let m = u[1 + axis];
        let un = m / rho;
        out[0] = m;
        for i in 0..D {
            out[1 + i] = un * u[1 + i];
        }
        out[1 + axis] += rho * self.sound_speed * self.sound_speed;
        Ok(())
    }

    #[inline(always)]
    fn wavespeed(&self, u: &[f64], axis: usize) -> Result<f64, ModelError> {
        let rho = IsothermalEuler::density(u)?;
        Ok((u[1 + axis] / rho).abs() + self.sound_speed)
    }

    #[inline(always)]
    fn fluxes(&self, u: &[f64], _dim: usize, out: &mut [f64]) -> Result<(), ModelError> {
        let rho = IsothermalEuler::density(u)?;
        let inv = 1.0 / rho;
        let p = rho * self.sound_speed * self.sound_speed;
        let nv = D + 1;
        for axis in 0..D {
            let m = u[1 + axis];
            let un = m * inv;
            let f = &mut out[axis * nv..(axis + 1) * nv];
            f[0] = m;
            for i in 0..D {
                f[1 + i] = un * u[1 + i];
            }
            f[1 + axis] += p;
        }
        Ok(())
    }
}

/// A validated conservation-law model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EquationModel {
    Advection { velocity: [f64; 3], dim: usize },
    IsothermalEuler { sound_speed: f64, dim: usize },
}

impl EquationModel {
    /// Linear advection with velocity `velocity[..dim]`; unused components
    /// are zeroed.
    pub fn advection(dim: usize, velocity: &[f64]) -> Result<Self, ModelError> {
        check_dim(dim)?;
        if velocity.len() < dim {
            return Err(ModelError::Invalid(format!(
                "advection velocity has {} components, need {dim}",
                velocity.len()
            )));
        }
        if velocity[..dim].iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Invalid("nonfinite advection velocity".into()));
        }
        let mut v = [0.0; 3];
        v[..dim].copy_from_slice(&velocity[..dim]);
        Ok(EquationModel::Advection { velocity: v, dim })
    }

    /// Isothermal Euler with sound speed `sound_speed > 0`.
    pub fn isothermal_euler(dim: usize, sound_speed: f64) -> Result<Self, ModelError> {
        check_dim(dim)?;
        if !(sound_speed > 0.0 && sound_speed.is_finite()) {
            return Err(ModelError::Invalid(format!(
                "sound speed must be positive, got {sound_speed}"
            )));
        }
        Ok(EquationModel::IsothermalEuler { sound_speed, dim })
    }

    pub fn kind(&self) -> EquationKind {
        match self {
            EquationModel::Advection { .. } => EquationKind::Advection,
            EquationModel::IsothermalEuler { .. } => EquationKind::IsothermalEuler,
        }
    }

    pub fn spatial_dim(&self) -> usize {
        match *self {
            EquationModel::Advection { dim, .. } | EquationModel::IsothermalEuler { dim, .. } => dim,
        }
    }

    fn check_axis(&self, axis: usize) -> Result<(), ModelError> {
        let dim = self.spatial_dim();
        if axis < dim {
            Ok(())
        } else {
            Err(ModelError::AxisOutOfRange { axis, dim })
        }
    }

    pub fn physical_flux(&self, u: &[f64], axis: usize) -> Result<Vec<f64>, ModelError> {
        self.check_axis(axis)?;
        let mut out = vec![0.0; self.n_var()];
        self.flux(u, axis, &mut out)?;
        Ok(out)
    }

    /// `max(λ(u⁻), λ(u⁺))` along `axis`.
    pub fn max_wavespeed(&self, u_minus: &[f64], u_plus: &[f64], axis: usize) -> Result<f64, ModelError> {
        self.check_axis(axis)?;
        Ok(self.wavespeed(u_minus, axis)?.max(self.wavespeed(u_plus, axis)?))
    }

    /// Local Lax-Friedrichs flux at an interface with left trace `u_minus`
    /// and right trace `u_plus`.
    pub fn lax_friedrichs(&self, u_minus: &[f64], u_plus: &[f64], axis: usize) -> Result<Vec<f64>, ModelError> {
        self.check_axis(axis)?;
        let mut out = vec![0.0; self.n_var()];
        lax_friedrichs(self, u_minus, u_plus, axis, &mut out)?;
        Ok(out)
    }
}

impl Physics for EquationModel {
    fn n_var(&self) -> usize {
        match *self {
            EquationModel::Advection { .. } => 1,
            EquationModel::IsothermalEuler { dim, .. } => dim + 1,
        }
    }

    fn flux(&self, u: &[f64], axis: usize, out: &mut [f64]) -> Result<(), ModelError> {
        match *self {
            EquationModel::Advection { velocity, .. } => Advection { velocity }.flux(u, axis, out),
            EquationModel::IsothermalEuler { sound_speed, dim } => {
                IsothermalEuler { sound_speed, dim }.flux(u, axis, out)
            }
        }
    }

    fn wavespeed(&self, u: &[f64], axis: usize) -> Result<f64, ModelError> {
        match *self {
            EquationModel::Advection { velocity, .. } => Advection { velocity }.wavespeed(u, axis),
            EquationModel::IsothermalEuler { sound_speed, dim } => {
                IsothermalEuler { sound_speed, dim }.wavespeed(u, axis)
            }
        }
    }
}

fn check_dim(dim: usize) -> Result<(), ModelError> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(ModelError::Invalid(format!("spatial dimension must be 1..=3, got {dim}")))
    }
}

/// `½[F(u⁻) + F(u⁺) − α (u⁺ − u⁻)]` with `α` the larger of the two local
/// wavespeeds.
#[inline(always)]
pub fn lax_friedrichs<P: Physics>(
    model: &P,
    u_minus: &[f64],
    u_plus: &[f64],
    axis: usize,
    out: &mut [f64],
) -> Result<(), ModelError> {
    let nv = model.n_var();
    let mut f_minus = [0.0; MAX_VARS];
    let mut f_plus = [0.0; MAX_VARS];
    model.flux(u_minus, axis, &mut f_minus)?;
    model.flux(u_plus, axis, &mut f_plus)?;
    let alpha = model
        .wavespeed(u_minus, axis)?
        .max(model.wavespeed(u_plus, axis)?);
    for v in 0..nv {
        out[v] = 0.5 * (f_minus[v] + f_plus[v] - alpha * (u_plus[v] - u_minus[v]));
    }
    Ok(())
}
