//! Q2/Q2 LPS-stabilized spatial discretization of the incompressible
//! Navier-Stokes equations with Crank-Nicolson time stepping.
//!
//! Unknowns are stored interleaved per Q2 node as (p, vx, vy); the Q2 node
//! set of a level is its mesh vertices, edge midpoints and cell centers, in
//! that order, which makes every Q2 node of level `l` coincide with a vertex
//! of level `l+1`.

pub mod assembly;
pub mod functionals;
pub mod io;
pub mod level;
pub mod shape;

use std::sync::Arc;

pub use level::FemLevel;

/// Components per Q2 node.
pub const N_COMP: usize = 3;

/// Solution coefficients of one time step on one level, interleaved
/// (p, vx, vy) per node.
#[derive(Clone, Debug)]
pub struct StateVector {
    pub level: usize,
    pub time: f64,
    pub coeffs: Vec<f64>,
}

impl StateVector {
    pub fn zeros(level: usize, n_nodes: usize) -> StateVector {
        StateVector { level, time: 0.0, coeffs: vec![0.0; N_COMP * n_nodes] }
    }

    pub fn n_nodes(&self) -> usize {
        self.coeffs.len() / N_COMP
    }

    #[inline]
    pub fn p(&self, node: usize) -> f64 {
        self.coeffs[N_COMP * node]
    }

    #[inline]
    pub fn vx(&self, node: usize) -> f64 {
        self.coeffs[N_COMP * node + 1]
    }

    #[inline]
    pub fn vy(&self, node: usize) -> f64 {
        self.coeffs[N_COMP * node + 2]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the velocity coefficients only.
    pub fn velocity_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n_nodes() {
            s += self.vx(i) * self.vx(i) + self.vy(i) * self.vy(i);
        }
        s.sqrt()
    }
}

/// Case-level physical and temporal parameters.
#[derive(Clone, Debug)]
pub struct CaseConfig {
    /// Kinematic viscosity.
    pub nu: f64,
    /// Time step size in seconds.
    pub dt: f64,
    /// End time of the simulation.
    pub t_end: f64,
    /// Channel height, used by the inflow profile.
    pub height: f64,
    /// Reynolds number used in the drag/lift functionals (a convention of
    /// the functional definition, independent of `nu`).
    pub re_functional: f64,
    /// LPS stabilization constant.
    pub alpha0: f64,
    /// Fine-level solver steps before the hybrid loop takes over.
    pub warmup_steps: usize,
}

impl Default for CaseConfig {
    fn default() -> Self {
        CaseConfig {
            nu: 1e-3,
            dt: 1e-2,
            t_end: 10.0,
            height: 0.41,
            re_functional: 100.0,
            alpha0: 0.04,
            warmup_steps: 50,
        }
    }
}

/// Parabolic inflow profile with the cosine start-up ramp:
/// y (H - y) / H^2 * omega(t), omega(t) = 1/2 - cos(2 pi t)/2 for t <= 1/2.
pub fn inflow_value(y: f64, t: f64, height: f64) -> f64 {
    let omega = if t <= 0.5 {
        0.5 - 0.5 * (2.0 * std::f64::consts::PI * t).cos()
    } else {
        1.0
    };
    y * (height - y) / (height * height) * omega
}

/// LPS stabilization weight alpha_0 (nu / h^2 + vmax / h)^-1.
pub fn alpha_k(alpha0: f64, nu: f64, h: f64, vmax: f64) -> f64 {
    alpha0 / (nu / (h * h) + vmax / h)
}

pub type VectorField = Arc<dyn Fn(f64, f64, f64) -> (f64, f64) + Send + Sync>;

/// Dirichlet boundary data.
#[derive(Clone)]
pub enum BoundaryValues {
    /// Channel flow: inflow profile on the inflow boundary, no-slip on walls
    /// and obstacles.
    Channel,
    /// Prescribed velocity on every Dirichlet boundary (manufactured cases).
    Exact(VectorField),
}

#[derive(Clone)]
pub enum Forcing {
    None,
    Func(VectorField),
}

impl Forcing {
    #[inline]
    pub fn eval(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        match self {
            Forcing::None => (0.0, 0.0),
            Forcing::Func(f) => f(x, y, t),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Forcing::None)
    }
}

/// Everything that defines the PDE problem besides the mesh: boundary data,
/// forcing, and whether the convective term is active (disabling it gives
/// the Stokes equations, used by tests).
#[derive(Clone)]
pub struct Problem {
    pub bc: BoundaryValues,
    pub forcing: Forcing,
    pub convection: bool,
}

impl Problem {
    pub fn channel() -> Problem {
        Problem { bc: BoundaryValues::Channel, forcing: Forcing::None, convection: true }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inflow_profile_values() {
        let h = 0.41;
        assert_eq!(inflow_value(h / 2.0, 0.0, h), 0.0);
        assert!((inflow_value(h / 2.0, 0.75, h) - 0.25).abs() < 1e-15);
        assert_eq!(inflow_value(0.0, 3.0, h), 0.0);
        assert_eq!(inflow_value(h, 0.2, h), 0.0);
    }

    #[test]
    fn alpha_k_values() {
        let a = alpha_k(0.04, 1e-3, 0.1, 1.0);
        assert!((a - 0.04 / 10.1).abs() < 1e-12);
        // vmax = 0 reduces to alpha0 h^2 / nu.
        let a0 = alpha_k(0.04, 1e-3, 0.1, 0.0);
        assert!((a0 - 0.04 * 0.01 / 1e-3).abs() < 1e-12);
        // Doubling h quadruples alpha in the viscous limit.
        let a1 = alpha_k(0.04, 1e-3, 0.2, 0.0);
        assert!((a1 / a0 - 4.0).abs() < 1e-12);
    }
}
