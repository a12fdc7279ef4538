//! Boundary and volume functionals: drag and lift over the obstacle
//! boundary, the squared-divergence functional, and discrete error norms.

use crate::error::{Error, Result};
use crate::fem::level::{FemLevel, N_QP};
use crate::fem::{StateVector, N_COMP};

impl FemLevel {
    /// Drag and lift: surface integrals of ((1/Re) grad v - p I) n over the
    /// obstacle edges, with n pointing from the obstacle into the fluid.
    pub fn drag_lift(&self, x: &StateVector, re: f64) -> Result<(f64, f64)> {
        if self.obstacle_quad.is_empty() {
            return Err(Error::Config("mesh has no obstacle boundary".into()));
        }
        let mut jd = 0.0;
        let mut jl = 0.0;
        for (cell, pts) in &self.obstacle_quad {
            let nodes = &self.cell_nodes[*cell];
            for qp in pts.iter() {
                let mut p = 0.0;
                let mut grad_v = [[0.0; 2]; 2];
                for a in 0..9 {
                    let n = nodes[a];
                    let na = qp.values[a];
                    let ga = qp.grads[a];
                    p += x.coeffs[N_COMP * n] * na;
                    let vx = x.coeffs[N_COMP * n + 1];
                    let vy = x.coeffs[N_COMP * n + 2];
                    grad_v[0][0] += vx * ga[0];
                    grad_v[0][1] += vx * ga[1];
                    grad_v[1][0] += vy * ga[0];
                    grad_v[1][1] += vy * ga[1];
                }
                let nrm = qp.normal;
                let tx = (grad_v[0][0] / re - p) * nrm[0] + grad_v[0][1] / re * nrm[1];
                let ty = grad_v[1][0] / re * nrm[0] + (grad_v[1][1] / re - p) * nrm[1];
                jd += qp.wds * tx;
                jl += qp.wds * ty;
            }
        }
        Ok((jd, jl))
    }

    /// Integral of (div v)^2 over the domain.
    pub fn divergence_functional(&self, x: &StateVector) -> f64 {
        let mut s = 0.0;
        for (k, nodes) in self.cell_nodes.iter().enumerate() {
            for q in 0..N_QP {
                let qp = &self.quad[k][q];
                let mut div = 0.0;
                for a in 0..9 {
                    let ga = qp.grad_q2[a];
                    div += x.coeffs[N_COMP * nodes[a] + 1] * ga[0]
                        + x.coeffs[N_COMP * nodes[a] + 2] * ga[1];
                }
                s += qp.wdet * div * div;
            }
        }
        s
    }

    /// L2 and H1-seminorm errors of the velocity against an exact field.
    pub fn velocity_error(
        &self,
        x: &StateVector,
        exact: &dyn Fn(f64, f64) -> (f64, f64),
        exact_grad: &dyn Fn(f64, f64) -> [[f64; 2]; 2],
    ) -> (f64, f64) {
        let mut l2 = 0.0;
        let mut h1 = 0.0;
        for (k, nodes) in self.cell_nodes.iter().enumerate() {
            for q in 0..N_QP {
                let qp = &self.quad[k][q];
                let mut v = [0.0; 2];
                let mut grad_v = [[0.0; 2]; 2];
                for a in 0..9 {
                    let na = self.q2_at_qp[q][a];
                    let ga = qp.grad_q2[a];
                    let vx = x.coeffs[N_COMP * nodes[a] + 1];
                    let vy = x.coeffs[N_COMP * nodes[a] + 2];
                    v[0] += vx * na;
                    v[1] += vy * na;
                    grad_v[0][0] += vx * ga[0];
                    grad_v[0][1] += vx * ga[1];
                    grad_v[1][0] += vy * ga[0];
                    grad_v[1][1] += vy * ga[1];
                }
                let (ex, ey) = exact(qp.x[0], qp.x[1]);
                let eg = exact_grad(qp.x[0], qp.x[1]);
                l2 += qp.wdet * ((v[0] - ex).powi(2) + (v[1] - ey).powi(2));
                for r in 0..2 {
                    for c in 0..2 {
                        h1 += qp.wdet * (grad_v[r][c] - eg[r][c]).powi(2);
                    }
                }
            }
        }
        (l2.sqrt(), h1.sqrt())
    }
}
