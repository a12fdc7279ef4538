//! Assembly of the Crank-Nicolson step residual, right-hand side and
//! Jacobian on one level.
//!
//! The nonlinear step equation is A(x_n) = F(v_{n-1}, f_{n-1}, f_n), where A
//! carries the implicit half of the momentum equation plus the divergence
//! constraint with LPS pressure stabilization, and F the explicit half. The
//! Jacobian freezes the stabilization weight alpha_K at the current velocity.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::level::{FemLevel, LOCAL_DOFS, N_QP};
use crate::fem::shape::Q2_CORNER_NODES;
use crate::fem::{alpha_k, CaseConfig, Forcing, Problem, StateVector, N_COMP};
use crate::linalg::Csr;

/// Local per-cell values of the current guess at one quadrature point.
struct PointState {
    v: [f64; 2],
    grad_v: [[f64; 2]; 2],
    p: f64,
    /// Gradient of p minus its Q1 interpolant.
    grad_p_fluc: [f64; 2],
}

impl FemLevel {
    fn local_coeffs(&self, x: &StateVector, cell: usize) -> [f64; LOCAL_DOFS] {
        let mut loc = [0.0; LOCAL_DOFS];
        for (i, &n) in self.cell_nodes[cell].iter().enumerate() {
            loc[N_COMP * i] = x.coeffs[N_COMP * n];
            loc[N_COMP * i + 1] = x.coeffs[N_COMP * n + 1];
            loc[N_COMP * i + 2] = x.coeffs[N_COMP * n + 2];
        }
        loc
    }

    fn point_state(&self, loc: &[f64; LOCAL_DOFS], cell: usize, q: usize) -> PointState {
        let qp = &self.quad[cell][q];
        let nv = &self.q2_at_qp[q];
        let mut v = [0.0; 2];
        let mut grad_v = [[0.0; 2]; 2];
        let mut p = 0.0;
        let mut grad_p = [0.0; 2];
        for a in 0..9 {
            let pa = loc[N_COMP * a];
            let vx = loc[N_COMP * a + 1];
            let vy = loc[N_COMP * a + 2];
            let na = nv[a];
            let ga = qp.grad_q2[a];
            p += pa * na;
            v[0] += vx * na;
            v[1] += vy * na;
            grad_p[0] += pa * ga[0];
            grad_p[1] += pa * ga[1];
            grad_v[0][0] += vx * ga[0];
            grad_v[0][1] += vx * ga[1];
            grad_v[1][0] += vy * ga[0];
            grad_v[1][1] += vy * ga[1];
        }
        // Q1 interpolant of p uses the corner values only.
        let mut grad_pi = [0.0; 2];
        for (c, &node) in Q2_CORNER_NODES.iter().enumerate() {
            let pc = loc[N_COMP * node];
            grad_pi[0] += pc * qp.grad_q1[c][0];
            grad_pi[1] += pc * qp.grad_q1[c][1];
        }
        PointState {
            v,
            grad_v,
            p,
            grad_p_fluc: [grad_p[0] - grad_pi[0], grad_p[1] - grad_pi[1]],
        }
    }

    /// Max Euclidean velocity magnitude over the cell's nodes, for alpha_K.
    fn vmax(&self, x: &StateVector, cell: usize) -> f64 {
        let mut m = 0.0f64;
        for &n in &self.cell_nodes[cell] {
            let vx = x.coeffs[N_COMP * n + 1];
            let vy = x.coeffs[N_COMP * n + 2];
            m = m.max((vx * vx + vy * vy).sqrt());
        }
        m
    }

    /// Assemble the explicit side F(v_prev, f(t_prev), f(t_now)) as a dual
    /// vector. Constrained rows are zeroed.
    pub fn assemble_rhs(
        &self,
        x_prev: &StateVector,
        t_prev: f64,
        t_now: f64,
        problem: &Problem,
        cfg: &CaseConfig,
    ) -> Result<Vec<f64>> {
        if x_prev.level != self.level {
            return Err(Error::Shape(format!(
                "rhs: state level {} vs fem level {}",
                x_prev.level, self.level
            )));
        }
        let dt_inv = 1.0 / cfg.dt;
        let nu = cfg.nu;
        let locals: Vec<(usize, [f64; LOCAL_DOFS])> = (0..self.n_cells())
            .into_par_iter()
            .map(|k| {
                let loc = self.local_coeffs(x_prev, k);
                let mut r = [0.0; LOCAL_DOFS];
                for q in 0..N_QP {
                    let qp = &self.quad[k][q];
                    let st = self.point_state(&loc, k, q);
                    let w = qp.wdet;
                    let conv = if problem.convection {
                        [
                            st.v[0] * st.grad_v[0][0] + st.v[1] * st.grad_v[0][1],
                            st.v[0] * st.grad_v[1][0] + st.v[1] * st.grad_v[1][1],
                        ]
                    } else {
                        [0.0, 0.0]
                    };
                    let (fx0, fy0) = problem.forcing.eval(qp.x[0], qp.x[1], t_prev);
                    let (fx1, fy1) = problem.forcing.eval(qp.x[0], qp.x[1], t_now);
                    let fsum = [0.5 * (fx0 + fx1), 0.5 * (fy0 + fy1)];
                    for a in 0..9 {
                        let na = self.q2_at_qp[q][a];
                        let ga = qp.grad_q2[a];
                        for k2 in 0..2 {
                            r[N_COMP * a + 1 + k2] += w
                                * (dt_inv * st.v[k2] * na + fsum[k2] * na
                                    - 0.5 * conv[k2] * na
                                    - 0.5
                                        * nu
                                        * (st.grad_v[k2][0] * ga[0] + st.grad_v[k2][1] * ga[1]));
                        }
                    }
                }
                (k, r)
            })
            .collect();
        let mut rhs = vec![0.0; self.n_dofs()];
        for (k, r) in locals {
            for (i, &n) in self.cell_nodes[k].iter().enumerate() {
                for c in 0..N_COMP {
                    rhs[N_COMP * n + c] += r[N_COMP * i + c];
                }
            }
        }
        self.zero_constrained_rows(&mut rhs);
        Ok(rhs)
    }

    /// Assemble A(x_guess) as a dual vector (constrained rows zeroed).
    pub fn assemble_operator(
        &self,
        x_guess: &StateVector,
        problem: &Problem,
        cfg: &CaseConfig,
    ) -> Result<Vec<f64>> {
        if x_guess.level != self.level {
            return Err(Error::Shape(format!(
                "operator: state level {} vs fem level {}",
                x_guess.level, self.level
            )));
        }
        let dt_inv = 1.0 / cfg.dt;
        let nu = cfg.nu;
        let locals: Vec<(usize, [f64; LOCAL_DOFS])> = (0..self.n_cells())
            .into_par_iter()
            .map(|k| {
                let loc = self.local_coeffs(x_guess, k);
                let vmax = if problem.convection { self.vmax(x_guess, k) } else { 0.0 };
                let alpha = alpha_k(cfg.alpha0, nu, self.h_cell[k], vmax);
                let mut r = [0.0; LOCAL_DOFS];
                for q in 0..N_QP {
                    let qp = &self.quad[k][q];
                    let st = self.point_state(&loc, k, q);
                    let w = qp.wdet;
                    let conv = if problem.convection {
                        [
                            st.v[0] * st.grad_v[0][0] + st.v[1] * st.grad_v[0][1],
                            st.v[0] * st.grad_v[1][0] + st.v[1] * st.grad_v[1][1],
                        ]
                    } else {
                        [0.0, 0.0]
                    };
                    let div = st.grad_v[0][0] + st.grad_v[1][1];
                    for a in 0..9 {
                        let na = self.q2_at_qp[q][a];
                        let ga = qp.grad_q2[a];
                        for k2 in 0..2 {
                            r[N_COMP * a + 1 + k2] += w
                                * (dt_inv * st.v[k2] * na
                                    + 0.5 * conv[k2] * na
                                    + 0.5
                                        * nu
                                        * (st.grad_v[k2][0] * ga[0] + st.grad_v[k2][1] * ga[1])
                                    - st.p * ga[k2]);
                        }
                        // Continuity row with the LPS fluctuation term; the
                        // Q1 interpolant of a non-corner basis function is 0.
                        let gfluc = if let Some(c) = corner_index(a) {
                            [ga[0] - qp.grad_q1[c][0], ga[1] - qp.grad_q1[c][1]]
                        } else {
                            ga
                        };
                        r[N_COMP * a] += w
                            * (div * na
                                + alpha
                                    * (st.grad_p_fluc[0] * gfluc[0]
                                        + st.grad_p_fluc[1] * gfluc[1]));
                    }
                }
                (k, r)
            })
            .collect();
        let mut out = vec![0.0; self.n_dofs()];
        for (k, r) in locals {
            for (i, &n) in self.cell_nodes[k].iter().enumerate() {
                for c in 0..N_COMP {
                    out[N_COMP * n + c] += r[N_COMP * i + c];
                }
            }
        }
        self.zero_constrained_rows(&mut out);
        Ok(out)
    }

    /// Residual of the step equation: `rhs - A(x_guess)` per test function.
    /// When `rhs` is `None` the explicit side is assembled from `x_prev`
    /// internally; supplying it replaces that evaluation (the hybrid loop
    /// passes restricted fine-level right-hand sides here).
    pub fn assemble_system(
        &self,
        x_prev: &StateVector,
        x_guess: &StateVector,
        rhs: Option<&[f64]>,
        t_now: f64,
        problem: &Problem,
        cfg: &CaseConfig,
    ) -> Result<Vec<f64>> {
        let own_rhs;
        let rhs = match rhs {
            Some(b) => {
                if b.len() != self.n_dofs() {
                    return Err(Error::Shape("assemble_system: rhs length".into()));
                }
                b
            }
            None => {
                own_rhs = self.assemble_rhs(x_prev, t_now - cfg.dt, t_now, problem, cfg)?;
                &own_rhs
            }
        };
        let a = self.assemble_operator(x_guess, problem, cfg)?;
        let mut r: Vec<f64> = rhs.iter().zip(&a).map(|(b, a)| b - a).collect();
        self.zero_constrained_rows(&mut r);
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("non-finite residual entries".into()));
        }
        Ok(r)
    }

    /// Assemble the Jacobian of A at `x_guess` into the level's sparsity
    /// pattern. Constrained rows become identity rows.
    pub fn assemble_jacobian(
        &self,
        x_guess: &StateVector,
        problem: &Problem,
        cfg: &CaseConfig,
    ) -> Result<Csr> {
        if x_guess.level != self.level {
            return Err(Error::Shape(format!(
                "jacobian: state level {} vs fem level {}",
                x_guess.level, self.level
            )));
        }
        let dt_inv = 1.0 / cfg.dt;
        let nu = cfg.nu;
        let locals: Vec<(usize, Vec<f64>)> = (0..self.n_cells())
            .into_par_iter()
            .map(|k| {
                let loc = self.local_coeffs(x_guess, k);
                let vmax = if problem.convection { self.vmax(x_guess, k) } else { 0.0 };
                let alpha = alpha_k(cfg.alpha0, nu, self.h_cell[k], vmax);
                let mut m = vec![0.0; LOCAL_DOFS * LOCAL_DOFS];
                for q in 0..N_QP {
                    let qp = &self.quad[k][q];
                    let st = self.point_state(&loc, k, q);
                    let w = qp.wdet;
                    for a in 0..9 {
                        let na = self.q2_at_qp[q][a];
                        let ga = qp.grad_q2[a];
                        let gfluc_a = if let Some(c) = corner_index(a) {
                            [ga[0] - qp.grad_q1[c][0], ga[1] - qp.grad_q1[c][1]]
                        } else {
                            ga
                        };
                        for b in 0..9 {
                            let nb = self.q2_at_qp[q][b];
                            let gb = qp.grad_q2[b];
                            let lap = 0.5 * nu * (ga[0] * gb[0] + ga[1] * gb[1]);
                            let vdotgb = if problem.convection {
                                st.v[0] * gb[0] + st.v[1] * gb[1]
                            } else {
                                0.0
                            };
                            // Momentum rows, velocity columns.
                            for kr in 0..2 {
                                for kc in 0..2 {
                                    let mut val = 0.0;
                                    if kr == kc {
                                        val += dt_inv * nb * na + lap + 0.5 * vdotgb * na;
                                    }
                                    if problem.convection {
                                        val += 0.5 * nb * st.grad_v[kr][kc] * na;
                                    }
                                    m[(N_COMP * a + 1 + kr) * LOCAL_DOFS + N_COMP * b + 1 + kc] +=
                                        w * val;
                                }
                                // Momentum rows, pressure column.
                                m[(N_COMP * a + 1 + kr) * LOCAL_DOFS + N_COMP * b] +=
                                    w * (-nb * ga[kr]);
                                // Continuity row, velocity columns.
                                m[N_COMP * a * LOCAL_DOFS + N_COMP * b + 1 + kr] +=
                                    w * gb[kr] * na;
                            }
                            // Continuity row, pressure column (LPS).
                            let gfluc_b = if let Some(c) = corner_index(b) {
                                [gb[0] - qp.grad_q1[c][0], gb[1] - qp.grad_q1[c][1]]
                            } else {
                                gb
                            };
                            m[N_COMP * a * LOCAL_DOFS + N_COMP * b] += w
                                * alpha
                                * (gfluc_a[0] * gfluc_b[0] + gfluc_a[1] * gfluc_b[1]);
                        }
                    }
                }
                (k, m)
            })
            .collect();
        let mut jac = self.pattern.clone();
        for (k, m) in locals {
            let map = self.cell_scatter(k);
            for (idx, &slot) in map.iter().enumerate() {
                jac.vals[slot as usize] += m[idx];
            }
        }
        for (n, tag) in self.dirichlet.iter().enumerate() {
            if tag.is_some() {
                jac.set_identity_row(N_COMP * n + 1);
                jac.set_identity_row(N_COMP * n + 2);
            }
        }
        if let Some(n) = self.pinned_pressure {
            jac.set_identity_row(N_COMP * n);
        }
        Ok(jac)
    }

    /// The explicit side with zero previous state and forcing, useful for
    /// supplied-rhs comparisons.
    pub fn zero_rhs(&self) -> Vec<f64> {
        vec![0.0; self.n_dofs()]
    }
}

/// Index of a Q2 node in the corner list, if it is a corner.
#[inline]
fn corner_index(a: usize) -> Option<usize> {
    match a {
        0 => Some(0),
        2 => Some(1),
        6 => Some(2),
        8 => Some(3),
        _ => None,
    }
}

/// Phase offsets of the manufactured fields, chosen so grid nodes avoid the
/// solution's symmetry points.
const MS_AX: f64 = 0.4;
const MS_AY: f64 = -0.3;
const MS_PX: f64 = -0.2;
const MS_PY: f64 = 0.1;

impl Forcing {
    /// Steady forcing for the divergence-free manufactured field
    /// v = curl of sin(pi x + ax) sin(pi y + ay) / pi,
    /// p = cos(pi x + px) cos(pi y + py).
    pub fn manufactured(nu: f64) -> Forcing {
        use std::f64::consts::PI;
        Forcing::Func(std::sync::Arc::new(move |x, y, _t| {
            let (sx, cx) = (PI * x + MS_AX).sin_cos();
            let (sy, cy) = (PI * y + MS_AY).sin_cos();
            let conv_x = PI * sx * cx;
            let conv_y = PI * sy * cy;
            let dpx = -PI * (PI * x + MS_PX).sin() * (PI * y + MS_PY).cos();
            let dpy = -PI * (PI * x + MS_PX).cos() * (PI * y + MS_PY).sin();
            let fx = conv_x + 2.0 * nu * PI * PI * sx * cy + dpx;
            let fy = conv_y - 2.0 * nu * PI * PI * cx * sy + dpy;
            (fx, fy)
        }))
    }
}

/// The manufactured solution matching [`Forcing::manufactured`]:
/// (p, vx, vy) at a point.
pub fn manufactured_solution(x: f64, y: f64) -> (f64, f64, f64) {
    use std::f64::consts::PI;
    let (sx, cx) = (PI * x + MS_AX).sin_cos();
    let (sy, cy) = (PI * y + MS_AY).sin_cos();
    let p = (PI * x + MS_PX).cos() * (PI * y + MS_PY).cos();
    (p, sx * cy, -cx * sy)
}

/// Velocity gradient of the manufactured solution: [[dvx/dx, dvx/dy],
/// [dvy/dx, dvy/dy]].
pub fn manufactured_velocity_gradient(x: f64, y: f64) -> [[f64; 2]; 2] {
    use std::f64::consts::PI;
    let (sx, cx) = (PI * x + MS_AX).sin_cos();
    let (sy, cy) = (PI * y + MS_AY).sin_cos();
    [[PI * cx * cy, -PI * sx * sy], [PI * sx * sy, -PI * cx * cy]]
}
