//! Per-level discretization data: Q2 dof map, Dirichlet sets, precomputed
//! quadrature geometry, and the sparsity pattern of the coupled system.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::fem::shape::{
    edge_ref_coords, edge_ref_dir, q1_grads, q2_grads, q2_values, GAUSS_PTS, GAUSS_WTS,
};
use crate::fem::{inflow_value, BoundaryValues, CaseConfig, Problem, StateVector, N_COMP};
use crate::linalg::Csr;
use crate::mesh::{BaseMesh, BoundaryTag, Point};

pub const N_QP: usize = 9;
pub const LOCAL_DOFS: usize = 27;

/// Precomputed data for one quadrature point of one cell.
#[derive(Clone, Copy)]
pub struct QuadPoint {
    /// Gauss weight times |det J| of the isoparametric map.
    pub wdet: f64,
    /// Physical coordinates, for forcing evaluation.
    pub x: Point,
    /// Physical gradients of the 9 Q2 basis functions.
    pub grad_q2: [[f64; 2]; 9],
    /// Physical gradients of the 4 Q1 basis functions (corner order).
    pub grad_q1: [[f64; 2]; 4],
}

/// One quadrature point on an obstacle boundary edge.
#[derive(Clone, Copy)]
pub struct EdgeQuadPoint {
    /// Gauss weight times the length element.
    pub wds: f64,
    /// Unit normal pointing from the obstacle into the fluid.
    pub normal: [f64; 2],
    /// Q2 basis values (cell-local) at this point.
    pub values: [f64; 9],
    /// Physical gradients of the 9 Q2 basis functions.
    pub grads: [[f64; 2]; 9],
}

/// Fully assembled discretization data of one mesh level.
pub struct FemLevel {
    pub level: usize,
    pub mesh: BaseMesh,
    pub n_vertices: usize,
    pub n_edges: usize,
    /// Q2 node coordinates: vertices, then edge nodes, then cell nodes.
    pub coords: Vec<Point>,
    /// Per cell, the 9 Q2 node ids in lexicographic reference order.
    pub cell_nodes: Vec<[usize; 9]>,
    /// Dirichlet tag per node (None for free and outflow nodes).
    pub dirichlet: Vec<Option<BoundaryTag>>,
    /// Pressure dof pinned to zero when the mesh has no outflow boundary.
    pub pinned_pressure: Option<usize>,
    /// Cell diameters.
    pub h_cell: Vec<f64>,
    /// Per cell, 9 quadrature points.
    pub quad: Vec<[QuadPoint; N_QP]>,
    /// Q2 basis values at the 9 reference quadrature points.
    pub q2_at_qp: [[f64; 9]; N_QP],
    /// Obstacle boundary edges as (cell, local edge) with 3 quadrature
    /// points each.
    pub obstacle_quad: Vec<(usize, [EdgeQuadPoint; 3])>,
    /// Sparsity pattern of the coupled Jacobian, with per-cell scatter maps
    /// from local (row, col) pairs into the CSR value array.
    pub pattern: Csr,
    scatter: Vec<Vec<u32>>,
}

impl FemLevel {
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_dofs(&self) -> usize {
        N_COMP * self.coords.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cell_nodes.len()
    }

    pub fn zero_state(&self) -> StateVector {
        StateVector::zeros(self.level, self.n_nodes())
    }

    /// Build the Q2 discretization of `mesh`. Edge enumeration follows the
    /// refinement convention so that node `i` of this level coincides with
    /// vertex `i` of the next finer level.
    pub fn build(mesh: &BaseMesh, level: usize) -> Result<FemLevel> {
        let nv = mesh.vertices.len();
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edge_ends: Vec<(usize, usize)> = Vec::new();
        for cell in &mesh.cells {
            for e in 0..4 {
                let (a, b) = (cell[e], cell[(e + 1) % 4]);
                let key = (a.min(b), a.max(b));
                edge_ids.entry(key).or_insert_with(|| {
                    edge_ends.push(key);
                    edge_ends.len() - 1
                });
            }
        }
        let ne = edge_ends.len();

        // Projected midpoints on elliptical obstacle edges keep the Q2 map
        // isoparametric along the curved boundary.
        let mut projected: HashMap<(usize, usize), Point> = HashMap::new();
        for be in &mesh.boundary {
            if be.tag == BoundaryTag::Obstacle {
                let (v0, v1) = mesh.edge_vertices(be.cell, be.edge);
                let p0 = mesh.vertices[v0];
                let p1 = mesh.vertices[v1];
                if let Some(e) = mesh
                    .obstacles
                    .iter()
                    .find(|e| (e.eval(p0) - 1.0).abs() < 1e-9 && (e.eval(p1) - 1.0).abs() < 1e-9)
                {
                    let m = [(p0[0] + p1[0]) * 0.5, (p0[1] + p1[1]) * 0.5];
                    projected.insert((v0.min(v1), v0.max(v1)), e.project(m));
                }
            }
        }

        let mut coords = mesh.vertices.clone();
        for &(a, b) in &edge_ends {
            let p = match projected.get(&(a, b)) {
                Some(p) => *p,
                None => {
                    let pa = mesh.vertices[a];
                    let pb = mesh.vertices[b];
                    [(pa[0] + pb[0]) * 0.5, (pa[1] + pb[1]) * 0.5]
                }
            };
            coords.push(p);
        }
        // Transfinite cell centers, consistent with refinement.
        for (k, cell) in mesh.cells.iter().enumerate() {
            let _ = k;
            let mut p = [0.0, 0.0];
            for e in 0..4 {
                let (a, b) = (cell[e], cell[(e + 1) % 4]);
                let m = coords[nv + edge_ids[&(a.min(b), a.max(b))]];
                p[0] += 0.5 * m[0];
                p[1] += 0.5 * m[1];
            }
            for &v in cell {
                p[0] -= 0.25 * mesh.vertices[v][0];
                p[1] -= 0.25 * mesh.vertices[v][1];
            }
            coords.push(p);
        }

        let mut cell_nodes = Vec::with_capacity(mesh.cells.len());
        for (k, cell) in mesh.cells.iter().enumerate() {
            let e = |a: usize, b: usize| nv + edge_ids[&(a.min(b), a.max(b))];
            // Lexicographic: bottom row, middle row, top row.
            cell_nodes.push([
                cell[0],
                e(cell[0], cell[1]),
                cell[1],
                e(cell[3], cell[0]),
                nv + ne + k,
                e(cell[1], cell[2]),
                cell[3],
                e(cell[2], cell[3]),
                cell[2],
            ]);
        }

        // Dirichlet tags per node; no-slip tags win over inflow at corners.
        let mut dirichlet: Vec<Option<BoundaryTag>> = vec![None; coords.len()];
        let priority = |t: BoundaryTag| match t {
            BoundaryTag::Obstacle => 3,
            BoundaryTag::Wall => 2,
            BoundaryTag::Inflow => 1,
            BoundaryTag::Outflow => 0,
        };
        let mut has_outflow = false;
        for be in &mesh.boundary {
            if be.tag == BoundaryTag::Outflow {
                has_outflow = true;
            }
            if !be.tag.is_dirichlet() {
                continue;
            }
            let (v0, v1) = mesh.edge_vertices(be.cell, be.edge);
            let em = nv + edge_ids[&(v0.min(v1), v0.max(v1))];
            for n in [v0, v1, em] {
                match dirichlet[n] {
                    Some(t) if priority(t) >= priority(be.tag) => {}
                    _ => dirichlet[n] = Some(be.tag),
                }
            }
        }
        let pinned_pressure = if has_outflow { None } else { Some(0) };

        let mut h_cell = Vec::with_capacity(mesh.cells.len());
        for cell in &mesh.cells {
            let p: Vec<Point> = cell.iter().map(|&v| mesh.vertices[v]).collect();
            let d1 = ((p[2][0] - p[0][0]).powi(2) + (p[2][1] - p[0][1]).powi(2)).sqrt();
            let d2 = ((p[3][0] - p[1][0]).powi(2) + (p[3][1] - p[1][1]).powi(2)).sqrt();
            h_cell.push(d1.max(d2));
        }

        // Reference-point tables shared by all cells.
        let mut q2_at_qp = [[0.0; 9]; N_QP];
        let mut qp_ref = [(0.0, 0.0); N_QP];
        let mut qp_w = [0.0; N_QP];
        for j in 0..3 {
            for i in 0..3 {
                let q = 3 * j + i;
                let xi = GAUSS_PTS[i];
                let eta = GAUSS_PTS[j];
                qp_ref[q] = (xi, eta);
                qp_w[q] = GAUSS_WTS[i] * GAUSS_WTS[j];
                q2_at_qp[q] = q2_values(xi, eta);
            }
        }

        let mut quad = Vec::with_capacity(mesh.cells.len());
        for (k, nodes) in cell_nodes.iter().enumerate() {
            let xs: Vec<Point> = nodes.iter().map(|&n| coords[n]).collect();
            let mut cq = [QuadPoint {
                wdet: 0.0,
                x: [0.0, 0.0],
                grad_q2: [[0.0; 2]; 9],
                grad_q1: [[0.0; 2]; 4],
            }; N_QP];
            for q in 0..N_QP {
                let (xi, eta) = qp_ref[q];
                cq[q] = map_point(&xs, xi, eta, qp_w[q])
                    .map_err(|_| Error::Mesh(format!("cell {k} has a non-positive Jacobian")))?;
            }
            quad.push(cq);
        }

        // Obstacle edge quadrature for boundary functionals.
        let mut obstacle_quad = Vec::new();
        for be in &mesh.boundary {
            if be.tag != BoundaryTag::Obstacle {
                continue;
            }
            let nodes = &cell_nodes[be.cell];
            let xs: Vec<Point> = nodes.iter().map(|&n| coords[n]).collect();
            let mut pts = [EdgeQuadPoint {
                wds: 0.0,
                normal: [0.0, 0.0],
                values: [0.0; 9],
                grads: [[0.0; 2]; 9],
            }; 3];
            for (g, (&s, &w)) in GAUSS_PTS.iter().zip(GAUSS_WTS.iter()).enumerate() {
                let (xi, eta) = edge_ref_coords(be.edge, s);
                let qp = map_point(&xs, xi, eta, 1.0)
                    .map_err(|_| Error::Mesh(format!("cell {} degenerate on edge", be.cell)))?;
                // Tangent along the ccw edge direction; into-fluid normal is
                // the ccw-outward normal flipped.
                let jt = map_jacobian(&xs, xi, eta);
                let d = edge_ref_dir(be.edge);
                let t = [
                    jt[0][0] * d[0] + jt[0][1] * d[1],
                    jt[1][0] * d[0] + jt[1][1] * d[1],
                ];
                let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
                pts[g] = EdgeQuadPoint {
                    wds: w * len,
                    normal: [-t[1] / len, t[0] / len],
                    values: q2_values(xi, eta),
                    grads: qp.grad_q2,
                };
            }
            obstacle_quad.push((be.cell, pts));
        }

        // Symbolic sparsity pattern of the coupled system plus per-cell
        // scatter maps into the value array.
        let n_dofs = N_COMP * coords.len();
        let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
        for nodes in &cell_nodes {
            for &a in nodes.iter() {
                for &b in nodes.iter() {
                    for ca in 0..N_COMP {
                        for cb in 0..N_COMP {
                            triplets.push((
                                (N_COMP * a + ca) as u32,
                                (N_COMP * b + cb) as u32,
                                0.0,
                            ));
                        }
                    }
                }
            }
        }
        let pattern = Csr::from_triplets(n_dofs, n_dofs, &mut triplets);
        let mut scatter = Vec::with_capacity(cell_nodes.len());
        for nodes in &cell_nodes {
            let mut map = Vec::with_capacity(LOCAL_DOFS * LOCAL_DOFS);
            for ia in 0..9 {
                for ca in 0..N_COMP {
                    let row = N_COMP * nodes[ia] + ca;
                    for ib in 0..9 {
                        for cb in 0..N_COMP {
                            let col = (N_COMP * nodes[ib] + cb) as u32;
                            let s = pattern.row_ptr[row];
                            let e = pattern.row_ptr[row + 1];
                            let k = pattern.cols[s..e]
                                .binary_search(&col)
                                .expect("pattern entry");
                            map.push((s + k) as u32);
                        }
                    }
                }
            }
            scatter.push(map);
        }

        Ok(FemLevel {
            level,
            mesh: mesh.clone(),
            n_vertices: nv,
            n_edges: ne,
            coords,
            cell_nodes,
            dirichlet,
            pinned_pressure,
            h_cell,
            quad,
            q2_at_qp,
            obstacle_quad,
            pattern,
            scatter,
        })
    }

    /// Scatter map of cell `k`: local (27x27 row-major) index -> CSR value slot.
    #[inline]
    pub fn cell_scatter(&self, k: usize) -> &[u32] {
        &self.scatter[k]
    }

    /// Whether a dof (component `comp` of `node`) has a fixed value.
    #[inline]
    pub fn is_constrained(&self, node: usize, comp: usize) -> bool {
        if comp == 0 {
            self.pinned_pressure == Some(node)
        } else {
            self.dirichlet[node].is_some()
        }
    }

    /// Set Dirichlet values on `x` at time `t`. Inflow nodes get the ramped
    /// profile, walls and obstacles no-slip; pressure is untouched except
    /// for the pinned dof on outflow-free meshes.
    pub fn apply_dirichlet(&self, x: &mut StateVector, t: f64, problem: &Problem, cfg: &CaseConfig) {
        for (n, tag) in self.dirichlet.iter().enumerate() {
            let Some(tag) = tag else { continue };
            let (vx, vy) = match (&problem.bc, tag) {
                (BoundaryValues::Channel, BoundaryTag::Inflow) => {
                    (inflow_value(self.coords[n][1], t, cfg.height), 0.0)
                }
                (BoundaryValues::Channel, _) => (0.0, 0.0),
                (BoundaryValues::Exact(f), _) => f(self.coords[n][0], self.coords[n][1], t),
            };
            x.coeffs[N_COMP * n + 1] = vx;
            x.coeffs[N_COMP * n + 2] = vy;
        }
        if let Some(n) = self.pinned_pressure {
            x.coeffs[N_COMP * n] = 0.0;
        }
        x.time = t;
    }

    /// Zero the residual entries of constrained dofs.
    pub fn zero_constrained_rows(&self, r: &mut [f64]) {
        for (n, tag) in self.dirichlet.iter().enumerate() {
            if tag.is_some() {
                r[N_COMP * n + 1] = 0.0;
                r[N_COMP * n + 2] = 0.0;
            }
        }
        if let Some(n) = self.pinned_pressure {
            r[N_COMP * n] = 0.0;
        }
    }
}

/// Geometry map evaluation: physical basis gradients and weighted Jacobian
/// determinant at one reference point.
fn map_point(xs: &[Point], xi: f64, eta: f64, w: f64) -> std::result::Result<QuadPoint, ()> {
    let n = q2_values(xi, eta);
    let j = map_jacobian(xs, xi, eta);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    if det <= 0.0 {
        return Err(());
    }
    let inv = [
        [j[1][1] / det, -j[0][1] / det],
        [-j[1][0] / det, j[0][0] / det],
    ];
    let g = q2_grads(xi, eta);
    let mut grad_q2 = [[0.0; 2]; 9];
    for k in 0..9 {
        // Physical gradient: J^-T * reference gradient.
        grad_q2[k] = [
            inv[0][0] * g[k][0] + inv[1][0] * g[k][1],
            inv[0][1] * g[k][0] + inv[1][1] * g[k][1],
        ];
    }
    let g1 = q1_grads(xi, eta);
    let mut grad_q1 = [[0.0; 2]; 4];
    for k in 0..4 {
        grad_q1[k] = [
            inv[0][0] * g1[k][0] + inv[1][0] * g1[k][1],
            inv[0][1] * g1[k][0] + inv[1][1] * g1[k][1],
        ];
    }
    let mut x = [0.0, 0.0];
    for k in 0..9 {
        x[0] += n[k] * xs[k][0];
        x[1] += n[k] * xs[k][1];
    }
    Ok(QuadPoint { wdet: w * det, x, grad_q2, grad_q1 })
}

/// Jacobian of the isoparametric Q2 map: d(x,y)/d(xi,eta).
fn map_jacobian(xs: &[Point], xi: f64, eta: f64) -> [[f64; 2]; 2] {
    let g = q2_grads(xi, eta);
    let mut j = [[0.0; 2]; 2];
    for k in 0..9 {
        j[0][0] += xs[k][0] * g[k][0];
        j[0][1] += xs[k][0] * g[k][1];
        j[1][0] += xs[k][1] * g[k][0];
        j[1][1] += xs[k][1] * g[k][1];
    }
    j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_square;

    #[test]
    fn node_count_is_v_plus_e_plus_c() {
        let mesh = unit_square(2);
        let lvl = FemLevel::build(&mesh, 0).unwrap();
        assert_eq!(lvl.n_vertices, 9);
        assert_eq!(lvl.n_edges, 12);
        assert_eq!(lvl.n_cells(), 4);
        assert_eq!(lvl.n_nodes(), 9 + 12 + 4);
    }

    #[test]
    fn quadrature_integrates_area_and_polynomials() {
        let mesh = unit_square(2);
        let lvl = FemLevel::build(&mesh, 0).unwrap();
        let mut area = 0.0;
        let mut ix2y2 = 0.0;
        for cq in &lvl.quad {
            for qp in cq.iter() {
                area += qp.wdet;
                ix2y2 += qp.wdet * qp.x[0].powi(2) * qp.x[1].powi(2);
            }
        }
        assert!((area - 1.0).abs() < 1e-13);
        assert!((ix2y2 - 1.0 / 9.0).abs() < 1e-13);
    }

    #[test]
    fn dirichlet_application_is_idempotent() {
        let mesh = crate::mesh::round_obstacle_channel(1, 1, &[crate::mesh::ObstacleShape::canonical()]).unwrap();
        let lvl = FemLevel::build(&mesh, 0).unwrap();
        let cfg = CaseConfig::default();
        let problem = Problem::channel();
        let mut x = lvl.zero_state();
        for c in x.coeffs.iter_mut() {
            *c = 0.7;
        }
        lvl.apply_dirichlet(&mut x, 1.0, &problem, &cfg);
        let once = x.coeffs.clone();
        lvl.apply_dirichlet(&mut x, 1.0, &problem, &cfg);
        assert_eq!(once, x.coeffs);
        // At t=0 all Dirichlet velocities vanish.
        let mut y = lvl.zero_state();
        for c in y.coeffs.iter_mut() {
            *c = 0.3;
        }
        lvl.apply_dirichlet(&mut y, 0.0, &problem, &cfg);
        for (n, tag) in lvl.dirichlet.iter().enumerate() {
            if tag.is_some() {
                assert_eq!(y.vx(n), 0.0);
                assert_eq!(y.vy(n), 0.0);
            }
        }
    }
}
