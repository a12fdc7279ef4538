//! Hierarchical quadrilateral meshes.
//!
//! A [`BaseMesh`] is a conforming quad mesh with tagged boundary edges and
//! optional elliptical obstacle descriptors. Uniform 2x2 refinement projects
//! new vertices on obstacle edges radially onto their ellipse, so the curved
//! boundary is approximated conformingly. [`MeshHierarchy`] stacks the
//! refinement levels 0..=L+J, and [`PatchIndex`] groups the fine-level Q2
//! nodes into the patches the neural network predicts on.
//!
//! Conventions: cell corners are counter-clockwise, local edge `e` connects
//! corners `e` and `(e+1)%4`. Refinement orders child vertices as
//! `[parent vertices, edge midpoints, cell centers]`, which makes every Q2
//! node of level `l` coincide with a vertex of level `l+1`.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Inflow,
    Outflow,
    Wall,
    Obstacle,
}

impl BoundaryTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inflow" => Ok(BoundaryTag::Inflow),
            "outflow" => Ok(BoundaryTag::Outflow),
            "wall" => Ok(BoundaryTag::Wall),
            "obstacle" => Ok(BoundaryTag::Obstacle),
            other => Err(Error::Format(format!("unknown boundary tag `{other}`"))),
        }
    }

    /// Dirichlet boundaries are everything except the do-nothing outflow.
    pub fn is_dirichlet(self) -> bool {
        !matches!(self, BoundaryTag::Outflow)
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundaryTag::Inflow => "inflow",
            BoundaryTag::Outflow => "outflow",
            BoundaryTag::Wall => "wall",
            BoundaryTag::Obstacle => "obstacle",
        };
        f.write_str(s)
    }
}

/// Elliptical obstacle: (x-cx)^2/a^2 + (y-cy)^2/b^2 = 1.
#[derive(Clone, Copy, Debug)]
pub struct Ellipse {
    pub center: Point,
    pub a: f64,
    pub b: f64,
}

impl Ellipse {
    /// Value of the implicit ellipse equation at `p` (1 on the boundary).
    pub fn eval(&self, p: Point) -> f64 {
        let dx = (p[0] - self.center[0]) / self.a;
        let dy = (p[1] - self.center[1]) / self.b;
        dx * dx + dy * dy
    }

    /// Project `p` onto the ellipse along the ray from the center.
    pub fn project(&self, p: Point) -> Point {
        let q = self.eval(p);
        let s = 1.0 / q.sqrt();
        [
            self.center[0] + s * (p[0] - self.center[0]),
            self.center[1] + s * (p[1] - self.center[1]),
        ]
    }

    pub fn point_at(&self, angle: f64) -> Point {
        [
            self.center[0] + self.a * angle.cos(),
            self.center[1] + self.b * angle.sin(),
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundaryEdge {
    pub cell: usize,
    /// Local edge index, 0..4.
    pub edge: usize,
    pub tag: BoundaryTag,
}

#[derive(Clone, Debug)]
pub struct BaseMesh {
    pub vertices: Vec<Point>,
    /// Counter-clockwise vertex quadruples.
    pub cells: Vec<[usize; 4]>,
    pub boundary: Vec<BoundaryEdge>,
    pub obstacles: Vec<Ellipse>,
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn mid(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

impl BaseMesh {
    /// Corner vertex ids of local edge `e` of `cell`.
    pub fn edge_vertices(&self, cell: usize, e: usize) -> (usize, usize) {
        let c = self.cells[cell];
        (c[e], c[(e + 1) % 4])
    }

    /// Checks orientation, non-degeneracy, tag sanity and that obstacle edge
    /// endpoints sit on a known ellipse (when descriptors exist).
    pub fn validate(&self) -> Result<()> {
        for (k, cell) in self.cells.iter().enumerate() {
            for i in 0..4 {
                let v = self.vertices[cell[i]];
                let vn = self.vertices[cell[(i + 1) % 4]];
                let vp = self.vertices[cell[(i + 3) % 4]];
                if cross(sub(vn, v), sub(vp, v)) <= 0.0 {
                    return Err(Error::Mesh(format!(
                        "cell {k} is degenerate or not counter-clockwise at corner {i}"
                    )));
                }
            }
        }
        let mut seen = HashMap::new();
        for be in &self.boundary {
            if be.cell >= self.cells.len() || be.edge >= 4 {
                return Err(Error::Mesh(format!(
                    "boundary entry ({}, {}) out of range",
                    be.cell, be.edge
                )));
            }
            if seen.insert((be.cell, be.edge), be.tag).is_some() {
                return Err(Error::Mesh(format!(
                    "boundary edge ({}, {}) tagged twice",
                    be.cell, be.edge
                )));
            }
            if be.tag == BoundaryTag::Obstacle && !self.obstacles.is_empty() {
                let (v0, v1) = self.edge_vertices(be.cell, be.edge);
                // Edges of square holes carry no descriptor; ellipse edges must
                // match one of the descriptors to near machine precision.
                let p0 = self.vertices[v0];
                let p1 = self.vertices[v1];
                let on_some = self.obstacles.iter().any(|e| {
                    (e.eval(p0) - 1.0).abs() < 1e-9 && (e.eval(p1) - 1.0).abs() < 1e-9
                });
                let straight_hole = self.obstacles.iter().all(|e| {
                    (e.eval(p0) - 1.0).abs() > 1e-6 || (e.eval(p1) - 1.0).abs() > 1e-6
                });
                if !on_some && !straight_hole {
                    return Err(Error::Mesh(format!(
                        "obstacle edge ({}, {}) endpoints are near but not on an ellipse",
                        be.cell, be.edge
                    )));
                }
            }
        }
        Ok(())
    }

    /// Descriptor of the ellipse this obstacle edge belongs to, if any.
    fn edge_ellipse(&self, v0: usize, v1: usize) -> Option<&Ellipse> {
        let p0 = self.vertices[v0];
        let p1 = self.vertices[v1];
        self.obstacles
            .iter()
            .find(|e| (e.eval(p0) - 1.0).abs() < 1e-9 && (e.eval(p1) - 1.0).abs() < 1e-9)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Transfinite cell midpoint: consistent with edge midpoints also for
    /// cells with one curved (projected) edge.
    fn cell_center(&self, cell: usize, edge_mid: &dyn Fn(usize, usize) -> Point) -> Point {
        let c = self.cells[cell];
        let mut p = [0.0, 0.0];
        for e in 0..4 {
            let m = edge_mid(c[e], c[(e + 1) % 4]);
            p[0] += 0.5 * m[0];
            p[1] += 0.5 * m[1];
        }
        for v in c {
            p[0] -= 0.25 * self.vertices[v][0];
            p[1] -= 0.25 * self.vertices[v][1];
        }
        p
    }
}

/// One uniform 2x2 refinement. New vertices on ellipse-obstacle edges are
/// projected radially onto the ellipse; all tags are inherited.
pub fn refine_uniform(mesh: &BaseMesh) -> Result<BaseMesh> {
    let nv = mesh.vertices.len();
    let mut vertices = mesh.vertices.clone();

    // Deterministic edge enumeration: cells in order, local edges 0..4.
    let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edge_list: Vec<(usize, usize)> = Vec::new();
    for cell in &mesh.cells {
        for e in 0..4 {
            let (a, b) = (cell[e], cell[(e + 1) % 4]);
            let key = (a.min(b), a.max(b));
            edge_ids.entry(key).or_insert_with(|| {
                edge_list.push(key);
                edge_list.len() - 1
            });
        }
    }

    // Obstacle-edge keys that live on an ellipse get projected midpoints.
    let mut projected: HashMap<(usize, usize), Point> = HashMap::new();
    for be in &mesh.boundary {
        if be.tag == BoundaryTag::Obstacle {
            let (v0, v1) = mesh.edge_vertices(be.cell, be.edge);
            if let Some(e) = mesh.edge_ellipse(v0, v1) {
                let key = (v0.min(v1), v0.max(v1));
                projected.insert(key, e.project(mid(mesh.vertices[v0], mesh.vertices[v1])));
            }
        }
    }

    let edge_mid_point = |a: usize, b: usize| -> Point {
        let key = (a.min(b), a.max(b));
        match projected.get(&key) {
            Some(p) => *p,
            None => mid(mesh.vertices[a], mesh.vertices[b]),
        }
    };

    for key in &edge_list {
        vertices.push(edge_mid_point(key.0, key.1));
    }
    let center_base = vertices.len();
    for k in 0..mesh.cells.len() {
        vertices.push(mesh.cell_center(k, &edge_mid_point));
    }

    let edge_vertex = |a: usize, b: usize| -> usize {
        let key = (a.min(b), a.max(b));
        nv + edge_ids[&key]
    };

    // Child j of cell k occupies quadrant j (SW, SE, NE, NW) with its local
    // frame aligned to the parent's; children are pushed in order, so child
    // ids are 4k + j and the parent map is k = child / 4.
    let mut cells = Vec::with_capacity(4 * mesh.cells.len());
    for (k, cell) in mesh.cells.iter().enumerate() {
        let m: Vec<usize> = (0..4).map(|e| edge_vertex(cell[e], cell[(e + 1) % 4])).collect();
        let c = center_base + k;
        cells.push([cell[0], m[0], c, m[3]]);
        cells.push([m[0], cell[1], m[1], c]);
        cells.push([c, m[1], cell[2], m[2]]);
        cells.push([m[3], c, m[2], cell[3]]);
    }

    let mut boundary = Vec::with_capacity(2 * mesh.boundary.len());
    for be in &mesh.boundary {
        // With aligned children, parent edge e splits into local edge e of
        // children e and (e+1)%4.
        boundary.push(BoundaryEdge {
            cell: 4 * be.cell + be.edge,
            edge: be.edge,
            tag: be.tag,
        });
        boundary.push(BoundaryEdge {
            cell: 4 * be.cell + (be.edge + 1) % 4,
            edge: be.edge,
            tag: be.tag,
        });
    }

    let refined = BaseMesh {
        vertices,
        cells,
        boundary,
        obstacles: mesh.obstacles.clone(),
    };
    for (k, cell) in refined.cells.iter().enumerate() {
        for i in 0..4 {
            let v = refined.vertices[cell[i]];
            let vn = refined.vertices[cell[(i + 1) % 4]];
            let vp = refined.vertices[cell[(i + 3) % 4]];
            if cross(sub(vn, v), sub(vp, v)) <= 0.0 {
                return Err(Error::Mesh(format!(
                    "refinement produced degenerate child cell {k} (parent {})",
                    k / 4
                )));
            }
        }
    }
    Ok(refined)
}

#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    /// Levels 0..=L+J, coarsest first.
    pub levels: Vec<BaseMesh>,
    /// `parent_map[l][c]` is the level-`l` parent of child cell `c` on level `l+1`.
    pub parent_map: Vec<Vec<usize>>,
    pub coarse_level: usize,
    pub jump: usize,
}

impl MeshHierarchy {
    pub fn fine_level(&self) -> usize {
        self.coarse_level + self.jump
    }

    pub fn level(&self, l: usize) -> &BaseMesh {
        &self.levels[l]
    }
}

/// Refine `base` L+J times. Requires J >= 1.
pub fn build_hierarchy(base: BaseMesh, coarse_level: usize, jump: usize) -> Result<MeshHierarchy> {
    if jump == 0 {
        return Err(Error::Config("jump level J must be >= 1".into()));
    }
    base.validate()?;
    let mut levels = vec![base];
    let mut parent_map = Vec::new();
    for _ in 0..coarse_level + jump {
        let next = refine_uniform(levels.last().unwrap())?;
        parent_map.push((0..next.cells.len()).map(|c| c / 4).collect());
        levels.push(next);
    }
    Ok(MeshHierarchy {
        levels,
        parent_map,
        coarse_level,
        jump,
    })
}

/// Patch decomposition of the fine level. One patch per cell of level
/// L+J-M; `nodes` lists the (2^(M+1)+1)^2 fine-level Q2 node ids of the
/// patch in lexicographic reference order (y-major), `vertices` the
/// (2^M+1)^2 geometric vertex ids in the same order.
#[derive(Clone, Debug)]
pub struct PatchIndex {
    pub patch_size: usize,
    pub fine_level: usize,
    pub patches: Vec<Patch>,
    /// Number of patches containing each fine-level Q2 node.
    pub multiplicity: Vec<u32>,
    /// Patches sharing at least one vertex, excluding the patch itself.
    pub ring1: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
pub struct Patch {
    pub nodes: Vec<usize>,
    pub vertices: Vec<usize>,
}

/// Q2 nodes per patch of size M.
pub fn nodes_per_patch(patch_size: usize) -> usize {
    let side = (1usize << (patch_size + 1)) + 1;
    side * side
}

/// Geometric vertices per patch of size M.
pub fn vertices_per_patch(patch_size: usize) -> usize {
    let side = (1usize << patch_size) + 1;
    side * side
}

impl MeshHierarchy {
    /// Descendant cells of `cell` (on `level`) at `level + gens`, together
    /// with their sub-square origin in the ancestor's 2^gens grid.
    fn descendants(&self, cell: usize, gens: usize) -> Vec<(usize, (usize, usize))> {
        let mut cur = vec![(cell, (0usize, 0usize))];
        for _ in 0..gens {
            let mut next = Vec::with_capacity(cur.len() * 4);
            for (c, (x, y)) in cur {
                // Child j keeps corner j: SW, SE, NE, NW.
                let offs = [(0, 0), (1, 0), (1, 1), (0, 1)];
                for (j, (ox, oy)) in offs.iter().enumerate() {
                    next.push((4 * c + j, (2 * x + ox, 2 * y + oy)));
                }
            }
            cur = next;
        }
        cur
    }
}

/// Build the patch index for patch size `m` on the hierarchy's fine level.
/// Requires `0 <= m < L+J`. `q2_cell_nodes` supplies, for a fine-level cell,
/// its 9 Q2 node ids in lexicographic order, and `n_nodes` the fine-level Q2
/// node count (both come from the FEM dof map to keep numbering consistent).
pub fn build_patches(
    h: &MeshHierarchy,
    m: usize,
    q2_cell_nodes: &dyn Fn(usize) -> [usize; 9],
    n_nodes: usize,
) -> Result<PatchIndex> {
    let fine = h.fine_level();
    if m >= fine {
        return Err(Error::Config(format!(
            "patch size M={m} out of range for L+J={fine}"
        )));
    }
    let patch_level = fine - m;
    let n_patches = h.levels[patch_level].cells.len();
    let side = (1usize << (m + 1)) + 1;
    let vside = (1usize << m) + 1;

    let mut patches = Vec::with_capacity(n_patches);
    let mut multiplicity = vec![0u32; n_nodes];
    for p in 0..n_patches {
        let mut nodes = vec![usize::MAX; side * side];
        for (cell, (cx, cy)) in h.descendants(p, m) {
            let local = q2_cell_nodes(cell);
            for b in 0..3 {
                for a in 0..3 {
                    let gx = 2 * cx + a;
                    let gy = 2 * cy + b;
                    nodes[gy * side + gx] = local[b * 3 + a];
                }
            }
        }
        debug_assert!(nodes.iter().all(|&n| n != usize::MAX));
        let mut vertices = Vec::with_capacity(vside * vside);
        for gy in (0..side).step_by(2) {
            for gx in (0..side).step_by(2) {
                vertices.push(nodes[gy * side + gx]);
            }
        }
        for &n in &nodes {
            multiplicity[n] += 1;
        }
        patches.push(Patch { nodes, vertices });
    }

    // 1-ring adjacency through shared vertices.
    let mut by_vertex: HashMap<usize, Vec<usize>> = HashMap::new();
    for (pid, patch) in patches.iter().enumerate() {
        for &v in &patch.vertices {
            by_vertex.entry(v).or_default().push(pid);
        }
    }
    let mut ring1: Vec<Vec<usize>> = vec![Vec::new(); n_patches];
    for ids in by_vertex.values() {
        for &a in ids {
            for &b in ids {
                if a != b && !ring1[a].contains(&b) {
                    ring1[a].push(b);
                }
            }
        }
    }
    for r in &mut ring1 {
        r.sort_unstable();
    }

    Ok(PatchIndex {
        patch_size: m,
        fine_level: fine,
        patches,
        multiplicity,
        ring1,
    })
}

// ---------------------------------------------------------------------------
// Generators

/// Unit square [0,1]^2 with `n x n` cells, all edges tagged `wall`.
pub fn unit_square(n: usize) -> BaseMesh {
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut cells = Vec::with_capacity(n * n);
    let mut boundary = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let c = cells.len();
            cells.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            if j == 0 {
                boundary.push(BoundaryEdge { cell: c, edge: 0, tag: BoundaryTag::Wall });
            }
            if i + 1 == n {
                boundary.push(BoundaryEdge { cell: c, edge: 1, tag: BoundaryTag::Wall });
            }
            if j + 1 == n {
                boundary.push(BoundaryEdge { cell: c, edge: 2, tag: BoundaryTag::Wall });
            }
            if i == 0 {
                boundary.push(BoundaryEdge { cell: c, edge: 3, tag: BoundaryTag::Wall });
            }
        }
    }
    BaseMesh { vertices, cells, boundary, obstacles: Vec::new() }
}

const RO_TILE_W: f64 = 0.4;
const RO_TILE_H: f64 = 0.41;
/// Trailing plain sections behind the obstacle tiles (ro1 totals 2.2).
const RO_TRAILING: [f64; 4] = [0.4, 0.4, 0.45, 0.55];

/// Per-obstacle shape variation for the `ro` family.
#[derive(Clone, Copy, Debug)]
pub struct ObstacleShape {
    /// Center offset within the tile, relative to (0.2, 0.2).
    pub offset: Point,
    pub a: f64,
    pub b: f64,
}

impl ObstacleShape {
    /// The single-obstacle benchmark shape: ellipse with 2a = 0.08,
    /// 2b = 0.12 centered at (0.2, 0.2) of its tile.
    pub fn canonical() -> Self {
        ObstacleShape { offset: [0.0, 0.0], a: 0.04, b: 0.06 }
    }
}

/// Channel with a grid of `nx x ny` elliptical obstacles. Each obstacle
/// lives in a 0.4 x 0.41 tile of four ring cells whose inner corners lie on
/// the ellipse; plain single-cell tiles extend the channel downstream.
/// `shapes` must have `nx * ny` entries (row-major, bottom row first).
pub fn round_obstacle_channel(nx: usize, ny: usize, shapes: &[ObstacleShape]) -> Result<BaseMesh> {
    if shapes.len() != nx * ny {
        return Err(Error::Config(format!(
            "expected {} obstacle shapes, got {}",
            nx * ny,
            shapes.len()
        )));
    }
    let height = RO_TILE_H * ny as f64;
    let mut mesh = BaseMesh {
        vertices: Vec::new(),
        cells: Vec::new(),
        boundary: Vec::new(),
        obstacles: Vec::new(),
    };
    let mut vertex_ids: HashMap<(i64, i64), usize> = HashMap::new();
    let mut add_vertex = |mesh: &mut BaseMesh, p: Point| -> usize {
        // Shared tile corners are snapped through a fixed-point key.
        let key = ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        *vertex_ids.entry(key).or_insert_with(|| {
            mesh.vertices.push(p);
            mesh.vertices.len() - 1
        })
    };

    let total_w = RO_TILE_W * nx as f64 + RO_TRAILING.iter().sum::<f64>();
    for row in 0..ny {
        let y0 = RO_TILE_H * row as f64;
        let y1 = y0 + RO_TILE_H;
        for col in 0..nx {
            let x0 = RO_TILE_W * col as f64;
            let x1 = x0 + RO_TILE_W;
            let shape = shapes[row * nx + col];
            let ellipse = Ellipse {
                center: [x0 + 0.2 + shape.offset[0], y0 + 0.2 + shape.offset[1]],
                a: shape.a,
                b: shape.b,
            };
            mesh.obstacles.push(ellipse);
            let outer = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
            // Inner ring corners on the ellipse at 225/315/45/135 degrees.
            let angles = [1.25, 1.75, 0.25, 0.75].map(|t| t * std::f64::consts::PI);
            let inner = angles.map(|t| ellipse.point_at(t));
            let o: Vec<usize> = outer.iter().map(|&p| add_vertex(&mut mesh, p)).collect();
            let i: Vec<usize> = inner.iter().map(|&p| add_vertex(&mut mesh, p)).collect();
            // Ring cells: bottom, right, top, left (ccw each).
            let ring = [
                [o[0], o[1], i[1], i[0]],
                [o[1], o[2], i[2], i[1]],
                [o[2], o[3], i[3], i[2]],
                [o[3], o[0], i[0], i[3]],
            ];
            for (side, cell) in ring.iter().enumerate() {
                let c = mesh.cells.len();
                mesh.cells.push(*cell);
                // Edge 2 of each ring cell connects the two inner corners.
                mesh.boundary.push(BoundaryEdge { cell: c, edge: 2, tag: BoundaryTag::Obstacle });
                // Edge 0 is the outer tile edge; tag it where it lies on the
                // channel boundary.
                let tag = match side {
                    0 if row == 0 => Some(BoundaryTag::Wall),
                    2 if row + 1 == ny => Some(BoundaryTag::Wall),
                    3 if col == 0 => Some(BoundaryTag::Inflow),
                    _ => None,
                };
                if let Some(tag) = tag {
                    mesh.boundary.push(BoundaryEdge { cell: c, edge: 0, tag });
                }
            }
        }
        // Trailing plain cells, one per section and row.
        let mut x0 = RO_TILE_W * nx as f64;
        for (s, w) in RO_TRAILING.iter().enumerate() {
            let x1 = x0 + w;
            let c = mesh.cells.len();
            let v = [
                add_vertex(&mut mesh, [x0, y0]),
                add_vertex(&mut mesh, [x1, y0]),
                add_vertex(&mut mesh, [x1, y1]),
                add_vertex(&mut mesh, [x0, y1]),
            ];
            mesh.cells.push(v);
            if row == 0 {
                mesh.boundary.push(BoundaryEdge { cell: c, edge: 0, tag: BoundaryTag::Wall });
            }
            if row + 1 == ny {
                mesh.boundary.push(BoundaryEdge { cell: c, edge: 2, tag: BoundaryTag::Wall });
            }
            if s + 1 == RO_TRAILING.len() {
                mesh.boundary.push(BoundaryEdge { cell: c, edge: 1, tag: BoundaryTag::Outflow });
            }
            x0 = x1;
        }
    }
    debug_assert!((total_w - (RO_TILE_W * nx as f64 + 1.8)).abs() < 1e-12);
    let _ = (total_w, height);
    mesh.validate()?;
    Ok(mesh)
}

/// Channel with a grid of `nx x ny` square holes of side 0.1 in a structured
/// mesh (no curved boundaries), following the layout of the square-obstacle
/// cases: a 0.15 lead column, alternating gap/obstacle columns, and a trailing
/// section of widening cells.
pub fn square_obstacle_channel(nx: usize, ny: usize) -> Result<BaseMesh> {
    let mut xs = vec![0.0, 0.15];
    for _ in 0..nx {
        let last = *xs.last().unwrap();
        xs.push(last + 0.1);
        xs.push(last + 0.2);
    }
    let last = *xs.last().unwrap();
    xs.push(last + 0.1);
    for w in [0.2, 0.3, 0.4, 0.45, 0.45] {
        let last = *xs.last().unwrap();
        xs.push(last + w);
    }
    let mut ys = vec![0.0];
    for _ in 0..ny {
        let last = *ys.last().unwrap();
        ys.push(last + 0.1);
        ys.push(last + 0.2);
    }
    let last = *ys.last().unwrap();
    ys.push(last + 0.1);

    let ncx = xs.len() - 1;
    let ncy = ys.len() - 1;
    // Obstacle columns are 2, 4, ... (0-based) in the x direction, rows
    // likewise in y.
    let is_hole = |i: usize, j: usize| -> bool {
        let obs_col = i >= 2 && i < 2 + 2 * nx && (i % 2 == 0);
        let obs_row = j >= 1 && j < 1 + 2 * ny && (j % 2 == 1);
        obs_col && obs_row
    };

    let mut vertices = Vec::new();
    let mut vid = HashMap::new();
    for j in 0..=ncy {
        for i in 0..=ncx {
            vid.insert((i, j), vertices.len());
            vertices.push([xs[i], ys[j]]);
        }
    }
    let mut cells = Vec::new();
    let mut cell_id = HashMap::new();
    for j in 0..ncy {
        for i in 0..ncx {
            if is_hole(i, j) {
                continue;
            }
            cell_id.insert((i, j), cells.len());
            cells.push([vid[&(i, j)], vid[&(i + 1, j)], vid[&(i + 1, j + 1)], vid[&(i, j + 1)]]);
        }
    }
    let mut boundary = Vec::new();
    for j in 0..ncy {
        for i in 0..ncx {
            let Some(&c) = cell_id.get(&(i, j)) else { continue };
            let neigh = |di: isize, dj: isize| -> Option<bool> {
                let ni = i as isize + di;
                let nj = j as isize + dj;
                if ni < 0 || nj < 0 || ni as usize >= ncx || nj as usize >= ncy {
                    None
                } else {
                    Some(is_hole(ni as usize, nj as usize))
                }
            };
            let sides = [(0, (0, -1)), (1, (1, 0)), (2, (0, 1)), (3, (-1, 0))];
            for (edge, (di, dj)) in sides {
                match neigh(di, dj) {
                    Some(true) => {
                        boundary.push(BoundaryEdge { cell: c, edge, tag: BoundaryTag::Obstacle })
                    }
                    Some(false) => {}
                    None => {
                        let tag = match edge {
                            0 | 2 => BoundaryTag::Wall,
                            1 => BoundaryTag::Outflow,
                            _ => BoundaryTag::Inflow,
                        };
                        boundary.push(BoundaryEdge { cell: c, edge, tag });
                    }
                }
            }
        }
    }
    let mesh = BaseMesh { vertices, cells, boundary, obstacles: Vec::new() };
    mesh.validate()?;
    Ok(mesh)
}

/// Obstacle grid arrangement for N obstacles: the most square factor pair
/// with ny <= nx (ro3 -> 1x3, ro9 -> 3x3).
pub fn obstacle_grid(n: usize) -> (usize, usize) {
    let mut ny = 1;
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            ny = d;
        }
        d += 1;
    }
    (n / ny, ny)
}

// ---------------------------------------------------------------------------
// Mesh file format

const MESH_MAGIC: &str = "hybridmg-mesh v1";
const MESH_MAGIC_BIN: &str = "hybridmg-mesh-bin v1";

/// Write the text mesh format.
pub fn write_mesh_text<W: Write>(mesh: &BaseMesh, w: &mut W) -> Result<()> {
    writeln!(w, "{MESH_MAGIC}")?;
    writeln!(w, "vertices {}", mesh.vertices.len())?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        writeln!(w, "{i} {:.17e} {:.17e}", v[0], v[1])?;
    }
    writeln!(w, "cells {}", mesh.cells.len())?;
    for c in &mesh.cells {
        writeln!(w, "{} {} {} {}", c[0], c[1], c[2], c[3])?;
    }
    writeln!(w, "boundary {}", mesh.boundary.len())?;
    for b in &mesh.boundary {
        writeln!(w, "{} {} {}", b.cell, b.edge, b.tag)?;
    }
    writeln!(w, "obstacles {}", mesh.obstacles.len())?;
    for e in &mesh.obstacles {
        writeln!(
            w,
            "ellipse {:.17e} {:.17e} {:.17e} {:.17e}",
            e.center[0], e.center[1], e.a, e.b
        )?;
    }
    Ok(())
}

fn section_header(line: &str, name: &str) -> Result<usize> {
    let mut it = line.split_whitespace();
    match (it.next(), it.next()) {
        (Some(n), Some(count)) if n == name => count
            .parse()
            .map_err(|_| Error::Format(format!("bad {name} count"))),
        _ => Err(Error::Format(format!("expected `{name} <count>`, got `{line}`"))),
    }
}

pub fn read_mesh_text<R: Read>(r: R) -> Result<BaseMesh> {
    let mut lines = BufReader::new(r).lines();
    let mut next = || -> Result<String> {
        loop {
            match lines.next() {
                Some(Ok(l)) => {
                    let t = l.trim().to_string();
                    if !t.is_empty() {
                        return Ok(t);
                    }
                }
                Some(Err(e)) => return Err(e.into()),
                None => return Err(Error::Format("unexpected end of mesh file".into())),
            }
        }
    };
    let magic = next()?;
    if magic != MESH_MAGIC {
        return Err(Error::Format(format!("bad mesh magic `{magic}`")));
    }
    let nv = section_header(&next()?, "vertices")?;
    let mut vertices = vec![[0.0; 2]; nv];
    for _ in 0..nv {
        let l = next()?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("bad vertex line `{l}`")));
        }
        let i: usize = f[0].parse().map_err(|_| Error::Format("bad vertex id".into()))?;
        let x: f64 = f[1].parse().map_err(|_| Error::Format("bad vertex x".into()))?;
        let y: f64 = f[2].parse().map_err(|_| Error::Format("bad vertex y".into()))?;
        if i >= nv {
            return Err(Error::Format(format!("vertex id {i} out of range")));
        }
        vertices[i] = [x, y];
    }
    let nc = section_header(&next()?, "cells")?;
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let l = next()?;
        let f: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Format(format!("bad cell line `{l}`"))))
            .collect::<Result<_>>()?;
        if f.len() != 4 {
            return Err(Error::Format(format!("bad cell line `{l}`")));
        }
        cells.push([f[0], f[1], f[2], f[3]]);
    }
    let nb = section_header(&next()?, "boundary")?;
    let mut boundary = Vec::with_capacity(nb);
    for _ in 0..nb {
        let l = next()?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("bad boundary line `{l}`")));
        }
        boundary.push(BoundaryEdge {
            cell: f[0].parse().map_err(|_| Error::Format("bad boundary cell".into()))?,
            edge: f[1].parse().map_err(|_| Error::Format("bad boundary edge".into()))?,
            tag: BoundaryTag::parse(f[2])?,
        });
    }
    let no = section_header(&next()?, "obstacles")?;
    let mut obstacles = Vec::with_capacity(no);
    for _ in 0..no {
        let l = next()?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 5 || f[0] != "ellipse" {
            return Err(Error::Format(format!("bad obstacle line `{l}`")));
        }
        let nums: Vec<f64> = f[1..]
            .iter()
            .map(|t| t.parse().map_err(|_| Error::Format("bad obstacle number".into())))
            .collect::<Result<_>>()?;
        obstacles.push(Ellipse { center: [nums[0], nums[1]], a: nums[2], b: nums[3] });
    }
    let mesh = BaseMesh { vertices, cells, boundary, obstacles };
    mesh.validate()?;
    Ok(mesh)
}

/// Little-endian binary variant with the same sections, for large meshes.
pub fn write_mesh_binary<W: Write>(mesh: &BaseMesh, w: &mut W) -> Result<()> {
    w.write_all(MESH_MAGIC_BIN.as_bytes())?;
    w.write_all(b"\n")?;
    w.write_all(&(mesh.vertices.len() as u64).to_le_bytes())?;
    for v in &mesh.vertices {
        w.write_all(&v[0].to_le_bytes())?;
        w.write_all(&v[1].to_le_bytes())?;
    }
    w.write_all(&(mesh.cells.len() as u64).to_le_bytes())?;
    for c in &mesh.cells {
        for &i in c {
            w.write_all(&(i as u64).to_le_bytes())?;
        }
    }
    w.write_all(&(mesh.boundary.len() as u64).to_le_bytes())?;
    for b in &mesh.boundary {
        w.write_all(&(b.cell as u64).to_le_bytes())?;
        w.write_all(&(b.edge as u64).to_le_bytes())?;
        let tag: u64 = match b.tag {
            BoundaryTag::Inflow => 0,
            BoundaryTag::Outflow => 1,
            BoundaryTag::Wall => 2,
            BoundaryTag::Obstacle => 3,
        };
        w.write_all(&tag.to_le_bytes())?;
    }
    w.write_all(&(mesh.obstacles.len() as u64).to_le_bytes())?;
    for e in &mesh.obstacles {
        for x in [e.center[0], e.center[1], e.a, e.b] {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_mesh_binary<R: Read>(mut r: R) -> Result<BaseMesh> {
    let mut magic = vec![0u8; MESH_MAGIC_BIN.len() + 1];
    r.read_exact(&mut magic)?;
    if magic != [MESH_MAGIC_BIN.as_bytes(), b"\n"].concat() {
        return Err(Error::Format("bad binary mesh magic".into()));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let nv = read_u64(&mut r)? as usize;
    let mut f64buf = [0u8; 8];
    let mut read_f64 = |r: &mut R| -> Result<f64> {
        r.read_exact(&mut f64buf)?;
        Ok(f64::from_le_bytes(f64buf))
    };
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push([read_f64(&mut r)?, read_f64(&mut r)?]);
    }
    let mut u64buf2 = [0u8; 8];
    let mut read_u64b = |r: &mut R| -> Result<u64> {
        r.read_exact(&mut u64buf2)?;
        Ok(u64::from_le_bytes(u64buf2))
    };
    let nc = read_u64b(&mut r)? as usize;
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let mut c = [0usize; 4];
        for x in &mut c {
            *x = read_u64b(&mut r)? as usize;
        }
        cells.push(c);
    }
    let nb = read_u64b(&mut r)? as usize;
    let mut boundary = Vec::with_capacity(nb);
    for _ in 0..nb {
        let cell = read_u64b(&mut r)? as usize;
        let edge = read_u64b(&mut r)? as usize;
        let tag = match read_u64b(&mut r)? {
            0 => BoundaryTag::Inflow,
            1 => BoundaryTag::Outflow,
            2 => BoundaryTag::Wall,
            3 => BoundaryTag::Obstacle,
            t => return Err(Error::Format(format!("bad boundary tag code {t}"))),
        };
        boundary.push(BoundaryEdge { cell, edge, tag });
    }
    let no = read_u64b(&mut r)? as usize;
    let mut obstacles = Vec::with_capacity(no);
    for _ in 0..no {
        let mut vals = [0.0f64; 4];
        for v in &mut vals {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        obstacles.push(Ellipse { center: [vals[0], vals[1]], a: vals[2], b: vals[3] });
    }
    let mesh = BaseMesh { vertices, cells, boundary, obstacles };
    mesh.validate()?;
    Ok(mesh)
}

pub fn write_mesh_file(mesh: &BaseMesh, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    write_mesh_text(mesh, &mut w)
}

pub fn read_mesh_file(path: &Path) -> Result<BaseMesh> {
    let f = std::fs::File::open(path)?;
    let mut head = [0u8; 17];
    use std::io::Seek;
    let mut f2 = f;
    let n = f2.read(&mut head)?;
    f2.rewind()?;
    if n >= 17 && &head[..17] == b"hybridmg-mesh-bin" {
        read_mesh_binary(BufReader::new(f2))
    } else {
        read_mesh_text(f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_refines_to_four_cells() {
        let m = unit_square(1);
        assert_eq!(m.cell_count(), 1);
        let r = refine_uniform(&m).unwrap();
        assert_eq!(r.cell_count(), 4);
        assert_eq!(r.vertices.len(), 9);
        r.validate().unwrap();
    }

    #[test]
    fn refinement_quadruples_cells_and_keeps_parent_vertices() {
        let m = round_obstacle_channel(1, 1, &[ObstacleShape::canonical()]).unwrap();
        let n = m.cell_count();
        let r = refine_uniform(&m).unwrap();
        assert_eq!(r.cell_count(), 4 * n);
        for (i, v) in m.vertices.iter().enumerate() {
            assert_eq!(r.vertices[i], *v);
        }
    }

    #[test]
    fn obstacle_edge_midpoints_land_on_ellipse() {
        let m = round_obstacle_channel(1, 1, &[ObstacleShape::canonical()]).unwrap();
        let r = refine_uniform(&m).unwrap();
        let e = m.obstacles[0];
        let mut checked = 0;
        for be in &r.boundary {
            if be.tag == BoundaryTag::Obstacle {
                let (v0, v1) = r.edge_vertices(be.cell, be.edge);
                for v in [v0, v1] {
                    assert!((e.eval(r.vertices[v]) - 1.0).abs() < 1e-12 * RO_TILE_H);
                }
                checked += 1;
            }
        }
        assert_eq!(checked, 8);
    }

    #[test]
    fn hierarchy_counts_and_parent_containment() {
        let base = round_obstacle_channel(1, 1, &[ObstacleShape::canonical()]).unwrap();
        let n0 = base.cell_count();
        let h = build_hierarchy(base, 2, 1).unwrap();
        assert_eq!(h.levels.len(), 4);
        assert_eq!(h.levels[3].cell_count(), 64 * n0);
        // Every child centroid must lie in its parent quad.
        for l in 0..3 {
            let coarse = &h.levels[l];
            let fine = &h.levels[l + 1];
            for (c, cell) in fine.cells.iter().enumerate() {
                let mut cx = 0.0;
                let mut cy = 0.0;
                for &v in cell {
                    cx += fine.vertices[v][0] / 4.0;
                    cy += fine.vertices[v][1] / 4.0;
                }
                let p = h.parent_map[l][c];
                let q = coarse.cells[p];
                // Point-in-quad by winding: all cross products non-negative.
                let inside = (0..4).all(|e| {
                    let a = coarse.vertices[q[e]];
                    let b = coarse.vertices[q[(e + 1) % 4]];
                    cross(sub(b, a), sub([cx, cy], a)) > -1e-12
                });
                assert!(inside, "level {} child {} not inside parent {}", l + 1, c, p);
            }
        }
    }

    #[test]
    fn rejects_zero_jump() {
        let base = unit_square(1);
        assert!(build_hierarchy(base, 0, 0).is_err());
    }

    #[test]
    fn square_channel_layout() {
        let m = square_obstacle_channel(2, 2).unwrap();
        // Matches the documented 2x2 case: 2.45 x 0.5 channel.
        let xmax = m.vertices.iter().map(|v| v[0]).fold(0.0, f64::max);
        let ymax = m.vertices.iter().map(|v| v[1]).fold(0.0, f64::max);
        assert!((xmax - 2.45).abs() < 1e-12);
        assert!((ymax - 0.5).abs() < 1e-12);
        let holes = m.boundary.iter().filter(|b| b.tag == BoundaryTag::Obstacle).count();
        assert_eq!(holes, 16);
    }

    #[test]
    fn obstacle_grid_shapes() {
        assert_eq!(obstacle_grid(1), (1, 1));
        assert_eq!(obstacle_grid(3), (3, 1));
        assert_eq!(obstacle_grid(4), (2, 2));
        assert_eq!(obstacle_grid(6), (3, 2));
        assert_eq!(obstacle_grid(9), (3, 3));
    }

    #[test]
    fn mesh_text_roundtrip() {
        let m = round_obstacle_channel(2, 1, &[ObstacleShape::canonical(); 2]).unwrap();
        let mut buf = Vec::new();
        write_mesh_text(&m, &mut buf).unwrap();
        let m2 = read_mesh_text(buf.as_slice()).unwrap();
        assert_eq!(m.vertices, m2.vertices);
        assert_eq!(m.cells, m2.cells);
        assert_eq!(m.boundary.len(), m2.boundary.len());
        assert_eq!(m.obstacles.len(), m2.obstacles.len());
    }

    #[test]
    fn mesh_binary_roundtrip() {
        let m = square_obstacle_channel(1, 1).unwrap();
        let mut buf = Vec::new();
        write_mesh_binary(&m, &mut buf).unwrap();
        let m2 = read_mesh_binary(buf.as_slice()).unwrap();
        assert_eq!(m.vertices, m2.vertices);
        assert_eq!(m.cells, m2.cells);
    }

    #[test]
    fn corrupted_magic_is_reported() {
        let m = unit_square(1);
        let mut buf = Vec::new();
        write_mesh_text(&m, &mut buf).unwrap();
        buf[0] = b'X';
        match read_mesh_text(buf.as_slice()) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
