//! Inter-level transfer and the neural-network interface operators.
//!
//! Prolongation interpolates into the nested Q2 space of the next finer
//! level; dual restriction is its exact transpose. `gather` packs the
//! fine-level solution, residual and patch geometry into one normalized row
//! per patch, and `scatter` turns per-patch velocity defects back into a
//! global correction, averaging shared nodes by multiplicity.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::shape::q2_values;
use crate::fem::{FemLevel, StateVector, N_COMP};
use crate::linalg::Csr;
use crate::mesh::PatchIndex;
use crate::network::normalizer::Normalizer;

/// Node-based interpolation matrices between consecutive levels.
pub struct TransferOps {
    /// `interp[l]` maps level-`l` nodal values to level-`l+1` nodal values.
    pub interp: Vec<Csr>,
    pub n_nodes: Vec<usize>,
}

impl TransferOps {
    pub fn build(levels: &[FemLevel]) -> TransferOps {
        let mut interp = Vec::with_capacity(levels.len() - 1);
        for l in 0..levels.len() - 1 {
            interp.push(build_interp(levels, l));
        }
        TransferOps {
            interp,
            n_nodes: levels.iter().map(|f| f.n_nodes()).collect(),
        }
    }

    /// Interpolate a state one level up.
    pub fn prolongate_once(&self, x: &StateVector) -> StateVector {
        let p = &self.interp[x.level];
        let nf = self.n_nodes[x.level + 1];
        let mut out = StateVector::zeros(x.level + 1, nf);
        out.time = x.time;
        for n in 0..nf {
            let mut acc = [0.0; N_COMP];
            for k in p.row_ptr[n]..p.row_ptr[n + 1] {
                let m = p.cols[k] as usize;
                let w = p.vals[k];
                for c in 0..N_COMP {
                    acc[c] += w * x.coeffs[N_COMP * m + c];
                }
            }
            for c in 0..N_COMP {
                out.coeffs[N_COMP * n + c] = acc[c];
            }
        }
        out
    }

    /// Interpolate a state to `target` level (exact on coarse-space
    /// functions).
    pub fn prolongate(&self, x: &StateVector, target: usize) -> Result<StateVector> {
        if target < x.level || target >= self.n_nodes.len() {
            return Err(Error::Shape(format!(
                "cannot prolongate level {} to {target}",
                x.level
            )));
        }
        let mut cur = x.clone();
        while cur.level < target {
            cur = self.prolongate_once(&cur);
        }
        Ok(cur)
    }

    /// Transpose action on a dual vector, one level down.
    pub fn restrict_dual_once(&self, b: &[f64], fine_level: usize) -> Vec<f64> {
        let p = &self.interp[fine_level - 1];
        let nf = self.n_nodes[fine_level];
        let nc = self.n_nodes[fine_level - 1];
        debug_assert_eq!(b.len(), N_COMP * nf);
        let mut out = vec![0.0; N_COMP * nc];
        for n in 0..nf {
            for k in p.row_ptr[n]..p.row_ptr[n + 1] {
                let m = p.cols[k] as usize;
                let w = p.vals[k];
                for c in 0..N_COMP {
                    out[N_COMP * m + c] += w * b[N_COMP * n + c];
                }
            }
        }
        out
    }

    /// Transpose action from `from_level` down to `target`.
    pub fn restrict_dual(&self, b: &[f64], from_level: usize, target: usize) -> Result<Vec<f64>> {
        if target > from_level {
            return Err(Error::Shape(format!(
                "cannot restrict level {from_level} to {target}"
            )));
        }
        let mut cur = b.to_vec();
        let mut lvl = from_level;
        while lvl > target {
            cur = self.restrict_dual_once(&cur, lvl);
            lvl -= 1;
        }
        Ok(cur)
    }

    /// Pointwise restriction of a primal state one level down: every coarse
    /// Q2 node coincides with a fine vertex of the same index.
    pub fn inject_once(&self, x: &StateVector) -> StateVector {
        let nc = self.n_nodes[x.level - 1];
        StateVector {
            level: x.level - 1,
            time: x.time,
            coeffs: x.coeffs[..N_COMP * nc].to_vec(),
        }
    }

    pub fn inject(&self, x: &StateVector, target: usize) -> Result<StateVector> {
        if target > x.level {
            return Err(Error::Shape(format!(
                "cannot inject level {} to {target}",
                x.level
            )));
        }
        let mut cur = x.clone();
        while cur.level > target {
            cur = self.inject_once(&cur);
        }
        Ok(cur)
    }
}

/// Interpolation rows: each fine node takes the coarse Q2 basis values at
/// its reference position inside the parent cell. Fine nodes that are also
/// coarse nodes get identity rows.
fn build_interp(levels: &[FemLevel], l: usize) -> Csr {
    let coarse = &levels[l];
    let fine = &levels[l + 1];
    let nc = coarse.n_nodes();
    let nf = fine.n_nodes();
    let mut triplets: Vec<(u32, u32, f64)> = Vec::new();
    let mut done = vec![false; nf];
    // Coarse node i coincides with fine vertex i.
    for i in 0..nc {
        triplets.push((i as u32, i as u32, 1.0));
        done[i] = true;
    }
    // Child j of coarse cell k is fine cell 4k + j, occupying quadrant j.
    let quadrant = [(0usize, 0usize), (1, 0), (1, 1), (0, 1)];
    for k in 0..coarse.n_cells() {
        let coarse_nodes = coarse.cell_nodes[k];
        for (j, &(qx, qy)) in quadrant.iter().enumerate() {
            let fc = 4 * k + j;
            for b in 0..3 {
                for a in 0..3 {
                    let n = fine.cell_nodes[fc][3 * b + a];
                    if done[n] {
                        continue;
                    }
                    done[n] = true;
                    let xi = (qx as f64 + a as f64 * 0.5) * 0.5;
                    let eta = (qy as f64 + b as f64 * 0.5) * 0.5;
                    let w = q2_values(xi, eta);
                    for (i, &cn) in coarse_nodes.iter().enumerate() {
                        if w[i].abs() > 1e-14 {
                            triplets.push((n as u32, cn as u32, w[i]));
                        }
                    }
                }
            }
        }
    }
    Csr::from_triplets(nf, nc, &mut triplets)
}

/// Rows of per-patch network inputs: for each node (r_p, r_vx, r_vy, x_p,
/// x_vx, x_vy), then relative vertex positions (g*_x, g*_y).
#[derive(Clone, Debug)]
pub struct PatchBatch {
    pub n_patches: usize,
    pub n_in: usize,
    pub rows: Vec<f64>,
}

impl PatchBatch {
    pub fn row(&self, p: usize) -> &[f64] {
        &self.rows[p * self.n_in..(p + 1) * self.n_in]
    }
}

/// Gather normalized per-patch inputs from the fine-level state and residual.
pub fn gather(
    x: &StateVector,
    residual: &[f64],
    patches: &PatchIndex,
    fem_fine: &FemLevel,
    norm: &Normalizer,
) -> Result<PatchBatch> {
    let np = crate::mesh::nodes_per_patch(patches.patch_size);
    let vp = crate::mesh::vertices_per_patch(patches.patch_size);
    let n_in = 6 * np + 2 * vp;
    if x.level != patches.fine_level || residual.len() != N_COMP * x.n_nodes() {
        return Err(Error::Shape("gather: level or residual size mismatch".into()));
    }
    if norm.n_in() != n_in {
        return Err(Error::Shape(format!(
            "gather: normalizer width {} expected {n_in}",
            norm.n_in()
        )));
    }
    let rows: Vec<Vec<f64>> = patches
        .patches
        .par_iter()
        .map(|patch| {
            let mut row = Vec::with_capacity(n_in);
            for &n in &patch.nodes {
                row.push(residual[N_COMP * n]);
                row.push(residual[N_COMP * n + 1]);
                row.push(residual[N_COMP * n + 2]);
                row.push(x.coeffs[N_COMP * n]);
                row.push(x.coeffs[N_COMP * n + 1]);
                row.push(x.coeffs[N_COMP * n + 2]);
            }
            // Vertex positions relative to the patch vertex centroid.
            let mut cx = 0.0;
            let mut cy = 0.0;
            for &v in &patch.vertices {
                cx += fem_fine.coords[v][0];
                cy += fem_fine.coords[v][1];
            }
            cx /= patch.vertices.len() as f64;
            cy /= patch.vertices.len() as f64;
            for &v in &patch.vertices {
                row.push(fem_fine.coords[v][0] - cx);
                row.push(fem_fine.coords[v][1] - cy);
            }
            norm.normalize_input(&mut row);
            row
        })
        .collect();
    let mut flat = Vec::with_capacity(patches.patches.len() * n_in);
    for r in rows {
        flat.extend_from_slice(&r);
    }
    Ok(PatchBatch { n_patches: patches.patches.len(), n_in, rows: flat })
}

/// Scatter per-patch velocity defects into a global correction vector
/// (pressure slots stay zero). Shared nodes are averaged by multiplicity and
/// Dirichlet velocity nodes are zeroed.
pub fn scatter(
    defects: &[f64],
    patches: &PatchIndex,
    fem_fine: &FemLevel,
    norm: &Normalizer,
) -> Result<Vec<f64>> {
    let np = crate::mesh::nodes_per_patch(patches.patch_size);
    let n_out = 2 * np;
    if defects.len() != patches.patches.len() * n_out {
        return Err(Error::Shape(format!(
            "scatter: got {} values, expected {} x {n_out}",
            defects.len(),
            patches.patches.len()
        )));
    }
    if norm.n_out() != n_out {
        return Err(Error::Shape("scatter: normalizer width mismatch".into()));
    }
    let n_nodes = fem_fine.n_nodes();
    let mut acc = vec![0.0; N_COMP * n_nodes];
    let mut row = vec![0.0; n_out];
    for (p, patch) in patches.patches.iter().enumerate() {
        row.copy_from_slice(&defects[p * n_out..(p + 1) * n_out]);
        norm.denormalize_output(&mut row);
        for (i, &n) in patch.nodes.iter().enumerate() {
            acc[N_COMP * n + 1] += row[2 * i];
            acc[N_COMP * n + 2] += row[2 * i + 1];
        }
    }
    for n in 0..n_nodes {
        let m = patches.multiplicity[n] as f64;
        if m > 0.0 {
            acc[N_COMP * n + 1] /= m;
            acc[N_COMP * n + 2] /= m;
        }
        if fem_fine.dirichlet[n].is_some() {
            acc[N_COMP * n + 1] = 0.0;
            acc[N_COMP * n + 2] = 0.0;
        }
    }
    Ok(acc)
}

/// Extract the gather-layout velocity of a global field, for round-trip
/// checks and defect targets: per patch the (vx, vy) of each node.
pub fn velocity_in_patch_layout(x: &StateVector, patches: &PatchIndex) -> Vec<f64> {
    let np = crate::mesh::nodes_per_patch(patches.patch_size);
    let mut out = Vec::with_capacity(patches.patches.len() * 2 * np);
    for patch in &patches.patches {
        for &n in &patch.nodes {
            out.push(x.coeffs[N_COMP * n + 1]);
            out.push(x.coeffs[N_COMP * n + 2]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FemLevel;
    use crate::mesh::{build_hierarchy, build_patches, unit_square, MeshHierarchy};
    use crate::network::normalizer::{Normalizer, PatchLayout};

    fn setup(l: usize, j: usize) -> (MeshHierarchy, Vec<FemLevel>) {
        let base = unit_square(2);
        let h = build_hierarchy(base, l, j).unwrap();
        let levels: Vec<FemLevel> = h
            .levels
            .iter()
            .enumerate()
            .map(|(i, m)| FemLevel::build(m, i).unwrap())
            .collect();
        (h, levels)
    }

    #[test]
    fn prolongation_is_exact_on_coarse_functions() {
        let (_h, levels) = setup(1, 1);
        let ops = TransferOps::build(&levels);
        // A Q2 function: v = x^2 y + 3x - y^2, set nodally on the coarse level.
        let f = |x: f64, y: f64| x * x * y + 3.0 * x - y * y;
        let mut x0 = levels[0].zero_state();
        for (i, c) in levels[0].coords.iter().enumerate() {
            x0.coeffs[N_COMP * i] = f(c[0], c[1]);
            x0.coeffs[N_COMP * i + 1] = 2.0 * f(c[1], c[0]);
            x0.coeffs[N_COMP * i + 2] = -f(c[0], c[0]);
        }
        let x2 = ops.prolongate(&x0, 2).unwrap();
        for (i, c) in levels[2].coords.iter().enumerate() {
            assert!((x2.coeffs[N_COMP * i] - f(c[0], c[1])).abs() < 1e-12);
            assert!((x2.coeffs[N_COMP * i + 1] - 2.0 * f(c[1], c[0])).abs() < 1e-12);
        }
        // Constant preservation (rows sum to one).
        let mut xc = levels[0].zero_state();
        for v in xc.coeffs.iter_mut() {
            *v = 4.5;
        }
        let fine = ops.prolongate(&xc, 2).unwrap();
        assert!(fine.coeffs.iter().all(|v| (v - 4.5).abs() < 1e-13));
    }

    #[test]
    fn prolongation_is_linear() {
        let (_h, levels) = setup(0, 1);
        let ops = TransferOps::build(&levels);
        let n = levels[0].n_nodes();
        let mut a = levels[0].zero_state();
        let mut b = levels[0].zero_state();
        for i in 0..N_COMP * n {
            a.coeffs[i] = (i as f64 * 0.7).sin();
            b.coeffs[i] = (i as f64 * 1.3).cos();
        }
        let mut combo = levels[0].zero_state();
        for i in 0..N_COMP * n {
            combo.coeffs[i] = 2.0 * a.coeffs[i] - 0.5 * b.coeffs[i];
        }
        let pa = ops.prolongate(&a, 1).unwrap();
        let pb = ops.prolongate(&b, 1).unwrap();
        let pc = ops.prolongate(&combo, 1).unwrap();
        for i in 0..pc.coeffs.len() {
            assert!((pc.coeffs[i] - (2.0 * pa.coeffs[i] - 0.5 * pb.coeffs[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn restriction_is_adjoint_of_prolongation() {
        let (_h, levels) = setup(1, 1);
        let ops = TransferOps::build(&levels);
        let nc = levels[1].n_dofs();
        let nf = levels[2].n_dofs();
        let mut state = 0x1234_5678_9abc_def0u64;
        let mut rnd = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..20 {
            let b: Vec<f64> = (0..nf).map(|_| rnd()).collect();
            let mut y = levels[1].zero_state();
            for i in 0..nc {
                y.coeffs[i] = rnd();
            }
            let py = ops.prolongate(&y, 2).unwrap();
            let rb = ops.restrict_dual(&b, 2, 1).unwrap();
            let lhs: f64 = rb.iter().zip(&y.coeffs).map(|(a, b)| a * b).sum();
            let rhs: f64 = b.iter().zip(&py.coeffs).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() < 1e-13 * (1.0 + rhs.abs()),
                "adjoint identity violated: {lhs} vs {rhs}"
            );
        }
        // Zero maps to zero.
        let rb = ops.restrict_dual(&vec![0.0; nf], 2, 1).unwrap();
        assert!(rb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gather_row_widths() {
        let (h, levels) = setup(1, 1);
        let fine = h.fine_level();
        let fem = &levels[fine];
        let cn = fem.cell_nodes.clone();
        let patches0 = build_patches(&h, 0, &|c| cn[c], fem.n_nodes()).unwrap();
        let nz = Normalizer::identity(62, 18);
        let x = fem.zero_state();
        let r = vec![0.0; fem.n_dofs()];
        let batch = gather(&x, &r, &patches0, fem, &nz).unwrap();
        assert_eq!(batch.n_in, 62);
        assert_eq!(batch.n_patches, fem.n_cells());
        let patches1 = build_patches(&h, 1, &|c| cn[c], fem.n_nodes()).unwrap();
        let l1 = PatchLayout::new(1);
        let nz1 = Normalizer::identity(l1.n_in(), l1.n_out());
        let batch1 = gather(&x, &r, &patches1, fem, &nz1).unwrap();
        assert_eq!(batch1.n_in, 168);
    }

    #[test]
    fn gather_geometry_is_translation_invariant() {
        let (h, levels) = setup(0, 1);
        let fine = h.fine_level();
        let fem = &levels[fine];
        let cn = fem.cell_nodes.clone();
        let patches = build_patches(&h, 0, &|c| cn[c], fem.n_nodes()).unwrap();
        let nz = Normalizer::identity(62, 18);
        let x = fem.zero_state();
        let r = vec![0.0; fem.n_dofs()];
        let batch = gather(&x, &r, &patches, fem, &nz).unwrap();

        // Shift the whole mesh; geometry channels must not change.
        let mut base2 = unit_square(2);
        for v in base2.vertices.iter_mut() {
            v[0] += 11.0;
            v[1] -= 3.0;
        }
        let h2 = build_hierarchy(base2, 0, 1).unwrap();
        let levels2: Vec<FemLevel> = h2
            .levels
            .iter()
            .enumerate()
            .map(|(i, m)| FemLevel::build(m, i).unwrap())
            .collect();
        let fem2 = &levels2[fine];
        let cn2 = fem2.cell_nodes.clone();
        let patches2 = build_patches(&h2, 0, &|c| cn2[c], fem2.n_nodes()).unwrap();
        let x2 = fem2.zero_state();
        let batch2 = gather(&x2, &r, &patches2, fem2, &nz).unwrap();
        for p in 0..batch.n_patches {
            let a = batch.row(p);
            let b = batch2.row(p);
            for c in 54..62 {
                assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scatter_gather_velocity_roundtrip_and_averaging() {
        let (h, levels) = setup(1, 1);
        let fine = h.fine_level();
        let fem = &levels[fine];
        let cn = fem.cell_nodes.clone();
        let patches = build_patches(&h, 0, &|c| cn[c], fem.n_nodes()).unwrap();
        // Multiplicity bookkeeping: sum of patch node counts.
        let total: u32 = patches.multiplicity.iter().sum();
        assert_eq!(total as usize, patches.patches.len() * 9);
        // Union of patches covers every node.
        assert!(patches.multiplicity.iter().all(|&m| m >= 1));

        let mut x = fem.zero_state();
        for (i, c) in fem.coords.iter().enumerate() {
            x.coeffs[N_COMP * i + 1] = (3.0 * c[0] + c[1]).sin();
            x.coeffs[N_COMP * i + 2] = (c[0] - 2.0 * c[1]).cos();
        }
        let nz = Normalizer::identity(62, 18);
        let defects = velocity_in_patch_layout(&x, &patches);
        let corr = scatter(&defects, &patches, fem, &nz).unwrap();
        for n in 0..fem.n_nodes() {
            if fem.dirichlet[n].is_some() {
                assert_eq!(corr[N_COMP * n + 1], 0.0);
                assert_eq!(corr[N_COMP * n + 2], 0.0);
            } else {
                assert!((corr[N_COMP * n + 1] - x.coeffs[N_COMP * n + 1]).abs() < 1e-12);
                assert!((corr[N_COMP * n + 2] - x.coeffs[N_COMP * n + 2]).abs() < 1e-12);
            }
            assert_eq!(corr[N_COMP * n], 0.0);
        }
        // Two patches contributing a and b average to (a+b)/2.
        let mut defects2 = vec![0.0; patches.patches.len() * 18];
        let shared = patches.patches[0]
            .nodes
            .iter()
            .find(|&&n| patches.multiplicity[n] == 2 && fem.dirichlet[n].is_none())
            .copied()
            .expect("shared free node");
        let other = (1..patches.patches.len())
            .find(|&p| patches.patches[p].nodes.contains(&shared))
            .unwrap();
        let slot0 = patches.patches[0].nodes.iter().position(|&n| n == shared).unwrap();
        let slot1 = patches.patches[other].nodes.iter().position(|&n| n == shared).unwrap();
        defects2[2 * slot0] = 3.0;
        defects2[18 * other + 2 * slot1] = 5.0;
        let corr2 = scatter(&defects2, &patches, fem, &nz).unwrap();
        assert_eq!(corr2[N_COMP * shared + 1], 4.0);
        // All-zero defects give a zero correction.
        let zeros = vec![0.0; patches.patches.len() * 18];
        let corr0 = scatter(&zeros, &patches, fem, &nz).unwrap();
        assert!(corr0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_patch_ring_is_moore_neighborhood() {
        let base = unit_square(4);
        let h = build_hierarchy(base, 0, 1).unwrap();
        let fem = FemLevel::build(&h.levels[1], 1).unwrap();
        let cn = fem.cell_nodes.clone();
        let patches = build_patches(&h, 0, &|c| cn[c], fem.n_nodes()).unwrap();
        // Interior cells of the 8x8 fine grid have a full Moore neighborhood.
        let counts: Vec<usize> = patches.ring1.iter().map(|r| r.len()).collect();
        assert!(counts.iter().any(|&c| c == 8));
        for (p, ring) in patches.ring1.iter().enumerate() {
            for &q in ring {
                assert!(patches.ring1[q].contains(&p));
            }
        }
    }
}
