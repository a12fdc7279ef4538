//! Per-channel input/output normalization.
//!
//! Standard mode shifts and scales every channel to zero mean and unit
//! variance, estimated from the training data. The rotation-equivariant mode
//! keeps vector channels (velocity, residual-velocity, geometry, defect
//! pairs) shift-free and gives both components of a pair one common scale
//! computed under a zero-mean assumption, so normalization commutes with
//! rotations of the data.

use crate::error::{Error, Result};

/// Channel layout of one patch row: per node (r_p, r_vx, r_vy, x_p, x_vx,
/// x_vy), then per geometric vertex (g*_x, g*_y); outputs are (dvx, dvy) per
/// node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchLayout {
    pub patch_nodes: usize,
    pub patch_vertices: usize,
}

impl PatchLayout {
    pub fn new(patch_size: usize) -> PatchLayout {
        PatchLayout {
            patch_nodes: crate::mesh::nodes_per_patch(patch_size),
            patch_vertices: crate::mesh::vertices_per_patch(patch_size),
        }
    }

    pub fn n_in(&self) -> usize {
        6 * self.patch_nodes + 2 * self.patch_vertices
    }

    pub fn n_out(&self) -> usize {
        2 * self.patch_nodes
    }

    /// Input channel index pairs that transform as 2D vectors.
    pub fn input_vector_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(2 * self.patch_nodes + self.patch_vertices);
        for n in 0..self.patch_nodes {
            pairs.push((6 * n + 1, 6 * n + 2));
            pairs.push((6 * n + 4, 6 * n + 5));
        }
        let g0 = 6 * self.patch_nodes;
        for v in 0..self.patch_vertices {
            pairs.push((g0 + 2 * v, g0 + 2 * v + 1));
        }
        pairs
    }

    /// Scalar (pressure) input channels.
    pub fn input_scalar_channels(&self) -> Vec<usize> {
        let mut ch = Vec::with_capacity(2 * self.patch_nodes);
        for n in 0..self.patch_nodes {
            ch.push(6 * n);
            ch.push(6 * n + 3);
        }
        ch
    }

    pub fn output_vector_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.patch_nodes).map(|n| (2 * n, 2 * n + 1)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormalizerMode {
    Standard,
    RotationEquivariant,
}

#[derive(Clone, Debug)]
pub struct Normalizer {
    pub mode: NormalizerMode,
    pub in_shift: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_shift: Vec<f64>,
    pub out_scale: Vec<f64>,
}

const SCALE_FLOOR: f64 = 1e-12;

impl Normalizer {
    /// Identity transform, used while generating raw datasets.
    pub fn identity(n_in: usize, n_out: usize) -> Normalizer {
        Normalizer {
            mode: NormalizerMode::Standard,
            in_shift: vec![0.0; n_in],
            in_scale: vec![1.0; n_in],
            out_shift: vec![0.0; n_out],
            out_scale: vec![1.0; n_out],
        }
    }

    pub fn n_in(&self) -> usize {
        self.in_shift.len()
    }

    pub fn n_out(&self) -> usize {
        self.out_shift.len()
    }

    /// Fit from raw rows. `inputs` and `targets` iterate over the same
    /// records. Near-constant channels keep scale 1 so they pass through.
    pub fn fit<'a>(
        mode: NormalizerMode,
        layout: PatchLayout,
        inputs: impl Iterator<Item = &'a [f64]>,
        targets: impl Iterator<Item = &'a [f64]>,
    ) -> Result<Normalizer> {
        let n_in = layout.n_in();
        let n_out = layout.n_out();
        let (in_sum, in_sq, n_rows) = accumulate(inputs, n_in)?;
        let (out_sum, out_sq, n_rows_t) = accumulate(targets, n_out)?;
        if n_rows == 0 || n_rows != n_rows_t {
            return Err(Error::Shape("normalizer fit needs matching non-empty data".into()));
        }
        let n = n_rows as f64;
        let mut nz = Normalizer::identity(n_in, n_out);
        nz.mode = mode;
        match mode {
            NormalizerMode::Standard => {
                for c in 0..n_in {
                    let mean = in_sum[c] / n;
                    let var = (in_sq[c] / n - mean * mean).max(0.0);
                    nz.in_shift[c] = mean;
                    nz.in_scale[c] = if var.sqrt() > SCALE_FLOOR { var.sqrt() } else { 1.0 };
                }
                for c in 0..n_out {
                    let mean = out_sum[c] / n;
                    let var = (out_sq[c] / n - mean * mean).max(0.0);
                    nz.out_shift[c] = mean;
                    nz.out_scale[c] = if var.sqrt() > SCALE_FLOOR { var.sqrt() } else { 1.0 };
                }
            }
            NormalizerMode::RotationEquivariant => {
                // Scalar channels behave as in standard mode.
                for c in layout.input_scalar_channels() {
                    let mean = in_sum[c] / n;
                    let var = (in_sq[c] / n - mean * mean).max(0.0);
                    nz.in_shift[c] = mean;
                    nz.in_scale[c] = if var.sqrt() > SCALE_FLOOR { var.sqrt() } else { 1.0 };
                }
                // Vector pairs: zero shift, shared scale assuming zero mean.
                for (a, b) in layout.input_vector_pairs() {
                    let ms = 0.5 * (in_sq[a] + in_sq[b]) / n;
                    let s = if ms.sqrt() > SCALE_FLOOR { ms.sqrt() } else { 1.0 };
                    nz.in_scale[a] = s;
                    nz.in_scale[b] = s;
                }
                for (a, b) in layout.output_vector_pairs() {
                    let ms = 0.5 * (out_sq[a] + out_sq[b]) / n;
                    let s = if ms.sqrt() > SCALE_FLOOR { ms.sqrt() } else { 1.0 };
                    nz.out_scale[a] = s;
                    nz.out_scale[b] = s;
                }
            }
        }
        Ok(nz)
    }

    #[inline]
    pub fn normalize_input(&self, row: &mut [f64]) {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - self.in_shift[c]) / self.in_scale[c];
        }
    }

    #[inline]
    pub fn normalize_target(&self, row: &mut [f64]) {
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - self.out_shift[c]) / self.out_scale[c];
        }
    }

    #[inline]
    pub fn denormalize_output(&self, row: &mut [f64]) {
        for (c, v) in row.iter_mut().enumerate() {
            *v = *v * self.out_scale[c] + self.out_shift[c];
        }
    }
}

fn accumulate<'a>(
    rows: impl Iterator<Item = &'a [f64]>,
    width: usize,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let mut sum = vec![0.0; width];
    let mut sq = vec![0.0; width];
    let mut n = 0usize;
    for row in rows {
        if row.len() != width {
            return Err(Error::Shape(format!(
                "normalizer fit: row width {} expected {width}",
                row.len()
            )));
        }
        for (c, &v) in row.iter().enumerate() {
            sum[c] += v;
            sq[c] += v * v;
        }
        n += 1;
    }
    Ok((sum, sq, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_widths_match_patch_sizes() {
        let l0 = PatchLayout::new(0);
        assert_eq!(l0.n_in(), 62);
        assert_eq!(l0.n_out(), 18);
        let l1 = PatchLayout::new(1);
        assert_eq!(l1.n_in(), 25 * 6 + 9 * 2);
        assert_eq!(l1.n_out(), 50);
    }

    #[test]
    fn standard_fit_normalizes_to_zero_mean_unit_variance() {
        let layout = PatchLayout { patch_nodes: 1, patch_vertices: 1 };
        let rows: Vec<Vec<f64>> = (0..256)
            .map(|i| {
                let t = i as f64 * 0.1;
                vec![3.0 + t.sin(), 2.0 * t.cos(), -1.0 + 0.5 * (2.0 * t).sin(),
                     0.1 * t.cos(), 5.0 + t.sin() * 0.2, (3.0 * t).cos(),
                     1.0 + t.sin(), 2.0 - t.cos()]
            })
            .collect();
        let targets: Vec<Vec<f64>> = (0..256)
            .map(|i| {
                let t = i as f64 * 0.1;
                vec![t.sin() * 4.0, 0.25 * t.cos() - 1.0]
            })
            .collect();
        let nz = Normalizer::fit(
            NormalizerMode::Standard,
            layout,
            rows.iter().map(|r| r.as_slice()),
            targets.iter().map(|r| r.as_slice()),
        )
        .unwrap();
        let mut sum = vec![0.0; 8];
        let mut sq = vec![0.0; 8];
        for r in &rows {
            let mut row = r.clone();
            nz.normalize_input(&mut row);
            for c in 0..8 {
                sum[c] += row[c];
                sq[c] += row[c] * row[c];
            }
        }
        for c in 0..8 {
            let mean = sum[c] / 256.0;
            let var = sq[c] / 256.0 - mean * mean;
            assert!(mean.abs() < 0.05, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 0.1, "channel {c} var {var}");
        }
        // Denormalize inverts normalize on targets.
        let mut t = targets[7].clone();
        let orig = t.clone();
        nz.normalize_target(&mut t);
        nz.denormalize_output(&mut t);
        for c in 0..2 {
            assert!((t[c] - orig[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_equivariant_mode_has_zero_shift_and_shared_scale() {
        let layout = PatchLayout { patch_nodes: 1, patch_vertices: 1 };
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                let t = i as f64;
                vec![t.sin(), 2.0 * t.cos(), 0.5 * t.sin(), 0.3, t.cos(), -t.sin(), 1.0, 2.0]
            })
            .collect();
        let targets: Vec<Vec<f64>> = (0..64).map(|i| vec![(i as f64).sin(), 0.5]).collect();
        let nz = Normalizer::fit(
            NormalizerMode::RotationEquivariant,
            layout,
            rows.iter().map(|r| r.as_slice()),
            targets.iter().map(|r| r.as_slice()),
        )
        .unwrap();
        for (a, b) in layout.input_vector_pairs() {
            assert_eq!(nz.in_shift[a], 0.0);
            assert_eq!(nz.in_shift[b], 0.0);
            assert_eq!(nz.in_scale[a], nz.in_scale[b]);
        }
        for (a, b) in layout.output_vector_pairs() {
            assert_eq!(nz.out_shift[a], 0.0);
            assert_eq!(nz.out_scale[a], nz.out_scale[b]);
        }
    }
}
