//! Small dense and sparse linear algebra used by the solver stack.

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices per row.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Build from triplets. Duplicate entries are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &mut Vec<(u32, u32, f64)>) -> Csr {
        triplets.sort_unstable_by_key(|&(r, c, _)| ((r as u64) << 32) | c as u64);
        let mut rows: Vec<u32> = Vec::with_capacity(triplets.len());
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets.iter() {
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        for &r in &rows {
            row_ptr[r as usize + 1] += 1;
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr { n_rows, n_cols, row_ptr, cols, vals }
    }

    /// Keep the sparsity pattern but reset all values to zero.
    pub fn zero_values(&mut self) {
        for v in &mut self.vals {
            *v = 0.0;
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k] as usize];
            }
            y[r] = s;
        }
    }

    /// Dot product of row `r` with `x`.
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            s += self.vals[k] * x[self.cols[k] as usize];
        }
        s
    }

    /// Replace row `r` by the identity row.
    pub fn set_identity_row(&mut self, r: usize) {
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            self.vals[k] = if self.cols[k] as usize == r { 1.0 } else { 0.0 };
        }
    }

    pub fn to_dense(&self) -> Dense {
        let mut d = Dense::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                d.set(r, self.cols[k] as usize, self.vals[k]);
            }
        }
        d
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug)]
pub struct Dense {
    pub n_rows: usize,
    pub n_cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Dense {
        Dense { n_rows, n_cols, data: vec![0.0; n_rows * n_cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n_cols + c] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n_cols + c] += v;
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Factorize a square matrix. A pivot that is singular relative to the
    /// matrix scale is regularized by the given relative diagonal shift;
    /// `shifted` reports whether that happened.
    pub fn factor_with_shift(a: &Dense, rel_shift: f64) -> Result<(Lu, bool)> {
        if a.n_rows != a.n_cols {
            return Err(Error::Shape("LU requires a square matrix".into()));
        }
        let n = a.n_rows;
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let threshold = rel_shift * scale;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut shifted = false;
        for k in 0..n {
            let mut p = k;
            let mut pmax = lu[k * n + k].abs();
            for r in k + 1..n {
                let v = lu[r * n + k].abs();
                if v > pmax {
                    pmax = v;
                    p = r;
                }
            }
            if pmax <= threshold {
                let sign = if lu[k * n + k] < 0.0 { -1.0 } else { 1.0 };
                lu[k * n + k] += sign * threshold.max(1e-300);
                shifted = true;
                if lu[k * n + k].abs() < 1e-300 {
                    return Err(Error::Solver(format!("singular matrix at pivot {k}")));
                }
            } else if p != k {
                perm.swap(p, k);
                for c in 0..n {
                    lu.swap(p * n + c, k * n + c);
                }
            }
            let piv = lu[k * n + k];
            for r in k + 1..n {
                let f = lu[r * n + k] / piv;
                lu[r * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        lu[r * n + c] -= f * lu[k * n + c];
                    }
                }
            }
        }
        Ok((Lu { n, lu, perm }, shifted))
    }

    pub fn factor(a: &Dense) -> Result<Lu> {
        let (lu, shifted) = Self::factor_with_shift(a, 0.0)?;
        if shifted {
            return Err(Error::Solver("singular matrix in LU factorization".into()));
        }
        Ok(lu)
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[i * n + k] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lu[i * n + k] * x[k];
            }
            x[i] = s / self.lu[i * n + i];
        }
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
