//! Q1/Q2 Lagrange shape functions on the reference square [0,1]^2 and the
//! 3x3 Gauss-Legendre rule used for all cell integrals.
//!
//! Q2 nodes are ordered lexicographically (y-major): node 3j+i sits at
//! (xi_i, eta_j) with xi, eta in {0, 1/2, 1}. Q1 nodes are the four corners
//! in the same order: (0,0), (1,0), (0,1), (1,1).

/// 1D Gauss-Legendre points on [0,1], exact through degree 5.
pub const GAUSS_PTS: [f64; 3] = [
    0.11270166537925831,
    0.5,
    0.8872983346207417,
];
pub const GAUSS_WTS: [f64; 3] = [
    0.2777777777777778,
    0.4444444444444444,
    0.2777777777777778,
];

/// Quadratic Lagrange basis at {0, 1/2, 1}.
#[inline]
pub fn l2(i: usize, t: f64) -> f64 {
    match i {
        0 => (2.0 * t - 1.0) * (t - 1.0),
        1 => 4.0 * t * (1.0 - t),
        _ => t * (2.0 * t - 1.0),
    }
}

#[inline]
pub fn dl2(i: usize, t: f64) -> f64 {
    match i {
        0 => 4.0 * t - 3.0,
        1 => 4.0 - 8.0 * t,
        _ => 4.0 * t - 1.0,
    }
}

/// Linear Lagrange basis at {0, 1}.
#[inline]
pub fn l1(i: usize, t: f64) -> f64 {
    match i {
        0 => 1.0 - t,
        _ => t,
    }
}

#[inline]
pub fn dl1(i: usize) -> f64 {
    if i == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Values of the 9 Q2 basis functions at (xi, eta).
pub fn q2_values(xi: f64, eta: f64) -> [f64; 9] {
    let mut n = [0.0; 9];
    for j in 0..3 {
        for i in 0..3 {
            n[3 * j + i] = l2(i, xi) * l2(j, eta);
        }
    }
    n
}

/// Reference gradients of the 9 Q2 basis functions at (xi, eta).
pub fn q2_grads(xi: f64, eta: f64) -> [[f64; 2]; 9] {
    let mut g = [[0.0; 2]; 9];
    for j in 0..3 {
        for i in 0..3 {
            g[3 * j + i] = [dl2(i, xi) * l2(j, eta), l2(i, xi) * dl2(j, eta)];
        }
    }
    g
}

/// Values of the 4 Q1 basis functions at (xi, eta), corner order
/// (0,0), (1,0), (0,1), (1,1).
pub fn q1_values(xi: f64, eta: f64) -> [f64; 4] {
    let mut n = [0.0; 4];
    for j in 0..2 {
        for i in 0..2 {
            n[2 * j + i] = l1(i, xi) * l1(j, eta);
        }
    }
    n
}

pub fn q1_grads(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    let mut g = [[0.0; 2]; 4];
    for j in 0..2 {
        for i in 0..2 {
            g[2 * j + i] = [dl1(i) * l1(j, eta), l1(i, xi) * dl1(j)];
        }
    }
    g
}

/// Q2 node indices (in lexicographic cell-local order) of the four corners.
pub const Q2_CORNER_NODES: [usize; 4] = [0, 2, 6, 8];

/// Reference coordinates along local edge `e` at edge parameter s in [0,1],
/// following the counter-clockwise corner order.
pub fn edge_ref_coords(e: usize, s: f64) -> (f64, f64) {
    match e {
        0 => (s, 0.0),
        1 => (1.0, s),
        2 => (1.0 - s, 1.0),
        _ => (0.0, 1.0 - s),
    }
}

/// Reference-space direction of increasing edge parameter for local edge `e`.
pub fn edge_ref_dir(e: usize) -> [f64; 2] {
    match e {
        0 => [1.0, 0.0],
        1 => [0.0, 1.0],
        2 => [-1.0, 0.0],
        _ => [0.0, -1.0],
    }
}
