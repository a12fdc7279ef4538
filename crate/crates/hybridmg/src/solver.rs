//! Nonlinear and linear solution of the per-step system: Newton with
//! convergence-rate-triggered Jacobian reuse, right-preconditioned GMRES,
//! and a geometric-multigrid V-cycle with a cell-based Vanka smoother.
//!
//! The assembled Jacobian stack (one operator per level, with Vanka block
//! factorizations and a dense coarse solve) is cached between Newton
//! iterations and across time steps; it is rebuilt only when the observed
//! residual contraction rate exceeds `rho_max`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{CaseConfig, FemLevel, Problem, StateVector, N_COMP};
use crate::linalg::{norm2, Csr, Dense, Lu};
use crate::transfer::TransferOps;

#[derive(Clone, Copy, Debug)]
pub struct NewtonConfig {
    /// Contraction rate above which the Jacobian is recomputed.
    pub rho_max: f64,
    pub rel_tol: f64,
    /// Absolute residual floor below which the iteration stops.
    pub abs_tol: f64,
    pub max_iters: usize,
    pub linear_rel_tol: f64,
    pub linear_max_iters: usize,
    pub gmres_restart: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            rho_max: 0.1,
            rel_tol: 1e-8,
            abs_tol: 1e-14,
            max_iters: 10,
            linear_rel_tol: 1e-4,
            linear_max_iters: 100,
            gmres_restart: 100,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MultigridConfig {
    pub pre_smooth: usize,
    pub post_smooth: usize,
    /// Level solved directly with a dense LU factorization.
    pub coarse_level: usize,
}

impl Default for MultigridConfig {
    fn default() -> Self {
        MultigridConfig { pre_smooth: 2, post_smooth: 2, coarse_level: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct NewtonStats {
    pub iterations: usize,
    pub converged: bool,
    /// Residual norms, starting with the initial residual.
    pub residuals: Vec<f64>,
    /// Contraction rates per iteration.
    pub rho_history: Vec<f64>,
    pub jacobian_rebuilds: usize,
    pub linear_iters: Vec<usize>,
    /// Count of singular Vanka blocks that needed a diagonal shift.
    pub vanka_regularized: usize,
}

/// Everything the solver needs to see of the discretization.
pub struct SolveContext<'a> {
    pub levels: &'a [FemLevel],
    pub transfer: &'a TransferOps,
    pub problem: &'a Problem,
    pub case: &'a CaseConfig,
}

/// Dense factorization of one cell's (p, vx, vy) block.
struct CellFactor {
    dofs: Vec<u32>,
    lu: Lu,
}

struct LevelOps {
    jac: Csr,
    vanka: Vec<CellFactor>,
}

/// Frozen Jacobian hierarchy for one top level.
pub struct OperatorStack {
    top: usize,
    ops: Vec<LevelOps>,
    coarse: Lu,
    coarse_level: usize,
    regularized: usize,
}

impl OperatorStack {
    /// Assemble Jacobians on `top` and all coarser levels at the injected
    /// state, factor the Vanka blocks, and factor the coarse level densely.
    pub fn build(
        ctx: &SolveContext,
        top: usize,
        x_top: &StateVector,
        t: f64,
        mg: &MultigridConfig,
    ) -> Result<OperatorStack> {
        let mut states: Vec<StateVector> = Vec::with_capacity(top + 1);
        states.push(x_top.clone());
        for l in (0..top).rev() {
            let mut xs = ctx.transfer.inject_once(states.last().unwrap());
            ctx.levels[l].apply_dirichlet(&mut xs, t, ctx.problem, ctx.case);
            states.push(xs);
        }
        states.reverse();

        let mut ops = Vec::with_capacity(top + 1);
        let mut regularized = 0;
        for l in 0..=top {
            let jac = ctx.levels[l].assemble_jacobian(&states[l], ctx.problem, ctx.case)?;
            let vanka = if l > mg.coarse_level {
                let (factors, regs) = factor_vanka(&ctx.levels[l], &jac)?;
                regularized += regs;
                factors
            } else {
                Vec::new()
            };
            ops.push(LevelOps { jac, vanka });
        }
        let coarse = Lu::factor(&ops[mg.coarse_level].jac.to_dense())
            .map_err(|_| Error::Solver("coarse-level factorization failed".into()))?;
        Ok(OperatorStack { top, ops, coarse, coarse_level: mg.coarse_level, regularized })
    }

    pub fn jacobian(&self, level: usize) -> &Csr {
        &self.ops[level].jac
    }
}

fn factor_vanka(fem: &FemLevel, jac: &Csr) -> Result<(Vec<CellFactor>, usize)> {
    let results: Vec<Result<(CellFactor, bool)>> = (0..fem.n_cells())
        .into_par_iter()
        .map(|k| {
            let nodes = &fem.cell_nodes[k];
            let mut dofs = Vec::with_capacity(27);
            for &n in nodes {
                for c in 0..N_COMP {
                    dofs.push((N_COMP * n + c) as u32);
                }
            }
            let mut local = Dense::zeros(27, 27);
            for (i, &d) in dofs.iter().enumerate() {
                let r = d as usize;
                for kk in jac.row_ptr[r]..jac.row_ptr[r + 1] {
                    let col = jac.cols[kk];
                    if let Some(j) = dofs.iter().position(|&x| x == col) {
                        local.set(i, j, jac.vals[kk]);
                    }
                }
            }
            let (lu, shifted) = Lu::factor_with_shift(&local, 1e-12)?;
            Ok((CellFactor { dofs, lu }, shifted))
        })
        .collect();
    let mut factors = Vec::with_capacity(fem.n_cells());
    let mut regs = 0;
    for r in results {
        let (f, shifted) = r?;
        if shifted {
            regs += 1;
        }
        factors.push(f);
    }
    Ok((factors, regs))
}

/// One multiplicative Vanka sweep in cell order: exact local solves of each
/// cell's 27-dof saddle-point block against the current residual.
pub fn vanka_sweep(jac: &Csr, factors: &[CellFactor], b: &[f64], x: &mut [f64]) {
    let mut r_loc = [0.0f64; 27];
    let mut delta = [0.0f64; 27];
    for f in factors {
        for (i, &d) in f.dofs.iter().enumerate() {
            r_loc[i] = b[d as usize] - jac.row_dot(d as usize, x);
        }
        f.lu.solve(&r_loc, &mut delta);
        for (i, &d) in f.dofs.iter().enumerate() {
            x[d as usize] += delta[i];
        }
    }
}

impl OperatorStack {
    /// One V-cycle on `level`, improving `x` for `J x = b`.
    pub fn vcycle(&self, ctx: &SolveContext, mg: &MultigridConfig, level: usize, b: &[f64], x: &mut [f64]) {
        let lop = &self.ops[level];
        if level == self.coarse_level {
            // Direct solve of the defect equation.
            let n = b.len();
            let mut d = vec![0.0; n];
            lop.jac.matvec(x, &mut d);
            for i in 0..n {
                d[i] = b[i] - d[i];
            }
            let mut e = vec![0.0; n];
            self.coarse.solve(&d, &mut e);
            for i in 0..n {
                x[i] += e[i];
            }
            return;
        }
        for _ in 0..mg.pre_smooth {
            vanka_sweep(&lop.jac, &lop.vanka, b, x);
        }
        let n = b.len();
        let mut d = vec![0.0; n];
        lop.jac.matvec(x, &mut d);
        for i in 0..n {
            d[i] = b[i] - d[i];
        }
        let mut dc = ctx.transfer.restrict_dual_once(&d, level);
        ctx.levels[level - 1].zero_constrained_rows(&mut dc);
        let mut ec = vec![0.0; dc.len()];
        self.vcycle(ctx, mg, level - 1, &dc, &mut ec);
        // Prolongate the correction and add.
        let p = &ctx.transfer.interp[level - 1];
        for nf in 0..ctx.transfer.n_nodes[level] {
            for k in p.row_ptr[nf]..p.row_ptr[nf + 1] {
                let m = p.cols[k] as usize;
                let w = p.vals[k];
                for c in 0..N_COMP {
                    x[N_COMP * nf + c] += w * ec[N_COMP * m + c];
                }
            }
        }
        for _ in 0..mg.post_smooth {
            vanka_sweep(&lop.jac, &lop.vanka, b, x);
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmresResult {
    pub iterations: usize,
    pub converged: bool,
    pub residuals: Vec<f64>,
    pub stagnated: bool,
}

/// Right-preconditioned restarted GMRES with modified Gram-Schmidt and
/// Givens rotations. `apply_a` computes y = A x, `precond` y = M^-1 x.
pub fn gmres(
    apply_a: &dyn Fn(&[f64], &mut [f64]),
    precond: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iters: usize,
    restart: usize,
) -> GmresResult {
    let n = b.len();
    let bnorm = norm2(b);
    let mut residuals = Vec::new();
    if bnorm == 0.0 {
        for v in x.iter_mut() {
            *v = 0.0;
        }
        return GmresResult { iterations: 0, converged: true, residuals, stagnated: false };
    }
    let tol = rel_tol * bnorm;
    let mut total_iters = 0;
    let mut scratch = vec![0.0; n];

    loop {
        // Current residual.
        apply_a(x, &mut scratch);
        let mut r: Vec<f64> = b.iter().zip(&scratch).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        if residuals.is_empty() {
            residuals.push(beta);
        }
        if beta <= tol {
            return GmresResult { iterations: total_iters, converged: true, residuals, stagnated: false };
        }
        for v in r.iter_mut() {
            *v /= beta;
        }
        let m = restart.min(max_iters - total_iters);
        if m == 0 {
            let stagnated = residuals.last().copied().unwrap_or(beta) > tol;
            return GmresResult { iterations: total_iters, converged: false, residuals, stagnated };
        }
        let mut basis: Vec<Vec<f64>> = vec![r];
        let mut precond_basis: Vec<Vec<f64>> = Vec::new();
        let mut h = vec![vec![0.0f64; 0]; 0];
        let mut cs: Vec<f64> = Vec::new();
        let mut sn: Vec<f64> = Vec::new();
        let mut g = vec![beta];
        let mut converged = false;
        let mut k_used = 0;

        for k in 0..m {
            let mut z = vec![0.0; n];
            precond(&basis[k], &mut z);
            let mut w = vec![0.0; n];
            apply_a(&z, &mut w);
            precond_basis.push(z);

            let mut hk = vec![0.0; k + 2];
            for (i, vi) in basis.iter().enumerate() {
                let hik: f64 = w.iter().zip(vi).map(|(a, b)| a * b).sum();
                hk[i] = hik;
                for (wj, vj) in w.iter_mut().zip(vi) {
                    *wj -= hik * vj;
                }
            }
            let wnorm = norm2(&w);
            hk[k + 1] = wnorm;

            // Apply accumulated Givens rotations to the new column.
            for i in 0..k {
                let t = cs[i] * hk[i] + sn[i] * hk[i + 1];
                hk[i + 1] = -sn[i] * hk[i] + cs[i] * hk[i + 1];
                hk[i] = t;
            }
            let denom = (hk[k] * hk[k] + hk[k + 1] * hk[k + 1]).sqrt();
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (hk[k] / denom, hk[k + 1] / denom) };
            cs.push(c);
            sn.push(s);
            hk[k] = c * hk[k] + s * hk[k + 1];
            hk[k + 1] = 0.0;
            g.push(-s * g[k]);
            g[k] = c * g[k];
            h.push(hk);
            total_iters += 1;
            k_used = k + 1;
            let res = g[k + 1].abs();
            residuals.push(res);

            let happy = wnorm < 1e-14 * bnorm;
            if res <= tol || happy {
                converged = true;
                break;
            }
            if total_iters >= max_iters {
                break;
            }
            for v in w.iter_mut() {
                *v /= wnorm;
            }
            basis.push(w);
        }

        // Back-substitute the triangular system and update x from the
        // preconditioned basis.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[j][i] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, z) in precond_basis.iter().take(k_used).enumerate() {
            for (xi, zi) in x.iter_mut().zip(z) {
                *xi += y[j] * zi;
            }
        }
        if converged {
            return GmresResult { iterations: total_iters, converged: true, residuals, stagnated: false };
        }
        if total_iters >= max_iters {
            let last = residuals.last().copied().unwrap_or(beta);
            return GmresResult {
                iterations: total_iters,
                converged: false,
                residuals,
                stagnated: last > tol,
            };
        }
    }
}

/// Nonlinear step solver with a persistent operator cache.
pub struct StepSolver {
    pub newton: NewtonConfig,
    pub mg: MultigridConfig,
    cache: Option<OperatorStack>,
}

impl StepSolver {
    pub fn new(newton: NewtonConfig, mg: MultigridConfig) -> StepSolver {
        StepSolver { newton, mg, cache: None }
    }

    /// Drop the cached operator stack (forces reassembly on the next solve).
    pub fn invalidate(&mut self) {
        self.cache = None;
    }

    /// Newton iteration for A(x) = rhs on level `top`. `x0` must satisfy the
    /// Dirichlet conditions at time `t`. When `rhs` is `None` the explicit
    /// side is assembled from `x_prev`. Non-convergence within `max_iters`
    /// is reported in the stats, not fatal; a non-finite residual is.
    pub fn solve(
        &mut self,
        ctx: &SolveContext,
        top: usize,
        x0: StateVector,
        x_prev: &StateVector,
        rhs: Option<&[f64]>,
        t: f64,
    ) -> Result<(StateVector, NewtonStats)> {
        let fem = &ctx.levels[top];
        let own_rhs;
        let rhs: &[f64] = match rhs {
            Some(b) => b,
            None => {
                own_rhs =
                    fem.assemble_rhs(x_prev, t - ctx.case.dt, t, ctx.problem, ctx.case)?;
                &own_rhs
            }
        };
        let mut x = x0;
        let mut stats = NewtonStats::default();
        let mut r = fem.assemble_system(&x, &x, Some(rhs), t, ctx.problem, ctx.case)?;
        let mut rn = norm2(&r);
        let r0 = rn;
        stats.residuals.push(rn);
        if rn < self.newton.abs_tol {
            stats.converged = true;
            return Ok((x, stats));
        }

        if self.cache.as_ref().map(|c| c.top) != Some(top) {
            self.cache = None;
        }

        for _ in 0..self.newton.max_iters {
            if self.cache.is_none() {
                let stack = OperatorStack::build(ctx, top, &x, t, &self.mg)?;
                stats.vanka_regularized += stack.regularized;
                stats.jacobian_rebuilds += 1;
                self.cache = Some(stack);
            }
            let stack = self.cache.as_ref().unwrap();
            let jac = stack.jacobian(top);
            let apply_a = |v: &[f64], out: &mut [f64]| jac.matvec(v, out);
            let precond = |v: &[f64], out: &mut [f64]| {
                for o in out.iter_mut() {
                    *o = 0.0;
                }
                stack.vcycle(ctx, &self.mg, top, v, out);
            };
            let mut delta = vec![0.0; fem.n_dofs()];
            let lin = gmres(
                &apply_a,
                &precond,
                &r,
                &mut delta,
                self.newton.linear_rel_tol,
                self.newton.linear_max_iters,
                self.newton.gmres_restart,
            );
            stats.linear_iters.push(lin.iterations);
            for (xi, di) in x.coeffs.iter_mut().zip(&delta) {
                *xi += di;
            }
            fem.apply_dirichlet(&mut x, t, ctx.problem, ctx.case);
            r = fem.assemble_system(&x, &x, Some(rhs), t, ctx.problem, ctx.case)?;
            let rn_new = norm2(&r);
            if !rn_new.is_finite() {
                return Err(Error::Solver("Newton residual diverged to non-finite".into()));
            }
            let rho = rn_new / rn;
            stats.rho_history.push(rho);
            stats.residuals.push(rn_new);
            stats.iterations += 1;
            rn = rn_new;
            if rn / r0 < self.newton.rel_tol || rn < self.newton.abs_tol {
                stats.converged = true;
                break;
            }
            if rho > self.newton.rho_max {
                self.cache = None;
            }
        }
        Ok((x, stats))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{BoundaryValues, Forcing};
    use crate::mesh::{build_hierarchy, unit_square};
    use std::sync::Arc;

    #[test]
    fn gmres_identity_converges_in_one_iteration() {
        let b = vec![1.0, -2.0, 3.0];
        let mut x = vec![0.0; 3];
        let apply = |v: &[f64], out: &mut [f64]| out.copy_from_slice(v);
        let id = |v: &[f64], out: &mut [f64]| out.copy_from_slice(v);
        let res = gmres(&apply, &id, &b, &mut x, 1e-12, 10, 10);
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        for i in 0..3 {
            assert!((x[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gmres_diagonal_two_by_two() {
        let b = vec![1.0, 1.0];
        let mut x = vec![0.0; 2];
        let apply = |v: &[f64], out: &mut [f64]| {
            out[0] = v[0];
            out[1] = 2.0 * v[1];
        };
        let id = |v: &[f64], out: &mut [f64]| out.copy_from_slice(v);
        let res = gmres(&apply, &id, &b, &mut x, 1e-13, 10, 10);
        assert!(res.converged && res.iterations <= 2);
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gmres_residuals_are_monotone_on_random_spd() {
        let n = 50;
        let mut a = vec![0.0; n * n];
        let mut state = 7u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        // SPD: M^T M + n I.
        let mut m = vec![0.0; n * n];
        for v in m.iter_mut() {
            *v = rnd();
        }
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += m[k * n + i] * m[k * n + j];
                }
                a[i * n + j] = s + if i == j { n as f64 } else { 0.0 };
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rnd()).collect();
        let mut x = vec![0.0; n];
        let apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += a[i * n + j] * v[j];
                }
                out[i] = s;
            }
        };
        let id = |v: &[f64], out: &mut [f64]| out.copy_from_slice(v);
        let res = gmres(&apply, &id, &b, &mut x, 1e-10, 60, 60);
        assert!(res.converged);
        for w in res.residuals.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    fn stokes_ctx() -> (Vec<FemLevel>, TransferOps, Problem, CaseConfig) {
        let base = unit_square(2);
        let h = build_hierarchy(base, 1, 1).unwrap();
        let levels: Vec<FemLevel> = h
            .levels
            .iter()
            .enumerate()
            .map(|(i, m)| FemLevel::build(m, i).unwrap())
            .collect();
        let transfer = TransferOps::build(&levels);
        let problem = Problem {
            bc: BoundaryValues::Exact(Arc::new(|_x: f64, y: f64, _t: f64| (y * (1.0 - y), 0.0))),
            forcing: Forcing::None,
            convection: false,
        };
        let cfg = CaseConfig { nu: 0.1, dt: 0.05, ..CaseConfig::default() };
        (levels, transfer, problem, cfg)
    }

    #[test]
    fn newton_converges_in_one_iteration_on_stokes() {
        let (levels, transfer, problem, cfg) = stokes_ctx();
        let ctx = SolveContext { levels: &levels, transfer: &transfer, problem: &problem, case: &cfg };
        let top = 2;
        let mut x0 = levels[top].zero_state();
        levels[top].apply_dirichlet(&mut x0, cfg.dt, &problem, &cfg);
        let x_prev = levels[top].zero_state();
        let mut solver = StepSolver::new(
            NewtonConfig { linear_rel_tol: 1e-10, linear_max_iters: 200, ..NewtonConfig::default() },
            MultigridConfig::default(),
        );
        let (x, stats) = solver.solve(&ctx, top, x0, &x_prev, None, cfg.dt).unwrap();
        assert!(stats.converged, "stats: {stats:?}");
        assert_eq!(stats.iterations, 1);
        assert!(x.is_finite());
        // Re-solving from the solution stops at the absolute floor quickly.
        let (_, stats2) = solver.solve(&ctx, top, x.clone(), &x_prev, None, cfg.dt).unwrap();
        assert!(stats2.converged);
        assert!(stats2.iterations <= 2, "stats: {stats2:?}");
    }

    #[test]
    fn zero_residual_returns_zero_iterations() {
        let (levels, transfer, mut problem, cfg) = stokes_ctx();
        problem.bc = BoundaryValues::Exact(Arc::new(|_, _, _| (0.0, 0.0)));
        let ctx = SolveContext { levels: &levels, transfer: &transfer, problem: &problem, case: &cfg };
        let top = 1;
        let x0 = levels[top].zero_state();
        let x_prev = levels[top].zero_state();
        let mut solver = StepSolver::new(NewtonConfig::default(), MultigridConfig::default());
        let (_, stats) = solver.solve(&ctx, top, x0, &x_prev, None, cfg.dt).unwrap();
        assert_eq!(stats.iterations, 0);
        assert!(stats.converged);
    }

    #[test]
    fn vanka_solves_single_cell_exactly_and_contracts() {
        let (levels, transfer, problem, cfg) = stokes_ctx();
        let _ = &transfer;
        // Single-cell mesh with an outflow side, so the local saddle-point
        // block is nonsingular: one sweep is a direct solve.
        let mut base = unit_square(1);
        base.boundary[1].tag = crate::mesh::BoundaryTag::Outflow;
        let lvl = FemLevel::build(&base, 0).unwrap();
        let mut x0 = lvl.zero_state();
        for (i, c) in lvl.coords.iter().enumerate() {
            x0.coeffs[N_COMP * i + 1] = c[0] + 0.3 * c[1];
        }
        let jac = lvl.assemble_jacobian(&x0, &problem, &cfg).unwrap();
        let (factors, regs) = factor_vanka(&lvl, &jac).unwrap();
        assert_eq!(regs, 0);
        let n = lvl.n_dofs();
        // Consistent right-hand side: b = J x_ref with constrained dofs zero.
        let mut xref0 = vec![0.0; n];
        for (i, v) in xref0.iter_mut().enumerate() {
            if !lvl.is_constrained(i / N_COMP, i % N_COMP) {
                *v = ((i * 7 % 13) as f64 - 6.0) * 0.1;
            }
        }
        let mut b = vec![0.0; n];
        jac.matvec(&xref0, &mut b);
        let mut x = vec![0.0; n];
        vanka_sweep(&jac, &factors, &b, &mut x);
        let mut ax = vec![0.0; n];
        jac.matvec(&x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-9, "row {i}: {} vs {}", ax[i], b[i]);
        }
        // Zero rhs, zero guess stays zero.
        let mut z = vec![0.0; n];
        vanka_sweep(&jac, &factors, &vec![0.0; n], &mut z);
        assert!(z.iter().all(|&v| v == 0.0));

        // Multi-cell Stokes: the sweep contracts the error.
        let lvl2 = &levels[2];
        let mut xs = lvl2.zero_state();
        lvl2.apply_dirichlet(&mut xs, cfg.dt, &problem, &cfg);
        let jac2 = lvl2.assemble_jacobian(&xs, &problem, &cfg).unwrap();
        let (factors2, _) = factor_vanka(lvl2, &jac2).unwrap();
        let n2 = lvl2.n_dofs();
        let mut xref = vec![0.0; n2];
        let mut state = 3u64;
        for (i, v) in xref.iter_mut().enumerate() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let node = i / N_COMP;
            let comp = i % N_COMP;
            if !lvl2.is_constrained(node, comp) {
                *v = ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            }
        }
        let mut b2 = vec![0.0; n2];
        jac2.matvec(&xref, &mut b2);
        let mut xit = vec![0.0; n2];
        let mut err_prev = f64::INFINITY;
        for sweep in 0..5 {
            vanka_sweep(&jac2, &factors2, &b2, &mut xit);
            let err: f64 = xit
                .iter()
                .zip(&xref)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(err < err_prev, "sweep {sweep}: {err} !< {err_prev}");
            err_prev = err;
        }
    }

    #[test]
    fn one_level_vcycle_is_direct_solve() {
        let (levels, transfer, problem, cfg) = stokes_ctx();
        let ctx = SolveContext { levels: &levels, transfer: &transfer, problem: &problem, case: &cfg };
        let mg = MultigridConfig::default();
        let x0 = levels[0].zero_state();
        let stack = OperatorStack::build(&ctx, 0, &x0, cfg.dt, &mg).unwrap();
        let n = levels[0].n_dofs();
        let mut b = vec![0.0; n];
        for (i, v) in b.iter_mut().enumerate() {
            let node = i / N_COMP;
            let comp = i % N_COMP;
            if !levels[0].is_constrained(node, comp) {
                *v = (i as f64 * 0.13).sin();
            }
        }
        let mut x = vec![0.0; n];
        stack.vcycle(&ctx, &mg, 0, &b, &mut x);
        let mut ax = vec![0.0; n];
        stack.jacobian(0).matvec(&x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-8 * (1.0 + b[i].abs()));
        }
    }

    #[test]
    fn newton_with_never_rebuild_still_converges_on_stokes() {
        let (levels, transfer, problem, cfg) = stokes_ctx();
        let ctx = SolveContext { levels: &levels, transfer: &transfer, problem: &problem, case: &cfg };
        let top = 2;
        let mut x0 = levels[top].zero_state();
        levels[top].apply_dirichlet(&mut x0, cfg.dt, &problem, &cfg);
        let x_prev = levels[top].zero_state();
        let mut solver = StepSolver::new(
            NewtonConfig {
                rho_max: 1.0 - 1e-9,
                linear_rel_tol: 1e-10,
                linear_max_iters: 200,
                ..NewtonConfig::default()
            },
            MultigridConfig::default(),
        );
        let (_, stats) = solver.solve(&ctx, top, x0, &x_prev, None, cfg.dt).unwrap();
        assert!(stats.converged);
        assert_eq!(stats.iterations, 1);
        assert_eq!(stats.jacobian_rebuilds, 1);
    }
}
