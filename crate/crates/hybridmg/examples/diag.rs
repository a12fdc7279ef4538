// scratch diagnostic: manufactured solution convergence
use hybridmg::fem::assembly::{manufactured_solution, manufactured_velocity_gradient};
use hybridmg::fem::*;
use hybridmg::mesh::*;
use hybridmg::solver::*;
use hybridmg::transfer::TransferOps;
use std::sync::Arc;
use std::time::Instant;

fn main() {
    for nu in [0.02f64, 0.05, 0.1] {
    for base_n in [3usize] {
        let base = unit_square(base_n);
        let h = build_hierarchy(base, 2, 1).unwrap();
        let levels: Vec<FemLevel> = h.levels.iter().enumerate().map(|(i, m)| FemLevel::build(m, i).unwrap()).collect();
        let transfer = TransferOps::build(&levels);
        let problem = Problem {
            bc: BoundaryValues::Exact(Arc::new(|x, y, _t| {
                let (_, vx, vy) = manufactured_solution(x, y);
                (vx, vy)
            })),
            forcing: Forcing::manufactured(nu),
            convection: true,
        };
        let cfg = CaseConfig { nu, dt: 1e3, ..CaseConfig::default() };
        let mut errs = Vec::new();
        for top in 1..=3usize {
            let t0 = Instant::now();
            let ctx = SolveContext { levels: &levels, transfer: &transfer, problem: &problem, case: &cfg };
            let mut solver = StepSolver::new(NewtonConfig::default(), MultigridConfig::default());
            let mut x = levels[top].zero_state();
            levels[top].apply_dirichlet(&mut x, 0.0, &problem, &cfg);
            let mut last_change = f64::INFINITY;
            let mut steps = 0;
            while last_change > 1e-9 && steps < 60 {
                let mut x0 = x.clone();
                levels[top].apply_dirichlet(&mut x0, 1.0, &problem, &cfg);
                let (xn, stats) = solver.solve(&ctx, top, x0, &x, None, 1.0).unwrap();
                assert!(stats.converged, "step not converged at level {top}");
                last_change = xn.coeffs.iter().zip(&x.coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                // Damp the marginally stable large-dt step map.
                for (xc, xn) in x.coeffs.iter_mut().zip(&xn.coeffs) {
                    *xc = 0.5 * (*xc + *xn);
                }
                x.time = xn.time;
                steps += 1;
            }
            let exact = |xx: f64, yy: f64| { let (_, vx, vy) = manufactured_solution(xx, yy); (vx, vy) };
            let (l2, h1) = levels[top].velocity_error(&x, &exact, &manufactured_velocity_gradient);
            println!("base {base_n} level {top}: steps={steps} l2={l2:.4e} h1={h1:.4e} time={:?}", t0.elapsed());
            errs.push((l2, h1));
        }
        let mut o = vec![];
        for w in errs.windows(2) {
            o.push(((w[0].0 / w[1].0).log2(), (w[0].1 / w[1].1).log2()));
        }
        println!("nu {nu} base {base_n} orders: {o:?}");
    }
    }
}
