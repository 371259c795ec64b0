use gibbsfree::gibbs::*;
use gibbsfree::projectors::*;
use gibbsfree::solver::*;
use gibbsfree::spline_space::*;
use gibbsfree::target::*;
use std::sync::Arc;
fn main() {
    for p in [1usize, 2] {
        for mult in [1.0, 10.0, 100.0] {
            let t: Arc<dyn TargetFn> = Arc::new(TanhStep1d { a: 0.58, eps: 1e-4 });
            let space = Arc::new(SplineSpace::new_1d(p, -1, 8, (0.0, 1.0)).unwrap());
            let eta = mult * penalty_default(p, 0.125, 1);
            let projection = ProjectionProblem::new(space.clone(), t.clone(), InnerProduct::Ip { eta }, 10).unwrap();
            let partition = build_partition(&space, PartitionMode::Elementwise).unwrap();
            let pr = ConstrainedProblem::new(projection, partition.clone()).unwrap();
            let sol = solve_constrained(&pr).unwrap();
            let mut overshoot: f64 = 0.0;
            for i in 0..=20000 {
                let x = i as f64 / 20000.0;
                let v = sol.solution.value_1d(x);
                overshoot = overshoot.max((v - 1.0).max(-1.0 - v));
            }
            // away-from-layer deviation: elements with distance > 2h from a
            let mut dev: f64 = 0.0;
            for e in 0..8 {
                let (xl, xr) = space.element(e).bounds[0];
                if (0.58f64 - (xl+xr)/2.0).abs() > 2.0*0.125 {
                    let mid = sol.solution.value_1d((xl+xr)/2.0);
                    let tv = t.value([(xl+xr)/2.0, 0.0]);
                    dev = dev.max((mid - tv).abs());
                }
            }
            let gmax = sol.constraint_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            println!("p={p} eta={eta:8.0}: status {:?} overshoot {overshoot:.3e} away-dev {dev:.3e} maxG {gmax:.2e} stat {:.2e} compl {:.2e}",
                sol.status, sol.residuals.stationarity, sol.residuals.complementarity);
        }
    }
}
