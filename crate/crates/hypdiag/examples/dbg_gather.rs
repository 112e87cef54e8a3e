use hypdiag::backstepping::{solve_kernel, target_matrices};
use hypdiag::bundled::*;
use hypdiag::grid::{BivariateMatrix, TabulatedMatrix};
use hypdiag::model::{build_reversed_system, transport_geometry};
use hypdiag::trajectory::{Planner, TauGrid};

fn main() {
    let n = 101;
    let sys = demo_4x4(n);
    let mut plant = sys.plant;
    plant.a = TabulatedMatrix::zeros(n, 4, 4);
    plant.d = BivariateMatrix::zeros(n, 4, 4);
    let geo = transport_geometry(&plant).unwrap();
    let rev = build_reversed_system(&plant, &sys.signals, n).unwrap();
    let pair = solve_kernel(&rev, 1e-9, 50).unwrap();
    let target = target_matrices(&rev, &pair).unwrap();
    let planner = Planner::new(&rev, &geo, &pair, &target, 12.0, 12.0 / 1000.0).unwrap();
    let plan = planner.plan(0).unwrap();

    let n_tau = 1001;
    let grid = TauGrid { t0: 0.0, dt: 12.0 / 1000.0, len: n_tau };
    let shift = geo.antiderivative(2, 0.97).unwrap() - geo.antiderivative(2, 0.0).unwrap();
    println!("shift = {shift}");
    let coef = [0.0, -1.0]; // V row 2 for q1 = [[0,0.5],[1,0]]
    let mut fast = vec![0.0; n_tau];
    plan.trace.gather_combination(shift, &grid, 0, &coef, &mut fast).unwrap();
    let mut worst = 0.0f64;
    let mut worst_k = 0;
    let mut buf = [0.0; 2];
    for k in 0..n_tau {
        let t = grid.t0 + k as f64 * grid.dt + shift;
        plan.trace.eval_into(t, 0, &mut buf).unwrap();
        let slow = coef[0] * buf[0] + coef[1] * buf[1];
        let d = (fast[k] - slow).abs();
        if d > worst {
            worst = d;
            worst_k = k;
        }
    }
    println!("max |fast - slow| = {worst:.3e} at k = {worst_k}");
    for k in 988..=994 {
        let t = grid.t0 + k as f64 * grid.dt + shift;
        plan.trace.eval_into(t, 0, &mut buf).unwrap();
        println!("k {k}: t {t:9.4}  fast {:+12.3}  slow {:+12.3}", fast[k], coef[0]*buf[0]+coef[1]*buf[1]);
    }
}
