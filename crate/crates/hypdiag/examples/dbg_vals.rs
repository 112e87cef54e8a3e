use hypdiag::backstepping::{solve_kernel, target_matrices};
use hypdiag::bundled::*;
use hypdiag::grid::{BivariateMatrix, TabulatedMatrix};
use hypdiag::model::{build_reversed_system, transport_geometry};
use hypdiag::trajectory::assemble_kernels;

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
    let (kernels, _) = assemble_kernels(&plant, &rev, &geo, &pair, &target, 12.0, Some(12.0 / 1000.0)).unwrap();
    let field = kernels.m_field.as_ref().unwrap();
    let dt = kernels.tau_step;
    // state 2, z_bar nodes 97..=100 (field iz = n-1-m), tau samples 988..=994
    for m in [97usize, 99, 100] {
        let iz = n - 1 - m;
        print!("zbar node {m:3}: ");
        for k in 988..=994 {
            print!("{:+9.3} ", field.entry(iz, k, 2, 0));
        }
        println!();
    }
    println!("tau at k=991: {}", 991.0 * dt);
    // compare with the trace directly: m~_2(zbar, tau) = [V trace]_2(tau + theta_2(zbar,0))
    // V row 2 = -Q1^T row 0 = -(q1[(0,*)])  => -q1[0,0]*tr0... q1 = [[0,0.5],[1,0]]
    // (V)_{2c} = -(Q1^T)_{0c} = -q1[c,0]: c=0: -0
    //        => row2 = [-q1(0,0), -q1(1,0)] = [0, -1]
    let th = geo.antiderivative(2, 1.0).unwrap() - geo.antiderivative(2, 0.0).unwrap();
    println!("theta_2(1,0) = {th}");
}
