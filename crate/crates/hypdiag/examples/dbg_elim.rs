use hypdiag::backstepping::{solve_kernel, target_matrices};
use hypdiag::bundled::*;
use hypdiag::diagnosis::verify_io_equation;
use hypdiag::grid::{BivariateMatrix, TabulatedMatrix};
use hypdiag::model::{build_reversed_system, transport_geometry, PlantModel};
use hypdiag::simulate::{simulate_plant, SimConfig, SimSignals};
use hypdiag::trajectory::assemble_kernels;
use nalgebra::DMatrix;

fn check(label: &str, plant: &PlantModel, sig: &hypdiag::model::SignalModel) {
    let n = 101;
    let geo = transport_geometry(plant).unwrap();
    let rev = build_reversed_system(plant, sig, n).unwrap();
    let pair = solve_kernel(&rev, 1e-9, 300).unwrap();
    let target = target_matrices(&rev, &pair).unwrap();
    let t = 16.0;
    let (kernels, _) = assemble_kernels(plant, &rev, &geo, &pair, &target, t, Some(t / 1600.0)).unwrap();
    let n_sim = 401;
    let dz = 1.0 / (n_sim - 1) as f64;
    let div = (kernels.tau_step / (dz / 2.0)).ceil() as usize;
    let dt = kernels.tau_step / div as f64;
    let config = SimConfig::new(n_sim, dt, 26.0);
    let steps = config.steps();
    let mut signals = SimSignals::zeros(steps, 2, 3, 1, 2);
    signals.set_u(demo_input, dt);
    let trace = simulate_plant(plant, &config, &signals).unwrap();
    let io = verify_io_equation(&kernels, &trace).unwrap();
    println!("{label:>28}: rel {:.3e} (lhs {:.3e} rhs {:.3e})", io.relative, io.lhs_norm, io.rhs_norm);
}

fn main() {
    let n = 101;
    let sys = demo_4x4(n);
    check("full demo", &sys.plant, &sys.signals);
    let mut p = sys.plant.clone();
    p.h2 = DMatrix::zeros(2, 2);
    p.l2 = DMatrix::zeros(2, 2);
    check("no w coupling", &p, &sys.signals);
    let mut p = sys.plant.clone();
    p.a = TabulatedMatrix::zeros(n, 4, 4);
    p.d = BivariateMatrix::zeros(n, 4, 4);
    check("no A, D", &p, &sys.signals);
    let mut p = sys.plant.clone();
    p.d = BivariateMatrix::zeros(n, 4, 4);
    check("no D", &p, &sys.signals);
    let mut p = sys.plant.clone();
    p.a = TabulatedMatrix::zeros(n, 4, 4);
    check("no A", &p, &sys.signals);
    let mut p = sys.plant.clone();
    p.a = TabulatedMatrix::zeros(n, 4, 4);
    p.d = BivariateMatrix::zeros(n, 4, 4);
    p.h2 = DMatrix::zeros(2, 2);
    p.l2 = DMatrix::zeros(2, 2);
    check("pure transport+reflect", &p, &sys.signals);
}
