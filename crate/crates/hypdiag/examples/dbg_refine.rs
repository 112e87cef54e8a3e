use hypdiag::backstepping::{solve_kernel, target_matrices};
use hypdiag::bundled::*;
use hypdiag::diagnosis::verify_io_equation;
use hypdiag::model::{build_reversed_system, transport_geometry};
use hypdiag::simulate::{generate_signals, simulate_plant, SimConfig, SimSignals, SignalEvent};
use hypdiag::trajectory::assemble_kernels;

fn main() {
    let n = 101;
    let sys = demo_4x4(n);
    let geo = transport_geometry(&sys.plant).unwrap();
    let rev = build_reversed_system(&sys.plant, &sys.signals, n).unwrap();
    let pair = solve_kernel(&rev, 1e-9, 200).unwrap();
    let target = target_matrices(&rev, &pair).unwrap();
    let t = 16.0;
    let (kernels, _) = assemble_kernels(&sys.plant, &rev, &geo, &pair, &target, t, Some(t / 1600.0)).unwrap();

    for n_sim in [101usize, 201, 401, 801] {
        let horizon = 24.0;
        let dz = 1.0 / (n_sim - 1) as f64;
        let cfl = dz / 2.0;
        let div = (kernels.tau_step / cfl).ceil() as usize;
        let dt = kernels.tau_step / div as f64;
        let config = SimConfig::new(n_sim, dt, horizon);
        let steps = config.steps();
        let ics = demo_fault_ics();
        let events = vec![SignalEvent { time: 3.0, v_add: ics[0].clone() }];
        let (f, d_tilde, _) = generate_signals(&sys.signals, &events, &demo_disturbance_ic(), dt, steps, 2.0).unwrap();
        let mut signals = SimSignals { n_u: 2, n_f: 3, n_dt: 1, n_db: 2, u: vec![0.0; (steps + 1) * 2], f, d_tilde, d_bar: vec![0.0; (steps + 1) * 2] };
        signals.set_u(demo_input, dt);
        let trace = simulate_plant(&sys.plant, &config, &signals).unwrap();
        let io = verify_io_equation(&kernels, &trace).unwrap();
        println!("n_sim {n_sim:4}: io residual {:.4e} (lhs {:.3e} rhs {:.3e})", io.relative, io.lhs_norm, io.rhs_norm);
    }
}
