use hypdiag::backstepping::{solve_kernel, target_matrices};
use hypdiag::bundled::*;
use hypdiag::diagnosis::verify_io_equation;
use hypdiag::model::{build_reversed_system, transport_geometry};
use hypdiag::simulate::{generate_signals, simulate_plant, SimConfig, SimSignals, SignalEvent};
use hypdiag::trajectory::assemble_kernels;
use nalgebra::DVector;

fn main() {
    let n = 101;
    let sys = demo_4x4(n);
    let geo = transport_geometry(&sys.plant).unwrap();
    let rev = build_reversed_system(&sys.plant, &sys.signals, n).unwrap();
    let pair = solve_kernel(&rev, 1e-9, 200).unwrap();
    let target = target_matrices(&rev, &pair).unwrap();
    let t = 16.0;
    let (kernels, _) = assemble_kernels(&sys.plant, &rev, &geo, &pair, &target, t, Some(t / 1600.0)).unwrap();

    let n_sim = 401;
    let horizon = 26.0;
    let dz = 1.0 / (n_sim - 1) as f64;
    let div = (kernels.tau_step / (dz / 2.0)).ceil() as usize;
    let dt = kernels.tau_step / div as f64;
    let config = SimConfig::new(n_sim, dt, horizon);
    let steps = config.steps();
    let ics = demo_fault_ics();

    let run = |label: &str, with_u: bool, fault: Option<usize>, with_dist: bool| {
        let (f, d_tilde, _) = if let Some(i) = fault {
            let events = vec![SignalEvent { time: 3.0, v_add: ics[i].clone() }];
            generate_signals(&sys.signals, &events, &(if with_dist { demo_disturbance_ic() } else { DVector::zeros(2) }), dt, steps, 2.0).unwrap()
        } else {
            generate_signals(&sys.signals, &[], &(if with_dist { demo_disturbance_ic() } else { DVector::zeros(2) }), dt, steps, 2.0).unwrap()
        };
        let mut signals = SimSignals { n_u: 2, n_f: 3, n_dt: 1, n_db: 2, u: vec![0.0; (steps + 1) * 2], f, d_tilde, d_bar: vec![0.0; (steps + 1) * 2] };
        if with_u {
            signals.set_u(demo_input, dt);
        }
        let trace = simulate_plant(&sys.plant, &config, &signals).unwrap();
        let io = verify_io_equation(&kernels, &trace).unwrap();
        println!("{label:>14}: rel {:.3e} lhs {:.3e} rhs {:.3e}", io.relative, io.lhs_norm, io.rhs_norm);
    };
    run("u only", true, None, false);
    run("fault 1 only", false, Some(0), false);
    run("fault 2 only", false, Some(1), false);
    run("fault 3 only", false, Some(2), false);
    run("dist only", false, None, true);
}
