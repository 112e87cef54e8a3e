// Exact-solution check of the simulator on a 2-state reflection system:
// x+(0) = q0 x-(0) + u, x-(1) = q1 x+(1): y(t) = q1 u(t-2) + q0 q1 y(t-2).
use hypdiag::grid::{BivariateMatrix, TabulatedMatrix, TabulatedScalar};
use hypdiag::model::{Dims, PlantModel};
use hypdiag::simulate::{simulate_plant, SimConfig, SimSignals};
use nalgebra::{DMatrix, DVector};

fn main() {
    let n = 401;
    let q0 = 0.6;
    let q1 = -0.8;
    let dims = Dims { n_neg: 1, n_pos: 1, n_w: 1, n_u: 1, n_f: 1, n_d: 1, n_dt: 1, n_db: 1 };
    let plant = PlantModel {
        dims,
        gamma: vec![TabulatedScalar::constant(n, 1.0), TabulatedScalar::constant(n, -1.0)],
        a: TabulatedMatrix::zeros(n, 2, 2),
        a0: TabulatedMatrix::zeros(n, 2, 1),
        d: BivariateMatrix::zeros(n, 2, 2),
        q0: DMatrix::from_element(1, 1, q0),
        q1: DMatrix::from_element(1, 1, q1),
        f: DMatrix::zeros(1, 1),
        l2: DMatrix::zeros(1, 1),
        h1: TabulatedMatrix::zeros(n, 2, 1),
        h2: DMatrix::zeros(1, 1),
        b1: TabulatedMatrix::zeros(n, 2, 1),
        b2: DMatrix::identity(1, 1), // u drives x+(0)
        b3: DMatrix::zeros(1, 1),
        b4: DMatrix::zeros(1, 1),
        e1: TabulatedMatrix::zeros(n, 2, 1),
        e2: DMatrix::zeros(1, 1),
        e3: DMatrix::zeros(1, 1),
        e4: DMatrix::zeros(1, 1),
        e5: DMatrix::zeros(1, 1),
        g1: TabulatedMatrix::zeros(n, 2, 1),
        g2: DMatrix::zeros(1, 1),
        g3: DMatrix::zeros(1, 1),
        g4: DMatrix::zeros(1, 1),
        g5: DMatrix::zeros(1, 1),
        g_tilde: DMatrix::identity(1, 1),
        g_bar: DMatrix::zeros(1, 1),
        delta: DVector::zeros(1),
    };
    let dt = 1.0 / (n - 1) as f64; // CFL-tight, exact shifting
    let config = SimConfig::new(n, dt, 9.0);
    let steps = config.steps();
    let mut signals = SimSignals::zeros(steps, 1, 1, 1, 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        signals.u[k] = (-((t - 1.2f64) / 0.35).powi(2)).exp();
    }
    let trace = simulate_plant(&plant, &config, &signals).unwrap();
    // exact recursion
    let delay = (2.0 / dt).round() as usize;
    let mut y_exact = vec![0.0; steps + 1];
    for k in 0..=steps {
        if k >= delay {
            y_exact[k] = q1 * signals.u[k - delay] + q0 * q1 * y_exact[k - delay];
        }
    }
    let mut worst: f64 = 0.0;
    let mut at = 0;
    for k in 0..=steps {
        let d = (trace.y[k] - y_exact[k]).abs();
        if d > worst { worst = d; at = k; }
    }
    println!("max |y - exact| = {worst:.4e} at t = {:.3}", at as f64 * dt);
    for k in (0..=steps).step_by(steps / 12) {
        println!("t {:5.2}: sim {:+9.5} exact {:+9.5}", k as f64 * dt, trace.y[k], y_exact[k]);
    }
}
