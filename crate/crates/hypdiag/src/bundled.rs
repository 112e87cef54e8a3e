//! Built-in 4x4 heterodirectional demo system with a second-order lumped
//! subsystem, three fault channels (sinusoidal, ramp, constant) and both
//! deterministic and bounded disturbances.
//!
//! The same system ships as `configs/demo_4x4.toml`; this module builds it
//! directly from closed-form coefficients so tests do not depend on file
//! parsing or on the sampling resolution of the config.

use nalgebra::{DMatrix, DVector};

use crate::grid::{BivariateMatrix, TabulatedMatrix, TabulatedScalar};
use crate::model::{Dims, PlantModel, SignalModel};

/// A plant/signal-model pair.
#[derive(Debug, Clone)]
pub struct DemoSystem {
    pub plant: PlantModel,
    pub signals: SignalModel,
}

/// Build the demo system tabulated at `n` spatial grid points.
pub fn demo_4x4(n: usize) -> DemoSystem {
    let dims = Dims {
        n_neg: 2,
        n_pos: 2,
        n_w: 2,
        n_u: 2,
        n_f: 3,
        n_d: 3,
        n_dt: 1,
        n_db: 2,
    };

    let gamma = vec![
        TabulatedScalar::from_fn(n, |z| z + 1.0),
        TabulatedScalar::from_fn(n, |z| 3.0 - 0.5 * z),
        TabulatedScalar::from_fn(n, |z| 0.5 * z - 3.0),
        TabulatedScalar::constant(n, -0.5),
    ];

    let a = TabulatedMatrix::from_fn(n, 4, 4, |z| {
        let av = 1.0 / (z - 2.0);
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, av, 0.0, //
                0.0, 0.0, av, 0.0, //
                0.0, av, 0.0, 0.0, //
                0.0, av, 0.0, 0.0,
            ],
        )
    })
    .expect("fixed dims");

    let d = BivariateMatrix::from_fn(n, 4, 4, |z, zeta| {
        let q = (2.0 * (z - zeta)).exp() / 10.0;
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 0.0, 0.0, //
                0.0, -q, q, 0.0, //
                0.0, q, -q, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        )
    })
    .expect("fixed dims");

    // Distributed bounded-disturbance input active on the window [0.2, 0.8].
    let g1 = TabulatedMatrix::from_fn(n, 4, 3, |z| {
        let mut m = DMatrix::zeros(4, 3);
        if (0.2..=0.8).contains(&z) {
            m[(0, 0)] = 1.0;
        }
        m
    })
    .expect("fixed dims");

    let plant = PlantModel {
        dims,
        gamma,
        a,
        a0: TabulatedMatrix::zeros(n, 4, 2),
        d,
        q0: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -0.5, 0.0]),
        q1: DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 1.0, 0.0]),
        f: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -26.0, -10.0]),
        l2: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        h1: TabulatedMatrix::zeros(n, 4, 2),
        h2: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]),
        b1: TabulatedMatrix::zeros(n, 4, 2),
        b2: DMatrix::zeros(2, 2),
        b3: DMatrix::identity(2, 2),
        b4: DMatrix::zeros(2, 2),
        e1: TabulatedMatrix::zeros(n, 4, 3),
        // Component fault f_1 at the z = 0 boundary.
        e2: {
            let mut m = DMatrix::zeros(2, 3);
            m[(0, 0)] = 1.0;
            m
        },
        // Actuator fault f_2 on u_2 at the z = 1 boundary.
        e3: {
            let mut m = DMatrix::zeros(2, 3);
            m[(1, 1)] = 1.0;
            m
        },
        e4: DMatrix::zeros(2, 3),
        // Sensor fault f_3 on y_1.
        e5: {
            let mut m = DMatrix::zeros(2, 3);
            m[(0, 2)] = 1.0;
            m
        },
        g1,
        g2: DMatrix::zeros(2, 3),
        g3: DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
        g4: DMatrix::zeros(2, 3),
        g5: DMatrix::zeros(2, 3),
        g_tilde: DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]),
        g_bar: DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]),
        delta: DVector::from_row_slice(&[0.7, 0.3]),
    };

    // Exosystem: f_1 sinusoid at rate 1/3, f_2 ramp, f_3 constant,
    // deterministic disturbance sinusoid at rate 1/2.
    let mut s_f = DMatrix::zeros(5, 5);
    s_f[(0, 1)] = -1.0 / 3.0;
    s_f[(1, 0)] = 1.0 / 3.0;
    s_f[(2, 3)] = 1.0;
    let mut r_f_tilde = DMatrix::zeros(3, 5);
    r_f_tilde[(0, 1)] = 1.0;
    r_f_tilde[(1, 2)] = 1.0;
    r_f_tilde[(2, 4)] = 1.0;
    let s_d = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
    let r_d_tilde = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);

    DemoSystem {
        plant,
        signals: SignalModel {
            s_f,
            r_f_tilde,
            s_d,
            r_d_tilde,
        },
    }
}

/// Default detection window for the demo system (T0 = 5.5).
pub const DEMO_DETECTION_WINDOW: f64 = 12.0;

/// Fault occurrence times used in the demo scenario; gaps exceed the window.
pub const DEMO_OCCURRENCES: [f64; 3] = [14.0, 28.0, 42.0];

/// Exosystem initial values injected at each occurrence (fault block only).
///
/// f_1(t) = 2 sin((t - t_1)/3 + 0.7), f_2(t) = 1 + 0.1 (t - t_2),
/// f_3(t) = 3.
pub fn demo_fault_ics() -> Vec<DVector<f64>> {
    let amp1 = 2.0;
    let phase1 = 0.7f64;
    vec![
        DVector::from_row_slice(&[amp1 * phase1.cos(), amp1 * phase1.sin(), 0.0, 0.0, 0.0]),
        DVector::from_row_slice(&[0.0, 0.0, 1.0, 0.1, 0.0]),
        DVector::from_row_slice(&[0.0, 0.0, 0.0, 0.0, 3.0]),
    ]
}

/// Deterministic-disturbance initial value: d~(t) = 0.5 sin(t/2 + 0.3).
pub fn demo_disturbance_ic() -> DVector<f64> {
    let amp = 0.5;
    let phase = 0.3f64;
    DVector::from_row_slice(&[amp * phase.cos(), amp * phase.sin()])
}

/// Known input used in the demo scenario.
pub fn demo_input(t: f64) -> DVector<f64> {
    DVector::from_row_slice(&[(0.4 * t).sin(), 0.5 * (0.25 * t).cos() + 0.3 * (0.9 * t).sin()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_signal_closed_forms() {
        // Propagating the exosystem blocks reproduces the intended signals.
        let sys = demo_4x4(11);
        let ics = demo_fault_ics();
        let t = 1.7;
        // sinusoid block
        let s1 = sys.signals.s_f.view((0, 0), (2, 2)).clone_owned();
        let v1 = (s1 * t).exp() * ics[0].rows(0, 2).clone_owned();
        let f1 = v1[1];
        approx::assert_relative_eq!(f1, 2.0 * (t / 3.0 + 0.7).sin(), epsilon = 1e-10);
        // ramp block
        let s2 = sys.signals.s_f.view((2, 2), (2, 2)).clone_owned();
        let v2 = (s2 * t).exp() * ics[1].rows(2, 2).clone_owned();
        approx::assert_relative_eq!(v2[0], 1.0 + 0.1 * t, epsilon = 1e-12);
        // constant block
        approx::assert_relative_eq!(ics[2][4], 3.0, epsilon = 0.0);
    }
}
