//! Plant and exosystem descriptions, structural validation, transport
//! geometry and assembly of the reversed kernel system.
//!
//! The plant is a heterodirectional hyperbolic system of `n_x` transport
//! equations on z in [0, 1], solved for the spatial derivative,
//!
//! ```text
//! x'(z,t) = Gamma(z) x_t(z,t) + A(z) x + A0(z) x-(0,t) + int_0^z D(z,s) x(s,t) ds
//!           + H1(z) w + B1(z) u + E1(z) f + G1(z) d
//! ```
//!
//! coupled at the boundaries with a lumped ODE for `w` and driven by faults
//! `f` and disturbances `d` generated by finite-dimensional signal models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{BivariateMatrix, TabulatedMatrix, TabulatedScalar};

/// State and signal dimensions of a plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Number of transport states travelling in the negative direction
    /// (positive velocities, measured at z = 0).
    pub n_neg: usize,
    /// Number of transport states travelling in the positive direction.
    pub n_pos: usize,
    /// Lumped ODE state dimension.
    pub n_w: usize,
    /// Input dimension.
    pub n_u: usize,
    /// Fault dimension.
    pub n_f: usize,
    /// Total disturbance dimension.
    pub n_d: usize,
    /// Deterministic (signal-model) disturbance dimension.
    pub n_dt: usize,
    /// Bounded disturbance dimension.
    pub n_db: usize,
}

impl Dims {
    pub fn n_x(&self) -> usize {
        self.n_neg + self.n_pos
    }
}

/// Plant description: all coefficient functions and coupling matrices.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub dims: Dims,
    /// Reciprocal transport velocities gamma_i(z) (time per unit length).
    pub gamma: Vec<TabulatedScalar>,
    /// In-domain coupling A(z), zero diagonal.
    pub a: TabulatedMatrix,
    /// Coupling against the measured boundary trace x-(0,t).
    pub a0: TabulatedMatrix,
    /// Integral (Volterra) coupling D(z, zeta) on zeta <= z.
    pub d: BivariateMatrix,
    /// Boundary reflection at z = 0 (n_pos x n_neg).
    pub q0: DMatrix<f64>,
    /// Boundary reflection at z = 1 (n_neg x n_pos).
    pub q1: DMatrix<f64>,
    /// Lumped dynamics.
    pub f: DMatrix<f64>,
    /// ODE input from the measured boundary trace (n_w x n_neg).
    pub l2: DMatrix<f64>,
    /// Distributed ODE-to-PDE coupling (n_x x n_w).
    pub h1: TabulatedMatrix,
    /// Boundary ODE-to-PDE coupling at z = 0 (n_pos x n_w).
    pub h2: DMatrix<f64>,
    /// Input maps.
    pub b1: TabulatedMatrix,
    pub b2: DMatrix<f64>,
    pub b3: DMatrix<f64>,
    pub b4: DMatrix<f64>,
    /// Fault maps.
    pub e1: TabulatedMatrix,
    pub e2: DMatrix<f64>,
    pub e3: DMatrix<f64>,
    pub e4: DMatrix<f64>,
    pub e5: DMatrix<f64>,
    /// Disturbance maps.
    pub g1: TabulatedMatrix,
    pub g2: DMatrix<f64>,
    pub g3: DMatrix<f64>,
    pub g4: DMatrix<f64>,
    pub g5: DMatrix<f64>,
    /// Split of the disturbance into deterministic and bounded channels.
    pub g_tilde: DMatrix<f64>,
    pub g_bar: DMatrix<f64>,
    /// Entrywise bounds of the bounded disturbance channels.
    pub delta: DVector<f64>,
}

/// Exosystem matrices generating faults and deterministic disturbances.
#[derive(Debug, Clone)]
pub struct SignalModel {
    pub s_f: DMatrix<f64>,
    pub r_f_tilde: DMatrix<f64>,
    pub s_d: DMatrix<f64>,
    pub r_d_tilde: DMatrix<f64>,
}

impl SignalModel {
    pub fn n_vf(&self) -> usize {
        self.s_f.nrows()
    }

    pub fn n_vd(&self) -> usize {
        self.s_d.nrows()
    }

    pub fn n_v(&self) -> usize {
        self.n_vf() + self.n_vd()
    }

    pub fn n_f(&self) -> usize {
        self.r_f_tilde.nrows()
    }

    pub fn n_dt(&self) -> usize {
        self.r_d_tilde.nrows()
    }

    /// Combined exosystem matrix S = blockdiag(S_f, S_d).
    pub fn s(&self) -> DMatrix<f64> {
        let nf = self.n_vf();
        let nd = self.n_vd();
        let mut s = DMatrix::zeros(nf + nd, nf + nd);
        s.view_mut((0, 0), (nf, nf)).copy_from(&self.s_f);
        s.view_mut((nf, nf), (nd, nd)).copy_from(&self.s_d);
        s
    }

    /// Fault read-out R_f = [R_f_tilde 0].
    pub fn r_f(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.n_f(), self.n_v());
        r.view_mut((0, 0), (self.n_f(), self.n_vf())).copy_from(&self.r_f_tilde);
        r
    }

    /// Deterministic-disturbance read-out R_d = [0 R_d_tilde].
    pub fn r_d(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.n_dt(), self.n_v());
        r.view_mut((0, self.n_vf()), (self.n_dt(), self.n_vd()))
            .copy_from(&self.r_d_tilde);
        r
    }

    /// Check that both exosystem spectra lie on the imaginary axis within
    /// the relative tolerance |Re| <= tol * (1 + |lambda|).
    pub fn spectrum_violations(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (name, m) in [("S_f", &self.s_f), ("S_d", &self.s_d)] {
            if m.nrows() == 0 {
                continue;
            }
            for ev in m.clone().complex_eigenvalues().iter() {
                if ev.re.abs() > tol * (1.0 + ev.norm()) {
                    out.push(format!("{name} eigenvalue {ev} is off the imaginary axis"));
                }
            }
        }
        out
    }
}

/// A single violated structural assumption.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    VelocityOrdering { first: usize, second: usize, z: f64 },
    VanishingGamma { state: usize, z: f64 },
    NonzeroDiagonal { state: usize, z: f64, value: f64 },
    Dimension { context: String, expected: String, got: String },
    NegativeBound { channel: usize, value: f64 },
    OffAxisSpectrum { detail: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::VelocityOrdering { first, second, z } => write!(
                f,
                "velocity ordering violated: lambda_{first} <= lambda_{second} at z = {z}"
            ),
            Violation::VanishingGamma { state, z } => {
                write!(f, "gamma_{state} vanishes near z = {z}")
            }
            Violation::NonzeroDiagonal { state, z, value } => {
                write!(f, "A_{state}{state}(z = {z}) = {value} is nonzero")
            }
            Violation::Dimension { context, expected, got } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {got}")
            }
            Violation::NegativeBound { channel, value } => {
                write!(f, "disturbance bound delta_{channel} = {value} is negative")
            }
            Violation::OffAxisSpectrum { detail } => write!(f, "{detail}"),
        }
    }
}

/// Outcome of structural validation; violations are collected, not thrown.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const GAMMA_EPS: f64 = 1e-12;
const DIAGONAL_TOL: f64 = 1e-12;

/// Validate the structural assumptions of a plant model: velocity ordering,
/// non-vanishing transport coefficients, zero diagonal of A, consistent
/// dimensions and nonnegative disturbance bounds.
pub fn validate_plant(model: &PlantModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let d = &model.dims;
    let n_x = d.n_x();

    let mut dim_violations: Vec<Violation> = Vec::new();
    let mut dim = |context: &str, expected: (usize, usize), got: (usize, usize)| {
        if expected != got {
            dim_violations.push(Violation::Dimension {
                context: context.to_string(),
                expected: format!("{}x{}", expected.0, expected.1),
                got: format!("{}x{}", got.0, got.1),
            });
        }
    };

    if model.gamma.len() != n_x {
        report.violations.push(Violation::Dimension {
            context: "gamma".into(),
            expected: format!("{n_x} entries"),
            got: format!("{} entries", model.gamma.len()),
        });
    }
    dim("A", (n_x, n_x), (model.a.rows(), model.a.cols()));
    dim("A0", (n_x, d.n_neg), (model.a0.rows(), model.a0.cols()));
    dim("D", (n_x, n_x), (model.d.rows(), model.d.cols()));
    dim("Q0", (d.n_pos, d.n_neg), model.q0.shape());
    dim("Q1", (d.n_neg, d.n_pos), model.q1.shape());
    dim("F", (d.n_w, d.n_w), model.f.shape());
    dim("L2", (d.n_w, d.n_neg), model.l2.shape());
    dim("H1", (n_x, d.n_w), (model.h1.rows(), model.h1.cols()));
    dim("H2", (d.n_pos, d.n_w), model.h2.shape());
    dim("B1", (n_x, d.n_u), (model.b1.rows(), model.b1.cols()));
    dim("B2", (d.n_pos, d.n_u), model.b2.shape());
    dim("B3", (d.n_neg, d.n_u), model.b3.shape());
    dim("B4", (d.n_w, d.n_u), model.b4.shape());
    dim("E1", (n_x, d.n_f), (model.e1.rows(), model.e1.cols()));
    dim("E2", (d.n_pos, d.n_f), model.e2.shape());
    dim("E3", (d.n_neg, d.n_f), model.e3.shape());
    dim("E4", (d.n_w, d.n_f), model.e4.shape());
    dim("E5", (d.n_neg, d.n_f), model.e5.shape());
    dim("G1", (n_x, d.n_d), (model.g1.rows(), model.g1.cols()));
    dim("G2", (d.n_pos, d.n_d), model.g2.shape());
    dim("G3", (d.n_neg, d.n_d), model.g3.shape());
    dim("G4", (d.n_w, d.n_d), model.g4.shape());
    dim("G5", (d.n_neg, d.n_d), model.g5.shape());
    dim("G_tilde", (d.n_d, d.n_dt), model.g_tilde.shape());
    dim("G_bar", (d.n_d, d.n_db), model.g_bar.shape());
    if model.delta.len() != d.n_db {
        dim_violations.push(Violation::Dimension {
            context: "delta".into(),
            expected: format!("{} entries", d.n_db),
            got: format!("{} entries", model.delta.len()),
        });
    }
    report.violations.extend(dim_violations);

    if !report.violations.is_empty() {
        // Dimension errors make the pointwise checks unreliable; report early.
        return report;
    }

    let n = model.gamma[0].len();
    let h = 1.0 / (n - 1) as f64;
    for k in 0..n {
        let z = k as f64 * h;
        let mut lambda = Vec::with_capacity(n_x);
        for (i, g) in model.gamma.iter().enumerate() {
            let gv = g.values()[k.min(g.len() - 1)];
            if gv.abs() < GAMMA_EPS {
                report.violations.push(Violation::VanishingGamma { state: i, z });
                lambda.push(f64::INFINITY);
            } else {
                lambda.push(1.0 / gv);
            }
        }
        for i in 0..n_x.saturating_sub(1) {
            if !(lambda[i] > lambda[i + 1]) {
                report.violations.push(Violation::VelocityOrdering {
                    first: i,
                    second: i + 1,
                    z,
                });
            }
        }
        if d.n_neg > 0 && lambda[d.n_neg - 1] <= 0.0 {
            report.violations.push(Violation::VelocityOrdering {
                first: d.n_neg - 1,
                second: d.n_neg - 1,
                z,
            });
        }
        if d.n_pos > 0 && lambda[d.n_neg] >= 0.0 {
            report.violations.push(Violation::VelocityOrdering {
                first: d.n_neg,
                second: d.n_neg,
                z,
            });
        }
    }

    let scale = model.a.max_abs().max(1.0);
    for k in 0..model.a.len() {
        let z = k as f64 / (model.a.len() - 1) as f64;
        for i in 0..n_x {
            let v = model.a.entry_at_node(k, i, i);
            if v.abs() > DIAGONAL_TOL * scale {
                report.violations.push(Violation::NonzeroDiagonal { state: i, z, value: v });
            }
        }
    }

    for i in 0..model.delta.len() {
        if model.delta[i] < 0.0 {
            report.violations.push(Violation::NegativeBound {
                channel: i,
                value: model.delta[i],
            });
        }
    }

    // Deduplicate repeated pointwise findings so the report stays readable.
    report.violations.dedup_by(|a, b| {
        matches!(
            (&a, &b),
            (Violation::VelocityOrdering { first: f1, second: s1, .. },
             Violation::VelocityOrdering { first: f2, second: s2, .. }) if f1 == f2 && s1 == s2
        ) || matches!(
            (&a, &b),
            (Violation::VanishingGamma { state: s1, .. }, Violation::VanishingGamma { state: s2, .. }) if s1 == s2
        ) || matches!(
            (&a, &b),
            (Violation::NonzeroDiagonal { state: s1, .. }, Violation::NonzeroDiagonal { state: s2, .. }) if s1 == s2
        )
    });
    report
}

/// Characteristic travel times of the spatially reversed transport states.
///
/// `theta(j, z, zeta)` is the signed travel time of reversed state `j`
/// between reversed positions `zeta` and `z`; it is stored as cumulative
/// trapezoidal antiderivatives so evaluation is O(1).
#[derive(Debug, Clone)]
pub struct TransportGeometry {
    cumulative: Vec<Vec<f64>>,
    n: usize,
    pub tau_plus: f64,
    pub tau_minus: f64,
    pub t0: f64,
}

impl TransportGeometry {
    /// Antiderivative value Theta_j(z).
    pub fn antiderivative(&self, j: usize, z: f64) -> Result<f64> {
        let (i, w) = crate::grid::locate(self.n, z)?;
        let c = &self.cumulative[j];
        Ok(c[i] * (1.0 - w) + c[i + 1] * w)
    }

    /// Travel time theta_j(z, zeta) = Theta_j(z) - Theta_j(zeta).
    pub fn theta(&self, j: usize, z: f64, zeta: f64) -> Result<f64> {
        Ok(self.antiderivative(j, z)? - self.antiderivative(j, zeta)?)
    }

    pub fn n_states(&self) -> usize {
        self.cumulative.len()
    }
}

/// Compute the transport geometry of a validated model: travel times of the
/// reversed states, the largest prediction time tau+, the largest delay time
/// tau- and the detection-time lower bound T0 = tau+ + tau-.
pub fn transport_geometry(model: &PlantModel) -> Result<TransportGeometry> {
    let n_neg = model.dims.n_neg;
    let mut cumulative = Vec::with_capacity(model.gamma.len());
    for g in &model.gamma {
        let rev = g.reversed();
        cumulative.push(rev.cumulative_integral());
    }
    if cumulative.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::Format("gamma tabulation produced non-finite travel times".into()));
    }
    let n = cumulative[0].len();
    let tau_plus = cumulative[n_neg - 1][n - 1];
    let tau_minus = cumulative[n_neg][n - 1].abs();
    Ok(TransportGeometry {
        n,
        tau_plus,
        tau_minus,
        t0: tau_plus + tau_minus,
        cumulative,
    })
}

/// Reversed kernel-system data: the fault-diagnosis kernel equations written
/// in the reversed spatial coordinate, with the lumped kernel state
/// eta = col(p, q) of dimension n_eta = n_w + n_v.
#[derive(Debug, Clone)]
pub struct ReversedSystem {
    pub n_x: usize,
    pub n_neg: usize,
    pub n_pos: usize,
    pub n_w: usize,
    pub n_v: usize,
    pub n_f: usize,
    /// Grid resolution of the reversed tabulations.
    pub n: usize,
    /// Reversed reciprocal velocities gamma_j(1 - z).
    pub gamma_rev: Vec<TabulatedScalar>,
    /// Reversed in-domain coupling A(1 - z).
    pub a_rev: TabulatedMatrix,
    /// Reversed boundary-trace coupling A0(1 - z).
    pub a0_rev: TabulatedMatrix,
    /// Reversed integral coupling D(1 - a, 1 - b).
    pub d_rev: BivariateMatrix,
    pub q0: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub l2: DMatrix<f64>,
    /// Lumped kernel dynamics F_bar (n_eta x n_eta).
    pub f_bar: DMatrix<f64>,
    /// Distributed input map B1_bar(z) (n_eta x n_x).
    pub b1_bar: TabulatedMatrix,
    /// Boundary input maps.
    pub b2_bar: DMatrix<f64>,
    pub b3_bar: DMatrix<f64>,
    pub b4_bar: DMatrix<f64>,
    /// Initial kernel states eta0_i = col(0, R_f^T e_i).
    pub eta0: Vec<DVector<f64>>,
    /// Fault read-out of the signal model (for Q(0) = R_f^T checks).
    pub r_f: DMatrix<f64>,
}

impl ReversedSystem {
    pub fn n_eta(&self) -> usize {
        self.n_w + self.n_v
    }

    /// Selection of the ODE part: J = [I_{n_w} 0].
    pub fn j_w(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.n_w, self.n_eta());
        j.view_mut((0, 0), (self.n_w, self.n_w)).fill_with_identity();
        j
    }

    /// Boundary injection V = J_-^T - J_+^T Q_1^T (n_x x n_neg).
    pub fn v_matrix(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.n_x, self.n_neg);
        v.view_mut((0, 0), (self.n_neg, self.n_neg)).fill_with_identity();
        v.view_mut((self.n_neg, 0), (self.n_pos, self.n_neg))
            .copy_from(&(-self.q1.transpose()));
        v
    }
}

/// Build the reversed kernel-system data from a validated plant and signal
/// model, tabulated at `n` grid points.
pub fn build_reversed_system(model: &PlantModel, sig: &SignalModel, n: usize) -> Result<ReversedSystem> {
    let d = &model.dims;
    let n_x = d.n_x();
    if sig.n_f() != d.n_f {
        return Err(Error::dimension("signal model R_f rows", d.n_f.to_string(), sig.n_f().to_string()));
    }
    if sig.n_dt() != d.n_dt {
        return Err(Error::dimension("signal model R_d rows", d.n_dt.to_string(), sig.n_dt().to_string()));
    }
    let n_v = sig.n_v();
    let n_eta = d.n_w + n_v;

    let r_f = sig.r_f();
    let r_d = sig.r_d();
    let s = sig.s();

    // Coupling factors R_f^T E_k^T + R_d^T G_tilde^T G_k^T entering the
    // lumped kernel dynamics.
    let rf_t = r_f.transpose();
    let rdgt = r_d.transpose() * model.g_tilde.transpose();

    let lower = |e: &DMatrix<f64>, g: &DMatrix<f64>| -> DMatrix<f64> { &rf_t * e.transpose() + &rdgt * g.transpose() };

    let mut f_bar = DMatrix::zeros(n_eta, n_eta);
    f_bar.view_mut((0, 0), (d.n_w, d.n_w)).copy_from(&model.f.transpose());
    f_bar
        .view_mut((d.n_w, 0), (n_v, d.n_w))
        .copy_from(&lower(&model.e4, &model.g4));
    f_bar.view_mut((d.n_w, d.n_w), (n_v, n_v)).copy_from(&s.transpose());

    let h1_rev = model.h1.reversed();
    let e1_rev = model.e1.reversed();
    let g1_rev = model.g1.reversed();
    let nb = h1_rev.len();
    let b1_bar = TabulatedMatrix::from_fn(nb, n_eta, n_x, |z| {
        let mut m = DMatrix::zeros(n_eta, n_x);
        let h1 = h1_rev.eval(z).expect("in-domain");
        let e1 = e1_rev.eval(z).expect("in-domain");
        let g1 = g1_rev.eval(z).expect("in-domain");
        m.view_mut((0, 0), (d.n_w, n_x)).copy_from(&h1.transpose());
        m.view_mut((d.n_w, 0), (n_v, n_x))
            .copy_from(&(&rf_t * e1.transpose() + &rdgt * g1.transpose()));
        m
    })?
    .resample(n);

    let mut b2_bar = DMatrix::zeros(n_eta, d.n_neg);
    b2_bar
        .view_mut((d.n_w, 0), (n_v, d.n_neg))
        .copy_from(&(-lower(&model.e3, &model.g3)));

    let mut b3_bar = DMatrix::zeros(n_eta, d.n_pos);
    b3_bar.view_mut((0, 0), (d.n_w, d.n_pos)).copy_from(&model.h2.transpose());
    b3_bar
        .view_mut((d.n_w, 0), (n_v, d.n_pos))
        .copy_from(&lower(&model.e2, &model.g2));

    let mut b4_bar = DMatrix::zeros(n_eta, d.n_neg);
    b4_bar
        .view_mut((d.n_w, 0), (n_v, d.n_neg))
        .copy_from(&(-lower(&model.e5, &model.g5)));

    let eta0 = (0..d.n_f)
        .map(|i| {
            let mut v = DVector::zeros(n_eta);
            for k in 0..n_v {
                v[d.n_w + k] = r_f[(i, k)];
            }
            v
        })
        .collect();

    Ok(ReversedSystem {
        n_x,
        n_neg: d.n_neg,
        n_pos: d.n_pos,
        n_w: d.n_w,
        n_v,
        n_f: d.n_f,
        n,
        gamma_rev: model.gamma.iter().map(|g| g.reversed().resample(n)).collect(),
        a_rev: model.a.reversed().resample(n),
        a0_rev: model.a0.reversed().resample(n),
        d_rev: model.d.reversed().resample(n),
        q0: model.q0.clone(),
        q1: model.q1.clone(),
        l2: model.l2.clone(),
        f_bar,
        b1_bar,
        b2_bar,
        b3_bar,
        b4_bar,
        eta0,
        r_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled::demo_4x4;
    use approx::assert_relative_eq;

    fn demo() -> (PlantModel, SignalModel) {
        let sys = demo_4x4(201);
        (sys.plant, sys.signals)
    }

    #[test]
    fn demo_system_validates() {
        let (plant, sig) = demo();
        let report = validate_plant(&plant);
        assert!(report.passed(), "violations: {:?}", report.violations);
        assert!(sig.spectrum_violations(1e-9).is_empty());
    }

    #[test]
    fn equal_velocities_are_reported() {
        let (mut plant, _) = demo();
        plant.gamma[1] = plant.gamma[0].clone();
        let report = validate_plant(&plant);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::VelocityOrdering { .. })));
    }

    #[test]
    fn nonzero_diagonal_is_reported() {
        let (mut plant, _) = demo();
        let n = plant.a.len();
        plant.a = TabulatedMatrix::from_fn(n, 4, 4, |_| DMatrix::from_diagonal_element(4, 4, 1.0)).unwrap();
        let report = validate_plant(&plant);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NonzeroDiagonal { .. })));
    }

    #[test]
    fn travel_times_match_analytic_quadrature() {
        // theta_2(1,0) = int_0^1 (2.5 + s/2) ds = 2.75 and
        // theta_3(1,0) = -2.75 for the demo transport coefficients.
        let (plant, _) = demo();
        let geo = transport_geometry(&plant).unwrap();
        assert_relative_eq!(geo.tau_plus, 2.75, epsilon = 1e-3);
        assert_relative_eq!(geo.tau_minus, 2.75, epsilon = 1e-3);
        assert_relative_eq!(geo.t0, 5.5, epsilon = 1e-3);
    }

    #[test]
    fn constant_velocities_give_unit_travel_times() {
        let (mut plant, _) = demo();
        plant.dims = Dims {
            n_neg: 1,
            n_pos: 1,
            ..plant.dims
        };
        plant.gamma = vec![TabulatedScalar::constant(11, 1.0), TabulatedScalar::constant(11, -1.0)];
        let geo = transport_geometry(&plant).unwrap();
        assert_relative_eq!(geo.tau_plus, 1.0, epsilon = 1e-12);
        assert_relative_eq!(geo.tau_minus, 1.0, epsilon = 1e-12);
        assert_relative_eq!(geo.t0, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn theta_vanishes_on_the_diagonal_and_is_additive() {
        let (plant, _) = demo();
        let geo = transport_geometry(&plant).unwrap();
        for j in 0..4 {
            for &z in &[0.0, 0.3, 0.77, 1.0] {
                assert_relative_eq!(geo.theta(j, z, z).unwrap(), 0.0, epsilon = 1e-14);
            }
            let a = geo.theta(j, 0.9, 0.4).unwrap();
            let b = geo.theta(j, 0.4, 0.1).unwrap();
            let c = geo.theta(j, 0.9, 0.1).unwrap();
            assert_relative_eq!(a + b, c, epsilon = 1e-12);
            assert_relative_eq!(geo.theta(j, 0.2, 0.8).unwrap(), -geo.theta(j, 0.8, 0.2).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn t0_converges_under_grid_refinement() {
        let coarse = transport_geometry(&demo_4x4(101).plant).unwrap();
        let fine = transport_geometry(&demo_4x4(1001).plant).unwrap();
        assert!((coarse.t0 - fine.t0).abs() < 1e-3);
    }

    #[test]
    fn reversed_system_blocks() {
        let (plant, sig) = demo();
        let rs = build_reversed_system(&plant, &sig, 101).unwrap();
        assert_eq!(rs.n_eta(), 2 + 7);
        // First reversed transport coefficient: gamma_1(z) = z + 1 becomes 2 - z.
        assert_relative_eq!(rs.gamma_rev[0].eval(0.25).unwrap(), 1.75, epsilon = 1e-12);
        // Sensor fault on y_1: B4_bar carries -R_f^T E_5^T in its lower block.
        let rf_t = rs.r_f.transpose();
        let expected = -(&rf_t * plant.e5.transpose());
        let got = rs.b4_bar.view((2, 0), (7, 2)).clone_owned();
        assert_relative_eq!((expected - got).norm(), 0.0, epsilon = 1e-14);
        // eta0_i = col(0, R_f^T e_i)
        for i in 0..3 {
            assert_eq!(rs.eta0[i].len(), 9);
            assert_eq!(rs.eta0[i][0], 0.0);
            assert_eq!(rs.eta0[i][1], 0.0);
        }
        assert_eq!(rs.eta0[0][2], 0.0);
        assert_eq!(rs.eta0[0][3], 1.0); // f_1 sinusoid reads the second exosystem state
        assert_eq!(rs.eta0[1][4], 1.0); // f_2 ramp reads the first state of its block
        assert_eq!(rs.eta0[2][6], 1.0); // f_3 constant
    }

    #[test]
    fn decoupled_model_gives_block_diagonal_f_bar() {
        let (mut plant, sig) = demo();
        let n = plant.h1.len();
        plant.h1 = TabulatedMatrix::zeros(n, 4, 2);
        plant.e1 = TabulatedMatrix::zeros(n, 4, 3);
        plant.e2 = DMatrix::zeros(2, 3);
        plant.e3 = DMatrix::zeros(2, 3);
        plant.e4 = DMatrix::zeros(2, 3);
        plant.e5 = DMatrix::zeros(2, 3);
        plant.g1 = TabulatedMatrix::zeros(n, 4, 3);
        plant.g2 = DMatrix::zeros(2, 3);
        plant.g3 = DMatrix::zeros(2, 3);
        plant.g4 = DMatrix::zeros(2, 3);
        plant.g5 = DMatrix::zeros(2, 3);
        let rs = build_reversed_system(&plant, &sig, 51).unwrap();
        // F_bar = blockdiag(F^T, S^T), B1_bar = 0.
        let coupling = rs.f_bar.view((2, 0), (7, 2)).norm();
        assert_eq!(coupling, 0.0);
        assert_eq!(rs.b1_bar.max_abs(), 0.0);
        let s_t = sig.s().transpose();
        assert_relative_eq!((rs.f_bar.view((2, 2), (7, 7)).clone_owned() - s_t).norm(), 0.0);
    }
}
