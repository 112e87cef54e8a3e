//! TOML configuration schema for plants, signal models, synthesis options
//! and simulation scenarios.
//!
//! Coefficient functions are numeric: an entry of a matrix-valued function
//! is a constant, a polynomial in z (ascending coefficients), or a sampled
//! array on a uniform grid over [0, 1]. Bivariate entries are products of
//! two univariate factors. Matrices are written row-major as arrays of rows.
//!
//! ```toml
//! [plant.dimensions]
//! n_neg = 2; n_pos = 2; n_w = 2; n_u = 2; n_f = 3; n_d = 3; n_dt = 1; n_db = 2
//!
//! [plant]
//! gamma = [{ poly = [1.0, 1.0] }, ...]           # one entry per state
//! a     = [[0.0, { samples = [...] }, ...], ...] # n_x x n_x entries
//! d     = [[{ fz = { poly = [...] }, fzeta = { poly = [...] } }, ...], ...]
//! q0    = [[0.0, -1.0], [-0.5, 0.0]]             # constant matrices
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bundled;
use crate::error::{Error, Result};
use crate::grid::{BivariateMatrix, TabulatedMatrix, TabulatedScalar};
use crate::model::{Dims, PlantModel, SignalModel};
use crate::simulate::SignalEvent;

/// A univariate coefficient: constant, polynomial or sampled.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Poly { poly: Vec<f64> },
    Samples { samples: Vec<f64> },
}

impl Coefficient {
    pub fn eval(&self, z: f64) -> Result<f64> {
        match self {
            Coefficient::Constant(c) => Ok(*c),
            Coefficient::Poly { poly } => {
                let mut acc = 0.0;
                for c in poly.iter().rev() {
                    acc = acc * z + c;
                }
                Ok(acc)
            }
            Coefficient::Samples { samples } => {
                if samples.len() < 2 {
                    return Err(Error::Config("sample arrays need at least 2 values".into()));
                }
                let (i, w) = crate::grid::locate(samples.len(), z)?;
                Ok(samples[i] * (1.0 - w) + samples[i + 1] * w)
            }
        }
    }
}

/// A bivariate coefficient: constant or a separable product of univariate
/// factors in z and zeta.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BivariateCoefficient {
    Constant(f64),
    Product { fz: Coefficient, fzeta: Coefficient },
}

impl BivariateCoefficient {
    pub fn eval(&self, z: f64, zeta: f64) -> Result<f64> {
        match self {
            BivariateCoefficient::Constant(c) => Ok(*c),
            BivariateCoefficient::Product { fz, fzeta } => Ok(fz.eval(z)? * fzeta.eval(zeta)?),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimsConfig {
    pub n_neg: usize,
    pub n_pos: usize,
    pub n_w: usize,
    pub n_u: usize,
    pub n_f: usize,
    pub n_d: usize,
    pub n_dt: usize,
    pub n_db: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantConfig {
    pub dimensions: DimsConfig,
    pub gamma: Vec<Coefficient>,
    #[serde(default)]
    pub a: Option<Vec<Vec<Coefficient>>>,
    #[serde(default)]
    pub a0: Option<Vec<Vec<Coefficient>>>,
    #[serde(default)]
    pub d: Option<Vec<Vec<BivariateCoefficient>>>,
    pub q0: Vec<Vec<f64>>,
    pub q1: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub l2: Vec<Vec<f64>>,
    #[serde(default)]
    pub h1: Option<Vec<Vec<Coefficient>>>,
    pub h2: Vec<Vec<f64>>,
    #[serde(default)]
    pub b1: Option<Vec<Vec<Coefficient>>>,
    pub b2: Vec<Vec<f64>>,
    pub b3: Vec<Vec<f64>>,
    pub b4: Vec<Vec<f64>>,
    #[serde(default)]
    pub e1: Option<Vec<Vec<Coefficient>>>,
    pub e2: Vec<Vec<f64>>,
    pub e3: Vec<Vec<f64>>,
    pub e4: Vec<Vec<f64>>,
    pub e5: Vec<Vec<f64>>,
    #[serde(default)]
    pub g1: Option<Vec<Vec<Coefficient>>>,
    pub g2: Vec<Vec<f64>>,
    pub g3: Vec<Vec<f64>>,
    pub g4: Vec<Vec<f64>>,
    pub g5: Vec<Vec<f64>>,
    pub g_tilde: Vec<Vec<f64>>,
    pub g_bar: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalsConfig {
    pub s_f: Vec<Vec<f64>>,
    pub r_f_tilde: Vec<Vec<f64>>,
    pub s_d: Vec<Vec<f64>>,
    pub r_d_tilde: Vec<Vec<f64>>,
}

/// Sinusoid-sum input channel description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputTerm {
    pub amp: f64,
    #[serde(default)]
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OccurrenceConfig {
    pub time: f64,
    pub v_add: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundedDisturbanceKind {
    #[default]
    Zero,
    Random,
    WorstCase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundedDisturbanceConfig {
    #[serde(default)]
    pub kind: BoundedDisturbanceKind,
    /// Fault channel targeted by the worst-case pattern.
    #[serde(default)]
    pub fault: usize,
    /// Attainment time of the worst-case pattern.
    #[serde(default)]
    pub t_star: f64,
}

impl Default for BoundedDisturbanceConfig {
    fn default() -> Self {
        Self {
            kind: BoundedDisturbanceKind::Zero,
            fault: 0,
            t_star: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_z: usize,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Sinusoid terms per input channel.
    pub input: Vec<Vec<InputTerm>>,
    #[serde(default)]
    pub occurrences: Vec<OccurrenceConfig>,
    #[serde(default)]
    pub v_d0: Vec<f64>,
    #[serde(default)]
    pub d_bar: BoundedDisturbanceConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Detection window length; must exceed the transport bound T0.
    pub t: f64,
    #[serde(default)]
    pub tau_step: Option<f64>,
    /// Spatial grid resolution of the kernel synthesis.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
    #[serde(default = "default_max_iter")]
    pub max_iterations: usize,
}

fn default_grid() -> usize {
    201
}

fn default_tol() -> f64 {
    1e-9
}

fn default_max_iter() -> usize {
    200
}

/// Top-level config file: plant + signal model (+ synthesis, scenario).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub plant: PlantConfig,
    pub signals: SignalsConfig,
    #[serde(default)]
    pub synthesis: Option<SynthesisConfig>,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
}

fn to_matrix(context: &str, rows: usize, cols: usize, data: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if data.len() != rows || data.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!(
            "{context}: expected {rows}x{cols} matrix, got {} rows of lengths {:?}",
            data.len(),
            data.iter().map(|r| r.len()).collect::<Vec<_>>()
        )));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| data[i][j]))
}

fn to_tabulated(
    context: &str,
    n: usize,
    rows: usize,
    cols: usize,
    entries: &Option<Vec<Vec<Coefficient>>>,
) -> Result<TabulatedMatrix> {
    match entries {
        None => Ok(TabulatedMatrix::zeros(n, rows, cols)),
        Some(rows_spec) => {
            if rows_spec.len() != rows || rows_spec.iter().any(|r| r.len() != cols) {
                return Err(Error::Config(format!(
                    "{context}: expected {rows}x{cols} coefficient entries"
                )));
            }
            let mut failure = None;
            let m = TabulatedMatrix::from_fn(n, rows, cols, |z| {
                DMatrix::from_fn(rows, cols, |i, j| match rows_spec[i][j].eval(z) {
                    Ok(v) => v,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                })
            })?;
            match failure {
                Some(e) => Err(e),
                None => Ok(m),
            }
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("toml parse error: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable config")
    }

    /// Instantiate the plant tabulated at `n` grid points.
    pub fn build_plant(&self, n: usize) -> Result<PlantModel> {
        let c = &self.plant;
        let d = Dims {
            n_neg: c.dimensions.n_neg,
            n_pos: c.dimensions.n_pos,
            n_w: c.dimensions.n_w,
            n_u: c.dimensions.n_u,
            n_f: c.dimensions.n_f,
            n_d: c.dimensions.n_d,
            n_dt: c.dimensions.n_dt,
            n_db: c.dimensions.n_db,
        };
        let n_x = d.n_x();
        if c.gamma.len() != n_x {
            return Err(Error::Config(format!(
                "gamma: expected {n_x} transport coefficients, got {}",
                c.gamma.len()
            )));
        }
        let mut gamma = Vec::with_capacity(n_x);
        for g in &c.gamma {
            let mut failure = None;
            let t = TabulatedScalar::from_fn(n, |z| match g.eval(z) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            gamma.push(t);
        }
        let dmat = match &c.d {
            None => BivariateMatrix::zeros(n, n_x, n_x),
            Some(rows_spec) => {
                if rows_spec.len() != n_x || rows_spec.iter().any(|r| r.len() != n_x) {
                    return Err(Error::Config(format!("d: expected {n_x}x{n_x} entries")));
                }
                let mut failure = None;
                let m = BivariateMatrix::from_fn(n, n_x, n_x, |z, zeta| {
                    DMatrix::from_fn(n_x, n_x, |i, j| match rows_spec[i][j].eval(z, zeta) {
                        Ok(v) => v,
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    })
                })?;
                if let Some(e) = failure {
                    return Err(e);
                }
                m
            }
        };
        let delta = DVector::from_vec(c.delta.clone());
        Ok(PlantModel {
            dims: d,
            gamma,
            a: to_tabulated("a", n, n_x, n_x, &c.a)?,
            a0: to_tabulated("a0", n, n_x, d.n_neg, &c.a0)?,
            d: dmat,
            q0: to_matrix("q0", d.n_pos, d.n_neg, &c.q0)?,
            q1: to_matrix("q1", d.n_neg, d.n_pos, &c.q1)?,
            f: to_matrix("f", d.n_w, d.n_w, &c.f)?,
            l2: to_matrix("l2", d.n_w, d.n_neg, &c.l2)?,
            h1: to_tabulated("h1", n, n_x, d.n_w, &c.h1)?,
            h2: to_matrix("h2", d.n_pos, d.n_w, &c.h2)?,
            b1: to_tabulated("b1", n, n_x, d.n_u, &c.b1)?,
            b2: to_matrix("b2", d.n_pos, d.n_u, &c.b2)?,
            b3: to_matrix("b3", d.n_neg, d.n_u, &c.b3)?,
            b4: to_matrix("b4", d.n_w, d.n_u, &c.b4)?,
            e1: to_tabulated("e1", n, n_x, d.n_f, &c.e1)?,
            e2: to_matrix("e2", d.n_pos, d.n_f, &c.e2)?,
            e3: to_matrix("e3", d.n_neg, d.n_f, &c.e3)?,
            e4: to_matrix("e4", d.n_w, d.n_f, &c.e4)?,
            e5: to_matrix("e5", d.n_neg, d.n_f, &c.e5)?,
            g1: to_tabulated("g1", n, n_x, d.n_d, &c.g1)?,
            g2: to_matrix("g2", d.n_pos, d.n_d, &c.g2)?,
            g3: to_matrix("g3", d.n_neg, d.n_d, &c.g3)?,
            g4: to_matrix("g4", d.n_w, d.n_d, &c.g4)?,
            g5: to_matrix("g5", d.n_neg, d.n_d, &c.g5)?,
            g_tilde: to_matrix("g_tilde", d.n_d, d.n_dt, &c.g_tilde)?,
            g_bar: to_matrix("g_bar", d.n_d, d.n_db, &c.g_bar)?,
            delta,
        })
    }

    pub fn build_signals(&self) -> Result<SignalModel> {
        let s = &self.signals;
        let n_vf = s.s_f.len();
        let n_vd = s.s_d.len();
        Ok(SignalModel {
            s_f: to_matrix("s_f", n_vf, n_vf, &s.s_f)?,
            r_f_tilde: to_matrix("r_f_tilde", s.r_f_tilde.len(), n_vf, &s.r_f_tilde)?,
            s_d: to_matrix("s_d", n_vd, n_vd, &s.s_d)?,
            r_d_tilde: to_matrix("r_d_tilde", s.r_d_tilde.len(), n_vd, &s.r_d_tilde)?,
        })
    }

    pub fn events(&self) -> Result<Vec<SignalEvent>> {
        let Some(sc) = &self.scenario else {
            return Ok(Vec::new());
        };
        let n_vf = self.signals.s_f.len();
        sc.occurrences
            .iter()
            .map(|o| {
                if o.v_add.len() != n_vf {
                    return Err(Error::Config(format!(
                        "occurrence at t = {}: v_add needs {n_vf} entries",
                        o.time
                    )));
                }
                Ok(SignalEvent {
                    time: o.time,
                    v_add: DVector::from_vec(o.v_add.clone()),
                })
            })
            .collect()
    }

    pub fn input_at(&self, t: f64) -> DVector<f64> {
        let Some(sc) = &self.scenario else {
            return DVector::zeros(self.plant.dimensions.n_u);
        };
        DVector::from_fn(self.plant.dimensions.n_u, |i, _| {
            sc.input.get(i).map_or(0.0, |terms| {
                terms
                    .iter()
                    .map(|term| {
                        if term.omega == 0.0 {
                            term.amp
                        } else {
                            term.amp * (term.omega * t + term.phase).sin()
                        }
                    })
                    .sum()
            })
        })
    }
}

/// Emit the bundled demo system as a config file (sampled coefficients for
/// the non-polynomial entries).
pub fn demo_config_toml() -> String {
    let samples = 801;
    let sample = |f: &dyn Fn(f64) -> f64| -> Coefficient {
        Coefficient::Samples {
            samples: (0..samples)
                .map(|i| f(i as f64 / (samples - 1) as f64))
                .collect(),
        }
    };
    let zero = Coefficient::Constant(0.0);
    let a_entry = sample(&|z: f64| 1.0 / (z - 2.0));
    let a = vec![
        vec![zero.clone(), zero.clone(), a_entry.clone(), zero.clone()],
        vec![zero.clone(), zero.clone(), a_entry.clone(), zero.clone()],
        vec![zero.clone(), a_entry.clone(), zero.clone(), zero.clone()],
        vec![zero.clone(), a_entry.clone(), zero.clone(), zero.clone()],
    ];
    let bz = BivariateCoefficient::Constant(0.0);
    let pos = BivariateCoefficient::Product {
        fz: sample(&|z: f64| (2.0 * z).exp() / 10.0),
        fzeta: sample(&|z: f64| (-2.0 * z).exp()),
    };
    let neg = BivariateCoefficient::Product {
        fz: sample(&|z: f64| -(2.0 * z).exp() / 10.0),
        fzeta: sample(&|z: f64| (-2.0 * z).exp()),
    };
    let d = vec![
        vec![bz.clone(), bz.clone(), bz.clone(), bz.clone()],
        vec![bz.clone(), neg.clone(), pos.clone(), bz.clone()],
        vec![bz.clone(), pos.clone(), neg.clone(), bz.clone()],
        vec![bz.clone(), bz.clone(), bz.clone(), bz.clone()],
    ];
    let g1 = vec![
        vec![
            sample(&|z: f64| if (0.2..=0.8).contains(&z) { 1.0 } else { 0.0 }),
            zero.clone(),
            zero.clone(),
        ],
        vec![zero.clone(), zero.clone(), zero.clone()],
        vec![zero.clone(), zero.clone(), zero.clone()],
        vec![zero.clone(), zero.clone(), zero.clone()],
    ];
    let sys = bundled::demo_4x4(3);
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    let ics = bundled::demo_fault_ics();
    let config = RunConfig {
        plant: PlantConfig {
            dimensions: DimsConfig {
                n_neg: 2,
                n_pos: 2,
                n_w: 2,
                n_u: 2,
                n_f: 3,
                n_d: 3,
                n_dt: 1,
                n_db: 2,
            },
            gamma: vec![
                Coefficient::Poly { poly: vec![1.0, 1.0] },
                Coefficient::Poly { poly: vec![3.0, -0.5] },
                Coefficient::Poly { poly: vec![-3.0, 0.5] },
                Coefficient::Constant(-0.5),
            ],
            a: Some(a),
            a0: None,
            d: Some(d),
            q0: rows(&sys.plant.q0),
            q1: rows(&sys.plant.q1),
            f: rows(&sys.plant.f),
            l2: rows(&sys.plant.l2),
            h1: None,
            h2: rows(&sys.plant.h2),
            b1: None,
            b2: rows(&sys.plant.b2),
            b3: rows(&sys.plant.b3),
            b4: rows(&sys.plant.b4),
            e1: None,
            e2: rows(&sys.plant.e2),
            e3: rows(&sys.plant.e3),
            e4: rows(&sys.plant.e4),
            e5: rows(&sys.plant.e5),
            g1: Some(g1),
            g2: rows(&sys.plant.g2),
            g3: rows(&sys.plant.g3),
            g4: rows(&sys.plant.g4),
            g5: rows(&sys.plant.g5),
            g_tilde: rows(&sys.plant.g_tilde),
            g_bar: rows(&sys.plant.g_bar),
            delta: vec![0.7, 0.3],
        },
        signals: SignalsConfig {
            s_f: rows(&sys.signals.s_f),
            r_f_tilde: rows(&sys.signals.r_f_tilde),
            s_d: rows(&sys.signals.s_d),
            r_d_tilde: rows(&sys.signals.r_d_tilde),
        },
        synthesis: Some(SynthesisConfig {
            t: bundled::DEMO_DETECTION_WINDOW,
            tau_step: None,
            grid: 201,
            tolerance: 1e-9,
            max_iterations: 200,
        }),
        scenario: Some(ScenarioConfig {
            n_z: 201,
            dt: bundled::DEMO_DETECTION_WINDOW / 2000.0 / 3.0,
            horizon: 58.0,
            seed: 7,
            input: vec![
                vec![InputTerm {
                    amp: 1.0,
                    omega: 0.4,
                    phase: 0.0,
                }],
                vec![
                    InputTerm {
                        amp: 0.5,
                        omega: 0.25,
                        phase: std::f64::consts::FRAC_PI_2,
                    },
                    InputTerm {
                        amp: 0.3,
                        omega: 0.9,
                        phase: 0.0,
                    },
                ],
            ],
            occurrences: bundled::DEMO_OCCURRENCES
                .iter()
                .zip(ics.iter())
                .map(|(t, v)| OccurrenceConfig {
                    time: *t,
                    v_add: v.iter().copied().collect(),
                })
                .collect(),
            v_d0: bundled::demo_disturbance_ic().iter().copied().collect(),
            d_bar: BoundedDisturbanceConfig::default(),
        }),
    };
    config.to_toml()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{transport_geometry, validate_plant};
    use approx::assert_relative_eq;

    #[test]
    fn demo_config_roundtrips_and_validates() {
        let text = demo_config_toml();
        let config = RunConfig::from_toml(&text).unwrap();
        let plant = config.build_plant(201).unwrap();
        let report = validate_plant(&plant);
        assert!(report.passed(), "{:?}", report.violations);
        let geo = transport_geometry(&plant).unwrap();
        assert_relative_eq!(geo.t0, 5.5, epsilon = 1e-3);
        let sig = config.build_signals().unwrap();
        assert!(sig.spectrum_violations(1e-9).is_empty());
        // sampled coefficients approximate the closed forms
        let exact = crate::bundled::demo_4x4(201);
        let mut worst: f64 = 0.0;
        for k in 0..201 {
            for i in 0..4 {
                for j in 0..4 {
                    worst = worst
                        .max((plant.a.entry_at_node(k, i, j) - exact.plant.a.entry_at_node(k, i, j)).abs());
                }
            }
        }
        assert!(worst < 1e-6, "A sampling error {worst}");
    }

    #[test]
    fn missing_field_is_a_config_error_naming_the_field() {
        let text = demo_config_toml();
        let mangled = text.replace("q1", "q1_gone");
        let err = RunConfig::from_toml(&mangled).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("q1"), "error should name the field: {msg}");
    }

    #[test]
    fn wrong_matrix_shape_is_rejected() {
        let text = demo_config_toml();
        let config = RunConfig::from_toml(&text).unwrap();
        let mut bad = config.clone();
        bad.plant.q0 = vec![vec![1.0, 2.0, 3.0]];
        assert!(bad.build_plant(51).is_err());
    }
}
