//! Online fault identification: sliding-window FIR filter banks built from
//! the diagnosis kernels, detection thresholds, and numeric verification of
//! the input-output equation on simulated traces.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::simulate::SimTrace;
use crate::trajectory::{DiagnosisKernels, TimeKernel};

/// FIR filter bank: per-fault taps against the output and input histories.
///
/// Tap `j` evaluates the kernel at `tau = j * dt` and carries a compound
/// trapezoidal weight (`dt/2` at both ends, `dt` inside).
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub window: f64,
    pub dt: f64,
    pub taps: usize,
    pub n_neg: usize,
    pub n_u: usize,
    pub n_f: usize,
    /// Weighted taps `taps_n[j * n_neg * n_f ..]` of N(tau).
    pub taps_n: Vec<f64>,
    /// Weighted taps of M_B(tau).
    pub taps_mb: Vec<f64>,
    /// Set when the kernel step is not an integer multiple of `dt`.
    pub resampled_off_grid: bool,
}

fn resample_weighted(kernel: &TimeKernel, window: f64, dt: f64, taps: usize) -> Vec<f64> {
    let tau_step = window / (kernel.len - 1) as f64;
    let size = kernel.rows * kernel.cols;
    let mut out = vec![0.0; taps * size];
    for j in 0..taps {
        let tau = j as f64 * dt;
        let x = (tau / tau_step).clamp(0.0, (kernel.len - 1) as f64);
        let mut i = x as usize;
        if i >= kernel.len - 1 {
            i = kernel.len - 2;
        }
        let w = x - i as f64;
        let weight = crate::grid::trapezoid_weight(taps, j, dt);
        for e in 0..size {
            let v = kernel.data[i * size + e] * (1.0 - w) + kernel.data[(i + 1) * size + e] * w;
            out[j * size + e] = weight * v;
        }
    }
    out
}

/// Build the filter bank at the runtime sample step `dt`.
pub fn build_filters(kernels: &DiagnosisKernels, dt: f64) -> Result<FilterBank> {
    if dt > kernels.tau_step * (1.0 + 1e-12) {
        return Err(Error::Undersampled {
            dt,
            tau_step: kernels.tau_step,
        });
    }
    let taps = (kernels.t / dt).floor() as usize + 1;
    let ratio = kernels.tau_step / dt;
    let resampled_off_grid = (ratio - ratio.round()).abs() > 1e-9;
    Ok(FilterBank {
        window: kernels.t,
        dt,
        taps,
        n_neg: kernels.n_neg,
        n_u: kernels.n_u,
        n_f: kernels.n_f,
        taps_n: resample_weighted(&kernels.n_kernel, kernels.t, dt, taps),
        taps_mb: resample_weighted(&kernels.m_b, kernels.t, dt, taps),
        resampled_off_grid,
    })
}

/// Fault estimates, thresholds, detection flags and estimation bounds.
#[derive(Debug, Clone)]
pub struct DiagnosisReport {
    pub dt: f64,
    /// Index of the first sample with a full window (t = start * dt).
    pub start: usize,
    pub n_f: usize,
    /// Estimates from `start` onwards, `f_hat[(k - start) * n_f + i]`.
    pub f_hat: Vec<f64>,
    pub f_b: Vec<f64>,
    pub detected: Vec<bool>,
    /// First detection instant per fault, if any.
    pub detection_times: Vec<Option<f64>>,
    /// Interval bounds `f_hat -+ f_b`, same layout as `f_hat`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DiagnosisReport {
    pub fn samples(&self) -> usize {
        self.f_hat.len() / self.n_f
    }

    pub fn time_at(&self, k: usize) -> f64 {
        (self.start + k) as f64 * self.dt
    }

    pub fn estimate(&self, k: usize, fault: usize) -> f64 {
        self.f_hat[k * self.n_f + fault]
    }
}

/// Run the filter bank over sampled output/input histories.
///
/// Estimates are withheld until the window is full; `y` and `u` must be
/// sampled at the bank's `dt`.
pub fn run_identification(bank: &FilterBank, y: &[f64], u: &[f64]) -> Result<DiagnosisReport> {
    let samples = y.len() / bank.n_neg;
    if u.len() / bank.n_u != samples {
        return Err(Error::dimension(
            "identification input series",
            format!("{samples} samples"),
            format!("{}", u.len() / bank.n_u),
        ));
    }
    if samples < bank.taps {
        return Err(Error::InsufficientHistory {
            needed: bank.taps,
            got: samples,
        });
    }
    let start = bank.taps - 1;
    let n_f = bank.n_f;
    let mut f_hat = vec![0.0; (samples - start) * n_f];
    let sy = bank.n_neg * n_f;
    let su = bank.n_u * n_f;
    for k in start..samples {
        let out = &mut f_hat[(k - start) * n_f..(k - start + 1) * n_f];
        for j in 0..bank.taps {
            let yk = &y[(k - j) * bank.n_neg..(k - j + 1) * bank.n_neg];
            let tap = &bank.taps_n[j * sy..(j + 1) * sy];
            for i in 0..n_f {
                let mut acc = 0.0;
                for c in 0..bank.n_neg {
                    // kernel stored (row c, col i); filter applies N^T
                    acc += tap[c * n_f + i] * yk[c];
                }
                out[i] += acc;
            }
            let uk = &u[(k - j) * bank.n_u..(k - j + 1) * bank.n_u];
            let tap = &bank.taps_mb[j * su..(j + 1) * su];
            for i in 0..n_f {
                let mut acc = 0.0;
                for c in 0..bank.n_u {
                    acc += tap[c * n_f + i] * uk[c];
                }
                out[i] += acc;
            }
        }
    }
    Ok(DiagnosisReport {
        dt: bank.dt,
        start,
        n_f,
        f_hat,
        f_b: vec![0.0; n_f],
        detected: Vec::new(),
        detection_times: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
    })
}

/// Apply thresholds: flags use the strict test `|f_hat_i| > f_B_i`, bounds
/// are `f_hat -+ f_B`.
pub fn detect(report: &mut DiagnosisReport, f_b: &[f64]) {
    let n_f = report.n_f;
    let samples = report.samples();
    report.f_b = f_b.to_vec();
    report.detected = vec![false; samples * n_f];
    report.lower = vec![0.0; samples * n_f];
    report.upper = vec![0.0; samples * n_f];
    report.detection_times = vec![None; n_f];
    for k in 0..samples {
        for i in 0..n_f {
            let v = report.f_hat[k * n_f + i];
            let flag = v.abs() > f_b[i];
            report.detected[k * n_f + i] = flag;
            report.lower[k * n_f + i] = v - f_b[i];
            report.upper[k * n_f + i] = v + f_b[i];
            if flag && report.detection_times[i].is_none() {
                report.detection_times[i] = Some(report.time_at(k));
            }
        }
    }
}

/// Residual of the input-output equation evaluated on a trace.
#[derive(Debug, Clone)]
pub struct IoResidual {
    /// Relative L2 residual over the valid window.
    pub relative: f64,
    pub lhs_norm: f64,
    pub rhs_norm: f64,
    pub samples: usize,
}

/// Evaluate both sides of the input-output equation on a simulated trace
/// and report the relative defect.
///
/// The left side convolves the fault-side kernel with the true fault; the
/// right side collects output, input and disturbance convolutions. The
/// identity certifies the kernel synthesis numerically.
pub fn verify_io_equation(kernels: &DiagnosisKernels, trace: &SimTrace) -> Result<IoResidual> {
    let dt = trace.dt;
    if dt > kernels.tau_step * (1.0 + 1e-12) {
        return Err(Error::Undersampled {
            dt,
            tau_step: kernels.tau_step,
        });
    }
    let taps = (kernels.t / dt).floor() as usize + 1;
    let samples = trace.samples();
    if samples < taps {
        return Err(Error::InsufficientHistory {
            needed: taps,
            got: samples,
        });
    }
    let w_me = resample_weighted(&kernels.m_e, kernels.t, dt, taps);
    let w_n = resample_weighted(&kernels.n_kernel, kernels.t, dt, taps);
    let w_mb = resample_weighted(&kernels.m_b, kernels.t, dt, taps);
    let w_gt = resample_weighted(&kernels.m_gt, kernels.t, dt, taps);
    let w_gb = resample_weighted(&kernels.m_gb, kernels.t, dt, taps);

    let n_f = kernels.n_f;
    let conv = |weights: &[f64], series: &[f64], rows: usize, k: usize| -> DVector<f64> {
        let mut out = DVector::zeros(n_f);
        for j in 0..taps {
            let s = &series[(k - j) * rows..(k - j + 1) * rows];
            let tap = &weights[j * rows * n_f..(j + 1) * rows * n_f];
            for i in 0..n_f {
                let mut acc = 0.0;
                for c in 0..rows {
                    acc += tap[c * n_f + i] * s[c];
                }
                out[i] += acc;
            }
        }
        out
    };

    let mut lhs_norm = 0.0;
    let mut rhs_norm = 0.0;
    let mut defect = 0.0;
    let mut count = 0usize;
    for k in (taps - 1)..samples {
        let lhs = conv(&w_me, &trace.f, n_f, k);
        let rhs = -(conv(&w_n, &trace.y, trace.n_neg, k)
            + conv(&w_mb, &trace.u, trace.n_u, k)
            + conv(&w_gt, &trace.d_tilde, trace.n_dt, k)
            + conv(&w_gb, &trace.d_bar, trace.n_db, k));
        lhs_norm += lhs.norm_squared();
        rhs_norm += rhs.norm_squared();
        defect += (lhs - rhs).norm_squared();
        count += 1;
    }
    let lhs_norm = (lhs_norm * dt).sqrt();
    let rhs_norm = (rhs_norm * dt).sqrt();
    let defect = (defect * dt).sqrt();
    Ok(IoResidual {
        relative: defect / lhs_norm.max(rhs_norm).max(1e-12),
        lhs_norm,
        rhs_norm,
        samples: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::TimeKernel;
    use approx::assert_relative_eq;

    fn scalar_kernels(n_tau: usize, t: f64, n_value: f64) -> DiagnosisKernels {
        let mut n_kernel = TimeKernel::zeros(n_tau, 1, 1);
        for k in 0..n_tau {
            n_kernel.data[k] = n_value;
        }
        DiagnosisKernels {
            t,
            tau_step: t / (n_tau - 1) as f64,
            n_tau,
            n_neg: 1,
            n_u: 1,
            n_f: 1,
            n_w: 0,
            n_v: 1,
            n_dt: 0,
            n_db: 0,
            n_kernel,
            m_b: TimeKernel::zeros(n_tau, 1, 1),
            m_e: TimeKernel::zeros(n_tau, 1, 1),
            m_gt: TimeKernel::zeros(n_tau, 0, 1),
            m_gb: TimeKernel::zeros(n_tau, 0, 1),
            p: TimeKernel::zeros(n_tau, 0, 1),
            q: TimeKernel::zeros(n_tau, 1, 1),
            f_b: vec![0.0],
            m_field: None,
        }
    }

    #[test]
    fn trapezoid_taps_for_unit_kernel() {
        let kernels = scalar_kernels(5, 1.0, 1.0);
        let bank = build_filters(&kernels, 0.25).unwrap();
        assert_eq!(bank.taps, 5);
        let expect = [0.125, 0.25, 0.25, 0.25, 0.125];
        for (j, e) in expect.iter().enumerate() {
            assert_relative_eq!(bank.taps_n[j], *e, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_kernels_give_zero_estimates() {
        let kernels = scalar_kernels(5, 1.0, 0.0);
        let bank = build_filters(&kernels, 0.25).unwrap();
        let y = vec![1.0; 40];
        let u = vec![-2.0; 40];
        let report = run_identification(&bank, &y, &u).unwrap();
        assert!(report.f_hat.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_input_integrates_the_kernel() {
        // kernel g(tau) = 2 tau on [0, 1]: int = 1; constant input c = 3.
        let n_tau = 101;
        let mut kernels = scalar_kernels(n_tau, 1.0, 0.0);
        for k in 0..n_tau {
            kernels.n_kernel.data[k] = 2.0 * (k as f64 / 100.0);
        }
        let bank = build_filters(&kernels, 0.01).unwrap();
        let y = vec![3.0; 200];
        let u = vec![0.0; 200];
        let report = run_identification(&bank, &y, &u).unwrap();
        let last = report.f_hat[report.f_hat.len() - 1];
        assert_relative_eq!(last, 3.0, epsilon = 1e-3);
    }

    #[test]
    fn undersampling_is_refused() {
        let kernels = scalar_kernels(5, 1.0, 1.0);
        assert!(matches!(build_filters(&kernels, 0.5), Err(Error::Undersampled { .. })));
    }

    #[test]
    fn estimates_are_causal() {
        let kernels = scalar_kernels(11, 1.0, 1.0);
        let bank = build_filters(&kernels, 0.1).unwrap();
        let mut y = vec![0.0; 50];
        let u = vec![0.0; 50];
        for k in 0..50 {
            y[k] = (0.3 * k as f64).sin();
        }
        let base = run_identification(&bank, &y, &u).unwrap();
        // Changing samples before t - T must not change the estimate at t.
        let probe = 40usize;
        let mut y2 = y.clone();
        for v in y2.iter_mut().take(probe - bank.taps) {
            *v += 100.0;
        }
        let changed = run_identification(&bank, &y2, &u).unwrap();
        let idx = probe - base.start;
        assert_eq!(base.f_hat[idx], changed.f_hat[idx]);
    }

    #[test]
    fn linearity_of_estimates() {
        let kernels = scalar_kernels(11, 1.0, 0.7);
        let bank = build_filters(&kernels, 0.1).unwrap();
        let y1: Vec<f64> = (0..40).map(|k| (0.2 * k as f64).sin()).collect();
        let y2: Vec<f64> = (0..40).map(|k| (0.5 * k as f64).cos()).collect();
        let u = vec![0.0; 40];
        let a = 1.3;
        let b = -0.8;
        let combo: Vec<f64> = y1.iter().zip(y2.iter()).map(|(p, q)| a * p + b * q).collect();
        let r1 = run_identification(&bank, &y1, &u).unwrap();
        let r2 = run_identification(&bank, &y2, &u).unwrap();
        let rc = run_identification(&bank, &combo, &u).unwrap();
        for k in 0..rc.f_hat.len() {
            assert_relative_eq!(rc.f_hat[k], a * r1.f_hat[k] + b * r2.f_hat[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn detection_uses_strict_inequality() {
        let mut report = DiagnosisReport {
            dt: 0.1,
            start: 0,
            n_f: 1,
            f_hat: vec![0.5, 1.0, 1.5],
            f_b: vec![],
            detected: vec![],
            detection_times: vec![],
            lower: vec![],
            upper: vec![],
        };
        detect(&mut report, &[1.0]);
        assert_eq!(report.detected, vec![false, false, true]);
        assert_eq!(report.detection_times[0], Some(0.2));
        // bounds have width 2 f_B
        assert_relative_eq!(report.upper[0] - report.lower[0], 2.0, epsilon = 1e-15);
        // zero threshold: any nonzero estimate triggers
        detect(&mut report, &[0.0]);
        assert_eq!(report.detected, vec![true, true, true]);
    }
}
