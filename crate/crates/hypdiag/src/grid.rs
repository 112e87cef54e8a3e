//! Uniform-grid tabulations of scalar, matrix and bivariate coefficient
//! functions on the dimensionless spatial interval [0, 1].
//!
//! Evaluation between samples is piecewise linear; evaluation outside
//! [0, 1] (beyond a round-off guard) is an error.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Round-off guard for domain checks.
const DOMAIN_EPS: f64 = 1e-12;

/// Locate `z` in a uniform grid of `n` points on [0, 1]: returns the cell
/// index and the interpolation fraction.
#[inline]
pub(crate) fn locate(n: usize, z: f64) -> Result<(usize, f64)> {
    if !(-DOMAIN_EPS..=1.0 + DOMAIN_EPS).contains(&z) {
        return Err(Error::OutOfDomain { point: z });
    }
    Ok(locate_clamped(n, z))
}

/// Like [`locate`] but clamps instead of erroring; used in solver hot paths
/// where positions are already guarded.
#[inline]
pub(crate) fn locate_clamped(n: usize, z: f64) -> (usize, f64) {
    let h = 1.0 / (n - 1) as f64;
    let x = (z / h).clamp(0.0, (n - 1) as f64);
    let mut i = x.floor() as usize;
    if i >= n - 1 {
        i = n - 2;
    }
    (i, x - i as f64)
}

/// Scalar coefficient function sampled on a uniform grid over [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedScalar {
    values: Vec<f64>,
}

impl TabulatedScalar {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::dimension("TabulatedScalar", ">= 2 samples", values.len().to_string()));
        }
        Ok(Self { values })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(f64) -> f64) -> Self {
        let h = 1.0 / (n - 1) as f64;
        Self {
            values: (0..n).map(|i| f(i as f64 * h)).collect(),
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self { values: vec![c; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        let (i, w) = locate(self.values.len(), z)?;
        Ok(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }

    /// Spatial reversal z -> 1 - z (sample order flipped).
    pub fn reversed(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self { values }
    }

    /// Resample onto an `n`-point uniform grid by linear interpolation.
    pub fn resample(&self, n: usize) -> Self {
        Self::from_fn(n, |z| self.eval(z).expect("in-domain"))
    }

    /// Cumulative trapezoidal antiderivative sampled at the grid nodes.
    pub fn cumulative_integral(&self) -> Vec<f64> {
        let n = self.values.len();
        let h = 1.0 / (n - 1) as f64;
        let mut acc = Vec::with_capacity(n);
        acc.push(0.0);
        for i in 1..n {
            let prev = acc[i - 1];
            acc.push(prev + 0.5 * h * (self.values[i - 1] + self.values[i]));
        }
        acc
    }
}

/// Matrix-valued coefficient function sampled on a uniform grid over [0, 1].
///
/// Samples are stored flat, node-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    n: usize,
}

impl TabulatedMatrix {
    pub fn from_fn(n: usize, rows: usize, cols: usize, mut f: impl FnMut(f64) -> DMatrix<f64>) -> Result<Self> {
        let h = 1.0 / (n - 1) as f64;
        let mut data = Vec::with_capacity(n * rows * cols);
        for i in 0..n {
            let m = f(i as f64 * h);
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::dimension(
                    "TabulatedMatrix::from_fn",
                    format!("{rows}x{cols}"),
                    format!("{}x{}", m.nrows(), m.ncols()),
                ));
            }
            for r in 0..rows {
                for c in 0..cols {
                    data.push(m[(r, c)]);
                }
            }
        }
        Ok(Self { rows, cols, data, n })
    }

    pub fn zeros(n: usize, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; n * rows * cols],
            n,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        let s = self.rows * self.cols;
        &self.data[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn entry_at_node(&self, i: usize, r: usize, c: usize) -> f64 {
        self.data[(i * self.rows + r) * self.cols + c]
    }

    pub fn node_matrix(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, self.node(i))
    }

    pub fn eval(&self, z: f64) -> Result<DMatrix<f64>> {
        let (i, w) = locate(self.n, z)?;
        let a = self.node(i);
        let b = self.node(i + 1);
        Ok(DMatrix::from_fn(self.rows, self.cols, |r, c| {
            let k = r * self.cols + c;
            a[k] * (1.0 - w) + b[k] * w
        }))
    }

    /// Linear interpolation of a single entry.
    #[inline]
    pub fn eval_entry(&self, z: f64, r: usize, c: usize) -> Result<f64> {
        let (i, w) = locate(self.n, z)?;
        Ok(self.entry_at_node(i, r, c) * (1.0 - w) + self.entry_at_node(i + 1, r, c) * w)
    }

    /// Spatial reversal z -> 1 - z.
    pub fn reversed(&self) -> Self {
        let s = self.rows * self.cols;
        let mut data = Vec::with_capacity(self.data.len());
        for i in (0..self.n).rev() {
            data.extend_from_slice(&self.data[i * s..(i + 1) * s]);
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
            n: self.n,
        }
    }

    pub fn resample(&self, n: usize) -> Self {
        Self::from_fn(n, self.rows, self.cols, |z| self.eval(z).expect("in-domain")).expect("dims fixed")
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Bivariate matrix-valued function D(z, zeta) sampled on the full square
/// grid; only the triangle zeta <= z is meaningful for the integral coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateMatrix {
    rows: usize,
    cols: usize,
    n: usize,
    data: Vec<f64>,
}

impl BivariateMatrix {
    pub fn from_fn(n: usize, rows: usize, cols: usize, mut f: impl FnMut(f64, f64) -> DMatrix<f64>) -> Result<Self> {
        let h = 1.0 / (n - 1) as f64;
        let mut data = Vec::with_capacity(n * n * rows * cols);
        for iz in 0..n {
            for izeta in 0..n {
                let m = f(iz as f64 * h, izeta as f64 * h);
                if m.nrows() != rows || m.ncols() != cols {
                    return Err(Error::dimension(
                        "BivariateMatrix::from_fn",
                        format!("{rows}x{cols}"),
                        format!("{}x{}", m.nrows(), m.ncols()),
                    ));
                }
                for r in 0..rows {
                    for c in 0..cols {
                        data.push(m[(r, c)]);
                    }
                }
            }
        }
        Ok(Self { rows, cols, n, data })
    }

    pub fn zeros(n: usize, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            n,
            data: vec![0.0; n * n * rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn node(&self, iz: usize, izeta: usize) -> &[f64] {
        let s = self.rows * self.cols;
        let off = (iz * self.n + izeta) * s;
        &self.data[off..off + s]
    }

    pub fn eval(&self, z: f64, zeta: f64) -> Result<DMatrix<f64>> {
        let (iz, wz) = locate(self.n, z)?;
        let (ic, wc) = locate(self.n, zeta)?;
        let a = self.node(iz, ic);
        let b = self.node(iz, ic + 1);
        let c = self.node(iz + 1, ic);
        let d = self.node(iz + 1, ic + 1);
        Ok(DMatrix::from_fn(self.rows, self.cols, |r, cc| {
            let k = r * self.cols + cc;
            (a[k] * (1.0 - wc) + b[k] * wc) * (1.0 - wz) + (c[k] * (1.0 - wc) + d[k] * wc) * wz
        }))
    }

    /// Reversal of both arguments: out(a, b) = in(1 - a, 1 - b).
    pub fn reversed(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for iz in (0..self.n).rev() {
            for izeta in (0..self.n).rev() {
                data.extend_from_slice(self.node(iz, izeta));
            }
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            n: self.n,
            data,
        }
    }

    pub fn resample(&self, n: usize) -> Self {
        Self::from_fn(n, self.rows, self.cols, |z, zeta| self.eval(z, zeta).expect("in-domain"))
            .expect("dims fixed")
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Trapezoidal weights on a uniform grid with `n` points and step `h`.
#[inline]
pub fn trapezoid_weight(n: usize, i: usize, h: f64) -> f64 {
    if i == 0 || i == n - 1 {
        0.5 * h
    } else {
        h
    }
}

/// Compound trapezoidal rule over uniformly sampled values.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut acc = 0.5 * (values[0] + values[n - 1]);
    for v in &values[1..n - 1] {
        acc += v;
    }
    acc * h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_interpolation_is_exact_for_linear_data() {
        let t = TabulatedScalar::from_fn(11, |z| 3.0 * z - 1.0);
        assert_relative_eq!(t.eval(0.37).unwrap(), 3.0 * 0.37 - 1.0, epsilon = 1e-14);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let t = TabulatedScalar::from_fn(5, |z| z);
        assert!(t.eval(1.2).is_err());
        assert!(t.eval(-0.1).is_err());
        // round-off guard
        assert!(t.eval(1.0 + 1e-15).is_ok());
    }

    #[test]
    fn reversal_is_an_involution() {
        let t = TabulatedScalar::from_fn(17, |z| (2.0 * z).exp());
        assert_eq!(t.reversed().reversed(), t);

        let m = TabulatedMatrix::from_fn(9, 2, 2, |z| {
            nalgebra::DMatrix::from_row_slice(2, 2, &[z, 1.0 - z, z * z, 2.0])
        })
        .unwrap();
        assert_eq!(m.reversed().reversed(), m);

        let b = BivariateMatrix::from_fn(7, 1, 1, |z, zeta| {
            nalgebra::DMatrix::from_element(1, 1, z * 2.0 + zeta)
        })
        .unwrap();
        assert_eq!(b.reversed().reversed(), b);
    }

    #[test]
    fn bivariate_reversal_flips_both_arguments() {
        let b = BivariateMatrix::from_fn(11, 1, 1, |z, zeta| {
            nalgebra::DMatrix::from_element(1, 1, 10.0 * z + zeta)
        })
        .unwrap();
        let r = b.reversed();
        let got = r.eval(0.3, 0.1).unwrap()[(0, 0)];
        assert_relative_eq!(got, 10.0 * 0.7 + 0.9, epsilon = 1e-12);
    }

    #[test]
    fn cumulative_integral_matches_closed_form() {
        // integrand 2.5 + s/2 has antiderivative 2.5 s + s^2/4 (exact for trapezoid)
        let t = TabulatedScalar::from_fn(101, |s| 2.5 + 0.5 * s);
        let acc = t.cumulative_integral();
        assert_relative_eq!(acc[100], 2.75, epsilon = 1e-12);
        assert_relative_eq!(acc[50], 2.5 * 0.5 + 0.25 * 0.25, epsilon = 1e-12);
    }

    #[test]
    fn trapezoid_weights_sum_to_interval() {
        let n = 10;
        let h = 0.1;
        let total: f64 = (0..n).map(|i| trapezoid_weight(n, i, h)).sum();
        assert_relative_eq!(total, 0.9, epsilon = 1e-14);
    }
}
