//! Extended-precision (double-double) dense helpers for the steering
//! Gramian.
//!
//! The minimum-energy steering Gramian couples fast stable modes, which grow
//! exponentially under the backward flow, with the slow chain of the
//! parametrizing variable; its condition number routinely exceeds 1/eps of
//! f64. Accumulating the Gramian, the step transition matrix and the linear
//! solve in double-double keeps the solution meaningful; everything exported
//! downstream is rounded back to f64.

use twofloat::TwoFloat;

/// Full-precision division. The `twofloat` `Div` impl drops the low word of
/// the quotient (observed: `(1/3).lo() == 0`), so quotients are refined here
/// with two exact-residual Newton corrections.
pub fn dd_div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q0 = a.hi() / b.hi();
    let r0 = a - b * TwoFloat::from(q0);
    let q1 = r0.hi() / b.hi();
    let r1 = r0 - b * TwoFloat::from(q1);
    let q2 = r1.hi() / b.hi();
    (TwoFloat::from(q0) + TwoFloat::from(q1)) + TwoFloat::from(q2)
}

/// Row-major double-double matrix.
#[derive(Debug, Clone)]
pub struct DdMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<TwoFloat>,
}

impl DdMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![TwoFloat::from(0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = TwoFloat::from(1.0);
        }
        m
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self {
            rows,
            cols,
            data: data.iter().map(|v| TwoFloat::from(*v)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> TwoFloat {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: TwoFloat) {
        self.data[r * self.cols + c] = v;
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| f64::from(*v)).collect()
    }

    pub fn mul(&self, other: &DdMatrix) -> DdMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DdMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == TwoFloat::from(0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.at(i, j) + a * other.at(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &DdMatrix) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
    }

    pub fn scale(&self, s: TwoFloat) -> DdMatrix {
        DdMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| *v * s).collect(),
        }
    }

    /// Rank-weighted accumulation `self += w * x * x^T` for a column block x.
    pub fn add_weighted_outer(&mut self, w: TwoFloat, x: &DdMatrix) {
        assert_eq!(self.rows, x.rows);
        for i in 0..self.rows {
            for j in 0..self.rows {
                let mut acc = TwoFloat::from(0.0);
                for c in 0..x.cols {
                    acc = acc + x.at(i, c) * x.at(j, c);
                }
                let v = self.at(i, j) + w * acc;
                self.set(i, j, v);
            }
        }
    }

    pub fn max_abs_f64(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(f64::from(v.abs())))
    }
}

/// LU factorization with partial pivoting, solving `A X = B` in place.
/// Returns the solution or the (near-)zero pivot magnitude on failure.
pub fn lu_solve(a: &DdMatrix, b: &DdMatrix) -> Result<DdMatrix, f64> {
    assert_eq!(a.rows, a.cols);
    assert_eq!(a.rows, b.rows);
    let n = a.rows;
    let mut lu = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = f64::from(lu.at(col, col).abs());
        for r in col + 1..n {
            let mag = f64::from(lu.at(r, col).abs());
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag == 0.0 {
            return Err(0.0);
        }
        if pivot_row != col {
            for c in 0..n {
                let t = lu.at(col, c);
                lu.set(col, c, lu.at(pivot_row, c));
                lu.set(pivot_row, c, t);
            }
            for c in 0..x.cols {
                let t = x.at(col, c);
                x.set(col, c, x.at(pivot_row, c));
                x.set(pivot_row, c, t);
            }
        }
        let piv = lu.at(col, col);
        for r in col + 1..n {
            let factor = dd_div(lu.at(r, col), piv);
            if factor == TwoFloat::from(0.0) {
                continue;
            }
            lu.set(r, col, factor);
            for c in col + 1..n {
                let v = lu.at(r, c) - factor * lu.at(col, c);
                lu.set(r, c, v);
            }
            for c in 0..x.cols {
                let v = x.at(r, c) - factor * x.at(col, c);
                x.set(r, c, v);
            }
        }
    }
    for col in (0..n).rev() {
        let piv = lu.at(col, col);
        for c in 0..x.cols {
            let mut v = x.at(col, c);
            for k in col + 1..n {
                v = v - lu.at(col, k) * x.at(k, c);
            }
            x.set(col, c, dd_div(v, piv));
        }
    }
    Ok(x)
}

/// Matrix exponential by scaling and squaring with a Taylor expansion; the
/// argument is scaled until its norm is below 1/32 and 18 Taylor terms give
/// a truncation error far below double-double round-off.
pub fn dd_exp(a: &DdMatrix) -> DdMatrix {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let norm = {
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += f64::from(a.at(i, j).abs());
            }
            worst = worst.max(row);
        }
        worst
    };
    let mut squarings = 0usize;
    let mut scale = 1.0f64;
    while norm * scale > 1.0 / 32.0 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled = a.scale(TwoFloat::from(scale));

    // Horner evaluation of sum_{k=0}^{18} X^k / k!
    let terms = 18;
    let mut acc = DdMatrix::identity(n);
    for k in (1..=terms).rev() {
        let mut next = scaled.mul(&acc);
        for v in next.data.iter_mut() {
            *v = dd_div(*v, TwoFloat::from(k as f64));
        }
        for i in 0..n {
            let v = next.at(i, i) + TwoFloat::from(1.0);
            next.set(i, i, v);
        }
        acc = next;
    }
    for _ in 0..squarings {
        acc = acc.mul(&acc);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn division_has_full_precision() {
        let q = dd_div(TwoFloat::from(1.0), TwoFloat::from(3.0));
        let resid = TwoFloat::from(1.0) - q * TwoFloat::from(3.0);
        assert!(f64::from(resid).abs() < 1e-31, "residual {:e}", f64::from(resid));
    }

    #[test]
    fn exp_matches_closed_form_rotation() {
        // exp of a rotation generator [[0,-w],[w,0]] * t
        let w = 0.5f64;
        let t = 2.3f64;
        let a = DdMatrix::from_f64(2, 2, &[0.0, -w * t, w * t, 0.0]);
        let e = dd_exp(&a);
        let c = (w * t).cos();
        let s = (w * t).sin();
        let got = e.to_f64();
        assert_relative_eq!(got[0], c, epsilon = 1e-15);
        assert_relative_eq!(got[1], -s, epsilon = 1e-15);
        assert_relative_eq!(got[2], s, epsilon = 1e-15);
        assert_relative_eq!(got[3], c, epsilon = 1e-15);
    }

    #[test]
    fn lu_solve_recovers_known_solution() {
        let a = DdMatrix::from_f64(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let x_true = DdMatrix::from_f64(3, 1, &[1.0, -2.0, 3.0]);
        let b = a.mul(&x_true);
        let x = lu_solve(&a, &b).unwrap();
        for i in 0..3 {
            assert_relative_eq!(f64::from(x.at(i, 0)), f64::from(x_true.at(i, 0)), epsilon = 1e-14);
        }
    }

    #[test]
    fn lu_solve_survives_graded_scales() {
        // Diagonal scales spanning 1e20 would annihilate f64 accumulation;
        // double-double keeps ~1e-12 of headroom.
        let a = DdMatrix::from_f64(
            2,
            2,
            &[1e20, 1.0, //
              1.0, 1.0],
        );
        let x_true = DdMatrix::from_f64(2, 1, &[3.0, -5.0]);
        let b = a.mul(&x_true);
        let x = lu_solve(&a, &b).unwrap();
        assert_relative_eq!(f64::from(x.at(0, 0)), 3.0, max_relative = 1e-10);
        assert_relative_eq!(f64::from(x.at(1, 0)), -5.0, max_relative = 1e-10);
    }
}
