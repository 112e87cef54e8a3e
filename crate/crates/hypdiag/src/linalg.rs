//! Dense linear-algebra helpers: characteristic polynomial and adjugate
//! expansion, SVD-based numerical rank and pseudo-inverse.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff for numerical rank decisions.
pub const RANK_EPS: f64 = 1e-10;

/// Characteristic polynomial and adjugate expansion of a square matrix by
/// the Faddeev-LeVerrier recursion.
///
/// Returns `(mu, f_adj)` with `det(sI - A) = sum_i mu[i] s^i`
/// (`mu[n] = 1`) and `adj(sI - A) = sum_i f_adj[i] s^i` for
/// `i = 0..n-1`.
pub fn char_poly_and_adjugate(a: &DMatrix<f64>) -> (Vec<f64>, Vec<DMatrix<f64>>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "square matrix required");
    let mut mu = vec![0.0; n + 1];
    mu[n] = 1.0;
    let mut f_adj = vec![DMatrix::zeros(n, n); n];
    if n == 0 {
        return (mu, f_adj);
    }
    let mut current = DMatrix::identity(n, n);
    f_adj[n - 1] = current.clone();
    for k in 1..=n {
        let am = a * &current;
        let c = -am.trace() / k as f64;
        mu[n - k] = c;
        if k < n {
            current = &am + DMatrix::from_diagonal_element(n, n, c);
            f_adj[n - 1 - k] = current.clone();
        }
    }
    (mu, f_adj)
}

/// Max-norm defect of the polynomial identity
/// `adj(sI - A) (sI - A) = det(sI - A) I` at `n + 1` integer sample points,
/// relative to the determinant scale.
pub fn adjugate_identity_defect(a: &DMatrix<f64>, mu: &[f64], f_adj: &[DMatrix<f64>]) -> f64 {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut worst = 0.0f64;
    for k in 0..=n {
        let s = k as f64;
        let mut adj = DMatrix::zeros(n, n);
        let mut p = 1.0;
        for i in 0..n {
            adj += &f_adj[i] * p;
            p *= s;
        }
        let mut det = 0.0;
        let mut p = 1.0;
        for &m in mu.iter() {
            det += m * p;
            p *= s;
        }
        let lhs = adj * (&eye * s - a);
        let defect = (&lhs - &eye * det).norm();
        let scale = det.abs().max(lhs.norm()).max(1.0);
        worst = worst.max(defect / scale);
    }
    worst
}

/// Numerical rank with the crate-wide relative singular-value cutoff.
pub fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.iter().fold(0.0f64, |a, b| a.max(*b));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_EPS * smax).count()
}

/// Moore-Penrose pseudo-inverse with the crate-wide cutoff.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, b| a.max(*b));
    svd.pseudo_inverse(RANK_EPS * smax.max(f64::MIN_POSITIVE))
        .expect("svd computed with u and v_t")
}

/// Kalman controllability test for the pair (A, B). Columns of the
/// controllability matrix are normalized before the rank decision so that
/// the growth of `A^k B` does not drown small reachable directions.
pub fn is_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut block = b.clone();
    let mut ctrb = DMatrix::zeros(n, n * b.ncols());
    for k in 0..n {
        ctrb.view_mut((0, k * b.ncols()), (n, b.ncols())).copy_from(&block);
        block = a * &block;
    }
    for mut col in ctrb.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    rank(&ctrb) == n
}

/// Smallest and largest eigenvalues of a symmetric matrix via the symmetric
/// eigendecomposition.
pub fn symmetric_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in eig.eigenvalues.iter() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    (lo, hi)
}

/// Block-diagonal stack of two matrices.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

/// Kronecker product A (x) B.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let v = a[(i, j)];
            if v != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * v));
            }
        }
    }
    out
}

/// Propagate an exosystem state exactly over a uniform step.
pub fn step_propagator(s: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    (s * dt).exp()
}

pub fn dvector_inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn nilpotent_jordan_block_expansion() {
        // A = [[0,1],[0,0]]: det(sI - A) = s^2, adj(sI - A) = [[s,1],[0,s]].
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let (mu, f_adj) = char_poly_and_adjugate(&a);
        assert_eq!(mu, vec![0.0, 0.0, 1.0]);
        assert_relative_eq!((f_adj[0].clone() - a.clone()).norm(), 0.0);
        assert_relative_eq!((f_adj[1].clone() - DMatrix::identity(2, 2)).norm(), 0.0);
    }

    #[test]
    fn scalar_zero_matrix() {
        let a = DMatrix::from_element(1, 1, 0.0);
        let (mu, f_adj) = char_poly_and_adjugate(&a);
        assert_eq!(mu, vec![0.0, 1.0]);
        assert_eq!(f_adj[0][(0, 0)], 1.0);
    }

    #[test]
    fn random_identity_defect_is_tiny() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let (mu, f_adj) = char_poly_and_adjugate(&a);
            let defect = adjugate_identity_defect(&a, &mu, &f_adj);
            assert!(defect < 1e-10, "defect {defect}");
        }
    }

    #[test]
    fn rank_and_pinv() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(rank(&m), 1);
        let p = pseudo_inverse(&m);
        let proj = &m * &p * &m;
        assert_relative_eq!((proj - m).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn companion_with_bottom_input_is_controllable() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, -2.0, -3.0]);
        let b = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
        assert!(is_controllable(&a, &b));
        let b_bad = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 0.0]);
        assert!(!is_controllable(&a, &b_bad));
    }
}
