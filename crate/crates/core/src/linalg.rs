//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::rng::Rng;

pub type Matrix = DMatrix<f64>;

/// Thin SVD with singular values sorted in decreasing order.
pub struct SortedSvd {
    pub u: Matrix,
    pub singular_values: DVector<f64>,
    /// Right singular vectors as columns (not transposed).
    pub v: Matrix,
}

pub fn svd(x: &Matrix) -> SortedSvd {
    let k = x.nrows().min(x.ncols());
    if k == 0 {
        return SortedSvd {
            u: Matrix::zeros(x.nrows(), 0),
            singular_values: DVector::zeros(0),
            v: Matrix::zeros(x.ncols(), 0),
        };
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut out_u = Matrix::zeros(x.nrows(), k);
    let mut out_v = Matrix::zeros(x.ncols(), k);
    let mut out_s = DVector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        out_u.set_column(dst, &u.column(src));
        out_v.set_column(dst, &v_t.row(src).transpose());
        out_s[dst] = s[src];
    }
    SortedSvd {
        u: out_u,
        singular_values: out_s,
        v: out_v,
    }
}

pub fn singular_values(x: &Matrix) -> DVector<f64> {
    if x.nrows().min(x.ncols()) == 0 {
        return DVector::zeros(0);
    }
    let mut s: Vec<f64> = x.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(s)
}

/// Spectral norm.
pub fn op_norm(x: &Matrix) -> f64 {
    singular_values(x).iter().copied().fold(0.0, f64::max)
}

/// Eigendecomposition of the symmetric part of `a`, eigenvalues ascending.
pub fn sym_eigen(a: &Matrix) -> (DVector<f64>, Matrix) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut values = DVector::zeros(n);
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `V f(Λ) Vᵀ` for symmetric `a = V Λ Vᵀ`.
pub fn sym_apply(a: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let (values, vectors) = sym_eigen(a);
    let mut scaled = vectors.clone();
    for (j, &lambda) in values.iter().enumerate() {
        let fj = f(lambda);
        scaled.column_mut(j).scale_mut(fj);
    }
    scaled * vectors.transpose()
}

pub fn spd_sqrt(a: &Matrix) -> Matrix {
    sym_apply(a, |x| x.max(0.0).sqrt())
}

pub fn spd_inv_sqrt(a: &Matrix) -> Matrix {
    sym_apply(a, |x| 1.0 / x.sqrt())
}

/// Moore–Penrose style inverse of a PSD matrix: eigenvalues below
/// `cutoff * max_eigenvalue` are dropped, the rest mapped through `f`.
pub fn psd_pinv_apply(a: &Matrix, cutoff: f64, f: impl Fn(f64) -> f64) -> Matrix {
    let (values, _) = sym_eigen(a);
    let top = values.iter().copied().fold(0.0, f64::max);
    let floor = cutoff * top;
    sym_apply(a, |x| if top > 0.0 && x > floor { f(x) } else { 0.0 })
}

pub fn gaussian(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    // Row-major draw order, independent of nalgebra's storage layout.
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Orthonormal basis of the column span of `a` (Householder QR); `a` must
/// have full column rank for the result to span it.
pub fn orthonormal_columns(a: &Matrix) -> Matrix {
    a.clone().qr().q()
}

/// Copies a matrix into a row-major buffer.
pub fn to_row_major(x: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.nrows() {
        out.extend(x.row(i).iter());
    }
    out
}

pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, data)
}

pub fn is_finite(x: &Matrix) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use approx::assert_relative_eq;

    #[test]
    fn svd_sorted_and_reconstructs() {
        let mut rng = stream(1, Domain::TheoryCheck, 0);
        let x = gaussian(&mut rng, 7, 4);
        let s = svd(&x);
        for w in s.singular_values.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
        let rebuilt = &s.u * Matrix::from_diagonal(&s.singular_values) * s.v.transpose();
        assert_relative_eq!(rebuilt, x, epsilon = 1e-12);
    }

    #[test]
    fn inverse_square_root_of_spd() {
        let mut rng = stream(2, Domain::TheoryCheck, 0);
        let g = gaussian(&mut rng, 6, 4);
        let a = g.transpose() * &g + Matrix::identity(4, 4);
        let r = spd_inv_sqrt(&a);
        assert_relative_eq!(&r * &a * &r, Matrix::identity(4, 4), epsilon = 1e-11);
        let s = spd_sqrt(&a);
        assert_relative_eq!(&s * &s, a, epsilon = 1e-11);
    }

    #[test]
    fn pinv_drops_null_directions() {
        let a = Matrix::from_diagonal(&DVector::from_vec(vec![4.0, 1e-20, 1.0]));
        let p = psd_pinv_apply(&a, 1e-12, |x| 1.0 / x);
        assert_relative_eq!(
            p,
            Matrix::from_diagonal(&DVector::from_vec(vec![0.25, 0.0, 1.0])),
            epsilon = 1e-14
        );
    }

    #[test]
    fn row_major_round_trip() {
        let x = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(to_row_major(&x), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(from_row_major(2, 3, &to_row_major(&x)), x);
    }
}
