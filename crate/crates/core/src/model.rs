//! Planted low-rank ground truths and factor pairs.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{stream, Domain};

/// A planted matrix `X⋆ = U⋆ diag(Σ⋆) V⋆ᵀ` padded to the overparameterized
/// width `d`: columns `r..d` of `U⋆`, `V⋆` are orthonormal completions that
/// carry zero singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub d: usize,
    pub u: Matrix,
    pub sigma: DVector<f64>,
    pub v: Matrix,
    pub kappa: f64,
}

/// The iterate `(L, R)`; `X = L Rᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub l: Matrix,
    pub r: Matrix,
}

impl FactorPair {
    pub fn new(l: Matrix, r: Matrix) -> Result<Self> {
        if l.ncols() != r.ncols() {
            return Err(Error::shape(
                format!("inner dimension {}", l.ncols()),
                format!("inner dimension {}", r.ncols()),
            ));
        }
        Ok(FactorPair { l, r })
    }

    pub fn zeros(m: usize, n: usize, d: usize) -> Self {
        FactorPair {
            l: Matrix::zeros(m, d),
            r: Matrix::zeros(n, d),
        }
    }

    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn product(&self) -> Matrix {
        &self.l * self.r.transpose()
    }

    pub fn is_finite(&self) -> bool {
        linalg::is_finite(&self.l) && linalg::is_finite(&self.r)
    }

    pub fn check_against(&self, gt: &GroundTruth) -> Result<()> {
        let expected = (gt.m, gt.n, gt.d);
        let got = (self.l.nrows(), self.r.nrows(), self.rank());
        if expected != got || self.r.ncols() != self.l.ncols() {
            return Err(Error::shape(
                format!("(m, n, d) = {expected:?}"),
                format!("{got:?}"),
            ));
        }
        Ok(())
    }
}

impl GroundTruth {
    /// Assembles a ground truth from explicit parts, checking orthonormality
    /// and the spectrum shape. `r` is inferred as the number of nonzero
    /// singular values.
    pub fn from_parts(u: Matrix, sigma: DVector<f64>, v: Matrix) -> Result<Self> {
        let d = sigma.len();
        if u.ncols() != d || v.ncols() != d {
            return Err(Error::shape(
                format!("{d} columns in U and V"),
                format!("{} and {}", u.ncols(), v.ncols()),
            ));
        }
        let (m, n) = (u.nrows(), v.nrows());
        if d == 0 || d > m.min(n) {
            return Err(Error::Dimension(format!(
                "d = {d} must be in 1..=min(m, n) = {}",
                m.min(n)
            )));
        }
        for (name, basis) in [("U", &u), ("V", &v)] {
            let gram = basis.transpose() * basis;
            if (gram - Matrix::identity(d, d)).amax() > 1e-10 {
                return Err(Error::InvalidParameter(format!(
                    "{name} columns are not orthonormal"
                )));
            }
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidParameter(
                "singular values must be finite and nonnegative".into(),
            ));
        }
        if sigma.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter(
                "singular values must be nonincreasing".into(),
            ));
        }
        let r = sigma.iter().filter(|s| **s > 0.0).count();
        let kappa = if r == 0 { 1.0 } else { sigma[0] / sigma[r - 1] };
        Ok(GroundTruth {
            m,
            n,
            r,
            d,
            u,
            sigma,
            v,
            kappa,
        })
    }

    /// `U⋆ diag(Σ⋆) V⋆ᵀ`.
    pub fn materialize(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }

    /// `L⋆ = U⋆ Σ⋆^{1/2}`, `R⋆ = V⋆ Σ⋆^{1/2}`.
    pub fn planted_factors(&self) -> FactorPair {
        let mut l = self.u.clone();
        let mut r = self.v.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            let root = s.sqrt();
            l.column_mut(j).scale_mut(root);
            r.column_mut(j).scale_mut(root);
        }
        FactorPair { l, r }
    }

    /// Smallest nonzero singular value.
    pub fn sigma_r(&self) -> f64 {
        if self.r == 0 {
            0.0
        } else {
            self.sigma[self.r - 1]
        }
    }

    pub fn op_norm(&self) -> f64 {
        self.sigma.iter().copied().fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.sigma.norm()
    }
}

/// Draws a planted rank-`r` matrix padded to width `d`.
///
/// Singular vectors come from the SVD of `G₁ G₂ᵀ` with standard Gaussian
/// `G₁ ∈ ℝ^{m×r}`, `G₂ ∈ ℝ^{n×r}`; the spectrum is then replaced by `r`
/// values linearly spaced from `κ·σ_r` down to `σ_r`, where `σ_r = 1` when
/// `normalize` is set and otherwise the `r`-th singular value of the draw.
/// The planted matrix does not depend on `d`.
pub fn generate_ground_truth(
    m: usize,
    n: usize,
    r: usize,
    d: usize,
    kappa: f64,
    seed: u64,
    normalize: bool,
) -> Result<GroundTruth> {
    if r == 0 || r > d || d > m.min(n) {
        return Err(Error::Dimension(format!(
            "need 1 <= r <= d <= min(m, n); got r = {r}, d = {d}, m = {m}, n = {n}"
        )));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "kappa = {kappa} must be a finite value >= 1"
        )));
    }
    if r == 1 && kappa != 1.0 {
        return Err(Error::InvalidParameter(
            "a rank-1 ground truth has kappa = 1".into(),
        ));
    }

    let mut rng = stream(seed, Domain::GroundTruth, 0);
    let g1 = linalg::gaussian(&mut rng, m, r);
    let g2 = linalg::gaussian(&mut rng, n, r);
    let draw = linalg::svd(&(&g1 * g2.transpose()));
    let u_r = draw.u.columns(0, r).into_owned();
    let v_r = draw.v.columns(0, r).into_owned();
    let base = if normalize {
        1.0
    } else {
        draw.singular_values[r - 1]
    };

    let mut pad_rng = stream(seed, Domain::GroundTruth, 1);
    let u = complete_basis(&u_r, d, &mut pad_rng);
    let v = complete_basis(&v_r, d, &mut pad_rng);

    let mut sigma = DVector::zeros(d);
    for i in 0..r {
        let frac = if r == 1 {
            0.0
        } else {
            i as f64 / (r - 1) as f64
        };
        sigma[i] = base * (kappa - (kappa - 1.0) * frac);
    }
    Ok(GroundTruth {
        m,
        n,
        r,
        d,
        u,
        sigma,
        v,
        kappa,
    })
}

/// Extends orthonormal columns to `d` columns with a random orthonormal
/// complement, leaving the given columns untouched.
fn complete_basis(basis: &Matrix, d: usize, rng: &mut crate::rng::Rng) -> Matrix {
    let (rows, k) = basis.shape();
    if k == d {
        return basis.clone();
    }
    let mut extra = linalg::gaussian(rng, rows, d - k);
    // two projection passes keep the completion orthogonal to working precision
    for _ in 0..2 {
        extra -= basis * (basis.transpose() * &extra);
    }
    let mut q = linalg::orthonormal_columns(&extra);
    q -= basis * (basis.transpose() * &q);
    let q = linalg::orthonormal_columns(&q);
    let mut out = Matrix::zeros(rows, d);
    out.columns_mut(0, k).copy_from(basis);
    out.columns_mut(k, d - k).copy_from(&q);
    out
}

/// Best rank-`d` factorization `L = U_d Σ_d^{1/2}`, `R = V_d Σ_d^{1/2}`.
pub fn truncated_svd_factors(x: &Matrix, d: usize) -> Result<FactorPair> {
    let (m, n) = x.shape();
    if d == 0 || d > m.min(n) {
        return Err(Error::Dimension(format!(
            "d = {d} must be in 1..=min(m, n) = {}",
            m.min(n)
        )));
    }
    let s = linalg::svd(x);
    let mut l = s.u.columns(0, d).into_owned();
    let mut r = s.v.columns(0, d).into_owned();
    for j in 0..d {
        let root = s.singular_values[j].sqrt();
        l.column_mut(j).scale_mut(root);
        r.column_mut(j).scale_mut(root);
    }
    Ok(FactorPair { l, r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_spectrum_fig2_shape() {
        let gt = generate_ground_truth(100, 100, 5, 10, 20.0, 3, true).unwrap();
        let expected = [20.0, 15.25, 10.5, 5.75, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for (s, e) in gt.sigma.iter().zip(expected) {
            assert_relative_eq!(*s, e, epsilon = 1e-14);
        }
        assert_eq!(gt.r, 5);
        assert_eq!(gt.sigma_r(), 1.0);
    }

    #[test]
    fn flat_spectrum_when_kappa_is_one() {
        let gt = generate_ground_truth(4, 4, 2, 2, 1.0, 0, true).unwrap();
        assert_eq!(gt.sigma.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_ground_truth(20, 30, 3, 6, 10.0, 7, true).unwrap();
        let b = generate_ground_truth(20, 30, 3, 6, 10.0, 7, true).unwrap();
        assert_eq!(a, b);
        let c = generate_ground_truth(20, 30, 3, 6, 10.0, 8, true).unwrap();
        assert_ne!(a.u, c.u);
    }

    #[test]
    fn planted_matrix_independent_of_d() {
        let a = generate_ground_truth(30, 25, 3, 3, 5.0, 11, true).unwrap();
        let b = generate_ground_truth(30, 25, 3, 9, 5.0, 11, true).unwrap();
        assert_relative_eq!(a.materialize(), b.materialize(), epsilon = 1e-12);
    }

    #[test]
    fn unnormalized_keeps_draw_scale() {
        let gt = generate_ground_truth(40, 40, 4, 4, 3.0, 2, false).unwrap();
        // σ_r of a product of 40×4 Gaussians is far from 1
        assert!(gt.sigma_r() > 5.0);
        assert_relative_eq!(gt.sigma[0] / gt.sigma_r(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(
            generate_ground_truth(10, 10, 4, 3, 2.0, 0, true),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            generate_ground_truth(10, 8, 2, 9, 2.0, 0, true),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            generate_ground_truth(10, 10, 0, 3, 2.0, 0, true),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            generate_ground_truth(10, 10, 2, 3, 0.5, 0, true),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn orthonormal_bases_and_balance() {
        let gt = generate_ground_truth(50, 35, 4, 12, 50.0, 5, true).unwrap();
        let i = Matrix::identity(12, 12);
        assert!((gt.u.transpose() * &gt.u - &i).amax() < 1e-10);
        assert!((gt.v.transpose() * &gt.v - &i).amax() < 1e-10);
        let f = gt.planted_factors();
        let diag = Matrix::from_diagonal(&gt.sigma);
        assert!((f.l.transpose() * &f.l - &diag).amax() < 1e-10);
        assert!((f.r.transpose() * &f.r - &diag).amax() < 1e-10);
    }

    #[test]
    fn materialize_zero_and_identity() {
        let u = Matrix::identity(4, 2);
        let zero = GroundTruth::from_parts(u.clone(), DVector::zeros(2), u.clone()).unwrap();
        assert_eq!(zero.materialize(), Matrix::zeros(4, 4));

        let ones = GroundTruth::from_parts(u.clone(), DVector::from_element(2, 1.0), u).unwrap();
        let x = ones.materialize();
        let s = linalg::singular_values(&x);
        assert_relative_eq!(s[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(s[1], 1.0, epsilon = 1e-14);
        assert_relative_eq!(&x * &x, x, epsilon = 1e-14);
    }

    #[test]
    fn materialized_spectrum_matches() {
        let gt = generate_ground_truth(40, 30, 5, 8, 7.0, 19, true).unwrap();
        let s = linalg::singular_values(&gt.materialize());
        for i in 0..8 {
            assert!(
                (s[i] - gt.sigma[i]).abs() < 1e-10,
                "σ_{i}: {} vs {}",
                s[i],
                gt.sigma[i]
            );
        }
        assert!((linalg::op_norm(&gt.materialize()) - gt.sigma[0]).abs() < 1e-10);
    }

    #[test]
    fn truncated_factors_cases() {
        let zero = truncated_svd_factors(&Matrix::zeros(3, 4), 2).unwrap();
        assert_eq!(zero.l, Matrix::zeros(3, 2));
        assert_eq!(zero.r, Matrix::zeros(4, 2));

        let diag = Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let f = truncated_svd_factors(&diag, 1).unwrap();
        assert_relative_eq!(
            f.product(),
            Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]),
            epsilon = 1e-14
        );

        let gt = generate_ground_truth(20, 15, 3, 6, 4.0, 1, true).unwrap();
        let x = gt.materialize();
        let f = truncated_svd_factors(&x, 6).unwrap();
        assert!((f.product() - &x).norm() <= 1e-9 * x.norm());

        assert!(matches!(
            truncated_svd_factors(&x, 16),
            Err(Error::Dimension(_))
        ));
    }
}
