//! The robust loss `𝓛(X) = ‖y − A(X)‖₁` and its subgradient.
//!
//! The `1/p` factor lives inside each measurement functional, so the loss
//! is a plain sum of absolute residuals. The subgradient uses the selection
//! `sign(0) = 0`, which makes an exact fit a fixed point.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sensing::{GaussianEnsemble, Measurements};

#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub ensemble: &'a GaussianEnsemble,
    pub meas: &'a Measurements,
}

impl<'a> LossContext<'a> {
    pub fn new(ensemble: &'a GaussianEnsemble, meas: &'a Measurements) -> Result<Self> {
        if ensemble.p() != meas.len() {
            return Err(Error::shape(
                format!("{} measurements", ensemble.p()),
                format!("{} measurements", meas.len()),
            ));
        }
        Ok(LossContext { ensemble, meas })
    }

    pub fn p(&self) -> usize {
        self.ensemble.p()
    }
}

/// Loss and residual signs `sign(A(X) − y)` from a precomputed `A(X)`.
pub fn loss_and_signs(ax: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let signs = ax
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = a - b;
            loss += r.abs();
            sign(r)
        })
        .collect();
    (loss, signs)
}

#[inline]
fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn l1_loss(ctx: &LossContext<'_>, x: &Matrix) -> Result<f64> {
    let ax = ctx.ensemble.forward(x)?;
    Ok(ax.iter().zip(&ctx.meas.y).map(|(a, b)| (b - a).abs()).sum())
}

/// `A*(sign(A(X) − y))`, an element of `∂𝓛(X)`.
pub fn subgradient(ctx: &LossContext<'_>, x: &Matrix) -> Result<Matrix> {
    let ax = ctx.ensemble.forward(x)?;
    let (_, signs) = loss_and_signs(&ax, &ctx.meas.y);
    ctx.ensemble.adjoint(&signs)
}

/// `𝓛(X⋆) = ‖s‖₁`, known only for planted corruption.
pub fn optimal_value(ctx: &LossContext<'_>) -> Result<f64> {
    if !ctx.meas.planted {
        return Err(Error::Unavailable(
            "optimal loss is unknown for blind observations; use a geometric step schedule".into(),
        ));
    }
    Ok(ctx.meas.s.iter().map(|v| v.abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::generate_ground_truth;
    use crate::rng::{stream, Domain};
    use crate::sensing::{corrupt, make_gaussian_ensemble, StorageMode};
    use rand::Rng as _;

    fn scalar_problem(a: f64, y: f64) -> (GaussianEnsemble, Measurements) {
        let ens = GaussianEnsemble::from_matrices(&[Matrix::from_element(1, 1, a)]).unwrap();
        (ens, Measurements::clean(vec![y]))
    }

    #[test]
    fn scalar_hand_values() {
        let (ens, meas) = scalar_problem(1.0, 2.0);
        let ctx = LossContext::new(&ens, &meas).unwrap();
        assert_eq!(
            l1_loss(&ctx, &Matrix::from_element(1, 1, 3.0)).unwrap(),
            1.0
        );

        let (ens, meas) = scalar_problem(1.0, 0.0);
        let ctx = LossContext::new(&ens, &meas).unwrap();
        assert_eq!(
            subgradient(&ctx, &Matrix::from_element(1, 1, 2.0)).unwrap()[(0, 0)],
            1.0
        );
        assert_eq!(
            subgradient(&ctx, &Matrix::zeros(1, 1)).unwrap()[(0, 0)],
            0.0
        );
    }

    #[test]
    fn optimal_value_cases() {
        let ens = GaussianEnsemble::from_matrices(&vec![Matrix::identity(1, 1); 4]).unwrap();
        let meas = Measurements {
            y: vec![0.0, 3.0, -4.0, 0.0],
            s: vec![0.0, 3.0, -4.0, 0.0],
            support: vec![1, 2],
            outlier_fraction: 0.5,
            planted: true,
        };
        let ctx = LossContext::new(&ens, &meas).unwrap();
        assert_eq!(optimal_value(&ctx).unwrap(), 7.0);

        let clean = Measurements::clean(vec![0.0; 4]);
        assert_eq!(
            optimal_value(&LossContext::new(&ens, &clean).unwrap()).unwrap(),
            0.0
        );

        let blind = Measurements::blind(vec![0.0; 4]);
        assert!(matches!(
            optimal_value(&LossContext::new(&ens, &blind).unwrap()),
            Err(Error::Unavailable(_))
        ));
        assert!(LossContext::new(&ens, &Measurements::clean(vec![0.0; 3])).is_err());
    }

    struct Planted {
        ens: GaussianEnsemble,
        x_star: Matrix,
        clean: Measurements,
        dirty: Measurements,
    }

    fn planted() -> Planted {
        let gt = generate_ground_truth(12, 9, 2, 4, 3.0, 1, true).unwrap();
        let ens = make_gaussian_ensemble(12, 9, 300, 1, StorageMode::Dense).unwrap();
        let x_star = gt.materialize();
        let y = ens.forward(&x_star).unwrap();
        let dirty = corrupt(&y, 0.2, 10.0, 3).unwrap();
        Planted {
            ens,
            x_star,
            clean: Measurements::clean(y),
            dirty,
        }
    }

    #[test]
    fn ground_truth_losses() {
        let pl = planted();
        let clean = LossContext::new(&pl.ens, &pl.clean).unwrap();
        assert_eq!(l1_loss(&clean, &pl.x_star).unwrap(), 0.0);
        assert_eq!(
            subgradient(&clean, &pl.x_star).unwrap(),
            Matrix::zeros(12, 9)
        );

        let dirty = LossContext::new(&pl.ens, &pl.dirty).unwrap();
        let opt = optimal_value(&dirty).unwrap();
        let direct = l1_loss(&dirty, &pl.x_star).unwrap();
        assert!((opt - direct).abs() <= 1e-12 * (1.0 + opt));
    }

    #[test]
    fn subgradient_inequality_and_convexity() {
        let pl = planted();
        let ctx = LossContext::new(&pl.ens, &pl.dirty).unwrap();
        let mut rng = stream(5, Domain::TheoryCheck, 0);
        for _ in 0..50 {
            let x = &pl.x_star + linalg::gaussian(&mut rng, 12, 9) * 0.3;
            let z = &pl.x_star + linalg::gaussian(&mut rng, 12, 9) * 0.3;
            let lx = l1_loss(&ctx, &x).unwrap();
            let lz = l1_loss(&ctx, &z).unwrap();
            let g = subgradient(&ctx, &x).unwrap();
            assert!(lz >= lx + g.dot(&(&z - &x)) - 1e-10);

            let alpha: f64 = rng.gen();
            let mix = &x * alpha + &z * (1.0 - alpha);
            assert!(l1_loss(&ctx, &mix).unwrap() <= alpha * lx + (1.0 - alpha) * lz + 1e-10);
        }
    }
}
