//! Empirical mixed-norm RIP and outlier-bound probes.
//!
//! The definitions quantify over every rank-`2d` matrix; these probes
//! sample Gaussian factor products instead, so the returned constants are
//! empirical (the lower bound is optimistic, the upper bound pessimistic
//! only in probability).

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{stream, Domain};
use crate::sensing::GaussianEnsemble;

/// `E|⟨A, X⟩| / ‖X‖_F` for a standard Gaussian `A`.
pub const GAUSSIAN_L1_RATIO: f64 = 0.797_884_560_802_865_4;

/// Trials sensed together in one batched forward pass.
const BATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RipEstimate {
    pub delta_minus: f64,
    pub delta_plus: f64,
    pub delta_zero: Option<f64>,
    pub trials: usize,
    /// Inner dimension of the sampled test matrices.
    pub rank_tested: usize,
    pub seed: u64,
}

/// Per-trial `ℓ1` mass of `A(X)/‖X‖_F` on the support and its complement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutlierSplit {
    pub trial: usize,
    pub support_l1: f64,
    pub complement_l1: f64,
}

impl OutlierSplit {
    /// `(‖A_{Sᶜ}(X)‖₁ − ‖A_S(X)‖₁)/‖X‖_F`.
    pub fn value(&self) -> f64 {
        self.complement_l1 - self.support_l1
    }
}

/// The `trial`-th test matrix `G₁G₂ᵀ`, with `G₁: m×two_d`, `G₂: n×two_d`.
pub fn test_matrix(m: usize, n: usize, two_d: usize, seed: u64, trial: usize) -> Matrix {
    let mut rng = stream(seed, Domain::RipTrial, trial as u64);
    let g1 = linalg::gaussian(&mut rng, m, two_d);
    let g2 = linalg::gaussian(&mut rng, n, two_d);
    g1 * g2.transpose()
}

fn check_probe(ens: &GaussianEnsemble, two_d: usize, trials: usize) -> Result<()> {
    if two_d == 0 || two_d > ens.m().min(ens.n()) {
        return Err(Error::Dimension(format!(
            "two_d = {two_d} must lie in 1..={}",
            ens.m().min(ens.n())
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    Ok(())
}

/// Applies `per_trial` to `(trial, A(X)/‖X‖_F)` for every trial, in
/// parallel over batches; results come back in trial order and do not
/// depend on the thread count.
fn probe<T: Send>(
    ens: &GaussianEnsemble,
    two_d: usize,
    trials: usize,
    seed: u64,
    per_trial: impl Fn(usize, &[f64]) -> T + Sync,
) -> Result<Vec<T>> {
    let starts: Vec<usize> = (0..trials).step_by(BATCH).collect();
    let chunks: Vec<Vec<T>> = starts
        .into_par_iter()
        .map(|start| {
            let end = (start + BATCH).min(trials);
            let xs: Vec<Matrix> = (start..end)
                .map(|t| test_matrix(ens.m(), ens.n(), two_d, seed, t))
                .collect();
            let refs: Vec<&Matrix> = xs.iter().collect();
            let outs = ens.forward_batch(&refs)?;
            Ok(xs
                .iter()
                .zip(outs)
                .enumerate()
                .map(|(k, (x, mut ax))| {
                    let norm = x.norm();
                    ax.iter_mut().for_each(|v| *v /= norm);
                    per_trial(start + k, &ax)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// `‖A(X)‖₁/‖X‖_F` for each trial.
pub fn rip_ratios(
    ens: &GaussianEnsemble,
    two_d: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_probe(ens, two_d, trials)?;
    probe(ens, two_d, trials, seed, |_, ax| {
        ax.iter().map(|v| v.abs()).sum()
    })
}

impl RipEstimate {
    /// Minimum and maximum of per-trial ratios.
    pub fn from_ratios(ratios: &[f64], two_d: usize, seed: u64) -> RipEstimate {
        RipEstimate {
            delta_minus: ratios.iter().copied().fold(f64::INFINITY, f64::min),
            delta_plus: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            delta_zero: None,
            trials: ratios.len(),
            rank_tested: two_d,
            seed,
        }
    }
}

/// Minimum and maximum of [`rip_ratios`].
pub fn estimate_mixed_rip(
    ens: &GaussianEnsemble,
    two_d: usize,
    trials: usize,
    seed: u64,
) -> Result<RipEstimate> {
    Ok(RipEstimate::from_ratios(
        &rip_ratios(ens, two_d, trials, seed)?,
        two_d,
        seed,
    ))
}

fn support_mask(p: usize, support: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; p];
    for &i in support {
        *mask.get_mut(i).ok_or_else(|| {
            Error::InvalidParameter(format!("support index {i} out of range for p = {p}"))
        })? = true;
    }
    Ok(mask)
}

/// Per-trial split of the normalized `ℓ1` mass across `support` (0-based).
pub fn outlier_splits(
    ens: &GaussianEnsemble,
    support: &[usize],
    two_d: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<OutlierSplit>> {
    check_probe(ens, two_d, trials)?;
    let mask = support_mask(ens.p(), support)?;
    probe(ens, two_d, trials, seed, |trial, ax| {
        let (mut inside, mut outside) = (0.0, 0.0);
        for (v, &hit) in ax.iter().zip(&mask) {
            if hit {
                inside += v.abs();
            } else {
                outside += v.abs();
            }
        }
        OutlierSplit {
            trial,
            support_l1: inside,
            complement_l1: outside,
        }
    })
}

/// `min_trials (‖A_{Sᶜ}(X)‖₁ − ‖A_S(X)‖₁)/‖X‖_F`; negative values mean the
/// support is too heavy for sharpness.
pub fn estimate_outlier_bound(
    ens: &GaussianEnsemble,
    support: &[usize],
    two_d: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let splits = outlier_splits(ens, support, two_d, trials, seed)?;
    Ok(splits
        .iter()
        .map(OutlierSplit::value)
        .fold(f64::INFINITY, f64::min))
}

/// Both probes on shared trials: the mixed-RIP pair from the full sums and
/// `δ⁰` from the split.
pub fn estimate_with_outliers(
    ens: &GaussianEnsemble,
    support: &[usize],
    two_d: usize,
    trials: usize,
    seed: u64,
) -> Result<(RipEstimate, Vec<OutlierSplit>)> {
    let splits = outlier_splits(ens, support, two_d, trials, seed)?;
    let ratios: Vec<f64> = splits
        .iter()
        .map(|s| s.support_l1 + s.complement_l1)
        .collect();
    let mut est = RipEstimate::from_ratios(&ratios, two_d, seed);
    est.delta_zero = Some(
        splits
            .iter()
            .map(OutlierSplit::value)
            .fold(f64::INFINITY, f64::min),
    );
    Ok((est, splits))
}

/// Constant `C` of the iteration prediction, the inverse of the
/// simplified rate exponent.
pub const PREDICTION_CONSTANT: f64 = 1.0 / 0.12;

/// Order-of-magnitude iteration count `⌈C (δ⁺/μ)² ln(1/ε)⌉`, `C = 1/0.12`.
pub fn predicted_iterations(delta_plus: f64, mu_like: f64, target_eps: f64) -> Result<u64> {
    if !(mu_like > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sharpness constant {mu_like} must be positive; prediction undefined"
        )));
    }
    if !(target_eps > 0.0 && target_eps < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target accuracy {target_eps} outside (0, 1)"
        )));
    }
    if !(delta_plus >= 0.0) || !delta_plus.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "delta_plus = {delta_plus} must be finite and >= 0"
        )));
    }
    let ratio = delta_plus / mu_like;
    Ok((PREDICTION_CONSTANT * ratio * ratio * (1.0 / target_eps).ln()).ceil() as u64)
}

/// `trial,ratio` rows.
pub fn ratios_csv(ratios: &[f64]) -> String {
    let mut out = String::from("trial,ratio\n");
    for (t, r) in ratios.iter().enumerate() {
        let _ = writeln!(out, "{t},{r:.16e}");
    }
    out
}

/// `trial,ratio,support_l1,complement_l1` rows.
pub fn splits_csv(splits: &[OutlierSplit]) -> String {
    let mut out = String::from("trial,ratio,support_l1,complement_l1\n");
    for s in splits {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e}",
            s.trial,
            s.support_l1 + s.complement_l1,
            s.support_l1,
            s.complement_l1
        );
    }
    out
}

/// Reads the first two columns of a probe CSV back as `(trial, ratio)`.
pub fn parse_ratios_csv(text: &str) -> Result<Vec<(usize, f64)>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Decode("empty probe CSV".into()))?;
    if !header.starts_with("trial,ratio") {
        return Err(Error::Decode(format!(
            "unexpected probe CSV header {header:?}"
        )));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(k, line)| {
            let mut fields = line.split(',');
            let bad = || Error::Decode(format!("probe CSV line {}: {line:?}", k + 2));
            let trial = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            let ratio = fields.next().and_then(|f| f.parse().ok()).ok_or_else(bad)?;
            Ok((trial, ratio))
        })
        .collect()
}
