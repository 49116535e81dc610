//! Recovery metrics: relative error, the weighted factor distance with its
//! alignment search, the contraction-rate formula, and a numerical suite
//! for the auxiliary matrix inequalities the convergence analysis uses.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{generate_ground_truth, FactorPair, GroundTruth};
use crate::rng::{stream, Domain};

/// `‖L Rᵀ − X⋆‖_F / ‖X⋆‖_F`.
pub fn relative_error(f: &FactorPair, gt: &GroundTruth) -> Result<f64> {
    f.check_against(gt)?;
    let norm = gt.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::InvalidParameter(
            "relative error of a zero ground truth".into(),
        ));
    }
    Ok((f.product() - gt.materialize()).norm() / norm)
}

/// Best alignment found for the weighted factor distance.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub q: Matrix,
    /// Objective at `q`; an upper bound on the squared distance.
    pub value: f64,
    pub converged: bool,
    pub restarts_used: usize,
}

impl AlignmentResult {
    /// `sqrt(value)`, an upper bound on the distance.
    pub fn dist_estimate(&self) -> f64 {
        self.value.sqrt()
    }
}

/// Largest condition number accepted for an alignment iterate.
pub const MAX_ALIGNMENT_CONDITION: f64 = 1e12;
const ALIGNMENT_MAX_ITERS: usize = 2000;
const LBFGS_MEMORY: usize = 8;
const RESTART_SPREAD: f64 = 0.3;

struct Alignment<'a> {
    l: &'a Matrix,
    r: &'a Matrix,
    l_star: Matrix,
    r_star: Matrix,
    weights: DVector<f64>,
}

impl Alignment<'_> {
    /// Objective and gradient at `q`, or `None` when `q` is singular or too
    /// ill-conditioned to trust.
    fn eval(&self, q: &Matrix) -> Option<(f64, Matrix)> {
        let s = linalg::singular_values(q);
        let (smax, smin) = (s[0], s[s.len() - 1]);
        if !(smin > 0.0) || smax / smin > MAX_ALIGNMENT_CONDITION {
            return None;
        }
        let inv_t = q.clone().try_inverse()?.transpose();
        let mut el = self.l * q - &self.l_star;
        let mut er = self.r * &inv_t - &self.r_star;
        let mut value = 0.0;
        for (j, w) in self.weights.iter().enumerate() {
            value += w * (el.column(j).norm_squared() + er.column(j).norm_squared());
            el.column_mut(j).scale_mut(2.0 * w);
            er.column_mut(j).scale_mut(2.0 * w);
        }
        let grad_l = self.l.transpose() * el;
        let grad_p = self.r.transpose() * er;
        let grad = grad_l - &inv_t * grad_p.transpose() * &inv_t;
        value.is_finite().then_some((value, grad))
    }

    /// Local L-BFGS descent with Armijo backtracking.
    fn descend(&self, start: Matrix, tol: f64) -> Option<(Matrix, f64, bool)> {
        let (mut f, mut g) = self.eval(&start)?;
        let mut q = start;
        let mut hist: Vec<(Matrix, Matrix, f64)> = Vec::new();
        for _ in 0..ALIGNMENT_MAX_ITERS {
            let gnorm = g.norm();
            if f == 0.0 || gnorm * q.norm().max(1.0) <= tol * f {
                return Some((q, f, true));
            }
            let mut dir = two_loop(&g, &hist);
            let mut slope = dir.dot(&g);
            if !(slope < 0.0) {
                hist.clear();
                dir = -&g;
                slope = -gnorm * gnorm;
            }
            let mut step = if hist.is_empty() {
                (q.norm().max(1.0) / gnorm).min(1.0)
            } else {
                1.0
            };
            let mut accepted = None;
            for _ in 0..60 {
                let trial = &q + &dir * step;
                if let Some((ft, gt)) = self.eval(&trial) {
                    if ft <= f + 1e-4 * step * slope {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((q_new, f_new, g_new)) = accepted else {
                let stationary = gnorm * q.norm().max(1.0) <= tol.sqrt() * f.max(f64::MIN_POSITIVE);
                return Some((q, f, stationary));
            };
            let s = &q_new - &q;
            let y = &g_new - &g;
            let sy = s.dot(&y);
            if sy > 1e-14 * s.norm() * y.norm() {
                if hist.len() == LBFGS_MEMORY {
                    hist.remove(0);
                }
                hist.push((s, y, 1.0 / sy));
            }
            let stalled = f - f_new <= 1e-15 * f;
            q = q_new;
            f = f_new;
            g = g_new;
            if stalled {
                let stationary =
                    g.norm() * q.norm().max(1.0) <= tol.sqrt() * f.max(f64::MIN_POSITIVE);
                return Some((q, f, stationary));
            }
        }
        Some((q, f, false))
    }
}

fn two_loop(g: &Matrix, hist: &[(Matrix, Matrix, f64)]) -> Matrix {
    let mut v = g.clone();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * s.dot(&v);
        v -= y * a;
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.last() {
        v *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&v);
        v += s * (a - b);
    }
    -v
}

/// Upper-bounds the weighted distance
/// `inf_Q ‖(LQ − L⋆)(Σ⋆+λI)^{1/2}‖²_F + ‖(RQ^{-ᵀ} − R⋆)(Σ⋆+λI)^{1/2}‖²_F`
/// by multi-start local descent over invertible `Q`.
///
/// The first start is the one-sided least-squares fit `Q₀ = L⁺L⋆`,
/// completed by the identity on the null space of `L`; further starts are
/// seeded perturbations `Q₀(I + 0.3·G/√d)`. The best value is returned, so
/// adding restarts never increases it.
pub fn dist_upper(
    f: &FactorPair,
    gt: &GroundTruth,
    lambda: f64,
    restarts: usize,
    tol: f64,
) -> Result<AlignmentResult> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} must be positive"
        )));
    }
    f.check_against(gt)?;
    let d = gt.d;
    let star = gt.planted_factors();
    let problem = Alignment {
        l: &f.l,
        r: &f.r,
        l_star: star.l,
        r_star: star.r,
        weights: gt.sigma.map(|s| s + lambda),
    };
    let identity = Matrix::identity(d, d);
    let q0 = least_squares_start(&f.l, &problem.l_star).unwrap_or_else(|| identity.clone());
    let base = if problem.eval(&q0).is_some() {
        q0
    } else {
        identity.clone()
    };

    let restarts = restarts.max(1);
    let mut best: Option<(Matrix, f64, bool)> = None;
    for k in 0..restarts {
        let start = if k == 0 {
            base.clone()
        } else {
            let mut rng = stream(0, Domain::Alignment, k as u64);
            let g = linalg::gaussian(&mut rng, d, d);
            &base * (&identity + g * (RESTART_SPREAD / (d as f64).sqrt()))
        };
        if let Some(found) = problem.descend(start, tol) {
            if best.as_ref().map_or(true, |b| found.1 < b.1) {
                best = Some(found);
            }
        }
    }
    Ok(match best {
        Some((q, value, converged)) => AlignmentResult {
            q,
            value,
            converged,
            restarts_used: restarts,
        },
        None => AlignmentResult {
            value: problem.eval(&base).map_or(f64::INFINITY, |(v, _)| v),
            q: base,
            converged: false,
            restarts_used: restarts,
        },
    })
}

fn least_squares_start(l: &Matrix, l_star: &Matrix) -> Option<Matrix> {
    let d = l.ncols();
    let pinv = l
        .clone()
        .pseudo_inverse(1e-12 * linalg::op_norm(l).max(f64::MIN_POSITIVE))
        .ok()?;
    let proj = &pinv * l;
    Some(&pinv * l_star + (Matrix::identity(d, d) - proj))
}

/// Inputs to the general contraction-rate formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateInputs {
    /// `χ = L/μ`.
    pub chi: f64,
    pub epsilon: f64,
    pub lambda: f64,
    /// `λ̄` with `λ = ‖X⋆‖_op / λ̄`.
    pub lambda_bar: f64,
}

impl RateInputs {
    /// Derives `λ̄ = ‖X⋆‖_op / λ` (infinite for `λ = 0`).
    pub fn from_op_norm(chi: f64, epsilon: f64, lambda: f64, op_norm: f64) -> Self {
        let lambda_bar = if lambda == 0.0 {
            f64::INFINITY
        } else {
            op_norm / lambda
        };
        RateInputs {
            chi,
            epsilon,
            lambda,
            lambda_bar,
        }
    }

    /// `√ε (√ε + √2 λ̄^{1/4})`, zero when `ε = 0`.
    pub fn perturbation(&self) -> f64 {
        if self.epsilon == 0.0 {
            return 0.0;
        }
        let root = self.epsilon.sqrt();
        root * (root + std::f64::consts::SQRT_2 * self.lambda_bar.powf(0.25))
    }
}

/// General contraction factor
///
/// `ρ = 1 − (1/2χ²)·a·( a·(2 − 1/(1−b)²) − 2√2·χ·(3ε/2 + 2b/(1−b)) )`
///
/// with `a = √((√2−1)/(1+2λ))` and `b = √ε(√ε + √2 λ̄^{1/4})`; requires
/// `b < 1`. For large `χ` at fixed `ε` the value can exceed one, in which
/// case no contraction is certified.
pub fn contraction_rate(inp: &RateInputs) -> Result<f64> {
    let RateInputs {
        chi,
        epsilon,
        lambda,
        lambda_bar,
    } = *inp;
    if !(chi >= 1.0) || !chi.is_finite() {
        return Err(Error::InvalidParameter(format!("chi = {chi} must be >= 1")));
    }
    if !(epsilon >= 0.0) || !(lambda >= 0.0) || !(lambda_bar > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need epsilon >= 0, lambda >= 0, lambda_bar > 0; got {epsilon}, {lambda}, {lambda_bar}"
        )));
    }
    let b = inp.perturbation();
    if !(b < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sqrt(eps)(sqrt(eps) + sqrt(2) lambda_bar^(1/4)) = {b} must be < 1"
        )));
    }
    let a = ((std::f64::consts::SQRT_2 - 1.0) / (1.0 + 2.0 * lambda)).sqrt();
    let descent = a * (2.0 - 1.0 / ((1.0 - b) * (1.0 - b)));
    let drift = 2.0 * chi * std::f64::consts::SQRT_2 * (1.5 * epsilon + 2.0 * b / (1.0 - b));
    Ok(1.0 - a * (descent - drift) / (2.0 * chi * chi))
}

/// The simplified rate `1 − 0.12/χ²`.
pub fn simplified_rate(chi: f64) -> f64 {
    1.0 - 0.12 / (chi * chi)
}

/// Parameter point of the simplified statement: `σ_r = 1`, `λ = 1/20`,
/// `λ̄ = 20‖X⋆‖_op` and `ε = 10⁻⁴ / (χ ‖X⋆‖_op^{1/2})`.
pub fn theorem_rate_inputs(chi: f64, op_norm: f64) -> RateInputs {
    RateInputs {
        chi,
        epsilon: 1e-4 / (chi * op_norm.sqrt()),
        lambda: 1.0 / 20.0,
        lambda_bar: 20.0 * op_norm,
    }
}

/// Outcome of one family of numerical checks.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub passes: usize,
    /// Smallest `bound − measured` seen; negative means a violation.
    pub worst_slack: f64,
}

impl CheckResult {
    fn new(name: &str) -> Self {
        CheckResult {
            name: name.into(),
            trials: 0,
            passes: 0,
            worst_slack: f64::INFINITY,
        }
    }

    fn record(&mut self, bound: f64, measured: f64, tol: f64) {
        let slack = bound - measured;
        self.trials += 1;
        if slack >= -tol {
            self.passes += 1;
        }
        self.worst_slack = self.worst_slack.min(slack);
    }

    pub fn all_passed(&self) -> bool {
        self.passes == self.trials
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TheoryReport {
    pub checks: Vec<CheckResult>,
}

impl TheoryReport {
    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let verdict = if c.all_passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{verdict} {:<28} {:>6}/{:<6} worst slack {:+.3e}",
                c.name, c.passes, c.trials, c.worst_slack
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,trials,passes,worst_slack\n");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{},{},{},{:.16e}",
                c.name, c.trials, c.passes, c.worst_slack
            );
        }
        out
    }
}

pub const CHECK_SQRT_PERTURBATION: &str = "sqrt_operator_perturbation";
pub const CHECK_DIST_UPPER_BOUND: &str = "dist_bounds_product_error";
pub const CHECK_GRAM_ROOT: &str = "gram_root_perturbation";
pub const CHECK_PRECONDITIONER_NORM: &str = "preconditioner_norm";
pub const CHECK_RATE_AT_THEOREM_POINT: &str = "rate_at_theorem_point";

/// Random symmetric positive definite matrix of size `n`.
fn random_spd(rng: &mut crate::rng::Rng, n: usize) -> Matrix {
    let g = linalg::gaussian(rng, n + 2, n);
    let shift: f64 = rng.gen_range(1e-3..1.0);
    g.transpose() * g / (n as f64) + Matrix::identity(n, n) * shift
}

/// Runs the numerical inequality suite with `samples` trials per family:
///
/// * `‖A^{1/2} − B^{1/2}‖_op ≤ ‖A − B‖_op^{1/2}` for SPD `A, B`, including
///   near-equal and equal pairs;
/// * `‖LRᵀ − X⋆‖_F ≤ (1 + ε/2)·√2·dist` for perturbed planted factors, with
///   `dist` replaced by the alignment upper bound and `ε = dist/λ`;
/// * the Gram-root bound `‖(Σ⋆+λI)^{-1/2}((LᵀL+λI)^{1/2} − (L⋆ᵀL⋆+λI)^{1/2})‖_op
///   ≤ √ε(√ε + √2 λ̄^{1/4})` and the preconditioner bound
///   `‖(RᵀR+λI)^{-1/2}(Σ⋆+λI)^{1/2}‖_op ≤ 1/(1 − √ε(√ε + √2 λ̄^{1/4}))`
///   for `‖L − L⋆‖_op, ‖R − R⋆‖_op ≤ √λ·ε` with `σ_r = 1`;
/// * `(1 − ρ)χ² ≥ 0.12` at the simplified statement's parameter point.
pub fn theory_checks(samples: usize, seed: u64) -> Result<TheoryReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be >= 1".into()));
    }
    let mut sqrt_check = CheckResult::new(CHECK_SQRT_PERTURBATION);
    let mut dist_check = CheckResult::new(CHECK_DIST_UPPER_BOUND);
    let mut gram_check = CheckResult::new(CHECK_GRAM_ROOT);
    let mut precond_check = CheckResult::new(CHECK_PRECONDITIONER_NORM);
    let mut rate_check = CheckResult::new(CHECK_RATE_AT_THEOREM_POINT);

    for t in 0..samples {
        let mut rng = stream(seed, Domain::TheoryCheck, t as u64);
        let size = rng.gen_range(1..=8);
        let a = random_spd(&mut rng, size);
        let b = match t % 3 {
            0 => random_spd(&mut rng, size),
            1 => {
                let e = linalg::gaussian(&mut rng, size, size) * 1e-3;
                &a + (&e * e.transpose())
            }
            _ => a.clone(),
        };
        let lhs = linalg::op_norm(&(linalg::spd_sqrt(&a) - linalg::spd_sqrt(&b)));
        let rhs = linalg::op_norm(&(&a - &b)).sqrt();
        sqrt_check.record(rhs, lhs, 1e-10 * (1.0 + rhs));
    }

    for t in 0..samples {
        let mut rng = stream(seed, Domain::TheoryCheck, (1 << 40) | t as u64);
        let r = rng.gen_range(1..=3);
        let d = rng.gen_range(r..=r + 3);
        let (m, n) = (rng.gen_range(d..=d + 6), rng.gen_range(d..=d + 6));
        let kappa = if r == 1 {
            1.0
        } else {
            rng.gen_range(1.0..10.0)
        };
        let gt = generate_ground_truth(m, n, r, d, kappa, rng.gen(), true)?;
        let lambda = rng.gen_range(0.05..2.0);
        let scale = rng.gen_range(1e-4..1e-1);
        let star = gt.planted_factors();
        let q = Matrix::identity(d, d) + linalg::gaussian(&mut rng, d, d) * (0.5 / d as f64);
        let Some(q_inv) = q.clone().try_inverse() else {
            continue;
        };
        let l = (&star.l + linalg::gaussian(&mut rng, m, d) * scale) * &q;
        let rr = (&star.r + linalg::gaussian(&mut rng, n, d) * scale) * q_inv.transpose();
        let f = FactorPair::new(l, rr)?;
        let align = dist_upper(&f, &gt, lambda, 1, 1e-10)?;
        let dist = align.dist_estimate();
        let eps = dist / lambda;
        let lhs = (f.product() - gt.materialize()).norm();
        let rhs = (1.0 + eps / 2.0) * std::f64::consts::SQRT_2 * dist;
        dist_check.record(rhs, lhs, 1e-10 * (1.0 + rhs));
    }

    for t in 0..samples {
        let mut rng = stream(seed, Domain::TheoryCheck, (2 << 40) | t as u64);
        let r = rng.gen_range(1..=3);
        let d = rng.gen_range(r..=r + 3);
        let (m, n) = (rng.gen_range(d..=d + 6), rng.gen_range(d..=d + 6));
        let kappa = if r == 1 {
            1.0
        } else {
            rng.gen_range(1.0..10.0)
        };
        let gt = generate_ground_truth(m, n, r, d, kappa, rng.gen(), true)?;
        let lambda_bar = rng.gen_range(5.0..40.0);
        let lambda = gt.op_norm() / lambda_bar;
        let eps = 10f64.powf(rng.gen_range(-5.0..-2.0));
        let radius = lambda.sqrt() * eps * rng.gen_range(0.1..1.0);
        let star = gt.planted_factors();
        let l = &star.l + scaled_to_op_norm(linalg::gaussian(&mut rng, m, d), radius);
        let rr = &star.r + scaled_to_op_norm(linalg::gaussian(&mut rng, n, d), radius);

        let ridge = Matrix::identity(d, d) * lambda;
        let weight_inv_sqrt = Matrix::from_diagonal(&gt.sigma.map(|s| 1.0 / (s + lambda).sqrt()));
        let weight_sqrt = Matrix::from_diagonal(&gt.sigma.map(|s| (s + lambda).sqrt()));
        let bound = RateInputs {
            chi: 1.0,
            epsilon: eps,
            lambda,
            lambda_bar,
        }
        .perturbation();

        for (factor, planted) in [(&l, &star.l), (&rr, &star.r)] {
            let delta = linalg::spd_sqrt(&(factor.transpose() * factor + &ridge))
                - linalg::spd_sqrt(&(planted.transpose() * planted + &ridge));
            let lhs = linalg::op_norm(&(&weight_inv_sqrt * delta));
            gram_check.record(bound, lhs, 1e-12);
        }
        if bound < 1.0 {
            for factor in [&rr, &l] {
                let pre = linalg::spd_inv_sqrt(&(factor.transpose() * factor + &ridge));
                let lhs = linalg::op_norm(&(pre * &weight_sqrt));
                precond_check.record(1.0 / (1.0 - bound), lhs, 1e-12);
            }
        }
    }

    let inputs = theorem_rate_inputs(1.0, 1.0);
    let rho = contraction_rate(&inputs)?;
    rate_check.record((1.0 - rho) * inputs.chi * inputs.chi, 0.12, 0.0);

    Ok(TheoryReport {
        checks: vec![
            sqrt_check,
            dist_check,
            gram_check,
            precond_check,
            rate_check,
        ],
    })
}

fn scaled_to_op_norm(x: Matrix, target: f64) -> Matrix {
    let norm = linalg::op_norm(&x);
    if norm == 0.0 {
        x
    } else {
        x * (target / norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_gt() -> GroundTruth {
        generate_ground_truth(9, 7, 2, 4, 3.0, 4, true).unwrap()
    }

    #[test]
    fn relative_error_cases() {
        let gt = small_gt();
        assert!(relative_error(&gt.planted_factors(), &gt).unwrap() <= 1e-14);
        assert!((relative_error(&FactorPair::zeros(9, 7, 4), &gt).unwrap() - 1.0).abs() <= 1e-15);
        let mut rng = stream(3, Domain::TheoryCheck, 0);
        let f = FactorPair::new(
            linalg::gaussian(&mut rng, 9, 4),
            linalg::gaussian(&mut rng, 7, 4),
        )
        .unwrap();
        let direct = (&f.l * f.r.transpose() - gt.materialize()).norm() / gt.materialize().norm();
        assert!((relative_error(&f, &gt).unwrap() - direct).abs() <= 1e-12 * direct);
        assert!(relative_error(&FactorPair::zeros(9, 7, 3), &gt).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let gt = small_gt();
        let mut rng = stream(7, Domain::TheoryCheck, 0);
        let star = gt.planted_factors();
        let l = &star.l + linalg::gaussian(&mut rng, 9, 4) * 0.1;
        let r = &star.r + linalg::gaussian(&mut rng, 7, 4) * 0.1;
        let problem = Alignment {
            l: &l,
            r: &r,
            l_star: star.l.clone(),
            r_star: star.r.clone(),
            weights: gt.sigma.map(|s| s + 0.5),
        };
        let q = Matrix::identity(4, 4) + linalg::gaussian(&mut rng, 4, 4) * 0.1;
        let (_, grad) = problem.eval(&q).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..4 {
                let mut qp = q.clone();
                qp[(i, j)] += h;
                let mut qm = q.clone();
                qm[(i, j)] -= h;
                let fd = (problem.eval(&qp).unwrap().0 - problem.eval(&qm).unwrap().0) / (2.0 * h);
                assert!(
                    (fd - grad[(i, j)]).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "({i},{j}) {fd} vs {}",
                    grad[(i, j)]
                );
            }
        }
    }

    #[test]
    fn planted_factors_have_zero_distance() {
        let gt = small_gt();
        let res = dist_upper(&gt.planted_factors(), &gt, 0.1, 1, 1e-10).unwrap();
        assert_eq!(res.value, 0.0);
        assert_relative_eq!(res.q, Matrix::identity(4, 4), epsilon = 1e-12);
    }

    #[test]
    fn diagonal_rescaling_is_absorbed() {
        let gt = small_gt();
        let star = gt.planted_factors();
        let f = FactorPair::new(&star.l * 3.0, &star.r / 3.0).unwrap();
        let res = dist_upper(&f, &gt, 0.1, 1, 1e-12).unwrap();
        assert!(res.value < 1e-20, "{}", res.value);
        // columns carrying signal are rescaled by exactly 1/c
        for j in 0..gt.r {
            assert_relative_eq!(res.q[(j, j)], 1.0 / 3.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn restarts_never_hurt() {
        let gt = small_gt();
        let mut rng = stream(11, Domain::TheoryCheck, 0);
        let star = gt.planted_factors();
        let f = FactorPair::new(
            &star.l + linalg::gaussian(&mut rng, 9, 4) * 0.5,
            &star.r + linalg::gaussian(&mut rng, 7, 4) * 0.5,
        )
        .unwrap();
        let mut last = f64::INFINITY;
        for restarts in 1..=4 {
            let v = dist_upper(&f, &gt, 0.2, restarts, 1e-10).unwrap().value;
            assert!(v <= last);
            last = v;
        }
        assert!(dist_upper(&f, &gt, 0.0, 1, 1e-10).is_err());
    }

    #[test]
    fn rate_closed_forms() {
        // ε = 0 leaves only the leading term
        for chi in [1.0, 2.0, 7.5] {
            let rho = contraction_rate(&RateInputs {
                chi,
                epsilon: 0.0,
                lambda: 0.0,
                lambda_bar: f64::INFINITY,
            })
            .unwrap();
            let expected = 1.0 - (std::f64::consts::SQRT_2 - 1.0) / (2.0 * chi * chi);
            assert!((rho - expected).abs() < 1e-15);
        }
        let at_point = theorem_rate_inputs(1.0, 1.0);
        assert_eq!(at_point.lambda_bar, 20.0);
        let rho = contraction_rate(&at_point).unwrap();
        assert!((1.0 - rho) >= 0.12);
        assert!((rho - simplified_rate(1.0)).abs() < 0.01);
    }

    #[test]
    fn rate_monotone_in_chi() {
        let mut prev = 0.0;
        for k in 0..=12 {
            let chi = 10f64.powf(k as f64 * 0.5);
            let rho = contraction_rate(&RateInputs {
                chi,
                epsilon: 0.0,
                lambda: 0.05,
                lambda_bar: 20.0,
            })
            .unwrap();
            assert!(rho > prev && rho < 1.0);
            prev = rho;
        }
        assert!(1.0 - prev < 1e-12);
    }

    #[test]
    fn rate_rejects_large_epsilon() {
        let inp = RateInputs {
            chi: 1.0,
            epsilon: 0.5,
            lambda: 0.05,
            lambda_bar: 20.0,
        };
        assert!(contraction_rate(&inp).is_err());
        let inp = RateInputs {
            chi: 0.5,
            epsilon: 0.0,
            lambda: 0.05,
            lambda_bar: 20.0,
        };
        assert!(contraction_rate(&inp).is_err());
    }

    #[test]
    fn small_theory_suite_passes() {
        let report = theory_checks(30, 1).unwrap();
        for c in &report.checks {
            assert!(c.all_passed(), "{c:?}");
        }
        assert!(report
            .to_csv()
            .starts_with("check,trials,passes,worst_slack\n"));
        assert_eq!(report.to_text().lines().count(), 5);
    }
}
