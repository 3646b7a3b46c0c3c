//! Newton maximization of smooth objectives and a central-difference oracle.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("objective or gradient is not finite at the starting point")]
    NonFiniteStart,
    #[error("objective is not finite: {0}")]
    NonFinite(String),
    #[error("Hessian is singular after ridge regularization")]
    Singular,
    #[error("coordinate {index} reached {value}, beyond the divergence bound")]
    Diverged { index: usize, value: f64 },
    #[error("invalid solver argument: {0}")]
    InvalidArgument(String),
}

/// Value, gradient and Hessian of an objective at one point.
#[derive(Clone, Debug)]
pub struct ObjectiveEvaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl ObjectiveEvaluation {
    fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.gradient.iter().all(|g| g.is_finite())
            && self.hessian.iter().all(|h| h.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverResult {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
    /// Non-fatal notes attached by callers (e.g. unobserved categories).
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct NewtonOptions {
    /// Stop when the gradient ∞-norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Coordinates whose magnitude must stay below the bound; exceeding it
    /// after an accepted step aborts with [`OptimError::Diverged`].
    pub divergence_guard: Option<(Vec<usize>, f64)>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            max_halvings: 30,
            divergence_guard: None,
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `(-H) d = g`; falls back to a ridge and then to LU for indefinite
/// Hessians. A non-ascent direction is replaced by the gradient.
fn ascent_direction(eval: &ObjectiveEvaluation) -> Result<DVector<f64>, OptimError> {
    let neg_h = -&eval.hessian;
    let g = &eval.gradient;
    let direction = if let Some(ch) = neg_h.clone().cholesky() {
        ch.solve(g)
    } else {
        let mut ridged = neg_h.clone();
        for i in 0..ridged.nrows() {
            ridged[(i, i)] += 1e-8 * (1.0 + neg_h[(i, i)].abs());
        }
        match ridged.clone().cholesky() {
            Some(ch) => ch.solve(g),
            None => ridged.lu().solve(g).ok_or(OptimError::Singular)?,
        }
    };
    if !direction.iter().all(|d| d.is_finite()) {
        return Err(OptimError::Singular);
    }
    if direction.dot(g) > 0.0 {
        Ok(direction)
    } else {
        Ok(g.clone())
    }
}

/// A guarded coordinate still taking order-one Newton steps at a vanishing
/// gradient is heading to infinity rather than converging.
fn guarded_step_is_large(d: &DVector<f64>, opts: &NewtonOptions) -> bool {
    match &opts.divergence_guard {
        Some((indices, _)) => indices.iter().any(|&i| d[i].abs() > GUARD_STEP),
        None => false,
    }
}

const GUARD_STEP: f64 = 1e-2;

/// Maximizes `objective` by Newton steps with step halving.
///
/// A trial step is accepted when the objective does not decrease, or when
/// it changes by rounding only and the gradient shrinks; a non-finite or
/// failing evaluation counts as a decrease.
pub fn newton_maximize<F, E>(
    mut objective: F,
    init: &[f64],
    opts: &NewtonOptions,
) -> Result<SolverResult, E>
where
    F: FnMut(&[f64]) -> Result<ObjectiveEvaluation, E>,
    E: From<OptimError>,
{
    if !(opts.tol > 0.0) {
        return Err(OptimError::InvalidArgument(format!("tol must be positive, got {}", opts.tol)).into());
    }
    let mut x = init.to_vec();
    let mut eval = objective(&x)?;
    if !eval.is_finite() {
        return Err(OptimError::NonFiniteStart.into());
    }
    let mut iterations = 0;
    let mut gnorm = inf_norm(&eval.gradient);
    let mut escaping = false;
    while iterations < opts.max_iter {
        let d = ascent_direction(&eval)?;
        escaping = gnorm <= opts.tol && guarded_step_is_large(&d, opts);
        if gnorm <= opts.tol && !escaping {
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
            if let Ok(e) = objective(&trial) {
                let flat = (e.value - eval.value).abs() <= 8.0 * f64::EPSILON * (1.0 + eval.value.abs())
                    && inf_norm(&e.gradient) < gnorm;
                if e.is_finite() && (e.value >= eval.value || flat) {
                    accepted = Some((trial, e));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, e)) = accepted else {
            break;
        };
        x = trial;
        eval = e;
        iterations += 1;
        gnorm = inf_norm(&eval.gradient);
        if let Some((indices, bound)) = &opts.divergence_guard {
            if let Some(&i) = indices.iter().find(|&&i| x[i].abs() > *bound) {
                return Err(OptimError::Diverged {
                    index: i,
                    value: x[i],
                }
                .into());
            }
        }
    }
    if escaping {
        if let Some((indices, _)) = &opts.divergence_guard {
            let i = indices
                .iter()
                .copied()
                .max_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()))
                .expect("guard has indices");
            return Err(OptimError::Diverged { index: i, value: x[i] }.into());
        }
    }
    Ok(SolverResult {
        argmax: x,
        value: eval.value,
        iterations,
        converged: gnorm <= opts.tol,
        final_gradient_norm: gnorm,
        warnings: Vec::new(),
    })
}

/// Central-difference gradient `(f(x + h e_k) - f(x - h e_k)) / 2h`.
pub fn finite_diff_gradient<F>(mut f: F, point: &[f64], h: f64) -> Result<Vec<f64>, OptimError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(OptimError::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        x[k] = point[k] + h;
        let up = f(&x);
        x[k] = point[k] - h;
        let down = f(&x);
        x[k] = point[k];
        if !(up.is_finite() && down.is_finite()) {
            return Err(OptimError::NonFinite(format!("coordinate {k}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector-valued function (e.g. a gradient,
/// giving a Hessian oracle). Row `i` holds derivatives of output `i`.
pub fn finite_diff_jacobian<F>(mut f: F, point: &[f64], h: f64) -> Result<DMatrix<f64>, OptimError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if !(h > 0.0) {
        return Err(OptimError::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let n = point.len();
    let mut x = point.to_vec();
    let mut jac: Option<DMatrix<f64>> = None;
    for k in 0..n {
        x[k] = point[k] + h;
        let up = f(&x);
        x[k] = point[k] - h;
        let down = f(&x);
        x[k] = point[k];
        let m = jac.get_or_insert_with(|| DMatrix::zeros(up.len(), n));
        for i in 0..up.len() {
            let v = (up[i] - down[i]) / (2.0 * h);
            if !v.is_finite() {
                return Err(OptimError::NonFinite(format!("entry ({i}, {k})")));
            }
            m[(i, k)] = v;
        }
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quadratic(center: Vec<f64>, scales: Vec<f64>) -> impl FnMut(&[f64]) -> Result<ObjectiveEvaluation, OptimError> {
        move |x: &[f64]| {
            let n = x.len();
            let mut value = 0.0;
            let mut g = DVector::zeros(n);
            let mut h = DMatrix::zeros(n, n);
            for i in 0..n {
                let r = x[i] - center[i];
                value -= scales[i] * r * r;
                g[i] = -2.0 * scales[i] * r;
                h[(i, i)] = -2.0 * scales[i];
            }
            Ok(ObjectiveEvaluation {
                value,
                gradient: g,
                hessian: h,
            })
        }
    }

    #[test]
    fn one_dimensional_quadratic() {
        let res = newton_maximize(quadratic(vec![3.0], vec![1.0]), &[0.0], &NewtonOptions::default()).unwrap();
        assert!(res.converged);
        assert!((res.argmax[0] - 3.0).abs() < 1e-12);
        assert!((1..=2).contains(&res.iterations));
    }

    #[test]
    fn five_dimensional_norm() {
        let res = newton_maximize(quadratic(vec![0.0; 5], vec![1.0; 5]), &[1.0; 5], &NewtonOptions::default()).unwrap();
        assert!(res.converged);
        assert!(res.argmax.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn non_finite_start_is_domain_error() {
        let f = |_: &[f64]| -> Result<ObjectiveEvaluation, OptimError> {
            Ok(ObjectiveEvaluation {
                value: f64::NAN,
                gradient: DVector::zeros(1),
                hessian: DMatrix::zeros(1, 1),
            })
        };
        assert_eq!(
            newton_maximize(f, &[0.0], &NewtonOptions::default()).unwrap_err(),
            OptimError::NonFiniteStart
        );
    }

    #[test]
    fn rank_deficient_concave_problem_is_handled_by_ridge() {
        // -(x0 + x1 - 1)^2 has a singular Hessian everywhere.
        let f = |x: &[f64]| -> Result<ObjectiveEvaluation, OptimError> {
            let r = x[0] + x[1] - 1.0;
            Ok(ObjectiveEvaluation {
                value: -r * r,
                gradient: DVector::from_element(2, -2.0 * r),
                hessian: DMatrix::from_element(2, 2, -2.0),
            })
        };
        let res = newton_maximize(f, &[0.0, 0.0], &NewtonOptions::default()).unwrap();
        assert!(res.converged);
        assert!((res.argmax[0] + res.argmax[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unusable_hessian_is_singular() {
        let eval = ObjectiveEvaluation {
            value: 0.0,
            gradient: DVector::from_element(2, 1.0),
            hessian: DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, -1.0]),
        };
        assert_eq!(ascent_direction(&eval).unwrap_err(), OptimError::Singular);
    }

    #[test]
    fn divergence_guard_fires() {
        // Logistic log-likelihood with perfectly separated data.
        let f = |x: &[f64]| -> Result<ObjectiveEvaluation, OptimError> {
            let b = x[0];
            let q = (-b).exp() / (1.0 + (-b).exp());
            let p = 1.0 / (1.0 + (-b).exp());
            Ok(ObjectiveEvaluation {
                value: -(-b).exp().ln_1p(),
                gradient: DVector::from_element(1, q),
                hessian: DMatrix::from_element(1, 1, -p * q),
            })
        };
        let opts = NewtonOptions {
            divergence_guard: Some((vec![0], 50.0)),
            ..NewtonOptions::default()
        };
        assert!(matches!(
            newton_maximize(f, &[0.0], &opts),
            Err(OptimError::Diverged { index: 0, .. })
        ));
    }

    #[test]
    fn finite_differences_of_square_and_constant() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[2.0], 1e-5).unwrap();
        assert!((g[0] - 4.0).abs() < 1e-8);
        let z = finite_diff_gradient(|_| 7.0, &[1.0, -3.0, 0.5], 1e-5).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(finite_diff_gradient(|_| f64::INFINITY, &[1.0], 1e-5).is_err());
        assert!(finite_diff_gradient(|x| x[0], &[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn concave_quadratics_converge_in_two_steps(
            center in proptest::collection::vec(-10.0f64..10.0, 1..6),
            scale in 0.1f64..10.0,
        ) {
            let n = center.len();
            let scales: Vec<f64> = (0..n).map(|i| scale * (1.0 + i as f64)).collect();
            let res = newton_maximize(quadratic(center.clone(), scales), &vec![0.0; n], &NewtonOptions::default()).unwrap();
            prop_assert!(res.converged);
            prop_assert!(res.iterations <= 2);
            for (a, c) in res.argmax.iter().zip(&center) {
                prop_assert!((a - c).abs() < 1e-8);
            }
        }

        #[test]
        fn solver_is_deterministic(c in -5.0f64..5.0) {
            let a = newton_maximize(quadratic(vec![c, -c], vec![1.0, 2.0]), &[0.3, 0.1], &NewtonOptions::default()).unwrap();
            let b = newton_maximize(quadratic(vec![c, -c], vec![1.0, 2.0]), &[0.3, 0.1], &NewtonOptions::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
