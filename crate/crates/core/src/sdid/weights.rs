use nalgebra::{DMatrix, DVector};

use super::simplex::{solve_simplex_qp, QpNonConvergence};
use super::{Result, SdidConfig, SdidError, SdidProblem};

/// Sample standard deviation of first differences of control outcomes over
/// the pre-period.
pub fn noise_level(problem: &SdidProblem) -> f64 {
    let y = &problem.outcomes;
    let diffs: Vec<f64> = problem
        .controls()
        .flat_map(|i| (1..problem.t_pre).map(move |t| y[(i, t)] - y[(i, t - 1)]))
        .collect();
    if diffs.len() < 2 {
        return 0.0;
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let ss: f64 = diffs.iter().map(|d| (d - mean).powi(2)).sum();
    (ss / (diffs.len() - 1) as f64).sqrt()
}

/// Ridge level for the unit weights: `(N_treated · T_post)^{1/4} · σ̂`.
pub fn default_zeta(problem: &SdidProblem) -> f64 {
    (problem.t_post() as f64).powf(0.25) * noise_level(problem)
}

fn zeta(problem: &SdidProblem, config: &SdidConfig) -> f64 {
    config.zeta_override.unwrap_or_else(|| default_zeta(problem))
}

fn center_columns(a: &mut DMatrix<f64>) {
    for mut col in a.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
}

fn qp_failure(which: &'static str) -> impl Fn(QpNonConvergence) -> SdidError {
    move |e| SdidError::NonConvergence { which, iterations: e.iterations, residual: e.kkt_residual }
}

/// Scale making the largest centered entry 1, so the KKT tolerance does not
/// depend on the units of `Y`.
fn data_scale(a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let s = a.amax().max(b.amax());
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Control-unit weights and intercept from the pre-period fit to the treated
/// path.
pub fn solve_unit_weights(problem: &SdidProblem, config: &SdidConfig) -> Result<(Vec<f64>, f64)> {
    problem.validate()?;
    let controls: Vec<usize> = problem.controls().collect();
    let y = &problem.outcomes;
    let t_pre = problem.t_pre;
    let a = DMatrix::from_fn(t_pre, controls.len(), |t, j| y[(controls[j], t)]);
    let b = DVector::from_fn(t_pre, |t, _| y[(problem.treated, t)]);
    let omega = if controls.len() == 1 {
        vec![1.0]
    } else {
        let mut ac = a.clone();
        center_columns(&mut ac);
        let bc = b.add_scalar(-b.mean());
        let s = data_scale(&ac, &bc);
        let (ac, bc) = (ac / s, bc / s);
        let z = zeta(problem, config) / s;
        let n = controls.len();
        let q = ac.transpose() * &ac + DMatrix::identity(n, n) * (z * z * t_pre as f64);
        let c = ac.transpose() * bc;
        solve_simplex_qp(&q, &c, &config.solver).map_err(qp_failure("unit weights"))?.weights
    };
    let fitted = a * DVector::from_column_slice(&omega);
    let intercept = (b - fitted).mean();
    Ok((omega, intercept))
}

/// Pre-period weights matching each control's post-period mean.
pub fn solve_time_weights(problem: &SdidProblem, config: &SdidConfig) -> Result<Vec<f64>> {
    problem.validate()?;
    let controls: Vec<usize> = problem.controls().collect();
    let y = &problem.outcomes;
    let (t_pre, t_all) = (problem.t_pre, problem.n_weeks());
    let mut a = DMatrix::from_fn(controls.len(), t_pre, |i, t| y[(controls[i], t)]);
    let b = DVector::from_fn(controls.len(), |i, _| {
        (t_pre..t_all).map(|t| y[(controls[i], t)]).sum::<f64>() / (t_all - t_pre) as f64
    });
    // Centering over units absorbs the intercept.
    center_columns(&mut a);
    let bc = b.add_scalar(-b.mean());
    let s = data_scale(&a, &bc);
    let (a, bc) = (a / s, bc / s);
    let q = a.transpose() * &a;
    let c = a.transpose() * bc;
    Ok(solve_simplex_qp(&q, &c, &config.solver).map_err(qp_failure("time weights"))?.weights)
}

/// Unit-weight objective at `omega` with its optimal intercept.
pub fn unit_objective(problem: &SdidProblem, zeta: f64, omega: &[f64]) -> f64 {
    let y = &problem.outcomes;
    let controls: Vec<usize> = problem.controls().collect();
    let resid: Vec<f64> = (0..problem.t_pre)
        .map(|t| controls.iter().zip(omega).map(|(&i, w)| w * y[(i, t)]).sum::<f64>() - y[(problem.treated, t)])
        .collect();
    let m = resid.iter().sum::<f64>() / resid.len() as f64;
    resid.iter().map(|r| (r - m).powi(2)).sum::<f64>()
        + zeta * zeta * problem.t_pre as f64 * omega.iter().map(|w| w * w).sum::<f64>()
}

/// Time-weight objective at `lambda` with its optimal intercept.
pub fn time_objective(problem: &SdidProblem, lambda: &[f64]) -> f64 {
    let y = &problem.outcomes;
    let (t_pre, t_all) = (problem.t_pre, problem.n_weeks());
    let resid: Vec<f64> = problem
        .controls()
        .map(|i| {
            let post = (t_pre..t_all).map(|t| y[(i, t)]).sum::<f64>() / (t_all - t_pre) as f64;
            lambda.iter().enumerate().map(|(t, l)| l * y[(i, t)]).sum::<f64>() - post
        })
        .collect();
    let m = resid.iter().sum::<f64>() / resid.len() as f64;
    resid.iter().map(|r| (r - m).powi(2)).sum()
}
