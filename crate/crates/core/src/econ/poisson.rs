use nalgebra::DVector;

use super::design::{spd_inverse, spd_solve, Cell, Design};
use super::{delta_transform, did_columns, layout, sub_block, EconError, FitResult, Result, TreatSpec};
use crate::panel::{FlowPanel, Measure};

/// Newton/IRLS stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonControl {
    pub max_iter: usize,
    /// Converged once the max-norm of the score falls below this.
    pub score_tol: f64,
    /// ... or once the relative deviance change falls below this.
    pub deviance_tol: f64,
}

impl Default for PoissonControl {
    fn default() -> Self {
        PoissonControl { max_iter: 200, score_tol: 1e-8, deviance_tol: 1e-10 }
    }
}

pub(crate) struct PoissonSolution {
    pub coef: DVector<f64>,
    pub vcov: nalgebra::DMatrix<f64>,
    pub iterations: usize,
    pub score_max_abs: f64,
}

fn deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Maximizes the Poisson pseudo-likelihood on outcomes divided by their mean;
/// the rescaling only moves the unit effects, so slopes and the clustered
/// covariance are unaffected.
pub(crate) fn solve(design: &Design, ctrl: &PoissonControl) -> Result<PoissonSolution> {
    let n = design.y.len();
    let scale = design.y.iter().sum::<f64>() / n as f64;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(EconError::InvalidPanel("outcomes are all zero".into()));
    }
    let y: Vec<f64> = design.y.iter().map(|v| v / scale).collect();

    // Start from one weighted least-squares step around mu0 = (y + 1) / 2.
    let mu0: Vec<f64> = y.iter().map(|v| (v + 1.0) / 2.0).collect();
    let z: Vec<f64> = y.iter().zip(&mu0).map(|(&y, &m)| m.ln() + (y - m) / m).collect();
    let wz: Vec<f64> = z.iter().zip(&mu0).map(|(z, m)| z * m).collect();
    let mut coef = spd_solve(&design.gram(Some(&mu0)), &design.xt(&wz), "weighted cross-product")?;

    let mu_of = |coef: &DVector<f64>| -> Vec<f64> { design.eta(coef).into_iter().map(f64::exp).collect() };
    let mut mu = mu_of(&coef);
    let mut dev = deviance(&y, &mu);
    let mut last_score = f64::INFINITY;
    for iter in 1..=ctrl.max_iter {
        let resid: Vec<f64> = y.iter().zip(&mu).map(|(y, m)| y - m).collect();
        let score = design.xt(&resid);
        last_score = max_abs(&score);
        let hessian = design.gram(Some(&mu));
        if last_score < ctrl.score_tol {
            return finish(design, coef, &y, &mu, hessian, iter, last_score);
        }
        let step = spd_solve(&hessian, &score, "Fisher information")?;
        let mut t = 1.0;
        let (new_coef, new_mu, new_dev) = loop {
            let cand = &coef + &step * t;
            let m = mu_of(&cand);
            let d = deviance(&y, &m);
            if d.is_finite() && m.iter().all(|v| v.is_finite()) && d <= dev * (1.0 + 1e-12) + 1e-300 {
                break (cand, m, d);
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(EconError::NonConvergence { iterations: iter, score: last_score });
            }
        };
        let rel_change = (dev - new_dev).abs() / new_dev.max(f64::MIN_POSITIVE);
        coef = new_coef;
        mu = new_mu;
        dev = new_dev;
        if rel_change < ctrl.deviance_tol {
            let resid: Vec<f64> = y.iter().zip(&mu).map(|(y, m)| y - m).collect();
            let score = max_abs(&design.xt(&resid));
            let hessian = design.gram(Some(&mu));
            return finish(design, coef, &y, &mu, hessian, iter, score);
        }
    }
    Err(EconError::NonConvergence { iterations: ctrl.max_iter, score: last_score })
}

fn finish(
    design: &Design,
    coef: DVector<f64>,
    y: &[f64],
    mu: &[f64],
    hessian: nalgebra::DMatrix<f64>,
    iterations: usize,
    score_max_abs: f64,
) -> Result<PoissonSolution> {
    let bread = spd_inverse(hessian, "Fisher information")?;
    let resid: Vec<f64> = y.iter().zip(mu).map(|(y, m)| y - m).collect();
    let vcov = design.cluster_sandwich(&bread, &resid);
    Ok(PoissonSolution { coef, vcov, iterations, score_max_abs })
}

pub(crate) fn check_flow_panel(panel: &FlowPanel) -> Result<()> {
    if panel.is_empty() {
        return Err(EconError::EmptyPanel);
    }
    if panel.measure == Measure::MeanTransactionSizeUsd {
        return Err(EconError::InvalidPanel("Poisson fits need a flow panel, not mean sizes".into()));
    }
    if panel.values.iter().any(|v| v.is_none_or(|v| !(v.is_finite() && v >= 0.0))) {
        return Err(EconError::InvalidPanel("flow panels need non-negative values in every cell".into()));
    }
    Ok(())
}

/// Drops all-zero units and rejects weeks that are zero for every kept unit.
pub(crate) fn poisson_layout(panel: &FlowPanel, spec: &TreatSpec) -> Result<super::Layout> {
    check_flow_panel(panel)?;
    let all_zero = |u: usize| panel.row(u).iter().all(|v| *v == Some(0.0));
    let lay = layout(panel, spec, all_zero)?;
    if !spec.drop_time_fe {
        for t in 0..panel.n_weeks() {
            if lay.kept_units.iter().all(|&u| panel.get(u, t) == Some(0.0)) {
                return Err(EconError::Separation {
                    unit: format!("week {}", panel.weeks[t]),
                    detail: "is zero for every unit".into(),
                });
            }
        }
    }
    Ok(lay)
}

pub(crate) fn cells(panel: &FlowPanel, kept: &[usize]) -> Vec<Cell> {
    kept.iter()
        .flat_map(|&u| {
            (0..panel.n_weeks()).filter_map(move |t| panel.get(u, t).map(|y| Cell { unit: u, week: t, y }))
        })
        .collect()
}

/// Poisson QMLE of `E[Y_it] = exp(β·D_t·Treated_i + extras·γ + α_i + α_t)`.
pub fn fit_poisson_twfe(panel: &FlowPanel, spec: &TreatSpec) -> Result<FitResult> {
    fit_poisson_twfe_with(panel, spec, &PoissonControl::default())
}

pub fn fit_poisson_twfe_with(panel: &FlowPanel, spec: &TreatSpec, ctrl: &PoissonControl) -> Result<FitResult> {
    let lay = poisson_layout(panel, spec)?;
    let row = panel.row(lay.treated);
    let (pre, post) = row.split_at(lay.first_treated_week);
    for (part, label) in [(pre, "pre-treatment"), (post, "post-treatment")] {
        if part.iter().all(|v| *v == Some(0.0)) {
            return Err(EconError::Separation {
                unit: spec.treated.to_string(),
                detail: format!("is zero in every {label} week"),
            });
        }
    }
    let cells = cells(panel, &lay.kept_units);
    let design = Design::build(&cells, &lay.kept_units, panel.n_weeks(), !spec.drop_time_fe, did_columns(panel, spec, &lay));
    let sol = solve(&design, ctrl)?;
    Ok(result(&design, &sol, cells.len(), lay.dropped))
}

pub(crate) fn result(design: &Design, sol: &PoissonSolution, n_obs: usize, dropped: Vec<crate::CountryCode>) -> FitResult {
    let cols = design.named_cols();
    let vcov = sub_block(&sol.vcov, &cols);
    let beta: Vec<f64> = cols.iter().map(|&c| sol.coef[c]).collect();
    let se: Vec<f64> = (0..cols.len()).map(|k| vcov[k][k].max(0.0).sqrt()).collect();
    let (theta, theta_se) = beta.iter().zip(&se).map(|(&b, &s)| delta_transform(b, s)).unzip();
    FitResult {
        names: design.named.iter().map(|(n, _)| n.clone()).collect(),
        beta,
        vcov_clustered: vcov,
        se,
        theta: Some(theta),
        theta_se: Some(theta_se),
        n_obs,
        n_clusters: design.n_clusters,
        dropped_units: dropped,
        iterations: sol.iterations,
        score_max_abs: Some(sol.score_max_abs),
    }
}
