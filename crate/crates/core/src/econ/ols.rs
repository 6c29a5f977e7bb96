use super::design::{spd_inverse, Design};
use super::poisson::cells;
use super::{did_columns, layout, sub_block, EconError, FitResult, Result, TreatSpec};
use crate::panel::{FlowPanel, Measure};

/// OLS two-way fixed effects on a mean-transaction-size panel. Missing cells
/// are skipped; units with no observed cell are dropped and listed. The
/// interaction coefficient is in USD, so no percent transform is applied.
pub fn fit_ols_twfe(panel: &FlowPanel, spec: &TreatSpec) -> Result<FitResult> {
    if panel.is_empty() {
        return Err(EconError::EmptyPanel);
    }
    if panel.measure != Measure::MeanTransactionSizeUsd {
        return Err(EconError::InvalidPanel(format!(
            "OLS size regressions need a mean-transaction-size panel, found {}",
            panel.measure
        )));
    }
    let all_missing = |u: usize| panel.row(u).iter().all(Option::is_none);
    let lay = layout(panel, spec, all_missing)?;
    let row = panel.row(lay.treated);
    let (pre, post) = row.split_at(lay.first_treated_week);
    if pre.iter().all(Option::is_none) || post.iter().all(Option::is_none) {
        return Err(EconError::InvalidPanel(format!(
            "treated country {} needs observed cells both before and after treatment",
            spec.treated
        )));
    }
    if !spec.drop_time_fe {
        for t in 0..panel.n_weeks() {
            if lay.kept_units.iter().all(|&u| panel.get(u, t).is_none()) {
                return Err(EconError::InvalidPanel(format!("week {} has no observed cell", panel.weeks[t])));
            }
        }
    }
    let cells = cells(panel, &lay.kept_units);
    let design = Design::build(&cells, &lay.kept_units, panel.n_weeks(), !spec.drop_time_fe, did_columns(panel, spec, &lay));
    let bread = spd_inverse(design.gram(None), "cross-product matrix")?;
    let coef = &bread * design.xt(&design.y);
    let fitted = design.eta(&coef);
    let resid: Vec<f64> = design.y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let vcov_full = design.cluster_sandwich(&bread, &resid);

    let cols = design.named_cols();
    let vcov = sub_block(&vcov_full, &cols);
    Ok(FitResult {
        names: design.named.iter().map(|(n, _)| n.clone()).collect(),
        beta: cols.iter().map(|&c| coef[c]).collect(),
        se: (0..cols.len()).map(|k| vcov[k][k].max(0.0).sqrt()).collect(),
        vcov_clustered: vcov,
        theta: None,
        theta_se: None,
        n_obs: cells.len(),
        n_clusters: design.n_clusters,
        dropped_units: lay.dropped,
        iterations: 1,
        score_max_abs: None,
    })
}
