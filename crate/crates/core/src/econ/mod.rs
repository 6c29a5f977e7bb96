//! Two-way fixed-effects estimation around a single dated treatment.
//!
//! Poisson QMLE (`fit_poisson_twfe`) and OLS (`fit_ols_twfe`) share a full
//! dummy encoding: one dummy per kept unit, one per week except the first,
//! then the named regressors. Covariances are clustered by unit with the
//! `G/(G−1)` small-sample factor.

mod design;
mod event_study;
mod ols;
mod poisson;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::panel::{week_start, FlowPanel};
use crate::CountryCode;

pub use event_study::{
    fit_event_study, parse_event_study, parse_event_study_reader, write_event_study, EventStudyResult, EventWeek,
    EVENT_STUDY_HEADER,
};
pub use ols::fit_ols_twfe;
pub use poisson::{fit_poisson_twfe, PoissonControl};

/// Name of the treatment interaction in [`FitResult::names`].
pub const INTERACTION: &str = "disbursed_x_treated";
/// Name of the disbursement main effect, present only without week effects.
pub const DISBURSED: &str = "disbursed";

#[derive(Debug, thiserror::Error)]
pub enum EconError {
    #[error("empty panel")]
    EmptyPanel,
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("invalid treatment spec: {0}")]
    InvalidSpec(String),
    #[error("separation: {unit} {detail}")]
    Separation { unit: String, detail: String },
    #[error("no convergence after {iterations} iterations (max |score| = {score:e})")]
    NonConvergence { iterations: usize, score: f64 },
    #[error("singular design: {0}")]
    Singular(String),
}

type Result<T> = std::result::Result<T, EconError>;

/// An additional regressor with one value per panel cell (row-major,
/// countries × weeks, aligned with the panel it is fitted with).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraRegressor {
    pub name: String,
    pub values: Vec<f64>,
}

impl ExtraRegressor {
    /// A regressor that varies by week only, such as a log exchange rate.
    pub fn per_week(name: impl Into<String>, by_week: &[f64], n_units: usize) -> Self {
        let values = (0..n_units).flat_map(|_| by_week.iter().copied()).collect();
        ExtraRegressor { name: name.into(), values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatSpec {
    pub treated: CountryCode,
    /// The week containing this date is the first treated week.
    pub disbursement_date: NaiveDate,
    pub extra_regressors: Vec<ExtraRegressor>,
    /// Replace week dummies by a `disbursed` main effect.
    pub drop_time_fe: bool,
}

impl TreatSpec {
    pub fn new(treated: CountryCode, disbursement_date: NaiveDate) -> Self {
        TreatSpec { treated, disbursement_date, extra_regressors: Vec::new(), drop_time_fe: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Clustered covariance of `beta`, row-major `k × k`.
    pub vcov_clustered: Vec<Vec<f64>>,
    pub se: Vec<f64>,
    /// `exp(beta) − 1`; Poisson fits only.
    pub theta: Option<Vec<f64>>,
    /// `exp(beta) · se`; Poisson fits only.
    pub theta_se: Option<Vec<f64>>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub dropped_units: Vec<CountryCode>,
    pub iterations: usize,
    /// Max-norm of the score at the solution, on mean-normalized outcomes.
    pub score_max_abs: Option<f64>,
}

impl FitResult {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// `(beta, se)` of a named regressor.
    pub fn coef(&self, name: &str) -> Option<(f64, f64)> {
        self.index_of(name).map(|k| (self.beta[k], self.se[k]))
    }

    /// `(beta, se)` of the treatment interaction.
    pub fn interaction(&self) -> (f64, f64) {
        self.coef(INTERACTION).expect("DID fits carry the interaction")
    }
}

/// Percent-change transform with its delta-method standard error.
pub fn delta_transform(beta: f64, se: f64) -> (f64, f64) {
    (beta.exp_m1(), beta.exp() * se)
}

/// Units, weeks and treatment timing resolved against a panel.
pub(crate) struct Layout {
    pub treated: usize,
    /// Index of the first treated week.
    pub first_treated_week: usize,
    pub kept_units: Vec<usize>,
    pub dropped: Vec<CountryCode>,
}

pub(crate) fn disbursement_week(panel: &FlowPanel, spec: &TreatSpec) -> Result<usize> {
    let w = week_start(spec.disbursement_date);
    panel.week_index(w).ok_or_else(|| {
        EconError::InvalidSpec(format!(
            "disbursement date {} (week {w}) lies outside the panel window",
            spec.disbursement_date
        ))
    })
}

/// Shared precondition checks. `drop_unit` decides which units leave before
/// fitting.
pub(crate) fn layout(panel: &FlowPanel, spec: &TreatSpec, drop_unit: impl Fn(usize) -> bool) -> Result<Layout> {
    if panel.is_empty() {
        return Err(EconError::EmptyPanel);
    }
    if panel.values.len() != panel.n_units() * panel.n_weeks() {
        return Err(EconError::InvalidPanel("values are not rectangular".into()));
    }
    if panel.n_units() < 2 || panel.n_weeks() < 2 {
        return Err(EconError::InvalidPanel(format!(
            "need at least 2 units and 2 weeks, found {} × {}",
            panel.n_units(),
            panel.n_weeks()
        )));
    }
    let treated = panel
        .unit_index(spec.treated)
        .ok_or_else(|| EconError::InvalidSpec(format!("treated country {} is not in the panel", spec.treated)))?;
    let first_treated_week = disbursement_week(panel, spec)?;
    if first_treated_week == 0 {
        return Err(EconError::InvalidSpec("no pre-treatment week in the panel".into()));
    }
    for x in &spec.extra_regressors {
        if x.values.len() != panel.values.len() {
            return Err(EconError::InvalidSpec(format!(
                "regressor {} has {} values for {} cells",
                x.name,
                x.values.len(),
                panel.values.len()
            )));
        }
        if x.values.iter().any(|v| !v.is_finite()) {
            return Err(EconError::InvalidSpec(format!("regressor {} has non-finite values", x.name)));
        }
    }
    let mut kept_units = Vec::new();
    let mut dropped = Vec::new();
    for u in 0..panel.n_units() {
        if drop_unit(u) {
            dropped.push(panel.countries[u]);
        } else {
            kept_units.push(u);
        }
    }
    if !kept_units.contains(&treated) {
        return Err(EconError::Separation {
            unit: spec.treated.to_string(),
            detail: "has no usable observations".into(),
        });
    }
    if kept_units.len() < 2 {
        return Err(EconError::InvalidPanel("fewer than 2 units remain after dropping".into()));
    }
    Ok(Layout { treated, first_treated_week, kept_units, dropped })
}

/// Named columns for the DID specification: interaction, the `disbursed`
/// main effect when week effects are dropped, then extra regressors.
pub(crate) fn did_columns(panel: &FlowPanel, spec: &TreatSpec, lay: &Layout) -> Vec<design::NamedColumn> {
    let (treated, d) = (lay.treated, lay.first_treated_week);
    let mut cols = vec![design::NamedColumn {
        name: INTERACTION.to_string(),
        value: Box::new(move |u, t| if u == treated && t >= d { 1.0 } else { 0.0 }),
    }];
    if spec.drop_time_fe {
        cols.push(design::NamedColumn {
            name: DISBURSED.to_string(),
            value: Box::new(move |_, t| if t >= d { 1.0 } else { 0.0 }),
        });
    }
    cols.extend(extra_columns(panel, spec));
    cols
}

pub(crate) fn extra_columns(panel: &FlowPanel, spec: &TreatSpec) -> Vec<design::NamedColumn> {
    let n_weeks = panel.n_weeks();
    spec.extra_regressors
        .iter()
        .map(|x| {
            let values = x.values.clone();
            design::NamedColumn { name: x.name.clone(), value: Box::new(move |u, t| values[u * n_weeks + t]) }
        })
        .collect()
}

/// Sub-block of `full` at `cols`, as nested rows.
pub(crate) fn sub_block(full: &nalgebra::DMatrix<f64>, cols: &[usize]) -> Vec<Vec<f64>> {
    cols.iter().map(|&a| cols.iter().map(|&b| full[(a, b)]).collect()).collect()
}
