//! Counterfactual outflows and scenario extrapolation of the spillover share.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::econ::EventStudyResult;

/// Total economic impact payments used as the denominator of scenario shares.
pub const EIP_TOTAL_USD: f64 = 271.4e9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SpilloverError {
    #[error("series is empty")]
    Empty,
    #[error("series lengths differ: {0} weeks, {1} values")]
    LengthMismatch(usize, usize),
    #[error("event study has no coefficient for week {0}")]
    MissingWeek(NaiveDate),
    #[error("total observed outflow is zero")]
    ZeroTotal,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

type Result<T> = std::result::Result<T, SpilloverError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSeries {
    pub weeks: Vec<NaiveDate>,
    pub observed: Vec<f64>,
    pub counterfactual: Vec<f64>,
}

/// `Ŷ_t(0) = Y_t(1)·exp(−β̂_t)` with `β̂_t` the weekly interaction from the
/// event study, taken as zero up to and including the reference week.
pub fn counterfactual_series(
    weeks: &[NaiveDate],
    observed: &[f64],
    event_study: &EventStudyResult,
) -> Result<CounterfactualSeries> {
    if weeks.len() != observed.len() {
        return Err(SpilloverError::LengthMismatch(weeks.len(), observed.len()));
    }
    if weeks.is_empty() {
        return Err(SpilloverError::Empty);
    }
    if observed.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(SpilloverError::InvalidInput("observed outflows must be finite and non-negative".into()));
    }
    let counterfactual = weeks
        .iter()
        .zip(observed)
        .map(|(&w, &y)| {
            let ew = event_study.weeks.iter().find(|e| e.week == w).ok_or(SpilloverError::MissingWeek(w))?;
            let beta = if w <= event_study.reference_week { 0.0 } else { ew.beta };
            Ok(y * (-beta).exp())
        })
        .collect::<Result<_>>()?;
    Ok(CounterfactualSeries { weeks: weeks.to_vec(), observed: observed.to_vec(), counterfactual })
}

/// Counterfactual for the treated unit's own observed path in the event study.
pub fn counterfactual_from_event_study(event_study: &EventStudyResult) -> Result<CounterfactualSeries> {
    let weeks: Vec<NaiveDate> = event_study.weeks.iter().map(|e| e.week).collect();
    counterfactual_series(&weeks, &event_study.treated_outcome, event_study)
}

/// `100 · Σ(Y_t(1) − Ŷ_t(0)) / ΣY_t(1)`.
pub fn total_spillover_pct(series: &CounterfactualSeries) -> Result<f64> {
    if series.observed.is_empty() {
        return Err(SpilloverError::Empty);
    }
    if series.observed.len() != series.counterfactual.len() {
        return Err(SpilloverError::LengthMismatch(series.observed.len(), series.counterfactual.len()));
    }
    let total: f64 = series.observed.iter().sum();
    if total == 0.0 {
        return Err(SpilloverError::ZeroTotal);
    }
    let excess: f64 = series.observed.iter().zip(&series.counterfactual).map(|(y, c)| y - c).sum();
    Ok(100.0 * excess / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    /// Total volume the US outflow figure is drawn from, where one applies.
    pub base_volume_usd: Option<f64>,
    pub us_outflow_usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub label: String,
    pub base_volume_usd: Option<f64>,
    pub us_outflow_usd: f64,
    pub spillover_usd: f64,
    /// Spillover as a percent of total impact payments.
    pub spillover_pct_of_eip: f64,
}

const OFFICIAL_REMITTANCES_USD: f64 = 66.54e9;

/// Outflow volumes for the six standard scenarios.
pub fn default_scenarios() -> Vec<Scenario> {
    let s = |label: &str, base: Option<f64>, us: f64| Scenario { label: label.into(), base_volume_usd: base, us_outflow_usd: us };
    vec![
        s("Paxful", Some(1.9e9), 23.0e6),
        s("Top 15 exchanges", Some(3.78e12), 45.8e9),
        s("Total crypto market", Some(44.42e12), 537.7e9),
        s("Official remittances (World Bank)", None, OFFICIAL_REMITTANCES_USD),
        s("Informal remittances, lower bound", None, 0.5 * OFFICIAL_REMITTANCES_USD),
        s("Informal remittances, upper bound", None, 2.5 * OFFICIAL_REMITTANCES_USD),
    ]
}

/// Applies `spillover_fraction` (a share in `[0, 1]`, not a percent) to each
/// scenario's US outflow.
pub fn extrapolate(spillover_fraction: f64, scenarios: &[Scenario], eip_total: f64) -> Result<Vec<ScenarioRow>> {
    if !(0.0..=1.0).contains(&spillover_fraction) {
        return Err(SpilloverError::InvalidInput(format!("spillover fraction {spillover_fraction} is outside [0, 1]")));
    }
    if !(eip_total > 0.0 && eip_total.is_finite()) {
        return Err(SpilloverError::InvalidInput(format!("payment total {eip_total} must be positive")));
    }
    scenarios
        .iter()
        .map(|s| {
            let negative = s.us_outflow_usd < 0.0 || s.base_volume_usd.is_some_and(|b| b < 0.0);
            if negative || !s.us_outflow_usd.is_finite() {
                return Err(SpilloverError::InvalidInput(format!("scenario {} has a negative or non-finite volume", s.label)));
            }
            let spillover_usd = s.us_outflow_usd * spillover_fraction;
            Ok(ScenarioRow {
                label: s.label.clone(),
                base_volume_usd: s.base_volume_usd,
                us_outflow_usd: s.us_outflow_usd,
                spillover_usd,
                spillover_pct_of_eip: 100.0 * spillover_usd / eip_total,
            })
        })
        .collect()
}

pub const SCENARIO_HEADER: &str = "label,base_volume_usd,us_outflow_usd,spillover_usd,spillover_pct_of_eip";

pub fn write_scenarios<W: Write>(mut w: W, rows: &[ScenarioRow]) -> std::io::Result<()> {
    writeln!(w, "{SCENARIO_HEADER}")?;
    for r in rows {
        let base = r.base_volume_usd.map(|b| b.to_string()).unwrap_or_default();
        writeln!(w, "{},{base},{},{},{}", r.label, r.us_outflow_usd, r.spillover_usd, r.spillover_pct_of_eip)?;
    }
    Ok(())
}

/// `week_start,observed,counterfactual`.
pub fn write_series<W: Write>(mut w: W, series: &CounterfactualSeries) -> std::io::Result<()> {
    writeln!(w, "week_start,observed,counterfactual")?;
    for ((wk, y), c) in series.weeks.iter().zip(&series.observed).zip(&series.counterfactual) {
        writeln!(w, "{wk},{y},{c}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econ::{EventWeek, FitResult};

    fn weeks(n: usize) -> Vec<NaiveDate> {
        let first = NaiveDate::from_ymd_opt(2020, 1, 5).unwrap();
        (0..n).map(|k| first + chrono::Days::new(7 * k as u64)).collect()
    }

    fn study(betas: &[f64], reference: usize) -> EventStudyResult {
        let wk = weeks(betas.len());
        EventStudyResult {
            reference_week: wk[reference],
            weeks: wk
                .iter()
                .zip(betas)
                .map(|(&week, &beta)| EventWeek { week, beta, se: 0.1, theta: beta.exp_m1(), theta_se: 0.1 * beta.exp() })
                .collect(),
            treated_outcome: vec![100.0; betas.len()],
            fit: FitResult {
                names: vec![],
                beta: vec![],
                vcov_clustered: vec![],
                se: vec![],
                theta: None,
                theta_se: None,
                n_obs: 0,
                n_clusters: 0,
                dropped_units: vec![],
                iterations: 0,
                score_max_abs: None,
            },
        }
    }

    #[test]
    fn zero_betas_leave_observed_unchanged() {
        let es = study(&[0.0; 6], 2);
        let s = counterfactual_from_event_study(&es).unwrap();
        assert_eq!(s.counterfactual, s.observed);
        assert_eq!(total_spillover_pct(&s).unwrap(), 0.0);
    }

    #[test]
    fn log_two_halves_the_week() {
        let es = study(&[0.3, 0.0, 0.0, 2f64.ln(), 0.0], 1);
        let s = counterfactual_from_event_study(&es).unwrap();
        assert!((s.counterfactual[3] - 50.0).abs() < 1e-12);
        // Pre-period coefficients are ignored.
        assert_eq!(s.counterfactual[0], 100.0);
    }

    #[test]
    fn missing_week_is_an_error() {
        let es = study(&[0.0; 3], 1);
        let late = NaiveDate::from_ymd_opt(2021, 1, 3).unwrap();
        assert_eq!(counterfactual_series(&[late], &[1.0], &es), Err(SpilloverError::MissingWeek(late)));
    }

    #[test]
    fn hand_arithmetic_share() {
        // One week at 200 against a counterfactual of 100, nine more at 100.
        let mut observed = vec![100.0; 10];
        observed[4] = 200.0;
        let s = CounterfactualSeries { weeks: weeks(10), observed, counterfactual: vec![100.0; 10] };
        assert!((total_spillover_pct(&s).unwrap() - 100.0 * 100.0 / 1100.0).abs() < 1e-12);
        let zero = CounterfactualSeries { weeks: weeks(2), observed: vec![0.0; 2], counterfactual: vec![0.0; 2] };
        assert_eq!(total_spillover_pct(&zero), Err(SpilloverError::ZeroTotal));
    }

    #[test]
    fn scenario_rows() {
        let rows = extrapolate(0.0127, &default_scenarios(), EIP_TOTAL_USD).unwrap();
        let official = &rows[3];
        assert!((official.spillover_usd - 847.1e6).abs() / 847.1e6 < 0.005);
        assert!((official.spillover_pct_of_eip - 0.312).abs() / 0.312 < 0.005);
        let total = &rows[2];
        assert!((total.spillover_usd - 6.84e9).abs() / 6.84e9 < 0.005);
        assert!((total.spillover_pct_of_eip - 2.52).abs() / 2.52 < 0.005);
        assert!((rows[4].us_outflow_usd - 33.27e9).abs() < 1.0);
        assert!((rows[5].us_outflow_usd - 166.35e9).abs() < 1.0);
        for r in extrapolate(0.0, &default_scenarios(), EIP_TOTAL_USD).unwrap() {
            assert_eq!((r.spillover_usd, r.spillover_pct_of_eip), (0.0, 0.0));
        }
    }

    #[test]
    fn scenario_input_checks() {
        assert!(extrapolate(-0.1, &default_scenarios(), EIP_TOTAL_USD).is_err());
        assert!(extrapolate(1.5, &default_scenarios(), EIP_TOTAL_USD).is_err());
        let bad = [Scenario { label: "x".into(), base_volume_usd: None, us_outflow_usd: -1.0 }];
        assert!(extrapolate(0.1, &bad, EIP_TOTAL_USD).is_err());
    }

    #[test]
    fn table_writer() {
        let rows = extrapolate(0.01, &default_scenarios()[3..4], EIP_TOTAL_USD).unwrap();
        let mut buf = Vec::new();
        write_scenarios(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), SCENARIO_HEADER);
        assert!(text.lines().nth(1).unwrap().starts_with("Official remittances (World Bank),,66540000000,"));
    }
}
