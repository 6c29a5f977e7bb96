use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::design::{week_label, Design, NamedColumn};
use super::poisson::{cells, poisson_layout, result, solve, PoissonControl};
use super::{delta_transform, extra_columns, EconError, FitResult, Result, TreatSpec};
use crate::ingest::IngestError;
use crate::panel::FlowPanel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventWeek {
    pub week: NaiveDate,
    pub beta: f64,
    pub se: f64,
    pub theta: f64,
    pub theta_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyResult {
    /// Week immediately before the first treated week; its row is all zeros.
    pub reference_week: NaiveDate,
    pub weeks: Vec<EventWeek>,
    /// Treated unit's observed outcome in each week.
    pub treated_outcome: Vec<f64>,
    pub fit: FitResult,
}

impl EventStudyResult {
    pub fn first_treated_week(&self) -> NaiveDate {
        self.reference_week + chrono::Days::new(7)
    }
}

/// Poisson event study: the single interaction is replaced by
/// `Treated_i × 1{week = t}` for every week except the reference week.
pub fn fit_event_study(panel: &FlowPanel, spec: &TreatSpec) -> Result<EventStudyResult> {
    let lay = poisson_layout(panel, spec)?;
    let reference = lay.first_treated_week - 1;
    if let Some(t) = panel.row(lay.treated).iter().position(|v| *v == Some(0.0)) {
        return Err(EconError::Separation {
            unit: spec.treated.to_string(),
            detail: format!("is zero in week {}, whose event-time effect is unbounded", panel.weeks[t]),
        });
    }
    let treated = lay.treated;
    let mut named: Vec<NamedColumn> = (0..panel.n_weeks())
        .filter(|&t| t != reference)
        .map(|t| NamedColumn {
            name: week_label(panel.weeks[t]),
            value: Box::new(move |u, w| if u == treated && w == t { 1.0 } else { 0.0 }),
        })
        .collect();
    named.extend(extra_columns(panel, spec));
    let cells = cells(panel, &lay.kept_units);
    let design = Design::build(&cells, &lay.kept_units, panel.n_weeks(), !spec.drop_time_fe, named);
    let sol = solve(&design, &PoissonControl::default())?;
    let fit = result(&design, &sol, cells.len(), lay.dropped);

    let weeks = panel
        .weeks
        .iter()
        .map(|&w| {
            let (beta, se) = fit.coef(&week_label(w)).unwrap_or((0.0, 0.0));
            let (theta, theta_se) = delta_transform(beta, se);
            EventWeek { week: w, beta, se, theta, theta_se }
        })
        .collect();
    Ok(EventStudyResult {
        reference_week: panel.weeks[reference],
        weeks,
        treated_outcome: panel.row(treated).iter().map(|v| v.unwrap_or(0.0)).collect(),
        fit,
    })
}

pub const EVENT_STUDY_HEADER: &str = "week_start,beta,se,theta,theta_se,ci_low,ci_high,observed";

const Z95: f64 = 1.959_963_984_540_054;

/// Per-week plot data, preceded by a `# reference_week,<date>` line. The
/// interval is `theta ± 1.96·theta_se`.
pub fn write_event_study<W: Write>(mut w: W, es: &EventStudyResult) -> std::io::Result<()> {
    writeln!(w, "# reference_week,{}", es.reference_week)?;
    writeln!(w, "{EVENT_STUDY_HEADER}")?;
    for (e, y) in es.weeks.iter().zip(&es.treated_outcome) {
        let (lo, hi) = (e.theta - Z95 * e.theta_se, e.theta + Z95 * e.theta_se);
        writeln!(w, "{},{},{},{},{},{lo},{hi},{y}", e.week, e.beta, e.se, e.theta, e.theta_se)?;
    }
    Ok(())
}

pub fn parse_event_study(path: impl AsRef<Path>) -> std::result::Result<EventStudyResult, IngestError> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    parse_event_study_reader(f)
}

/// Reads the format of [`write_event_study`]. The fit summary is not stored
/// in the file and comes back empty.
pub fn parse_event_study_reader<R: Read>(r: R) -> std::result::Result<EventStudyResult, IngestError> {
    let bad = |line: usize, reason: String| IngestError::Malformed { line: line as u64, reason };
    let mut lines = BufReader::new(r).lines();
    let mut next = |n: usize| -> std::result::Result<Option<String>, IngestError> {
        lines.next().transpose().map_err(|e| bad(n, e.to_string()))
    };
    let first = next(1)?.ok_or_else(|| bad(1, "empty file".into()))?;
    let reference_week = first
        .strip_prefix("# reference_week,")
        .and_then(|d| NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").ok())
        .ok_or_else(|| bad(1, "expected `# reference_week,YYYY-MM-DD`".into()))?;
    let header = next(2)?.ok_or_else(|| bad(2, "missing header".into()))?;
    if header.trim_end() != EVENT_STUDY_HEADER {
        return Err(bad(2, format!("expected header {EVENT_STUDY_HEADER:?}")));
    }
    let mut weeks: Vec<EventWeek> = Vec::new();
    let mut treated_outcome = Vec::new();
    let mut n = 2;
    while let Some(line) = next(n + 1)? {
        n += 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 8 {
            return Err(bad(n, format!("expected 8 fields, found {}", fields.len())));
        }
        let week = NaiveDate::parse_from_str(fields[0], "%Y-%m-%d").map_err(|e| bad(n, format!("week_start: {e}")))?;
        let mut num = [0.0f64; 7];
        for (k, v) in fields[1..].iter().enumerate() {
            num[k] = v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(n, format!("non-numeric value {v:?}")))?;
        }
        if weeks.last().is_some_and(|p| p.week >= week) {
            return Err(bad(n, "weeks must be strictly increasing".into()));
        }
        if num[6] < 0.0 {
            return Err(bad(n, "observed outcome is negative".into()));
        }
        weeks.push(EventWeek { week, beta: num[0], se: num[1], theta: num[2], theta_se: num[3] });
        treated_outcome.push(num[6]);
    }
    match weeks.iter().find(|e| e.week == reference_week) {
        None => Err(bad(n, format!("reference week {reference_week} has no row"))),
        Some(e) if e.beta != 0.0 => Err(bad(n, format!("reference week coefficient is {}, not 0", e.beta))),
        Some(_) => Ok(EventStudyResult { reference_week, weeks, treated_outcome, fit: FitResult::default() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventStudyResult {
        let w = |d: u32| NaiveDate::from_ymd_opt(2020, 3, d).unwrap();
        let ew = |week, beta: f64| EventWeek { week, beta, se: 0.05, theta: beta.exp_m1(), theta_se: 0.05 * beta.exp() };
        EventStudyResult {
            reference_week: w(8),
            weeks: vec![ew(w(1), -0.02), ew(w(8), 0.0), ew(w(15), 0.2)],
            treated_outcome: vec![10.0, 12.5, 30.25],
            fit: FitResult::default(),
        }
    }

    #[test]
    fn round_trip() {
        let es = sample();
        let mut buf = Vec::new();
        write_event_study(&mut buf, &es).unwrap();
        assert_eq!(parse_event_study_reader(buf.as_slice()).unwrap(), es);
    }

    #[test]
    fn rejects_bad_files() {
        let mut buf = Vec::new();
        write_event_study(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for broken in [
            text.replacen("# reference_week,2020-03-08", "# reference_week,2020-03-22", 1),
            text.replacen("2020-03-15", "2020-03-01", 1),
            text.replacen(",30.25", ",-1", 1),
            text.replacen(EVENT_STUDY_HEADER, "week,beta", 1),
            String::new(),
        ] {
            assert!(parse_event_study_reader(broken.as_bytes()).is_err(), "{broken}");
        }
    }
}
