//! Country × week panels of cross-border vehicle flows.
//!
//! Weeks start on Sunday 00:00 UTC and a vehicle is dated by its first leg.
//! A panel window `[start, end]` keeps every week whose Sunday start falls
//! inside it, so 2020-01-01..2020-06-07 spans the 23 weeks 2020-01-05 through
//! 2020-06-07.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::ingest::{CountryClassification, IncomeGroup, IngestError, RateTable};
use crate::matcher::{classify_flow, FlowClass, MatchError, VehicleTrade};
use crate::CountryCode;

/// Countries with their own 2020 lump-sum transfers, never used as controls.
pub const STIMULUS_EXCLUSIONS: [&str; 3] = ["JP", "SG", "KR"];

#[derive(Debug, thiserror::Error)]
pub enum PanelError {
    #[error("empty control set")]
    EmptyControls,
    #[error("invalid panel spec: {0}")]
    InvalidSpec(String),
    #[error("empty panel")]
    EmptyPanel,
    #[error("panel file line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

type Result<T> = std::result::Result<T, PanelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    OutflowUsd,
    InflowUsd,
    MeanTransactionSizeUsd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Outflow,
    Inflow,
}

/// Income group of the counterparty side (destination for outflows, origin
/// for inflows). `Middle` pools upper- and lower-middle income.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CounterpartyFilter {
    All,
    Low,
    Middle,
    High,
}

impl CounterpartyFilter {
    pub const ALL: [CounterpartyFilter; 4] =
        [CounterpartyFilter::All, CounterpartyFilter::Low, CounterpartyFilter::Middle, CounterpartyFilter::High];

    pub fn admits(self, group: IncomeGroup) -> bool {
        match self {
            CounterpartyFilter::All => true,
            CounterpartyFilter::Low => group == IncomeGroup::Low,
            CounterpartyFilter::Middle => group.is_middle(),
            CounterpartyFilter::High => group == IncomeGroup::High,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlRule {
    HighIncome,
    Oecd,
    Custom(Vec<CountryCode>),
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text $(| $alias)* => Ok($ty::$variant),)+
                    other => Err(format!(concat!("unknown ", stringify!($ty), " {:?}"), other)),
                }
            }
        }
    };
}

text_enum!(Measure {
    OutflowUsd => "outflow_usd" | "outflowusd",
    InflowUsd => "inflow_usd" | "inflowusd",
    MeanTransactionSizeUsd => "mean_transaction_size_usd" | "meantransactionsizeusd",
});
text_enum!(Direction { Outflow => "outflow", Inflow => "inflow" });
text_enum!(CounterpartyFilter { All => "all", Low => "low", Middle => "middle", High => "high" });

impl fmt::Display for ControlRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlRule::HighIncome => f.write_str("high-income"),
            ControlRule::Oecd => f.write_str("oecd"),
            ControlRule::Custom(list) => {
                f.write_str("custom:")?;
                for (i, c) in list.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{c}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for ControlRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "high-income" | "highincome" | "high_income" => return Ok(ControlRule::HighIncome),
            "oecd" => return Ok(ControlRule::Oecd),
            _ => {}
        }
        let rest = t.strip_prefix("custom:").ok_or_else(|| format!("unknown control rule {t:?}"))?;
        rest.split([' ', ','])
            .filter(|p| !p.is_empty())
            .map(|p| p.parse().map_err(|e: crate::CountryCodeError| e.to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(ControlRule::Custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSpec {
    pub direction: Direction,
    pub counterparty_filter: CounterpartyFilter,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub treated: CountryCode,
    pub control_rule: ControlRule,
    pub exclusions: Vec<CountryCode>,
}

impl PanelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.exclusions.contains(&self.treated) {
            return Err(PanelError::InvalidSpec(format!("treated country {} is excluded", self.treated)));
        }
        if self.window_start >= self.window_end {
            return Err(PanelError::InvalidSpec(format!(
                "window start {} is not before end {}",
                self.window_start, self.window_end
            )));
        }
        if weeks_in_window(self.window_start, self.window_end).is_empty() {
            return Err(PanelError::InvalidSpec("window contains no week start".into()));
        }
        Ok(())
    }
}

/// Sunday on or before `date`.
pub fn week_start(date: NaiveDate) -> NaiveDate {
    date - Days::new(date.weekday().num_days_from_sunday() as u64)
}

pub fn week_of_timestamp(ts: i64) -> NaiveDate {
    let dt = DateTime::from_timestamp(ts, 0).unwrap_or_default();
    week_start(dt.date_naive())
}

/// Sundays falling inside `[start, end]`.
pub fn weeks_in_window(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    let mut w = week_start(start);
    if w < start {
        w = w + Days::new(7);
    }
    let mut out = Vec::new();
    while w <= end {
        out.push(w);
        w = w + Days::new(7);
    }
    out
}

pub fn week_timestamp(week: NaiveDate) -> i64 {
    week.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp()
}

/// Labels and window recorded alongside panel values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelMeta {
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub control_rule: String,
}

/// Country × week matrix stored row-major. `None` marks a missing cell; flow
/// panels never contain one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPanel {
    pub countries: Vec<CountryCode>,
    pub weeks: Vec<NaiveDate>,
    pub values: Vec<Option<f64>>,
    pub measure: Measure,
    pub filter: CounterpartyFilter,
    pub meta: PanelMeta,
}

impl FlowPanel {
    pub fn zeros(
        countries: Vec<CountryCode>,
        weeks: Vec<NaiveDate>,
        measure: Measure,
        filter: CounterpartyFilter,
        meta: PanelMeta,
    ) -> Self {
        let values = vec![Some(0.0); countries.len() * weeks.len()];
        FlowPanel { countries, weeks, values, measure, filter, meta }
    }

    pub fn n_units(&self) -> usize {
        self.countries.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, unit: usize, week: usize) -> Option<f64> {
        self.values[unit * self.weeks.len() + week]
    }

    pub fn set(&mut self, unit: usize, week: usize, v: Option<f64>) {
        let n = self.weeks.len();
        self.values[unit * n + week] = v;
    }

    pub fn unit_index(&self, c: CountryCode) -> Option<usize> {
        self.countries.iter().position(|&x| x == c)
    }

    pub fn week_index(&self, w: NaiveDate) -> Option<usize> {
        self.weeks.binary_search(&w).ok()
    }

    pub fn row(&self, unit: usize) -> &[Option<f64>] {
        let n = self.weeks.len();
        &self.values[unit * n..(unit + 1) * n]
    }

    /// Sum of all observed cells, accumulated in row-major order.
    pub fn total(&self) -> f64 {
        self.values.iter().flatten().sum()
    }

    /// Structural checks: rectangular, contiguous Sunday weeks, values ≥ 0.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| PanelError::Malformed { line: 0, reason };
        if self.values.len() != self.countries.len() * self.weeks.len() {
            return Err(bad("values are not rectangular".into()));
        }
        for w in &self.weeks {
            if week_start(*w) != *w {
                return Err(bad(format!("week {w} is not a Sunday")));
            }
        }
        for p in self.weeks.windows(2) {
            if p[1] != p[0] + Days::new(7) {
                return Err(bad(format!("weeks {} and {} are not contiguous", p[0], p[1])));
            }
        }
        let unique: BTreeSet<_> = self.countries.iter().collect();
        if unique.len() != self.countries.len() {
            return Err(bad("duplicate country rows".into()));
        }
        if let Some(v) = self.values.iter().flatten().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(bad(format!("cell value {v} is negative or not finite")));
        }
        Ok(())
    }
}

/// Control countries under `spec.control_rule`, sorted by code.
pub fn select_controls(spec: &PanelSpec, classification: &CountryClassification) -> Result<Vec<CountryCode>> {
    let stimulus: Vec<CountryCode> = STIMULUS_EXCLUSIONS.iter().map(|c| c.parse().expect("static code")).collect();
    let keep = |c: &CountryCode| *c != spec.treated && !spec.exclusions.contains(c);
    let mut controls: Vec<CountryCode> = match &spec.control_rule {
        ControlRule::HighIncome => classification
            .iter()
            .filter(|(c, info)| info.income_group == IncomeGroup::High && !stimulus.contains(c))
            .map(|(c, _)| c)
            .collect(),
        ControlRule::Oecd => classification
            .iter()
            .filter(|(c, info)| info.oecd_member && !stimulus.contains(c))
            .map(|(c, _)| c)
            .collect(),
        ControlRule::Custom(list) => {
            for &c in list {
                classification.lookup(c)?;
            }
            list.clone()
        }
    };
    controls.retain(keep);
    controls.sort();
    controls.dedup();
    if controls.is_empty() {
        return Err(PanelError::EmptyControls);
    }
    Ok(controls)
}

struct CellRouter {
    rows: HashMap<CountryCode, usize>,
    weeks: HashMap<NaiveDate, usize>,
}

impl CellRouter {
    /// Panel cell of a cross-border vehicle, or `None` when it falls outside
    /// the panel or fails the counterparty filter.
    fn cell(
        &self,
        v: &VehicleTrade,
        direction: Direction,
        filter: CounterpartyFilter,
        classification: &CountryClassification,
    ) -> Result<Option<(usize, usize)>> {
        let (origin, destination) = match classify_flow(v)? {
            FlowClass::Domestic(_) => return Ok(None),
            FlowClass::CrossBorder { origin, destination } => (origin, destination),
        };
        let (own, counterparty) = match direction {
            Direction::Outflow => (origin, destination),
            Direction::Inflow => (destination, origin),
        };
        let group = classification.income_group(counterparty)?;
        let Some(&row) = self.rows.get(&own) else { return Ok(None) };
        let Some(&col) = self.weeks.get(&week_of_timestamp(v.timestamp1)) else { return Ok(None) };
        Ok(filter.admits(group).then_some((row, col)))
    }
}

fn panel_frame(
    spec: &PanelSpec,
    classification: &CountryClassification,
    measure: Measure,
) -> Result<(FlowPanel, CellRouter)> {
    spec.validate()?;
    let mut countries = vec![spec.treated];
    countries.extend(select_controls(spec, classification)?);
    let weeks = weeks_in_window(spec.window_start, spec.window_end);
    let meta = PanelMeta {
        window_start: spec.window_start,
        window_end: spec.window_end,
        control_rule: spec.control_rule.to_string(),
    };
    let router = CellRouter {
        rows: countries.iter().enumerate().map(|(i, c)| (*c, i)).collect(),
        weeks: weeks.iter().enumerate().map(|(i, w)| (*w, i)).collect(),
    };
    Ok((FlowPanel::zeros(countries, weeks, measure, spec.counterparty_filter, meta), router))
}

/// Weekly USD totals of cross-border vehicles, treated country first then
/// controls. Empty cells hold 0.
pub fn build_panel(
    vehicles: &[VehicleTrade],
    spec: &PanelSpec,
    classification: &CountryClassification,
) -> Result<FlowPanel> {
    let measure = match spec.direction {
        Direction::Outflow => Measure::OutflowUsd,
        Direction::Inflow => Measure::InflowUsd,
    };
    let (mut panel, router) = panel_frame(spec, classification, measure)?;
    let n_weeks = panel.n_weeks();
    let mut sums = vec![0.0f64; panel.values.len()];
    for v in vehicles {
        if let Some((r, c)) = router.cell(v, spec.direction, spec.counterparty_filter, classification)? {
            sums[r * n_weeks + c] += v.usd_value;
        }
    }
    panel.values = sums.into_iter().map(Some).collect();
    Ok(panel)
}

/// Weekly mean USD size of cross-border vehicles by origin (or destination
/// for inflows). Cells without trades are missing.
pub fn build_size_panel(
    vehicles: &[VehicleTrade],
    spec: &PanelSpec,
    classification: &CountryClassification,
) -> Result<FlowPanel> {
    let (mut panel, router) = panel_frame(spec, classification, Measure::MeanTransactionSizeUsd)?;
    let n_weeks = panel.n_weeks();
    let mut sums = vec![(0.0f64, 0u64); panel.values.len()];
    for v in vehicles {
        if let Some((r, c)) = router.cell(v, spec.direction, spec.counterparty_filter, classification)? {
            let cell = &mut sums[r * n_weeks + c];
            cell.0 += v.usd_value;
            cell.1 += 1;
        }
    }
    panel.values = sums.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect();
    Ok(panel)
}

/// Mean USD/BTC rate of each panel week.
pub fn weekly_mean_rates(rates: &RateTable, weeks: &[NaiveDate]) -> Result<Vec<f64>> {
    weeks
        .iter()
        .map(|w| {
            let from = week_timestamp(*w);
            Ok(rates.mean_rate(from, from + 7 * 86_400)?)
        })
        .collect()
}

/// Writes the panel as a `# key: value` metadata block followed by long-format
/// `country,week_start,value` rows. Missing cells are written as `NA`.
pub fn write_panel<W: Write>(mut w: W, panel: &FlowPanel) -> std::io::Result<()> {
    writeln!(w, "# measure: {}", panel.measure)?;
    writeln!(w, "# filter: {}", panel.filter)?;
    writeln!(w, "# window: {}..{}", panel.meta.window_start, panel.meta.window_end)?;
    writeln!(w, "# control_rule: {}", panel.meta.control_rule)?;
    writeln!(w, "country,week_start,value")?;
    for (i, c) in panel.countries.iter().enumerate() {
        for (t, wk) in panel.weeks.iter().enumerate() {
            match panel.get(i, t) {
                Some(v) => writeln!(w, "{c},{wk},{v}")?,
                None => writeln!(w, "{c},{wk},NA")?,
            }
        }
    }
    Ok(())
}

pub fn read_panel(path: impl AsRef<Path>) -> Result<FlowPanel> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)
        .map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    parse_panel_reader(f)
}

/// Parses the panel file format. Rows may come in any order but must cover
/// every country × week cell exactly once. An input with no data rows is an
/// [`PanelError::EmptyPanel`].
pub fn parse_panel_reader<R: Read>(r: R) -> Result<FlowPanel> {
    let mut meta: HashMap<String, String> = HashMap::new();
    let mut header_seen = false;
    let mut cells: Vec<(CountryCode, NaiveDate, Option<f64>, usize)> = Vec::new();
    for (idx, line) in BufReader::new(r).lines().enumerate() {
        let lineno = idx + 1;
        let bad = |reason: String| PanelError::Malformed { line: lineno, reason };
        let line = line.map_err(|e| bad(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if header_seen {
                return Err(bad("metadata after the column header".into()));
            }
            let (k, v) = rest.split_once(':').ok_or_else(|| bad("metadata line lacks ':'".into()))?;
            meta.insert(k.trim().to_string(), v.trim().to_string());
            continue;
        }
        if !header_seen {
            if line != "country,week_start,value" {
                return Err(bad(format!("expected column header, found {line:?}")));
            }
            header_seen = true;
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", parts.len())));
        }
        let c: CountryCode = parts[0].parse().map_err(|e: crate::CountryCodeError| bad(e.to_string()))?;
        let w = NaiveDate::parse_from_str(parts[1], "%Y-%m-%d").map_err(|e| bad(e.to_string()))?;
        let v = if parts[2].eq_ignore_ascii_case("NA") || parts[2].is_empty() {
            None
        } else {
            let v: f64 = parts[2].parse().map_err(|_| bad(format!("invalid value {:?}", parts[2])))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(format!("value {v} is negative or not finite")));
            }
            Some(v)
        };
        cells.push((c, w, v, lineno));
    }
    if cells.is_empty() {
        return Err(PanelError::EmptyPanel);
    }
    let get = |k: &str| meta.get(k).map(String::as_str);
    let measure: Measure = get("measure")
        .unwrap_or("outflow_usd")
        .parse()
        .map_err(|e| PanelError::Malformed { line: 0, reason: e })?;
    let filter: CounterpartyFilter =
        get("filter").unwrap_or("all").parse().map_err(|e| PanelError::Malformed { line: 0, reason: e })?;

    let mut countries: Vec<CountryCode> = Vec::new();
    for (c, ..) in &cells {
        if !countries.contains(c) {
            countries.push(*c);
        }
    }
    let weeks: Vec<NaiveDate> = cells.iter().map(|x| x.1).collect::<BTreeSet<_>>().into_iter().collect();
    let (window_start, window_end) = match get("window").and_then(|w| w.split_once("..")) {
        Some((a, b)) => {
            let p = |s: &str| {
                NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
                    .map_err(|e| PanelError::Malformed { line: 0, reason: format!("window: {e}") })
            };
            (p(a)?, p(b)?)
        }
        None => (weeks[0], *weeks.last().unwrap()),
    };
    let meta = PanelMeta {
        window_start,
        window_end,
        control_rule: get("control_rule").unwrap_or("").to_string(),
    };
    let mut panel = FlowPanel::zeros(countries, weeks, measure, filter, meta);
    let mut filled = vec![false; panel.values.len()];
    let n_weeks = panel.n_weeks();
    for (c, w, v, lineno) in cells {
        let i = panel.unit_index(c).expect("collected");
        let t = panel.week_index(w).expect("collected");
        if std::mem::replace(&mut filled[i * n_weeks + t], true) {
            return Err(PanelError::Malformed { line: lineno, reason: format!("duplicate cell {c},{w}") });
        }
        panel.set(i, t, v);
    }
    if let Some(k) = filled.iter().position(|f| !f) {
        return Err(PanelError::Malformed {
            line: 0,
            reason: format!("missing cell {},{}", panel.countries[k / n_weeks], panel.weeks[k % n_weeks]),
        });
    }
    if measure != Measure::MeanTransactionSizeUsd && panel.values.iter().any(Option::is_none) {
        return Err(PanelError::Malformed { line: 0, reason: "flow panels may not contain missing cells".into() });
    }
    panel.validate()?;
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cc;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn ts(s: &str) -> i64 {
        crate::ingest::parse_timestamp(s).unwrap()
    }

    fn vehicle(t: &str, o: &str, d: &str, usd: f64) -> VehicleTrade {
        VehicleTrade {
            leg1_id: format!("{t}{o}{d}{usd}"),
            leg2_id: format!("{t}{o}{d}{usd}b"),
            timestamp1: ts(t),
            timestamp2: ts(t) + 60,
            size_satoshi: 1,
            p_value: 0.0,
            origin: Some(cc!(o)),
            destination: Some(cc!(d)),
            usd_value: usd,
        }
    }

    fn spec(filter: CounterpartyFilter) -> PanelSpec {
        PanelSpec {
            direction: Direction::Outflow,
            counterparty_filter: filter,
            window_start: date("2020-01-01"),
            window_end: date("2020-06-07"),
            treated: cc!("US"),
            control_rule: ControlRule::HighIncome,
            exclusions: vec![],
        }
    }

    #[test]
    fn study_window_has_23_sunday_weeks() {
        let weeks = weeks_in_window(date("2020-01-01"), date("2020-06-07"));
        assert_eq!(weeks.len(), 23);
        assert_eq!(weeks[0], date("2020-01-05"));
        assert_eq!(*weeks.last().unwrap(), date("2020-06-07"));
        assert_eq!(week_start(date("2020-04-09")), date("2020-04-05"));
        assert_eq!(week_of_timestamp(ts("2020-01-11T23:59:59Z")), date("2020-01-05"));
        assert_eq!(week_of_timestamp(ts("2020-01-12T00:00:00Z")), date("2020-01-12"));
    }

    #[test]
    fn single_trade_lands_in_its_cell() {
        let c = CountryClassification::shipped();
        let v = [vehicle("2020-01-06T10:00:00Z", "US", "NG", 50.0)];
        let p = build_panel(&v, &spec(CounterpartyFilter::Middle), &c).unwrap();
        assert_eq!(p.countries[0], cc!("US"));
        assert_eq!(p.get(0, 0), Some(50.0));
        assert_eq!(p.total(), 50.0);
        let low = build_panel(&v, &spec(CounterpartyFilter::Low), &c).unwrap();
        assert_eq!(low.total(), 0.0);
        assert_eq!(low.n_units(), p.n_units());
    }

    #[test]
    fn high_income_controls_drop_stimulus_countries() {
        let c = CountryClassification::shipped();
        let controls = select_controls(&spec(CounterpartyFilter::All), &c).unwrap();
        assert_eq!(controls.len(), 79 - 4);
        for x in ["JP", "SG", "KR", "US"] {
            assert!(!controls.contains(&cc!(x)));
        }
        let mut oecd = spec(CounterpartyFilter::All);
        oecd.control_rule = ControlRule::Oecd;
        let controls = select_controls(&oecd, &c).unwrap();
        assert_eq!(controls.len(), 36 - 3);
        assert!(controls.contains(&cc!("MX")));
        assert!(!controls.contains(&cc!("JP")));
    }

    #[test]
    fn empty_control_set_is_an_error() {
        let c = CountryClassification::shipped();
        let mut s = spec(CounterpartyFilter::All);
        s.control_rule = ControlRule::Custom(vec![cc!("US")]);
        assert!(matches!(select_controls(&s, &c), Err(PanelError::EmptyControls)));
        s.control_rule = ControlRule::Custom(vec![cc!("ZZ")]);
        assert!(select_controls(&s, &c).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(CounterpartyFilter::All);
        s.exclusions = vec![cc!("US")];
        assert!(s.validate().is_err());
        let mut s = spec(CounterpartyFilter::All);
        s.window_end = s.window_start;
        assert!(s.validate().is_err());
    }

    #[test]
    fn size_panel_means_and_missing_cells() {
        let c = CountryClassification::shipped();
        let v = [
            vehicle("2020-01-06T10:00:00Z", "US", "NG", 10.0),
            vehicle("2020-01-07T10:00:00Z", "US", "GH", 30.0),
            vehicle("2020-01-13T10:00:00Z", "US", "GB", 40.0),
            vehicle("2020-01-13T11:00:00Z", "US", "US", 99.0),
        ];
        let p = build_size_panel(&v, &spec(CounterpartyFilter::All), &c).unwrap();
        assert_eq!(p.get(0, 0), Some(20.0));
        assert_eq!(p.get(0, 1), Some(40.0));
        assert_eq!(p.get(0, 2), None);
        assert_eq!(p.get(1, 0), None);
    }

    #[test]
    fn control_rule_text_round_trips() {
        for r in [ControlRule::HighIncome, ControlRule::Oecd, ControlRule::Custom(vec![cc!("GB"), cc!("NG")])] {
            assert_eq!(r.to_string().parse::<ControlRule>().unwrap(), r);
        }
    }

    #[test]
    fn panel_file_round_trips_and_rejects_holes() {
        let c = CountryClassification::shipped();
        let v = [vehicle("2020-01-06T10:00:00Z", "US", "NG", 12.5)];
        let p = build_size_panel(&v, &spec(CounterpartyFilter::All), &c).unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &p).unwrap();
        assert_eq!(parse_panel_reader(&buf[..]).unwrap(), p);

        let text = String::from_utf8(buf).unwrap();
        let holed: String = text.lines().filter(|l| !l.starts_with("US,2020-01-05")).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_panel_reader(holed.as_bytes()), Err(PanelError::Malformed { .. })));
        assert!(matches!(parse_panel_reader(&b""[..]), Err(PanelError::EmptyPanel)));
        assert!(matches!(parse_panel_reader(&b"country,week_start,value\n"[..]), Err(PanelError::EmptyPanel)));
    }
}
