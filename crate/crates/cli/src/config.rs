//! Run configuration: a TOML file with one section per pipeline stage, then
//! command-line overrides on top.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use cryptoflow::spillover::EIP_TOTAL_USD;
use cryptoflow::{ControlRule, CountryCode, CounterpartyFilter, Direction, MatchParams, PanelSpec, TreatSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Source of every random draw in the run.
    pub seed: u64,
    pub paths: Paths,
    #[serde(rename = "match")]
    pub matching: MatchSection,
    pub panel: PanelSection,
    pub treat: TreatSection,
    pub sdid: SdidSection,
    pub spillover: SpilloverSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20200409,
            paths: Paths::default(),
            matching: MatchSection::default(),
            panel: PanelSection::default(),
            treat: TreatSection::default(),
            sdid: SdidSection::default(),
            spillover: SpilloverSection::default(),
            synth: SynthSection::default(),
        }
    }
}

/// Inputs default to files inside `out`, so stages chain without extra
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub out: PathBuf,
    pub ledger: Option<PathBuf>,
    pub rates: Option<PathBuf>,
    /// Falls back to the shipped table.
    pub classification: Option<PathBuf>,
    pub matches: Option<PathBuf>,
    /// Directory holding `panel-<filter>.csv` files.
    pub panels: Option<PathBuf>,
    pub event_study: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out: PathBuf::from("out"),
            ledger: None,
            rates: None,
            classification: None,
            matches: None,
            panels: None,
            event_study: None,
        }
    }
}

impl Paths {
    fn or_out(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out.join(name))
    }

    pub fn ledger(&self) -> PathBuf {
        self.or_out(&self.ledger, "ledger.csv")
    }

    pub fn rates(&self) -> PathBuf {
        self.or_out(&self.rates, "rates.csv")
    }

    pub fn matches(&self) -> PathBuf {
        self.or_out(&self.matches, "matches.csv")
    }

    pub fn panel(&self, filter: CounterpartyFilter) -> PathBuf {
        self.panels.clone().unwrap_or_else(|| self.out.clone()).join(panel_file(filter))
    }

    pub fn event_study(&self) -> PathBuf {
        self.or_out(&self.event_study, "event_study.csv")
    }
}

pub fn panel_file(filter: CounterpartyFilter) -> String {
    format!("panel-{filter}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchSection {
    pub window_hours: f64,
    pub alpha: f64,
    pub burn_in: usize,
}

impl Default for MatchSection {
    fn default() -> Self {
        let p = MatchParams::default();
        MatchSection { window_hours: p.window_seconds as f64 / 3600.0, alpha: p.alpha, burn_in: p.burn_in }
    }
}

impl MatchSection {
    pub fn params(&self) -> Result<MatchParams> {
        if !(self.window_hours.is_finite() && self.window_hours > 0.0) {
            return Err(invalid("match", format!("window_hours must be positive, got {}", self.window_hours)));
        }
        let p = MatchParams {
            window_seconds: (self.window_hours * 3600.0).round() as i64,
            alpha: self.alpha,
            burn_in: self.burn_in,
        };
        p.validate().map_err(|e| invalid("match", e))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PanelSection {
    #[serde(deserialize_with = "toml_date")]
    pub window_start: NaiveDate,
    #[serde(deserialize_with = "toml_date")]
    pub window_end: NaiveDate,
    pub treated: CountryCode,
    /// `high-income` or `oecd`.
    pub control_rule: String,
    /// `outflow` or `inflow`.
    pub direction: String,
    /// One of `all`, `low`, `middle`, `high`; unset means all four.
    pub filter: Option<String>,
    pub exclusions: Vec<CountryCode>,
}

impl Default for PanelSection {
    fn default() -> Self {
        PanelSection {
            window_start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            window_end: NaiveDate::from_ymd_opt(2020, 6, 7).expect("valid date"),
            treated: "US".parse().expect("valid code"),
            control_rule: "high-income".into(),
            direction: "outflow".into(),
            filter: None,
            exclusions: Vec::new(),
        }
    }
}

impl PanelSection {
    /// Counterparty filters the run covers, in table order.
    pub fn filters(&self) -> Result<Vec<CounterpartyFilter>> {
        match &self.filter {
            None => Ok(CounterpartyFilter::ALL.to_vec()),
            Some(f) => Ok(vec![f.parse().map_err(|e| invalid("panel", e))?]),
        }
    }

    /// The single filter for stages that take one panel; `all` when unset.
    pub fn single_filter(&self) -> Result<CounterpartyFilter> {
        match &self.filter {
            None => Ok(CounterpartyFilter::All),
            Some(f) => f.parse().map_err(|e| invalid("panel", e)),
        }
    }

    pub fn spec(&self, filter: CounterpartyFilter) -> Result<PanelSpec> {
        let direction: Direction = self.direction.parse().map_err(|e| invalid("panel", e))?;
        let control_rule: ControlRule = self.control_rule.parse().map_err(|e| invalid("panel", e))?;
        let spec = PanelSpec {
            direction,
            counterparty_filter: filter,
            window_start: self.window_start,
            window_end: self.window_end,
            treated: self.treated,
            control_rule,
            exclusions: self.exclusions.clone(),
        };
        spec.validate().map_err(|e| invalid("panel", e))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreatSection {
    /// The week containing this date is the first treated week.
    #[serde(deserialize_with = "toml_date")]
    pub disbursement_date: NaiveDate,
}

impl Default for TreatSection {
    fn default() -> Self {
        TreatSection { disbursement_date: NaiveDate::from_ymd_opt(2020, 4, 9).expect("valid date") }
    }
}

impl TreatSection {
    pub fn spec(&self, panel: &PanelSection) -> TreatSpec {
        TreatSpec::new(panel.treated, self.disbursement_date)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdidSection {
    pub reps: usize,
    pub zeta: Option<f64>,
}

impl Default for SdidSection {
    fn default() -> Self {
        SdidSection { reps: cryptoflow::SdidConfig::default().reps, zeta: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpilloverSection {
    /// Share applied to the scenarios; estimated from the event study when
    /// unset.
    pub fraction: Option<f64>,
    pub eip_total_usd: f64,
}

impl Default for SpilloverSection {
    fn default() -> Self {
        SpilloverSection { fraction: None, eip_total_usd: EIP_TOTAL_USD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    /// `ledger` or `panel`.
    pub kind: String,
    pub n_background: usize,
    pub n_injected_pairs: usize,
    /// Participant countries and weights; the generator default when unset.
    pub countries: Option<Vec<(CountryCode, f64)>>,
    pub usd_per_btc: f64,
    /// Hourly log-price volatility of the generated rate table.
    pub rate_volatility: f64,
    pub n_units: usize,
    pub log_level: f64,
    pub beta: f64,
    pub poisson_noise: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            kind: "ledger".into(),
            n_background: 50_000,
            n_injected_pairs: 1_000,
            countries: None,
            usd_per_btc: 7_200.0,
            rate_volatility: 0.002,
            n_units: 59,
            log_level: 8.0,
            beta: 0.0,
            poisson_noise: true,
        }
    }
}

/// Accepts a bare TOML date (`2020-04-09`) as well as a quoted one.
fn toml_date<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<NaiveDate, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Toml(toml::value::Datetime),
        Text(String),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Toml(dt) => dt.to_string(),
        Raw::Text(s) => s,
    };
    NaiveDate::parse_from_str(&text, "%Y-%m-%d").map_err(serde::de::Error::custom)
}

fn invalid(module: &'static str, cause: impl std::fmt::Display) -> CliError {
    CliError::new(module, "validate config", cause)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::new("config", format!("read {}", path.display()), e))?;
        Self::parse(&text).map_err(|e| CliError { operation: format!("parse {}", path.display()), ..e })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::new("config", "parse", e.message()))
    }

    /// Canonical TOML of the effective configuration, the input of the
    /// manifest hash.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
