//! Ledger, USD/BTC rate-table and country-classification parsing.
//!
//! Trade sizes are carried as integer satoshi end to end. Equal-size matching
//! compares sizes for exact equality, so no float ever sits between the file
//! and the matcher.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::CountryCode;

pub const SATOSHI_PER_BTC: u64 = 100_000_000;

pub const LEDGER_HEADER: [&str; 8] = [
    "trade_id",
    "timestamp_iso8601",
    "size_satoshi",
    "fiat_currency",
    "fiat_price",
    "user_country",
    "advertiser_country",
    "payment_method",
];
pub const RATE_HEADER: [&str; 2] = ["timestamp_iso8601", "usd_per_btc"];
pub const CLASSIFICATION_HEADER: [&str; 4] = ["country_code", "country_name", "income_group", "oecd"];

const SHIPPED_CLASSIFICATION: &str = include_str!("../data/classification.csv");

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: duplicate trade_id {trade_id:?}")]
    DuplicateTradeId { line: u64, trade_id: String },
    #[error("line {line}: duplicate country entry {code}")]
    DuplicateCountry { line: u64, code: CountryCode },
    #[error("unknown country code {0}")]
    UnknownCountry(CountryCode),
    #[error("timestamp {0} precedes the first rate-table entry")]
    RateNotCovered(i64),
    #[error("trade size must be positive")]
    ZeroSize,
}

type Result<T> = std::result::Result<T, IngestError>;

/// One exchange transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub trade_id: String,
    /// UTC seconds since the Unix epoch.
    pub timestamp: i64,
    pub size_satoshi: u64,
    pub fiat_currency: String,
    /// Fiat per 1 BTC.
    pub fiat_price: f64,
    /// `None` when the source row left the field empty.
    pub user_country: Option<CountryCode>,
    pub advertiser_country: Option<CountryCode>,
    pub payment_method: String,
}

/// Parses a UTC timestamp. Accepts RFC 3339, naive `YYYY-MM-DD[T ]HH:MM[:SS]`
/// (taken as UTC), and the `M/D/YYYY H:MM` display form used in trade dumps.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    const NAIVE: [&str; 6] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
        "%m/%d/%Y %H:%M:%S",
        "%m/%d/%Y %H:%M",
    ];
    for fmt in NAIVE {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// Canonical timestamp rendering, `YYYY-MM-DDTHH:MM:SSZ`.
pub fn format_timestamp(ts: i64) -> String {
    match DateTime::<Utc>::from_timestamp(ts, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => ts.to_string(),
    }
}

/// Parses a trade size. A bare integer is read as satoshi; a decimal (with an
/// optional trailing `BTC`) is read as bitcoin and converted exactly.
pub fn parse_size_satoshi(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim();
    let t = t
        .strip_suffix("BTC")
        .or_else(|| t.strip_suffix("btc"))
        .map(str::trim_end)
        .unwrap_or(t);
    if t.is_empty() {
        return Err("empty size".into());
    }
    let sat = match t.split_once('.') {
        None => {
            if !t.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("invalid size {s:?}"));
            }
            t.parse::<u64>().map_err(|e| format!("invalid size {s:?}: {e}"))?
        }
        Some((whole, frac)) => {
            let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
            if (whole.is_empty() && frac.is_empty()) || !digits_ok(whole) || !digits_ok(frac) {
                return Err(format!("invalid size {s:?}"));
            }
            if frac.len() > 8 && frac[8..].bytes().any(|b| b != b'0') {
                return Err(format!("size {s:?} is finer than one satoshi"));
            }
            let frac8 = &frac[..frac.len().min(8)];
            let mut frac_sat: u64 = if frac8.is_empty() { 0 } else { frac8.parse().unwrap() };
            for _ in frac8.len()..8 {
                frac_sat *= 10;
            }
            let whole_btc: u64 = if whole.is_empty() {
                0
            } else {
                whole.parse().map_err(|e| format!("invalid size {s:?}: {e}"))?
            };
            whole_btc
                .checked_mul(SATOSHI_PER_BTC)
                .and_then(|w| w.checked_add(frac_sat))
                .ok_or_else(|| format!("size {s:?} overflows"))?
        }
    };
    if sat == 0 {
        return Err("size must be positive".into());
    }
    Ok(sat)
}

fn parse_optional_country(s: &str) -> std::result::Result<Option<CountryCode>, String> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e: crate::CountryCodeError| e.to_string())
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn csv_error(e: csv::Error) -> IngestError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    IngestError::Malformed { line, reason: e.to_string() }
}

/// Iterates the data rows of a headed CSV, checking the header and the field
/// count of every row. Yields `(line, record)`.
fn headed_rows<R: Read>(
    r: R,
    header: &[&str],
) -> Result<impl Iterator<Item = Result<(u64, csv::StringRecord)>>> {
    let mut records = csv_reader(r).into_records();
    let expected = header.len();
    match records.next() {
        None => {}
        Some(first) => {
            let first = first.map_err(csv_error)?;
            let got: Vec<&str> = first.iter().collect();
            if got.len() != expected || got.iter().zip(header).any(|(a, b)| a != b) {
                return Err(IngestError::Malformed {
                    line: 1,
                    reason: format!("expected header {:?}, found {:?}", header.join(","), got.join(",")),
                });
            }
        }
    }
    Ok(records.filter_map(move |rec| match rec {
        Err(e) => Some(Err(csv_error(e))),
        Ok(rec) => {
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() == 1 && rec[0].is_empty() {
                return None;
            }
            if rec.len() != expected {
                return Some(Err(IngestError::Malformed {
                    line,
                    reason: format!("expected {expected} fields, found {}", rec.len()),
                }));
            }
            Some(Ok((line, rec)))
        }
    }))
}

pub fn parse_ledger(path: impl AsRef<Path>) -> Result<Vec<TradeRecord>> {
    parse_ledger_reader(open(path.as_ref())?)
}

/// Reads a ledger and returns its trades sorted by `(timestamp, trade_id)`.
pub fn parse_ledger_reader<R: Read>(r: R) -> Result<Vec<TradeRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in headed_rows(r, &LEDGER_HEADER)? {
        let (line, rec) = row?;
        let bad = |reason: String| IngestError::Malformed { line, reason };
        let trade_id = rec[0].to_string();
        if trade_id.is_empty() {
            return Err(bad("empty trade_id".into()));
        }
        let timestamp = parse_timestamp(&rec[1]).ok_or_else(|| bad(format!("unparseable timestamp {:?}", &rec[1])))?;
        let size_satoshi = parse_size_satoshi(&rec[2]).map_err(bad)?;
        let fiat_price: f64 = rec[4]
            .parse()
            .map_err(|_| bad(format!("unparseable fiat_price {:?}", &rec[4])))?;
        if !(fiat_price.is_finite() && fiat_price > 0.0) {
            return Err(bad(format!("fiat_price must be positive, found {:?}", &rec[4])));
        }
        let user_country = parse_optional_country(&rec[5]).map_err(bad)?;
        let advertiser_country = parse_optional_country(&rec[6]).map_err(bad)?;
        if !seen.insert(trade_id.clone()) {
            return Err(IngestError::DuplicateTradeId { line, trade_id });
        }
        out.push(TradeRecord {
            trade_id,
            timestamp,
            size_satoshi,
            fiat_currency: rec[3].to_string(),
            fiat_price,
            user_country,
            advertiser_country,
            payment_method: rec[7].to_string(),
        });
    }
    out.sort_by(|a, b| (a.timestamp, &a.trade_id).cmp(&(b.timestamp, &b.trade_id)));
    Ok(out)
}

pub fn write_ledger<W: Write>(w: W, trades: &[TradeRecord]) -> std::io::Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(LEDGER_HEADER)?;
    for t in trades {
        let opt = |c: Option<CountryCode>| c.map(|c| c.to_string()).unwrap_or_default();
        wtr.write_record([
            t.trade_id.as_str(),
            &format_timestamp(t.timestamp),
            &t.size_satoshi.to_string(),
            &t.fiat_currency,
            &t.fiat_price.to_string(),
            &opt(t.user_country),
            &opt(t.advertiser_country),
            &t.payment_method,
        ])?;
    }
    wtr.flush()
}

/// USD per BTC over time, looked up last-observation-carried-forward.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateTable {
    entries: Vec<(i64, f64)>,
}

impl RateTable {
    /// Builds a table from `(timestamp, usd_per_btc)` entries, which must be
    /// strictly increasing in time with positive rates.
    pub fn new(entries: Vec<(i64, f64)>) -> std::result::Result<Self, String> {
        for (i, &(ts, rate)) in entries.iter().enumerate() {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(format!("rate at {} must be positive", format_timestamp(ts)));
            }
            if i > 0 && entries[i - 1].0 >= ts {
                return Err(format!("timestamps not strictly increasing at {}", format_timestamp(ts)));
            }
        }
        Ok(RateTable { entries })
    }

    /// A single rate valid from `from` onwards.
    pub fn constant(from: i64, usd_per_btc: f64) -> Self {
        RateTable::new(vec![(from, usd_per_btc)]).expect("positive constant rate")
    }

    pub fn entries(&self) -> &[(i64, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rate of the latest entry at or before `ts`.
    pub fn rate_at(&self, ts: i64) -> Result<f64> {
        let idx = self.entries.partition_point(|&(t, _)| t <= ts);
        if idx == 0 {
            return Err(IngestError::RateNotCovered(ts));
        }
        Ok(self.entries[idx - 1].1)
    }

    /// Mean of the LOCF rate sampled at every entry inside `[from, to)`,
    /// plus the carried-forward rate at `from` itself.
    pub fn mean_rate(&self, from: i64, to: i64) -> Result<f64> {
        let start = self.rate_at(from)?;
        let lo = self.entries.partition_point(|&(t, _)| t <= from);
        let hi = self.entries.partition_point(|&(t, _)| t < to);
        let inside = &self.entries[lo..hi.max(lo)];
        let sum: f64 = start + inside.iter().map(|e| e.1).sum::<f64>();
        Ok(sum / (1 + inside.len()) as f64)
    }
}

/// USD value of `size_satoshi` at the rate in force at `timestamp`.
pub fn usd_value(size_satoshi: u64, timestamp: i64, rates: &RateTable) -> Result<f64> {
    if size_satoshi == 0 {
        return Err(IngestError::ZeroSize);
    }
    let rate = rates.rate_at(timestamp)?;
    Ok(size_satoshi as f64 * rate / SATOSHI_PER_BTC as f64)
}

pub fn parse_rates(path: impl AsRef<Path>) -> Result<RateTable> {
    parse_rates_reader(open(path.as_ref())?)
}

pub fn parse_rates_reader<R: Read>(r: R) -> Result<RateTable> {
    let mut entries = Vec::new();
    let mut last_line = 0;
    for row in headed_rows(r, &RATE_HEADER)? {
        let (line, rec) = row?;
        last_line = line;
        let bad = |reason: String| IngestError::Malformed { line, reason };
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| bad(format!("unparseable timestamp {:?}", &rec[0])))?;
        let rate: f64 = rec[1].parse().map_err(|_| bad(format!("unparseable rate {:?}", &rec[1])))?;
        if let Some(&(prev, _)) = entries.last() {
            if prev >= ts {
                return Err(bad("rate timestamps must be strictly increasing".into()));
            }
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(bad(format!("rate must be positive, found {:?}", &rec[1])));
        }
        entries.push((ts, rate));
    }
    RateTable::new(entries).map_err(|reason| IngestError::Malformed { line: last_line, reason })
}

pub fn write_rates<W: Write>(mut w: W, rates: &RateTable) -> std::io::Result<()> {
    writeln!(w, "{}", RATE_HEADER.join(","))?;
    for &(ts, rate) in rates.entries() {
        writeln!(w, "{},{}", format_timestamp(ts), rate)?;
    }
    Ok(())
}

/// World Bank income group. Panels pool the two middle groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IncomeGroup {
    High,
    UpperMiddle,
    LowerMiddle,
    Low,
}

impl IncomeGroup {
    pub fn is_middle(self) -> bool {
        matches!(self, IncomeGroup::UpperMiddle | IncomeGroup::LowerMiddle)
    }
}

impl FromStr for IncomeGroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match norm.as_str() {
            "high" | "highincome" => Ok(IncomeGroup::High),
            "uppermiddle" | "uppermiddleincome" => Ok(IncomeGroup::UpperMiddle),
            "lowermiddle" | "lowermiddleincome" => Ok(IncomeGroup::LowerMiddle),
            "low" | "lowincome" => Ok(IncomeGroup::Low),
            _ => Err(format!("unknown income group {s:?}")),
        }
    }
}

impl fmt::Display for IncomeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IncomeGroup::High => "High",
            IncomeGroup::UpperMiddle => "UpperMiddle",
            IncomeGroup::LowerMiddle => "LowerMiddle",
            IncomeGroup::Low => "Low",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountryInfo {
    pub name: String,
    pub income_group: IncomeGroup,
    pub oecd_member: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CountryClassification {
    countries: BTreeMap<CountryCode, CountryInfo>,
}

impl CountryClassification {
    /// The World Bank grouping shipped with the crate.
    pub fn shipped() -> Self {
        parse_classification_reader(SHIPPED_CLASSIFICATION.as_bytes()).expect("shipped classification is well formed")
    }

    pub fn lookup(&self, code: CountryCode) -> Result<&CountryInfo> {
        self.countries.get(&code).ok_or(IngestError::UnknownCountry(code))
    }

    pub fn income_group(&self, code: CountryCode) -> Result<IncomeGroup> {
        self.lookup(code).map(|c| c.income_group)
    }

    /// Case-insensitive lookup by display name.
    pub fn by_name(&self, name: &str) -> Option<(CountryCode, &CountryInfo)> {
        self.countries
            .iter()
            .find(|(_, info)| info.name.eq_ignore_ascii_case(name.trim()))
            .map(|(c, i)| (*c, i))
    }

    pub fn len(&self) -> usize {
        self.countries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.countries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CountryCode, &CountryInfo)> {
        self.countries.iter().map(|(c, i)| (*c, i))
    }

    pub fn insert(&mut self, code: CountryCode, info: CountryInfo) -> Option<CountryInfo> {
        self.countries.insert(code, info)
    }
}

pub fn load_classification(path: impl AsRef<Path>) -> Result<CountryClassification> {
    parse_classification_reader(open(path.as_ref())?)
}

pub fn parse_classification_reader<R: Read>(r: R) -> Result<CountryClassification> {
    let mut out = CountryClassification::default();
    for row in headed_rows(r, &CLASSIFICATION_HEADER)? {
        let (line, rec) = row?;
        let bad = |reason: String| IngestError::Malformed { line, reason };
        let code: CountryCode = rec[0].parse().map_err(|e: crate::CountryCodeError| bad(e.to_string()))?;
        let income_group: IncomeGroup = rec[2].parse().map_err(bad)?;
        let oecd_member = match rec[3].to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => return Err(bad(format!("oecd flag must be true/false, found {other:?}"))),
        };
        let info = CountryInfo { name: rec[1].to_string(), income_group, oecd_member };
        if out.insert(code, info).is_some() {
            return Err(IngestError::DuplicateCountry { line, code });
        }
    }
    Ok(out)
}
