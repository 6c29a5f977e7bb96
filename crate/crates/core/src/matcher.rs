//! Equal-size trade pairing.
//!
//! A trade `i` of size `x_i` is paired with the earliest later, still unpaired
//! trade of exactly the same satoshi size inside the time window. The pair is
//! kept as a crypto-vehicle trade when the chance of seeing such a match at
//! random, `1 - (1 - p_i)^N_i`, is at most `alpha`. Here `p_i` is the smoothed
//! frequency of `x_i` among all trades before `i` and `N_i` counts every trade
//! (of any size) in the window after `i`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{self, format_timestamp, parse_timestamp, IngestError, RateTable, TradeRecord};
use crate::CountryCode;

pub const MATCH_HEADER: [&str; 9] = [
    "leg1_id",
    "leg2_id",
    "timestamp1",
    "timestamp2",
    "size_satoshi",
    "p_value",
    "origin",
    "destination",
    "usd_value",
];

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("ledger is not sorted by (timestamp, trade_id) at position {0}")]
    Unsorted(usize),
    #[error("size distribution is empty")]
    EmptyDistribution,
    #[error("invalid match parameters: {0}")]
    InvalidParams(String),
    #[error("vehicle {leg1_id}/{leg2_id} lacks a country on one leg")]
    MissingCountry { leg1_id: String, leg2_id: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

type Result<T> = std::result::Result<T, MatchError>;

/// Running histogram of trade sizes seen so far in a forward scan.
#[derive(Debug, Clone, Default)]
pub struct SizeDistribution {
    counts: HashMap<u64, u64>,
    total: u64,
}

impl SizeDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, size_satoshi: u64) {
        *self.counts.entry(size_satoshi).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn count(&self, size_satoshi: u64) -> u64 {
        self.counts.get(&size_satoshi).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub window_seconds: i64,
    pub alpha: f64,
    /// Number of leading trades that only feed the size distribution.
    pub burn_in: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams { window_seconds: 5 * 3600, alpha: 0.05, burn_in: 1000 }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_seconds <= 0 {
            return Err(MatchError::InvalidParams(format!(
                "window_seconds must be positive, got {}",
                self.window_seconds
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MatchError::InvalidParams(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// A matched pair of equal-size trades read as one fiat-to-fiat transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrade {
    pub leg1_id: String,
    pub leg2_id: String,
    pub timestamp1: i64,
    pub timestamp2: i64,
    pub size_satoshi: u64,
    pub p_value: f64,
    /// User country on the earlier leg.
    pub origin: Option<CountryCode>,
    /// User country on the later leg.
    pub destination: Option<CountryCode>,
    pub usd_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowClass {
    Domestic(CountryCode),
    CrossBorder { origin: CountryCode, destination: CountryCode },
}

/// `1 - (1 - p)^n`: chance that at least one of `n` later trades repeats a
/// size of probability `p`.
pub fn match_p_value(p: f64, n_window: u64) -> f64 {
    if n_window == 0 || p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let v = -f64::exp_m1(n_window as f64 * f64::ln_1p(-p));
    v.clamp(0.0, 1.0)
}

/// Add-one smoothed relative frequency `(count + 1) / (total + 1)`.
pub fn size_probability(size_satoshi: u64, dist: &SizeDistribution) -> Result<f64> {
    if dist.total == 0 {
        return Err(MatchError::EmptyDistribution);
    }
    let p = (dist.count(size_satoshi) + 1) as f64 / (dist.total + 1) as f64;
    Ok(p.min(1.0))
}

fn check_sorted(ledger: &[TradeRecord]) -> Result<()> {
    for (i, w) in ledger.windows(2).enumerate() {
        if (w[0].timestamp, &w[0].trade_id) > (w[1].timestamp, &w[1].trade_id) {
            return Err(MatchError::Unsorted(i + 1));
        }
    }
    Ok(())
}

/// Single forward pass over a time-sorted ledger.
///
/// Output is ordered by the position of the first leg.
pub fn scan_matches(ledger: &[TradeRecord], params: &MatchParams, rates: &RateTable) -> Result<Vec<VehicleTrade>> {
    params.validate()?;
    check_sorted(ledger)?;
    let n = ledger.len();

    // next_same[i]: next position holding the same size, or n.
    let mut next_same = vec![n; n];
    let mut last_seen: HashMap<u64, usize> = HashMap::new();
    for i in (0..n).rev() {
        if let Some(&j) = last_seen.get(&ledger[i].size_satoshi) {
            next_same[i] = j;
        }
        last_seen.insert(ledger[i].size_satoshi, i);
    }
    drop(last_seen);

    let mut matched = vec![false; n];
    let mut dist = SizeDistribution::new();
    let mut out = Vec::new();
    let mut hi = 0usize;
    for i in 0..n {
        let t = &ledger[i];
        let limit = t.timestamp.saturating_add(params.window_seconds);
        hi = hi.max(i + 1);
        while hi < n && ledger[hi].timestamp <= limit {
            hi += 1;
        }
        if i >= params.burn_in && !matched[i] && dist.total > 0 {
            let n_window = (hi - i - 1) as u64;
            let p_value = match_p_value(size_probability(t.size_satoshi, &dist)?, n_window);
            if p_value <= params.alpha {
                let mut j = next_same[i];
                while j < hi && matched[j] {
                    j = next_same[j];
                }
                if j < hi {
                    matched[i] = true;
                    matched[j] = true;
                    out.push(vehicle(t, &ledger[j], p_value, rates)?);
                }
            }
        }
        dist.observe(t.size_satoshi);
    }
    Ok(out)
}

pub(crate) fn vehicle(leg1: &TradeRecord, leg2: &TradeRecord, p_value: f64, rates: &RateTable) -> Result<VehicleTrade> {
    Ok(VehicleTrade {
        leg1_id: leg1.trade_id.clone(),
        leg2_id: leg2.trade_id.clone(),
        timestamp1: leg1.timestamp,
        timestamp2: leg2.timestamp,
        size_satoshi: leg1.size_satoshi,
        p_value,
        origin: leg1.user_country,
        destination: leg2.user_country,
        usd_value: ingest::usd_value(leg1.size_satoshi, leg1.timestamp, rates)?,
    })
}

pub fn classify_flow(v: &VehicleTrade) -> Result<FlowClass> {
    match (v.origin, v.destination) {
        (Some(o), Some(d)) if o == d => Ok(FlowClass::Domestic(o)),
        (Some(origin), Some(destination)) => Ok(FlowClass::CrossBorder { origin, destination }),
        _ => Err(MatchError::MissingCountry { leg1_id: v.leg1_id.clone(), leg2_id: v.leg2_id.clone() }),
    }
}

pub fn write_matches<W: Write>(w: W, vehicles: &[VehicleTrade]) -> std::io::Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(MATCH_HEADER)?;
    for v in vehicles {
        let opt = |c: Option<CountryCode>| c.map(|c| c.to_string()).unwrap_or_default();
        wtr.write_record([
            v.leg1_id.as_str(),
            &v.leg2_id,
            &format_timestamp(v.timestamp1),
            &format_timestamp(v.timestamp2),
            &v.size_satoshi.to_string(),
            &v.p_value.to_string(),
            &opt(v.origin),
            &opt(v.destination),
            &v.usd_value.to_string(),
        ])?;
    }
    wtr.flush()
}

pub fn parse_matches(path: impl AsRef<Path>) -> std::result::Result<Vec<VehicleTrade>, IngestError> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    parse_matches_reader(f)
}

pub fn parse_matches_reader<R: Read>(r: R) -> std::result::Result<Vec<VehicleTrade>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    let mut header_seen = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| IngestError::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| IngestError::Malformed { line, reason };
        if !header_seen {
            header_seen = true;
            if rec.iter().ne(MATCH_HEADER.iter().copied()) {
                return Err(bad(format!("expected header {:?}", MATCH_HEADER.join(","))));
            }
            continue;
        }
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != MATCH_HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", MATCH_HEADER.len(), rec.len())));
        }
        let ts = |s: &str| parse_timestamp(s).ok_or_else(|| bad(format!("unparseable timestamp {s:?}")));
        let country = |s: &str| -> std::result::Result<Option<CountryCode>, IngestError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e: crate::CountryCodeError| bad(e.to_string()))
            }
        };
        let num = |s: &str, what: &str| -> std::result::Result<f64, IngestError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| bad(format!("invalid {what} {s:?}")))
        };
        let p_value = num(&rec[5], "p_value")?;
        if p_value > 1.0 {
            return Err(bad(format!("p_value {p_value} exceeds 1")));
        }
        out.push(VehicleTrade {
            leg1_id: rec[0].to_string(),
            leg2_id: rec[1].to_string(),
            timestamp1: ts(&rec[2])?,
            timestamp2: ts(&rec[3])?,
            size_satoshi: ingest::parse_size_satoshi(&rec[4]).map_err(bad)?,
            p_value,
            origin: country(&rec[6])?,
            destination: country(&rec[7])?,
            usd_value: num(&rec[8], "usd_value")?,
        });
    }
    Ok(out)
}
