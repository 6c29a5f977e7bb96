//! Ground-truth generators: ledgers with injected vehicle pairs, rate
//! tables, and flow panels with a known treatment effect.
//!
//! Every generator is a pure function of its configuration, which carries
//! the seed.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::ingest::{CountryClassification, IncomeGroup, RateTable, TradeRecord, SATOSHI_PER_BTC};
use crate::panel::{week_timestamp, CounterpartyFilter, FlowPanel, Measure, PanelMeta, STIMULUS_EXCLUSIONS};
use crate::CountryCode;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("size space too small: {available} unused sizes for {needed} injected pairs")]
    SizeSpaceExhausted { available: u64, needed: usize },
    #[error("mean exp({0}) overflows")]
    Overflow(f64),
}

type Result<T> = std::result::Result<T, SynthError>;

/// Background trade-size law: popular round sizes plus a log-normal
/// continuous part rounded to whole satoshi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeLaw {
    /// `(size_satoshi, weight)`; weights are relative within the atoms.
    pub atoms: Vec<(u64, f64)>,
    /// Probability a background trade takes an atom size.
    pub atom_share: f64,
    /// Parameters of `ln(size_satoshi)` for the continuous part.
    pub log_mean: f64,
    pub log_sd: f64,
    /// Continuous draws are clamped to `[min_satoshi, max_satoshi]`.
    pub min_satoshi: u64,
    pub max_satoshi: u64,
}

impl Default for SizeLaw {
    fn default() -> Self {
        SizeLaw {
            atoms: vec![(100_000, 0.5), (1_000_000, 0.35), (10_000_000, 0.15)],
            atom_share: 0.2,
            // Median around 0.005 BTC.
            log_mean: (500_000f64).ln(),
            log_sd: 1.2,
            min_satoshi: 1_000,
            max_satoshi: 100 * SATOSHI_PER_BTC,
        }
    }
}

/// Time gap between the legs of an injected pair, uniform on
/// `[min_seconds, max_seconds]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapLaw {
    pub min_seconds: i64,
    pub max_seconds: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerConfig {
    pub n_background: usize,
    pub n_injected_pairs: usize,
    /// Country weights for trade participants; must sum to 1.
    pub country_mix: Vec<(CountryCode, f64)>,
    pub size_law: SizeLaw,
    pub gap_law: GapLaw,
    /// Matching window the gaps must respect.
    pub window_seconds: i64,
    pub start: i64,
    pub span_seconds: i64,
    pub usd_per_btc: f64,
    pub seed: u64,
}

impl LedgerConfig {
    /// Trades spread over 2020 with a five-hour window.
    pub fn new(n_background: usize, n_injected_pairs: usize, seed: u64) -> Self {
        let mix = [("US", 0.4), ("NG", 0.2), ("GB", 0.1), ("GH", 0.1), ("IN", 0.1), ("HK", 0.05), ("KE", 0.05)];
        LedgerConfig {
            n_background,
            n_injected_pairs,
            country_mix: mix.iter().map(|(c, w)| (c.parse().expect("valid code"), *w)).collect(),
            size_law: SizeLaw::default(),
            gap_law: GapLaw { min_seconds: 60, max_seconds: 4 * 3600 },
            window_seconds: 18_000,
            start: 1_577_836_800,
            span_seconds: 366 * 86_400,
            usd_per_btc: 7_200.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        let total: f64 = self.country_mix.iter().map(|c| c.1).sum();
        if self.country_mix.is_empty() || self.country_mix.iter().any(|c| c.1.is_nan() || c.1 < 0.0) || (total - 1.0).abs() > 1e-9 {
            return bad(format!("country weights must be non-negative and sum to 1, got {total}"));
        }
        let law = &self.size_law;
        if !(0.0..=1.0).contains(&law.atom_share) || (law.atom_share > 0.0 && law.atoms.is_empty()) {
            return bad("atom share must lie in [0, 1] and needs atoms when positive".into());
        }
        if law.atoms.iter().any(|a| a.0 == 0 || a.1.is_nan() || a.1 < 0.0) || (law.atom_share > 0.0 && law.atoms.iter().all(|a| a.1 == 0.0)) {
            return bad("atoms need positive sizes and non-negative weights".into());
        }
        if law.min_satoshi == 0 || law.min_satoshi > law.max_satoshi || !(law.log_sd.is_finite() && law.log_sd > 0.0) || !law.log_mean.is_finite() {
            return bad("continuous size law is degenerate".into());
        }
        let g = self.gap_law;
        if g.min_seconds < 0 || g.min_seconds > g.max_seconds || g.max_seconds > self.window_seconds {
            return bad(format!("gaps must satisfy 0 ≤ min ≤ max ≤ window ({})", self.window_seconds));
        }
        if self.span_seconds <= g.max_seconds {
            return bad("span must exceed the largest gap".into());
        }
        if !(self.usd_per_btc.is_finite() && self.usd_per_btc > 0.0) {
            return bad("price must be positive".into());
        }
        Ok(())
    }
}

/// One injected pair, identified by its leg IDs in the generated ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedPair {
    pub leg1_id: String,
    pub leg2_id: String,
    pub size_satoshi: u64,
    pub origin: CountryCode,
    pub destination: CountryCode,
}

const PAYMENT_METHODS: [&str; 4] = ["Bank Transfer", "Gift Card", "Mobile Money", "Cash Deposit"];

struct Draft {
    ts: i64,
    size: u64,
    user: CountryCode,
    advertiser: CountryCode,
    method: &'static str,
    pair: Option<(usize, u8)>,
}

/// Generates a ledger sorted by time with zero-padded, time-ordered IDs.
/// Injected pairs use sizes that occur nowhere else in the ledger.
pub fn gen_ledger(config: &LedgerConfig) -> Result<(Vec<TradeRecord>, Vec<InjectedPair>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let countries: Vec<CountryCode> = config.country_mix.iter().map(|c| c.0).collect();
    let country_law = WeightedIndex::new(config.country_mix.iter().map(|c| c.1)).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let law = &config.size_law;
    let atom_law = if law.atom_share > 0.0 {
        Some(WeightedIndex::new(law.atoms.iter().map(|a| a.1)).map_err(|e| SynthError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let continuous = LogNormal::new(law.log_mean, law.log_sd).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let draw_continuous = |rng: &mut ChaCha8Rng| -> u64 {
        let v: f64 = continuous.sample(rng);
        (v.round() as u64).clamp(law.min_satoshi, law.max_satoshi)
    };
    let person = |rng: &mut ChaCha8Rng| countries[country_law.sample(rng)];

    let mut drafts = Vec::with_capacity(config.n_background + 2 * config.n_injected_pairs);
    for _ in 0..config.n_background {
        let size = match &atom_law {
            Some(a) if rng.random_bool(law.atom_share) => law.atoms[a.sample(&mut rng)].0,
            _ => draw_continuous(&mut rng),
        };
        drafts.push(Draft {
            ts: config.start + rng.random_range(0..config.span_seconds),
            size,
            user: person(&mut rng),
            advertiser: person(&mut rng),
            method: PAYMENT_METHODS[rng.random_range(0..PAYMENT_METHODS.len())],
            pair: None,
        });
    }

    let mut used: HashSet<u64> = drafts.iter().map(|d| d.size).collect();
    let atoms_in_range = law.atoms.iter().filter(|a| (law.min_satoshi..=law.max_satoshi).contains(&a.0)).map(|a| a.0);
    let taken: BTreeSet<u64> = used.iter().copied().filter(|s| (law.min_satoshi..=law.max_satoshi).contains(s)).chain(atoms_in_range).collect();
    let available = (law.max_satoshi - law.min_satoshi + 1) - taken.len() as u64;
    if available < config.n_injected_pairs as u64 {
        return Err(SynthError::SizeSpaceExhausted { available, needed: config.n_injected_pairs });
    }
    used.extend(law.atoms.iter().map(|a| a.0));
    for k in 0..config.n_injected_pairs {
        // Rejection from the continuous law, falling back to a uniform scan
        // when the law keeps hitting taken sizes.
        let mut size = None;
        for _ in 0..1_000 {
            let s = draw_continuous(&mut rng);
            if !used.contains(&s) {
                size = Some(s);
                break;
            }
        }
        let size = match size {
            Some(s) => s,
            None => {
                let span = law.max_satoshi - law.min_satoshi + 1;
                let offset = rng.random_range(0..span);
                (0..span)
                    .map(|d| law.min_satoshi + (offset + d) % span)
                    .find(|s| !used.contains(s))
                    .ok_or(SynthError::SizeSpaceExhausted { available: 0, needed: config.n_injected_pairs })?
            }
        };
        used.insert(size);
        let gap = rng.random_range(config.gap_law.min_seconds..=config.gap_law.max_seconds);
        let t1 = config.start + rng.random_range(0..config.span_seconds - gap);
        let (origin, destination) = (person(&mut rng), person(&mut rng));
        for (leg, ts, user) in [(0u8, t1, origin), (1u8, t1 + gap, destination)] {
            drafts.push(Draft {
                ts,
                size,
                user,
                advertiser: person(&mut rng),
                method: PAYMENT_METHODS[rng.random_range(0..PAYMENT_METHODS.len())],
                pair: Some((k, leg)),
            });
        }
    }

    // Stable sort keeps draw order among equal timestamps, so the first leg
    // of a zero-gap pair still precedes the second.
    drafts.sort_by_key(|d| d.ts);
    let width = drafts.len().max(1).to_string().len().max(8);
    let mut legs = vec![(String::new(), String::new()); config.n_injected_pairs];
    let mut ledger = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.iter().enumerate() {
        let id = format!("T{i:0width$}");
        if let Some((k, leg)) = d.pair {
            if leg == 0 {
                legs[k].0 = id.clone();
            } else {
                legs[k].1 = id.clone();
            }
        }
        ledger.push(TradeRecord {
            trade_id: id,
            timestamp: d.ts,
            size_satoshi: d.size,
            fiat_currency: "USD".into(),
            fiat_price: config.usd_per_btc,
            user_country: Some(d.user),
            advertiser_country: Some(d.advertiser),
            payment_method: d.method.into(),
        });
    }
    let mut truth: Vec<InjectedPair> = Vec::with_capacity(config.n_injected_pairs);
    let mut pair_meta = vec![None; config.n_injected_pairs];
    for d in &drafts {
        if let Some((k, 0)) = d.pair {
            pair_meta[k] = Some((d.size, d.user));
        }
    }
    for d in &drafts {
        if let Some((k, 1)) = d.pair {
            let (size, origin) = pair_meta[k].expect("first leg recorded");
            truth.push(InjectedPair { leg1_id: legs[k].0.clone(), leg2_id: legs[k].1.clone(), size_satoshi: size, origin, destination: d.user });
        }
    }
    truth.sort_by(|a, b| a.leg1_id.cmp(&b.leg1_id));
    Ok((ledger, truth))
}

/// Hourly-or-coarser rate table following a geometric random walk.
pub fn gen_rates(start: i64, end: i64, step_seconds: i64, initial_usd_per_btc: f64, step_vol: f64, seed: u64) -> Result<RateTable> {
    if step_seconds <= 0 || end < start || !(initial_usd_per_btc.is_finite() && initial_usd_per_btc > 0.0) || !(step_vol.is_finite() && step_vol >= 0.0) {
        return Err(SynthError::InvalidConfig("rate path needs a positive step, start ≤ end and a positive price".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shock = Normal::new(0.0, step_vol).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let mut entries = Vec::new();
    let mut log_price = initial_usd_per_btc.ln();
    let mut ts = start;
    while ts <= end {
        entries.push((ts, (log_price.exp() * 100.0).round() / 100.0));
        log_price += shock.sample(&mut rng);
        ts += step_seconds;
    }
    RateTable::new(entries).map_err(SynthError::InvalidConfig)
}

pub const TRUTH_HEADER: &str = "leg1_id,leg2_id,size_satoshi,origin,destination";

pub fn write_truth<W: Write>(mut w: W, pairs: &[InjectedPair]) -> std::io::Result<()> {
    writeln!(w, "{TRUTH_HEADER}")?;
    for p in pairs {
        writeln!(w, "{},{},{},{},{}", p.leg1_id, p.leg2_id, p.size_satoshi, p.origin, p.destination)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Noise {
    None,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDgp {
    pub unit_effects: Vec<f64>,
    pub week_effects: Vec<f64>,
    pub true_beta: f64,
    pub noise: Noise,
    pub treated: usize,
    /// Index of the first treated week.
    pub treatment_week: usize,
    /// Sunday starting the first week.
    pub first_week: NaiveDate,
    pub seed: u64,
}

impl PanelDgp {
    /// Effects drawn from the seed: unit log-levels spread around
    /// `log_level`, a smooth seasonal week profile plus small shocks. The
    /// treated unit sits at the top of the level range.
    pub fn random(n_units: usize, n_weeks: usize, log_level: f64, true_beta: f64, noise: Noise, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fef_fec7);
        let unit_sd = Normal::new(0.0, 1.0).expect("valid");
        let mut unit_effects: Vec<f64> = (0..n_units).map(|_| log_level + unit_sd.sample(&mut rng)).collect();
        if let Some(top) = unit_effects.iter().copied().reduce(f64::max) {
            unit_effects[0] = top + 0.5;
        }
        let week_effects = (0..n_weeks)
            .map(|t| 0.15 * (t as f64 * 0.4).sin() + rng.random_range(-0.05..0.05))
            .collect();
        PanelDgp {
            unit_effects,
            week_effects,
            true_beta,
            noise,
            treated: 0,
            treatment_week: n_weeks * 2 / 3,
            first_week: NaiveDate::from_ymd_opt(2020, 1, 5).expect("valid date"),
            seed,
        }
    }

    pub fn n_units(&self) -> usize {
        self.unit_effects.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.week_effects.len()
    }

    pub fn weeks(&self) -> Vec<NaiveDate> {
        (0..self.n_weeks()).map(|k| self.first_week + chrono::Days::new(7 * k as u64)).collect()
    }

    /// `exp(a_i + b_t + β·D_it)`.
    pub fn mean(&self, unit: usize, week: usize) -> f64 {
        let d = if unit == self.treated && week >= self.treatment_week { self.true_beta } else { 0.0 };
        (self.unit_effects[unit] + self.week_effects[week] + d).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units() < 2 || self.n_weeks() < 2 {
            return Err(SynthError::InvalidConfig("need at least 2 units and 2 weeks".into()));
        }
        if self.treated >= self.n_units() {
            return Err(SynthError::InvalidConfig(format!("treated unit {} out of range", self.treated)));
        }
        if self.treatment_week == 0 || self.treatment_week >= self.n_weeks() {
            return Err(SynthError::InvalidConfig(format!("treatment week {} leaves no pre or post period", self.treatment_week)));
        }
        if self.first_week.weekday() != chrono::Weekday::Sun {
            return Err(SynthError::InvalidConfig("first week must start on a Sunday".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelTruth {
    pub true_beta: f64,
    pub treated: CountryCode,
    pub treatment_week: NaiveDate,
    pub unit_effects: Vec<(CountryCode, f64)>,
    pub week_effects: Vec<(NaiveDate, f64)>,
}

/// Panel labels: the treated unit is `US`; controls take high-income
/// codes outside the stimulus exclusions, then unused two-letter codes.
pub fn unit_labels(n_units: usize, treated: usize) -> Vec<CountryCode> {
    let us: CountryCode = "US".parse().expect("valid");
    let classification = CountryClassification::shipped();
    let excluded: Vec<CountryCode> = STIMULUS_EXCLUSIONS.iter().map(|c| c.parse().expect("valid")).collect();
    let high = classification
        .iter()
        .filter(|(c, info)| info.income_group == IncomeGroup::High && *c != us && !excluded.contains(c))
        .map(|(c, _)| c);
    let spare = (b'A'..=b'Z')
        .flat_map(|a| (b'A'..=b'Z').map(move |b| [a, b]))
        .filter_map(|ab| std::str::from_utf8(&ab).ok().and_then(|s| s.parse::<CountryCode>().ok()))
        .filter(|c| classification.lookup(*c).is_err() && !excluded.contains(c));
    let mut controls = high.chain(spare);
    (0..n_units).map(|u| if u == treated { us } else { controls.next().expect("enough codes") }).collect()
}

/// Outflow panel with mean `exp(a_i + b_t + β·D_it)`, exact or Poisson-drawn.
pub fn gen_panel(dgp: &PanelDgp) -> Result<(FlowPanel, PanelTruth)> {
    dgp.validate()?;
    let weeks = dgp.weeks();
    let labels = unit_labels(dgp.n_units(), dgp.treated);
    let meta = PanelMeta {
        window_start: weeks[0],
        window_end: *weeks.last().expect("nonempty"),
        control_rule: "synthetic".into(),
    };
    let mut panel = FlowPanel::zeros(labels.clone(), weeks.clone(), Measure::OutflowUsd, CounterpartyFilter::All, meta);
    let mut rng = ChaCha8Rng::seed_from_u64(dgp.seed);
    for u in 0..dgp.n_units() {
        for t in 0..dgp.n_weeks() {
            let mu = dgp.mean(u, t);
            if !mu.is_finite() {
                return Err(SynthError::Overflow(mu.ln()));
            }
            let y = match dgp.noise {
                Noise::None => mu,
                Noise::Poisson if mu == 0.0 => 0.0,
                Noise::Poisson => Poisson::new(mu).map_err(|_| SynthError::Overflow(mu.ln()))?.sample(&mut rng),
            };
            panel.set(u, t, Some(y));
        }
    }
    let truth = PanelTruth {
        true_beta: dgp.true_beta,
        treated: labels[dgp.treated],
        treatment_week: weeks[dgp.treatment_week],
        unit_effects: labels.iter().copied().zip(dgp.unit_effects.iter().copied()).collect(),
        week_effects: weeks.iter().copied().zip(dgp.week_effects.iter().copied()).collect(),
    };
    Ok((panel, truth))
}

/// Truth sidecar for a generated panel: `key,value` lines.
pub fn write_panel_truth<W: Write>(mut w: W, truth: &PanelTruth) -> std::io::Result<()> {
    writeln!(w, "key,value")?;
    writeln!(w, "true_beta,{}", truth.true_beta)?;
    writeln!(w, "treated,{}", truth.treated)?;
    writeln!(w, "treatment_week,{}", truth.treatment_week)?;
    for (c, a) in &truth.unit_effects {
        writeln!(w, "unit_effect:{c},{a}")?;
    }
    for (wk, b) in &truth.week_effects {
        writeln!(w, "week_effect:{wk},{b}")?;
    }
    Ok(())
}

/// Unix timestamp of a week's Sunday, for placing synthetic trades.
pub fn week_start_timestamp(week: NaiveDate) -> i64 {
    week_timestamp(week)
}
