use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cryptoflow::econ::{
    delta_transform, fit_event_study, fit_ols_twfe, fit_poisson_twfe, parse_event_study, write_event_study,
};
use cryptoflow::ingest::{load_classification, parse_ledger, parse_rates, write_ledger, write_rates};
use cryptoflow::matcher::{parse_matches, scan_matches, write_matches};
use cryptoflow::panel::{build_panel, build_size_panel, read_panel, week_start, weeks_in_window, write_panel};
use cryptoflow::sdid::{estimate_sdid, write_effect_path, write_estimate, write_time_weights, write_weights};
use cryptoflow::spillover::{
    counterfactual_from_event_study, default_scenarios, extrapolate, total_spillover_pct, write_scenarios, write_series,
};
use cryptoflow::synth::{gen_ledger, gen_panel, gen_rates, write_panel_truth, write_truth, LedgerConfig, Noise, PanelDgp};
use cryptoflow::{CountryClassification, CounterpartyFilter, FitResult, FlowPanel, SdidConfig, SdidProblem, VehicleTrade};
use serde::Serialize;

use crate::config::{panel_file, RunConfig};
use crate::error::{CliError, Context, Result};

fn write_file(path: PathBuf, module: &'static str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<PathBuf> {
    let op = || format!("write {}", path.display());
    let f = File::create(&path).ctx(module, op)?;
    let mut w = BufWriter::new(f);
    body(&mut w).and_then(|_| w.flush()).ctx(module, op)?;
    Ok(path)
}

fn classification(cfg: &RunConfig) -> Result<CountryClassification> {
    match &cfg.paths.classification {
        Some(p) => load_classification(p).ctx("ingest", || format!("read classification {}", p.display())),
        None => Ok(CountryClassification::shipped()),
    }
}

fn matches(cfg: &RunConfig) -> Result<Vec<VehicleTrade>> {
    let p = cfg.paths.matches();
    parse_matches(&p).ctx("matcher", || format!("read matches {}", p.display()))
}

fn panel(path: &Path) -> Result<FlowPanel> {
    read_panel(path).ctx("panel", || format!("read panel {}", path.display()))
}

fn column_label(f: CounterpartyFilter) -> &'static str {
    match f {
        CounterpartyFilter::All => "All Destinations",
        CounterpartyFilter::Low => "Low-Income",
        CounterpartyFilter::Middle => "Middle-Income",
        CounterpartyFilter::High => "High-Income",
    }
}

pub fn run_match(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let params = cfg.matching.params()?;
    let (lp, rp) = (cfg.paths.ledger(), cfg.paths.rates());
    let ledger = parse_ledger(&lp).ctx("ingest", || format!("read ledger {}", lp.display()))?;
    let rates = parse_rates(&rp).ctx("ingest", || format!("read rates {}", rp.display()))?;
    let found = scan_matches(&ledger, &params, &rates).ctx("matcher", || "scan ledger".into())?;
    Ok(vec![write_file(cfg.paths.out.join("matches.csv"), "matcher", |w| write_matches(w, &found))?])
}

pub fn run_panel(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let specs = cfg.panel.filters()?.into_iter().map(|f| cfg.panel.spec(f)).collect::<Result<Vec<_>>>()?;
    let classes = classification(cfg)?;
    let vehicles = matches(cfg)?;
    specs
        .iter()
        .map(|spec| {
            let p = build_panel(&vehicles, spec, &classes).ctx("panel", || format!("build {} panel", spec.counterparty_filter))?;
            write_file(cfg.paths.out.join(panel_file(spec.counterparty_filter)), "panel", |w| write_panel(w, &p))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct Column {
    filter: String,
    beta: f64,
    se: f64,
    theta: Option<f64>,
    theta_se: Option<f64>,
    n_obs: usize,
    n_clusters: usize,
    dropped_units: Vec<String>,
}

impl Column {
    fn new(filter: CounterpartyFilter, fit: &FitResult, transform: bool) -> Self {
        let (beta, se) = fit.interaction();
        let (theta, theta_se) = delta_transform(beta, se);
        Column {
            filter: filter.to_string(),
            beta,
            se,
            theta: transform.then_some(theta),
            theta_se: transform.then_some(theta_se),
            n_obs: fit.n_obs,
            n_clusters: fit.n_clusters,
            dropped_units: fit.dropped_units.iter().map(|c| c.to_string()).collect(),
        }
    }
}

/// Column-per-filter table: one row per statistic.
fn write_table<W: Write>(mut w: W, filters: &[CounterpartyFilter], rows: &[(&str, Vec<String>)]) -> std::io::Result<()> {
    let labels: Vec<&str> = filters.iter().map(|f| column_label(*f)).collect();
    writeln!(w, ",{}", labels.join(","))?;
    for (name, cells) in rows {
        writeln!(w, "{name},{}", cells.join(","))?;
    }
    Ok(())
}

fn json(path: PathBuf, module: &'static str, value: &impl Serialize) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).ctx(module, || "encode json".into())?;
    write_file(path, module, |w| writeln!(w, "{text}"))
}

pub fn run_did(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let filters = cfg.panel.filters()?;
    let treat = cfg.treat.spec(&cfg.panel);
    let mut cols = Vec::new();
    for &f in &filters {
        let p = panel(&cfg.paths.panel(f))?;
        let fit = fit_poisson_twfe(&p, &treat).ctx("econ", || format!("fit Poisson DID on {f} panel"))?;
        cols.push(Column::new(f, &fit, true));
    }
    let row = |g: &dyn Fn(&Column) -> String| cols.iter().map(g).collect::<Vec<_>>();
    let rows = [
        ("theta", row(&|c| c.theta.unwrap_or(f64::NAN).to_string())),
        ("theta_se", row(&|c| c.theta_se.unwrap_or(f64::NAN).to_string())),
        ("beta", row(&|c| c.beta.to_string())),
        ("beta_se", row(&|c| c.se.to_string())),
        ("observations", row(&|c| c.n_obs.to_string())),
    ];
    Ok(vec![
        write_file(cfg.paths.out.join("did.csv"), "econ", |w| write_table(w, &filters, &rows))?,
        json(cfg.paths.out.join("did.json"), "econ", &cols)?,
    ])
}

pub fn run_ols_size(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let filters = cfg.panel.filters()?;
    let specs = filters.iter().map(|&f| cfg.panel.spec(f)).collect::<Result<Vec<_>>>()?;
    let treat = cfg.treat.spec(&cfg.panel);
    let classes = classification(cfg)?;
    let vehicles = matches(cfg)?;
    let mut out = Vec::new();
    let mut cols = Vec::new();
    for spec in &specs {
        let f = spec.counterparty_filter;
        let p = build_size_panel(&vehicles, spec, &classes).ctx("panel", || format!("build {f} size panel"))?;
        out.push(write_file(cfg.paths.out.join(format!("size-{}", panel_file(f))), "panel", |w| write_panel(w, &p))?);
        let fit = fit_ols_twfe(&p, &treat).ctx("econ", || format!("fit OLS DID on {f} size panel"))?;
        cols.push(Column::new(f, &fit, false));
    }
    let rows = [
        ("beta", cols.iter().map(|c| c.beta.to_string()).collect()),
        ("se", cols.iter().map(|c| c.se.to_string()).collect()),
        ("observations", cols.iter().map(|c| c.n_obs.to_string()).collect()),
    ];
    out.push(write_file(cfg.paths.out.join("ols_size.csv"), "econ", |w| write_table(w, &filters, &rows))?);
    out.push(json(cfg.paths.out.join("ols_size.json"), "econ", &cols)?);
    Ok(out)
}

pub fn run_event_study(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let f = cfg.panel.single_filter()?;
    let treat = cfg.treat.spec(&cfg.panel);
    let p = panel(&cfg.paths.panel(f))?;
    let es = fit_event_study(&p, &treat).ctx("econ", || format!("fit event study on {f} panel"))?;
    Ok(vec![write_file(cfg.paths.out.join("event_study.csv"), "econ", |w| write_event_study(w, &es))?])
}

pub fn run_sdid(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let f = cfg.panel.single_filter()?;
    if cfg.sdid.reps < 2 {
        return Err(CliError::new("sdid", "validate config", format!("reps must be at least 2, got {}", cfg.sdid.reps)));
    }
    if cfg.sdid.zeta.is_some_and(|z| !(z.is_finite() && z >= 0.0)) {
        return Err(CliError::new("sdid", "validate config", "zeta must be finite and non-negative"));
    }
    let config = SdidConfig { reps: cfg.sdid.reps, zeta_override: cfg.sdid.zeta, ..SdidConfig::default() };
    let p = panel(&cfg.paths.panel(f))?;
    let problem = SdidProblem::from_panel(&p, cfg.panel.treated, cfg.treat.disbursement_date, cfg.seed)
        .ctx("sdid", || format!("set up problem from {f} panel"))?;
    let r = estimate_sdid(&problem, &config).ctx("sdid", || "estimate".into())?;
    let out = &cfg.paths.out;
    Ok(vec![
        write_file(out.join("sdid_estimate.csv"), "sdid", |w| write_estimate(w, &f.to_string(), &r))?,
        write_file(out.join("sdid_unit_weights.csv"), "sdid", |w| write_weights(w, &r.weights))?,
        write_file(out.join("sdid_time_weights.csv"), "sdid", |w| write_time_weights(w, &r.weights))?,
        write_file(out.join("sdid_effects.csv"), "sdid", |w| write_effect_path(w, &r))?,
    ])
}

pub fn run_spillover(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let s = &cfg.spillover;
    if !(s.eip_total_usd.is_finite() && s.eip_total_usd > 0.0) {
        return Err(CliError::new("spillover", "validate config", "eip_total_usd must be positive"));
    }
    if s.fraction.is_some_and(|f| !(0.0..=1.0).contains(&f)) {
        return Err(CliError::new("spillover", "validate config", "fraction must lie in [0, 1]"));
    }
    let path = cfg.paths.event_study();
    let es = parse_event_study(&path).ctx("econ", || format!("read event study {}", path.display()))?;
    let series = counterfactual_from_event_study(&es).ctx("spillover", || "build counterfactual".into())?;
    let pct = total_spillover_pct(&series).ctx("spillover", || "total share".into())?;
    let fraction = s.fraction.unwrap_or(pct / 100.0);
    if s.fraction.is_none() && !(0.0..=1.0).contains(&fraction) {
        let cause = format!("estimated spillover share {pct}% is outside [0, 100]; set [spillover] fraction to extrapolate anyway");
        return Err(CliError::new("spillover", "extrapolate scenarios", cause));
    }
    let rows = extrapolate(fraction, &default_scenarios(), s.eip_total_usd).ctx("spillover", || "extrapolate scenarios".into())?;
    let out = &cfg.paths.out;
    Ok(vec![
        write_file(out.join("spillover_series.csv"), "spillover", |w| write_series(w, &series))?,
        write_file(out.join("spillover_total.csv"), "spillover", |w| {
            writeln!(w, "total_spillover_pct,fraction_applied")?;
            writeln!(w, "{pct},{fraction}")
        })?,
        write_file(out.join("spillover_scenarios.csv"), "spillover", |w| write_scenarios(w, &rows))?,
    ])
}

pub fn run_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let s = &cfg.synth;
    let out = &cfg.paths.out;
    match s.kind.as_str() {
        "ledger" => {
            let mut lc = LedgerConfig::new(s.n_background, s.n_injected_pairs, cfg.seed);
            if let Some(mix) = &s.countries {
                lc.country_mix = mix.clone();
            }
            lc.usd_per_btc = s.usd_per_btc;
            lc.validate().ctx("synth", || "validate config".into())?;
            let (ledger, truth) = gen_ledger(&lc).ctx("synth", || "generate ledger".into())?;
            let rates = gen_rates(lc.start, lc.start + lc.span_seconds, 3_600, s.usd_per_btc, s.rate_volatility, cfg.seed ^ 0x7a7e)
                .ctx("synth", || "generate rates".into())?;
            Ok(vec![
                write_file(out.join("ledger.csv"), "synth", |w| write_ledger(w, &ledger))?,
                write_file(out.join("rates.csv"), "synth", |w| write_rates(w, &rates))?,
                write_file(out.join("truth.csv"), "synth", |w| write_truth(w, &truth))?,
            ])
        }
        "panel" => {
            let weeks = weeks_in_window(cfg.panel.window_start, cfg.panel.window_end);
            let first = week_start(cfg.treat.disbursement_date);
            let treatment_week = weeks.iter().position(|w| *w == first).ok_or_else(|| {
                CliError::new("synth", "validate config", format!("disbursement week {first} is outside the panel window"))
            })?;
            let noise = if s.poisson_noise { Noise::Poisson } else { Noise::None };
            let mut dgp = PanelDgp::random(s.n_units, weeks.len(), s.log_level, s.beta, noise, cfg.seed);
            dgp.first_week = weeks[0];
            dgp.treatment_week = treatment_week;
            let (p, truth) = gen_panel(&dgp).ctx("synth", || "generate panel".into())?;
            Ok(vec![
                write_file(out.join(panel_file(CounterpartyFilter::All)), "synth", |w| write_panel(w, &p))?,
                write_file(out.join("panel_truth.csv"), "synth", |w| write_panel_truth(w, &truth))?,
            ])
        }
        other => Err(CliError::new("synth", "validate config", format!("unknown kind {other:?}, expected ledger or panel"))),
    }
}
