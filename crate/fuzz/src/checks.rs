use cryptoflow::econ::{parse_event_study_reader, write_event_study};
use cryptoflow::ingest::{
    parse_classification_reader, parse_ledger_reader, parse_rates_reader, parse_size_satoshi, parse_timestamp, usd_value,
    write_ledger, write_rates,
};
use cryptoflow::matcher::{parse_matches_reader, write_matches};
use cryptoflow::panel::{parse_panel_reader, write_panel};
use cryptoflow::CountryCode;
use cryptoflow_cli::RunConfig;

fn rewrite(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

pub fn ledger(data: &[u8]) {
    if let Ok(trades) = parse_ledger_reader(data) {
        let again = parse_ledger_reader(rewrite(|w| write_ledger(w, &trades)).as_slice()).expect("rewritten ledger parses");
        assert_eq!(trades, again);
    }
}

pub fn rates(data: &[u8]) {
    if let Ok(table) = parse_rates_reader(data) {
        let again = parse_rates_reader(rewrite(|w| write_rates(w, &table)).as_slice()).expect("rewritten rates parse");
        assert_eq!(table.entries(), again.entries());
        if let Some(&(ts, _)) = table.entries().first() {
            let _ = usd_value(1, ts, &table);
        }
    }
}

pub fn classification(data: &[u8]) {
    if let Ok(c) = parse_classification_reader(data) {
        for (code, _) in c.iter() {
            assert!(c.lookup(code).is_ok());
        }
    }
}

pub fn panel(data: &[u8]) {
    if let Ok(p) = parse_panel_reader(data) {
        let again = parse_panel_reader(rewrite(|w| write_panel(w, &p)).as_slice()).expect("rewritten panel parses");
        assert_eq!(p, again);
    }
}

pub fn matches(data: &[u8]) {
    if let Ok(v) = parse_matches_reader(data) {
        let again = parse_matches_reader(rewrite(|w| write_matches(w, &v)).as_slice()).expect("rewritten matches parse");
        assert_eq!(v, again);
    }
}

pub fn event_study(data: &[u8]) {
    if let Ok(es) = parse_event_study_reader(data) {
        let again = parse_event_study_reader(rewrite(|w| write_event_study(w, &es)).as_slice()).expect("rewritten event study parses");
        assert_eq!(es.weeks, again.weeks);
        assert_eq!(es.treated_outcome, again.treated_outcome);
    }
}

pub fn config(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::parse(text) {
            assert_eq!(RunConfig::parse(&cfg.canonical()).expect("canonical config parses"), cfg);
        }
    }
}

/// Single-field parsers: trade sizes, timestamps, country codes.
pub fn fields(data: &[u8]) {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_size_satoshi(text);
        let _ = parse_timestamp(text);
        if let Ok(c) = text.parse::<CountryCode>() {
            assert_eq!(c.to_string().parse::<CountryCode>(), Ok(c));
        }
    }
}
