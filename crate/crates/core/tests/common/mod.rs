#![allow(dead_code)]

use std::collections::HashMap;

use cryptoflow::{MatchParams, TradeRecord};

/// Quadratic-time pairing written straight from the definition: for each
/// trade, the size's add-one frequency among all earlier trades, the count of
/// later trades inside the window, and the earliest unused equal-size trade
/// inside the window.
pub fn brute_force_pairs(ledger: &[TradeRecord], params: &MatchParams) -> Vec<(usize, usize, f64)> {
    let n = ledger.len();
    let mut used = vec![false; n];
    let mut out = Vec::new();
    for i in params.burn_in.max(1)..n {
        if used[i] {
            continue;
        }
        let same_before = (0..i).filter(|&k| ledger[k].size_satoshi == ledger[i].size_satoshi).count();
        let p = (same_before as f64 + 1.0) / (i as f64 + 1.0);
        let in_window: Vec<usize> =
            (i + 1..n).filter(|&j| ledger[j].timestamp - ledger[i].timestamp <= params.window_seconds).collect();
        let p_value = 1.0 - (1.0 - p).powf(in_window.len() as f64);
        if p_value > params.alpha + 1e-12 {
            continue;
        }
        if let Some(&j) = in_window.iter().find(|&&j| !used[j] && ledger[j].size_satoshi == ledger[i].size_satoshi) {
            used[i] = true;
            used[j] = true;
            out.push((i, j, p_value));
        }
    }
    out
}

pub fn positions(ledger: &[TradeRecord]) -> HashMap<&str, usize> {
    ledger.iter().enumerate().map(|(i, t)| (t.trade_id.as_str(), i)).collect()
}
