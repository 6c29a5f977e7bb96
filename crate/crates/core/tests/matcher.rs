mod common;

use cryptoflow::matcher::scan_matches;
use cryptoflow::synth::{gen_ledger, LedgerConfig};
use cryptoflow::{MatchParams, RateTable, TradeRecord};
use proptest::prelude::*;

fn rates() -> RateTable {
    RateTable::constant(0, 7_000.0)
}

fn params(burn_in: usize) -> MatchParams {
    MatchParams { burn_in, ..MatchParams::default() }
}

#[test]
fn scan_agrees_with_brute_force() {
    for seed in 0..4 {
        let (ledger, _) = gen_ledger(&LedgerConfig::new(1_800, 100, seed)).unwrap();
        for burn_in in [0, 300] {
            let p = params(burn_in);
            let fast = scan_matches(&ledger, &p, &rates()).unwrap();
            let slow = common::brute_force_pairs(&ledger, &p);
            let pos = common::positions(&ledger);
            assert!(!fast.is_empty());
            assert_eq!(fast.len(), slow.len());
            for (v, (i, j, pv)) in fast.iter().zip(&slow) {
                assert_eq!((pos[v.leg1_id.as_str()], pos[v.leg2_id.as_str()]), (*i, *j));
                assert!((v.p_value - pv).abs() <= 1e-12 * pv.max(1e-300).max(1.0));
            }
        }
    }
}

#[test]
fn injected_pairs_are_found() {
    let (ledger, truth) = gen_ledger(&LedgerConfig::new(8_000, 300, 11)).unwrap();
    let found = scan_matches(&ledger, &params(1_000), &rates()).unwrap();
    let pairs: std::collections::HashSet<(String, String)> =
        found.iter().map(|v| (v.leg1_id.clone(), v.leg2_id.clone())).collect();
    let pos = common::positions(&ledger);
    for t in truth.iter().filter(|t| pos[t.leg1_id.as_str()] >= 1_000) {
        assert!(pairs.contains(&(t.leg1_id.clone(), t.leg2_id.clone())), "missed {t:?}");
    }
}

fn small_ledger() -> impl Strategy<Value = Vec<TradeRecord>> {
    prop::collection::vec((0i64..40_000, 1u64..6), 2..120).prop_map(|mut raw| {
        raw.sort();
        raw.into_iter()
            .enumerate()
            .map(|(i, (ts, size))| TradeRecord {
                trade_id: format!("T{i:05}"),
                timestamp: ts,
                size_satoshi: size * 1_000,
                fiat_currency: "USD".into(),
                fiat_price: 7_000.0,
                user_country: Some(if i % 3 == 0 { "US" } else { "NG" }.parse().unwrap()),
                advertiser_country: Some("GB".parse().unwrap()),
                payment_method: "x".into(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn legs_are_used_once(ledger in small_ledger(), alpha in 0.01f64..0.9) {
        let p = MatchParams { alpha, burn_in: 1, ..MatchParams::default() };
        let out = scan_matches(&ledger, &p, &rates()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for v in &out {
            prop_assert!(seen.insert(v.leg1_id.clone()));
            prop_assert!(seen.insert(v.leg2_id.clone()));
            prop_assert!(v.p_value <= alpha);
            prop_assert_eq!(v.size_satoshi, ledger.iter().find(|t| t.trade_id == v.leg2_id).unwrap().size_satoshi);
            prop_assert!(v.timestamp2 - v.timestamp1 <= p.window_seconds && v.timestamp2 >= v.timestamp1);
        }
        let slow = common::brute_force_pairs(&ledger, &p);
        prop_assert_eq!(out.len(), slow.len());
    }

    #[test]
    fn prefix_decisions_are_stable(ledger in small_ledger(), cut in 0.2f64..1.0) {
        let p = MatchParams { alpha: 0.5, burn_in: 1, window_seconds: 3_000 };
        let k = ((ledger.len() as f64 * cut) as usize).max(1);
        let full = scan_matches(&ledger, &p, &rates()).unwrap();
        let part = scan_matches(&ledger[..k], &p, &rates()).unwrap();
        // Pairs whose first-leg window closes inside the prefix are decided
        // without looking past it.
        let horizon = ledger[k - 1].timestamp;
        let settled = |v: &&cryptoflow::VehicleTrade| v.timestamp1 + p.window_seconds < horizon;
        let a: Vec<_> = full.iter().filter(settled).collect();
        let b: Vec<_> = part.iter().filter(settled).collect();
        prop_assert_eq!(a, b);
    }
}
