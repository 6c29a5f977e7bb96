//! Trade ledger CSV: errors not panics, and accepted ledgers round-trip.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| cryptoflow_fuzz::ledger(data));
