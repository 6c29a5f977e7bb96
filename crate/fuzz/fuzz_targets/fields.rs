//! Single fields: decimal BTC sizes, ISO timestamps, country codes.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| cryptoflow_fuzz::fields(data));
