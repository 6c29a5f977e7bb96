//! Run configuration TOML.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| cryptoflow_fuzz::config(data));
