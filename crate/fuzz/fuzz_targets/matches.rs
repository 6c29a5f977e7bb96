//! Matched-vehicle CSV as written by the matcher.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| cryptoflow_fuzz::matches(data));
