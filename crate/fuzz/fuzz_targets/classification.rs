//! Country classification table.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| cryptoflow_fuzz::classification(data));
