//! Event-study plot files, including the reference-week line.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| cryptoflow_fuzz::event_study(data));
