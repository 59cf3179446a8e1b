#![no_main]

#[path = "../../tests/support/roundtrip.rs"]
#[allow(dead_code)]
mod roundtrip;

libfuzzer_sys::fuzz_target!(|data: &[u8]| roundtrip::corpus(data, dynhdp::CorpusFormat::CountVector));
