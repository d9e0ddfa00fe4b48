#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(h) = spin_echo_cli::parse_artifact_header(s) {
            let _ = h.provenance();
        }
        let _ = spin_echo_cli::parse_json_provenance(s);
    }
});
