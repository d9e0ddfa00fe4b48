#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = spin_echo_cli::parse_config(s) {
            // a config that validates must also build its derived objects
            cfg.geometry().expect("validated geometry");
            cfg.ensemble_spec().expect("validated ensemble");
        }
    }
});
