#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(d) = spin_echo_cli::read_xy(s) {
            assert_eq!(d.x.len(), d.y.len());
            assert!(d.x.iter().chain(&d.y).all(|v| v.is_finite()));
        }
    }
});
